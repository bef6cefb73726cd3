//! Grid solver for the nonlinear Fokker–Planck equation
//! `∂ρ/∂t = ∇·(ρ∇U(θ, ρ)) + λΔρ` when `d = 1`, so `θ = (u, w) ∈ R²`.
//!
//! Fluxes use Scharfetter–Gummel (Chang–Cooper) exponential fitting, which
//! keeps the density positive and makes the discrete Gibbs density exactly
//! stationary.

use std::io::{BufRead, Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Coupling, Dataset, Model, ParticleEnsemble};
use crate::rng::{substream, Domain};

/// Tolerance on `Σ ρ·area = 1`.
pub const MASS_TOL: f64 = 1e-10;

/// Rectangle `[u_lo, u_hi] × [w_lo, w_hi]` split into `n_u × n_w` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub u_lo: f64,
    pub u_hi: f64,
    pub w_lo: f64,
    pub w_hi: f64,
    pub n_u: usize,
    pub n_w: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::square(6.0, 128)
    }
}

impl GridSpec {
    /// `[−half, half]²` with `n × n` cells.
    pub fn square(half: f64, n: usize) -> Self {
        GridSpec {
            u_lo: -half,
            u_hi: half,
            w_lo: -half,
            w_hi: half,
            n_u: n,
            n_w: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_u < 2 || self.n_w < 2 {
            return Err(Error::invalid("grid needs at least 2 cells per axis"));
        }
        if !(self.u_hi > self.u_lo && self.w_hi > self.w_lo)
            || ![self.u_lo, self.u_hi, self.w_lo, self.w_hi]
                .iter()
                .all(|v| v.is_finite())
        {
            return Err(Error::invalid("grid bounds must be finite and increasing"));
        }
        Ok(())
    }

    pub fn hu(&self) -> f64 {
        (self.u_hi - self.u_lo) / self.n_u as f64
    }

    pub fn hw(&self) -> f64 {
        (self.w_hi - self.w_lo) / self.n_w as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hu() * self.hw()
    }

    pub fn u_center(&self, i: usize) -> f64 {
        self.u_lo + (i as f64 + 0.5) * self.hu()
    }

    pub fn w_center(&self, k: usize) -> f64 {
        self.w_lo + (k as f64 + 0.5) * self.hw()
    }

    pub fn len(&self) -> usize {
        self.n_u * self.n_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell containing `(u, w)`, if inside.
    pub fn locate(&self, u: f64, w: f64) -> Option<(usize, usize)> {
        let fu = (u - self.u_lo) / self.hu();
        let fw = (w - self.w_lo) / self.hw();
        if !(fu >= 0.0 && fw >= 0.0) {
            return None;
        }
        let (i, k) = (fu as usize, fw as usize);
        (i < self.n_u && k < self.n_w).then_some((i, k))
    }
}

/// Piecewise-constant density on a [`GridSpec`], row-major in `u`:
/// `values[i·n_w + k]` is the density of cell `(u_i, w_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "expected {} cell values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("density values must be finite and nonnegative"));
        }
        Ok(GridDensity { grid, values })
    }

    /// Normalized density from unnormalized cell weights `f(u, w)`.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: GridSpec, f: F) -> Result<Self> {
        grid.validate()?;
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.n_u {
            for k in 0..grid.n_w {
                values.push(f(grid.u_center(i), grid.w_center(k)));
            }
        }
        let mut g = Self::new(grid, values)?;
        g.normalize()?;
        Ok(g)
    }

    pub fn uniform(grid: GridSpec) -> Result<Self> {
        Self::from_fn(grid, |_, _| 1.0)
    }

    /// Isotropic Gaussian centred at `(u0, w0)`, truncated to the grid.
    pub fn gaussian(grid: GridSpec, u0: f64, w0: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) {
            return Err(Error::invalid("sd must be positive"));
        }
        Self::from_fn(grid, |u, w| {
            (-((u - u0).powi(2) + (w - w0).powi(2)) / (2.0 * sd * sd)).exp()
        })
    }

    pub fn cell_area(&self) -> f64 {
        self.grid.cell_area()
    }

    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.grid.n_w + k]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn is_normalized(&self) -> bool {
        (self.mass() - 1.0).abs() <= MASS_TOL
    }

    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::numeric(format!("cannot normalize a density of mass {m}")));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(())
    }

    /// Cell probabilities `ρ·area`.
    pub fn probabilities(&self) -> Vec<f64> {
        let a = self.cell_area();
        self.values.iter().map(|v| v * a).collect()
    }

    /// Mean and variance of `(u, w)`.
    pub fn moments(&self) -> ([f64; 2], [f64; 2]) {
        let g = &self.grid;
        let a = self.cell_area();
        let (mut mu, mut mw, mut su, mut sw) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..g.n_u {
            for k in 0..g.n_w {
                let p = self.at(i, k) * a;
                let (u, w) = (g.u_center(i), g.w_center(k));
                mu += p * u;
                mw += p * w;
                su += p * u * u;
                sw += p * w * w;
            }
        }
        ([mu, mw], [su - mu * mu, sw - mw * mw])
    }

    /// Ratio of the largest density on the outer ring of cells to the largest overall.
    pub fn boundary_ratio(&self) -> f64 {
        let g = &self.grid;
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        let mut edge: f64 = 0.0;
        for i in 0..g.n_u {
            for k in 0..g.n_w {
                if i == 0 || k == 0 || i + 1 == g.n_u || k + 1 == g.n_w {
                    edge = edge.max(self.at(i, k));
                }
            }
        }
        if max > 0.0 {
            edge / max
        } else {
            0.0
        }
    }

    /// Merges `fu × fw` blocks of cells (mass preserving).
    pub fn coarsen(&self, fu: usize, fw: usize) -> Result<Self> {
        let g = &self.grid;
        if fu == 0 || fw == 0 || !g.n_u.is_multiple_of(fu) || !g.n_w.is_multiple_of(fw) {
            return Err(Error::invalid(format!(
                "{}x{} grid cannot be coarsened by {fu}x{fw}",
                g.n_u, g.n_w
            )));
        }
        let grid = GridSpec {
            n_u: g.n_u / fu,
            n_w: g.n_w / fw,
            ..*g
        };
        let mut values = vec![0.0; grid.len()];
        for i in 0..g.n_u {
            for k in 0..g.n_w {
                values[(i / fu) * grid.n_w + k / fw] += self.at(i, k);
            }
        }
        let s = (fu * fw) as f64;
        values.iter_mut().for_each(|v| *v /= s);
        GridDensity::new(grid, values)
    }

    /// `n` i.i.d. particles (`d = 1`, coords `[w, u]`): a cell drawn by mass,
    /// then a uniform point inside it.
    pub fn sample(&self, n: usize, seed: u64) -> Result<ParticleEnsemble> {
        if n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        let probs = self.probabilities();
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::numeric("density has no mass"));
        }
        let g = &self.grid;
        let mut rng = substream(seed, Domain::Sampling, 0, 0);
        let mut coords = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let t = rng.random::<f64>() * acc;
            let c = cdf.partition_point(|&x| x <= t).min(probs.len() - 1);
            let (i, k) = (c / g.n_w, c % g.n_w);
            let u = g.u_lo + (i as f64 + rng.random::<f64>()) * g.hu();
            let w = g.w_lo + (k as f64 + rng.random::<f64>()) * g.hw();
            coords.push(w);
            coords.push(u);
        }
        ParticleEnsemble::from_coords(1, coords)
    }

    /// CSV: a header line of bounds and shape, then `n_u` rows of `n_w` values.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let g = &self.grid;
        writeln!(out, "u_lo,u_hi,w_lo,w_hi,n_u,n_w")?;
        writeln!(out, "{},{},{},{},{},{}", g.u_lo, g.u_hi, g.w_lo, g.w_hi, g.n_u, g.n_w)?;
        for row in self.values.chunks(g.n_w) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::invalid("truncated grid CSV"))?
                .map_err(Error::from)
        };
        next()?;
        let head: Vec<String> = next()?.split(',').map(|s| s.trim().to_string()).collect();
        if head.len() != 6 {
            return Err(Error::invalid("grid CSV header needs 6 fields"));
        }
        let f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad number {s:?}: {e}")))
        };
        let z = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::invalid(format!("bad count {s:?}: {e}")))
        };
        let grid = GridSpec {
            u_lo: f(&head[0])?,
            u_hi: f(&head[1])?,
            w_lo: f(&head[2])?,
            w_hi: f(&head[3])?,
            n_u: z(&head[4])?,
            n_w: z(&head[5])?,
        };
        let mut values = Vec::with_capacity(grid.n_u * grid.n_w);
        for _ in 0..grid.n_u {
            for v in next()?.split(',') {
                values.push(f(v.trim())?);
            }
        }
        GridDensity::new(grid, values)
    }

    /// Binary: `MFGD`, `n_u`, `n_w` (u64 LE), four bounds and the values (f64 LE).
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let g = &self.grid;
        out.write_all(b"MFGD")?;
        out.write_all(&(g.n_u as u64).to_le_bytes())?;
        out.write_all(&(g.n_w as u64).to_le_bytes())?;
        for v in [g.u_lo, g.u_hi, g.w_lo, g.w_hi].iter().chain(&self.values) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"MFGD" {
            return Err(Error::invalid("not a grid density file"));
        }
        let mut b8 = [0u8; 8];
        let mut u64_ = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n_u = u64_(&mut input)? as usize;
        let n_w = u64_(&mut input)? as usize;
        let f = |input: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let grid = GridSpec {
            u_lo: f(&mut input)?,
            u_hi: f(&mut input)?,
            w_lo: f(&mut input)?,
            w_hi: f(&mut input)?,
            n_u,
            n_w,
        };
        grid.validate()?;
        let values = (0..grid.len()).map(|_| f(&mut input)).collect::<Result<Vec<f64>>>()?;
        GridDensity::new(grid, values)
    }
}

/// `B(z) = z / (e^z − 1)`, `B(0) = 1`.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Precomputed potential pieces for one grid, dataset and model.
///
/// With `d = 1`, `U(u, w; ρ) = u·G(w) + r(u, w)` where
/// `G(w) = (1/n) Σ_j φ₁′(f_j, y_j) σ(w x_j)` and the predictions
/// `f_j = Σ_k σ(w_k x_j) M_k` only need the first `u`-moments `M_k` per `w` column.
#[derive(Debug, Clone)]
pub struct FpSolver<'a> {
    pub grid: GridSpec,
    pub lambda: f64,
    data: &'a Dataset,
    model: &'a Model,
    /// `σ(w_k x_j)`, `n × n_w`.
    h: Vec<f64>,
    /// `r(u_i, w_k)`.
    reg: Vec<f64>,
    u: Vec<f64>,
}

/// What one explicit step did.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub dt_max: f64,
    pub mass_change: f64,
}

impl<'a> FpSolver<'a> {
    pub fn new(grid: GridSpec, data: &'a Dataset, model: &'a Model, lambda: f64) -> Result<Self> {
        grid.validate()?;
        if data.d() != 1 {
            return Err(Error::invalid("the grid solver needs d = 1"));
        }
        if data.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("the grid solver needs lambda > 0"));
        }
        let act = &model.activation;
        let mut h = Vec::with_capacity(data.len() * grid.n_w);
        for (x, _) in data.iter() {
            for k in 0..grid.n_w {
                h.push(act.profile(grid.w_center(k) * x[0]).0);
            }
        }
        let mut reg = Vec::with_capacity(grid.len());
        let u: Vec<f64> = (0..grid.n_u).map(|i| grid.u_center(i)).collect();
        for &ui in &u {
            for k in 0..grid.n_w {
                reg.push(model.regularizer.value(&[grid.w_center(k), ui]));
            }
        }
        Ok(FpSolver {
            grid,
            lambda,
            data,
            model,
            h,
            reg,
            u,
        })
    }

    fn check(&self, rho: &GridDensity) -> Result<()> {
        if rho.grid != self.grid {
            return Err(Error::invalid("density grid differs from the solver grid"));
        }
        Ok(())
    }

    /// Network predictions `f(ρ, x_j)` by midpoint quadrature.
    pub fn predictions(&self, rho: &GridDensity) -> Vec<f64> {
        let g = &self.grid;
        let a = g.cell_area();
        let mut moments = vec![0.0; g.n_w];
        for (i, row) in rho.values.chunks(g.n_w).enumerate() {
            let ui = self.u[i];
            for (m, v) in moments.iter_mut().zip(row) {
                *m += v * ui;
            }
        }
        moments.iter_mut().for_each(|m| *m *= a);
        self.h
            .chunks(g.n_w)
            .map(|hj| hj.iter().zip(&moments).map(|(h, m)| h * m).sum())
            .collect()
    }

    /// `U(u_i, w_k; ρ)` on every cell centre.
    pub fn potential(&self, rho: &GridDensity) -> Vec<f64> {
        let preds = self.predictions(rho);
        let coupling = Coupling::from_predictions(self.data, self.model, preds);
        let g = &self.grid;
        let n = self.data.len() as f64;
        let mut gw = vec![0.0; g.n_w];
        for (hj, &s) in self.h.chunks(g.n_w).zip(coupling.slopes()) {
            for (o, h) in gw.iter_mut().zip(hj) {
                *o += s * h;
            }
        }
        gw.iter_mut().for_each(|v| *v /= n);
        let mut out = self.reg.clone();
        for (i, row) in out.chunks_mut(g.n_w).enumerate() {
            let ui = self.u[i];
            for (o, gk) in row.iter_mut().zip(&gw) {
                *o += ui * gk;
            }
        }
        out
    }

    /// Risk, regularizer mean and `∫ρ log ρ` by midpoint quadrature (`0 log 0 = 0`).
    pub fn free_energy_parts(&self, rho: &GridDensity) -> Result<(f64, f64, f64)> {
        self.check(rho)?;
        if !rho.is_normalized() {
            return Err(Error::invalid(format!("density has mass {}, not 1", rho.mass())));
        }
        let a = rho.cell_area();
        let risk = Coupling::from_predictions(self.data, self.model, self.predictions(rho)).risk();
        let reg: f64 = rho.values.iter().zip(&self.reg).map(|(p, r)| p * r).sum::<f64>() * a;
        let nent: f64 = rho.values.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>() * a;
        Ok((risk, reg, nent))
    }

    /// `Q(ρ) = risk + ∫rρ + λ∫ρ log ρ`.
    pub fn free_energy(&self, rho: &GridDensity) -> Result<f64> {
        let (risk, reg, nent) = self.free_energy_parts(rho)?;
        Ok(risk + reg + self.lambda * nent)
    }

    /// Normalized `exp(−U(·, ρ)/λ)` on the grid.
    pub fn gibbs(&self, rho: &GridDensity) -> Result<GridDensity> {
        let pot = self.potential(rho);
        let min = pot.iter().cloned().fold(f64::INFINITY, f64::min);
        let values = pot.iter().map(|u| (-(u - min) / self.lambda).exp()).collect();
        let mut g = GridDensity::new(self.grid, values)?;
        g.normalize()?;
        Ok(g)
    }

    /// Largest step keeping every cell nonnegative for the current potential.
    pub fn dt_max(&self, rho: &GridDensity) -> Result<f64> {
        self.check(rho)?;
        let pot = self.potential(rho);
        Ok(self.face_coefficients(&pot).2)
    }

    /// Face coefficients `B(δ)` along `u` and `w`, and the positivity bound on `dt`.
    fn face_coefficients(&self, pot: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let g = &self.grid;
        let (nu, nw) = (g.n_u, g.n_w);
        let (hu, hw) = (g.hu(), g.hw());
        let lam = self.lambda;
        let mut bu = vec![0.0; (nu - 1) * nw];
        let mut bw = vec![0.0; nu * (nw - 1)];
        let mut out_rate = vec![0.0; nu * nw];
        let cu = lam / (hu * hu);
        let cw = lam / (hw * hw);
        for i in 0..nu - 1 {
            for k in 0..nw {
                let (a, b) = (i * nw + k, (i + 1) * nw + k);
                let delta = (pot[b] - pot[a]) / lam;
                let bd = bernoulli(delta);
                bu[i * nw + k] = bd;
                out_rate[a] += cu * bd;
                out_rate[b] += cu * (bd + delta);
            }
        }
        for i in 0..nu {
            for k in 0..nw - 1 {
                let (a, b) = (i * nw + k, i * nw + k + 1);
                let delta = (pot[b] - pot[a]) / lam;
                let bd = bernoulli(delta);
                bw[i * (nw - 1) + k] = bd;
                out_rate[a] += cw * bd;
                out_rate[b] += cw * (bd + delta);
            }
        }
        let max_rate = out_rate.iter().cloned().fold(0.0, f64::max);
        (bu, bw, if max_rate > 0.0 { 1.0 / max_rate } else { f64::INFINITY })
    }

    /// One explicit finite-volume step with zero-flux boundaries.
    pub fn step(&self, rho: &mut GridDensity, dt: f64) -> Result<StepInfo> {
        self.check(rho)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        let pot = self.potential(rho);
        let (bu, bw, dt_max) = self.face_coefficients(&pot);
        if dt > dt_max {
            return Err(Error::invalid(format!(
                "dt = {dt} exceeds the stability bound {dt_max}"
            )));
        }
        let g = &self.grid;
        let (nu, nw) = (g.n_u, g.n_w);
        let (hu, hw) = (g.hu(), g.hw());
        let lam = self.lambda;
        let before = rho.values.iter().sum::<f64>();
        let old = rho.values.clone();
        let new = &mut rho.values;
        // J = (λ/h)[B(δ)ρ_a − B(−δ)ρ_b], B(−δ) = B(δ) + δ; flux leaves a, enters b
        let su = dt * lam / (hu * hu);
        for i in 0..nu - 1 {
            for k in 0..nw {
                let (a, b) = (i * nw + k, (i + 1) * nw + k);
                let bd = bu[i * nw + k];
                let delta = (pot[b] - pot[a]) / lam;
                let flow = su * (bd * old[a] - (bd + delta) * old[b]);
                new[a] -= flow;
                new[b] += flow;
            }
        }
        let sw = dt * lam / (hw * hw);
        for i in 0..nu {
            for k in 0..nw - 1 {
                let (a, b) = (i * nw + k, i * nw + k + 1);
                let bd = bw[i * (nw - 1) + k];
                let delta = (pot[b] - pot[a]) / lam;
                let flow = sw * (bd * old[a] - (bd + delta) * old[b]);
                new[a] -= flow;
                new[b] += flow;
            }
        }
        for v in new.iter_mut() {
            if *v < 0.0 {
                // only rounding can produce this under the stability bound
                *v = 0.0;
            }
        }
        let after = new.iter().sum::<f64>();
        Ok(StepInfo {
            dt_max,
            mass_change: (after - before) * g.cell_area(),
        })
    }
}

/// One explicit step (see [`FpSolver::step`]).
pub fn fp_step(rho: &GridDensity, data: &Dataset, model: &Model, lambda: f64, dt: f64) -> Result<GridDensity> {
    let solver = FpSolver::new(rho.grid, data, model, lambda)?;
    let mut next = rho.clone();
    solver.step(&mut next, dt)?;
    Ok(next)
}

/// Exact-quadrature free energy of a grid density.
pub fn grid_free_energy(rho: &GridDensity, data: &Dataset, model: &Model, lambda: f64) -> Result<f64> {
    FpSolver::new(rho.grid, data, model, lambda)?.free_energy(rho)
}

#[derive(Debug, Clone, Serialize)]
pub struct GibbsResult {
    pub density: GridDensity,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Largest admissible boundary-to-peak density ratio of a fixed point.
pub const BOUNDARY_RATIO_MAX: f64 = 1e-12;

/// Damped fixed-point iteration `ρ ← (1−α)ρ + α·normalize(exp(−U(·, ρ)/λ))`
/// from the Gibbs density of the regularizer alone. Stops once the `L¹`
/// change of the cell probabilities drops below `tol`.
pub fn gibbs_fixed_point(
    grid: GridSpec,
    data: &Dataset,
    model: &Model,
    lambda: f64,
    tol: f64,
    damping: f64,
    max_iter: usize,
) -> Result<GibbsResult> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::invalid("damping must lie in (0, 1]"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    let solver = FpSolver::new(grid, data, model, lambda)?;
    let a = grid.cell_area();
    let mut rho = GridDensity::from_fn(grid, |u, w| (-(model.regularizer.value(&[w, u])) / lambda).exp())?;
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let target = solver.gibbs(&rho)?;
        let mut residual = 0.0;
        for (p, t) in rho.values.iter_mut().zip(&target.values) {
            let next = (1.0 - damping) * *p + damping * t;
            residual += (next - *p).abs() * a;
            *p = next;
        }
        rho.normalize()?;
        if !residual.is_finite() {
            return Err(Error::numeric("fixed-point iteration produced non-finite values"));
        }
        history.push(residual);
        if residual < tol {
            let ratio = rho.boundary_ratio();
            if ratio > BOUNDARY_RATIO_MAX {
                return Err(Error::invalid(format!(
                    "boundary density is {ratio:.3e} of the peak; widen the grid bounds"
                )));
            }
            return Ok(GibbsResult {
                density: rho,
                iterations: it,
                residual,
                history,
            });
        }
    }
    let residual = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
        residual,
        history,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TvReport {
    pub tv: f64,
    /// Particles outside the grid, counted as mass the grid lacks.
    pub outside: usize,
}

/// Total variation `½ Σ |p̂_c − ρ_c·area|` between the particle histogram on
/// the grid cells and the grid density; escaped particles add `½·outside/N`.
pub fn compare_particle_to_grid(ensemble: &ParticleEnsemble, rho: &GridDensity) -> Result<TvReport> {
    if ensemble.d() != 1 {
        return Err(Error::invalid("grid comparison needs d = 1"));
    }
    let g = &rho.grid;
    let n = ensemble.len() as f64;
    let mut hist = vec![0.0; g.len()];
    let mut outside = 0;
    for row in ensemble.rows() {
        match g.locate(row[1], row[0]) {
            Some((i, k)) => hist[i * g.n_w + k] += 1.0 / n,
            None => outside += 1,
        }
    }
    let probs = rho.probabilities();
    let inside: f64 = hist.iter().zip(&probs).map(|(h, p)| (h - p).abs()).sum();
    Ok(TvReport {
        tv: 0.5 * (inside + outside as f64 / n),
        outside,
    })
}

/// Free-energy trace of an explicit grid run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FpTrace {
    pub times: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    /// Largest single-step increase of `Q` (negative when strictly dissipative).
    pub max_increase: f64,
    pub max_mass_change: f64,
}

/// Runs `steps` explicit steps at `dt = fraction · dt_max(ρ₀)`, shrinking `dt`
/// if the positivity bound tightens, and records `Q` every `record_every`
/// steps (and after the last).
pub fn run_transient(
    solver: &FpSolver,
    rho: &mut GridDensity,
    steps: usize,
    fraction: f64,
    record_every: usize,
) -> Result<FpTrace> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("dt fraction must lie in (0, 1]"));
    }
    let record_every = record_every.max(1);
    let mut dt = fraction * solver.dt_max(rho)?;
    if !dt.is_finite() {
        return Err(Error::invalid("no positivity bound: the potential is flat"));
    }
    let mut q = solver.free_energy(rho)?;
    let mut t = 0.0;
    let mut trace = FpTrace {
        times: vec![0.0],
        q: vec![q],
        max_increase: f64::NEG_INFINITY,
        max_mass_change: 0.0,
    };
    for s in 1..=steps {
        let info = match solver.step(rho, dt) {
            Ok(info) => info,
            Err(Error::InvalidArgument(_)) => {
                // the positivity bound tightened; step() leaves ρ untouched on error
                dt = fraction * solver.dt_max(rho)?;
                solver.step(rho, dt)?
            }
            Err(e) => return Err(e),
        };
        t += dt;
        let next = solver.free_energy(rho)?;
        if !next.is_finite() {
            return Err(Error::numeric(format!("free energy is not finite after step {s}")));
        }
        trace.max_increase = trace.max_increase.max(next - q);
        trace.max_mass_change = trace.max_mass_change.max(info.mass_change.abs());
        q = next;
        if s % record_every == 0 || s == steps {
            trace.times.push(t);
            trace.q.push(q);
        }
    }
    Ok(trace)
}

//! Explicit upper bounds on the log-Sobolev constant `ν` of the Gibbs family
//! `ρ̃ ∝ exp(−U(θ, ρ)/λ)` and the implied free-energy decay rate `2λ/ν`.
//!
//! Two routes are implemented: a Holley–Stroock perturbation bound for the
//! quartic regularizer and a Lyapunov-function bound for any dissipative
//! regularizer. Both bounds are astronomically large for ordinary constants, so
//! `ν` is carried in log space ([`Magnitude`]).

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::particle::norm_sq;
use crate::model::{Coupling, Dataset, Model, ParticleEnsemble, RegularizerKind};
use crate::rng::{substream, Domain};

/// A positive quantity that may exceed the `f64` range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Magnitude {
    /// Natural logarithm of the value.
    pub ln: f64,
    pub log10: f64,
    /// `value = mantissa · 10^exponent`, `1 ≤ mantissa < 10`.
    pub mantissa: f64,
    pub exponent: i64,
    /// Set when `log10 > 300`; `value` is then absent.
    pub overflow: bool,
    pub value: Option<f64>,
}

/// Values with `log10` above this are reported in log form only.
pub const OVERFLOW_LOG10: f64 = 300.0;

impl Magnitude {
    pub fn from_ln(ln: f64) -> Self {
        let log10 = ln / std::f64::consts::LN_10;
        if !log10.is_finite() {
            let overflow = log10 > 0.0;
            return Magnitude {
                ln,
                log10,
                mantissa: f64::NAN,
                exponent: 0,
                overflow,
                value: (!overflow).then_some(0.0),
            };
        }
        let exponent = log10.floor();
        let overflow = log10 > OVERFLOW_LOG10;
        Magnitude {
            ln,
            log10,
            mantissa: 10f64.powf(log10 - exponent),
            exponent: exponent as i64,
            overflow,
            value: (!overflow).then(|| ln.exp()),
        }
    }

    /// Exact representation of a finite positive value.
    pub fn from_value(v: f64) -> Self {
        let mut m = Self::from_ln(v.ln());
        if !m.overflow {
            m.value = Some(v);
        }
        m
    }

    /// The value as a double, `+∞` when it overflows.
    pub fn to_f64(&self) -> f64 {
        self.value.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    QuarticHolleyStroock,
    Lyapunov,
}

/// Where the temperature enters the Lyapunov-route constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// Constants of `U` itself; `λ⁻¹` only where the bound displays it.
    #[default]
    Statement,
    /// Constants of `U/λ`; the displayed `λ⁻¹` factors are then dropped.
    StrictProof,
}

/// How `Osc_r(U)` is bounded inside the infimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OscMode {
    /// `Osc_r(U) ≤ 2·poly(r)`, uniform in time.
    #[default]
    Poly,
    /// Sampled oscillation of the current potential (not a rigorous bound).
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsiBoundReport {
    pub route: Route,
    pub lambda: f64,
    pub nu: Magnitude,
    /// `2λ/ν`; underflows to zero for most realistic constants.
    pub rate: f64,
    pub ln_rate: f64,
    pub intermediates: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<Scaling>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub osc_mode: Option<OscMode>,
}

impl LsiBoundReport {
    fn new(route: Route, lambda: f64, ln_nu: f64, intermediates: BTreeMap<String, f64>) -> Self {
        let nu = Magnitude::from_ln(ln_nu);
        let ln_rate = (2.0 * lambda).ln() - ln_nu;
        let rate = match nu.value {
            Some(v) if lambda > 0.0 => 2.0 * lambda / v,
            _ if lambda > 0.0 => ln_rate.exp(),
            _ => 0.0,
        };
        LsiBoundReport {
            route,
            lambda,
            nu,
            rate,
            ln_rate,
            intermediates,
            scaling: None,
            osc_mode: None,
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.intermediates.get(key).copied()
    }
}

/// `2λ/ν`; an infinite `ν` or zero temperature give rate zero.
pub fn rate_bound(nu: f64, lambda: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::invalid("log-Sobolev constant must be positive"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    if nu.is_infinite() || lambda == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * lambda / nu)
}

/// Strong-convexity radius and local smoothness of the quartic-regularized potential.
///
/// `R` is the positive root of `4βR² − √d L1C4 R − √2 L1C3 = m`, beyond which
/// `∇²U ⪰ mI`; `L = 48βR² + √(4dL1²C4²R² + 2L1²C3²)` bounds `‖∇²U‖_op` on `‖θ‖ ≤ 2R`.
pub fn quartic_radius(m: f64, beta: f64, d: usize, l1: f64, c3: f64, c4: f64) -> (f64, f64) {
    let d = d as f64;
    let a = d.sqrt() * l1 * c4;
    let r = (a + (a * a + 16.0 * beta * (m + std::f64::consts::SQRT_2 * l1 * c3)).sqrt()) / (8.0 * beta);
    let l = 48.0 * beta * r * r + (4.0 * d * l1 * l1 * c4 * c4 * r * r + 2.0 * l1 * l1 * c3 * c3).sqrt();
    (r, l)
}

/// Holley–Stroock bound `ν ≤ (2λ/m)·exp(16 L R²/λ)` for `r(θ) = β‖θ‖⁴`.
pub fn quartic_bound(m: f64, beta: f64, d: usize, l1: f64, c3: f64, c4: f64, lambda: f64) -> Result<LsiBoundReport> {
    for (v, name) in [(m, "m"), (beta, "beta"), (lambda, "lambda")] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
    }
    for (v, name) in [(l1, "L1"), (c3, "C3"), (c4, "C4")] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("{name} must be finite and nonnegative")));
        }
    }
    if d == 0 {
        return Err(Error::invalid("d must be at least 1"));
    }
    let (r, l) = quartic_radius(m, beta, d, l1, c3, c4);
    let ln_nu = (2.0 * lambda / m).ln() + 16.0 * l * r * r / lambda;
    let mut im = BTreeMap::new();
    im.insert("R".into(), r);
    im.insert("L".into(), l);
    im.insert("m".into(), m);
    im.insert("beta".into(), beta);
    im.insert("ln_nu".into(), ln_nu);
    Ok(LsiBoundReport::new(Route::QuarticHolleyStroock, lambda, ln_nu, im))
}

/// Quartic-route bound for a model with a quartic regularizer.
pub fn quartic_bound_for(model: &Model, d: usize, m: f64, lambda: f64) -> Result<LsiBoundReport> {
    let RegularizerKind::Quartic { beta } = model.regularizer.kind else {
        return Err(Error::invalid("the quartic route needs a quartic regularizer"));
    };
    let l1 = model.loss.l1();
    if !l1.is_finite() {
        return Err(Error::invalid("the loss gradient is unbounded; no finite L1"));
    }
    let a = &model.activation;
    quartic_bound(m, beta, d, l1, a.c3, a.c4, lambda)
}

/// Every constant the Lyapunov route reads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub d: usize,
    pub l1: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub m: f64,
    pub b: f64,
    pub p: f64,
    pub d3: f64,
    pub d4: f64,
    pub d7: f64,
    pub d8: f64,
    pub k: f64,
}

impl BoundConstants {
    pub fn from_model(model: &Model, d: usize) -> Result<Self> {
        let l1 = model.loss.l1();
        if !l1.is_finite() {
            return Err(Error::invalid("the loss gradient is unbounded; no finite L1"));
        }
        let a = &model.activation;
        let c = &model.regularizer.certs;
        Ok(BoundConstants {
            d,
            l1,
            c1: a.c1,
            c2: a.c2,
            c3: a.c3,
            c4: a.c4,
            m: c.m,
            b: c.b,
            p: c.p,
            d3: c.d3,
            d4: c.d4,
            d7: c.d7,
            d8: c.d8,
            k: c.k,
        })
    }

    /// Constants of `s·U`: the loss bound and every regularizer coefficient scale.
    pub fn scaled(&self, s: f64) -> Self {
        BoundConstants {
            l1: self.l1 * s,
            m: self.m * s,
            b: self.b * s,
            d3: self.d3 * s,
            d4: self.d4 * s,
            d7: self.d7 * s,
            d8: self.d8 * s,
            ..*self
        }
    }

    /// `poly(r) = D7 r^k + L1C1 r² + L1C2 r + D8`, with `Osc_r(U) ≤ 2 poly(r)`.
    pub fn poly(&self, r: f64) -> f64 {
        self.d7 * r.powf(self.k) + self.l1 * self.c1 * r * r + self.l1 * self.c2 * r + self.d8
    }
}

/// `Φ(s) = √(2(d+1)) D3 s^p + √(2d) L1C4 s + 2√((d+1)D3D4) s^{p/2} + √(4L1²C3² + 2(d+1)D4²)`.
pub fn phi(s: f64, c: &BoundConstants) -> f64 {
    let d = c.d as f64;
    (2.0 * (d + 1.0)).sqrt() * c.d3 * s.powf(c.p)
        + (2.0 * d).sqrt() * c.l1 * c.c4 * s
        + 2.0 * ((d + 1.0) * c.d3 * c.d4).sqrt() * s.powf(0.5 * c.p)
        + (4.0 * c.l1 * c.l1 * c.c3 * c.c3 + 2.0 * (d + 1.0) * c.d4 * c.d4).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `p = 1`
    Linear,
    /// `p > 1`
    Superlinear,
}

/// Constants making `V = γ/2‖θ‖²` satisfy
/// `ℒV + ‖∇V‖² ≤ −c1‖θ‖²Φ(2‖θ‖) + c2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub gamma: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub c1: f64,
    pub c2: f64,
    pub branch: Branch,
    pub b: f64,
    pub p: f64,
    pub phi0: f64,
    /// The potential the constants describe is `potential_scale · U`.
    pub potential_scale: f64,
    /// Temperature entering the displayed bound after scaling.
    pub lambda_eff: f64,
    pub scaling: Scaling,
    pub constants: BoundConstants,
    /// Terms of the `R²` max-list, in displayed order.
    pub r_sq_terms: Vec<f64>,
    pub violation_count: Option<usize>,
    pub worst_margin: Option<f64>,
}

impl LyapunovCertificate {
    /// `c2(R) = c1R²Φ(2R) + γ(d+1) + γ(γ + L1C1 + L1C3²)R² + γL1C2R + γb`.
    pub fn c2_at(&self, r: f64) -> f64 {
        c2_of(&self.constants, self.gamma, self.c1, r)
    }
}

fn c2_of(c: &BoundConstants, gamma: f64, c1: f64, r: f64) -> f64 {
    let d = c.d as f64;
    c1 * r * r * phi(2.0 * r, c)
        + gamma * (d + 1.0)
        + gamma * (gamma + c.l1 * c.c1 + c.l1 * c.c3 * c.c3) * r * r
        + gamma * c.l1 * c.c2 * r
        + gamma * c.b
}

/// Lyapunov constants for explicit bound constants (the minimal admissible `R`).
pub fn lyapunov_constants_from(c: &BoundConstants) -> Result<LyapunovCertificate> {
    if !(c.p >= 1.0 && c.p.is_finite()) {
        return Err(Error::invalid(format!("the Lyapunov route needs p >= 1, got {}", c.p)));
    }
    if !(c.m > 0.0 && c.m.is_finite()) {
        return Err(Error::invalid("dissipativity constant m must be positive"));
    }
    if c.d == 0 {
        return Err(Error::invalid("d must be at least 1"));
    }
    let d = c.d as f64;
    let p = c.p;
    let m = c.m;
    let branch = if p == 1.0 { Branch::Linear } else { Branch::Superlinear };
    let gamma = match branch {
        Branch::Linear => {
            2f64.powf(0.5 * p) * ((2.0 * (d + 1.0)).sqrt() * c.d3 + 2.0 * c.l1 * c.c4 * d.sqrt()) / m + 4.0
        }
        Branch::Superlinear => 2f64.powf(0.5 * p) * (2.0 * (d + 1.0)).sqrt() * c.d3 / m + 5.0,
    };
    let phi0 = phi(0.0, c);
    let mut terms = vec![
        1.0,
        ((phi0 + gamma * (gamma + c.l1 * c.c1 + c.l1 * c.c3 * c.c3)) / m).powf(2.0 / p),
        (gamma * c.l1 * c.c2 / m).powf(2.0 / (1.0 + p)),
        (gamma * (c.b + d + 1.0) / m).powf(2.0 / (2.0 + p)),
    ];
    if branch == Branch::Superlinear {
        terms.push((2.0 * c.l1 * c.c4 * d.sqrt() / m).powf(2.0 / (p - 1.0)));
    }
    terms.push((2.0 * ((d + 1.0) * c.d3 * c.d4).sqrt() / m).powf(4.0 / p));
    let r_sq = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !r_sq.is_finite() {
        return Err(Error::numeric("Lyapunov radius is not finite"));
    }
    let r = r_sq.sqrt();
    let c1 = 1.0;
    Ok(LyapunovCertificate {
        gamma,
        r,
        c1,
        c2: c2_of(c, gamma, c1, r),
        branch,
        b: c.b,
        p,
        phi0,
        potential_scale: 1.0,
        lambda_eff: f64::NAN,
        scaling: Scaling::Statement,
        constants: *c,
        r_sq_terms: terms,
        violation_count: None,
        worst_margin: None,
    })
}

/// Lyapunov constants for a model at temperature `λ`.
///
/// With [`Scaling::StrictProof`] the constants describe `U/λ` and the bound is
/// later evaluated with unit temperature.
pub fn lyapunov_constants(model: &Model, d: usize, lambda: f64, scaling: Scaling) -> Result<LyapunovCertificate> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let base = BoundConstants::from_model(model, d)?;
    let (consts, scale, lambda_eff) = match scaling {
        Scaling::Statement => (base, 1.0, lambda),
        Scaling::StrictProof => (base.scaled(1.0 / lambda), 1.0 / lambda, 1.0),
    };
    let mut cert = lyapunov_constants_from(&consts)?;
    cert.potential_scale = scale;
    cert.lambda_eff = lambda_eff;
    cert.scaling = scaling;
    Ok(cert)
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovCheck {
    pub trials: usize,
    pub violation_count: usize,
    /// `min (RHS − LHS)` over the samples.
    pub worst_margin: f64,
    pub worst_norm: f64,
}

/// Samples `θ` with `‖θ‖ ≤ radius` (norm uniform, direction uniform, plus the
/// origin) and compares `γ(d+1) − γ⟨∇U, θ⟩ + γ²‖θ‖²` against
/// `−c1‖θ‖²Φ(2‖θ‖) + c2` using the actual potential gradient.
pub fn verify_lyapunov(
    cert: &LyapunovCertificate,
    ensemble: &ParticleEnsemble,
    data: &Dataset,
    model: &Model,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<LyapunovCheck> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::invalid("radius must be finite and nonnegative"));
    }
    let coupling = Coupling::new(ensemble, data, model)?;
    let width = ensemble.width();
    let dd = (width) as f64;
    let g = cert.gamma;
    let mut rng = substream(seed, Domain::Validation, 7, 0);
    let mut theta = vec![0.0; width];
    let mut grad = vec![0.0; width];
    let mut check = LyapunovCheck {
        trials,
        violation_count: 0,
        worst_margin: f64::INFINITY,
        worst_norm: 0.0,
    };
    for t in 0..trials {
        if t == 0 {
            theta.fill(0.0);
        } else {
            loop {
                theta.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let n = norm_sq(&theta).sqrt();
                if n > 1e-12 {
                    let s = radius * rng.random::<f64>() / n;
                    theta.iter_mut().for_each(|v| *v *= s);
                    break;
                }
            }
        }
        coupling.grad_into(&theta, &mut grad);
        let s2 = norm_sq(&theta);
        let s = s2.sqrt();
        let inner: f64 = grad.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() * cert.potential_scale;
        let lhs = g * dd - g * inner + g * g * s2;
        let rhs = -cert.c1 * s2 * phi(2.0 * s, &cert.constants) + cert.c2;
        let margin = rhs - lhs;
        let tol = 1e-12 * lhs.abs().max(rhs.abs()).max(1.0);
        if margin < -tol || !margin.is_finite() {
            check.violation_count += 1;
        }
        if margin < check.worst_margin || margin.is_nan() {
            check.worst_margin = margin;
            check.worst_norm = s;
        }
    }
    Ok(check)
}

/// Sampled oscillation `sup − inf` of `U(·, ρ̂)` over balls around the origin.
#[derive(Debug, Clone)]
pub struct OscTable {
    radii: Vec<f64>,
    max: Vec<f64>,
    min: Vec<f64>,
}

impl OscTable {
    /// Evaluates `U` at `samples` points with norm uniform on `[0, r_cap]`.
    pub fn sample(
        ensemble: &ParticleEnsemble,
        data: &Dataset,
        model: &Model,
        r_cap: f64,
        samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(r_cap > 0.0 && r_cap.is_finite()) || samples == 0 {
            return Err(Error::invalid("need a positive radius cap and at least one sample"));
        }
        let coupling = Coupling::new(ensemble, data, model)?;
        let width = ensemble.width();
        let mut rng = substream(seed, Domain::Sampling, 11, 0);
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(samples + 1);
        pts.push((0.0, coupling.value(&vec![0.0; width])));
        let mut theta = vec![0.0; width];
        for _ in 0..samples {
            theta.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let n = norm_sq(&theta).sqrt().max(1e-300);
            let s = r_cap * rng.random::<f64>();
            theta.iter_mut().for_each(|v| *v *= s / n);
            pts.push((s, coupling.value(&theta)));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut max = Vec::with_capacity(pts.len());
        let mut min = Vec::with_capacity(pts.len());
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for &(_, u) in &pts {
            hi = hi.max(u);
            lo = lo.min(u);
            max.push(hi);
            min.push(lo);
        }
        Ok(OscTable {
            radii: pts.iter().map(|p| p.0).collect(),
            max,
            min,
        })
    }

    pub fn r_cap(&self) -> f64 {
        *self.radii.last().expect("non-empty")
    }

    pub fn osc(&self, r: f64) -> f64 {
        let i = self.radii.partition_point(|&s| s <= r);
        if i == 0 {
            0.0
        } else {
            self.max[i - 1] - self.min[i - 1]
        }
    }
}

/// Options of the infimum search.
#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub scan_points: usize,
    /// Initial bounds on `r/r_min − 1`.
    pub offset_lo: f64,
    pub offset_hi: f64,
    /// Maximum number of domain extensions on each side.
    pub max_extensions: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            scan_points: 4001,
            offset_lo: 1e-6,
            offset_hi: 1e6 - 1.0,
            max_extensions: 8,
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Log of the infimum objective as a function of `x = ln(r/r_min − 1)`, less
/// the constant `ln(C a) + E(r_min)`.
///
/// Near `r_min` the exponent `E` is huge while the objective's structure lives
/// in `E(r) − E(r_min)`, so that difference is evaluated directly.
struct Objective<'a> {
    /// `ln(C a) + 4 ln r_min + E(r_min)`.
    shift: f64,
    ln_c2: f64,
    r_min: f64,
    /// `E(r_min(1 + δ)) − E(r_min)` as a function of `δ`.
    exponent_change: &'a dyn Fn(f64) -> f64,
}

impl Objective<'_> {
    fn r(&self, x: f64) -> f64 {
        self.r_min * (1.0 + x.exp())
    }

    fn eval(&self, x: f64) -> f64 {
        let delta = x.exp();
        // a r² − c2 = c2 δ (2 + δ)
        let ln_den = self.ln_c2 + x + (2.0 + delta).ln();
        let change = 4.0 * delta.ln_1p() + (self.exponent_change)(delta);
        // softplus(shift + change) − shift
        let z = self.shift + change;
        let v = if z > 0.0 {
            change + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p() - self.shift
        } - ln_den;
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

/// Lyapunov-route bound
///
/// `ν ≤ 2√(2/a) + 1/c1 + [2√(2/a)c2 + 2c2/c1 + 2] · inf_{r > √(c2/a)} (1 + C r⁴ a e^{E(r)}) / (a r² − c2)`
///
/// with `a = c1 Φ(0)/λ` and `E(r) = 2poly(r) + γr²/2` (or the sampled
/// oscillation in place of `2poly(r)`).
pub fn lyapunov_bound(
    cert: &LyapunovCertificate,
    lambda: f64,
    c_universal: f64,
    osc: Option<&OscTable>,
    opts: &SearchOptions,
) -> Result<LsiBoundReport> {
    if !(c_universal > 0.0 && c_universal.is_finite()) {
        return Err(Error::invalid("the universal constant C must be positive"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let lambda_eff = if cert.lambda_eff.is_nan() {
        lambda
    } else {
        cert.lambda_eff
    };
    let c1 = cert.c1;
    let c2 = cert.c2;
    let a = c1 * cert.phi0 / lambda_eff;
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Infeasible(format!("c1·Φ(0)/λ = {a} leaves no admissible r")));
    }
    if !(c2 > 0.0 && c2.is_finite()) {
        return Err(Error::Infeasible(format!("c2 = {c2} must be positive and finite")));
    }
    let r_min = (c2 / a).sqrt();
    let consts = cert.constants;
    let gamma = cert.gamma;
    let scale = cert.potential_scale;
    let emp_exp = |r: f64| {
        let t = osc.expect("checked");
        if r > t.r_cap() {
            f64::INFINITY
        } else {
            scale * t.osc(r) + 0.5 * gamma * r * r
        }
    };
    let e_min = match osc {
        Some(_) => emp_exp(r_min),
        None => 2.0 * consts.poly(r_min) + 0.5 * gamma * r_min * r_min,
    };
    // r² − r_min² = r_min² δ(2 + δ), r^k − r_min^k = r_min^k expm1(k ln(1 + δ))
    let poly_change = |delta: f64| {
        let sq = r_min * r_min * delta * (2.0 + delta);
        let pk = consts.d7 * r_min.powf(consts.k) * (consts.k * delta.ln_1p()).exp_m1();
        2.0 * (pk + consts.l1 * consts.c1 * sq + consts.l1 * consts.c2 * r_min * delta) + 0.5 * gamma * sq
    };
    let emp_change = |delta: f64| emp_exp(r_min * (1.0 + delta)) - e_min;
    let exponent_change: &dyn Fn(f64) -> f64 = if osc.is_some() { &emp_change } else { &poly_change };
    let shift = (c_universal * a).ln() + 4.0 * r_min.ln() + e_min;
    let obj = Objective {
        shift,
        ln_c2: c2.ln(),
        r_min,
        exponent_change,
    };

    let n = opts.scan_points.max(3);
    let mut lo = opts.offset_lo.ln();
    let mut hi = opts.offset_hi.ln();
    if let Some(t) = osc {
        if t.r_cap() <= r_min {
            return Err(Error::Infeasible("oscillation samples do not reach past r_min".into()));
        }
        hi = hi.min((t.r_cap() / r_min - 1.0).ln());
        lo = lo.min(hi - 1.0);
    }
    let (mut best_i, mut grid);
    let mut ext = (0, 0);
    loop {
        grid = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect::<Vec<f64>>();
        let vals: Vec<f64> = grid.iter().map(|&x| obj.eval(x)).collect();
        best_i = 0;
        for (i, v) in vals.iter().enumerate() {
            if *v < vals[best_i] {
                best_i = i;
            }
        }
        if !vals[best_i].is_finite() {
            return Err(Error::Infeasible(
                "the infimum objective is infinite on the whole search domain".into(),
            ));
        }
        let span = hi - lo;
        if best_i == n - 1 && osc.is_none() && ext.1 < opts.max_extensions {
            hi += 1e6f64.ln();
            ext.1 += 1;
        } else if best_i == 0 && ext.0 < opts.max_extensions {
            lo -= span.min(1e3f64.ln());
            ext.0 += 1;
        } else {
            break;
        }
    }
    let a_x = grid[best_i.saturating_sub(1)];
    let b_x = grid[(best_i + 1).min(n - 1)];
    let x_star = golden_section(|x| obj.eval(x), a_x, b_x, 1e-13);
    let ln_inf = obj.eval(x_star).min(obj.eval(grid[best_i])) + shift;
    let x_star = if obj.eval(x_star) <= obj.eval(grid[best_i]) {
        x_star
    } else {
        grid[best_i]
    };
    let r_star = obj.r(x_star);

    let sq = (2.0 / a).sqrt();
    let head = 2.0 * sq + 1.0 / c1;
    let coef = 2.0 * sq * c2 + 2.0 * c2 / c1 + 2.0;
    let ln_nu = log_add_exp(head.ln(), coef.ln() + ln_inf);

    let mut im = BTreeMap::new();
    im.insert("Phi0".into(), cert.phi0);
    im.insert("gamma".into(), gamma);
    im.insert("R".into(), cert.r);
    im.insert("c1".into(), c1);
    im.insert("c2".into(), c2);
    im.insert("r_min".into(), r_min);
    im.insert("r_star".into(), r_star);
    im.insert("ln_offset_star".into(), x_star);
    im.insert("C_universal".into(), c_universal);
    im.insert("lambda_eff".into(), lambda_eff);
    im.insert("ln_inf".into(), ln_inf);
    im.insert("ln_nu".into(), ln_nu);
    im.insert("search_r_lo".into(), obj.r(grid[0]));
    im.insert("search_r_hi".into(), obj.r(grid[n - 1]));
    let mut report = LsiBoundReport::new(Route::Lyapunov, lambda, ln_nu, im);
    report.scaling = Some(cert.scaling);
    report.osc_mode = Some(if osc.is_some() {
        OscMode::Empirical
    } else {
        OscMode::Poly
    });
    Ok(report)
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

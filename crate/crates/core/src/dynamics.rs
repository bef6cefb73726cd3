//! Euler–Maruyama integration of `dθ = −∇U(θ, ρ_t) dt + √(2λ) dB_t` for the
//! empirical measure of `N` interacting particles.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::particle::dot;
use crate::model::{Coupling, Dataset, Model, ParticleEnsemble};
use crate::objective::{free_energy, DEFAULT_K_NN};
use crate::rng::{substream, CounterNormals, Domain};

/// Step-size schedule: `dt_k = dt · factor^⌊k / every⌋` (`every = 0` disables).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub every: u64,
    pub factor: f64,
}

impl Default for LrDecay {
    fn default() -> Self {
        LrDecay { every: 0, factor: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "n")]
    pub n_particles: usize,
    pub d: usize,
    pub lambda: f64,
    pub dt: f64,
    #[serde(default)]
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lr_decay: LrDecay,
    /// Samples per step; `0` uses the whole epoch.
    #[serde(default)]
    pub batch: usize,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    /// Neighbour rank of the entropy estimate; `0` skips the entropy (and `Q`).
    #[serde(default = "default_k")]
    pub entropy_k: usize,
    #[serde(default)]
    pub keep_snapshots: bool,
}

fn default_record_every() -> u64 {
    1
}

fn default_k() -> usize {
    DEFAULT_K_NN
}

impl SimConfig {
    pub fn new(n_particles: usize, d: usize, lambda: f64, dt: f64, steps: u64, seed: u64) -> Self {
        SimConfig {
            n_particles,
            d,
            lambda,
            dt,
            steps,
            seed,
            lr_decay: LrDecay::default(),
            batch: 0,
            record_every: 1,
            entropy_k: DEFAULT_K_NN,
            keep_snapshots: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.d == 0 {
            return Err(Error::invalid("d must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        if !(self.lr_decay.factor > 0.0 && self.lr_decay.factor <= 1.0) {
            return Err(Error::invalid("lr_decay.factor must lie in (0, 1]"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be at least 1"));
        }
        Ok(())
    }

    /// Step size used by step `k`.
    pub fn dt_at(&self, k: u64) -> f64 {
        match k.checked_div(self.lr_decay.every) {
            Some(halvings) => self.dt * self.lr_decay.factor.powi(halvings as i32),
            None => self.dt,
        }
    }
}

/// Per-record time series of a simulation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub times: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    pub risk: Vec<f64>,
    pub reg_mean: Vec<f64>,
    pub entropy: Vec<f64>,
    /// Mean over particles of `‖∇U‖²`.
    pub grad_norm_mean: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Option<Vec<ParticleEnsemble>>,
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,Q,risk,reg_mean,entropy,grad_norm_mean";

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.times[i], self.q[i], self.risk[i], self.reg_mean[i], self.entropy[i], self.grad_norm_mean[i]
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    /// Snapshots as `[{"t": .., "particles": [[u, w..], ..]}, ..]`.
    pub fn snapshots_json(&self) -> serde_json::Value {
        let snaps = self.snapshots.as_deref().unwrap_or(&[]);
        serde_json::Value::Array(
            snaps
                .iter()
                .zip(&self.times)
                .map(|(e, t)| serde_json::json!({ "t": t, "particles": e.to_uw_rows() }))
                .collect(),
        )
    }
}

/// Source of the data used by each integrator step.
pub trait DataSource {
    /// Data for step `step` (0-based).
    fn batch(&mut self, step: u64) -> Result<&Dataset>;
}

/// The same dataset at every step.
#[derive(Debug, Clone)]
pub struct FixedData(pub Dataset);

impl DataSource for FixedData {
    fn batch(&mut self, _step: u64) -> Result<&Dataset> {
        Ok(&self.0)
    }
}

/// Gaussian increments addressed by particle index and step.
pub trait NoiseSource {
    fn fill(&self, particle: usize, step: u64, out: &mut [f64]);
}

/// Independent per-particle streams derived from one seed.
#[derive(Debug, Clone, Copy)]
pub struct SeededNoise(CounterNormals);

impl SeededNoise {
    pub fn new(seed: u64) -> Self {
        SeededNoise(CounterNormals::new(seed, Domain::Diffusion))
    }
}

impl NoiseSource for SeededNoise {
    fn fill(&self, particle: usize, step: u64, out: &mut [f64]) {
        self.0.fill(particle as u64, step, out)
    }
}

/// `N` particles with i.i.d. standard normal coordinates.
pub fn init_ensemble(n: usize, d: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if d == 0 {
        return Err(Error::invalid("d must be at least 1"));
    }
    let mut coords = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        let mut rng = substream(seed, Domain::Init, i as u64, 0);
        coords.extend((0..=d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
    }
    ParticleEnsemble::from_coords(d, coords)
}

/// One synchronous Euler–Maruyama step: every drift is evaluated against the
/// pre-step ensemble, then `θ_i ← θ_i − ∇U(θ_i, ρ̂) dt + √(2λ dt) ξ_i`.
pub fn em_step<N: NoiseSource + ?Sized>(
    ensemble: &ParticleEnsemble,
    data: &Dataset,
    model: &Model,
    lambda: f64,
    dt: f64,
    noise: &N,
    step: u64,
) -> Result<ParticleEnsemble> {
    let mut next = ensemble.clone();
    em_step_into(ensemble, &mut next, data, model, lambda, dt, noise, step)?;
    Ok(next)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn em_step_into<N: NoiseSource + ?Sized>(
    ensemble: &ParticleEnsemble,
    next: &mut ParticleEnsemble,
    data: &Dataset,
    model: &Model,
    lambda: f64,
    dt: f64,
    noise: &N,
    step: u64,
) -> Result<()> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt must be finite and nonnegative"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if data.d() != ensemble.d() {
        return Err(Error::invalid("data dimension differs from ensemble dimension"));
    }
    if let Some(i) = ensemble.first_non_finite() {
        return Err(Error::ParticleFault {
            step,
            particle: i,
            reason: "non-finite coordinate before update".into(),
        });
    }
    let d = ensemble.d();
    let k = ensemble.width();
    let n = data.len();
    let act = &model.activation;
    // σ and σ′ of every (particle, data point) pair, shared by the predictions
    // and the drifts
    let mut cache = Vec::with_capacity(ensemble.len() * n);
    let mut preds = vec![0.0; n];
    for row in ensemble.rows() {
        let (w, u) = (&row[..d], row[d]);
        for (j, (x, _)) in data.iter().enumerate() {
            let (h, h1) = act.value_slope(dot(w, x));
            preds[j] += u * h;
            cache.push((h, h1));
        }
    }
    let inv_len = 1.0 / ensemble.len() as f64;
    preds.iter_mut().for_each(|p| *p *= inv_len);
    let coupling = Coupling::from_predictions(data, model, preds);
    let slopes = coupling.slopes();
    let inv_n = 1.0 / n as f64;
    let sigma = (2.0 * lambda * dt).sqrt();
    let mut grad = vec![0.0; k];
    let mut xi = vec![0.0; k];
    for i in 0..ensemble.len() {
        let theta = ensemble.row(i);
        let u = theta[d];
        grad.fill(0.0);
        let mut du = 0.0;
        for (j, (x, _)) in data.iter().enumerate() {
            let g = slopes[j];
            if g == 0.0 {
                continue;
            }
            let (h, h1) = cache[i * n + j];
            du += g * h;
            let c = g * u * h1;
            for (o, xc) in grad[..d].iter_mut().zip(x) {
                *o += c * xc;
            }
        }
        grad[..d].iter_mut().for_each(|o| *o *= inv_n);
        grad[d] = du * inv_n;
        model.regularizer.add_grad(theta, &mut grad);
        if sigma > 0.0 {
            noise.fill(i, step, &mut xi);
        }
        let out = next.row_mut(i);
        for c in 0..k {
            out[c] = theta[c] - dt * grad[c] + if sigma > 0.0 { sigma * xi[c] } else { 0.0 };
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::ParticleFault {
                step,
                particle: i,
                reason: "non-finite coordinate after update".into(),
            });
        }
    }
    Ok(())
}

/// Final state of a run next to its log.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub log: TrajectoryLog,
    pub final_ensemble: ParticleEnsemble,
}

/// Runs `config.steps` steps from the seeded Gaussian initialization.
pub fn simulate<S: DataSource + ?Sized>(config: &SimConfig, model: &Model, source: &mut S) -> Result<TrajectoryLog> {
    let init = init_ensemble(config.n_particles, config.d, config.seed)?;
    Ok(simulate_from(config, model, source, init)?.log)
}

/// Runs from a given initial ensemble, recording every `record_every` steps
/// and after the last step.
pub fn simulate_from<S: DataSource + ?Sized>(
    config: &SimConfig,
    model: &Model,
    source: &mut S,
    init: ParticleEnsemble,
) -> Result<SimResult> {
    config.validate()?;
    if init.d() != config.d {
        return Err(Error::invalid("initial ensemble dimension differs from config"));
    }
    let noise = SeededNoise::new(config.seed);
    let mut log = TrajectoryLog {
        snapshots: config.keep_snapshots.then(Vec::new),
        ..Default::default()
    };
    let mut current = init;
    let mut scratch = current.clone();
    let mut t = 0.0;

    let record_step = |k: u64| k.min(config.steps.saturating_sub(1));
    record(&mut log, &current, source.batch(record_step(0))?, model, config, t)?;
    for k in 0..config.steps {
        let dt = config.dt_at(k);
        let data = source.batch(k)?;
        em_step_into(&current, &mut scratch, data, model, config.lambda, dt, &noise, k)?;
        std::mem::swap(&mut current, &mut scratch);
        t += dt;
        let done = k + 1;
        if done % config.record_every == 0 || done == config.steps {
            let data = source.batch(record_step(done))?;
            record(&mut log, &current, data, model, config, t).map_err(|e| match e {
                Error::NumericFault(reason) => Error::ParticleFault {
                    step: done,
                    particle: current.first_non_finite().unwrap_or(0),
                    reason,
                },
                e => e,
            })?;
        }
    }
    Ok(SimResult {
        log,
        final_ensemble: current,
    })
}

fn record(
    log: &mut TrajectoryLog,
    ensemble: &ParticleEnsemble,
    data: &Dataset,
    model: &Model,
    config: &SimConfig,
    t: f64,
) -> Result<()> {
    let (entropy, q, risk, reg_mean) = if config.entropy_k == 0 || ensemble.len() <= config.entropy_k {
        let rep = free_energy(ensemble, data, model, 0.0, 0)?;
        let q = if config.lambda == 0.0 { rep.q } else { f64::NAN };
        (f64::NAN, q, rep.risk, rep.reg_mean)
    } else {
        let rep = free_energy(ensemble, data, model, config.lambda, config.entropy_k)?;
        (rep.entropy, rep.q, rep.risk, rep.reg_mean)
    };
    let coupling = Coupling::new(ensemble, data, model)?;
    let mut g = vec![0.0; ensemble.width()];
    let mut total = 0.0;
    for row in ensemble.rows() {
        coupling.grad_into(row, &mut g);
        total += g.iter().map(|v| v * v).sum::<f64>();
    }
    log.times.push(t);
    log.q.push(q);
    log.risk.push(risk);
    log.reg_mean.push(reg_mean);
    log.entropy.push(entropy);
    log.grad_norm_mean.push(total / ensemble.len() as f64);
    if let Some(s) = log.snapshots.as_mut() {
        s.push(ensemble.clone());
    }
    Ok(())
}

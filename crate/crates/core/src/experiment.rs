//! Teacher–student experiments: configuration, data generation, per-arm runs
//! and artifact emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{init_ensemble, simulate_from, DataSource, SimConfig, TrajectoryLog, TRAJECTORY_CSV_HEADER};
use crate::error::{Error, Result};
use crate::fp::GridSpec;
use crate::lsi::{self, LsiBoundReport, Scaling, SearchOptions};
use crate::model::{ActivationSpec, Dataset, LossSpec, Model, ParticleEnsemble, RegularizerKind, RegularizerSpec};
use crate::objective::{default_window, fit_decay_rate, free_energy, q_star_proxy, ObjectiveReport, RateFit};
use crate::rng::{substream, Domain};

/// Config schema version understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TeacherNeuron {
    pub u: f64,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputSampler {
    /// Uniform on the sphere of radius `x_max`.
    Sphere { x_max: f64 },
    /// Uniform in the ball of radius `x_max`.
    Ball { x_max: f64 },
    /// Standard normal, radially clipped to `x_max`.
    GaussianClipped { x_max: f64 },
}

impl Default for InputSampler {
    fn default() -> Self {
        InputSampler::Ball { x_max: 1.0 }
    }
}

impl InputSampler {
    pub fn x_max(&self) -> f64 {
        match *self {
            InputSampler::Sphere { x_max } | InputSampler::Ball { x_max } | InputSampler::GaussianClipped { x_max } => {
                x_max
            }
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R, d: usize, out: &mut Vec<f64>) {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = match *self {
            InputSampler::Sphere { x_max } => x_max / norm,
            InputSampler::Ball { x_max } => x_max * rng.random::<f64>().powf(1.0 / d as f64) / norm,
            InputSampler::GaussianClipped { x_max } => {
                if norm > x_max {
                    x_max / norm
                } else {
                    1.0
                }
            }
        };
        v.iter_mut().for_each(|a| *a *= scale);
        out.extend(v);
    }
}

/// How teacher neurons are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherScaling {
    /// `(1/M) Σ u_j h(w_j, x)`, matching the student's parameterization.
    #[default]
    Mean,
    /// `Σ u_j h(w_j, x)`.
    Sum,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    pub neurons: Vec<TeacherNeuron>,
    #[serde(default = "default_activation")]
    pub activation: ActivationSpec,
    #[serde(default)]
    pub sampler: InputSampler,
    #[serde(default)]
    pub label_noise_sd: f64,
    #[serde(default)]
    pub scaling: TeacherScaling,
}

fn default_activation() -> ActivationSpec {
    ActivationSpec::smoothed_relu(4.0, 1.0).expect("valid default")
}

impl TeacherSpec {
    /// Two-neuron teacher in the plane: `w1 = [1, 2], u1 = 1.1, w2 = [−3, 1], u2 = −3.2`.
    pub fn two_neuron_plane() -> Self {
        TeacherSpec {
            neurons: vec![
                TeacherNeuron {
                    u: 1.1,
                    w: vec![1.0, 2.0],
                },
                TeacherNeuron {
                    u: -3.2,
                    w: vec![-3.0, 1.0],
                },
            ],
            activation: default_activation(),
            sampler: InputSampler::default(),
            label_noise_sd: 0.0,
            scaling: TeacherScaling::Mean,
        }
    }

    pub fn d(&self) -> usize {
        self.neurons.first().map_or(0, |n| n.w.len())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if self.neurons.is_empty() || d == 0 {
            return Err(Error::invalid("teacher needs at least one neuron of dimension >= 1"));
        }
        if self
            .neurons
            .iter()
            .any(|n| n.w.len() != d || !n.u.is_finite() || n.w.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("teacher neurons must be finite and share one dimension"));
        }
        if !(self.label_noise_sd >= 0.0 && self.label_noise_sd.is_finite()) {
            return Err(Error::invalid("label_noise_sd must be finite and nonnegative"));
        }
        let x_max = self.sampler.x_max();
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(Error::invalid("sampler x_max must be positive"));
        }
        Ok(())
    }

    /// Noise-free teacher output at `x`.
    pub fn output(&self, x: &[f64]) -> f64 {
        let s: f64 = self.neurons.iter().map(|n| n.u * self.activation.value(&n.w, x)).sum();
        match self.scaling {
            TeacherScaling::Mean => s / self.neurons.len() as f64,
            TeacherScaling::Sum => s,
        }
    }
}

/// `n` teacher-labelled samples; deterministic in `seed`.
pub fn make_teacher_dataset(teacher: &TeacherSpec, n: usize, seed: u64) -> Result<Dataset> {
    teacher_dataset_stream(teacher, n, seed, 0)
}

/// Dataset number `stream` of a seeded family (one per epoch).
pub fn teacher_dataset_stream(teacher: &TeacherSpec, n: usize, seed: u64, stream: u64) -> Result<Dataset> {
    teacher.validate()?;
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let d = teacher.d();
    let mut rng = substream(seed, Domain::Data, stream, 0);
    let mut inputs = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = inputs.len();
        teacher.sampler.draw(&mut rng, d, &mut inputs);
        let mut y = teacher.output(&inputs[start..]);
        if teacher.label_noise_sd > 0.0 {
            y += teacher.label_noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        labels.push(y);
    }
    Dataset::from_flat(d, inputs, labels)
}

/// Fresh teacher samples every epoch, consumed in consecutive batches.
#[derive(Debug, Clone)]
pub struct TeacherStream {
    teacher: TeacherSpec,
    seed: u64,
    samples: usize,
    batch: usize,
    epoch: Option<u64>,
    epoch_data: Option<Dataset>,
    current: Option<(u64, Dataset)>,
}

impl TeacherStream {
    pub fn new(teacher: TeacherSpec, seed: u64, samples_per_epoch: usize, batch: usize) -> Result<Self> {
        teacher.validate()?;
        if samples_per_epoch == 0 {
            return Err(Error::invalid("samples_per_epoch must be at least 1"));
        }
        let batch = if batch == 0 {
            samples_per_epoch
        } else {
            batch.min(samples_per_epoch)
        };
        Ok(TeacherStream {
            teacher,
            seed,
            samples: samples_per_epoch,
            batch,
            epoch: None,
            epoch_data: None,
            current: None,
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.samples.div_ceil(self.batch) as u64
    }
}

impl DataSource for TeacherStream {
    fn batch(&mut self, step: u64) -> Result<&Dataset> {
        if self.current.as_ref().is_some_and(|(s, _)| *s == step) {
            return Ok(&self.current.as_ref().expect("checked").1);
        }
        let spe = self.steps_per_epoch();
        let epoch = step / spe;
        if self.epoch != Some(epoch) {
            self.epoch_data = Some(teacher_dataset_stream(&self.teacher, self.samples, self.seed, epoch)?);
            self.epoch = Some(epoch);
        }
        let all = self.epoch_data.as_ref().expect("set above");
        let b = (step % spe) as usize;
        let data = if self.batch == self.samples {
            all.clone()
        } else {
            let lo = b * self.batch;
            let hi = (lo + self.batch).min(all.len());
            let d = all.d();
            let inputs = (lo..hi).flat_map(|j| all.x(j).to_vec()).collect();
            Dataset::from_flat(d, inputs, all.labels()[lo..hi].to_vec())?
        };
        self.current = Some((step, data));
        Ok(&self.current.as_ref().expect("set above").1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// When set, `sim.steps = epochs · ⌈samples_per_epoch / batch⌉`.
    #[serde(default)]
    pub epochs: Option<u64>,
    #[serde(default = "default_samples")]
    pub samples_per_epoch: usize,
    /// When set, the step size decays every this many epochs.
    #[serde(default)]
    pub decay_every_epochs: Option<u64>,
    /// Seed offset of the data stream relative to `sim.seed`.
    #[serde(default)]
    pub seed_offset: u64,
}

fn default_samples() -> usize {
    200
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            epochs: None,
            samples_per_epoch: default_samples(),
            decay_every_epochs: None,
            seed_offset: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "one")]
    pub c_universal: f64,
    /// Strong-convexity target of the quartic route.
    #[serde(default = "one")]
    pub quartic_m: f64,
    /// Also evaluate the Lyapunov route with the sampled oscillation.
    #[serde(default)]
    pub empirical_osc: bool,
    #[serde(default = "default_osc_samples")]
    pub osc_samples: usize,
    /// Samples for the Lyapunov-inequality check (0 disables it).
    #[serde(default)]
    pub verify_trials: usize,
    #[serde(default = "default_verify_radius")]
    pub verify_radius: f64,
}

fn one() -> f64 {
    1.0
}

fn default_osc_samples() -> usize {
    20_000
}

fn default_verify_radius() -> f64 {
    10.0
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            c_universal: 1.0,
            quartic_m: 1.0,
            empirical_osc: false,
            osc_samples: default_osc_samples(),
            verify_trials: 0,
            verify_radius: default_verify_radius(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    #[serde(default)]
    pub q_star: Option<f64>,
    /// Trajectory CSV read by `fit-rate`.
    #[serde(default)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_half")]
    pub half_width: f64,
    #[serde(default = "default_cells")]
    pub cells: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Explicit steps from a Gaussian start (0 skips the transient).
    #[serde(default)]
    pub steps: usize,
    /// Step size as a fraction of the positivity bound.
    #[serde(default = "default_dt_fraction")]
    pub dt_fraction: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_start_sd")]
    pub start_sd: f64,
}

fn default_half() -> f64 {
    6.0
}
fn default_cells() -> usize {
    128
}
fn default_tol() -> f64 {
    1e-10
}
fn default_damping() -> f64 {
    0.5
}
fn default_max_iter() -> usize {
    10_000
}
fn default_dt_fraction() -> f64 {
    0.9
}
fn default_record_every() -> usize {
    10
}
fn default_start_sd() -> f64 {
    0.7
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            half_width: default_half(),
            cells: default_cells(),
            tol: default_tol(),
            damping: default_damping(),
            max_iter: default_max_iter(),
            steps: 0,
            dt_fraction: default_dt_fraction(),
            record_every: default_record_every(),
            start_sd: default_start_sd(),
        }
    }
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        GridSpec::square(self.half_width, self.cells)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_verify_radius")]
    pub radius: f64,
}

fn default_trials() -> usize {
    100
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            trials: default_trials(),
            radius: default_verify_radius(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct EmitFlags {
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub json: bool,
    #[serde(default = "yes")]
    pub plotdata: bool,
}

fn yes() -> bool {
    true
}

impl Default for EmitFlags {
    fn default() -> Self {
        EmitFlags {
            csv: true,
            json: true,
            plotdata: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub emit: EmitFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub sim: SimConfig,
    #[serde(default)]
    pub data: DataConfig,
    pub teacher: TeacherSpec,
    #[serde(default = "default_activation")]
    pub activation: ActivationSpec,
    #[serde(default)]
    pub loss: LossSpec,
    pub regularizers: Vec<RegularizerSpec>,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub gradcheck: CheckConfig,
    #[serde(default)]
    pub validate: CheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Two-neuron planar teacher, 20 students, `β = λ = 1`, step `1e-4`
    /// halving every 100 epochs, 200 epochs of 200 fresh samples taken one
    /// per step, arms
    /// `(β/2)‖θ‖²` and `(β/3)‖θ‖³`.
    pub fn two_neuron_reference() -> Self {
        let mut sim = SimConfig::new(20, 2, 1.0, 1e-4, 0, 0);
        // one sample per step: 200 epochs × 200 samples = 40 000 noisy SGD steps
        sim.batch = 1;
        sim.record_every = 1;
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            sim,
            data: DataConfig {
                epochs: Some(200),
                samples_per_epoch: 200,
                decay_every_epochs: Some(100),
                seed_offset: 0,
            },
            teacher: TeacherSpec::two_neuron_plane(),
            activation: default_activation(),
            loss: LossSpec::default(),
            regularizers: vec![
                RegularizerSpec::power(1.0, 2.0).expect("valid"),
                RegularizerSpec::power(1.0, 3.0).expect("valid"),
            ],
            bounds: BoundsConfig::default(),
            fit: FitConfig::default(),
            grid: GridConfig::default(),
            gradcheck: CheckConfig::default(),
            validate: CheckConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parses TOML, applies `key=value` overrides and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let schema = value.get("schema").and_then(|v| v.as_integer());
        match schema {
            Some(s) if s == SCHEMA_VERSION as i64 => {}
            Some(s) => {
                return Err(Error::Config(format!(
                    "unsupported schema {s}; this build reads schema {SCHEMA_VERSION}"
                )))
            }
            None => return Err(Error::Config("missing integer field `schema`".into())),
        }
        let mut cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn steps_per_epoch(&self) -> u64 {
        let s = self.data.samples_per_epoch.max(1);
        let b = if self.sim.batch == 0 { s } else { self.sim.batch.min(s) };
        s.div_ceil(b) as u64
    }

    /// Derives epoch-based step counts and checks consistency.
    pub fn resolve(&mut self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported schema {}", self.schema)));
        }
        let spe = self.steps_per_epoch();
        if let Some(e) = self.data.epochs {
            self.sim.steps = e * spe;
        }
        if let Some(e) = self.data.decay_every_epochs {
            self.sim.lr_decay.every = e * spe;
        }
        self.sim.validate().map_err(cfg_err)?;
        self.teacher.validate().map_err(cfg_err)?;
        self.loss.validate().map_err(cfg_err)?;
        if self.teacher.d() != self.sim.d {
            return Err(Error::Config(format!(
                "teacher dimension {} differs from sim.d = {}",
                self.teacher.d(),
                self.sim.d
            )));
        }
        if self.teacher.sampler.x_max() > self.activation.x_max {
            return Err(Error::Config(
                "sampler x_max exceeds the activation's certified x_max".into(),
            ));
        }
        if self.regularizers.is_empty() {
            return Err(Error::Config("at least one regularizer arm is required".into()));
        }
        if self.data.samples_per_epoch == 0 {
            return Err(Error::Config("data.samples_per_epoch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model(&self, reg: &RegularizerSpec) -> Model {
        Model::new(self.activation, self.loss, *reg)
    }

    pub fn data_seed(&self) -> u64 {
        self.sim.seed.wrapping_add(self.data.seed_offset)
    }

    pub fn stream(&self) -> Result<TeacherStream> {
        TeacherStream::new(
            self.teacher.clone(),
            self.data_seed(),
            self.data.samples_per_epoch,
            self.sim.batch,
        )
    }

    /// Arm names, unique and filesystem-safe.
    pub fn arm_names(&self) -> Vec<String> {
        self.regularizers
            .iter()
            .enumerate()
            .map(|(i, r)| format!("arm{i}-{}", regularizer_tag(r)))
            .collect()
    }
}

fn regularizer_tag(r: &RegularizerSpec) -> String {
    match r.kind {
        RegularizerKind::Power { q, .. } => format!("power-q{q}"),
        RegularizerKind::Quartic { .. } => "quartic".into(),
        RegularizerKind::QuadPlusCubic { .. } => "quad-plus-cubic".into(),
    }
}

/// Applies `a.b.c=value`; the value is read as a TOML literal, else as a string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{p}` is not inside a table")))?;
        cur = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` does not address a table field")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Result of an optional analysis step.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok(T),
    Skipped(String),
    Failed(String),
}

impl<T> Outcome<T> {
    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(t) => Some(t),
            _ => None,
        }
    }
}

fn outcome<T>(r: Result<T>) -> Outcome<T> {
    match r {
        Ok(t) => Outcome::Ok(t),
        Err(e) => Outcome::Failed(e.to_string()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedBound {
    pub name: String,
    pub result: Outcome<LsiBoundReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmResult {
    pub name: String,
    pub regularizer: RegularizerSpec,
    #[serde(skip)]
    pub log: TrajectoryLog,
    #[serde(skip)]
    pub initial_ensemble: ParticleEnsemble,
    #[serde(skip)]
    pub final_ensemble: ParticleEnsemble,
    pub final_objective: Outcome<ObjectiveReport>,
    pub fit: Outcome<RateFit>,
    pub bounds: Vec<NamedBound>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub arms: Vec<ArmResult>,
    pub files: Vec<PathBuf>,
}

/// LSI bounds applicable to one model.
pub fn bounds_for(
    model: &Model,
    d: usize,
    lambda: f64,
    cfg: &BoundsConfig,
    ensemble: Option<(&ParticleEnsemble, &Dataset)>,
) -> Vec<NamedBound> {
    let mut out = Vec::new();
    if !(lambda > 0.0) {
        out.push(NamedBound {
            name: "all".into(),
            result: Outcome::Skipped("bounds need lambda > 0".into()),
        });
        return out;
    }
    let quartic = if matches!(model.regularizer.kind, RegularizerKind::Quartic { .. }) {
        outcome(lsi::quartic_bound_for(model, d, cfg.quartic_m, lambda))
    } else {
        Outcome::Skipped("the quartic route needs a quartic regularizer".into())
    };
    out.push(NamedBound {
        name: "quartic-holley-stroock".into(),
        result: quartic,
    });
    let opts = SearchOptions::default();
    for scaling in [Scaling::Statement, Scaling::StrictProof] {
        let tag = match scaling {
            Scaling::Statement => "lyapunov",
            Scaling::StrictProof => "lyapunov-strict-proof-scaling",
        };
        let cert = lsi::lyapunov_constants(model, d, lambda, scaling);
        let result = match &cert {
            Ok(c) => outcome(lsi::lyapunov_bound(c, lambda, cfg.c_universal, None, &opts)),
            Err(e) => Outcome::Skipped(e.to_string()),
        };
        out.push(NamedBound {
            name: tag.into(),
            result,
        });
        if let (true, Ok(c), Some((ens, data))) = (cfg.empirical_osc, &cert, ensemble) {
            let r = (|| {
                let poly = lsi::lyapunov_bound(c, lambda, cfg.c_universal, None, &opts)?;
                let r_cap = 4.0 * poly.get("r_star").unwrap_or(1.0);
                let table = lsi::OscTable::sample(ens, data, model, r_cap, cfg.osc_samples, 0)?;
                lsi::lyapunov_bound(c, lambda, cfg.c_universal, Some(&table), &opts)
            })();
            out.push(NamedBound {
                name: format!("{tag}-empirical-osc"),
                result: outcome(r),
            });
        }
    }
    out
}

/// Runs every arm from one shared initial ensemble and data stream, fits the
/// decay rate, evaluates the applicable bounds and writes the artifacts when
/// `cfg.output.dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut cfg = cfg.clone();
    cfg.resolve()?;
    if let Some(dir) = &cfg.output.dir {
        ensure_writable(dir)?;
    }
    let init = init_ensemble(cfg.sim.n_particles, cfg.sim.d, cfg.sim.seed)?;
    let names = cfg.arm_names();
    let mut arms = Vec::with_capacity(names.len());
    for (name, reg) in names.iter().zip(&cfg.regularizers) {
        let wrap = |e: Error| Error::Arm {
            arm: name.clone(),
            source: Box::new(e),
        };
        let model = cfg.model(reg);
        let mut stream = cfg.stream().map_err(wrap)?;
        let res = simulate_from(&cfg.sim, &model, &mut stream, init.clone()).map_err(wrap)?;
        let last = cfg.sim.steps.saturating_sub(1);
        let data = stream.batch(last).map_err(wrap)?.clone();
        let final_objective = if res.final_ensemble.len() > crate::objective::DEFAULT_K_NN {
            outcome(free_energy(
                &res.final_ensemble,
                &data,
                &model,
                cfg.sim.lambda,
                crate::objective::DEFAULT_K_NN,
            ))
        } else {
            Outcome::Skipped("too few particles for the entropy estimate".into())
        };
        let fit = fit_arm(&res.log, &cfg.fit);
        let bounds = bounds_for(
            &model,
            cfg.sim.d,
            cfg.sim.lambda,
            &cfg.bounds,
            Some((&res.final_ensemble, &data)),
        );
        arms.push(ArmResult {
            name: name.clone(),
            regularizer: *reg,
            log: res.log,
            initial_ensemble: init.clone(),
            final_ensemble: res.final_ensemble,
            final_objective,
            fit,
            bounds,
        });
    }
    let files = match &cfg.output.dir {
        Some(dir) => write_artifacts(&cfg, &arms, dir)?,
        None => Vec::new(),
    };
    Ok(ExperimentResult { arms, files })
}

fn fit_arm(log: &TrajectoryLog, fit: &FitConfig) -> Outcome<RateFit> {
    if log.len() < 3 {
        return Outcome::Skipped("trajectory too short to fit".into());
    }
    if log.q.iter().any(|q| q.is_nan()) {
        return Outcome::Skipped("free energy not recorded (entropy disabled)".into());
    }
    let q_star = match fit.q_star {
        Some(q) => q,
        None => match q_star_proxy(log) {
            Ok(q) => q,
            Err(e) => return Outcome::Failed(e.to_string()),
        },
    };
    let window = match fit.window.map(Ok).unwrap_or_else(|| default_window(&log.times)) {
        Ok(w) => w,
        Err(e) => return Outcome::Failed(e.to_string()),
    };
    outcome(fit_decay_rate(log, q_star, window))
}

/// Creates `dir` and checks a file can be written there.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes)?;
    files.push(p);
    Ok(())
}

fn write_artifacts(cfg: &ExperimentConfig, arms: &[ArmResult], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let emit = cfg.output.emit;
    write_file(dir, "config.toml", cfg.to_toml_string()?.as_bytes(), &mut files)?;
    write_file(dir, "schema.md", schema_markdown().as_bytes(), &mut files)?;
    for arm in arms {
        if emit.csv {
            write_file(
                dir,
                &format!("{}_trajectory.csv", arm.name),
                arm.log.to_csv_string().as_bytes(),
                &mut files,
            )?;
        }
        if emit.json {
            let report = serde_json::to_vec_pretty(arm)?;
            write_file(dir, &format!("{}_report.json", arm.name), &report, &mut files)?;
            if arm.log.snapshots.is_some() {
                let snaps = serde_json::to_vec(&arm.log.snapshots_json())?;
                write_file(dir, &format!("{}_snapshots.json", arm.name), &snaps, &mut files)?;
            }
        }
    }
    if emit.plotdata {
        files.extend(emit_plot_data(arms, Some(&cfg.teacher), dir)?);
    }
    if emit.json {
        let summary = serde_json::json!({
            "arms": arms.iter().map(|a| serde_json::json!({
                "name": a.name,
                "final_objective": a.final_objective,
                "fit": a.fit,
            })).collect::<Vec<_>>(),
        });
        write_file(dir, "summary.json", &serde_json::to_vec_pretty(&summary)?, &mut files)?;
    }
    Ok(files)
}

/// Header of the loss-curve CSV.
pub const LOSS_CURVE_HEADER: &str = "t,risk,regularized,regularized_with_entropy";

/// Writes loss curves, neuron scatters (raw and `1/N`-scaled) and teacher
/// directions per arm. File names carry the arm name.
pub fn emit_plot_data(arms: &[ArmResult], teacher: Option<&TeacherSpec>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for arm in arms {
        let mut curve = Vec::new();
        writeln!(curve, "{LOSS_CURVE_HEADER}")?;
        let log = &arm.log;
        for i in 0..log.len() {
            let reg = log.risk[i] + log.reg_mean[i];
            writeln!(curve, "{},{},{},{}", log.times[i], log.risk[i], reg, log.q[i])?;
        }
        write_file(dir, &format!("{}_loss_curve.csv", arm.name), &curve, &mut files)?;
        let e = &arm.final_ensemble;
        write_file(
            dir,
            &format!("{}_neurons.csv", arm.name),
            neuron_csv(e, 1.0).as_bytes(),
            &mut files,
        )?;
        let scale = 1.0 / e.len().max(1) as f64;
        write_file(
            dir,
            &format!("{}_neurons_scaled.csv", arm.name),
            neuron_csv(e, scale).as_bytes(),
            &mut files,
        )?;
    }
    if let Some(t) = teacher {
        let d = t.d();
        let mut out = String::new();
        out.push_str(&neuron_header(d));
        for n in &t.neurons {
            out.push_str(&neuron_row(n.u, &n.w, 1.0));
        }
        write_file(dir, "teacher_neurons.csv", out.as_bytes(), &mut files)?;
    }
    Ok(files)
}

fn neuron_header(d: usize) -> String {
    let mut cols = vec!["u".to_string()];
    cols.extend((1..=d).map(|i| format!("w{i}")));
    cols.extend((1..=d).map(|i| format!("uw{i}")));
    cols.join(",") + "\n"
}

fn neuron_row(u: f64, w: &[f64], scale: f64) -> String {
    let mut cols = vec![u.to_string()];
    cols.extend(w.iter().map(|v| v.to_string()));
    cols.extend(w.iter().map(|v| (scale * u * v).to_string()));
    cols.join(",") + "\n"
}

/// Scatter rows `u, w.., s·u·w..` for every particle.
pub fn neuron_csv(e: &ParticleEnsemble, scale: f64) -> String {
    let d = e.d();
    let mut out = neuron_header(d);
    for row in e.rows() {
        out.push_str(&neuron_row(row[d], &row[..d], scale));
    }
    out
}

/// Documentation of every emitted file.
pub fn schema_markdown() -> String {
    format!(
        r#"# Output schema

All CSV files have a header row; floats use the shortest round-trip decimal form.

## `<arm>_trajectory.csv`

Columns: `{TRAJECTORY_CSV_HEADER}`

| column | meaning |
|---|---|
| `t` | elapsed time, the sum of the step sizes so far |
| `Q` | free energy `risk + reg_mean − λ·entropy`; `NaN` when the entropy is disabled and `λ > 0` |
| `risk` | mean loss of the network on the current batch |
| `reg_mean` | mean regularizer value over the particles |
| `entropy` | Kozachenko–Leonenko differential-entropy estimate (`NaN` when disabled) |
| `grad_norm_mean` | mean over particles of the squared drift norm `‖∇U‖²` |

## `<arm>_loss_curve.csv`

Columns: `{LOSS_CURVE_HEADER}`. `regularized` is `risk + reg_mean` (no entropy);
`regularized_with_entropy` is `Q`.

## `<arm>_neurons.csv`, `<arm>_neurons_scaled.csv`, `teacher_neurons.csv`

Columns `u, w1..wd, uw1..uwd`: one row per neuron of the final ensemble. The
`uw` columns are the product `u·w`; in the `_scaled` file they are further
divided by the number of particles `N`.

## `<arm>_snapshots.json`

Array of `{{"t": number, "particles": [[u, w1, .., wd], ..]}}`, one entry per
recorded step (only with `sim.keep_snapshots = true`).

## `<arm>_report.json`

Arm name, regularizer with its certificates, final objective (`risk`,
`reg_mean`, `entropy`, `Q`, `k_nn`), decay-rate fit (`rate`, `intercept`,
`r_squared`, `window`, `Q_star`, `points`) and the log-Sobolev bound reports.
Each optional result is `{{"ok": ..}}`, `{{"skipped": reason}}` or
`{{"failed": reason}}`.

A bound report holds `route`, `lambda`, `nu` (`ln`, `log10`, `mantissa`,
`exponent`, `overflow`, `value` — `value` is `null` once `log10 > 300`),
`rate = 2λ/ν`, `ln_rate` and the `intermediates` map (`R`, `L` for the quartic
route; `Phi0`, `gamma`, `R`, `c1`, `c2`, `r_min`, `r_star`, `C_universal`,
`lambda_eff`, `ln_inf` for the Lyapunov route).

## Grid oracle (`fp-oracle`, `sim.d = 1`)

`<arm>_rho_star.csv`: line 1 `u_lo,u_hi,w_lo,w_hi,n_u,n_w`, line 2 their
values, then `n_u` rows of `n_w` densities (row index `u`, column index `w`).
`<arm>_rho_star.bin`: `MFGD`, `n_u`, `n_w` as little-endian u64, the four
bounds and the densities as little-endian f64, row-major in `u`.
`<arm>_fp_trajectory.csv`: columns `t,Q` of the explicit run from a Gaussian
start (only with `grid.steps > 0`). `fp_report.json`: per arm the fixed-point
`iterations`, `residual`, `Q_star`, `boundary_ratio`, the transient's
`max_increase` of `Q` per step and its decay fit over the middle third.

## Other reports

`summary.json`, `bounds.json`, `gradcheck.json`, `validate.json`, `fit.json`:
JSON objects with the fields shown in the corresponding subcommand's output.
"#
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
schema = 1
[sim]
n = 6
d = 2
lambda = 0.5
dt = 0.001
steps = 5
seed = 3
[teacher]
neurons = [{ u = 1.0, w = [0.5, -0.5] }]
[[regularizers]]
kind = "quartic"
beta = 1.0
"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_toml_str(SMALL, &[]).unwrap();
        assert_eq!(cfg.sim.n_particles, 6);
        assert_eq!(cfg.loss, LossSpec::default());
        assert_eq!(cfg.arm_names(), vec!["arm0-quartic".to_string()]);
    }

    #[test]
    fn overrides_and_schema() {
        let cfg = ExperimentConfig::from_toml_str(
            SMALL,
            &["sim.n=9".into(), "loss.kind=\"huber\"".into(), "loss.l1=2".into()],
        )
        .unwrap();
        assert_eq!(cfg.sim.n_particles, 9);
        assert_eq!(cfg.loss, LossSpec::Huber { l1: 2.0 });
        let bad = SMALL.replace("schema = 1", "schema = 2");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&bad, &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str(SMALL, &["sim.bogus=1".into()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml_str(SMALL, &["novalue".into()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn reference_config_round_trips() {
        let cfg = ExperimentConfig::two_neuron_reference();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, &[]).unwrap();
        let mut resolved = cfg.clone();
        resolved.resolve().unwrap();
        assert_eq!(back, resolved);
        assert_eq!(resolved.sim.steps, 40_000);
        assert_eq!(resolved.sim.lr_decay.every, 20_000);
    }

    #[test]
    fn teacher_dataset_examples() {
        let t = TeacherSpec::two_neuron_plane();
        let a = make_teacher_dataset(&t, 50, 9).unwrap();
        assert_eq!(a, make_teacher_dataset(&t, 50, 9).unwrap());
        assert!(a.labels().iter().all(|y| y.is_finite()));
        a.check_bounded(1.0).unwrap();
        let zero = TeacherSpec {
            neurons: vec![TeacherNeuron {
                u: 0.0,
                w: vec![0.0, 0.0],
            }],
            ..t.clone()
        };
        assert!(make_teacher_dataset(&zero, 10, 1)
            .unwrap()
            .labels()
            .iter()
            .all(|&y| y == 0.0));
        let sum = TeacherSpec {
            scaling: TeacherScaling::Sum,
            ..t.clone()
        };
        let x = [0.3, -0.2];
        assert!((sum.output(&x) - 2.0 * t.output(&x)).abs() < 1e-15);
    }

    #[test]
    fn samplers_respect_radius() {
        let mut rng = substream(1, Domain::Data, 0, 0);
        for s in [
            InputSampler::Sphere { x_max: 0.7 },
            InputSampler::Ball { x_max: 0.7 },
            InputSampler::GaussianClipped { x_max: 0.7 },
        ] {
            for _ in 0..200 {
                let mut v = Vec::new();
                s.draw(&mut rng, 3, &mut v);
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!(n <= 0.7 + 1e-12);
                if matches!(s, InputSampler::Sphere { .. }) {
                    assert!((n - 0.7).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stream_batches_cover_epoch() {
        let t = TeacherSpec::two_neuron_plane();
        let mut s = TeacherStream::new(t.clone(), 4, 10, 4).unwrap();
        assert_eq!(s.steps_per_epoch(), 3);
        let full = teacher_dataset_stream(&t, 10, 4, 1).unwrap();
        assert_eq!(s.batch(3).unwrap().labels(), &full.labels()[0..4]);
        assert_eq!(s.batch(5).unwrap().labels(), &full.labels()[8..10]);
    }

    #[test]
    fn single_arm_zero_steps() {
        let cfg = ExperimentConfig::from_toml_str(SMALL, &["sim.steps=0".into()]).unwrap();
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.arms[0].log.len(), 1);
        assert!(res.files.is_empty());
    }

    #[test]
    fn plot_data_shapes() {
        let mut cfg = ExperimentConfig::from_toml_str(SMALL, &["sim.n=20".into()]).unwrap();
        cfg.regularizers.push(RegularizerSpec::power(1.0, 3.0).unwrap());
        let res = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plot_data(&res.arms, Some(&cfg.teacher), dir.path()).unwrap();
        assert_eq!(files.len(), 7);
        let scatter = fs::read_to_string(dir.path().join("arm0-quartic_neurons.csv")).unwrap();
        let lines: Vec<&str> = scatter.lines().collect();
        assert_eq!(lines.len(), 21);
        assert_eq!(lines[0], "u,w1,w2,uw1,uw2");
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 5));
        assert!(dir.path().join("arm1-power-q3_loss_curve.csv").exists());

        let empty = ArmResult {
            log: TrajectoryLog::default(),
            ..res.arms[0].clone()
        };
        emit_plot_data(&[empty], None, dir.path()).unwrap();
        let curve = fs::read_to_string(dir.path().join("arm0-quartic_loss_curve.csv")).unwrap();
        assert_eq!(curve.trim(), LOSS_CURVE_HEADER);
    }
}

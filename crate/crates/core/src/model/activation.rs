use serde::{Deserialize, Serialize};

use super::particle::dot;
use crate::error::{Error, Result};

/// sup |σ''| for the logistic sigmoid, attained at z = ln(2 ± √3).
pub const SIGMOID_MAX_CURVATURE: f64 = 0.096_225_044_864_937_63;
/// sup |tanh''|, attained at z = atanh(1/√3).
pub const TANH_MAX_CURVATURE: f64 = 0.769_800_358_919_501_4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ActivationKind {
    /// `s(z) = ln(1 + e^{κz}) / κ`.
    SmoothedRelu {
        kappa: f64,
    },
    Sigmoid,
    Tanh,
}

/// A ridge activation `h(w, x) = σ(⟨w, x⟩)` with its growth certificates:
/// `|h| ≤ C1‖w‖ + C2`, `‖∇_w h‖ ≤ C3`, `‖∇²_w h‖_op ≤ C4` whenever `‖x‖ ≤ x_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ActivationConfig", into = "ActivationConfig")]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    pub x_max: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl ActivationSpec {
    /// Activation with the default certificates for `kind` at input bound `x_max`.
    pub fn new(kind: ActivationKind, x_max: f64) -> Result<Self> {
        if !(x_max > 0.0 && x_max.is_finite()) {
            return Err(Error::invalid("x_max must be positive"));
        }
        let (c1, c2, c3, c4) = match kind {
            ActivationKind::SmoothedRelu { kappa } => {
                if !(kappa > 0.0 && kappa.is_finite()) {
                    return Err(Error::invalid("smoothed-relu sharpness must be positive"));
                }
                (
                    x_max,
                    std::f64::consts::LN_2 / kappa,
                    x_max,
                    0.25 * kappa * x_max * x_max,
                )
            }
            ActivationKind::Sigmoid => (0.0, 1.0, 0.25 * x_max, SIGMOID_MAX_CURVATURE * x_max * x_max),
            ActivationKind::Tanh => (0.0, 1.0, x_max, TANH_MAX_CURVATURE * x_max * x_max),
        };
        Ok(ActivationSpec {
            kind,
            x_max,
            c1,
            c2,
            c3,
            c4,
        })
    }

    pub fn smoothed_relu(kappa: f64, x_max: f64) -> Result<Self> {
        Self::new(ActivationKind::SmoothedRelu { kappa }, x_max)
    }

    pub fn sigmoid(x_max: f64) -> Result<Self> {
        Self::new(ActivationKind::Sigmoid, x_max)
    }

    pub fn tanh(x_max: f64) -> Result<Self> {
        Self::new(ActivationKind::Tanh, x_max)
    }

    /// Scalar profile σ and its first two derivatives at pre-activation `z`.
    #[inline]
    pub fn profile(&self, z: f64) -> (f64, f64, f64) {
        match self.kind {
            ActivationKind::SmoothedRelu { kappa } => {
                let t = kappa * z;
                let value = if t > 0.0 {
                    t + (-t).exp().ln_1p()
                } else {
                    t.exp().ln_1p()
                } / kappa;
                let s = logistic(t);
                (value, s, kappa * s * (1.0 - s))
            }
            ActivationKind::Sigmoid => {
                let s = logistic(z);
                (s, s * (1.0 - s), s * (1.0 - s) * (1.0 - 2.0 * s))
            }
            ActivationKind::Tanh => {
                let t = z.tanh();
                let dt = 1.0 - t * t;
                (t, dt, -2.0 * t * dt)
            }
        }
    }

    /// Value and first derivative only.
    #[inline]
    pub fn value_slope(&self, z: f64) -> (f64, f64) {
        match self.kind {
            ActivationKind::SmoothedRelu { kappa } => {
                let t = kappa * z;
                let e = (-t.abs()).exp();
                let value = (t.max(0.0) + e.ln_1p()) / kappa;
                let s = if t >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (value, s)
            }
            _ => {
                let (v, s, _) = self.profile(z);
                (v, s)
            }
        }
    }

    #[inline]
    pub fn value(&self, w: &[f64], x: &[f64]) -> f64 {
        self.profile(dot(w, x)).0
    }

    /// Upper bound on |h| at weight norm `w_norm`.
    pub fn growth_bound(&self, w_norm: f64) -> f64 {
        self.c1 * w_norm + self.c2
    }
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Serialized form: kind parameters, `x_max`, optional certificate overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationConfig {
    #[serde(flatten)]
    pub kind: ActivationKind,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c4: Option<f64>,
}

fn default_x_max() -> f64 {
    1.0
}

impl TryFrom<ActivationConfig> for ActivationSpec {
    type Error = Error;

    fn try_from(c: ActivationConfig) -> Result<Self> {
        let mut spec = ActivationSpec::new(c.kind, c.x_max)?;
        spec.c1 = c.c1.unwrap_or(spec.c1);
        spec.c2 = c.c2.unwrap_or(spec.c2);
        spec.c3 = c.c3.unwrap_or(spec.c3);
        spec.c4 = c.c4.unwrap_or(spec.c4);
        Ok(spec)
    }
}

impl From<ActivationSpec> for ActivationConfig {
    fn from(s: ActivationSpec) -> Self {
        ActivationConfig {
            kind: s.kind,
            x_max: s.x_max,
            c1: Some(s.c1),
            c2: Some(s.c2),
            c3: Some(s.c3),
            c4: Some(s.c4),
        }
    }
}

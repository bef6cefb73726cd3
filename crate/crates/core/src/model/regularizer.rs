use serde::{Deserialize, Serialize};

use super::particle::norm_sq;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegularizerKind {
    /// `(β/q)‖θ‖^q`, `q ≥ 2`.
    Power { beta: f64, q: f64 },
    /// `β‖θ‖⁴`.
    Quartic { beta: f64 },
    /// `(β1/2)‖θ‖² + (β2/3)‖θ‖³`.
    QuadPlusCubic { beta1: f64, beta2: f64 },
}

/// Growth certificates of a regularizer:
///
/// * `⟨θ, ∇r⟩ ≥ m‖θ‖^{2+p} − b`
/// * `(d1‖θ‖ + d2) I ⪯ ∇²r ⪯ (d3‖θ‖^p + d4) I`
/// * `‖∇r‖ ≥ d5‖θ‖² + d6`
/// * `|r| ≤ d7‖θ‖^k + d8`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerCertificates {
    pub m: f64,
    pub b: f64,
    pub p: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub d6: f64,
    pub d7: f64,
    pub d8: f64,
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegularizerConfig", into = "RegularizerConfig")]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    pub certs: RegularizerCertificates,
}

impl RegularizerSpec {
    pub fn new(kind: RegularizerKind) -> Result<Self> {
        let certs = match kind {
            RegularizerKind::Quartic { beta } => {
                positive(beta, "beta")?;
                RegularizerCertificates {
                    m: 4.0 * beta,
                    b: 0.0,
                    p: 2.0,
                    d1: 0.0,
                    d2: 0.0,
                    d3: 12.0 * beta,
                    d4: 0.0,
                    d5: 4.0 * beta,
                    // min over s of 4βs³ − 4βs², at s = 2/3
                    d6: -16.0 * beta / 27.0,
                    d7: beta,
                    d8: 0.0,
                    k: 4.0,
                }
            }
            RegularizerKind::QuadPlusCubic { beta1, beta2 } => {
                positive(beta2, "beta2")?;
                if !(beta1 >= 0.0) {
                    return Err(Error::invalid("beta1 must be nonnegative"));
                }
                RegularizerCertificates {
                    m: beta2,
                    b: 0.0,
                    p: 1.0,
                    d1: beta2,
                    d2: beta1,
                    d3: 2.0 * beta2,
                    d4: beta1,
                    d5: beta2,
                    d6: 0.0,
                    // s² ≤ s³ + 1
                    d7: 0.5 * beta1 + beta2 / 3.0,
                    d8: 0.5 * beta1,
                    k: 3.0,
                }
            }
            RegularizerKind::Power { beta, q } => {
                positive(beta, "beta")?;
                if !(q >= 2.0 && q.is_finite()) {
                    return Err(Error::invalid("power regularizer needs q >= 2"));
                }
                let (d1, d2) = if q == 2.0 {
                    (0.0, beta)
                } else if q == 3.0 {
                    (beta, 0.0)
                } else {
                    (0.0, 0.0)
                };
                let (d5, d6) = if q < 3.0 {
                    (0.0, 0.0)
                } else if q == 3.0 {
                    (beta, 0.0)
                } else {
                    let s = (2.0 / (q - 1.0)).powf(1.0 / (q - 3.0));
                    (beta, beta * (s.powf(q - 1.0) - s * s))
                };
                RegularizerCertificates {
                    m: beta,
                    b: 0.0,
                    p: q - 2.0,
                    d1,
                    d2,
                    d3: beta * (q - 1.0),
                    d4: 0.0,
                    d5,
                    d6,
                    d7: beta / q,
                    d8: 0.0,
                    k: q,
                }
            }
        };
        Ok(RegularizerSpec { kind, certs })
    }

    pub fn quartic(beta: f64) -> Result<Self> {
        Self::new(RegularizerKind::Quartic { beta })
    }

    pub fn quad_plus_cubic(beta1: f64, beta2: f64) -> Result<Self> {
        Self::new(RegularizerKind::QuadPlusCubic { beta1, beta2 })
    }

    pub fn power(beta: f64, q: f64) -> Result<Self> {
        Self::new(RegularizerKind::Power { beta, q })
    }

    /// Radial profile at `s = ‖θ‖`: `(r, a, b)` with `∇r = aθ` and
    /// `∇²r = aI + bθθᵀ`.
    #[inline]
    pub fn radial(&self, s: f64) -> (f64, f64, f64) {
        match self.kind {
            RegularizerKind::Quartic { beta } => {
                let s2 = s * s;
                (beta * s2 * s2, 4.0 * beta * s2, 8.0 * beta)
            }
            RegularizerKind::QuadPlusCubic { beta1, beta2 } => {
                let b = if s > 0.0 { beta2 / s } else { 0.0 };
                (0.5 * beta1 * s * s + beta2 * s * s * s / 3.0, beta1 + beta2 * s, b)
            }
            RegularizerKind::Power { beta, q } => {
                if q == 2.0 {
                    return (0.5 * beta * s * s, beta, 0.0);
                }
                if s == 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let a = beta * s.powf(q - 2.0);
                (a * s * s / q, a, (q - 2.0) * a / (s * s))
            }
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.radial(norm_sq(theta).sqrt()).0
    }

    /// Adds `∇r(θ)` into `out`.
    #[inline]
    pub fn add_grad(&self, theta: &[f64], out: &mut [f64]) {
        let (_, a, _) = self.radial(norm_sq(theta).sqrt());
        for (o, t) in out.iter_mut().zip(theta) {
            *o += a * t;
        }
    }

    /// Eigenvalues of `∇²r` at norm `s`: `a` (multiplicity dim − 1) and `a + b s²`.
    pub fn hessian_eigs(&self, s: f64) -> (f64, f64) {
        let (_, a, b) = self.radial(s);
        (a, a + b * s * s)
    }
}

fn positive(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive")))
    }
}

/// Serialized form; any certificate can be overridden.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularizerConfig {
    #[serde(flatten)]
    pub kind: RegularizerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificates: Option<CertificateOverrides>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CertificateOverrides {
    pub m: Option<f64>,
    pub b: Option<f64>,
    pub p: Option<f64>,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub d3: Option<f64>,
    pub d4: Option<f64>,
    pub d5: Option<f64>,
    pub d6: Option<f64>,
    pub d7: Option<f64>,
    pub d8: Option<f64>,
    pub k: Option<f64>,
}

impl TryFrom<RegularizerConfig> for RegularizerSpec {
    type Error = Error;

    fn try_from(c: RegularizerConfig) -> Result<Self> {
        let mut spec = RegularizerSpec::new(c.kind)?;
        if let Some(o) = c.certificates {
            let cs = &mut spec.certs;
            for (slot, v) in [
                (&mut cs.m, o.m),
                (&mut cs.b, o.b),
                (&mut cs.p, o.p),
                (&mut cs.d1, o.d1),
                (&mut cs.d2, o.d2),
                (&mut cs.d3, o.d3),
                (&mut cs.d4, o.d4),
                (&mut cs.d5, o.d5),
                (&mut cs.d6, o.d6),
                (&mut cs.d7, o.d7),
                (&mut cs.d8, o.d8),
                (&mut cs.k, o.k),
            ] {
                if let Some(v) = v {
                    *slot = v;
                }
            }
        }
        Ok(spec)
    }
}

impl From<RegularizerSpec> for RegularizerConfig {
    fn from(s: RegularizerSpec) -> Self {
        let c = s.certs;
        RegularizerConfig {
            kind: s.kind,
            certificates: Some(CertificateOverrides {
                m: Some(c.m),
                b: Some(c.b),
                p: Some(c.p),
                d1: Some(c.d1),
                d2: Some(c.d2),
                d3: Some(c.d3),
                d4: Some(c.d4),
                d5: Some(c.d5),
                d6: Some(c.d6),
                d7: Some(c.d7),
                d8: Some(c.d8),
                k: Some(c.k),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quartic_gradient_closed_form() {
        let r = RegularizerSpec::quartic(0.7).unwrap();
        let th = [0.3, -1.2, 0.5];
        let s2: f64 = th.iter().map(|v| v * v).sum();
        let mut g = [0.0; 3];
        r.add_grad(&th, &mut g);
        for i in 0..3 {
            assert_relative_eq!(g[i], 4.0 * 0.7 * s2 * th[i], epsilon = 1e-14);
        }
        assert_relative_eq!(r.value(&[2.0, 0.0]), 16.0 * 0.7);
    }

    #[test]
    fn radial_profiles_match_differences() {
        let regs = [
            RegularizerSpec::quartic(1.3).unwrap(),
            RegularizerSpec::quad_plus_cubic(0.5, 2.0).unwrap(),
            RegularizerSpec::power(1.0, 2.0).unwrap(),
            RegularizerSpec::power(0.8, 3.0).unwrap(),
            RegularizerSpec::power(0.8, 5.5).unwrap(),
        ];
        let h = 1e-6;
        for r in regs {
            for &s in &[0.3, 1.0, 2.7] {
                let (_, a, b) = r.radial(s);
                let g = |t: f64| r.radial(t).0;
                let g1 = (g(s + h) - g(s - h)) / (2.0 * h);
                let g2 = (g(s + h) - 2.0 * g(s) + g(s - h)) / (h * h);
                assert_relative_eq!(a * s, g1, max_relative = 1e-7);
                assert_relative_eq!(a + b * s * s, g2, max_relative = 1e-3);
            }
        }
    }

    #[test]
    fn power_q4_gradient_floor() {
        let r = RegularizerSpec::power(1.0, 4.0).unwrap();
        assert_relative_eq!(r.certs.d6, -4.0 / 27.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(RegularizerSpec::quartic(0.0).is_err());
        assert!(RegularizerSpec::power(1.0, 1.5).is_err());
        assert!(RegularizerSpec::quad_plus_cubic(-1.0, 1.0).is_err());
    }

    #[test]
    fn config_overrides() {
        let cfg: RegularizerConfig =
            toml::from_str("kind = \"power\"\nbeta = 1.0\nq = 2.0\n[certificates]\np = 1.0\n").unwrap();
        let spec = RegularizerSpec::try_from(cfg).unwrap();
        assert_eq!(spec.certs.p, 1.0);
        assert_eq!(spec.certs.m, 1.0);
    }
}

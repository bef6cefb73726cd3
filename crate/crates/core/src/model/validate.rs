//! Sampling checks of the growth certificates carried by activation and
//! regularizer specs.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::activation::ActivationSpec;
use super::potential::extreme_eigenvalues;
use super::regularizer::RegularizerSpec;
use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

/// Worst observed ratio of each activation quantity to its certificate.
#[derive(Debug, Clone, Serialize)]
pub struct ActivationReport {
    pub trials: usize,
    pub value_ratio: f64,
    pub slope_ratio: f64,
    pub curvature_ratio: f64,
}

impl ActivationReport {
    pub fn passed(&self) -> bool {
        let ok = |r: f64| r <= 1.0 + RATIO_SLACK;
        ok(self.value_ratio) && ok(self.slope_ratio) && ok(self.curvature_ratio)
    }

    pub fn check(&self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(Error::CertificateViolation(format!(
                "activation ratios |h|: {:.4}, grad: {:.4}, hess: {:.4}",
                self.value_ratio, self.slope_ratio, self.curvature_ratio
            )))
        }
    }
}

/// Rounding allowance when a certificate is attained exactly.
const RATIO_SLACK: f64 = 1e-12;

fn ratio(observed: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        observed / bound
    } else if observed > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Random direction scaled to norm `r`.
fn on_sphere<R: Rng>(rng: &mut R, dim: usize, r: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|a| a * r / n).collect();
        }
    }
}

/// Samples `(w, x)` with `‖w‖ ≤ radius`, `‖x‖ ≤ x_max` and records the worst
/// ratio of `|h|`, `‖∇_w h‖`, `‖∇²_w h‖_op` to their certificates.
///
/// Half of the trials put both vectors on their spheres, aligned or
/// anti-aligned, where ridge activations reach their extremes.
pub fn validate_activation(
    act: &ActivationSpec,
    d: usize,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<ActivationReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if d == 0 || !(radius >= 0.0) {
        return Err(Error::invalid("need d >= 1 and a nonnegative radius"));
    }
    let mut rng = substream(seed, Domain::Validation, 0, 0);
    let mut report = ActivationReport {
        trials,
        value_ratio: 0.0,
        slope_ratio: 0.0,
        curvature_ratio: 0.0,
    };
    for t in 0..trials {
        let (w, x) = if t % 2 == 0 {
            let rw = radius * rng.random::<f64>();
            let rx = act.x_max * rng.random::<f64>();
            (on_sphere(&mut rng, d, rw), on_sphere(&mut rng, d, rx))
        } else {
            let rw = radius * rng.random::<f64>().sqrt();
            let x = on_sphere(&mut rng, d, act.x_max);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let w = x.iter().map(|v| sign * v * rw / act.x_max).collect();
            (w, x)
        };
        let w_norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        let x_norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let z: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        let (h, h1, h2) = act.profile(z);
        report.value_ratio = report.value_ratio.max(ratio(h.abs(), act.growth_bound(w_norm)));
        report.slope_ratio = report.slope_ratio.max(ratio(h1.abs() * x_norm, act.c3));
        report.curvature_ratio = report.curvature_ratio.max(ratio(h2.abs() * x_norm * x_norm, act.c4));
    }
    Ok(report)
}

/// Worst margin (bound minus observed, scaled) and violation count of one inequality.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityCheck {
    pub name: &'static str,
    pub violations: usize,
    pub worst_margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularizerReport {
    pub trials: usize,
    pub checks: Vec<InequalityCheck>,
    /// Parameter-range problems (`m > 0`, `b ≥ 0`, `p ≥ 1`, `k ≥ 3`).
    pub structural: Vec<String>,
}

impl RegularizerReport {
    pub fn passed(&self) -> bool {
        self.structural.is_empty() && self.checks.iter().all(|c| c.violations == 0)
    }

    pub fn check(&self) -> Result<()> {
        if self.passed() {
            return Ok(());
        }
        let mut parts: Vec<String> = self.structural.clone();
        for c in self.checks.iter().filter(|c| c.violations > 0) {
            parts.push(format!(
                "{} violated {} times (worst margin {:.3e})",
                c.name, c.violations, c.worst_margin
            ));
        }
        Err(Error::CertificateViolation(parts.join("; ")))
    }

    pub fn get(&self, name: &str) -> Option<&InequalityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const DISSIPATIVITY: &str = "dissipativity";
pub const HESSIAN_LOWER: &str = "hessian-lower";
pub const HESSIAN_UPPER: &str = "hessian-upper";
pub const GRADIENT_GROWTH: &str = "gradient-growth";
pub const VALUE_GROWTH: &str = "value-growth";

/// Samples `θ ∈ R^dim` with `‖θ‖ ≤ radius` (norm uniform on `[0, radius]`)
/// and checks all four regularizer inequalities; Hessian bounds use the
/// extreme eigenvalues of the assembled matrix.
pub fn validate_regularizer(
    reg: &RegularizerSpec,
    dim: usize,
    trials: usize,
    radius: f64,
    seed: u64,
) -> Result<RegularizerReport> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if dim == 0 || !(radius >= 0.0) {
        return Err(Error::invalid("need dim >= 1 and a nonnegative radius"));
    }
    let c = reg.certs;
    let mut structural = Vec::new();
    if !(c.m > 0.0) {
        structural.push(format!("m = {} must be positive", c.m));
    }
    if !(c.b >= 0.0) {
        structural.push(format!("b = {} must be nonnegative", c.b));
    }
    if !(c.p >= 1.0) {
        structural.push(format!("p = {} must be at least 1", c.p));
    }
    if !(c.k >= 3.0) {
        structural.push(format!("k = {} must be at least 3", c.k));
    }

    let names = [
        DISSIPATIVITY,
        HESSIAN_LOWER,
        HESSIAN_UPPER,
        GRADIENT_GROWTH,
        VALUE_GROWTH,
    ];
    let mut checks: Vec<InequalityCheck> = names
        .iter()
        .map(|&name| InequalityCheck {
            name,
            violations: 0,
            worst_margin: f64::INFINITY,
        })
        .collect();

    let mut rng = substream(seed, Domain::Validation, 1, 0);
    for t in 0..trials {
        // include the origin and the outer sphere
        let s = match t {
            0 => 0.0,
            1 => radius,
            _ => radius * rng.random::<f64>(),
        };
        let theta = on_sphere(&mut rng, dim, s);
        let (r, a, b) = reg.radial(s);
        let grad_norm = a.abs() * s;
        let inner = a * s * s;
        let mut hess = DMatrix::from_diagonal_element(dim, dim, a);
        for i in 0..dim {
            for j in 0..dim {
                hess[(i, j)] += b * theta[i] * theta[j];
            }
        }
        let (lo, hi) = extreme_eigenvalues(&hess);

        let margins = [
            (inner, c.m * s.powf(2.0 + c.p) - c.b),
            (lo, c.d1 * s + c.d2),
            (c.d3 * s.powf(c.p) + c.d4, hi),
            (grad_norm, c.d5 * s * s + c.d6),
            (c.d7 * s.powf(c.k) + c.d8, r.abs()),
        ];
        for (check, (big, small)) in checks.iter_mut().zip(margins) {
            let scale = 1.0 + big.abs().max(small.abs());
            let margin = (big - small) / scale;
            if margin < -1e-10 {
                check.violations += 1;
            }
            check.worst_margin = check.worst_margin.min(margin);
        }
    }
    Ok(RegularizerReport {
        trials,
        checks,
        structural,
    })
}

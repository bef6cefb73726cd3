//! Finite-difference checks of the analytic potential gradient and Hessian.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ActivationSpec, Coupling, Dataset, LossSpec, Model, ParticleEnsemble, RegularizerSpec};
use crate::rng::{substream, Domain};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceCheck {
    pub grad_rel_err: f64,
    pub hess_rel_err: f64,
    pub hess_asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub step: f64,
    pub max_grad_rel_err: f64,
    pub max_hess_rel_err: f64,
    pub max_hess_asymmetry: f64,
    pub worst_grad_instance: usize,
    pub worst_hess_instance: usize,
}

impl GradcheckReport {
    pub fn passed(&self, grad_tol: f64, hess_tol: f64) -> bool {
        self.max_grad_rel_err < grad_tol && self.max_hess_rel_err < hess_tol
    }

    fn absorb(&mut self, i: usize, c: InstanceCheck) {
        if c.grad_rel_err > self.max_grad_rel_err || c.grad_rel_err.is_nan() {
            self.max_grad_rel_err = c.grad_rel_err;
            self.worst_grad_instance = i;
        }
        if c.hess_rel_err > self.max_hess_rel_err || c.hess_rel_err.is_nan() {
            self.max_hess_rel_err = c.hess_rel_err;
            self.worst_hess_instance = i;
        }
        self.max_hess_asymmetry = self.max_hess_asymmetry.max(c.hess_asymmetry);
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
fn rel_err(diff: f64, a: f64, b: f64) -> f64 {
    diff / a.max(b).max(1e-12)
}

/// Compares analytic derivatives at `theta` with central differences of step `h`:
/// the gradient against differences of the value, the Hessian against
/// differences of the gradient. Errors are Euclidean / Frobenius relative.
pub fn check_instance(
    theta: &[f64],
    ensemble: &ParticleEnsemble,
    data: &Dataset,
    model: &Model,
    h: f64,
) -> Result<InstanceCheck> {
    if theta.len() != ensemble.width() {
        return Err(Error::invalid("theta dimension differs from the ensemble"));
    }
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let c = Coupling::new(ensemble, data, model)?;
    let dim = theta.len();
    let g = c.grad(theta);
    let hs = c.hess(theta);
    let mut fd_g = DVector::zeros(dim);
    let mut fd_h = DMatrix::zeros(dim, dim);
    let mut t = theta.to_vec();
    for i in 0..dim {
        t[i] = theta[i] + h;
        let (vp, gp) = (c.value(&t), c.grad(&t));
        t[i] = theta[i] - h;
        let (vm, gm) = (c.value(&t), c.grad(&t));
        t[i] = theta[i];
        fd_g[i] = (vp - vm) / (2.0 * h);
        fd_h.set_column(i, &((gp - gm) / (2.0 * h)));
    }
    // The finite-difference Hessian is only symmetric up to truncation error.
    let fd_h = (&fd_h + fd_h.transpose()) * 0.5;
    let check = InstanceCheck {
        grad_rel_err: rel_err((&g - &fd_g).norm(), g.norm(), fd_g.norm()),
        hess_rel_err: rel_err((&hs - &fd_h).norm(), hs.norm(), fd_h.norm()),
        hess_asymmetry: (&hs - hs.transpose()).amax(),
    };
    if !(check.grad_rel_err.is_finite() && check.hess_rel_err.is_finite()) {
        return Err(Error::numeric("non-finite derivative at a gradcheck instance"));
    }
    Ok(check)
}

fn gauss(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_setup(
    rng: &mut ChaCha8Rng,
    d: usize,
    x_max: f64,
    radius: f64,
) -> Result<(Vec<f64>, ParticleEnsemble, Dataset)> {
    let n = rng.random_range(1..=24);
    let m = rng.random_range(1..=24);
    let ens = ParticleEnsemble::from_coords(d, gauss(rng, n * (d + 1), 1.0))?;
    let mut inputs = Vec::with_capacity(m * d);
    for _ in 0..m {
        let v = gauss(rng, d, 1.0);
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
        let r = x_max * rng.random::<f64>();
        inputs.extend(v.iter().map(|a| a * r / norm));
    }
    let data = Dataset::from_flat(d, inputs, gauss(rng, m, 1.0))?;
    let mut theta = gauss(rng, d + 1, 1.0);
    let norm = theta.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
    // Keep ‖θ‖ ≥ 0.1 so power-law regularizers stay away from their origin kink.
    let r = 0.1 + (radius - 0.1).max(0.0) * rng.random::<f64>();
    theta.iter_mut().for_each(|a| *a *= r / norm);
    Ok((theta, ens, data))
}

/// Checks one model at `instances` random `(θ, ensemble, data)` draws with
/// `‖θ‖ ≤ radius` in dimension `d`.
pub fn gradcheck_model(model: &Model, d: usize, instances: usize, radius: f64, seed: u64) -> Result<GradcheckReport> {
    if instances == 0 || d == 0 {
        return Err(Error::invalid("need at least one instance and d >= 1"));
    }
    let mut report = empty(instances);
    for i in 0..instances {
        let mut rng = substream(seed, Domain::Validation, 1, i as u64);
        let (theta, ens, data) = random_setup(&mut rng, d, model.activation.x_max, radius)?;
        report.absorb(i, check_instance(&theta, &ens, &data, model, FD_STEP)?);
    }
    Ok(report)
}

/// Checks random models as well: activation, loss, regularizer and `d ∈ {1, 2}`
/// vary across instances.
pub fn gradcheck_random(instances: usize, seed: u64) -> Result<GradcheckReport> {
    if instances == 0 {
        return Err(Error::invalid("need at least one instance"));
    }
    let mut report = empty(instances);
    for i in 0..instances {
        let mut rng = substream(seed, Domain::Validation, 2, i as u64);
        let d = 1 + i % 2;
        let x_max = 0.5 + rng.random::<f64>();
        let act = match rng.random_range(0..3) {
            0 => ActivationSpec::smoothed_relu(0.5 + 7.5 * rng.random::<f64>(), x_max)?,
            1 => ActivationSpec::sigmoid(x_max)?,
            _ => ActivationSpec::tanh(x_max)?,
        };
        let l1 = 0.2 + 3.0 * rng.random::<f64>();
        let loss = match rng.random_range(0..3) {
            0 => LossSpec::Square,
            1 => LossSpec::ClippedSquare { l1 },
            _ => LossSpec::Huber { l1 },
        };
        let beta = 0.1 + 2.0 * rng.random::<f64>();
        let reg = match rng.random_range(0..4) {
            0 => RegularizerSpec::power(beta, 2.0)?,
            1 => RegularizerSpec::power(beta, 2.0 + 2.0 * rng.random::<f64>())?,
            2 => RegularizerSpec::quartic(beta)?,
            _ => RegularizerSpec::quad_plus_cubic(beta, 0.1 + 2.0 * rng.random::<f64>())?,
        };
        let model = Model::new(act, loss, reg);
        let (theta, ens, data) = random_setup(&mut rng, d, x_max, 3.0)?;
        report.absorb(i, check_instance(&theta, &ens, &data, &model, FD_STEP)?);
    }
    Ok(report)
}

fn empty(instances: usize) -> GradcheckReport {
    GradcheckReport {
        instances,
        step: FD_STEP,
        max_grad_rel_err: 0.0,
        max_hess_rel_err: 0.0,
        max_hess_asymmetry: 0.0,
        worst_grad_instance: 0,
        worst_hess_instance: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_models_pass() {
        let r = gradcheck_random(40, 5).unwrap();
        assert!(r.passed(1e-6, 1e-5), "{r:?}");
        assert!(r.max_hess_asymmetry < 1e-12);
    }

    #[test]
    fn detects_a_wrong_derivative() {
        // A huge step makes the difference quotient inaccurate for the quartic term.
        let model = Model::new(
            ActivationSpec::smoothed_relu(4.0, 1.0).unwrap(),
            LossSpec::default(),
            RegularizerSpec::quartic(1.0).unwrap(),
        );
        let mut rng = substream(1, Domain::Validation, 9, 0);
        let (theta, ens, data) = random_setup(&mut rng, 2, 1.0, 3.0).unwrap();
        let c = check_instance(&theta, &ens, &data, &model, 0.5).unwrap();
        assert!(c.grad_rel_err > 1e-3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(gradcheck_random(0, 1).is_err());
        let model = Model::new(
            ActivationSpec::smoothed_relu(4.0, 1.0).unwrap(),
            LossSpec::default(),
            RegularizerSpec::quartic(1.0).unwrap(),
        );
        assert!(gradcheck_model(&model, 0, 3, 1.0, 1).is_err());
    }
}

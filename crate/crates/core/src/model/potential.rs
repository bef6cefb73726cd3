use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::activation::ActivationSpec;
use super::loss::LossSpec;
use super::particle::{dot, norm_sq, Dataset, Particle, ParticleEnsemble};
use super::regularizer::RegularizerSpec;
use crate::error::{Error, Result};

/// Activation, loss and regularizer of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub activation: ActivationSpec,
    pub loss: LossSpec,
    pub regularizer: RegularizerSpec,
}

impl Model {
    pub fn new(activation: ActivationSpec, loss: LossSpec, regularizer: RegularizerSpec) -> Self {
        Model {
            activation,
            loss,
            regularizer,
        }
    }
}

/// Mean-field prediction `(1/N) Σ u_i h(w_i, x)`.
pub fn predict(ensemble: &ParticleEnsemble, x: &[f64], act: &ActivationSpec) -> Result<f64> {
    if x.len() != ensemble.d() {
        return Err(Error::invalid(format!(
            "input has dimension {}, ensemble has {}",
            x.len(),
            ensemble.d()
        )));
    }
    if let Some(i) = ensemble.first_non_finite() {
        return Err(Error::numeric(format!("particle {i} is not finite")));
    }
    Ok(predict_unchecked(ensemble, x, act))
}

#[inline]
pub(crate) fn predict_unchecked(ensemble: &ParticleEnsemble, x: &[f64], act: &ActivationSpec) -> f64 {
    let d = ensemble.d();
    let total: f64 = ensemble.rows().map(|r| r[d] * act.profile(dot(&r[..d], x)).0).sum();
    total / ensemble.len() as f64
}

/// The data-dependent part of `U(·, ρ)` frozen at one ensemble: the loss
/// slopes `φ₁′(f(ρ, x_j), y_j)` for every data point.
///
/// `U(θ, ρ) = (1/n) Σ_j φ₁′_j · u · h(w, x_j) + r(θ)`.
#[derive(Debug, Clone)]
pub struct Coupling<'a> {
    data: &'a Dataset,
    model: &'a Model,
    predictions: Vec<f64>,
    slopes: Vec<f64>,
}

impl<'a> Coupling<'a> {
    pub fn new(ensemble: &ParticleEnsemble, data: &'a Dataset, model: &'a Model) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        if data.d() != ensemble.d() {
            return Err(Error::invalid(format!(
                "data dimension {} differs from ensemble dimension {}",
                data.d(),
                ensemble.d()
            )));
        }
        if let Some(i) = ensemble.first_non_finite() {
            return Err(Error::numeric(format!("particle {i} is not finite")));
        }
        let predictions: Vec<f64> = data
            .iter()
            .map(|(x, _)| predict_unchecked(ensemble, x, &model.activation))
            .collect();
        Ok(Self::from_predictions(data, model, predictions))
    }

    /// Coupling from externally computed predictions (used by the grid solver).
    pub fn from_predictions(data: &'a Dataset, model: &'a Model, predictions: Vec<f64>) -> Self {
        let slopes = predictions
            .iter()
            .zip(data.labels())
            .map(|(&f, &y)| model.loss.grad(f, y))
            .collect();
        Coupling {
            data,
            model,
            predictions,
            slopes,
        }
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Mean loss `(1/n) Σ φ(f(ρ, x_j), y_j)`.
    pub fn risk(&self) -> f64 {
        let n = self.data.len() as f64;
        self.predictions
            .iter()
            .zip(self.data.labels())
            .map(|(&f, &y)| self.model.loss.value(f, y))
            .sum::<f64>()
            / n
    }

    /// Network part of `U` at coords `[w.., u]`, without the regularizer.
    pub fn network_value(&self, theta: &[f64]) -> f64 {
        let d = theta.len() - 1;
        let (w, u) = (&theta[..d], theta[d]);
        let act = &self.model.activation;
        let s: f64 = self
            .data
            .iter()
            .zip(&self.slopes)
            .map(|((x, _), &g)| g * act.profile(dot(w, x)).0)
            .sum();
        u * s / self.data.len() as f64
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.network_value(theta) + self.model.regularizer.value(theta)
    }

    /// Writes `∇_θ U` in `(w.., u)` order into `out`.
    #[inline]
    pub fn grad_into(&self, theta: &[f64], out: &mut [f64]) {
        let d = theta.len() - 1;
        let (w, u) = (&theta[..d], theta[d]);
        let act = &self.model.activation;
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut du = 0.0;
        for ((x, _), &g) in self.data.iter().zip(&self.slopes) {
            if g == 0.0 {
                continue;
            }
            let (h, h1) = act.value_slope(dot(w, x));
            du += g * h;
            let c = g * u * h1;
            for (o, xi) in out[..d].iter_mut().zip(x) {
                *o += c * xi;
            }
        }
        let inv_n = 1.0 / self.data.len() as f64;
        out[..d].iter_mut().for_each(|o| *o *= inv_n);
        out[d] = du * inv_n;
        self.model.regularizer.add_grad(theta, out);
    }

    pub fn grad(&self, theta: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(theta.len());
        self.grad_into(theta, out.as_mut_slice());
        out
    }

    /// `∇²_θ U` in `(w.., u)` order.
    pub fn hess(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut h = self.network_hess(theta);
        let s = norm_sq(theta).sqrt();
        let (_, a, b) = self.model.regularizer.radial(s);
        for i in 0..theta.len() {
            h[(i, i)] += a;
            for j in 0..theta.len() {
                h[(i, j)] += b * theta[i] * theta[j];
            }
        }
        h
    }

    /// Hessian of the network term alone.
    pub fn network_hess(&self, theta: &[f64]) -> DMatrix<f64> {
        let k = theta.len();
        let d = k - 1;
        let (w, u) = (&theta[..d], theta[d]);
        let act = &self.model.activation;
        let mut h = DMatrix::zeros(k, k);
        for ((x, _), &g) in self.data.iter().zip(&self.slopes) {
            if g == 0.0 {
                continue;
            }
            let (_, h1, h2) = act.profile(dot(w, x));
            for i in 0..d {
                for j in 0..d {
                    h[(i, j)] += g * u * h2 * x[i] * x[j];
                }
                h[(i, d)] += g * h1 * x[i];
                h[(d, i)] += g * h1 * x[i];
            }
        }
        h / self.data.len() as f64
    }
}

fn check_theta(theta: &Particle, ensemble: &ParticleEnsemble) -> Result<Vec<f64>> {
    if theta.dim() != ensemble.d() {
        return Err(Error::invalid("particle dimension differs from ensemble"));
    }
    if !theta.is_finite() {
        return Err(Error::numeric("particle is not finite"));
    }
    Ok(theta.to_coords())
}

/// `U(θ, ρ̂)` for the empirical measure of `ensemble`.
pub fn potential_value(theta: &Particle, ensemble: &ParticleEnsemble, data: &Dataset, model: &Model) -> Result<f64> {
    let c = check_theta(theta, ensemble)?;
    Ok(Coupling::new(ensemble, data, model)?.value(&c))
}

/// `∇_θ U(θ, ρ̂)`, ordered `(w.., u)`.
pub fn potential_grad(
    theta: &Particle,
    ensemble: &ParticleEnsemble,
    data: &Dataset,
    model: &Model,
) -> Result<DVector<f64>> {
    let c = check_theta(theta, ensemble)?;
    Ok(Coupling::new(ensemble, data, model)?.grad(&c))
}

/// `∇²_θ U(θ, ρ̂)`, ordered `(w.., u)`.
pub fn potential_hess(
    theta: &Particle,
    ensemble: &ParticleEnsemble,
    data: &Dataset,
    model: &Model,
) -> Result<DMatrix<f64>> {
    let c = check_theta(theta, ensemble)?;
    Ok(Coupling::new(ensemble, data, model)?.hess(&c))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigenvalues();
    (eig.min(), eig.max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn relu_model(reg: RegularizerSpec, loss: LossSpec) -> Model {
        Model::new(ActivationSpec::smoothed_relu(4.0, 1.0).unwrap(), loss, reg)
    }

    #[test]
    fn predict_examples() {
        let act = ActivationSpec::smoothed_relu(4.0, 1.0).unwrap();
        let zero = ParticleEnsemble::from_particles(2, &vec![Particle::new(0.0, vec![0.4, 1.0]); 3]).unwrap();
        assert_eq!(predict(&zero, &[0.6, 0.8], &act).unwrap(), 0.0);

        let single = ParticleEnsemble::from_particles(2, &[Particle::new(1.0, vec![0.8, -0.6])]).unwrap();
        assert_relative_eq!(
            predict(&single, &[0.6, 0.8], &act).unwrap(),
            0.25 * 2f64.ln(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            predict(&single, &[0.6, 0.8], &act).unwrap(),
            0.173_286_795_139_986_3,
            epsilon = 1e-12
        );

        let pair = ParticleEnsemble::from_particles(
            2,
            &[Particle::new(1.0, vec![0.3, 0.2]), Particle::new(-1.0, vec![0.3, 0.2])],
        )
        .unwrap();
        assert_eq!(predict(&pair, &[0.5, -0.5], &act).unwrap(), 0.0);
        assert!(predict(&pair, &[0.5], &act).is_err());

        let bad = ParticleEnsemble::from_particles(1, &[Particle::new(f64::NAN, vec![0.0])]).unwrap();
        assert!(matches!(predict(&bad, &[0.5], &act), Err(Error::NumericFault(_))));
    }

    #[test]
    fn value_with_hand_rolled_chain() {
        // one data point, square loss, one particle
        let model = relu_model(RegularizerSpec::quad_plus_cubic(0.5, 0.25).unwrap(), LossSpec::Square);
        let ens = ParticleEnsemble::from_particles(1, &[Particle::new(0.7, vec![1.3])]).unwrap();
        let data = Dataset::new(vec![vec![0.9]], vec![0.2]).unwrap();
        let theta = Particle::new(-0.4, vec![0.5]);

        let softplus = |z: f64| (1.0 + (4.0 * z).exp()).ln() / 4.0;
        let f = 0.7 * softplus(1.3 * 0.9);
        let slope = f - 0.2;
        let s = (0.4f64 * 0.4 + 0.5 * 0.5).sqrt();
        let expected = slope * -0.4 * softplus(0.5 * 0.9) + 0.25 * s * s + 0.25 * s * s * s / 3.0;
        assert_relative_eq!(
            potential_value(&theta, &ens, &data, &model).unwrap(),
            expected,
            epsilon = 1e-14
        );
    }

    #[test]
    fn zero_residual_leaves_regularizer() {
        let model = relu_model(
            RegularizerSpec::quartic(1.0).unwrap(),
            LossSpec::ClippedSquare { l1: 10.0 },
        );
        let ens = ParticleEnsemble::from_particles(1, &[Particle::new(0.9, vec![0.4])]).unwrap();
        let x = vec![0.5];
        let y = predict(&ens, &x, &model.activation).unwrap();
        let data = Dataset::new(vec![x], vec![y]).unwrap();
        let theta = Particle::new(0.3, vec![-0.8]);
        assert_relative_eq!(
            potential_value(&theta, &ens, &data, &model).unwrap(),
            model.regularizer.value(&theta.to_coords())
        );
        let origin = Particle::new(0.0, vec![0.0]);
        assert_eq!(potential_value(&origin, &ens, &data, &model).unwrap(), 0.0);
        assert!(potential_grad(&origin, &ens, &data, &model)
            .unwrap()
            .iter()
            .all(|g| *g == 0.0));
    }

    #[test]
    fn quartic_without_network_term() {
        let model = relu_model(
            RegularizerSpec::quartic(0.8).unwrap(),
            LossSpec::ClippedSquare { l1: 0.0 },
        );
        let ens = ParticleEnsemble::from_particles(2, &[Particle::new(1.0, vec![0.4, 1.0])]).unwrap();
        let data = Dataset::new(vec![vec![0.6, 0.8]], vec![3.0]).unwrap();
        let theta = Particle::new(0.5, vec![-1.0, 0.3]);
        let c = theta.to_coords();
        let s2: f64 = c.iter().map(|v| v * v).sum();

        let g = potential_grad(&theta, &ens, &data, &model).unwrap();
        for i in 0..3 {
            assert_relative_eq!(g[i], 4.0 * 0.8 * s2 * c[i], epsilon = 1e-14);
        }
        let h = potential_hess(&theta, &ens, &data, &model).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(
                    h[(i, j)],
                    4.0 * 0.8 * s2 * id + 8.0 * 0.8 * c[i] * c[j],
                    epsilon = 1e-13
                );
            }
        }
    }

    #[test]
    fn uu_entry_of_network_hessian_vanishes() {
        let model = relu_model(RegularizerSpec::quartic(1.0).unwrap(), LossSpec::Square);
        let ens = ParticleEnsemble::from_particles(2, &[Particle::new(1.0, vec![0.4, 1.0])]).unwrap();
        let data = Dataset::new(vec![vec![0.6, 0.8], vec![-0.1, 0.3]], vec![3.0, -1.0]).unwrap();
        let coupling = Coupling::new(&ens, &data, &model).unwrap();
        let h = coupling.network_hess(&[0.0, 0.0, 2.5]);
        assert_eq!(h[(2, 2)], 0.0);
        assert!(potential_value(
            &Particle::new(0.0, vec![0.0]),
            &ens,
            &Dataset::new(vec![vec![0.1]], vec![0.0]).unwrap(),
            &model
        )
        .is_err());
    }
}

//! Two-layer network in the mean-field parameterization: particles, certified
//! function families and the per-particle potential `U(θ, ρ)`.

pub mod activation;
pub mod loss;
pub mod particle;
pub mod potential;
pub mod regularizer;
pub mod validate;

pub use activation::{ActivationKind, ActivationSpec};
pub use loss::{loss_grad, LossSpec};
pub use particle::{Dataset, Particle, ParticleEnsemble};
pub use potential::{extreme_eigenvalues, potential_grad, potential_hess, potential_value, predict, Coupling, Model};
pub use regularizer::{RegularizerCertificates, RegularizerKind, RegularizerSpec};
pub use validate::{validate_activation, validate_regularizer, ActivationReport, RegularizerReport};

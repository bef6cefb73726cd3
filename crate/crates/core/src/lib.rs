//! Mean-field Langevin training of two-layer neural networks.
//!
//! Particles `θ = (w, u)` follow `dθ = −∇U(θ, ρ) dt + √(2λ) dB`. The crate
//! simulates the particle system, tracks the free energy, solves the
//! one-dimensional Fokker–Planck equation on a grid as an oracle, and
//! evaluates two computable log-Sobolev bounds on the convergence rate.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod fp;
pub mod gradcheck;
pub mod lsi;
pub mod model;
pub mod objective;
pub mod rng;

pub use dynamics::{init_ensemble, simulate, simulate_from, SimConfig, SimResult, TrajectoryLog};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, TeacherSpec};
pub use fp::{gibbs_fixed_point, GridDensity, GridSpec};
pub use lsi::{LsiBoundReport, Magnitude};
pub use model::{ActivationSpec, Dataset, LossSpec, Model, Particle, ParticleEnsemble, RegularizerSpec};
pub use objective::{free_energy, ObjectiveReport, RateFit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A weighted neuron `θ = (u, w)`: output weight `u` and position `w ∈ R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub u: f64,
    pub w: Vec<f64>,
}

impl Particle {
    pub fn new(u: f64, w: Vec<f64>) -> Self {
        Particle { u, w }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Coordinates in the crate's internal order `[w_0, .., w_{d-1}, u]`.
    pub fn to_coords(&self) -> Vec<f64> {
        let mut c = self.w.clone();
        c.push(self.u);
        c
    }

    pub fn from_coords(coords: &[f64]) -> Self {
        let (w, u) = coords.split_at(coords.len() - 1);
        Particle { u: u[0], w: w.to_vec() }
    }

    pub fn norm(&self) -> f64 {
        (self.u * self.u + self.w.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.w.iter().all(|v| v.is_finite())
    }
}

/// The empirical measure `(1/N) Σ δ_{θ_i}` of `N` particles.
///
/// Rows are stored contiguously as `[w_0, .., w_{d-1}, u]`; every gradient and
/// Hessian in the crate uses this `(w-block, u)` ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    d: usize,
    coords: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn from_particles(d: usize, particles: &[Particle]) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::invalid("ensemble needs at least one particle"));
        }
        let mut coords = Vec::with_capacity(particles.len() * (d + 1));
        for (i, p) in particles.iter().enumerate() {
            if p.dim() != d {
                return Err(Error::invalid(format!(
                    "particle {i} has dimension {}, expected {d}",
                    p.dim()
                )));
            }
            coords.extend_from_slice(&p.w);
            coords.push(p.u);
        }
        Self::from_coords(d, coords)
    }

    /// Builds an ensemble from flat `[w.., u]` rows.
    pub fn from_coords(d: usize, coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || !coords.len().is_multiple_of(d + 1) {
            return Err(Error::invalid(format!(
                "coordinate buffer of length {} is not a positive multiple of {}",
                coords.len(),
                d + 1
            )));
        }
        Ok(ParticleEnsemble { d, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / (self.d + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Row width `d + 1`.
    pub fn width(&self) -> usize {
        self.d + 1
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.width();
        &self.coords[i * k..(i + 1) * k]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let k = self.width();
        &mut self.coords[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.width())
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }

    pub fn particle(&self, i: usize) -> Particle {
        Particle::from_coords(self.row(i))
    }

    pub fn particles(&self) -> Vec<Particle> {
        self.rows().map(Particle::from_coords).collect()
    }

    /// Output weight of row `i`.
    pub fn u(&self, i: usize) -> f64 {
        self.coords[i * self.width() + self.d]
    }

    /// Index of the first particle with a non-finite coordinate.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.rows().position(|r| r.iter().any(|v| !v.is_finite()))
    }

    /// Rows as `[u, w..]`, the external (snapshot) layout.
    pub fn to_uw_rows(&self) -> Vec<Vec<f64>> {
        self.rows()
            .map(|r| {
                let mut out = Vec::with_capacity(r.len());
                out.push(r[self.d]);
                out.extend_from_slice(&r[..self.d]);
                out
            })
            .collect()
    }

    pub fn from_uw_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("ensemble needs at least one particle"))?;
        if first.len() < 2 {
            return Err(Error::invalid("rows need a u entry and at least one w entry"));
        }
        let d = first.len() - 1;
        let mut particles = Vec::with_capacity(rows.len());
        for r in rows {
            if r.len() != d + 1 {
                return Err(Error::invalid("ragged snapshot rows"));
            }
            particles.push(Particle::new(r[0], r[1..].to_vec()));
        }
        Self::from_particles(d, &particles)
    }
}

/// Feature-label pairs; features stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    inputs: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("dataset must be non-empty"));
        }
        if inputs.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let d = inputs[0].len();
        if d == 0 || inputs.iter().any(|x| x.len() != d) {
            return Err(Error::invalid("inputs must share a positive dimension"));
        }
        Ok(Dataset {
            d,
            inputs: inputs.concat(),
            labels,
        })
    }

    pub fn from_flat(d: usize, inputs: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if labels.is_empty() || d == 0 || inputs.len() != d * labels.len() {
            return Err(Error::invalid("flat inputs do not match labels"));
        }
        Ok(Dataset { d, inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn x(&self, j: usize) -> &[f64] {
        &self.inputs[j * self.d..(j + 1) * self.d]
    }

    pub fn y(&self, j: usize) -> f64 {
        self.labels[j]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.inputs.chunks_exact(self.d).zip(self.labels.iter().copied())
    }

    /// Checks every input lies in the ball of radius `x_max`.
    pub fn check_bounded(&self, x_max: f64) -> Result<()> {
        for (j, (x, y)) in self.iter().enumerate() {
            let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !n.is_finite() || !y.is_finite() {
                return Err(Error::numeric(format!("data point {j} is not finite")));
            }
            if n > x_max * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "data point {j} has norm {n} above x_max = {x_max}"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

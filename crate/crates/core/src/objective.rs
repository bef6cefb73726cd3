//! Free-energy estimation from particles and exponential rate fitting.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::dynamics::TrajectoryLog;
use crate::error::{Error, Result};
use crate::model::{ActivationSpec, Coupling, Dataset, LossSpec, Model, ParticleEnsemble, RegularizerSpec};
use crate::rng::{substream, Domain};

/// Default neighbour rank of the entropy estimator.
pub const DEFAULT_K_NN: usize = 3;

/// The three terms of the free energy and their sum
/// `Q = risk + reg_mean − λ·entropy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub risk: f64,
    pub reg_mean: f64,
    /// Differential entropy estimate `H = −∫ρ log ρ`.
    pub entropy: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub k_nn: usize,
}

impl ObjectiveReport {
    /// Risk plus regularizer, without the entropy term.
    pub fn regularized_risk(&self) -> f64 {
        self.risk + self.reg_mean
    }
}

/// `(1/n) Σ φ(f(ρ̂, x_j), y_j)`.
pub fn empirical_risk(
    ensemble: &ParticleEnsemble,
    data: &Dataset,
    act: &ActivationSpec,
    loss: &LossSpec,
) -> Result<f64> {
    // the regularizer is irrelevant to the risk; any valid one will do
    let model = Model::new(*act, *loss, RegularizerSpec::quartic(1.0)?);
    Ok(Coupling::new(ensemble, data, &model)?.risk())
}

pub fn regularizer_mean(ensemble: &ParticleEnsemble, reg: &RegularizerSpec) -> f64 {
    ensemble.rows().map(|r| reg.value(r)).sum::<f64>() / ensemble.len() as f64
}

/// Kozachenko–Leonenko entropy of the ensemble viewed as points in `R^{d+1}`.
pub fn entropy_knn(ensemble: &ParticleEnsemble, k: usize) -> Result<f64> {
    entropy_knn_points(ensemble.coords(), ensemble.width(), k)
}

/// Kozachenko–Leonenko estimate
/// `Ĥ = ψ(N) − ψ(k) + log V_D + (D/N) Σ log ε_i`
/// for `N` points of dimension `D` stored row-major, `ε_i` the distance to
/// the `k`-th nearest neighbour and `V_D` the unit-ball volume.
///
/// If any point has a zero `k`-NN distance the cloud is jittered by a relative
/// `1e-12` (deterministically) and the distances are recomputed.
pub fn entropy_knn_points(points: &[f64], dim: usize, k: usize) -> Result<f64> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::invalid("point buffer does not match dimension"));
    }
    let n = points.len() / dim;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if n <= k {
        return Err(Error::invalid(format!("need more than k = {k} points, got {n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite point"));
    }
    let mut dist = knn_distances(points, dim, k);
    if dist.contains(&0.0) {
        let scale = points.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut rng = substream(0, Domain::Jitter, 0, 0);
        let jittered: Vec<f64> = points
            .iter()
            .map(|v| v + 1e-12 * scale * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        dist = knn_distances(&jittered, dim, k);
        if dist.contains(&0.0) {
            return Err(Error::numeric("zero nearest-neighbour distance after jitter"));
        }
    }
    let dd = dim as f64;
    let log_unit_ball = 0.5 * dd * std::f64::consts::PI.ln() - ln_gamma(0.5 * dd + 1.0);
    let mean_log: f64 = dist.iter().map(|e| e.ln()).sum::<f64>() / n as f64;
    Ok(digamma(n as f64) - digamma(k as f64) + log_unit_ball + dd * mean_log)
}

/// Distance from every point to its `k`-th nearest neighbour.
///
/// Points are swept in order of their first coordinate; the search around
/// each point stops once the gap in that coordinate exceeds the current
/// `k`-th best distance. Ties compare equal, so the result does not depend on
/// the visiting order.
fn knn_distances(points: &[f64], dim: usize, k: usize) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| row(a)[0].total_cmp(&row(b)[0]).then(a.cmp(&b)));
    let keys: Vec<f64> = order.iter().map(|&i| row(i)[0]).collect();

    let mut out = vec![0.0; n];
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for (pos, &i) in order.iter().enumerate() {
        let p = row(i);
        best.clear();
        let consider = |j: usize, best: &mut Vec<f64>| {
            let q = row(j);
            let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.len() < k {
                let at = best.partition_point(|&x| x <= d2);
                best.insert(at, d2);
            } else if d2 < best[k - 1] {
                best.pop();
                let at = best.partition_point(|&x| x <= d2);
                best.insert(at, d2);
            }
        };
        let (mut lo, mut hi) = (pos, pos + 1);
        loop {
            let bound = if best.len() == k { best[k - 1] } else { f64::INFINITY };
            let gap_lo = if lo > 0 {
                keys[pos] - keys[lo - 1]
            } else {
                f64::INFINITY
            };
            let gap_hi = if hi < n { keys[hi] - keys[pos] } else { f64::INFINITY };
            if gap_lo.min(gap_hi).powi(2) > bound || (lo == 0 && hi == n) {
                break;
            }
            if gap_lo <= gap_hi {
                lo -= 1;
                consider(order[lo], &mut best);
            } else {
                consider(order[hi], &mut best);
                hi += 1;
            }
        }
        out[i] = best[k - 1].sqrt();
    }
    out
}

/// Free energy of the empirical measure with a `k`-NN entropy estimate.
///
/// At `λ = 0` the entropy is still reported when it can be estimated, but `Q`
/// is exactly `risk + reg_mean`.
pub fn free_energy(
    ensemble: &ParticleEnsemble,
    data: &Dataset,
    model: &Model,
    lambda: f64,
    k: usize,
) -> Result<ObjectiveReport> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("temperature must be nonnegative"));
    }
    let risk = Coupling::new(ensemble, data, model)?.risk();
    let reg_mean = regularizer_mean(ensemble, &model.regularizer);
    if lambda == 0.0 {
        let entropy = if ensemble.len() > k && k > 0 {
            entropy_knn(ensemble, k)?
        } else {
            f64::NAN
        };
        return Ok(ObjectiveReport {
            risk,
            reg_mean,
            entropy,
            q: risk + reg_mean,
            k_nn: k,
        });
    }
    let entropy = entropy_knn(ensemble, k)?;
    Ok(ObjectiveReport {
        risk,
        reg_mean,
        entropy,
        q: risk + reg_mean - lambda * entropy,
        k_nn: k,
    })
}

/// Least-squares fit of `log(Q(t) − Q*)` against `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Decay exponent (negated slope).
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: [f64; 2],
    #[serde(rename = "Q_star")]
    pub q_star: f64,
    /// Number of samples inside the window.
    pub points: usize,
}

/// Fits the free-energy column of a trajectory.
pub fn fit_decay_rate(traj: &TrajectoryLog, q_star: f64, window: [f64; 2]) -> Result<RateFit> {
    fit_decay_rate_series(&traj.times, &traj.q, q_star, window)
}

pub fn fit_decay_rate_series(times: &[f64], values: &[f64], q_star: f64, window: [f64; 2]) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::invalid("times and values differ in length"));
    }
    let [lo, hi] = window;
    if !(lo < hi) {
        return Err(Error::invalid("empty fit window"));
    }
    let (t_min, t_max) = match (times.first(), times.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::invalid("empty trajectory")),
    };
    if lo < t_min || hi > t_max {
        return Err(Error::invalid(format!(
            "window [{lo}, {hi}] outside trajectory [{t_min}, {t_max}]"
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &q) in times.iter().zip(values) {
        if t < lo || t > hi {
            continue;
        }
        if !(q > q_star) {
            return Err(Error::invalid(format!(
                "Q({t}) = {q} is not above Q* = {q_star}; lower Q* or narrow the window"
            )));
        }
        xs.push(t);
        ys.push((q - q_star).ln());
    }
    if xs.len() < 2 {
        return Err(Error::invalid("fewer than two samples in the fit window"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        rate: -slope,
        intercept,
        r_squared,
        window,
        q_star,
        points: xs.len(),
    })
}

/// Trailing mean of the last 5% of the free-energy column, a stand-in for
/// `Q*` when no grid oracle is available.
pub fn q_star_proxy(traj: &TrajectoryLog) -> Result<f64> {
    let n = traj.q.len();
    if n == 0 {
        return Err(Error::invalid("empty trajectory"));
    }
    let tail = (n / 20).max(1);
    Ok(traj.q[n - tail..].iter().sum::<f64>() / tail as f64)
}

/// Window `[0.1 T, 0.6 T]` relative to the trajectory span.
pub fn default_window(times: &[f64]) -> Result<[f64; 2]> {
    match (times.first(), times.last()) {
        (Some(&a), Some(&b)) if b > a => Ok([a + 0.1 * (b - a), a + 0.6 * (b - a)]),
        _ => Err(Error::invalid("trajectory too short for a default window")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Particle;
    use approx::assert_relative_eq;

    fn brute_knn(points: &[f64], dim: usize, k: usize) -> Vec<f64> {
        let n = points.len() / dim;
        (0..n)
            .map(|i| {
                let mut d: Vec<f64> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        (0..dim)
                            .map(|c| (points[i * dim + c] - points[j * dim + c]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                d.sort_by(f64::total_cmp);
                d[k - 1]
            })
            .collect()
    }

    #[test]
    fn sweep_matches_brute_force() {
        let mut rng = substream(11, Domain::Sampling, 0, 0);
        let pts: Vec<f64> = (0..600).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect();
        for k in [1, 3, 5] {
            let fast = knn_distances(&pts, 3, k);
            let slow = brute_knn(&pts, 3, k);
            for (a, b) in fast.iter().zip(&slow) {
                assert_relative_eq!(*a, *b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn entropy_rejects_small_samples() {
        assert!(matches!(
            entropy_knn_points(&[0.0, 1.0, 2.0], 1, 3),
            Err(Error::InvalidArgument(_))
        ));
        assert!(entropy_knn_points(&[0.0, 1.0, 2.0], 1, 0).is_err());
    }

    #[test]
    fn duplicates_are_jittered() {
        let pts = [0.0, 0.0, 0.0, 1.0, 2.0, 3.5];
        let h = entropy_knn_points(&pts, 1, 1).unwrap();
        assert!(h.is_finite());
    }

    #[test]
    fn risk_and_regularizer_examples() {
        let act = ActivationSpec::smoothed_relu(4.0, 1.0).unwrap();
        let ens = ParticleEnsemble::from_particles(1, &vec![Particle::new(0.0, vec![0.3]); 4]).unwrap();
        let data = Dataset::new(vec![vec![0.1], vec![-0.5], vec![0.9]], vec![1.0, -2.0, 0.5]).unwrap();
        let risk = empirical_risk(&ens, &data, &act, &LossSpec::Square).unwrap();
        assert_relative_eq!(risk, (1.0 + 4.0 + 0.25) / 6.0, epsilon = 1e-15);

        let quartic = RegularizerSpec::quartic(1.0).unwrap();
        let one = ParticleEnsemble::from_particles(1, &[Particle::new(2.0, vec![0.0])]).unwrap();
        assert_eq!(regularizer_mean(&one, &quartic), 16.0);
        let origin = ParticleEnsemble::from_particles(2, &vec![Particle::new(0.0, vec![0.0, 0.0]); 3]).unwrap();
        assert_eq!(regularizer_mean(&origin, &quartic), 0.0);
    }

    #[test]
    fn exact_exponential_fit() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.05).collect();
        let q: Vec<f64> = times.iter().map(|t| 0.7 + (-3.0 * t).exp()).collect();
        let fit = fit_decay_rate_series(&times, &q, 0.7, [0.0, 2.0]).unwrap();
        assert_relative_eq!(fit.rate, 3.0, epsilon = 1e-9);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert!(fit_decay_rate_series(&times, &q, 0.7, [1.0, 5.0]).is_err());
        assert!(fit_decay_rate_series(&times, &q, 1.0, [0.0, 2.0]).is_err());
    }
}

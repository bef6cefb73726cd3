use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss `φ(ŷ, y)` with its derivative in the first argument.
///
/// `clipped-square` and `huber` are the same convex function (quadratic for
/// residuals up to `l1`, linear beyond), so `φ₁′` is the residual clamped to
/// `[-l1, l1]` and the risk stays the exact antiderivative of the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossSpec {
    /// `½(ŷ - y)²`. Its gradient is unbounded, so it does not satisfy the
    /// bounded-gradient assumption behind the rate bounds.
    Square,
    ClippedSquare {
        l1: f64,
    },
    Huber {
        l1: f64,
    },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::ClippedSquare { l1: 10.0 }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Square => Ok(()),
            LossSpec::ClippedSquare { l1 } | LossSpec::Huber { l1 } => {
                if l1 >= 0.0 && l1.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("loss gradient bound must be finite and nonnegative"))
                }
            }
        }
    }

    #[inline]
    pub fn value(&self, yhat: f64, y: f64) -> f64 {
        let r = yhat - y;
        match *self {
            LossSpec::Square => 0.5 * r * r,
            LossSpec::ClippedSquare { l1 } | LossSpec::Huber { l1 } => {
                if r.abs() <= l1 {
                    0.5 * r * r
                } else {
                    l1 * (r.abs() - 0.5 * l1)
                }
            }
        }
    }

    /// `φ₁′(ŷ, y)`.
    #[inline]
    pub fn grad(&self, yhat: f64, y: f64) -> f64 {
        let r = yhat - y;
        match *self {
            LossSpec::Square => r,
            LossSpec::ClippedSquare { l1 } | LossSpec::Huber { l1 } => r.clamp(-l1, l1),
        }
    }

    /// Bound on `|φ₁′|`; infinite for the plain square loss.
    pub fn l1(&self) -> f64 {
        match *self {
            LossSpec::Square => f64::INFINITY,
            LossSpec::ClippedSquare { l1 } | LossSpec::Huber { l1 } => l1,
        }
    }

    /// Lipschitz constant of `φ₁′` in its first argument.
    pub fn l2(&self) -> f64 {
        1.0
    }

    /// Lower bound of `φ`.
    pub fn lower_bound(&self) -> f64 {
        0.0
    }

    pub fn assumption_violating(&self) -> bool {
        matches!(self, LossSpec::Square)
    }
}

/// `φ₁′` with finiteness checks.
pub fn loss_grad(yhat: f64, y: f64, loss: &LossSpec) -> Result<f64> {
    if !yhat.is_finite() || !y.is_finite() {
        return Err(Error::numeric("non-finite loss argument"));
    }
    Ok(loss.grad(yhat, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_examples() {
        assert_eq!(loss_grad(1.5, 1.5, &LossSpec::Square).unwrap(), 0.0);
        assert_eq!(
            loss_grad(101.0, 1.0, &LossSpec::ClippedSquare { l1: 10.0 }).unwrap(),
            10.0
        );
        assert_eq!(loss_grad(1.5, 1.0, &LossSpec::Huber { l1: 1.0 }).unwrap(), 0.5);
        assert!(loss_grad(f64::NAN, 1.0, &LossSpec::Square).is_err());
        assert!(LossSpec::Square.assumption_violating());
        assert!(LossSpec::Huber { l1: -1.0 }.validate().is_err());
    }

    #[test]
    fn gradient_is_derivative_of_value() {
        let losses = [
            LossSpec::Square,
            LossSpec::ClippedSquare { l1: 0.7 },
            LossSpec::Huber { l1: 2.0 },
        ];
        for loss in losses {
            for &r in &[-3.1, -0.69, -0.2, 0.0, 0.4, 1.3, 5.0] {
                let h = 1e-6;
                let fd = (loss.value(r + h, 0.0) - loss.value(r - h, 0.0)) / (2.0 * h);
                assert!((fd - loss.grad(r, 0.0)).abs() < 1e-6, "{loss:?} at {r}");
            }
        }
    }
}

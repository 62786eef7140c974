//! Finite state spaces and probability densities on them.

use crate::stats::compensated_sum;
use crate::{tol, Error, Result};
use serde::Serialize;

/// A finite state space, optionally with human-readable state labels.
#[derive(Debug, Clone, Serialize)]
pub struct StateSpace {
    size: usize,
    labels: Option<Vec<String>>,
}

impl StateSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidParameter("state space must be nonempty".into()));
        }
        Ok(StateSpace { size, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let size = labels.len();
        if size == 0 {
            return Err(Error::InvalidParameter("state space must be nonempty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::InvalidParameter(format!("duplicate state label {l:?}")));
            }
        }
        Ok(StateSpace {
            size,
            labels: Some(labels),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels.as_ref().map(|l| l[i].as_str())
    }
}

/// A probability density on a finite state space (weights sum to one).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteDensity(Vec<f64>);

impl DiscreteDensity {
    /// Wraps already-normalized weights; rejects negatives, a sum off by more
    /// than [`tol::ROW_SUM`], and empty support.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (i, &w) in weights.iter().enumerate() {
            if !(w >= 0.0) {
                return Err(Error::NegativeEntry {
                    row: 0,
                    col: i,
                    value: w,
                });
            }
        }
        let sum = compensated_sum(weights.iter().copied());
        if (sum - 1.0).abs() > tol::ROW_SUM {
            return Err(Error::NotNormalized { sum });
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::EmptySupport);
        }
        Ok(DiscreteDensity(weights))
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        for (i, &w) in weights.iter().enumerate() {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::NegativeEntry {
                    row: 0,
                    col: i,
                    value: w,
                });
            }
        }
        let sum = compensated_sum(weights.iter().copied());
        if sum <= 0.0 {
            return Err(Error::EmptySupport);
        }
        for w in &mut weights {
            *w /= sum;
        }
        Ok(DiscreteDensity(weights))
    }

    pub fn uniform(n: usize) -> Self {
        DiscreteDensity(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut w = vec![0.0; n];
        w[at] = 1.0;
        DiscreteDensity(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&w| w > 0.0)
    }

    /// Mean of `f` under this density.
    pub fn mean(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(self.0.iter().zip(f).map(|(w, x)| w * x).sum())
    }
}

/// Total variation distance between two densities on the same space.
pub fn tv_distance(a: &DiscreteDensity, b: &DiscreteDensity) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(0.5 * a.weights().iter().zip(b.weights()).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

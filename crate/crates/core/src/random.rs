//! Randomized instance generators for the verification suites and tests.

use crate::density::DiscreteDensity;
use crate::kernel::{add_holding, ExactKernel, Partition};
use rand::Rng;

/// A density with all weights bounded away from zero.
pub fn random_density<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DiscreteDensity {
    let w: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    DiscreteDensity::from_weights(w).unwrap()
}

/// A pi-reversible kernel built from a random symmetric flow matrix
/// F(x,y) = F(y,x) >= 0 scaled so that every row satisfies
/// sum_y F(x,y) <= pi(x); then P(x,y) = F(x,y)/pi(x) off the diagonal and the
/// diagonal absorbs the rest. Detailed balance holds by construction.
pub fn random_reversible<R: Rng + ?Sized>(pi: &DiscreteDensity, rng: &mut R) -> ExactKernel {
    let n = pi.len();
    let mut flow = vec![0.0; n * n];
    for x in 0..n {
        for y in (x + 1)..n {
            let f = if rng.random::<f64>() < 0.25 {
                0.0 // keep some structural zeros around
            } else {
                rng.random::<f64>()
            };
            flow[x * n + y] = f;
            flow[y * n + x] = f;
        }
    }
    let mut scale = f64::INFINITY;
    for x in 0..n {
        let row_sum: f64 = flow[x * n..(x + 1) * n].iter().sum();
        if row_sum > 0.0 {
            scale = scale.min(pi.get(x) / row_sum);
        }
    }
    if !scale.is_finite() {
        scale = 0.0;
    }
    let activity = 0.35 + 0.6 * rng.random::<f64>();
    let mut matrix = vec![0.0; n * n];
    for x in 0..n {
        let mut moved = 0.0;
        for y in 0..n {
            if y == x {
                continue;
            }
            let p = flow[x * n + y] * scale * activity / pi.get(x);
            matrix[x * n + y] = p;
            moved += p;
        }
        matrix[x * n + x] = (1.0 - moved).max(0.0);
    }
    ExactKernel::new_reversible(matrix, pi.clone()).unwrap()
}

/// As [`random_reversible`] but with a 1/2 holding probability, which makes
/// the kernel nonnegative definite.
pub fn random_reversible_nonneg<R: Rng + ?Sized>(pi: &DiscreteDensity, rng: &mut R) -> ExactKernel {
    add_holding(&random_reversible(pi, rng), 0.5).unwrap()
}

/// A reversible kernel whose support is the complete graph (every
/// off-diagonal entry strictly positive); comparison paths always exist.
pub fn random_reversible_full_support<R: Rng + ?Sized>(
    pi: &DiscreteDensity,
    rng: &mut R,
) -> ExactKernel {
    let n = pi.len();
    let mut flow = vec![0.0; n * n];
    for x in 0..n {
        for y in (x + 1)..n {
            let f = 0.05 + rng.random::<f64>();
            flow[x * n + y] = f;
            flow[y * n + x] = f;
        }
    }
    let mut scale = f64::INFINITY;
    for x in 0..n {
        let row_sum: f64 = flow[x * n..(x + 1) * n].iter().sum();
        scale = scale.min(pi.get(x) / row_sum);
    }
    let activity = 0.35 + 0.6 * rng.random::<f64>();
    let mut matrix = vec![0.0; n * n];
    for x in 0..n {
        let mut moved = 0.0;
        for y in 0..n {
            if y == x {
                continue;
            }
            let p = flow[x * n + y] * scale * activity / pi.get(x);
            matrix[x * n + y] = p;
            moved += p;
        }
        matrix[x * n + x] = (1.0 - moved).max(0.0);
    }
    ExactKernel::new_reversible(matrix, pi.clone()).unwrap()
}

/// A partition of n states into j nonempty blocks.
pub fn random_partition<R: Rng + ?Sized>(n: usize, j: usize, rng: &mut R) -> Partition {
    assert!(j <= n);
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..j)).collect();
    // force every block nonempty on distinct states
    let mut states: Vec<usize> = (0..n).collect();
    for b in 0..j {
        let pick = rng.random_range(0..states.len());
        labels[states.swap_remove(pick)] = b;
    }
    Partition::new(labels).unwrap()
}

/// Positive weights summing to one.
pub fn random_weights<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

//! Algebra of finite reversible Markov kernels.
//!
//! Kernels are dense row-stochastic matrices carrying their stationary
//! density explicitly; carrying pi avoids recovering it from an
//! eigenvector (sign and normalization ambiguity) and makes detailed-balance
//! checks exact against the intended density. The spectral gap is
//! 1 - lambda_2 with lambda_2 the second-largest *signed* eigenvalue of the
//! pi-symmetrized matrix; negative eigenvalues do not cap the gap (the chains
//! built here get holding probabilities, so 1 - lambda_2 governs convergence).

use crate::density::DiscreteDensity;
use crate::stats::{compensated_sum, sorted_sum};
use crate::{tol, Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

/// A labeling of states into blocks `0..n_blocks`, every block nonempty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    block_of: Vec<usize>,
    n_blocks: usize,
}

impl Partition {
    pub fn new(block_of: Vec<usize>) -> Result<Self> {
        if block_of.is_empty() {
            return Err(Error::EmptySubset);
        }
        let n_blocks = block_of.iter().copied().max().unwrap() + 1;
        let mut seen = vec![false; n_blocks];
        for &b in &block_of {
            seen[b] = true;
        }
        if let Some(block) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyBlock { block });
        }
        Ok(Partition { block_of, n_blocks })
    }

    pub fn single_block(n: usize) -> Self {
        Partition {
            block_of: vec![0; n],
            n_blocks: 1,
        }
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            block_of: (0..n).collect(),
            n_blocks: n,
        }
    }

    pub fn len(&self) -> usize {
        self.block_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_of.is_empty()
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn block_of(&self, state: usize) -> usize {
        self.block_of[state]
    }

    pub fn labels(&self) -> &[usize] {
        &self.block_of
    }

    pub fn block_indices(&self, block: usize) -> Vec<usize> {
        (0..self.block_of.len()).filter(|&x| self.block_of[x] == block).collect()
    }

    /// Block masses under `pi`, each a compensated sum over the block's
    /// weights in decreasing order, normalized by their total. The sorted
    /// summation makes masses of symmetric blocks bitwise equal, which the
    /// symmetric-model identities (gamma exactly one) rely on.
    pub fn masses(&self, pi: &DiscreteDensity) -> Result<Vec<f64>> {
        if pi.len() != self.block_of.len() {
            return Err(Error::DimensionMismatch {
                expected: self.block_of.len(),
                got: pi.len(),
            });
        }
        let mut per_block: Vec<Vec<f64>> = vec![Vec::new(); self.n_blocks];
        for (x, &b) in self.block_of.iter().enumerate() {
            per_block[b].push(pi.get(x));
        }
        let sums: Vec<f64> = per_block.iter().map(|v| sorted_sum(v)).collect();
        let total = sorted_sum(&sums);
        if total <= 0.0 {
            return Err(Error::EmptySupport);
        }
        Ok(sums.into_iter().map(|s| s / total).collect())
    }
}

/// A row-stochastic matrix without an attached stationary density
/// (proposal kernels).
#[derive(Debug, Clone, Serialize)]
pub struct RowStochastic {
    n: usize,
    data: Vec<f64>,
}

impl RowStochastic {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        validate_stochastic(n, &data)?;
        Ok(RowStochastic { n, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        RowStochastic { n, data }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

fn validate_stochastic(n: usize, data: &[f64]) -> Result<()> {
    if data.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: data.len(),
        });
    }
    for i in 0..n {
        let row = &data[i * n..(i + 1) * n];
        for (j, &v) in row.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
        let sum = compensated_sum(row.iter().copied());
        if (sum - 1.0).abs() > tol::ROW_SUM {
            return Err(Error::NotStochastic { row: i, sum });
        }
    }
    Ok(())
}

/// A finite transition matrix paired with its stationary density.
#[derive(Debug, Clone, Serialize)]
pub struct ExactKernel {
    n: usize,
    matrix: Vec<f64>,
    stationary: DiscreteDensity,
}

impl ExactKernel {
    /// Validates row-stochasticity; reversibility is not required here
    /// (see [`ExactKernel::new_reversible`]).
    pub fn new(matrix: Vec<f64>, stationary: DiscreteDensity) -> Result<Self> {
        let n = stationary.len();
        validate_stochastic(n, &matrix)?;
        Ok(ExactKernel {
            n,
            matrix,
            stationary,
        })
    }

    /// Additionally checks detailed balance within [`tol::DETAILED_BALANCE`].
    pub fn new_reversible(matrix: Vec<f64>, stationary: DiscreteDensity) -> Result<Self> {
        let k = Self::new(matrix, stationary)?;
        let v = k.detailed_balance_violation();
        if v > tol::DETAILED_BALANCE {
            return Err(Error::NotReversible { violation: v });
        }
        Ok(k)
    }

    pub fn identity(stationary: DiscreteDensity) -> Self {
        let n = stationary.len();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1.0;
        }
        ExactKernel {
            n,
            matrix,
            stationary,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.matrix[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.matrix[from * self.n..(from + 1) * self.n]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn stationary(&self) -> &DiscreteDensity {
        &self.stationary
    }

    pub fn detailed_balance_violation(&self) -> f64 {
        let pi = self.stationary.weights();
        let mut worst = 0.0f64;
        for x in 0..self.n {
            for y in (x + 1)..self.n {
                let d = (pi[x] * self.transition(x, y) - pi[y] * self.transition(y, x)).abs();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// mu P, the one-step evolution of a distribution.
    pub fn evolve(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: mu.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        for x in 0..self.n {
            let m = mu[x];
            if m == 0.0 {
                continue;
            }
            for (y, &p) in self.row(x).iter().enumerate() {
                out[y] += m * p;
            }
        }
        Ok(out)
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.matrix)
    }

    fn from_dmatrix(m: &DMatrix<f64>, stationary: DiscreteDensity) -> Result<Self> {
        let n = stationary.len();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                // products can round a hair below zero
                matrix[i * n + j] = m[(i, j)].max(0.0);
            }
        }
        ExactKernel::new(matrix, stationary)
    }
}

/// Scratch space for accumulating sparse rows (scatter/gather).
pub struct RowScratch {
    acc: Vec<f64>,
    touched: Vec<u32>,
}

impl RowScratch {
    pub fn new(n: usize) -> Self {
        RowScratch {
            acc: vec![0.0; n],
            touched: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, col: usize, val: f64) {
        if self.acc[col] == 0.0 && val != 0.0 {
            self.touched.push(col as u32);
        }
        self.acc[col] += val;
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.touched.iter().map(|&c| (c as usize, self.acc[c as usize]))
    }

    pub fn clear(&mut self) {
        for &c in &self.touched {
            self.acc[c as usize] = 0.0;
        }
        self.touched.clear();
    }

    /// Sorts touched columns; handy for deterministic CSR assembly.
    pub fn sort(&mut self) {
        self.touched.sort_unstable();
    }
}

/// Anything that acts like a reversible transition matrix: enough surface to
/// densify rows, apply to functions, and take spectral gaps, whether the
/// storage is dense or sparse.
pub trait Kernel {
    fn len(&self) -> usize;
    fn stationary_weights(&self) -> &[f64];
    /// out = P x (action on functions).
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// Accumulates row `i` of P into `scratch`.
    fn scatter_row(&self, i: usize, scratch: &mut RowScratch);
}

impl Kernel for ExactKernel {
    fn len(&self) -> usize {
        self.n
    }

    fn stationary_weights(&self) -> &[f64] {
        self.stationary.weights()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = self.row(i).iter().zip(x).map(|(p, v)| p * v).sum();
        }
    }

    fn scatter_row(&self, i: usize, scratch: &mut RowScratch) {
        for (j, &p) in self.row(i).iter().enumerate() {
            if p != 0.0 {
                scratch.add(j, p);
            }
        }
    }
}

/// Eigenvalues of the pi-symmetrized matrix, sorted decreasing.
pub(crate) fn symmetrized_eigenvalues(k: &ExactKernel) -> Result<Vec<f64>> {
    let s = symmetrized_matrix(k)?;
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(ev)
}

/// D^{1/2} P D^{-1/2} with D = diag(pi), averaged with its transpose to kill
/// detailed-balance rounding noise. Requires pi strictly positive.
pub(crate) fn symmetrized_matrix(k: &ExactKernel) -> Result<DMatrix<f64>> {
    let pi = k.stationary.weights();
    if let Some(index) = pi.iter().position(|&w| w <= 0.0) {
        return Err(Error::ZeroMassState { index });
    }
    let n = k.n;
    let d: Vec<f64> = pi.iter().map(|&w| w.sqrt()).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = k.transition(i, j) * d[i] / d[j];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    Ok(s)
}

fn require_reversible(k: &ExactKernel) -> Result<()> {
    let v = k.detailed_balance_violation();
    if v > tol::DETAILED_BALANCE {
        return Err(Error::NotReversible { violation: v });
    }
    Ok(())
}

/// Spectral gap 1 - lambda_2 of a reversible kernel.
///
/// A 1x1 kernel has gap 1 by convention (the variational infimum over an
/// empty set), so singleton restrictions and trivial projections act as
/// neutral elements in the decomposition bounds.
pub fn spectral_gap(k: &ExactKernel) -> Result<f64> {
    require_reversible(k)?;
    if k.n == 1 {
        return Ok(1.0);
    }
    let ev = symmetrized_eigenvalues(k)?;
    Ok(1.0 - ev[1])
}

/// true iff max |pi(x)P(x,y) - pi(y)P(y,x)| <= tol.
pub fn check_reversible(k: &ExactKernel, tolerance: f64) -> bool {
    k.detailed_balance_violation() <= tolerance
}

/// true iff the smallest eigenvalue of the symmetrized matrix is >= -tol.
pub fn check_nonneg_definite(k: &ExactKernel, tolerance: f64) -> Result<bool> {
    require_reversible(k)?;
    let ev = symmetrized_eigenvalues(k)?;
    Ok(*ev.last().unwrap() >= -tolerance)
}

/// Dirichlet form (f, (I-P)f)_pi.
pub fn dirichlet_form(k: &ExactKernel, f: &[f64]) -> Result<f64> {
    if f.len() != k.n {
        return Err(Error::DimensionMismatch {
            expected: k.n,
            got: f.len(),
        });
    }
    let pi = k.stationary.weights();
    let mut total = 0.0;
    for x in 0..k.n {
        let pf: f64 = k.row(x).iter().zip(f).map(|(p, v)| p * v).sum();
        total += pi[x] * f[x] * (f[x] - pf);
    }
    Ok(total)
}

/// Var_pi(f) = (f, f)_pi - (f, 1)_pi^2.
pub fn variance(pi: &DiscreteDensity, f: &[f64]) -> Result<f64> {
    if f.len() != pi.len() {
        return Err(Error::DimensionMismatch {
            expected: pi.len(),
            got: f.len(),
        });
    }
    let mean = pi.mean(f)?;
    Ok(pi
        .weights()
        .iter()
        .zip(f)
        .map(|(w, x)| {
            let d = x - mean;
            w * d * d
        })
        .sum())
}

/// Variational cross-check of the spectral gap: minimizes the Rayleigh
/// quotient E(f,f)/Var(f) over random test functions, each sharpened with a
/// few lazy power-iteration steps. The result is always an upper bound on
/// nothing and a lower bound on nothing — it is >= Gap(P) by the variational
/// characterization, and approaches it as `trials` grows.
pub fn rayleigh_gap<R: Rng + ?Sized>(k: &ExactKernel, trials: usize, rng: &mut R) -> Result<f64> {
    require_reversible(k)?;
    if k.n == 1 {
        return Ok(1.0);
    }
    let pi = k.stationary.weights();
    let mut best = f64::INFINITY;
    let mut f = vec![0.0; k.n];
    let mut pf = vec![0.0; k.n];
    for _ in 0..trials.max(1) {
        for v in f.iter_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        // sharpening steps: f <- (I+P)f/2, recentered; the ratio of valid
        // test functions never drops below the gap
        for _ in 0..24 {
            let mean: f64 = pi.iter().zip(&f).map(|(w, v)| w * v).sum();
            for v in f.iter_mut() {
                *v -= mean;
            }
            let var = variance(&k.stationary, &f)?;
            if var <= 1e-300 {
                break;
            }
            let e = dirichlet_form(k, &f)?;
            best = best.min(e / var);
            k.apply(&f, &mut pf);
            for (v, p) in f.iter_mut().zip(&pf) {
                *v = 0.5 * (*v + p);
            }
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1e-300 {
                break;
            }
            for v in f.iter_mut() {
                *v /= norm;
            }
        }
    }
    Ok(best)
}

/// Restriction P|_A: moves leaving A are rejected in place (Eq.-(3) form:
/// P|_A(x,B) = P(x,B) + 1_B(x) P(x, A^c)).
pub fn restrict(k: &ExactKernel, subset: &[usize]) -> Result<ExactKernel> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let m = subset.len();
    let mut seen = vec![false; k.n];
    for &x in subset {
        if x >= k.n {
            return Err(Error::DimensionMismatch {
                expected: k.n,
                got: x,
            });
        }
        if seen[x] {
            return Err(Error::InvalidParameter(format!("duplicate subset index {x}")));
        }
        seen[x] = true;
    }
    let pi = k.stationary.weights();
    let mass = sorted_sum(&subset.iter().map(|&x| pi[x]).collect::<Vec<_>>());
    if mass <= 0.0 {
        return Err(Error::EmptySupport);
    }
    let mut matrix = vec![0.0; m * m];
    for (i, &x) in subset.iter().enumerate() {
        let mut inside = 0.0;
        for (j, &y) in subset.iter().enumerate() {
            let p = k.transition(x, y);
            matrix[i * m + j] = p;
            inside += p;
        }
        // leaked mass P(x, A^c) returns to the diagonal
        matrix[i * m + i] += (1.0 - inside).max(0.0);
    }
    let restricted = DiscreteDensity::from_weights(subset.iter().map(|&x| pi[x]).collect())?;
    ExactKernel::new(matrix, restricted)
}

/// Projection P-bar onto partition blocks (Eq.-(4) form).
pub fn project(k: &ExactKernel, partition: &Partition) -> Result<ExactKernel> {
    if partition.len() != k.n {
        return Err(Error::DimensionMismatch {
            expected: k.n,
            got: partition.len(),
        });
    }
    let pi = k.stationary.weights();
    let masses = partition.masses(&k.stationary)?;
    if let Some(block) = masses.iter().position(|&m| m <= 0.0) {
        return Err(Error::ZeroMassBlock { block });
    }
    let j_blocks = partition.n_blocks();
    let mut flow = vec![0.0; j_blocks * j_blocks];
    for x in 0..k.n {
        let bx = partition.block_of(x);
        for (y, &p) in k.row(x).iter().enumerate() {
            if p != 0.0 {
                flow[bx * j_blocks + partition.block_of(y)] += pi[x] * p;
            }
        }
    }
    let mut matrix = vec![0.0; j_blocks * j_blocks];
    for i in 0..j_blocks {
        let row = &flow[i * j_blocks..(i + 1) * j_blocks];
        let total = compensated_sum(row.iter().copied());
        for j in 0..j_blocks {
            matrix[i * j_blocks + j] = row[j] / total;
        }
    }
    ExactKernel::new(matrix, DiscreteDensity::new(masses)?)
}

/// Metropolis–Hastings kernel for a proposal matrix and target density.
///
/// A proposed move with zero target-flow denominator and positive numerator
/// is accepted with probability one (the ratio is treated as +infinity);
/// zero-over-zero proposals are rejected.
pub fn metropolis_hastings(proposal: &RowStochastic, target: &DiscreteDensity) -> Result<ExactKernel> {
    let n = target.len();
    if proposal.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: proposal.len(),
        });
    }
    let pi = target.weights();
    let mut matrix = vec![0.0; n * n];
    for w in 0..n {
        let mut moved = 0.0;
        for z in 0..n {
            if z == w {
                continue;
            }
            let p = proposal.get(w, z);
            if p == 0.0 {
                continue;
            }
            let num = pi[z] * proposal.get(z, w);
            let den = pi[w] * p;
            let accept = if num == 0.0 {
                0.0
            } else if den == 0.0 {
                1.0
            } else {
                (num / den).min(1.0)
            };
            let flow = p * accept;
            matrix[w * n + z] = flow;
            moved += flow;
        }
        matrix[w * n + w] = (1.0 - moved).max(0.0);
    }
    ExactKernel::new_reversible(matrix, target.clone())
}

/// (1-h) P + h I; h in [0, 1). With h >= 1/2 the result is nonnegative
/// definite.
pub fn add_holding(k: &ExactKernel, h: f64) -> Result<ExactKernel> {
    if !(0.0..1.0).contains(&h) {
        return Err(Error::InvalidParameter(format!("holding probability {h} outside [0, 1)")));
    }
    let mut matrix: Vec<f64> = k.matrix.iter().map(|&p| (1.0 - h) * p).collect();
    for i in 0..k.n {
        matrix[i * k.n + i] += h;
    }
    ExactKernel::new(matrix, k.stationary.clone())
}

/// Matrix product a b c of kernels sharing a state space and stationary
/// density. Reversible when a = c and all three are pi-reversible.
pub fn compose(a: &ExactKernel, b: &ExactKernel, c: &ExactKernel) -> Result<ExactKernel> {
    for k in [b, c] {
        if k.n != a.n {
            return Err(Error::DimensionMismatch {
                expected: a.n,
                got: k.n,
            });
        }
        let diff = a
            .stationary
            .weights()
            .iter()
            .zip(k.stationary.weights())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        if diff > tol::ROW_SUM {
            return Err(Error::InvalidParameter(format!(
                "stationary densities differ by {diff}"
            )));
        }
    }
    let m = a.to_dmatrix() * b.to_dmatrix() * c.to_dmatrix();
    ExactKernel::from_dmatrix(&m, a.stationary.clone())
}

/// P^n for n >= 1.
pub fn power_kernel(k: &ExactKernel, n: usize) -> Result<ExactKernel> {
    if n < 1 {
        return Err(Error::InvalidParameter("power must be at least 1".into()));
    }
    let base = k.to_dmatrix();
    let mut acc = base.clone();
    for _ in 1..n {
        acc *= &base;
    }
    ExactKernel::from_dmatrix(&acc, k.stationary.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::tv_distance;

    fn two_state_holding() -> ExactKernel {
        ExactKernel::new_reversible(
            vec![0.75, 0.25, 0.25, 0.75],
            DiscreteDensity::uniform(2),
        )
        .unwrap()
    }

    #[test]
    fn gap_two_state() {
        assert!((spectral_gap(&two_state_holding()).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn gap_identity_and_uniform() {
        let id = ExactKernel::identity(DiscreteDensity::new(vec![0.3, 0.7]).unwrap());
        assert!(spectral_gap(&id).unwrap().abs() < 1e-14);
        let n = 5;
        let uni = ExactKernel::new(vec![1.0 / n as f64; n * n], DiscreteDensity::uniform(n)).unwrap();
        assert!((spectral_gap(&uni).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gap_rejects_nonreversible() {
        let cyclic = ExactKernel::new(
            vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            DiscreteDensity::uniform(3),
        )
        .unwrap();
        assert!(!check_reversible(&cyclic, 1e-10));
        assert!(matches!(spectral_gap(&cyclic), Err(Error::NotReversible { .. })));
    }

    #[test]
    fn gap_rejects_zero_mass() {
        let k = ExactKernel::new(
            vec![1.0, 0.0, 0.0, 1.0],
            DiscreteDensity::new(vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        assert!(matches!(spectral_gap(&k), Err(Error::ZeroMassState { .. })));
    }

    #[test]
    fn dirichlet_examples() {
        let k = two_state_holding();
        assert!(dirichlet_form(&k, &[3.0, 3.0]).unwrap().abs() < 1e-15);
        let id = ExactKernel::identity(DiscreteDensity::uniform(3));
        assert!(dirichlet_form(&id, &[1.0, -2.0, 5.0]).unwrap().abs() < 1e-15);
        assert!((dirichlet_form(&k, &[0.0, 1.0]).unwrap() - 0.125).abs() < 1e-15);
        assert!(matches!(
            dirichlet_form(&k, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn variance_examples() {
        let u = DiscreteDensity::uniform(2);
        assert!(variance(&u, &[7.0, 7.0]).unwrap().abs() < 1e-15);
        assert!((variance(&u, &[0.0, 1.0]).unwrap() - 0.25).abs() < 1e-15);
        let p = DiscreteDensity::new(vec![0.3, 0.7]).unwrap();
        assert!((variance(&p, &[0.0, 1.0]).unwrap() - 0.21).abs() < 1e-15);
    }

    #[test]
    fn rayleigh_bounds_gap() {
        let mut rng = crate::simulate::RngStream::new(11, 0).rng();
        let id = ExactKernel::identity(DiscreteDensity::uniform(4));
        assert!(rayleigh_gap(&id, 5, &mut rng).unwrap().abs() < 1e-12);
        let n = 4;
        let uni = ExactKernel::new(vec![1.0 / n as f64; n * n], DiscreteDensity::uniform(n)).unwrap();
        assert!(rayleigh_gap(&uni, 5, &mut rng).unwrap() >= 1.0 - 1e-9);
        let k = two_state_holding();
        let r = rayleigh_gap(&k, 5, &mut rng).unwrap();
        assert!(r >= 0.5 - 1e-9);
        assert!(r <= 0.5 + 1e-9); // 2-state ratio is exact for every f
    }

    #[test]
    fn restrict_examples() {
        let k = ExactKernel::new_reversible(
            vec![0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5],
            DiscreteDensity::uniform(3),
        )
        .unwrap();
        let full = restrict(&k, &[0, 1, 2]).unwrap();
        assert_eq!(full.matrix(), k.matrix());
        let sub = restrict(&k, &[0, 1]).unwrap();
        assert_eq!(sub.matrix(), &[0.75, 0.25, 0.25, 0.75]);
        let single = restrict(&k, &[2]).unwrap();
        assert_eq!(single.matrix(), &[1.0]);
        assert!((spectral_gap(&single).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(restrict(&k, &[]), Err(Error::EmptySubset)));
    }

    #[test]
    fn project_examples() {
        let n = 4;
        let uni = ExactKernel::new(vec![1.0 / n as f64; n * n], DiscreteDensity::uniform(n)).unwrap();
        let p = project(&uni, &Partition::new(vec![0, 0, 1, 1]).unwrap()).unwrap();
        for v in p.matrix() {
            assert!((v - 0.5).abs() < 1e-14);
        }
        let one = project(&uni, &Partition::single_block(n)).unwrap();
        assert_eq!(one.matrix(), &[1.0]);
        let id = ExactKernel::identity(DiscreteDensity::uniform(n));
        let pid = project(&id, &Partition::new(vec![0, 1, 0, 1]).unwrap()).unwrap();
        assert_eq!(pid.matrix(), &[1.0, 0.0, 0.0, 1.0]);
        assert!(check_reversible(&pid, 1e-12));
    }

    #[test]
    fn metropolis_examples() {
        // symmetric proposal, uniform target: kernel equals proposal
        let prop = RowStochastic::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let k = metropolis_hastings(&prop, &DiscreteDensity::uniform(2)).unwrap();
        assert_eq!(k.matrix(), &[0.0, 1.0, 1.0, 0.0]);
        // asymmetric target
        let t = DiscreteDensity::new(vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let k = metropolis_hastings(&prop, &t).unwrap();
        assert!((k.transition(0, 1) - 0.5).abs() < 1e-15);
        assert!((k.transition(0, 0) - 0.5).abs() < 1e-15);
        assert!((k.transition(1, 0) - 1.0).abs() < 1e-15);
        // identity proposal
        let k = metropolis_hastings(&RowStochastic::identity(3), &DiscreteDensity::uniform(3)).unwrap();
        assert_eq!(k.matrix(), ExactKernel::identity(DiscreteDensity::uniform(3)).matrix());
    }

    #[test]
    fn metropolis_zero_denominator_accepts() {
        // target puts zero mass on state 0; moves 0 -> 1 have num > 0, den = 0
        let prop = RowStochastic::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let t = DiscreteDensity::new(vec![0.0, 1.0]).unwrap();
        let k = metropolis_hastings(&prop, &t).unwrap();
        assert_eq!(k.transition(0, 1), 1.0);
        assert_eq!(k.transition(1, 0), 0.0); // num == 0: rejected
        assert_eq!(k.transition(1, 1), 1.0);
    }

    #[test]
    fn holding_examples() {
        let flip = ExactKernel::new_reversible(vec![0.0, 1.0, 1.0, 0.0], DiscreteDensity::uniform(2)).unwrap();
        assert_eq!(add_holding(&flip, 0.0).unwrap().matrix(), flip.matrix());
        let lazy = add_holding(&flip, 0.5).unwrap();
        assert_eq!(lazy.matrix(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(!check_nonneg_definite(&flip, 1e-12).unwrap());
        assert!(check_nonneg_definite(&lazy, 1e-12).unwrap());
        assert!(add_holding(&flip, 1.0).is_err());
    }

    #[test]
    fn compose_examples() {
        let k = two_state_holding();
        let id = ExactKernel::identity(DiscreteDensity::uniform(2));
        assert_eq!(compose(&id, &k, &id).unwrap().matrix(), k.matrix());
        let q = ExactKernel::new_reversible(vec![0.5, 0.5, 0.5, 0.5], DiscreteDensity::uniform(2)).unwrap();
        let qq = compose(&q, &id, &q).unwrap();
        assert!((qq.transition(0, 0) - 0.5).abs() < 1e-15);
        let qtq = compose(&q, &k, &q).unwrap();
        assert!(check_reversible(&qtq, 1e-12));
    }

    #[test]
    fn power_examples() {
        let k = two_state_holding();
        assert_eq!(power_kernel(&k, 1).unwrap().matrix(), k.matrix());
        let k2 = power_kernel(&k, 2).unwrap();
        let g1 = spectral_gap(&k).unwrap();
        let g2 = spectral_gap(&k2).unwrap();
        assert!((g2 - 0.75).abs() < 1e-12);
        assert!(g1 >= g2 / 2.0 - 1e-12);
        assert!(power_kernel(&k, 0).is_err());
        let n = 3;
        let uni = ExactKernel::new(vec![1.0 / n as f64; n * n], DiscreteDensity::uniform(n)).unwrap();
        let u5 = power_kernel(&uni, 5).unwrap();
        for (a, b) in u5.matrix().iter().zip(uni.matrix()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn tv_convergence_rate_matches_gap() {
        // Eq.-(2) decay-slope check on a fixed small nonnegative-definite chain.
        let base = ExactKernel::new_reversible(
            vec![
                0.2, 0.5, 0.3, //
                0.5, 0.3, 0.2, //
                0.3, 0.2, 0.5,
            ],
            DiscreteDensity::uniform(3),
        )
        .unwrap();
        let k = add_holding(&base, 0.9).unwrap();
        let gap = spectral_gap(&k).unwrap();
        let pi = k.stationary().weights();
        let mut mu = vec![0.0; 3];
        mu[0] = 1.0;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for step in 0..=120 {
            if step >= 20 {
                let tv: f64 = 0.5 * mu.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>();
                xs.push(step as f64);
                ys.push(tv.ln());
            }
            mu = k.evolve(&mu).unwrap();
        }
        let fit = crate::stats::linear_fit(&xs, &ys);
        let expected = (1.0 - gap).ln();
        assert!(
            (fit.slope - expected).abs() / expected.abs() < 0.02,
            "slope {} vs log(1-gap) {}",
            fit.slope,
            expected
        );
    }

    #[test]
    fn evolve_preserves_stationarity() {
        let k = two_state_holding();
        let pi = k.stationary().weights().to_vec();
        let out = k.evolve(&pi).unwrap();
        for (a, b) in out.iter().zip(&pi) {
            assert!((a - b).abs() < 1e-15);
        }
        let _ = tv_distance(
            &DiscreteDensity::new(out).unwrap(),
            &DiscreteDensity::uniform(2),
        );
    }

    #[test]
    fn partition_masses_symmetric_blocks_bitwise_equal() {
        let w = vec![0.1, 0.25, 0.15, 0.15, 0.25, 0.1];
        let d = DiscreteDensity::new(w).unwrap();
        let p = Partition::new(vec![0, 0, 0, 1, 1, 1]).unwrap();
        let m = p.masses(&d).unwrap();
        assert_eq!(m[0], m[1]);
        assert_eq!(m[0], 0.5);
    }

    #[test]
    fn partition_rejects_empty_block() {
        assert!(matches!(
            Partition::new(vec![0, 0, 2, 2]),
            Err(Error::EmptyBlock { block: 1 })
        ));
    }
}

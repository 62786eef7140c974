//! CSR storage and the iterative second-eigenvalue solver used when a chain
//! is too large to densify.

use crate::kernel::{ExactKernel, Kernel, Partition, RowScratch};
use crate::stats::compensated_sum;
use crate::{tol, Caps, DiscreteDensity, Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds row by row; `fill` scatters row `i` into the scratch.
    pub fn from_rows(n: usize, mut fill: impl FnMut(usize, &mut RowScratch)) -> Self {
        let mut scratch = RowScratch::new(n);
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..n {
            fill(i, &mut scratch);
            scratch.sort();
            for (col, val) in scratch.entries() {
                if val != 0.0 {
                    indices.push(col as u32);
                    values.push(val);
                }
            }
            indptr.push(indices.len());
            scratch.clear();
        }
        Csr {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c as usize];
            }
            y[i] = acc;
        }
    }

    pub fn row_sums_within(&self, i: usize, tolerance: f64) -> Result<()> {
        let (_, vals) = self.row(i);
        let sum = compensated_sum(vals.iter().copied());
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::NotStochastic { row: i, sum });
        }
        Ok(())
    }
}

/// A sparse transition matrix with its stationary density.
#[derive(Debug, Clone)]
pub struct SparseKernel {
    csr: Csr,
    stationary: Vec<f64>,
}

impl SparseKernel {
    pub fn new(csr: Csr, stationary: Vec<f64>) -> Result<Self> {
        if stationary.len() != csr.len() {
            return Err(Error::DimensionMismatch {
                expected: csr.len(),
                got: stationary.len(),
            });
        }
        for i in 0..csr.len() {
            csr.row_sums_within(i, tol::ROW_SUM)?;
        }
        Ok(SparseKernel { csr, stationary })
    }

    pub fn csr(&self) -> &Csr {
        &self.csr
    }

    /// Max detailed-balance violation, computed over stored entries.
    pub fn detailed_balance_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for x in 0..self.csr.len() {
            let (cols, vals) = self.csr.row(x);
            for (c, v) in cols.iter().zip(vals) {
                let y = *c as usize;
                let back = self.transition(y, x);
                worst = worst.max((self.stationary[x] * v - self.stationary[y] * back).abs());
            }
        }
        worst
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        let (cols, vals) = self.csr.row(from);
        match cols.binary_search(&(to as u32)) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }
}

impl Kernel for SparseKernel {
    fn len(&self) -> usize {
        self.csr.len()
    }

    fn stationary_weights(&self) -> &[f64] {
        &self.stationary
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.csr.matvec(x, out);
    }

    fn scatter_row(&self, i: usize, scratch: &mut RowScratch) {
        let (cols, vals) = self.csr.row(i);
        for (c, v) in cols.iter().zip(vals) {
            scratch.add(*c as usize, *v);
        }
    }
}

/// Densifies any kernel (within the dense cap) into an [`ExactKernel`].
pub fn to_dense<K: Kernel + ?Sized>(k: &K, caps: &Caps) -> Result<ExactKernel> {
    let n = k.len();
    if n > caps.dense_cap {
        return Err(Error::SizeCap {
            states: n,
            cap: caps.dense_cap,
        });
    }
    let mut matrix = vec![0.0; n * n];
    let mut scratch = RowScratch::new(n);
    for i in 0..n {
        k.scatter_row(i, &mut scratch);
        for (col, val) in scratch.entries() {
            matrix[i * n + col] = val;
        }
        scratch.clear();
    }
    ExactKernel::new(matrix, DiscreteDensity::new(k.stationary_weights().to_vec())?)
}

/// Restriction of any kernel to a subset, rejected exits folded into the
/// diagonal. Returns a dense kernel over the subset.
pub fn restrict_rows<K: Kernel + ?Sized>(k: &K, subset: &[usize]) -> Result<ExactKernel> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let n = k.len();
    let m = subset.len();
    let mut local = vec![usize::MAX; n];
    for (i, &x) in subset.iter().enumerate() {
        local[x] = i;
    }
    let pi = k.stationary_weights();
    let mut matrix = vec![0.0; m * m];
    let mut scratch = RowScratch::new(n);
    for (i, &x) in subset.iter().enumerate() {
        k.scatter_row(x, &mut scratch);
        let mut inside = 0.0;
        for (col, val) in scratch.entries() {
            let j = local[col];
            if j != usize::MAX {
                matrix[i * m + j] = val;
                inside += val;
            }
        }
        matrix[i * m + i] += (1.0 - inside).max(0.0);
        scratch.clear();
    }
    let weights: Vec<f64> = subset.iter().map(|&x| pi[x]).collect();
    ExactKernel::new(matrix, DiscreteDensity::from_weights(weights)?)
}

/// Projection of any kernel onto partition blocks; returns the block chain.
pub fn project_rows<K: Kernel + ?Sized>(k: &K, partition: &Partition) -> Result<ExactKernel> {
    let n = k.len();
    if partition.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: partition.len(),
        });
    }
    let pi = DiscreteDensity::new(k.stationary_weights().to_vec())?;
    let masses = partition.masses(&pi)?;
    if let Some(block) = masses.iter().position(|&m| m <= 0.0) {
        return Err(Error::ZeroMassBlock { block });
    }
    let j_blocks = partition.n_blocks();
    let mut flow = vec![0.0; j_blocks * j_blocks];
    let mut scratch = RowScratch::new(n);
    let w = pi.weights();
    for x in 0..n {
        let bx = partition.block_of(x);
        k.scatter_row(x, &mut scratch);
        for (col, val) in scratch.entries() {
            flow[bx * j_blocks + partition.block_of(col)] += w[x] * val;
        }
        scratch.clear();
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

/// Spectral gap of any reversible kernel: dense eigendecomposition within the
/// dense cap, matrix-free Lanczos above it.
pub fn spectral_gap_any<K: Kernel + ?Sized>(k: &K, caps: &Caps) -> Result<f64> {
    if k.len() <= caps.dense_cap {
        crate::kernel::spectral_gap(&to_dense(k, caps)?)
    } else {
        let lambda2 = lambda2_lanczos(k)?;
        Ok(1.0 - lambda2)
    }
}

/// Second-largest eigenvalue via thick-restart Lanczos on the pi-symmetrized
/// operator, with the exactly known top eigenpair sqrt(pi) deflated and full
/// reorthogonalization. Deterministic (fixed internal start vector).
pub fn lambda2_lanczos<K: Kernel + ?Sized>(k: &K) -> Result<f64> {
    let n = k.len();
    let pi = k.stationary_weights();
    if let Some(index) = pi.iter().position(|&w| w <= 0.0) {
        return Err(Error::ZeroMassState { index });
    }
    let d: Vec<f64> = pi.iter().map(|&w| w.sqrt()).collect();
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let v0: Vec<f64> = d.iter().map(|v| v / norm).collect();
    let mut tmp = vec![0.0; n];
    let mut tmp2 = vec![0.0; n];
    let mut op = |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            tmp[i] = x[i] / d[i];
        }
        k.apply(&tmp, &mut tmp2);
        for i in 0..n {
            out[i] = tmp2[i] * d[i];
        }
    };
    lanczos_top(&mut op, n, &v0, tol::LANCZOS_RESIDUAL, 60_000)
}

/// Deterministic start vector.
fn seed_vector(n: usize) -> Vec<f64> {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let bits = (state >> 11) as f64 / (1u64 << 53) as f64;
            bits - 0.5
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Largest eigenvalue of a symmetric operator restricted to the orthogonal
/// complement of `deflate` (a unit vector spanning a known invariant
/// direction). Thick-restart Lanczos with full reorthogonalization.
fn lanczos_top(
    op: &mut dyn FnMut(&[f64], &mut [f64]),
    n: usize,
    deflate: &[f64],
    residual_tol: f64,
    max_matvecs: usize,
) -> Result<f64> {
    let window = 200.min(n.saturating_sub(1)).max(2);
    let keep = 40.min(window / 2);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(window + 1);
    let mut proj = DMatrix::<f64>::zeros(window + 1, window + 1);
    let mut matvecs = 0usize;

    let orthogonalize = |v: &mut Vec<f64>, basis: &[Vec<f64>]| {
        for _ in 0..2 {
            let c = dot(v, deflate);
            axpy(v, -c, deflate);
            for b in basis {
                let c = dot(v, b);
                axpy(v, -c, b);
            }
        }
    };

    // start vector
    let mut v = seed_vector(n);
    orthogonalize(&mut v, &basis);
    let nv = dot(&v, &v).sqrt();
    if nv <= 1e-300 {
        return Err(Error::NotConverged { matvecs: 0 });
    }
    for x in v.iter_mut() {
        *x /= nv;
    }
    basis.push(v);

    let mut w = vec![0.0; n];

    loop {
        // extend the basis with standard Lanczos steps + full reorth
        while basis.len() < window && matvecs < max_matvecs {
            let j = basis.len() - 1;
            op(&basis[j], &mut w);
            matvecs += 1;
            let alpha = dot(&w, &basis[j]);
            proj[(j, j)] = alpha;
            let mut next = w.clone();
            orthogonalize(&mut next, &basis);
            let beta = dot(&next, &next).sqrt();
            if beta <= 1e-14 {
                // invariant subspace found: Ritz values are exact
                break;
            }
            for x in next.iter_mut() {
                *x /= beta;
            }
            proj[(j, basis.len())] = beta;
            proj[(basis.len(), j)] = beta;
            basis.push(next);
        }

        // Rayleigh–Ritz on the projected matrix
        let m = basis.len();
        // alpha of the last vector, unless already set by the loop above
        if m >= 1 && proj[(m - 1, m - 1)] == 0.0 {
            op(&basis[m - 1], &mut w);
            matvecs += 1;
            proj[(m - 1, m - 1)] = dot(&w, &basis[m - 1]);
        }
        let sub = proj.view((0, 0), (m, m)).into_owned();
        let eig = SymmetricEigen::new(sub);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let top = order[0];
        let theta = eig.eigenvalues[top];

        // residual of the top Ritz pair: beta_m * |last eigvec component|
        op(&basis[m - 1], &mut w);
        matvecs += 1;
        let mut r = w.clone();
        // subtract projection onto the basis to get the true residual direction
        let c0 = dot(&r, deflate);
        axpy(&mut r, -c0, deflate);
        for (idx, b) in basis.iter().enumerate() {
            let c = proj[(idx, m - 1)];
            axpy(&mut r, -c, b);
        }
        let beta_m = dot(&r, &r).sqrt();
        let res = beta_m * eig.eigenvectors[(m - 1, top)].abs();
        if res <= residual_tol || m >= n.saturating_sub(1) {
            return Ok(theta);
        }
        if matvecs >= max_matvecs {
            return Err(Error::NotConverged { matvecs });
        }

        // thick restart: keep the top Ritz vectors plus the residual direction
        let k_eff = keep.min(m.saturating_sub(1)).max(1);
        let mut new_basis: Vec<Vec<f64>> = Vec::with_capacity(window + 1);
        for &oi in order.iter().take(k_eff) {
            let mut y = vec![0.0; n];
            for (bi, b) in basis.iter().enumerate() {
                axpy(&mut y, eig.eigenvectors[(bi, oi)], b);
            }
            new_basis.push(y);
        }
        for x in r.iter_mut() {
            *x /= beta_m;
        }
        let couplings: Vec<f64> = order
            .iter()
            .take(k_eff)
            .map(|&oi| beta_m * eig.eigenvectors[(m - 1, oi)])
            .collect();
        new_basis.push(r);
        basis = new_basis;
        proj.fill(0.0);
        for (i, &oi) in order.iter().take(k_eff).enumerate() {
            proj[(i, i)] = eig.eigenvalues[oi];
            proj[(i, k_eff)] = couplings[i];
            proj[(k_eff, i)] = couplings[i];
        }
    }
}

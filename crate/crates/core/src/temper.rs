//! Temperature ladders, tempered level densities, and the swapping /
//! simulated-tempering chain constructions of the tempering framework.
//!
//! The swapping chain lives on the product space X^{N+1} and factors as
//! P_sc = Q T Q with a 1/2 holding probability inside both Q (swap moves
//! between adjacent levels, Metropolis-accepted) and T (update of one
//! uniformly chosen level by its level-reversible component kernel). The
//! simulated-tempering chain lives on X x {0..N} and factors as Q' T' Q',
//! where Q' resamples the level from its conditional given the state. Both
//! are materialized sparsely; product spaces above the state cap are refused
//! rather than approximated.

use crate::density::DiscreteDensity;
use crate::kernel::{ExactKernel, Kernel, RowScratch};
use crate::sparse::{Csr, SparseKernel};
use crate::stats::compensated_sum;
use crate::{tol, Caps, Error, Result};
use serde::{Deserialize, Serialize};

/// Ordered inverse temperatures 0 <= beta_0 < ... < beta_N = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TemperatureLadder {
    betas: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TemperatureLadder {
    type Error = Error;
    fn try_from(betas: Vec<f64>) -> Result<Self> {
        TemperatureLadder::new(betas)
    }
}

impl From<TemperatureLadder> for Vec<f64> {
    fn from(l: TemperatureLadder) -> Vec<f64> {
        l.betas
    }
}

impl TemperatureLadder {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidLadder("no temperatures".into()));
        }
        if betas[0] < 0.0 {
            return Err(Error::InvalidLadder(format!("beta_0 = {} < 0", betas[0])));
        }
        for w in betas.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidLadder(format!(
                    "betas not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if *betas.last().unwrap() != 1.0 {
            return Err(Error::InvalidLadder(format!(
                "final beta is {}, must be exactly 1",
                betas.last().unwrap()
            )));
        }
        Ok(TemperatureLadder { betas })
    }

    /// beta_k = k/m for k = 0..m.
    pub fn linear(m: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidLadder("linear ladder needs m >= 1".into()));
        }
        Self::new((0..=m).map(|k| k as f64 / m as f64).collect())
    }

    /// beta_k = m^{-(m-k)/m} for k = 0..m (a geometric progression).
    /// m = 1 collapses to (1, 1) and is rejected.
    pub fn geometric(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidLadder(
                "geometric ladder needs m >= 2 (m = 1 collapses to a repeated beta)".into(),
            ));
        }
        Self::new(
            (0..=m)
                .map(|k| (m as f64).powf(-((m - k) as f64) / m as f64))
                .collect(),
        )
    }

    /// The union of the geometric and linear ladders for the same m, sorted
    /// with duplicates merged. m^{-m/m} always collides with 1/m and both
    /// sets contain 1, so the merged ladder has 2m-1 entries, fewer when
    /// further powers coincide (m = 4 merges 4^{-1/2} = 2/4).
    pub fn union(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidLadder("union ladder needs m >= 2".into()));
        }
        let mut betas: Vec<f64> = (0..=m)
            .map(|k| (m as f64).powf(-((m - k) as f64) / m as f64))
            .chain((1..=m).map(|k| k as f64 / m as f64))
            .collect();
        betas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut merged: Vec<f64> = Vec::with_capacity(betas.len());
        for b in betas {
            match merged.last() {
                Some(&last) if (b - last).abs() <= 1e-12 * b.max(last) => {}
                _ => merged.push(b),
            }
        }
        if let Some(last) = merged.last_mut() {
            *last = 1.0;
        }
        Self::new(merged)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// N: the highest level index.
    pub fn n(&self) -> usize {
        self.betas.len() - 1
    }

    /// N + 1 levels.
    pub fn count(&self) -> usize {
        self.betas.len()
    }
}

/// The tempered densities pi_0 .. pi_N on a shared base space,
/// with pi_N the target.
#[derive(Debug, Clone, Serialize)]
pub struct LevelDensities {
    levels: Vec<DiscreteDensity>,
}

impl LevelDensities {
    pub fn new(levels: Vec<DiscreteDensity>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidParameter("no levels".into()));
        }
        let base = levels[0].len();
        for l in &levels {
            if l.len() != base {
                return Err(Error::DimensionMismatch {
                    expected: base,
                    got: l.len(),
                });
            }
        }
        // supports must agree across levels
        for x in 0..base {
            let target_pos = levels.last().unwrap().get(x) > 0.0;
            for l in &levels {
                if (l.get(x) > 0.0) != target_pos {
                    return Err(Error::ZeroMassState { index: x });
                }
            }
        }
        Ok(LevelDensities { levels })
    }

    pub fn base_size(&self) -> usize {
        self.levels[0].len()
    }

    /// N: the highest level index.
    pub fn n(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn count(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &DiscreteDensity {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[DiscreteDensity] {
        &self.levels
    }

    pub fn target(&self) -> &DiscreteDensity {
        self.levels.last().unwrap()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.levels.iter().all(|l| l.is_strictly_positive())
    }
}

/// pi_k(z) proportional to pi(z)^{beta_k}; the final level is the target
/// itself, bit for bit.
pub fn temper(target: &DiscreteDensity, ladder: &TemperatureLadder) -> Result<LevelDensities> {
    let mut levels = Vec::with_capacity(ladder.count());
    for (k, &beta) in ladder.betas().iter().enumerate() {
        if k == ladder.n() {
            levels.push(target.clone());
        } else {
            let w: Vec<f64> = target
                .weights()
                .iter()
                .map(|&t| if t > 0.0 { t.powf(beta) } else { 0.0 })
                .collect();
            levels.push(DiscreteDensity::from_weights(w)?);
        }
    }
    LevelDensities::new(levels)
}

/// Mixed-radix index for product state spaces; component 0 is the least
/// significant digit. Flatten and unflatten are exact inverses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProductIndexer {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl ProductIndexer {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter("empty product space".into()));
        }
        let mut strides = Vec::with_capacity(sizes.len());
        let mut total: usize = 1;
        for &s in &sizes {
            strides.push(total);
            total = total
                .checked_mul(s)
                .ok_or(Error::SizeCap { states: usize::MAX, cap: 0 })?;
        }
        Ok(ProductIndexer {
            sizes,
            strides,
            total,
        })
    }

    pub fn uniform(base: usize, components: usize) -> Result<Self> {
        Self::new(vec![base; components])
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn n_components(&self) -> usize {
        self.sizes.len()
    }

    pub fn size_of(&self, k: usize) -> usize {
        self.sizes[k]
    }

    pub fn flatten(&self, components: &[usize]) -> Result<usize> {
        if components.len() != self.sizes.len() {
            return Err(Error::DimensionMismatch {
                expected: self.sizes.len(),
                got: components.len(),
            });
        }
        let mut idx = 0;
        for (k, &c) in components.iter().enumerate() {
            if c >= self.sizes[k] {
                return Err(Error::InvalidParameter(format!(
                    "component {k} value {c} out of range {}",
                    self.sizes[k]
                )));
            }
            idx += c * self.strides[k];
        }
        Ok(idx)
    }

    pub fn unflatten(&self, flat: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sizes.len());
        let mut rest = flat;
        for &s in &self.sizes {
            out.push(rest % s);
            rest /= s;
        }
        out
    }

    #[inline]
    pub fn component(&self, flat: usize, k: usize) -> usize {
        (flat / self.strides[k]) % self.sizes[k]
    }

    /// The flat index with component k changed from `old` to `new`.
    #[inline]
    pub fn replace(&self, flat: usize, k: usize, old: usize, new: usize) -> usize {
        flat + new * self.strides[k] - old * self.strides[k]
    }
}

fn require_component_reversible(t: &ExactKernel, pi: &DiscreteDensity) -> Result<()> {
    if t.len() != pi.len() {
        return Err(Error::DimensionMismatch {
            expected: pi.len(),
            got: t.len(),
        });
    }
    let mut worst = 0.0f64;
    for x in 0..t.len() {
        for y in (x + 1)..t.len() {
            worst = worst.max((pi.get(x) * t.transition(x, y) - pi.get(y) * t.transition(y, x)).abs());
        }
    }
    if worst > tol::DETAILED_BALANCE {
        return Err(Error::NotReversible { violation: worst });
    }
    Ok(())
}

fn product_stationary(levels: &LevelDensities, indexer: &ProductIndexer) -> Vec<f64> {
    let n = indexer.total();
    let mut pi = vec![1.0f64; n];
    for x in 0..n {
        for k in 0..indexer.n_components() {
            pi[x] *= levels.level(k).get(indexer.component(x, k));
        }
    }
    let total = compensated_sum(pi.iter().copied());
    for w in pi.iter_mut() {
        *w /= total;
    }
    pi
}

fn require_positive_levels(levels: &LevelDensities) -> Result<()> {
    for l in levels.levels() {
        if let Some(index) = l.weights().iter().position(|&w| w <= 0.0) {
            return Err(Error::ZeroMassState { index });
        }
    }
    Ok(())
}

/// The update kernel T on the product space: hold with probability 1/2,
/// otherwise update one uniformly chosen level by its component kernel.
pub fn update_kernel_t(
    levels: &LevelDensities,
    components: &[ExactKernel],
    caps: &Caps,
) -> Result<SparseKernel> {
    require_positive_levels(levels)?;
    if components.len() != levels.count() {
        return Err(Error::DimensionMismatch {
            expected: levels.count(),
            got: components.len(),
        });
    }
    for (t, pi) in components.iter().zip(levels.levels()) {
        require_component_reversible(t, pi)?;
    }
    let indexer = ProductIndexer::uniform(levels.base_size(), levels.count())?;
    caps.check(indexer.total())?;
    let npl = levels.count();
    let weight = 1.0 / (2.0 * npl as f64);
    let csr = Csr::from_rows(indexer.total(), |x, scratch| {
        scratch.add(x, 0.5);
        for k in 0..npl {
            let xk = indexer.component(x, k);
            for (yk, &p) in components[k].row(xk).iter().enumerate() {
                if p != 0.0 {
                    scratch.add(indexer.replace(x, k, xk, yk), weight * p);
                }
            }
        }
    });
    SparseKernel::new(csr, product_stationary(levels, &indexer))
}

/// The swap kernel Q on the product space: hold with probability 1/2,
/// otherwise propose exchanging a uniformly chosen adjacent pair of levels
/// and accept with the Metropolis ratio preserving the product density.
/// With a single level there are no swaps and Q is the identity.
pub fn swap_kernel_q(levels: &LevelDensities, caps: &Caps) -> Result<SparseKernel> {
    require_positive_levels(levels)?;
    let indexer = ProductIndexer::uniform(levels.base_size(), levels.count())?;
    caps.check(indexer.total())?;
    let n_swaps = levels.n();
    let csr = Csr::from_rows(indexer.total(), |x, scratch| {
        if n_swaps == 0 {
            scratch.add(x, 1.0);
            return;
        }
        let mut stay = 0.5;
        let weight = 1.0 / (2.0 * n_swaps as f64);
        for k in 0..n_swaps {
            let a = indexer.component(x, k);
            let b = indexer.component(x, k + 1);
            if a == b {
                stay += weight; // proposed swap is a no-op
                continue;
            }
            let num = levels.level(k).get(b) * levels.level(k + 1).get(a);
            let den = levels.level(k).get(a) * levels.level(k + 1).get(b);
            let rho = (num / den).min(1.0);
            let y = indexer.replace(indexer.replace(x, k, a, b), k + 1, b, a);
            scratch.add(y, weight * rho);
            stay += weight * (1.0 - rho);
        }
        scratch.add(x, stay);
    });
    SparseKernel::new(csr, product_stationary(levels, &indexer))
}

/// A three-factor kernel Q T Q kept in factored form; applying or
/// densifying never materializes the full product unless asked.
#[derive(Debug, Clone)]
pub struct SandwichKernel {
    q: SparseKernel,
    t: SparseKernel,
    stationary: Vec<f64>,
}

impl SandwichKernel {
    fn new(q: SparseKernel, t: SparseKernel) -> Self {
        let stationary = t.stationary_weights().to_vec();
        SandwichKernel { q, t, stationary }
    }

    pub fn q(&self) -> &SparseKernel {
        &self.q
    }

    pub fn t(&self) -> &SparseKernel {
        &self.t
    }

    pub fn to_dense(&self, caps: &Caps) -> Result<ExactKernel> {
        crate::sparse::to_dense(self, caps)
    }
}

impl Kernel for SandwichKernel {
    fn len(&self) -> usize {
        self.t.len()
    }

    fn stationary_weights(&self) -> &[f64] {
        &self.stationary
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        self.q.apply(x, &mut a);
        self.t.apply(&a, &mut b);
        self.q.apply(&b, out);
    }

    fn scatter_row(&self, i: usize, scratch: &mut RowScratch) {
        let (qc, qv) = self.q.csr().row(i);
        for (c1, v1) in qc.iter().zip(qv) {
            let (tc, tv) = self.t.csr().row(*c1 as usize);
            for (c2, v2) in tc.iter().zip(tv) {
                let w12 = v1 * v2;
                let (qc2, qv2) = self.q.csr().row(*c2 as usize);
                for (c3, v3) in qc2.iter().zip(qv2) {
                    scratch.add(*c3 as usize, w12 * v3);
                }
            }
        }
    }
}

/// The swapping chain P_sc = Q T Q on the product space.
pub fn swapping_chain(
    levels: &LevelDensities,
    components: &[ExactKernel],
    caps: &Caps,
) -> Result<SandwichKernel> {
    let t = update_kernel_t(levels, components, caps)?;
    let q = swap_kernel_q(levels, caps)?;
    Ok(SandwichKernel::new(q, t))
}

/// Flat index of the simulated-tempering state (z, k): z * (N+1) + k.
pub fn augmented_index(z: usize, k: usize, n_levels: usize) -> usize {
    z * n_levels + k
}

/// Inverse of [`augmented_index`].
pub fn augmented_state(flat: usize, n_levels: usize) -> (usize, usize) {
    (flat / n_levels, flat % n_levels)
}

/// The simulated-tempering chain P_st = Q' T' Q' on X x {0..N}, where T'
/// applies the current level's component kernel to z (with 1/2 holding) and
/// Q' resamples the level from its conditional given z (with 1/2 holding).
pub fn simulated_tempering_chain(
    levels: &LevelDensities,
    components: &[ExactKernel],
    caps: &Caps,
) -> Result<SandwichKernel> {
    require_positive_levels(levels)?;
    if components.len() != levels.count() {
        return Err(Error::DimensionMismatch {
            expected: levels.count(),
            got: components.len(),
        });
    }
    for (t, pi) in components.iter().zip(levels.levels()) {
        require_component_reversible(t, pi)?;
    }
    let base = levels.base_size();
    let npl = levels.count();
    let n = base * npl;
    caps.check(n)?;
    let mut pi_st = vec![0.0; n];
    for z in 0..base {
        for k in 0..npl {
            pi_st[augmented_index(z, k, npl)] = levels.level(k).get(z) / npl as f64;
        }
    }
    let total = compensated_sum(pi_st.iter().copied());
    for w in pi_st.iter_mut() {
        *w /= total;
    }
    let t_prime = Csr::from_rows(n, |i, scratch| {
        let (z, k) = augmented_state(i, npl);
        scratch.add(i, 0.5);
        for (z2, &p) in components[k].row(z).iter().enumerate() {
            if p != 0.0 {
                scratch.add(augmented_index(z2, k, npl), 0.5 * p);
            }
        }
    });
    let q_prime = Csr::from_rows(n, |i, scratch| {
        let (z, _k) = augmented_state(i, npl);
        scratch.add(i, 0.5);
        let conditional_total: f64 = (0..npl).map(|l| levels.level(l).get(z)).sum();
        for k2 in 0..npl {
            scratch.add(
                augmented_index(z, k2, npl),
                0.5 * levels.level(k2).get(z) / conditional_total,
            );
        }
    });
    let t = SparseKernel::new(t_prime, pi_st.clone())?;
    let q = SparseKernel::new(q_prime, pi_st)?;
    Ok(SandwichKernel::new(q, t))
}

/// A product chain: update one coordinate chosen with probability b_k by its
/// component kernel (no extra holding; weights must sum to one). Component
/// state spaces may differ in size.
pub fn product_chain(
    components: &[ExactKernel],
    weights: &[f64],
    caps: &Caps,
) -> Result<SparseKernel> {
    if components.is_empty() || components.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: components.len(),
            got: weights.len(),
        });
    }
    if weights.iter().any(|&b| b <= 0.0) {
        return Err(Error::InvalidParameter("product-chain weights must be positive".into()));
    }
    let sum: f64 = compensated_sum(weights.iter().copied());
    if (sum - 1.0).abs() > tol::ROW_SUM {
        return Err(Error::NotStochastic { row: 0, sum });
    }
    let indexer = ProductIndexer::new(components.iter().map(|c| c.len()).collect())?;
    caps.check(indexer.total())?;
    let n = indexer.total();
    let mut pi = vec![1.0f64; n];
    for x in 0..n {
        for (k, c) in components.iter().enumerate() {
            pi[x] *= c.stationary().get(indexer.component(x, k));
        }
    }
    let total = compensated_sum(pi.iter().copied());
    for w in pi.iter_mut() {
        *w /= total;
    }
    let csr = Csr::from_rows(n, |x, scratch| {
        for (k, c) in components.iter().enumerate() {
            let xk = indexer.component(x, k);
            for (yk, &p) in c.row(xk).iter().enumerate() {
                if p != 0.0 {
                    scratch.add(indexer.replace(x, k, xk, yk), weights[k] * p);
                }
            }
        }
    });
    SparseKernel::new(csr, pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{metropolis_hastings, spectral_gap, RowStochastic};
    use crate::sparse::{spectral_gap_any, to_dense};

    fn caps() -> Caps {
        Caps::default()
    }

    #[test]
    fn ladder_constructors() {
        let lin = TemperatureLadder::linear(4).unwrap();
        assert_eq!(lin.betas(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(TemperatureLadder::linear(1).unwrap().betas(), &[0.0, 1.0]);
        let geo = TemperatureLadder::geometric(2).unwrap();
        assert_eq!(geo.betas().len(), 3);
        assert!((geo.betas()[0] - 0.5).abs() < 1e-15);
        assert!((geo.betas()[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(geo.betas()[2], 1.0);
        assert!((TemperatureLadder::geometric(4).unwrap().betas()[0] - 0.25).abs() < 1e-15);
        assert!(TemperatureLadder::geometric(1).is_err());
    }

    #[test]
    fn union_ladder_merges_collisions() {
        // m^{-m/m} = 1/m collides with the linear k=1 entry, and 1 with 1,
        // so the union has 2m-1 distinct betas
        let u2 = TemperatureLadder::union(2).unwrap();
        assert_eq!(u2.n(), 2);
        assert_eq!(u2.betas().len(), 3);
        let u3 = TemperatureLadder::union(3).unwrap();
        assert_eq!(u3.betas().len(), 5);
        assert_eq!(u3.n(), 4);
        assert!((u3.betas()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((u3.betas()[2] - 2.0 / 3.0).abs() < 1e-15);
        // 2m-1 in general; m = 4 also merges 4^{-1/2} = 2/4
        for (m, expect) in [(2, 3), (3, 5), (4, 6), (5, 9), (6, 11), (7, 13), (8, 15), (9, 17)] {
            let u = TemperatureLadder::union(m).unwrap();
            assert_eq!(u.betas().len(), expect, "m = {m}");
            assert_eq!(*u.betas().last().unwrap(), 1.0);
        }
    }

    #[test]
    fn ladder_rejects_bad_input() {
        assert!(TemperatureLadder::new(vec![0.0, 0.5]).is_err()); // last != 1
        assert!(TemperatureLadder::new(vec![0.5, 0.5, 1.0]).is_err()); // not strict
        assert!(TemperatureLadder::new(vec![-0.1, 1.0]).is_err());
    }

    #[test]
    fn temper_examples() {
        let ladder = TemperatureLadder::new(vec![0.5, 1.0]).unwrap();
        let target = DiscreteDensity::new(vec![0.8, 0.2]).unwrap();
        let lv = temper(&target, &ladder).unwrap();
        assert!((lv.level(0).get(0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(lv.target().weights(), target.weights());
        // uniform target stays uniform at every level
        let u = DiscreteDensity::uniform(4);
        let lv = temper(&u, &TemperatureLadder::linear(3).unwrap()).unwrap();
        for l in lv.levels() {
            for w in l.weights() {
                assert!((w - 0.25).abs() < 1e-14);
            }
        }
        // beta_0 = 0 gives the uniform density on the support
        let t = DiscreteDensity::new(vec![0.9, 0.1, 0.0]).unwrap();
        let lv = temper(&t, &TemperatureLadder::linear(2).unwrap()).unwrap();
        assert_eq!(lv.level(0).weights(), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn indexer_roundtrip() {
        let ix = ProductIndexer::uniform(4, 3).unwrap();
        assert_eq!(ix.total(), 64);
        assert_eq!(ix.flatten(&[0, 0, 0]).unwrap(), 0);
        assert_eq!(ix.flatten(&[3, 3, 3]).unwrap(), 63);
        for flat in 0..64 {
            assert_eq!(ix.flatten(&ix.unflatten(flat)).unwrap(), flat);
        }
        assert!(ix.flatten(&[4, 0, 0]).is_err());
        let hetero = ProductIndexer::new(vec![2, 3, 5]).unwrap();
        for flat in 0..30 {
            assert_eq!(hetero.flatten(&hetero.unflatten(flat)).unwrap(), flat);
        }
    }

    fn two_state_levels() -> (LevelDensities, Vec<ExactKernel>) {
        let pi0 = DiscreteDensity::uniform(2);
        let pi1 = DiscreteDensity::new(vec![0.8, 0.2]).unwrap();
        let prop = RowStochastic::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let t0 = metropolis_hastings(&prop, &pi0).unwrap();
        let t1 = metropolis_hastings(&prop, &pi1).unwrap();
        (
            LevelDensities::new(vec![pi0, pi1]).unwrap(),
            vec![t0, t1],
        )
    }

    #[test]
    fn swap_acceptance_follows_the_product_ratio() {
        let (levels, _) = two_state_levels();
        let q = swap_kernel_q(&levels, &caps()).unwrap();
        let ix = ProductIndexer::uniform(2, 2).unwrap();
        // state (x0, x1) = (state 1, state 0): swapping moves the heavy
        // target state out of the cold level, accepted with ratio 1/4
        let from = ix.flatten(&[1, 0]).unwrap();
        let to = ix.flatten(&[0, 1]).unwrap();
        assert!((q.transition(from, to) - 0.25 / 2.0).abs() < 1e-15);
        assert!((q.transition(to, from) - 1.0 / 2.0).abs() < 1e-15);
        // diagonal soaks up the rejected mass
        assert!((q.transition(from, from) - (0.5 + 0.5 * 0.75)).abs() < 1e-15);
    }

    #[test]
    fn swap_identity_for_single_level() {
        let pi = DiscreteDensity::new(vec![0.6, 0.4]).unwrap();
        let levels = LevelDensities::new(vec![pi]).unwrap();
        let q = swap_kernel_q(&levels, &caps()).unwrap();
        for x in 0..2 {
            assert_eq!(q.transition(x, x), 1.0);
        }
    }

    #[test]
    fn equal_levels_swap_with_probability_half() {
        let pi = DiscreteDensity::new(vec![0.7, 0.3]).unwrap();
        let levels = LevelDensities::new(vec![pi.clone(), pi]).unwrap();
        let q = swap_kernel_q(&levels, &caps()).unwrap();
        let ix = ProductIndexer::uniform(2, 2).unwrap();
        let from = ix.flatten(&[1, 0]).unwrap();
        let to = ix.flatten(&[0, 1]).unwrap();
        assert!((q.transition(from, to) - 0.5).abs() < 1e-15);
        // states with equal components hold fully
        let same = ix.flatten(&[1, 1]).unwrap();
        assert_eq!(q.transition(same, same), 1.0);
    }

    #[test]
    fn update_kernel_identity_components() {
        let (levels, _) = two_state_levels();
        let id0 = ExactKernel::identity(levels.level(0).clone());
        let id1 = ExactKernel::identity(levels.level(1).clone());
        let t = update_kernel_t(&levels, &[id0, id1], &caps()).unwrap();
        for x in 0..4 {
            assert!((t.transition(x, x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn update_kernel_single_level() {
        let pi = DiscreteDensity::uniform(2);
        let prop = RowStochastic::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let t0 = metropolis_hastings(&prop, &pi).unwrap();
        let levels = LevelDensities::new(vec![pi]).unwrap();
        let t = update_kernel_t(&levels, &[t0.clone()], &caps()).unwrap();
        // N = 0: T = I/2 + T_0/2
        for x in 0..2 {
            for y in 0..2 {
                let expect = 0.5 * f64::from(x == y) + 0.5 * t0.transition(x, y);
                assert!((t.transition(x, y) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn update_kernel_rejects_wrong_level() {
        let (levels, comps) = two_state_levels();
        let bad = vec![comps[1].clone(), comps[0].clone()];
        assert!(matches!(
            update_kernel_t(&levels, &bad, &caps()),
            Err(Error::NotReversible { .. })
        ));
    }

    #[test]
    fn chains_are_reversible_and_nonneg_definite() {
        let (levels, comps) = two_state_levels();
        let sc = swapping_chain(&levels, &comps, &caps()).unwrap();
        assert!(sc.q().detailed_balance_violation() < 1e-14);
        assert!(sc.t().detailed_balance_violation() < 1e-14);
        let dense = sc.to_dense(&caps()).unwrap();
        assert!(crate::kernel::check_reversible(&dense, 1e-12));
        assert!(crate::kernel::check_nonneg_definite(&dense, 1e-12).unwrap());
        let st = simulated_tempering_chain(&levels, &comps, &caps()).unwrap();
        let dense = st.to_dense(&caps()).unwrap();
        assert!(crate::kernel::check_reversible(&dense, 1e-12));
        assert!(crate::kernel::check_nonneg_definite(&dense, 1e-12).unwrap());
    }

    #[test]
    fn product_chain_matches_eigendecomposition() {
        let (levels, comps) = two_state_levels();
        let weights = [0.25, 0.75];
        let pc = product_chain(&comps, &weights, &caps()).unwrap();
        let dense = to_dense(&pc, &caps()).unwrap();
        let gap = spectral_gap(&dense).unwrap();
        let expect = weights
            .iter()
            .zip(&comps)
            .map(|(b, c)| b * spectral_gap(c).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!((gap - expect).abs() < 1e-12);
        let _ = levels;
    }

    #[test]
    fn update_kernel_gap_is_product_formula() {
        let (levels, comps) = two_state_levels();
        let t = update_kernel_t(&levels, &comps, &caps()).unwrap();
        let gap = spectral_gap_any(&t, &caps()).unwrap();
        let min_gap = comps
            .iter()
            .map(|c| spectral_gap(c).unwrap())
            .fold(f64::INFINITY, f64::min);
        let expect = min_gap / (2.0 * levels.count() as f64);
        assert!(
            (gap - expect).abs() < 1e-10,
            "gap {gap} vs product formula {expect}"
        );
    }

    #[test]
    fn product_marginal_on_cold_level_is_target() {
        let (levels, _) = two_state_levels();
        let ix = ProductIndexer::uniform(2, 2).unwrap();
        let t = update_kernel_t(
            &levels,
            &[
                ExactKernel::identity(levels.level(0).clone()),
                ExactKernel::identity(levels.level(1).clone()),
            ],
            &caps(),
        )
        .unwrap();
        let pi = t.stationary_weights();
        for target_state in 0..2 {
            let marginal: f64 = (0..ix.total())
                .filter(|&x| ix.component(x, 1) == target_state)
                .map(|x| pi[x])
                .sum();
            assert!((marginal - levels.target().get(target_state)).abs() < 1e-14);
        }
    }

    #[test]
    fn st_chain_size_and_marginals() {
        let (levels, comps) = two_state_levels();
        let st = simulated_tempering_chain(&levels, &comps, &caps()).unwrap();
        assert_eq!(st.len(), 4);
        let pi = st.stationary_weights();
        // level marginal is uniform over levels
        for k in 0..2 {
            let m: f64 = (0..2).map(|z| pi[augmented_index(z, k, 2)]).sum();
            assert!((m - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn product_space_cap_is_enforced() {
        let pi = DiscreteDensity::uniform(32);
        let levels = LevelDensities::new(vec![pi.clone(), pi.clone(), pi.clone(), pi]).unwrap();
        let small = Caps {
            max_states: 100_000,
            dense_cap: 64,
        };
        assert!(matches!(
            swap_kernel_q(&levels, &small),
            Err(Error::SizeCap { .. })
        ));
    }
}

//! Spectral-gap lower bounds for swapping and simulated-tempering chains,
//! and every quantity they are built from: the overlap delta(A) of adjacent
//! tempered levels within partition blocks, the block-mass decay gamma(A),
//! projected and restricted gaps, the decomposition sandwich, product-chain
//! gaps, path-comparison congestion constants, and the signature
//! decomposition of the product space.

use crate::kernel::{
    check_nonneg_definite, project, restrict, spectral_gap, ExactKernel, Kernel, Partition,
};
use crate::sparse::{project_rows, restrict_rows, spectral_gap_any};
use crate::stats::sorted_sum;
use crate::temper::{
    product_chain, simulated_tempering_chain, swapping_chain, LevelDensities, ProductIndexer,
};
use crate::{tol, Caps, Error, Result};
use rayon::prelude::*;
use serde::Serialize;

/// Everything Theorem 3.1 and Corollary 3.1 consume, plus the exact gaps
/// they must stay below.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_se: Option<f64>,
    pub gamma: f64,
    pub gap_t0_bar: f64,
    pub min_restricted_gap: f64,
    pub j: usize,
    pub n: usize,
    pub thm31_bound: f64,
    pub cor31_bound: f64,
    pub exact_gap_sc: Option<f64>,
    pub exact_gap_st: Option<f64>,
}

fn level_masses(levels: &LevelDensities, partition: &Partition) -> Result<Vec<Vec<f64>>> {
    let masses: Vec<Vec<f64>> = levels
        .levels()
        .iter()
        .map(|pi| partition.masses(pi))
        .collect::<Result<_>>()?;
    for row in &masses {
        if let Some(block) = row.iter().position(|&m| m <= 0.0) {
            return Err(Error::ZeroMassBlock { block });
        }
    }
    Ok(masses)
}

/// The overlap delta(A): the minimum over ordered adjacent level pairs
/// (k, l), |k - l| = 1, and blocks j of
/// [sum over A_j of min(pi_k, pi_l)] / pi_k[A_j].
pub fn overlap_delta(levels: &LevelDensities, partition: &Partition) -> Result<f64> {
    if partition.len() != levels.base_size() {
        return Err(Error::DimensionMismatch {
            expected: levels.base_size(),
            got: partition.len(),
        });
    }
    let masses = level_masses(levels, partition)?;
    let blocks: Vec<Vec<usize>> = (0..partition.n_blocks())
        .map(|j| partition.block_indices(j))
        .collect();
    let mut best = f64::INFINITY;
    for k in 0..levels.count() {
        for l in [k.wrapping_sub(1), k + 1] {
            if l >= levels.count() {
                continue;
            }
            for (j, block) in blocks.iter().enumerate() {
                let mins: Vec<f64> = block
                    .iter()
                    .map(|&z| levels.level(k).get(z).min(levels.level(l).get(z)))
                    .collect();
                best = best.min(sorted_sum(&mins) / masses[k][j]);
            }
        }
    }
    Ok(best)
}

/// The whole-space overlap used by Madras–Randall and Zheng:
/// min over k of the total mass of min(pi_k, pi_{k+1}). Always an upper
/// bound for [`overlap_delta`], with equality for symmetric models.
pub fn madras_randall_overlap(levels: &LevelDensities) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..levels.n() {
        let mins: Vec<f64> = (0..levels.base_size())
            .map(|z| levels.level(k).get(z).min(levels.level(k + 1).get(z)))
            .collect();
        best = best.min(sorted_sum(&mins));
    }
    best
}

/// gamma(A): the minimum over blocks of the product over k of
/// min(1, pi_{k-1}[A_j] / pi_k[A_j]).
pub fn gamma(levels: &LevelDensities, partition: &Partition) -> Result<f64> {
    let masses = level_masses(levels, partition)?;
    let mut best = f64::INFINITY;
    for j in 0..partition.n_blocks() {
        let mut product = 1.0;
        for k in 1..levels.count() {
            product *= (masses[k - 1][j] / masses[k][j]).min(1.0);
        }
        best = best.min(product);
    }
    Ok(best)
}

/// The stationary probability of accepting a proposed swap between
/// x_[k] in A_i and x_[k+1] in A_j (the Eq.-(6) double sum). Always at
/// least delta(A)^2.
pub fn swap_acceptance_marginal(
    levels: &LevelDensities,
    partition: &Partition,
    k: usize,
    i: usize,
    j: usize,
) -> Result<f64> {
    if k + 1 >= levels.count() {
        return Err(Error::InvalidParameter(format!("no adjacent pair at level {k}")));
    }
    if i >= partition.n_blocks() || j >= partition.n_blocks() {
        return Err(Error::InvalidParameter("block index out of range".into()));
    }
    let masses = level_masses(levels, partition)?;
    let bi = partition.block_indices(i);
    let bj = partition.block_indices(j);
    let pk = levels.level(k);
    let pk1 = levels.level(k + 1);
    let mut terms = Vec::with_capacity(bi.len() * bj.len());
    for &z in &bi {
        for &w in &bj {
            terms.push((pk.get(z) * pk1.get(w)).min(pk.get(w) * pk1.get(z)));
        }
    }
    Ok(sorted_sum(&terms) / (masses[k][i] * masses[k + 1][j]))
}

/// Inputs for the two lower bounds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundIngredients {
    pub delta: f64,
    pub gamma: f64,
    pub gap_t0_bar: f64,
    pub min_restricted_gap: f64,
    pub j: usize,
    pub n: usize,
}

impl BoundIngredients {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("gap_t0_bar", self.gap_t0_bar),
            ("min_restricted_gap", self.min_restricted_gap),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        if self.j == 0 {
            return Err(Error::InvalidParameter("need at least one block".into()));
        }
        Ok(())
    }
}

/// The swapping-chain lower bound:
/// gamma^{J+3} delta^2 / (2^12 (N+1)^4 J^3) * Gap(T0-bar) * min Gap(T_k|A_j).
pub fn theorem31_bound(ing: &BoundIngredients) -> Result<f64> {
    ing.validate()?;
    let j = ing.j as f64;
    let np1 = (ing.n + 1) as f64;
    Ok(ing.gamma.powi(ing.j as i32 + 3) * ing.delta.powi(2) / (4096.0 * np1.powi(4) * j.powi(3))
        * ing.gap_t0_bar
        * ing.min_restricted_gap)
}

/// The simulated-tempering lower bound:
/// gamma^{J+3} delta^3 / (2^14 (N+1)^5 J^3) * Gap(T0-bar) * min Gap(T_k|A_j).
pub fn corollary31_bound(ing: &BoundIngredients) -> Result<f64> {
    ing.validate()?;
    let j = ing.j as f64;
    let np1 = (ing.n + 1) as f64;
    Ok(ing.gamma.powi(ing.j as i32 + 3) * ing.delta.powi(3) / (16384.0 * np1.powi(5) * j.powi(3))
        * ing.gap_t0_bar
        * ing.min_restricted_gap)
}

/// The decomposition sandwich of Theorem 5.2:
/// 1/2 Gap(P-bar) min_j Gap(P|A_j) <= Gap(P) <= Gap(P-bar).
/// Returns (lower, upper). The lower bound requires nonnegative
/// definiteness.
pub fn decomposition_bounds(k: &ExactKernel, partition: &Partition) -> Result<(f64, f64)> {
    if !check_nonneg_definite(k, tol::SLACK)? {
        let ev = crate::kernel::symmetrized_eigenvalues(k)?;
        return Err(Error::NotNonnegativeDefinite {
            min_eigenvalue: *ev.last().unwrap(),
        });
    }
    let upper = spectral_gap(&project(k, partition)?)?;
    let mut min_restricted = f64::INFINITY;
    for j in 0..partition.n_blocks() {
        let sub = restrict(k, &partition.block_indices(j))?;
        min_restricted = min_restricted.min(spectral_gap(&sub)?);
    }
    Ok((0.5 * upper * min_restricted, upper))
}

/// Gap of a product chain by the Theorem 5.3 formula
/// min_k b_k Gap(P_k), verified against the eigendecomposition of the
/// materialized product when it fits the cap.
pub fn product_chain_gap(components: &[ExactKernel], weights: &[f64], caps: &Caps) -> Result<f64> {
    let mut formula = f64::INFINITY;
    for (c, &b) in components.iter().zip(weights) {
        formula = formula.min(b * spectral_gap(c)?);
    }
    let chain = product_chain(components, weights, caps)?;
    let exact = spectral_gap_any(&chain, caps)?;
    if (exact - formula).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "product-chain gap {exact} differs from the formula value {formula}"
        )));
    }
    Ok(formula)
}

/// Canonical paths for comparing two chains: for each off-diagonal edge of
/// the comparison chain, a node path through edges of the base chain.
#[derive(Debug, Clone, Default, Serialize, serde::Deserialize)]
pub struct PathSet {
    paths: Vec<Vec<usize>>,
}

impl PathSet {
    pub fn new() -> Self {
        PathSet::default()
    }

    pub fn insert(&mut self, path: Vec<usize>) -> Result<()> {
        if path.len() < 2 {
            return Err(Error::InvalidParameter("a path needs at least two nodes".into()));
        }
        if path.first() == path.last() {
            return Err(Error::InvalidParameter("path endpoints must differ".into()));
        }
        self.paths.push(path);
        Ok(())
    }

    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }
}

/// The congestion constant of Theorem 5.1:
/// c = max over base edges (z,w) of
///     (1/(pi_P(z) P(z,w))) sum over paths through (z,w) of
///     |path| pi_Q(x) Q(x,y),
/// which guarantees E_Q <= c E_P. Every off-diagonal flow edge of Q must
/// have a path, and every path edge must carry base flow.
pub fn path_comparison_constant(
    base: &ExactKernel,
    comparison: &ExactKernel,
    paths: &PathSet,
) -> Result<f64> {
    let n = base.len();
    if comparison.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: comparison.len(),
        });
    }
    let pi_p = base.stationary().weights();
    let pi_q = comparison.stationary().weights();
    let mut by_endpoints = std::collections::HashMap::new();
    for (idx, path) in paths.paths().iter().enumerate() {
        let key = (path[0], *path.last().unwrap());
        if by_endpoints.insert(key, idx).is_some() {
            return Err(Error::InvalidParameter(format!(
                "duplicate path for edge ({}, {})",
                key.0, key.1
            )));
        }
    }
    // accumulate loads over base edges
    let mut load = std::collections::HashMap::new();
    for x in 0..n {
        for y in 0..n {
            if x == y {
                continue;
            }
            let flow_q = pi_q[x] * comparison.transition(x, y);
            if flow_q <= 0.0 {
                continue;
            }
            let idx = *by_endpoints
                .get(&(x, y))
                .ok_or(Error::MissingPath { from: x, to: y })?;
            let path = &paths.paths()[idx];
            let length = (path.len() - 1) as f64;
            for step in path.windows(2) {
                let (z, w) = (step[0], step[1]);
                if pi_p[z] * base.transition(z, w) <= 0.0 {
                    return Err(Error::PathEdgeNotInSupport { from: z, to: w });
                }
                *load.entry((z, w)).or_insert(0.0) += length * flow_q;
            }
        }
    }
    let mut c = 0.0f64;
    for ((z, w), l) in load {
        c = c.max(l / (pi_p[z] * base.transition(z, w)));
    }
    Ok(c)
}

/// The signature of a product state: the block labels of its components.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Signature {
    pub sigma: Vec<usize>,
}

/// Partition of the product space X^{N+1} by signatures. Signature classes
/// with zero stationary mass are dropped (Theorem 3.1 requires positive
/// block masses); the second return value counts dropped classes.
pub fn signature_partition(
    base_partition: &Partition,
    n_levels: usize,
    stationary: &[f64],
) -> Result<(Partition, usize)> {
    let base = base_partition.len();
    let indexer = ProductIndexer::uniform(base, n_levels)?;
    if stationary.len() != indexer.total() {
        return Err(Error::DimensionMismatch {
            expected: indexer.total(),
            got: stationary.len(),
        });
    }
    let j = base_partition.n_blocks();
    let n_classes = j.pow(n_levels as u32);
    let mut class_mass = vec![0.0f64; n_classes];
    let mut raw = vec![0usize; indexer.total()];
    for x in 0..indexer.total() {
        let mut class = 0;
        let mut stride = 1;
        for k in 0..n_levels {
            class += base_partition.block_of(indexer.component(x, k)) * stride;
            stride *= j;
        }
        raw[x] = class;
        class_mass[class] += stationary[x];
    }
    let mut renumber = vec![usize::MAX; n_classes];
    let mut next = 0;
    for (class, &mass) in class_mass.iter().enumerate() {
        if mass > 0.0 {
            renumber[class] = next;
            next += 1;
        }
    }
    let dropped = n_classes - next;
    let labels = raw.into_iter().map(|c| renumber[c]).collect();
    Ok((Partition::new(labels)?, dropped))
}

/// The signature of one product state.
pub fn signature_of(
    base_partition: &Partition,
    indexer: &ProductIndexer,
    x: usize,
) -> Signature {
    Signature {
        sigma: (0..indexer.n_components())
            .map(|k| base_partition.block_of(indexer.component(x, k)))
            .collect(),
    }
}

/// The signature decomposition of a product-space chain: the projected
/// chain's gap and the restricted gap within every signature class.
#[derive(Debug, Clone, Serialize)]
pub struct SignatureDecomposition {
    pub projected_gap: f64,
    pub restricted_gaps: Vec<f64>,
}

pub fn signature_decomposition<K: Kernel + Sync + ?Sized>(
    chain: &K,
    signature: &Partition,
    caps: &Caps,
) -> Result<SignatureDecomposition> {
    let projected = project_rows(chain, signature)?;
    let projected_gap = spectral_gap(&projected)?;
    let restricted_gaps: Vec<f64> = (0..signature.n_blocks())
        .into_par_iter()
        .map(|sigma| -> Result<f64> {
            let sub = restrict_rows(chain, &signature.block_indices(sigma))?;
            spectral_gap(&sub)
        })
        .collect::<Result<_>>()?;
    let _ = caps;
    Ok(SignatureDecomposition {
        projected_gap,
        restricted_gaps,
    })
}

/// Eq. (14): Gap(P_sc) >= 1/2 Gap(P-bar_sc) min over signatures of
/// Gap(P_sigma), within slack.
pub fn eq14_check<K: Kernel + Sync + ?Sized>(
    chain: &K,
    signature: &Partition,
    caps: &Caps,
) -> Result<bool> {
    let decomp = signature_decomposition(chain, signature, caps)?;
    let gap = spectral_gap_any(chain, caps)?;
    let min_restricted = decomp
        .restricted_gaps
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(gap >= 0.5 * decomp.projected_gap * min_restricted - tol::SLACK)
}

/// Eq. (15): every signature-restricted gap is at least
/// min Gap(T_k|A_j) / (8(N+1)), within slack.
pub fn eq15_check<K: Kernel + Sync + ?Sized>(
    chain: &K,
    signature: &Partition,
    min_component_restricted_gap: f64,
    n_levels: usize,
    caps: &Caps,
) -> Result<bool> {
    let decomp = signature_decomposition(chain, signature, caps)?;
    let floor = min_component_restricted_gap / (8.0 * n_levels as f64);
    Ok(decomp
        .restricted_gaps
        .iter()
        .all(|&g| g >= floor - tol::SLACK))
}

/// min over levels k and blocks j of Gap(T_k|A_j), with the full table.
#[derive(Debug, Clone, Serialize)]
pub struct RestrictedGaps {
    pub min: f64,
    /// per_level[k][j] = Gap(T_k | A_j)
    pub per_level: Vec<Vec<f64>>,
}

pub fn min_restricted_component_gap(
    components: &[ExactKernel],
    partition: &Partition,
) -> Result<RestrictedGaps> {
    let blocks: Vec<Vec<usize>> = (0..partition.n_blocks())
        .map(|j| partition.block_indices(j))
        .collect();
    let per_level: Vec<Vec<f64>> = components
        .par_iter()
        .map(|t| -> Result<Vec<f64>> {
            blocks
                .iter()
                .map(|b| spectral_gap(&restrict(t, b)?))
                .collect()
        })
        .collect::<Result<_>>()?;
    let min = per_level
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(RestrictedGaps { min, per_level })
}

/// Options for [`full_bound_report`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    /// Skip building the product chains (bounds only).
    pub skip_exact_gaps: bool,
    /// Replace the exact overlap with a Monte Carlo estimate and its
    /// standard error; the bound assertion then uses (delta - 3 se).
    pub delta_monte_carlo: Option<(f64, f64)>,
}

/// Computes delta, gamma, Gap(T0-bar), min Gap(T_k|A_j), both lower bounds,
/// and (within the cap) the exact gaps of the swapping and
/// simulated-tempering chains, asserting bound <= exact gap.
pub fn full_bound_report(
    levels: &LevelDensities,
    components: &[ExactKernel],
    partition: &Partition,
    caps: &Caps,
    options: ReportOptions,
) -> Result<BoundReport> {
    let (delta, delta_se) = match options.delta_monte_carlo {
        Some((d, se)) => (d, Some(se)),
        None => (overlap_delta(levels, partition)?, None),
    };
    let gamma_val = gamma(levels, partition)?;
    let gap_t0_bar = spectral_gap(&project(&components[0], partition)?)?;
    let restricted = min_restricted_component_gap(components, partition)?;
    let delta_for_bound = match delta_se {
        Some(se) => (delta - 3.0 * se).max(f64::MIN_POSITIVE),
        None => delta,
    };
    let ing = BoundIngredients {
        delta: delta_for_bound,
        gamma: gamma_val,
        gap_t0_bar,
        min_restricted_gap: restricted.min,
        j: partition.n_blocks(),
        n: levels.n(),
    };
    let thm31 = theorem31_bound(&ing)?;
    let cor31 = corollary31_bound(&ing)?;
    let mut exact_gap_sc = None;
    let mut exact_gap_st = None;
    if !options.skip_exact_gaps {
        let product_states = levels
            .base_size()
            .checked_pow(levels.count() as u32)
            .unwrap_or(usize::MAX);
        if product_states <= caps.max_states {
            let sc = swapping_chain(levels, components, caps)?;
            exact_gap_sc = Some(spectral_gap_any(&sc, caps)?);
        }
        if levels.base_size() * levels.count() <= caps.max_states {
            let st = simulated_tempering_chain(levels, components, caps)?;
            exact_gap_st = Some(spectral_gap_any(&st, caps)?);
        }
        if let Some(g) = exact_gap_sc {
            if thm31 > g + tol::SLACK {
                return Err(Error::InvalidParameter(format!(
                    "Theorem 3.1 bound {thm31} exceeds the exact swapping gap {g}"
                )));
            }
        }
        if let Some(g) = exact_gap_st {
            if cor31 > g + tol::SLACK {
                return Err(Error::InvalidParameter(format!(
                    "Corollary 3.1 bound {cor31} exceeds the exact tempering gap {g}"
                )));
            }
        }
    }
    Ok(BoundReport {
        delta,
        delta_se,
        gamma: gamma_val,
        gap_t0_bar,
        min_restricted_gap: restricted.min,
        j: partition.n_blocks(),
        n: levels.n(),
        thm31_bound: thm31,
        cor31_bound: cor31,
        exact_gap_sc,
        exact_gap_st,
    })
}

//! Randomized property batteries over the kernel algebra and the bound
//! machinery, with serializable instances for exact replay.
//!
//! Every case is generated from a (seed, property, case-index) stream, so a
//! failing instance can be dumped to JSON, inspected, and replayed bit for
//! bit. Replay rebuilds kernels through the validating constructors, so a
//! corrupted instance file fails validation before any property runs.

use crate::bounds::{
    self, eq14_check, eq15_check, overlap_delta, path_comparison_constant, signature_partition,
    swap_acceptance_marginal, PathSet,
};
use crate::density::DiscreteDensity;
use crate::kernel::{
    compose, dirichlet_form, power_kernel, project, restrict, spectral_gap,
    symmetrized_matrix, ExactKernel, Kernel, Partition,
};
use crate::random::{
    random_density, random_partition, random_reversible, random_reversible_full_support,
    random_reversible_nonneg, random_weights,
};
use crate::simulate::RngStream;
use crate::temper::{swapping_chain, temper, LevelDensities, TemperatureLadder};
use crate::{tol, Caps, Error, Result};
use nalgebra::SymmetricEigen;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A kernel in plain serialized form; building it revalidates everything.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawKernel {
    pub matrix: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
}

impl RawKernel {
    fn from_kernel(k: &ExactKernel) -> Self {
        RawKernel {
            matrix: (0..k.len()).map(|i| k.row(i).to_vec()).collect(),
            stationary: k.stationary().weights().to_vec(),
        }
    }

    fn build(&self) -> Result<ExactKernel> {
        let flat: Vec<f64> = self.matrix.iter().flatten().copied().collect();
        ExactKernel::new(flat, DiscreteDensity::new(self.stationary.clone())?)
    }

    fn build_reversible(&self) -> Result<ExactKernel> {
        let k = self.build()?;
        if !crate::kernel::check_reversible(&k, tol::DETAILED_BALANCE) {
            return Err(Error::NotReversible {
                violation: k.detailed_balance_violation(),
            });
        }
        Ok(k)
    }
}

/// One self-contained property-check instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "property", rename_all = "snake_case")]
pub enum VerifyInstance {
    /// Theorem 5.2: 1/2 Gap(Pbar) min_j Gap(P|A_j) <= Gap(P) <= Gap(Pbar).
    Thm52Sandwich { kernel: RawKernel, blocks: Vec<usize> },
    /// Theorem 5.3: product-chain gap equals min_k b_k Gap(P_k).
    Thm53ProductGap {
        components: Vec<RawKernel>,
        weights: Vec<f64>,
    },
    /// Theorem 5.1: E_Q <= c E_P for the congestion constant of a path set.
    Thm51Comparison {
        base: RawKernel,
        comparison: RawKernel,
        paths: Vec<Vec<usize>>,
        function_seed: u64,
        functions: usize,
    },
    /// Lemma A.1: Gap(P) >= Gap(P^n)/n.
    LemmaA1Power { kernel: RawKernel, exponent: usize },
    /// Lemma A.2: Gap(QPQ) >= Gap(P) for nonnegative-definite P.
    LemmaA2Conjugation { inner: RawKernel, outer: RawKernel },
    /// Lemma 5.1: thinning off-diagonal mass cannot increase the gap.
    Lemma51Thinning { kernel: RawKernel, factor: f64 },
    /// Theorem A.1: Gap(P^{1/2} Q P^{1/2}) >= Gap(Pbar) min_j Gap(Q|A_j).
    ThmA1Sqrt {
        nonneg: RawKernel,
        other: RawKernel,
        blocks: Vec<usize>,
    },
    /// Eq. (6): the stationary swap-acceptance marginal is >= delta^2.
    Eq6SwapFloor {
        levels: Vec<Vec<f64>>,
        blocks: Vec<usize>,
    },
    /// Eq. (8): delta(A) <= the Madras–Randall overlap.
    Eq8OverlapChain {
        levels: Vec<Vec<f64>>,
        blocks: Vec<usize>,
    },
    /// Eq. (14) and Eq. (15) on a small tempered instance.
    Eq14Eq15Signature {
        target: Vec<f64>,
        betas: Vec<f64>,
        components: Vec<RawKernel>,
        blocks: Vec<usize>,
    },
}

/// Outcome of one property battery.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyOutcome {
    pub property: String,
    pub cases: usize,
    /// Smallest slack observed over all inequalities checked; negative
    /// beyond the tolerance means violation.
    pub worst_margin: f64,
    pub pass: bool,
    /// The first violating instance, serialized for replay.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failing_instance: Option<VerifyInstance>,
}

struct CheckResult {
    margin: f64,
    tolerance: f64,
}

impl VerifyInstance {
    pub fn property_name(&self) -> &'static str {
        match self {
            VerifyInstance::Thm52Sandwich { .. } => "thm52_sandwich",
            VerifyInstance::Thm53ProductGap { .. } => "thm53_product_gap",
            VerifyInstance::Thm51Comparison { .. } => "thm51_comparison",
            VerifyInstance::LemmaA1Power { .. } => "lemma_a1_power",
            VerifyInstance::LemmaA2Conjugation { .. } => "lemma_a2_conjugation",
            VerifyInstance::Lemma51Thinning { .. } => "lemma_51_thinning",
            VerifyInstance::ThmA1Sqrt { .. } => "thm_a1_sqrt",
            VerifyInstance::Eq6SwapFloor { .. } => "eq6_swap_floor",
            VerifyInstance::Eq8OverlapChain { .. } => "eq8_overlap_chain",
            VerifyInstance::Eq14Eq15Signature { .. } => "eq14_eq15_signature",
        }
    }

    fn check(&self, caps: &Caps) -> Result<CheckResult> {
        match self {
            VerifyInstance::Thm52Sandwich { kernel, blocks } => {
                let k = kernel.build_reversible()?;
                let partition = Partition::new(blocks.clone())?;
                let gap = spectral_gap(&k)?;
                let (lower, upper) = bounds::decomposition_bounds(&k, &partition)?;
                Ok(CheckResult {
                    margin: (gap - lower).min(upper - gap),
                    tolerance: tol::SLACK,
                })
            }
            VerifyInstance::Thm53ProductGap {
                components,
                weights,
            } => {
                let comps: Vec<ExactKernel> = components
                    .iter()
                    .map(|r| r.build_reversible())
                    .collect::<Result<_>>()?;
                let formula = bounds::product_chain_gap(&comps, weights, caps)?;
                // product_chain_gap itself verifies agreement to 1e-10;
                // re-derive the discrepancy for the margin report
                let chain = crate::temper::product_chain(&comps, weights, caps)?;
                let exact = crate::sparse::spectral_gap_any(&chain, caps)?;
                Ok(CheckResult {
                    margin: -(exact - formula).abs(),
                    tolerance: 1e-10,
                })
            }
            VerifyInstance::Thm51Comparison {
                base,
                comparison,
                paths,
                function_seed,
                functions,
            } => {
                let p = base.build_reversible()?;
                let q = comparison.build_reversible()?;
                let mut path_set = PathSet::new();
                for path in paths {
                    path_set.insert(path.clone())?;
                }
                let c = path_comparison_constant(&p, &q, &path_set)?;
                let mut rng = RngStream::new(*function_seed, 0).rng();
                let mut margin = f64::INFINITY;
                for _ in 0..*functions {
                    let f: Vec<f64> = (0..p.len()).map(|_| rng.random::<f64>() - 0.5).collect();
                    let eq = dirichlet_form(&q, &f)?;
                    let ep = dirichlet_form(&p, &f)?;
                    margin = margin.min(c * ep - eq);
                }
                Ok(CheckResult {
                    margin,
                    tolerance: tol::SLACK,
                })
            }
            VerifyInstance::LemmaA1Power { kernel, exponent } => {
                let k = kernel.build_reversible()?;
                let gap = spectral_gap(&k)?;
                let powered = power_kernel(&k, *exponent)?;
                let gap_n = spectral_gap(&powered)?;
                Ok(CheckResult {
                    margin: gap - gap_n / *exponent as f64,
                    tolerance: tol::SLACK,
                })
            }
            VerifyInstance::LemmaA2Conjugation { inner, outer } => {
                let p = inner.build_reversible()?;
                let q = outer.build_reversible()?;
                if !crate::kernel::check_nonneg_definite(&p, tol::SLACK)? {
                    return Err(Error::NotNonnegativeDefinite { min_eigenvalue: f64::NAN });
                }
                let qpq = compose(&q, &p, &q)?;
                Ok(CheckResult {
                    margin: spectral_gap(&qpq)? - spectral_gap(&p)?,
                    tolerance: tol::SLACK,
                })
            }
            VerifyInstance::Lemma51Thinning { kernel, factor } => {
                let p = kernel.build_reversible()?;
                if !(0.0..=1.0).contains(factor) {
                    return Err(Error::InvalidParameter(format!(
                        "thinning factor {factor} outside [0,1]"
                    )));
                }
                let n = p.len();
                let mut thinned = vec![0.0; n * n];
                for x in 0..n {
                    let mut moved = 0.0;
                    for y in 0..n {
                        if x != y {
                            let v = factor * p.transition(x, y);
                            thinned[x * n + y] = v;
                            moved += v;
                        }
                    }
                    thinned[x * n + x] = 1.0 - moved;
                }
                let q = ExactKernel::new_reversible(thinned, p.stationary().clone())?;
                Ok(CheckResult {
                    margin: spectral_gap(&p)? - spectral_gap(&q)?,
                    tolerance: tol::SLACK,
                })
            }
            VerifyInstance::ThmA1Sqrt {
                nonneg,
                other,
                blocks,
            } => {
                let p = nonneg.build_reversible()?;
                let q = other.build_reversible()?;
                let partition = Partition::new(blocks.clone())?;
                let sp = symmetrized_matrix(&p)?;
                let sq = symmetrized_matrix(&q)?;
                let eig = SymmetricEigen::new(sp);
                let sqrt_vals =
                    nalgebra::DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
                let sp_half = &eig.eigenvectors
                    * nalgebra::DMatrix::from_diagonal(&sqrt_vals)
                    * eig.eigenvectors.transpose();
                let triple = &sp_half * sq * &sp_half;
                let mut ev: Vec<f64> = triple.symmetric_eigenvalues().iter().copied().collect();
                ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let lhs = 1.0 - ev[1];
                let pbar_gap = spectral_gap(&project(&p, &partition)?)?;
                let mut min_q = f64::INFINITY;
                for j in 0..partition.n_blocks() {
                    min_q = min_q.min(spectral_gap(&restrict(&q, &partition.block_indices(j))?)?);
                }
                Ok(CheckResult {
                    margin: lhs - pbar_gap * min_q,
                    tolerance: tol::SLACK,
                })
            }
            VerifyInstance::Eq6SwapFloor { levels, blocks } => {
                let lv = build_levels(levels)?;
                let partition = Partition::new(blocks.clone())?;
                let delta = overlap_delta(&lv, &partition)?;
                let mut margin = f64::INFINITY;
                for k in 0..lv.n() {
                    for i in 0..partition.n_blocks() {
                        for j in 0..partition.n_blocks() {
                            let acc = swap_acceptance_marginal(&lv, &partition, k, i, j)?;
                            margin = margin.min(acc - delta * delta);
                        }
                    }
                }
                Ok(CheckResult {
                    margin,
                    tolerance: 1e-12,
                })
            }
            VerifyInstance::Eq8OverlapChain { levels, blocks } => {
                let lv = build_levels(levels)?;
                let partition = Partition::new(blocks.clone())?;
                let delta = overlap_delta(&lv, &partition)?;
                let mr = bounds::madras_randall_overlap(&lv);
                Ok(CheckResult {
                    margin: mr - delta,
                    tolerance: 1e-12,
                })
            }
            VerifyInstance::Eq14Eq15Signature {
                target,
                betas,
                components,
                blocks,
            } => {
                let target = DiscreteDensity::new(target.clone())?;
                let ladder = TemperatureLadder::new(betas.clone())?;
                let levels = temper(&target, &ladder)?;
                let comps: Vec<ExactKernel> = components
                    .iter()
                    .map(|r| r.build_reversible())
                    .collect::<Result<_>>()?;
                let base_partition = Partition::new(blocks.clone())?;
                let chain = swapping_chain(&levels, &comps, caps)?;
                let (sig, _) =
                    signature_partition(&base_partition, levels.count(), chain.stationary_weights())?;
                let decomp = bounds::signature_decomposition(&chain, &sig, caps)?;
                let gap = crate::sparse::spectral_gap_any(&chain, caps)?;
                let min_sig = decomp
                    .restricted_gaps
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                let eq14_margin = gap - 0.5 * decomp.projected_gap * min_sig;
                let restricted = bounds::min_restricted_component_gap(&comps, &base_partition)?;
                let floor = restricted.min / (8.0 * levels.count() as f64);
                let eq15_margin = min_sig - floor;
                debug_assert!(eq14_check(&chain, &sig, caps)? == (eq14_margin >= -tol::SLACK));
                debug_assert!(
                    eq15_check(&chain, &sig, restricted.min, levels.count(), caps)?
                        == (eq15_margin >= -tol::SLACK)
                );
                Ok(CheckResult {
                    margin: eq14_margin.min(eq15_margin),
                    tolerance: tol::SLACK,
                })
            }
        }
    }
}

fn build_levels(raw: &[Vec<f64>]) -> Result<LevelDensities> {
    LevelDensities::new(
        raw.iter()
            .map(|w| DiscreteDensity::new(w.clone()))
            .collect::<Result<_>>()?,
    )
}

fn levels_to_raw(lv: &LevelDensities) -> Vec<Vec<f64>> {
    lv.levels().iter().map(|d| d.weights().to_vec()).collect()
}

fn random_levels<R: Rng + ?Sized>(n_states: usize, n_levels: usize, rng: &mut R) -> LevelDensities {
    let target = random_density(n_states, rng);
    let mut betas: Vec<f64> = (0..n_levels - 1).map(|_| rng.random::<f64>()).collect();
    betas.push(1.0);
    betas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    betas.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    if betas.len() < 2 {
        betas = vec![0.5, 1.0];
    }
    let ladder = TemperatureLadder::new(betas).unwrap();
    temper(&target, &ladder).unwrap()
}

fn generate(property: &str, rng: &mut crate::simulate::SimRng) -> VerifyInstance {
    match property {
        "thm52_sandwich" => {
            let n = rng.random_range(4..=20);
            let pi = random_density(n, rng);
            let k = random_reversible_nonneg(&pi, rng);
            let j = rng.random_range(2..=4.min(n));
            VerifyInstance::Thm52Sandwich {
                kernel: RawKernel::from_kernel(&k),
                blocks: random_partition(n, j, rng).labels().to_vec(),
            }
        }
        "thm53_product_gap" => {
            let count = rng.random_range(1..=3);
            let components: Vec<RawKernel> = (0..count)
                .map(|_| {
                    let n = rng.random_range(2..=5);
                    let pi = random_density(n, rng);
                    RawKernel::from_kernel(&random_reversible(&pi, rng))
                })
                .collect();
            VerifyInstance::Thm53ProductGap {
                weights: random_weights(count, rng),
                components,
            }
        }
        "thm51_comparison" => {
            let n = rng.random_range(3..=8);
            let p = random_reversible_full_support(&random_density(n, rng), rng);
            let q = random_reversible(&random_density(n, rng), rng);
            let mut paths = Vec::new();
            for x in 0..n {
                for y in 0..n {
                    if x == y || q.stationary().get(x) * q.transition(x, y) <= 0.0 {
                        continue;
                    }
                    let path = if rng.random::<f64>() < 0.5 {
                        vec![x, y]
                    } else {
                        let mut w = rng.random_range(0..n);
                        while w == x || w == y {
                            w = rng.random_range(0..n);
                        }
                        vec![x, w, y]
                    };
                    paths.push(path);
                }
            }
            VerifyInstance::Thm51Comparison {
                base: RawKernel::from_kernel(&p),
                comparison: RawKernel::from_kernel(&q),
                paths,
                function_seed: rng.random(),
                functions: 100,
            }
        }
        "lemma_a1_power" => {
            let n = rng.random_range(3..=12);
            let k = random_reversible(&random_density(n, rng), rng);
            VerifyInstance::LemmaA1Power {
                kernel: RawKernel::from_kernel(&k),
                exponent: rng.random_range(2..=4),
            }
        }
        "lemma_a2_conjugation" => {
            let n = rng.random_range(3..=12);
            let pi = random_density(n, rng);
            VerifyInstance::LemmaA2Conjugation {
                inner: RawKernel::from_kernel(&random_reversible_nonneg(&pi, rng)),
                outer: RawKernel::from_kernel(&random_reversible(&pi, rng)),
            }
        }
        "lemma_51_thinning" => {
            let n = rng.random_range(3..=12);
            let k = random_reversible(&random_density(n, rng), rng);
            VerifyInstance::Lemma51Thinning {
                kernel: RawKernel::from_kernel(&k),
                factor: rng.random::<f64>(),
            }
        }
        "thm_a1_sqrt" => {
            let n = rng.random_range(4..=12);
            let pi = random_density(n, rng);
            let p = random_reversible_nonneg(&pi, rng);
            let q = random_reversible(&pi, rng);
            let j = rng.random_range(2..=3.min(n));
            VerifyInstance::ThmA1Sqrt {
                nonneg: RawKernel::from_kernel(&p),
                other: RawKernel::from_kernel(&q),
                blocks: random_partition(n, j, rng).labels().to_vec(),
            }
        }
        "eq6_swap_floor" => {
            let n = rng.random_range(2..=6);
            let lv = random_levels(n, rng.random_range(2..=4), rng);
            let j = rng.random_range(2..=n.min(3));
            VerifyInstance::Eq6SwapFloor {
                levels: levels_to_raw(&lv),
                blocks: random_partition(n, j, rng).labels().to_vec(),
            }
        }
        "eq8_overlap_chain" => {
            let n = rng.random_range(2..=6);
            let lv = random_levels(n, rng.random_range(2..=4), rng);
            let j = rng.random_range(2..=n.min(3));
            VerifyInstance::Eq8OverlapChain {
                levels: levels_to_raw(&lv),
                blocks: random_partition(n, j, rng).labels().to_vec(),
            }
        }
        "eq14_eq15_signature" => {
            let n = rng.random_range(3..=4);
            let n_levels = rng.random_range(2..=3);
            let target = random_density(n, rng);
            let mut betas: Vec<f64> = (0..n_levels - 1)
                .map(|i| 0.15 + 0.3 * i as f64 + 0.25 * rng.random::<f64>())
                .collect();
            betas.push(1.0);
            let ladder = TemperatureLadder::new(betas).unwrap();
            let levels = temper(&target, &ladder).unwrap();
            let components: Vec<RawKernel> = levels
                .levels()
                .iter()
                .map(|pi| RawKernel::from_kernel(&random_reversible(pi, rng)))
                .collect();
            VerifyInstance::Eq14Eq15Signature {
                target: target.weights().to_vec(),
                betas: ladder.betas().to_vec(),
                components,
                blocks: random_partition(n, 2, rng).labels().to_vec(),
            }
        }
        other => unreachable!("unknown property {other}"),
    }
}

const PROPERTIES: &[(&str, usize)] = &[
    ("thm52_sandwich", 100),
    ("thm53_product_gap", 50),
    ("thm51_comparison", 25),
    ("lemma_a1_power", 100),
    ("lemma_a2_conjugation", 100),
    ("lemma_51_thinning", 100),
    ("thm_a1_sqrt", 100),
    ("eq6_swap_floor", 100),
    ("eq8_overlap_chain", 100),
    ("eq14_eq15_signature", 20),
];

/// Default case counts per property, as used by the verify command.
pub fn default_case_counts() -> Vec<(&'static str, usize)> {
    PROPERTIES.to_vec()
}

fn property_stream(property: &str) -> u64 {
    // stable per-property stream id
    property
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x1000_0000_01b3)
        })
}

/// Runs one property battery.
pub fn run_property(
    property: &str,
    seed: u64,
    cases: usize,
    caps: &Caps,
) -> Result<PropertyOutcome> {
    let mut worst = f64::INFINITY;
    let mut failing = None;
    let mut pass = true;
    for case in 0..cases {
        let mut rng = RngStream::new(seed, property_stream(property).wrapping_add(case as u64)).rng();
        let instance = generate(property, &mut rng);
        let result = instance.check(caps)?;
        if result.margin < worst {
            worst = result.margin;
        }
        if result.margin < -result.tolerance && failing.is_none() {
            pass = false;
            failing = Some(instance);
        }
    }
    Ok(PropertyOutcome {
        property: property.to_string(),
        cases,
        worst_margin: worst,
        pass,
        failing_instance: failing,
    })
}

/// Runs every battery; `cases` overrides the per-property defaults.
pub fn run_all(seed: u64, cases: Option<usize>, caps: &Caps) -> Result<Vec<PropertyOutcome>> {
    PROPERTIES
        .iter()
        .map(|&(name, default)| run_property(name, seed, cases.unwrap_or(default), caps))
        .collect()
}

/// Re-checks a serialized instance; the verdict is deterministic.
pub fn replay(instance: &VerifyInstance, caps: &Caps) -> Result<PropertyOutcome> {
    let result = instance.check(caps)?;
    Ok(PropertyOutcome {
        property: instance.property_name().to_string(),
        cases: 1,
        worst_margin: result.margin,
        pass: result.margin >= -result.tolerance,
        failing_instance: if result.margin >= -result.tolerance {
            None
        } else {
            Some(instance.clone())
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_batteries_pass_smoke() {
        // small case counts here; the acceptance suite runs the full battery
        let outcomes = run_all(12345, Some(8), &Caps::default()).unwrap();
        for o in &outcomes {
            assert!(o.pass, "{} failed with margin {}", o.property, o.worst_margin);
        }
        assert_eq!(outcomes.len(), PROPERTIES.len());
    }

    #[test]
    fn replay_reproduces_verdict() {
        let caps = Caps::default();
        let mut rng = RngStream::new(7, property_stream("thm52_sandwich")).rng();
        let instance = generate("thm52_sandwich", &mut rng);
        let a = replay(&instance, &caps).unwrap();
        let b = replay(&instance, &caps).unwrap();
        assert_eq!(a.pass, b.pass);
        assert_eq!(a.worst_margin, b.worst_margin);
        // instances survive a serialization round trip
        let json = serde_json::to_string(&instance).unwrap();
        let back: VerifyInstance = serde_json::from_str(&json).unwrap();
        let c = replay(&back, &caps).unwrap();
        assert_eq!(a.worst_margin, c.worst_margin);
    }


    #[test]
    fn corrupted_instance_fails_validation() {
        let bad = VerifyInstance::Thm52Sandwich {
            kernel: RawKernel {
                matrix: vec![vec![0.5, 0.51], vec![0.5, 0.5]], // row sums 1.01
                stationary: vec![0.5, 0.5],
            },
            blocks: vec![0, 1],
        };
        assert!(matches!(
            replay(&bad, &Caps::default()),
            Err(Error::NotStochastic { .. })
        ));
    }
}

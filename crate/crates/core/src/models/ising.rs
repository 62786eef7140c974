//! Mean-field Ising model on {-1,+1}^M with single-site Metropolis dynamics,
//! and its exact lumping onto magnetization classes.
//!
//! The density depends on a configuration only through s = sum(z_i), and the
//! single-site proposal respects the class structure, so the chain lumps
//! exactly: the lumped chain on the M+1 classes s in {-M, -M+2, ..., M} has
//! the same spectral gap as the full 2^M chain, at every inverse temperature.
//! Tempering the full density by beta scales the coupling (pi^beta has
//! coupling beta*alpha) while the class multiplicities stay untempered, so
//! lumped level densities are built here rather than by powering the lumped
//! target.

use crate::density::DiscreteDensity;
use crate::kernel::{metropolis_hastings, spectral_gap, ExactKernel, Partition, RowStochastic};
use crate::sparse::spectral_gap_any;
use crate::temper::{swapping_chain, LevelDensities, TemperatureLadder};
use crate::{Caps, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IsingModel {
    pub m: usize,
    pub alpha: f64,
}

impl IsingModel {
    pub fn new(m: usize, alpha: f64) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidParameter("ising model needs at least one spin".into()));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("bad coupling alpha = {alpha}")));
        }
        Ok(IsingModel { m, alpha })
    }
}

/// Magnetization of a bit-encoded configuration (bit i set means spin i up).
pub fn magnetization(m: usize, config: usize) -> i64 {
    2 * (config.count_ones() as i64) - m as i64
}

/// pi(z) proportional to exp(alpha s^2 / 2M) on all 2^M configurations.
pub fn ising_density(model: &IsingModel, caps: &Caps) -> Result<DiscreteDensity> {
    if model.m >= usize::BITS as usize - 1 {
        return Err(Error::SizeCap {
            states: usize::MAX,
            cap: caps.max_states,
        });
    }
    let n = 1usize << model.m;
    caps.check(n)?;
    let mut logw = Vec::with_capacity(n);
    for z in 0..n {
        let s = magnetization(model.m, z) as f64;
        logw.push(model.alpha * s * s / (2.0 * model.m as f64));
    }
    normalize_log_weights(logw)
}

/// The lumped density on the M+1 magnetization classes, indexed by the
/// number of up spins u = 0..=M (so s = 2u - M).
pub fn ising_lumped_density(model: &IsingModel) -> DiscreteDensity {
    let m = model.m;
    let mut logw = Vec::with_capacity(m + 1);
    let lg_total = libm::lgamma(m as f64 + 1.0);
    for u in 0..=m {
        let s = (2 * u) as f64 - m as f64;
        // the inner sum is commutative, so classes u and M-u get bitwise
        // identical weights
        let ln_choose = lg_total - (libm::lgamma(u as f64 + 1.0) + libm::lgamma((m - u) as f64 + 1.0));
        logw.push(ln_choose + model.alpha * s * s / (2.0 * m as f64));
    }
    normalize_log_weights(logw).expect("lumped weights are finite and positive")
}

fn normalize_log_weights(mut logw: Vec<f64>) -> Result<DiscreteDensity> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for w in logw.iter_mut() {
        *w = (*w - max).exp();
    }
    DiscreteDensity::from_weights(logw)
}

/// Uniform single-spin-flip proposal on the full configuration space.
pub fn single_site_proposal(m: usize, caps: &Caps) -> Result<RowStochastic> {
    let n = 1usize << m;
    caps.check(n)?;
    let mut data = vec![0.0; n * n];
    let p = 1.0 / m as f64;
    for z in 0..n {
        for i in 0..m {
            data[z * n + (z ^ (1 << i))] = p;
        }
    }
    RowStochastic::new(n, data)
}

/// The single-spin-flip proposal lumped onto magnetization classes: from
/// class u propose u+1 with probability (M-u)/M (the share of down spins)
/// and u-1 with probability u/M.
pub fn lumped_single_site_proposal(m: usize) -> RowStochastic {
    let n = m + 1;
    let mut data = vec![0.0; n * n];
    for u in 0..=m {
        let up = (m - u) as f64 / m as f64;
        let down = u as f64 / m as f64;
        if u + 1 <= m {
            data[u * n + u + 1] = up;
        }
        if u >= 1 {
            data[u * n + u - 1] = down;
        }
        if u == 0 {
            // the u -> u-1 mass is structurally zero; row already sums to 1
        }
    }
    RowStochastic::new(n, data).expect("lumped proposal is stochastic")
}

/// Lumped tempered level densities: class weights C(M,u) exp(beta alpha s^2 / 2M).
pub fn lumped_levels(model: &IsingModel, ladder: &TemperatureLadder) -> LevelDensities {
    let levels = ladder
        .betas()
        .iter()
        .map(|&beta| {
            ising_lumped_density(&IsingModel {
                m: model.m,
                alpha: beta * model.alpha,
            })
        })
        .collect();
    LevelDensities::new(levels).expect("lumped levels share support")
}

/// Metropolis–Hastings chain on magnetization classes at inverse temperature
/// beta (the lumping of the full single-site chain for pi^beta).
pub fn lumped_level_chain(model: &IsingModel, beta: f64) -> ExactKernel {
    let density = ising_lumped_density(&IsingModel {
        m: model.m,
        alpha: beta * model.alpha,
    });
    metropolis_hastings(&lumped_single_site_proposal(model.m), &density)
        .expect("lumped chain is well-formed")
}

/// Mode partition on magnetization classes: block 0 is {s < 0}, block 1 is
/// {s >= 0}.
pub fn mode_partition_lumped(m: usize) -> Partition {
    let labels = (0..=m).map(|u| usize::from(2 * u >= m)).collect();
    Partition::new(labels).expect("both blocks nonempty")
}

/// Mode partition on full configurations.
pub fn mode_partition_full(m: usize, caps: &Caps) -> Result<Partition> {
    let n = 1usize << m;
    caps.check(n)?;
    Partition::new((0..n).map(|z| usize::from(magnetization(m, z) >= 0)).collect())
}

/// Exactness check for the lumping: the full-space and lumped Metropolis
/// chains must have equal spectral gaps at every ladder level, and so must
/// the full and lumped swapping chains when both fit the cap.
pub fn lumping_consistency_check(
    model: &IsingModel,
    ladder: &TemperatureLadder,
    caps: &Caps,
) -> Result<bool> {
    let full_proposal = single_site_proposal(model.m, caps)?;
    let lumped_proposal = lumped_single_site_proposal(model.m);
    let tol = crate::tol::SLACK;
    for &beta in ladder.betas() {
        let tempered = IsingModel {
            m: model.m,
            alpha: beta * model.alpha,
        };
        let full = metropolis_hastings(&full_proposal, &ising_density(&tempered, caps)?)?;
        let lumped = metropolis_hastings(&lumped_proposal, &ising_lumped_density(&tempered))?;
        if (spectral_gap(&full)? - spectral_gap(&lumped)?).abs() > tol {
            return Ok(false);
        }
    }
    let full_states = (1usize << model.m).checked_pow(ladder.count() as u32);
    let lumped_states = (model.m + 1).checked_pow(ladder.count() as u32);
    if let (Some(fs), Some(ls)) = (full_states, lumped_states) {
        if fs <= caps.max_states && ls <= caps.max_states {
            let full_levels = crate::temper::temper(&ising_density(model, caps)?, ladder)?;
            let full_components: Vec<ExactKernel> = full_levels
                .levels()
                .iter()
                .map(|pi| metropolis_hastings(&full_proposal, pi))
                .collect::<Result<_>>()?;
            let sc_full = swapping_chain(&full_levels, &full_components, caps)?;
            let lumped = lumped_levels(model, ladder);
            let lumped_components: Vec<ExactKernel> = ladder
                .betas()
                .iter()
                .map(|&b| lumped_level_chain(model, b))
                .collect();
            let sc_lumped = swapping_chain(&lumped, &lumped_components, caps)?;
            let g_full = spectral_gap_any(&sc_full, caps)?;
            let g_lumped = spectral_gap_any(&sc_lumped, caps)?;
            if (g_full - g_lumped).abs() > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::check_reversible;

    fn caps() -> Caps {
        Caps::default()
    }

    #[test]
    fn density_examples() {
        // alpha = 0: uniform
        let d = ising_density(&IsingModel::new(3, 0.0).unwrap(), &caps()).unwrap();
        for w in d.weights() {
            assert!((w - 1.0 / 8.0).abs() < 1e-15);
        }
        // M = 1: symmetry forces (1/2, 1/2)
        let d = ising_density(&IsingModel::new(1, 3.7).unwrap(), &caps()).unwrap();
        assert_eq!(d.weights(), &[0.5, 0.5]);
        // M = 3, alpha = 2: pi(+++) = e^3 / (2 e^3 + 6 e^{1/3})
        let d = ising_density(&IsingModel::new(3, 2.0).unwrap(), &caps()).unwrap();
        assert!((d.get(0b111) - 0.4137530337776694).abs() < 1e-14);
        assert!((d.get(0) - 0.4137530337776694).abs() < 1e-14);
    }

    #[test]
    fn lumped_density_examples() {
        // alpha = 0: binomial(M, 1/2)
        let d = ising_lumped_density(&IsingModel::new(4, 0.0).unwrap());
        let expect = [1.0, 4.0, 6.0, 4.0, 1.0].map(|c| c / 16.0);
        for (w, e) in d.weights().iter().zip(expect) {
            assert!((w - e).abs() < 1e-14);
        }
        // M = 3, alpha = 2: weights prop to (e^3, 3e^{1/3}, 3e^{1/3}, e^3)
        let d = ising_lumped_density(&IsingModel::new(3, 2.0).unwrap());
        assert!((d.get(0) - 0.4137530337776694).abs() < 1e-13);
        assert!((d.get(1) - 0.0862469662223306).abs() < 1e-13);
        // symmetry is bitwise
        for u in 0..=3 {
            assert_eq!(d.get(u), d.get(3 - u));
        }
    }

    #[test]
    fn lumped_matches_full_marginal() {
        let model = IsingModel::new(5, 1.3).unwrap();
        let full = ising_density(&model, &caps()).unwrap();
        let lumped = ising_lumped_density(&model);
        for u in 0..=5 {
            let s = 2 * u as i64 - 5;
            let marginal: f64 = (0..32)
                .filter(|&z| magnetization(5, z) == s)
                .map(|z| full.get(z))
                .sum();
            assert!((marginal - lumped.get(u)).abs() < 1e-13);
        }
    }

    #[test]
    fn lumped_proposal_examples() {
        // M = 1: from either class the single flip is forced
        let p = lumped_single_site_proposal(1);
        assert_eq!(p.get(0, 1), 1.0);
        assert_eq!(p.get(1, 0), 1.0);
        // M = 3: from s = 3 (u = 3) propose s = 1 with probability 1
        let p = lumped_single_site_proposal(3);
        assert_eq!(p.get(3, 2), 1.0);
        // from s = 1 (u = 2): up 1/3, down 2/3
        assert!((p.get(2, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.get(2, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn level_chains_are_reversible() {
        let model = IsingModel::new(7, 2.0).unwrap();
        for beta in [0.0, 0.4, 1.0] {
            let k = lumped_level_chain(&model, beta);
            assert!(check_reversible(&k, 1e-13));
        }
    }

    #[test]
    fn alpha_zero_lumped_gap_is_two_thirds() {
        // the M = 3 free chain lumps to a birth-death chain with eigenvalues
        // (1, 1/3, -1/3, -1)
        let k = lumped_level_chain(&IsingModel::new(3, 0.0).unwrap(), 1.0);
        assert!((spectral_gap(&k).unwrap() - 2.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn mode_partition_shapes() {
        let p = mode_partition_lumped(3);
        assert_eq!(p.labels(), &[0, 0, 1, 1]);
        let p = mode_partition_lumped(4);
        assert_eq!(p.labels(), &[0, 0, 1, 1, 1]);
        let p = mode_partition_full(2, &caps()).unwrap();
        assert_eq!(p.labels(), &[0, 1, 1, 1]); // s(00)=-2, s(01)=s(10)=0, s(11)=2
    }

    #[test]
    fn lumping_is_consistent_small() {
        // M = 3, N = 1 swapping chains both fit: 64 full vs 16 lumped states
        let model = IsingModel::new(3, 2.0).unwrap();
        let ladder = TemperatureLadder::linear(1).unwrap();
        assert!(lumping_consistency_check(&model, &ladder, &caps()).unwrap());
        // M = 5 single level: 32 full vs 6 lumped states
        let model = IsingModel::new(5, 2.0).unwrap();
        let ladder = TemperatureLadder::new(vec![1.0]).unwrap();
        assert!(lumping_consistency_check(&model, &ladder, &caps()).unwrap());
    }

    #[test]
    fn lumping_consistency_alpha_zero() {
        let model = IsingModel::new(4, 0.0).unwrap();
        let ladder = TemperatureLadder::linear(2).unwrap();
        assert!(lumping_consistency_check(&model, &ladder, &caps()).unwrap());
    }
}

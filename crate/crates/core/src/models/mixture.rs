//! Two-component normal mixtures in R^M, in the truncated form that assigns
//! each component to its own halfspace, with closed-form level masses, a
//! one-dimensional grid discretization, and Monte Carlo overlap estimators.
//!
//! The truncated density is
//!   pi(z) prop a N_M(z; -b 1, I) 1{sum z < 0} + (1-a) N_M(z; b 1, I) 1{sum z >= 0},
//! and its tempered version pi^beta keeps the same form with component
//! variances 1/beta and weights a^beta, (1-a)^beta. The normalizing constant
//! is (a^beta + (1-a)^beta) Phi(b sqrt(M beta)), so block masses have the
//! closed form a^beta / (a^beta + (1-a)^beta).

use super::std_normal_cdf;
use crate::density::DiscreteDensity;
use crate::kernel::RowStochastic;
use crate::temper::{LevelDensities, TemperatureLadder};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalMixtureModel {
    /// Dimension.
    pub m: usize,
    /// Mode offset: component means are -b 1 and b 1.
    pub b: f64,
    /// Weight of the component on {sum z < 0}.
    pub a: f64,
    /// Whether the tails are truncated to their halfspaces (all grid and
    /// closed-form machinery requires this).
    pub truncated: bool,
}

impl NormalMixtureModel {
    pub fn new(m: usize, b: f64, a: f64, truncated: bool) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::InvalidParameter(format!("mode offset b = {b} must be positive")));
        }
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidParameter(format!("weight a = {a} must lie in (0,1)")));
        }
        Ok(NormalMixtureModel { m, b, a, truncated })
    }

    fn require_truncated(&self) -> Result<()> {
        if !self.truncated {
            return Err(Error::InvalidParameter(
                "closed forms hold for the truncated mixture only".into(),
            ));
        }
        Ok(())
    }

    /// Log of the normalized tempered density at z (any dimension).
    pub fn log_tempered_density(&self, beta: f64, z: &[f64]) -> f64 {
        let m = self.m as f64;
        debug_assert_eq!(z.len(), self.m);
        let s: f64 = z.iter().sum();
        let (weight, center) = if s < 0.0 { (self.a, -self.b) } else { (1.0 - self.a, self.b) };
        let sq: f64 = z.iter().map(|&x| (x - center) * (x - center)).sum();
        let log_z = (self.a.powf(beta) + (1.0 - self.a).powf(beta)).ln()
            + std_normal_cdf(self.b * (m * beta).sqrt()).ln();
        beta * weight.ln() - beta * sq / 2.0 + 0.5 * m * (beta / (2.0 * std::f64::consts::PI)).ln()
            - log_z
    }

    /// Which mode block z belongs to: 0 for {sum z < 0}, 1 otherwise.
    pub fn block_of(&self, z: &[f64]) -> usize {
        usize::from(z.iter().sum::<f64>() >= 0.0)
    }
}

/// Closed-form block masses (pi_beta[A_1], pi_beta[A_2]) of the tempered
/// truncated mixture.
pub fn mixture_level_mass(model: &NormalMixtureModel, beta: f64) -> Result<(f64, f64)> {
    model.require_truncated()?;
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta = {beta} must be positive")));
    }
    let p = model.a.powf(beta);
    let q = (1.0 - model.a).powf(beta);
    Ok((p / (p + q), q / (p + q)))
}

/// A symmetric cell-centered grid on [-L, L]: n (even) points at
/// -L + (i + 1/2) h, so no point lies on the block boundary at zero and the
/// two halves mirror each other exactly.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Grid1d {
    points: Vec<f64>,
    spacing: f64,
    half_width: f64,
}

impl Grid1d {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "grid needs an even number of points >= 4, got {n}"
            )));
        }
        if !(half_width > 0.0) {
            return Err(Error::InvalidParameter("grid half-width must be positive".into()));
        }
        let spacing = 2.0 * half_width / n as f64;
        let points = (0..n)
            .map(|i| (2 * i as i64 + 1 - n as i64) as f64 * (0.5 * spacing))
            .collect();
        Ok(Grid1d {
            points,
            spacing,
            half_width,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Mode partition of the grid: block 0 = {z < 0}, block 1 = {z >= 0}.
    pub fn mode_partition(&self) -> crate::kernel::Partition {
        crate::kernel::Partition::new(self.points.iter().map(|&z| usize::from(z >= 0.0)).collect())
            .expect("both halves nonempty")
    }
}

/// Grid resolution settings; unset fields get spec defaults that adapt to
/// the coldest requested temperature.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub points: Option<usize>,
    pub half_width: Option<f64>,
}

impl GridSpec {
    /// The half-width must cover b + 8/sqrt(beta) for the smallest beta.
    pub fn resolve(&self, model: &NormalMixtureModel, beta_min: f64) -> Result<Grid1d> {
        let needed = model.b + (8.0 / beta_min.sqrt()).max(10.0);
        let half_width = self.half_width.unwrap_or(needed);
        if half_width + 1e-12 < model.b + 8.0 / beta_min.sqrt() {
            return Err(Error::InvalidParameter(format!(
                "half-width {half_width} below required {}",
                model.b + 8.0 / beta_min.sqrt()
            )));
        }
        let n = match self.points {
            Some(n) => n,
            None => {
                let raw = (2.0 * half_width / 0.005).ceil() as usize;
                raw + raw % 2
            }
        };
        Grid1d::new(half_width, n)
    }
}

/// The tempered truncated mixture discretized on a grid (dimension 1 only).
/// Errors if the grid misses more than 1e-6 of the exact mass.
pub fn mixture_tempered_density_1d(
    model: &NormalMixtureModel,
    beta: f64,
    grid: &Grid1d,
) -> Result<DiscreteDensity> {
    model.require_truncated()?;
    if model.m != 1 {
        return Err(Error::InvalidParameter(
            "grid discretization is one-dimensional; use Monte Carlo for M > 1".into(),
        ));
    }
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("beta = {beta} must be positive")));
    }
    let wa = model.a.powf(beta);
    let wb = (1.0 - model.a).powf(beta);
    let norm = (beta / (2.0 * std::f64::consts::PI)).sqrt();
    let values: Vec<f64> = grid
        .points()
        .iter()
        .map(|&z| {
            let (w, c) = if z < 0.0 { (wa, -model.b) } else { (wb, model.b) };
            w * norm * (-beta * (z - c) * (z - c) / 2.0).exp()
        })
        .collect();
    let exact = (wa + wb) * std_normal_cdf(model.b * beta.sqrt());
    let grid_mass: f64 = crate::stats::compensated_sum(values.iter().copied()) * grid.spacing();
    let deficit = (grid_mass - exact).abs() / exact;
    if deficit > 1e-6 {
        return Err(Error::GridTooCoarse { deficit });
    }
    DiscreteDensity::from_weights(values)
}

/// All ladder levels on a shared grid (resolved against the coldest beta).
pub fn mixture_grid_levels(
    model: &NormalMixtureModel,
    ladder: &TemperatureLadder,
    spec: &GridSpec,
) -> Result<(Grid1d, LevelDensities)> {
    let beta_min = ladder.betas()[0];
    if !(beta_min > 0.0) {
        return Err(Error::InvalidParameter(
            "mixture grids need beta_0 > 0 (the flat level has no normalizable tail)".into(),
        ));
    }
    let grid = spec.resolve(model, beta_min)?;
    let levels = ladder
        .betas()
        .iter()
        .map(|&beta| mixture_tempered_density_1d(model, beta, &grid))
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, LevelDensities::new(levels)?))
}

/// Uniform proposal over grid points within `radius` of the current point
/// (self excluded); mass proposed beyond the grid edge stays put, keeping the
/// matrix symmetric. Requires spacing <= radius/4.
pub fn ball_proposal_1d(radius: f64, grid: &Grid1d) -> Result<RowStochastic> {
    if grid.spacing() > radius / 4.0 {
        return Err(Error::InvalidParameter(format!(
            "grid spacing {} coarser than radius/4 = {}",
            grid.spacing(),
            radius / 4.0
        )));
    }
    let slots = (radius / grid.spacing() + 1e-9).floor() as i64;
    let n = grid.len();
    let p = 1.0 / (2 * slots) as f64;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let mut used = 0i64;
        for d in 1..=slots {
            for j in [i as i64 - d, i as i64 + d] {
                if j >= 0 && (j as usize) < n {
                    data[i * n + j as usize] = p;
                    used += 1;
                }
            }
        }
        data[i * n + i] = ((2 * slots - used) as f64 * p).max(0.0);
    }
    RowStochastic::new(n, data)
}

/// Eq.-(12) boundary band mass [Phi(b) - Phi(b(1 - 1/M))]/Phi(b) of the
/// hottest useful level pi_{1/M} restricted to A_2.
pub fn boundary_mass(model: &NormalMixtureModel, m: usize) -> f64 {
    let b = model.b;
    let phi_b = std_normal_cdf(b);
    (phi_b - std_normal_cdf(b * (1.0 - 1.0 / m as f64))) / phi_b
}

/// The geometric-ladder overlap floor 1/(2 sqrt(M)).
pub fn overlap_floor(m: usize) -> f64 {
    0.5 / (m as f64).sqrt()
}

/// The weighted-mixture overlap floor c^{-1}/(2 sqrt(M)) for a declared
/// constant c with a/(1-a) <= c^M.
pub fn delta_weighted_floor(c: f64, m: usize) -> f64 {
    1.0 / (c * 2.0 * (m as f64).sqrt())
}

/// gamma(A) from the closed-form level masses; for a >= 1/2 the A_1 mass is
/// nondecreasing in beta and the result is at least 1/2.
pub fn gamma_weighted_bound(model: &NormalMixtureModel, ladder: &TemperatureLadder) -> Result<f64> {
    model.require_truncated()?;
    let masses: Vec<(f64, f64)> = ladder
        .betas()
        .iter()
        .map(|&beta| mixture_level_mass(model, beta))
        .collect::<Result<_>>()?;
    let mut gamma: f64 = f64::INFINITY;
    for block in 0..2 {
        let pick = |pair: &(f64, f64)| if block == 0 { pair.0 } else { pair.1 };
        let mut product = 1.0;
        for k in 1..masses.len() {
            product *= (pick(&masses[k - 1]) / pick(&masses[k])).min(1.0);
        }
        gamma = gamma.min(product);
    }
    Ok(gamma)
}

fn sample_tempered<R: Rng + ?Sized>(
    model: &NormalMixtureModel,
    beta: f64,
    rng: &mut R,
    z: &mut Vec<f64>,
) {
    let wa = model.a.powf(beta);
    let wb = (1.0 - model.a).powf(beta);
    let sd = 1.0 / beta.sqrt();
    loop {
        let left = rng.random::<f64>() * (wa + wb) < wa;
        let center = if left { -model.b } else { model.b };
        z.clear();
        let mut sum = 0.0;
        for _ in 0..model.m {
            let g: f64 = StandardNormal.sample(rng);
            let v = center + sd * g;
            sum += v;
            z.push(v);
        }
        if (sum < 0.0) == left {
            return;
        }
    }
}

/// Monte Carlo estimate (mean, standard error) of the Madras–Randall-style
/// overlap between two tempered levels: E under pi_{beta_l} of
/// min(1, pi_{beta_k}/pi_{beta_l}).
pub fn mc_min_overlap<R: Rng + ?Sized>(
    model: &NormalMixtureModel,
    beta_k: f64,
    beta_l: f64,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    model.require_truncated()?;
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least 2 samples".into()));
    }
    let mut z = Vec::with_capacity(model.m);
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..samples {
        sample_tempered(model, beta_l, rng, &mut z);
        let r = (model.log_tempered_density(beta_k, &z) - model.log_tempered_density(beta_l, &z))
            .exp()
            .min(1.0);
        sum += r;
        sumsq += r * r;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sumsq - sum * sum / n) / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Monte Carlo estimate of the block-relative overlap delta(A) for the
/// mode partition: the minimum over ordered adjacent level pairs (k, l) and
/// blocks j of E under pi_k restricted to A_j of min(1, pi_l/pi_k).
/// Returns the minimizing estimate with its standard error.
pub fn mc_delta<R: Rng + ?Sized>(
    model: &NormalMixtureModel,
    ladder: &TemperatureLadder,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    model.require_truncated()?;
    let betas = ladder.betas();
    let mut best = (f64::INFINITY, 0.0);
    let mut z = Vec::with_capacity(model.m);
    for k in 0..betas.len() {
        for l in [k.wrapping_sub(1), k + 1] {
            if l >= betas.len() {
                continue;
            }
            for block in 0..2usize {
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                let mut taken = 0usize;
                // rejection-sample pi_k conditioned on the block
                while taken < samples {
                    sample_tempered(model, betas[k], rng, &mut z);
                    if model.block_of(&z) != block {
                        continue;
                    }
                    let r = (model.log_tempered_density(betas[l], &z)
                        - model.log_tempered_density(betas[k], &z))
                    .exp()
                    .min(1.0);
                    sum += r;
                    sumsq += r * r;
                    taken += 1;
                }
                let n = samples as f64;
                let mean = sum / n;
                let var = ((sumsq - sum * sum / n) / (n - 1.0)).max(0.0);
                if mean < best.0 {
                    best = (mean, (var / n).sqrt());
                }
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn model(a: f64, b: f64) -> NormalMixtureModel {
        NormalMixtureModel::new(1, b, a, true).unwrap()
    }

    #[test]
    fn level_mass_examples() {
        let half = model(0.5, 1.0);
        for beta in [0.2, 0.5, 1.0] {
            let (m1, m2) = mixture_level_mass(&half, beta).unwrap();
            assert_eq!(m1, 0.5);
            assert_eq!(m2, 0.5);
        }
        let w = model(0.75, 2.0);
        let (m1, m2) = mixture_level_mass(&w, 1.0).unwrap();
        assert!((m1 - 0.75).abs() < 1e-15);
        assert!((m2 - 0.25).abs() < 1e-15);
        let (m1, _) = mixture_level_mass(&w, 0.5).unwrap();
        assert!((m1 - 0.6339745962155613).abs() < 1e-14);
        assert!(mixture_level_mass(&w, 0.0).is_err());
        // monotone in beta for a >= 1/2
        let mut last = 0.0;
        for beta in [0.1, 0.3, 0.5, 0.7, 1.0] {
            let (m1, _) = mixture_level_mass(&w, beta).unwrap();
            assert!(m1 >= last);
            last = m1;
        }
    }

    #[test]
    fn grid_masses_match_closed_form() {
        let w = model(0.75, 2.0);
        let ladder = TemperatureLadder::union(2).unwrap();
        let (grid, levels) = mixture_grid_levels(&w, &ladder, &GridSpec::default()).unwrap();
        let partition = grid.mode_partition();
        for (k, &beta) in ladder.betas().iter().enumerate() {
            let (m1, _) = mixture_level_mass(&w, beta).unwrap();
            let masses = partition.masses(levels.level(k)).unwrap();
            assert!(
                (masses[0] - m1).abs() < 1e-4,
                "beta {beta}: grid {} vs closed {m1}",
                masses[0]
            );
        }
    }

    #[test]
    fn symmetric_grid_density_is_symmetric() {
        let half = model(0.5, 1.0);
        let grid = Grid1d::new(11.0, 4400).unwrap();
        let d = mixture_tempered_density_1d(&half, 1.0, &grid).unwrap();
        let n = grid.len();
        for i in 0..n / 2 {
            assert_eq!(d.get(i), d.get(n - 1 - i));
        }
    }

    #[test]
    fn grid_matches_temper_route() {
        // powering the discretized target equals discretizing the tempered
        // density (pointwise powers, shared normalization)
        let w = model(0.6, 1.5);
        let ladder = TemperatureLadder::new(vec![0.5, 1.0]).unwrap();
        let (grid, direct) = mixture_grid_levels(&w, &ladder, &GridSpec::default()).unwrap();
        let target = mixture_tempered_density_1d(&w, 1.0, &grid).unwrap();
        let via_temper = crate::temper::temper(&target, &ladder).unwrap();
        for (x, y) in direct.level(0).weights().iter().zip(via_temper.level(0).weights()) {
            assert!((x - y).abs() < 1e-12 * y.max(1e-300));
        }
    }

    #[test]
    fn too_coarse_grid_is_rejected() {
        let w = model(0.75, 2.0);
        let grid = Grid1d::new(12.0, 60).unwrap();
        assert!(matches!(
            mixture_tempered_density_1d(&w, 1.0, &grid),
            Err(Error::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn ball_proposal_shapes() {
        let grid = Grid1d::new(1.0, 100).unwrap(); // spacing 0.02
        let prop = ball_proposal_1d(0.1, &grid).unwrap(); // 5 slots each side
        // interior point: 10 neighbors at 1/10
        let i = 50;
        assert_eq!(prop.get(i, i), 0.0);
        assert!((prop.get(i, i + 5) - 0.1).abs() < 1e-15);
        assert_eq!(prop.get(i, i + 6), 0.0);
        // symmetry everywhere, including edges
        for x in 0..grid.len() {
            for y in 0..grid.len() {
                if x != y {
                    assert_eq!(prop.get(x, y), prop.get(y, x));
                }
            }
        }
        // edge point keeps the out-of-grid mass
        assert!((prop.get(0, 0) - 0.5).abs() < 1e-15);
        // precondition: spacing must be at most radius/4
        assert!(ball_proposal_1d(0.05, &grid).is_err());
    }

    #[test]
    fn boundary_mass_examples() {
        let w = model(0.5, 1.0);
        assert!((boundary_mass(&w, 2) - 0.17814609943771986).abs() < 1e-14);
        // monotone decreasing in M, tending to zero
        let mut last = f64::INFINITY;
        for m in 2..=50 {
            let v = boundary_mass(&w, m);
            assert!(v < last);
            last = v;
        }
        assert!(boundary_mass(&w, 4000) < 1e-3);
    }

    #[test]
    fn floors() {
        assert!((overlap_floor(4) - 0.25).abs() < 1e-15);
        assert!((overlap_floor(1) - 0.5).abs() < 1e-15);
        // c = 1 reduces to the symmetric floor 1/(2 sqrt(M))
        assert!((delta_weighted_floor(1.0, 4) - 0.25).abs() < 1e-15);
        assert!((delta_weighted_floor(2.0, 4) - 0.125).abs() < 1e-15);
        assert!((delta_weighted_floor(3f64.sqrt(), 2) - 0.2041241452319315).abs() < 1e-15);
    }

    #[test]
    fn gamma_weighted_examples() {
        let half = model(0.5, 1.0);
        let ladder = TemperatureLadder::union(2).unwrap();
        assert_eq!(gamma_weighted_bound(&half, &ladder).unwrap(), 1.0);
        let w = model(0.75, 2.0);
        let g = gamma_weighted_bound(&w, &ladder).unwrap();
        assert!((g - 0.8452994616207484).abs() < 1e-14);
        assert!(g >= 0.5);
        // a -> 1 with small beta_0 pushes gamma toward 1/2 from above
        let extreme = model(0.999, 2.0);
        let wide = TemperatureLadder::new(vec![0.01, 1.0]).unwrap();
        let g = gamma_weighted_bound(&extreme, &wide).unwrap();
        assert!(g >= 0.5 && g < 0.55);
    }

    #[test]
    fn mc_overlap_agrees_with_grid() {
        let half = model(0.5, 1.0);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let (est, se) = mc_min_overlap(&half, 0.5, 1.0, 40_000, &mut rng).unwrap();
        // grid oracle for the same integral
        let grid = Grid1d::new(13.0, 5200).unwrap();
        let d0 = mixture_tempered_density_1d(&half, 0.5, &grid).unwrap();
        let d1 = mixture_tempered_density_1d(&half, 1.0, &grid).unwrap();
        let exact: f64 = d0
            .weights()
            .iter()
            .zip(d1.weights())
            .map(|(x, y)| x.min(*y))
            .sum();
        assert!(
            (est - exact).abs() < 5.0 * se.max(1e-4),
            "mc {est} +- {se} vs grid {exact}"
        );
    }
}

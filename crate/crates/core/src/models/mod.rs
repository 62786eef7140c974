//! The concrete target distributions: mean-field Ising (full and
//! magnetization-lumped) and two-component truncated normal mixtures.

mod ising;
mod mixture;

pub use ising::{
    ising_density, ising_lumped_density, lumped_level_chain, lumped_levels,
    lumped_single_site_proposal, lumping_consistency_check, magnetization, mode_partition_full,
    mode_partition_lumped, single_site_proposal, IsingModel,
};
pub use mixture::{
    ball_proposal_1d, boundary_mass, delta_weighted_floor, gamma_weighted_bound,
    mc_delta, mc_min_overlap, mixture_grid_levels, mixture_level_mass,
    mixture_tempered_density_1d, overlap_floor, Grid1d, GridSpec, NormalMixtureModel,
};

/// Standard normal CDF, accurate to full double precision via erfc.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

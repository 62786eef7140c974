//! Exact tempered-MCMC laboratory.
//!
//! Builds parallel-tempering (swapping) and simulated-tempering Markov chains
//! as explicit transition matrices on finite state spaces, computes
//! decomposition-based spectral-gap lower bounds together with all of their
//! ingredients (overlap, block-mass decay, restricted and projected gaps), and
//! checks the bounds against exactly computed gaps on concrete models:
//! the mean-field Ising model (with exact magnetization lumping) and
//! one-dimensional truncated normal mixtures on a grid. A seeded simulation
//! layer covers models too large for exact matrices.
//!
//! The crate is organized to mirror the math:
//!
//! * [`density`] / [`kernel`] — reversible kernel algebra: construction,
//!   restriction, projection, composition, Dirichlet forms, spectral gaps.
//! * [`sparse`] — CSR storage and a thick-restart Lanczos second-eigenvalue
//!   solver for product chains too large to densify.
//! * [`temper`] — temperature ladders, tempered level densities, and the
//!   swapping / simulated-tempering chain constructions.
//! * [`models`] — mean-field Ising (full and lumped) and truncated normal
//!   mixtures, with their canonical mode partitions.
//! * [`bounds`] — the spectral-gap lower bounds and every constituent
//!   quantity, plus the signature decomposition of the swapping chain.
//! * [`simulate`] — seeded trajectory simulation with mixing diagnostics.
//! * [`verify`] — randomized property batteries with replayable instances.

pub mod bounds;
pub mod density;
pub mod kernel;
pub mod models;
pub mod random;
pub mod simulate;
pub mod sparse;
pub mod stats;
pub mod temper;
pub mod verify;

pub use density::{tv_distance, DiscreteDensity, StateSpace};
pub use kernel::{ExactKernel, Partition, RowStochastic};
pub use temper::TemperatureLadder;

/// Numerical tolerances used by constructors and checks.
///
/// These are fixed by the double-precision eigensolvers underneath: row sums
/// and density normalizations are exact up to accumulated rounding (1e-12),
/// detailed balance survives one extra multiplication (1e-10), and inequality
/// slack in property checks allows for eigenvalue rounding (1e-9).
pub mod tol {
    /// Row-stochasticity and density normalization.
    pub const ROW_SUM: f64 = 1e-12;
    /// Detailed balance: max |pi(x)P(x,y) - pi(y)P(y,x)|.
    pub const DETAILED_BALANCE: f64 = 1e-10;
    /// Slack for inequalities between exactly computed spectral quantities.
    pub const SLACK: f64 = 1e-9;
    /// Convergence target for the iterative second-eigenvalue solver.
    pub const LANCZOS_RESIDUAL: f64 = 1e-11;
}

/// State-count limits for materializing chains.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Caps {
    /// Largest state space for which a chain is constructed at all
    /// (sparse storage).
    pub max_states: usize,
    /// Largest state space for which dense matrices and dense
    /// eigendecompositions are used; above this the iterative solver runs.
    pub dense_cap: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_states: 200_000,
            dense_cap: 2048,
        }
    }
}

impl Caps {
    pub fn check(&self, states: usize) -> Result<()> {
        if states > self.max_states {
            Err(Error::SizeCap {
                states,
                cap: self.max_states,
            })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("kernel is not reversible: max detailed-balance violation {violation}")]
    NotReversible { violation: f64 },
    #[error("kernel is not nonnegative definite: smallest eigenvalue {min_eigenvalue}")]
    NotNonnegativeDefinite { min_eigenvalue: f64 },
    #[error("density is not normalized: sum {sum}")]
    NotNormalized { sum: f64 },
    #[error("density has empty support")]
    EmptySupport,
    #[error("state {index} has zero stationary mass")]
    ZeroMassState { index: usize },
    #[error("partition block {block} has zero mass")]
    ZeroMassBlock { block: usize },
    #[error("partition block {block} is empty")]
    EmptyBlock { block: usize },
    #[error("subset is empty")]
    EmptySubset,
    #[error("invalid temperature ladder: {0}")]
    InvalidLadder(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{states} states exceed the cap of {cap}; use a lumped model or the simulation layer")]
    SizeCap { states: usize, cap: usize },
    #[error("grid too coarse or narrow: pre-normalization mass deficit {deficit}")]
    GridTooCoarse { deficit: f64 },
    #[error("comparison path missing for edge ({from}, {to})")]
    MissingPath { from: usize, to: usize },
    #[error("path edge ({from}, {to}) carries no flow in the base chain")]
    PathEdgeNotInSupport { from: usize, to: usize },
    #[error("eigenvalue iteration did not converge within {matvecs} operator applications")]
    NotConverged { matvecs: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

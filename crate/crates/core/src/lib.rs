//! Simulation and inference for directed binary stochastic block models.
//!
//! The crate covers four workflows around one parameterization
//! ([`SbmParams`]): sampling labeled graphs, exact likelihoods and posteriors
//! by enumeration at small `n`, variational EM at large `n`, and closed-form
//! parameter recovery from graph moments. A small experiment harness drives
//! consistency and concentration sweeps over these fitters, and `io` pins the
//! on-disk formats used by the `sbm-lab` binary.

// Index loops here usually walk two structures in lockstep (pi[a][b] against a
// count table, say); rewriting them around iterators hides the symmetry.
#![allow(clippy::needless_range_loop)]

pub mod assumptions;
pub mod error;
pub mod exact;
pub mod fit;
pub mod graph;
pub mod harness;
pub mod io;
pub mod moments;
pub mod params;
pub mod symmetry;
pub mod util;
pub mod variational;

pub use assumptions::{check_assumptions, AssumptionReport};
pub use error::{Result, SbmError};
pub use exact::{
    complete_loglik, exact_em_fit, marginal_loglik, posterior_ratio_stat, posterior_table,
    PosteriorTable,
};
pub use fit::FitResult;
pub use graph::{sample_graph, LabeledGraph, RNG_SCHEME};
pub use harness::{
    run_concentration_experiment, run_consistency_sweep, run_moment_experiment, Method,
    SweepConfig, SweepRow,
};
pub use moments::{
    moments_analytic, moments_empirical, moments_from_graph, recover_from_moments,
    recover_q2_n4, MomentOrientation, MomentSet, MomentSource, RecoveryOptions, RecoveryResult,
};
pub use params::SbmParams;
pub use symmetry::{label_error, param_distance, symmetry_group, ParamDistance, Permutation};
pub use variational::{elbo, m_step, update_tau, vem_fit, TauMatrix, VemOptions};

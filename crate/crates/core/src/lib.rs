//! Expectation-maximization for an overspecified Gaussian mixture whose means
//! sit on a regular simplex orbit `mu_j = R^j theta`, fitted to N(0, I) data.
//!
//! The crate covers the population and sample EM operators, KL tracking,
//! spectral and Polyak-Lojasiewicz diagnostics at the optimum `theta = 0`, and
//! the Lloyd (k-means) fixed point used for initialization.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod engine;
pub mod error;
pub mod lloyd;
pub mod mixture;
pub mod par;
pub mod population;
pub mod quadrature;
pub mod rng;
pub mod sample;
pub mod simplex;
pub mod stats;

pub use dataset::{generate_dataset, Dataset, DatasetOptions};
pub use engine::{EngineMode, Expectation, ExpectationEngine, Integrand, ScalarEstimate, VectorEstimate};
pub use error::{OveremError, Result};
pub use mixture::{log_density, responsibilities, weight_dft, MixtureSpec, ThetaState};
pub use par::Execution;
pub use simplex::{build_simplex, check_frame, FrameReport, SimplexFrame};
pub use lloyd::{
    em_init_from_kmeans, population_lloyd_fixed_radius, population_lloyd_radius, population_lloyd_update,
    run_sample_kmeans, LloydConfig, LloydInit,
};
pub use population::{
    em_operator, grad_neg_log_likelihood, jacobian_check, kl_to_standard_normal, neg_log_likelihood,
    pl_inequality_probe, run_population_em, spectral_report, EmTrace, RunOptions, SpectralReport, UpdateRule,
};
pub use sample::{perturbation_probe, run_sample_em, sample_em_operator, SampleRunOptions};

//! Estimators for longitudinal panels whose individual heterogeneity follows
//! a factor model, `Y = Z theta + A delta + eps`, together with numerical
//! checks of how GLS compresses selection bias and seeded generators for
//! Monte Carlo studies.
//!
//! ```
//! use lvpanel::{gamma, ScalarVarianceComponents};
//!
//! let vc = ScalarVarianceComponents::from_rho(0.7).unwrap();
//! let (_, gamma_t) = gamma(&vc, 5);
//! assert!((gamma_t - 0.9211).abs() < 1e-4);
//! ```

pub mod covariance;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod panel;
pub mod rng;
pub mod simgen;

pub use covariance::{assemble_block_covariance, subset_block, BlockCovariance, CovarianceBlock, HeterogeneityModel};
pub use error::{PanelError, Result};
pub use estimators::{
    class_means, estimate_r_mom, feasible_gls, feasible_gls_with, fixed_effects, gamma, gls_known_r, ols,
    ols_sampling_cov, quasi_demeaned, re_quasi_demeaned, EstimateResult, EstimatorTag, MomEstimate, MomOptions,
};
pub use panel::{
    validate_design, within_projection, ObservationMask, PanelDesign, RankReport, ScalarVarianceComponents,
    StudentBlock,
};

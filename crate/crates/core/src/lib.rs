//! Average treatment effect estimation through the Riesz representer.
//!
//! The crate estimates the balancing weights `α(d, x) = d/e(x) - (1-d)/(1-e(x))`
//! by Bregman-Riesz regression, checks them against their covariate-balancing
//! duals, fluctuates outcome regressions with TMLE and assembles IPW, plug-in,
//! one-step, TMLE and matching estimates.
//!
//! ```
//! use neyman::prelude::*;
//!
//! let spec = DgpSpec::linear_logit(2);
//! let (ds, truth) = simulate(&spec, 500, 11).unwrap();
//!
//! let outcome_basis = BasisSpec::new(BasisKind::RawIntercept, true, 2).unwrap();
//! let mu = fit_outcome(&ds, &outcome_basis).unwrap();
//!
//! let riesz_basis = BasisSpec::new(BasisKind::RawIntercept, false, 2).unwrap();
//! let alpha = fit_riesz(ConvexSpec::KL, &riesz_basis, &ds, &FitConfig::default()).unwrap();
//!
//! let report = estimate_tmle(&ds, &mu, &alpha.pair).unwrap();
//! assert!((report.tau_hat - truth).abs() < 5.0 * report.std_error);
//! ```
//!
//! The guide in `book/` walks through the concepts; its snippets are compiled
//! and run as doctests of this crate.

pub mod balance;
pub mod basis;
pub mod data;
pub mod error;
pub mod estimators;
mod linalg;
pub mod matching;
pub mod outcome;
pub mod riesz;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::balance::{
        balance_residual_eb, balance_residual_sbw, solve_eb_dual, solve_sbw_dual, BalanceReport,
        Provenance, UnitWeights,
    };
    pub use crate::basis::{build_voronoi_basis, BasisKind, BasisSpec, Metric};
    pub use crate::data::{load_csv, simulate, write_csv, Dataset, DgpSpec};
    pub use crate::error::{Error, Result};
    pub use crate::estimators::{
        error_decomposition, estimate_ipw, estimate_onestep, estimate_plugin, estimate_tmle,
        neyman_error, EstimateReport, EstimatorKind,
    };
    pub use crate::matching::{
        estimate_matching, match_units, matching_weights, verify_matching_riesz_equivalence,
    };
    pub use crate::outcome::{fit_outcome, tmle_update, OutcomeModel};
    pub use crate::riesz::{
        bregman_pointwise, empirical_objective, fit_riesz, ConvexSpec, FitConfig, LossKind,
        RieszWeightPair,
    };
}

// The guide's chapters double as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/representer.md")]
    mod representer {}
    #[doc = include_str!("../../../book/src/bregman.md")]
    mod bregman {}
    #[doc = include_str!("../../../book/src/balancing.md")]
    mod balancing {}
    #[doc = include_str!("../../../book/src/tmle.md")]
    mod tmle {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

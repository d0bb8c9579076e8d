//! Covariate balance between two study arms drawn from a finite population.
//!
//! Standardized mean differences, the ad hoc "at most r covariates beyond δ"
//! check and its normal-binomial approximation, and pseudo p-values computed
//! against a reference distribution of splits drawn under an ideal scheme.

pub mod approx;
pub mod data;
pub mod error;
pub mod pseudo_p;
pub mod reference;
pub mod rng;
pub mod sampling;
pub mod simulation;
pub mod summary;

pub use data::{adhoc_assess, count_imbalanced, smd, BalanceConfig, Population, SmdVector, SplitSample};
pub use error::{Error, Result};
pub use pseudo_p::{assess, assess_with_reference, Assessor, BalanceReport, Grid, GridSpec};
pub use reference::{Provenance, ReferenceSet};
pub use rng::SeededRng;
pub use sampling::{build_reference, ReferenceMode, SamplingScheme, SchemeKind};

//! Statistics for Poisson counting experiments: confidence and credible
//! intervals, p-values and sensitivity, toy-based coverage checks, result
//! combination, and goodness-of-fit tests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod combine;
pub mod coverage;
pub mod error;
pub mod frequentist;
pub mod gof;
pub mod interval;
pub mod model;
pub mod poisson;
pub mod profile;
pub mod quad;
pub mod rng;
pub mod significance;
pub mod special;

pub use error::{Error, Result};
pub use interval::{IntervalMethod, IntervalResult};
pub use model::{
    CountingModel, Nuisance, NuisanceValues, Observation, SubsidiaryCounts, SubsidiaryForm,
};

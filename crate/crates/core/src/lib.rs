//! Convex pairwise-difference estimators: kernel-weighted U-statistic
//! objectives for partially linear regression, logit and Tobit models,
//! generalized-jackknife debiasing across a bandwidth ladder, and a
//! bandwidth-rescaled nonparametric bootstrap.

pub mod data;
pub mod inference;
pub mod dgp;
pub mod jackknife;
pub mod kernel;
pub mod models;
pub mod objective;
pub mod oracle;
pub mod solver;
pub mod rng;
pub mod sum;

pub use data::{DataError, Dataset, Observation, ObservationRef};
pub use dgp::{DgpConfig, GammaShape, WDesign};
pub use jackknife::DebiasPlan;
pub use kernel::{EquivalentKernel, KernelFamily, KernelSpec};
pub use models::PairwiseModel;

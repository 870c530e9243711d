//! Independent checks: exact enumeration of sampled-tree laws, quadrature,
//! goodness-of-fit statistics and the adjudication reports built on them.

mod adjudicate;
mod enumerate;
pub mod quadrature;
pub mod stats;

use crate::likelihood::LikError;
use crate::model::ModelError;
use thiserror::Error;

pub use adjudicate::{
    adjudicate_cdf, adjudicate_density, cdf_hand_case, repeated_value_case,
    verify_mixture_identity, AdjudicationGrid, AdjudicationReport, Cell, HandCase, MixtureReport,
    MixtureRow, Reference, RepeatedValueCase, VariantVerdict, Verdict, MATCH_TOLERANCE,
};
pub use enumerate::{
    brute_force_joint, enumerate_cpp, exact_sampled_law, joint_by_tip_count, CppEnumeration,
    ExactLaw, JointLaw, SamplingScheme, MAX_STATES, RESIDUAL_TARGET,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration needs {states:e} states, above the budget")]
    StateSpaceTooLarge { states: f64 },
    #[error("tree height must be at least 1")]
    ZeroHeight,
    #[error("sample size must be at least 1")]
    ZeroSample,
    #[error("sampling probability {0} outside (0, 1]")]
    BadProbability(f64),
    #[error("n_max = {n_max} is below the sample size {k}")]
    HorizonTooSmall { n_max: usize, k: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Likelihood(#[from] LikError),
}

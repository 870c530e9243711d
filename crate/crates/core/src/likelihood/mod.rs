//! Exact likelihoods of CPP(T) trees under the three observation regimes.
//!
//! * full trees: `P(H > T) prod P(H = x_i)`, optionally conditioned on the
//!   tip count;
//! * Bernoulli(y)-sampled trees: the same with the thinned law;
//! * uniform `k`-samples: the composition-sum density at a fixed total tip
//!   count, its closed-form joint CDF, and the marginal likelihood obtained by
//!   mixing Bernoulli likelihoods over `mu_k`.
//!
//! The composition-sum density and the closed-form CDF exist in two variants
//! ([`FormulaVariant`]); the [`crate::oracle`] module decides between them.

mod ksample;

use crate::model::{Kernel, LfParams, ModelError};
use crate::oracle::quadrature::QuadError;
use crate::tree::DepthSeq;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ksample::{
    compositions, ksample_cdf_closed, ksample_cdf_closed_raw, ksample_cdf_direct,
    ksample_lik_direct, ksample_ln_lik_direct, ksample_marginal_lik, ksample_marginal_loglik,
    ClosedCdf, DistinctDepthSummary, MARGINAL_REL_TOL, MAX_COMPOSITIONS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("depth {depth} outside [1, {height}]")]
    InvalidDepth { depth: u64, height: u64 },
    #[error("{count} compositions exceed the enumeration cap")]
    MTooLarge { count: f64 },
    #[error("sampling probability {0} outside (0, 1]")]
    BadProbability(f64),
    #[error("summary describes {summary} tips but k = {k}")]
    SizeMismatch { summary: usize, k: usize },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Which reading of a contested formula produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormulaVariant {
    /// Exactly as printed.
    PaperStated,
    /// With the counting or exponent fix that redoing the derivation gives.
    DerivationCorrected,
}

impl FormulaVariant {
    pub const ALL: [FormulaVariant; 2] = [
        FormulaVariant::PaperStated,
        FormulaVariant::DerivationCorrected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FormulaVariant::PaperStated => "paper-stated",
            FormulaVariant::DerivationCorrected => "derivation-corrected",
        }
    }
}

fn depth_log_sum(kernel: &Kernel, seq: &DepthSeq, conditioned: bool) -> f64 {
    let t = seq.height();
    let mut total = if conditioned { 0.0 } else { kernel.ln_tail(t) };
    for &x in seq.depths() {
        total += if conditioned {
            kernel.ln_conditional_pmf(x, t)
        } else {
            kernel.ln_pmf(x)
        };
    }
    total
}

/// Log-likelihood of a complete CPP(T) tree.
///
/// Unconditioned: `ln P(H > T) + sum ln P(H = x_i)`. Conditioned on the tip
/// count: `sum ln [P(H = x_i) / P(H <= T)]`.
pub fn full_tree_loglik(params: &LfParams, seq: &DepthSeq, conditioned_on_n: bool) -> f64 {
    depth_log_sum(&Kernel::coalescent(params), seq, conditioned_on_n)
}

/// The unconditioned full-tree likelihood written out in `p` and `r`:
/// `p^T (r-p)^n / ((1-p) r^T - (1-r) p^T)` times, per node,
/// `p^(x-1) / ((1-p) r^(x-1) - (1-r) p^(x-1)) - p^x / ((1-p) r^x - (1-r) p^x)`.
///
/// Evaluated directly, so only meaningful for small trees.
pub fn full_tree_lik_expanded(params: &LfParams, seq: &DepthSeq) -> f64 {
    let (p, r) = (params.p(), params.r());
    let ratio = |x: u64| {
        let (px, rx) = (p.powf(x as f64), r.powf(x as f64));
        px / ((1.0 - p) * rx - (1.0 - r) * px)
    };
    let t = seq.height() as f64;
    let n = seq.tip_count() as f64;
    let head = p.powf(t) * (r - p).powf(n) / ((1.0 - p) * r.powf(t) - (1.0 - r) * p.powf(t));
    seq.depths()
        .iter()
        .fold(head, |acc, &x| acc * (ratio(x - 1) - ratio(x)))
}

fn check_probability(y: f64) -> Result<(), LikError> {
    if y > 0.0 && y <= 1.0 {
        Ok(())
    } else {
        Err(LikError::BadProbability(y))
    }
}

/// Log-likelihood of a Bernoulli(y)-sampled tree; `y = 1` is the full tree.
///
/// The unconditioned form is the law of the sampled tree given that at least
/// one tip was sampled.
pub fn bernoulli_loglik(
    params: &LfParams,
    y: f64,
    seq: &DepthSeq,
    conditioned_on_k: bool,
) -> Result<f64, LikError> {
    check_probability(y)?;
    Ok(depth_log_sum(
        &Kernel::thinned(params, y),
        seq,
        conditioned_on_k,
    ))
}

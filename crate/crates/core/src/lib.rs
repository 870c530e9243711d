//! Genealogies of supercritical Galton-Watson processes with
//! linear-fractional offspring.
//!
//! The crate covers the whole pipeline around coalescent point process (CPP)
//! trees of a fixed height `T`:
//!
//! * [`model`]: offspring law, coalescent-time laws, Bernoulli-thinned laws,
//!   the mixing measure `mu_k` and birth-death embedding rates;
//! * [`tree`]: depth sequences, linked trees, Newick and JSON-lines I/O;
//! * [`sim`]: CPP(T) and forward branching simulation, tip sampling and the
//!   two-stage uniform-sample sampler;
//! * [`likelihood`]: exact likelihoods of full, Bernoulli-sampled and
//!   uniformly sampled trees;
//! * [`inference`]: maximum-likelihood fitting and likelihood surfaces;
//! * [`oracle`]: exact enumeration of sampled-tree laws, quadrature,
//!   goodness-of-fit tests and formula adjudication reports.

pub mod inference;
pub mod likelihood;
pub mod model;
pub mod oracle;
pub mod sim;
pub mod tree;

pub use inference::{fit, FitOptions, FitResult, ObservationSet, Scheme};
pub use likelihood::FormulaVariant;
pub use model::{LfParams, ModelError, MuK};
pub use sim::{stream_rng, SampleMask};
pub use tree::{depths_to_tree, parse_newick, tree_to_depths, write_newick, DepthSeq, Tree};

//! Maximum-likelihood estimation of `(p, r)` and likelihood surfaces.
//!
//! Full and Bernoulli likelihoods are evaluated from sufficient statistics
//! (per height, the number of trees and the depth histogram), so one
//! evaluation costs `O(distinct depths)` regardless of the dataset size.

mod nelder_mead;

use crate::likelihood::{ksample_marginal_loglik, LikError};
use crate::model::{Kernel, LfParams};
use crate::tree::DepthSeq;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{self, Write};
use thiserror::Error;

pub use nelder_mead::{minimize, Minimum, Settings as SimplexSettings};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferError {
    #[error("no feasible point: the observation set is empty or the likelihood is -inf everywhere")]
    NoFeasiblePoint,
    #[error("sampling probability {0} outside (0, 1]")]
    BadProbability(f64),
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Likelihood(#[from] LikError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Full,
    Bernoulli(f64),
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    Unconditioned,
    #[default]
    OnTipCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    scheme: Scheme,
    conditioning: Conditioning,
    trees: Vec<DepthSeq>,
}

impl ObservationSet {
    /// Conditioning defaults to [`Conditioning::OnTipCount`]; the uniform
    /// scheme always uses the marginal likelihood given `k`.
    pub fn new(scheme: Scheme, trees: Vec<DepthSeq>) -> Result<Self, InferError> {
        if let Scheme::Bernoulli(y) = scheme {
            if !(y > 0.0 && y <= 1.0) {
                return Err(InferError::BadProbability(y));
            }
        }
        Ok(Self {
            scheme,
            conditioning: Conditioning::default(),
            trees,
        })
    }

    pub fn with_conditioning(mut self, conditioning: Conditioning) -> Self {
        self.conditioning = conditioning;
        self
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    pub fn trees(&self) -> &[DepthSeq] {
        &self.trees
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    fn per_tree(&self, params: &LfParams, seq: &DepthSeq) -> Result<f64, InferError> {
        let conditioned = self.conditioning == Conditioning::OnTipCount;
        Ok(match self.scheme {
            Scheme::Full => crate::likelihood::full_tree_loglik(params, seq, conditioned),
            Scheme::Bernoulli(y) => crate::likelihood::bernoulli_loglik(params, y, seq, conditioned)?,
            Scheme::Uniform => ksample_marginal_loglik(params, seq)?,
        })
    }
}

/// Per-height sufficient statistics: tree count and depth histogram.
#[derive(Debug, Default)]
struct HeightStats {
    trees: f64,
    depths: BTreeMap<u64, f64>,
}

fn summarise(trees: &[DepthSeq]) -> BTreeMap<u64, HeightStats> {
    let mut stats: BTreeMap<u64, HeightStats> = BTreeMap::new();
    for seq in trees {
        let s = stats.entry(seq.height()).or_default();
        s.trees += 1.0;
        for &x in seq.depths() {
            *s.depths.entry(x).or_default() += 1.0;
        }
    }
    stats
}

/// Log-likelihood evaluator with the dataset reduced once.
enum Evaluator {
    Depths {
        stats: BTreeMap<u64, HeightStats>,
        y: Option<f64>,
        conditioned: bool,
    },
    Uniform {
        groups: BTreeMap<DepthSeq, f64>,
    },
}

impl Evaluator {
    fn new(obs: &ObservationSet) -> Self {
        let conditioned = obs.conditioning == Conditioning::OnTipCount;
        match obs.scheme {
            Scheme::Full => Evaluator::Depths {
                stats: summarise(&obs.trees),
                y: None,
                conditioned,
            },
            Scheme::Bernoulli(y) => Evaluator::Depths {
                stats: summarise(&obs.trees),
                y: Some(y),
                conditioned,
            },
            Scheme::Uniform => {
                // the marginal likelihood does not depend on the depth order
                let mut groups: BTreeMap<DepthSeq, f64> = BTreeMap::new();
                for seq in &obs.trees {
                    let mut depths = seq.depths().to_vec();
                    depths.sort_unstable();
                    let key = DepthSeq::new(seq.height(), depths).expect("depths already validated");
                    *groups.entry(key).or_default() += 1.0;
                }
                Evaluator::Uniform { groups }
            }
        }
    }

    fn eval(&self, params: &LfParams) -> Result<f64, InferError> {
        match self {
            Evaluator::Depths {
                stats,
                y,
                conditioned,
            } => {
                let kernel = match y {
                    Some(y) => Kernel::thinned(params, *y),
                    None => Kernel::coalescent(params),
                };
                let mut total = 0.0;
                for (&t, s) in stats {
                    if !conditioned {
                        total += s.trees * kernel.ln_tail(t);
                    }
                    for (&x, &c) in &s.depths {
                        total += c * if *conditioned {
                            kernel.ln_conditional_pmf(x, t)
                        } else {
                            kernel.ln_pmf(x)
                        };
                    }
                }
                Ok(total)
            }
            Evaluator::Uniform { groups } => {
                let mut total = 0.0;
                for (seq, &c) in groups {
                    total += c * ksample_marginal_loglik(params, seq)?;
                }
                Ok(total)
            }
        }
    }
}

/// Sum of the per-tree log-likelihoods under the observation scheme.
pub fn total_loglik(params: &LfParams, obs: &ObservationSet) -> Result<f64, InferError> {
    Evaluator::new(obs).eval(params)
}

pub fn per_tree_loglik(params: &LfParams, obs: &ObservationSet) -> Result<Vec<f64>, InferError> {
    obs.trees.iter().map(|seq| obs.per_tree(params, seq)).collect()
}

/// How a batch of independent likelihood evaluations is mapped.
pub trait GridMap {
    fn map(&self, points: &[LfParams], f: &(dyn Fn(&LfParams) -> f64 + Sync)) -> Vec<f64>;
}

/// Evaluates points one after another.
pub struct Sequential;

impl GridMap for Sequential {
    fn map(&self, points: &[LfParams], f: &(dyn Fn(&LfParams) -> f64 + Sync)) -> Vec<f64> {
        points.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Grid points per axis of the coarse phase.
    pub grid: usize,
    pub max_iter: usize,
    /// Simplex diameter, in logit coordinates, at which refinement stops.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            grid: 50,
            max_iter: 2000,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub p_hat: f64,
    pub r_hat: f64,
    pub loglik_at_optimum: f64,
    pub converged: bool,
    pub iterations: usize,
    pub boundary_flag: bool,
    pub grid_p: f64,
    pub grid_r: f64,
    pub grid_loglik: f64,
}

fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `(p, s)` with `r = p + s (1 - p)` maps the unit square onto the feasible
/// region `0 < p < r <= 1`.
fn from_unit(p: f64, s: f64) -> Option<LfParams> {
    LfParams::supercritical(p, p + s * (1.0 - p)).ok()
}

fn from_logits(z: &[f64]) -> Option<LfParams> {
    from_unit(logistic(z[0]), logistic(z[1]))
}

/// Logit coordinates of feasible parameters.
pub fn to_logits(params: &LfParams) -> [f64; 2] {
    let (p, r) = (params.p(), params.r());
    [logit(p), logit((r - p) / (1.0 - p))]
}

const MAX_RESTARTS: usize = 10;
const RESTART_STEP: f64 = 0.05;

/// Logit magnitude beyond which an estimate is reported as on the boundary.
const BOUNDARY_LOGIT: f64 = 15.0;

fn finite_or_neg_inf(v: Result<f64, InferError>) -> f64 {
    match v {
        Ok(v) if !v.is_nan() => v,
        _ => f64::NEG_INFINITY,
    }
}

pub fn fit(obs: &ObservationSet, options: &FitOptions) -> Result<FitResult, InferError> {
    fit_with(obs, options, &Sequential)
}

/// Grid search over the feasible triangle, then simplex refinement in logit
/// coordinates from the best grid point. Grid ties go to the smallest `p`,
/// then the smallest `r`.
pub fn fit_with<M: GridMap + ?Sized>(
    obs: &ObservationSet,
    options: &FitOptions,
    map: &M,
) -> Result<FitResult, InferError> {
    if obs.is_empty() {
        return Err(InferError::NoFeasiblePoint);
    }
    if options.grid == 0 {
        return Err(InferError::BadGrid("grid resolution must be positive".into()));
    }
    let evaluator = Evaluator::new(obs);
    let g = options.grid as f64;
    let points: Vec<LfParams> = (0..options.grid)
        .flat_map(|i| (0..options.grid).map(move |j| ((i as f64 + 0.5) / g, (j as f64 + 0.5) / g)))
        .filter_map(|(p, s)| from_unit(p, s))
        .collect();
    let values = map.map(&points, &|params| finite_or_neg_inf(evaluator.eval(params)));
    let mut best: Option<(LfParams, f64)> = None;
    for (params, &v) in points.iter().zip(&values) {
        if v > f64::NEG_INFINITY && best.is_none_or(|(_, b)| v > b) {
            best = Some((*params, v));
        }
    }
    let (seed, seed_ll) = best.ok_or(InferError::NoFeasiblePoint)?;
    let objective = |z: &[f64]| match from_logits(z) {
        Some(params) => -finite_or_neg_inf(evaluator.eval(&params)),
        None => f64::INFINITY,
    };
    let settings = |initial_step: f64, used: usize| SimplexSettings {
        initial_step,
        max_iter: options.max_iter - used,
        tol: options.tol,
    };
    let mut min = minimize(&objective, &to_logits(&seed), settings(0.25, 0));
    let mut iterations = min.iterations;
    // a fresh simplex at the best vertex undoes collapse along the likelihood ridge
    for _ in 0..MAX_RESTARTS {
        if iterations >= options.max_iter {
            break;
        }
        let again = minimize(&objective, &min.x, settings(RESTART_STEP, iterations));
        iterations += again.iterations;
        let improved = again.value < min.value;
        if again.value <= min.value {
            min = again;
        }
        if !improved {
            break;
        }
    }
    let (params, ll) = match from_logits(&min.x) {
        Some(params) if -min.value >= seed_ll => (params, -min.value),
        _ => (seed, seed_ll),
    };
    let z = to_logits(&params);
    Ok(FitResult {
        p_hat: params.p(),
        r_hat: params.r(),
        loglik_at_optimum: ll,
        converged: min.converged,
        iterations,
        boundary_flag: z.iter().any(|v| !v.is_finite() || v.abs() > BOUNDARY_LOGIT),
        grid_p: seed.p(),
        grid_r: seed.r(),
        grid_loglik: seed_ll,
    })
}

/// One row of a likelihood surface; `loglik` is `None` off the feasible
/// region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub p: f64,
    pub r: f64,
    pub loglik: Option<f64>,
}

fn axis(range: (f64, f64), steps: usize) -> Vec<f64> {
    match steps {
        1 => vec![range.0],
        _ => (0..steps)
            .map(|i| range.0 + (range.1 - range.0) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

pub fn loglik_surface(
    obs: &ObservationSet,
    p_range: (f64, f64),
    r_range: (f64, f64),
    steps: (usize, usize),
) -> Result<Vec<SurfacePoint>, InferError> {
    loglik_surface_with(obs, p_range, r_range, steps, &Sequential)
}

/// Rows in `p`-major order.
pub fn loglik_surface_with<M: GridMap + ?Sized>(
    obs: &ObservationSet,
    p_range: (f64, f64),
    r_range: (f64, f64),
    steps: (usize, usize),
    map: &M,
) -> Result<Vec<SurfacePoint>, InferError> {
    let in_unit = |(a, b): (f64, f64)| 0.0 <= a && a <= b && b <= 1.0;
    if !in_unit(p_range) || !in_unit(r_range) {
        return Err(InferError::BadGrid(format!(
            "ranges {p_range:?} and {r_range:?} must be ordered and within [0, 1]"
        )));
    }
    if steps.0 == 0 || steps.1 == 0 {
        return Err(InferError::BadGrid("steps must be positive".into()));
    }
    let cells: Vec<(f64, f64)> = axis(p_range, steps.0)
        .into_iter()
        .flat_map(|p| axis(r_range, steps.1).into_iter().map(move |r| (p, r)))
        .collect();
    let feasible: Vec<LfParams> = cells
        .iter()
        .filter_map(|&(p, r)| LfParams::supercritical(p, r).ok())
        .collect();
    let evaluator = Evaluator::new(obs);
    let values = map.map(&feasible, &|params| finite_or_neg_inf(evaluator.eval(params)));
    let mut values = feasible.iter().zip(values);
    Ok(cells
        .into_iter()
        .map(|(p, r)| {
            let loglik = match LfParams::supercritical(p, r) {
                Ok(_) => values.next().map(|(_, v)| v),
                Err(_) => None,
            };
            SurfacePoint { p, r, loglik }
        })
        .collect())
}

/// CSV with a `p,r,loglik` header and `NA` off the feasible region.
pub fn write_surface_csv<W: Write>(mut out: W, points: &[SurfacePoint]) -> io::Result<()> {
    writeln!(out, "p,r,loglik")?;
    for pt in points {
        match pt.loglik {
            Some(v) => writeln!(out, "{:.16e},{:.16e},{:.16e}", pt.p, pt.r, v)?,
            None => writeln!(out, "{:.16e},{:.16e},NA", pt.p, pt.r)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: u64, d: &[u64]) -> DepthSeq {
        DepthSeq::new(t, d.to_vec()).unwrap()
    }

    fn fig() -> LfParams {
        LfParams::new(0.5, 0.8).unwrap()
    }

    #[test]
    fn totals() {
        let empty = ObservationSet::new(Scheme::Full, vec![]).unwrap();
        assert_eq!(total_loglik(&fig(), &empty).unwrap(), 0.0);
        let s = seq(6, &[2, 1, 3]);
        for c in [Conditioning::Unconditioned, Conditioning::OnTipCount] {
            let obs = ObservationSet::new(Scheme::Full, vec![s.clone()])
                .unwrap()
                .with_conditioning(c);
            let expected =
                crate::likelihood::full_tree_loglik(&fig(), &s, c == Conditioning::OnTipCount);
            assert!((total_loglik(&fig(), &obs).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn sufficient_statistics_agree_with_per_tree_sum() {
        let trees = vec![seq(4, &[1, 4, 2]), seq(6, &[6, 6]), seq(4, &[])];
        for scheme in [Scheme::Full, Scheme::Bernoulli(0.3), Scheme::Uniform] {
            for c in [Conditioning::Unconditioned, Conditioning::OnTipCount] {
                let obs = ObservationSet::new(scheme, trees.clone())
                    .unwrap()
                    .with_conditioning(c);
                let sum: f64 = per_tree_loglik(&fig(), &obs).unwrap().iter().sum();
                assert!((total_loglik(&fig(), &obs).unwrap() - sum).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn empty_fit_is_infeasible() {
        let obs = ObservationSet::new(Scheme::Full, vec![]).unwrap();
        assert_eq!(fit(&obs, &FitOptions::default()), Err(InferError::NoFeasiblePoint));
        assert!(matches!(
            ObservationSet::new(Scheme::Bernoulli(1.5), vec![]),
            Err(InferError::BadProbability(_))
        ));
    }

    #[test]
    fn surface_marks_infeasible_cells() {
        let obs = ObservationSet::new(Scheme::Full, vec![seq(3, &[1, 2])]).unwrap();
        let pts = loglik_surface(&obs, (0.4, 0.6), (0.5, 0.9), (3, 3)).unwrap();
        assert_eq!(pts.len(), 9);
        let at = |p: f64, r: f64| {
            pts.iter()
                .find(|x| (x.p - p).abs() < 1e-12 && (x.r - r).abs() < 1e-12)
                .unwrap()
                .loglik
        };
        assert!(at(0.6, 0.5).is_none());
        assert!(at(0.5, 0.5).is_none());
        assert!(at(0.4, 0.9).is_some());
        let mut csv = Vec::new();
        write_surface_csv(&mut csv, &pts).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("p,r,loglik\n"));
        assert_eq!(text.lines().filter(|l| l.ends_with(",NA")).count(), 2);
    }

    #[test]
    fn logit_round_trip() {
        let params = LfParams::new(0.37, 0.81).unwrap();
        let back = from_logits(&to_logits(&params)).unwrap();
        assert!((back.p() - 0.37).abs() < 1e-14 && (back.r() - 0.81).abs() < 1e-14);
    }
}

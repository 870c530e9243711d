//! Exact laws of sampled CPP(T) trees.
//!
//! [`enumerate_cpp`] lists every outcome literally and is only usable for
//! tiny tip counts. [`joint_by_tip_count`] computes the same sampled-tree law
//! by a left-to-right pass over the tips whose state is the number of
//! selected tips, the depths emitted so far and the running maximum since
//! the last selected tip; every (outcome, subset) pair contributes exactly
//! the weight it has in the literal enumeration.

use super::OracleError;
use crate::model::{Kernel, LfParams};
use crate::sim::{subsample_depths, SampleMask};
use crate::tree::DepthSeq;
use serde::Serialize;
use std::collections::BTreeMap;

/// Literal-enumeration budget.
pub const MAX_STATES: f64 = 1e7;

/// Target for the truncated probability mass.
pub const RESIDUAL_TARGET: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SamplingScheme {
    Uniform,
    Bernoulli(f64),
}

impl SamplingScheme {
    fn weights(self) -> (f64, f64) {
        match self {
            SamplingScheme::Uniform => (1.0, 1.0),
            SamplingScheme::Bernoulli(y) => (y, 1.0 - y),
        }
    }

    fn check(self) -> Result<(), OracleError> {
        match self {
            SamplingScheme::Bernoulli(y) if !(y > 0.0 && y <= 1.0) => {
                Err(OracleError::BadProbability(y))
            }
            _ => Ok(()),
        }
    }
}

/// All CPP(T) outcomes with at most `n_max` tips.
#[derive(Debug, Clone, PartialEq)]
pub struct CppEnumeration {
    pub outcomes: Vec<(DepthSeq, f64)>,
    /// `P(N_T > n_max) = P(H <= T)^n_max`.
    pub residual: f64,
}

impl CppEnumeration {
    /// Compensated sum of the outcome probabilities.
    pub fn total(&self) -> f64 {
        let (mut sum, mut carry) = (0.0f64, 0.0f64);
        for &(_, w) in &self.outcomes {
            let t = sum + w;
            carry += if sum.abs() >= w.abs() {
                (sum - t) + w
            } else {
                (w - t) + sum
            };
            sum = t;
        }
        sum + carry
    }
}

fn check_height(height: u64) -> Result<(), OracleError> {
    if height == 0 {
        Err(OracleError::ZeroHeight)
    } else {
        Ok(())
    }
}

pub fn enumerate_cpp(
    params: &LfParams,
    height: u64,
    n_max: usize,
) -> Result<CppEnumeration, OracleError> {
    check_height(height)?;
    let states: f64 = (0..n_max).map(|j| (height as f64).powi(j as i32)).sum();
    if states > MAX_STATES {
        return Err(OracleError::StateSpaceTooLarge { states });
    }
    let kernel = Kernel::coalescent(params);
    let delta = kernel.tail(height);
    let pmf: Vec<f64> = (0..=height).map(|h| kernel.pmf(h)).collect();
    let mut outcomes = Vec::new();
    let mut layer: Vec<(Vec<u64>, f64)> = vec![(Vec::new(), 1.0)];
    for n in 1..=n_max {
        for (depths, w) in &layer {
            outcomes.push((DepthSeq::new_unchecked(height, depths.clone()), w * delta));
        }
        if n == n_max {
            break;
        }
        layer = layer
            .into_iter()
            .flat_map(|(depths, w)| {
                let pmf = &pmf;
                (1..=height).map(move |h| {
                    let mut next = depths.clone();
                    next.push(h);
                    (next, w * pmf[h as usize])
                })
            })
            .collect();
    }
    Ok(CppEnumeration {
        outcomes,
        residual: kernel.cdf(height).powi(n_max as i32),
    })
}

/// `P(N_T = n, sampled tree = x)` by tip count `n`, for `k <= n <= n_max`.
///
/// Uniform: a uniform `k`-subset of the `n` tips. Bernoulli(y): each tip kept
/// independently, restricted to the event that exactly `k` are kept.
pub type JointLaw = BTreeMap<usize, BTreeMap<Vec<u64>, f64>>;

fn check_dp(height: u64, k: usize) -> Result<(), OracleError> {
    check_height(height)?;
    if k == 0 {
        return Err(OracleError::ZeroSample);
    }
    let states = (k + 1) as f64 * (height as f64).powi(k as i32 - 1) * (height + 1) as f64;
    if states > MAX_STATES {
        return Err(OracleError::StateSpaceTooLarge { states });
    }
    Ok(())
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    (1..=k)
        .map(|i| ((n - k + i) as f64 / i as f64).ln())
        .sum()
}

pub fn joint_by_tip_count(
    params: &LfParams,
    height: u64,
    k: usize,
    scheme: SamplingScheme,
    n_max: usize,
) -> Result<JointLaw, OracleError> {
    check_dp(height, k)?;
    scheme.check()?;
    let kernel = Kernel::coalescent(params);
    let delta = kernel.tail(height);
    let pmf: Vec<f64> = (0..=height).map(|h| kernel.pmf(h)).collect();
    let (keep, drop) = scheme.weights();

    // (selected so far, emitted depths, running max since last selected tip)
    type State = (usize, Vec<u64>, u64);
    let mut states: BTreeMap<State, f64> = BTreeMap::from([((0, Vec::new(), 0), 1.0)]);
    let mut joint = JointLaw::new();
    for n in 1..=n_max {
        let mut after_tip: BTreeMap<State, f64> = BTreeMap::new();
        for ((s, xs, cur), w) in states {
            if drop > 0.0 {
                *after_tip.entry((s, xs.clone(), cur)).or_default() += w * drop;
            }
            if s < k {
                let mut xs = xs;
                if s > 0 {
                    xs.push(cur);
                }
                *after_tip.entry((s + 1, xs, 0)).or_default() += w * keep;
            }
        }
        if n >= k {
            let norm = match scheme {
                SamplingScheme::Uniform => (-ln_binomial(n, k)).exp(),
                SamplingScheme::Bernoulli(_) => 1.0,
            };
            let layer = joint.entry(n).or_default();
            for ((s, xs, _), w) in &after_tip {
                if *s == k {
                    *layer.entry(xs.clone()).or_default() += w * delta * norm;
                }
            }
        }
        if n == n_max {
            break;
        }
        states = BTreeMap::new();
        for ((s, xs, cur), w) in after_tip {
            for h in 1..=height {
                let cur = if s == 0 || s == k { 0 } else { cur.max(h) };
                *states.entry((s, xs.clone(), cur)).or_default() += w * pmf[h as usize];
            }
        }
    }
    Ok(joint)
}

fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// [`joint_by_tip_count`] by literal enumeration of every outcome and every
/// subset of its tips.
pub fn brute_force_joint(
    params: &LfParams,
    height: u64,
    k: usize,
    scheme: SamplingScheme,
    n_max: usize,
) -> Result<JointLaw, OracleError> {
    if k == 0 {
        return Err(OracleError::ZeroSample);
    }
    scheme.check()?;
    let outcomes = enumerate_cpp(params, height, n_max)?;
    let mut joint = JointLaw::new();
    for (seq, w) in &outcomes.outcomes {
        let n = seq.tip_count();
        if n < k {
            continue;
        }
        let weight = match scheme {
            SamplingScheme::Uniform => (-ln_binomial(n, k)).exp(),
            SamplingScheme::Bernoulli(y) => y.powi(k as i32) * (1.0 - y).powi((n - k) as i32),
        };
        let layer = joint.entry(n).or_default();
        for_each_subset(n, k, |idx| {
            let mask = SampleMask::from_indices(n, idx);
            let sampled = subsample_depths(seq, &mask).expect("non-empty mask");
            *layer.entry(sampled.into_depths()).or_default() += w * weight;
        });
    }
    Ok(joint)
}

/// Law of the sampled tree of `k` tips, conditioned on `N_T >= k` (Uniform)
/// or on exactly `k` kept tips (Bernoulli).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactLaw {
    pub height: u64,
    pub k: usize,
    pub scheme: SamplingScheme,
    pub n_max: usize,
    pub conditioning: String,
    pub probs: BTreeMap<Vec<u64>, f64>,
    /// Conditional probability of outcomes with more than `n_max` tips,
    /// computed analytically.
    pub residual: f64,
}

impl ExactLaw {
    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    pub fn get(&self, depths: &[u64]) -> f64 {
        self.probs.get(depths).copied().unwrap_or(0.0)
    }
}

/// Bernoulli terms `P(N_T = n, K = k)`.
struct KeptCount {
    ln_delta_over_p0: f64,
    ln_p0: f64,
    y: f64,
    k: usize,
}

impl KeptCount {
    fn term(&self, n: usize) -> f64 {
        let (k, y) = (self.k, self.y);
        if y == 1.0 {
            return if n == k {
                (self.ln_delta_over_p0 + n as f64 * self.ln_p0).exp()
            } else {
                0.0
            };
        }
        (self.ln_delta_over_p0
            + n as f64 * self.ln_p0
            + ln_binomial(n, k)
            + k as f64 * y.ln()
            + (n - k) as f64 * (1.0 - y).ln())
        .exp()
    }

    /// `P(K = k) = (delta / p0) (p0 y)^k / (1 - p0 (1 - y))^(k + 1)`.
    fn total(&self) -> f64 {
        let p0 = self.ln_p0.exp();
        let k = self.k as f64;
        (self.ln_delta_over_p0 + k * (p0 * self.y).ln() - (k + 1.0) * (1.0 - p0 * (1.0 - self.y)).ln())
            .exp()
    }

    /// Smallest `n_max` whose geometric tail bound is below the target.
    fn horizon(&self) -> usize {
        let mut n = self.k;
        let target = RESIDUAL_TARGET * 0.1 * self.total();
        let q = self.ln_p0.exp() * (1.0 - self.y);
        loop {
            let next = self.term(n + 1);
            // term ratios decrease towards q; bound the tail by a geometric series
            let ratio = q * (n + 2) as f64 / (n + 2 - self.k) as f64;
            if next == 0.0 || (ratio < 1.0 && next / (1.0 - ratio) < target) {
                return n;
            }
            n += 1;
        }
    }
}

/// Exact sampled-tree law, truncated at `n_max` tips; `None` picks the
/// smallest `n_max` whose residual is below [`RESIDUAL_TARGET`].
pub fn exact_sampled_law(
    params: &LfParams,
    height: u64,
    k: usize,
    scheme: SamplingScheme,
    n_max: Option<usize>,
) -> Result<ExactLaw, OracleError> {
    check_dp(height, k)?;
    scheme.check()?;
    let kernel = Kernel::coalescent(params);
    let p0 = kernel.cdf(height);
    let ln_p0 = p0.ln();
    let (n_max, norm, residual_of): (usize, f64, Box<dyn Fn(usize) -> f64>) = match scheme {
        SamplingScheme::Uniform => {
            // P(N_T >= k) = p0^(k-1); P(N_T > n) = p0^n
            let auto = (k as f64 - 1.0 + RESIDUAL_TARGET.ln() / ln_p0).ceil() as usize;
            let n_max = n_max.unwrap_or(auto.max(k));
            let residual = move |n: usize| ((n + 1 - k) as f64 * ln_p0).exp();
            (n_max, p0.powi(k as i32 - 1), Box::new(residual))
        }
        SamplingScheme::Bernoulli(y) => {
            let counts = KeptCount {
                ln_delta_over_p0: kernel.ln_tail(height) - ln_p0,
                ln_p0,
                y,
                k,
            };
            let n_max = n_max.unwrap_or_else(|| counts.horizon());
            let total = counts.total();
            let residual = move |n: usize| {
                let kept: f64 = (k..=n).map(|i| counts.term(i)).sum();
                ((total - kept) / total).max(0.0)
            };
            (n_max, total, Box::new(residual))
        }
    };
    if n_max < k {
        return Err(OracleError::HorizonTooSmall { n_max, k });
    }
    let joint = joint_by_tip_count(params, height, k, scheme, n_max)?;
    let mut probs: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    for layer in joint.values() {
        for (xs, w) in layer {
            *probs.entry(xs.clone()).or_default() += w / norm;
        }
    }
    let conditioning = match scheme {
        SamplingScheme::Uniform => format!("N_T >= {k}"),
        SamplingScheme::Bernoulli(y) => format!("exactly {k} tips kept at y = {y}"),
    };
    Ok(ExactLaw {
        height,
        k,
        scheme,
        n_max,
        conditioning,
        probs,
        residual: residual_of(n_max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig() -> LfParams {
        LfParams::new(0.5, 0.8).unwrap()
    }

    #[test]
    fn enumerate_height_one() {
        let e = enumerate_cpp(&fig(), 1, 6).unwrap();
        for (j, (seq, w)) in e.outcomes.iter().enumerate() {
            assert_eq!(seq.depths(), vec![1; j].as_slice());
            assert!((w - 0.5f64.powi(j as i32) * 0.5).abs() < 1e-15);
        }
        assert!((e.total() + e.residual - 1.0).abs() < 1e-15);
    }

    #[test]
    fn enumerate_mass_and_product() {
        let params = fig();
        let e = enumerate_cpp(&params, 2, 20).unwrap();
        assert!((e.total() + e.residual - 1.0).abs() < 1e-12);
        let k = Kernel::coalescent(&params);
        let (_, w) = e.outcomes.iter().find(|(s, _)| s.depths() == [1, 2]).unwrap();
        assert!((w - k.pmf(1) * k.pmf(2) * k.tail(2)).abs() < 1e-16);
        assert!(matches!(
            enumerate_cpp(&params, 4, 30),
            Err(OracleError::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn dp_matches_brute_force() {
        let params = LfParams::new(0.3, 0.6).unwrap();
        for scheme in [SamplingScheme::Uniform, SamplingScheme::Bernoulli(0.35)] {
            for (t, k, n_max) in [(1, 1, 5), (2, 2, 7), (3, 3, 7), (2, 3, 8)] {
                let dp = joint_by_tip_count(&params, t, k, scheme, n_max).unwrap();
                let bf = brute_force_joint(&params, t, k, scheme, n_max).unwrap();
                assert_eq!(dp.keys().collect::<Vec<_>>(), bf.keys().collect::<Vec<_>>());
                for (n, layer) in &dp {
                    assert_eq!(layer.len(), bf[n].len());
                    for (xs, w) in layer {
                        assert!((w - bf[n][xs]).abs() < 1e-15, "{scheme:?} {t} {k} {n} {xs:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn small_exact_values() {
        let params = fig();
        let law = exact_sampled_law(&params, 1, 1, SamplingScheme::Uniform, None).unwrap();
        assert_eq!(law.probs.len(), 1);
        assert!((law.get(&[]) + law.residual - 1.0).abs() < 1e-12);
        let joint = joint_by_tip_count(&params, 1, 1, SamplingScheme::Uniform, 2).unwrap();
        assert!((joint[&2][&vec![]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mass_balance() {
        let params = fig();
        let law = exact_sampled_law(&params, 2, 2, SamplingScheme::Uniform, Some(60)).unwrap();
        let p0 = Kernel::coalescent(&params).cdf(2);
        assert!((law.residual - p0.powi(59)).abs() < 1e-20);
        assert!((law.total() + law.residual - 1.0).abs() < 1e-12);
        for scheme in [SamplingScheme::Uniform, SamplingScheme::Bernoulli(0.3), SamplingScheme::Bernoulli(1.0)] {
            let law = exact_sampled_law(&params, 3, 3, scheme, None).unwrap();
            assert!(law.residual < 1e-14, "{scheme:?} {}", law.residual);
            assert!((law.total() + law.residual - 1.0).abs() < 1e-12, "{scheme:?}");
        }
    }
}

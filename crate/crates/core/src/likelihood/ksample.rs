use super::{FormulaVariant, LikError};
use crate::model::{Kernel, LfParams};
use crate::oracle::quadrature;
use crate::tree::DepthSeq;
use serde::Serialize;
use std::collections::BTreeMap;

/// Enumeration cap for composition sums.
pub const MAX_COMPOSITIONS: f64 = 1e7;

/// Relative tolerance of the `mu_k` mixture integral.
pub const MARGINAL_REL_TOL: f64 = 1e-9;

/// Compositions `(m_0, ..., m_{k-1})` of `m` into `k` nonnegative parts in
/// lexicographic order.
pub fn compositions(k: usize, m: usize) -> Compositions {
    assert!(k >= 1, "compositions need at least one part");
    let mut first = vec![0; k];
    first[k - 1] = m;
    Compositions { next: Some(first) }
}

pub struct Compositions {
    next: Option<Vec<usize>>,
}

impl Iterator for Compositions {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let k = current.len();
        if let Some(j) = (1..k).rev().find(|&j| current[j] > 0) {
            let mut succ = current.clone();
            let rest = succ[j];
            succ[j - 1] += 1;
            succ[j] = 0;
            succ[k - 1] = rest - 1;
            self.next = Some(succ);
        }
        Some(current)
    }
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (1..=k)
        .map(|i| ((n - k + i) as f64 / i as f64).ln())
        .sum()
}

fn composition_count(k: usize, m: usize) -> f64 {
    ln_binomial(m + k - 1, k - 1).exp()
}

fn check_count(k: usize, m: usize) -> Result<(), LikError> {
    let count = composition_count(k, m);
    if count > MAX_COMPOSITIONS {
        Err(LikError::MTooLarge { count })
    } else {
        Ok(())
    }
}

/// Streaming log-sum-exp.
#[derive(Default)]
struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    fn add(&mut self, term: f64) {
        if term == f64::NEG_INFINITY {
            return;
        }
        if term > self.max {
            self.scaled = self.scaled * (self.max - term).exp() + 1.0;
            self.max = term;
        } else {
            self.scaled += (term - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `ln(a^j - b^j)` for `0 <= b < a`.
fn ln_power_gap(a: f64, b: f64, j: usize) -> f64 {
    let j = j as f64;
    j * a.ln() + (-(j * (b / a).ln()).exp_m1()).ln()
}

/// Log of the joint probability that the uniform `k`-sample tree has the
/// depths of `seq` and the full tree has `k + m` tips, by summing over the
/// compositions of the `m` unsampled tips.
///
/// `PaperStated` is the printed sum; `DerivationCorrected` weighs each term
/// by `m_0 + 1`, the number of ways to split the `m_0` outer unsampled tips
/// between the two ends of the tree.
pub fn ksample_ln_lik_direct(
    params: &LfParams,
    seq: &DepthSeq,
    m: usize,
    variant: FormulaVariant,
) -> Result<f64, LikError> {
    let k = seq.tip_count();
    check_count(k, m)?;
    let kernel = Kernel::coalescent(params);
    let t = seq.height();
    let ln_delta = kernel.ln_tail(t);
    let ln_p0 = kernel.ln_cdf(t);
    // blocks[i][j] = ln(P(H <= x_i)^j - P(H < x_i)^j), j = 1..=m+1
    let mut cache: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for &x in seq.depths() {
        cache.entry(x).or_insert_with(|| {
            let (a, b) = (kernel.cdf(x), kernel.cdf(x - 1));
            (0..=m + 1)
                .map(|j| if j == 0 { 0.0 } else { ln_power_gap(a, b, j) })
                .collect()
        });
    }
    let blocks: Vec<&Vec<f64>> = seq.depths().iter().map(|x| &cache[x]).collect();
    let mut sum = LogSum::new();
    for comp in compositions(k, m) {
        let m0 = comp[0];
        let mut term = ln_delta + m0 as f64 * ln_p0;
        if variant == FormulaVariant::DerivationCorrected {
            term += ((m0 + 1) as f64).ln();
        }
        for (block, &mi) in blocks.iter().zip(&comp[1..]) {
            term += block[mi + 1];
        }
        sum.add(term);
    }
    Ok(sum.value() - ln_binomial(k + m, k))
}

pub fn ksample_lik_direct(
    params: &LfParams,
    seq: &DepthSeq,
    m: usize,
    variant: FormulaVariant,
) -> Result<f64, LikError> {
    ksample_ln_lik_direct(params, seq, m, variant).map(f64::exp)
}

/// Distinct values among the sampled depths with their multiplicities and
/// CDF values `p_j = P(H <= y_j)`, plus `p_0 = P(H <= T)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistinctDepthSummary {
    pub height: u64,
    pub y_values: Vec<u64>,
    pub multiplicities: Vec<usize>,
    pub p_values: Vec<f64>,
    pub p0: f64,
}

impl DistinctDepthSummary {
    pub fn new(params: &LfParams, height: u64, depths: &[u64]) -> Result<Self, LikError> {
        let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
        for &x in depths {
            if x == 0 || x > height {
                return Err(LikError::InvalidDepth { depth: x, height });
            }
            *counts.entry(x).or_default() += 1;
        }
        let kernel = Kernel::coalescent(params);
        Ok(Self {
            height,
            y_values: counts.keys().copied().collect(),
            multiplicities: counts.values().copied().collect(),
            p_values: counts.keys().map(|&y| kernel.cdf(y)).collect(),
            p0: kernel.cdf(height),
        })
    }

    pub fn from_seq(params: &LfParams, seq: &DepthSeq) -> Self {
        Self::new(params, seq.height(), seq.depths()).expect("DepthSeq depths are in range")
    }

    pub fn distinct(&self) -> usize {
        self.y_values.len()
    }

    /// Number of sampled tips `k = 1 + sum r_j`.
    pub fn tips(&self) -> usize {
        1 + self.multiplicities.iter().sum::<usize>()
    }

    /// Closed form needs pairwise distinct per-node CDF values, all distinct
    /// from `p_0`.
    pub fn is_degenerate(&self) -> bool {
        self.distinct() == 0
            || self.multiplicities.iter().any(|&r| r > 1)
            || self.y_values.iter().any(|&y| y == self.height)
    }
}

/// Joint CDF `P(N_T = k + m, H_{k,i} <= x_i)` from the printed density,
/// summed over the compositions after telescoping each node factor to
/// `P(H <= x_i)^(m_i + 1)`.
pub fn ksample_cdf_direct(summary: &DistinctDepthSummary, m: usize) -> Result<f64, LikError> {
    let k = summary.tips();
    check_count(k, m)?;
    let ln_q: Vec<f64> = summary
        .p_values
        .iter()
        .zip(&summary.multiplicities)
        .flat_map(|(&p, &r)| std::iter::repeat_n(p.ln(), r))
        .collect();
    let ln_p0 = summary.p0.ln();
    let ln_outer = (1.0 - summary.p0).ln();
    let mut sum = LogSum::new();
    for comp in compositions(k, m) {
        let mut term = ln_outer + comp[0] as f64 * ln_p0;
        for (q, &mi) in ln_q.iter().zip(&comp[1..]) {
            term += (mi + 1) as f64 * q;
        }
        sum.add(term);
    }
    Ok((sum.value() - ln_binomial(k + m, k)).exp())
}

/// The closed-form joint CDF evaluated as a formula, without any routing.
///
/// `PaperStated` uses `p_j^(d-2) (p_j^(m+2) - p_0^(m+2))` in the partial
/// fraction sum, `DerivationCorrected` the `p_j^(d-1) (p_j^(m+1) - p_0^(m+1))`
/// that the geometric sum actually produces. `None` when the formula divides
/// by zero (`d = 0` or some `p_j = p_0`). Multiplicities are used as given,
/// so the value is only a CDF when every `r_j = 1`.
pub fn ksample_cdf_closed_raw(
    summary: &DistinctDepthSummary,
    k: usize,
    m: usize,
    variant: FormulaVariant,
) -> Option<f64> {
    let d = summary.distinct();
    if d == 0 || summary.p_values.iter().any(|&p| p == summary.p0) {
        return None;
    }
    let p0 = summary.p0;
    let ps = &summary.p_values;
    let (lead, power) = match variant {
        FormulaVariant::PaperStated => (d as i32 - 2, m as i32 + 2),
        FormulaVariant::DerivationCorrected => (d as i32 - 1, m as i32 + 1),
    };
    let partial: f64 = (0..d)
        .map(|j| {
            let pj = ps[j];
            let others: f64 = (0..d).filter(|&i| i != j).map(|i| pj - ps[i]).product();
            pj.powi(lead) * (pj.powi(power) - p0.powi(power)) / ((pj - p0) * others)
        })
        .sum();
    let prefix: f64 = ps
        .iter()
        .zip(&summary.multiplicities)
        .map(|(&p, &r)| p.powi(r as i32))
        .product();
    Some((-ln_binomial(k + m, k)).exp() * prefix * (1.0 - p0) * partial)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosedCdf {
    pub value: f64,
    pub variant: FormulaVariant,
    /// The input was degenerate and the value comes from
    /// [`ksample_cdf_direct`] instead of the closed formula.
    pub routed: bool,
}

/// Closed-form joint CDF, routed to the composition sum on degenerate input
/// (no internal node, a repeated depth, or a depth equal to `T`).
pub fn ksample_cdf_closed(
    summary: &DistinctDepthSummary,
    k: usize,
    m: usize,
    variant: FormulaVariant,
) -> Result<ClosedCdf, LikError> {
    if k != summary.tips() {
        return Err(LikError::SizeMismatch {
            summary: summary.tips(),
            k,
        });
    }
    if summary.is_degenerate() {
        return Ok(ClosedCdf {
            value: ksample_cdf_direct(summary, m)?,
            variant,
            routed: true,
        });
    }
    let value = ksample_cdf_closed_raw(summary, k, m, variant).expect("non-degenerate summary");
    Ok(ClosedCdf {
        value,
        variant,
        routed: false,
    })
}

/// Marginal likelihood of a uniform `k`-sample tree:
/// `int_0^1 mu_k(dy) prod_i P(H_y = x_i) / P(H_y <= T)`.
pub fn ksample_marginal_lik(
    params: &LfParams,
    seq: &DepthSeq,
    rel_tol: f64,
) -> Result<f64, LikError> {
    ksample_marginal_loglik_tol(params, seq, rel_tol).map(f64::exp)
}

pub fn ksample_marginal_loglik(params: &LfParams, seq: &DepthSeq) -> Result<f64, LikError> {
    ksample_marginal_loglik_tol(params, seq, MARGINAL_REL_TOL)
}

fn ksample_marginal_loglik_tol(
    params: &LfParams,
    seq: &DepthSeq,
    rel_tol: f64,
) -> Result<f64, LikError> {
    let k = seq.tip_count();
    if k == 1 {
        return Ok(0.0);
    }
    params.require_supercritical()?;
    let t = seq.height();
    let law = LogThinned::new(params);
    let ln_z_stem = law.ln_z(0.0, t);
    let ln_delta = -softplus(ln_z_stem);
    let ln_rest = ln_z_stem + ln_delta;
    let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
    for &x in seq.depths() {
        *counts.entry(x).or_default() += 1.0;
    }
    let kf = k as f64;
    // integrate over s = ln y; the mass sits near ln y ~ ln delta, which may
    // lie far below the smallest positive double
    let log_integrand = |s: f64| {
        kf.ln() + ln_delta + kf * s - (kf + 1.0) * log_add(ln_delta, ln_rest + s)
            + counts
                .iter()
                .map(|(&x, &c)| c * law.ln_conditional_pmf(s, x, t))
                .sum::<f64>()
    };
    // below ln delta the integrand decays at least like e^(k s)
    let lowest = ln_delta - MARGINAL_TAIL_DROP;
    let steps = (-lowest / SCAN_STEP).ceil() as usize;
    let scan: Vec<f64> = (0..=steps)
        .map(|i| log_integrand(-(i as f64) * SCAN_STEP))
        .collect();
    let peak = scan.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let live: Vec<usize> = (0..=steps)
        .filter(|&i| scan[i] > peak - MARGINAL_TAIL_DROP)
        .collect();
    let hi_index = live[0].saturating_sub(1);
    let lo_index = (live[live.len() - 1] + 1).min(steps);
    let (lo, hi) = (-(lo_index as f64) * SCAN_STEP, -(hi_index as f64) * SCAN_STEP);
    let panels = ((hi - lo) / PANEL_WIDTH).ceil().max(1.0) as usize;
    let width = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for j in 0..panels {
        let a = lo + j as f64 * width;
        let part = quadrature::integrate(|s| (log_integrand(s) - peak).exp(), a, a + width, rel_tol)?;
        total += part.value;
    }
    Ok(peak + total.ln())
}

const SCAN_STEP: f64 = 0.25;
const PANEL_WIDTH: f64 = 4.0;
const MARGINAL_TAIL_DROP: f64 = 60.0;

/// `ln(1 + e^s)`.
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Thinned coalescent law through `z_n = y (1-p) (m^n - 1) / (r-p)`, for which
/// `P(H_y > n) = 1 / (1 + z_n)`. Takes `ln y`, so `y` may lie far below the
/// smallest positive double.
struct LogThinned {
    ln_scale: f64,
    ln_m: f64,
    ln_m_minus_1: f64,
}

impl LogThinned {
    fn new(params: &LfParams) -> Self {
        let (p, r) = (params.p(), params.r());
        Self {
            ln_scale: ((1.0 - p) / (r - p)).ln(),
            ln_m: (r / p).ln(),
            ln_m_minus_1: (r - p).ln() - p.ln(),
        }
    }

    fn ln_z(&self, ln_y: f64, n: u64) -> f64 {
        let growth = n as f64 * self.ln_m;
        ln_y + self.ln_scale + growth + (-(-growth).exp_m1()).ln()
    }

    fn ln_conditional_pmf(&self, ln_y: f64, x: u64, t: u64) -> f64 {
        let ln_zt = self.ln_z(ln_y, t);
        ln_y + self.ln_scale + (x - 1) as f64 * self.ln_m + self.ln_m_minus_1
            - softplus(self.ln_z(ln_y, x))
            - softplus(self.ln_z(ln_y, x - 1))
            - ln_zt
            + softplus(ln_zt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::FormulaVariant::{DerivationCorrected, PaperStated};
    use crate::model::coalescent_tail;

    fn fig() -> LfParams {
        LfParams::new(0.5, 0.8).unwrap()
    }

    fn seq(t: u64, d: &[u64]) -> DepthSeq {
        DepthSeq::new(t, d.to_vec()).unwrap()
    }

    #[test]
    fn composition_order_and_count() {
        let all: Vec<Vec<usize>> = compositions(3, 2).collect();
        assert_eq!(
            all,
            vec![
                vec![0, 0, 2],
                vec![0, 1, 1],
                vec![0, 2, 0],
                vec![1, 0, 1],
                vec![1, 1, 0],
                vec![2, 0, 0]
            ]
        );
        assert_eq!(compositions(1, 4).collect::<Vec<_>>(), vec![vec![4]]);
        assert_eq!(compositions(4, 0).count(), 1);
        for k in 1..5 {
            for m in 0..6 {
                assert_eq!(
                    compositions(k, m).count() as f64,
                    composition_count(k, m).round()
                );
            }
        }
    }

    #[test]
    fn direct_density_hand_cases() {
        let params = fig();
        let stem = seq(1, &[]);
        assert!((ksample_lik_direct(&params, &stem, 1, PaperStated).unwrap() - 0.125).abs() < 1e-15);
        assert!(
            (ksample_lik_direct(&params, &stem, 1, DerivationCorrected).unwrap() - 0.25).abs()
                < 1e-15
        );
        let delta = coalescent_tail(&params, 3);
        for v in FormulaVariant::ALL {
            let one = ksample_lik_direct(&params, &seq(3, &[]), 0, v).unwrap();
            assert!((one - delta).abs() < 1e-15);
            let two = ksample_lik_direct(&params, &seq(3, &[2]), 0, v).unwrap();
            let expected = delta * crate::model::coalescent_pmf(&params, 2);
            assert!((two - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn composition_cap() {
        let params = fig();
        let big = seq(3, &[1; 9]);
        assert!(matches!(
            ksample_lik_direct(&params, &big, 200, PaperStated),
            Err(LikError::MTooLarge { .. })
        ));
    }

    #[test]
    fn closed_cdf_hand_cases() {
        let params = fig();
        let s = DistinctDepthSummary::new(&params, 2, &[1]).unwrap();
        let (p1, p0) = (s.p_values[0], s.p0);
        let corrected = ksample_cdf_closed(&s, 2, 0, DerivationCorrected).unwrap();
        assert!(!corrected.routed);
        assert!((corrected.value - p1 * (1.0 - p0)).abs() < 1e-15);
        let paper = ksample_cdf_closed(&s, 2, 0, PaperStated).unwrap();
        assert!((paper.value - (1.0 - p0) * (p1 + p0)).abs() < 1e-15);
        assert!((ksample_cdf_direct(&s, 0).unwrap() - p1 * (1.0 - p0)).abs() < 1e-15);

        let at_top = DistinctDepthSummary::new(&params, 2, &[2]).unwrap();
        let routed = ksample_cdf_closed(&at_top, 2, 0, DerivationCorrected).unwrap();
        assert!(routed.routed);
        assert!((routed.value - at_top.p0 * (1.0 - at_top.p0)).abs() < 1e-15);
        assert!(ksample_cdf_closed_raw(&at_top, 2, 0, DerivationCorrected).is_none());
        assert!(matches!(
            ksample_cdf_closed(&s, 3, 0, PaperStated),
            Err(LikError::SizeMismatch { .. })
        ));
        assert!(matches!(
            DistinctDepthSummary::new(&params, 2, &[3]),
            Err(LikError::InvalidDepth { .. })
        ));
    }

    #[test]
    fn repeated_depths_are_routed() {
        let params = fig();
        let s = DistinctDepthSummary::new(&params, 3, &[1, 1]).unwrap();
        assert!(s.is_degenerate());
        let c = ksample_cdf_closed(&s, 3, 1, DerivationCorrected).unwrap();
        assert!(c.routed);
        // composition sum by hand: (1/4)(1-p0)(p0 p1^2 + 2 p1^3)
        let (p1, p0) = (s.p_values[0], s.p0);
        let hand = 0.25 * (1.0 - p0) * (p0 * p1 * p1 + 2.0 * p1.powi(3));
        assert!((c.value - hand).abs() < 1e-15);
    }

    #[test]
    fn marginal_single_tip_is_certain() {
        assert_eq!(ksample_marginal_loglik(&fig(), &seq(4, &[])).unwrap(), 0.0);
    }

    #[test]
    fn marginal_is_a_mixture_bound() {
        let params = fig();
        let s = seq(3, &[2, 1]);
        let value = ksample_marginal_loglik(&params, &s).unwrap().exp();
        let product = |y: f64| {
            s.depths()
                .iter()
                .map(|&x| crate::model::thinned_conditional_pmf(&params, y, 3, x))
                .product::<f64>()
        };
        let grid: Vec<f64> = (1..1000).map(|i| product(i as f64 / 1000.0)).collect();
        let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = grid.iter().cloned().fold(0.0, f64::max);
        assert!(lo < value && value < hi);
    }
}

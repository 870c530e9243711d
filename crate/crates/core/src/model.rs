//! Closed-form kernels of the `(p, r)` linear-fractional offspring model.
//!
//! Offspring law: `P(xi = 0) = 1 - r` and `P(xi = k) = r p (1 - p)^(k - 1)` for
//! `k >= 1`, with mean `m = r / p`. Coalescent times of the planar genealogy
//! are i.i.d. with tail `P(H > n) = (r - p) / ((1 - p) m^n - (1 - r))`, and a
//! Bernoulli(y) thinning keeps the same `A m^n - B` shape with
//! `A = y (1 - p)` and `B = y (1 - p) - (r - p)`.
//!
//! All evaluations with `m > 1` are carried out in the `w = m^-n` form so they
//! stay finite for arbitrarily large `n`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{name} = {value} is out of range, expected {expected}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("p = r = {0}: the coalescent law degenerates when p equals r")]
    DegenerateEqual(f64),
    #[error("parameters are not supercritical (m = {0}); need r > p")]
    NotSupercritical(f64),
    #[error("r = 0 has no birth-death embedding")]
    NoEmbedding,
}

fn out_of_range(name: &'static str, value: f64, expected: &'static str) -> ModelError {
    ModelError::OutOfRange {
        name,
        value,
        expected,
    }
}

/// Validated offspring parameters `(p, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct LfParams {
    p: f64,
    r: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    p: f64,
    r: f64,
}

impl TryFrom<RawParams> for LfParams {
    type Error = ModelError;
    fn try_from(raw: RawParams) -> Result<Self, ModelError> {
        LfParams::new(raw.p, raw.r)
    }
}

impl From<LfParams> for RawParams {
    fn from(params: LfParams) -> Self {
        RawParams {
            p: params.p,
            r: params.r,
        }
    }
}

impl LfParams {
    /// Checks `0 < p < 1`, `0 <= r <= 1` and `p != r`.
    pub fn new(p: f64, r: f64) -> Result<Self, ModelError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(out_of_range("p", p, "0 < p < 1"));
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(out_of_range("r", r, "0 <= r <= 1"));
        }
        if p == r {
            return Err(ModelError::DegenerateEqual(p));
        }
        Ok(Self { p, r })
    }

    /// Same as [`LfParams::new`] but also rejects `r <= p`.
    pub fn supercritical(p: f64, r: f64) -> Result<Self, ModelError> {
        let params = Self::new(p, r)?;
        params.require_supercritical()?;
        Ok(params)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Mean offspring number `m = r / p`.
    pub fn mean(&self) -> f64 {
        self.r / self.p
    }

    pub fn is_supercritical(&self) -> bool {
        self.r > self.p
    }

    pub fn require_supercritical(&self) -> Result<(), ModelError> {
        if self.is_supercritical() {
            Ok(())
        } else {
            Err(ModelError::NotSupercritical(self.mean()))
        }
    }
}

/// Tail, CDF and pmf of a law of the form `P(H > n) = gap / (A m^n - B)`
/// with `A - B = gap`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kernel {
    a: f64,
    b: f64,
    gap: f64,
    m: f64,
    ln_m: f64,
}

impl Kernel {
    pub(crate) fn coalescent(params: &LfParams) -> Self {
        let (p, r) = (params.p, params.r);
        Self::build(1.0 - p, 1.0 - r, r - p, r / p)
    }

    pub(crate) fn thinned(params: &LfParams, y: f64) -> Self {
        let (p, r) = (params.p, params.r);
        let a = y * (1.0 - p);
        Self::build(a, a - (r - p), r - p, r / p)
    }

    fn build(a: f64, b: f64, gap: f64, m: f64) -> Self {
        Self {
            a,
            b,
            gap,
            m,
            ln_m: m.ln(),
        }
    }

    fn growing(&self) -> bool {
        self.m > 1.0
    }

    /// `m^-n`, only used when `m > 1`.
    fn w(&self, n: u64) -> f64 {
        (-(n as f64) * self.ln_m).exp()
    }

    /// `1 - m^-n`, only used when `m > 1`.
    fn one_minus_w(&self, n: u64) -> f64 {
        -(-(n as f64) * self.ln_m).exp_m1()
    }

    /// `A - B m^-n`, i.e. the denominator divided by `m^n`.
    fn scaled_den(&self, n: u64) -> f64 {
        self.a - self.b * self.w(n)
    }

    fn m_pow(&self, n: u64) -> f64 {
        self.m.powf(n as f64)
    }

    pub(crate) fn tail(&self, n: u64) -> f64 {
        if n == 0 {
            return 1.0;
        }
        if self.growing() {
            self.gap * self.w(n) / self.scaled_den(n)
        } else {
            self.gap / (self.a * self.m_pow(n) - self.b)
        }
    }

    pub(crate) fn cdf(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        if self.growing() {
            self.a * self.one_minus_w(n) / self.scaled_den(n)
        } else {
            self.a * (self.m_pow(n) - 1.0) / (self.a * self.m_pow(n) - self.b)
        }
    }

    pub(crate) fn pmf(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        if self.growing() {
            self.gap * self.a * (self.m - 1.0) * self.w(n)
                / (self.scaled_den(n) * self.scaled_den(n - 1))
        } else {
            let den = |j: u64| self.a * self.m_pow(j) - self.b;
            self.gap * self.a * (self.m - 1.0) * self.m_pow(n - 1) / (den(n) * den(n - 1))
        }
    }

    pub(crate) fn ln_tail(&self, n: u64) -> f64 {
        if n == 0 {
            return 0.0;
        }
        if self.growing() {
            self.gap.ln() - n as f64 * self.ln_m - self.scaled_den(n).ln()
        } else {
            self.tail(n).ln()
        }
    }

    pub(crate) fn ln_pmf(&self, n: u64) -> f64 {
        if n == 0 {
            return f64::NEG_INFINITY;
        }
        if self.growing() {
            (self.gap * self.a * (self.m - 1.0)).ln()
                - n as f64 * self.ln_m
                - self.scaled_den(n).ln()
                - self.scaled_den(n - 1).ln()
        } else {
            self.pmf(n).ln()
        }
    }

    pub(crate) fn ln_cdf(&self, n: u64) -> f64 {
        self.cdf(n).ln()
    }

    /// `P(H = x | H <= t)` evaluated without the common factor `A`, so the
    /// thinned version stays accurate as `y -> 0`.
    pub(crate) fn conditional_pmf(&self, x: u64, t: u64) -> f64 {
        if x == 0 || x > t {
            return 0.0;
        }
        if self.growing() {
            self.gap * (self.m - 1.0) * self.w(x) * self.scaled_den(t)
                / (self.one_minus_w(t) * self.scaled_den(x) * self.scaled_den(x - 1))
        } else {
            self.pmf(x) / self.cdf(t)
        }
    }

    pub(crate) fn ln_conditional_pmf(&self, x: u64, t: u64) -> f64 {
        if x == 0 || x > t {
            return f64::NEG_INFINITY;
        }
        if self.growing() {
            (self.gap * (self.m - 1.0)).ln() - x as f64 * self.ln_m + self.scaled_den(t).ln()
                - self.one_minus_w(t).ln()
                - self.scaled_den(x).ln()
                - self.scaled_den(x - 1).ln()
        } else {
            self.conditional_pmf(x, t).ln()
        }
    }
}

/// `P(xi = k)`.
pub fn offspring_pmf(params: &LfParams, k: u64) -> f64 {
    if k == 0 {
        1.0 - params.r
    } else {
        params.r * params.p * (1.0 - params.p).powf((k - 1) as f64)
    }
}

/// Inverse CDF of the offspring law for `u` in `[0, 1)`.
pub fn offspring_quantile(params: &LfParams, u: f64) -> u64 {
    let zero = 1.0 - params.r;
    if u < zero {
        return 0;
    }
    // Conditionally on xi >= 1, xi - 1 is Geometric(p) on {0, 1, ...}.
    let v = ((u - zero) / params.r).min(1.0 - f64::EPSILON);
    let extra = ((-v).ln_1p() / (-params.p).ln_1p()).floor();
    1 + extra as u64
}

pub fn sample_offspring<R: Rng + ?Sized>(params: &LfParams, rng: &mut R) -> u64 {
    offspring_quantile(params, rng.random::<f64>())
}

/// `P(H > n)`.
pub fn coalescent_tail(params: &LfParams, n: u64) -> f64 {
    Kernel::coalescent(params).tail(n)
}

/// `P(H <= n)`.
pub fn coalescent_cdf(params: &LfParams, n: u64) -> f64 {
    Kernel::coalescent(params).cdf(n)
}

/// `P(H = n)`; zero for `n = 0` since `H >= 1` almost surely.
pub fn coalescent_pmf(params: &LfParams, n: u64) -> f64 {
    Kernel::coalescent(params).pmf(n)
}

pub fn ln_coalescent_pmf(params: &LfParams, n: u64) -> f64 {
    Kernel::coalescent(params).ln_pmf(n)
}

pub fn ln_coalescent_tail(params: &LfParams, n: u64) -> f64 {
    Kernel::coalescent(params).ln_tail(n)
}

/// Raw tail formula evaluated at arbitrary real `(p, r)`, valid or not.
///
/// Used to check whether the thinned coalescent law can be written as the
/// unthinned one at shifted parameters.
pub fn tail_formula(p: f64, r: f64, n: u64) -> f64 {
    let m = r / p;
    (r - p) / ((1.0 - p) * m.powf(n as f64) - (1.0 - r))
}

fn check_y(y: f64) {
    assert!(y > 0.0 && y <= 1.0, "sampling probability {y} outside (0, 1]");
}

/// `P(H_y > n)` for the Bernoulli(y)-thinned coalescent times.
pub fn thinned_tail(params: &LfParams, y: f64, n: u64) -> f64 {
    check_y(y);
    Kernel::thinned(params, y).tail(n)
}

pub fn thinned_cdf(params: &LfParams, y: f64, n: u64) -> f64 {
    check_y(y);
    Kernel::thinned(params, y).cdf(n)
}

pub fn thinned_pmf(params: &LfParams, y: f64, n: u64) -> f64 {
    check_y(y);
    Kernel::thinned(params, y).pmf(n)
}

/// `P(H_y <= j | H_y <= t)`; `0` for `j = 0` and `1` for `j >= t`.
pub fn thinned_conditional_cdf(params: &LfParams, y: f64, t: u64, j: u64) -> f64 {
    check_y(y);
    if j == 0 {
        return 0.0;
    }
    if j >= t {
        return 1.0;
    }
    let (p, r) = (params.p, params.r);
    let gap = r - p;
    let a = y * (1.0 - p);
    let m = params.mean();
    if m > 1.0 {
        let ln_m = m.ln();
        let w = |n: u64| (-(n as f64) * ln_m).exp();
        let omw = |n: u64| -(-(n as f64) * ln_m).exp_m1();
        (omw(j) / omw(t)) * (gap * w(t) + a * omw(t)) / (gap * w(j) + a * omw(j))
    } else {
        let mj = m.powf(j as f64);
        let mt = m.powf(t as f64);
        ((mj - 1.0) / (mt - 1.0)) * (gap + a * (mt - 1.0)) / (gap + a * (mj - 1.0))
    }
}

/// `P(H_y = x | H_y <= t)`.
pub fn thinned_conditional_pmf(params: &LfParams, y: f64, t: u64, x: u64) -> f64 {
    check_y(y);
    Kernel::thinned(params, y).conditional_pmf(x, t)
}

/// Thinned parameters `p_y = 1 - y(1 - p)`, `r_y = p_y + r - p`, plus a report
/// on whether they describe the thinned coalescent law.
///
/// They generally do not: the thinned tail keeps the growth factor `m = r/p`
/// of the unthinned process while `r_y / p_y` differs from it for `y < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThinnedParams {
    pub base: LfParams,
    pub y: f64,
    pub p_y: f64,
    pub r_y: f64,
    /// `(p_y, r_y)` passes [`LfParams::new`].
    pub valid: bool,
    /// The tail formula at `(p_y, r_y)` agrees with [`thinned_tail`] to 1e-12
    /// for every `n` in `0..=horizon`.
    pub consistent: bool,
    pub horizon: u64,
    pub max_discrepancy: f64,
}

pub const THINNED_CHECK_HORIZON: u64 = 20;

pub fn thinned_params(params: &LfParams, y: f64) -> ThinnedParams {
    thinned_params_upto(params, y, THINNED_CHECK_HORIZON)
}

pub fn thinned_params_upto(params: &LfParams, y: f64, horizon: u64) -> ThinnedParams {
    check_y(y);
    let (p, r) = (params.p, params.r);
    let p_y = 1.0 - y * (1.0 - p);
    let r_y = 1.0 - y * (1.0 - p) + r - p;
    let max_discrepancy = (0..=horizon)
        .map(|n| (tail_formula(p_y, r_y, n) - thinned_tail(params, y, n)).abs())
        .fold(0.0, f64::max);
    ThinnedParams {
        base: *params,
        y,
        p_y,
        r_y,
        valid: LfParams::new(p_y, r_y).is_ok(),
        consistent: max_discrepancy < 1e-12,
        horizon,
        max_discrepancy,
    }
}

/// The mixing law `mu_k` on the Bernoulli sampling probability that turns
/// Bernoulli sampling into uniform sampling of `k` tips.
///
/// Density `k d y^(k-1) / (d + (1 - d) y)^(k+1)` and CDF
/// `(y / (d + (1 - d) y))^k` on `(0, 1)`, where `d = P(H > T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuK {
    delta: f64,
    k: u32,
}

impl MuK {
    pub fn new(delta: f64, k: u32) -> Result<Self, ModelError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(out_of_range("delta_T", delta, "0 < delta_T < 1"));
        }
        if k == 0 {
            return Err(out_of_range("k", 0.0, "k >= 1"));
        }
        Ok(Self { delta, k })
    }

    /// The measure for uniform `k`-samples of a CPP(T) tree.
    pub fn for_tree(params: &LfParams, t: u64, k: u32) -> Result<Self, ModelError> {
        Self::new(coalescent_tail(params, t), k)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn density(&self, y: f64) -> f64 {
        let d = self.delta;
        let k = self.k as i32;
        k as f64 * d * y.powi(k - 1) / (d + (1.0 - d) * y).powi(k + 1)
    }

    pub fn ln_density(&self, y: f64) -> f64 {
        let d = self.delta;
        let k = self.k as f64;
        k.ln() + d.ln() + (k - 1.0) * y.ln() - (k + 1.0) * (d + (1.0 - d) * y).ln()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if y >= 1.0 {
            return 1.0;
        }
        (y / (self.delta + (1.0 - self.delta) * y)).powi(self.k as i32)
    }

    /// Inverse of [`MuK::cdf`]: `V = u^(1/k)`, `Y = d V / (1 - (1 - d) V)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let v = u.powf(1.0 / self.k as f64);
        self.delta * v / (1.0 - (1.0 - self.delta) * v)
    }

    /// Draws `U` uniform on `(0, 1]` and inverts the CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = 1.0 - rng.random::<f64>();
        self.quantile(u)
    }
}

/// Rates of the continuous-time birth-death process in which the model
/// embeds at integer times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdRates {
    pub lambda: f64,
    pub mu: f64,
}

pub fn bd_embedding_rates(params: &LfParams) -> Result<BdRates, ModelError> {
    let (p, r) = (params.p, params.r);
    if r == 0.0 {
        return Err(ModelError::NoEmbedding);
    }
    let factor = (p.ln() - r.ln()) / (p - r);
    Ok(BdRates {
        lambda: (1.0 - p) * factor,
        mu: (1.0 - r) * factor,
    })
}

//! Random generation of CPP(T) trees, forward genealogies and tip samples.
//!
//! Every generator takes a caller-owned random stream. [`stream_rng`] derives
//! independent, reproducible streams from a base seed and a stream index
//! (ChaCha8 with the index as its stream id), which is how the CLI splits work
//! across repetitions and threads.

use crate::model::{self, Kernel, LfParams, ModelError, MuK};
use crate::tree::DepthSeq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("tree height must be at least 1")]
    ZeroHeight,
    #[error("population exceeded {limit} individuals at generation {generation}")]
    Overflow { generation: u64, limit: usize },
    #[error("cannot sample {k} tips from {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("mask selects no tip")]
    EmptyMask,
    #[error("mask has {mask} entries but the tree has {tips} tips")]
    MaskLength { mask: usize, tips: usize },
    #[error("sampling probability {0} outside (0, 1]")]
    BadProbability(f64),
}

/// Reproducible random stream `stream` of base seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Population cap of the forward simulator, summed over all generations.
pub const FORWARD_POPULATION_LIMIT: usize = 10_000_000;

/// Smallest index `i` with `u < cdf[i]`, or `None` when `u` is beyond the table.
fn invert(cdf: &[f64], u: f64) -> Option<usize> {
    let i = cdf.partition_point(|&c| c <= u);
    (i < cdf.len()).then_some(i)
}

/// Inverse-CDF sampler for CPP(T) trees with a precomputed `P(H <= n)` table.
#[derive(Debug, Clone)]
pub struct CppSampler {
    height: u64,
    cdf: Vec<f64>,
}

impl CppSampler {
    pub fn new(params: &LfParams, height: u64) -> Result<Self, SimError> {
        params.require_supercritical()?;
        if height == 0 {
            return Err(SimError::ZeroHeight);
        }
        let kernel = Kernel::coalescent(params);
        let cdf = (1..=height).map(|n| kernel.cdf(n)).collect();
        Ok(Self { height, cdf })
    }

    /// One coalescent time, or `None` if it exceeds `T`.
    pub fn draw_depth<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<u64> {
        invert(&self.cdf, rng.random::<f64>()).map(|i| i as u64 + 1)
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> DepthSeq {
        let mut depths = Vec::new();
        while let Some(h) = self.draw_depth(rng) {
            depths.push(h);
        }
        DepthSeq::new_unchecked(self.height, depths)
    }
}

/// Draws i.i.d. coalescent times until the first one above `T`.
pub fn simulate_cpp<R: Rng + ?Sized>(
    params: &LfParams,
    height: u64,
    rng: &mut R,
) -> Result<DepthSeq, SimError> {
    Ok(CppSampler::new(params, height)?.simulate(rng))
}

/// Planar genealogy of a single-ancestor population.
///
/// `parents[g][i]` is the index, within generation `g`, of the mother of
/// individual `i` of generation `g + 1`. Daughters of one mother are
/// contiguous and mothers appear in order, which is the monotone planar
/// embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardGenealogy {
    parents: Vec<Vec<usize>>,
}

impl ForwardGenealogy {
    pub fn from_parents(parents: Vec<Vec<usize>>) -> Self {
        Self { parents }
    }

    pub fn generations(&self) -> u64 {
        self.parents.len() as u64
    }

    pub fn generation_size(&self, g: usize) -> usize {
        if g == 0 {
            1
        } else {
            self.parents[g - 1].len()
        }
    }

    pub fn parents(&self) -> &[Vec<usize>] {
        &self.parents
    }

    /// Individuals alive at the last generation.
    pub fn tip_count(&self) -> usize {
        self.generation_size(self.parents.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForwardOutcome {
    Extinct { generation: u64 },
    Survived(ForwardGenealogy),
}

/// Grows a population from one ancestor for `height` generations.
///
/// Works for any valid parameters, subcritical included.
pub fn simulate_forward_bgw<R: Rng + ?Sized>(
    params: &LfParams,
    height: u64,
    rng: &mut R,
) -> Result<ForwardOutcome, SimError> {
    if height == 0 {
        return Err(SimError::ZeroHeight);
    }
    let mut parents: Vec<Vec<usize>> = Vec::with_capacity(height as usize);
    let mut current = 1usize;
    let mut total = 1usize;
    for generation in 1..=height {
        let mut next = Vec::new();
        for mother in 0..current {
            let kids = model::sample_offspring(params, rng) as usize;
            total += kids;
            if total > FORWARD_POPULATION_LIMIT {
                return Err(SimError::Overflow {
                    generation,
                    limit: FORWARD_POPULATION_LIMIT,
                });
            }
            next.extend(std::iter::repeat_n(mother, kids));
        }
        if next.is_empty() {
            return Ok(ForwardOutcome::Extinct { generation });
        }
        current = next.len();
        parents.push(next);
    }
    Ok(ForwardOutcome::Survived(ForwardGenealogy { parents }))
}

/// Generations back to the common ancestor of each consecutive pair of
/// survivors.
pub fn coalescent_depths_of(fwd: &ForwardGenealogy) -> DepthSeq {
    let height = fwd.generations();
    let n = fwd.tip_count();
    let mut depths = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        let (mut a, mut b) = (i - 1, i);
        let mut back = 0;
        for level in fwd.parents.iter().rev() {
            a = level[a];
            b = level[b];
            back += 1;
            if a == b {
                break;
            }
        }
        depths.push(back);
    }
    DepthSeq::new_unchecked(height, depths)
}

/// Tip-selection indicators, one per tip of a tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleMask {
    selected: Vec<bool>,
}

impl SampleMask {
    pub fn new(selected: Vec<bool>) -> Self {
        Self { selected }
    }

    pub fn full(n: usize) -> Self {
        Self::new(vec![true; n])
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        let mut selected = vec![false; n];
        for &i in indices {
            selected[i] = true;
        }
        Self { selected }
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
    }

    /// Mask `inner` is indexed by the tips this mask selects.
    pub fn compose(&self, inner: &SampleMask) -> SampleMask {
        let mut selected = vec![false; self.len()];
        for (j, i) in self.indices().enumerate() {
            selected[i] = inner.selected[j];
        }
        SampleMask { selected }
    }
}

/// Keeps each of `n` tips independently with probability `y`.
pub fn bernoulli_mask<R: Rng + ?Sized>(
    n: usize,
    y: f64,
    rng: &mut R,
) -> Result<SampleMask, SimError> {
    if !(y > 0.0 && y <= 1.0) {
        return Err(SimError::BadProbability(y));
    }
    Ok(SampleMask::new(
        (0..n).map(|_| rng.random::<f64>() < y).collect(),
    ))
}

/// Uniformly random `k`-subset of `n` tips by a partial Fisher-Yates shuffle.
pub fn uniform_mask<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<SampleMask, SimError> {
    if k == 0 {
        return Err(SimError::EmptySample);
    }
    if k > n {
        return Err(SimError::KTooLarge { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    Ok(SampleMask::from_indices(n, &order[..k]))
}

/// Depths of the subtree spanned by the selected tips: between consecutive
/// selected tips, the maximum of the original depths separating them. The
/// height stays `T`.
pub fn subsample_depths(seq: &DepthSeq, mask: &SampleMask) -> Result<DepthSeq, SimError> {
    if mask.len() != seq.tip_count() {
        return Err(SimError::MaskLength {
            mask: mask.len(),
            tips: seq.tip_count(),
        });
    }
    let mut kept = Vec::new();
    let mut seen_first = false;
    let mut run_max = 0;
    for (i, &sel) in mask.selected.iter().enumerate() {
        if i > 0 {
            run_max = run_max.max(seq.depths()[i - 1]);
        }
        if sel {
            if seen_first {
                kept.push(run_max);
            }
            seen_first = true;
            run_max = 0;
        }
    }
    if !seen_first {
        return Err(SimError::EmptyMask);
    }
    Ok(DepthSeq::new_unchecked(seq.height(), kept))
}

/// Two-stage sampler for the tree of a uniform `k`-sample: draw `Y` from
/// `mu_k`, then `k - 1` i.i.d. depths from `P(H_Y <= j | H_Y <= T)`.
#[derive(Debug, Clone)]
pub struct KSampleMixture {
    params: LfParams,
    height: u64,
    mixing: MuK,
}

impl KSampleMixture {
    pub fn new(params: &LfParams, height: u64, k: usize) -> Result<Self, SimError> {
        params.require_supercritical()?;
        if height == 0 {
            return Err(SimError::ZeroHeight);
        }
        if k == 0 {
            return Err(SimError::EmptySample);
        }
        Ok(Self {
            params: *params,
            height,
            mixing: MuK::for_tree(params, height, k as u32)?,
        })
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> DepthSeq {
        let k = self.mixing.k() as usize;
        if k == 1 {
            return DepthSeq::new_unchecked(self.height, Vec::new());
        }
        let y = self.mixing.sample(rng);
        let cdf: Vec<f64> = (1..=self.height)
            .map(|j| model::thinned_conditional_cdf(&self.params, y, self.height, j))
            .collect();
        let depths = (1..k)
            .map(|_| {
                let u = rng.random::<f64>();
                invert(&cdf, u).unwrap_or(cdf.len() - 1) as u64 + 1
            })
            .collect();
        DepthSeq::new_unchecked(self.height, depths)
    }
}

pub fn simulate_ksample_mixture<R: Rng + ?Sized>(
    params: &LfParams,
    height: u64,
    k: usize,
    rng: &mut R,
) -> Result<DepthSeq, SimError> {
    Ok(KSampleMixture::new(params, height, k)?.simulate(rng))
}

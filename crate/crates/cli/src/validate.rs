use crate::CliError;
use clap::ValueEnum;
use lfcoal::model::{coalescent_cdf, coalescent_pmf, coalescent_tail, thinned_params, thinned_tail};
use lfcoal::oracle::quadrature::quadrature;
use lfcoal::oracle::stats::{chi_square_gof, kolmogorov_distance, total_variation};
use lfcoal::oracle::{
    adjudicate_cdf, adjudicate_density, cdf_hand_case, exact_sampled_law, repeated_value_case,
    verify_mixture_identity, AdjudicationGrid, SamplingScheme,
};
use lfcoal::sim::{coalescent_depths_of, simulate_forward_bgw, CppSampler, ForwardOutcome, KSampleMixture};
use lfcoal::{stream_rng, FormulaVariant, LfParams, MuK};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Eq3,
    Eq4,
    Muk,
    Mixture,
    Density,
    Cdf,
    All,
}

#[derive(Debug, Serialize)]
pub struct Outcome {
    pub name: &'static str,
    pub pass: bool,
    pub lines: Vec<String>,
}

fn compute(e: impl std::fmt::Display) -> CliError {
    CliError::Compute(e.to_string())
}

pub fn run(
    suite: Suite,
    params: &LfParams,
    reps: usize,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<Vec<Outcome>, CliError> {
    let selected = |s: Suite| suite == s || suite == Suite::All;
    let mut out = Vec::new();
    // each suite draws from its own block of streams
    if selected(Suite::Eq3) {
        out.push(pool.install(|| eq3(params, reps, seed))?);
    }
    if selected(Suite::Eq4) {
        out.push(pool.install(|| eq4(params, reps, seed))?);
    }
    if selected(Suite::Muk) {
        out.push(pool.install(|| muk(reps, seed)));
    }
    if selected(Suite::Mixture) {
        out.push(pool.install(|| mixture(params, reps, seed))?);
    }
    if selected(Suite::Density) {
        out.push(density(params)?);
    }
    if selected(Suite::Cdf) {
        out.push(cdf(params)?);
    }
    Ok(out)
}

const EQ3_HEIGHT: u64 = 6;
const EQ3_TIP_BINS: usize = 60;
const EQ4_HEIGHT: u64 = 10;
const STREAM_BLOCK: u64 = 1 << 40;

fn eq3(params: &LfParams, reps: usize, seed: u64) -> Result<Outcome, CliError> {
    let t = EQ3_HEIGHT;
    let trees = (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            loop {
                match simulate_forward_bgw(params, t, &mut rng)? {
                    ForwardOutcome::Survived(g) => return Ok(coalescent_depths_of(&g)),
                    ForwardOutcome::Extinct { .. } => continue,
                }
            }
        })
        .collect::<Result<Vec<_>, lfcoal::sim::SimError>>()
        .map_err(compute)?;
    let mut depths = vec![0u64; t as usize];
    let mut tips = vec![0u64; EQ3_TIP_BINS];
    for seq in &trees {
        tips[(seq.tip_count() - 1).min(EQ3_TIP_BINS - 1)] += 1;
        for &x in seq.depths() {
            depths[x as usize - 1] += 1;
        }
    }
    let (p0, delta) = (coalescent_cdf(params, t), coalescent_tail(params, t));
    let depth_law: Vec<f64> = (1..=t).map(|x| coalescent_pmf(params, x) / p0).collect();
    let mut tip_law: Vec<f64> = (1..EQ3_TIP_BINS).map(|n| p0.powi(n as i32 - 1) * delta).collect();
    tip_law.push(p0.powi(EQ3_TIP_BINS as i32 - 1));
    let d = chi_square_gof(&depths, &depth_law).map_err(compute)?;
    let n = chi_square_gof(&tips, &tip_law).map_err(compute)?;
    Ok(Outcome {
        name: "eq3",
        pass: d.p_value > 0.001 && n.p_value > 0.001,
        lines: vec![
            format!("forward trees at ({}, {}), T={t}, {reps} survivors", params.p(), params.r()),
            format!("  depths vs P(H = n | H <= T): chi2 {:.3} on {} dof, p = {:.4}", d.statistic, d.dof, d.p_value),
            format!("  tips vs Geometric(delta_T):   chi2 {:.3} on {} dof, p = {:.4}", n.statistic, n.dof, n.p_value),
        ],
    })
}

/// `sum_j y (1-y)^(j-1) (1 - F(n)^j)`, the tail of the largest of a
/// Geometric(y) number of coalescent times.
fn block_series(params: &LfParams, y: f64, n: u64) -> f64 {
    let f = coalescent_cdf(params, n);
    let mut sum = 0.0;
    let mut j = 1;
    while (1.0 - y).powi(j - 1) > 1e-18 {
        sum += y * (1.0 - y).powi(j - 1) * (1.0 - f.powi(j));
        j += 1;
    }
    sum
}

fn eq4(params: &LfParams, reps: usize, seed: u64) -> Result<Outcome, CliError> {
    let t = EQ4_HEIGHT;
    let sampler = CppSampler::new(params, t).map_err(compute)?;
    let mut lines = Vec::new();
    let mut pass = true;
    for (slot, y) in [0.1, 0.5].into_iter().enumerate() {
        let series = (0..=20)
            .map(|n| (thinned_tail(params, y, n) - block_series(params, y, n)).abs())
            .fold(0.0, f64::max);
        let exceed: Vec<u64> = (0..reps)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, STREAM_BLOCK * (1 + slot as u64) + i as u64);
                let mut run_max = 0;
                loop {
                    let h = sampler.draw_depth(&mut rng).unwrap_or(t + 1);
                    run_max = run_max.max(h);
                    if rng.random::<f64>() < y {
                        return run_max;
                    }
                }
            })
            .collect();
        let mc = (0..=t)
            .map(|n| {
                let share = exceed.iter().filter(|&&h| h > n).count() as f64 / reps as f64;
                (share - thinned_tail(params, y, n)).abs()
            })
            .fold(0.0, f64::max);
        pass &= series < 1e-10 && mc < 0.005;
        lines.push(format!(
            "thinned tail y={y}: block series max |diff| {series:.2e} (n <= 20), run-maximum Monte Carlo max |diff| {mc:.4} (T={t}, {reps} reps)"
        ));
    }
    let tp = thinned_params(params, 0.5);
    lines.push(format!(
        "  finding: (p_y, r_y) = ({}, {}) at y=0.5 gives tail {:.6} at n=1, thinned tail is {:.6}",
        tp.p_y,
        tp.r_y,
        lfcoal::model::tail_formula(tp.p_y, tp.r_y, 1),
        thinned_tail(params, 0.5, 1)
    ));
    Ok(Outcome { name: "eq4", pass, lines })
}

fn muk(reps: usize, seed: u64) -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let (mut worst_mass, mut worst_ks) = (0.0f64, 0.0f64);
    for (a, delta) in [0.1, 0.5, 0.9].into_iter().enumerate() {
        for k in 1..=8u32 {
            let mu = MuK::new(delta, k).expect("valid mixing parameters");
            pass &= mu.cdf(0.0) == 0.0 && mu.cdf(1.0) == 1.0;
            let mass = quadrature(|y| mu.density(y), 1e-12).map(|i| i.value).unwrap_or(f64::NAN);
            worst_mass = worst_mass.max((mass - 1.0).abs());
            let stream = STREAM_BLOCK * (3 + a as u64 * 8 + k as u64);
            let mut draws: Vec<f64> = (0..reps)
                .into_par_iter()
                .map(|i| mu.sample(&mut stream_rng(seed, stream + i as u64)))
                .collect();
            worst_ks = worst_ks.max(kolmogorov_distance(&mut draws, |y| mu.cdf(y)));
        }
    }
    pass &= worst_mass < 1e-8 && worst_ks < 0.01;
    lines.push(format!(
        "mu_k, k in 1..=8, delta in {{0.1, 0.5, 0.9}}: max |mass - 1| {worst_mass:.2e}, max Kolmogorov distance {worst_ks:.4} at {reps} draws"
    ));
    Outcome { name: "muk", pass, lines }
}

fn mixture(params: &LfParams, reps: usize, seed: u64) -> Result<Outcome, CliError> {
    let mut lines = Vec::new();
    let mut pass = true;
    for t in [2, 3] {
        for k in [2, 3] {
            let report = verify_mixture_identity(params, t, k, None, 1e-9).map_err(compute)?;
            pass &= report.max_abs_diff < 1e-6 && report.residual < 1e-12;
            lines.push(format!(
                "mixture identity T={t}, k={k}: max |exact - mixture| {:.2e}, enumeration residual {:.1e}",
                report.max_abs_diff, report.residual
            ));
        }
    }
    let law = exact_sampled_law(params, 2, 2, SamplingScheme::Uniform, None).map_err(compute)?;
    let sampler = KSampleMixture::new(params, 2, 2).map_err(compute)?;
    let stream = STREAM_BLOCK * 40;
    let counts = (0..reps)
        .into_par_iter()
        .map(|i| sampler.simulate(&mut stream_rng(seed, stream + i as u64)).depths()[0])
        .fold(|| [0u64; 2], |mut c, x| {
            c[x as usize - 1] += 1;
            c
        })
        .reduce(|| [0u64; 2], |a, b| [a[0] + b[0], a[1] + b[1]]);
    let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / reps as f64).collect();
    let exact = [law.get(&[1]) / law.total(), law.get(&[2]) / law.total()];
    let tv = total_variation(&empirical, &exact);
    pass &= tv < 0.01;
    lines.push(format!("two-stage sampler T=2, k=2: total variation {tv:.4} at {reps} draws"));
    Ok(Outcome { name: "mixture", pass, lines })
}

fn density(params: &LfParams) -> Result<Outcome, CliError> {
    let grid = AdjudicationGrid {
        params: vec![*params],
        ..AdjudicationGrid::density_default()
    };
    let report = adjudicate_density(&grid).map_err(compute)?;
    let mut lines: Vec<String> = report.to_string().lines().map(str::to_string).collect();
    if let Some(c) = report.find(params, 1, 1, 1, &[]) {
        lines.push(format!(
            "  cell T=1, k=1, m=1: exact {:.6}, paper-stated {}, corrected {:.6}",
            c.exact,
            c.paper_stated.map_or("-".into(), |v| format!("{v:.6}")),
            c.corrected
        ));
    }
    Ok(Outcome {
        name: "density",
        pass: report.matching_variant().is_some(),
        lines,
    })
}

fn cdf(params: &LfParams) -> Result<Outcome, CliError> {
    let grid = AdjudicationGrid {
        params: vec![*params],
        ..AdjudicationGrid::cdf_default()
    };
    let report = adjudicate_cdf(&grid).map_err(compute)?;
    let worst = report
        .cells
        .iter()
        .filter(|c| !c.routed)
        .filter_map(|c| c.summed_printed.map(|s| (c.corrected - s).abs()))
        .fold(0.0, f64::max);
    let mut lines: Vec<String> = report.to_string().lines().map(str::to_string).collect();
    lines.push(format!(
        "  {} closed form vs summed direct formula: max |diff| {worst:.2e}",
        FormulaVariant::DerivationCorrected.name()
    ));
    let hand = cdf_hand_case(params, 2, 1).map_err(compute)?;
    lines.extend(hand.to_string().lines().map(str::to_string));
    let repeated = repeated_value_case(params, 3, &[2, 2], 0).map_err(compute)?;
    lines.extend(repeated.to_string().lines().map(str::to_string));
    Ok(Outcome { name: "cdf", pass: worst < 1e-12, lines })
}

use lfcoal::likelihood::FormulaVariant;
use lfcoal::model::{coalescent_cdf, coalescent_tail, thinned_conditional_pmf, LfParams, MuK};
use lfcoal::oracle::quadrature::quadrature;
use lfcoal::oracle::stats::{chi_square_sf, ln_gamma};
use lfcoal::oracle::*;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const GRID: [(f64, f64); 3] = [(0.3, 0.6), (0.5, 0.8), (0.2, 0.9)];

fn fig() -> LfParams {
    LfParams::new(0.5, 0.8).unwrap()
}

#[test]
fn bernoulli_law_has_iid_thinned_depths() {
    for (p, r) in GRID {
        let params = LfParams::new(p, r).unwrap();
        for y in [0.2, 0.7] {
            for t in 1..=3 {
                for k in 2..=3 {
                    let law = exact_sampled_law(&params, t, k, SamplingScheme::Bernoulli(y), None).unwrap();
                    assert!((law.total() + law.residual - 1.0).abs() < 1e-12);
                    for (xs, &prob) in &law.probs {
                        let product: f64 = xs
                            .iter()
                            .map(|&x| thinned_conditional_pmf(&params, y, t, x))
                            .product();
                        assert!((prob - product).abs() < 1e-12, "{p} {r} y={y} T={t} {xs:?}");
                    }
                    for i in 0..k - 1 {
                        for x in 1..=t {
                            let marginal: f64 = law
                                .probs
                                .iter()
                                .filter(|(xs, _)| xs[i] == x)
                                .map(|(_, w)| w)
                                .sum();
                            let expected = thinned_conditional_pmf(&params, y, t, x);
                            assert!((marginal - expected).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn selection_patterns_mix_over_mu_k() {
    for (p, r) in GRID {
        let params = LfParams::new(p, r).unwrap();
        for t in 1..=2 {
            let (p0, delta) = (coalescent_cdf(&params, t), coalescent_tail(&params, t));
            for k in 1..=2u32 {
                let mu = MuK::new(delta, k).unwrap();
                for m in k..k + 6 {
                    let subsets: f64 = (1..=k).map(|i| (m - k + i) as f64 / i as f64).product();
                    let uniform = delta * p0.powi((m - k) as i32) / subsets;
                    // P_y(N = m, pattern | K = k) for any fixed pattern with k ones
                    let bernoulli = |y: f64| {
                        (p0 * (1.0 - y)).powi((m - k) as i32) * (1.0 - p0 * (1.0 - y)).powi(k as i32 + 1)
                    };
                    let mixed = quadrature(|y| mu.density(y) * bernoulli(y), 1e-12).unwrap().value;
                    assert!((mixed - uniform).abs() < 1e-10, "{p} {r} T={t} k={k} m={m}");
                }
            }
        }
    }
}

#[test]
fn density_verdict_is_stable_across_parameters() {
    for (p, r) in GRID {
        let grid = AdjudicationGrid {
            params: vec![LfParams::new(p, r).unwrap()],
            ..AdjudicationGrid::density_default()
        };
        let report = adjudicate_density(&grid).unwrap();
        assert_eq!(report.matching_variant(), Some(FormulaVariant::DerivationCorrected));
        assert_eq!(report.both_fail_cells, 0);
    }
}

#[test]
fn documented_cells() {
    let stem = adjudicate_density(&AdjudicationGrid::single(fig(), 1, 1, vec![1])).unwrap();
    let cell = stem.find(&fig(), 1, 1, 1, &[]).unwrap();
    assert!((cell.exact - 0.25).abs() < 1e-15);
    assert!((cell.paper_stated.unwrap() - 0.125).abs() < 1e-15);
    assert!((cell.corrected - 0.25).abs() < 1e-15);

    let pair = adjudicate_density(&AdjudicationGrid::single(fig(), 2, 2, vec![0])).unwrap();
    for cell in &pair.cells {
        assert!((cell.paper_stated.unwrap() - cell.exact).abs() < 1e-15);
        assert!((cell.corrected - cell.exact).abs() < 1e-15);
    }

    let cdf = adjudicate_cdf(&AdjudicationGrid::single(fig(), 2, 2, vec![0])).unwrap();
    assert!(cdf.find(&fig(), 2, 2, 0, &[2]).unwrap().routed);
    assert!(!cdf.find(&fig(), 2, 2, 0, &[1]).unwrap().routed);
    assert!(cdf.table().contains("routed-to-direct"));
}

#[test]
fn mixture_identity_beyond_the_acceptance_grid() {
    for (t, k) in [(1, 1), (1, 3), (2, 4), (4, 2)] {
        let report = verify_mixture_identity(&LfParams::new(0.2, 0.9).unwrap(), t, k, None, 1e-10).unwrap();
        assert!(report.max_abs_diff < 1e-8, "T={t} k={k}: {}", report.max_abs_diff);
    }
}

#[test]
fn ln_gamma_agrees_with_statrs() {
    for i in 1..400 {
        let x = i as f64 * 0.137;
        let ours = ln_gamma(x);
        let theirs = statrs::function::gamma::ln_gamma(x);
        assert!((ours - theirs).abs() < 1e-12 * theirs.abs().max(1.0), "{x}");
    }
}

proptest! {
    #[test]
    fn chi_square_tail_agrees_with_statrs(stat in 0.0f64..200.0, dof in 1usize..60) {
        let theirs = ChiSquared::new(dof as f64).unwrap().sf(stat);
        let ours = chi_square_sf(stat, dof);
        prop_assert!((ours - theirs).abs() < 1e-10, "{} vs {}", ours, theirs);
    }
}

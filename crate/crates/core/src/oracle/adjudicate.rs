//! Adjudication of the two contested uniform-sample formulas, and the check
//! of the mixture identity for the uniform-sample law.

use super::enumerate::{exact_sampled_law, joint_by_tip_count, SamplingScheme};
use super::OracleError;
use crate::likelihood::{
    ksample_cdf_closed, ksample_cdf_closed_raw, ksample_lik_direct, ksample_marginal_lik,
    DistinctDepthSummary, FormulaVariant,
};
use crate::model::LfParams;
use crate::tree::DepthSeq;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;

/// Discrepancy below which a variant "matches" its reference.
pub const MATCH_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjudicationGrid {
    pub params: Vec<LfParams>,
    pub heights: Vec<u64>,
    pub ks: Vec<usize>,
    pub ms: Vec<usize>,
}

fn standard_params(sets: &[(f64, f64)]) -> Vec<LfParams> {
    sets.iter()
        .map(|&(p, r)| LfParams::new(p, r).expect("valid grid parameters"))
        .collect()
}

impl AdjudicationGrid {
    pub fn density_default() -> Self {
        Self {
            params: standard_params(&[(0.5, 0.8), (0.3, 0.6), (0.2, 0.9)]),
            heights: vec![1, 2],
            ks: vec![1, 2, 3],
            ms: vec![0, 1, 2, 3],
        }
    }

    pub fn cdf_default() -> Self {
        Self {
            params: standard_params(&[(0.5, 0.8), (0.3, 0.6), (0.2, 0.9)]),
            heights: vec![1, 2, 3],
            ks: vec![1, 2, 3],
            ms: vec![0, 1, 2, 3, 4],
        }
    }

    pub fn single(params: LfParams, height: u64, k: usize, ms: Vec<usize>) -> Self {
        Self {
            params: vec![params],
            heights: vec![height],
            ks: vec![k],
            ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Matches,
    Fails,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// The exact law from enumeration.
    ExactLaw,
    /// The printed density summed over all depth vectors below the cell.
    SummedPrintedDensity,
}

impl Reference {
    fn name(self) -> &'static str {
        match self {
            Reference::ExactLaw => "exact law",
            Reference::SummedPrintedDensity => "summed printed density",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariantVerdict {
    pub variant: FormulaVariant,
    pub reference: Reference,
    pub verdict: Verdict,
    pub max_discrepancy: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub p: f64,
    pub r: f64,
    pub height: u64,
    pub k: usize,
    pub m: usize,
    pub depths: Vec<u64>,
    pub exact: f64,
    /// `None` where the printed formula divides by zero.
    pub paper_stated: Option<f64>,
    pub corrected: f64,
    /// Only for the CDF: the printed density summed over the cell's box.
    pub summed_printed: Option<f64>,
    /// Only for the CDF: degenerate input answered by the composition sum.
    pub routed: bool,
}

impl Cell {
    fn value(&self, variant: FormulaVariant) -> Option<f64> {
        match variant {
            FormulaVariant::PaperStated => self.paper_stated,
            FormulaVariant::DerivationCorrected => Some(self.corrected),
        }
    }

    fn reference(&self, reference: Reference) -> Option<f64> {
        match reference {
            Reference::ExactLaw => Some(self.exact),
            Reference::SummedPrintedDensity => self.summed_printed,
        }
    }

    fn discrepancy(&self, variant: FormulaVariant, reference: Reference) -> Option<f64> {
        Some((self.value(variant)? - self.reference(reference)?).abs())
    }

    fn both_fail(&self) -> bool {
        !self.routed
            && FormulaVariant::ALL.iter().all(|&v| {
                self.discrepancy(v, Reference::ExactLaw)
                    .is_none_or(|d| d >= MATCH_TOLERANCE)
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjudicationReport {
    pub formula: String,
    pub grid: AdjudicationGrid,
    pub cells: Vec<Cell>,
    pub verdicts: Vec<VariantVerdict>,
    /// Non-routed cells on which neither variant matches the exact law.
    pub both_fail_cells: usize,
}

impl AdjudicationReport {
    fn build(formula: &str, grid: &AdjudicationGrid, cells: Vec<Cell>, references: &[Reference]) -> Self {
        let mut verdicts = Vec::new();
        for &reference in references {
            for variant in FormulaVariant::ALL {
                let discrepancies: Vec<f64> = cells
                    .iter()
                    .filter(|c| !c.routed)
                    .filter_map(|c| c.discrepancy(variant, reference))
                    .collect();
                let max_discrepancy = discrepancies.iter().cloned().fold(0.0, f64::max);
                verdicts.push(VariantVerdict {
                    variant,
                    reference,
                    verdict: if !discrepancies.is_empty() && max_discrepancy < MATCH_TOLERANCE {
                        Verdict::Matches
                    } else {
                        Verdict::Fails
                    },
                    max_discrepancy,
                    cells: discrepancies.len(),
                });
            }
        }
        let both_fail_cells = cells.iter().filter(|c| c.both_fail()).count();
        Self {
            formula: formula.to_string(),
            grid: grid.clone(),
            cells,
            verdicts,
            both_fail_cells,
        }
    }

    pub fn verdict(&self, variant: FormulaVariant, reference: Reference) -> Option<&VariantVerdict> {
        self.verdicts
            .iter()
            .find(|v| v.variant == variant && v.reference == reference)
    }

    /// The single variant that matches the exact law, if exactly one does.
    pub fn matching_variant(&self) -> Option<FormulaVariant> {
        let matching: Vec<FormulaVariant> = self
            .verdicts
            .iter()
            .filter(|v| v.reference == Reference::ExactLaw && v.verdict == Verdict::Matches)
            .map(|v| v.variant)
            .collect();
        match matching.as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }

    pub fn find(&self, params: &LfParams, height: u64, k: usize, m: usize, depths: &[u64]) -> Option<&Cell> {
        self.cells.iter().find(|c| {
            c.p == params.p()
                && c.r == params.r()
                && c.height == height
                && c.k == k
                && c.m == m
                && c.depths == depths
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.12e}"))
}

impl fmt::Display for AdjudicationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "== {} ==", self.formula)?;
        writeln!(
            f,
            "{} cells: T in {:?}, k in {:?}, m in {:?}, {} parameter sets",
            self.cells.len(),
            self.grid.heights,
            self.grid.ks,
            self.grid.ms,
            self.grid.params.len()
        )?;
        for v in &self.verdicts {
            writeln!(
                f,
                "  {:<21} vs {:<22} {:<8} max |diff| {:.3e} over {} cells",
                v.variant.name(),
                v.reference.name(),
                match v.verdict {
                    Verdict::Matches => "matches",
                    Verdict::Fails => "fails",
                },
                v.max_discrepancy,
                v.cells
            )?;
        }
        match self.matching_variant() {
            Some(v) => writeln!(f, "  matching variant: {}", v.name())?,
            None => writeln!(f, "  matching variant: none unique")?,
        }
        if self.both_fail_cells > 0 {
            writeln!(f, "  both-fail cells: {}", self.both_fail_cells)?;
        }
        let routed = self.cells.iter().filter(|c| c.routed).count();
        if routed > 0 {
            writeln!(f, "  routed-to-direct cells: {routed}")?;
        }
        Ok(())
    }
}

impl AdjudicationReport {
    /// Per-cell table, one line per cell.
    pub fn table(&self) -> String {
        let mut out = String::from("p r T k m depths exact paper-stated corrected summed-printed flag\n");
        for c in &self.cells {
            let flag = if c.routed {
                "routed-to-direct"
            } else if c.both_fail() {
                "both-fail"
            } else {
                ""
            };
            out.push_str(&format!(
                "{} {} {} {} {} {:?} {:.12e} {} {:.12e} {} {}\n",
                c.p,
                c.r,
                c.height,
                c.k,
                c.m,
                c.depths,
                c.exact,
                opt(c.paper_stated),
                c.corrected,
                opt(c.summed_printed),
                flag
            ));
        }
        out
    }
}

fn depth_vectors(height: u64, len: usize) -> Vec<Vec<u64>> {
    let mut all = vec![Vec::new()];
    for _ in 0..len {
        all = all
            .into_iter()
            .flat_map(|v| {
                (1..=height).map(move |h| {
                    let mut w = v.clone();
                    w.push(h);
                    w
                })
            })
            .collect();
    }
    all
}

fn exact_joint(
    params: &LfParams,
    height: u64,
    k: usize,
    max_m: usize,
) -> Result<BTreeMap<usize, BTreeMap<Vec<u64>, f64>>, OracleError> {
    joint_by_tip_count(params, height, k, SamplingScheme::Uniform, k + max_m)
}

/// Compares both variants of the composition-sum density with the exact
/// joint law `P(N_T = k + m, sampled tree = x)`.
pub fn adjudicate_density(grid: &AdjudicationGrid) -> Result<AdjudicationReport, OracleError> {
    let mut cells = Vec::new();
    let max_m = grid.ms.iter().copied().max().unwrap_or(0);
    for params in &grid.params {
        for &height in &grid.heights {
            for &k in &grid.ks {
                let joint = exact_joint(params, height, k, max_m)?;
                for &m in &grid.ms {
                    for depths in depth_vectors(height, k - 1) {
                        let seq = DepthSeq::new_unchecked(height, depths.clone());
                        let exact = joint[&(k + m)].get(&depths).copied().unwrap_or(0.0);
                        cells.push(Cell {
                            p: params.p(),
                            r: params.r(),
                            height,
                            k,
                            m,
                            depths,
                            exact,
                            paper_stated: Some(ksample_lik_direct(
                                params,
                                &seq,
                                m,
                                FormulaVariant::PaperStated,
                            )?),
                            corrected: ksample_lik_direct(
                                params,
                                &seq,
                                m,
                                FormulaVariant::DerivationCorrected,
                            )?,
                            summed_printed: None,
                            routed: false,
                        });
                    }
                }
            }
        }
    }
    Ok(AdjudicationReport::build(
        "uniform k-sample density (composition sum)",
        grid,
        cells,
        &[Reference::ExactLaw],
    ))
}

fn dominated(v: &[u64], x: &[u64]) -> bool {
    v.iter().zip(x).all(|(a, b)| a <= b)
}

/// Compares both variants of the closed-form joint CDF with the exact joint
/// CDF `P(N_T = k + m, H_{k,i} <= x_i)` and with the printed density summed
/// over the same box.
pub fn adjudicate_cdf(grid: &AdjudicationGrid) -> Result<AdjudicationReport, OracleError> {
    let mut cells = Vec::new();
    let max_m = grid.ms.iter().copied().max().unwrap_or(0);
    for params in &grid.params {
        for &height in &grid.heights {
            for &k in &grid.ks {
                let joint = exact_joint(params, height, k, max_m)?;
                let vectors = depth_vectors(height, k - 1);
                for &m in &grid.ms {
                    let printed: Vec<f64> = vectors
                        .iter()
                        .map(|v| {
                            let seq = DepthSeq::new_unchecked(height, v.clone());
                            ksample_lik_direct(params, &seq, m, FormulaVariant::PaperStated)
                        })
                        .collect::<Result<_, _>>()?;
                    for x in &vectors {
                        let in_box = |v: &Vec<u64>| dominated(v, x);
                        let exact: f64 = joint[&(k + m)]
                            .iter()
                            .filter(|(v, _)| in_box(v))
                            .map(|(_, w)| w)
                            .sum();
                        let summed: f64 = vectors
                            .iter()
                            .zip(&printed)
                            .filter(|(v, _)| in_box(v))
                            .map(|(_, w)| w)
                            .sum();
                        let summary = DistinctDepthSummary::new(params, height, x)?;
                        let corrected =
                            ksample_cdf_closed(&summary, k, m, FormulaVariant::DerivationCorrected)?;
                        let paper = ksample_cdf_closed(&summary, k, m, FormulaVariant::PaperStated)?;
                        cells.push(Cell {
                            p: params.p(),
                            r: params.r(),
                            height,
                            k,
                            m,
                            depths: x.clone(),
                            exact,
                            paper_stated: Some(paper.value),
                            corrected: corrected.value,
                            summed_printed: Some(summed),
                            routed: corrected.routed,
                        });
                    }
                }
            }
        }
    }
    Ok(AdjudicationReport::build(
        "uniform k-sample joint CDF (closed form)",
        grid,
        cells,
        &[Reference::SummedPrintedDensity, Reference::ExactLaw],
    ))
}

/// The `d = 1`, `m = 0`, `k = 2` closed-form CDF worked by hand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandCase {
    pub p: f64,
    pub r: f64,
    pub height: u64,
    pub x1: u64,
    pub p1: f64,
    pub p0: f64,
    /// `p_1 (1 - p_0)`.
    pub corrected_hand: f64,
    /// `(1 - p_0)(p_1 + p_0)`.
    pub paper_hand: f64,
    pub corrected_closed: f64,
    pub paper_closed: f64,
    pub direct: f64,
    pub exact: f64,
}

pub fn cdf_hand_case(params: &LfParams, height: u64, x1: u64) -> Result<HandCase, OracleError> {
    let summary = DistinctDepthSummary::new(params, height, &[x1])?;
    let (p1, p0) = (summary.p_values[0], summary.p0);
    let joint = exact_joint(params, height, 2, 0)?;
    let exact = joint[&2]
        .iter()
        .filter(|(v, _)| v[0] <= x1)
        .map(|(_, w)| w)
        .sum();
    Ok(HandCase {
        p: params.p(),
        r: params.r(),
        height,
        x1,
        p1,
        p0,
        corrected_hand: p1 * (1.0 - p0),
        paper_hand: (1.0 - p0) * (p1 + p0),
        corrected_closed: ksample_cdf_closed(&summary, 2, 0, FormulaVariant::DerivationCorrected)?
            .value,
        paper_closed: ksample_cdf_closed(&summary, 2, 0, FormulaVariant::PaperStated)?.value,
        direct: crate::likelihood::ksample_cdf_direct(&summary, 0)?,
        exact,
    })
}

impl fmt::Display for HandCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "hand case d=1, m=0, k=2 at ({}, {}), T={}, x_1={}: p_1={:.12}, p_0={:.12}",
            self.p, self.r, self.height, self.x1, self.p1, self.p0
        )?;
        writeln!(
            f,
            "  corrected closed {:.12e} (hand p_1(1-p_0) = {:.12e})",
            self.corrected_closed, self.corrected_hand
        )?;
        writeln!(
            f,
            "  paper closed     {:.12e} (hand (1-p_0)(p_1+p_0) = {:.12e})",
            self.paper_closed, self.paper_hand
        )?;
        writeln!(f, "  direct sum {:.12e}, exact {:.12e}", self.direct, self.exact)
    }
}

/// The closed form evaluated, unrouted, on a repeated depth value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepeatedValueCase {
    pub p: f64,
    pub r: f64,
    pub height: u64,
    pub depths: Vec<u64>,
    pub m: usize,
    pub closed_unrouted: Option<f64>,
    pub summed_printed: f64,
}

pub fn repeated_value_case(
    params: &LfParams,
    height: u64,
    depths: &[u64],
    m: usize,
) -> Result<RepeatedValueCase, OracleError> {
    let k = depths.len() + 1;
    let summary = DistinctDepthSummary::new(params, height, depths)?;
    let mut summed = 0.0;
    for v in depth_vectors(height, depths.len()) {
        if dominated(&v, depths) {
            let seq = DepthSeq::new_unchecked(height, v);
            summed += ksample_lik_direct(params, &seq, m, FormulaVariant::PaperStated)?;
        }
    }
    Ok(RepeatedValueCase {
        p: params.p(),
        r: params.r(),
        height,
        depths: depths.to_vec(),
        m,
        closed_unrouted: ksample_cdf_closed_raw(&summary, k, m, FormulaVariant::DerivationCorrected),
        summed_printed: summed,
    })
}

impl fmt::Display for RepeatedValueCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "repeated depths {:?} at ({}, {}), T={}, m={}: corrected closed form without routing {}, summed printed density {:.12e}",
            self.depths,
            self.p,
            self.r,
            self.height,
            self.m,
            opt(self.closed_unrouted),
            self.summed_printed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureRow {
    pub depths: Vec<u64>,
    pub exact: f64,
    pub mixture: f64,
}

/// Exact uniform `k`-sample law against the `mu_k` mixture of thinned
/// conditional products, one row per depth vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureReport {
    pub p: f64,
    pub r: f64,
    pub height: u64,
    pub k: usize,
    pub n_max: usize,
    pub residual: f64,
    pub quad_tol: f64,
    pub rows: Vec<MixtureRow>,
    pub max_abs_diff: f64,
}

pub fn verify_mixture_identity(
    params: &LfParams,
    height: u64,
    k: usize,
    n_max: Option<usize>,
    quad_tol: f64,
) -> Result<MixtureReport, OracleError> {
    let law = exact_sampled_law(params, height, k, SamplingScheme::Uniform, n_max)?;
    let mut rows = Vec::new();
    for depths in depth_vectors(height, k - 1) {
        let seq = DepthSeq::new_unchecked(height, depths.clone());
        rows.push(MixtureRow {
            exact: law.get(&depths),
            mixture: ksample_marginal_lik(params, &seq, quad_tol)?,
            depths,
        });
    }
    let max_abs_diff = rows
        .iter()
        .map(|r| (r.exact - r.mixture).abs())
        .fold(0.0, f64::max);
    Ok(MixtureReport {
        p: params.p(),
        r: params.r(),
        height,
        k,
        n_max: law.n_max,
        residual: law.residual,
        quad_tol,
        rows,
        max_abs_diff,
    })
}

impl fmt::Display for MixtureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "mixture identity at ({}, {}), T={}, k={}: max |exact - mixture| = {:.3e} (n_max {}, residual {:.1e})",
            self.p, self.r, self.height, self.k, self.max_abs_diff, self.n_max, self.residual
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "  {:?} exact {:.12e} mixture {:.12e}",
                row.depths, row.exact, row.mixture
            )?;
        }
        Ok(())
    }
}

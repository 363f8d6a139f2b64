//! Nonparametric tests used to turn per-participant scores into tier strings.

use serde::Serialize;
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;
use thiserror::Error;

use crate::empirical::TierList;
use crate::interaction::HoiDesign;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} {what}, got {got}")]
    TooSmall {
        what: &'static str,
        need: usize,
        got: usize,
    },
    #[error("rows must all have {expected} entries, row {row} has {got}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("row {0} is not a ranking: ranks must sum to k(k+1)/2")]
    NotRanks(usize),
    #[error("degenerate input: every row is constant")]
    DegenerateInput,
    #[error("too few non-zero differences ({0}, need 5)")]
    TooFewPairs(usize),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("alpha must be in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("p-value {0} outside [0, 1]")]
    InvalidP(f64),
    #[error("significance matrix must be symmetric and {0}x{0}")]
    BadSignificance(usize),
}

/// Ranks of `values` in ascending order (1 = smallest), ties receiving their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Sizes of the groups of equal values (only groups larger than one).
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut run = 1;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            if run > 1 {
                groups.push(run);
            }
            run = 1;
        }
    }
    if run > 1 {
        groups.push(run);
    }
    groups
}

/// n x k matrix of within-row ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    rows: Vec<Vec<f64>>,
    k: usize,
}

impl RankMatrix {
    /// Accepts rows that are already rankings (average ranks for ties).
    pub fn from_ranks(rows: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        let k = check_shape(&rows)?;
        let expected = (k * (k + 1)) as f64 / 2.0;
        for (i, r) in rows.iter().enumerate() {
            if (r.iter().sum::<f64>() - expected).abs() > 1e-9 {
                return Err(StatsError::NotRanks(i));
            }
        }
        Ok(Self { rows, k })
    }

    /// Ranks raw scores within each row.
    pub fn from_scores(rows: &[Vec<f64>]) -> Result<Self, StatsError> {
        let k = check_shape(rows)?;
        Ok(Self {
            rows: rows.iter().map(|r| average_ranks(r)).collect(),
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.k)
            .map(|j| self.rows.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn mean_ranks(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.column_sums().into_iter().map(|s| s / n).collect()
    }
}

fn check_shape(rows: &[Vec<f64>]) -> Result<usize, StatsError> {
    if rows.len() < 2 {
        return Err(StatsError::TooSmall {
            what: "rows",
            need: 2,
            got: rows.len(),
        });
    }
    let k = rows[0].len();
    if k < 2 {
        return Err(StatsError::TooSmall {
            what: "columns",
            need: 2,
            got: k,
        });
    }
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != k) {
        return Err(StatsError::Ragged {
            row,
            expected: k,
            got: r.len(),
        });
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FriedmanResult {
    pub chi2: f64,
    pub df: usize,
    pub p: f64,
    #[serde(rename = "kendallW")]
    pub kendall_w: f64,
}

/// Friedman test with tie correction; Kendall's W = χ² / (n (k - 1)).
pub fn friedman(m: &RankMatrix) -> Result<FriedmanResult, StatsError> {
    let n = m.n() as f64;
    let k = m.k() as f64;
    let sum_sq: f64 = m.column_sums().iter().map(|r| r * r).sum();
    let uncorrected = 12.0 / (n * k * (k + 1.0)) * sum_sq - 3.0 * n * (k + 1.0);
    let ties: f64 = m
        .rows()
        .iter()
        .flat_map(|r| tie_groups(r))
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let correction = 1.0 - ties / (n * k * (k * k - 1.0));
    if correction <= 1e-12 {
        return Err(StatsError::DegenerateInput);
    }
    let chi2 = (uncorrected / correction).max(0.0);
    let df = m.k() - 1;
    let p = if chi2 > 0.0 {
        gamma_ur(df as f64 / 2.0, chi2 / 2.0)
    } else {
        1.0
    };
    Ok(FriedmanResult {
        chi2,
        df,
        p,
        kendall_w: chi2 / (n * (k - 1.0)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// Pairs left after dropping zero differences.
    pub n: usize,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub z: f64,
    pub p: f64,
}

/// Two-sided Wilcoxon signed-rank test, normal approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n < 5 {
        return Err(StatsError::TooFewPairs(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let ties: f64 = tie_groups(&abs)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let dev = ((w_plus - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let p = erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(WilcoxonResult { n, w_plus, z, p })
}

/// Benjamini-Hochberg step-up; flags are returned in input order.
pub fn benjamini_hochberg(pvals: &[f64], alpha: f64) -> Result<Vec<bool>, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::InvalidP(*p));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let cutoff = order
        .iter()
        .enumerate()
        .filter(|(i, &idx)| pvals[idx] <= (*i + 1) as f64 / m as f64 * alpha)
        .map(|(i, _)| i + 1)
        .next_back()
        .unwrap_or(0);
    let mut flags = vec![false; m];
    for &idx in &order[..cutoff] {
        flags[idx] = true;
    }
    Ok(flags)
}

/// Groups designs into tiers.
///
/// Designs are sorted by mean score; scanning in that order, a new tier
/// starts whenever the current design differs significantly from the first
/// member of the current tier. A non-significant omnibus test yields a single
/// tier.
pub fn derive_tier_string(
    designs: &[HoiDesign],
    mean_scores: &[f64],
    sig: &[Vec<bool>],
    higher_is_better: bool,
    omnibus_significant: bool,
) -> Result<TierList, StatsError> {
    let k = designs.len();
    if mean_scores.len() != k
        || sig.len() != k
        || sig.iter().any(|r| r.len() != k)
        || (0..k).any(|i| (0..k).any(|j| sig[i][j] != sig[j][i]))
    {
        return Err(StatsError::BadSignificance(k));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let c = mean_scores[a].total_cmp(&mean_scores[b]);
        if higher_is_better {
            c.reverse()
        } else {
            c
        }
    });
    if !omnibus_significant {
        let all: Vec<_> = order.iter().map(|&i| designs[i]).collect();
        return Ok(TierList::all_tied(&all));
    }
    let mut tiers: Vec<Vec<usize>> = Vec::new();
    for &idx in &order {
        match tiers.last_mut() {
            Some(tier) if !sig[tier[0]][idx] => tier.push(idx),
            _ => tiers.push(vec![idx]),
        }
    }
    let tiers = tiers
        .into_iter()
        .map(|t| t.into_iter().map(|i| designs[i]).collect())
        .collect();
    TierList::new(tiers).map_err(|_| StatsError::BadSignificance(k))
}

/// Formats a p-value the way the tier tables print it, e.g. `p=0.035*` or `p<0.001****`.
pub fn p_class(p: f64) -> String {
    if p < 0.001 {
        return "p<0.001****".to_owned();
    }
    let stars = if p < 0.005 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    };
    format!("p={p:.3}{stars}")
}

/// One analysed row: omnibus test, post-hoc comparisons and the derived tiers.
#[derive(Debug, Clone, Serialize)]
pub struct TableRowAnalysis {
    pub friedman: FriedmanResult,
    #[serde(rename = "pClass")]
    pub p_class: String,
    pub tiers: String,
    #[serde(rename = "meanScores")]
    pub mean_scores: Vec<f64>,
    /// Raw pairwise p-values, keyed by design codes.
    pub pairwise: Vec<PairwiseTest>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairwiseTest {
    pub a: HoiDesign,
    pub b: HoiDesign,
    pub p: f64,
    pub rejected: bool,
}

/// Friedman, then (if significant) all-pairs Wilcoxon with Benjamini-Hochberg
/// control, then tier derivation. `scores` has one row per participant.
pub fn analyze_scores(
    designs: &[HoiDesign],
    scores: &[Vec<f64>],
    higher_is_better: bool,
    alpha: f64,
) -> Result<TableRowAnalysis, StatsError> {
    let ranks = RankMatrix::from_scores(scores)?;
    if ranks.k() != designs.len() {
        return Err(StatsError::Ragged {
            row: 0,
            expected: designs.len(),
            got: ranks.k(),
        });
    }
    let fr = friedman(&ranks)?;
    let k = designs.len();
    let n = scores.len() as f64;
    let mean_scores: Vec<f64> = (0..k)
        .map(|j| scores.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let significant = fr.p < alpha;

    let mut pairs = Vec::new();
    let mut pvals = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            let xi: Vec<f64> = scores.iter().map(|r| r[i]).collect();
            let xj: Vec<f64> = scores.iter().map(|r| r[j]).collect();
            let p = match wilcoxon_signed_rank(&xi, &xj) {
                Ok(w) => w.p,
                Err(StatsError::TooFewPairs(_)) => 1.0,
                Err(e) => return Err(e),
            };
            pairs.push((i, j));
            pvals.push(p);
        }
    }
    let rejected = benjamini_hochberg(&pvals, alpha)?;
    let mut sig = vec![vec![false; k]; k];
    for (&(i, j), &r) in pairs.iter().zip(&rejected) {
        sig[i][j] = r && significant;
        sig[j][i] = r && significant;
    }
    let tiers = derive_tier_string(designs, &mean_scores, &sig, higher_is_better, significant)?;
    Ok(TableRowAnalysis {
        friedman: fr,
        p_class: p_class(fr.p),
        tiers: tiers.to_string(),
        mean_scores,
        pairwise: pairs
            .iter()
            .zip(pvals.iter().zip(&rejected))
            .map(|(&(i, j), (&p, &r))| PairwiseTest {
                a: designs[i],
                b: designs[j],
                p,
                rejected: r && significant,
            })
            .collect(),
    })
}

//! Empirical preference data: the 13 reference parts, their published tier
//! tables, and round-robin scoring of pairwise comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interaction::HoiDesign;
use crate::model::JointKind;

const BUILTIN_TABLE: &str = include_str!("../data/empirical_tiers.json");

pub const DATASET_SIZE: u8 = 13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmpiricalError {
    #[error("unknown dataset part {0} (expected 1..=13)")]
    UnknownPart(u8),
    #[error("malformed tier string `{0}`: {1}")]
    BadTierString(String, String),
    #[error("pairwise matrix incomplete: missing pair ({0}, {1})")]
    IncompleteMatrix(usize, usize),
    #[error("tier table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TierMetric {
    Preference,
    EaseOfUse,
    Learnability,
    Realism,
}

impl TierMetric {
    pub const ALL: [TierMetric; 4] = [
        TierMetric::Preference,
        TierMetric::EaseOfUse,
        TierMetric::Learnability,
        TierMetric::Realism,
    ];
}

/// Ordered groups of designs; designs in one group are statistically tied.
///
/// The order within a group is kept as published so the list re-serialises
/// to the original tier string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TierList {
    tiers: Vec<Vec<HoiDesign>>,
}

impl TierList {
    pub fn new(tiers: Vec<Vec<HoiDesign>>) -> Result<Self, EmpiricalError> {
        let list = Self { tiers };
        list.check_partition()?;
        Ok(list)
    }

    /// A single tier holding every design.
    pub fn all_tied(order: &[HoiDesign]) -> Self {
        Self {
            tiers: vec![order.to_vec()],
        }
    }

    pub fn tiers(&self) -> &[Vec<HoiDesign>] {
        &self.tiers
    }

    pub fn top(&self) -> &[HoiDesign] {
        &self.tiers[0]
    }

    /// Zero-based tier index of `design`.
    pub fn tier_of(&self, design: HoiDesign) -> Option<usize> {
        self.tiers.iter().position(|t| t.contains(&design))
    }

    /// Tiers as sets, for order-insensitive comparison.
    pub fn as_sets(&self) -> Vec<BTreeSet<HoiDesign>> {
        self.tiers
            .iter()
            .map(|t| t.iter().copied().collect())
            .collect()
    }

    fn check_partition(&self) -> Result<(), EmpiricalError> {
        let flat: Vec<_> = self.tiers.iter().flatten().copied().collect();
        let unique: BTreeSet<_> = flat.iter().copied().collect();
        let err = |m: &str| Err(EmpiricalError::BadTierString(self.to_string(), m.to_owned()));
        if self.tiers.iter().any(Vec::is_empty) {
            return err("empty tier");
        }
        if unique.len() != flat.len() {
            return err("design listed twice");
        }
        if unique.len() != HoiDesign::ALL.len() {
            return err("every design must appear exactly once");
        }
        Ok(())
    }
}

impl FromStr for TierList {
    type Err = EmpiricalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tiers = s
            .trim()
            .split('>')
            .map(|tier| {
                tier.split('=')
                    .map(|code| {
                        code.parse::<HoiDesign>().map_err(|_| {
                            EmpiricalError::BadTierString(s.to_owned(), format!("unknown design `{code}`"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        TierList::new(tiers)
    }
}

impl fmt::Display for TierList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self
            .tiers
            .iter()
            .map(|t| t.iter().map(|d| d.code()).collect::<Vec<_>>().join("="))
            .collect::<Vec<_>>()
            .join(">");
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Continuous,
    Discrete,
}

/// One of the 13 reference parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetPart {
    pub id: u8,
    /// "Object-Part - description".
    pub descriptor: String,
    pub constraint_kind: JointKind,
    pub size_class: SizeClass,
    pub granularity: Granularity,
    pub gesture_verb: String,
}

impl DatasetPart {
    /// The "Object-Part" label before the description.
    pub fn label(&self) -> &str {
        self.descriptor
            .split_once(" - ")
            .map_or(self.descriptor.as_str(), |(l, _)| l)
            .trim()
    }
}

/// Pros/cons keyword stubs for one design.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DesignComments {
    #[serde(default)]
    pub pros: Vec<String>,
    #[serde(default)]
    pub cons: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TableFile {
    parts: Vec<DatasetPart>,
    tiers: BTreeMap<TierMetric, BTreeMap<String, String>>,
    kendall_w: BTreeMap<TierMetric, BTreeMap<String, f64>>,
    friedman_p: BTreeMap<TierMetric, BTreeMap<String, String>>,
    comments: CommentsFile,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CommentsFile {
    default: BTreeMap<HoiDesign, DesignComments>,
    #[serde(default)]
    by_part: BTreeMap<String, BTreeMap<HoiDesign, DesignComments>>,
}

#[derive(Debug, Clone, PartialEq)]
struct TableRow {
    tier_string: String,
    tiers: TierList,
    kendall_w: f64,
    friedman_p: String,
}

/// The encoded tier tables for all 13 parts and four metrics.
#[derive(Debug, Clone)]
pub struct TierTable {
    parts: Vec<DatasetPart>,
    rows: BTreeMap<(TierMetric, u8), TableRow>,
    default_comments: BTreeMap<HoiDesign, DesignComments>,
    part_comments: BTreeMap<(u8, HoiDesign), DesignComments>,
}

impl TierTable {
    /// The table shipped with the crate.
    pub fn builtin() -> &'static TierTable {
        static TABLE: OnceLock<TierTable> = OnceLock::new();
        TABLE.get_or_init(|| TierTable::from_json(BUILTIN_TABLE).expect("builtin tier table is valid"))
    }

    pub fn from_json(s: &str) -> Result<Self, EmpiricalError> {
        let file: TableFile =
            serde_json::from_str(s).map_err(|e| EmpiricalError::Table(e.to_string()))?;
        let ids: BTreeSet<u8> = file.parts.iter().map(|p| p.id).collect();
        if ids != (1..=DATASET_SIZE).collect() || file.parts.len() != DATASET_SIZE as usize {
            return Err(EmpiricalError::Table("parts must have unique ids 1..=13".into()));
        }
        let mut rows = BTreeMap::new();
        for metric in TierMetric::ALL {
            for id in 1..=DATASET_SIZE {
                let key = id.to_string();
                let missing = || EmpiricalError::Table(format!("{metric:?} row {id} missing"));
                let tier_string = file
                    .tiers
                    .get(&metric)
                    .and_then(|m| m.get(&key))
                    .ok_or_else(missing)?
                    .trim()
                    .to_owned();
                let kendall_w = *file
                    .kendall_w
                    .get(&metric)
                    .and_then(|m| m.get(&key))
                    .ok_or_else(missing)?;
                let friedman_p = file
                    .friedman_p
                    .get(&metric)
                    .and_then(|m| m.get(&key))
                    .ok_or_else(missing)?
                    .clone();
                let tiers = tier_string.parse()?;
                rows.insert(
                    (metric, id),
                    TableRow {
                        tier_string,
                        tiers,
                        kendall_w,
                        friedman_p,
                    },
                );
            }
        }
        let mut part_comments = BTreeMap::new();
        for (part, by_design) in file.comments.by_part {
            let id: u8 = part
                .parse()
                .map_err(|_| EmpiricalError::Table(format!("bad part key `{part}`")))?;
            for (design, c) in by_design {
                part_comments.insert((id, design), c);
            }
        }
        Ok(Self {
            parts: file.parts,
            rows,
            default_comments: file.comments.default,
            part_comments,
        })
    }

    pub fn parts(&self) -> &[DatasetPart] {
        &self.parts
    }

    pub fn part(&self, id: u8) -> Result<&DatasetPart, EmpiricalError> {
        self.parts
            .iter()
            .find(|p| p.id == id)
            .ok_or(EmpiricalError::UnknownPart(id))
    }

    fn row(&self, part: u8, metric: TierMetric) -> Result<&TableRow, EmpiricalError> {
        self.rows
            .get(&(metric, part))
            .ok_or(EmpiricalError::UnknownPart(part))
    }

    pub fn lookup_tiers(&self, part: u8, metric: TierMetric) -> Result<&TierList, EmpiricalError> {
        Ok(&self.row(part, metric)?.tiers)
    }

    /// The tier string exactly as stored.
    pub fn tier_string(&self, part: u8, metric: TierMetric) -> Result<&str, EmpiricalError> {
        Ok(&self.row(part, metric)?.tier_string)
    }

    pub fn kendall_w(&self, part: u8, metric: TierMetric) -> Result<f64, EmpiricalError> {
        Ok(self.row(part, metric)?.kendall_w)
    }

    /// Published significance class, e.g. `p<0.001****`.
    pub fn friedman_p(&self, part: u8, metric: TierMetric) -> Result<&str, EmpiricalError> {
        Ok(&self.row(part, metric)?.friedman_p)
    }

    /// Whether the published omnibus p-value is below 0.05.
    pub fn friedman_significant(&self, part: u8, metric: TierMetric) -> Result<bool, EmpiricalError> {
        let p = self.friedman_p(part, metric)?;
        Ok(parse_p_class(p).is_some_and(|(value, strict)| value < 0.05 || (strict && value <= 0.05)))
    }

    /// Ease-of-use or learnability tiers, whichever has the larger top tier (ties: ease of use).
    pub fn usability_tiers(&self, part: u8) -> Result<&TierList, EmpiricalError> {
        let ease = self.lookup_tiers(part, TierMetric::EaseOfUse)?;
        let learn = self.lookup_tiers(part, TierMetric::Learnability)?;
        Ok(if learn.top().len() > ease.top().len() {
            learn
        } else {
            ease
        })
    }

    pub fn comments(&self, part: u8, design: HoiDesign) -> DesignComments {
        self.part_comments
            .get(&(part, design))
            .or_else(|| self.default_comments.get(&design))
            .cloned()
            .unwrap_or_default()
    }

    /// Deterministic design order used to break within-tier ties offline:
    /// designs sorted by how often they sit in the top tier of the
    /// significant preference rows.
    pub fn mock_precedence(&self) -> Vec<HoiDesign> {
        let mut counts: BTreeMap<HoiDesign, usize> = HoiDesign::ALL.iter().map(|d| (*d, 0)).collect();
        for id in 1..=DATASET_SIZE {
            if self.friedman_significant(id, TierMetric::Preference) == Ok(true) {
                let tiers = self
                    .lookup_tiers(id, TierMetric::Preference)
                    .expect("rows are complete");
                for d in tiers.top() {
                    *counts.entry(*d).or_default() += 1;
                }
            }
        }
        let mut order = HoiDesign::ALL.to_vec();
        order.sort_by_key(|d| std::cmp::Reverse(counts[d]));
        order
    }
}

/// Parses `p=0.035*` / `p<0.001****` into `(value, is_upper_bound)`.
pub fn parse_p_class(s: &str) -> Option<(f64, bool)> {
    let s = s.trim().trim_end_matches('*');
    if let Some(v) = s.strip_prefix("p<") {
        v.parse().ok().map(|v| (v, true))
    } else {
        s.strip_prefix("p=").and_then(|v| v.parse().ok()).map(|v| (v, false))
    }
}

pub fn lookup_tiers(part: u8, metric: TierMetric) -> Result<&'static TierList, EmpiricalError> {
    TierTable::builtin().lookup_tiers(part, metric)
}

pub fn usability_tiers(part: u8) -> Result<&'static TierList, EmpiricalError> {
    TierTable::builtin().usability_tiers(part)
}

pub fn mock_precedence() -> Vec<HoiDesign> {
    TierTable::builtin().mock_precedence()
}

// ---------------------------------------------------------------------------
// Round-robin ranking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairOutcome {
    FirstWins,
    SecondWins,
    Skip,
}

/// Outcomes of every pairwise comparison between `designs`, keyed by index pair `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseResult {
    pub designs: Vec<HoiDesign>,
    pub outcomes: BTreeMap<(usize, usize), PairOutcome>,
}

impl PairwiseResult {
    pub fn new(designs: Vec<HoiDesign>) -> Self {
        Self {
            designs,
            outcomes: BTreeMap::new(),
        }
    }

    /// Records the outcome of `a` versus `b`; `winner` is `None` for a skip.
    pub fn record(&mut self, a: usize, b: usize, winner: Option<usize>) {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        let outcome = match winner {
            None => PairOutcome::Skip,
            Some(w) if w == i => PairOutcome::FirstWins,
            Some(_) => PairOutcome::SecondWins,
        };
        self.outcomes.insert((i, j), outcome);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedScore {
    pub design: HoiDesign,
    pub score: f64,
    /// Competition rank: tied scores share the lower rank number.
    pub rank: usize,
}

/// Row-sum score per design: one point per win, half a point per skip.
pub fn round_robin_rank(results: &PairwiseResult) -> Result<Vec<RankedScore>, EmpiricalError> {
    let k = results.designs.len();
    let mut scores = vec![0.0f64; k];
    for i in 0..k {
        for j in (i + 1)..k {
            match results.outcomes.get(&(i, j)) {
                Some(PairOutcome::FirstWins) => scores[i] += 1.0,
                Some(PairOutcome::SecondWins) => scores[j] += 1.0,
                Some(PairOutcome::Skip) => {
                    scores[i] += 0.5;
                    scores[j] += 0.5;
                }
                None => return Err(EmpiricalError::IncompleteMatrix(i, j)),
            }
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranked: Vec<RankedScore> = Vec::with_capacity(k);
    for (pos, &idx) in order.iter().enumerate() {
        let rank = match ranked.last() {
            Some(prev) if prev.score == scores[idx] => prev.rank,
            _ => pos + 1,
        };
        ranked.push(RankedScore {
            design: results.designs[idx],
            score: scores[idx],
            rank,
        });
    }
    Ok(ranked)
}

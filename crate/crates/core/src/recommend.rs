//! Design recommendation: metric selection, dataset part matching, tier-based
//! and rule-based mapping, and the text-only object analysis that feeds part
//! selection.
//!
//! The free functions here are the deterministic rule engines. [`Recommender`]
//! routes the same steps through an LLM [`Gateway`]; in mock mode the gateway
//! answers with these rule engines, so both paths agree offline.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::empirical::{
    DatasetPart, EmpiricalError, Granularity, SizeClass, TierList, TierMetric, TierTable,
};
use crate::interaction::HoiDesign;
use crate::llm::{
    AnalyzerInput, BinaryInput, CompletionRequest, Gateway, LlmError, MatcherInput, MetricInput,
    ParsedOutput, PrioritizerInput, PromptTemplate, RankingInput,
};
use crate::model::{JointKind, PartSpec};
use crate::text;

/// Upper bound on rationale length, in characters.
pub const RATIONALE_MAX_CHARS: usize = 150;

/// Part-scale thresholds (metres) separating small, medium and large parts.
pub const SMALL_PART_MAX: f64 = 0.08;
pub const MEDIUM_PART_MAX: f64 = 0.25;

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("design intent is empty")]
    EmptyIntent,
    #[error("at least one part is required")]
    NoParts,
    #[error("{0} is not a ranking metric")]
    NotRankingMetric(MetricKind),
    #[error("{0} is not a binary metric")]
    NotBinaryMetric(MetricKind),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error(transparent)]
    Empirical(#[from] EmpiricalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

// ---------------------------------------------------------------------------
// Intent and metrics
// ---------------------------------------------------------------------------

/// What the object is for and how it should feel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DesignIntent {
    #[serde(default)]
    pub intended_use: String,
    #[serde(default)]
    pub target_experience: String,
}

impl DesignIntent {
    /// Either field may be blank, but not both.
    pub fn new(
        intended_use: impl Into<String>,
        target_experience: impl Into<String>,
    ) -> Result<Self, RecommendError> {
        let intent = Self {
            intended_use: intended_use.into().trim().to_owned(),
            target_experience: target_experience.into().trim().to_owned(),
        };
        intent.validate()?;
        Ok(intent)
    }

    /// A single free-text intent, stored as the target experience.
    pub fn from_text(text: impl Into<String>) -> Result<Self, RecommendError> {
        Self::new("", text)
    }

    pub fn validate(&self) -> Result<(), RecommendError> {
        if self.text().is_empty() {
            Err(RecommendError::EmptyIntent)
        } else {
            Ok(())
        }
    }

    /// Both fields joined into one sentence-like string.
    pub fn text(&self) -> String {
        [self.intended_use.trim(), self.target_experience.trim()]
            .iter()
            .filter(|s| !s.is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join(". ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Realism,
    Usability,
    Efficiency,
    Challenge,
    Preference,
}

impl MetricKind {
    /// Checking order of the selector.
    pub const PRIORITY: [MetricKind; 5] = [
        MetricKind::Realism,
        MetricKind::Usability,
        MetricKind::Efficiency,
        MetricKind::Challenge,
        MetricKind::Preference,
    ];

    /// Metrics answered from the tier tables rather than a binary rule.
    pub fn is_ranking(self) -> bool {
        matches!(self, MetricKind::Realism | MetricKind::Usability | MetricKind::Preference)
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Realism => "Realism",
            MetricKind::Usability => "Usability",
            MetricKind::Efficiency => "Efficiency",
            MetricKind::Challenge => "Challenge",
            MetricKind::Preference => "Preference",
        }
    }

    fn priority(self) -> usize {
        Self::PRIORITY.iter().position(|m| *m == self).unwrap_or(usize::MAX)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = RecommendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::PRIORITY
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| RecommendError::UnknownMetric(s.to_owned()))
    }
}

const REALISM_KEYWORDS: &[&str] = &[
    "realistic", "lifelike", "authentic", "natural", "detailed", "immersive", "convincing",
    "credible", "believable", "vivid", "true-to-life", "photorealistic", "faithful", "genuine",
];

const USABILITY_KEYWORDS: &[&str] = &[
    "intuitive", "accessible", "user-friendly", "navigable", "comprehensible", "effortless",
    "simple", "streamlined", "clear", "approachable", "responsive", "comfortable", "easy",
    "beginner",
];

const EFFICIENCY_KEYWORDS: &[&str] = &[
    "fast", "quick", "speed", "responsive", "latency", "accuracy", "error rate",
    "completion time", "efficient",
];

const CHALLENGE_KEYWORDS: &[&str] = &[
    "demanding", "complex", "challenging", "intense", "skillful", "rewarding", "testing",
    "strenuous", "satisfying", "motivating", "intricate", "mastery-focused",
    "accomplishment-driven", "stimulating", "engaging", "master", "mastery", "difficult", "skill",
];

fn keywords_for(metric: MetricKind) -> &'static [&'static str] {
    match metric {
        MetricKind::Realism => REALISM_KEYWORDS,
        MetricKind::Usability => USABILITY_KEYWORDS,
        MetricKind::Efficiency => EFFICIENCY_KEYWORDS,
        MetricKind::Challenge => CHALLENGE_KEYWORDS,
        MetricKind::Preference => &[],
    }
}

/// Keyword-driven metric choice for an intent, with a short reason.
pub fn select_metric(intent_text: &str) -> (MetricKind, String) {
    for metric in MetricKind::PRIORITY {
        let hits = text::matched_keywords(intent_text, keywords_for(metric));
        if !hits.is_empty() {
            let quoted: Vec<String> = hits.iter().map(|k| format!("\"{k}\"")).collect();
            let reason = format!("contains {}", quoted.join(", "));
            return (metric, text::truncate_words(&reason, RATIONALE_MAX_CHARS).0);
        }
    }
    (
        MetricKind::Preference,
        "no metric keywords found; defaulting to preference".to_owned(),
    )
}

/// One metric choice per part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricChoice {
    pub part: String,
    pub metric: MetricKind,
    pub reason: String,
}

/// The rule-based selector applied to every listed part.
pub fn select_metrics(intent: &DesignIntent, parts: &[String]) -> Vec<MetricChoice> {
    let (metric, reason) = select_metric(&intent.text());
    parts
        .iter()
        .map(|p| MetricChoice {
            part: p.clone(),
            metric,
            reason: reason.clone(),
        })
        .collect()
}

/// Reconciles an LLM metric with the keyword rules.
///
/// Keyword metrics may only be chosen when their keywords are present, and an
/// explicit keyword always beats a lower-priority answer. Efficiency may also
/// be recognised semantically when no higher-priority keyword is present.
pub fn reconcile_metric(intent_text: &str, llm: MetricKind) -> MetricKind {
    let (rule, _) = select_metric(intent_text);
    if llm == rule {
        return rule;
    }
    let semantic_efficiency =
        llm == MetricKind::Efficiency && rule.priority() > MetricKind::Efficiency.priority();
    if semantic_efficiency {
        llm
    } else {
        rule
    }
}

// ---------------------------------------------------------------------------
// Part matching
// ---------------------------------------------------------------------------

/// A part description in the terms the dataset matcher scores on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PartDescriptor {
    pub object_name: String,
    pub part_name: String,
    #[serde(default)]
    pub interaction_type: String,
    #[serde(default)]
    pub affordances: String,
    #[serde(default)]
    pub constraint_kind: Option<JointKind>,
    #[serde(default)]
    pub size_class: Option<SizeClass>,
    #[serde(default)]
    pub granularity: Option<Granularity>,
}

const CONTINUOUS_HINTS: &[&str] = &[
    "adjust", "volume", "knob", "slider", "scroll", "zoom", "wheel", "continuous", "fine",
    "variable", "throttle", "spin", "sphere", "globe",
];

impl PartDescriptor {
    pub fn from_part_spec(part: &PartSpec) -> Self {
        let granularity = if part.constraint.is_unbounded() {
            Granularity::Continuous
        } else {
            let blob = format!("{} {} {}", part.name, part.interaction_type, part.affordances);
            if text::matched_keywords(&blob, CONTINUOUS_HINTS).is_empty() {
                Granularity::Discrete
            } else {
                Granularity::Continuous
            }
        };
        Self {
            object_name: part.object_name.clone(),
            part_name: part.name.clone(),
            interaction_type: part.interaction_type.clone(),
            affordances: part.affordances.clone(),
            constraint_kind: Some(part.constraint.kind()),
            size_class: Some(size_class_for(part.part_scale())),
            granularity: Some(granularity),
        }
    }

    pub fn from_analysis(entry: &PartAnalysisEntry) -> Self {
        Self {
            object_name: entry.object.clone(),
            part_name: entry.part.clone(),
            interaction_type: entry.interaction_type.clone(),
            affordances: entry.affordances.clone(),
            constraint_kind: None,
            size_class: None,
            granularity: None,
        }
    }

    /// Canonical verb, looked up in the interaction type, then the affordances,
    /// then the part name.
    pub fn verb(&self) -> Option<&'static str> {
        [&self.interaction_type, &self.affordances, &self.part_name]
            .into_iter()
            .find_map(|s| canonical_verb(s))
    }

    /// `Object-Part-Type`, the matcher's input line.
    pub fn matcher_line(&self) -> String {
        let kind = if self.interaction_type.trim().is_empty() {
            self.verb().unwrap_or("Move")
        } else {
            self.interaction_type.trim()
        };
        format!("{}-{}-{}", self.object_name.trim(), self.part_name.trim(), kind)
    }
}

pub fn size_class_for(part_scale: f64) -> SizeClass {
    if part_scale < SMALL_PART_MAX {
        SizeClass::Small
    } else if part_scale < MEDIUM_PART_MAX {
        SizeClass::Medium
    } else {
        SizeClass::Large
    }
}

const VERB_TABLE: &[(&str, &str)] = &[
    ("rotate", "Rotate"),
    ("rotation", "Rotate"),
    ("turn", "Rotate"),
    ("twist", "Rotate"),
    ("spin", "Rotate"),
    ("swivel", "Rotate"),
    ("crank", "Rotate"),
    ("dial", "Rotate"),
    ("knob", "Rotate"),
    ("hinge", "Rotate"),
    ("lever", "Rotate"),
    ("slide", "Slide"),
    ("slider", "Slide"),
    ("drag", "Slide"),
    ("drawer", "Slide"),
    ("press", "Press"),
    ("push", "Press"),
    ("click", "Press"),
    ("tap", "Press"),
    ("toggle", "Press"),
    ("button", "Press"),
    ("pump", "Press"),
    ("pull", "Pull"),
    ("open", "Pull"),
    ("lift", "Pull"),
    ("door", "Pull"),
    ("shackle", "Pull"),
    ("squeeze", "Squeeze"),
    ("pinch", "Squeeze"),
    ("trigger", "Squeeze"),
    ("grip", "Squeeze"),
];

/// Maps the first recognised action word in `text` to one of
/// Rotate, Slide, Press, Pull or Squeeze.
pub fn canonical_verb(text: &str) -> Option<&'static str> {
    text::tokens(text).iter().find_map(|tok| {
        VERB_TABLE
            .iter()
            .find(|(word, _)| text::stem(word) == *tok)
            .map(|(_, verb)| *verb)
    })
}

/// Mock matcher score of `desc` against one dataset part.
pub fn match_score(desc: &PartDescriptor, part: &DatasetPart) -> u32 {
    let mut score = 0;
    if desc.constraint_kind == Some(part.constraint_kind) {
        score += 2;
    }
    if desc
        .verb()
        .is_some_and(|v| v.eq_ignore_ascii_case(&part.gesture_verb))
    {
        score += 2;
    }
    if desc.size_class == Some(part.size_class) {
        score += 1;
    }
    if desc.granularity == Some(part.granularity) {
        score += 1;
    }
    score
}

/// Dataset id of the best-scoring reference part; ties go to the lowest id.
pub fn match_part(table: &TierTable, desc: &PartDescriptor) -> u8 {
    let mut best = (0, u8::MAX);
    for part in table.parts() {
        let s = match_score(desc, part);
        if s > best.0 || (s == best.0 && part.id < best.1) {
            best = (s, part.id);
        }
    }
    best.1
}

/// One matcher answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartMatch {
    pub part: String,
    pub id: u8,
    #[serde(rename = "matchedPart")]
    pub matched_part: String,
}

pub fn match_parts(table: &TierTable, parts: &[PartDescriptor]) -> Vec<PartMatch> {
    parts
        .iter()
        .map(|d| {
            let id = match_part(table, d);
            PartMatch {
                part: d.part_name.clone(),
                id,
                matched_part: table.part(id).map(|p| p.label().to_owned()).unwrap_or_default(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Recommendations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Keywords {
    pub pros: Vec<String>,
    pub cons: Vec<String>,
}

/// One entry of a ranked recommendation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedDesign {
    pub rank: usize,
    pub choice: HoiDesign,
    pub rationale: String,
    pub keywords: Keywords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecommendationSource {
    RankingBased,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Recommendation {
    pub metric: MetricKind,
    pub matched_dataset_part: Option<u8>,
    pub source: RecommendationSource,
    pub ranked: Vec<RankedDesign>,
    /// Set when a binary rule found no clear cue and fell back to its first option.
    #[serde(default)]
    pub low_confidence: bool,
    #[serde(default)]
    pub metric_reason: String,
    /// Published tier string the ranking was drawn from.
    #[serde(default)]
    pub tiers: Option<String>,
}

impl Recommendation {
    pub fn top(&self) -> &RankedDesign {
        &self.ranked[0]
    }

    pub fn order(&self) -> Vec<HoiDesign> {
        self.ranked.iter().map(|r| r.choice).collect()
    }
}

fn tier_metric(metric: MetricKind) -> Option<TierMetric> {
    match metric {
        MetricKind::Preference => Some(TierMetric::Preference),
        MetricKind::Realism => Some(TierMetric::Realism),
        _ => None,
    }
}

/// Tier list used for a ranking metric; usability picks between ease of use
/// and learnability.
pub fn ranking_tiers(
    table: &TierTable,
    part_id: u8,
    metric: MetricKind,
) -> Result<&TierList, RecommendError> {
    match metric {
        MetricKind::Usability => Ok(table.usability_tiers(part_id)?),
        m => match tier_metric(m) {
            Some(tm) => Ok(table.lookup_tiers(part_id, tm)?),
            None => Err(RecommendError::NotRankingMetric(m)),
        },
    }
}

/// Flattens `tiers`, ordering designs within each tier by their position in
/// `preference`. Designs missing from `preference` keep their relative order
/// after those that appear.
pub fn order_within_tiers(tiers: &TierList, preference: &[HoiDesign]) -> Vec<HoiDesign> {
    let pos = |d: &HoiDesign| preference.iter().position(|p| p == d).unwrap_or(usize::MAX);
    tiers
        .tiers()
        .iter()
        .flat_map(|tier| {
            let mut t = tier.clone();
            t.sort_by_key(pos);
            t
        })
        .collect()
}

fn ranking_rationale(
    design: HoiDesign,
    tier: usize,
    tier_count: usize,
    metric: MetricKind,
    label: &str,
    comments: &Keywords,
) -> String {
    let metric = metric.name().to_lowercase();
    let pro = comments.pros.first().map(String::as_str).unwrap_or("no recorded strengths");
    let s = if tier == 0 {
        format!("{} sits in the top {metric} tier for {label}; {pro}.", design.full_name())
    } else {
        format!(
            "{} sits in tier {} of {tier_count} for {metric} on {label}; {pro}.",
            design.full_name(),
            tier + 1
        )
    };
    text::truncate_words(&s, RATIONALE_MAX_CHARS).0
}

fn keywords(table: &TierTable, part_id: u8, design: HoiDesign) -> Keywords {
    let c = table.comments(part_id, design);
    Keywords {
        pros: c.pros,
        cons: c.cons,
    }
}

/// Tier-ordered ranking of all five designs with mock within-tier order.
pub fn map_ranking(
    table: &TierTable,
    part_id: u8,
    metric: MetricKind,
) -> Result<Recommendation, RecommendError> {
    let tiers = ranking_tiers(table, part_id, metric)?;
    let order = order_within_tiers(tiers, &table.mock_precedence());
    build_ranking(table, part_id, metric, tiers, &order, &[])
}

/// Assembles a ranking from a tier-respecting order; rationales and keywords
/// supplied in `overrides` take precedence over the mock text.
fn build_ranking(
    table: &TierTable,
    part_id: u8,
    metric: MetricKind,
    tiers: &TierList,
    order: &[HoiDesign],
    overrides: &[RankedDesign],
) -> Result<Recommendation, RecommendError> {
    let label = table.part(part_id)?.label().to_owned();
    let ranked = order
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let tier = tiers.tier_of(d).unwrap_or(0);
            match overrides.iter().find(|o| o.choice == d) {
                Some(o) => RankedDesign {
                    rank: i + 1,
                    choice: d,
                    rationale: text::truncate_words(&o.rationale, RATIONALE_MAX_CHARS).0,
                    keywords: o.keywords.clone(),
                },
                None => {
                    let kw = keywords(table, part_id, d);
                    RankedDesign {
                        rank: i + 1,
                        choice: d,
                        rationale: ranking_rationale(d, tier, tiers.tiers().len(), metric, &label, &kw),
                        keywords: kw,
                    }
                }
            }
        })
        .collect();
    Ok(Recommendation {
        metric,
        matched_dataset_part: Some(part_id),
        source: RecommendationSource::RankingBased,
        ranked,
        low_confidence: false,
        metric_reason: String::new(),
        tiers: Some(tiers.to_string()),
    })
}

/// Applies an LLM ranking without ever breaking tier order: the LLM decides
/// only the order inside each tier, and designs it omitted follow in mock order.
pub fn enforce_tier_order(
    table: &TierTable,
    part_id: u8,
    metric: MetricKind,
    llm_ranked: &[RankedDesign],
) -> Result<Recommendation, RecommendError> {
    let tiers = ranking_tiers(table, part_id, metric)?;
    let mut preference: Vec<HoiDesign> = llm_ranked.iter().map(|r| r.choice).collect();
    for d in table.mock_precedence() {
        if !preference.contains(&d) {
            preference.push(d);
        }
    }
    let order = order_within_tiers(tiers, &preference);
    build_ranking(table, part_id, metric, tiers, &order, llm_ranked)
}

struct BinaryRule {
    options: [HoiDesign; 2],
    cues: [&'static [&'static str]; 2],
    focus: [&'static str; 2],
}

const EFFICIENCY_RULE: BinaryRule = BinaryRule {
    options: [HoiDesign::GM, HoiDesign::CM],
    cues: [
        &[
            "precision", "precise", "fine", "fine-tuning", "delicate", "control", "accurate",
            "careful", "exact",
        ],
        &[
            "fast", "quick", "speed", "minimal effort", "effortless", "easy", "rapid", "finish",
            "instant",
        ],
    ],
    focus: ["precision and control", "speed with minimal effort"],
};

const CHALLENGE_RULE: BinaryRule = BinaryRule {
    options: [HoiDesign::GM, HoiDesign::PM],
    cues: [
        &["mastery", "master", "skill", "practice", "train", "learn", "expert"],
        &[
            "realistic", "resistance", "natural difficulty", "natural", "heavy", "physical",
            "weight", "real",
        ],
    ],
    focus: ["mastery and skill development", "realistic difficulty and resistance"],
};

/// Two-option mapping for efficiency and challenge intents.
pub fn map_binary(
    table: &TierTable,
    metric: MetricKind,
    intent_text: &str,
) -> Result<Recommendation, RecommendError> {
    let rule = match metric {
        MetricKind::Efficiency => &EFFICIENCY_RULE,
        MetricKind::Challenge => &CHALLENGE_RULE,
        m => return Err(RecommendError::NotBinaryMetric(m)),
    };
    let hits = [
        text::matched_keywords(intent_text, rule.cues[0]),
        text::matched_keywords(intent_text, rule.cues[1]),
    ];
    let (winner, low_confidence) = match hits[0].len().cmp(&hits[1].len()) {
        std::cmp::Ordering::Greater => (0, false),
        std::cmp::Ordering::Less => (1, false),
        std::cmp::Ordering::Equal => (0, true),
    };
    let loser = 1 - winner;
    let metric_name = metric.name().to_lowercase();
    let first = if low_confidence && !hits[0].is_empty() {
        format!(
            "Low confidence: cues for {} and {} are balanced; defaulting to {}.",
            rule.focus[0],
            rule.focus[1],
            rule.options[winner].full_name()
        )
    } else if low_confidence {
        format!(
            "Low confidence: no clear cue for {} or {}; defaulting to {}.",
            rule.focus[0],
            rule.focus[1],
            rule.options[winner].full_name()
        )
    } else {
        let cues: Vec<String> = hits[winner].iter().map(|k| format!("\"{k}\"")).collect();
        format!(
            "{} fits a {metric_name} intent focused on {} ({}).",
            rule.options[winner].full_name(),
            rule.focus[winner],
            cues.join(", ")
        )
    };
    let second = format!(
        "{} is the alternative when the intent favors {}.",
        rule.options[loser].full_name(),
        rule.focus[loser]
    );
    let ranked = [(winner, first), (loser, second)]
        .into_iter()
        .enumerate()
        .map(|(i, (opt, rationale))| RankedDesign {
            rank: i + 1,
            choice: rule.options[opt],
            rationale: text::truncate_words(&rationale, RATIONALE_MAX_CHARS).0,
            keywords: keywords(table, 0, rule.options[opt]),
        })
        .collect();
    Ok(Recommendation {
        metric,
        matched_dataset_part: None,
        source: RecommendationSource::Binary,
        ranked,
        low_confidence,
        metric_reason: String::new(),
        tiers: None,
    })
}

/// The two designs a binary metric may recommend.
pub fn binary_options(metric: MetricKind) -> Option<[HoiDesign; 2]> {
    match metric {
        MetricKind::Efficiency => Some(EFFICIENCY_RULE.options),
        MetricKind::Challenge => Some(CHALLENGE_RULE.options),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Object analysis and part prioritisation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartAnalysisEntry {
    pub object: String,
    pub part: String,
    pub interaction_type: String,
    pub affordances: String,
}

const INTERACTION_TABLE: &[(&str, &str)] = &[
    ("knob", "Rotate"),
    ("dial", "Rotate"),
    ("button", "Press"),
    ("slider", "Slide"),
    ("door", "Rotate"),
    ("lid", "Rotate"),
    ("hinge", "Rotate"),
    ("drawer", "Slide"),
    ("trigger", "Squeeze"),
];

/// Keyword-table analysis of an object's parts.
///
/// `descriptors`, when given, is aligned with `parts` and replaces the default
/// "operate the <part>" affordance.
pub fn analyze_object(
    object: &str,
    parts: &[String],
    descriptors: Option<&[String]>,
) -> Result<Vec<PartAnalysisEntry>, RecommendError> {
    if parts.is_empty() {
        return Err(RecommendError::NoParts);
    }
    Ok(parts
        .iter()
        .enumerate()
        .map(|(i, part)| {
            let toks = text::tokens(part);
            let described = descriptors
                .and_then(|d| d.get(i))
                .map(|d| d.trim())
                .filter(|d| !d.is_empty());
            let interaction = INTERACTION_TABLE
                .iter()
                .find(|(word, _)| toks.iter().any(|t| t == word))
                .map(|(_, kind)| *kind)
                .or_else(|| described.and_then(canonical_verb))
                .unwrap_or("Move");
            PartAnalysisEntry {
                object: object.trim().to_owned(),
                part: part.trim().to_owned(),
                interaction_type: interaction.to_owned(),
                affordances: described
                    .map(str::to_owned)
                    .unwrap_or_else(|| format!("operate the {}", part.trim())),
            }
        })
        .collect())
}

/// A part as the prioritiser sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PriorityCandidate {
    pub id: String,
    pub affordances: String,
    #[serde(default)]
    pub interaction_type: String,
}

impl PriorityCandidate {
    pub fn from_analysis(id: impl Into<String>, entry: &PartAnalysisEntry) -> Self {
        Self {
            id: id.into(),
            affordances: entry.affordances.clone(),
            interaction_type: entry.interaction_type.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prioritization {
    pub priority_parts: Vec<String>,
    pub initial_level: usize,
    pub rationale: String,
}

fn is_body(c: &PriorityCandidate) -> bool {
    text::tokens(&c.id).iter().any(|t| t == "body")
}

/// Orders parts by how many intent words their affordances and interaction
/// type share, and suggests how many to activate.
pub fn prioritize_parts(
    intent_text: &str,
    candidates: &[PriorityCandidate],
) -> Result<Prioritization, RecommendError> {
    let parts: Vec<&PriorityCandidate> = candidates.iter().filter(|c| !is_body(c)).collect();
    if parts.is_empty() {
        return Err(RecommendError::NoParts);
    }
    let intent: BTreeSet<String> = text::content_words(intent_text).into_iter().collect();
    let mut scored: Vec<(usize, usize, &PriorityCandidate, Vec<&String>)> = parts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let words: BTreeSet<String> =
                text::tokens(&format!("{} {}", c.affordances, c.interaction_type))
                    .into_iter()
                    .collect();
            let shared: Vec<&String> = intent.iter().filter(|w| words.contains(*w)).collect();
            (shared.len(), i, *c, shared)
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let related = scored.iter().filter(|s| s.0 > 0).count();
    let level = related.clamp(1, parts.len());
    let rationale = match scored.first() {
        Some((n, _, c, shared)) if *n > 0 => format!(
            "{} shares the intent words {}; {related} of {} parts relate to the intent.",
            c.id,
            shared.iter().map(|w| format!("\"{w}\"")).collect::<Vec<_>>().join(", "),
            parts.len()
        ),
        _ => "No part relates directly to the intent; keeping input order and starting with one part."
            .to_owned(),
    };
    Ok(Prioritization {
        priority_parts: scored.iter().map(|s| s.2.id.clone()).collect(),
        initial_level: level,
        rationale: text::truncate_words(&rationale, RATIONALE_MAX_CHARS).0,
    })
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Offline recommendation for one part: metric, then tier ranking or binary rule.
pub fn recommend_pipeline(
    part: &PartSpec,
    intent: &DesignIntent,
) -> Result<Recommendation, RecommendError> {
    intent.validate()?;
    let table = TierTable::builtin();
    let text = intent.text();
    let (metric, reason) = select_metric(&text);
    let mut rec = if metric.is_ranking() {
        let id = match_part(table, &PartDescriptor::from_part_spec(part));
        map_ranking(table, id, metric)?
    } else {
        map_binary(table, metric, &text)?
    };
    rec.metric_reason = reason;
    Ok(rec)
}

/// The recommendation steps routed through an LLM gateway.
///
/// Every LLM answer passes the same checks as the rule engines: metric choices
/// are reconciled with the keyword priority, rankings are forced into tier
/// order, and binary answers are limited to the rule's two options.
#[derive(Debug, Clone)]
pub struct Recommender {
    gateway: Arc<Gateway>,
    table: &'static TierTable,
}

impl Recommender {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self {
            gateway,
            table: TierTable::builtin(),
        }
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn analyze_object(
        &self,
        object: &str,
        parts: &[String],
        descriptors: Option<&[String]>,
    ) -> Result<Vec<PartAnalysisEntry>, RecommendError> {
        if parts.is_empty() {
            return Err(RecommendError::NoParts);
        }
        let input = AnalyzerInput {
            object: object.to_owned(),
            parts: parts.to_vec(),
            descriptors: descriptors.map(<[String]>::to_vec),
        };
        match self.complete(PromptTemplate::ObjectAnalyzer, &input)? {
            ParsedOutput::ObjectAnalysis(v) => Ok(v),
            other => Err(unexpected(other)),
        }
    }

    pub fn prioritize_parts(
        &self,
        intent: &DesignIntent,
        candidates: &[PriorityCandidate],
    ) -> Result<Prioritization, RecommendError> {
        intent.validate()?;
        let parts: Vec<PriorityCandidate> =
            candidates.iter().filter(|c| !is_body(c)).cloned().collect();
        if parts.is_empty() {
            return Err(RecommendError::NoParts);
        }
        let input = PrioritizerInput {
            intent: intent.text(),
            parts,
        };
        match self.complete(PromptTemplate::PartPrioritizer, &input)? {
            ParsedOutput::Prioritization(p) => Ok(p),
            other => Err(unexpected(other)),
        }
    }

    pub fn select_metric(
        &self,
        intent: &DesignIntent,
        parts: &[String],
    ) -> Result<Vec<MetricChoice>, RecommendError> {
        intent.validate()?;
        let input = MetricInput {
            parts: parts.to_vec(),
            intent: intent.text(),
        };
        let text = intent.text();
        match self.complete(PromptTemplate::MetricSelector, &input)? {
            ParsedOutput::Metrics(v) => Ok(v
                .into_iter()
                .map(|mut c| {
                    let reconciled = reconcile_metric(&text, c.metric);
                    if reconciled != c.metric {
                        c.metric = reconciled;
                        c.reason = select_metric(&text).1;
                    }
                    c
                })
                .collect()),
            other => Err(unexpected(other)),
        }
    }

    pub fn match_part(&self, desc: &PartDescriptor) -> Result<u8, RecommendError> {
        let input = MatcherInput {
            parts: vec![desc.clone()],
        };
        match self.complete(PromptTemplate::PartMatcher, &input)? {
            ParsedOutput::Matches(m) => Ok(m[0].id),
            other => Err(unexpected(other)),
        }
    }

    pub fn map_ranking(
        &self,
        part_id: u8,
        metric: MetricKind,
        intent: &DesignIntent,
    ) -> Result<Recommendation, RecommendError> {
        ranking_tiers(self.table, part_id, metric)?;
        let input = RankingInput {
            part_id,
            metric,
            intent: intent.text(),
        };
        match self.complete(PromptTemplate::MapperRanking, &input)? {
            ParsedOutput::Ranked(r) => enforce_tier_order(self.table, part_id, metric, &r),
            other => Err(unexpected(other)),
        }
    }

    pub fn map_binary(
        &self,
        metric: MetricKind,
        intent: &DesignIntent,
    ) -> Result<Recommendation, RecommendError> {
        let text = intent.text();
        let rule = map_binary(self.table, metric, &text)?;
        let input = BinaryInput {
            metric,
            intent: text,
        };
        match self.complete(PromptTemplate::MapperBinary, &input)? {
            ParsedOutput::Ranked(r) => {
                let allowed = binary_options(metric).expect("checked by map_binary");
                if r.len() == 2 && r.iter().all(|x| allowed.contains(&x.choice)) && r[0].choice != r[1].choice {
                    Ok(Recommendation {
                        ranked: r,
                        low_confidence: rule.low_confidence && rule.top().choice == allowed[0],
                        ..rule
                    })
                } else {
                    Ok(rule)
                }
            }
            other => Err(unexpected(other)),
        }
    }

    /// Full pipeline for one part.
    pub fn recommend(
        &self,
        part: &PartSpec,
        intent: &DesignIntent,
    ) -> Result<Recommendation, RecommendError> {
        intent.validate()?;
        let choice = self
            .select_metric(intent, std::slice::from_ref(&part.name))?
            .into_iter()
            .next()
            .expect("one part in, one choice out");
        let mut rec = if choice.metric.is_ranking() {
            let id = self.match_part(&PartDescriptor::from_part_spec(part))?;
            self.map_ranking(id, choice.metric, intent)?
        } else {
            self.map_binary(choice.metric, intent)?
        };
        rec.metric_reason = choice.reason;
        Ok(rec)
    }

    fn complete<T: Serialize>(
        &self,
        template: PromptTemplate,
        input: &T,
    ) -> Result<ParsedOutput, RecommendError> {
        let req = CompletionRequest::new(template, input)?;
        Ok(self.gateway.complete(&req)?.parsed)
    }
}

fn unexpected(out: ParsedOutput) -> RecommendError {
    RecommendError::Llm(LlmError::Schema {
        message: format!("unexpected output kind {:?}", out.kind()),
        raw: String::new(),
    })
}

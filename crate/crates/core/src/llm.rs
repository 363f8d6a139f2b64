//! Prompt rendering, output validation and completion backends.
//!
//! Prompts are shipped as text assets under `prompts/`. A [`Gateway`] either
//! talks to a chat-completions style HTTP endpoint or answers offline from the
//! rule engines in [`crate::recommend`].

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::empirical::{TierTable, DATASET_SIZE};
use crate::interaction::HoiDesign;
use crate::recommend::{
    self, binary_options, MetricChoice, MetricKind, PartAnalysisEntry, PartDescriptor, PartMatch,
    Prioritization, PriorityCandidate, RankedDesign, RATIONALE_MAX_CHARS,
};
use crate::text;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_RETRIES: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("{template}: missing input field `{field}`")]
    MissingField { template: PromptTemplate, field: String },
    #[error("{template}: invalid input: {message}")]
    InvalidInput { template: PromptTemplate, message: String },
    #[error("malformed JSON output: {message}")]
    Parse { message: String, raw: String },
    #[error("output does not match schema: {message}")]
    Schema { message: String, raw: String },
    #[error("LLM unavailable after {attempts} attempt(s): {message}")]
    Unavailable { message: String, attempts: u32 },
    #[error("LLM configuration: {0}")]
    Config(String),
}

impl LlmError {
    /// Raw model text attached to parse and schema errors.
    pub fn raw(&self) -> Option<&str> {
        match self {
            LlmError::Parse { raw, .. } | LlmError::Schema { raw, .. } => Some(raw),
            _ => None,
        }
    }

    fn schema(message: impl Into<String>, raw: &str) -> Self {
        LlmError::Schema {
            message: message.into(),
            raw: raw.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptTemplate {
    ObjectAnalyzer,
    PartPrioritizer,
    MetricSelector,
    PartMatcher,
    MapperRanking,
    MapperBinary,
}

impl PromptTemplate {
    pub const ALL: [PromptTemplate; 6] = [
        PromptTemplate::ObjectAnalyzer,
        PromptTemplate::PartPrioritizer,
        PromptTemplate::MetricSelector,
        PromptTemplate::PartMatcher,
        PromptTemplate::MapperRanking,
        PromptTemplate::MapperBinary,
    ];

    /// System prompt text, byte-identical to the shipped asset.
    pub fn system_text(self) -> &'static str {
        match self {
            PromptTemplate::ObjectAnalyzer => include_str!("../prompts/object_analyzer.txt"),
            PromptTemplate::PartPrioritizer => include_str!("../prompts/part_prioritizer.txt"),
            PromptTemplate::MetricSelector => include_str!("../prompts/metric_selector.txt"),
            PromptTemplate::PartMatcher => include_str!("../prompts/part_matcher.txt"),
            PromptTemplate::MapperRanking => include_str!("../prompts/mapper_ranking.txt"),
            PromptTemplate::MapperBinary => include_str!("../prompts/mapper_binary.txt"),
        }
    }

    pub fn asset_name(self) -> &'static str {
        match self {
            PromptTemplate::ObjectAnalyzer => "object_analyzer.txt",
            PromptTemplate::PartPrioritizer => "part_prioritizer.txt",
            PromptTemplate::MetricSelector => "metric_selector.txt",
            PromptTemplate::PartMatcher => "part_matcher.txt",
            PromptTemplate::MapperRanking => "mapper_ranking.txt",
            PromptTemplate::MapperBinary => "mapper_binary.txt",
        }
    }

    /// Top-level input fields that must be present.
    pub fn required_fields(self) -> &'static [&'static str] {
        match self {
            PromptTemplate::ObjectAnalyzer => &["object", "parts"],
            PromptTemplate::PartPrioritizer => &["intent", "parts"],
            PromptTemplate::MetricSelector => &["parts", "intent"],
            PromptTemplate::PartMatcher => &["parts"],
            PromptTemplate::MapperRanking => &["partId", "metric", "intent"],
            PromptTemplate::MapperBinary => &["metric", "intent"],
        }
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

// ---------------------------------------------------------------------------
// Template inputs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerInput {
    pub object: String,
    pub parts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrioritizerInput {
    pub intent: String,
    pub parts: Vec<PriorityCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricInput {
    pub parts: Vec<String>,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherInput {
    pub parts: Vec<PartDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RankingInput {
    pub part_id: u8,
    pub metric: MetricKind,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryInput {
    pub metric: MetricKind,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq)]
enum TemplateInput {
    Analyzer(AnalyzerInput),
    Prioritizer(PrioritizerInput),
    Metric(MetricInput),
    Matcher(MatcherInput),
    Ranking(RankingInput),
    Binary(BinaryInput),
}

fn typed<T: DeserializeOwned>(template: PromptTemplate, v: &Value) -> Result<T, LlmError> {
    serde_json::from_value(v.clone()).map_err(|e| LlmError::InvalidInput {
        template,
        message: e.to_string(),
    })
}

impl TemplateInput {
    fn from_value(template: PromptTemplate, v: &Value) -> Result<Self, LlmError> {
        for field in template.required_fields() {
            if v.get(field).is_none_or(Value::is_null) {
                return Err(LlmError::MissingField {
                    template,
                    field: (*field).to_owned(),
                });
            }
        }
        let invalid = |message: &str| LlmError::InvalidInput {
            template,
            message: message.to_owned(),
        };
        let input = match template {
            PromptTemplate::ObjectAnalyzer => {
                let i: AnalyzerInput = typed(template, v)?;
                if i.parts.is_empty() {
                    return Err(invalid("at least one part is required"));
                }
                TemplateInput::Analyzer(i)
            }
            PromptTemplate::PartPrioritizer => {
                let i: PrioritizerInput = typed(template, v)?;
                if i.parts.is_empty() {
                    return Err(invalid("at least one part is required"));
                }
                TemplateInput::Prioritizer(i)
            }
            PromptTemplate::MetricSelector => TemplateInput::Metric(typed(template, v)?),
            PromptTemplate::PartMatcher => {
                let i: MatcherInput = typed(template, v)?;
                if i.parts.is_empty() {
                    return Err(invalid("at least one part is required"));
                }
                TemplateInput::Matcher(i)
            }
            PromptTemplate::MapperRanking => {
                let i: RankingInput = typed(template, v)?;
                if !i.metric.is_ranking() {
                    return Err(invalid("metric must be Preference, Usability or Realism"));
                }
                if !(1..=DATASET_SIZE).contains(&i.part_id) {
                    return Err(invalid("partId must be in 1..=13"));
                }
                TemplateInput::Ranking(i)
            }
            PromptTemplate::MapperBinary => {
                let i: BinaryInput = typed(template, v)?;
                if binary_options(i.metric).is_none() {
                    return Err(invalid("metric must be Efficiency or Challenge"));
                }
                TemplateInput::Binary(i)
            }
        };
        Ok(input)
    }
}

/// A rendered prompt: the system text plus the user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    /// Both messages as one text block.
    pub fn to_text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

/// Renders the user message for `template` from JSON inputs.
pub fn render_prompt(template: PromptTemplate, inputs: &Value) -> Result<RenderedPrompt, LlmError> {
    let input = TemplateInput::from_value(template, inputs)?;
    Ok(RenderedPrompt {
        system: template.system_text().to_owned(),
        user: render_user(&input),
    })
}

fn render_user(input: &TemplateInput) -> String {
    match input {
        TemplateInput::Analyzer(i) => {
            let mut s = format!("Object: {}\nParts: {}", i.object, i.parts.join(", "));
            if let Some(d) = &i.descriptors {
                let lines: Vec<String> = i
                    .parts
                    .iter()
                    .zip(d)
                    .filter(|(_, d)| !d.trim().is_empty())
                    .map(|(p, d)| format!("- {p}: {d}"))
                    .collect();
                if !lines.is_empty() {
                    s.push_str("\nDescriptions:\n");
                    s.push_str(&lines.join("\n"));
                }
            }
            s
        }
        TemplateInput::Prioritizer(i) => {
            let parts: Vec<Value> = i
                .parts
                .iter()
                .map(|p| json!({"id": p.id, "affordances": p.affordances}))
                .collect();
            serde_json::to_string_pretty(&json!({"intent": i.intent, "parts": parts}))
                .expect("plain JSON values serialise")
        }
        TemplateInput::Metric(i) => format!("intent: [{}] and [{}]", i.parts.join(", "), i.intent),
        TemplateInput::Matcher(i) => i
            .parts
            .iter()
            .map(|p| format!("[{}]", p.matcher_line()))
            .collect::<Vec<_>>()
            .join("\n"),
        TemplateInput::Ranking(i) => {
            let table = TierTable::builtin();
            let tiers = recommend::ranking_tiers(table, i.part_id, i.metric)
                .expect("validated input")
                .to_string();
            let label = table.part(i.part_id).map(|p| p.descriptor.clone()).unwrap_or_default();
            let mut s = format!(
                "Part: {label}\nMetric: {}\n1. Candidate HOIs: {tiers}\n2. Comments:\n",
                i.metric
            );
            for d in HoiDesign::ALL {
                let c = table.comments(i.part_id, d);
                s.push_str(&format!(
                    "- {}: pros: {}; cons: {}\n",
                    d.code(),
                    c.pros.join(", "),
                    c.cons.join(", ")
                ));
            }
            s.push_str(&format!("3. Intent: {}", i.intent));
            s
        }
        TemplateInput::Binary(i) => format!("primary_metric: {} intent: {}", i.metric, i.intent),
    }
}

// ---------------------------------------------------------------------------
// Output parsing
// ---------------------------------------------------------------------------

/// A validated model answer.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedOutput {
    ObjectAnalysis(Vec<PartAnalysisEntry>),
    Prioritization(Prioritization),
    Metrics(Vec<MetricChoice>),
    Matches(Vec<PartMatch>),
    Ranked(Vec<RankedDesign>),
}

impl ParsedOutput {
    pub fn kind(&self) -> &'static str {
        match self {
            ParsedOutput::ObjectAnalysis(_) => "ObjectAnalysis",
            ParsedOutput::Prioritization(_) => "Prioritization",
            ParsedOutput::Metrics(_) => "Metrics",
            ParsedOutput::Matches(_) => "Matches",
            ParsedOutput::Ranked(_) => "Ranked",
        }
    }

    /// Serialises to the JSON shape the prompt asks for.
    pub fn to_json(&self) -> Value {
        let v = match self {
            ParsedOutput::ObjectAnalysis(v) => serde_json::to_value(v),
            ParsedOutput::Prioritization(v) => serde_json::to_value(v),
            ParsedOutput::Metrics(v) => serde_json::to_value(v),
            ParsedOutput::Matches(v) => serde_json::to_value(v),
            ParsedOutput::Ranked(v) => serde_json::to_value(v),
        };
        v.expect("output types serialise")
    }
}

/// Parse result with a note of any rationale truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub value: ParsedOutput,
    pub truncated: bool,
}

/// Removes a surrounding Markdown code fence, if any.
pub fn strip_code_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(start) = t.find("```") else {
        return t;
    };
    let after = &t[start + 3..];
    let body = match after.find('\n') {
        Some(nl) => &after[nl + 1..],
        None => after,
    };
    match body.rfind("```") {
        Some(end) => body[..end].trim(),
        None => body.trim(),
    }
}

#[derive(Deserialize)]
struct RawRanked {
    rank: Value,
    choice: String,
    rationale: String,
    keywords: RawKeywords,
}

#[derive(Deserialize)]
struct RawKeywords {
    #[serde(default)]
    pros: Vec<String>,
    #[serde(default)]
    cons: Vec<String>,
}

#[derive(Deserialize)]
struct RawMetric {
    part: Value,
    metric: String,
    #[serde(default)]
    reason: String,
}

fn shape<T: DeserializeOwned>(v: Value, raw: &str) -> Result<T, LlmError> {
    serde_json::from_value(v).map_err(|e| LlmError::schema(e.to_string(), raw))
}

fn clip(s: &str, truncated: &mut bool) -> String {
    let (out, cut) = text::truncate_words(s.trim(), RATIONALE_MAX_CHARS);
    *truncated |= cut;
    out
}

/// Parses and validates raw model text for `template`.
pub fn parse_llm_json(raw: &str, template: PromptTemplate) -> Result<Parsed, LlmError> {
    let body = strip_code_fence(raw);
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::Parse {
        message: e.to_string(),
        raw: raw.to_owned(),
    })?;
    let mut truncated = false;
    let value = match template {
        PromptTemplate::ObjectAnalyzer => {
            let entries: Vec<PartAnalysisEntry> = shape(v, raw)?;
            if entries.is_empty() {
                return Err(LlmError::schema("empty part list", raw));
            }
            ParsedOutput::ObjectAnalysis(entries)
        }
        PromptTemplate::PartPrioritizer => {
            let mut p: Prioritization = shape(v, raw)?;
            if p.priority_parts.is_empty() {
                return Err(LlmError::schema("priority_parts is empty", raw));
            }
            if !(1..=p.priority_parts.len()).contains(&p.initial_level) {
                return Err(LlmError::schema(
                    format!("initial_level {} outside 1..={}", p.initial_level, p.priority_parts.len()),
                    raw,
                ));
            }
            p.rationale = clip(&p.rationale, &mut truncated);
            ParsedOutput::Prioritization(p)
        }
        PromptTemplate::MetricSelector => {
            let items: Vec<RawMetric> = shape(v, raw)?;
            let choices = items
                .into_iter()
                .map(|m| {
                    let metric = MetricKind::from_str(&m.metric)
                        .map_err(|_| LlmError::schema(format!("unknown metric `{}`", m.metric), raw))?;
                    let part = match m.part {
                        Value::String(s) => s,
                        Value::Array(a) => a
                            .iter()
                            .map(|x| x.as_str().map(str::to_owned).unwrap_or_else(|| x.to_string()))
                            .collect::<Vec<_>>()
                            .join(", "),
                        other => other.to_string(),
                    };
                    Ok(MetricChoice {
                        part,
                        metric,
                        reason: clip(&m.reason, &mut truncated),
                    })
                })
                .collect::<Result<Vec<_>, LlmError>>()?;
            if choices.is_empty() {
                return Err(LlmError::schema("empty metric list", raw));
            }
            ParsedOutput::Metrics(choices)
        }
        PromptTemplate::PartMatcher => {
            let matches: Vec<PartMatch> = shape(v, raw)?;
            if matches.is_empty() {
                return Err(LlmError::schema("empty match list", raw));
            }
            if let Some(m) = matches.iter().find(|m| !(1..=DATASET_SIZE).contains(&m.id)) {
                return Err(LlmError::schema(format!("matched id {} outside 1..=13", m.id), raw));
            }
            ParsedOutput::Matches(matches)
        }
        PromptTemplate::MapperRanking | PromptTemplate::MapperBinary => {
            let items: Vec<RawRanked> = shape(v, raw)?;
            ParsedOutput::Ranked(validate_ranked(items, template, raw, &mut truncated)?)
        }
    };
    Ok(Parsed { value, truncated })
}

fn validate_ranked(
    items: Vec<RawRanked>,
    template: PromptTemplate,
    raw: &str,
    truncated: &mut bool,
) -> Result<Vec<RankedDesign>, LlmError> {
    if items.is_empty() {
        return Err(LlmError::schema("empty ranking", raw));
    }
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let rank = item
            .rank
            .as_u64()
            .filter(|r| *r >= 1)
            .ok_or_else(|| LlmError::schema(format!("rank {} is not a positive integer", item.rank), raw))?;
        let choice = HoiDesign::from_str(item.choice.trim())
            .map_err(|_| LlmError::schema(format!("choice `{}` is not one of PM, GM, GA, CM, CA", item.choice), raw))?;
        if template == PromptTemplate::MapperBinary
            && !matches!(choice, HoiDesign::PM | HoiDesign::GM | HoiDesign::CM)
        {
            return Err(LlmError::schema(format!("choice `{choice}` is not one of PM, GM, CM"), raw));
        }
        out.push(RankedDesign {
            rank: rank as usize,
            choice,
            rationale: clip(&item.rationale, truncated),
            keywords: recommend::Keywords {
                pros: item.keywords.pros,
                cons: item.keywords.cons,
            },
        });
    }
    out.sort_by_key(|r| r.rank);
    if out.iter().enumerate().any(|(i, r)| r.rank != i + 1) {
        return Err(LlmError::schema("ranks must be 1..=n without gaps", raw));
    }
    for (i, r) in out.iter().enumerate() {
        if out[..i].iter().any(|o| o.choice == r.choice) {
            return Err(LlmError::schema(format!("{} ranked twice", r.choice), raw));
        }
    }
    if template == PromptTemplate::MapperBinary && out.len() != 2 {
        return Err(LlmError::schema("binary output must have exactly two entries", raw));
    }
    Ok(out)
}

/// Checks that need the request as well as the answer.
fn check_against_input(input: &TemplateInput, out: &ParsedOutput, raw: &str) -> Result<(), LlmError> {
    match (input, out) {
        (TemplateInput::Matcher(i), ParsedOutput::Matches(m)) if m.len() != i.parts.len() => Err(
            LlmError::schema(format!("{} matches for {} input parts", m.len(), i.parts.len()), raw),
        ),
        (TemplateInput::Analyzer(i), ParsedOutput::ObjectAnalysis(a)) if a.len() != i.parts.len() => Err(
            LlmError::schema(format!("{} entries for {} input parts", a.len(), i.parts.len()), raw),
        ),
        (TemplateInput::Prioritizer(i), ParsedOutput::Prioritization(p)) => {
            if p.initial_level > i.parts.len() {
                return Err(LlmError::schema(
                    format!("initial_level {} exceeds {} parts", p.initial_level, i.parts.len()),
                    raw,
                ));
            }
            match p.priority_parts.iter().find(|id| !i.parts.iter().any(|c| &c.id == *id)) {
                Some(id) => Err(LlmError::schema(format!("unknown part `{id}` in priority_parts"), raw)),
                None => Ok(()),
            }
        }
        (TemplateInput::Binary(i), ParsedOutput::Ranked(r)) => {
            let allowed = binary_options(i.metric).expect("validated input");
            match r.iter().find(|x| !allowed.contains(&x.choice)) {
                Some(x) => Err(LlmError::schema(format!("{} is not an option for {}", x.choice, i.metric), raw)),
                None => Ok(()),
            }
        }
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmMode {
    Mock,
    Live,
}

impl FromStr for LlmMode {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(LlmMode::Mock),
            "live" => Ok(LlmMode::Live),
            other => Err(LlmError::Config(format!("unknown LLM mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmSettings {
    pub mode: LlmMode,
    /// Full URL of a chat-completions endpoint.
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout: Duration,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub retry_backoff: Duration,
    /// Answer from the mock when the live backend is unavailable.
    pub fallback_to_mock: bool,
    /// Serialise completions through one lock.
    pub serialize: bool,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            mode: LlmMode::Mock,
            endpoint: None,
            api_key: None,
            model: None,
            timeout: Duration::from_millis(DEFAULT_TIMEOUT_MS),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_retries: DEFAULT_MAX_RETRIES,
            retry_backoff: Duration::from_millis(250),
            fallback_to_mock: false,
            serialize: false,
        }
    }
}

impl LlmSettings {
    pub fn live(endpoint: impl Into<String>) -> Self {
        Self {
            mode: LlmMode::Live,
            endpoint: Some(endpoint.into()),
            ..Self::default()
        }
    }

    /// Reads `HOICRAFT_LLM_MODE`, `_ENDPOINT`, `_API_KEY`, `_MODEL`,
    /// `_TIMEOUT_MS` and `_FALLBACK`.
    pub fn from_env() -> Result<Self, LlmError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, LlmError> {
        let mut s = Self::default();
        if let Some(m) = get("HOICRAFT_LLM_MODE") {
            s.mode = m.parse()?;
        }
        s.endpoint = get("HOICRAFT_LLM_ENDPOINT").filter(|v| !v.is_empty());
        s.api_key = get("HOICRAFT_LLM_API_KEY").filter(|v| !v.is_empty());
        s.model = get("HOICRAFT_LLM_MODEL").filter(|v| !v.is_empty());
        if let Some(t) = get("HOICRAFT_LLM_TIMEOUT_MS") {
            let ms: u64 = t
                .trim()
                .parse()
                .map_err(|_| LlmError::Config(format!("bad timeout `{t}`")))?;
            s.timeout = Duration::from_millis(ms);
        }
        if let Some(f) = get("HOICRAFT_LLM_FALLBACK") {
            s.fallback_to_mock = matches!(f.trim().to_ascii_lowercase().as_str(), "1" | "true" | "yes");
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.mode == LlmMode::Live && self.endpoint.is_none() {
            return Err(LlmError::Config("live mode needs an endpoint".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CompletionRequest {
    pub template: PromptTemplate,
    pub inputs: Value,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl CompletionRequest {
    pub fn new<T: Serialize>(template: PromptTemplate, inputs: &T) -> Result<Self, LlmError> {
        let inputs = serde_json::to_value(inputs).map_err(|e| LlmError::InvalidInput {
            template,
            message: e.to_string(),
        })?;
        Ok(Self {
            template,
            inputs,
            temperature: None,
            max_tokens: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Backend {
    Mock,
    Live,
    /// The live backend failed and the mock answered instead.
    MockFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub raw_text: String,
    pub parsed: ParsedOutput,
    pub latency_ms: f64,
    pub truncated: bool,
    pub backend: Backend,
    /// HTTP round trips made for this completion.
    pub attempts: u32,
}

/// Completion backend with call accounting.
#[derive(Debug)]
pub struct Gateway {
    settings: LlmSettings,
    agent: Option<ureq::Agent>,
    network_calls: AtomicU64,
    completions: AtomicU64,
    lock: Mutex<()>,
}

enum Transport {
    Transient(String),
    Fatal(String),
}

impl Gateway {
    pub fn new(settings: LlmSettings) -> Result<Self, LlmError> {
        settings.validate()?;
        let agent = (settings.mode == LlmMode::Live).then(|| {
            ureq::Agent::config_builder()
                .timeout_global(Some(settings.timeout))
                .http_status_as_error(false)
                .build()
                .into()
        });
        Ok(Self {
            settings,
            agent,
            network_calls: AtomicU64::new(0),
            completions: AtomicU64::new(0),
            lock: Mutex::new(()),
        })
    }

    pub fn mock() -> Self {
        Self::new(LlmSettings::default()).expect("default settings are valid")
    }

    pub fn from_env() -> Result<Self, LlmError> {
        Self::new(LlmSettings::from_env()?)
    }

    pub fn settings(&self) -> &LlmSettings {
        &self.settings
    }

    pub fn mode(&self) -> LlmMode {
        self.settings.mode
    }

    /// HTTP requests issued so far.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// Completions answered so far, by any backend.
    pub fn completions(&self) -> u64 {
        self.completions.load(Ordering::Relaxed)
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let _guard = self
            .settings
            .serialize
            .then(|| self.lock.lock().unwrap_or_else(|e| e.into_inner()));
        let input = TemplateInput::from_value(req.template, &req.inputs)?;
        let started = Instant::now();
        let result = match self.settings.mode {
            LlmMode::Mock => mock_complete(req.template, &input),
            LlmMode::Live => match self.live_complete(req, &input) {
                Err(LlmError::Unavailable { message, .. }) if self.settings.fallback_to_mock => {
                    log::warn!("LLM unavailable ({message}); answering from mock");
                    mock_complete(req.template, &input).map(|mut r| {
                        r.backend = Backend::MockFallback;
                        r
                    })
                }
                other => other,
            },
        };
        let mut resp = result?;
        resp.latency_ms = started.elapsed().as_secs_f64() * 1e3;
        self.completions.fetch_add(1, Ordering::Relaxed);
        Ok(resp)
    }

    fn live_complete(
        &self,
        req: &CompletionRequest,
        input: &TemplateInput,
    ) -> Result<CompletionResponse, LlmError> {
        let system = req.template.system_text();
        let user = render_user(input);
        let mut messages = vec![
            json!({"role": "system", "content": system}),
            json!({"role": "user", "content": user}),
        ];
        let mut attempts = 0;
        let mut reasked = false;
        loop {
            let raw = self.post_with_retries(req, &messages, &mut attempts)?;
            let checked = parse_llm_json(&raw, req.template)
                .and_then(|p| check_against_input(input, &p.value, &raw).map(|_| p));
            match checked {
                Ok(p) => {
                    return Ok(CompletionResponse {
                        raw_text: raw,
                        parsed: p.value,
                        latency_ms: 0.0,
                        truncated: p.truncated,
                        backend: Backend::Live,
                        attempts,
                    })
                }
                Err(e @ (LlmError::Parse { .. } | LlmError::Schema { .. })) if !reasked => {
                    log::info!("re-asking after invalid output: {e}");
                    reasked = true;
                    messages.push(json!({"role": "assistant", "content": raw}));
                    messages.push(json!({
                        "role": "user",
                        "content": format!(
                            "Your previous answer was invalid: {e}. Reply again with only the JSON in the required output format."
                        ),
                    }));
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post_with_retries(
        &self,
        req: &CompletionRequest,
        messages: &[Value],
        attempts: &mut u32,
    ) -> Result<String, LlmError> {
        let mut last = String::new();
        for retry in 0..=self.settings.max_retries {
            if retry > 0 && !self.settings.retry_backoff.is_zero() {
                std::thread::sleep(self.settings.retry_backoff * retry);
            }
            *attempts += 1;
            match self.post_once(req, messages) {
                Ok(text) => return Ok(text),
                Err(Transport::Transient(m)) => {
                    log::warn!("transient LLM failure: {m}");
                    last = m;
                }
                Err(Transport::Fatal(m)) => {
                    return Err(LlmError::Unavailable {
                        message: m,
                        attempts: *attempts,
                    })
                }
            }
        }
        Err(LlmError::Unavailable {
            message: last,
            attempts: *attempts,
        })
    }

    fn post_once(&self, req: &CompletionRequest, messages: &[Value]) -> Result<String, Transport> {
        let agent = self.agent.as_ref().expect("live mode has an agent");
        let endpoint = self.settings.endpoint.as_deref().expect("validated");
        let mut body = json!({
            "messages": messages,
            "temperature": req.temperature.unwrap_or(self.settings.temperature),
            "max_tokens": req.max_tokens.unwrap_or(self.settings.max_tokens),
        });
        if let Some(model) = &self.settings.model {
            body["model"] = json!(model);
        }
        let mut request = agent.post(endpoint);
        if let Some(key) = &self.settings.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        self.network_calls.fetch_add(1, Ordering::Relaxed);
        let mut resp = request
            .send_json(&body)
            .map_err(|e| Transport::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Transport::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Transport::Fatal(format!("HTTP {status}: {detail}")));
        }
        let envelope: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Transport::Transient(format!("unreadable response body: {e}")))?;
        envelope
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Transport::Transient("response has no choices[0].message.content".into()))
    }
}

impl Clone for Gateway {
    /// A gateway with the same settings and fresh counters.
    fn clone(&self) -> Self {
        Self::new(self.settings.clone()).expect("settings were valid")
    }
}

/// Deterministic answer from the rule engines, passed through the same
/// serialise-then-parse path as a live answer.
fn mock_complete(template: PromptTemplate, input: &TemplateInput) -> Result<CompletionResponse, LlmError> {
    let table = TierTable::builtin();
    let rule_err = |e: recommend::RecommendError| LlmError::InvalidInput {
        template,
        message: e.to_string(),
    };
    let out = match input {
        TemplateInput::Analyzer(i) => ParsedOutput::ObjectAnalysis(
            recommend::analyze_object(&i.object, &i.parts, i.descriptors.as_deref()).map_err(rule_err)?,
        ),
        TemplateInput::Prioritizer(i) => {
            ParsedOutput::Prioritization(recommend::prioritize_parts(&i.intent, &i.parts).map_err(rule_err)?)
        }
        TemplateInput::Metric(i) => {
            let (metric, reason) = recommend::select_metric(&i.intent);
            let parts = if i.parts.is_empty() { vec![String::new()] } else { i.parts.clone() };
            ParsedOutput::Metrics(
                parts
                    .into_iter()
                    .map(|part| MetricChoice {
                        part,
                        metric,
                        reason: reason.clone(),
                    })
                    .collect(),
            )
        }
        TemplateInput::Matcher(i) => ParsedOutput::Matches(recommend::match_parts(table, &i.parts)),
        TemplateInput::Ranking(i) => ParsedOutput::Ranked(
            recommend::map_ranking(table, i.part_id, i.metric)
                .map_err(rule_err)?
                .ranked,
        ),
        TemplateInput::Binary(i) => ParsedOutput::Ranked(
            recommend::map_binary(table, i.metric, &i.intent)
                .map_err(rule_err)?
                .ranked,
        ),
    };
    let raw = serde_json::to_string_pretty(&out.to_json()).expect("output types serialise");
    let parsed = parse_llm_json(&raw, template)?;
    check_against_input(input, &parsed.value, &raw)?;
    Ok(CompletionResponse {
        raw_text: raw,
        parsed: parsed.value,
        latency_ms: 0.0,
        truncated: parsed.truncated,
        backend: Backend::Mock,
        attempts: 0,
    })
}

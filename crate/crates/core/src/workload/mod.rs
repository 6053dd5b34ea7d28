//! Request streams: synthetic workload mixtures, JSONL trace loading and a
//! reuse-probe construction with prescribed per-type reuse probabilities.

mod generate;
mod jsonl;
mod probe;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::{AGENTIC_INTERVAL, CHAT_INTERVAL};
use crate::timing::LogNormalParams;
use crate::types::{Category, PerCategory, PerStyle, SessionId, Style, TokenId, TokenType};

pub use generate::{generate, sample_interval};
pub use jsonl::{load_trace, parse_trace, write_jsonl, JsonlRecord, TraceFormat};
pub use probe::{reuse_probe, ProbeSpec, REFERENCE_REUSE};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Timing(#[from] crate::timing::TimingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, WorkloadError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSegment {
    pub token_type: TokenType,
    pub tokens: Vec<TokenId>,
}

impl TokenSegment {
    pub fn new(token_type: TokenType, tokens: Vec<TokenId>) -> Self {
        TokenSegment { token_type, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Latent request attributes that drive the hand-crafted predictor features.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RequestMeta {
    pub open_ended: f64,
    pub enthusiasm: f64,
    pub ends_question: f64,
    pub prompt_sentences: u32,
    pub multistep: bool,
    pub has_code: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub arrival_time: f64,
    pub session_id: SessionId,
    pub turn_index: u32,
    /// The prompt, including carried history.
    pub segments: Vec<TokenSegment>,
    /// Generated tokens, when known.
    #[serde(default)]
    pub output: Vec<TokenSegment>,
    pub output_length: u32,
    pub category: Category,
    #[serde(default)]
    pub meta: RequestMeta,
    /// Whether a later turn of this session exists.
    #[serde(default)]
    pub continues: Option<bool>,
}

impl Request {
    pub fn prompt_len(&self) -> usize {
        self.segments.iter().map(TokenSegment::len).sum()
    }

    pub fn prompt_tokens(&self) -> Vec<TokenId> {
        self.segments.iter().flat_map(|s| s.tokens.iter().copied()).collect()
    }

    /// Token type of every prompt position.
    pub fn prompt_types(&self) -> Vec<TokenType> {
        self.segments.iter().flat_map(|s| std::iter::repeat_n(s.token_type, s.len())).collect()
    }

    pub fn response_len(&self) -> usize {
        self.output.iter().filter(|s| s.token_type != TokenType::Cot).map(TokenSegment::len).sum()
    }

    pub fn style(&self) -> Style {
        self.category.style()
    }
}

/// One observed inter-turn gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub session_id: SessionId,
    pub turn_index: u32,
    pub style: Style,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub name: String,
    pub requests: Vec<Request>,
    pub intervals: Vec<Interval>,
}

impl Trace {
    /// Ground-truth continuation for `(session, turn)`.
    pub fn continuation(&self, session: SessionId, turn: u32) -> Option<bool> {
        self.requests
            .iter()
            .find(|r| r.session_id == session && r.turn_index == turn)
            .and_then(|r| r.continues)
    }

    pub fn num_sessions(&self) -> usize {
        let mut ids: Vec<_> = self.requests.iter().map(|r| r.session_id).collect();
        ids.sort();
        ids.dedup();
        ids.len()
    }

    pub fn category_counts(&self) -> BTreeMap<Category, usize> {
        let mut m = BTreeMap::new();
        for r in &self.requests {
            *m.entry(r.category).or_insert(0) += 1;
        }
        m
    }

    pub fn interval_seconds(&self, style: Option<Style>) -> Vec<f64> {
        self.intervals
            .iter()
            .filter(|i| style.is_none_or(|s| i.style == s))
            .map(|i| i.seconds)
            .collect()
    }

    pub fn total_prompt_tokens(&self) -> usize {
        self.requests.iter().map(Request::prompt_len).sum()
    }
}

/// Length and sharing parameters for one request category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryProfile {
    /// Mean of the geometric turn-count distribution; 1 means single-turn.
    pub mean_turns: f64,
    /// Median prompt length of a first turn, in tokens.
    pub prompt_median: f64,
    pub output_median: f64,
    /// Median length of the new segment appended on each later turn.
    pub followup_median: f64,
    /// Fraction of a single-turn prompt drawn from a shared template.
    pub sharing_ratio: f64,
}

impl CategoryProfile {
    pub fn default_for(c: Category) -> Self {
        let (mean_turns, prompt_median, output_median, followup_median, sharing_ratio) = match c {
            Category::Chat => (3.6, 150.0, 250.0, 60.0, 0.0),
            Category::Agent => (6.0, 400.0, 200.0, 150.0, 0.0),
            Category::ToolUse => (1.0, 600.0, 100.0, 0.0, 0.85),
            Category::Programming => (1.0, 500.0, 300.0, 0.0, 0.6),
            Category::DocQa => (1.0, 800.0, 150.0, 0.0, 0.3),
        };
        CategoryProfile { mean_turns, prompt_median, output_median, followup_median, sharing_ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: String,
    /// Share of generated requests per category.
    pub mix: PerCategory<f64>,
    pub num_sessions: usize,
    pub profiles: PerCategory<CategoryProfile>,
    pub max_turns: u32,
    /// Log-space spread of prompt and output lengths.
    pub length_sigma: f64,
    pub templates_per_category: usize,
    /// Zipf exponent of template popularity; 0 is uniform.
    pub template_zipf_s: f64,
    pub interval_params: PerStyle<LogNormalParams>,
    /// Seconds between session starts.
    pub inject_interval: f64,
    pub seed: u64,
    pub vocab_size: u32,
    /// Fraction of agent/programming output spent on chain-of-thought.
    pub cot_fraction: f64,
    /// Fraction of a programming prompt's variable part that is pasted reasoning.
    pub prompt_cot_fraction: f64,
    /// Correlation between latent request features and continuation.
    pub feature_correlation: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            name: "balanced".into(),
            mix: PerCategory { chat: 0.3, agent: 0.2, tool_use: 0.25, programming: 0.15, doc_qa: 0.1 },
            num_sessions: 1000,
            profiles: PerCategory::from_fn(CategoryProfile::default_for),
            max_turns: 40,
            length_sigma: 0.5,
            templates_per_category: 64,
            template_zipf_s: 1.0,
            interval_params: PerStyle::new(CHAT_INTERVAL, AGENTIC_INTERVAL),
            inject_interval: 1.0,
            seed: 0,
            vocab_size: 32_000,
            cot_fraction: 0.3,
            prompt_cot_fraction: 0.1,
            feature_correlation: 0.6,
        }
    }
}

pub const PRESETS: [&str; 4] = ["multi_turn_dominant", "balanced", "single_turn_dominant", "tool_use"];

impl WorkloadSpec {
    pub fn preset(name: &str) -> Result<Self> {
        let mix = |chat, agent, tool_use, programming, doc_qa| PerCategory { chat, agent, tool_use, programming, doc_qa };
        let base = WorkloadSpec { name: name.to_string(), ..Self::default() };
        Ok(match name {
            "multi_turn_dominant" => WorkloadSpec { mix: mix(0.5, 0.3, 0.1, 0.05, 0.05), ..base },
            "balanced" => WorkloadSpec { mix: mix(0.3, 0.2, 0.25, 0.15, 0.1), ..base },
            "single_turn_dominant" => WorkloadSpec { mix: mix(0.1, 0.1, 0.4, 0.25, 0.15), ..base },
            "tool_use" => WorkloadSpec { mix: mix(0.0, 0.0, 1.0, 0.0, 0.0), num_sessions: 282, ..base },
            _ => return Err(WorkloadError::UnknownPreset(name.to_string())),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let shares: Vec<f64> = self.mix.iter().map(|(_, &v)| v).collect();
        if shares.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(WorkloadError::InvalidSpec("mix proportions must lie in [0, 1]".into()));
        }
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(WorkloadError::InvalidSpec(format!("mix proportions sum to {sum}, not 1")));
        }
        if self.num_sessions == 0 {
            return Err(WorkloadError::InvalidSpec("num_sessions must be positive".into()));
        }
        if self.vocab_size == 0 {
            return Err(WorkloadError::InvalidSpec("vocab_size must be positive".into()));
        }
        if !(self.template_zipf_s >= 0.0) {
            return Err(WorkloadError::InvalidSpec("template_zipf_s must be non-negative".into()));
        }
        if !(self.inject_interval >= 0.0) {
            return Err(WorkloadError::InvalidSpec("inject_interval must be non-negative".into()));
        }
        for (c, p) in self.profiles.iter() {
            if !(p.mean_turns >= 1.0) || !(p.prompt_median >= 1.0) || !(p.output_median >= 1.0) {
                return Err(WorkloadError::InvalidSpec(format!("profile for {c} has non-positive lengths")));
            }
            if !c.is_multi_turn() && !(0.0..1.0).contains(&p.sharing_ratio) {
                return Err(WorkloadError::InvalidSpec(format!("sharing ratio for {c} must lie in [0, 1)")));
            }
        }
        for s in Style::ALL {
            if !(self.interval_params[s].sigma > 0.0) {
                return Err(WorkloadError::InvalidSpec(format!("{} interval sigma must be positive", s.as_str())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_mixes() {
        let m = WorkloadSpec::preset("multi_turn_dominant").unwrap().mix;
        assert_eq!((m.chat, m.agent, m.tool_use, m.programming, m.doc_qa), (0.5, 0.3, 0.1, 0.05, 0.05));
        let b = WorkloadSpec::preset("balanced").unwrap().mix;
        assert_eq!((b.chat, b.agent, b.tool_use, b.programming, b.doc_qa), (0.3, 0.2, 0.25, 0.15, 0.1));
        for p in PRESETS {
            WorkloadSpec::preset(p).unwrap().validate().unwrap();
        }
        assert!(WorkloadSpec::preset("nope").is_err());
    }

    #[test]
    fn invalid_mix_rejected() {
        let mut s = WorkloadSpec::default();
        s.mix.chat += 0.1;
        assert!(matches!(s.validate(), Err(WorkloadError::InvalidSpec(_))));
    }
}

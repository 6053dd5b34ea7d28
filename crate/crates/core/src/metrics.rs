//! Reuse accounting, the TTFT cost model and report emission.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::learners::{LearnedState, Snapshot, POSITION_BINS};
use crate::types::{Category, PerType, SessionId, TokenType};

pub const SCHEMA: &str = "prefixsim/1";

/// Linear prefill-cost model for time-to-first-token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtftModel {
    pub per_token_prefill_s: f64,
    pub fixed_overhead_s: f64,
    pub policy_overhead_per_eviction_s: f64,
}

impl Default for TtftModel {
    fn default() -> Self {
        TtftModel { per_token_prefill_s: 0.25e-3, fixed_overhead_s: 0.020, policy_overhead_per_eviction_s: 0.0 }
    }
}

impl TtftModel {
    pub fn validate(&self) -> Result<(), String> {
        let TtftModel { per_token_prefill_s: a, fixed_overhead_s: b, policy_overhead_per_eviction_s: c } = *self;
        if a >= 0.0 && b >= 0.0 && c >= 0.0 {
            Ok(())
        } else {
            Err("TTFT model terms must be non-negative".into())
        }
    }
}

pub fn estimate_ttft(model: &TtftModel, prompt_tokens: usize, matched_tokens: usize, evictions: usize) -> f64 {
    model.per_token_prefill_s * prompt_tokens.saturating_sub(matched_tokens) as f64
        + model.fixed_overhead_s
        + model.policy_overhead_per_eviction_s * evictions as f64
}

/// What happened to one prompt block of a request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockObservation {
    pub token_type: TokenType,
    pub hit: bool,
    pub offset_fraction: f64,
    /// Session that inserted the block, for hits.
    pub origin: Option<SessionId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TypeReuse {
    pub intra_accesses: u64,
    pub intra_hits: u64,
    pub inter_accesses: u64,
    pub inter_hits: u64,
    pub intra_pct: f64,
    pub inter_pct: f64,
    pub combined_pct: f64,
}

fn pct(hits: u64, accesses: u64) -> f64 {
    if accesses == 0 {
        0.0
    } else {
        100.0 * hits as f64 / accesses as f64
    }
}

impl TypeReuse {
    fn finish(&mut self) {
        self.intra_pct = pct(self.intra_hits, self.intra_accesses);
        self.inter_pct = pct(self.inter_hits, self.inter_accesses);
        self.combined_pct = pct(self.intra_hits + self.inter_hits, self.intra_accesses + self.inter_accesses);
    }
}

/// Which session a reused block came from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Locality {
    pub same_session_hits: u64,
    pub cross_session_hits: u64,
    pub multi_turn_same_session_hits: u64,
    pub multi_turn_cross_session_hits: u64,
    pub intra_share_pct: f64,
    pub multi_turn_intra_share_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PositionBin {
    pub lo: f64,
    pub hi: f64,
    pub accesses: u64,
    pub hits: u64,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MissAfterEvict {
    pub evicted: u64,
    pub misses: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub index: usize,
    pub arrival_s: f64,
    pub session_id: SessionId,
    pub turn_index: u32,
    pub category: Category,
    pub prompt_tokens: usize,
    pub matched_tokens: usize,
    pub hit_blocks: usize,
    pub miss_blocks: usize,
    pub evictions: usize,
    pub ttft_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema: String,
    pub policy: String,
    pub workload: String,
    pub seed: u64,
    pub capacity_blocks: usize,
    pub block_size: usize,
    pub num_requests: usize,
    pub total_prompt_tokens: u64,
    pub total_matched_tokens: u64,
    pub overall_hit_ratio: f64,
    pub hit_blocks: u64,
    pub miss_blocks: u64,
    pub evictions: u64,
    pub total_ttft_s: f64,
    pub mean_ttft_s: f64,
    pub per_type_reuse: BTreeMap<String, TypeReuse>,
    pub locality: Locality,
    pub position_reuse: Vec<PositionBin>,
    pub miss_after_evict: BTreeMap<String, MissAfterEvict>,
    pub requests: Vec<RequestRecord>,
    pub learned_state: Option<LearnedState>,
    pub learner_trajectory: Vec<Snapshot>,
}

/// Accumulates per-request observations into a [`SimReport`].
#[derive(Debug, Clone, Default)]
pub struct ReportBuilder {
    per_type: PerType<TypeReuse>,
    locality: Locality,
    position: [(u64, u64); POSITION_BINS],
    evicted: PerType<u64>,
    miss_after_evict: PerType<u64>,
    requests: Vec<RequestRecord>,
}

impl ReportBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one request. Accesses from follow-up turns count as
    /// intra-session context, first turns as inter-session context; hits
    /// are separately attributed by the session that inserted the block.
    pub fn record_request(&mut self, record: RequestRecord, blocks: &[BlockObservation]) {
        let follow_up = record.turn_index > 0;
        let multi_turn = record.category.is_multi_turn();
        for b in blocks {
            let c = &mut self.per_type[b.token_type];
            if follow_up {
                c.intra_accesses += 1;
                c.intra_hits += b.hit as u64;
            } else {
                c.inter_accesses += 1;
                c.inter_hits += b.hit as u64;
            }
            let bin = ((b.offset_fraction.clamp(0.0, 1.0) * POSITION_BINS as f64) as usize).min(POSITION_BINS - 1);
            self.position[bin].0 += 1;
            if b.hit {
                self.position[bin].1 += 1;
                let same = b.origin == Some(record.session_id);
                if same {
                    self.locality.same_session_hits += 1;
                } else {
                    self.locality.cross_session_hits += 1;
                }
                if multi_turn {
                    if same {
                        self.locality.multi_turn_same_session_hits += 1;
                    } else {
                        self.locality.multi_turn_cross_session_hits += 1;
                    }
                }
            }
        }
        self.requests.push(record);
    }

    pub fn record_eviction(&mut self, t: TokenType) {
        self.evicted[t] += 1;
    }

    pub fn record_miss_after_evict(&mut self, t: TokenType) {
        self.miss_after_evict[t] += 1;
    }

    pub fn finish(self, header: ReportHeader) -> SimReport {
        let mut per_type = BTreeMap::new();
        for (t, c) in self.per_type.iter() {
            let mut c = *c;
            c.finish();
            per_type.insert(t.as_str().to_string(), c);
        }
        let mut loc = self.locality;
        loc.intra_share_pct = pct(loc.same_session_hits, loc.same_session_hits + loc.cross_session_hits);
        loc.multi_turn_intra_share_pct = pct(
            loc.multi_turn_same_session_hits,
            loc.multi_turn_same_session_hits + loc.multi_turn_cross_session_hits,
        );
        let position_reuse = self
            .position
            .iter()
            .enumerate()
            .map(|(i, &(a, h))| PositionBin {
                lo: i as f64 / POSITION_BINS as f64,
                hi: (i + 1) as f64 / POSITION_BINS as f64,
                accesses: a,
                hits: h,
                hit_rate: if a == 0 { 0.0 } else { h as f64 / a as f64 },
            })
            .collect();
        let miss_after_evict = TokenType::ALL
            .iter()
            .map(|&t| {
                let (e, m) = (self.evicted[t], self.miss_after_evict[t]);
                let rate = if e == 0 { 0.0 } else { m as f64 / e as f64 };
                (t.as_str().to_string(), MissAfterEvict { evicted: e, misses: m, rate })
            })
            .collect();
        let prompt: u64 = self.requests.iter().map(|r| r.prompt_tokens as u64).sum();
        let matched: u64 = self.requests.iter().map(|r| r.matched_tokens as u64).sum();
        let total_ttft: f64 = self.requests.iter().map(|r| r.ttft_s).sum();
        let n = self.requests.len();
        SimReport {
            schema: SCHEMA.to_string(),
            policy: header.policy,
            workload: header.workload,
            seed: header.seed,
            capacity_blocks: header.capacity_blocks,
            block_size: header.block_size,
            num_requests: n,
            total_prompt_tokens: prompt,
            total_matched_tokens: matched,
            overall_hit_ratio: if prompt == 0 { 0.0 } else { matched as f64 / prompt as f64 },
            hit_blocks: self.requests.iter().map(|r| r.hit_blocks as u64).sum(),
            miss_blocks: self.requests.iter().map(|r| r.miss_blocks as u64).sum(),
            evictions: self.requests.iter().map(|r| r.evictions as u64).sum(),
            total_ttft_s: total_ttft,
            mean_ttft_s: if n == 0 { 0.0 } else { total_ttft / n as f64 },
            per_type_reuse: per_type,
            locality: loc,
            position_reuse,
            miss_after_evict,
            requests: self.requests,
            learned_state: header.learned_state,
            learner_trajectory: header.trajectory,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportHeader {
    pub policy: String,
    pub workload: String,
    pub seed: u64,
    pub capacity_blocks: usize,
    pub block_size: usize,
    pub learned_state: Option<LearnedState>,
    pub trajectory: Vec<Snapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(format!("unknown report format `{s}`")),
        }
    }
}

pub const CSV_COLUMNS: [&str; 14] = [
    "record",
    "index",
    "arrival_s",
    "session_id",
    "turn_index",
    "category",
    "prompt_tokens",
    "matched_tokens",
    "hit_blocks",
    "miss_blocks",
    "evictions",
    "ttft_s",
    "key",
    "value",
];

impl SimReport {
    /// Key/value pairs written as CSV summary rows.
    pub fn summary_rows(&self) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = vec![
            ("schema".into(), self.schema.clone()),
            ("policy".into(), self.policy.clone()),
            ("workload".into(), self.workload.clone()),
            ("seed".into(), self.seed.to_string()),
            ("capacity_blocks".into(), self.capacity_blocks.to_string()),
            ("block_size".into(), self.block_size.to_string()),
            ("num_requests".into(), self.num_requests.to_string()),
            ("total_prompt_tokens".into(), self.total_prompt_tokens.to_string()),
            ("total_matched_tokens".into(), self.total_matched_tokens.to_string()),
            ("overall_hit_ratio".into(), self.overall_hit_ratio.to_string()),
            ("evictions".into(), self.evictions.to_string()),
            ("total_ttft_s".into(), self.total_ttft_s.to_string()),
            ("mean_ttft_s".into(), self.mean_ttft_s.to_string()),
            ("locality.intra_share_pct".into(), self.locality.intra_share_pct.to_string()),
            ("locality.multi_turn_intra_share_pct".into(), self.locality.multi_turn_intra_share_pct.to_string()),
        ];
        for (t, r) in &self.per_type_reuse {
            rows.push((format!("reuse.{t}.intra_pct"), r.intra_pct.to_string()));
            rows.push((format!("reuse.{t}.inter_pct"), r.inter_pct.to_string()));
            rows.push((format!("reuse.{t}.combined_pct"), r.combined_pct.to_string()));
        }
        for (i, b) in self.position_reuse.iter().enumerate() {
            rows.push((format!("position.{i}.hit_rate"), b.hit_rate.to_string()));
        }
        for (t, m) in &self.miss_after_evict {
            rows.push((format!("miss_after_evict.{t}.rate"), m.rate.to_string()));
        }
        if let Some(s) = &self.learned_state {
            for (t, w) in s.token_weights.iter() {
                rows.push((format!("learned.token_weight.{t}"), w.to_string()));
            }
            rows.push(("learned.queue_weight.chat".into(), s.queue_weights.chat.to_string()));
            rows.push(("learned.queue_weight.agentic".into(), s.queue_weights.agentic.to_string()));
            rows.push(("learned.queue_weight.structural".into(), s.queue_weights.structural.to_string()));
            rows.push(("learned.gamma".into(), s.gamma.to_string()));
        }
        rows
    }

    pub fn write_json(&self, out: impl Write) -> std::io::Result<()> {
        let mut out = out;
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")
    }

    pub fn write_csv(&self, out: impl Write) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| std::io::Error::other(e);
        w.write_record(CSV_COLUMNS).map_err(io)?;
        for r in &self.requests {
            w.write_record([
                "request".to_string(),
                r.index.to_string(),
                r.arrival_s.to_string(),
                r.session_id.to_string(),
                r.turn_index.to_string(),
                r.category.to_string(),
                r.prompt_tokens.to_string(),
                r.matched_tokens.to_string(),
                r.hit_blocks.to_string(),
                r.miss_blocks.to_string(),
                r.evictions.to_string(),
                r.ttft_s.to_string(),
                String::new(),
                String::new(),
            ])
            .map_err(io)?;
        }
        for (k, v) in self.summary_rows() {
            let mut row = vec!["summary".to_string()];
            row.extend(std::iter::repeat_n(String::new(), 11));
            row.push(k);
            row.push(v);
            w.write_record(&row).map_err(io)?;
        }
        w.flush()
    }

    pub fn emit(&self, format: ReportFormat, path: &Path) -> std::io::Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        match format {
            ReportFormat::Json => self.write_json(f),
            ReportFormat::Csv => self.write_csv(f),
        }
    }

    pub fn load_json(path: &Path) -> std::io::Result<SimReport> {
        let s = std::fs::read_to_string(path)?;
        let r: SimReport = serde_json::from_str(&s).map_err(std::io::Error::other)?;
        if r.schema != SCHEMA {
            return Err(std::io::Error::other(format!("unsupported report schema `{}`", r.schema)));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ttft_model() {
        let m = TtftModel { per_token_prefill_s: 0.0, fixed_overhead_s: 0.02, policy_overhead_per_eviction_s: 0.0 };
        assert_eq!(estimate_ttft(&m, 500, 500, 0), 0.02);
        let m = TtftModel { per_token_prefill_s: 1e-3, fixed_overhead_s: 0.0, policy_overhead_per_eviction_s: 0.0 };
        assert!((estimate_ttft(&m, 1000, 0, 0) - 1.0).abs() < 1e-12);
    }

    fn rec(session: u64, turn: u32) -> RequestRecord {
        RequestRecord {
            index: 0,
            arrival_s: 0.0,
            session_id: SessionId(session),
            turn_index: turn,
            category: Category::Chat,
            prompt_tokens: 32,
            matched_tokens: 32,
            hit_blocks: 2,
            miss_blocks: 0,
            evictions: 0,
            ttft_s: 0.02,
        }
    }

    fn obs(origin: u64) -> BlockObservation {
        BlockObservation { token_type: TokenType::SystemPrompt, hit: true, offset_fraction: 0.0, origin: Some(SessionId(origin)) }
    }

    #[test]
    fn locality_attribution() {
        let mut b = ReportBuilder::new();
        b.record_request(rec(1, 1), &[obs(1), obs(1)]);
        b.record_request(rec(2, 0), &[obs(1)]);
        let r = b.finish(ReportHeader::default());
        assert_eq!(r.locality.same_session_hits, 2);
        assert_eq!(r.locality.cross_session_hits, 1);
        let sys = &r.per_type_reuse["system_prompt"];
        assert_eq!((sys.intra_hits, sys.inter_hits), (2, 1));
        assert_eq!(sys.combined_pct, 100.0);
    }

    #[test]
    fn csv_row_count() {
        let mut b = ReportBuilder::new();
        for i in 0..5 {
            b.record_request(rec(i, 0), &[]);
        }
        let r = b.finish(ReportHeader::default());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let lines = String::from_utf8(buf).unwrap().lines().count();
        assert_eq!(lines, 1 + 5 + r.summary_rows().len());
    }
}

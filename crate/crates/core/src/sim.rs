//! Replays a trace against one cache policy.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{chain_blocks, BlockHash, CacheError, CacheHint, CacheStore, Evictor, PendingBlock, RequestInfo, HASH_SEED};
use crate::learners::LearnerConfig;
use crate::metrics::{estimate_ttft, BlockObservation, ReportBuilder, ReportHeader, RequestRecord, SimReport, TtftModel};
use crate::policies::{Lfu, LpcApprox, LpcConfig, Lru};
use crate::predictor::{Predictor, PredictorError, PredictorMode};
use crate::saecache::{RecentlyEvicted, SaeCache, SaeConfig};
use crate::types::{Phase, SessionId, Style, TokenType};
use crate::workload::{Request, Trace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Lru,
    Lfu,
    LpcApprox,
    Saecache,
    TokenWeightOnly,
    FixedParamMq,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Lru,
        PolicyKind::Lfu,
        PolicyKind::LpcApprox,
        PolicyKind::Saecache,
        PolicyKind::TokenWeightOnly,
        PolicyKind::FixedParamMq,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Lru => "lru",
            PolicyKind::Lfu => "lfu",
            PolicyKind::LpcApprox => "lpc_approx",
            PolicyKind::Saecache => "saecache",
            PolicyKind::TokenWeightOnly => "token_weight_only",
            PolicyKind::FixedParamMq => "fixed_param_mq",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

/// Cache size, absolute or relative to the trace's working set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Blocks(usize),
    Fraction(f64),
}

impl Capacity {
    pub fn resolve(self, working_set: usize) -> Result<usize> {
        match self {
            Capacity::Blocks(0) => Err(SimError::Config("capacity must be at least one block".into())),
            Capacity::Blocks(n) => Ok(n),
            Capacity::Fraction(f) if f > 0.0 && f.is_finite() => Ok(((working_set as f64 * f).round() as usize).max(1)),
            Capacity::Fraction(f) => Err(SimError::Config(format!("capacity fraction {f} must be positive"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub policy: PolicyKind,
    pub capacity: Capacity,
    pub block_size: usize,
    pub ttft: TtftModel,
    pub predictor_mode: PredictorMode,
    /// Also cache generated tokens as decode-phase blocks.
    pub cache_decode_blocks: bool,
    /// A single-turn prefix counts as a template once this many distinct
    /// sessions have sent it within `template_window` requests.
    pub template_min_sessions: usize,
    pub template_window: usize,
    /// Learner settings for `saecache` (ignored by the fixed variants).
    pub learner: LearnerConfig,
    pub lpc: LpcConfig,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            policy: PolicyKind::Saecache,
            capacity: Capacity::Fraction(0.1),
            block_size: crate::cache::DEFAULT_BLOCK_SIZE,
            ttft: TtftModel::default(),
            predictor_mode: PredictorMode::Oracle,
            cache_decode_blocks: true,
            template_min_sessions: 2,
            template_window: 10_000,
            learner: LearnerConfig::default(),
            lpc: LpcConfig::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(SimError::Config("block_size must be positive".into()));
        }
        if self.template_min_sessions == 0 || self.template_window == 0 {
            return Err(SimError::Config("template detection parameters must be positive".into()));
        }
        self.ttft.validate().map_err(SimError::Config)?;
        if !(self.lpc.lambda_decay >= 0.0) {
            return Err(SimError::Config("lpc lambda_decay must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn build_policy(cfg: &SimConfig) -> Box<dyn Evictor> {
    match cfg.policy {
        PolicyKind::Lru => Box::new(Lru::new()),
        PolicyKind::Lfu => Box::new(Lfu::new()),
        PolicyKind::LpcApprox => Box::new(LpcApprox::new(cfg.lpc)),
        PolicyKind::Saecache => Box::new(SaeCache::new(SaeConfig { learner: cfg.learner, ..SaeConfig::default() })),
        PolicyKind::TokenWeightOnly => {
            let mut sc = SaeConfig::token_weight_only();
            sc.learner.miss_coef = cfg.learner.miss_coef;
            sc.learner.reuse_coef = cfg.learner.reuse_coef;
            sc.learner.token_rule = cfg.learner.token_rule;
            Box::new(SaeCache::new(sc))
        }
        PolicyKind::FixedParamMq => Box::new(SaeCache::new(SaeConfig::fixed_param_mq())),
    }
}

/// Tracks which single-turn prefixes recur across sessions.
#[derive(Debug, Clone)]
pub struct TemplateDetector {
    min_sessions: usize,
    window: usize,
    /// Most recent distinct sessions per hash, with the request index.
    seen: HashMap<BlockHash, Vec<(SessionId, usize)>>,
    last_prune: usize,
}

impl TemplateDetector {
    pub fn new(min_sessions: usize, window: usize) -> Self {
        TemplateDetector { min_sessions, window, seen: HashMap::new(), last_prune: 0 }
    }

    /// Records that `session` sent `hash` at request `idx` and reports
    /// whether the hash now qualifies as shared.
    pub fn observe(&mut self, hash: BlockHash, session: SessionId, idx: usize) -> bool {
        let horizon = idx.saturating_sub(self.window);
        let k = self.min_sessions;
        let list = self.seen.entry(hash).or_default();
        list.retain(|&(_, i)| i >= horizon);
        match list.iter_mut().find(|(s, _)| *s == session) {
            Some(e) => e.1 = idx,
            None => {
                if list.len() >= k {
                    let oldest = (0..list.len()).min_by_key(|&j| list[j].1).expect("non-empty");
                    list.swap_remove(oldest);
                }
                list.push((session, idx));
            }
        }
        list.len() >= k
    }

    pub fn prune(&mut self, idx: usize) {
        if idx < self.last_prune + self.window {
            return;
        }
        let horizon = idx.saturating_sub(self.window);
        self.seen.retain(|_, v| v.iter().any(|&(_, i)| i >= horizon));
        self.last_prune = idx;
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Type of the block's median token.
fn block_type(types: &[TokenType]) -> TokenType {
    types[(types.len() - 1) / 2]
}

/// Prompt blocks of `request` with their hashes and majority types, before hints.
pub fn prompt_blocks(request: &Request, block_size: usize) -> Vec<(BlockHash, Vec<crate::types::TokenId>, TokenType)> {
    let tokens = request.prompt_tokens();
    let types = request.prompt_types();
    chain_blocks(&tokens, block_size, HASH_SEED)
        .into_iter()
        .enumerate()
        .map(|(i, (h, toks))| {
            let lo = i * block_size;
            (h, toks.to_vec(), block_type(&types[lo..lo + toks.len()]))
        })
        .collect()
}

fn decode_blocks(request: &Request, block_size: usize, prev: BlockHash) -> Vec<(BlockHash, Vec<crate::types::TokenId>)> {
    let tokens: Vec<_> = request.output.iter().flat_map(|s| s.tokens.iter().copied()).collect();
    chain_blocks(&tokens, block_size, prev).into_iter().map(|(h, t)| (h, t.to_vec())).collect()
}

/// Distinct blocks referenced by the trace.
pub fn working_set(trace: &Trace, block_size: usize, include_decode: bool) -> usize {
    let mut seen: HashSet<BlockHash> = HashSet::new();
    for r in &trace.requests {
        let blocks = prompt_blocks(r, block_size);
        let last = blocks.last().map_or(HASH_SEED, |b| b.0);
        seen.extend(blocks.iter().map(|b| b.0));
        if include_decode {
            seen.extend(decode_blocks(r, block_size, last).iter().map(|b| b.0));
        }
    }
    seen.len()
}

pub fn simulate(trace: &Trace, cfg: &SimConfig) -> Result<SimReport> {
    simulate_with(trace, cfg, &Predictor::new(cfg.predictor_mode))
}

pub fn simulate_with(trace: &Trace, cfg: &SimConfig, predictor: &Predictor) -> Result<SimReport> {
    cfg.validate()?;
    let ws = working_set(trace, cfg.block_size, cfg.cache_decode_blocks);
    let capacity = cfg.capacity.resolve(ws)?;
    let mut store = CacheStore::new(capacity, build_policy(cfg));
    let mut detector = TemplateDetector::new(cfg.template_min_sessions, cfg.template_window);
    let mut recent = RecentlyEvicted::new(10_000);
    let mut origin: HashMap<BlockHash, SessionId> = HashMap::new();
    let mut builder = ReportBuilder::new();

    for (idx, r) in trace.requests.iter().enumerate() {
        let now = r.arrival_time;
        let multi = r.turn_index > 0 || predictor.predict_first_turn(r)?;
        let info = RequestInfo { session_id: r.session_id, turn_index: r.turn_index, continuation: predictor.probability(r)? };
        store.policy_mut().on_request(&info, now);

        let raw = prompt_blocks(r, cfg.block_size);
        let max_offset = (raw.len().saturating_sub(1)).max(1) as u32;
        detector.prune(idx);
        let pending: Vec<PendingBlock> = raw
            .iter()
            .enumerate()
            .map(|(i, (h, toks, t))| {
                let shared = !multi && detector.observe(*h, r.session_id, idx);
                PendingBlock {
                    content_hash: *h,
                    tokens: toks.clone(),
                    hint: CacheHint {
                        token_type: *t,
                        session_id: multi.then_some(r.session_id),
                        turn_index: r.turn_index,
                        is_multi_turn: multi,
                        is_agentic: r.style() == Style::Agentic,
                        is_shared_prefix: shared,
                        block_offset: i as u32,
                        max_offset,
                        phase: Phase::Prefill,
                    },
                }
            })
            .collect();

        let hit_origins: Vec<Option<SessionId>> = pending.iter().map(|p| origin.get(&p.content_hash).copied()).collect();
        let res = store.insert_request(&pending, now)?;
        let mut evictions = res.evictions;
        for e in store.drain_evicted() {
            builder.record_eviction(e.token_type);
            recent.insert(e.content_hash, e.token_type, e.time);
            origin.remove(&e.content_hash);
        }
        let mut obs = Vec::with_capacity(pending.len());
        for (i, p) in pending.iter().enumerate() {
            let hit = i < res.hit_blocks;
            if !hit {
                if let Some((t, _)) = recent.take(p.content_hash) {
                    builder.record_miss_after_evict(t);
                }
                if store.contains(p.content_hash) {
                    origin.entry(p.content_hash).or_insert(r.session_id);
                }
            }
            obs.push(BlockObservation {
                token_type: p.hint.token_type,
                hit,
                offset_fraction: p.hint.offset_fraction(),
                origin: if hit { hit_origins[i] } else { None },
            });
        }

        if cfg.cache_decode_blocks && !r.output.is_empty() {
            let last = raw.last().map_or(HASH_SEED, |b| b.0);
            let dec = decode_blocks(r, cfg.block_size, last);
            let dmax = (dec.len().saturating_sub(1)).max(1) as u32;
            let dpending: Vec<PendingBlock> = dec
                .into_iter()
                .enumerate()
                .map(|(i, (h, toks))| {
                    let mut hint = CacheHint::new(TokenType::Decode);
                    hint.session_id = multi.then_some(r.session_id);
                    hint.turn_index = r.turn_index;
                    hint.is_multi_turn = multi;
                    hint.is_agentic = r.style() == Style::Agentic;
                    hint.block_offset = i as u32;
                    hint.max_offset = dmax;
                    PendingBlock { content_hash: h, tokens: toks, hint }
                })
                .collect();
            let dres = store.insert_request(&dpending, now)?;
            evictions += dres.evictions;
            for e in store.drain_evicted() {
                builder.record_eviction(e.token_type);
                recent.insert(e.content_hash, e.token_type, e.time);
                origin.remove(&e.content_hash);
            }
            for p in &dpending {
                if store.contains(p.content_hash) {
                    origin.entry(p.content_hash).or_insert(r.session_id);
                }
            }
        }

        let prompt_tokens = r.prompt_len();
        builder.record_request(
            RequestRecord {
                index: idx,
                arrival_s: now,
                session_id: r.session_id,
                turn_index: r.turn_index,
                category: r.category,
                prompt_tokens,
                matched_tokens: res.matched_token_count,
                hit_blocks: res.hit_blocks,
                miss_blocks: res.miss_blocks,
                evictions,
                ttft_s: estimate_ttft(&cfg.ttft, prompt_tokens, res.matched_token_count, evictions),
            },
            &obs,
        );
    }

    let policy = store.policy();
    Ok(builder.finish(ReportHeader {
        policy: policy.name().to_string(),
        workload: trace.name.clone(),
        seed: cfg.seed,
        capacity_blocks: capacity,
        block_size: cfg.block_size,
        learned_state: policy.learned_state(),
        trajectory: policy.trajectory(),
    }))
}

/// Reuse structure of a trace under a cache large enough to never evict.
pub fn characterize(trace: &Trace, block_size: usize) -> Result<SimReport> {
    let ws = working_set(trace, block_size, false).max(1);
    let cfg = SimConfig {
        policy: PolicyKind::Lru,
        capacity: Capacity::Blocks(ws),
        block_size,
        predictor_mode: PredictorMode::AlwaysSingle,
        cache_decode_blocks: false,
        ..SimConfig::default()
    };
    let mut report = simulate(trace, &cfg)?;
    report.policy = "unbounded".into();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Category, TokenId};
    use crate::workload::{RequestMeta, TokenSegment};

    fn req(session: u64, turn: u32, t: f64, segs: Vec<(TokenType, std::ops::Range<u32>)>) -> Request {
        Request {
            arrival_time: t,
            session_id: SessionId(session),
            turn_index: turn,
            segments: segs.into_iter().map(|(ty, r)| TokenSegment::new(ty, r.map(TokenId).collect())).collect(),
            output: Vec::new(),
            output_length: 1,
            category: Category::DocQa,
            meta: RequestMeta::default(),
            continues: Some(false),
        }
    }

    #[test]
    fn median_token_decides_block_type() {
        let r = req(0, 0, 0.0, vec![(TokenType::SystemPrompt, 0..7), (TokenType::UserQuery, 100..109)]);
        let b = prompt_blocks(&r, 16);
        assert_eq!(b.len(), 1);
        // position 7 is the median of 16 and is the first user token
        assert_eq!(b[0].2, TokenType::UserQuery);
        let r = req(0, 0, 0.0, vec![(TokenType::SystemPrompt, 0..8), (TokenType::UserQuery, 100..108)]);
        assert_eq!(prompt_blocks(&r, 16)[0].2, TokenType::SystemPrompt);
    }

    #[test]
    fn template_detector_needs_two_sessions_in_window() {
        let mut d = TemplateDetector::new(2, 10);
        assert!(!d.observe(7, SessionId(1), 0));
        assert!(!d.observe(7, SessionId(1), 1));
        assert!(d.observe(7, SessionId(2), 2));
        // a third session long after the window sees only itself
        assert!(!d.observe(7, SessionId(3), 50));
        d.prune(100);
        assert!(d.is_empty());
    }

    #[test]
    fn capacity_resolution() {
        assert_eq!(Capacity::Fraction(0.1).resolve(1000).unwrap(), 100);
        assert_eq!(Capacity::Fraction(1e-9).resolve(10).unwrap(), 1);
        assert!(Capacity::Blocks(0).resolve(10).is_err());
        assert!(Capacity::Fraction(-1.0).resolve(10).is_err());
    }

    #[test]
    fn repeated_prompt_hits_and_attributes_origin() {
        let a = req(1, 0, 0.0, vec![(TokenType::SystemPrompt, 0..64)]);
        let b = req(2, 0, 1.0, vec![(TokenType::SystemPrompt, 0..64), (TokenType::UserQuery, 500..516)]);
        let trace = Trace { name: "t".into(), requests: vec![a, b], intervals: vec![] };
        for p in PolicyKind::ALL {
            let cfg = SimConfig { policy: p, capacity: Capacity::Blocks(100), ..Default::default() };
            let rep = simulate(&trace, &cfg).unwrap();
            assert_eq!(rep.requests[1].hit_blocks, 4, "{p}");
            assert_eq!(rep.locality.cross_session_hits, 4);
            assert_eq!(rep.overall_hit_ratio, 64.0 / 144.0);
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.as_str().parse::<PolicyKind>().unwrap(), p);
        }
    }
}

//! The semantic-aware multi-queue evictor.
//!
//! Blocks are routed once, when added, into one of four queues. Eviction
//! drains the evict-first queue (smallest blocks first) and otherwise takes
//! the global minimum of `α_q · w_τ · p_q(b) / Δt_b` over the scored queues.
//!
//! Within one (queue, token type) bucket of a session queue, α and w are
//! shared and `S(Δt)/Δt` is non-increasing in Δt, so the least recently used
//! block of the bucket is the bucket minimum. Only the bucket heads and the
//! (small) structural queue need to be scored per eviction.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{Block, BlockHash, CacheHint, Evictor};
use crate::learners::{
    update_decay_power, update_lognormal, update_queue_weights, update_token_weights, IntervalBuffer, LearnedState,
    LearnerConfig, PositionBins, QueueCounters, QueueWeights, Snapshot, TokenStats, WindowCounter,
};
use crate::policies::first_unpinned;
use crate::timing::{survival, LogNormalParams};
use crate::types::{Phase, PerStyle, SessionId, Style, TokenType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueId {
    EvictFirst,
    Structural,
    Chat,
    Agentic,
}

impl QueueId {
    pub const ALL: [QueueId; 4] = [QueueId::EvictFirst, QueueId::Structural, QueueId::Chat, QueueId::Agentic];

    pub fn as_str(self) -> &'static str {
        match self {
            QueueId::EvictFirst => "evict_first",
            QueueId::Structural => "structural",
            QueueId::Chat => "chat",
            QueueId::Agentic => "agentic",
        }
    }

    fn style(self) -> Option<Style> {
        match self {
            QueueId::Chat => Some(Style::Chat),
            QueueId::Agentic => Some(Style::Agentic),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("queue {0:?} is never scored")]
pub struct QueueNotScored(pub QueueId);

/// Routing cascade: low-value blocks first, then session queues, then shared
/// scaffolding.
pub fn classify(hint: &CacheHint) -> QueueId {
    let untemplated = !hint.is_shared_prefix
        && !hint.is_multi_turn
        && hint.session_id.is_none()
        && hint.phase == Phase::Prefill;
    if matches!(hint.token_type, TokenType::Cot | TokenType::Decode) || hint.phase == Phase::Decode || untemplated {
        QueueId::EvictFirst
    } else if hint.is_multi_turn && hint.is_agentic {
        QueueId::Agentic
    } else if hint.is_multi_turn || hint.session_id.is_some() {
        QueueId::Chat
    } else if hint.is_shared_prefix || hint.token_type == TokenType::SystemPrompt {
        QueueId::Structural
    } else {
        QueueId::EvictFirst
    }
}

/// Survival for session queues, positional decay for the structural queue.
pub fn local_priority(
    queue: QueueId,
    dt: f64,
    offset_fraction: f64,
    state: &LearnedState,
) -> Result<f64, QueueNotScored> {
    match queue {
        QueueId::Chat => Ok(survival(dt, &state.lognormal[Style::Chat])),
        QueueId::Agentic => Ok(survival(dt, &state.lognormal[Style::Agentic])),
        QueueId::Structural => Ok(positional(offset_fraction, state.gamma)),
        QueueId::EvictFirst => Err(QueueNotScored(queue)),
    }
}

pub fn queue_weight(queue: QueueId, w: &QueueWeights) -> f64 {
    match queue {
        QueueId::Chat => w.chat,
        QueueId::Agentic => w.agentic,
        QueueId::Structural => w.structural,
        QueueId::EvictFirst => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    MultiQueue,
    /// One pool scored by `w_τ / Δt`.
    TokenWeightOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaeConfig {
    pub name: String,
    pub variant: Variant,
    pub learner: LearnerConfig,
    pub initial: LearnedState,
    pub dt_epsilon: f64,
    pub recently_evicted_cap: usize,
}

impl Default for SaeConfig {
    fn default() -> Self {
        SaeConfig {
            name: "saecache".into(),
            variant: Variant::MultiQueue,
            learner: LearnerConfig::default(),
            initial: LearnedState::default(),
            dt_epsilon: 1e-3,
            recently_evicted_cap: 10_000,
        }
    }
}

impl SaeConfig {
    /// Multi-queue routing with parameters frozen at chat-fitted values.
    pub fn fixed_param_mq() -> Self {
        let chat_fit = LogNormalParams::new(4.15, 0.97);
        let mut initial = LearnedState::default();
        initial.queue_weights = QueueWeights { chat: 2.42, agentic: 2.42, structural: 0.10 };
        initial.lognormal = PerStyle::new(chat_fit, chat_fit);
        SaeConfig { name: "fixed_param_mq".into(), learner: LearnerConfig::frozen(), initial, ..Self::default() }
    }

    pub fn token_weight_only() -> Self {
        SaeConfig {
            name: "token_weight_only".into(),
            variant: Variant::TokenWeightOnly,
            learner: LearnerConfig { enable_token_weights: true, ..LearnerConfig::frozen() },
            ..Self::default()
        }
    }
}

/// Recently evicted hashes with their token type, bounded by count.
#[derive(Debug, Clone, Default)]
pub struct RecentlyEvicted {
    cap: usize,
    seq: u64,
    map: HashMap<BlockHash, (TokenType, f64, u64)>,
    order: VecDeque<(BlockHash, u64)>,
}

impl RecentlyEvicted {
    pub fn new(cap: usize) -> Self {
        RecentlyEvicted { cap, ..Default::default() }
    }

    pub fn insert(&mut self, hash: BlockHash, token_type: TokenType, time: f64) {
        self.seq += 1;
        self.map.insert(hash, (token_type, time, self.seq));
        self.order.push_back((hash, self.seq));
        while self.map.len() > self.cap {
            let Some((h, s)) = self.order.pop_front() else { break };
            if self.map.get(&h).is_some_and(|e| e.2 == s) {
                self.map.remove(&h);
            }
        }
        // Stale queue entries pile up when hashes are re-evicted; compact.
        if self.order.len() > 2 * self.cap.max(16) {
            let map = &self.map;
            self.order.retain(|(h, s)| map.get(h).is_some_and(|e| e.2 == *s));
        }
    }

    /// Consumes the entry for `hash`, returning its type and eviction time.
    pub fn take(&mut self, hash: BlockHash) -> Option<(TokenType, f64)> {
        self.map.remove(&hash).map(|(t, time, _)| (t, time))
    }

    pub fn contains(&self, hash: BlockHash) -> bool {
        self.map.contains_key(&hash)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// What the evictor knows about one resident block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryView {
    pub content_hash: BlockHash,
    pub block_id: u64,
    pub queue: QueueId,
    pub token_type: TokenType,
    pub last_access: f64,
    pub num_tokens: u32,
    pub offset_fraction: f64,
}

type TimeKey = (OrderedFloat<f64>, u64, BlockHash);

#[derive(Debug, Clone, Copy)]
struct Slot {
    hash: BlockHash,
    block_id: u64,
    last_access: f64,
    offset_fraction: f64,
    p: f64,
    ty: TokenType,
}

fn positional(offset_fraction: f64, gamma: f64) -> f64 {
    1.0 - offset_fraction.clamp(0.0, 1.0).powf(gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LearnerRuns {
    pub token_weights: u64,
    pub queue_weights: u64,
    pub lognormal: u64,
    pub decay_power: u64,
}

pub struct SaeCache {
    cfg: SaeConfig,
    state: LearnedState,
    entries: HashMap<BlockHash, EntryView>,
    evict_first: BTreeSet<(u32, u64, BlockHash)>,
    // [chat, agentic][token type]
    buckets: [[BTreeSet<TimeKey>; 6]; 2],
    // Flat so stage two can scan it without hashing; `p` caches positional
    // priority at `slot_gamma`.
    structural: Vec<Slot>,
    structural_pos: HashMap<BlockHash, usize>,
    slot_gamma: f64,
    recently_evicted: RecentlyEvicted,
    stats: TokenStats,
    counters: QueueCounters,
    buffers: PerStyle<IntervalBuffer>,
    bins: PositionBins,
    /// (session, previous access, now) of the last interval pushed per style.
    last_reuse: PerStyle<Option<(Option<SessionId>, f64, f64)>>,
    evictions: u64,
    epochs_done: u64,
    runs: LearnerRuns,
    trajectory: Vec<Snapshot>,
    last_victim: Option<QueueId>,
}

impl SaeCache {
    pub fn new(cfg: SaeConfig) -> Self {
        let cap = cfg.learner.interval_buffer;
        SaeCache {
            state: cfg.initial,
            recently_evicted: RecentlyEvicted::new(cfg.recently_evicted_cap),
            buffers: PerStyle::new(IntervalBuffer::new(cap), IntervalBuffer::new(cap)),
            cfg,
            entries: HashMap::new(),
            evict_first: BTreeSet::new(),
            buckets: Default::default(),
            structural: Vec::new(),
            structural_pos: HashMap::new(),
            slot_gamma: f64::NAN,
            stats: TokenStats::default(),
            counters: QueueCounters::default(),
            bins: PositionBins::default(),
            last_reuse: PerStyle::new(None, None),
            evictions: 0,
            epochs_done: 0,
            runs: LearnerRuns::default(),
            trajectory: Vec::new(),
            last_victim: None,
        }
    }

    pub fn config(&self) -> &SaeConfig {
        &self.cfg
    }

    pub fn state(&self) -> &LearnedState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut LearnedState {
        &mut self.state
    }

    pub fn token_stats(&self) -> &TokenStats {
        &self.stats
    }

    pub fn queue_counters(&self) -> &QueueCounters {
        &self.counters
    }

    pub fn interval_buffer(&self, style: Style) -> &IntervalBuffer {
        &self.buffers[style]
    }

    pub fn position_bins(&self) -> &PositionBins {
        &self.bins
    }

    pub fn recently_evicted(&self) -> &RecentlyEvicted {
        &self.recently_evicted
    }

    pub fn eviction_count(&self) -> u64 {
        self.evictions
    }

    pub fn learner_runs(&self) -> LearnerRuns {
        self.runs
    }

    /// Queue of the most recent victim.
    pub fn last_victim_queue(&self) -> Option<QueueId> {
        self.last_victim
    }

    pub fn queue_len(&self, q: QueueId) -> usize {
        match q {
            QueueId::EvictFirst => self.evict_first.len(),
            QueueId::Structural => self.structural.len(),
            QueueId::Chat => self.buckets[0].iter().map(BTreeSet::len).sum(),
            QueueId::Agentic => self.buckets[1].iter().map(BTreeSet::len).sum(),
        }
    }

    pub fn entry(&self, hash: BlockHash) -> Option<&EntryView> {
        self.entries.get(&hash)
    }

    /// All resident entries, sorted by block id.
    pub fn entries(&self) -> Vec<EntryView> {
        let mut v: Vec<_> = self.entries.values().copied().collect();
        v.sort_by_key(|e| e.block_id);
        v
    }

    fn route(&self, hint: &CacheHint) -> QueueId {
        match self.cfg.variant {
            Variant::MultiQueue => classify(hint),
            Variant::TokenWeightOnly => QueueId::Chat,
        }
    }

    /// Global score of a resident entry at `now`; `None` for evict-first blocks.
    pub fn score(&self, e: &EntryView, now: f64) -> Option<f64> {
        let dt = (now - e.last_access).max(self.cfg.dt_epsilon);
        let w = self.state.token_weights[e.token_type];
        match self.cfg.variant {
            Variant::TokenWeightOnly => Some(w / dt),
            Variant::MultiQueue => {
                let p = local_priority(e.queue, dt, e.offset_fraction, &self.state).ok()?;
                Some(queue_weight(e.queue, &self.state.queue_weights) * w * p / dt)
            }
        }
    }

    fn bucket_mut(&mut self, e: &EntryView) -> &mut BTreeSet<TimeKey> {
        let q = if e.queue == QueueId::Agentic { 1 } else { 0 };
        &mut self.buckets[q][e.token_type.index()]
    }

    fn index(&mut self, e: EntryView) {
        match e.queue {
            QueueId::EvictFirst => {
                self.evict_first.insert((e.num_tokens, e.block_id, e.content_hash));
            }
            QueueId::Structural => {
                self.structural_pos.insert(e.content_hash, self.structural.len());
                self.structural.push(Slot {
                    hash: e.content_hash,
                    block_id: e.block_id,
                    last_access: e.last_access,
                    offset_fraction: e.offset_fraction,
                    p: positional(e.offset_fraction, self.state.gamma),
                    ty: e.token_type,
                });
            }
            QueueId::Chat | QueueId::Agentic => {
                self.bucket_mut(&e).insert((OrderedFloat(e.last_access), e.block_id, e.content_hash));
            }
        }
        self.entries.insert(e.content_hash, e);
    }

    fn unindex(&mut self, hash: BlockHash) -> Option<EntryView> {
        let e = self.entries.remove(&hash)?;
        match e.queue {
            QueueId::EvictFirst => {
                self.evict_first.remove(&(e.num_tokens, e.block_id, hash));
            }
            QueueId::Structural => {
                if let Some(i) = self.structural_pos.remove(&hash) {
                    self.structural.swap_remove(i);
                    if let Some(moved) = self.structural.get(i) {
                        self.structural_pos.insert(moved.hash, i);
                    }
                }
            }
            QueueId::Chat | QueueId::Agentic => {
                self.bucket_mut(&e).remove(&(OrderedFloat(e.last_access), e.block_id, hash));
            }
        }
        Some(e)
    }

    fn window_counter(&mut self, q: QueueId) -> Option<&mut WindowCounter> {
        match q {
            QueueId::Chat => Some(&mut self.counters.chat),
            QueueId::Agentic => Some(&mut self.counters.agentic),
            QueueId::Structural => Some(&mut self.counters.structural),
            QueueId::EvictFirst => None,
        }
    }

    fn run_learners(&mut self, now: f64) {
        let cfg = self.cfg.learner;
        if cfg.enable_token_weights {
            update_token_weights(&mut self.stats, &mut self.state, &cfg);
            self.runs.token_weights += 1;
        }
        if cfg.enable_queue_weights {
            update_queue_weights(&mut self.counters, &mut self.state, &cfg);
            self.runs.queue_weights += 1;
        }
        if cfg.enable_lognormal_learning {
            update_lognormal(&mut self.buffers, &mut self.state, &cfg);
            self.runs.lognormal += 1;
        }
        if cfg.enable_decay_learning {
            update_decay_power(&mut self.bins, &mut self.state);
            self.runs.decay_power += 1;
        }
        self.trajectory.push(Snapshot {
            update_index: self.trajectory.len() as u64 + 1,
            evictions: self.evictions,
            time: now,
            state: self.state,
        });
    }

    /// Best scored candidate by (score, larger Δt, smaller id).
    fn stage_two(&mut self, now: f64, pinned: &HashSet<BlockHash>) -> Option<BlockHash> {
        let mut best: Option<(f64, f64, u64, BlockHash)> = None;
        let consider = |best: &mut Option<(f64, f64, u64, BlockHash)>, cand: (f64, f64, u64, BlockHash)| {
            let better = match *best {
                None => true,
                Some(b) => {
                    cand.0 < b.0 || (cand.0 == b.0 && (cand.1 < b.1 || (cand.1 == b.1 && cand.2 < b.2)))
                }
            };
            if better {
                *best = Some(cand);
            }
        };
        for side in &self.buckets {
            for bucket in side {
                if let Some(k) = first_unpinned(bucket, pinned, |k| k.2) {
                    let e = &self.entries[&k.2];
                    let score = self.score(e, now).unwrap_or(f64::INFINITY);
                    consider(&mut best, (score, e.last_access, e.block_id, e.content_hash));
                }
            }
        }
        if self.structural.is_empty() {
            return best.map(|b| b.3);
        }
        if self.slot_gamma.to_bits() != self.state.gamma.to_bits() {
            let g = self.state.gamma;
            self.structural.iter_mut().for_each(|s| s.p = positional(s.offset_fraction, g));
            self.slot_gamma = g;
        }
        let (eps, qw, w) = (self.cfg.dt_epsilon, self.state.queue_weights.structural, self.state.token_weights);
        let variant = self.cfg.variant;
        let slot_score = |s: &Slot| {
            let dt = (now - s.last_access).max(eps);
            match variant {
                Variant::TokenWeightOnly => w[s.ty] / dt,
                Variant::MultiQueue => qw * w[s.ty] * s.p / dt,
            }
        };
        // Pinned blocks were just touched and rarely win, so scan without
        // the set lookup and only redo the scan when one does.
        let mut local: Option<(f64, f64, u64, BlockHash)> = None;
        for s in &self.structural {
            consider(&mut local, (slot_score(s), s.last_access, s.block_id, s.hash));
        }
        if local.is_some_and(|b| pinned.contains(&b.3)) {
            local = None;
            for s in self.structural.iter().filter(|s| !pinned.contains(&s.hash)) {
                consider(&mut local, (slot_score(s), s.last_access, s.block_id, s.hash));
            }
        }
        if let Some(l) = local {
            consider(&mut best, l);
        }
        best.map(|b| b.3)
    }
}

impl Evictor for SaeCache {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn on_add(&mut self, block: &Block, now: f64) {
        let t = block.hint.token_type;
        if let Some((evicted_type, _)) = self.recently_evicted.take(block.content_hash) {
            let c = &mut self.stats[evicted_type];
            c.miss_after_evict = (c.miss_after_evict + 1).min(c.evicted.max(1));
        }
        let queue = self.route(&block.hint);
        let e = EntryView {
            content_hash: block.content_hash,
            block_id: block.block_id,
            queue,
            token_type: t,
            last_access: now,
            num_tokens: block.num_tokens,
            offset_fraction: block.hint.offset_fraction(),
        };
        if let Some(old) = self.unindex(block.content_hash) {
            debug_assert!(false, "block {:#x} added twice", old.content_hash);
        }
        self.stats[t].accesses += 1.0;
        if queue == QueueId::Structural {
            self.bins.record(e.offset_fraction, false);
        }
        self.index(e);

        let k = self.state.k.max(1);
        if self.evictions / k > self.epochs_done {
            self.epochs_done = self.evictions / k;
            self.run_learners(now);
        }
    }

    fn on_hit(&mut self, block: &Block, now: f64) {
        let Some(mut e) = self.unindex(block.content_hash) else { return };
        let dt = now - e.last_access;
        if let Some(c) = self.window_counter(e.queue) {
            c.hits += 1;
        }
        let s = &mut self.stats[e.token_type];
        s.hits += 1.0;
        s.accesses += 1.0;
        if self.cfg.variant == Variant::MultiQueue {
            if let Some(style) = e.queue.style() {
                // Blocks a request last touched together are one reuse event.
                let event = (block.hint.session_id, e.last_access, now);
                if self.last_reuse[style] != Some(event) {
                    self.buffers[style].push(dt);
                    self.last_reuse[style] = Some(event);
                }
            } else if e.queue == QueueId::Structural {
                self.bins.record(e.offset_fraction, true);
            }
        }
        e.last_access = e.last_access.max(now);
        self.index(e);
    }

    fn evict(&mut self, now: f64, pinned: &HashSet<BlockHash>) -> Option<BlockHash> {
        let victim = first_unpinned(&self.evict_first, pinned, |k| k.2)
            .map(|k| k.2)
            .or_else(|| self.stage_two(now, pinned))?;
        let e = self.unindex(victim).expect("victim is indexed");
        self.recently_evicted.insert(victim, e.token_type, now);
        self.evictions += 1;
        if let Some(c) = self.window_counter(e.queue) {
            c.evictions += 1;
        }
        self.stats[e.token_type].evicted += 1;
        self.last_victim = Some(e.queue);
        Some(victim)
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn learned_state(&self) -> Option<LearnedState> {
        Some(self.state)
    }

    fn trajectory(&self) -> Vec<Snapshot> {
        self.trajectory.clone()
    }
}

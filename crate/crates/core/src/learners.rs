//! Online learners for token-type weights, queue weights, per-style
//! log-normal timing parameters and the structural decay power.
//!
//! Every learner is a small EMA step over windowed statistics and is run
//! together every K evictions by the evictor that owns the state.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::timing::{fit_mle, LogNormalParams};
use crate::types::{PerStyle, PerType, Style, TokenType};

pub const TOKEN_WEIGHT_BOUNDS: (f64, f64) = (0.1, 5.0);
pub const QUEUE_WEIGHT_BOUNDS: (f64, f64) = (0.1, 3.0);
pub const GAMMA_BOUNDS: (f64, f64) = (0.3, 3.0);
pub const SIGMA_FLOOR: f64 = 0.1;
pub const POSITION_BINS: usize = 10;

/// Default interval models: chat and agentic inter-turn gaps.
pub const CHAT_INTERVAL: LogNormalParams = LogNormalParams::new(4.82, 1.25);
pub const AGENTIC_INTERVAL: LogNormalParams = LogNormalParams::new(2.28, 1.34);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRule {
    /// EMA toward `1 + a·r_miss + b·r_reuse`.
    #[default]
    Additive,
    /// `w ← w·(1 + η·r_miss)`.
    Multiplicative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueRule {
    /// EMA toward `1 + (hits/evictions)/T`.
    #[default]
    Additive,
    /// `α ← β·α + (1−β)·(E_q/Ē)^{1/T}`.
    RelativePower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub miss_coef: f64,
    pub reuse_coef: f64,
    pub token_rule: TokenRule,
    pub queue_rule: QueueRule,
    pub min_type_evictions: u64,
    pub min_queue_evictions: u64,
    pub min_intervals: usize,
    pub interval_buffer: usize,
    pub variance_hi: f64,
    pub variance_lo: f64,
    pub beta_ln_fast: f64,
    pub beta_ln_slow: f64,
    pub adapt_beta: bool,
    pub enable_token_weights: bool,
    pub enable_queue_weights: bool,
    pub enable_lognormal_learning: bool,
    pub enable_decay_learning: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            miss_coef: 5.0,
            reuse_coef: 2.0,
            token_rule: TokenRule::Additive,
            queue_rule: QueueRule::Additive,
            min_type_evictions: 10,
            min_queue_evictions: 5,
            min_intervals: 20,
            interval_buffer: 200,
            variance_hi: 2.0,
            variance_lo: 0.5,
            beta_ln_fast: 0.5,
            beta_ln_slow: 0.1,
            adapt_beta: true,
            enable_token_weights: true,
            enable_queue_weights: true,
            enable_lognormal_learning: true,
            enable_decay_learning: true,
        }
    }
}

impl LearnerConfig {
    pub fn frozen() -> Self {
        LearnerConfig {
            enable_token_weights: false,
            enable_queue_weights: false,
            enable_lognormal_learning: false,
            enable_decay_learning: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueWeights {
    pub chat: f64,
    pub agentic: f64,
    pub structural: f64,
}

impl Default for QueueWeights {
    fn default() -> Self {
        QueueWeights { chat: 1.0, agentic: 1.0, structural: 1.0 }
    }
}

/// Every online-adapted parameter plus the meta-parameters that drive them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnedState {
    pub token_weights: PerType<f64>,
    pub queue_weights: QueueWeights,
    pub lognormal: PerStyle<LogNormalParams>,
    pub gamma: f64,
    pub eta: f64,
    pub lambda: f64,
    pub window_decay: f64,
    pub temperature: f64,
    pub beta: f64,
    pub beta_ln: PerStyle<f64>,
    pub k: u64,
}

pub fn initial_token_weights() -> PerType<f64> {
    PerType {
        system_prompt: 2.0,
        user_query: 1.5,
        tool_output: 1.0,
        response: 1.0,
        cot: 0.1,
        decode: 0.1,
    }
}

impl Default for LearnedState {
    fn default() -> Self {
        LearnedState {
            token_weights: initial_token_weights(),
            queue_weights: QueueWeights::default(),
            lognormal: PerStyle::new(CHAT_INTERVAL, AGENTIC_INTERVAL),
            gamma: 1.0,
            eta: 0.1,
            lambda: 0.9,
            window_decay: 0.99,
            temperature: 2.0,
            beta: 0.3,
            beta_ln: PerStyle::new(0.3, 0.3),
            k: 100,
        }
    }
}

impl LearnedState {
    /// Checks every clamp; returns the first violation.
    pub fn check_clamps(&self) -> Result<(), String> {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        for t in TokenType::LEARNED {
            if !within(self.token_weights[t], TOKEN_WEIGHT_BOUNDS) {
                return Err(format!("token weight {t} = {}", self.token_weights[t]));
            }
        }
        let q = self.queue_weights;
        for (name, v) in [("chat", q.chat), ("agentic", q.agentic), ("structural", q.structural)] {
            if !within(v, QUEUE_WEIGHT_BOUNDS) {
                return Err(format!("queue weight {name} = {v}"));
            }
        }
        for s in Style::ALL {
            if !(self.lognormal[s].sigma >= SIGMA_FLOOR) || !self.lognormal[s].mu.is_finite() {
                return Err(format!("lognormal {} = {:?}", s.as_str(), self.lognormal[s]));
            }
        }
        if !within(self.gamma, GAMMA_BOUNDS) {
            return Err(format!("gamma = {}", self.gamma));
        }
        Ok(())
    }

    /// Token types sorted by descending learned weight.
    pub fn weight_ordering(&self) -> Vec<TokenType> {
        let mut ts = TokenType::LEARNED.to_vec();
        ts.sort_by(|a, b| self.token_weights[*b].total_cmp(&self.token_weights[*a]));
        ts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TypeCounters {
    pub evicted: u64,
    pub miss_after_evict: u64,
    pub hits: f64,
    pub accesses: f64,
}

pub type TokenStats = PerType<TypeCounters>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowCounter {
    pub hits: u64,
    pub evictions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueueCounters {
    pub chat: WindowCounter,
    pub agentic: WindowCounter,
    pub structural: WindowCounter,
}

/// Most recent reuse intervals of one style.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalBuffer {
    cap: usize,
    values: VecDeque<f64>,
}

impl IntervalBuffer {
    pub fn new(cap: usize) -> Self {
        IntervalBuffer { cap, values: VecDeque::with_capacity(cap) }
    }

    /// Records a positive interval, dropping the oldest beyond capacity.
    pub fn push(&mut self, dt: f64) {
        if !(dt > 0.0) {
            return;
        }
        self.values.push_back(dt);
        while self.values.len() > self.cap {
            self.values.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }

    /// Population variance of the log intervals.
    pub fn log_variance(&self) -> f64 {
        let n = self.values.len() as f64;
        if n < 1.0 {
            return 0.0;
        }
        let mean = self.values.iter().map(|x| x.ln()).sum::<f64>() / n;
        self.values.iter().map(|x| (x.ln() - mean).powi(2)).sum::<f64>() / n
    }
}

/// Access and hit counts over relative prompt position.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PositionBins {
    pub accesses: [f64; POSITION_BINS],
    pub hits: [f64; POSITION_BINS],
}

impl PositionBins {
    pub fn bin_of(frac: f64) -> usize {
        ((frac.clamp(0.0, 1.0) * POSITION_BINS as f64) as usize).min(POSITION_BINS - 1)
    }

    pub fn record(&mut self, frac: f64, hit: bool) {
        let b = Self::bin_of(frac);
        self.accesses[b] += 1.0;
        if hit {
            self.hits[b] += 1.0;
        }
    }

    fn half(&self, range: std::ops::Range<usize>) -> (f64, f64) {
        range.fold((0.0, 0.0), |(a, h), i| (a + self.accesses[i], h + self.hits[i]))
    }

    /// `(front, back)` hit rates, when both halves have been accessed.
    pub fn half_rates(&self) -> Option<(f64, f64)> {
        let (fa, fh) = self.half(0..POSITION_BINS / 2);
        let (ba, bh) = self.half(POSITION_BINS / 2..POSITION_BINS);
        if fa < 1.0 || ba < 1.0 {
            return None;
        }
        Some((fh / fa, bh / ba))
    }

    pub fn decay(&mut self, f: f64) {
        for i in 0..POSITION_BINS {
            self.accesses[i] *= f;
            self.hits[i] *= f;
        }
    }
}

fn clamp(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if v.is_nan() {
        return lo;
    }
    v.clamp(lo, hi)
}

/// Token-weight step for every type with enough evictions, then counter decay.
pub fn update_token_weights(stats: &mut TokenStats, state: &mut LearnedState, cfg: &LearnerConfig) {
    for t in TokenType::LEARNED {
        let c = stats[t];
        if c.evicted <= cfg.min_type_evictions {
            continue;
        }
        let r_miss = c.miss_after_evict.min(c.evicted) as f64 / c.evicted as f64;
        let r_reuse = if c.accesses > 0.0 { (c.hits / c.accesses).min(1.0) } else { 0.0 };
        let w = state.token_weights[t];
        let next = match cfg.token_rule {
            TokenRule::Additive => {
                let target = 1.0 + cfg.miss_coef * r_miss + cfg.reuse_coef * r_reuse;
                (1.0 - state.eta) * w + state.eta * target
            }
            TokenRule::Multiplicative => w * (1.0 + state.eta * r_miss),
        };
        state.token_weights[t] = clamp(next, TOKEN_WEIGHT_BOUNDS);
    }
    for t in TokenType::ALL {
        let c = &mut stats[t];
        c.evicted = (c.evicted as f64 * state.lambda).floor() as u64;
        c.miss_after_evict = ((c.miss_after_evict as f64 * state.lambda).floor() as u64).min(c.evicted);
        c.hits *= state.window_decay;
        c.accesses *= state.window_decay;
    }
}

/// Queue-weight step from windowed hit efficiency; counters are reset.
pub fn update_queue_weights(counters: &mut QueueCounters, state: &mut LearnedState, cfg: &LearnerConfig) {
    let q = &mut state.queue_weights;
    let slots: [(&mut f64, WindowCounter); 3] =
        [(&mut q.chat, counters.chat), (&mut q.agentic, counters.agentic), (&mut q.structural, counters.structural)];
    let eligible = |c: &WindowCounter| c.evictions > cfg.min_queue_evictions;
    let eff = |c: &WindowCounter| c.hits as f64 / c.evictions as f64;
    match cfg.queue_rule {
        QueueRule::Additive => {
            for (alpha, c) in slots {
                if eligible(&c) {
                    let target = 1.0 + eff(&c) / state.temperature;
                    *alpha = clamp(*alpha + state.beta * (target - *alpha), QUEUE_WEIGHT_BOUNDS);
                }
            }
        }
        QueueRule::RelativePower => {
            let effs: Vec<f64> = slots.iter().filter(|(_, c)| eligible(c)).map(|(_, c)| eff(c)).collect();
            let mean = effs.iter().sum::<f64>() / effs.len().max(1) as f64;
            if mean > 0.0 {
                for (alpha, c) in slots {
                    if eligible(&c) {
                        let rel = (eff(&c) / mean).powf(1.0 / state.temperature);
                        *alpha = clamp(state.beta * *alpha + (1.0 - state.beta) * rel, QUEUE_WEIGHT_BOUNDS);
                    }
                }
            }
        }
    }
    *counters = QueueCounters::default();
}

/// Two-threshold rule on log-interval variance; the dead zone keeps `beta_ln`.
pub fn adapt_ema_beta(variance: f64, beta_ln: &mut f64, cfg: &LearnerConfig) {
    if variance > cfg.variance_hi {
        *beta_ln = cfg.beta_ln_fast;
    } else if variance < cfg.variance_lo {
        *beta_ln = cfg.beta_ln_slow;
    }
}

/// EMA blend of each style's parameters toward the MLE of its buffer.
pub fn update_lognormal(buffers: &mut PerStyle<IntervalBuffer>, state: &mut LearnedState, cfg: &LearnerConfig) {
    for s in Style::ALL {
        let buf = &buffers[s];
        if buf.len() <= cfg.min_intervals {
            continue;
        }
        if cfg.adapt_beta {
            adapt_ema_beta(buf.log_variance(), &mut state.beta_ln[s], cfg);
        }
        let Ok(fit) = fit_mle(&buf.values()) else { continue };
        let b = state.beta_ln[s];
        let p = &mut state.lognormal[s];
        p.mu += b * (fit.mu - p.mu);
        p.sigma = (p.sigma + b * (fit.sigma - p.sigma)).max(SIGMA_FLOOR);
    }
}

/// Moves the decay power toward `1/(back/front + 0.1)`.
pub fn update_decay_power(bins: &mut PositionBins, state: &mut LearnedState) {
    if let Some((front, back)) = bins.half_rates() {
        if front > 0.0 {
            let estimated = 1.0 / (back / front + 0.1);
            state.gamma = clamp(state.gamma + state.beta * (estimated - state.gamma), GAMMA_BOUNDS);
        }
    }
    bins.decay(state.lambda);
}

/// Learner state captured after one update round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub update_index: u64,
    pub evictions: u64,
    pub time: f64,
    pub state: LearnedState,
}

/// Mean token weights over the last `window` updates up to update `horizon`
/// (or the final update, if fewer ran). Smooths out the EMA's jitter.
pub fn converged_token_weights(trajectory: &[Snapshot], horizon: usize, window: usize) -> Option<PerType<f64>> {
    let end = trajectory.len().min(horizon);
    let tail = &trajectory[end.saturating_sub(window.max(1))..end];
    if tail.is_empty() {
        return None;
    }
    let n = tail.len() as f64;
    Some(PerType::from_fn(|t| tail.iter().map(|s| s.state.token_weights[t]).sum::<f64>() / n))
}

//! Baseline evictors: LRU, LFU and a conversation-level decay policy that
//! approximates LPC's time-decayed continuation scoring.

use std::collections::{BTreeSet, HashMap, HashSet};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::cache::{Block, BlockHash, Evictor, RequestInfo};
use crate::types::SessionId;

type Key = (OrderedFloat<f64>, u64, BlockHash);

/// First key in `set` whose hash is not pinned.
pub(crate) fn first_unpinned<K: Ord + Copy>(
    set: &BTreeSet<K>,
    pinned: &HashSet<BlockHash>,
    hash: impl Fn(&K) -> BlockHash,
) -> Option<K> {
    set.iter().find(|k| !pinned.contains(&hash(k))).copied()
}

/// Least recently used; ties go to the smaller block id.
#[derive(Debug, Default)]
pub struct Lru {
    order: BTreeSet<Key>,
    index: HashMap<BlockHash, Key>,
}

impl Lru {
    pub fn new() -> Self {
        Self::default()
    }

    fn upsert(&mut self, block: &Block, now: f64) {
        if let Some(old) = self.index.remove(&block.content_hash) {
            self.order.remove(&old);
        }
        let key = (OrderedFloat(now), block.block_id, block.content_hash);
        self.order.insert(key);
        self.index.insert(block.content_hash, key);
    }
}

impl Evictor for Lru {
    fn name(&self) -> &str {
        "lru"
    }

    fn on_add(&mut self, block: &Block, now: f64) {
        self.upsert(block, now);
    }

    fn on_hit(&mut self, block: &Block, now: f64) {
        self.upsert(block, now);
    }

    fn evict(&mut self, _now: f64, pinned: &HashSet<BlockHash>) -> Option<BlockHash> {
        let key = first_unpinned(&self.order, pinned, |k| k.2)?;
        self.order.remove(&key);
        self.index.remove(&key.2);
        Some(key.2)
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}

type LfuKey = (u64, OrderedFloat<f64>, u64, BlockHash);

/// Least frequently used; ties go to the older access, then the smaller id.
#[derive(Debug, Default)]
pub struct Lfu {
    order: BTreeSet<LfuKey>,
    index: HashMap<BlockHash, LfuKey>,
}

impl Lfu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Evictor for Lfu {
    fn name(&self) -> &str {
        "lfu"
    }

    fn on_add(&mut self, block: &Block, now: f64) {
        let key = (1, OrderedFloat(now), block.block_id, block.content_hash);
        if let Some(old) = self.index.insert(block.content_hash, key) {
            self.order.remove(&old);
        }
        self.order.insert(key);
    }

    fn on_hit(&mut self, block: &Block, now: f64) {
        let count = match self.index.remove(&block.content_hash) {
            Some(old) => {
                self.order.remove(&old);
                old.0 + 1
            }
            None => block.access_count + 1,
        };
        let key = (count, OrderedFloat(now), block.block_id, block.content_hash);
        self.order.insert(key);
        self.index.insert(block.content_hash, key);
    }

    fn evict(&mut self, _now: f64, pinned: &HashSet<BlockHash>) -> Option<BlockHash> {
        let key = first_unpinned(&self.order, pinned, |k| k.3)?;
        self.order.remove(&key);
        self.index.remove(&key.3);
        Some(key.3)
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpcConfig {
    /// Decay rate in 1/s.
    pub lambda_decay: f64,
    /// Continuation score used before any request has been seen.
    pub prior: f64,
}

impl Default for LpcConfig {
    fn default() -> Self {
        LpcConfig { lambda_decay: 0.01, prior: 0.5 }
    }
}

#[derive(Debug, Clone, Copy)]
struct LpcEntry {
    key: Key,
    last_access: f64,
    session: SessionId,
}

/// Approximation of LPC: every block inherits the continuation score `c` of
/// the conversation that last touched it and is scored `c·exp(−λ·Δt)`.
///
/// Since `now` is shared by all blocks, the argmin is taken over the
/// equivalent time-invariant key `ln c + λ·t_last`.
#[derive(Debug)]
pub struct LpcApprox {
    cfg: LpcConfig,
    order: BTreeSet<Key>,
    index: HashMap<BlockHash, LpcEntry>,
    members: HashMap<SessionId, HashSet<BlockHash>>,
    scores: HashMap<SessionId, f64>,
    current: Option<SessionId>,
}

impl LpcApprox {
    pub fn new(cfg: LpcConfig) -> Self {
        LpcApprox {
            cfg,
            order: BTreeSet::new(),
            index: HashMap::new(),
            members: HashMap::new(),
            scores: HashMap::new(),
            current: None,
        }
    }

    fn score_of(&self, s: SessionId) -> f64 {
        self.scores.get(&s).copied().unwrap_or(self.cfg.prior)
    }

    fn key(&self, c: f64, last_access: f64, block_id: u64, hash: BlockHash) -> Key {
        (OrderedFloat(c.max(1e-300).ln() + self.cfg.lambda_decay * last_access), block_id, hash)
    }

    /// `c·exp(−λ·Δt)` as stated, for diagnostics and oracle checks.
    pub fn score(&self, hash: BlockHash, now: f64) -> Option<f64> {
        let e = self.index.get(&hash)?;
        Some(self.score_of(e.session) * (-self.cfg.lambda_decay * (now - e.last_access)).exp())
    }

    fn upsert(&mut self, block: &Block, now: f64) {
        let session = self.current.unwrap_or(SessionId(u64::MAX));
        if let Some(old) = self.index.remove(&block.content_hash) {
            self.order.remove(&old.key);
            if let Some(m) = self.members.get_mut(&old.session) {
                m.remove(&block.content_hash);
            }
        }
        let key = self.key(self.score_of(session), now, block.block_id, block.content_hash);
        self.order.insert(key);
        self.index.insert(block.content_hash, LpcEntry { key, last_access: now, session });
        self.members.entry(session).or_default().insert(block.content_hash);
    }
}

impl Evictor for LpcApprox {
    fn name(&self) -> &str {
        "lpc_approx"
    }

    fn on_request(&mut self, info: &RequestInfo, _now: f64) {
        let c = info.continuation.clamp(0.0, 1.0);
        self.current = Some(info.session_id);
        if self.scores.insert(info.session_id, c) == Some(c) {
            return;
        }
        let hashes: Vec<BlockHash> =
            self.members.get(&info.session_id).map(|m| m.iter().copied().collect()).unwrap_or_default();
        for h in hashes {
            let e = self.index[&h];
            self.order.remove(&e.key);
            let key = self.key(c, e.last_access, e.key.1, h);
            self.order.insert(key);
            self.index.insert(h, LpcEntry { key, ..e });
        }
    }

    fn on_add(&mut self, block: &Block, now: f64) {
        self.upsert(block, now);
    }

    fn on_hit(&mut self, block: &Block, now: f64) {
        self.upsert(block, now);
    }

    fn evict(&mut self, _now: f64, pinned: &HashSet<BlockHash>) -> Option<BlockHash> {
        let key = first_unpinned(&self.order, pinned, |k| k.2)?;
        self.order.remove(&key);
        if let Some(e) = self.index.remove(&key.2) {
            if let Some(m) = self.members.get_mut(&e.session) {
                m.remove(&key.2);
                if m.is_empty() {
                    self.members.remove(&e.session);
                }
            }
        }
        Some(key.2)
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::CacheHint;
    use crate::types::TokenType;

    fn block(id: u64) -> Block {
        Block {
            block_id: id,
            tokens: vec![],
            content_hash: 1000 + id,
            hint: CacheHint::new(TokenType::UserQuery),
            last_access: 0.0,
            access_count: 1,
            num_tokens: 16,
        }
    }

    fn none() -> HashSet<BlockHash> {
        HashSet::new()
    }

    #[test]
    fn lru_picks_oldest_then_smallest_id() {
        let mut p = Lru::new();
        for (id, t) in [(0, 2.0), (1, 1.0), (2, 3.0)] {
            p.on_add(&block(id), t);
        }
        assert_eq!(p.evict(4.0, &none()), Some(1001));

        let mut p = Lru::new();
        for id in [3, 1, 2] {
            p.on_add(&block(id), 5.0);
        }
        assert_eq!(p.evict(5.0, &none()), Some(1001));
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn lru_skips_pinned() {
        let mut p = Lru::new();
        p.on_add(&block(0), 0.0);
        p.on_add(&block(1), 1.0);
        let pinned: HashSet<_> = [1000].into();
        assert_eq!(p.evict(2.0, &pinned), Some(1001));
        assert_eq!(p.evict(2.0, &pinned), None);
    }

    #[test]
    fn lfu_counts_and_ties() {
        let mut p = Lfu::new();
        for id in 0..3 {
            p.on_add(&block(id), 0.0);
        }
        p.on_hit(&block(0), 1.0);
        p.on_hit(&block(0), 2.0);
        p.on_hit(&block(2), 1.0);
        assert_eq!(p.evict(3.0, &none()), Some(1001));

        let mut p = Lfu::new();
        p.on_add(&block(0), 2.0);
        p.on_add(&block(1), 1.0);
        assert_eq!(p.evict(3.0, &none()), Some(1001));
    }

    #[test]
    fn lpc_prefers_low_continuation_sessions() {
        let mut p = LpcApprox::new(LpcConfig::default());
        p.on_request(&RequestInfo { session_id: SessionId(1), turn_index: 0, continuation: 0.9 }, 0.0);
        p.on_add(&block(0), 0.0);
        p.on_request(&RequestInfo { session_id: SessionId(2), turn_index: 0, continuation: 0.1 }, 0.0);
        p.on_add(&block(1), 0.0);
        assert_eq!(p.evict(1.0, &none()), Some(1001));
    }

    #[test]
    fn lpc_decays_with_age() {
        let mut p = LpcApprox::new(LpcConfig::default());
        p.on_request(&RequestInfo { session_id: SessionId(1), turn_index: 0, continuation: 0.5 }, 0.0);
        p.on_add(&block(0), 90.0);
        p.on_add(&block(1), 0.0);
        assert_eq!(p.evict(100.0, &none()), Some(1001));
    }

    #[test]
    fn lpc_rekeys_when_session_score_changes() {
        let mut p = LpcApprox::new(LpcConfig::default());
        p.on_request(&RequestInfo { session_id: SessionId(1), turn_index: 0, continuation: 0.9 }, 0.0);
        p.on_add(&block(0), 0.0);
        p.on_request(&RequestInfo { session_id: SessionId(2), turn_index: 0, continuation: 0.5 }, 0.0);
        p.on_add(&block(1), 0.0);
        p.on_request(&RequestInfo { session_id: SessionId(1), turn_index: 1, continuation: 0.1 }, 0.0);
        assert_eq!(p.evict(1.0, &none()), Some(1000));
    }
}

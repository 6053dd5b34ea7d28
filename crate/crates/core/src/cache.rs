//! Capacity-bounded block store with chained prefix hashing.
//!
//! The store owns the resident blocks and delegates victim selection to an
//! [`Evictor`]. Blocks of the request being inserted are pinned so a request
//! never evicts its own prefix.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learners::{LearnedState, Snapshot};
use crate::types::{Phase, SessionId, TokenId, TokenType};

pub type BlockHash = u64;

/// Seed for the first block of every chain.
pub const HASH_SEED: BlockHash = 0x5EED_CAFE_F00D_D00D;

pub const DEFAULT_BLOCK_SIZE: usize = 16;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Digest of `tokens` chained onto `prev`.
pub fn hash_chain(prev: BlockHash, tokens: &[TokenId]) -> BlockHash {
    let mut h = mix64(prev ^ 0x9E37_79B9_7F4A_7C15);
    for t in tokens {
        h = mix64(h.wrapping_add(t.0 as u64).wrapping_mul(0x100_0000_01B3));
    }
    mix64(h ^ tokens.len() as u64)
}

/// Routing metadata attached to every block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHint {
    pub token_type: TokenType,
    pub session_id: Option<SessionId>,
    pub turn_index: u32,
    pub is_multi_turn: bool,
    pub is_agentic: bool,
    pub is_shared_prefix: bool,
    pub block_offset: u32,
    pub max_offset: u32,
    pub phase: Phase,
}

impl CacheHint {
    pub fn new(token_type: TokenType) -> Self {
        CacheHint {
            token_type,
            session_id: None,
            turn_index: 0,
            is_multi_turn: false,
            is_agentic: false,
            is_shared_prefix: false,
            block_offset: 0,
            max_offset: 1,
            phase: if token_type == TokenType::Decode { Phase::Decode } else { Phase::Prefill },
        }
    }

    /// Relative position `o_b / o_max` in `[0, 1]`.
    pub fn offset_fraction(&self) -> f64 {
        self.block_offset as f64 / self.max_offset.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub block_id: u64,
    pub tokens: Vec<TokenId>,
    pub content_hash: BlockHash,
    pub hint: CacheHint,
    pub last_access: f64,
    pub access_count: u64,
    pub num_tokens: u32,
}

/// A block of a request before it is matched against the store.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingBlock {
    pub content_hash: BlockHash,
    pub tokens: Vec<TokenId>,
    pub hint: CacheHint,
}

/// Splits `tokens` into chained blocks; the last block may be partial.
pub fn chain_blocks(tokens: &[TokenId], block_size: usize, prev: BlockHash) -> Vec<(BlockHash, &[TokenId])> {
    let mut h = prev;
    tokens
        .chunks(block_size)
        .map(|chunk| {
            h = hash_chain(h, chunk);
            (h, chunk)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PrefixMatchResult {
    pub hit_blocks: usize,
    pub miss_blocks: usize,
    pub matched_token_count: usize,
    /// Victims evicted to make room for this request.
    pub evictions: usize,
    /// Miss blocks that could not be cached because every resident block was pinned.
    pub uncached_blocks: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CacheError {
    #[error("cache capacity is zero")]
    CapacityZero,
    #[error("block {0:#018x} is not resident")]
    NotResident(BlockHash),
    #[error("time went backwards: {now} < {clock}")]
    TimeReversal { now: f64, clock: f64 },
}

/// Per-request context handed to evictors before the request's blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestInfo {
    pub session_id: SessionId,
    pub turn_index: u32,
    /// Estimated probability that the conversation continues.
    pub continuation: f64,
}

/// The contract every eviction policy implements.
///
/// `on_hit` is called before the store updates `last_access`, so the block
/// still carries the previous access time.
pub trait Evictor: Send {
    fn name(&self) -> &str;
    fn on_request(&mut self, _info: &RequestInfo, _now: f64) {}
    fn on_add(&mut self, block: &Block, now: f64);
    fn on_hit(&mut self, block: &Block, now: f64);
    /// Picks and forgets a victim that is not in `pinned`.
    fn evict(&mut self, now: f64, pinned: &HashSet<BlockHash>) -> Option<BlockHash>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn learned_state(&self) -> Option<LearnedState> {
        None
    }
    fn trajectory(&self) -> Vec<Snapshot> {
        Vec::new()
    }
}

/// A victim removed from the store.
#[derive(Debug, Clone, PartialEq)]
pub struct Evicted {
    pub content_hash: BlockHash,
    pub token_type: TokenType,
    pub time: f64,
}

pub struct CacheStore {
    capacity_blocks: usize,
    resident: HashMap<BlockHash, Block>,
    policy: Box<dyn Evictor>,
    clock: f64,
    next_block_id: u64,
    evicted_log: Vec<Evicted>,
}

impl CacheStore {
    pub fn new(capacity_blocks: usize, policy: Box<dyn Evictor>) -> Self {
        CacheStore {
            capacity_blocks,
            resident: HashMap::new(),
            policy,
            clock: 0.0,
            next_block_id: 0,
            evicted_log: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity_blocks
    }

    pub fn len(&self) -> usize {
        self.resident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resident.is_empty()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn contains(&self, hash: BlockHash) -> bool {
        self.resident.contains_key(&hash)
    }

    pub fn get(&self, hash: BlockHash) -> Option<&Block> {
        self.resident.get(&hash)
    }

    pub fn policy(&self) -> &dyn Evictor {
        self.policy.as_ref()
    }

    pub fn policy_mut(&mut self) -> &mut dyn Evictor {
        self.policy.as_mut()
    }

    /// Victims evicted since the last call.
    pub fn drain_evicted(&mut self) -> Vec<Evicted> {
        std::mem::take(&mut self.evicted_log)
    }

    fn advance(&mut self, now: f64) -> Result<(), CacheError> {
        if now < self.clock {
            return Err(CacheError::TimeReversal { now, clock: self.clock });
        }
        self.clock = now;
        Ok(())
    }

    pub fn touch(&mut self, hash: BlockHash, now: f64) -> Result<(), CacheError> {
        self.advance(now)?;
        let block = self.resident.get_mut(&hash).ok_or(CacheError::NotResident(hash))?;
        self.policy.on_hit(block, now);
        block.last_access = block.last_access.max(now);
        block.access_count += 1;
        Ok(())
    }

    /// Matches the longest resident prefix of `blocks`, then inserts the rest.
    ///
    /// A resident block that follows a miss is refreshed but counted as a
    /// miss, since its prefix has to be recomputed anyway.
    pub fn insert_request(&mut self, blocks: &[PendingBlock], now: f64) -> Result<PrefixMatchResult, CacheError> {
        if blocks.is_empty() {
            self.advance(now)?;
            return Ok(PrefixMatchResult::default());
        }
        if self.capacity_blocks == 0 {
            return Err(CacheError::CapacityZero);
        }
        self.advance(now)?;
        let pinned: HashSet<BlockHash> = blocks.iter().map(|b| b.content_hash).collect();
        let mut res = PrefixMatchResult::default();
        let mut matching = true;
        let mut caching = true;
        for pb in blocks {
            let resident = self.resident.contains_key(&pb.content_hash);
            if matching && resident {
                self.touch(pb.content_hash, now)?;
                res.hit_blocks += 1;
                res.matched_token_count += pb.tokens.len();
                continue;
            }
            matching = false;
            res.miss_blocks += 1;
            if resident {
                self.touch(pb.content_hash, now)?;
                continue;
            }
            if !caching {
                res.uncached_blocks += 1;
                continue;
            }
            if self.resident.len() >= self.capacity_blocks {
                match self.policy.evict(now, &pinned) {
                    Some(victim) => {
                        let b = self
                            .resident
                            .remove(&victim)
                            .expect("policy returned a block the store does not hold");
                        self.evicted_log.push(Evicted { content_hash: victim, token_type: b.hint.token_type, time: now });
                        res.evictions += 1;
                    }
                    None => {
                        // Everything left is pinned; later blocks could never
                        // be prefix-matched without this one.
                        caching = false;
                        res.uncached_blocks += 1;
                        continue;
                    }
                }
            }
            let block = Block {
                block_id: self.next_block_id,
                tokens: pb.tokens.clone(),
                content_hash: pb.content_hash,
                hint: pb.hint.clone(),
                last_access: now,
                access_count: 1,
                num_tokens: pb.tokens.len() as u32,
            };
            self.next_block_id += 1;
            self.policy.on_add(&block, now);
            self.resident.insert(pb.content_hash, block);
        }
        Ok(res)
    }
}

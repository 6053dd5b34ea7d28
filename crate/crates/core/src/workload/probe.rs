use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Request, RequestMeta, Result, TokenSegment, Trace, WorkloadError};
use crate::types::{Category, SessionId, TokenId, TokenType};

/// Reference per-type reuse rates (percent), in probe segment order.
pub const REFERENCE_REUSE: [(TokenType, f64); 5] = [
    (TokenType::SystemPrompt, 92.3),
    (TokenType::UserQuery, 30.8),
    (TokenType::Response, 27.8),
    (TokenType::ToolOutput, 23.0),
    (TokenType::Cot, 2.2),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub num_requests: usize,
    /// Tokens per segment; a multiple of the block size keeps types block-pure.
    pub segment_tokens: usize,
    /// Segment order and reuse probability of each segment, non-increasing.
    pub reuse: Vec<(TokenType, f64)>,
    pub seed: u64,
    pub vocab_size: u32,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            num_requests: 5000,
            segment_tokens: 64,
            reuse: REFERENCE_REUSE.iter().map(|&(t, p)| (t, p / 100.0)).collect(),
            seed: 0,
            vocab_size: 32_000,
        }
    }
}

/// Builds a single-turn trace whose segment `k` repeats an earlier request's
/// prefix with probability `reuse[k]`.
///
/// Reuse is nested: a request copies the first `d` segments of a uniformly
/// chosen earlier request, where `P(d ≥ k) = reuse[k−1]`, and draws the rest
/// fresh. Because prefixes are chained, nesting is what makes the prescribed
/// per-segment rates simultaneously attainable.
pub fn reuse_probe(spec: &ProbeSpec) -> Result<Trace> {
    if spec.reuse.windows(2).any(|w| w[1].1 > w[0].1) || spec.reuse.iter().any(|r| !(0.0..=1.0).contains(&r.1)) {
        return Err(WorkloadError::InvalidSpec("reuse probabilities must be non-increasing in [0, 1]".into()));
    }
    if spec.segment_tokens == 0 || spec.vocab_size == 0 {
        return Err(WorkloadError::InvalidSpec("segment_tokens and vocab_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut requests: Vec<Request> = Vec::with_capacity(spec.num_requests);
    for i in 0..spec.num_requests {
        let u: f64 = rng.random();
        let depth = if requests.is_empty() { 0 } else { spec.reuse.iter().take_while(|r| u < r.1).count() };
        let parent = (!requests.is_empty()).then(|| rng.random_range(0..requests.len()));
        let segments: Vec<TokenSegment> = spec
            .reuse
            .iter()
            .enumerate()
            .map(|(k, &(t, _))| match parent {
                Some(p) if k < depth => requests[p].segments[k].clone(),
                _ => TokenSegment::new(
                    t,
                    (0..spec.segment_tokens).map(|_| TokenId(rng.random_range(0..spec.vocab_size))).collect(),
                ),
            })
            .collect();
        requests.push(Request {
            arrival_time: i as f64,
            session_id: SessionId(i as u64),
            turn_index: 0,
            segments,
            output: Vec::new(),
            output_length: 1,
            category: Category::DocQa,
            meta: RequestMeta::default(),
            continues: Some(false),
        });
    }
    Ok(Trace { name: "reuse_probe".into(), requests, intervals: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_increasing_probabilities() {
        let spec = ProbeSpec { reuse: vec![(TokenType::UserQuery, 0.1), (TokenType::Cot, 0.5)], ..Default::default() };
        assert!(reuse_probe(&spec).is_err());
    }

    #[test]
    fn segments_are_block_aligned_and_ordered() {
        let t = reuse_probe(&ProbeSpec { num_requests: 20, ..Default::default() }).unwrap();
        for r in &t.requests {
            let types: Vec<_> = r.segments.iter().map(|s| s.token_type).collect();
            assert_eq!(types, REFERENCE_REUSE.iter().map(|x| x.0).collect::<Vec<_>>());
            assert!(r.segments.iter().all(|s| s.len() == 64));
        }
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Zipf};

use super::{Interval, Request, RequestMeta, Result, TokenSegment, Trace, WorkloadSpec};
use crate::timing::{self, LogNormalParams};
use crate::types::{Category, PerCategory, SessionId, TokenId, TokenType};

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(seed ^ splitmix(stream.wrapping_mul(0x1000_0000_01B3) ^ splitmix(index)))
}

/// Inter-turn gap drawn from a log-normal model.
pub fn sample_interval<R: Rng + ?Sized>(params: &LogNormalParams, rng: &mut R) -> Result<f64> {
    Ok(timing::sample_interval(params, rng)?)
}

fn random_tokens(rng: &mut ChaCha8Rng, n: usize, vocab: u32) -> Vec<TokenId> {
    (0..n).map(|_| TokenId(rng.random_range(0..vocab))).collect()
}

fn draw_len(rng: &mut ChaCha8Rng, median: f64, sigma: f64) -> usize {
    let z: f64 = rng.sample(StandardNormal);
    (median * (sigma * z).exp()).round().max(1.0) as usize
}

fn geometric(rng: &mut ChaCha8Rng, mean: f64, cap: u32) -> u32 {
    if mean <= 1.0 {
        return 1;
    }
    let p = 1.0 / mean;
    let u: f64 = rng.random::<f64>();
    // Inverse CDF of the geometric distribution on {1, 2, ...}.
    let k = ((1.0 - u).ln() / (1.0 - p).ln()).floor() as u32 + 1;
    k.clamp(1, cap.max(1))
}

struct Template {
    system: Vec<TokenId>,
    scaffold: Vec<TokenId>,
}

impl Template {
    fn len(&self) -> usize {
        self.system.len() + self.scaffold.len()
    }
}

fn templates(spec: &WorkloadSpec) -> PerCategory<Vec<Template>> {
    PerCategory::from_fn(|c| {
        let p = spec.profiles[c];
        if c.is_multi_turn() || p.sharing_ratio <= 0.0 {
            return Vec::new();
        }
        (0..spec.templates_per_category.max(1))
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 1 + c.index() as u64, j as u64));
                let total = draw_len(&mut rng, p.prompt_median * p.sharing_ratio, spec.length_sigma).max(2);
                let sys = ((total as f64) * 0.8).round().max(1.0) as usize;
                Template {
                    system: random_tokens(&mut rng, sys, spec.vocab_size),
                    scaffold: random_tokens(&mut rng, total - sys, spec.vocab_size),
                }
            })
            .collect()
    })
}

/// Latent features: `ρ(2y−1) + √(1−ρ²)·z`.
fn meta(rng: &mut ChaCha8Rng, spec: &WorkloadSpec, y: bool, category: Category, prompt_len: usize) -> RequestMeta {
    let rho = spec.feature_correlation.clamp(-1.0, 1.0);
    let signal = if y { 1.0 } else { -1.0 } * rho;
    let noise = (1.0 - rho * rho).sqrt();
    let mut latent = || signal + noise * rng.sample::<f64, _>(StandardNormal);
    let open_ended = latent();
    let enthusiasm = latent();
    let ends_question = latent();
    let sentences = (prompt_len as f64 / 18.0 * (0.25 * rng.sample::<f64, _>(StandardNormal)).exp()).round();
    RequestMeta {
        open_ended,
        enthusiasm,
        ends_question,
        prompt_sentences: sentences.max(1.0) as u32,
        multistep: matches!(category, Category::Agent | Category::Programming),
        has_code: category == Category::Programming || (category == Category::Agent && rng.random_bool(0.5)),
    }
}

fn split_output(rng: &mut ChaCha8Rng, spec: &WorkloadSpec, category: Category) -> Vec<TokenSegment> {
    let p = spec.profiles[category];
    let n = draw_len(rng, p.output_median, spec.length_sigma);
    let cot = if matches!(category, Category::Agent | Category::Programming) {
        ((n as f64) * spec.cot_fraction).round() as usize
    } else {
        0
    };
    let mut out = Vec::new();
    if cot > 0 {
        out.push(TokenSegment::new(TokenType::Cot, random_tokens(rng, cot, spec.vocab_size)));
    }
    let resp = n.saturating_sub(cot).max(1);
    out.push(TokenSegment::new(TokenType::Response, random_tokens(rng, resp, spec.vocab_size)));
    out
}

fn output_len(out: &[TokenSegment]) -> u32 {
    out.iter().map(TokenSegment::len).sum::<usize>() as u32
}

fn multi_turn_session(
    spec: &WorkloadSpec,
    rng: &mut ChaCha8Rng,
    session: SessionId,
    category: Category,
    turns: u32,
    start: f64,
    requests: &mut Vec<Request>,
    intervals: &mut Vec<Interval>,
) -> Result<()> {
    let p = spec.profiles[category];
    let style = category.style();
    let sys_share = if category == Category::Agent { 0.7 } else { 0.6 };
    let follow_type = if category == Category::Agent { TokenType::ToolOutput } else { TokenType::UserQuery };
    let mut history: Vec<TokenSegment> = Vec::new();
    let mut t = start;
    for k in 0..turns {
        if k == 0 {
            let sys = draw_len(rng, p.prompt_median * sys_share, spec.length_sigma);
            let user = draw_len(rng, p.prompt_median * (1.0 - sys_share), spec.length_sigma);
            history.push(TokenSegment::new(TokenType::SystemPrompt, random_tokens(rng, sys, spec.vocab_size)));
            history.push(TokenSegment::new(TokenType::UserQuery, random_tokens(rng, user, spec.vocab_size)));
        } else {
            let gap = sample_interval(&spec.interval_params[style], rng)?;
            t += gap;
            intervals.push(Interval { session_id: session, turn_index: k, style, seconds: gap });
            let n = draw_len(rng, p.followup_median, spec.length_sigma);
            history.push(TokenSegment::new(follow_type, random_tokens(rng, n, spec.vocab_size)));
        }
        let output = split_output(rng, spec, category);
        let continues = k + 1 < turns;
        let segments = history.clone();
        let prompt_len = segments.iter().map(TokenSegment::len).sum();
        let meta = meta(rng, spec, continues, category, prompt_len);
        // Reasoning is not carried into the next turn's prompt.
        history.extend(output.iter().filter(|s| s.token_type != TokenType::Cot).cloned());
        requests.push(Request {
            arrival_time: t,
            session_id: session,
            turn_index: k,
            segments,
            output_length: output_len(&output),
            output,
            category,
            meta,
            continues: Some(continues),
        });
    }
    Ok(())
}

fn single_turn_request(
    spec: &WorkloadSpec,
    rng: &mut ChaCha8Rng,
    pool: &[Template],
    session: SessionId,
    category: Category,
    start: f64,
) -> Request {
    let p = spec.profiles[category];
    let mut segments = Vec::new();
    let pick = |rng: &mut ChaCha8Rng| {
        let z = Zipf::new(pool.len() as f64, spec.template_zipf_s).expect("validated exponent");
        (rng.sample(z) as usize).clamp(1, pool.len()) - 1
    };
    let variable = if let Some(tpl) = (!pool.is_empty()).then(|| &pool[pick(rng)]) {
        segments.push(TokenSegment::new(TokenType::SystemPrompt, tpl.system.clone()));
        if !tpl.scaffold.is_empty() {
            segments.push(TokenSegment::new(TokenType::UserQuery, tpl.scaffold.clone()));
        }
        let r = p.sharing_ratio;
        let scale: f64 = rng.random_range(0.7..1.0);
        ((tpl.len() as f64) * (1.0 - r) / r * scale).round().max(1.0) as usize
    } else {
        draw_len(rng, p.prompt_median, spec.length_sigma)
    };
    let vocab = spec.vocab_size;
    let mut push = |rng: &mut ChaCha8Rng, t: TokenType, n: usize| {
        if n > 0 {
            segments.push(TokenSegment::new(t, random_tokens(rng, n, vocab)));
        }
    };
    let frac = |f: f64| ((variable as f64) * f).round() as usize;
    match category {
        Category::ToolUse => {
            let tool = frac(0.7);
            push(rng, TokenType::ToolOutput, tool);
            push(rng, TokenType::UserQuery, variable.saturating_sub(tool).max(1));
        }
        Category::DocQa => {
            let doc = frac(0.85);
            push(rng, TokenType::ToolOutput, doc);
            push(rng, TokenType::UserQuery, variable.saturating_sub(doc).max(1));
        }
        _ => {
            let cot = frac(spec.prompt_cot_fraction);
            push(rng, TokenType::UserQuery, variable.saturating_sub(cot).max(1));
            push(rng, TokenType::Cot, cot);
        }
    }
    let output = split_output(rng, spec, category);
    let prompt_len = segments.iter().map(TokenSegment::len).sum();
    let meta = meta(rng, spec, false, category, prompt_len);
    Request {
        arrival_time: start,
        session_id: session,
        turn_index: 0,
        segments,
        output_length: output_len(&output),
        output,
        category,
        meta,
        continues: Some(false),
    }
}

/// Generates a trace. Deterministic for a fixed spec (including its seed).
///
/// Sessions start `inject_interval` apart. Each new session takes the
/// category whose request count lags its target share the most, which keeps
/// the request-level mix close to `spec.mix`.
pub fn generate(spec: &WorkloadSpec) -> Result<Trace> {
    spec.validate()?;
    let pools = templates(spec);
    let mut requests = Vec::new();
    let mut intervals = Vec::new();
    let mut counts = PerCategory::<usize>::default();
    let mut total = 0usize;
    for i in 0..spec.num_sessions {
        let category = Category::ALL
            .into_iter()
            .filter(|&c| spec.mix[c] > 0.0)
            .map(|c| (c, spec.mix[c] * (total + 1) as f64 - counts[c] as f64))
            .fold(None, |best: Option<(Category, f64)>, (c, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((c, d)),
            })
            .map(|(c, _)| c)
            .expect("validated mix has a positive share");
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(spec.seed, 0, i as u64));
        let session = SessionId(i as u64);
        let start = i as f64 * spec.inject_interval;
        let turns = if category.is_multi_turn() {
            let turns = geometric(&mut rng, spec.profiles[category].mean_turns, spec.max_turns);
            multi_turn_session(spec, &mut rng, session, category, turns, start, &mut requests, &mut intervals)?;
            turns as usize
        } else {
            requests.push(single_turn_request(spec, &mut rng, &pools[category], session, category, start));
            1
        };
        counts[category] += turns;
        total += turns;
    }
    requests.sort_by(|a, b| {
        a.arrival_time
            .total_cmp(&b.arrival_time)
            .then(a.session_id.cmp(&b.session_id))
            .then(a.turn_index.cmp(&b.turn_index))
    });
    Ok(Trace { name: spec.name.clone(), requests, intervals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::WorkloadSpec;

    fn small(name: &str) -> WorkloadSpec {
        WorkloadSpec { num_sessions: 300, ..WorkloadSpec::preset(name).unwrap() }
    }

    #[test]
    fn deterministic() {
        let s = small("balanced");
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = WorkloadSpec { seed: 1, ..s.clone() };
        assert_ne!(generate(&s).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn category_shares_follow_mix() {
        for name in ["multi_turn_dominant", "balanced", "single_turn_dominant"] {
            let spec = WorkloadSpec { num_sessions: 1000, ..WorkloadSpec::preset(name).unwrap() };
            let trace = generate(&spec).unwrap();
            let n = trace.requests.len() as f64;
            assert!(n >= 1000.0, "{name}: {n}");
            for (c, count) in trace.category_counts() {
                let share = count as f64 / n;
                assert!((share - spec.mix[c]).abs() <= 0.02, "{name} {c}: {share}");
            }
        }
    }

    #[test]
    fn history_is_carried() {
        let trace = generate(&small("multi_turn_dominant")).unwrap();
        let mut by_session = std::collections::BTreeMap::<_, Vec<&Request>>::new();
        for r in &trace.requests {
            by_session.entry(r.session_id).or_default().push(r);
        }
        let mut checked = 0;
        for reqs in by_session.values() {
            for w in reqs.windows(2) {
                let (prev, next) = (w[0], w[1]);
                assert_eq!(next.turn_index, prev.turn_index + 1);
                assert!(next.arrival_time > prev.arrival_time);
                let mut carried = prev.prompt_tokens();
                for s in prev.output.iter().filter(|s| s.token_type != TokenType::Cot) {
                    carried.extend(&s.tokens);
                }
                let next_tokens = next.prompt_tokens();
                assert!(next_tokens.len() > carried.len());
                assert_eq!(&next_tokens[..carried.len()], &carried[..]);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn continuation_labels_consistent() {
        let trace = generate(&small("balanced")).unwrap();
        for r in &trace.requests {
            let later = trace.continuation(r.session_id, r.turn_index + 1).is_some();
            assert_eq!(r.continues, Some(later));
        }
    }

    #[test]
    fn tool_use_is_templated_single_turn() {
        let trace = generate(&WorkloadSpec::preset("tool_use").unwrap()).unwrap();
        let mut shared = 0usize;
        let mut total = 0usize;
        for r in &trace.requests {
            assert_eq!(r.turn_index, 0);
            assert_eq!(r.continues, Some(false));
            let tpl: usize = r.segments[..2].iter().map(TokenSegment::len).sum();
            shared += tpl;
            total += r.prompt_len();
            assert!(tpl as f64 / r.prompt_len() as f64 >= 0.83);
        }
        assert!(shared as f64 / total as f64 >= 0.83);
    }

    #[test]
    fn geometric_mean_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50_000;
        let mean = (0..n).map(|_| geometric(&mut rng, 3.6, 1000) as f64).sum::<f64>() / n as f64;
        assert!((mean - 3.6).abs() < 0.05, "{mean}");
    }
}

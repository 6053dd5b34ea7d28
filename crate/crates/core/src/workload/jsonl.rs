//! Conversation JSONL: one message per line, chained by `parent_id` or
//! grouped by `session_id`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::splitmix;
use super::{Interval, Request, RequestMeta, Result, TokenSegment, Trace, WorkloadError};
use crate::types::{Category, SessionId, TokenId, TokenType};

const SESSION_GAP_S: f64 = 24.0 * 3600.0;
const VOCAB: u32 = 32_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceFormat {
    #[default]
    ConversationJsonl,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JsonlRecord {
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "de_session")]
    pub session_id: Option<String>,
    pub timestamp_s: Option<f64>,
    pub role: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_type: Option<TokenType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_length: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<RequestMeta>,
    /// Marks assistant-authored text that is part of a prompt rather than a reply.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub in_prompt: bool,
}

/// Session ids may be strings or integers.
fn de_session<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let v = Option::<serde_json::Value>::deserialize(d)?;
    Ok(match v {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) => Some(s),
        Some(other) => Some(other.to_string()),
    })
}

fn default_type(role: &str) -> Option<TokenType> {
    Some(match role {
        "system" => TokenType::SystemPrompt,
        "user" => TokenType::UserQuery,
        "tool" => TokenType::ToolOutput,
        "assistant" => TokenType::Response,
        _ => return None,
    })
}

fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3))
}

struct Parsed {
    line: usize,
    id: String,
    parent: Option<String>,
    session: Option<String>,
    ts: f64,
    assistant: bool,
    segment: TokenSegment,
    category: Option<Category>,
    output_length: Option<u32>,
    meta: Option<RequestMeta>,
}

fn parse_line(line: usize, text: &str) -> Result<Parsed> {
    let r: JsonlRecord = serde_json::from_str(text)
        .map_err(|e| WorkloadError::ParseError { line, message: e.to_string() })?;
    let missing = |field: &str| WorkloadError::MissingField { line, field: field.to_string() };
    let id = r.id.ok_or_else(|| missing("id"))?;
    let ts = r.timestamp_s.ok_or_else(|| missing("timestamp_s"))?;
    if !ts.is_finite() {
        return Err(WorkloadError::ParseError { line, message: "timestamp_s must be finite".into() });
    }
    let role = r.role.ok_or_else(|| missing("role"))?;
    let token_type = match r.token_type {
        Some(t) => t,
        None => default_type(&role)
            .ok_or_else(|| WorkloadError::ParseError { line, message: format!("unknown role `{role}`") })?,
    };
    let tokens: Vec<TokenId> = if let Some(ts) = r.tokens {
        ts.into_iter().map(TokenId).collect()
    } else if let Some(n) = r.token_count {
        let base = hash_str(&id);
        (0..n as u64).map(|i| TokenId((splitmix(base ^ i) % VOCAB as u64) as u32)).collect()
    } else if let Some(text) = r.text {
        text.split_whitespace().map(|w| TokenId((hash_str(w) % VOCAB as u64) as u32)).collect()
    } else {
        return Err(missing("text|token_count|tokens"));
    };
    Ok(Parsed {
        line,
        id,
        parent: r.parent_id,
        session: r.session_id,
        ts,
        assistant: role == "assistant" && !r.in_prompt,
        segment: TokenSegment::new(token_type, tokens),
        category: r.category,
        output_length: r.output_length,
        meta: r.meta,
    })
}

fn root_of(i: usize, parent: &[Option<usize>]) -> usize {
    let mut cur = i;
    let mut steps = 0;
    while let Some(p) = parent[cur] {
        cur = p;
        steps += 1;
        if steps > parent.len() {
            break; // cycle
        }
    }
    cur
}

/// Parses conversation JSONL text into a trace.
pub fn parse_trace(name: &str, reader: impl BufRead) -> Result<Trace> {
    let mut recs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        recs.push(parse_line(i + 1, &line)?);
    }

    let by_id: HashMap<&str, usize> = recs.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let parent: Vec<Option<usize>> =
        recs.iter().map(|r| r.parent.as_deref().and_then(|p| by_id.get(p).copied())).collect();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut group_order: Vec<String> = Vec::new();
    for i in 0..recs.len() {
        let key = match &recs[i].session {
            Some(s) => format!("s:{s}"),
            None => {
                let root = root_of(i, &parent);
                match &recs[root].session {
                    Some(s) => format!("s:{s}"),
                    None => format!("r:{}", recs[root].id),
                }
            }
        };
        let g = groups.entry(key.clone()).or_default();
        if g.is_empty() {
            group_order.push(key);
        }
        g.push(i);
    }

    let mut used: HashSet<u64> = HashSet::new();
    for key in &group_order {
        if let Some(n) = key.strip_prefix("s:").and_then(|s| s.parse::<u64>().ok()) {
            used.insert(n);
        }
    }
    let mut next_free = 0u64;
    let mut fresh = |used: &mut HashSet<u64>| {
        while used.contains(&next_free) {
            next_free += 1;
        }
        used.insert(next_free);
        SessionId(next_free)
    };

    let mut requests = Vec::new();
    let mut intervals = Vec::new();
    for key in &group_order {
        // File order is conversation order; timestamps may be skewed.
        let mut idx = groups[key].clone();
        idx.sort_by_key(|&i| recs[i].line);
        let category = idx.iter().find_map(|&i| recs[i].category).unwrap_or(Category::Chat);
        let numeric = key.strip_prefix("s:").and_then(|s| s.parse::<u64>().ok());
        let mut session = match numeric {
            Some(n) => SessionId(n),
            None => fresh(&mut used),
        };
        let mut history: Vec<TokenSegment> = Vec::new();
        let mut turn = 0u32;
        let mut last_req: Option<(usize, f64)> = None; // (index into requests, raw timestamp)
        let mut run: Vec<usize> = Vec::new();

        let mut flush = |run: &mut Vec<usize>,
                         history: &mut Vec<TokenSegment>,
                         last_req: &mut Option<(usize, f64)>,
                         turn: &mut u32,
                         session: &mut SessionId,
                         requests: &mut Vec<Request>,
                         used: &mut HashSet<u64>| {
            if run.is_empty() {
                return;
            }
            let ts = recs[run[0]].ts;
            let mut arrival = ts;
            if let Some((prev, prev_ts)) = *last_req {
                let gap = ts - prev_ts;
                if gap >= SESSION_GAP_S {
                    *session = fresh(used);
                    *turn = 0;
                } else {
                    requests[prev].continues = Some(true);
                    if gap > 0.0 {
                        intervals.push(Interval { session_id: *session, turn_index: *turn, style: category.style(), seconds: gap });
                    } else {
                        arrival = requests[prev].arrival_time + 1e-6;
                    }
                }
            }
            for &i in run.iter() {
                history.push(recs[i].segment.clone());
            }
            let first = &recs[run[0]];
            requests.push(Request {
                arrival_time: arrival,
                session_id: *session,
                turn_index: *turn,
                segments: history.clone(),
                output: Vec::new(),
                output_length: run.iter().find_map(|&i| recs[i].output_length).unwrap_or(0),
                category,
                meta: first.meta.unwrap_or_default(),
                continues: Some(false),
            });
            *last_req = Some((requests.len() - 1, ts));
            *turn += 1;
            run.clear();
        };

        for &i in &idx {
            let r = &recs[i];
            if r.assistant {
                flush(&mut run, &mut history, &mut last_req, &mut turn, &mut session, &mut requests, &mut used);
                if let Some((q, _)) = last_req {
                    requests[q].output.push(r.segment.clone());
                }
                if r.segment.token_type != TokenType::Cot {
                    history.push(r.segment.clone());
                }
            } else {
                if run.first().is_some_and(|&j| recs[j].ts != r.ts) {
                    flush(&mut run, &mut history, &mut last_req, &mut turn, &mut session, &mut requests, &mut used);
                }
                run.push(i);
            }
        }
        flush(&mut run, &mut history, &mut last_req, &mut turn, &mut session, &mut requests, &mut used);
    }

    for r in &mut requests {
        if r.output_length == 0 {
            r.output_length = r.output.iter().map(TokenSegment::len).sum::<usize>().max(1) as u32;
        }
    }
    requests.sort_by(|a, b| {
        a.arrival_time
            .total_cmp(&b.arrival_time)
            .then(a.session_id.cmp(&b.session_id))
            .then(a.turn_index.cmp(&b.turn_index))
    });
    Ok(Trace { name: name.to_string(), requests, intervals })
}

pub fn load_trace(path: &Path, _format: TraceFormat) -> Result<Trace> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_trace(&name, BufReader::new(File::open(path)?))
}

fn role_of(t: TokenType) -> &'static str {
    match t {
        TokenType::SystemPrompt => "system",
        TokenType::UserQuery | TokenType::Cot => "user",
        TokenType::ToolOutput => "tool",
        TokenType::Response | TokenType::Decode => "assistant",
    }
}

/// Writes `trace` as JSONL: each request contributes the segments it adds to
/// its session's history, followed by its output as assistant records.
pub fn write_jsonl(trace: &Trace, out: impl Write) -> Result<()> {
    let mut w = BufWriter::new(out);
    let mut carried: HashMap<SessionId, (usize, String)> = HashMap::new();
    for r in &trace.requests {
        let (skip, mut parent) = match carried.get(&r.session_id) {
            Some((n, p)) => (*n, Some(p.clone())),
            None => (0, None),
        };
        let emit = |rec: JsonlRecord, w: &mut BufWriter<_>| -> Result<()> {
            serde_json::to_writer(&mut *w, &rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            Ok(())
        };
        for (j, s) in r.segments.iter().enumerate().skip(skip) {
            let id = format!("s{}-t{}-p{}", r.session_id, r.turn_index, j);
            let first = j == skip;
            emit(
                JsonlRecord {
                    id: Some(id.clone()),
                    parent_id: parent.replace(id),
                    session_id: Some(r.session_id.to_string()),
                    timestamp_s: Some(r.arrival_time),
                    role: Some(role_of(s.token_type).into()),
                    token_type: Some(s.token_type),
                    tokens: Some(s.tokens.iter().map(|t| t.0).collect()),
                    category: Some(r.category),
                    output_length: first.then_some(r.output_length),
                    meta: first.then_some(r.meta),
                    in_prompt: role_of(s.token_type) == "assistant",
                    ..Default::default()
                },
                &mut w,
            )?;
        }
        let mut next = r.segments.len();
        for (j, s) in r.output.iter().enumerate() {
            let id = format!("s{}-t{}-a{}", r.session_id, r.turn_index, j);
            emit(
                JsonlRecord {
                    id: Some(id.clone()),
                    parent_id: parent.replace(id),
                    session_id: Some(r.session_id.to_string()),
                    timestamp_s: Some(r.arrival_time),
                    role: Some("assistant".into()),
                    token_type: Some(s.token_type),
                    tokens: Some(s.tokens.iter().map(|t| t.0).collect()),
                    category: Some(r.category),
                    ..Default::default()
                },
                &mut w,
            )?;
            if s.token_type != TokenType::Cot {
                next += 1;
            }
        }
        carried.insert(r.session_id, (next, parent.unwrap_or_default()));
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{generate, WorkloadSpec};

    fn parse(s: &str) -> Result<Trace> {
        parse_trace("t", s.as_bytes())
    }

    #[test]
    fn parent_chain_interval() {
        let t = parse(
            r#"{"id":"a","timestamp_s":100,"role":"user","text":"hello there"}
{"id":"b","parent_id":"a","timestamp_s":210.6,"role":"user","token_count":5}"#,
        )
        .unwrap();
        assert_eq!(t.requests.len(), 2);
        assert_eq!(t.intervals.len(), 1);
        assert!((t.intervals[0].seconds - 110.6).abs() < 1e-9);
        assert_eq!(t.requests[1].prompt_len(), 7);
        assert_eq!(t.requests[0].continues, Some(true));
    }

    #[test]
    fn non_positive_interval_discarded() {
        let t = parse(
            r#"{"id":"a","session_id":"x","timestamp_s":100,"role":"user","token_count":3}
{"id":"b","session_id":"x","timestamp_s":100,"role":"assistant","token_count":3}
{"id":"c","parent_id":"b","timestamp_s":90,"role":"user","token_count":3}"#,
        )
        .unwrap();
        assert!(t.intervals.is_empty());
        assert_eq!(t.requests.len(), 2);
        assert!(t.requests[1].arrival_time > t.requests[0].arrival_time);
    }

    #[test]
    fn day_gap_splits_sessions() {
        let t = parse(
            r#"{"id":"a","session_id":7,"timestamp_s":0,"role":"user","token_count":3}
{"id":"b","session_id":7,"timestamp_s":90000,"role":"user","token_count":3}"#,
        )
        .unwrap();
        assert_eq!(t.num_sessions(), 2);
        assert!(t.intervals.is_empty());
        assert_eq!(t.requests[0].session_id, SessionId(7));
        assert_eq!(t.requests[1].turn_index, 0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("{\"id\":\"a\",\"timestamp_s\":1,\"role\":\"user\",\"token_count\":1}\nnot json").unwrap_err();
        assert!(matches!(e, WorkloadError::ParseError { line: 2, .. }));
        let e = parse(r#"{"id":"a","role":"user","token_count":1}"#).unwrap_err();
        assert!(matches!(e, WorkloadError::MissingField { line: 1, ref field } if field == "timestamp_s"));
        let e = parse(r#"{"id":"a","timestamp_s":1,"role":"user"}"#).unwrap_err();
        assert!(matches!(e, WorkloadError::MissingField { .. }));
    }

    #[test]
    fn same_timestamp_records_form_one_request() {
        let t = parse(
            r#"{"id":"s","session_id":"q","timestamp_s":5,"role":"system","token_count":4}
{"id":"u","session_id":"q","timestamp_s":5,"role":"user","token_count":2}
{"id":"r","session_id":"q","timestamp_s":5,"role":"assistant","token_count":6}"#,
        )
        .unwrap();
        assert_eq!(t.requests.len(), 1);
        let r = &t.requests[0];
        assert_eq!(r.segments.len(), 2);
        assert_eq!(r.segments[0].token_type, TokenType::SystemPrompt);
        assert_eq!(r.output_length, 6);
    }

    #[test]
    fn generated_trace_round_trips() {
        let spec = WorkloadSpec { num_sessions: 60, ..WorkloadSpec::preset("balanced").unwrap() };
        let trace = generate(&spec).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&trace, &mut buf).unwrap();
        let back = parse_trace(&trace.name, buf.as_slice()).unwrap();
        assert_eq!(back.requests.len(), trace.requests.len());
        for (a, b) in trace.requests.iter().zip(&back.requests) {
            assert_eq!(a.session_id, b.session_id);
            assert_eq!(a.turn_index, b.turn_index);
            assert_eq!(a.prompt_tokens(), b.prompt_tokens());
            assert_eq!(a.prompt_types(), b.prompt_types());
            assert_eq!(a.continues, b.continues);
            assert_eq!(a.output_length, b.output_length);
        }
        assert_eq!(back.intervals.len(), trace.intervals.len());
    }

    #[test]
    fn prompt_embedded_response_stays_in_prompt() {
        let trace = crate::workload::reuse_probe(&crate::workload::ProbeSpec { num_requests: 20, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&trace, &mut buf).unwrap();
        let back = parse_trace(&trace.name, buf.as_slice()).unwrap();
        assert_eq!(back.requests.len(), 20);
        for (a, b) in trace.requests.iter().zip(&back.requests) {
            assert_eq!(a.prompt_tokens(), b.prompt_tokens());
            assert_eq!(a.prompt_types(), b.prompt_types());
        }
    }
}

//! Goal-driven exploration of one page: split the rendered page into
//! segments, extract goal-relevant content from each in order, and carry a
//! workspace forward between extractions.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::policy::{Message, Policy, PolicyError, PolicyRequest, INNER_MAX_COMPLETION_TOKENS};
use crate::prompts;
use crate::tokens::Counter;

pub const DEFAULT_SEGMENT_BUDGET: u64 = 16_384;
pub const MIN_SEGMENT_BUDGET: u64 = 256;
pub const FALLBACK_EVIDENCE_TOKENS: u64 = 2_000;

const OPEN: &str = "<useful_info>";
const CLOSE: &str = "</useful_info>";
const REPAIR: &str = "Your previous reply was not valid. Reply with only one JSON object with the keys \"rational\", \"evidence\" and \"summary\" (all strings), wrapped inside <useful_info> and </useful_info> tags.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// 1-based.
    pub index: usize,
    pub text: String,
    pub token_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workspace {
    pub rational: String,
    pub evidence: String,
    pub summary: String,
    /// Some extraction fell back to raw segment text.
    #[serde(default)]
    pub degraded: bool,
}

#[derive(Serialize)]
struct Payload<'a> {
    rational: &'a str,
    evidence: &'a str,
    summary: &'a str,
}

impl Workspace {
    /// The three-key JSON object (without tags).
    pub fn payload_json(&self) -> String {
        serde_json::to_string(&Payload {
            rational: &self.rational,
            evidence: &self.evidence,
            summary: &self.summary,
        })
        .expect("workspace serializes")
    }

    pub fn to_useful_info(&self) -> String {
        format!("{OPEN}{}{CLOSE}", self.payload_json())
    }

    pub fn is_empty(&self) -> bool {
        self.rational.is_empty() && self.evidence.is_empty() && self.summary.is_empty()
    }
}

/// One policy-backed extraction (the last attempt, when a repair was needed).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub goal: String,
    pub segment: Segment,
    pub prior: Option<Workspace>,
    pub output: Workspace,
    pub raw_completion: String,
    /// Exact messages of the request that produced `raw_completion`.
    pub messages: Vec<Message>,
    /// Outer turn that triggered this extraction.
    #[serde(default)]
    pub turn_index: usize,
    #[serde(default)]
    pub page_url: String,
}

#[derive(Debug, Clone)]
pub struct InnerConfig {
    pub segment_budget: u64,
    pub max_completion_tokens: u32,
    pub counter: Counter,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            segment_budget: DEFAULT_SEGMENT_BUDGET,
            max_completion_tokens: INNER_MAX_COMPLETION_TOKENS,
            counter: Counter::default(),
        }
    }
}

/// Split `text` into pieces each ending just after a run of `sep`.
fn split_keep<'a>(text: &'a str, sep: &str) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while let Some(off) = text[i..].find(sep) {
        let mut end = i + off + sep.len();
        while text[end..].starts_with('\n') {
            end += 1;
        }
        out.push(&text[start..end]);
        start = end;
        i = end;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// Lines carrying an element marker must stay whole.
fn indivisible(line: &str) -> bool {
    line.contains("[id=")
}

/// Partition `text` into segments of at most `budget` counted tokens,
/// splitting at blank lines, then line ends, then anywhere. Concatenating the
/// segments gives back `text` exactly.
pub fn segment_page(text: &str, budget: u64, counter: &Counter) -> Vec<Segment> {
    let budget = budget.max(MIN_SEGMENT_BUDGET);
    let mut pieces: Vec<&str> = Vec::new();
    for block in split_keep(text, "\n\n") {
        if counter.count(block) <= budget {
            pieces.push(block);
            continue;
        }
        for line in split_keep(block, "\n") {
            if counter.count(line) <= budget || indivisible(line) {
                pieces.push(line);
                continue;
            }
            let mut rest = line;
            while !rest.is_empty() {
                let mut head = counter.prefix_within(rest, budget);
                if head.is_empty() {
                    // a single char over budget: take it anyway
                    let n = rest.chars().next().map_or(rest.len(), char::len_utf8);
                    head = &rest[..n];
                }
                pieces.push(head);
                rest = &rest[head.len()..];
            }
        }
    }

    let mut out: Vec<String> = Vec::new();
    let mut current = String::new();
    for p in pieces {
        let before = current.len();
        current.push_str(p);
        if before > 0 && counter.count(&current) > budget {
            current.truncate(before);
            out.push(std::mem::replace(&mut current, p.to_string()));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, text)| Segment {
            index: i + 1,
            token_count: counter.count(&text),
            text,
        })
        .collect()
}

/// Parse the first `<useful_info>{...}</useful_info>` block of a completion.
pub fn parse_useful_info(completion: &str) -> Option<Workspace> {
    let start = completion.find(OPEN)? + OPEN.len();
    let end = start + completion[start..].find(CLOSE)?;
    let v: Value = serde_json::from_str(completion[start..end].trim()).ok()?;
    let obj = v.as_object()?;
    let field = |k: &str| obj.get(k).and_then(Value::as_str).map(str::to_string);
    Some(Workspace {
        rational: field("rational")?,
        evidence: field("evidence")?,
        summary: field("summary")?,
        degraded: false,
    })
}

/// Messages for extracting from `segment` given the workspace so far.
pub fn extraction_messages(segment: &Segment, goal: &str, prior: Option<&Workspace>) -> Vec<Message> {
    let user = match prior {
        None => prompts::inner_user(&segment.text, goal),
        Some(w) => prompts::inner_user_incremental(&segment.text, goal, &w.evidence, &w.summary),
    };
    vec![Message::system(prompts::inner_system()), Message::user(user)]
}

fn fallback(segment: &Segment, prior: Option<&Workspace>, counter: &Counter) -> Workspace {
    let kept = counter.prefix_within(&segment.text, FALLBACK_EVIDENCE_TOKENS);
    let evidence = match prior.map(|w| w.evidence.as_str()).filter(|e| !e.is_empty()) {
        Some(e) => format!("{e}\n\n{kept}"),
        None => kept.to_string(),
    };
    Workspace {
        rational: "Extraction output was malformed; the beginning of the page segment is kept verbatim.".into(),
        evidence,
        summary: prior.map(|w| w.summary.clone()).unwrap_or_default(),
        degraded: true,
    }
}

/// Extract from one segment: one repair retry, then a deterministic fallback.
pub fn extract(
    segment: &Segment,
    goal: &str,
    prior: Option<&Workspace>,
    policy: &dyn Policy,
    config: &InnerConfig,
) -> Result<ExtractionRecord, PolicyError> {
    let mut messages = extraction_messages(segment, goal, prior);
    let mut completion = policy.complete(&PolicyRequest::new(messages.clone(), config.max_completion_tokens))?;
    let mut parsed = parse_useful_info(&completion);
    if parsed.is_none() {
        let mut retry = messages.clone();
        retry.push(Message::assistant(completion.clone()));
        retry.push(Message::user(REPAIR));
        completion = policy.complete(&PolicyRequest::new(retry.clone(), config.max_completion_tokens))?;
        messages = retry;
        parsed = parse_useful_info(&completion);
    }
    let mut output = parsed.unwrap_or_else(|| fallback(segment, prior, &config.counter));
    output.degraded |= prior.is_some_and(|w| w.degraded);
    Ok(ExtractionRecord {
        goal: goal.to_string(),
        segment: segment.clone(),
        prior: prior.cloned(),
        output,
        raw_completion: completion,
        messages,
        turn_index: 0,
        page_url: String::new(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Exploration {
    pub workspace: Workspace,
    pub records: Vec<ExtractionRecord>,
}

/// Visit every segment once, in order, threading the workspace through.
pub fn explore_page(page_text: &str, goal: &str, policy: &dyn Policy, config: &InnerConfig) -> Result<Exploration, PolicyError> {
    let mut records: Vec<ExtractionRecord> = Vec::new();
    for segment in segment_page(page_text, config.segment_budget, &config.counter) {
        let prior = records.last().map(|r| &r.output);
        let record = extract(&segment, goal, prior, policy, config)?;
        records.push(record);
    }
    let workspace = records.last().map(|r| r.output.clone()).unwrap_or_default();
    Ok(Exploration { workspace, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{FnPolicy, ScriptedPolicy};

    fn c() -> Counter {
        Counter::default()
    }

    #[test]
    fn small_text_single_segment() {
        let s = segment_page("hello\n\nworld", 256, &c());
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].text, "hello\n\nworld");
        assert_eq!(s[0].index, 1);
    }

    #[test]
    fn empty_text_no_segments() {
        assert!(segment_page("", 256, &c()).is_empty());
    }

    #[test]
    fn ten_blocks_three_per_segment() {
        // each block is 300 bytes + "\n\n" = 302 bytes; three fit in 1024 bytes (256 tokens)
        let block = "x".repeat(300);
        let text = vec![block; 10].join("\n\n");
        let segs = segment_page(&text, 256, &c());
        // greedy oracle over block sizes
        let sizes: Vec<usize> = split_keep(&text, "\n\n").iter().map(|b| b.len()).collect();
        let mut expect = 0;
        let mut cur = 0usize;
        for s in sizes {
            if cur > 0 && (cur + s).div_ceil(4) > 256 {
                expect += 1;
                cur = 0;
            }
            cur += s;
        }
        expect += 1;
        assert_eq!(expect, 4);
        assert_eq!(segs.len(), 4);
        assert!(segs[..3].iter().all(|s| s.text.ends_with("\n\n")));
        assert_eq!(segs.iter().map(|s| s.text.as_str()).collect::<String>(), text);
    }

    #[test]
    fn long_line_is_hard_split_but_marker_line_is_not() {
        let plain = "y".repeat(3000);
        let segs = segment_page(&plain, 256, &c());
        assert!(segs.len() >= 3);
        assert!(segs.iter().all(|s| s.token_count <= 256));
        let marker = format!("[id=e1] <link> \"{}\"", "z".repeat(3000));
        let text = format!("a\n{marker}\nb");
        let segs = segment_page(&text, 256, &c());
        assert_eq!(segs.iter().filter(|s| s.token_count > 256).count(), 1);
        assert!(segs.iter().any(|s| s.text.contains(&marker)));
        assert_eq!(segs.iter().map(|s| s.text.as_str()).collect::<String>(), text);
    }

    #[test]
    fn useful_info_parsing() {
        let ok = "noise <useful_info>{\"rational\":\"r\",\"evidence\":\"e\",\"summary\":\"s\"}</useful_info>";
        let w = parse_useful_info(ok).unwrap();
        assert_eq!((w.rational.as_str(), w.evidence.as_str(), w.summary.as_str()), ("r", "e", "s"));
        assert!(parse_useful_info("{\"rational\":\"r\",\"evidence\":\"e\",\"summary\":\"s\"}").is_none());
        assert!(parse_useful_info("<useful_info>{\"rational\":\"r\"}</useful_info>").is_none());
        assert_eq!(w.to_useful_info(), "<useful_info>{\"rational\":\"r\",\"evidence\":\"e\",\"summary\":\"s\"}</useful_info>");
    }

    #[test]
    fn scripted_extract_returns_fields() {
        let seg = &segment_page("some page", 256, &c())[0];
        let p = ScriptedPolicy::from_script(["<useful_info>{\"rational\":\"r\",\"evidence\":\"e\",\"summary\":\"s\"}</useful_info>"]);
        let r = extract(seg, "goal", None, &p, &InnerConfig::default()).unwrap();
        assert_eq!(r.output, Workspace { rational: "r".into(), evidence: "e".into(), summary: "s".into(), degraded: false });
        assert_eq!(r.messages.len(), 2);
    }

    #[test]
    fn prose_twice_falls_back() {
        let seg = &segment_page("the page body", 256, &c())[0];
        let p = ScriptedPolicy::from_script(["just prose", "still prose"]);
        let r = extract(seg, "goal", None, &p, &InnerConfig::default()).unwrap();
        assert!(r.output.degraded);
        assert_eq!(r.output.evidence, "the page body");
        assert_eq!(r.raw_completion, "still prose");
        assert_eq!(r.messages.len(), 4);
    }

    #[test]
    fn incremental_prompt_carries_prior() {
        let seg = &segment_page("page", 256, &c())[0];
        let prior = Workspace { rational: "r".into(), evidence: "PRIOR-EVIDENCE".into(), summary: "PRIOR-SUMMARY".into(), degraded: false };
        let msgs = extraction_messages(seg, "g", Some(&prior));
        assert!(msgs[1].content.contains("## **Existing Evidence**\nPRIOR-EVIDENCE"));
        assert!(msgs[1].content.contains("## **Existing Summary**\nPRIOR-SUMMARY"));
    }

    #[test]
    fn explore_counts_and_isolates_segments() {
        let blocks: Vec<String> = (0..12).map(|i| format!("BLOCK{i:02} {}", "w".repeat(400))).collect();
        let text = blocks.join("\n\n");
        let cfg = InnerConfig { segment_budget: 256, ..InnerConfig::default() };
        let segs = segment_page(&text, 256, &cfg.counter);
        let p = FnPolicy(|req: &PolicyRequest| {
            let user = &req.messages[1].content;
            let seen: Vec<&str> = user.match_indices("BLOCK").map(|(i, _)| &user[i..i + 7]).collect();
            Ok(format!("<useful_info>{{\"rational\":\"\",\"evidence\":\"{}\",\"summary\":\"\"}}</useful_info>", seen.join(",")))
        });
        let ex = explore_page(&text, "goal", &p, &cfg).unwrap();
        assert_eq!(ex.records.len(), segs.len());
        for (r, s) in ex.records.iter().zip(&segs) {
            assert_eq!(&r.segment, s);
            // the prompt holds this segment's blocks plus only what the prior workspace carried
            let own: Vec<&str> = s.text.match_indices("BLOCK").map(|(i, _)| &s.text[i..i + 7]).collect();
            let prior: Vec<String> = r.prior.as_ref().map_or(vec![], |w| w.evidence.split(',').map(str::to_string).collect());
            for b in r.output.evidence.split(',').filter(|b| !b.is_empty()) {
                assert!(own.contains(&b) || prior.iter().any(|p| p == b), "{b}");
            }
        }
        assert!(explore_page("", "g", &p, &cfg).unwrap().records.is_empty());
    }
}

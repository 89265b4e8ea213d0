//! Trajectory filtering (format, tool-call validity, answer correctness) and
//! emission of masked supervision samples for both loops.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::outer_loop::{parse_step, EpisodeConfig, Termination, Trajectory};
use crate::policy::{Message, MessageRole, Policy, PolicyError, PolicyRequest};
use crate::sandbox::{generate_site, run_task, OracleSolver, SiteParams, TaskDef};

pub const SAMPLE_SCHEMA: &str = "nestbrowse.sample.v1";
pub const JUDGE_URL_ENV: &str = "NESTBROWSE_JUDGE_URL";
pub const JUDGE_MODEL_ENV: &str = "NESTBROWSE_JUDGE_MODEL";
pub const JUDGE_KEY_ENV: &str = "NESTBROWSE_JUDGE_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub task_id: String,
    pub answer: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JudgeError {
    #[error("JudgeUnavailable: {0}")]
    Unavailable(String),
}

pub trait Judge: Send + Sync {
    fn judge(&self, question: &str, final_answer: &str, gold: &GoldAnswer) -> Result<Verdict, JudgeError>;
}

/// Lowercase, trim, collapse whitespace, strip trailing punctuation.
pub fn normalize_answer(s: &str) -> String {
    let mut out = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    loop {
        let trimmed = out.trim_end_matches(['.', ',', '!', '?', ';', ':']).trim_end();
        if trimmed.len() == out.len() {
            return out;
        }
        out = trimmed.to_string();
    }
}

/// Normalized exact match against the answer or any alias.
#[derive(Debug, Clone, Copy, Default)]
pub struct SandboxJudge;

impl Judge for SandboxJudge {
    fn judge(&self, _question: &str, final_answer: &str, gold: &GoldAnswer) -> Result<Verdict, JudgeError> {
        let got = normalize_answer(final_answer);
        let hit = std::iter::once(&gold.answer).chain(&gold.aliases).find(|g| normalize_answer(g) == got);
        Ok(match hit {
            Some(g) => Verdict {
                correct: true,
                rationale: format!("matches {g:?} after normalization"),
            },
            None => Verdict {
                correct: false,
                rationale: format!("{got:?} matches neither the answer nor an alias"),
            },
        })
    }
}

const JUDGE_PROMPT: &str = "Judge whether the response to the question is correct, based only on the reference answer.

[question]: {question}

[response]: {response}

[reference answer]: {reference}

Explain in one or two sentences whether the response states the same answer as the reference (accept equivalent names, spellings and formats; reject answers that are ambiguous, partial or different). Then write a last line that is exactly CORRECT or INCORRECT.";

/// Grading by a chat-completion model behind an OpenAI-compatible endpoint.
pub struct RemoteJudge {
    url: String,
    model: String,
    key: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteJudge {
    pub fn new(url: impl Into<String>, model: impl Into<String>, key: Option<String>) -> Result<Self, JudgeError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| JudgeError::Unavailable(e.to_string()))?;
        Ok(RemoteJudge { url: url.into(), model: model.into(), key, client })
    }

    pub fn from_env() -> Option<Result<Self, JudgeError>> {
        let url = std::env::var(JUDGE_URL_ENV).ok()?;
        let model = std::env::var(JUDGE_MODEL_ENV).unwrap_or_default();
        Some(RemoteJudge::new(url, model, std::env::var(JUDGE_KEY_ENV).ok()))
    }

    pub fn prompt(question: &str, response: &str, gold: &GoldAnswer) -> String {
        let mut reference = gold.answer.clone();
        if !gold.aliases.is_empty() {
            reference.push_str(&format!(" (also accepted: {})", gold.aliases.join("; ")));
        }
        crate::prompts::fill(
            JUDGE_PROMPT,
            &[("question", question), ("response", response), ("reference", &reference)],
        )
    }
}

/// Last non-empty line decides.
fn parse_grade(text: &str) -> Option<bool> {
    match text.lines().rev().find(|l| !l.trim().is_empty())?.trim().trim_matches(['*', '.']).to_uppercase().as_str() {
        "CORRECT" => Some(true),
        "INCORRECT" => Some(false),
        _ => None,
    }
}

impl Judge for RemoteJudge {
    fn judge(&self, question: &str, final_answer: &str, gold: &GoldAnswer) -> Result<Verdict, JudgeError> {
        let unavailable = |e: String| JudgeError::Unavailable(e);
        let body = json!({
            "model": self.model,
            "messages": [Message::user(RemoteJudge::prompt(question, final_answer, gold))],
            "temperature": 0,
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(k) = &self.key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("HTTP {}", resp.status())));
        }
        let v: Value = resp.json().map_err(|e| unavailable(e.to_string()))?;
        let text = v["choices"][0]["message"]["content"].as_str().unwrap_or_default();
        let correct = parse_grade(text).ok_or_else(|| unavailable(format!("unparseable judge reply: {text:?}")))?;
        Ok(Verdict { correct, rationale: text.trim().to_string() })
    }
}

pub fn judge_answer(question: &str, final_answer: &str, gold: &GoldAnswer, judge: &dyn Judge) -> Result<Verdict, JudgeError> {
    judge.judge(question, final_answer, gold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    FormatViolation,
    ToolCallHallucination,
    IncorrectAnswer,
}

impl Violation {
    pub const ALL: [Violation; 3] = [Violation::FormatViolation, Violation::ToolCallHallucination, Violation::IncorrectAnswer];

    pub fn as_str(self) -> &'static str {
        match self {
            Violation::FormatViolation => "format_violation",
            Violation::ToolCallHallucination => "tool_call_hallucination",
            Violation::IncorrectAnswer => "incorrect_answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub task_id: String,
    pub accepted: bool,
    pub violations: BTreeSet<Violation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_verdict: Option<Verdict>,
}

/// The judge could not grade; the trajectory goes to the retry queue.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("held {task_id}: {reason}")]
pub struct Held {
    pub task_id: String,
    pub reason: String,
}

/// Whether every stored turn still parses as a well-formed step.
pub fn format_ok(t: &Trajectory) -> bool {
    t.termination != Termination::FormatViolation && t.turns.iter().all(|turn| parse_step(&turn.assistant_text()).is_ok())
}

pub fn has_call_errors(t: &Trajectory) -> bool {
    !t.call_errors.is_empty() || t.turns.iter().any(|turn| turn.call_error.is_some())
}

/// Apply the three rejection criteria, and nothing else.
pub fn reject(t: &Trajectory, gold: &GoldAnswer, judge: &dyn Judge) -> Result<RejectionReport, Held> {
    let mut violations = BTreeSet::new();
    if !format_ok(t) {
        violations.insert(Violation::FormatViolation);
    }
    if has_call_errors(t) {
        violations.insert(Violation::ToolCallHallucination);
    }
    let verdict = match t.final_answer.as_deref().filter(|a| !a.trim().is_empty()) {
        None => Verdict { correct: false, rationale: "no final answer".into() },
        Some(a) => judge.judge(&t.question, a, gold).map_err(|e| Held {
            task_id: t.task_id.clone(),
            reason: e.to_string(),
        })?,
    };
    if !verdict.correct {
        violations.insert(Violation::IncorrectAnswer);
    }
    Ok(RejectionReport {
        task_id: t.task_id.clone(),
        accepted: violations.is_empty(),
        violations,
        judge_verdict: Some(verdict),
    })
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    /// In input order.
    pub reports: Vec<RejectionReport>,
    pub held: Vec<(Trajectory, String)>,
}

/// Filter a batch; trajectories without a gold answer or a working judge are held.
pub fn filter_batch(trajectories: &[Trajectory], golds: &BTreeMap<String, GoldAnswer>, judge: &dyn Judge) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for t in trajectories {
        let Some(gold) = golds.get(&t.task_id) else {
            out.held.push((t.clone(), format!("no gold answer for {}", t.task_id)));
            continue;
        };
        match reject(t, gold, judge) {
            Ok(r) => out.reports.push(r),
            Err(h) => out.held.push((t.clone(), h.reason)),
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub by_violation: BTreeMap<Violation, usize>,
}

pub fn filter_stats(reports: &[RejectionReport]) -> FilterStats {
    let mut s = FilterStats {
        total: reports.len(),
        by_violation: Violation::ALL.iter().map(|v| (*v, 0)).collect(),
        ..FilterStats::default()
    };
    for r in reports {
        if r.accepted {
            s.accepted += 1;
        } else {
            s.rejected += 1;
        }
        for v in &r.violations {
            *s.by_violation.entry(*v).or_default() += 1;
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Outer,
    Inner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub schema: String,
    pub kind: SampleKind,
    pub task_id: String,
    /// Outer: the turn index. Inner: the extraction record index.
    pub index: usize,
    pub prompt_messages: Vec<Message>,
    pub target: String,
    /// Half-open character ranges of `target` that carry loss.
    pub mask_spans: Vec<(usize, usize)>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitOptions {
    pub lambda_out: f64,
    pub lambda_in: f64,
    pub supervise_tool_responses: bool,
}

impl Default for EmitOptions {
    fn default() -> Self {
        EmitOptions { lambda_out: 1.0, lambda_in: 1.0, supervise_tool_responses: false }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid weight: {0}")]
    InvalidWeight(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: String, line: usize, source: serde_json::Error },
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Char span of `<tag>…</tag>` (tags included) starting at char offset `from`.
fn element_span(text: &str, tag: &str, from_byte: usize) -> Option<(usize, usize, usize)> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = from_byte + text[from_byte..].find(&open)?;
    let end = start + text[start..].find(&close)? + close.len();
    Some((char_len(&text[..start]), char_len(&text[..end]), end))
}

/// Outer samples, one per turn, then inner samples, one per extraction record.
pub fn emit_samples(t: &Trajectory, opts: &EmitOptions) -> Result<Vec<TrainingSample>, PipelineError> {
    for (name, w) in [("lambda_out", opts.lambda_out), ("lambda_in", opts.lambda_in)] {
        if !(w.is_finite() && w > 0.0) {
            return Err(PipelineError::InvalidWeight(format!("{name} must be positive, got {w}")));
        }
    }
    let mut out = Vec::with_capacity(t.turns.len() + t.extraction_records.len());
    for (i, turn) in t.turns.iter().enumerate() {
        let mut target = turn.assistant_text();
        let mut spans = Vec::new();
        let mut at = 0;
        for tag in ["think", "tool_call", "answer"] {
            if let Some((s, e, end_byte)) = element_span(&target, tag, at) {
                spans.push((s, e));
                at = end_byte;
            }
        }
        if opts.supervise_tool_responses {
            if let Some(r) = turn.response_text() {
                target.push('\n');
                let s = char_len(&target);
                target.push_str(&r);
                spans.push((s, char_len(&target)));
            }
        }
        out.push(TrainingSample {
            schema: SAMPLE_SCHEMA.into(),
            kind: SampleKind::Outer,
            task_id: t.task_id.clone(),
            index: i,
            prompt_messages: t.prompt_for_turn(i),
            target,
            mask_spans: spans,
            weight: opts.lambda_out,
        });
    }
    for (i, r) in t.extraction_records.iter().enumerate() {
        let n = char_len(&r.raw_completion);
        out.push(TrainingSample {
            schema: SAMPLE_SCHEMA.into(),
            kind: SampleKind::Inner,
            task_id: t.task_id.clone(),
            index: i,
            prompt_messages: r.messages.clone(),
            target: r.raw_completion.clone(),
            mask_spans: if n > 0 { vec![(0, n)] } else { Vec::new() },
            weight: opts.lambda_in,
        });
    }
    Ok(out)
}

/// Spans sorted, disjoint, non-empty and inside the target.
pub fn spans_well_formed(s: &TrainingSample) -> bool {
    let n = char_len(&s.target);
    s.mask_spans.iter().all(|&(a, b)| a < b && b <= n) && s.mask_spans.windows(2).all(|w| w[0].1 <= w[1].0)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| PipelineError::Io { path: p.clone(), source })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PipelineError::Io { path: p.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| PipelineError::Json { path: p.clone(), line: i + 1, source })?);
    }
    Ok(out)
}

/// Single appender for one JSONL file, shareable across threads.
#[derive(Clone)]
pub struct JsonlWriter {
    path: String,
    inner: Arc<Mutex<BufWriter<File>>>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self, PipelineError> {
        let p = path.display().to_string();
        let file = File::create(path).map_err(|source| PipelineError::Io { path: p.clone(), source })?;
        Ok(JsonlWriter { path: p, inner: Arc::new(Mutex::new(BufWriter::new(file))) })
    }

    pub fn append(path: &Path) -> Result<Self, PipelineError> {
        let p = path.display().to_string();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| PipelineError::Io { path: p.clone(), source })?;
        Ok(JsonlWriter { path: p, inner: Arc::new(Mutex::new(BufWriter::new(file))) })
    }

    pub fn write<T: Serialize>(&self, value: &T) -> Result<(), PipelineError> {
        let line = serde_json::to_string(value).expect("record serializes");
        let mut w = self.inner.lock().expect("writer lock");
        writeln!(w, "{line}").map_err(|source| PipelineError::Io { path: self.path.clone(), source })
    }

    pub fn flush(&self) -> Result<(), PipelineError> {
        self.inner
            .lock()
            .expect("writer lock")
            .flush()
            .map_err(|source| PipelineError::Io { path: self.path.clone(), source })
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let w = JsonlWriter::create(path)?;
    for it in items {
        w.write(it)?;
    }
    w.flush()
}

/// A trajectory of the planted corpus, with the violation it was built to carry.
#[derive(Debug, Clone)]
pub struct PlantedCase {
    pub trajectory: Trajectory,
    pub gold: GoldAnswer,
    pub planted: Option<Violation>,
}

fn is_inner(req: &PolicyRequest, inner_system: &str) -> bool {
    req.messages.first().is_some_and(|m| m.content == inner_system)
}

/// Calls an unknown tool first, then behaves like `inner`, which never sees
/// the bad exchange.
struct Hallucinating<P> {
    inner: P,
    inner_system: String,
}

impl<P: Policy> Policy for Hallucinating<P> {
    fn complete(&self, req: &PolicyRequest) -> Result<String, PolicyError> {
        if is_inner(req, &self.inner_system) {
            return self.inner.complete(req);
        }
        if !req.messages.iter().any(|m| m.role == MessageRole::Assistant) {
            return Ok("<think>Scroll down to see more.</think>\n<tool_call>{\"name\":\"scroll\",\"arguments\":{\"direction\":\"down\"}}</tool_call>".into());
        }
        let mut trimmed = req.clone();
        trimmed.messages.drain(2..4.min(trimmed.messages.len()));
        self.inner.complete(&trimmed)
    }
}

/// Replaces the final answer with a wrong one.
struct Misanswering<P> {
    inner: P,
    inner_system: String,
}

impl<P: Policy> Policy for Misanswering<P> {
    fn complete(&self, req: &PolicyRequest) -> Result<String, PolicyError> {
        let out = self.inner.complete(req)?;
        if is_inner(req, &self.inner_system) {
            return Ok(out);
        }
        Ok(match out.find("<answer>") {
            Some(i) => format!("{}<answer>ZZ-0000</answer>", &out[..i]),
            None => out,
        })
    }
}

/// Build a labelled corpus: `clean` correct trajectories plus `per_criterion`
/// trajectories carrying exactly one planted violation each.
pub fn planted_corpus(seed: u64, per_criterion: usize, clean: usize) -> Vec<PlantedCase> {
    let params = SiteParams { n_pages: 8, n_dynamic: 3, n_forms: 1, long_page_tokens: 400 };
    let manifest = Arc::new(generate_site(seed, params).expect("valid params"));
    let config = EpisodeConfig::default();
    let inner_system = crate::prompts::inner_system();
    let task_at = |i: usize| -> &TaskDef { &manifest.tasks[i % manifest.tasks.len()] };
    let solver = OracleSolver::new(manifest.clone());
    let mut out = Vec::new();
    let mut n = 0;
    let mut case = |traj: Trajectory, task: &TaskDef, planted| {
        let mut trajectory = traj;
        trajectory.task_id = format!("{}-c{n:03}", task.task_id);
        let gold = GoldAnswer { task_id: trajectory.task_id.clone(), ..task.gold.clone() };
        n += 1;
        out.push(PlantedCase { trajectory, gold, planted });
    };
    for i in 0..clean {
        let task = task_at(i);
        case(run_task(&manifest, task, &solver, &config), task, None);
    }
    for i in 0..per_criterion {
        let task = task_at(i);
        let mut t = run_task(&manifest, task, &solver, &config);
        // a stored turn whose reasoning swallowed a tag no longer re-parses
        t.turns[0].think.push_str(" <answer>");
        case(t, task, Some(Violation::FormatViolation));
    }
    for i in 0..per_criterion {
        let task = task_at(i + 1);
        let p = Hallucinating { inner: &solver, inner_system: inner_system.clone() };
        case(run_task(&manifest, task, &p, &config), task, Some(Violation::ToolCallHallucination));
    }
    for i in 0..per_criterion {
        let task = task_at(i + 2);
        let p = Misanswering { inner: &solver, inner_system: inner_system.clone() };
        case(run_task(&manifest, task, &p, &config), task, Some(Violation::IncorrectAnswer));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(a: &str, aliases: &[&str]) -> GoldAnswer {
        GoldAnswer { task_id: "t".into(), answer: a.into(), aliases: aliases.iter().map(|s| s.to_string()).collect() }
    }

    #[test]
    fn sandbox_judge_cases() {
        let j = SandboxJudge;
        assert!(j.judge("", "Paris.", &gold("paris", &[])).unwrap().correct);
        assert!(!j.judge("", "London", &gold("Paris", &[])).unwrap().correct);
        assert!(j.judge("", "United Kingdom", &gold("UK", &["UK", "United Kingdom"])).unwrap().correct);
        assert!(j.judge("", "  the   BIG apple ?! ", &gold("The big apple", &[])).unwrap().correct);
    }

    #[test]
    fn normalization_idempotent_examples() {
        for s in ["Paris. ", "a . .", "  X  y!?", "", "...", "Mr. Smith."] {
            let n = normalize_answer(s);
            assert_eq!(normalize_answer(&n), n, "{s:?}");
        }
        assert_eq!(normalize_answer("a . ."), "a");
    }

    #[test]
    fn grade_line_parsing() {
        assert_eq!(parse_grade("same answer.\nCORRECT"), Some(true));
        assert_eq!(parse_grade("different\n**INCORRECT**\n"), Some(false));
        assert_eq!(parse_grade("maybe"), None);
    }

    #[test]
    fn unreachable_remote_judge_is_unavailable() {
        let j = RemoteJudge::new("http://127.0.0.1:9/v1/chat/completions", "m", None).unwrap();
        assert!(matches!(j.judge("q", "a", &gold("a", &[])), Err(JudgeError::Unavailable(_))));
    }

    #[test]
    fn nonpositive_weights_rejected() {
        let c = planted_corpus(1, 0, 1);
        let opts = EmitOptions { lambda_out: 0.0, ..EmitOptions::default() };
        assert!(emit_samples(&c[0].trajectory, &opts).is_err());
    }
}

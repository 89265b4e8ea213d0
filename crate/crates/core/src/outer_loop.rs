//! The ReAct controller: context bookkeeping, step parsing, and the episode loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Session;
use crate::inner_loop::{ExtractionRecord, InnerConfig};
use crate::policy::{Message, MessageRole, Policy, PolicyRequest, OUTER_MAX_COMPLETION_TOKENS};
use crate::prompts;
use crate::tokens::Counter;
use crate::toolkit::{
    dispatch, lenient_call, tool_schemas, tools_block, validate_call, CallError, SearchProvider, ToolCall, ToolEnv,
    ToolResponse, ToolSpec,
};

pub const DEFAULT_CALL_LIMIT: usize = 100;
pub const DEFAULT_TOKEN_LIMIT: u64 = 131_072;
/// Below this many remaining tokens the agent is told to answer.
pub const NUDGE_THRESHOLD: u64 = 2_048;
pub const NUDGE: &str = "You are close to the context limit. Do not call any more tools. Give your final answer now within <answer></answer> tags.";
const BUDGET_REFUSAL: &str = "ContextBudget: no tool calls are allowed after the final-answer request";

pub fn build_system_prompt(specs: &[ToolSpec]) -> String {
    prompts::outer_system(&tools_block(specs))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("FormatViolation: {0}")]
pub struct FormatViolation(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepKind {
    /// Text between the `<tool_call>` tags, verbatim.
    Call(String),
    Answer(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub think: String,
    pub kind: StepKind,
}

const TAGS: [&str; 6] = ["<think>", "</think>", "<tool_call>", "</tool_call>", "<answer>", "</answer>"];

fn take_element<'a>(s: &'a str, name: &str) -> Result<Option<(&'a str, &'a str)>, FormatViolation> {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let Some(rest) = s.strip_prefix(open.as_str()) else {
        return Ok(None);
    };
    let end = rest
        .find(close.as_str())
        .ok_or_else(|| FormatViolation(format!("unclosed {open}")))?;
    let body = &rest[..end];
    if let Some(t) = TAGS.iter().find(|t| body.contains(*t)) {
        return Err(FormatViolation(format!("{t} inside {open}")));
    }
    Ok(Some((body, &rest[end + close.len()..])))
}

/// Split a completion into its reasoning and exactly one of a tool call or an answer.
/// Only whitespace may appear outside the tagged elements.
pub fn parse_step(completion: &str) -> Result<Step, FormatViolation> {
    let s = completion.trim_start();
    let (think, rest) = take_element(s, "think")?.ok_or_else(|| FormatViolation("missing <think> block".into()))?;
    let rest = rest.trim_start();
    let (kind, tail) = if let Some((body, tail)) = take_element(rest, "tool_call")? {
        (StepKind::Call(body.to_string()), tail)
    } else if let Some((body, tail)) = take_element(rest, "answer")? {
        (StepKind::Answer(body.to_string()), tail)
    } else {
        return Err(FormatViolation("expected <tool_call> or <answer> after </think>".into()));
    };
    if !tail.trim().is_empty() {
        let what = if TAGS.iter().any(|t| tail.contains(t)) { "a second tagged element" } else { "text" };
        return Err(FormatViolation(format!("{what} after the final element")));
    }
    Ok(Step { think: think.to_string(), kind })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub think: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ToolResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Validation failure of `call`, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_error: Option<CallError>,
    /// Context size (counted tokens) when the policy produced this turn.
    #[serde(default)]
    pub context_tokens: u64,
}

impl Turn {
    pub fn answer(think: impl Into<String>, answer: impl Into<String>) -> Self {
        Turn {
            think: think.into(),
            call: None,
            response: None,
            answer: Some(answer.into()),
            call_error: None,
            context_tokens: 0,
        }
    }

    pub fn call(think: impl Into<String>, call: ToolCall, response: ToolResponse) -> Self {
        Turn {
            think: think.into(),
            call: Some(call),
            response: Some(response),
            answer: None,
            call_error: None,
            context_tokens: 0,
        }
    }

    /// Canonical serialization of what the agent generated.
    pub fn assistant_text(&self) -> String {
        match (&self.call, &self.answer) {
            (Some(c), _) => format!("<think>{}</think>\n<tool_call>{}</tool_call>", self.think, c.raw),
            (None, Some(a)) => format!("<think>{}</think>\n<answer>{a}</answer>", self.think),
            (None, None) => format!("<think>{}</think>", self.think),
        }
    }

    pub fn response_text(&self) -> Option<String> {
        self.response.as_ref().map(|r| format!("<tool_response>\n{}\n</tool_response>", r.body))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub call_limit: usize,
    pub token_limit: u64,
    pub nudge_threshold: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            call_limit: DEFAULT_CALL_LIMIT,
            token_limit: DEFAULT_TOKEN_LIMIT,
            nudge_threshold: NUDGE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("TokenLimitExceeded: context is {count} tokens, limit {limit}")]
pub struct TokenLimitExceeded {
    pub count: u64,
    pub limit: u64,
}

/// The agent context c_t.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentContext {
    pub system_prompt: String,
    pub user_query: String,
    pub turns: Vec<Turn>,
    /// The final-answer request sits before this turn index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nudge_at: Option<usize>,
    pub token_count: u64,
    pub token_limit: u64,
    pub call_limit: usize,
    #[serde(skip)]
    counter: Counter,
}

fn role_header(role: MessageRole) -> &'static str {
    match role {
        MessageRole::System => "<|system|>",
        MessageRole::User => "<|user|>",
        MessageRole::Assistant => "<|assistant|>",
        MessageRole::Tool => "<|tool|>",
    }
}

/// Role-headed text form of a message list.
pub fn serialize_messages(messages: &[Message]) -> String {
    messages
        .iter()
        .map(|m| format!("{}\n{}", role_header(m.role), m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

impl AgentContext {
    pub fn new(system_prompt: String, user_query: String, limits: &Limits, counter: Counter) -> Self {
        let mut ctx = AgentContext {
            system_prompt,
            user_query,
            turns: Vec::new(),
            nudge_at: None,
            token_count: 0,
            token_limit: limits.token_limit,
            call_limit: limits.call_limit,
            counter,
        };
        ctx.recount();
        ctx
    }

    pub fn counter(&self) -> &Counter {
        &self.counter
    }

    /// Messages for the policy: system, query, then each turn and its response.
    pub fn messages(&self) -> Vec<Message> {
        messages_upto(&self.system_prompt, &self.user_query, &self.turns, self.nudge_at, self.turns.len())
    }

    pub fn to_text(&self) -> String {
        serialize_messages(&self.messages())
    }

    fn recount(&mut self) {
        self.token_count = self.counter.count(&self.to_text());
    }

    pub fn add_nudge(&mut self) {
        if self.nudge_at.is_none() {
            self.nudge_at = Some(self.turns.len());
            self.recount();
        }
    }

    /// Append a turn (c_{t+1}). The turn is kept even when the limit is exceeded.
    pub fn push_turn(&mut self, turn: Turn) -> Result<(), TokenLimitExceeded> {
        self.turns.push(turn);
        self.recount();
        if self.token_count > self.token_limit {
            return Err(TokenLimitExceeded {
                count: self.token_count,
                limit: self.token_limit,
            });
        }
        Ok(())
    }
}

/// Functional form of [`AgentContext::push_turn`].
pub fn update_context(mut ctx: AgentContext, turn: Turn) -> Result<AgentContext, TokenLimitExceeded> {
    ctx.push_turn(turn)?;
    Ok(ctx)
}

/// Messages of the context as it stood before turn `upto` was generated.
pub fn messages_upto(system: &str, query: &str, turns: &[Turn], nudge_at: Option<usize>, upto: usize) -> Vec<Message> {
    let mut out = vec![Message::system(system), Message::user(query)];
    for (i, t) in turns.iter().take(upto).enumerate() {
        if nudge_at == Some(i) {
            out.push(Message::user(NUDGE));
        }
        out.push(Message::assistant(t.assistant_text()));
        if let Some(r) = t.response_text() {
            out.push(Message::user(r));
        }
    }
    if nudge_at.is_some_and(|n| n >= upto.min(turns.len()) && n <= upto) {
        out.push(Message::user(NUDGE));
    }
    out
}

/// Text-level view of a serialized context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedContext {
    pub system_prompt: String,
    pub user_query: String,
    /// (think, call text or answer, tool response body)
    pub turns: Vec<ParsedTurn>,
    pub nudge_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTurn {
    pub think: String,
    pub kind: StepKind,
    pub response: Option<String>,
}

impl ParsedTurn {
    pub fn assistant_text(&self) -> String {
        match &self.kind {
            StepKind::Call(raw) => format!("<think>{}</think>\n<tool_call>{raw}</tool_call>", self.think),
            StepKind::Answer(a) => format!("<think>{}</think>\n<answer>{a}</answer>", self.think),
        }
    }
}

impl ParsedContext {
    /// Serialize back to the role-headed text form.
    pub fn to_text(&self) -> String {
        let mut out = vec![Message::system(&self.system_prompt), Message::user(&self.user_query)];
        for (i, t) in self.turns.iter().enumerate() {
            if self.nudge_at == Some(i) {
                out.push(Message::user(NUDGE));
            }
            out.push(Message::assistant(t.assistant_text()));
            if let Some(r) = &t.response {
                out.push(Message::user(format!("<tool_response>\n{r}\n</tool_response>")));
            }
        }
        if self.nudge_at == Some(self.turns.len()) {
            out.push(Message::user(NUDGE));
        }
        serialize_messages(&out)
    }
}

const H_SYS: &str = "<|system|>\n";
const H_USER: &str = "\n<|user|>\n";
const H_ASSIST: &str = "\n<|assistant|>\n";

fn next_header(s: &str) -> usize {
    [H_USER, H_ASSIST].iter().filter_map(|h| s.find(h)).min().unwrap_or(s.len())
}

/// Inverse of [`AgentContext::serialize`].
pub fn parse_context(text: &str) -> Result<ParsedContext, FormatViolation> {
    let bad = |m: &str| FormatViolation(format!("context: {m}"));
    let rest = text.strip_prefix(H_SYS).ok_or_else(|| bad("missing system header"))?;
    let end = rest.find(H_USER).ok_or_else(|| bad("missing user query"))?;
    let system_prompt = rest[..end].to_string();
    let mut rest = &rest[end + H_USER.len()..];
    let end = next_header(rest);
    let user_query = rest[..end].to_string();
    rest = &rest[end..];
    let mut turns: Vec<ParsedTurn> = Vec::new();
    let mut nudge_at = None;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix(H_ASSIST) {
            let end = next_header(r);
            let step = parse_step(&r[..end])?;
            turns.push(ParsedTurn { think: step.think, kind: step.kind, response: None });
            rest = &r[end..];
        } else if let Some(r) = rest.strip_prefix(H_USER) {
            if let Some(body) = r.strip_prefix("<tool_response>\n") {
                // closing tag followed by the next header or the end
                let mut from = 0;
                let close = loop {
                    let at = body[from..].find("\n</tool_response>").ok_or_else(|| bad("unclosed tool response"))? + from;
                    let after = &body[at + "\n</tool_response>".len()..];
                    if after.is_empty() || after.starts_with(H_USER) || after.starts_with(H_ASSIST) {
                        break at;
                    }
                    from = at + 1;
                };
                let turn = turns.last_mut().ok_or_else(|| bad("tool response before any turn"))?;
                turn.response = Some(body[..close].to_string());
                rest = &body[close + "\n</tool_response>".len()..];
            } else {
                let end = next_header(r);
                if &r[..end] != NUDGE {
                    return Err(bad("unexpected user message"));
                }
                nudge_at = Some(turns.len());
                rest = &r[end..];
            }
        } else {
            return Err(bad("expected a role header"));
        }
    }
    Ok(ParsedContext { system_prompt, user_query, turns, nudge_at })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    CallLimit,
    TokenLimit,
    FormatViolation,
    Aborted,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub tool_calls: usize,
    /// Raw page tokens behind all page-tool responses.
    pub whole_info_tokens: u64,
    /// Largest context handed to the policy.
    pub peak_context_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallErrorEvent {
    pub turn_index: usize,
    pub error: CallError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatErrorEvent {
    pub message: String,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub question: String,
    pub system_prompt: String,
    pub turns: Vec<Turn>,
    pub extraction_records: Vec<ExtractionRecord>,
    pub final_answer: Option<String>,
    pub termination: Termination,
    pub stats: Stats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nudge_at: Option<usize>,
    #[serde(default)]
    pub call_errors: Vec<CallErrorEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_error: Option<FormatErrorEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
    pub token_limit: u64,
    pub call_limit: usize,
}

impl Trajectory {
    /// Rebuild the context as it was after the last turn.
    pub fn context(&self, counter: Counter) -> AgentContext {
        let limits = Limits {
            call_limit: self.call_limit,
            token_limit: self.token_limit,
            nudge_threshold: NUDGE_THRESHOLD,
        };
        let mut ctx = AgentContext::new(self.system_prompt.clone(), self.question.clone(), &limits, counter);
        ctx.turns = self.turns.clone();
        ctx.nudge_at = self.nudge_at;
        ctx.recount();
        ctx
    }

    /// Messages the policy saw before producing turn `t`.
    pub fn prompt_for_turn(&self, t: usize) -> Vec<Message> {
        messages_upto(&self.system_prompt, &self.question, &self.turns, self.nudge_at, t)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    pub limits: Limits,
    pub inner: InnerConfig,
    pub max_completion_tokens: u32,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            limits: Limits::default(),
            inner: InnerConfig::default(),
            max_completion_tokens: OUTER_MAX_COMPLETION_TOKENS,
        }
    }
}

impl EpisodeConfig {
    pub fn counter(&self) -> &Counter {
        &self.inner.counter
    }
}

/// Run one episode to completion (answer, limit, format violation or abort).
pub fn run_episode(
    task_id: &str,
    question: &str,
    policy: &dyn Policy,
    session: &mut dyn Session,
    search: &dyn SearchProvider,
    config: &EpisodeConfig,
) -> Trajectory {
    let limits = config.limits;
    let system_prompt = build_system_prompt(&tool_schemas());
    let mut ctx = AgentContext::new(system_prompt.clone(), question.to_string(), &limits, config.counter().clone());
    let mut records: Vec<ExtractionRecord> = Vec::new();
    let mut stats = Stats::default();
    let mut call_errors = Vec::new();
    let mut format_error = None;
    let mut abort_reason = None;
    let mut final_answer = None;

    let termination = loop {
        if stats.tool_calls >= limits.call_limit {
            break Termination::CallLimit;
        }
        if limits.token_limit.saturating_sub(ctx.token_count) < limits.nudge_threshold {
            ctx.add_nudge();
        }
        if ctx.token_count > limits.token_limit {
            break Termination::TokenLimit;
        }
        stats.peak_context_tokens = stats.peak_context_tokens.max(ctx.token_count);
        let request = PolicyRequest::new(ctx.messages(), config.max_completion_tokens);
        let completion = match policy.complete(&request) {
            Ok(c) => c,
            Err(e) => {
                abort_reason = Some(e.to_string());
                break Termination::Aborted;
            }
        };
        let step = match parse_step(&completion) {
            Ok(s) => s,
            Err(v) => {
                format_error = Some(FormatErrorEvent { message: v.to_string(), completion });
                break Termination::FormatViolation;
            }
        };
        let context_tokens = ctx.token_count;
        let raw = match step.kind {
            StepKind::Answer(answer) => {
                let mut turn = Turn::answer(step.think, answer.clone());
                turn.context_tokens = context_tokens;
                // the answer was produced within budget; its own length does not matter
                let _ = ctx.push_turn(turn);
                final_answer = Some(answer);
                break Termination::Answered;
            }
            StepKind::Call(raw) => raw,
        };
        let turn_index = ctx.turns.len();
        let mut fatal = None;
        let mut turn = if ctx.nudge_at.is_some() {
            Turn::call(step.think, lenient_call(&raw), ToolResponse::error(BUDGET_REFUSAL))
        } else {
            match validate_call(&raw) {
                Ok(call) => {
                    let mut env = ToolEnv {
                        session: &mut *session,
                        search,
                        policy,
                        inner: &config.inner,
                    };
                    match dispatch(&call, &mut env) {
                        Ok(d) => {
                            stats.whole_info_tokens += d.response.meta.raw_page_tokens;
                            records.extend(d.records.into_iter().map(|mut r| {
                                r.turn_index = turn_index;
                                r
                            }));
                            fatal = d.fatal;
                            Turn::call(step.think, call, d.response)
                        }
                        Err(e) => {
                            abort_reason = Some(e.to_string());
                            break Termination::Aborted;
                        }
                    }
                }
                Err(e) => {
                    call_errors.push(CallErrorEvent { turn_index, error: e.clone() });
                    let mut t = Turn::call(step.think, lenient_call(&raw), ToolResponse::error(e.to_string()));
                    t.call_error = Some(e);
                    t
                }
            }
        };
        turn.context_tokens = context_tokens;
        let refused = ctx.nudge_at.is_some();
        stats.tool_calls += 1;
        let pushed = ctx.push_turn(turn);
        if let Some(e) = fatal {
            abort_reason = Some(e.to_string());
            break Termination::Aborted;
        }
        if refused || pushed.is_err() {
            break Termination::TokenLimit;
        }
    };

    Trajectory {
        task_id: task_id.to_string(),
        question: question.to_string(),
        system_prompt,
        nudge_at: ctx.nudge_at,
        turns: ctx.turns,
        extraction_records: records,
        final_answer,
        termination,
        stats,
        call_errors,
        format_error,
        abort_reason,
        token_limit: limits.token_limit,
        call_limit: limits.call_limit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toolkit::validate_call;

    #[test]
    fn parse_canonical_forms() {
        let s = parse_step(r#"<think>x</think><tool_call>{"name":"search","arguments":{"queries":["a"]}}</tool_call>"#).unwrap();
        assert_eq!(s.think, "x");
        assert!(matches!(s.kind, StepKind::Call(_)));
        let s = parse_step("<think>x</think><answer>Paris</answer>").unwrap();
        assert_eq!(s.kind, StepKind::Answer("Paris".into()));
        let s = parse_step("  <think>x</think>\n\n<answer>Paris</answer>\n").unwrap();
        assert_eq!(s.kind, StepKind::Answer("Paris".into()));
    }

    #[test]
    fn format_violations() {
        for bad in [
            "<answer>Paris</answer>",
            "<think>x</think>",
            "<think>x</think><answer>a</answer><tool_call>{}</tool_call>",
            "<think>x</think><tool_call>{}</tool_call><tool_call>{}</tool_call>",
            "<think>x<answer>a</answer>",
            "<think>x</think>prose<answer>a</answer>",
            "<think>x</think><answer>a</answer> trailing",
            "<think>x</think><answer>a",
        ] {
            assert!(parse_step(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn system_prompt_has_tools_and_answer_rule() {
        let p = build_system_prompt(&tool_schemas());
        assert!(p.contains(&format!("<tools>\n{}\n</tools>", tools_block(&tool_schemas()))));
        assert!(p.contains("</tools>"));
        assert!(p.contains("within <answer></answer> tags"));
        assert_eq!(p, build_system_prompt(&tool_schemas()));
    }

    fn ctx() -> AgentContext {
        AgentContext::new("sys".into(), "q?".into(), &Limits::default(), Counter::default())
    }

    #[test]
    fn token_count_is_recount_of_serialization() {
        let mut c = ctx();
        let call = validate_call(r#"{"name":"search","arguments":{"queries":["a"]}}"#).unwrap();
        c.push_turn(Turn::call("t", call, ToolResponse::error("nope"))).unwrap();
        let expect = "<|system|>\nsys\n<|user|>\nq?\n<|assistant|>\n<think>t</think>\n<tool_call>{\"name\":\"search\",\"arguments\":{\"queries\":[\"a\"]}}</tool_call>\n<|user|>\n<tool_response>\nnope\n</tool_response>";
        assert_eq!(c.to_text(), expect);
        assert_eq!(c.token_count, (expect.len() as u64).div_ceil(4));
    }

    #[test]
    fn limit_is_enforced() {
        let limits = Limits { token_limit: 10, ..Limits::default() };
        let mut c = AgentContext::new("s".into(), "q".into(), &limits, Counter::default());
        let err = c.push_turn(Turn::answer("long thinking here", "a")).unwrap_err();
        assert!(err.count > 10);
    }

    #[test]
    fn context_text_round_trip() {
        let mut c = ctx();
        let call = validate_call(r#"{"name":"visit","arguments":{"url":"/a","goal":"g"}}"#).unwrap();
        c.push_turn(Turn::call("one", call, ToolResponse::error("body\n</tool_response> tricky\nend"))).unwrap();
        c.add_nudge();
        c.push_turn(Turn::answer("two", "A")).unwrap();
        let text = c.to_text();
        let p = parse_context(&text).unwrap();
        assert_eq!(p.system_prompt, "sys");
        assert_eq!(p.user_query, "q?");
        assert_eq!(p.nudge_at, Some(1));
        assert_eq!(p.turns.len(), 2);
        assert_eq!(p.turns[0].response.as_deref(), Some("body\n</tool_response> tricky\nend"));
        assert_eq!(p.turns[1].kind, StepKind::Answer("A".into()));
        // serde round trip too
        let json = serde_json::to_string(&c).unwrap();
        let back: AgentContext = serde_json::from_str(&json).unwrap();
        assert_eq!(back.turns, c.turns);
    }
}

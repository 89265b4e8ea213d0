//! The four browser tools: schemas, call validation, and execution.
//!
//! `visit` and `click` open a page and run the inner loop over it; the
//! response is the resulting workspace, never the raw page. `search` and
//! `fill` return their direct results.

mod search;

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::backend::{BackendError, Session};
use crate::inner_loop::{explore_page, ExtractionRecord, InnerConfig};
use crate::policy::{Policy, PolicyError};
use crate::snapshot::{resolve_locator, DomSnapshot};

pub use search::{exec_search, HttpSearch, NoSearch, SearchProvider, SearchResult, NO_SEARCH, SEARCH_KEY_ENV, SEARCH_URL_ENV};

pub const MAX_QUERIES: usize = 5;
pub const MAX_RESULTS: usize = 10;
pub const DIGEST_LIMIT: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolName {
    Search,
    Visit,
    Click,
    Fill,
}

impl ToolName {
    pub const ALL: [ToolName; 4] = [ToolName::Search, ToolName::Visit, ToolName::Click, ToolName::Fill];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::Search => "search",
            ToolName::Visit => "visit",
            ToolName::Click => "click",
            ToolName::Fill => "fill",
        }
    }

    /// Tools that open a page and trigger the inner loop.
    pub fn is_page_tool(self) -> bool {
        matches!(self, ToolName::Visit | ToolName::Click)
    }
}

impl std::fmt::Display for ToolName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ToolName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ToolName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown tool {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: ToolName,
    pub description: String,
    #[serde(rename = "parameters")]
    pub arg_schema: Value,
}

fn string_prop(description: &str) -> Value {
    json!({"type": "string", "minLength": 1, "description": description})
}

fn object_schema(props: Value, required: &[&str]) -> Value {
    json!({"type": "object", "properties": props, "required": required, "additionalProperties": false})
}

/// The four tool specs, in fixed order.
pub fn tool_schemas() -> Vec<ToolSpec> {
    vec![
        ToolSpec {
            name: ToolName::Search,
            description: "Performs batched web searches: supply an array 'queries'; the tool retrieves the top 10 results for each query in one call.".into(),
            arg_schema: object_schema(
                json!({"queries": {
                    "type": "array",
                    "items": {"type": "string", "minLength": 1},
                    "minItems": 1,
                    "maxItems": MAX_QUERIES,
                    "description": "Array of query strings. Include multiple complementary search queries in a single call."
                }}),
                &["queries"],
            ),
        },
        ToolSpec {
            name: ToolName::Visit,
            description: "Fetches the webpage at a URL and returns the information on it that is relevant to the goal, followed by the page's interactive elements.".into(),
            arg_schema: object_schema(
                json!({
                    "url": string_prop("The URL of the webpage to visit."),
                    "goal": string_prop("The specific information goal for visiting the webpage.")
                }),
                &["url", "goal"],
            ),
        },
        ToolSpec {
            name: ToolName::Click,
            description: "Clicks an interactive element of the current page, identified by its element id, and returns the goal-relevant information of the resulting page.".into(),
            arg_schema: object_schema(
                json!({
                    "element_id": string_prop("Identifier of the element, e.g. \"e3\", as listed for the current page."),
                    "goal": string_prop("The specific information goal for the page reached by the click.")
                }),
                &["element_id", "goal"],
            ),
        },
        ToolSpec {
            name: ToolName::Fill,
            description: "Types text into a form field of the current page, identified by its element id.".into(),
            arg_schema: object_schema(
                json!({
                    "element_id": string_prop("Identifier of the form field, e.g. \"e3\"."),
                    "text": {"type": "string", "description": "The text to enter."}
                }),
                &["element_id", "text"],
            ),
        },
    ]
}

/// Specs serialized one JSON object per line, for the system prompt's `<tools>` block.
pub fn tools_block(specs: &[ToolSpec]) -> String {
    specs
        .iter()
        .map(|s| serde_json::to_string(&json!({"type": "function", "function": s})).expect("spec serializes"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parse a `tools_block` back into specs.
pub fn parse_tools_block(block: &str) -> Result<Vec<ToolSpec>, serde_json::Error> {
    block
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l)?;
            serde_json::from_value(v["function"].clone())
        })
        .collect()
}

/// A tool invocation as emitted by the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: Value,
    /// The text between `<tool_call>` tags, verbatim.
    pub raw: String,
}

impl ToolCall {
    pub fn tool(&self) -> Option<ToolName> {
        self.name.parse().ok()
    }

    pub fn arg(&self, key: &str) -> &str {
        self.arguments.get(key).and_then(Value::as_str).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallErrorKind {
    BadJson,
    UnknownTool,
    SchemaViolation,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{}: {message}", match kind { CallErrorKind::BadJson => "BadJson", CallErrorKind::UnknownTool => "UnknownTool", CallErrorKind::SchemaViolation => "SchemaViolation" })]
pub struct CallError {
    pub kind: CallErrorKind,
    pub message: String,
}

impl CallError {
    fn new(kind: CallErrorKind, message: impl Into<String>) -> Self {
        CallError { kind, message: message.into() }
    }
}

fn validators() -> &'static [(ToolName, jsonschema::Validator)] {
    static V: OnceLock<Vec<(ToolName, jsonschema::Validator)>> = OnceLock::new();
    V.get_or_init(|| {
        tool_schemas()
            .into_iter()
            .map(|s| (s.name, jsonschema::validator_for(&s.arg_schema).expect("tool schemas are valid")))
            .collect()
    })
}

/// Best-effort view of a call that failed validation (for the trajectory record).
pub fn lenient_call(raw: &str) -> ToolCall {
    let v: Value = serde_json::from_str(raw.trim()).unwrap_or(Value::Null);
    ToolCall {
        name: v.get("name").and_then(Value::as_str).unwrap_or_default().to_string(),
        arguments: v.get("arguments").cloned().unwrap_or(Value::Null),
        raw: raw.to_string(),
    }
}

/// Parse and check `{"name": ..., "arguments": {...}}` against the named spec.
pub fn validate_call(raw: &str) -> Result<ToolCall, CallError> {
    let v: Value = serde_json::from_str(raw.trim()).map_err(|e| CallError::new(CallErrorKind::BadJson, e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| CallError::new(CallErrorKind::BadJson, "tool call must be a JSON object"))?;
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| CallError::new(CallErrorKind::BadJson, "tool call has no string \"name\""))?;
    let (_, validator) = validators()
        .iter()
        .find(|(t, _)| t.as_str() == name)
        .ok_or_else(|| CallError::new(CallErrorKind::UnknownTool, name))?;
    let arguments = obj.get("arguments").cloned().unwrap_or(Value::Null);
    if let Some(err) = validator.iter_errors(&arguments).next() {
        let path = err.instance_path.to_string();
        let path = if path.is_empty() { "/".to_string() } else { path };
        return Err(CallError::new(CallErrorKind::SchemaViolation, format!("{path}: {err}")));
    }
    Ok(ToolCall {
        name: name.to_string(),
        arguments,
        raw: raw.to_string(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMeta {
    pub raw_page_tokens: u64,
    pub inner_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nav_epoch: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub ok: bool,
    pub body: String,
    #[serde(default)]
    pub meta: ResponseMeta,
}

impl ToolResponse {
    pub fn error(body: impl Into<String>) -> Self {
        ToolResponse { ok: false, body: body.into(), meta: ResponseMeta::default() }
    }
}

/// Everything a tool needs to run inside one episode.
pub struct ToolEnv<'a> {
    pub session: &'a mut dyn Session,
    pub search: &'a dyn SearchProvider,
    pub policy: &'a dyn Policy,
    pub inner: &'a InnerConfig,
}

/// Result of one dispatched call.
#[derive(Debug, Clone)]
pub struct Dispatched {
    pub response: ToolResponse,
    pub records: Vec<ExtractionRecord>,
    /// The backend failed in a way the episode cannot continue from.
    pub fatal: Option<BackendError>,
}

impl Dispatched {
    fn plain(response: ToolResponse) -> Self {
        Dispatched { response, records: Vec::new(), fatal: None }
    }

    fn backend_error(e: BackendError) -> Self {
        let fatal = e.is_fatal().then(|| e.clone());
        Dispatched { response: ToolResponse::error(e.to_string()), records: Vec::new(), fatal }
    }
}

/// `e1 — link — label` lines, first `DIGEST_LIMIT` in document order.
pub fn element_digest(snapshot: &DomSnapshot) -> String {
    let all = snapshot.interactive();
    if all.is_empty() {
        return "Interactive elements: none".into();
    }
    let mut out = String::from("Interactive elements:");
    for el in all.iter().take(DIGEST_LIMIT) {
        out.push_str(&format!("\n{} — {} — {}", el.element_id, el.role.as_str(), el.label));
    }
    if all.len() > DIGEST_LIMIT {
        out.push_str(&format!("\n({} more not shown)", all.len() - DIGEST_LIMIT));
    }
    out
}

fn page_response(env: &mut ToolEnv<'_>, goal: &str, page: crate::backend::PageState) -> Result<Dispatched, PolicyError> {
    let snap = &page.snapshot;
    let mut exploration = explore_page(&snap.rendered_text, goal, env.policy, env.inner)?;
    for r in &mut exploration.records {
        r.page_url = page.url.clone();
    }
    let body = format!(
        "{}\n\nPage: {} ({})\n{}",
        exploration.workspace.to_useful_info(),
        snap.title,
        page.url,
        element_digest(snap)
    );
    Ok(Dispatched {
        response: ToolResponse {
            ok: true,
            body,
            meta: ResponseMeta {
                raw_page_tokens: snap.token_count,
                inner_calls: exploration.records.len() as u64,
                nav_epoch: Some(page.nav_epoch),
            },
        },
        records: exploration.records,
        fatal: None,
    })
}

/// Execute a validated call. Tool and backend failures become `ok = false`
/// responses; only policy failures inside the inner loop are returned as errors.
pub fn dispatch(call: &ToolCall, env: &mut ToolEnv<'_>) -> Result<Dispatched, PolicyError> {
    debug_assert!(validate_call(&call.raw).is_ok(), "dispatch of unvalidated call");
    let Some(tool) = call.tool() else {
        return Ok(Dispatched::plain(ToolResponse::error(format!("UnknownTool: {}", call.name))));
    };
    match tool {
        ToolName::Search => {
            let queries: Vec<String> = call.arguments["queries"]
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
                .unwrap_or_default();
            Ok(Dispatched::plain(exec_search(&queries, env.search)))
        }
        ToolName::Visit => match env.session.navigate(call.arg("url")) {
            Ok(page) => page_response(env, call.arg("goal"), page),
            Err(e) => Ok(Dispatched::backend_error(e)),
        },
        ToolName::Click => {
            let locator = match resolve_locator(&env.session.current().snapshot, call.arg("element_id")) {
                Ok(l) => l.clone(),
                Err(e) => return Ok(Dispatched::plain(ToolResponse::error(e.to_string()))),
            };
            match env.session.click(&locator) {
                Ok(page) => page_response(env, call.arg("goal"), page),
                Err(e) => Ok(Dispatched::backend_error(e)),
            }
        }
        ToolName::Fill => {
            let id = call.arg("element_id");
            let current = &env.session.current().snapshot;
            let (locator, label) = match resolve_locator(current, id) {
                Ok(l) => (l.clone(), current.element(id).map(|e| e.label.to_string()).unwrap_or_default()),
                Err(e) => return Ok(Dispatched::plain(ToolResponse::error(e.to_string()))),
            };
            let text = call.arg("text");
            match env.session.fill(&locator, text) {
                Ok(page) => Ok(Dispatched::plain(ToolResponse {
                    ok: true,
                    body: format!("filled element {id} ({label}) with {}", serde_json::to_string(text).expect("string")),
                    meta: ResponseMeta {
                        nav_epoch: Some(page.nav_epoch),
                        ..ResponseMeta::default()
                    },
                })),
                Err(e) => Ok(Dispatched::backend_error(e)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_specs_in_order() {
        let names: Vec<ToolName> = tool_schemas().iter().map(|s| s.name).collect();
        assert_eq!(names, ToolName::ALL.to_vec());
    }

    #[test]
    fn tools_block_round_trips() {
        let specs = tool_schemas();
        let block = tools_block(&specs);
        assert_eq!(block.lines().count(), 4);
        assert_eq!(parse_tools_block(&block).unwrap(), specs);
        assert_eq!(block, tools_block(&tool_schemas()));
    }

    #[test]
    fn validation_cases() {
        let ok = validate_call(r#"{"name":"visit","arguments":{"url":"https://x","goal":"find founding year"}}"#).unwrap();
        assert_eq!(ok.tool(), Some(ToolName::Visit));
        assert_eq!(ok.arg("goal"), "find founding year");

        let e = validate_call(r#"{"name":"scroll","arguments":{}}"#).unwrap_err();
        assert_eq!(e.kind, CallErrorKind::UnknownTool);
        assert_eq!(e.to_string(), "UnknownTool: scroll");

        let e = validate_call(r#"{"name":"search","arguments":{"queries":[]}}"#).unwrap_err();
        assert_eq!(e.kind, CallErrorKind::SchemaViolation);
        assert!(e.message.starts_with("/queries"), "{}", e.message);

        let six = r#"{"name":"search","arguments":{"queries":["a","b","c","d","e","f"]}}"#;
        assert_eq!(validate_call(six).unwrap_err().kind, CallErrorKind::SchemaViolation);
        let extra = r#"{"name":"fill","arguments":{"element_id":"e1","text":"x","goal":"g"}}"#;
        assert_eq!(validate_call(extra).unwrap_err().kind, CallErrorKind::SchemaViolation);
        assert_eq!(validate_call("{not json").unwrap_err().kind, CallErrorKind::BadJson);
        assert_eq!(validate_call(r#"{"name":"click"}"#).unwrap_err().kind, CallErrorKind::SchemaViolation);
    }
}

//! Scripted policies for sandbox tasks: an outer-loop solver that replays
//! oracle plans, and a keyword extractor standing in for the inner model.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde_json::json;

use super::oracle::{Oracle, PlanStep};
use super::site::tokenize;
use super::{SiteManifest, TaskDef};
use crate::policy::{MessageRole, Policy, PolicyError, PolicyRequest};
use crate::prompts;
use crate::toolkit::ToolName;

const CONTENT_OPEN: &str = "## **Webpage Content**\n";
const GOAL_OPEN: &str = "\n\n## **User Goal**\n";
const GUIDE_OPEN: &str = "\n\n## **Task Guidelines**";
const EVIDENCE_OPEN: &str = "## **Existing Evidence**\n";
const SUMMARY_OPEN: &str = "\n\n## **Existing Summary**\n";
const NOTE_OPEN: &str = "\n\nNote: Existing extracted evidence";

const STOPWORDS: &[&str] = &["the", "and", "for", "what", "which", "with", "from", "that", "this", "are", "was", "find"];

fn between<'a>(s: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = s.find(open)? + open.len();
    let end = start + s[start..].rfind(close)?;
    Some(&s[start..end])
}

fn keywords(goal: &str) -> Vec<String> {
    tokenize(goal)
        .into_iter()
        .filter(|w| w.len() >= 3 && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

/// Deterministic stand-in for the extraction model: keeps every line of the
/// segment that mentions a goal keyword, merged with the existing evidence.
pub fn reference_extract(user_prompt: &str) -> String {
    let content = between(user_prompt, CONTENT_OPEN, GOAL_OPEN).unwrap_or_default();
    let after_content = user_prompt.rfind(GOAL_OPEN).map(|i| &user_prompt[i + GOAL_OPEN.len()..]).unwrap_or_default();
    let goal = after_content.split(GUIDE_OPEN).next().unwrap_or_default();
    let prior = between(user_prompt, EVIDENCE_OPEN, SUMMARY_OPEN).unwrap_or_default();
    let prior_summary = between(user_prompt, SUMMARY_OPEN, NOTE_OPEN).unwrap_or_default();

    let keys = keywords(goal);
    let mut lines: Vec<&str> = prior.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut added = 0;
    for line in content.lines() {
        let words = tokenize(line);
        if keys.iter().any(|k| words.contains(k)) && !lines.contains(&line.trim()) {
            lines.push(line.trim());
            added += 1;
        }
    }
    let evidence = lines.join("\n");
    let summary = if lines.is_empty() {
        "Nothing on the page so far relates to the goal.".to_string()
    } else if added == 0 {
        prior_summary.to_string()
    } else {
        format!("{} passage(s) on the page relate to the goal.", lines.len())
    };
    let payload = json!({
        "rational": format!("Lines mentioning {} are relevant.", keys.join(", ")),
        "evidence": evidence,
        "summary": summary,
    });
    format!("<useful_info>{payload}</useful_info>")
}

fn goal_for(task: &TaskDef) -> String {
    format!("catalog code of the {}", task.subject)
}

fn call_text(step: &PlanStep, goal: &str) -> String {
    let (name, args) = match step {
        PlanStep::Search { query } => ("search", json!({ "queries": [query] })),
        PlanStep::Visit { url } => ("visit", json!({ "url": url, "goal": goal })),
        PlanStep::Click { element_id } => ("click", json!({ "element_id": element_id, "goal": goal })),
        PlanStep::Fill { element_id, text } => ("fill", json!({ "element_id": element_id, "text": text })),
    };
    json!({ "name": name, "arguments": args }).to_string()
}

/// Finds `catalog code of the <subject> is XX-0000` anywhere in the observations.
fn find_answer(request: &PolicyRequest, subject: &str) -> Option<String> {
    let needle = format!("catalog code of the {subject} is ");
    request
        .messages
        .iter()
        .filter(|m| m.role == MessageRole::User)
        .find_map(|m| {
            let at = m.content.find(&needle)? + needle.len();
            let code: String = m.content[at..].chars().take(7).collect();
            (code.len() == 7).then_some(code)
        })
}

/// Scripted solver over one manifest. Outer requests get the next step of the
/// task's oracle plan; inner requests go to [`reference_extract`].
pub struct OracleSolver {
    manifest: Arc<SiteManifest>,
    tools: Vec<ToolName>,
    plans: Mutex<HashMap<String, Vec<PlanStep>>>,
    inner_system: String,
}

impl OracleSolver {
    pub fn new(manifest: Arc<SiteManifest>) -> Self {
        Self::restricted(manifest, &ToolName::ALL)
    }

    /// A solver that only plans with `tools`. When no plan exists it still
    /// searches for the subject and visits the host page before answering.
    pub fn restricted(manifest: Arc<SiteManifest>, tools: &[ToolName]) -> Self {
        OracleSolver {
            manifest,
            tools: tools.to_vec(),
            plans: Mutex::new(HashMap::new()),
            inner_system: prompts::inner_system(),
        }
    }

    fn plan(&self, task: &TaskDef) -> Vec<PlanStep> {
        let mut plans = self.plans.lock().expect("plan cache");
        plans
            .entry(task.task_id.clone())
            .or_insert_with(|| {
                Oracle::new(&self.manifest).plan(task, &self.tools).unwrap_or_else(|| {
                    let mut steps = Vec::new();
                    if self.tools.contains(&ToolName::Search) {
                        steps.push(PlanStep::Search { query: task.subject.clone() });
                    }
                    if self.tools.contains(&ToolName::Visit) {
                        steps.push(PlanStep::Visit { url: task.host_path.clone() });
                    }
                    steps
                })
            })
            .clone()
    }
}

impl Policy for OracleSolver {
    fn complete(&self, request: &PolicyRequest) -> Result<String, PolicyError> {
        let system = &request.messages.first().ok_or_else(|| PolicyError::InvalidRequest("empty request".into()))?.content;
        if *system == self.inner_system {
            let user = request
                .messages
                .iter()
                .find(|m| m.role == MessageRole::User)
                .ok_or_else(|| PolicyError::InvalidRequest("inner request has no user message".into()))?;
            return Ok(reference_extract(&user.content));
        }
        let question = request.messages.get(1).map(|m| m.content.as_str()).unwrap_or_default();
        let task = self
            .manifest
            .tasks
            .iter()
            .find(|t| t.question == question)
            .ok_or_else(|| PolicyError::InvalidRequest(format!("question is not a sandbox task: {question}")))?;
        let plan = self.plan(task);
        let step = request.messages.iter().filter(|m| m.role == MessageRole::Assistant).count();
        let nudged = request.messages.iter().any(|m| m.role == MessageRole::User && m.content == crate::outer_loop::NUDGE);
        if step < plan.len() && !nudged {
            let s = &plan[step];
            let think = format!("Step {} of {}: use {}.", step + 1, plan.len(), s.tool());
            return Ok(format!("<think>{think}</think>\n<tool_call>{}</tool_call>", call_text(s, &goal_for(task))));
        }
        Ok(match find_answer(request, &task.subject) {
            Some(code) => format!("<think>The page states the catalog code.</think>\n<answer>{code}</answer>"),
            None => "<think>The catalog code was not found.</think>\n<answer>unknown</answer>".to_string(),
        })
    }
}

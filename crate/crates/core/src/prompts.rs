//! Versioned prompt templates.
//!
//! Templates live in `assets/prompts/*.v1.txt`; the trailing newline of each
//! file is not part of the prompt.

const OUTER_SYSTEM: &str = include_str!("../assets/prompts/outer_system.v1.txt");
const INNER_SYSTEM: &str = include_str!("../assets/prompts/inner_system.v1.txt");
const INNER_USER: &str = include_str!("../assets/prompts/inner_user.v1.txt");
const INNER_USER_INCREMENTAL: &str = include_str!("../assets/prompts/inner_user_incremental.v1.txt");

pub const TEMPLATE_VERSION: &str = "v1";

pub fn outer_system_template() -> &'static str {
    OUTER_SYSTEM.trim_end()
}

pub fn inner_system_template() -> &'static str {
    INNER_SYSTEM.trim_end()
}

pub fn inner_user_template() -> &'static str {
    INNER_USER.trim_end()
}

pub fn inner_user_incremental_template() -> &'static str {
    INNER_USER_INCREMENTAL.trim_end()
}

/// Substitute `{name}` placeholders in one left-to-right pass. Substituted
/// values are never rescanned, so page text containing `{goal}` is inert.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    'outer: while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos + 1..];
        for (name, value) in vars {
            if let Some(after) = tail.strip_prefix(name).and_then(|t| t.strip_prefix('}')) {
                out.push_str(value);
                rest = after;
                continue 'outer;
            }
        }
        out.push('{');
        rest = tail;
    }
    out.push_str(rest);
    out
}

pub fn outer_system(tools_schema: &str) -> String {
    fill(outer_system_template(), &[("BROWSER_TOOLS_SCHEMA", tools_schema)])
}

pub fn inner_system() -> String {
    inner_system_template().to_string()
}

pub fn inner_user(raw_response: &str, goal: &str) -> String {
    fill(inner_user_template(), &[("raw_response", raw_response), ("goal", goal)])
}

pub fn inner_user_incremental(raw_response: &str, goal: &str, existing_evidence: &str, existing_summary: &str) -> String {
    fill(
        inner_user_incremental_template(),
        &[
            ("raw_response", raw_response),
            ("goal", goal),
            ("existing_evidence", existing_evidence),
            ("existing_summary", existing_summary),
        ],
    )
}

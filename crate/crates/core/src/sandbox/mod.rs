//! Deterministic fixture web.
//!
//! A generated site is a small graph of pages. Every content page hosts the
//! answer to one task, planted in one of three places:
//!
//! * a static text block (reachable by a plain fetch),
//! * a reveal section that only appears after clicking its toggle,
//! * a record page behind a lookup form (needs fill + click).
//!
//! Reveal and form state travel in the URL, so the same manifest behaves the
//! same whether it is served over HTTP or read in-process.

mod generate;
mod oracle;
mod server;
mod site;
mod solver;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ScriptlessSession;
use crate::outer_loop::{run_episode, EpisodeConfig, Trajectory};
use crate::pipeline::GoldAnswer;
use crate::policy::Policy;
use crate::toolkit::ToolName;

pub use generate::generate_site;
pub use oracle::{minimal_toolset, solvable_with, Oracle, PlanStep};
pub use server::{serve, SandboxServer, SEARCH_PATH};
pub use site::{canonicalize, render_route, search_index, tokenize, IndexHit, ManifestSource, SandboxSearch};
pub use solver::{reference_extract, OracleSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteParams {
    /// Total pages including `/home` (record pages behind forms are extra).
    pub n_pages: usize,
    /// Answers hidden from a static fetch (reveals plus forms).
    pub n_dynamic: usize,
    /// How many of the dynamic answers sit behind a lookup form.
    pub n_forms: usize,
    /// Minimum rendered size of every answer-bearing page.
    pub long_page_tokens: u64,
}

impl Default for SiteParams {
    fn default() -> Self {
        SiteParams {
            n_pages: 8,
            n_dynamic: 3,
            n_forms: 1,
            long_page_tokens: 1200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkDef {
    pub label: String,
    pub target_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealDef {
    pub toggle_label: String,
    pub hidden_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormDef {
    pub fields: Vec<FieldDef>,
    /// Canonical input (field values canonicalized and joined by `|`) → target path.
    pub route: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageDef {
    pub title: String,
    pub blocks: Vec<String>,
    #[serde(default)]
    pub links: Vec<LinkDef>,
    #[serde(default)]
    pub reveals: Vec<RevealDef>,
    #[serde(default)]
    pub forms: Vec<FormDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub path: String,
    pub score: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Planted {
    Static,
    Reveal,
    Form,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDef {
    pub task_id: String,
    pub question: String,
    pub gold: GoldAnswer,
    /// Minimal toolset, as computed by the oracle.
    pub required_actions: Vec<ToolName>,
    /// Page whose content (or controls) lead to the answer.
    pub host_path: String,
    pub planted: Planted,
    /// The item the question asks about.
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteManifest {
    pub seed: u64,
    pub params: SiteParams,
    pub pages: BTreeMap<String, PageDef>,
    pub index: BTreeMap<String, Vec<IndexEntry>>,
    pub tasks: Vec<TaskDef>,
}

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("InvalidParams: {0}")]
    InvalidParams(String),
    #[error("BindFailed: {0}")]
    BindFailed(String),
    #[error("manifest io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    Invalid(String),
}

impl SiteManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), SandboxError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SandboxError> {
        let text = std::fs::read_to_string(path)?;
        let manifest: SiteManifest = serde_json::from_str(&text)?;
        manifest.check()?;
        Ok(manifest)
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskDef> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// Referential integrity: link/form targets and index paths exist.
    pub fn check(&self) -> Result<(), SandboxError> {
        let missing = |p: &str| !self.pages.contains_key(p);
        for (path, page) in &self.pages {
            for l in &page.links {
                if missing(&l.target_path) {
                    return Err(SandboxError::Invalid(format!("{path}: link to missing {}", l.target_path)));
                }
            }
            for f in &page.forms {
                if let Some(t) = f.route.values().find(|t| missing(t)) {
                    return Err(SandboxError::Invalid(format!("{path}: form routes to missing {t}")));
                }
            }
        }
        for (term, hits) in &self.index {
            if let Some(h) = hits.iter().find(|h| missing(&h.path)) {
                return Err(SandboxError::Invalid(format!("index term {term:?} points at missing {}", h.path)));
            }
        }
        for t in &self.tasks {
            if missing(&t.host_path) {
                return Err(SandboxError::Invalid(format!("task {} hosted on missing {}", t.task_id, t.host_path)));
            }
        }
        Ok(())
    }
}

/// Run one task against the in-process sandbox.
pub fn run_task(manifest: &Arc<SiteManifest>, task: &TaskDef, policy: &dyn Policy, config: &EpisodeConfig) -> Trajectory {
    let mut session = ScriptlessSession::sandbox_manifest(manifest.clone(), config.counter().clone());
    let search = SandboxSearch::new(manifest.clone());
    run_episode(&task.task_id, &task.question, policy, &mut session, &search, config)
}

//! Brute-force solvability: breadth-first search over browser states using
//! only a given subset of the tools.

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::hash::{Hash, Hasher};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use url::Url;

use super::site::{canonicalize, render_route, search_index, snippet, tokenize};
use super::{SiteManifest, TaskDef};
use crate::backend::{click_effect, fill_html, ClickEffect, SANDBOX_BASE};
use crate::snapshot::{parse_html, Locator, Role};
use crate::toolkit::{ToolName, MAX_RESULTS};

const MAX_REDIRECTS: usize = 10;
const MAX_STATES: usize = 50_000;

/// One agent action in an oracle plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum PlanStep {
    Search { query: String },
    Visit { url: String },
    Click { element_id: String },
    Fill { element_id: String, text: String },
}

impl PlanStep {
    pub fn tool(&self) -> ToolName {
        match self {
            PlanStep::Search { .. } => ToolName::Search,
            PlanStep::Visit { .. } => ToolName::Visit,
            PlanStep::Click { .. } => ToolName::Click,
            PlanStep::Fill { .. } => ToolName::Fill,
        }
    }
}

type StateKey = (String, u64);

struct View {
    text: String,
    hrefs: Vec<String>,
    clickable: Vec<(String, Locator)>,
    editable: Vec<(String, Locator)>,
}

struct Node {
    url: Url,
    html: Rc<String>,
    key: StateKey,
    parent: Option<usize>,
    steps: Vec<PlanStep>,
}

/// Caches page views and click outcomes across searches over one manifest.
pub struct Oracle<'m> {
    manifest: &'m SiteManifest,
    base: Url,
    /// Indexed paths a search can surface, with a query that does so.
    retrievable: Vec<(String, String)>,
    views: RefCell<HashMap<StateKey, Rc<View>>>,
    clicks: RefCell<HashMap<(StateKey, String), Option<(Url, Rc<String>)>>>,
}

fn key_of(url: &Url, html: &str) -> StateKey {
    let mut h = DefaultHasher::new();
    html.hash(&mut h);
    (url.to_string(), h.finish())
}

impl<'m> Oracle<'m> {
    pub fn new(manifest: &'m SiteManifest) -> Self {
        let mut retrievable = Vec::new();
        for (path, page) in &manifest.pages {
            if path.starts_with("/records/") {
                continue;
            }
            // prefer title words, then any indexed word of the page
            let title_terms = tokenize(&page.title);
            let other_terms = manifest
                .index
                .iter()
                .filter(|(_, hits)| hits.iter().any(|h| &h.path == path))
                .map(|(t, _)| t.clone());
            let found = title_terms
                .into_iter()
                .chain(other_terms)
                .find(|t| search_index(manifest, t, MAX_RESULTS).iter().any(|h| &h.path == path));
            if let Some(q) = found {
                retrievable.push((path.clone(), q));
            }
        }
        Oracle {
            manifest,
            base: Url::parse(SANDBOX_BASE).expect("valid base"),
            retrievable,
            views: RefCell::new(HashMap::new()),
            clicks: RefCell::new(HashMap::new()),
        }
    }

    fn fetch(&self, mut url: Url) -> Option<(Url, Rc<String>)> {
        for _ in 0..=MAX_REDIRECTS {
            let query: Vec<(String, String)> = url.query_pairs().map(|(k, v)| (k.into_owned(), v.into_owned())).collect();
            let r = render_route(self.manifest, url.path(), &query);
            match r.status {
                200 => return Some((url, Rc::new(r.body))),
                300..=399 => url = url.join(r.location.as_deref()?).ok()?,
                _ => return None,
            }
        }
        None
    }

    fn view(&self, node: &Node) -> Rc<View> {
        if let Some(v) = self.views.borrow().get(&node.key) {
            return v.clone();
        }
        let snap = parse_html(&node.html, node.url.path());
        let mut hrefs = Vec::new();
        let mut clickable = Vec::new();
        let mut editable = Vec::new();
        for el in snap.interactive() {
            let loc = snap.interactive_index[el.element_id].clone();
            if el.role == Role::Link {
                if let Some(h) = el.node.attrs.get("href") {
                    hrefs.push(h.clone());
                }
            }
            if el.role.is_editable() {
                editable.push((el.element_id.to_string(), loc.clone()));
            }
            clickable.push((el.element_id.to_string(), loc));
        }
        let v = Rc::new(View {
            text: snap.rendered_text,
            hrefs,
            clickable,
            editable,
        });
        self.views.borrow_mut().insert(node.key.clone(), v.clone());
        v
    }

    fn click(&self, node: &Node, id: &str, loc: &Locator) -> Option<(Url, Rc<String>)> {
        let ck = (node.key.clone(), id.to_string());
        if let Some(r) = self.clicks.borrow().get(&ck) {
            return r.clone();
        }
        let out = match click_effect(&node.html, &node.url, loc) {
            Ok(ClickEffect::Navigate(u)) => self.fetch(u),
            Ok(ClickEffect::Mutate(h)) if h != *node.html => Some((node.url.clone(), Rc::new(h))),
            _ => None,
        };
        self.clicks.borrow_mut().insert(ck, out.clone());
        out
    }

    /// Values a fill may use: form route keys (per field) mentioned in the question.
    fn fill_candidates(&self, task: &TaskDef) -> Vec<String> {
        let q = canonicalize(&task.question);
        let mut out = BTreeSet::new();
        for page in self.manifest.pages.values() {
            for f in &page.forms {
                for key in f.route.keys() {
                    for part in key.split('|') {
                        if !part.is_empty() && q.contains(part) {
                            out.insert(part.to_string());
                        }
                    }
                }
            }
        }
        out.into_iter().collect()
    }

    /// Shortest action sequence (in BFS order) after which the gold answer is
    /// visible, using only `tools`.
    pub fn plan(&self, task: &TaskDef, tools: &[ToolName]) -> Option<Vec<PlanStep>> {
        let allowed = |t: ToolName| tools.contains(&t);
        let answer = task.gold.answer.as_str();
        if allowed(ToolName::Search) {
            for (path, q) in &self.retrievable {
                let page = &self.manifest.pages[path];
                if page.title.contains(answer) || snippet(page).contains(answer) {
                    return Some(vec![PlanStep::Search { query: q.clone() }]);
                }
            }
        }
        if !allowed(ToolName::Visit) || !allowed(ToolName::Search) {
            // no URL is ever known without search, and no page loads without visit
            return None;
        }
        let candidates = self.fill_candidates(task);
        let mut nodes: Vec<Node> = Vec::new();
        let mut seen: HashSet<StateKey> = HashSet::new();
        let mut queue = VecDeque::new();

        let mut push = |nodes: &mut Vec<Node>, queue: &mut VecDeque<usize>, url: Url, html: Rc<String>, parent, steps| {
            let key = key_of(&url, &html);
            if nodes.len() >= MAX_STATES || !seen.insert(key.clone()) {
                return None;
            }
            nodes.push(Node { url, html, key, parent, steps });
            let i = nodes.len() - 1;
            queue.push_back(i);
            self.view(&nodes[i]).text.contains(answer).then_some(i)
        };

        for (path, q) in &self.retrievable {
            let Ok(url) = self.base.join(path) else { continue };
            let Some((url, html)) = self.fetch(url) else { continue };
            let steps = vec![PlanStep::Search { query: q.clone() }, PlanStep::Visit { url: path.clone() }];
            if let Some(hit) = push(&mut nodes, &mut queue, url, html, None, steps) {
                return Some(trace(&nodes, hit));
            }
        }

        while let Some(i) = queue.pop_front() {
            let view = self.view(&nodes[i]);
            let mut next: Vec<(Url, Rc<String>, PlanStep)> = Vec::new();
            for href in &view.hrefs {
                let Ok(u) = nodes[i].url.join(href) else { continue };
                if let Some((u, h)) = self.fetch(u) {
                    next.push((u, h, PlanStep::Visit { url: href.clone() }));
                }
            }
            if allowed(ToolName::Click) {
                for (id, loc) in &view.clickable {
                    if let Some((u, h)) = self.click(&nodes[i], id, loc) {
                        next.push((u, h, PlanStep::Click { element_id: id.clone() }));
                    }
                }
            }
            if allowed(ToolName::Fill) {
                for (id, loc) in &view.editable {
                    for c in &candidates {
                        if let Ok(h) = fill_html(&nodes[i].html, loc, c) {
                            let step = PlanStep::Fill { element_id: id.clone(), text: c.clone() };
                            next.push((nodes[i].url.clone(), Rc::new(h), step));
                        }
                    }
                }
            }
            for (u, h, step) in next {
                if let Some(hit) = push(&mut nodes, &mut queue, u, h, Some(i), vec![step]) {
                    return Some(trace(&nodes, hit));
                }
            }
        }
        None
    }

    pub fn solvable_with(&self, task: &TaskDef, tools: &[ToolName]) -> bool {
        self.plan(task, tools).is_some()
    }

    /// Smallest solving subset of the four tools (ties broken by tool order).
    pub fn minimal_toolset(&self, task: &TaskDef) -> Option<Vec<ToolName>> {
        let mut subsets: Vec<Vec<ToolName>> = (0u32..16)
            .map(|mask| {
                ToolName::ALL
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, t)| *t)
                    .collect()
            })
            .collect();
        subsets.sort_by_key(|s| s.len());
        subsets.into_iter().find(|s| self.solvable_with(task, s))
    }
}

fn trace(nodes: &[Node], mut i: usize) -> Vec<PlanStep> {
    let mut chunks = Vec::new();
    loop {
        chunks.push(nodes[i].steps.clone());
        match nodes[i].parent {
            Some(p) => i = p,
            None => break,
        }
    }
    chunks.into_iter().rev().flatten().collect()
}

pub fn solvable_with(manifest: &SiteManifest, task: &TaskDef, tools: &[ToolName]) -> bool {
    Oracle::new(manifest).solvable_with(task, tools)
}

pub fn minimal_toolset(manifest: &SiteManifest, task: &TaskDef) -> Option<Vec<ToolName>> {
    Oracle::new(manifest).minimal_toolset(task)
}

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use url::Url;

use super::{IndexEntry, PageDef, SiteManifest};
use crate::backend::{BackendError, Fetched, PageSource};
use crate::snapshot::dom::escape_html;
use crate::toolkit::{SearchProvider, SearchResult, MAX_RESULTS};

const REVEAL_PARAM: &str = "_reveal";
const FORM_SEGMENT: &str = "/__form/";
const SNIPPET_CHARS: usize = 160;

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Lowercase, trim, collapse internal whitespace.
pub fn canonicalize(value: &str) -> String {
    value.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Term-frequency index over titles and visible blocks. Record pages
/// (reachable only through forms) are not indexed.
pub(crate) fn build_index(pages: &BTreeMap<String, PageDef>) -> BTreeMap<String, Vec<IndexEntry>> {
    let mut index: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for (path, page) in pages {
        if path.starts_with("/records/") {
            continue;
        }
        let words = std::iter::once(&page.title).chain(&page.blocks).flat_map(|t| tokenize(t));
        for w in words {
            *index.entry(w).or_default().entry(path.clone()).or_default() += 1;
        }
    }
    index
        .into_iter()
        .map(|(term, per_path)| {
            let entries = per_path.into_iter().map(|(path, score)| IndexEntry { path, score }).collect();
            (term, entries)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexHit {
    pub path: String,
    pub score: u32,
}

/// Rank pages for a query: summed term frequency, descending, ties by path.
pub fn search_index(manifest: &SiteManifest, query: &str, limit: usize) -> Vec<IndexHit> {
    let mut scores: BTreeMap<&str, u32> = BTreeMap::new();
    for term in tokenize(query) {
        for e in manifest.index.get(&term).into_iter().flatten() {
            *scores.entry(e.path.as_str()).or_default() += e.score;
        }
    }
    let mut hits: Vec<IndexHit> = scores
        .into_iter()
        .map(|(path, score)| IndexHit { path: path.to_string(), score })
        .collect();
    hits.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.path.cmp(&b.path)));
    hits.truncate(limit);
    hits
}

pub(crate) fn snippet(page: &PageDef) -> String {
    let first = page.blocks.first().map(String::as_str).unwrap_or_default();
    first.chars().take(SNIPPET_CHARS).collect()
}

/// Search provider backed by a manifest's index.
#[derive(Clone)]
pub struct SandboxSearch {
    manifest: Arc<SiteManifest>,
    base: Option<Url>,
}

impl SandboxSearch {
    /// Results carry bare paths (as the in-process sandbox backend reports them).
    pub fn new(manifest: Arc<SiteManifest>) -> Self {
        SandboxSearch { manifest, base: None }
    }

    /// Results carry absolute URLs under `base` (for a served sandbox).
    pub fn with_base(manifest: Arc<SiteManifest>, base: Url) -> Self {
        SandboxSearch { manifest, base: Some(base) }
    }
}

impl SearchProvider for SandboxSearch {
    fn search(&self, query: &str, limit: usize) -> Result<Vec<SearchResult>, String> {
        Ok(search_index(&self.manifest, query, limit.min(MAX_RESULTS))
            .into_iter()
            .enumerate()
            .map(|(i, hit)| {
                let page = &self.manifest.pages[&hit.path];
                let url = match &self.base {
                    Some(b) => b.join(&hit.path).map(|u| u.to_string()).unwrap_or(hit.path.clone()),
                    None => hit.path.clone(),
                };
                SearchResult {
                    rank: i + 1,
                    url,
                    title: page.title.clone(),
                    snippet: snippet(page),
                }
            })
            .collect())
    }
}

fn reveal_set(query: &[(String, String)]) -> BTreeSet<usize> {
    query
        .iter()
        .filter(|(k, _)| k == REVEAL_PARAM)
        .flat_map(|(_, v)| v.split(',').filter_map(|s| s.trim().parse().ok()).collect::<Vec<_>>())
        .collect()
}

fn join_set(set: &BTreeSet<usize>) -> String {
    set.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn page_html(path: &str, page: &PageDef, revealed: &BTreeSet<usize>) -> String {
    let e = escape_html;
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>");
    h.push_str(&e(&page.title));
    h.push_str("</title></head>\n<body>\n<h1>");
    h.push_str(&e(&page.title));
    h.push_str("</h1>\n");
    let mut blocks = page.blocks.iter();
    if let Some(intro) = blocks.next() {
        h.push_str(&format!("<p>{}</p>\n", e(intro)));
    }
    for (k, r) in page.reveals.iter().enumerate() {
        let mut toggled = revealed.clone();
        if !toggled.remove(&k) {
            toggled.insert(k);
        }
        h.push_str(&format!(
            "<form method=\"get\" action=\"{}\"><input type=\"hidden\" name=\"{REVEAL_PARAM}\" value=\"{}\">\
             <button type=\"submit\">{}</button></form>\n",
            e(path),
            join_set(&toggled),
            e(&r.toggle_label)
        ));
        if revealed.contains(&k) {
            h.push_str(&format!("<div class=\"revealed\"><p>{}</p></div>\n", e(&r.hidden_text)));
        }
    }
    for (i, f) in page.forms.iter().enumerate() {
        h.push_str(&format!("<form method=\"get\" action=\"{}{FORM_SEGMENT}{i}\">", e(path)));
        for field in &f.fields {
            let id = format!("f{i}-{}", field.name);
            h.push_str(&format!(
                "<label for=\"{id}\">{}</label> <input type=\"text\" id=\"{id}\" name=\"{}\"> ",
                e(&field.label),
                e(&field.name)
            ));
        }
        h.push_str("<button type=\"submit\">Look up</button></form>\n");
    }
    for b in blocks {
        h.push_str(&format!("<p>{}</p>\n", e(b)));
    }
    if !page.links.is_empty() {
        h.push_str("<ul>\n");
        for l in &page.links {
            h.push_str(&format!("<li><a href=\"{}\">{}</a></li>\n", e(&l.target_path), e(&l.label)));
        }
        h.push_str("</ul>\n");
    }
    h.push_str("</body></html>\n");
    h
}

fn simple_page(title: &str, text: &str, back: &str) -> String {
    let e = escape_html;
    format!(
        "<!DOCTYPE html>\n<html><head><title>{t}</title></head>\n<body>\n<h1>{t}</h1>\n<p>{}</p>\n\
         <ul>\n<li><a href=\"{}\">Back</a></li>\n</ul>\n</body></html>\n",
        e(text),
        e(back),
        t = e(title)
    )
}

fn fetched(status: u16, body: String, location: Option<String>) -> Fetched {
    Fetched { status, body, location }
}

/// Serve one GET request against the manifest.
pub fn render_route(manifest: &SiteManifest, path: &str, query: &[(String, String)]) -> Fetched {
    if path.is_empty() || path == "/" {
        return fetched(302, String::new(), Some("/home".into()));
    }
    if let Some(page) = manifest.pages.get(path) {
        return fetched(200, page_html(path, page, &reveal_set(query)), None);
    }
    if let Some((host, idx)) = path.rsplit_once(FORM_SEGMENT) {
        let form = idx
            .parse::<usize>()
            .ok()
            .and_then(|i| manifest.pages.get(host).and_then(|p| p.forms.get(i)));
        if let Some(form) = form {
            let key = form
                .fields
                .iter()
                .map(|f| {
                    let v = query.iter().find(|(k, _)| k == &f.name).map_or("", |(_, v)| v.as_str());
                    canonicalize(v)
                })
                .collect::<Vec<_>>()
                .join("|");
            return match form.route.get(&key) {
                Some(target) => fetched(302, String::new(), Some(target.clone())),
                None => fetched(200, simple_page("No matching record", "No record matches the submitted value.", host), None),
            };
        }
    }
    fetched(404, simple_page("Not found", &format!("No page at {path}."), "/home"), None)
}

/// Serves a manifest in-process (ignores scheme and host).
pub struct ManifestSource {
    manifest: Arc<SiteManifest>,
}

impl ManifestSource {
    pub fn new(manifest: Arc<SiteManifest>) -> Self {
        ManifestSource { manifest }
    }
}

impl PageSource for ManifestSource {
    fn get(&self, url: &Url) -> Result<Fetched, BackendError> {
        let query: Vec<(String, String)> = url.query_pairs().map(|(k, v)| (k.into_owned(), v.into_owned())).collect();
        Ok(render_route(&self.manifest, url.path(), &query))
    }
}

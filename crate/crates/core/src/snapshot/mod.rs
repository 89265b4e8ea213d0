//! Semantic DOM snapshots.
//!
//! A snapshot turns raw HTML into a tree of [`SemanticNode`]s and a rendered
//! text form for the policy. Interactive elements get identifiers `e1`, `e2`,
//! ... in document order; each identifier maps to a [`Locator`] the backend
//! can resolve against the page it came from.

pub mod dom;
mod render;

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::Counter;
use dom::{normalize_ws, Document, Element, NodeKind};

pub use render::{render_with, RenderOptions};

/// Attribute the live backend stamps on every element before capturing HTML.
pub const INDEX_ATTR: &str = "data-nb-idx";

const MAX_LABEL_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Heading,
    Paragraph,
    Link,
    Button,
    Input,
    Select,
    Textarea,
    ListItem,
    Table,
    TableCell,
    ImageAlt,
    Other,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Heading => "heading",
            Role::Paragraph => "paragraph",
            Role::Link => "link",
            Role::Button => "button",
            Role::Input => "input",
            Role::Select => "select",
            Role::Textarea => "textarea",
            Role::ListItem => "list_item",
            Role::Table => "table",
            Role::TableCell => "table_cell",
            Role::ImageAlt => "image_alt",
            Role::Other => "other",
        }
    }

    pub fn is_interactive(self) -> bool {
        matches!(
            self,
            Role::Link | Role::Button | Role::Input | Role::Select | Role::Textarea
        )
    }

    pub fn is_editable(self) -> bool {
        matches!(self, Role::Input | Role::Select | Role::Textarea)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticNode {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_id: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<SemanticNode>,
}

impl SemanticNode {
    fn new(role: Role) -> Self {
        SemanticNode {
            role,
            text: String::new(),
            element_id: None,
            attrs: BTreeMap::new(),
            level: None,
            children: Vec::new(),
        }
    }

    fn text_run(text: String) -> Self {
        SemanticNode {
            text,
            ..SemanticNode::new(Role::Other)
        }
    }

    /// A bare run of text inside mixed content.
    pub fn is_text_run(&self) -> bool {
        self.role == Role::Other
            && self.element_id.is_none()
            && self.children.is_empty()
            && self.attrs.is_empty()
    }

    /// Pre-order walk.
    pub fn walk(&self) -> Vec<&SemanticNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocatorStrategy {
    DocumentOrderIndex,
    AttributePath,
}

/// Backend-facing handle behind an element id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Locator {
    pub strategy: LocatorStrategy,
    pub value: String,
}

impl Locator {
    pub fn document_order(ordinal: usize) -> Self {
        Locator {
            strategy: LocatorStrategy::DocumentOrderIndex,
            value: ordinal.to_string(),
        }
    }

    pub fn attribute_path(selector: impl Into<String>) -> Self {
        Locator {
            strategy: LocatorStrategy::AttributePath,
            value: selector.into(),
        }
    }

    /// CSS selector form, usable by a live browser.
    pub fn css_selector(&self) -> Option<String> {
        match self.strategy {
            LocatorStrategy::AttributePath => Some(self.value.clone()),
            LocatorStrategy::DocumentOrderIndex => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("UnknownElement: no element with id \"{0}\" on the current page")]
    UnknownElement(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LocateError {
    #[error("StaleLocator: {0:?} no longer resolves to an element")]
    Stale(Locator),
    #[error("StaleLocator: {0:?} resolves to {1} elements")]
    Ambiguous(Locator, usize),
    #[error("unsupported locator selector {0:?}")]
    BadSelector(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomSnapshot {
    pub url: String,
    pub title: String,
    pub root: SemanticNode,
    pub interactive_index: IndexMap<String, Locator>,
    pub rendered_text: String,
    pub token_count: u64,
}

/// Short description of one interactive element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementSummary<'a> {
    pub element_id: &'a str,
    pub role: Role,
    pub label: &'a str,
    pub node: &'a SemanticNode,
}

impl DomSnapshot {
    pub fn empty(url: &str) -> Self {
        DomSnapshot {
            url: url.to_string(),
            title: String::new(),
            root: SemanticNode::new(Role::Other),
            interactive_index: IndexMap::new(),
            rendered_text: String::new(),
            token_count: 0,
        }
    }

    /// Interactive elements in document order.
    pub fn interactive(&self) -> Vec<ElementSummary<'_>> {
        self.root
            .walk()
            .into_iter()
            .filter_map(|n| {
                n.element_id.as_deref().map(|id| ElementSummary {
                    element_id: id,
                    role: n.role,
                    label: n.attrs.get("label").map_or(n.text.as_str(), String::as_str),
                    node: n,
                })
            })
            .collect()
    }

    pub fn element(&self, element_id: &str) -> Option<ElementSummary<'_>> {
        self.interactive().into_iter().find(|e| e.element_id == element_id)
    }
}

pub fn parse_html(html: &str, url: &str) -> DomSnapshot {
    parse_html_with(html, url, &Counter::default(), &RenderOptions::default())
}

pub fn parse_html_with(html: &str, url: &str, counter: &Counter, options: &RenderOptions) -> DomSnapshot {
    let doc = Document::parse(html);
    let mut conv = Converter::new(&doc);
    let mut root = SemanticNode::new(Role::Other);
    let items = conv.collect(doc.root());
    fill_block(&mut root, items);
    let rendered_text = render_with(&root, options);
    let token_count = counter.count(&rendered_text);
    DomSnapshot {
        url: url.to_string(),
        title: doc.title(),
        root,
        interactive_index: conv.index,
        rendered_text,
        token_count,
    }
}

/// Rendered text of a snapshot under the default options.
pub fn render_text(snapshot: &DomSnapshot) -> String {
    render_with(&snapshot.root, &RenderOptions::default())
}

pub fn resolve_locator<'a>(snapshot: &'a DomSnapshot, element_id: &str) -> Result<&'a Locator, SnapshotError> {
    snapshot
        .interactive_index
        .get(element_id)
        .ok_or_else(|| SnapshotError::UnknownElement(element_id.to_string()))
}

/// Resolve a locator to a node of a parsed document.
pub fn locate(doc: &Document, locator: &Locator) -> Result<usize, LocateError> {
    match locator.strategy {
        LocatorStrategy::DocumentOrderIndex => {
            let ordinal: usize = locator
                .value
                .parse()
                .map_err(|_| LocateError::BadSelector(locator.value.clone()))?;
            doc.by_ordinal(ordinal)
                .map(|(n, _)| n)
                .ok_or_else(|| LocateError::Stale(locator.clone()))
        }
        LocatorStrategy::AttributePath => {
            let (attr, value) = parse_attribute_selector(&locator.value)
                .ok_or_else(|| LocateError::BadSelector(locator.value.clone()))?;
            let hits: Vec<usize> = doc
                .elements
                .iter()
                .copied()
                .filter(|&n| doc.element(n).and_then(|e| e.attr(&attr)) == Some(value.as_str()))
                .collect();
            match hits.len() {
                1 => Ok(hits[0]),
                0 => Err(LocateError::Stale(locator.clone())),
                k => Err(LocateError::Ambiguous(locator.clone(), k)),
            }
        }
    }
}

/// Supports `[attr="value"]` and `#id`.
fn parse_attribute_selector(sel: &str) -> Option<(String, String)> {
    let sel = sel.trim();
    if let Some(id) = sel.strip_prefix('#') {
        return Some(("id".to_string(), id.to_string()));
    }
    let inner = sel.strip_prefix('[')?.strip_suffix(']')?;
    let (attr, value) = inner.split_once('=')?;
    let value = value.trim();
    let value = value
        .strip_prefix('"')
        .and_then(|v| v.strip_suffix('"'))
        .or_else(|| value.strip_prefix('\'').and_then(|v| v.strip_suffix('\'')))
        .unwrap_or(value);
    Some((attr.trim().to_ascii_lowercase(), value.to_string()))
}

const SKIPPED: &[&str] = &[
    "script", "style", "noscript", "template", "head", "meta", "link", "title", "iframe",
    "object", "embed", "canvas", "svg", "base",
];

const BLOCKS: &[&str] = &[
    "html", "body", "div", "section", "article", "main", "header", "footer", "nav", "aside", "p",
    "h1", "h2", "h3", "h4", "h5", "h6", "ul", "ol", "li", "dl", "dt", "dd", "table", "thead",
    "tbody", "tfoot", "tr", "td", "th", "caption", "form", "fieldset", "legend", "blockquote",
    "pre", "figure", "figcaption", "details", "summary", "address", "hr", "br", "center",
];

pub(crate) fn is_hidden(el: &Element) -> bool {
    if el.has_attr("hidden") {
        return true;
    }
    if el.attr("aria-hidden").is_some_and(|v| v.eq_ignore_ascii_case("true")) {
        return true;
    }
    if el.name == "input" && el.attr("type").is_some_and(|t| t.eq_ignore_ascii_case("hidden")) {
        return true;
    }
    if let Some(style) = el.attr("style") {
        let compact: String = style
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        if compact.contains("display:none") || compact.contains("visibility:hidden") {
            return true;
        }
    }
    false
}

/// Role of a natively interactive element, if it is one.
fn native_interactive_role(el: &Element) -> Option<Role> {
    match el.name.as_str() {
        "a" if el.has_attr("href") => Some(Role::Link),
        "button" => Some(Role::Button),
        "input" => {
            let ty = el.attr("type").unwrap_or("text").to_ascii_lowercase();
            match ty.as_str() {
                "submit" | "button" | "reset" | "image" => Some(Role::Button),
                _ => Some(Role::Input),
            }
        }
        "select" => Some(Role::Select),
        "textarea" => Some(Role::Textarea),
        _ => None,
    }
}

fn block_role(name: &str) -> (Role, Option<u8>) {
    match name {
        "h1" | "h2" | "h3" | "h4" | "h5" | "h6" => (Role::Heading, name[1..].parse().ok()),
        "p" => (Role::Paragraph, None),
        "li" | "dt" | "dd" => (Role::ListItem, None),
        "table" => (Role::Table, None),
        "td" | "th" => (Role::TableCell, None),
        _ => (Role::Other, None),
    }
}

fn truncate_label(s: String) -> String {
    if s.chars().count() <= MAX_LABEL_CHARS {
        return s;
    }
    let mut t: String = s.chars().take(MAX_LABEL_CHARS - 1).collect();
    t.push('…');
    t
}

enum Item {
    Text(String),
    Node(SemanticNode),
}

struct Converter<'d> {
    doc: &'d Document,
    index: IndexMap<String, Locator>,
    label_for: HashMap<String, String>,
}

impl<'d> Converter<'d> {
    fn new(doc: &'d Document) -> Self {
        let mut label_for = HashMap::new();
        for &n in &doc.elements {
            if let Some(el) = doc.element(n) {
                if el.name == "label" {
                    if let Some(target) = el.attr("for") {
                        label_for
                            .entry(target.to_string())
                            .or_insert_with(|| normalize_ws(&doc.text_content(n)));
                    }
                }
            }
        }
        Converter {
            doc,
            index: IndexMap::new(),
            label_for,
        }
    }

    fn assign_id(&mut self, el: &Element) -> String {
        let id = format!("e{}", self.index.len() + 1);
        let locator = match el.attr(INDEX_ATTR) {
            Some(v) => Locator::attribute_path(format!("[{INDEX_ATTR}=\"{v}\"]")),
            None => Locator::document_order(el.ordinal),
        };
        self.index.insert(id.clone(), locator);
        id
    }

    /// Flattened content of `node`: text runs, block children, interactive leaves.
    fn collect(&mut self, node: usize) -> Vec<Item> {
        let mut items = Vec::new();
        for &child in &self.doc.nodes[node].children {
            match &self.doc.nodes[child].kind {
                NodeKind::Text(t) => items.push(Item::Text(t.clone())),
                NodeKind::Document => {}
                NodeKind::Element(el) => {
                    if SKIPPED.contains(&el.name.as_str()) || is_hidden(el) {
                        continue;
                    }
                    if let Some(role) = native_interactive_role(el) {
                        let n = self.interactive(child, el, role);
                        items.push(Item::Node(n));
                    } else if el.has_attr("onclick") {
                        let n = self.clickable(child, el);
                        items.push(Item::Node(n));
                    } else if el.name == "img" {
                        let alt = normalize_ws(el.attr("alt").unwrap_or(""));
                        if !alt.is_empty() {
                            items.push(Item::Node(SemanticNode {
                                text: alt,
                                ..SemanticNode::new(Role::ImageAlt)
                            }));
                        }
                    } else if BLOCKS.contains(&el.name.as_str()) {
                        let (role, level) = block_role(&el.name);
                        let mut n = SemanticNode::new(role);
                        n.level = level;
                        let inner = self.collect(child);
                        fill_block(&mut n, inner);
                        // a bare <br> or empty wrapper contributes nothing
                        if !(n.text.is_empty() && n.children.is_empty()) || role == Role::TableCell {
                            items.push(Item::Node(n));
                        } else {
                            items.push(Item::Text(" ".into()));
                        }
                    } else {
                        items.extend(self.collect(child));
                    }
                }
            }
        }
        items
    }

    fn interactive(&mut self, node: usize, el: &Element, role: Role) -> SemanticNode {
        let element_id = self.assign_id(el);
        let mut n = SemanticNode::new(role);
        let text_content = normalize_ws(&self.doc.text_content(node));
        let aria = el.attr("aria-label").map(normalize_ws).filter(|s| !s.is_empty());
        let label = match role {
            Role::Link | Role::Button => {
                let from_value = if el.name == "input" {
                    el.attr("value").map(normalize_ws)
                } else {
                    None
                };
                let img_alt = self
                    .doc
                    .descendants(node)
                    .into_iter()
                    .filter_map(|d| self.doc.element(d))
                    .find(|e| e.name == "img")
                    .and_then(|e| e.attr("alt"))
                    .map(normalize_ws);
                [Some(text_content.clone()), from_value, aria, el.attr("title").map(normalize_ws), img_alt]
                    .into_iter()
                    .flatten()
                    .find(|s| !s.is_empty())
                    .unwrap_or_default()
            }
            _ => {
                let associated = el.attr("id").and_then(|id| self.label_for.get(id)).cloned();
                let wrapping = self
                    .doc
                    .ancestors(node)
                    .find(|&a| self.doc.element(a).is_some_and(|e| e.name == "label"))
                    .map(|a| normalize_ws(&self.doc.text_content(a)));
                [
                    aria,
                    associated,
                    wrapping,
                    el.attr("placeholder").map(normalize_ws),
                    el.attr("name").map(normalize_ws),
                ]
                .into_iter()
                .flatten()
                .find(|s| !s.is_empty())
                .unwrap_or_else(|| el.name.clone())
            }
        };
        n.text = truncate_label(label);
        if role == Role::Link {
            if let Some(href) = el.attr("href") {
                n.attrs.insert("href".into(), href.to_string());
            }
        }
        if el.name == "input" {
            n.attrs.insert(
                "input_type".into(),
                el.attr("type").unwrap_or("text").to_ascii_lowercase(),
            );
            if role == Role::Input {
                if let Some(v) = el.attr("value") {
                    n.attrs.insert("value".into(), v.to_string());
                }
                if el.has_attr("checked") {
                    n.attrs.insert("checked".into(), "true".into());
                }
            }
        }
        for key in ["placeholder", "name"] {
            if let Some(v) = el.attr(key) {
                n.attrs.insert(key.into(), v.to_string());
            }
        }
        match role {
            Role::Textarea => {
                n.attrs.insert("value".into(), self.doc.text_content(node));
            }
            Role::Select => {
                let options: Vec<(String, String, bool)> = self
                    .doc
                    .descendants(node)
                    .into_iter()
                    .filter_map(|d| self.doc.element(d).map(|e| (d, e)))
                    .filter(|(_, e)| e.name == "option")
                    .map(|(d, e)| {
                        let text = normalize_ws(&self.doc.text_content(d));
                        let value = e.attr("value").map_or_else(|| text.clone(), str::to_string);
                        (text, value, e.has_attr("selected"))
                    })
                    .collect();
                let selected = options.iter().find(|o| o.2).or(options.first());
                if let Some((_, value, _)) = selected {
                    n.attrs.insert("value".into(), value.clone());
                }
                if !options.is_empty() {
                    let list: Vec<&str> = options.iter().map(|o| o.0.as_str()).collect();
                    n.attrs.insert("options".into(), list.join(" | "));
                }
            }
            _ => {}
        }
        n.element_id = Some(element_id);
        n
    }

    /// Non-native element with a click handler: keeps its content as children.
    fn clickable(&mut self, node: usize, el: &Element) -> SemanticNode {
        let element_id = self.assign_id(el);
        let (role, level) = if BLOCKS.contains(&el.name.as_str()) {
            block_role(&el.name)
        } else {
            (Role::Other, None)
        };
        let mut n = SemanticNode::new(role);
        n.level = level;
        let inner = self.collect(node);
        fill_block(&mut n, inner);
        let label = truncate_label(normalize_ws(&self.doc.text_content(node)));
        n.attrs.insert("label".into(), label);
        n.element_id = Some(element_id);
        n
    }
}

/// Populate a block node from its flattened content.
fn fill_block(node: &mut SemanticNode, items: Vec<Item>) {
    // merge adjacent raw text before normalizing so split inline runs join up
    let mut merged: Vec<Item> = Vec::new();
    for item in items {
        match (merged.last_mut(), item) {
            (Some(Item::Text(prev)), Item::Text(t)) => prev.push_str(&t),
            (_, item) => merged.push(item),
        }
    }
    let has_nodes = merged.iter().any(|i| matches!(i, Item::Node(_)));
    let mut direct = Vec::new();
    for item in merged {
        match item {
            Item::Text(t) => {
                let t = normalize_ws(&t);
                if t.is_empty() {
                    continue;
                }
                direct.push(t.clone());
                if has_nodes {
                    node.children.push(SemanticNode::text_run(t));
                }
            }
            Item::Node(n) => node.children.push(n),
        }
    }
    node.text = direct.join(" ");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paragraph_only() {
        let s = parse_html("<p>hi</p>", "u");
        assert_eq!(s.root.children.len(), 1);
        assert_eq!(s.root.children[0].role, Role::Paragraph);
        assert_eq!(s.root.children[0].text, "hi");
        assert!(s.interactive_index.is_empty());
    }

    #[test]
    fn interactive_ids_in_document_order() {
        let s = parse_html("<a href='/x'>Go</a><button>OK</button>", "u");
        let keys: Vec<&str> = s.interactive_index.keys().map(String::as_str).collect();
        assert_eq!(keys, ["e1", "e2"]);
        assert_eq!(s.interactive_index["e1"], Locator::document_order(0));
        assert_eq!(s.interactive_index["e2"], Locator::document_order(1));
    }

    #[test]
    fn empty_document() {
        let s = parse_html("", "u");
        assert_eq!(s.rendered_text, "");
        assert_eq!(s.token_count, 0);
        assert!(s.root.children.is_empty());
    }

    #[test]
    fn hidden_elements_are_dropped() {
        let html = r#"<p hidden>a</p><div style="display: none"><button>b</button></div>
            <span aria-hidden="true">c</span><input type="hidden" name="x" value="1"><p>d</p>"#;
        let s = parse_html(html, "u");
        assert_eq!(s.rendered_text, "d");
        assert!(s.interactive_index.is_empty());
    }

    #[test]
    fn onclick_elements_get_ids() {
        let s = parse_html("<div onclick='x()'>Toggle <b>me</b></div><span>plain</span>", "u");
        assert_eq!(s.interactive_index.len(), 1);
        let e = s.element("e1").unwrap();
        assert_eq!(e.role, Role::Other);
        assert_eq!(e.label, "Toggle me");
    }

    #[test]
    fn input_labels_and_values() {
        let html = r#"<label for="k">Record key</label><input id="k" name="q" value="42">
            <input name="plain"><input placeholder="Search here">
            <select name="c"><option>Red</option><option value="b" selected>Blue</option></select>
            <textarea name="notes">hello</textarea><input type="submit" value="Go">"#;
        let s = parse_html(html, "u");
        let els = s.interactive();
        let labels: Vec<&str> = els.iter().map(|e| e.label).collect();
        assert_eq!(labels, ["Record key", "plain", "Search here", "c", "notes", "Go"]);
        assert_eq!(els[0].node.attrs["value"], "42");
        assert_eq!(els[3].node.attrs["value"], "b");
        assert_eq!(els[4].node.attrs["value"], "hello");
        assert_eq!(els[5].role, Role::Button);
    }

    #[test]
    fn resolve_known_and_unknown() {
        let s = parse_html("<button>OK</button>", "u");
        assert_eq!(resolve_locator(&s, "e1").unwrap(), &Locator::document_order(0));
        let err = resolve_locator(&s, "e99").unwrap_err();
        assert_eq!(err, SnapshotError::UnknownElement("e99".into()));
        assert!(err.to_string().starts_with("UnknownElement"));
    }

    #[test]
    fn removed_element_id_is_unknown_after_resnapshot() {
        let before = parse_html("<a href='/a'>A</a><a href='/b'>B</a>", "u");
        let after = parse_html("<a href='/a'>A</a>", "u");
        let removed: Vec<&String> = before
            .interactive_index
            .keys()
            .filter(|k| !after.interactive_index.contains_key(*k))
            .collect();
        assert_eq!(removed, [&"e2".to_string()]);
        assert!(resolve_locator(&after, "e2").is_err());
    }

    #[test]
    fn live_index_attribute_yields_attribute_path() {
        let s = parse_html(r#"<div data-nb-idx="0"><a data-nb-idx="1" href="/x">x</a></div>"#, "u");
        assert_eq!(s.interactive_index["e1"], Locator::attribute_path("[data-nb-idx=\"1\"]"));
        let doc = Document::parse(r#"<div data-nb-idx="0"><a data-nb-idx="1" href="/x">x</a></div>"#);
        let node = locate(&doc, &s.interactive_index["e1"]).unwrap();
        assert_eq!(doc.element(node).unwrap().name, "a");
    }

    #[test]
    fn locate_fails_explicitly() {
        let doc = Document::parse("<p id=a>x</p><p id=a>y</p>");
        assert!(matches!(locate(&doc, &Locator::document_order(7)), Err(LocateError::Stale(_))));
        assert!(matches!(locate(&doc, &Locator::attribute_path("#a")), Err(LocateError::Ambiguous(_, 2))));
        assert!(matches!(locate(&doc, &Locator::attribute_path("#b")), Err(LocateError::Stale(_))));
        assert!(matches!(locate(&doc, &Locator::attribute_path("div > p")), Err(LocateError::BadSelector(_))));
    }

    #[test]
    fn title_and_url_are_recorded() {
        let s = parse_html("<title>T</title><p>x</p>", "https://a.example/");
        assert_eq!(s.title, "T");
        assert_eq!(s.url, "https://a.example/");
    }
}

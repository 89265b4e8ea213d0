//! Permissive HTML tokenizer and tree builder.
//!
//! Never rejects input. Keeps byte spans of every start tag and element body so
//! that form state (filled values, selections) can be written back into the
//! source document.

use std::ops::Range;

const VOID_ELEMENTS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param",
    "source", "track", "wbr",
];

/// Elements whose body is raw text rather than markup.
const RAW_TEXT_ELEMENTS: &[&str] = &[
    "script", "style", "textarea", "title", "noscript", "template", "xmp", "iframe",
];

/// Opening any of these closes an open `<p>`.
const CLOSES_P: &[&str] = &[
    "address", "article", "aside", "blockquote", "details", "div", "dl", "fieldset",
    "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6", "header",
    "hr", "main", "nav", "ol", "p", "pre", "section", "table", "ul", "li", "dd", "dt",
];

#[derive(Debug, Clone)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    /// Position among all elements in document order.
    pub ordinal: usize,
    pub start_tag: Range<usize>,
    /// Body span; `None` for void and self-closed elements.
    pub content: Option<Range<usize>>,
    pub self_closing: bool,
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn has_attr(&self, name: &str) -> bool {
        self.attrs.iter().any(|(k, _)| k == name)
    }
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Document,
    Element(Element),
    Text(String),
}

#[derive(Debug, Clone)]
pub struct Node {
    pub kind: NodeKind,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Arena-backed document tree. Node 0 is the document root.
#[derive(Debug, Clone)]
pub struct Document {
    pub nodes: Vec<Node>,
    /// Node index of each element, indexed by ordinal.
    pub elements: Vec<usize>,
}

impl Document {
    pub fn parse(source: &str) -> Document {
        Builder::new(source).run()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn element(&self, node: usize) -> Option<&Element> {
        match &self.nodes[node].kind {
            NodeKind::Element(e) => Some(e),
            _ => None,
        }
    }

    pub fn by_ordinal(&self, ordinal: usize) -> Option<(usize, &Element)> {
        let node = *self.elements.get(ordinal)?;
        self.element(node).map(|e| (node, e))
    }

    pub fn ancestors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(self.nodes[node].parent, move |&n| self.nodes[n].parent)
    }

    /// Descendant nodes in document order (excluding `node` itself).
    pub fn descendants(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.nodes[node].children.iter().rev().copied().collect();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev().copied());
        }
        out
    }

    /// Concatenated raw (undecoded-whitespace) text of all descendant text nodes.
    pub fn text_content(&self, node: usize) -> String {
        let mut s = String::new();
        for n in self.descendants(node) {
            if let NodeKind::Text(t) = &self.nodes[n].kind {
                s.push_str(t);
            }
        }
        s
    }

    pub fn title(&self) -> String {
        self.elements
            .iter()
            .filter_map(|&n| self.element(n).map(|e| (n, e)))
            .find(|(_, e)| e.name == "title")
            .map(|(n, _)| normalize_ws(&self.text_content(n)))
            .unwrap_or_default()
    }
}

/// Collapse whitespace runs (including non-breaking spaces) to single spaces and trim.
pub fn normalize_ws(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split(|c: char| c.is_whitespace()).filter(|w| !w.is_empty()) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

struct Builder<'a> {
    src: &'a str,
    pos: usize,
    nodes: Vec<Node>,
    elements: Vec<usize>,
    stack: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn new(src: &'a str) -> Self {
        Builder {
            src,
            pos: 0,
            nodes: vec![Node {
                kind: NodeKind::Document,
                parent: None,
                children: Vec::new(),
            }],
            elements: Vec::new(),
            stack: vec![0],
        }
    }

    fn run(mut self) -> Document {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() {
            if bytes[self.pos] == b'<' {
                self.markup();
            } else {
                let end = self.src[self.pos..]
                    .find('<')
                    .map_or(self.src.len(), |i| self.pos + i);
                let text = decode_entities(&self.src[self.pos..end]);
                self.push_text(text);
                self.pos = end;
            }
        }
        let end = self.src.len();
        while self.stack.len() > 1 {
            self.pop(end);
        }
        Document {
            nodes: self.nodes,
            elements: self.elements,
        }
    }

    fn markup(&mut self) {
        let rest = &self.src[self.pos..];
        let next = rest.as_bytes().get(1).copied();
        if let Some(body) = rest.strip_prefix("<!--") {
            self.pos = body.find("-->").map_or(self.src.len(), |i| self.pos + 4 + i + 3);
        } else if matches!(next, Some(b'!') | Some(b'?')) {
            self.pos = rest.find('>').map_or(self.src.len(), |i| self.pos + i + 1);
        } else if next == Some(b'/') && rest.as_bytes().get(2).is_some_and(u8::is_ascii_alphabetic) {
            self.end_tag();
        } else if next.is_some_and(|b| b.is_ascii_alphabetic()) {
            self.start_tag();
        } else {
            self.push_text("<".to_string());
            self.pos += 1;
        }
    }

    fn end_tag(&mut self) {
        let tag_start = self.pos;
        let rest = &self.src[self.pos + 2..];
        let name_len = rest
            .find(|c: char| c.is_whitespace() || c == '>' || c == '/')
            .unwrap_or(rest.len());
        let name = rest[..name_len].to_ascii_lowercase();
        self.pos = rest.find('>').map_or(self.src.len(), |i| self.pos + 2 + i + 1);
        if let Some(depth) = self.find_open(&name, &[]) {
            while self.stack.len() > depth {
                self.pop(tag_start);
            }
        }
    }

    fn start_tag(&mut self) {
        let tag_start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos + 1;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' && bytes[i] != b'/' {
            i += 1;
        }
        let name = self.src[self.pos + 1..i].to_ascii_lowercase();
        let mut attrs: Vec<(String, String)> = Vec::new();
        let mut self_closing = false;
        let mut closed = false;
        while i < bytes.len() {
            match bytes[i] {
                b'>' => {
                    i += 1;
                    closed = true;
                    break;
                }
                b if b.is_ascii_whitespace() => i += 1,
                b'/' => {
                    if bytes.get(i + 1) == Some(&b'>') {
                        self_closing = true;
                    }
                    i += 1;
                }
                _ => {
                    let name_start = i;
                    while i < bytes.len()
                        && !bytes[i].is_ascii_whitespace()
                        && !matches!(bytes[i], b'=' | b'>')
                        && !(bytes[i] == b'/' && bytes.get(i + 1) == Some(&b'>'))
                    {
                        i += 1;
                    }
                    let attr_name = self.src[name_start..i].to_ascii_lowercase();
                    let mut j = i;
                    while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                        j += 1;
                    }
                    let mut value = String::new();
                    if bytes.get(j) == Some(&b'=') {
                        j += 1;
                        while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                            j += 1;
                        }
                        match bytes.get(j) {
                            Some(&q @ (b'"' | b'\'')) => {
                                let vstart = j + 1;
                                let vend = self.src[vstart..]
                                    .find(q as char)
                                    .map_or(self.src.len(), |k| vstart + k);
                                value = decode_entities(&self.src[vstart..vend]);
                                j = (vend + 1).min(bytes.len());
                            }
                            _ => {
                                let vstart = j;
                                while j < bytes.len() && !bytes[j].is_ascii_whitespace() && bytes[j] != b'>' {
                                    j += 1;
                                }
                                value = decode_entities(&self.src[vstart..j]);
                            }
                        }
                        i = j;
                    }
                    if !attr_name.is_empty() && !attrs.iter().any(|(k, _)| *k == attr_name) {
                        attrs.push((attr_name, value));
                    }
                }
            }
        }
        self.pos = i;
        if !closed {
            // unterminated tag at end of input: dropped
            return;
        }
        self.implicit_closes(&name, tag_start);

        let is_void = VOID_ELEMENTS.contains(&name.as_str());
        let ordinal = self.elements.len();
        let parent = *self.stack.last().expect("root always open");
        let node = self.nodes.len();
        self.nodes.push(Node {
            kind: NodeKind::Element(Element {
                name: name.clone(),
                attrs,
                ordinal,
                start_tag: tag_start..i,
                content: None,
                self_closing: self_closing || is_void,
            }),
            parent: Some(parent),
            children: Vec::new(),
        });
        self.nodes[parent].children.push(node);
        self.elements.push(node);

        if is_void || self_closing {
            return;
        }
        if RAW_TEXT_ELEMENTS.contains(&name.as_str()) {
            let close = format!("</{name}");
            let body_end = find_ascii_ci(&self.src[i..], &close).map_or(self.src.len(), |k| i + k);
            if let NodeKind::Element(e) = &mut self.nodes[node].kind {
                e.content = Some(i..body_end);
            }
            if matches!(name.as_str(), "textarea" | "title") {
                let text = decode_entities(&self.src[i..body_end]);
                if !text.is_empty() {
                    let t = self.nodes.len();
                    self.nodes.push(Node {
                        kind: NodeKind::Text(text),
                        parent: Some(node),
                        children: Vec::new(),
                    });
                    self.nodes[node].children.push(t);
                }
            }
            self.pos = self.src[body_end..]
                .find('>')
                .map_or(self.src.len(), |k| body_end + k + 1);
            return;
        }
        if let NodeKind::Element(e) = &mut self.nodes[node].kind {
            e.content = Some(i..i);
        }
        self.stack.push(node);
    }

    fn implicit_closes(&mut self, name: &str, at: usize) {
        let close_through = |this: &mut Self, target: &[&str], boundary: &[&str]| {
            for t in target {
                if let Some(depth) = this.find_open(t, boundary) {
                    while this.stack.len() > depth {
                        this.pop(at);
                    }
                    return;
                }
            }
        };
        if CLOSES_P.contains(&name) {
            close_through(self, &["p"], &["button", "table", "td", "th", "li", "div", "section", "article", "form"]);
        }
        match name {
            "li" => close_through(self, &["li"], &["ul", "ol", "table"]),
            "dt" | "dd" => close_through(self, &["dt", "dd"], &["dl", "table"]),
            "option" => close_through(self, &["option"], &["select", "datalist"]),
            "tr" => close_through(self, &["tr"], &["table", "thead", "tbody", "tfoot"]),
            "td" | "th" => close_through(self, &["td", "th"], &["tr", "table"]),
            "thead" | "tbody" | "tfoot" => close_through(self, &["thead", "tbody", "tfoot"], &["table"]),
            _ => {}
        }
    }

    /// Stack depth at which an open `name` element sits, searching from the
    /// top and stopping at any boundary element.
    fn find_open(&self, name: &str, boundary: &[&str]) -> Option<usize> {
        for (depth, &n) in self.stack.iter().enumerate().skip(1).rev() {
            let el = match &self.nodes[n].kind {
                NodeKind::Element(e) => e,
                _ => continue,
            };
            if el.name == name {
                return Some(depth);
            }
            if boundary.contains(&el.name.as_str()) {
                return None;
            }
        }
        None
    }

    fn pop(&mut self, at: usize) {
        if let Some(n) = self.stack.pop() {
            if let NodeKind::Element(e) = &mut self.nodes[n].kind {
                if let Some(c) = &mut e.content {
                    c.end = at.max(c.start);
                }
            }
        }
    }

    fn push_text(&mut self, text: String) {
        if text.is_empty() {
            return;
        }
        let parent = *self.stack.last().expect("root always open");
        if let Some(&last) = self.nodes[parent].children.last() {
            if let NodeKind::Text(t) = &mut self.nodes[last].kind {
                t.push_str(&text);
                return;
            }
        }
        let node = self.nodes.len();
        self.nodes.push(Node {
            kind: NodeKind::Text(text),
            parent: Some(parent),
            children: Vec::new(),
        });
        self.nodes[parent].children.push(node);
    }
}

fn find_ascii_ci(haystack: &str, needle: &str) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.len() > h.len() {
        return None;
    }
    (0..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

pub fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let semi = rest[1..].find(';').map(|i| i + 1).filter(|&i| i <= 12);
        let decoded = semi.and_then(|i| decode_entity(&rest[1..i]).map(|c| (c, i)));
        match decoded {
            Some((c, i)) => {
                out.push(c);
                rest = &rest[i + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_entity(name: &str) -> Option<char> {
    if let Some(num) = name.strip_prefix('#') {
        let code = match num.strip_prefix(['x', 'X']) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse().ok()?,
        };
        return char::from_u32(code);
    }
    Some(match name {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => '\u{a0}',
        "copy" => '©',
        "reg" => '®',
        "mdash" => '—',
        "ndash" => '–',
        "hellip" => '…',
        "laquo" => '«',
        "raquo" => '»',
        "lsquo" => '‘',
        "rsquo" => '’',
        "ldquo" => '“',
        "rdquo" => '”',
        "middot" => '·',
        "times" => '×',
        "bull" => '•',
        _ => return None,
    })
}

/// Escape text for use inside an HTML attribute value or element body.
pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Re-serialize an element's start tag with a new attribute list.
pub fn serialize_start_tag(el: &Element, attrs: &[(String, String)]) -> String {
    let mut s = format!("<{}", el.name);
    for (k, v) in attrs {
        s.push(' ');
        s.push_str(k);
        s.push_str("=\"");
        s.push_str(&escape_html(v));
        s.push('"');
    }
    if el.self_closing && !VOID_ELEMENTS.contains(&el.name.as_str()) {
        s.push_str(" />");
    } else {
        s.push('>');
    }
    s
}

/// A replacement of one byte range of the source document.
#[derive(Debug, Clone)]
pub struct Edit {
    pub range: Range<usize>,
    pub replacement: String,
}

/// Apply non-overlapping edits to `source`.
pub fn apply_edits(source: &str, mut edits: Vec<Edit>) -> String {
    edits.sort_by_key(|e| e.range.start);
    let mut out = String::with_capacity(source.len());
    let mut cursor = 0;
    for e in edits {
        out.push_str(&source[cursor..e.range.start]);
        out.push_str(&e.replacement);
        cursor = e.range.end;
    }
    out.push_str(&source[cursor..]);
    out
}

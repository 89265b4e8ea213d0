use super::{Role, SemanticNode};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderOptions {
    /// Append ` -> <href>` after link markers.
    pub show_hrefs: bool,
    /// Append current values after form-field markers.
    pub show_values: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            show_hrefs: true,
            show_values: true,
        }
    }
}

/// Linearize a semantic tree in reading order. Blocks are separated by blank
/// lines; consecutive list items and table rows stay on adjacent lines.
pub fn render_with(root: &SemanticNode, opts: &RenderOptions) -> String {
    let mut r = Renderer { opts, blocks: Vec::new() };
    r.children(root, "");
    let mut out = String::new();
    let mut prev_tight = false;
    for (i, b) in r.blocks.iter().enumerate() {
        if i > 0 {
            out.push_str(if prev_tight && b.tight { "\n" } else { "\n\n" });
        }
        out.push_str(&b.text);
        prev_tight = b.tight;
    }
    out
}

struct Block {
    text: String,
    /// Joins neighbouring tight blocks with a single newline.
    tight: bool,
}

struct Renderer<'o> {
    opts: &'o RenderOptions,
    blocks: Vec<Block>,
}

impl Renderer<'_> {
    fn push(&mut self, text: String, tight: bool) {
        if !text.is_empty() {
            self.blocks.push(Block { text, tight });
        }
    }

    fn marker(&self, n: &SemanticNode) -> String {
        let id = n.element_id.as_deref().unwrap_or_default();
        let label = n.attrs.get("label").unwrap_or(&n.text);
        let mut s = format!("[id={id}] <{}> \"{label}\"", n.role.as_str());
        if self.opts.show_hrefs {
            if let Some(href) = n.attrs.get("href") {
                s.push_str(" -> ");
                s.push_str(href);
            }
        }
        if self.opts.show_values && n.role.is_editable() {
            if let Some(v) = n.attrs.get("value").filter(|v| !v.is_empty()) {
                s.push_str(&format!(" value=\"{v}\""));
            }
            if let Some(o) = n.attrs.get("options") {
                s.push_str(&format!(" options=[{o}]"));
            }
            if n.attrs.contains_key("checked") {
                s.push_str(" checked");
            }
        }
        s
    }

    /// Single-line rendering of a node's content.
    fn inline(&self, n: &SemanticNode) -> String {
        if n.element_id.is_some() && n.role.is_interactive() {
            return self.marker(n);
        }
        if n.role == Role::ImageAlt {
            return format!("[image: {}]", n.text);
        }
        if n.children.is_empty() {
            return n.text.clone();
        }
        let parts: Vec<String> = n
            .children
            .iter()
            .map(|c| self.inline(c))
            .filter(|s| !s.is_empty())
            .collect();
        let body = parts.join(" ");
        if n.element_id.is_some() {
            format!("{} {body}", self.marker(n))
        } else {
            body
        }
    }

    fn prefix(n: &SemanticNode) -> String {
        match n.role {
            Role::Heading => format!("{} ", "#".repeat(n.level.unwrap_or(1).clamp(1, 6) as usize)),
            Role::ListItem => "- ".to_string(),
            _ => String::new(),
        }
    }

    fn block(&mut self, n: &SemanticNode) {
        match n.role {
            Role::Heading => {
                let text = self.inline(n);
                self.push(format!("{}{text}", Self::prefix(n)), false);
            }
            Role::Table => {
                let mut rows = Vec::new();
                self.table_rows(n, &mut rows);
                if rows.is_empty() {
                    self.children(n, "");
                } else {
                    self.push(rows.join("\n"), false);
                }
            }
            Role::ImageAlt => {
                let text = self.inline(n);
                self.push(text, false);
            }
            r if r.is_interactive() => {
                let text = self.marker(n);
                self.push(text, false);
            }
            _ => {
                if n.element_id.is_some() {
                    let text = self.marker(n);
                    self.push(text, false);
                }
                if n.children.is_empty() {
                    let tight = n.role == Role::ListItem;
                    self.push(format!("{}{}", Self::prefix(n), n.text), tight && !n.text.is_empty());
                } else {
                    let prefix = Self::prefix(n);
                    self.children(n, &prefix);
                }
            }
        }
    }

    /// Render mixed content: inline pieces gather into lines, block children break them.
    fn children(&mut self, n: &SemanticNode, prefix: &str) {
        let tight = n.role == Role::ListItem;
        let mut line: Vec<String> = Vec::new();
        let mut first = true;
        let flush = |this: &mut Self, line: &mut Vec<String>, first: &mut bool| {
            if line.is_empty() {
                return;
            }
            let p = if *first { prefix } else { "" };
            this.push(format!("{p}{}", line.join(" ")), tight);
            line.clear();
            *first = false;
        };
        for c in &n.children {
            let is_inline = c.is_text_run()
                || c.role == Role::ImageAlt
                || (c.role.is_interactive() && c.element_id.is_some());
            if is_inline {
                let s = self.inline(c);
                if !s.is_empty() {
                    line.push(s);
                }
            } else {
                flush(self, &mut line, &mut first);
                self.block(c);
            }
        }
        flush(self, &mut line, &mut first);
    }

    fn table_rows(&self, n: &SemanticNode, rows: &mut Vec<String>) {
        for c in &n.children {
            if c.children.iter().any(|g| g.role == Role::TableCell) {
                let cells: Vec<String> = c
                    .children
                    .iter()
                    .filter(|g| g.role == Role::TableCell)
                    .map(|g| self.inline(g))
                    .collect();
                rows.push(format!("| {} |", cells.join(" | ")));
            } else if c.role == Role::Other && !c.children.is_empty() {
                self.table_rows(c, rows);
            } else {
                let s = self.inline(c);
                if !s.is_empty() {
                    rows.push(s);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::snapshot::{parse_html, render_text};

    #[test]
    fn button_marker() {
        let s = parse_html("<button>OK</button>", "u");
        assert!(s.rendered_text.contains("[id=e1] <button> \"OK\""));
    }

    #[test]
    fn heading_levels() {
        let s = parse_html("<h2>T</h2><h1>Top</h1><h6>deep</h6>", "u");
        assert!(s.rendered_text.lines().any(|l| l == "## T"));
        assert!(s.rendered_text.lines().any(|l| l == "# Top"));
        assert!(s.rendered_text.lines().any(|l| l == "###### deep"));
    }

    #[test]
    fn render_is_deterministic() {
        let html = "<h1>A</h1><p>x <a href='/y'>y</a> z</p><ul><li>1</li><li>2</li></ul>";
        let s = parse_html(html, "u");
        assert_eq!(render_text(&s), render_text(&s));
        assert_eq!(render_text(&s), s.rendered_text);
    }

    #[test]
    fn mixed_inline_content_keeps_reading_order() {
        let s = parse_html("<p>Hello <b>wor</b>ld <a href='/x'>link</a> end</p>", "u");
        assert_eq!(s.rendered_text, "Hello world [id=e1] <link> \"link\" -> /x end");
    }

    #[test]
    fn lists_and_tables() {
        let html = "<p>intro</p><ul><li>one</li><li>two <a href='/t'>t</a></li></ul>\
                    <table><tr><th>k</th><th>v</th></tr><tr><td>a</td><td>1</td></tr></table>";
        let s = parse_html(html, "u");
        assert_eq!(
            s.rendered_text,
            "intro\n\n- one\n- two [id=e1] <link> \"t\" -> /t\n\n| k | v |\n| a | 1 |"
        );
    }

    #[test]
    fn form_values_rendered() {
        let s = parse_html("<input name=q value=42><select name=s><option>A</option></select>", "u");
        assert_eq!(
            s.rendered_text,
            "[id=e1] <input> \"q\" value=\"42\" [id=e2] <select> \"s\" value=\"A\" options=[A]"
        );
    }

    #[test]
    fn no_script_or_style_text() {
        let s = parse_html("<style>p{color:red}</style><script>var x=1;</script><p>ok</p>", "u");
        assert_eq!(s.rendered_text, "ok");
    }
}

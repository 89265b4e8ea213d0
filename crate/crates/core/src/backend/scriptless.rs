use std::sync::Arc;

use url::Url;

use super::{BackendError, BackendKind, Fetched, PageSource, PageState, Session};
use crate::sandbox::{ManifestSource, SiteManifest};
use crate::snapshot::dom::{apply_edits, escape_html, serialize_start_tag, Document, Edit, Element};
use crate::snapshot::{locate, parse_html_with, LocateError, Locator, RenderOptions};
use crate::tokens::Counter;

const MAX_REDIRECTS: usize = 10;

/// Base used for in-process sandbox URLs.
pub const SANDBOX_BASE: &str = "http://sandbox.invalid/";

/// What a click does to the page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClickEffect {
    Navigate(Url),
    Mutate(String),
}

fn locate_err(e: LocateError) -> BackendError {
    BackendError::StaleLocator(e.to_string())
}

fn element_at<'d>(doc: &'d Document, locator: &Locator) -> Result<(usize, &'d Element), BackendError> {
    let node = locate(doc, locator).map_err(locate_err)?;
    let el = doc
        .element(node)
        .ok_or_else(|| BackendError::StaleLocator(format!("{locator:?} is not an element")))?;
    Ok((node, el))
}

fn input_type(el: &Element) -> String {
    el.attr("type").unwrap_or("text").to_ascii_lowercase()
}

fn is_submit_control(el: &Element) -> bool {
    match el.name.as_str() {
        "button" => matches!(el.attr("type").map(str::to_ascii_lowercase).as_deref(), None | Some("submit")),
        "input" => matches!(input_type(el).as_str(), "submit" | "image"),
        _ => false,
    }
}

/// Result of clicking the element behind `locator` on a page loaded from `page_url`.
pub fn click_effect(html: &str, page_url: &Url, locator: &Locator) -> Result<ClickEffect, BackendError> {
    let doc = Document::parse(html);
    let (node, el) = element_at(&doc, locator)?;
    if el.has_attr("disabled") {
        return Err(BackendError::ActionFailed(format!("element {} is disabled", el.name)));
    }
    if el.name == "a" {
        if let Some(href) = el.attr("href") {
            let href = href.trim();
            if href.is_empty() || href.starts_with('#') || href.to_ascii_lowercase().starts_with("javascript:") {
                return Ok(ClickEffect::Mutate(html.to_string()));
            }
            let target = page_url
                .join(href)
                .map_err(|e| BackendError::ActionFailed(format!("bad link target {href:?}: {e}")))?;
            return Ok(ClickEffect::Navigate(target));
        }
    }
    if is_submit_control(el) {
        let form = doc
            .ancestors(node)
            .find(|&a| doc.element(a).is_some_and(|e| e.name == "form"));
        if let Some(form) = form {
            return submission_url(&doc, form, Some(el), page_url).map(ClickEffect::Navigate);
        }
        return Ok(ClickEffect::Mutate(html.to_string()));
    }
    if el.name == "input" && matches!(input_type(el).as_str(), "checkbox" | "radio") {
        let mut attrs = el.attrs.clone();
        if let Some(pos) = attrs.iter().position(|(k, _)| k == "checked") {
            if input_type(el) == "checkbox" {
                attrs.remove(pos);
            }
        } else {
            attrs.push(("checked".into(), String::new()));
        }
        let edit = Edit {
            range: el.start_tag.clone(),
            replacement: serialize_start_tag(el, &attrs),
        };
        return Ok(ClickEffect::Mutate(apply_edits(html, vec![edit])));
    }
    // other clickables have no script-free effect
    Ok(ClickEffect::Mutate(html.to_string()))
}

/// GET submission URL for `form` (POST forms are submitted as GET).
fn submission_url(doc: &Document, form: usize, submitter: Option<&Element>, page_url: &Url) -> Result<Url, BackendError> {
    let form_el = doc.element(form).expect("form is an element");
    let action = form_el.attr("action").map(str::trim).filter(|a| !a.is_empty());
    let mut target = match action {
        Some(a) => page_url
            .join(a)
            .map_err(|e| BackendError::ActionFailed(format!("bad form action {a:?}: {e}")))?,
        None => page_url.clone(),
    };
    let mut pairs: Vec<(String, String)> = Vec::new();
    for n in doc.descendants(form) {
        let Some(el) = doc.element(n) else { continue };
        let Some(name) = el.attr("name").filter(|n| !n.is_empty()) else { continue };
        if el.has_attr("disabled") {
            continue;
        }
        match el.name.as_str() {
            "input" => {
                let ty = input_type(el);
                match ty.as_str() {
                    "submit" | "button" | "reset" | "image" | "file" => continue,
                    "checkbox" | "radio" if !el.has_attr("checked") => continue,
                    "checkbox" | "radio" => pairs.push((name.into(), el.attr("value").unwrap_or("on").into())),
                    _ => pairs.push((name.into(), el.attr("value").unwrap_or("").into())),
                }
            }
            "textarea" => pairs.push((name.into(), doc.text_content(n))),
            "select" => {
                let options: Vec<(usize, &Element)> = doc
                    .descendants(n)
                    .into_iter()
                    .filter_map(|d| doc.element(d).map(|e| (d, e)))
                    .filter(|(_, e)| e.name == "option")
                    .collect();
                let chosen = options.iter().find(|(_, e)| e.has_attr("selected")).or(options.first());
                if let Some((d, e)) = chosen {
                    let value = e
                        .attr("value")
                        .map_or_else(|| crate::snapshot::dom::normalize_ws(&doc.text_content(*d)), str::to_string);
                    pairs.push((name.into(), value));
                }
            }
            _ => {}
        }
    }
    if let Some(sub) = submitter {
        if let Some(name) = sub.attr("name").filter(|n| !n.is_empty()) {
            pairs.push((name.into(), sub.attr("value").unwrap_or("").into()));
        }
    }
    target.set_query(None);
    target.set_fragment(None);
    if !pairs.is_empty() {
        target.query_pairs_mut().extend_pairs(pairs);
    }
    Ok(target)
}

/// Write `text` into the editable element behind `locator`, returning the new document.
pub fn fill_html(html: &str, locator: &Locator, text: &str) -> Result<String, BackendError> {
    let doc = Document::parse(html);
    let (node, el) = element_at(&doc, locator)?;
    if el.has_attr("disabled") || el.has_attr("readonly") {
        return Err(BackendError::NotEditable(format!("{} element is disabled or read-only", el.name)));
    }
    let edits = match el.name.as_str() {
        "input" => {
            let ty = input_type(el);
            if matches!(
                ty.as_str(),
                "submit" | "button" | "reset" | "image" | "hidden" | "checkbox" | "radio" | "file"
            ) {
                return Err(BackendError::NotEditable(format!("input of type {ty} cannot take text")));
            }
            let mut attrs = el.attrs.clone();
            match attrs.iter_mut().find(|(k, _)| k == "value") {
                Some(slot) => slot.1 = text.to_string(),
                None => attrs.push(("value".into(), text.to_string())),
            }
            vec![Edit {
                range: el.start_tag.clone(),
                replacement: serialize_start_tag(el, &attrs),
            }]
        }
        "textarea" => {
            let body = el
                .content
                .clone()
                .unwrap_or(el.start_tag.end..el.start_tag.end);
            vec![Edit {
                range: body,
                replacement: escape_html(text),
            }]
        }
        "select" => {
            let wanted = text.trim().to_lowercase();
            let options: Vec<(usize, &Element)> = doc
                .descendants(node)
                .into_iter()
                .filter_map(|d| doc.element(d).map(|e| (d, e)))
                .filter(|(_, e)| e.name == "option")
                .collect();
            let hit = options.iter().position(|(d, e)| {
                let label = crate::snapshot::dom::normalize_ws(&doc.text_content(*d)).to_lowercase();
                label == wanted || e.attr("value").is_some_and(|v| v.to_lowercase() == wanted)
            });
            let Some(hit) = hit else {
                return Err(BackendError::ActionFailed(format!("select has no option matching {text:?}")));
            };
            options
                .iter()
                .enumerate()
                .map(|(i, (_, e))| {
                    let mut attrs: Vec<(String, String)> =
                        e.attrs.iter().filter(|(k, _)| k != "selected").cloned().collect();
                    if i == hit {
                        attrs.push(("selected".into(), String::new()));
                    }
                    Edit {
                        range: e.start_tag.clone(),
                        replacement: serialize_start_tag(e, &attrs),
                    }
                })
                .collect()
        }
        other => return Err(BackendError::NotEditable(format!("{other} element is not editable"))),
    };
    Ok(apply_edits(html, edits))
}

/// A script-free browser over a [`PageSource`].
pub struct ScriptlessSession {
    kind: BackendKind,
    source: Arc<dyn PageSource>,
    /// Resolves relative URLs; sandbox sessions report URLs relative to it.
    base: Option<Url>,
    location: Option<Url>,
    page: PageState,
    counter: Counter,
}

impl ScriptlessSession {
    pub fn static_fetcher(source: Arc<dyn PageSource>, base: Option<Url>, counter: Counter) -> Self {
        ScriptlessSession {
            kind: BackendKind::Static,
            source,
            base,
            location: None,
            page: PageState::blank(),
            counter,
        }
    }

    pub fn sandbox(source: Arc<dyn PageSource>, base: Url, counter: Counter) -> Self {
        ScriptlessSession {
            kind: BackendKind::Sandbox,
            source,
            base: Some(base),
            location: None,
            page: PageState::blank(),
            counter,
        }
    }

    /// In-process sandbox over a manifest.
    pub fn sandbox_manifest(manifest: Arc<SiteManifest>, counter: Counter) -> Self {
        let base = Url::parse(SANDBOX_BASE).expect("valid base");
        ScriptlessSession::sandbox(Arc::new(ManifestSource::new(manifest)), base, counter)
    }

    /// Static fetches served from a manifest (no click or fill).
    pub fn static_manifest(manifest: Arc<SiteManifest>, counter: Counter) -> Self {
        let base = Url::parse(SANDBOX_BASE).expect("valid base");
        ScriptlessSession::static_fetcher(Arc::new(ManifestSource::new(manifest)), Some(base), counter)
    }

    fn resolve(&self, url: &str) -> Result<Url, BackendError> {
        let url = url.trim();
        match Url::parse(url) {
            Ok(u) => Ok(u),
            Err(url::ParseError::RelativeUrlWithoutBase) => {
                let base = self
                    .location
                    .as_ref()
                    .or(self.base.as_ref())
                    .ok_or_else(|| BackendError::InvalidUrl(format!("{url:?} is not an absolute URL")))?;
                base.join(url).map_err(|e| BackendError::InvalidUrl(format!("{url:?}: {e}")))
            }
            Err(e) => Err(BackendError::InvalidUrl(format!("{url:?}: {e}"))),
        }
    }

    /// Reported URL. Same-origin URLs are reported relative to the base, and
    /// sandbox sessions also hide `_`-prefixed state parameters.
    fn display_url(&self, url: &Url) -> String {
        let same_origin = self.base.as_ref().is_some_and(|b| b.origin() == url.origin());
        if !same_origin {
            return url.to_string();
        }
        let hide_state = self.kind == BackendKind::Sandbox;
        let visible: Vec<(String, String)> = url
            .query_pairs()
            .filter(|(k, _)| !(hide_state && k.starts_with('_')))
            .map(|(k, v)| (k.into_owned(), v.into_owned()))
            .collect();
        let mut out = url.path().to_string();
        if !visible.is_empty() {
            let q = url::form_urlencoded::Serializer::new(String::new())
                .extend_pairs(visible)
                .finish();
            out.push('?');
            out.push_str(&q);
        }
        out
    }

    fn load(&mut self, mut url: Url) -> Result<PageState, BackendError> {
        for _ in 0..=MAX_REDIRECTS {
            let Fetched { status, body, location } = self.source.get(&url)?;
            if (300..400).contains(&status) {
                let Some(loc) = location else {
                    return Err(BackendError::FetchFailed {
                        status: Some(status),
                        detail: format!("redirect without location from {url}"),
                    });
                };
                url = url.join(&loc).map_err(|e| BackendError::FetchFailed {
                    status: Some(status),
                    detail: format!("bad redirect target {loc:?}: {e}"),
                })?;
                continue;
            }
            if status >= 400 {
                return Err(BackendError::FetchFailed {
                    status: Some(status),
                    detail: self.display_url(&url),
                });
            }
            let display = self.display_url(&url);
            self.location = Some(url);
            return Ok(self.commit(display, body));
        }
        Err(BackendError::FetchFailed {
            status: None,
            detail: format!("too many redirects at {url}"),
        })
    }

    fn commit(&mut self, url: String, html: String) -> PageState {
        let snapshot = parse_html_with(&html, &url, &self.counter, &RenderOptions::default());
        self.page = PageState {
            url,
            html,
            snapshot,
            nav_epoch: self.page.nav_epoch + 1,
        };
        self.page.clone()
    }

    fn require_interactive(&self, action: &str) -> Result<(), BackendError> {
        if self.kind == BackendKind::Static {
            return Err(BackendError::UnsupportedAction(format!(
                "{action} is not available on the static backend"
            )));
        }
        if self.location.is_none() {
            return Err(BackendError::ActionFailed(format!("no page is loaded; cannot {action}")));
        }
        Ok(())
    }
}

impl Session for ScriptlessSession {
    fn kind(&self) -> BackendKind {
        self.kind
    }

    fn current(&self) -> &PageState {
        &self.page
    }

    fn navigate(&mut self, url: &str) -> Result<PageState, BackendError> {
        let target = self.resolve(url)?;
        if !matches!(target.scheme(), "http" | "https") {
            return Err(BackendError::InvalidUrl(format!("unsupported scheme in {url:?}")));
        }
        self.load(target)
    }

    fn click(&mut self, locator: &Locator) -> Result<PageState, BackendError> {
        self.require_interactive("click")?;
        let here = self.location.clone().expect("checked above");
        match click_effect(&self.page.html, &here, locator)? {
            ClickEffect::Navigate(target) => self.load(target),
            ClickEffect::Mutate(html) => {
                let url = self.page.url.clone();
                Ok(self.commit(url, html))
            }
        }
    }

    fn fill(&mut self, locator: &Locator, text: &str) -> Result<PageState, BackendError> {
        self.require_interactive("fill")?;
        let html = fill_html(&self.page.html, locator, text)?;
        let url = self.page.url.clone();
        Ok(self.commit(url, html))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::sync::Mutex;

    #[derive(Default)]
    struct MapSource {
        pages: HashMap<String, Fetched>,
        log: Mutex<Vec<String>>,
    }

    impl MapSource {
        fn page(mut self, path: &str, html: &str) -> Self {
            self.pages.insert(path.into(), Fetched { status: 200, body: html.into(), location: None });
            self
        }
        fn redirect(mut self, path: &str, to: &str) -> Self {
            self.pages.insert(path.into(), Fetched { status: 302, body: String::new(), location: Some(to.into()) });
            self
        }
    }

    impl PageSource for MapSource {
        fn get(&self, url: &Url) -> Result<Fetched, BackendError> {
            let key = match url.query() {
                Some(q) => format!("{}?{q}", url.path()),
                None => url.path().to_string(),
            };
            self.log.lock().unwrap().push(key.clone());
            Ok(self.pages.get(&key).cloned().unwrap_or(Fetched { status: 404, body: "nf".into(), location: None }))
        }
    }

    fn session(src: MapSource) -> ScriptlessSession {
        ScriptlessSession::sandbox(Arc::new(src), Url::parse(SANDBOX_BASE).unwrap(), Counter::default())
    }

    #[test]
    fn navigate_increments_epoch_and_snapshots() {
        let mut s = session(MapSource::default().page("/a", "<p>A</p>"));
        let p = s.navigate("/a").unwrap();
        assert_eq!(p.url, "/a");
        assert_eq!(p.nav_epoch, 1);
        assert_eq!(p.snapshot.rendered_text, "A");
        assert_eq!(p.snapshot, crate::snapshot::parse_html(&p.html, &p.url));
    }

    #[test]
    fn missing_page_is_fetch_failed_404_and_state_kept() {
        let mut s = session(MapSource::default().page("/a", "<p>A</p>"));
        s.navigate("/a").unwrap();
        let err = s.navigate("/zzz").unwrap_err();
        assert_eq!(err, BackendError::FetchFailed { status: Some(404), detail: "/zzz".into() });
        assert_eq!(s.current().url, "/a");
        assert_eq!(s.current().nav_epoch, 1);
    }

    #[test]
    fn click_link_follows_href() {
        let mut s = session(MapSource::default().page("/home", "<a href='/a'>A</a>").page("/a", "<p>A</p>"));
        s.navigate("/home").unwrap();
        let loc = s.current().snapshot.interactive_index["e1"].clone();
        let p = s.click(&loc).unwrap();
        assert_eq!(p.url, "/a");
        assert_eq!(p.nav_epoch, 2);
    }

    #[test]
    fn fill_then_submit_builds_get_query_and_follows_redirect() {
        let form = "<form action='/lookup'><input type=hidden name=_s value=1>\
                    <input name=q placeholder='Key'><button>Go</button></form>";
        let src = MapSource::default()
            .page("/f", form)
            .redirect("/lookup?_s=1&q=abc+d", "/done")
            .page("/done", "<p>done</p>");
        let mut s = session(src);
        s.navigate("/f").unwrap();
        let input = s.current().snapshot.interactive_index["e1"].clone();
        let p = s.fill(&input, "abc d").unwrap();
        assert_eq!(p.nav_epoch, 2);
        assert_eq!(p.snapshot.element("e1").unwrap().node.attrs["value"], "abc d");
        let button = p.snapshot.interactive_index["e2"].clone();
        let p = s.click(&button).unwrap();
        assert_eq!(p.url, "/done");
        assert_eq!(p.nav_epoch, 3);
    }

    #[test]
    fn fill_rejects_buttons_and_stale_locators() {
        let mut s = session(MapSource::default().page("/f", "<button>b</button>"));
        s.navigate("/f").unwrap();
        let b = s.current().snapshot.interactive_index["e1"].clone();
        assert!(matches!(s.fill(&b, "x"), Err(BackendError::NotEditable(_))));
        assert!(matches!(s.fill(&Locator::document_order(99), "x"), Err(BackendError::StaleLocator(_))));
        assert!(matches!(s.click(&Locator::document_order(99)), Err(BackendError::StaleLocator(_))));
    }

    #[test]
    fn display_url_hides_state_params() {
        let mut s = session(MapSource::default().page("/p?_reveal=0&x=1", "<p>r</p>"));
        assert_eq!(s.navigate("/p?_reveal=0&x=1").unwrap().url, "/p?x=1");
    }

    #[test]
    fn static_kind_refuses_actions() {
        let src = MapSource::default().page("/a", "<a href='/b'>b</a>");
        let mut s = ScriptlessSession::static_fetcher(Arc::new(src), Some(Url::parse(SANDBOX_BASE).unwrap()), Counter::default());
        s.navigate("/a").unwrap();
        let l = s.current().snapshot.interactive_index["e1"].clone();
        assert!(matches!(s.click(&l), Err(BackendError::UnsupportedAction(_))));
        assert!(matches!(s.fill(&l, "x"), Err(BackendError::UnsupportedAction(_))));
    }

    #[test]
    fn select_fill_and_checkbox_click() {
        let html = "<form action='/r'><select name=c><option>Red</option><option value=b>Blue</option></select>\
                    <input type=checkbox name=k><button>s</button></form>";
        let mut s = session(MapSource::default().page("/f", html).page("/r?c=b&k=on", "<p>ok</p>"));
        s.navigate("/f").unwrap();
        let sel = s.current().snapshot.interactive_index["e1"].clone();
        let p = s.fill(&sel, "blue").unwrap();
        assert_eq!(p.snapshot.element("e1").unwrap().node.attrs["value"], "b");
        assert!(matches!(s.fill(&sel, "green"), Err(BackendError::ActionFailed(_))));
        let cb = s.current().snapshot.interactive_index["e2"].clone();
        let p = s.click(&cb).unwrap();
        assert_eq!(p.url, "/f");
        assert_eq!(p.snapshot.element("e2").unwrap().node.attrs.get("checked").map(String::as_str), Some("true"));
        let btn = s.current().snapshot.interactive_index["e3"].clone();
        assert_eq!(s.click(&btn).unwrap().url, "/r?c=b&k=on");
    }

    #[test]
    fn textarea_fill_escapes_markup() {
        let html = "<textarea name=t>old</textarea>";
        let out = fill_html(html, &Locator::document_order(0), "<b>&").unwrap();
        assert_eq!(out, "<textarea name=t>&lt;b&gt;&amp;</textarea>");
    }

    #[test]
    fn nav_epoch_strictly_increases() {
        let mut s = session(MapSource::default().page("/a", "<input name=q><a href='/a'>again</a>"));
        let mut last = 0;
        for i in 0..5 {
            let p = if i % 2 == 0 {
                s.navigate("/a").unwrap()
            } else {
                let l = s.current().snapshot.interactive_index["e1"].clone();
                s.fill(&l, &i.to_string()).unwrap()
            };
            assert!(p.nav_epoch > last);
            last = p.nav_epoch;
        }
    }
}

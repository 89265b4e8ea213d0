//! Live backend: attaches to an externally launched headless browser over the
//! Chrome DevTools Protocol.

use std::collections::VecDeque;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};
use url::Url;

use super::{BackendError, BackendKind, PageState, Session};
use crate::snapshot::{parse_html_with, Locator, LocatorStrategy, RenderOptions, INDEX_ATTR};
use crate::tokens::Counter;

const POLL_INTERVAL: Duration = Duration::from_millis(50);
/// How long a click has to start a navigation before it counts as an in-page mutation.
const NAV_START_GRACE: Duration = Duration::from_millis(500);

const CAPTURE_JS: &str = r#"(() => {
  let i = 0;
  for (const el of document.querySelectorAll('*')) { el.setAttribute('data-nb-idx', String(i++)); }
  for (const el of document.querySelectorAll('input')) {
    if (el.value !== undefined && el.type !== 'file') el.setAttribute('value', el.value);
    if (el.checked) el.setAttribute('checked', ''); else if (el.type === 'checkbox' || el.type === 'radio') el.removeAttribute('checked');
  }
  for (const el of document.querySelectorAll('textarea')) { el.textContent = el.value; }
  for (const el of document.querySelectorAll('option')) { if (el.selected) el.setAttribute('selected', ''); else el.removeAttribute('selected'); }
  return JSON.stringify({ url: location.href, html: document.documentElement ? document.documentElement.outerHTML : '' });
})()"#;

pub struct CdpSession {
    socket: WebSocket<MaybeTlsStream<TcpStream>>,
    next_id: u64,
    session_id: Option<String>,
    nav_timeout: Duration,
    page: PageState,
    counter: Counter,
    events: VecDeque<Value>,
}

fn lost(e: impl std::fmt::Display) -> BackendError {
    BackendError::SessionLost(e.to_string())
}

fn js_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

impl CdpSession {
    /// Connect to a browser- or page-level DevTools WebSocket URL, or to an
    /// HTTP debugging endpoint (resolved through `/json/version`).
    pub fn connect(endpoint: &str, nav_timeout_ms: u64, counter: Counter) -> Result<Self, BackendError> {
        let ws_url = if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
            discover_ws_url(endpoint)?
        } else {
            endpoint.to_string()
        };
        let (socket, _) = tungstenite::connect(ws_url.as_str())
            .map_err(|e| BackendError::ConnectFailed(format!("{ws_url}: {e}")))?;
        if let MaybeTlsStream::Plain(stream) = socket.get_ref() {
            stream
                .set_read_timeout(Some(POLL_INTERVAL))
                .map_err(|e| BackendError::ConnectFailed(e.to_string()))?;
        }
        let mut session = CdpSession {
            socket,
            next_id: 0,
            session_id: None,
            nav_timeout: Duration::from_millis(nav_timeout_ms),
            page: PageState::blank(),
            counter,
            events: VecDeque::new(),
        };
        if ws_url.contains("/devtools/browser") {
            let created = session.call("Target.createTarget", json!({ "url": "about:blank" }))?;
            let target_id = created["targetId"]
                .as_str()
                .ok_or_else(|| BackendError::ConnectFailed("createTarget returned no targetId".into()))?
                .to_string();
            let attached = session.call("Target.attachToTarget", json!({ "targetId": target_id, "flatten": true }))?;
            session.session_id = attached["sessionId"].as_str().map(str::to_string);
        }
        for domain in ["Page.enable", "Runtime.enable", "Network.enable"] {
            session.call(domain, json!({}))?;
        }
        Ok(session)
    }

    fn send(&mut self, method: &str, params: Value) -> Result<u64, BackendError> {
        self.next_id += 1;
        let mut msg = json!({ "id": self.next_id, "method": method, "params": params });
        if let Some(sid) = &self.session_id {
            msg["sessionId"] = json!(sid);
        }
        self.socket
            .send(Message::text(msg.to_string()))
            .map_err(lost)?;
        Ok(self.next_id)
    }

    /// Next protocol message, or `None` if nothing arrived within one poll interval.
    fn read(&mut self) -> Result<Option<Value>, BackendError> {
        match self.socket.read() {
            Ok(Message::Text(t)) => serde_json::from_str(t.as_str()).map(Some).map_err(lost),
            Ok(Message::Close(_)) => Err(lost("DevTools connection closed")),
            Ok(_) => Ok(None),
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
            {
                Ok(None)
            }
            Err(e) => Err(lost(e)),
        }
    }

    fn call(&mut self, method: &str, params: Value) -> Result<Value, BackendError> {
        let id = self.send(method, params)?;
        let deadline = Instant::now() + self.nav_timeout;
        while Instant::now() < deadline {
            let Some(msg) = self.read()? else { continue };
            if msg["id"].as_u64() == Some(id) {
                if let Some(err) = msg.get("error") {
                    return Err(BackendError::ActionFailed(format!("{method}: {err}")));
                }
                return Ok(msg["result"].clone());
            }
            if msg.get("method").is_some() && self.is_ours(&msg) {
                self.events.push_back(msg);
            }
        }
        Err(lost(format!("{method} timed out")))
    }

    fn is_ours(&self, msg: &Value) -> bool {
        match &self.session_id {
            Some(sid) => msg["sessionId"].as_str() == Some(sid.as_str()),
            None => true,
        }
    }

    /// Wait for the first event matching `pred` until `timeout` elapses.
    fn wait_event(&mut self, timeout: Duration, pred: impl Fn(&Value) -> bool) -> Result<Option<Value>, BackendError> {
        if let Some(pos) = self.events.iter().position(&pred) {
            return Ok(self.events.remove(pos));
        }
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            let Some(msg) = self.read()? else { continue };
            if msg.get("method").is_none() || !self.is_ours(&msg) {
                continue;
            }
            if pred(&msg) {
                return Ok(Some(msg));
            }
            self.events.push_back(msg);
        }
        Ok(None)
    }

    fn evaluate(&mut self, expression: &str) -> Result<Value, BackendError> {
        let result = self.call(
            "Runtime.evaluate",
            json!({ "expression": expression, "returnByValue": true, "awaitPromise": true }),
        )?;
        if let Some(exc) = result.get("exceptionDetails") {
            return Err(BackendError::ActionFailed(format!("script error: {exc}")));
        }
        Ok(result["result"]["value"].clone())
    }

    fn capture(&mut self) -> Result<PageState, BackendError> {
        let raw = self.evaluate(CAPTURE_JS)?;
        let captured: Value = raw
            .as_str()
            .and_then(|s| serde_json::from_str(s).ok())
            .ok_or_else(|| BackendError::ActionFailed("page capture returned no document".into()))?;
        let url = captured["url"].as_str().unwrap_or_default().to_string();
        let html = captured["html"].as_str().unwrap_or_default().to_string();
        let snapshot = parse_html_with(&html, &url, &self.counter, &RenderOptions::default());
        self.page = PageState {
            url,
            html,
            snapshot,
            nav_epoch: self.page.nav_epoch + 1,
        };
        Ok(self.page.clone())
    }

    fn selector(locator: &Locator) -> String {
        match locator.strategy {
            LocatorStrategy::AttributePath => locator.value.clone(),
            LocatorStrategy::DocumentOrderIndex => format!("[{INDEX_ATTR}=\"{}\"]", locator.value),
        }
    }

    fn is_load(msg: &Value) -> bool {
        msg["method"] == "Page.loadEventFired"
    }
}

fn discover_ws_url(endpoint: &str) -> Result<String, BackendError> {
    let base = Url::parse(endpoint).map_err(|e| BackendError::ConnectFailed(format!("{endpoint}: {e}")))?;
    let version = base
        .join("/json/version")
        .map_err(|e| BackendError::ConnectFailed(e.to_string()))?;
    let body: Value = reqwest::blocking::get(version.as_str())
        .and_then(|r| r.json())
        .map_err(|e| BackendError::ConnectFailed(format!("{version}: {e}")))?;
    body["webSocketDebuggerUrl"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| BackendError::ConnectFailed(format!("{version}: no webSocketDebuggerUrl")))
}

impl Session for CdpSession {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn current(&self) -> &PageState {
        &self.page
    }

    fn navigate(&mut self, url: &str) -> Result<PageState, BackendError> {
        let target = match Url::parse(url) {
            Ok(u) => u,
            Err(url::ParseError::RelativeUrlWithoutBase) if self.page.url.starts_with("http") => Url::parse(&self.page.url)
                .and_then(|b| b.join(url))
                .map_err(|e| BackendError::InvalidUrl(format!("{url:?}: {e}")))?,
            Err(e) => return Err(BackendError::InvalidUrl(format!("{url:?}: {e}"))),
        };
        self.events.clear();
        let nav = self.call("Page.navigate", json!({ "url": target.as_str() }))?;
        if let Some(err) = nav["errorText"].as_str() {
            return Err(BackendError::FetchFailed {
                status: None,
                detail: format!("{target}: {err}"),
            });
        }
        let loader = nav["loaderId"].as_str().map(str::to_string);
        let response = self.wait_event(self.nav_timeout, |m| {
            m["method"] == "Network.responseReceived"
                && m["params"]["type"] == "Document"
                && (loader.is_none() || m["params"]["loaderId"].as_str() == loader.as_deref())
        })?;
        if let Some(status) = response.as_ref().and_then(|r| r["params"]["response"]["status"].as_u64()) {
            if status >= 400 {
                return Err(BackendError::FetchFailed {
                    status: Some(status as u16),
                    detail: target.to_string(),
                });
            }
        }
        // proceeds with whatever has loaded once the timeout passes
        self.wait_event(self.nav_timeout, Self::is_load)?;
        self.capture()
    }

    fn click(&mut self, locator: &Locator) -> Result<PageState, BackendError> {
        self.events.clear();
        let script = format!(
            "(() => {{ const el = document.querySelector({}); if (!el) return 'stale'; \
             if (el.disabled) return 'disabled'; el.click(); return 'ok'; }})()",
            js_string(&Self::selector(locator))
        );
        match self.evaluate(&script)?.as_str() {
            Some("ok") => {}
            Some("stale") => return Err(BackendError::StaleLocator(format!("{locator:?} no longer resolves"))),
            Some(other) => return Err(BackendError::ActionFailed(format!("click: {other}"))),
            None => return Err(BackendError::ActionFailed("click: no result".into())),
        }
        let grace = NAV_START_GRACE.min(self.nav_timeout);
        let started = self.wait_event(grace, |m| {
            matches!(
                m["method"].as_str(),
                Some("Page.frameStartedLoading" | "Page.frameRequestedNavigation" | "Page.loadEventFired")
            )
        })?;
        if let Some(ev) = started {
            if !Self::is_load(&ev) {
                self.wait_event(self.nav_timeout, Self::is_load)?;
            }
        }
        self.capture()
    }

    fn fill(&mut self, locator: &Locator, text: &str) -> Result<PageState, BackendError> {
        let script = format!(
            "(() => {{ const el = document.querySelector({sel}); if (!el) return 'stale'; \
             const tag = el.tagName.toLowerCase(); const ty = (el.type || '').toLowerCase(); \
             const blocked = ['submit','button','reset','image','hidden','checkbox','radio','file']; \
             if (el.disabled || el.readOnly) return 'not_editable'; \
             if (tag === 'input' && blocked.includes(ty)) return 'not_editable'; \
             if (tag === 'select') {{ const want = {text}.trim().toLowerCase(); \
               const opt = Array.from(el.options).find(o => o.text.trim().toLowerCase() === want || o.value.toLowerCase() === want); \
               if (!opt) return 'no_option'; el.value = opt.value; }} \
             else if (tag === 'input' || tag === 'textarea') {{ el.focus(); el.value = {text}; }} \
             else if (el.isContentEditable) {{ el.textContent = {text}; }} \
             else return 'not_editable'; \
             el.dispatchEvent(new Event('input', {{ bubbles: true }})); \
             el.dispatchEvent(new Event('change', {{ bubbles: true }})); return 'ok'; }})()",
            sel = js_string(&Self::selector(locator)),
            text = js_string(text),
        );
        match self.evaluate(&script)?.as_str() {
            Some("ok") => self.capture(),
            Some("stale") => Err(BackendError::StaleLocator(format!("{locator:?} no longer resolves"))),
            Some("not_editable") => Err(BackendError::NotEditable("element does not accept text".into())),
            Some("no_option") => Err(BackendError::ActionFailed(format!("select has no option matching {text:?}"))),
            other => Err(BackendError::ActionFailed(format!("fill: {other:?}"))),
        }
    }
}

//! Browser-session backends.
//!
//! Three kinds sit behind [`Session`]: a live headless browser reached over
//! the DevTools protocol, a static HTTP fetcher, and the deterministic sandbox.
//! Static and sandbox sessions share the same script-free page semantics
//! (links navigate, submit buttons submit their form as a GET request).

mod cdp;
mod http;
mod scriptless;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::snapshot::{DomSnapshot, Locator};
use crate::tokens::Counter;

pub use cdp::CdpSession;
pub use http::HttpSource;
pub use scriptless::{click_effect, fill_html, ClickEffect, ScriptlessSession, SANDBOX_BASE};

pub const CDP_URL_ENV: &str = "NESTBROWSE_CDP_URL";
pub const DEFAULT_NAV_TIMEOUT_MS: u64 = 15_000;
pub const DEFAULT_USER_AGENT: &str = "nestbrowse/0.1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Static,
    Sandbox,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendKind::Live),
            "static" => Ok(BackendKind::Static),
            "sandbox" => Ok(BackendKind::Sandbox),
            other => Err(format!("unknown backend kind {other:?} (expected live, static or sandbox)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub backend_kind: BackendKind,
    /// DevTools WebSocket URL (live), base URL or manifest path (sandbox).
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_nav_timeout")]
    pub nav_timeout_ms: u64,
    #[serde(default = "default_user_agent")]
    pub user_agent: String,
}

fn default_nav_timeout() -> u64 {
    DEFAULT_NAV_TIMEOUT_MS
}

fn default_user_agent() -> String {
    DEFAULT_USER_AGENT.to_string()
}

impl SessionConfig {
    pub fn new(kind: BackendKind, endpoint: Option<String>) -> Self {
        SessionConfig {
            backend_kind: kind,
            endpoint,
            nav_timeout_ms: DEFAULT_NAV_TIMEOUT_MS,
            user_agent: DEFAULT_USER_AGENT.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.nav_timeout_ms == 0 {
            return Err(BackendError::Config("nav_timeout_ms must be positive".into()));
        }
        match self.backend_kind {
            BackendKind::Live | BackendKind::Sandbox if self.endpoint.is_none() => Err(BackendError::Config(
                format!("{:?} backend requires an endpoint", self.backend_kind).to_lowercase(),
            )),
            _ => Ok(()),
        }
    }
}

/// The page currently loaded in a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageState {
    pub url: String,
    pub html: String,
    pub snapshot: DomSnapshot,
    /// Increments on every navigation or DOM-mutating action.
    pub nav_epoch: u64,
}

impl PageState {
    pub fn blank() -> Self {
        PageState {
            url: "about:blank".into(),
            html: String::new(),
            snapshot: DomSnapshot::empty("about:blank"),
            nav_epoch: 0,
        }
    }
}

/// Errors surface to the agent as tool-response bodies, so each message leads
/// with its variant name.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("ConnectFailed: {0}")]
    ConnectFailed(String),
    #[error("FetchFailed({}): {detail}", status.map_or_else(|| "error".to_string(), |s| s.to_string()))]
    FetchFailed { status: Option<u16>, detail: String },
    #[error("StaleLocator: {0}")]
    StaleLocator(String),
    #[error("ActionFailed: {0}")]
    ActionFailed(String),
    #[error("NotEditable: {0}")]
    NotEditable(String),
    #[error("UnsupportedAction: {0}")]
    UnsupportedAction(String),
    #[error("InvalidUrl: {0}")]
    InvalidUrl(String),
    #[error("SessionLost: {0}")]
    SessionLost(String),
    #[error("invalid session config: {0}")]
    Config(String),
}

impl BackendError {
    /// Errors after which the session cannot continue.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BackendError::SessionLost(_))
    }
}

/// One browsing session, owned by one episode.
pub trait Session: Send {
    fn kind(&self) -> BackendKind;
    fn current(&self) -> &PageState;
    fn navigate(&mut self, url: &str) -> Result<PageState, BackendError>;
    fn click(&mut self, locator: &Locator) -> Result<PageState, BackendError>;
    fn fill(&mut self, locator: &Locator, text: &str) -> Result<PageState, BackendError>;
}

/// Response of a page source for one GET request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub status: u16,
    pub body: String,
    /// Redirect target for 3xx responses.
    pub location: Option<String>,
}

/// Something that serves documents for URLs.
pub trait PageSource: Send + Sync {
    fn get(&self, url: &Url) -> Result<Fetched, BackendError>;
}

/// Opens a session for the configured backend kind.
pub fn open_session(config: &SessionConfig, counter: Counter) -> Result<Box<dyn Session>, BackendError> {
    config.validate()?;
    match config.backend_kind {
        BackendKind::Static => {
            let source = HttpSource::new(&config.user_agent, config.nav_timeout_ms)?;
            Ok(Box::new(ScriptlessSession::static_fetcher(Arc::new(source), None, counter)))
        }
        BackendKind::Sandbox => {
            let endpoint = config.endpoint.as_deref().unwrap_or_default();
            if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
                let base = Url::parse(endpoint).map_err(|e| BackendError::ConnectFailed(format!("{endpoint}: {e}")))?;
                let source = HttpSource::new(&config.user_agent, config.nav_timeout_ms)?;
                source.get(&base).map_err(|e| BackendError::ConnectFailed(format!("{endpoint}: {e}")))?;
                Ok(Box::new(ScriptlessSession::sandbox(Arc::new(source), base, counter)))
            } else {
                let manifest = crate::sandbox::SiteManifest::load(std::path::Path::new(endpoint))
                    .map_err(|e| BackendError::ConnectFailed(format!("{endpoint}: {e}")))?;
                Ok(Box::new(ScriptlessSession::sandbox_manifest(Arc::new(manifest), counter)))
            }
        }
        BackendKind::Live => {
            let endpoint = config.endpoint.as_deref().unwrap_or_default();
            Ok(Box::new(CdpSession::connect(endpoint, config.nav_timeout_ms, counter)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_required_for_live_and_sandbox() {
        assert!(SessionConfig::new(BackendKind::Live, None).validate().is_err());
        assert!(SessionConfig::new(BackendKind::Sandbox, None).validate().is_err());
        assert!(SessionConfig::new(BackendKind::Static, None).validate().is_ok());
    }

    #[test]
    fn static_session_opens_at_blank_page() {
        let s = open_session(&SessionConfig::new(BackendKind::Static, None), Counter::default()).unwrap();
        assert_eq!(s.current().url, "about:blank");
        assert_eq!(s.current().nav_epoch, 0);
        assert_eq!(s.kind(), BackendKind::Static);
    }

    #[test]
    fn dead_live_endpoint_fails_to_connect() {
        let cfg = SessionConfig::new(BackendKind::Live, Some("ws://127.0.0.1:9/devtools/browser/x".into()));
        match open_session(&cfg, Counter::default()) {
            Err(BackendError::ConnectFailed(_)) => {}
            Err(other) => panic!("unexpected error {other}"),
            Ok(_) => panic!("expected ConnectFailed"),
        }
    }

    #[test]
    fn missing_manifest_fails_to_connect() {
        let cfg = SessionConfig::new(BackendKind::Sandbox, Some("/nonexistent/manifest.json".into()));
        assert!(matches!(open_session(&cfg, Counter::default()), Err(BackendError::ConnectFailed(_))));
    }

    #[test]
    fn error_text_leads_with_variant() {
        let e = BackendError::FetchFailed { status: Some(404), detail: "/nope".into() };
        assert_eq!(e.to_string(), "FetchFailed(404): /nope");
    }
}

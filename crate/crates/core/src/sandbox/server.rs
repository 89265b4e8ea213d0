use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::json;
use tiny_http::{Header, Response, Server};
use url::Url;

use super::site::{render_route, SandboxSearch};
use super::{SandboxError, SiteManifest};
use crate::toolkit::{SearchProvider, MAX_RESULTS};

const WORKERS: usize = 4;
/// Search endpoint in the JSON shape the HTTP search provider expects.
pub const SEARCH_PATH: &str = "/__search";

/// A running fixture server. Stops when dropped.
pub struct SandboxServer {
    server: Arc<Server>,
    base: Url,
    workers: Vec<JoinHandle<()>>,
}

impl SandboxServer {
    pub fn base_url(&self) -> &Url {
        &self.base
    }

    pub fn port(&self) -> u16 {
        self.base.port().unwrap_or(80)
    }

    /// Block until the server is stopped from another thread (or forever).
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for SandboxServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn header(k: &str, v: &str) -> Header {
    Header::from_bytes(k.as_bytes(), v.as_bytes()).expect("valid header")
}

fn handle(manifest: &SiteManifest, search: &SandboxSearch, req: tiny_http::Request) {
    let Ok(url) = Url::parse("http://localhost").and_then(|b| b.join(req.url())) else {
        let _ = req.respond(Response::from_string("bad request").with_status_code(400));
        return;
    };
    let query: Vec<(String, String)> = url.query_pairs().map(|(k, v)| (k.into_owned(), v.into_owned())).collect();
    tracing::debug!(path = url.path(), "sandbox request");
    if url.path() == SEARCH_PATH {
        let q = query.iter().find(|(k, _)| k == "q").map_or("", |(_, v)| v.as_str());
        let count = query
            .iter()
            .find(|(k, _)| k == "count")
            .and_then(|(_, v)| v.parse().ok())
            .unwrap_or(MAX_RESULTS);
        let results = search.search(q, count).unwrap_or_default();
        let body = json!({
            "results": results.iter().map(|r| json!({"title": r.title, "url": r.url, "snippet": r.snippet})).collect::<Vec<_>>()
        });
        let resp = Response::from_string(body.to_string()).with_header(header("Content-Type", "application/json"));
        let _ = req.respond(resp);
        return;
    }
    let r = render_route(manifest, url.path(), &query);
    let mut resp = Response::from_string(r.body)
        .with_status_code(r.status)
        .with_header(header("Content-Type", "text/html; charset=utf-8"));
    if let Some(loc) = r.location {
        resp = resp.with_header(header("Location", &loc));
    }
    let _ = req.respond(resp);
}

/// Serve `manifest` on 127.0.0.1:`port` (0 picks a free port).
pub fn serve(manifest: Arc<SiteManifest>, port: u16) -> Result<SandboxServer, SandboxError> {
    let server = Server::http(("127.0.0.1", port)).map_err(|e| SandboxError::BindFailed(format!("127.0.0.1:{port}: {e}")))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| SandboxError::BindFailed("not an IP listener".into()))?;
    let base = Url::parse(&format!("http://{addr}/")).expect("valid url");
    let server = Arc::new(server);
    let search = SandboxSearch::with_base(manifest.clone(), base.clone());
    let workers = (0..WORKERS)
        .map(|_| {
            let server = server.clone();
            let manifest = manifest.clone();
            let search = search.clone();
            std::thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    handle(&manifest, &search, req);
                }
            })
        })
        .collect();
    Ok(SandboxServer { server, base, workers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{generate_site, SiteParams};

    #[test]
    fn serves_pages_redirects_and_404() {
        let m = Arc::new(generate_site(2, SiteParams { long_page_tokens: 100, ..SiteParams::default() }).unwrap());
        let srv = serve(m.clone(), 0).unwrap();
        let client = reqwest::blocking::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .build()
            .unwrap();
        let home = client.get(srv.base_url().join("/home").unwrap()).send().unwrap();
        assert_eq!(home.status().as_u16(), 200);
        assert_eq!(home.text().unwrap(), render_route(&m, "/home", &[]).body);
        let root = client.get(srv.base_url().clone()).send().unwrap();
        assert_eq!(root.status().as_u16(), 302);
        assert_eq!(root.headers()["location"], "/home");
        assert_eq!(client.get(srv.base_url().join("/zz").unwrap()).send().unwrap().status().as_u16(), 404);
    }

    #[test]
    fn bind_conflict_is_bind_failed() {
        let m = Arc::new(generate_site(2, SiteParams { long_page_tokens: 100, ..SiteParams::default() }).unwrap());
        let a = serve(m.clone(), 0).unwrap();
        assert!(matches!(serve(m, a.port()), Err(SandboxError::BindFailed(_))));
    }
}

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};
use tungstenite::Message;

use nestbrowse::backend::{open_session, BackendError, BackendKind, CdpSession, Session, SessionConfig};
use nestbrowse::cli::{run_with, EXIT_OK};
use nestbrowse::outer_loop::{Termination, Trajectory};
use nestbrowse::pipeline::read_jsonl;
use nestbrowse::sandbox::{generate_site, serve, SiteManifest, SiteParams};
use nestbrowse::snapshot::{resolve_locator, Role};
use nestbrowse::tokens::Counter;

const PAGE_A: &str = r#"<html><head><title>A</title></head><body><h1>Alpha</h1>
<a href="/b">to b</a> <input name="q" type="text"></body></html>"#;
const PAGE_B: &str = "<html><head><title>B</title></head><body><p>Bravo page</p></body></html>";

/// Minimal DevTools peer: answers the handful of methods a page session uses
/// and fires load events after navigation. One connection, page-level.
fn fake_devtools() -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("ws://{}/devtools/page/T1", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut ws = tungstenite::accept(stream).unwrap();
        let mut methods = Vec::new();
        let (mut url, mut html) = ("about:blank".to_string(), String::new());
        let mut typed = String::new();
        loop {
            let msg = match ws.read() {
                Ok(Message::Text(t)) => t,
                Ok(Message::Close(_)) | Err(_) => break,
                Ok(_) => continue,
            };
            let req: Value = serde_json::from_str(msg.as_str()).unwrap();
            let method = req["method"].as_str().unwrap().to_string();
            methods.push(method.clone());
            let id = req["id"].clone();
            let mut events = Vec::new();
            let result = match method.as_str() {
                "Page.navigate" => {
                    url = req["params"]["url"].as_str().unwrap().to_string();
                    if url.ends_with("/missing") {
                        events.push(json!({"method": "Network.responseReceived",
                            "params": {"type": "Document", "loaderId": "L1", "response": {"status": 404}}}));
                    } else {
                        html = if url.ends_with("/b") { PAGE_B } else { PAGE_A }.to_string();
                        events.push(json!({"method": "Network.responseReceived",
                            "params": {"type": "Document", "loaderId": "L1", "response": {"status": 200}}}));
                        events.push(json!({"method": "Page.loadEventFired", "params": {}}));
                    }
                    json!({"frameId": "F", "loaderId": "L1"})
                }
                "Runtime.evaluate" => {
                    let expr = req["params"]["expression"].as_str().unwrap();
                    let value = if expr.contains("outerHTML") {
                        let doc = html.replace("<input name=\"q\" type=\"text\">", &format!("<input name=\"q\" type=\"text\" value=\"{typed}\">"));
                        json!(json!({"url": url, "html": doc}).to_string())
                    } else if expr.contains("el.click()") {
                        // the only clickable thing on page A is the link to B
                        if html == PAGE_A {
                            url = url.replace("/a", "/b");
                            html = PAGE_B.to_string();
                            events.push(json!({"method": "Page.frameStartedLoading", "params": {}}));
                            events.push(json!({"method": "Page.loadEventFired", "params": {}}));
                        }
                        json!("ok")
                    } else if expr.contains("el.value =") {
                        typed = "lantern".into();
                        json!("ok")
                    } else {
                        json!(null)
                    };
                    json!({"result": {"type": "string", "value": value}})
                }
                _ => json!({}),
            };
            ws.send(Message::text(json!({"id": id, "result": result}).to_string())).unwrap();
            for e in events {
                ws.send(Message::text(e.to_string())).unwrap();
            }
        }
        methods
    });
    (url, handle)
}

#[test]
fn cdp_session_navigates_clicks_and_fills() {
    let (endpoint, server) = fake_devtools();
    let mut s = CdpSession::connect(&endpoint, 2_000, Counter::default()).unwrap();
    assert_eq!(s.kind(), BackendKind::Live);

    let page = s.navigate("http://example.test/a").unwrap();
    assert_eq!(page.url, "http://example.test/a");
    assert!(page.snapshot.rendered_text.contains("Alpha"));
    let epoch = page.nav_epoch;

    let input = page.snapshot.interactive().into_iter().find(|e| e.role == Role::Input).expect("input");
    let loc = resolve_locator(&page.snapshot, input.element_id).unwrap().clone();
    let filled = s.fill(&loc, "lantern").unwrap();
    assert!(filled.nav_epoch > epoch);
    assert!(filled.snapshot.rendered_text.contains("lantern"), "{}", filled.snapshot.rendered_text);

    let link = filled.snapshot.interactive().into_iter().find(|e| e.role == Role::Link).expect("link");
    let loc = resolve_locator(&filled.snapshot, link.element_id).unwrap().clone();
    let after = s.click(&loc).unwrap();
    assert!(after.snapshot.rendered_text.contains("Bravo"), "{}", after.snapshot.rendered_text);

    let err = s.navigate("http://example.test/missing").unwrap_err();
    assert!(matches!(err, BackendError::FetchFailed { status: Some(404), .. }), "{err}");
    assert!(matches!(s.navigate("http://[bad"), Err(BackendError::InvalidUrl(_))));

    drop(s);
    let methods = server.join().unwrap();
    assert_eq!(&methods[..3], ["Page.enable", "Runtime.enable", "Network.enable"]);
    assert!(methods.iter().filter(|m| *m == "Page.navigate").count() == 2);
}

#[test]
fn live_backend_without_endpoint_is_config_error() {
    let cfg = SessionConfig::new(BackendKind::Live, None);
    assert!(matches!(cfg.validate(), Err(BackendError::Config(_))));
    let cfg = SessionConfig::new(BackendKind::Live, Some("ws://127.0.0.1:1/devtools/page/x".into()));
    assert!(matches!(open_session(&cfg, Counter::default()), Err(BackendError::ConnectFailed(_))));
}

#[test]
fn sandbox_over_http_matches_in_process() {
    let site = Arc::new(generate_site(11, SiteParams { n_pages: 6, n_dynamic: 2, n_forms: 1, long_page_tokens: 500 }).unwrap());
    let server = serve(site.clone(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mpath = dir.path().join("m.json");
    site.save(&mpath).unwrap();

    let run = |extra: &[&str], out: &str| -> Vec<Trajectory> {
        let out = dir.path().join(out);
        let mut args = vec!["nestbrowse", "run", "--manifest", mpath.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let mut err = Vec::new();
        assert_eq!(run_with(args, &|_| None, &mut Vec::new(), &mut err), EXIT_OK, "{}", String::from_utf8_lossy(&err));
        read_jsonl(&out.join("trajectories.jsonl")).unwrap()
    };
    let remote = run(&["--backend", "sandbox", "--endpoint", server.base_url().as_str()], "http");
    let local = run(&[], "local");
    assert_eq!(remote.len(), site.tasks.len());
    for (r, task) in remote.iter().zip(&site.tasks) {
        assert_eq!(r.termination, Termination::Answered, "{}", r.task_id);
        assert_eq!(r.final_answer.as_deref(), Some(task.gold.answer.as_str()));
    }
    let answers = |ts: &[Trajectory]| ts.iter().map(|t| t.final_answer.clone()).collect::<Vec<_>>();
    assert_eq!(answers(&remote), answers(&local));

    let loaded = SiteManifest::load(&mpath).unwrap();
    assert_eq!(&loaded, site.as_ref());
}

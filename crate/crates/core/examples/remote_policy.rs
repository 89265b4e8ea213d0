//! Answer a question with a hosted model over the live web.
//!
//!     NESTBROWSE_LLM_URL=https://host/v1/chat/completions NESTBROWSE_LLM_MODEL=... \
//!     NESTBROWSE_SEARCH_URL=... NESTBROWSE_CDP_URL=ws://127.0.0.1:9222/devtools/browser/... \
//!     cargo run --example remote_policy -- "your question"
//!
//! Without a DevTools endpoint pages are fetched statically (no scripts).

use nestbrowse::backend::{open_session, BackendKind, SessionConfig, CDP_URL_ENV};
use nestbrowse::outer_loop::{run_episode, EpisodeConfig};
use nestbrowse::policy::{RemoteConfig, RemotePolicy};
use nestbrowse::toolkit::{HttpSearch, NoSearch, SearchProvider};

fn main() {
    let Some(mut cfg) = RemoteConfig::from_env() else {
        eprintln!("set NESTBROWSE_LLM_URL (and NESTBROWSE_LLM_MODEL / NESTBROWSE_LLM_KEY) first");
        std::process::exit(2);
    };
    cfg.sampling.insert("temperature".into(), serde_json::json!(0.6));
    let policy = RemotePolicy::new(cfg).expect("client");
    let question = std::env::args().nth(1).unwrap_or_else(|| "Who designed the Eiffel Tower's elevators?".into());

    let session_cfg = match std::env::var(CDP_URL_ENV) {
        Ok(url) => SessionConfig::new(BackendKind::Live, Some(url)),
        Err(_) => SessionConfig::new(BackendKind::Static, None),
    };
    let episode = EpisodeConfig::default();
    let mut session = open_session(&session_cfg, episode.counter().clone()).expect("session");
    let search: Box<dyn SearchProvider> = match HttpSearch::from_env() {
        Some(s) => Box::new(s.expect("search client")),
        None => Box::new(NoSearch),
    };

    let t = run_episode("q0001", &question, &policy, session.as_mut(), search.as_ref(), &episode);
    println!("{}", t.to_json_line());
    eprintln!("{:?}: {:?}", t.termination, t.final_answer);
}

//! Generate a deterministic sandbox site and optionally serve it.
//!
//!     cargo run --example sandbox_site -- [seed] [--serve]

use std::sync::Arc;

use nestbrowse::sandbox::{generate_site, render_route, serve, SiteParams};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.iter().find_map(|a| a.parse().ok()).unwrap_or(7);
    let site = Arc::new(generate_site(seed, SiteParams::default()).expect("valid params"));

    println!("seed {seed}: {} pages, {} tasks", site.pages.len(), site.tasks.len());
    for t in &site.tasks {
        let tools: Vec<&str> = t.required_actions.iter().map(|a| a.as_str()).collect();
        println!("  {}  [{:?}] needs {:<28} {}", t.task_id, t.planted, tools.join("+"), t.question);
    }
    let home = render_route(&site, "/home", &[]);
    println!("\n/home -> {} ({} bytes)", home.status, home.body.len());

    if args.iter().any(|a| a == "--serve") {
        let server = serve(site, 0).expect("bind");
        println!("serving on {} (Ctrl-C to stop)", server.base_url());
        server.join();
    }
}

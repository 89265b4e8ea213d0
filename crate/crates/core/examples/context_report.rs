//! Run sandbox episodes over very long pages and report how the agent's
//! context compares with the raw page content it processed.

use std::sync::Arc;

use nestbrowse::metrics::{build_report, PlantedFactJudge};
use nestbrowse::outer_loop::{EpisodeConfig, Limits};
use nestbrowse::sandbox::{generate_site, run_task, OracleSolver, SiteParams};

fn main() {
    let limit = 16_384;
    let params = SiteParams { n_pages: 5, n_dynamic: 2, n_forms: 1, long_page_tokens: 50_000 };
    let cfg = EpisodeConfig { limits: Limits { token_limit: limit, ..Limits::default() }, ..EpisodeConfig::default() };
    let site = Arc::new(generate_site(100, params).unwrap());
    let solver = OracleSolver::new(site.clone());
    let trajs: Vec<_> = site.tasks.iter().map(|t| run_task(&site, t, &solver, &cfg)).collect();

    let judge = PlantedFactJudge::from_manifest(&site);
    let report = build_report(&trajs, None, Some(&judge)).unwrap();
    print!("{}", report.to_text());
    match report.curve.first_turn_exceeding(limit) {
        Some(k) => println!("\nprocessed page content passes the {limit}-token limit at turn {k}"),
        None => println!("\nprocessed page content stays under {limit} tokens"),
    }
}

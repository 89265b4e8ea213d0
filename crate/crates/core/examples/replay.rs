//! Store a trajectory as JSON, load it back, and rebuild the exact text the
//! policy saw at every turn.

use std::sync::Arc;

use nestbrowse::outer_loop::{parse_context, EpisodeConfig, Trajectory};
use nestbrowse::sandbox::{generate_site, run_task, OracleSolver, SiteParams};
use nestbrowse::tokens::Counter;

fn main() {
    let site = Arc::new(generate_site(5, SiteParams::default()).unwrap());
    let solver = OracleSolver::new(site.clone());
    let t = run_task(&site, &site.tasks[1], &solver, &EpisodeConfig::default());

    let line = t.to_json_line();
    let back: Trajectory = serde_json::from_str(&line).unwrap();
    assert_eq!(back, t);
    println!("{}: {} bytes of JSON, {} turns", t.task_id, line.len(), t.turns.len());

    let text = back.context(Counter::default()).to_text();
    let parsed = parse_context(&text).unwrap();
    assert_eq!(parsed.to_text(), text);
    for i in 0..t.turns.len() {
        let prompt = t.prompt_for_turn(i);
        println!("turn {}: prompt of {} messages", i + 1, prompt.len());
    }
    println!("\nfinal context:\n{}", text.chars().take(1500).collect::<String>());
}

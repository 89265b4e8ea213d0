//! One full episode against the sandbox, driven by the oracle solver, with
//! the turn-by-turn transcript printed.

use std::sync::Arc;

use nestbrowse::outer_loop::EpisodeConfig;
use nestbrowse::sandbox::{generate_site, run_task, OracleSolver, Planted, SiteParams};

fn main() {
    let site = Arc::new(generate_site(3, SiteParams::default()).unwrap());
    // a task whose answer sits behind a form is the most interesting one
    let task = site.tasks.iter().find(|t| t.planted == Planted::Form).unwrap_or(&site.tasks[0]);
    let solver = OracleSolver::new(site.clone());
    let t = run_task(&site, task, &solver, &EpisodeConfig::default());

    println!("Q: {}\n", t.question);
    for (i, turn) in t.turns.iter().enumerate() {
        println!("--- turn {} ({} context tokens)", i + 1, turn.context_tokens);
        println!("{}", turn.assistant_text());
        if let Some(r) = &turn.response {
            let body: String = r.body.chars().take(300).collect();
            println!("=> {}{}", body, if r.body.len() > 300 { " ..." } else { "" });
        }
    }
    println!(
        "\n{:?}: {:?} (gold {}), {} calls, {} extraction steps, peak context {} / whole info {}",
        t.termination,
        t.final_answer,
        task.gold.answer,
        t.stats.tool_calls,
        t.extraction_records.len(),
        t.stats.peak_context_tokens,
        t.stats.whole_info_tokens
    );
}

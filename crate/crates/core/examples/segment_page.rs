//! Goal-driven exploration of one long page: segment it, then thread a
//! workspace through the segments with an extractor model.
//!
//! The extractor here is the sandbox's keyword-matching reference, so the
//! example runs offline.

use nestbrowse::inner_loop::{explore_page, segment_page, InnerConfig};
use nestbrowse::policy::{FnPolicy, PolicyRequest};
use nestbrowse::sandbox::reference_extract;

fn main() {
    let mut page = String::from("# Catalog\n\n");
    for i in 0..60 {
        page.push_str(&format!("Item {i}: a generic product with a long, unremarkable description.\n\n"));
    }
    page.push_str("The catalog code of the brass lantern is LN-4821.\n\n");
    page.push_str(&"More filler text that says nothing useful at all. ".repeat(80));

    let config = InnerConfig { segment_budget: 256, ..InnerConfig::default() };
    let segments = segment_page(&page, config.segment_budget, &config.counter);
    println!("{} segments:", segments.len());
    for s in &segments {
        println!("  #{:<2} {:>4} tokens", s.index, s.token_count);
    }

    let extractor = FnPolicy(|req: &PolicyRequest| Ok(reference_extract(&req.messages[1].content)));
    let out = explore_page(&page, "catalog code of the brass lantern", &extractor, &config).unwrap();
    println!("\nevidence: {}", out.workspace.evidence);
    println!("summary:  {}", out.workspace.summary);
    println!("\nreturned to the agent:\n{}", out.workspace.to_useful_info());
}

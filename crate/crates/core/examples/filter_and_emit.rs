//! Rejection filtering and supervision emission over a corpus with planted
//! defects.

use std::collections::BTreeMap;

use nestbrowse::outer_loop::Trajectory;
use nestbrowse::pipeline::{emit_samples, filter_batch, filter_stats, planted_corpus, EmitOptions, SandboxJudge};

fn main() {
    let corpus = planted_corpus(1, 3, 6);
    let trajs: Vec<Trajectory> = corpus.iter().map(|c| c.trajectory.clone()).collect();
    let golds: BTreeMap<_, _> = corpus.iter().map(|c| (c.gold.task_id.clone(), c.gold.clone())).collect();

    let out = filter_batch(&trajs, &golds, &SandboxJudge);
    for (c, r) in corpus.iter().zip(&out.reports) {
        let found: Vec<&str> = r.violations.iter().map(|v| v.as_str()).collect();
        println!("{:<14} planted {:<24} found {:?}", r.task_id, c.planted.map_or("-", |v| v.as_str()), found);
    }
    println!("\n{}", serde_json::to_string_pretty(&filter_stats(&out.reports)).unwrap());

    let opts = EmitOptions::default();
    let mut n = 0;
    for (t, r) in trajs.iter().zip(&out.reports) {
        if r.accepted {
            n += emit_samples(t, &opts).unwrap().len();
        }
    }
    println!("{n} samples from {} accepted trajectories", out.reports.iter().filter(|r| r.accepted).count());

    let first = emit_samples(&trajs[trajs.len() - 1], &opts).unwrap().remove(0);
    let chars: Vec<char> = first.target.chars().collect();
    for (a, b) in &first.mask_spans {
        println!("  supervised [{a}, {b}): {}", chars[*a..*b].iter().collect::<String>());
    }
}

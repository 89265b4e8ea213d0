//! The command-line workflow end to end, in a scratch directory:
//! generate a site, evaluate on it, filter, emit and report.

use nestbrowse::cli::run_with;

fn step(args: &[&str]) {
    println!("$ nestbrowse {}", args.join(" "));
    let mut argv = vec!["nestbrowse"];
    argv.extend_from_slice(args);
    let env = |k: &str| std::env::var(k).ok();
    let code = run_with(argv, &env, &mut std::io::stdout(), &mut std::io::stderr());
    assert_eq!(code, 0, "exit {code}");
}

fn main() {
    let dir = std::env::temp_dir().join(format!("nestbrowse-demo-{}", std::process::id()));
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::create_dir_all(&dir).unwrap();

    step(&["sandbox", "generate", "--seed", "12", "--n-pages", "10", "--out", &p("site.json")]);
    step(&["eval", "--manifest", &p("site.json"), "--concurrency", "4", "--out", &p("run")]);
    step(&["pipeline", "filter", "--trajectories", &p("run/trajectories.jsonl"), "--manifest", &p("site.json"), "--out", &p("reports.jsonl")]);
    step(&["pipeline", "stats", "--reports", &p("reports.jsonl")]);
    step(&["pipeline", "emit", "--trajectories", &p("run/trajectories.jsonl"), "--reports", &p("reports.jsonl"), "--out", &p("samples.jsonl")]);
    step(&["report", "--trajectories", &p("run/trajectories.jsonl"), "--reports", &p("reports.jsonl"), "--manifest", &p("site.json"), "--text", "--out", &p("report.json")]);
    println!("outputs in {}", dir.display());
}

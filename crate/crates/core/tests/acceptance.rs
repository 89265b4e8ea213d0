//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//! Runs without the libtest harness so the lines are always printed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use nestbrowse::inner_loop::segment_page;
use nestbrowse::metrics::{context_curve, pass_at_1};
use nestbrowse::outer_loop::{parse_context, serialize_messages, EpisodeConfig, Limits, Termination, Trajectory};
use nestbrowse::pipeline::{emit_samples, filter_batch, planted_corpus, spans_well_formed, EmitOptions, SampleKind, SandboxJudge, Violation};
use nestbrowse::policy::{FnPolicy, Policy, PolicyRequest};
use nestbrowse::prompts;
use nestbrowse::sandbox::{generate_site, run_task, solvable_with, OracleSolver, SiteManifest, SiteParams};
use nestbrowse::tokens::Counter;
use nestbrowse::toolkit::{tool_schemas, tools_block, ToolName};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn site(seed: u64, params: SiteParams) -> Arc<SiteManifest> {
    Arc::new(generate_site(seed, params).expect("valid params"))
}

fn run_all(m: &Arc<SiteManifest>, policy: &dyn Policy, cfg: &EpisodeConfig) -> Vec<Trajectory> {
    m.tasks.iter().map(|t| run_task(m, t, policy, cfg)).collect()
}

fn correct(m: &SiteManifest, t: &Trajectory) -> bool {
    let gold = &m.task(&t.task_id).expect("task").gold.answer;
    t.final_answer.as_deref() == Some(gold.as_str())
}

// 1. Page tools answer with the workspace; search and fill never do.
fn nested_exec_law() -> Outcome {
    let start = Instant::now();
    let params = SiteParams { n_pages: 9, n_dynamic: 4, n_forms: 2, long_page_tokens: 1200 };
    let cfg = EpisodeConfig::default();
    let (mut episodes, mut page_ok, mut other) = (0, 0, 0);
    for seed in 0..25 {
        let m = site(seed, params);
        let solver = OracleSolver::new(m.clone());
        for t in run_all(&m, &solver, &cfg) {
            episodes += 1;
            for turn in &t.turns {
                let (Some(call), Some(r)) = (&turn.call, &turn.response) else { continue };
                let has = r.body.contains("<useful_info>");
                match call.tool() {
                    Some(ToolName::Visit | ToolName::Click) if r.ok => {
                        check(has, format!("{}: {} response without workspace", t.task_id, call.name))?;
                        page_ok += 1;
                    }
                    Some(ToolName::Search | ToolName::Fill) => {
                        check(!has, format!("{}: {} response carries a workspace", t.task_id, call.name))?;
                        other += 1;
                    }
                    _ => {}
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(episodes >= 200, format!("only {episodes} episodes"))?;
    check(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!("{episodes} episodes, {page_ok} page responses all with <useful_info>, {other} search/fill without; {secs:.1}s"))
}

// 2. Outer context stays bounded while processed page content runs past the limit.
fn context_boundedness() -> Outcome {
    let start = Instant::now();
    let limit = 16_384;
    let params = SiteParams { n_pages: 5, n_dynamic: 2, n_forms: 1, long_page_tokens: 3 * limit + 1_000 };
    let cfg = EpisodeConfig {
        limits: Limits { token_limit: limit, ..Limits::default() },
        ..EpisodeConfig::default()
    };
    let mut trajs = Vec::new();
    let mut solved = 0;
    for seed in 100..103 {
        let m = site(seed, params);
        let solver = OracleSolver::new(m.clone());
        for t in run_all(&m, &solver, &cfg) {
            let host = &m.task(&t.task_id).unwrap().host_path;
            let page_tokens = Counter::default().count(&nestbrowse::snapshot::parse_html(
                &nestbrowse::sandbox::render_route(&m, host, &[]).body,
                host,
            ).rendered_text);
            check(page_tokens >= 3 * limit, format!("{}: host page only {page_tokens} tokens", t.task_id))?;
            check(
                t.stats.peak_context_tokens <= limit,
                format!("{}: peak context {} > {limit}", t.task_id, t.stats.peak_context_tokens),
            )?;
            solved += usize::from(correct(&m, &t));
            trajs.push(t);
        }
    }
    let curve = context_curve(&trajs);
    let horizon = curve.points.len();
    let first = curve.first_turn_exceeding(limit).ok_or("mean whole-info never exceeds the limit")?;
    check(2 * first <= horizon, format!("limit first exceeded at turn {first} of {horizon}"))?;
    let rate = solved as f64 / trajs.len() as f64;
    check(rate >= 0.95, format!("completion {rate:.2}"))?;
    let max_peak = trajs.iter().map(|t| t.stats.peak_context_tokens).max().unwrap_or(0);
    let mean_whole = trajs.iter().map(|t| t.stats.whole_info_tokens).sum::<u64>() / trajs.len() as u64;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 300.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "{} episodes, max peak context {max_peak} <= {limit}, mean whole info {mean_whole}, exceeded at turn {first}/{horizon}, completion {rate:.2}; {secs:.1}s",
        trajs.len()
    ))
}

// 3. Segmentation loses nothing.
fn lossless_segmentation() -> Outcome {
    let oversized = AtomicUsize::new(0);
    let counter = Counter::default();
    let block = prop_oneof![
        3 => "[a-z ]{1,200}",
        1 => "[a-z\n]{1,400}",
        1 => "[a-z ]{1100,2600}",
        1 => "[a-zé€ \\[\\]=0-9]{50,600}",
    ];
    let strat = (proptest::collection::vec(block, 0..12), prop_oneof![Just("\n\n"), Just("\n"), Just("\n\n\n")], 256u64..600);
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let result = runner.run(&strat, |(blocks, sep, budget)| {
        let text = blocks.join(sep);
        // any blank-line block larger than the budget forces the oversized path
        if text.split("\n\n").any(|b| counter.count(b) > budget) {
            oversized.fetch_add(1, Ordering::Relaxed);
        }
        let segs = segment_page(&text, budget, &counter);
        let joined: String = segs.iter().map(|s| s.text.as_str()).collect();
        prop_assert_eq!(&joined, &text);
        for s in &segs {
            prop_assert!(!s.text.is_empty());
            prop_assert_eq!(s.token_count, counter.count(&s.text));
        }
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let n = oversized.load(Ordering::Relaxed);
    check(n >= 50, format!("oversized rule exercised only {n} times"))?;
    Ok(format!("1000 cases, 0 failures, oversized rule exercised {n} times"))
}

// 4. Dynamic answers are out of reach for search+visit alone.
fn dynamic_witness() -> Outcome {
    let cfg = EpisodeConfig::default();
    let sv = [ToolName::Search, ToolName::Visit];
    let (mut dynamic, mut static_n) = (0, 0);
    for seed in 0..6 {
        let m = site(seed, SiteParams { n_pages: 8, n_dynamic: 4, n_forms: 2, long_page_tokens: 600 });
        let full = OracleSolver::new(m.clone());
        let restricted = OracleSolver::restricted(m.clone(), &sv);
        for task in &m.tasks {
            let needs_more = !task.required_actions.iter().all(|a| sv.contains(a));
            let oracle_sv = solvable_with(&m, task, &sv);
            let oracle_full = solvable_with(&m, task, &ToolName::ALL);
            let r = correct(&m, &run_task(&m, task, &restricted, &cfg));
            let f = correct(&m, &run_task(&m, task, &full, &cfg));
            check(r == oracle_sv, format!("{}: restricted solver {r} vs oracle {oracle_sv}", task.task_id))?;
            check(f && oracle_full, format!("{}: full solver {f}, oracle {oracle_full}", task.task_id))?;
            check(needs_more != oracle_sv, format!("{}: required_actions disagree with oracle", task.task_id))?;
            if needs_more {
                dynamic += 1;
            } else {
                static_n += 1;
            }
        }
    }
    // pass@1 over the dynamic tasks, per solver
    check(dynamic > 0, "no dynamic tasks generated")?;
    Ok(format!(
        "{dynamic} dynamic tasks: restricted pass@1 {:.1}, full pass@1 {:.1}; {static_n} static tasks solved by both; all match the oracle",
        pass_at_1(&vec![false; dynamic]).unwrap(),
        pass_at_1(&vec![true; dynamic]).unwrap()
    ))
}

// 5. The filter flags exactly the planted violations.
fn rejection_exactness() -> Outcome {
    let corpus = planted_corpus(42, 10, 30);
    let trajs: Vec<Trajectory> = corpus.iter().map(|c| c.trajectory.clone()).collect();
    let golds = corpus.iter().map(|c| (c.gold.task_id.clone(), c.gold.clone())).collect();
    let out = filter_batch(&trajs, &golds, &SandboxJudge);
    check(out.held.is_empty(), "trajectories held")?;
    check(out.reports.len() == corpus.len(), "report count")?;
    let mut lines = Vec::new();
    for v in Violation::ALL {
        let (mut tp, mut fp, mut fnn) = (0, 0, 0);
        for (c, r) in corpus.iter().zip(&out.reports) {
            match (c.planted == Some(v), r.violations.contains(&v)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                _ => {}
            }
        }
        let precision = tp as f64 / (tp + fp).max(1) as f64;
        let recall = tp as f64 / (tp + fnn).max(1) as f64;
        check(tp >= 10 && precision == 1.0 && recall == 1.0, format!("{}: P={precision} R={recall} tp={tp}", v.as_str()))?;
        lines.push(format!("{} P=R=1.0 ({tp})", v.as_str()));
    }
    let clean_ok = corpus.iter().zip(&out.reports).filter(|(c, r)| c.planted.is_none() && r.accepted).count();
    check(clean_ok == 30, format!("{clean_ok}/30 clean accepted"))?;
    Ok(format!("{}; 30/30 clean accepted", lines.join(", ")))
}

// 6. Sample counts, masks and default weights.
fn supervision_emission() -> Outcome {
    let corpus = planted_corpus(7, 0, 20);
    let trajs: Vec<Trajectory> = corpus.iter().map(|c| c.trajectory.clone()).collect();
    let golds = corpus.iter().map(|c| (c.gold.task_id.clone(), c.gold.clone())).collect();
    let out = filter_batch(&trajs, &golds, &SandboxJudge);
    let accepted: Vec<&Trajectory> = trajs.iter().zip(&out.reports).filter(|(_, r)| r.accepted).map(|(t, _)| t).collect();
    check(accepted.len() == 20, format!("{} accepted", accepted.len()))?;
    let (mut n_out, mut n_in) = (0, 0);
    for t in accepted {
        let samples = emit_samples(t, &EmitOptions::default()).map_err(|e| e.to_string())?;
        let outer = samples.iter().filter(|s| s.kind == SampleKind::Outer).count();
        let inner = samples.iter().filter(|s| s.kind == SampleKind::Inner).count();
        check(outer == t.turns.len(), format!("{}: {outer} outer vs {} turns", t.task_id, t.turns.len()))?;
        check(inner == t.extraction_records.len(), format!("{}: {inner} inner samples", t.task_id))?;
        for s in &samples {
            check(spans_well_formed(s), format!("{}: bad spans {:?}", t.task_id, s.mask_spans))?;
            check(s.weight == 1.0, format!("{}: weight {}", t.task_id, s.weight))?;
            if s.kind == SampleKind::Outer {
                let chars: Vec<char> = s.target.chars().collect();
                let masked: Vec<String> = s.mask_spans.iter().map(|&(a, b)| chars[a..b].iter().collect()).collect();
                let whole = |m: &String| {
                    ["think", "tool_call", "answer"].iter().any(|tag| {
                        m.starts_with(&format!("<{tag}>")) && m.ends_with(&format!("</{tag}>"))
                    })
                };
                check(masked.iter().all(whole), format!("{}: span is not a whole element: {masked:?}", t.task_id))?;
                check(!masked.iter().any(|m| m.contains("<tool_response>")), format!("{}: tool response supervised", t.task_id))?;
            }
        }
        n_out += outer;
        n_in += inner;
    }
    Ok(format!("20 trajectories -> {n_out} outer + {n_in} inner samples, spans well formed, weights 1.0"))
}

// 7. Call and token limits hold.
fn limit_enforcement() -> Outcome {
    let m = site(3, SiteParams::default());
    let task = &m.tasks[0];
    let never = FnPolicy(|_: &PolicyRequest| {
        Ok("<think>keep looking</think>\n<tool_call>{\"name\":\"search\",\"arguments\":{\"queries\":[\"lantern\"]}}</tool_call>".to_string())
    });
    let t = run_task(&m, task, &never, &EpisodeConfig::default());
    check(t.termination == Termination::CallLimit, format!("termination {:?}", t.termination))?;
    check(t.stats.tool_calls == 100, format!("{} calls", t.stats.tool_calls))?;

    let limit = 8_000;
    let counter = Counter::default();
    let worst = Mutex::new(0u64);
    let verbose = FnPolicy(|req: &PolicyRequest| {
        let n = counter.count(&serialize_messages(&req.messages));
        let mut w = worst.lock().unwrap();
        *w = (*w).max(n);
        Ok(format!(
            "<think>{}</think>\n<tool_call>{{\"name\":\"search\",\"arguments\":{{\"queries\":[\"lantern\"]}}}}</tool_call>",
            "let me think about this at length. ".repeat(40)
        ))
    });
    let cfg = EpisodeConfig { limits: Limits { token_limit: limit, ..Limits::default() }, ..EpisodeConfig::default() };
    let v = run_task(&m, task, &verbose, &cfg);
    let worst = *worst.lock().unwrap();
    check(v.termination == Termination::TokenLimit, format!("verbose termination {:?}", v.termination))?;
    check(worst <= limit, format!("policy called with {worst} > {limit} tokens"))?;
    Ok(format!("never-answering: call_limit at 100 calls; verbose: token_limit after {} calls, largest request {worst} <= {limit}", v.stats.tool_calls))
}

// 8. Stored trajectories round-trip; seeded runs are byte-identical.
fn round_trip_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for run in 0..2 {
        let manifest = dir.path().join(format!("m{run}.json"));
        let out = dir.path().join(format!("run{run}"));
        let code = nestbrowse::cli::run_with(
            [
                "nestbrowse", "sandbox", "generate", "--seed", "9", "--n-pages", "7", "--n-dynamic", "3", "--n-forms", "1",
                "--out", manifest.to_str().unwrap(),
            ],
            &|_| None,
            &mut Vec::new(),
            &mut Vec::new(),
        );
        check(code == 0, "generate failed")?;
        let code = nestbrowse::cli::run_with(
            [
                "nestbrowse", "run", "--manifest", manifest.to_str().unwrap(), "--concurrency", "3", "--out",
                out.to_str().unwrap(),
            ],
            &|_| None,
            &mut Vec::new(),
            &mut Vec::new(),
        );
        check(code == 0, format!("run exited {code}"))?;
        files.push(std::fs::read(out.join("trajectories.jsonl")).map_err(|e| e.to_string())?);
    }
    check(files[0] == files[1], "trajectory files differ between seeded runs")?;
    let text = String::from_utf8(files[0].clone()).map_err(|e| e.to_string())?;
    let mut n = 0;
    for line in text.lines() {
        let t: Trajectory = serde_json::from_str(line).map_err(|e| e.to_string())?;
        check(serde_json::to_string(&t).unwrap() == line, format!("{}: JSON not canonical", t.task_id))?;
        let ctx = t.context(Counter::default()).to_text();
        let parsed = parse_context(&ctx).map_err(|e| format!("{}: {e}", t.task_id))?;
        check(parsed.to_text() == ctx, format!("{}: text round trip differs", t.task_id))?;
        check(parsed.turns.len() == t.turns.len(), "turn count")?;
        n += 1;
    }
    Ok(format!("{n} trajectories round-trip (JSON and text); two seeded runs byte-identical ({} bytes)", files[0].len()))
}

// 9. Prompts equal the reference templates after substitution.
const REF_OUTER: &str = r#"You are a browser-use agent. Your core function is to conduct thorough, multi-source investigations into any topic. You must handle both broad, open-domain inquiries and queries within specialized academic fields. For every request, synthesize information from credible, diverse sources to deliver a comprehensive, accurate, and objective response. When you have gathered sufficient information and are ready to provide the definitive response, you must enclose the entire final answer within <answer></answer> tags.
\\\\
\# Tools
\\\\
You may call one or more functions to assist with the user query.
\\\\
You are provided with function signatures within <tools></tools> XML tags:\\
<tools>\\
\{BROSWER\_TOOLS\_SCHEMA\}\\
</tools>
\\\\
For each function call, return a json object with function name and arguments within <tool\_call></tool\_call> XML tags:\\
<tool\_call>\\
\{"name": <function-name>, "arguments": <args-json-object>\}\\
</tool\_call>"#;

const REF_INNER_SYSTEM: &str = r#"You must answer only by outputting a single valid JSON object, with no extra text before or after it.
\\\\
Your task: given webpage content and a user goal, extract and organize the useful information according to the following schema: \{"rational": "string", "evidence": "string", "summary": "string"\}.
\\\\
Follow these rules for each field: \\
1) rational: Locate the **specific sections/data** directly related to the user's goal within the webpage content. \\
2) evidence: Identify and extract the **most relevant information** from the content, never miss any important information, output the **full original context** of the content as far as possible, it can be more than three paragraphs. \\
3) summary: Organize into a concise paragraph with logical flow, prioritizing clarity and judge the contribution of the information to the goal.
\\\\
Formatting requirements: Output only one valid JSON object wrapped inside <useful\_info> and </useful\_info> tags: use double quotes (") for all keys and string values, no trailing commas, and the top-level structure must be exactly: \{"rational": "...", "evidence": "...", "summary": "..."\}."#;

const REF_INNER_USER: &str = r#"Please process the following webpage content and user goal to extract relevant information:
\\\\
\#\# **Webpage Content** \\
\{raw\_response\}
\\\\
\#\# **User Goal**\\
\{goal\}
\\\\
\#\# **Task Guidelines**\\
1. **Content Scanning for Rational**: Locate the **specific sections/data** directly related to the user's goal within the webpage content.\\
2. **Key Extraction for Evidence**: Identify and extract the **most relevant information** from the content, you never miss any important information, output the **full original context** of the content as far as possible, it can be more than three paragraphs.\\
3. **Summary Output for Summary**: Organize into a concise paragraph with logical flow, prioritizing clarity and judge the contribution of the information to the goal.
\\\\
**Final Output Format using JSON format has "rational", "evidence", "summary" feilds**"#;

const REF_INNER_INCREMENTAL: &str = r#"Please process the following webpage content and user goal to increamentally extract relevant information:
\\\\
\#\# **Webpage Content** \\
\{raw\_response\}
\\\\
\#\# **User Goal**\\
\{goal\}
\\\\
\#\# **Task Guidelines**\\
1. **Content Scanning for Rational**: Locate the **specific sections/data** directly related to the user's goal within the webpage content\\
2. **Key Extraction for Evidence**: Identify and extract the **most relevant information** from the content, you never miss any important information, output the **full original context** of the content as far as possible, it can be more than three paragraphs.\\
3. **Summary Output for Summary**: Organize into a concise paragraph with logical flow, prioritizing clarity and judge the contribution of the information to the goal.
\\\\
\#\# **Existing Evidence**\\
\{existing\_evidence\}

\#\# **Existing Summary**\\
\{existing\_summary\}
\\\\
Note: Existing extracted evidence and summaries are already provided. You must build upon and integrate these existing pieces of information to perform incremental processing. Produce a consolidated final result that incorporates both the provided and newly added information, without indicating which parts are new or incremental.
\\\\
**Final Output Format using JSON format has "rational", "evidence", "summary" feilds**"#;

/// LaTeX box body to plain text: `\\\\` lines are blank lines, a trailing
/// `\\` is a line break, escapes are dropped, trailing spaces trimmed.
fn latex_to_text(src: &str) -> String {
    src.lines()
        .map(|l| {
            let l = l.trim_end();
            let l = if l == r"\\\\" { "" } else { l.strip_suffix(r"\\").unwrap_or(l) };
            l.replace(r"\#", "#").replace(r"\_", "_").replace(r"\{", "{").replace(r"\}", "}").trim_end().to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn prompt_fidelity() -> Outcome {
    let schema = tools_block(&tool_schemas());
    let (page, goal, ev, sum) = ("# Page {goal}\n[id=e1] <link> \"x\"", "find the {raw_response} code", "ev \"1\"", "sum {existing_evidence}");
    let cases = [
        ("outer system", latex_to_text(REF_OUTER).replace("{BROSWER_TOOLS_SCHEMA}", &schema), nestbrowse::outer_loop::build_system_prompt(&tool_schemas())),
        ("inner system", latex_to_text(REF_INNER_SYSTEM), prompts::inner_system()),
        (
            "inner user",
            // substitute in one pass by splitting on the placeholders
            subst(&latex_to_text(REF_INNER_USER), &[("{raw_response}", page), ("{goal}", goal)]),
            prompts::inner_user(page, goal),
        ),
        (
            "inner user incremental",
            subst(
                &latex_to_text(REF_INNER_INCREMENTAL),
                &[("{raw_response}", page), ("{goal}", goal), ("{existing_evidence}", ev), ("{existing_summary}", sum)],
            ),
            prompts::inner_user_incremental(page, goal, ev, sum),
        ),
    ];
    for (name, want, got) in &cases {
        if want != got {
            let at = want.bytes().zip(got.bytes()).take_while(|(a, b)| a == b).count();
            return Err(format!("{name} differs at byte {at}: {:?} vs {:?}", &want[at..(at + 40).min(want.len())], &got[at..(at + 40).min(got.len())]));
        }
    }
    check(cases[1].2.contains("Output only one valid JSON object"), "inner system rule missing")?;
    Ok("outer system, inner system, inner user and incremental prompts byte-identical to the reference".into())
}

/// Each placeholder occurs once in these templates, so replacing them in
/// template order is a single pass.
fn subst(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::new();
    let mut rest = template;
    for (k, v) in vars {
        let i = rest.find(k).expect("placeholder present");
        out.push_str(&rest[..i]);
        out.push_str(v);
        rest = &rest[i + k.len()..];
    }
    out.push_str(rest);
    out
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 nested-exec law", nested_exec_law),
        ("2 context boundedness", context_boundedness),
        ("3 lossless segmentation", lossless_segmentation),
        ("4 dynamic-information witness", dynamic_witness),
        ("5 rejection filter exactness", rejection_exactness),
        ("6 supervision emission", supervision_emission),
        ("7 limit enforcement", limit_enforcement),
        ("8 round-trip + determinism", round_trip_determinism),
        ("9 prompt fidelity", prompt_fidelity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = BTreeSet::new();
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let res = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        match res {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{}]", secs(took)),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why} [{}]", secs(took));
            }
        }
        ran.insert(name);
    }
    let summary: BTreeMap<&str, usize> = [("ran", ran.len()), ("failed", failed)].into_iter().collect();
    println!("acceptance: {summary:?}");
    if failed > 0 {
        std::process::exit(1);
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

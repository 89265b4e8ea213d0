//! Command-line entry point. `nestbrowse --help` lists the subcommands.
//!
//! Exit codes: 0 success, 1 episode failures, 2 usage or configuration errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::backend::{open_session, BackendKind, ScriptlessSession, Session, SessionConfig, CDP_URL_ENV};
use crate::inner_loop::InnerConfig;
use crate::metrics::{build_report, pass_at_1, ExtractionJudge, PlantedFactJudge};
use crate::outer_loop::{run_episode, EpisodeConfig, Limits, Termination, Trajectory};
use crate::pipeline::{
    emit_samples, filter_batch, filter_stats, read_jsonl, write_jsonl, EmitOptions, GoldAnswer, Judge, JsonlWriter,
    RejectionReport, RemoteJudge, SandboxJudge,
};
use crate::policy::{Policy, RemoteConfig, RemotePolicy, LLM_MODEL_ENV, LLM_URL_ENV};
use crate::sandbox::{generate_site, serve, OracleSolver, SandboxSearch, SiteManifest, SiteParams};
use crate::tokens::Counter;
use crate::toolkit::{HttpSearch, NoSearch, SearchProvider};

pub const EXIT_OK: i32 = 0;
pub const EXIT_EPISODES_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "nestbrowse", version, about = "Nested browser-use agent runtime")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes and write trajectories.
    Run(RunArgs),
    /// Run every task of a sandbox manifest and judge the answers.
    Eval(EvalArgs),
    #[command(subcommand)]
    Sandbox(SandboxCommand),
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Metrics over stored trajectories.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file (see README for the keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A single question to answer.
    #[arg(long, conflicts_with = "task_file")]
    pub question: Option<String>,
    /// JSONL of {"task_id", "question"} objects.
    #[arg(long)]
    pub task_file: Option<PathBuf>,
    /// Only run these manifest tasks.
    #[arg(long = "task-id")]
    pub task_ids: Vec<String>,
    /// Sandbox manifest (tasks, oracle plans, in-process pages).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// live | static | sandbox
    #[arg(long)]
    pub backend: Option<String>,
    /// DevTools endpoint (live) or sandbox base URL / manifest path.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// oracle | remote
    #[arg(long)]
    pub policy: Option<String>,
    #[arg(long)]
    pub llm_url: Option<String>,
    #[arg(long)]
    pub llm_model: Option<String>,
    #[arg(long)]
    pub max_calls: Option<usize>,
    #[arg(long)]
    pub max_context: Option<u64>,
    #[arg(long)]
    pub segment_budget: Option<u64>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Gold answers JSONL (defaults to the manifest's).
    #[arg(long)]
    pub gold: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SandboxCommand {
    /// Write a generated site manifest.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        n_pages: usize,
        #[arg(long, default_value_t = 3)]
        n_dynamic: usize,
        #[arg(long, default_value_t = 1)]
        n_forms: usize,
        #[arg(long, default_value_t = 1200)]
        long_page_tokens: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a manifest over HTTP on 127.0.0.1.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    /// Apply the rejection criteria.
    Filter {
        #[arg(long)]
        trajectories: PathBuf,
        /// Gold answers JSONL.
        #[arg(long, required_unless_present = "manifest")]
        gold: Option<PathBuf>,
        /// Take gold answers from a sandbox manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// sandbox | remote
        #[arg(long, default_value = "sandbox")]
        judge: String,
        #[arg(long)]
        out: PathBuf,
        /// Retry queue for trajectories the judge could not grade.
        #[arg(long)]
        held: Option<PathBuf>,
    },
    /// Emit training samples for accepted trajectories.
    Emit {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        reports: Option<PathBuf>,
        /// Emit without filter reports (every trajectory).
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1.0)]
        lambda_out: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_in: f64,
        #[arg(long)]
        supervise_tool_responses: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Counts per violation class.
    Stats {
        #[arg(long)]
        reports: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Enables planted-fact extraction scores.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write the JSON document here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also print the plain-text table.
    #[arg(long)]
    pub text: bool,
    /// Write the context curve as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Usage or configuration problem (exit 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn usage(e: impl std::fmt::Display) -> UsageError {
    UsageError(e.to_string())
}

/// Keys accepted in the config file; every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub backend: Option<String>,
    pub endpoint: Option<String>,
    pub manifest: Option<PathBuf>,
    pub policy: Option<String>,
    pub llm_url: Option<String>,
    pub llm_model: Option<String>,
    pub max_calls: Option<usize>,
    pub max_context: Option<u64>,
    pub segment_budget: Option<u64>,
    pub concurrency: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Oracle,
    Remote,
}

/// Resolved settings for `run` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub manifest: Option<PathBuf>,
    pub policy: PolicyKind,
    pub llm_url: Option<String>,
    pub llm_model: Option<String>,
    pub max_calls: usize,
    pub max_context: u64,
    pub segment_budget: u64,
    pub concurrency: usize,
    pub out: PathBuf,
    pub seed: u64,
}

pub const ENV_BACKEND: &str = "NESTBROWSE_BACKEND";
pub const ENV_ENDPOINT: &str = "NESTBROWSE_ENDPOINT";
pub const ENV_MANIFEST: &str = "NESTBROWSE_MANIFEST";
pub const ENV_POLICY: &str = "NESTBROWSE_POLICY";
pub const ENV_MAX_CALLS: &str = "NESTBROWSE_MAX_CALLS";
pub const ENV_MAX_CONTEXT: &str = "NESTBROWSE_MAX_CONTEXT";
pub const ENV_SEGMENT_BUDGET: &str = "NESTBROWSE_SEGMENT_BUDGET";
pub const ENV_CONCURRENCY: &str = "NESTBROWSE_CONCURRENCY";
pub const ENV_OUT: &str = "NESTBROWSE_OUT";
pub const ENV_SEED: &str = "NESTBROWSE_SEED";

fn env_parse<T: std::str::FromStr>(env: &dyn Fn(&str) -> Option<String>, key: &str) -> Result<Option<T>, UsageError>
where
    T::Err: std::fmt::Display,
{
    env(key)
        .map(|v| v.parse::<T>().map_err(|e| usage(format!("{key}={v:?}: {e}"))))
        .transpose()
}

fn positive<T: PartialOrd + Default + std::fmt::Display>(name: &str, v: T) -> Result<T, UsageError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(usage(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    /// Layering: flags, then environment, then config file, then defaults.
    pub fn resolve(flags: &RunArgs, env: &dyn Fn(&str) -> Option<String>, file: &FileConfig) -> Result<Self, UsageError> {
        let backend_name = flags
            .backend
            .clone()
            .or_else(|| env(ENV_BACKEND))
            .or_else(|| file.backend.clone())
            .unwrap_or_else(|| "sandbox".into());
        let backend: BackendKind = backend_name.parse().map_err(usage)?;
        let endpoint_env = match backend {
            BackendKind::Live => env(CDP_URL_ENV).or_else(|| env(ENV_ENDPOINT)),
            _ => env(ENV_ENDPOINT),
        };
        let policy_name = flags
            .policy
            .clone()
            .or_else(|| env(ENV_POLICY))
            .or_else(|| file.policy.clone())
            .unwrap_or_else(|| "oracle".into());
        let policy = match policy_name.as_str() {
            "oracle" => PolicyKind::Oracle,
            "remote" => PolicyKind::Remote,
            other => return Err(usage(format!("unknown policy {other:?} (expected oracle or remote)"))),
        };
        let cfg = RunConfig {
            backend,
            endpoint: flags.endpoint.clone().or(endpoint_env).or_else(|| file.endpoint.clone()),
            manifest: flags.manifest.clone().or_else(|| env(ENV_MANIFEST).map(PathBuf::from)).or_else(|| file.manifest.clone()),
            policy,
            llm_url: flags.llm_url.clone().or_else(|| env(LLM_URL_ENV)).or_else(|| file.llm_url.clone()),
            llm_model: flags.llm_model.clone().or_else(|| env(LLM_MODEL_ENV)).or_else(|| file.llm_model.clone()),
            max_calls: positive(
                "max-calls",
                flags.max_calls.or(env_parse(env, ENV_MAX_CALLS)?).or(file.max_calls).unwrap_or(Limits::default().call_limit),
            )?,
            max_context: positive(
                "max-context",
                flags
                    .max_context
                    .or(env_parse(env, ENV_MAX_CONTEXT)?)
                    .or(file.max_context)
                    .unwrap_or(Limits::default().token_limit),
            )?,
            segment_budget: positive(
                "segment-budget",
                flags
                    .segment_budget
                    .or(env_parse(env, ENV_SEGMENT_BUDGET)?)
                    .or(file.segment_budget)
                    .unwrap_or(InnerConfig::default().segment_budget),
            )?,
            concurrency: positive(
                "concurrency",
                flags.concurrency.or(env_parse(env, ENV_CONCURRENCY)?).or(file.concurrency).unwrap_or(1),
            )?,
            out: flags
                .out
                .clone()
                .or_else(|| env(ENV_OUT).map(PathBuf::from))
                .or_else(|| file.out.clone())
                .unwrap_or_else(|| PathBuf::from("runs")),
            seed: flags.seed.or(env_parse(env, ENV_SEED)?).or(file.seed).unwrap_or(0),
        };
        Ok(cfg)
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            limits: Limits {
                call_limit: self.max_calls,
                token_limit: self.max_context,
                ..Limits::default()
            },
            inner: InnerConfig {
                segment_budget: self.segment_budget,
                ..InnerConfig::default()
            },
            ..EpisodeConfig::default()
        }
    }
}

/// One question to run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub question: String,
}

enum SessionSource {
    Manifest(Arc<SiteManifest>),
    Config(SessionConfig),
}

/// Everything needed to start episodes, checked before any of them runs.
struct Prepared {
    tasks: Vec<TaskSpec>,
    manifest: Option<Arc<SiteManifest>>,
    sessions: SessionSource,
    search: Box<dyn SearchProvider>,
    policy: Box<dyn Policy>,
    episode: EpisodeConfig,
}

fn prepare(cfg: &RunConfig, args: &RunArgs) -> Result<Prepared, UsageError> {
    let endpoint_is_url = cfg.endpoint.as_deref().is_some_and(|e| e.starts_with("http://") || e.starts_with("https://"));
    let manifest_path = cfg
        .manifest
        .clone()
        .or_else(|| (cfg.backend == BackendKind::Sandbox && !endpoint_is_url).then(|| cfg.endpoint.clone().map(PathBuf::from)).flatten());
    let manifest = match &manifest_path {
        Some(p) => Some(Arc::new(SiteManifest::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?)),
        None if cfg.backend == BackendKind::Sandbox && !endpoint_is_url => {
            Some(Arc::new(generate_site(cfg.seed, SiteParams::default()).map_err(usage)?))
        }
        None => None,
    };

    let tasks: Vec<TaskSpec> = if let Some(q) = &args.question {
        vec![TaskSpec { task_id: "q0001".into(), question: q.clone() }]
    } else if let Some(f) = &args.task_file {
        read_jsonl(f).map_err(usage)?
    } else if let Some(m) = &manifest {
        m.tasks
            .iter()
            .filter(|t| args.task_ids.is_empty() || args.task_ids.contains(&t.task_id))
            .map(|t| TaskSpec { task_id: t.task_id.clone(), question: t.question.clone() })
            .collect()
    } else {
        return Err(usage("nothing to run: give --question, --task-file or a sandbox manifest"));
    };
    if tasks.is_empty() {
        return Err(usage("no tasks selected"));
    }

    let sessions = match (cfg.backend, &manifest, endpoint_is_url) {
        (BackendKind::Sandbox, Some(m), false) => SessionSource::Manifest(m.clone()),
        _ => {
            let sc = SessionConfig::new(cfg.backend, cfg.endpoint.clone());
            sc.validate().map_err(usage)?;
            SessionSource::Config(sc)
        }
    };

    let search: Box<dyn SearchProvider> = match (&sessions, cfg.backend) {
        (SessionSource::Manifest(m), _) => Box::new(SandboxSearch::new(m.clone())),
        (SessionSource::Config(_), BackendKind::Sandbox) => {
            let base = Url::parse(cfg.endpoint.as_deref().unwrap_or_default()).map_err(usage)?;
            let url = base.join(crate::sandbox::SEARCH_PATH).map_err(usage)?;
            Box::new(HttpSearch::new(url.to_string(), None).map_err(usage)?)
        }
        _ => match HttpSearch::from_env() {
            Some(s) => Box::new(s.map_err(usage)?),
            None => Box::new(NoSearch),
        },
    };

    let policy: Box<dyn Policy> = match cfg.policy {
        PolicyKind::Oracle => {
            let m = manifest.clone().ok_or_else(|| usage("the oracle policy needs a sandbox manifest"))?;
            if let Some(t) = tasks.iter().find(|t| !m.tasks.iter().any(|d| d.question == t.question)) {
                return Err(usage(format!("the oracle policy only answers manifest tasks; {} is not one", t.task_id)));
            }
            Box::new(OracleSolver::new(m))
        }
        PolicyKind::Remote => {
            let mut rc = RemoteConfig::from_env().unwrap_or_else(|| RemoteConfig::new("", ""));
            if let Some(u) = &cfg.llm_url {
                rc.url = u.clone();
            }
            if let Some(m) = &cfg.llm_model {
                rc.model = m.clone();
            }
            if rc.url.is_empty() {
                return Err(usage(format!("the remote policy needs --llm-url or {LLM_URL_ENV}")));
            }
            Box::new(RemotePolicy::new(rc).map_err(usage)?)
        }
    };

    Ok(Prepared {
        tasks,
        manifest,
        sessions,
        search,
        policy,
        episode: cfg.episode_config(),
    })
}

/// Run summary written next to the trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub episodes: usize,
    pub terminations: BTreeMap<String, usize>,
    pub aborted: usize,
    /// Largest number of sessions open at the same time.
    pub max_concurrent_sessions: usize,
}

/// Tracks how many sessions are open at once.
#[derive(Default)]
struct Gauge {
    open: AtomicUsize,
    peak: AtomicUsize,
}

impl Gauge {
    fn enter(&self) {
        let now = self.open.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }
    fn leave(&self) {
        self.open.fetch_sub(1, Ordering::SeqCst);
    }
}

fn aborted_trajectory(task: &TaskSpec, cfg: &EpisodeConfig, reason: String) -> Trajectory {
    Trajectory {
        task_id: task.task_id.clone(),
        question: task.question.clone(),
        system_prompt: crate::outer_loop::build_system_prompt(&crate::toolkit::tool_schemas()),
        turns: Vec::new(),
        extraction_records: Vec::new(),
        final_answer: None,
        termination: Termination::Aborted,
        stats: Default::default(),
        nudge_at: None,
        call_errors: Vec::new(),
        format_error: None,
        abort_reason: Some(reason),
        token_limit: cfg.limits.token_limit,
        call_limit: cfg.limits.call_limit,
    }
}

/// Run all episodes with at most `concurrency` open sessions, writing each
/// trajectory to `writer` in input order.
fn run_all(p: &Prepared, concurrency: usize, writer: &JsonlWriter) -> Result<(Vec<Trajectory>, usize), UsageError> {
    let next = AtomicUsize::new(0);
    let gauge = Gauge::default();
    let (tx, rx) = mpsc::channel::<(usize, Trajectory)>();
    let n = p.tasks.len();
    let mut out: Vec<Option<Trajectory>> = vec![None; n];
    let mut write_err = None;
    std::thread::scope(|s| {
        for _ in 0..concurrency.min(n) {
            let tx = tx.clone();
            let (next, gauge) = (&next, &gauge);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let task = &p.tasks[i];
                gauge.enter();
                let session: Result<Box<dyn Session>, String> = match &p.sessions {
                    SessionSource::Manifest(m) => {
                        Ok(Box::new(ScriptlessSession::sandbox_manifest(m.clone(), p.episode.counter().clone())))
                    }
                    SessionSource::Config(c) => open_session(c, Counter::default()).map_err(|e| e.to_string()),
                };
                let traj = match session {
                    Ok(mut session) => {
                        run_episode(&task.task_id, &task.question, &p.policy, session.as_mut(), p.search.as_ref(), &p.episode)
                    }
                    Err(e) => aborted_trajectory(task, &p.episode, e),
                };
                gauge.leave();
                tracing::info!(task = %task.task_id, termination = ?traj.termination, "episode finished");
                if tx.send((i, traj)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // reorder buffer: write as soon as the next index is available
        let mut cursor = 0;
        for (i, t) in rx {
            out[i] = Some(t);
            while cursor < n {
                let Some(t) = &out[cursor] else { break };
                if write_err.is_none() {
                    if let Err(e) = writer.write(t) {
                        write_err = Some(e);
                    }
                }
                cursor += 1;
            }
        }
    });
    if let Some(e) = write_err {
        return Err(usage(e));
    }
    writer.flush().map_err(usage)?;
    Ok((out.into_iter().map(|t| t.expect("every episode reports")).collect(), gauge.peak.load(Ordering::SeqCst)))
}

fn summarize(trajs: &[Trajectory], peak: usize) -> RunSummary {
    let mut terminations = BTreeMap::new();
    for t in trajs {
        let name = serde_json::to_value(t.termination).expect("termination").as_str().unwrap_or_default().to_string();
        *terminations.entry(name).or_insert(0) += 1;
    }
    RunSummary {
        episodes: trajs.len(),
        aborted: trajs.iter().filter(|t| t.termination == Termination::Aborted).count(),
        terminations,
        max_concurrent_sessions: peak,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), UsageError> {
    std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn cmd_run(args: &RunArgs, env: &dyn Fn(&str) -> Option<String>) -> Result<(i32, Vec<Trajectory>, Prepared, RunConfig), UsageError> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let cfg = RunConfig::resolve(args, env, &file)?;
    let prepared = prepare(&cfg, args)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| usage(format!("{}: {e}", cfg.out.display())))?;
    let writer = JsonlWriter::create(&cfg.out.join("trajectories.jsonl")).map_err(usage)?;
    let (trajs, peak) = run_all(&prepared, cfg.concurrency, &writer)?;
    let summary = summarize(&trajs, peak);
    write_file(&cfg.out.join("summary.json"), &(serde_json::to_string_pretty(&summary).expect("summary") + "\n"))?;
    let code = if summary.aborted > 0 { EXIT_EPISODES_FAILED } else { EXIT_OK };
    Ok((code, trajs, prepared, cfg))
}

fn cmd_eval(args: &EvalArgs, env: &dyn Fn(&str) -> Option<String>, stdout: &mut dyn std::io::Write) -> Result<i32, UsageError> {
    let (code, trajs, prepared, cfg) = cmd_run(&args.run, env)?;
    let golds: BTreeMap<String, GoldAnswer> = match (&args.gold, &prepared.manifest) {
        (Some(p), _) => read_jsonl::<GoldAnswer>(p).map_err(usage)?.into_iter().map(|g| (g.task_id.clone(), g)).collect(),
        (None, Some(m)) => m.tasks.iter().map(|t| (t.task_id.clone(), t.gold.clone())).collect(),
        (None, None) => return Err(usage("eval needs --gold or a sandbox manifest")),
    };
    let outcome = filter_batch(&trajs, &golds, &SandboxJudge);
    write_jsonl(&cfg.out.join("reports.jsonl"), &outcome.reports).map_err(usage)?;
    let verdicts: Vec<bool> = outcome
        .reports
        .iter()
        .map(|r| r.judge_verdict.as_ref().is_some_and(|v| v.correct))
        .collect();
    let p = pass_at_1(&verdicts);
    let _ = writeln!(stdout, "{}", serde_json::json!({ "episodes": trajs.len(), "graded": verdicts.len(), "pass_at_1": p }));
    Ok(code)
}

fn cmd_sandbox(cmd: &SandboxCommand, stdout: &mut dyn std::io::Write) -> Result<i32, UsageError> {
    match cmd {
        SandboxCommand::Generate { seed, n_pages, n_dynamic, n_forms, long_page_tokens, out } => {
            let params = SiteParams {
                n_pages: *n_pages,
                n_dynamic: *n_dynamic,
                n_forms: *n_forms,
                long_page_tokens: *long_page_tokens,
            };
            let m = generate_site(*seed, params).map_err(usage)?;
            m.save(out).map_err(usage)?;
            let _ = writeln!(stdout, "wrote {} ({} pages, {} tasks)", out.display(), m.pages.len(), m.tasks.len());
            Ok(EXIT_OK)
        }
        SandboxCommand::Serve { manifest, port } => {
            let m = SiteManifest::load(manifest).map_err(usage)?;
            let server = serve(Arc::new(m), *port).map_err(usage)?;
            let _ = writeln!(stdout, "serving on {}", server.base_url());
            let _ = stdout.flush();
            server.join();
            Ok(EXIT_OK)
        }
    }
}

fn need(path: &Path) -> Result<(), UsageError> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("missing input {}", path.display())))
    }
}

fn cmd_pipeline(cmd: &PipelineCommand, stdout: &mut dyn std::io::Write) -> Result<i32, UsageError> {
    match cmd {
        PipelineCommand::Filter { trajectories, gold, manifest, judge, out, held } => {
            need(trajectories)?;
            let trajs: Vec<Trajectory> = read_jsonl(trajectories).map_err(usage)?;
            let golds: Vec<GoldAnswer> = match (gold, manifest) {
                (Some(g), _) => {
                    need(g)?;
                    read_jsonl(g).map_err(usage)?
                }
                (None, Some(m)) => SiteManifest::load(m).map_err(usage)?.tasks.into_iter().map(|t| t.gold).collect(),
                (None, None) => return Err(usage("filter needs --gold or --manifest")),
            };
            let golds = golds.into_iter().map(|g| (g.task_id.clone(), g)).collect();
            let judge: Box<dyn Judge> = match judge.as_str() {
                "sandbox" => Box::new(SandboxJudge),
                "remote" => Box::new(
                    RemoteJudge::from_env()
                        .ok_or_else(|| usage(format!("--judge remote needs {}", crate::pipeline::JUDGE_URL_ENV)))?
                        .map_err(usage)?,
                ),
                other => return Err(usage(format!("unknown judge {other:?}"))),
            };
            let outcome = filter_batch(&trajs, &golds, judge.as_ref());
            write_jsonl(out, &outcome.reports).map_err(usage)?;
            if !outcome.held.is_empty() {
                let held_path = held.clone().unwrap_or_else(|| out.with_extension("held.jsonl"));
                let w = JsonlWriter::append(&held_path).map_err(usage)?;
                for (t, reason) in &outcome.held {
                    tracing::warn!(task = %t.task_id, %reason, "trajectory held");
                    w.write(t).map_err(usage)?;
                }
                w.flush().map_err(usage)?;
            }
            let stats = filter_stats(&outcome.reports);
            let _ = writeln!(
                stdout,
                "{}",
                serde_json::json!({ "reports": outcome.reports.len(), "accepted": stats.accepted, "held": outcome.held.len() })
            );
            Ok(EXIT_OK)
        }
        PipelineCommand::Emit { trajectories, reports, force, lambda_out, lambda_in, supervise_tool_responses, out } => {
            need(trajectories)?;
            let trajs: Vec<Trajectory> = read_jsonl(trajectories).map_err(usage)?;
            let accepted: Option<BTreeMap<String, bool>> = match reports {
                Some(r) => {
                    need(r)?;
                    let rs: Vec<RejectionReport> = read_jsonl(r).map_err(usage)?;
                    Some(rs.into_iter().map(|r| (r.task_id, r.accepted)).collect())
                }
                None if *force => None,
                None => return Err(usage("emit needs --reports from `pipeline filter` (or --force to emit unfiltered input)")),
            };
            let opts = EmitOptions {
                lambda_out: *lambda_out,
                lambda_in: *lambda_in,
                supervise_tool_responses: *supervise_tool_responses,
            };
            let w = JsonlWriter::create(out).map_err(usage)?;
            let mut n = 0;
            for t in &trajs {
                if let Some(acc) = &accepted {
                    if !acc.get(&t.task_id).copied().unwrap_or(false) {
                        continue;
                    }
                }
                for s in emit_samples(t, &opts).map_err(usage)? {
                    w.write(&s).map_err(usage)?;
                    n += 1;
                }
            }
            w.flush().map_err(usage)?;
            let _ = writeln!(stdout, "{}", serde_json::json!({ "samples": n }));
            Ok(EXIT_OK)
        }
        PipelineCommand::Stats { reports } => {
            need(reports)?;
            let rs: Vec<RejectionReport> = read_jsonl(reports).map_err(usage)?;
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&filter_stats(&rs)).expect("stats"));
            Ok(EXIT_OK)
        }
    }
}

fn cmd_report(a: &ReportArgs, stdout: &mut dyn std::io::Write) -> Result<i32, UsageError> {
    need(&a.trajectories)?;
    let trajs: Vec<Trajectory> = read_jsonl(&a.trajectories).map_err(usage)?;
    let reports: Option<Vec<RejectionReport>> = match &a.reports {
        Some(r) => {
            need(r)?;
            Some(read_jsonl(r).map_err(usage)?)
        }
        None => None,
    };
    let judge = match &a.manifest {
        Some(m) => Some(PlantedFactJudge::from_manifest(&SiteManifest::load(m).map_err(usage)?)),
        None => None,
    };
    let report = build_report(&trajs, reports.as_deref(), judge.as_ref().map(|j| j as &dyn ExtractionJudge)).map_err(usage)?;
    match &a.out {
        Some(p) => write_file(p, &(report.to_json() + "\n"))?,
        None => {
            let _ = writeln!(stdout, "{}", report.to_json());
        }
    }
    if a.text {
        let _ = write!(stdout, "{}", report.to_text());
    }
    if let Some(p) = &a.csv {
        write_file(p, &report.curve.to_csv())?;
    }
    Ok(EXIT_OK)
}

/// Run the CLI with explicit arguments, environment and output streams.
pub fn run_with(
    args: impl IntoIterator<Item = impl Into<std::ffi::OsString> + Clone>,
    env: &dyn Fn(&str) -> Option<String>,
    stdout: &mut dyn std::io::Write,
    stderr: &mut dyn std::io::Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, env).map(|(code, ..)| code),
        Command::Eval(a) => cmd_eval(a, env, stdout),
        Command::Sandbox(c) => cmd_sandbox(c, stdout),
        Command::Pipeline(c) => cmd_pipeline(c, stdout),
        Command::Report(a) => cmd_report(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}

/// Entry point used by the binary: real environment, real streams.
pub fn main_with_args(args: impl IntoIterator<Item = impl Into<std::ffi::OsString> + Clone>) -> i32 {
    let env = |k: &str| std::env::var(k).ok();
    run_with(args, &env, &mut std::io::stdout(), &mut std::io::stderr())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn precedence_flags_env_file_defaults() {
        let file = FileConfig { max_calls: Some(7), max_context: Some(5000), concurrency: Some(3), ..FileConfig::default() };
        let env = |k: &str| match k {
            ENV_MAX_CONTEXT => Some("6000".to_string()),
            ENV_CONCURRENCY => Some("5".to_string()),
            _ => None,
        };
        let flags = RunArgs { concurrency: Some(9), ..RunArgs::default() };
        let c = RunConfig::resolve(&flags, &env, &file).unwrap();
        assert_eq!(c.concurrency, 9); // flag
        assert_eq!(c.max_context, 6000); // env over file
        assert_eq!(c.max_calls, 7); // file over default
        assert_eq!(c.segment_budget, 16384); // default
        assert_eq!(c.backend, BackendKind::Sandbox);
    }

    #[test]
    fn zero_limits_rejected() {
        let flags = RunArgs { max_calls: Some(0), ..RunArgs::default() };
        assert!(RunConfig::resolve(&flags, &no_env, &FileConfig::default()).is_err());
        let env = |k: &str| (k == ENV_MAX_CONTEXT).then(|| "abc".to_string());
        assert!(RunConfig::resolve(&RunArgs::default(), &env, &FileConfig::default()).is_err());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"max_calls": 3, "bogus": 1}"#).is_err());
    }
}

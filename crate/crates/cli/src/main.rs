mod review;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use scenefix_core::config::BackendsConfig;
use scenefix_core::eval::{default_grid, generate_suite, run_ablations, EvalOptions, SuiteSummary};
use scenefix_core::orchestrator::{Engine, JobMode, JobOptions, JobRecord, JobStatus, Schedule};
use scenefix_core::prompts::PromptSet;
use scenefix_server::AppState;

#[derive(Parser)]
#[command(name = "scenefix", version, about = "Object-level correction of multi-object images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Mock,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    Serial,
    Parallel,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Serial => Schedule::Serial,
            ScheduleArg::Parallel => Schedule::Parallel,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Correct one image against a description.
    Run(RunArgs),
    /// Run the ablation grid over a synthetic suite and write a report.
    Eval(EvalArgs),
    /// Write a synthetic suite as PNGs and JSON.
    Scene(SceneArgs),
    /// Serve the job and review API.
    Serve(ServeArgs),
    /// Serve backends over the wire protocol.
    ServeBackends(ServeBackendsArgs),
}

#[derive(Parser)]
struct RunArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    prompt: String,
    /// Backend config: kind to "mock" or URL, plus mock knobs.
    #[arg(long)]
    backends: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Mock)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Parallel)]
    schedule: ScheduleArg,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    k_frac: Option<f64>,
    /// Park candidates and ask for a verdict on stdin.
    #[arg(long)]
    review: bool,
    /// Job directories are created here.
    #[arg(long, default_value = "scenefix-out")]
    out: PathBuf,
    /// Custom prompt templates, one `.txt` per template name.
    #[arg(long)]
    prompts: Option<PathBuf>,
}

#[derive(Parser)]
struct EvalArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "scenefix-eval")]
    out: PathBuf,
    /// Mock knobs shared by every configuration.
    #[arg(long)]
    backends: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    max_iters: usize,
    #[arg(long, default_value_t = 40)]
    steps: usize,
    /// Injected latency per backend call, for the timing rows.
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    /// Skip per-scene artifact directories.
    #[arg(long)]
    no_artifacts: bool,
}

#[derive(Parser)]
struct SceneArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "scenefix-scenes")]
    out: PathBuf,
}

#[derive(Parser)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long)]
    backends: Option<PathBuf>,
    /// Job directories live here; unfinished jobs are resumed at startup.
    #[arg(long, default_value = "scenefix-jobs")]
    root: PathBuf,
    #[arg(long)]
    prompts: Option<PathBuf>,
}

#[derive(Parser)]
struct ServeBackendsArgs {
    #[arg(long, default_value = "127.0.0.1:8090")]
    addr: SocketAddr,
    #[arg(long)]
    backends: Option<PathBuf>,
}

fn load_backends(path: Option<&Path>) -> Result<BackendsConfig> {
    match path {
        Some(p) => BackendsConfig::load(p).with_context(|| format!("reading backend config {}", p.display())),
        None => Ok(BackendsConfig::default()),
    }
}

fn load_prompts(path: Option<&Path>) -> Result<PromptSet> {
    match path {
        Some(p) => PromptSet::load_dir(p).with_context(|| format!("reading prompts from {}", p.display())),
        None => Ok(PromptSet::default()),
    }
}

fn run_backends(args: &RunArgs) -> Result<BackendsConfig> {
    let mut cfg = load_backends(args.backends.as_deref())?;
    match args.mode {
        Mode::Mock => {
            cfg.backends.clear();
            cfg.default = "mock".into();
        }
        Mode::Remote => {
            if args.backends.is_none() {
                bail!("--mode remote needs --backends");
            }
        }
    }
    Ok(cfg)
}

fn run_options(args: &RunArgs) -> JobOptions {
    let mut o = JobOptions {
        mode: if args.review { JobMode::Review } else { JobMode::Auto },
        schedule: args.schedule.into(),
        ..JobOptions::default()
    };
    if let Some(n) = args.max_iters {
        o.loop_cfg.max_iterations = n;
    }
    if let Some(t) = args.steps {
        o.refine.steps = t;
    }
    if let Some(k) = args.k_frac {
        o.refine.k_fraction = k;
    }
    o
}

fn exit_for(status: JobStatus) -> ExitCode {
    match status {
        JobStatus::Done => ExitCode::SUCCESS,
        JobStatus::PartiallyCorrected => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}

fn summary(rec: &JobRecord, dir: &Path) -> serde_json::Value {
    let refined = dir.join("refined.png");
    json!({
        "id": rec.id,
        "status": rec.status,
        "dir": dir,
        "output": refined.exists().then_some(refined),
        "failed_subtasks": rec.failed_subtasks(),
        "executor_calls": rec.executor_calls(),
        "timings_ms": rec.timings,
        "error": rec.error,
    })
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let png = std::fs::read(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let suite = run_backends(&args)?.suite()?;
    let engine = Engine::new(Arc::new(suite), load_prompts(args.prompts.as_deref())?, Some(args.out.clone()))?;
    let id = engine.submit(&png, &args.prompt, run_options(&args))?;
    let mut rec = engine.run(&id)?;
    if args.review {
        let stdin = std::io::stdin();
        rec = review::interact(&engine, &id, &args.out.join(&id), &mut stdin.lock(), &mut std::io::stderr())?;
    }
    let dir = args.out.join(&id);
    println!("{}", serde_json::to_string_pretty(&summary(&rec, &dir))?);
    if rec.status == JobStatus::AwaitingReview {
        eprintln!("job {id} is still parked for review; `scenefix serve --root {}` resumes it", args.out.display());
    }
    Ok(exit_for(rec.status))
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let suite = generate_suite(args.n, args.seed);
    let mut backends = load_backends(args.backends.as_deref())?;
    backends.backends.clear();
    backends.default = "mock".into();
    let opts = EvalOptions {
        backends,
        max_iterations: args.max_iters,
        steps: args.steps,
        artifacts: (!args.no_artifacts).then(|| args.out.clone()),
        ..EvalOptions::default()
    };
    let mut grid = default_grid();
    for c in &mut grid {
        c.latency_ms = args.latency_ms;
    }
    let report = run_ablations(&suite, &grid, &opts)?;
    report.write(&args.out)?;
    print!("{}", report.to_csv());
    eprintln!("report written to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_scene(args: SceneArgs) -> Result<ExitCode> {
    std::fs::create_dir_all(&args.out)?;
    let suite = generate_suite(args.n, args.seed);
    for s in &suite {
        let stem = format!("{:03}", s.index);
        std::fs::write(args.out.join(format!("{stem}.png")), s.image().to_png())?;
        std::fs::write(args.out.join(format!("{stem}.clean.png")), s.clean_image().to_png())?;
        std::fs::write(args.out.join(format!("{stem}.json")), serde_json::to_vec_pretty(s)?)?;
        println!("{stem}\t{}", s.description());
    }
    std::fs::write(
        args.out.join("summary.json"),
        serde_json::to_vec_pretty(&SuiteSummary::of(&suite))?,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

fn cmd_serve(args: ServeArgs) -> Result<ExitCode> {
    init_tracing();
    let suite = load_backends(args.backends.as_deref())?.suite()?;
    let engine = Engine::new(Arc::new(suite), load_prompts(args.prompts.as_deref())?, Some(args.root.clone()))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let app = AppState::new(Arc::new(engine));
        let resumed = app.resume_persisted(&args.root)?;
        if !resumed.is_empty() {
            eprintln!("resuming {} unfinished job(s)", resumed.len());
        }
        scenefix_server::serve(args.addr, scenefix_server::jobs::router(app)).await
    })?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve_backends(args: ServeBackendsArgs) -> Result<ExitCode> {
    init_tracing();
    let suite = load_backends(args.backends.as_deref())?.suite()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(scenefix_server::serve(
        args.addr,
        scenefix_server::hosting::router(Arc::new(suite)),
    ))?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Scene(a) => cmd_scene(a),
        Command::Serve(a) => cmd_serve(a),
        Command::ServeBackends(a) => cmd_serve_backends(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

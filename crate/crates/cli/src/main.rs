//! `tkgcast` command-line interface: dataset statistics, evaluation runs,
//! parameter sweeps and summary comparison.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tkgcast::evaluation::{Directions, EvalMode};
use tkgcast::history::{HistoryDirection, Scope};
use tkgcast::{BackendKind, PromptStyle};

use config::RunSpec;

#[derive(Parser)]
#[command(name = "tkgcast", version, about = "Temporal knowledge graph forecasting with in-context prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print dataset statistics as JSON.
    Stats {
        dataset: PathBuf,
        /// Raw time units per step (detected when omitted).
        #[arg(long)]
        interval: Option<u32>,
    },
    /// Evaluate one configuration, or a grid of them with --sweep.
    Run(Box<RunArgs>),
    /// Compare two summary files: per-metric deltas (a - b).
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Write the comparison as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// TOML config file with dotted keys (e.g. backend.kind).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// frequency | recency | mock | http-completion | http-chat
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API token.
    #[arg(long)]
    auth_env: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    max_inflight: Option<usize>,
    #[arg(long)]
    retries: Option<u32>,
    /// Mock backend script (JSON: fingerprint → [[token, logprob], ...]).
    #[arg(long)]
    script: Option<PathBuf>,
    /// History length (comma list with --sweep).
    #[arg(long, value_delimiter = ',')]
    history: Vec<usize>,
    /// entity | pair (comma list with --sweep).
    #[arg(long, value_delimiter = ',')]
    scope: Vec<Scope>,
    /// uni | bi (comma list with --sweep).
    #[arg(long, value_delimiter = ',')]
    hist_direction: Vec<HistoryDirection>,
    /// index | lexical (comma list with --sweep).
    #[arg(long, value_delimiter = ',')]
    style: Vec<PromptStyle>,
    /// single | multi
    #[arg(long)]
    mode: Option<EvalMode>,
    #[arg(long)]
    feedback_k: Option<usize>,
    /// tail | head | both
    #[arg(long)]
    directions: Option<Directions>,
    #[arg(long)]
    fallback_rank: Option<usize>,
    /// Remove timestamps from prompts.
    #[arg(long)]
    no_time: bool,
    /// Shuffle history lines (requires --no-time).
    #[arg(long)]
    shuffle_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    interval: Option<u32>,
    /// Output directory for results.jsonl and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run every combination of the listed history/scope/direction/style values.
    #[arg(long)]
    sweep: bool,
}

fn single<T: Copy>(values: &[T], flag: &str, sweep: bool) -> Result<Option<T>> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ if sweep => Ok(None),
        _ => bail!("--{flag} takes one value unless --sweep is given"),
    }
}

/// Defaults, then the config file, then explicit flags.
fn resolve(args: &RunArgs) -> Result<RunSpec> {
    let mut spec = RunSpec::default();
    if let Some(path) = &args.config {
        spec.apply_file(path)?;
    }
    if let Some(v) = &args.dataset {
        spec.dataset = v.clone();
    }
    if let Some(v) = args.backend {
        spec.backend.kind = v;
    }
    if let Some(v) = &args.endpoint {
        spec.backend.http.endpoint = v.clone();
    }
    if let Some(v) = &args.model {
        spec.backend.http.model = v.clone();
    }
    if let Some(v) = &args.auth_env {
        spec.backend.http.auth_env = Some(v.clone());
    }
    if let Some(v) = args.timeout_ms {
        spec.backend.http.timeout_ms = v;
    }
    if let Some(v) = args.max_inflight {
        spec.backend.http.max_inflight = v;
    }
    if let Some(v) = args.retries {
        spec.backend.http.retries = v;
    }
    if let Some(v) = &args.script {
        spec.backend.script = Some(v.clone());
    }
    if let Some(v) = single(&args.history, "history", args.sweep)? {
        spec.history.length = v;
    }
    if let Some(v) = single(&args.scope, "scope", args.sweep)? {
        spec.history.scope = v;
    }
    if let Some(v) = single(&args.hist_direction, "hist-direction", args.sweep)? {
        spec.history.direction = v;
    }
    if let Some(v) = single(&args.style, "style", args.sweep)? {
        spec.prompt.style = v;
    }
    if let Some(v) = args.mode {
        spec.eval.mode = v;
    }
    if let Some(v) = args.feedback_k {
        spec.eval.feedback_k = v;
    }
    if let Some(v) = args.directions {
        spec.eval.directions = v;
    }
    if let Some(v) = args.fallback_rank {
        spec.eval.fallback_rank = v;
    }
    if args.no_time {
        spec.prompt.include_time = false;
    }
    if let Some(v) = args.shuffle_seed {
        spec.prompt.shuffle_seed = Some(v);
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.interval {
        spec.interval = Some(v);
    }
    if let Some(v) = &args.out {
        spec.out = Some(v.clone());
    }
    Ok(spec)
}

fn or_base<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// One spec per grid point; each writes into its own subdirectory of `out`.
fn sweep_specs(args: &RunArgs, base: &RunSpec) -> Vec<(String, RunSpec)> {
    let mut specs = Vec::new();
    for &length in &or_base(&args.history, base.history.length) {
        for &scope in &or_base(&args.scope, base.history.scope) {
            for &direction in &or_base(&args.hist_direction, base.history.direction) {
                for &style in &or_base(&args.style, base.prompt.style) {
                    let name = format!("h{length}-{scope}-{direction}-{}", style_name(style));
                    let mut spec = base.clone();
                    spec.history.length = length;
                    spec.history.scope = scope;
                    spec.history.direction = direction;
                    spec.prompt.style = style;
                    spec.out = base.out.as_ref().map(|o| o.join(&name));
                    specs.push((name, spec));
                }
            }
        }
    }
    specs
}

fn style_name(style: PromptStyle) -> &'static str {
    match style {
        PromptStyle::Index => "index",
        PromptStyle::Lexical => "lexical",
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let base = resolve(args)?;
    if !args.sweep {
        let summary = commands::run_spec(&base)?;
        println!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(());
    }
    let specs = sweep_specs(args, &base);
    // fail fast on any invalid grid point before running the first one
    for (_, spec) in &specs {
        spec.validate()?;
        commands::build_backend(spec)?;
    }
    let mut rows = Vec::new();
    for (name, spec) in &specs {
        log::info!("sweep point {name}");
        let summary = commands::run_spec(spec)?;
        rows.push(serde_json::json!({"name": name, "summary": summary}));
    }
    let table = serde_json::Value::Array(rows);
    if let Some(out) = &base.out {
        write_json(&out.join("sweep.json"), &table)?;
    }
    println!("{}", serde_json::to_string_pretty(&table)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats { dataset, interval } => commands::stats(&dataset, interval).and_then(|s| {
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(())
        }),
        Command::Run(args) => cmd_run(&args),
        Command::Compare { a, b, out } => commands::compare(&a, &b).and_then(|cmp| {
            commands::print_compare_table(&cmp);
            if cmp["dataset_mismatch"].as_bool() == Some(true) {
                eprintln!(
                    "warning: comparing different datasets ({} vs {})",
                    cmp["dataset_a"], cmp["dataset_b"]
                );
            }
            if let Some(out) = out {
                write_json(&out, &cmp)?;
            }
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! `acpc`: generate traces, label them, train reuse predictors, simulate
//! replacement policies and tabulate the results.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acpc_core::cache::{events_to_csv, CacheConfig, Policy, ReusePredictor, Simulator};
use acpc_core::fsio::{read_to_string, write_atomic};
use acpc_core::harness::{
    compare_table, fan_out, loss_curve_csv, online_feedback_loop, run_policy, trace_id_of,
    Baselines, OnlineConfig,
};
use acpc_core::metrics::MetricsReport;
use acpc_core::predictor::{load_model, save_model, train_on_trace, AnyModel, TrainConfig};
use acpc_core::trace::{
    compute_reuse_distance, compute_reuse_labels, generate_trace, read_trace, write_trace,
    GenConfig,
};
use anyhow::Context;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acpc", version, about = "Cache pollution control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic decoding trace.
    Generate(GenerateArgs),
    /// Attach reuse labels and reuse distances to a trace.
    Label(LabelArgs),
    /// Train a reuse predictor on a labelled trace.
    Train(TrainArgs),
    /// Simulate the cache hierarchy under one policy.
    Simulate(SimulateArgs),
    /// Tabulate metrics files into a comparison table.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output trace (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LabelArgs {
    /// Input trace (CSV).
    #[arg(long)]
    trace: PathBuf,
    /// A record is labelled reused when its line recurs within this many
    /// accesses.
    #[arg(long, default_value_t = acpc_core::trace::DEFAULT_LABEL_WINDOW)]
    window: usize,
    /// Output trace (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Labelled trace (CSV).
    #[arg(long)]
    trace: PathBuf,
    /// Training configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output model (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Output loss curve (CSV).
    #[arg(long)]
    curve: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Input trace (CSV).
    #[arg(long)]
    trace: PathBuf,
    /// Replacement policy for L2: lru, random, srrip, mlp or parm.
    #[arg(long)]
    policy: String,
    /// Cache configuration (JSON).
    #[arg(long)]
    cache: PathBuf,
    /// Reuse predictor (JSON); required by mlp and parm.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Weight of the learned utility in the eviction priority.
    #[arg(long)]
    alpha: Option<f64>,
    /// Simulation seeds. With more than one, the output holds a list of
    /// reports in seed order.
    #[arg(long, num_args = 1.., default_values_t = [0u64])]
    seed: Vec<u64>,
    /// Output metrics (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Update the predictor online while simulating.
    #[arg(long)]
    online: bool,
    /// Training configuration for online updates (JSON).
    #[arg(long, requires = "online")]
    train_config: Option<PathBuf>,
    /// Online batching and label resolution settings (JSON).
    #[arg(long, requires = "online")]
    online_config: Option<PathBuf>,
    /// Output per-update online loss (CSV); single seed only.
    #[arg(long, requires = "online")]
    curve: Option<PathBuf>,
    /// Output per-access event log (CSV); single seed only.
    #[arg(long)]
    event_log: Option<PathBuf>,
    /// Seed runs executed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// Metrics files written by `simulate`.
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    /// Output table (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Final training loss shown for a model, as NAME=VALUE.
    #[arg(long = "final-loss", value_parser = parse_loss)]
    final_loss: Vec<(String, f64)>,
}

fn parse_loss(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got {s:?}"))?;
    let value: f64 = value.parse().map_err(|e| format!("{value:?}: {e}"))?;
    Ok((name.to_uppercase(), value))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = read_to_string(path)?;
    let value = serde_json::from_str(&text).map_err(acpc_core::Error::from)?;
    Ok(value)
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    acpc_core::Error::Config(msg.into()).into()
}

fn generate(args: GenerateArgs) -> anyhow::Result<()> {
    let mut cfg: GenConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let trace = generate_trace(&cfg)?;
    log::info!("generated {} accesses", trace.len());
    write_trace(&trace, &args.out)?;
    Ok(())
}

fn label(args: LabelArgs) -> anyhow::Result<()> {
    if args.window == 0 {
        return Err(config_error("--window must be at least 1"));
    }
    let mut trace = read_trace(&args.trace)?;
    compute_reuse_labels(&mut trace, args.window);
    compute_reuse_distance(&mut trace);
    let positives = trace.iter().filter(|r| r.label).count();
    log::info!("{positives} of {} accesses labelled reused", trace.len());
    write_trace(&trace, &args.out)?;
    Ok(())
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg: TrainConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let trace = read_trace(&args.trace)?;
    let out = train_on_trace(&trace, &cfg)?;
    log::info!(
        "trained {} epochs, best epoch {:?}, validation accuracy {:?}",
        out.loss_curve.len(),
        out.best_epoch,
        out.val_accuracy
    );
    save_model(&out.model, &args.model)?;
    write_atomic(&args.curve, &loss_curve_csv(&out.loss_curve)?)?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let policy: Policy = args.policy.parse()?;
    if policy.is_learned() && args.model.is_none() {
        return Err(config_error(format!("policy {policy} requires --model")));
    }
    if args.jobs == 0 {
        return Err(config_error("--jobs must be at least 1"));
    }
    let single = args.seed.len() == 1;
    if !single && (args.event_log.is_some() || args.curve.is_some()) {
        return Err(config_error(
            "--event-log and --curve need exactly one --seed",
        ));
    }

    let mut cache: CacheConfig = read_json(&args.cache)?;
    cache.policy = policy;
    if let Some(alpha) = args.alpha {
        cache.alpha = alpha;
    }
    cache.validate()?;
    let train_cfg: TrainConfig = match &args.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    let online_cfg: OnlineConfig = match &args.online_config {
        Some(p) => read_json(p)?,
        None => OnlineConfig::default(),
    };
    let model: Option<AnyModel> = match (&args.model, policy.is_learned()) {
        (Some(p), true) => Some(load_model(p)?),
        _ => None,
    };
    let trace = read_trace(&args.trace)?;
    let trace_id = trace_id_of(&args.trace);
    let baselines = Baselines::new();

    let runs = fan_out(&args.seed, args.jobs, |&seed| {
        if args.online && policy.is_learned() {
            let model = model.as_ref().expect("checked above");
            online_feedback_loop(
                &trace,
                &trace_id,
                model,
                &cache,
                &train_cfg,
                &online_cfg,
                seed,
                &baselines,
            )
            .map(|o| {
                log::info!("seed {seed}: online stats {:?}", o.stats);
                (o.result.report, o.loss_curve)
            })
        } else {
            run_policy(
                &trace,
                &trace_id,
                policy,
                &cache,
                model.as_ref(),
                seed,
                &baselines,
            )
            .map(|r| (r.report, Vec::new()))
        }
    });
    let runs = runs.into_iter().collect::<acpc_core::Result<Vec<_>>>()?;

    let json = if single {
        serde_json::to_string_pretty(&runs[0].0)
    } else {
        let reports: Vec<&MetricsReport> = runs.iter().map(|(r, _)| r).collect();
        serde_json::to_string_pretty(&reports)
    }
    .map_err(acpc_core::Error::from)?;
    write_atomic(&args.out, format!("{json}\n").as_bytes())?;

    if let Some(path) = &args.curve {
        write_atomic(path, &loss_curve_csv(&runs[0].1)?)?;
    }
    if let Some(path) = &args.event_log {
        let predictor = model.as_ref().map(|m| m as &dyn ReusePredictor);
        let mut sim = Simulator::new(&cache, args.seed[0])?.with_event_log();
        for record in &trace {
            sim.access(record, predictor)?;
        }
        write_atomic(path, &events_to_csv(&sim.take_events())?)?;
    }
    Ok(())
}

/// A metrics file holds one report or a list of them.
fn read_reports(path: &Path) -> anyhow::Result<Vec<MetricsReport>> {
    let value: serde_json::Value = read_json(path)?;
    let reports = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|r| vec![r])
    }
    .map_err(acpc_core::Error::from)
    .with_context(|| format!("reading {}", path.display()))?;
    Ok(reports)
}

fn compare(args: CompareArgs) -> anyhow::Result<()> {
    let mut reports = Vec::new();
    for path in &args.inputs {
        reports.extend(read_reports(path)?);
    }
    let losses: HashMap<String, f64> = args.final_loss.into_iter().collect();
    let table = compare_table(&reports, &losses)?;
    write_atomic(&args.out, &table.to_csv()?)?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> (u8, &'static str) {
    match err.downcast_ref::<acpc_core::Error>() {
        Some(acpc_core::Error::Invariant(_)) => (3, "invariant"),
        Some(e) => (2, e.category()),
        None => (3, "internal"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("ACPC_LOG"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let (first, rest) = rendered.split_once('\n').unwrap_or((&rendered, ""));
            eprintln!("ERROR:usage: {}", first.trim_start_matches("error: "));
            eprint!("{rest}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Label(a) => label(a),
        Command::Train(a) => train(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, category) = exit_code(&err);
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("ERROR:{category}: {msg}");
            ExitCode::from(code)
        }
    }
}

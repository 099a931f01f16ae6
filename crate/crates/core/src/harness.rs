//! End-to-end experiment driver: policy runs with a shared LRU baseline,
//! the online feedback loop, and comparison tables.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheConfig, Policy, ReusePredictor, Simulator};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::metrics::{relative_gain, Counters, MetricsReport};
use crate::predictor::adam::{adam_step, AdamState};
use crate::predictor::model_io::AnyModel;
use crate::predictor::train::TrainConfig;
use crate::predictor::{Dropout, Example, ReuseModel};
use crate::rng::mix64;
use crate::trace::{AccessRecord, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    pub enabled: bool,
    /// Tokens per online update.
    pub batch_tokens: u64,
    /// Accesses after which a still-resident fill is labelled.
    pub resolution_window: u64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            batch_tokens: 256,
            resolution_window: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub traces: Vec<PathBuf>,
    pub policies: Vec<Policy>,
    pub cache: CacheConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub online: OnlineConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.traces.is_empty() {
            return Err(Error::Config("at least one trace is required".into()));
        }
        if self.online.batch_tokens == 0 || self.online.resolution_window == 0 {
            return Err(Error::Config(
                "online batch_tokens and resolution_window must be positive".into(),
            ));
        }
        self.cache.validate()?;
        self.train.validate()
    }
}

/// LRU runs keyed by trace, cache geometry and seed, so every policy run on
/// the same inputs is compared against one shared simulation.
#[derive(Debug, Default)]
pub struct Baselines {
    runs: Mutex<HashMap<String, Counters>>,
    simulations: AtomicUsize,
}

impl Baselines {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of LRU simulations actually executed.
    pub fn simulations(&self) -> usize {
        self.simulations.load(Ordering::SeqCst)
    }

    fn key(trace_id: &str, cache: &CacheConfig, seed: u64) -> Result<String> {
        let lru = CacheConfig {
            policy: Policy::Lru,
            ..cache.clone()
        };
        Ok(format!(
            "{trace_id}\u{0}{seed}\u{0}{}",
            serde_json::to_string(&lru)?
        ))
    }

    fn lookup(&self, key: &str) -> Option<Counters> {
        self.runs.lock().expect("baseline lock").get(key).cloned()
    }

    fn store(&self, key: String, counters: Counters) {
        self.runs
            .lock()
            .expect("baseline lock")
            .entry(key)
            .or_insert(counters);
    }

    /// The LRU counters for these inputs, simulating on first use.
    pub fn lru(
        &self,
        trace: &[AccessRecord],
        trace_id: &str,
        cache: &CacheConfig,
        seed: u64,
    ) -> Result<Counters> {
        let key = Self::key(trace_id, cache, seed)?;
        if let Some(c) = self.lookup(&key) {
            return Ok(c);
        }
        let lru = CacheConfig {
            policy: Policy::Lru,
            ..cache.clone()
        };
        let counters = Simulator::run(&lru, trace, None, seed)?;
        self.simulations.fetch_add(1, Ordering::SeqCst);
        self.store(key.clone(), counters);
        Ok(self.lookup(&key).expect("just stored"))
    }
}

/// Report plus the raw counters behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub report: MetricsReport,
    pub counters: Counters,
}

fn check_model(policy: Policy, model: Option<&AnyModel>) -> Result<Option<&AnyModel>> {
    match (policy, model) {
        (Policy::Parm, Some(m @ AnyModel::Tcn(_))) | (Policy::Mlp, Some(m @ AnyModel::Mlp(_))) => {
            Ok(Some(m))
        }
        (Policy::Parm | Policy::Mlp, Some(m)) => Err(Error::Config(format!(
            "policy {policy} cannot use a {} model",
            model_kind(m)
        ))),
        (Policy::Parm | Policy::Mlp, None) => {
            Err(Error::Config(format!("policy {policy} requires a model")))
        }
        _ => Ok(None),
    }
}

fn model_kind(m: &AnyModel) -> &'static str {
    match m {
        AnyModel::Tcn(_) => "tcn",
        AnyModel::Mlp(_) => "mlp",
    }
}

fn check_trace(trace: &[AccessRecord]) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::InvalidInput("trace is empty".into()));
    }
    Ok(())
}

/// Simulates `trace` under `policy` and computes every metric. The miss
/// penalty reduction is taken against the LRU run from `baselines`.
pub fn run_policy(
    trace: &[AccessRecord],
    trace_id: &str,
    policy: Policy,
    cache: &CacheConfig,
    model: Option<&AnyModel>,
    seed: u64,
    baselines: &Baselines,
) -> Result<RunResult> {
    check_trace(trace)?;
    let model = check_model(policy, model)?;
    let cfg = CacheConfig {
        policy,
        ..cache.clone()
    };
    cfg.validate()?;
    let lru = baselines.lru(trace, trace_id, &cfg, seed)?;
    let counters = if policy == Policy::Lru {
        lru.clone()
    } else {
        Simulator::run(&cfg, trace, model.map(|m| m as &dyn ReusePredictor), seed)?
    };
    counters.check_accounting()?;
    let report = MetricsReport::from_counters(&counters, &lru, policy.name(), trace_id, seed)?;
    Ok(RunResult { report, counters })
}

/// How every L2 fill of an online run was labelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineStats {
    pub fills: u64,
    pub resolved_at_eviction: u64,
    pub resolved_by_window: u64,
    /// Fills still unresolved when the trace ended.
    pub censored: u64,
    pub updates: u64,
    pub examples: u64,
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub result: RunResult,
    pub model: AnyModel,
    /// Train-mode loss of each update batch, before the update.
    pub loss_curve: Vec<f64>,
    pub stats: OnlineStats,
}

struct Pending {
    window: Vec<FeatureVector>,
    tag: u64,
}

/// Simulation with continual learning: each L2 fill is labelled 1 iff it
/// serves a demand hit before it is evicted or `resolution_window` accesses
/// pass, and after every `batch_tokens` tokens the resolved examples drive
/// one Adam step. Decisions always use the weights of the last completed
/// batch.
#[allow(clippy::too_many_arguments)]
pub fn online_feedback_loop(
    trace: &[AccessRecord],
    trace_id: &str,
    model: &AnyModel,
    cache: &CacheConfig,
    train: &TrainConfig,
    online: &OnlineConfig,
    seed: u64,
    baselines: &Baselines,
) -> Result<OnlineOutcome> {
    check_trace(trace)?;
    train.validate()?;
    if online.batch_tokens == 0 || online.resolution_window == 0 {
        return Err(Error::Config(
            "online batch_tokens and resolution_window must be positive".into(),
        ));
    }
    if !cache.policy.is_learned() {
        return Err(Error::Config(format!(
            "online learning needs a learned policy, got {}",
            cache.policy
        )));
    }
    check_model(cache.policy, Some(model))?;
    cache.validate()?;
    let lru = baselines.lru(trace, trace_id, cache, seed)?;
    let (counters, model, loss_curve, stats) = match model {
        AnyModel::Tcn(p) => {
            let (c, m, l, s) = online_generic(trace, p.clone(), cache, train, online, seed)?;
            (c, AnyModel::Tcn(m), l, s)
        }
        AnyModel::Mlp(p) => {
            let (c, m, l, s) = online_generic(trace, p.clone(), cache, train, online, seed)?;
            (c, AnyModel::Mlp(m), l, s)
        }
    };
    counters.check_accounting()?;
    let report =
        MetricsReport::from_counters(&counters, &lru, cache.policy.name(), trace_id, seed)?;
    Ok(OnlineOutcome {
        result: RunResult { report, counters },
        model,
        loss_curve,
        stats,
    })
}

fn online_generic<M: ReuseModel>(
    trace: &[AccessRecord],
    mut model: M,
    cache: &CacheConfig,
    train: &TrainConfig,
    online: &OnlineConfig,
    seed: u64,
) -> Result<(Counters, M, Vec<f64>, OnlineStats)> {
    let mut sim = Simulator::new(cache, seed)?.with_fill_capture();
    let mut adam = AdamState::new(&model);
    let mut pending: HashMap<u64, Pending> = HashMap::new();
    let mut order: VecDeque<(u64, u64)> = VecDeque::new();
    let mut batch: Vec<(Vec<FeatureVector>, f64)> = Vec::new();
    let mut losses = Vec::new();
    let mut stats = OnlineStats::default();
    let mut current_token = None;
    let mut completed_tokens = 0u64;

    let mut update = |model: &mut M,
                      adam: &mut AdamState,
                      batch: &mut Vec<(Vec<FeatureVector>, f64)>,
                      stats: &mut OnlineStats|
     -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let examples: Vec<Example<'_>> = batch
            .iter()
            .map(|(w, y)| Example {
                window: w,
                label: *y,
            })
            .collect();
        let dropout = Dropout {
            p: train.dropout_p,
            seed: mix64(train.seed ^ mix64(0x0411_0000 + stats.updates)),
        };
        let (loss, grad) = model.loss_and_grad(&examples, Some(dropout))?;
        adam_step(model, &grad, adam, train.learning_rate)?;
        losses.push(loss);
        stats.updates += 1;
        stats.examples += batch.len() as u64;
        batch.clear();
        Ok(())
    };

    for (i, record) in trace.iter().enumerate() {
        let now = i as u64;
        if current_token != Some(record.token_id) {
            if current_token.is_some() {
                completed_tokens += 1;
                if completed_tokens.is_multiple_of(online.batch_tokens) {
                    update(&mut model, &mut adam, &mut batch, &mut stats)?;
                }
            }
            current_token = Some(record.token_id);
        }

        let outcome = sim.access(record, Some(&model as &dyn ReusePredictor))?;
        for fill in sim.take_fills() {
            stats.fills += 1;
            order.push_back((now, fill.fill_id));
            pending.insert(
                fill.fill_id,
                Pending {
                    window: fill.window,
                    tag: fill.tag,
                },
            );
        }
        for victim in outcome.victim_info.iter().chain(&outcome.prefetch_victims) {
            if let Some(p) = pending.remove(&victim.fill_id) {
                stats.resolved_at_eviction += 1;
                batch.push((p.window, f64::from(u8::from(victim.was_ever_demand_hit))));
            }
        }
        while let Some(&(filled_at, fill_id)) = order.front() {
            if filled_at + online.resolution_window > now {
                break;
            }
            order.pop_front();
            if let Some(p) = pending.remove(&fill_id) {
                let line = sim
                    .l2()
                    .line(p.tag)
                    .filter(|l| l.fill_id == fill_id)
                    .ok_or_else(|| {
                        Error::Invariant(format!("unresolved fill {fill_id} is not resident"))
                    })?;
                stats.resolved_by_window += 1;
                batch.push((
                    p.window,
                    f64::from(u8::from(line.demand_hits_since_fill > 0)),
                ));
            }
        }
    }
    completed_tokens += 1;
    if completed_tokens.is_multiple_of(online.batch_tokens) {
        update(&mut model, &mut adam, &mut batch, &mut stats)?;
    }
    stats.censored = pending.len() as u64;
    if stats.fills != stats.resolved_at_eviction + stats.resolved_by_window + stats.censored {
        return Err(Error::Invariant(format!(
            "online example accounting: {stats:?}"
        )));
    }
    Ok((sim.finish(), model, losses, stats))
}

/// One row of a comparison table: seed-mean metrics of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub model: String,
    pub chr: f64,
    pub ppr: f64,
    pub mpr: f64,
    pub tgt: f64,
    pub final_loss: Option<f64>,
}

/// Relative improvements of one policy over another; `None` where the
/// baseline value is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedRow {
    pub candidate: String,
    pub baseline: String,
    pub pollution_reduction: Option<f64>,
    pub chr_gain: Option<f64>,
    pub mpr_gain: Option<f64>,
    pub tgt_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub trace_id: String,
    pub rows: Vec<ComparisonRow>,
    pub derived: Vec<DerivedRow>,
}

pub const COMPARISON_HEADER: [&str; 6] = ["Model", "CHR", "PPR", "MPR", "TGT", "FinalLoss"];

/// One row per policy (means over seeds, in order of first appearance),
/// followed by the improvements of each learned policy over the feed-forward
/// baseline and over LRU.
pub fn compare_table(
    reports: &[MetricsReport],
    final_losses: &HashMap<String, f64>,
) -> Result<ComparisonTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidInput("no reports to compare".into()))?;
    if let Some(r) = reports.iter().find(|r| r.trace_id != first.trace_id) {
        return Err(Error::InvalidInput(format!(
            "reports come from different traces ({} vs {})",
            first.trace_id, r.trace_id
        )));
    }
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        if !names.contains(&r.policy.as_str()) {
            names.push(&r.policy);
        }
    }
    let rows: Vec<ComparisonRow> = names
        .iter()
        .map(|&name| {
            let group: Vec<&MetricsReport> = reports.iter().filter(|r| r.policy == name).collect();
            let mean = |f: fn(&MetricsReport) -> f64| {
                group.iter().map(|r| f(r)).sum::<f64>() / group.len() as f64
            };
            ComparisonRow {
                model: name.to_string(),
                chr: mean(|r| r.chr_pct),
                ppr: mean(|r| r.ppr_pct),
                mpr: mean(|r| r.mpr_pct),
                tgt: mean(|r| r.tgt_tokens_per_mcycle),
                final_loss: final_losses.get(name).copied(),
            }
        })
        .collect();

    let find = |name: &str| rows.iter().find(|r| r.model == name);
    let mut derived = Vec::new();
    for cand in [Policy::Mlp.name(), Policy::Parm.name()] {
        let Some(c) = find(cand) else { continue };
        for base in [Policy::Mlp.name(), Policy::Lru.name()] {
            if base == cand {
                continue;
            }
            let Some(b) = find(base) else { continue };
            derived.push(DerivedRow {
                candidate: cand.to_string(),
                baseline: base.to_string(),
                pollution_reduction: relative_gain("PPR", b.ppr, c.ppr).ok().map(|g| -g),
                chr_gain: relative_gain("CHR", b.chr, c.chr).ok(),
                mpr_gain: relative_gain("MPR", b.mpr, c.mpr).ok(),
                tgt_gain: relative_gain("TGT", b.tgt, c.tgt).ok(),
            });
        }
    }
    Ok(ComparisonTable {
        trace_id: first.trace_id.clone(),
        rows,
        derived,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl ComparisonTable {
    /// Policy rows, then one row per derived comparison whose columns hold
    /// the relative changes in percent (PPR holds the pollution reduction).
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(COMPARISON_HEADER).map_err(fmt)?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                cell(Some(r.chr)),
                cell(Some(r.ppr)),
                cell(Some(r.mpr)),
                cell(Some(r.tgt)),
                cell(r.final_loss),
            ])
            .map_err(fmt)?;
        }
        for d in &self.derived {
            w.write_record([
                format!("{} vs {} (relative %)", d.candidate, d.baseline),
                cell(d.chr_gain),
                cell(d.pollution_reduction),
                cell(d.mpr_gain),
                cell(d.tgt_gain),
                String::new(),
            ])
            .map_err(fmt)?;
        }
        w.into_inner().map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn loss_curve_csv(losses: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["epoch_or_batch", "loss"]).map_err(fmt)?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{l:.16e}")])
            .map_err(fmt)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn report_to_json(report: &MetricsReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn report_file_name(report: &MetricsReport) -> String {
    format!(
        "{}_{}.metrics.json",
        report.policy.to_lowercase(),
        report.seed
    )
}

pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<PathBuf> {
    let path = dir.join(report_file_name(report));
    write_atomic(&path, report_to_json(report)?.as_bytes())?;
    Ok(path)
}

/// Runs `jobs` closures-worth of work on up to `jobs` threads, returning
/// results in input order.
pub fn fan_out<T, R, F>(items: &[T], jobs: usize, work: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&work).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = work(&items[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("result slot")
                .expect("every item ran")
        })
        .collect()
}

/// Models available to an experiment.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub tcn: Option<AnyModel>,
    pub mlp: Option<AnyModel>,
}

impl Models {
    pub fn for_policy(&self, policy: Policy) -> Option<&AnyModel> {
        match policy {
            Policy::Parm => self.tcn.as_ref(),
            Policy::Mlp => self.mlp.as_ref(),
            _ => None,
        }
    }
}

/// Runs every (trace, policy, seed) combination, writes one metrics file per
/// run into per-trace subdirectories plus a comparison table per trace, and
/// returns the reports in (trace, policy, seed) order.
///
/// Online runs also write their per-batch loss as
/// `<policy>_<seed>.loss_curve.csv`; the first of them in (policy, seed)
/// order is copied to `loss_curve.csv`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    models: &Models,
    jobs: usize,
) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    let baselines = Baselines::new();
    let mut all = Vec::new();
    for path in &cfg.traces {
        let trace = crate::trace::read_trace(path)?;
        let trace_id = trace_id_of(path);
        let tasks: Vec<(Policy, u64)> = cfg
            .policies
            .iter()
            .flat_map(|&p| cfg.seeds.iter().map(move |&s| (p, s)))
            .collect();
        let results = fan_out(&tasks, jobs, |&(policy, seed)| {
            let model = models.for_policy(policy);
            if cfg.online.enabled && policy.is_learned() {
                let model = model
                    .ok_or_else(|| Error::Config(format!("policy {policy} requires a model")))?;
                let cache = CacheConfig {
                    policy,
                    ..cfg.cache.clone()
                };
                online_feedback_loop(
                    &trace,
                    &trace_id,
                    model,
                    &cache,
                    &cfg.train,
                    &cfg.online,
                    seed,
                    &baselines,
                )
                .map(|o| (o.result.report, Some(o.loss_curve)))
            } else {
                run_policy(
                    &trace, &trace_id, policy, &cfg.cache, model, seed, &baselines,
                )
                .map(|r| (r.report, None))
            }
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let dir = cfg.output_dir.join(&trace_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut first_curve = true;
        for (r, curve) in &results {
            write_report(&dir, r)?;
            if let Some(curve) = curve {
                let csv = loss_curve_csv(curve)?;
                let stem = report_file_name(r).replace(".metrics.json", "");
                write_atomic(&dir.join(format!("{stem}.loss_curve.csv")), &csv)?;
                if first_curve {
                    write_atomic(&dir.join("loss_curve.csv"), &csv)?;
                    first_curve = false;
                }
            }
        }
        let reports: Vec<MetricsReport> = results.into_iter().map(|(r, _)| r).collect();
        let table = compare_table(&reports, &HashMap::new())?;
        write_atomic(&dir.join("comparison.csv"), &table.to_csv()?)?;
        all.extend(reports);
    }
    Ok(all)
}

/// Trace identifier derived from a path: the file stem.
pub fn trace_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

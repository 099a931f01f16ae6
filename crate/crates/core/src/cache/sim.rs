use std::collections::HashMap;

use super::level::{CacheLevel, Fill};
use super::policy::{prefetch_next_line, LineState, NEUTRAL_PREDICTION};
use super::{CacheConfig, Level, Policy};
use crate::error::{Error, Result};
use crate::metrics::{Counters, OccupancySample};
use crate::predictor::model_io::AnyModel;
use crate::predictor::train::MAX_WINDOW;
use crate::predictor::ReuseModel;
use crate::trace::{prefetch_candidate_features, AccessRecord, FeatureStream, FeatureVector};

/// Demand accesses between two occupancy samples.
pub const OCCUPANCY_INTERVAL: u64 = 1024;

pub const EVENT_HEADER: [&str; 5] = ["t", "level", "hit", "victim_tag", "victim_was_prefetch"];

/// Anything that scores a feature window; the last element is the access
/// being scored.
pub trait ReusePredictor {
    fn predict(&self, window: &[FeatureVector]) -> f64;
    fn context_len(&self) -> usize;
}

impl<M: ReuseModel> ReusePredictor for M {
    fn predict(&self, window: &[FeatureVector]) -> f64 {
        ReuseModel::predict(self, window)
    }

    fn context_len(&self) -> usize {
        ReuseModel::context_len(self)
    }
}

impl ReusePredictor for AnyModel {
    fn predict(&self, window: &[FeatureVector]) -> f64 {
        AnyModel::predict(self, window)
    }

    fn context_len(&self) -> usize {
        match self {
            AnyModel::Tcn(p) => ReuseModel::context_len(p),
            AnyModel::Mlp(p) => ReuseModel::context_len(p),
        }
    }
}

/// A line displaced from L2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VictimInfo {
    pub tag: u64,
    pub was_prefetch: bool,
    pub was_ever_demand_hit: bool,
    pub fill_id: u64,
}

impl VictimInfo {
    fn of(line: &LineState) -> Self {
        Self {
            tag: line.tag,
            was_prefetch: line.inserted_by_prefetch,
            was_ever_demand_hit: line.demand_hits_since_fill > 0,
            fill_id: line.fill_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessOutcome {
    pub hit_level: Level,
    pub latency: u64,
    /// L2 victim of the demand fill, if any.
    pub victim_info: Option<VictimInfo>,
    /// L2 victims of prefetch fills triggered by this access.
    pub prefetch_victims: Vec<VictimInfo>,
    /// `(line, fill id)` of every prefetch fill triggered by this access.
    pub prefetched: Vec<(u64, u64)>,
}

/// An L2 installation together with what the predictor saw.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Fill {
    pub fill_id: u64,
    pub tag: u64,
    pub prefetch: bool,
    pub y_hat: f64,
    pub window: Vec<FeatureVector>,
}

/// One row of the optional event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRow {
    pub t: u64,
    /// `L1`, `L2`, `L3` for demand lookups, `PF` for prefetch fills.
    pub level: &'static str,
    pub hit: bool,
    pub victim_tag: Option<u64>,
    pub victim_was_prefetch: Option<bool>,
}

pub fn events_to_csv(rows: &[EventRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EVENT_HEADER)
        .map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.level.to_string(),
            u8::from(r.hit).to_string(),
            r.victim_tag.map(|v| v.to_string()).unwrap_or_default(),
            r.victim_was_prefetch
                .map(|v| u8::from(v).to_string())
                .unwrap_or_default(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

/// Prediction for the current access: a fresh model evaluation on sampled
/// accesses, otherwise the last stored prediction for the line or the
/// neutral default.
pub fn predict_for_access(
    model: &dyn ReusePredictor,
    window: &[FeatureVector],
    sampled: bool,
    stored: Option<f64>,
) -> f64 {
    if sampled {
        model.predict(window)
    } else {
        stored.unwrap_or(NEUTRAL_PREDICTION)
    }
}

/// Hierarchy state plus all run bookkeeping.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: CacheConfig,
    l1: CacheLevel,
    l2: CacheLevel,
    l3: CacheLevel,
    features: FeatureStream,
    window: Vec<FeatureVector>,
    last_prediction: HashMap<u64, f64>,
    counters: Counters,
    demand_index: u64,
    next_fill_id: u64,
    last_token: Option<u64>,
    valid_samples: Vec<u64>,
    /// Difference array over sample indices of useful residencies.
    useful_diff: Vec<i64>,
    events: Option<Vec<EventRow>>,
    capture: bool,
    fills: Vec<L2Fill>,
}

impl Simulator {
    /// `seed` drives the Random policy only.
    pub fn new(config: &CacheConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let level = |g: &super::LevelGeometry, policy, stream| {
            CacheLevel::new(g.sets, g.ways, policy, config.alpha, seed ^ stream)
        };
        Ok(Self {
            config: config.clone(),
            l1: level(&config.l1, Policy::Lru, 1)?,
            l2: level(&config.l2, config.policy, 2)?,
            l3: level(&config.l3, Policy::Lru, 3)?,
            features: FeatureStream::new(),
            window: Vec::with_capacity(2 * MAX_WINDOW),
            last_prediction: HashMap::new(),
            counters: Counters::default(),
            demand_index: 0,
            next_fill_id: 0,
            last_token: None,
            valid_samples: Vec::new(),
            useful_diff: vec![0],
            events: None,
            capture: false,
            fills: Vec::new(),
        })
    }

    pub fn with_event_log(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    /// Records every L2 fill with its prediction window; drain with
    /// [`Simulator::take_fills`].
    pub fn with_fill_capture(mut self) -> Self {
        self.capture = true;
        self
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn l1(&self) -> &CacheLevel {
        &self.l1
    }

    pub fn l2(&self) -> &CacheLevel {
        &self.l2
    }

    pub fn l3(&self) -> &CacheLevel {
        &self.l3
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn take_fills(&mut self) -> Vec<L2Fill> {
        std::mem::take(&mut self.fills)
    }

    pub fn take_events(&mut self) -> Vec<EventRow> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn recent(&self, n: usize) -> &[FeatureVector] {
        &self.window[self.window.len().saturating_sub(n)..]
    }

    fn next_fill(&mut self, tag: u64, y_hat: f64, prefetch: bool) -> Fill {
        let id = self.next_fill_id;
        self.next_fill_id += 1;
        Fill {
            tag,
            y_hat,
            prefetch,
            fill_id: id,
            first_sample: self.valid_samples.len(),
        }
    }

    /// Final accounting for an L2 residency that ends.
    fn retire(&mut self, line: &LineState) {
        if line.inserted_by_prefetch && line.demand_hits_since_fill == 0 {
            self.counters.prefetch_unused_evictions += 1;
        }
        if line.demand_hits_since_fill > 0 {
            self.useful_diff[line.first_sample] += 1;
            self.useful_diff[self.valid_samples.len()] -= 1;
        }
    }

    fn sample_occupancy(&mut self) {
        self.valid_samples.push(self.l2.lines().count() as u64);
        self.useful_diff.push(0);
    }

    fn capture_fill(&mut self, fill: &Fill, window: Vec<FeatureVector>) {
        if self.capture {
            self.fills.push(L2Fill {
                fill_id: fill.fill_id,
                tag: fill.tag,
                prefetch: fill.prefetch,
                y_hat: fill.y_hat,
                window,
            });
        }
    }

    /// Simulates one demand access. Learned policies require `model`.
    pub fn access(
        &mut self,
        record: &AccessRecord,
        model: Option<&dyn ReusePredictor>,
    ) -> Result<AccessOutcome> {
        let learned = self.config.policy.is_learned();
        let model = match (learned, model) {
            (true, None) => {
                return Err(Error::Config(format!(
                    "policy {} needs a predictor",
                    self.config.policy
                )))
            }
            (true, m) => m,
            (false, _) => None,
        };

        let feature = self.features.next(record);
        if self.window.len() == 2 * MAX_WINDOW {
            self.window.drain(..MAX_WINDOW);
        }
        self.window.push(feature);
        let sampled = self.demand_index.is_multiple_of(self.config.stride);
        self.demand_index += 1;
        self.counters.demand_accesses += 1;
        if self.last_token != Some(record.token_id) {
            self.counters.tokens += 1;
            self.last_token = Some(record.token_id);
        }

        let tag = record.line_id;
        let mut rows: Vec<(&'static str, bool, Option<VictimInfo>)> = Vec::new();
        let mut victim_info = None;
        let mut prefetch_victims = Vec::new();
        let mut prefetched = Vec::new();

        let hit_level = if let Some(way) = self.l1.lookup(tag) {
            self.l1.demand_hit(tag, way, None);
            self.counters.l1.hits += 1;
            rows.push(("L1", true, None));
            Level::L1
        } else {
            self.counters.l1.misses += 1;
            let y_hat = match model {
                Some(m) => {
                    let stored = self.last_prediction.get(&tag).copied();
                    let y = predict_for_access(m, self.recent(MAX_WINDOW), sampled, stored);
                    if sampled {
                        self.last_prediction.insert(tag, y);
                    }
                    y
                }
                None => NEUTRAL_PREDICTION,
            };

            let level = if let Some(way) = self.l2.lookup(tag) {
                self.l2.demand_hit(tag, way, learned.then_some(y_hat));
                self.counters.l2.hits += 1;
                rows.push(("L2", true, None));
                Level::L2
            } else {
                self.counters.l2.misses += 1;
                let level = if let Some(way) = self.l3.lookup(tag) {
                    self.l3.demand_hit(tag, way, None);
                    self.counters.l3.hits += 1;
                    Level::L3
                } else {
                    self.counters.l3.misses += 1;
                    Level::Mem
                };

                let fill = self.next_fill(tag, y_hat, false);
                let (_, evicted) = self.l2.fill(fill);
                if let Some(line) = &evicted {
                    self.retire(line);
                    victim_info = Some(VictimInfo::of(line));
                }
                let ctx = model.map_or(1, |m| m.context_len());
                let captured = if self.capture {
                    self.recent(ctx).to_vec()
                } else {
                    Vec::new()
                };
                self.capture_fill(&fill, captured);
                rows.push(("L2", false, victim_info));

                let l3_victim = if level == Level::Mem {
                    let (_, ev) = self.l3.fill(Fill::demand(tag));
                    ev.map(|l| VictimInfo::of(&l))
                } else {
                    None
                };
                rows.push(("L3", level == Level::L3, l3_victim));

                if self.config.prefetcher.enabled {
                    self.prefetch(
                        record,
                        model,
                        sampled,
                        &mut prefetch_victims,
                        &mut prefetched,
                    );
                }
                level
            };

            let (_, ev) = self.l1.fill(Fill::demand(tag));
            let l1_victim = ev.map(|l| VictimInfo::of(&l));
            rows.insert(0, ("L1", false, l1_victim));
            level
        };

        let latency = self.config.latencies.of(hit_level);
        self.counters.total_cycles += latency;
        if matches!(hit_level, Level::L3 | Level::Mem) {
            self.counters.l2_miss_penalty_cycles += latency - self.config.latencies.l2_hit;
        }

        if let Some(log) = self.events.as_mut() {
            for (level, hit, victim) in rows {
                log.push(EventRow {
                    t: record.t,
                    level,
                    hit,
                    victim_tag: victim.map(|v| v.tag),
                    victim_was_prefetch: victim.map(|v| v.was_prefetch),
                });
            }
            for v in &prefetch_victims {
                log.push(EventRow {
                    t: record.t,
                    level: "PF",
                    hit: false,
                    victim_tag: Some(v.tag),
                    victim_was_prefetch: Some(v.was_prefetch),
                });
            }
        }

        if self
            .counters
            .demand_accesses
            .is_multiple_of(OCCUPANCY_INTERVAL)
        {
            self.sample_occupancy();
        }

        Ok(AccessOutcome {
            hit_level,
            latency,
            victim_info,
            prefetch_victims,
            prefetched,
        })
    }

    fn prefetch(
        &mut self,
        record: &AccessRecord,
        model: Option<&dyn ReusePredictor>,
        sampled: bool,
        victims: &mut Vec<VictimInfo>,
        prefetched: &mut Vec<(u64, u64)>,
    ) {
        for cand in prefetch_next_line(record.line_id, self.config.prefetcher.degree) {
            if self.l2.lookup(cand).is_some() {
                continue;
            }
            let mut window = Vec::new();
            let y_hat = match model {
                Some(m) => {
                    let ctx = m.context_len().max(1);
                    window.extend_from_slice(self.recent(ctx - 1));
                    window.push(prefetch_candidate_features(record, cand));
                    let stored = self.last_prediction.get(&cand).copied();
                    let y = predict_for_access(m, &window, sampled, stored);
                    if sampled {
                        self.last_prediction.insert(cand, y);
                    }
                    y
                }
                None => NEUTRAL_PREDICTION,
            };
            let fill = self.next_fill(cand, y_hat, true);
            if !self.l2.admits(&fill) {
                continue;
            }
            let (_, evicted) = self.l2.fill(fill);
            self.counters.prefetch_insertions += 1;
            if let Some(line) = &evicted {
                self.retire(line);
                victims.push(VictimInfo::of(line));
            }
            prefetched.push((cand, fill.fill_id));
            self.capture_fill(&fill, window);
        }
    }

    /// Closes the run: lines still resident are retired and the occupancy
    /// log is resolved. A trace shorter than one sampling interval gets a
    /// single sample at its end.
    pub fn finish(mut self) -> Counters {
        if self.valid_samples.is_empty() && self.counters.demand_accesses > 0 {
            self.sample_occupancy();
        }
        let resident: Vec<LineState> = self.l2.lines().cloned().collect();
        for line in &resident {
            self.retire(line);
        }
        let mut useful = 0i64;
        self.counters.occupancy = self
            .valid_samples
            .iter()
            .zip(&self.useful_diff)
            .map(|(&valid, &d)| {
                useful += d;
                OccupancySample {
                    useful_lines: useful as u64,
                    valid_lines: valid,
                }
            })
            .collect();
        self.counters
    }

    /// Runs a whole trace.
    pub fn run(
        config: &CacheConfig,
        trace: &[AccessRecord],
        model: Option<&dyn ReusePredictor>,
        seed: u64,
    ) -> Result<Counters> {
        let mut sim = Simulator::new(config, seed)?;
        for r in trace {
            sim.access(r, model)?;
        }
        Ok(sim.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{generate_trace, AccessType, GenConfig};

    fn rec(t: u64, line_id: u64) -> AccessRecord {
        AccessRecord {
            t,
            line_id,
            access_type: AccessType::Embedding,
            feature_hash: 0,
            seq_len: 1,
            reuse_dist: None,
            label: false,
            token_id: 0,
        }
    }

    struct Constant(f64);

    impl ReusePredictor for Constant {
        fn predict(&self, _: &[FeatureVector]) -> f64 {
            self.0
        }
        fn context_len(&self) -> usize {
            1
        }
    }

    #[test]
    fn cold_then_repeat() {
        let mut sim = Simulator::new(&CacheConfig::default(), 0).unwrap();
        let a = sim.access(&rec(0, 42), None).unwrap();
        assert_eq!((a.hit_level, a.latency), (Level::Mem, 200));
        let b = sim.access(&rec(1, 42), None).unwrap();
        assert_eq!((b.hit_level, b.latency), (Level::L1, 4));
    }

    #[test]
    fn prefetched_line_hits_in_l2() {
        let mut sim = Simulator::new(&CacheConfig::default(), 0).unwrap();
        sim.access(&rec(0, 10), None).unwrap();
        let o = sim.access(&rec(1, 11), None).unwrap();
        assert_eq!(o.hit_level, Level::L2);
        let c = sim.finish();
        assert_eq!(c.prefetch_insertions, 1);
        assert_eq!(c.prefetch_unused_evictions, 0);
    }

    #[test]
    fn prefetch_does_not_recurse() {
        let mut sim = Simulator::new(&CacheConfig::default(), 0).unwrap();
        sim.access(&rec(0, 10), None).unwrap();
        assert!(sim.l2().lookup(11).is_some());
        assert!(sim.l2().lookup(12).is_none());
        let c = sim.finish();
        assert_eq!((c.prefetch_insertions, c.prefetch_unused_evictions), (1, 1));
    }

    #[test]
    fn learned_policy_needs_model() {
        let cfg = CacheConfig {
            policy: Policy::Parm,
            ..CacheConfig::default()
        };
        let mut sim = Simulator::new(&cfg, 0).unwrap();
        assert!(matches!(
            sim.access(&rec(0, 1), None),
            Err(Error::Config(_))
        ));
        assert!(sim.access(&rec(0, 1), Some(&Constant(0.9))).is_ok());
        assert_eq!(sim.l2().line(1).unwrap().y_hat, 0.9);
    }

    #[test]
    fn stride_reuses_stored_predictions() {
        struct Counting(std::cell::Cell<usize>);
        impl ReusePredictor for Counting {
            fn predict(&self, _: &[FeatureVector]) -> f64 {
                self.0.set(self.0.get() + 1);
                0.7
            }
            fn context_len(&self) -> usize {
                1
            }
        }
        let mut cfg = CacheConfig {
            policy: Policy::Parm,
            stride: 2,
            ..CacheConfig::default()
        };
        cfg.prefetcher.enabled = false;
        let m = Counting(std::cell::Cell::new(0));
        let mut sim = Simulator::new(&cfg, 0).unwrap();
        sim.access(&rec(0, 1), Some(&m)).unwrap();
        sim.access(&rec(1, 2), Some(&m)).unwrap();
        assert_eq!(m.0.get(), 1);
        assert_eq!(sim.l2().line(1).unwrap().y_hat, 0.7);
        assert_eq!(sim.l2().line(2).unwrap().y_hat, NEUTRAL_PREDICTION);

        cfg.stride = 1;
        let m = Counting(std::cell::Cell::new(0));
        let mut sim = Simulator::new(&cfg, 0).unwrap();
        for t in 0..5 {
            sim.access(&rec(t, t + 100), Some(&m)).unwrap();
        }
        assert_eq!(m.0.get(), 5);
    }

    #[test]
    fn accounting_closes_on_generated_trace() {
        let trace = generate_trace(&GenConfig {
            num_tokens: 64,
            ..GenConfig::default()
        })
        .unwrap();
        for policy in [Policy::Lru, Policy::Random, Policy::Srrip, Policy::Parm] {
            let cfg = CacheConfig {
                policy,
                ..CacheConfig::default()
            };
            let c = Simulator::run(&cfg, &trace, Some(&Constant(0.5)), 1).unwrap();
            c.check_accounting().unwrap();
            assert_eq!(c.demand_accesses, trace.len() as u64);
            assert_eq!(c.tokens, 64);
            assert!(!c.occupancy.is_empty());
        }
    }

    #[test]
    fn event_log_format() {
        let mut sim = Simulator::new(&CacheConfig::default(), 0)
            .unwrap()
            .with_event_log();
        sim.access(&rec(0, 5), None).unwrap();
        sim.access(&rec(1, 5), None).unwrap();
        let csv = String::from_utf8(events_to_csv(&sim.take_events()).unwrap()).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,level,hit,victim_tag,victim_was_prefetch");
        assert_eq!(
            &lines[1..],
            ["0,L1,0,,", "0,L2,0,,", "0,L3,0,,", "1,L1,1,,"]
        );
    }
}

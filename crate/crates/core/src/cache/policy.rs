//! Per-set replacement state and the hooks of every supported policy.
//!
//! All hooks operate on one [`CacheSet`]. Ties are always broken towards the
//! lowest way index.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const FREQ_MAX: u8 = 15;
pub const RRPV_MAX: u8 = 3;
pub const RRPV_INSERT: u8 = 2;
/// Prediction assumed for a line that has never been scored.
pub const NEUTRAL_PREDICTION: f64 = 0.5;
/// Learned policies only install prefetches predicted at least this likely
/// to be reused.
pub const PREFETCH_ADMIT_THRESHOLD: f64 = 0.5;

/// Replacement metadata of one cache line.
#[derive(Debug, Clone, PartialEq)]
pub struct LineState {
    pub tag: u64,
    pub valid: bool,
    /// Softmax utility within the set, as of the last refresh.
    pub utility: f64,
    pub freq_counter: u8,
    /// `alpha * utility + (1 - alpha) * f`, as of the last refresh.
    pub priority: f64,
    pub rrpv: u8,
    pub lru_stamp: u64,
    pub inserted_by_prefetch: bool,
    pub demand_hits_since_fill: u64,
    /// Last reuse prediction for this line.
    pub y_hat: f64,
    /// Globally unique id of the fill that installed the line.
    pub fill_id: u64,
    /// Number of occupancy samples taken before the fill.
    pub first_sample: usize,
}

impl Default for LineState {
    fn default() -> Self {
        Self {
            tag: 0,
            valid: false,
            utility: 0.0,
            freq_counter: 0,
            priority: 0.0,
            rrpv: RRPV_MAX,
            lru_stamp: 0,
            inserted_by_prefetch: false,
            demand_hits_since_fill: 0,
            y_hat: NEUTRAL_PREDICTION,
            fill_id: 0,
            first_sample: 0,
        }
    }
}

impl LineState {
    /// Normalised access frequency `counter / 15`.
    pub fn frequency(&self) -> f64 {
        f64::from(self.freq_counter) / f64::from(FREQ_MAX)
    }
}

/// One set: its ways plus the per-set recency clock.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheSet {
    pub lines: Vec<LineState>,
    pub clock: u64,
}

impl CacheSet {
    pub fn new(ways: usize) -> Self {
        Self {
            lines: vec![LineState::default(); ways],
            clock: 0,
        }
    }

    pub fn find(&self, tag: u64) -> Option<usize> {
        self.lines.iter().position(|l| l.valid && l.tag == tag)
    }

    pub fn first_invalid(&self) -> Option<usize> {
        self.lines.iter().position(|l| !l.valid)
    }

    pub fn is_full(&self) -> bool {
        self.lines.iter().all(|l| l.valid)
    }
}

/// Least recently stamped way of a full set.
pub fn lru_victim(set: &CacheSet) -> Result<usize> {
    if !set.is_full() {
        return Err(Error::Invariant(
            "victim requested from a set with an empty way".into(),
        ));
    }
    let mut best = 0;
    for (w, line) in set.lines.iter().enumerate() {
        if line.lru_stamp < set.lines[best].lru_stamp {
            best = w;
        }
    }
    Ok(best)
}

pub fn lru_touch(set: &mut CacheSet, way: usize) {
    set.clock += 1;
    set.lines[way].lru_stamp = set.clock;
}

pub fn srrip_insert(line: &mut LineState) {
    line.rrpv = RRPV_INSERT;
}

pub fn srrip_hit(line: &mut LineState) {
    line.rrpv = 0;
}

/// Leftmost way at the maximum RRPV, ageing the whole set until one exists.
pub fn srrip_victim(set: &mut CacheSet) -> usize {
    loop {
        if let Some(w) = set.lines.iter().position(|l| l.rrpv >= RRPV_MAX) {
            return w;
        }
        for line in &mut set.lines {
            line.rrpv += 1;
        }
    }
}

pub fn random_victim(set: &CacheSet, rng: &mut SplitMix64) -> usize {
    rng.below(set.lines.len() as u64) as usize
}

/// Softmax of the predictions, in input order.
pub fn utility_scores(y_hat: &[f64]) -> Vec<f64> {
    let Some(max) = y_hat.iter().copied().reduce(f64::max) else {
        return Vec::new();
    };
    let exps: Vec<f64> = y_hat.iter().map(|&y| (y - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Blend of learned utility and observed frequency.
pub fn compute_priority(utility: f64, frequency: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * utility + (1.0 - alpha) * frequency)
}

fn blend(utility: f64, frequency: f64, alpha: f64) -> f64 {
    alpha * utility + (1.0 - alpha) * frequency
}

/// Recomputes utility and priority of every valid line of the set.
pub fn refresh_priorities(set: &mut CacheSet, alpha: f64) {
    let ways: Vec<usize> = (0..set.lines.len())
        .filter(|&w| set.lines[w].valid)
        .collect();
    let preds: Vec<f64> = ways.iter().map(|&w| set.lines[w].y_hat).collect();
    for (&w, u) in ways.iter().zip(utility_scores(&preds)) {
        let line = &mut set.lines[w];
        line.utility = u;
        line.priority = blend(u, line.frequency(), alpha);
    }
}

/// Lowest-priority way after a refresh. `alpha` must already be validated.
pub fn parm_victim(set: &mut CacheSet, alpha: f64) -> usize {
    refresh_priorities(set, alpha);
    let mut best = 0;
    for (w, line) in set.lines.iter().enumerate() {
        if line.priority < set.lines[best].priority {
            best = w;
        }
    }
    best
}

/// Installs `tag` in `way` with a fresh frequency counter and the given
/// prediction, then refreshes the set so the newcomer's priority is current.
pub fn parm_insert(set: &mut CacheSet, way: usize, tag: u64, y_hat: f64, alpha: f64) {
    let line = &mut set.lines[way];
    line.tag = tag;
    line.valid = true;
    line.freq_counter = 1;
    line.y_hat = y_hat;
    refresh_priorities(set, alpha);
}

/// Demand-hit frequency update: saturating increment, and when any counter
/// of the set is saturated every counter of the set is halved.
pub fn update_frequency(set: &mut CacheSet, way: usize) {
    let line = &mut set.lines[way];
    line.freq_counter = (line.freq_counter + 1).min(FREQ_MAX);
    if set
        .lines
        .iter()
        .any(|l| l.valid && l.freq_counter >= FREQ_MAX)
    {
        for l in &mut set.lines {
            l.freq_counter >>= 1;
        }
    }
}

/// Next-line candidates `line_id + 1 ..= line_id + degree`.
pub fn prefetch_next_line(line_id: u64, degree: usize) -> Vec<u64> {
    (1..=degree as u64)
        .map(|k| line_id.wrapping_add(k))
        .collect()
}

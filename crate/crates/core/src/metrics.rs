//! Simulator counters and the figures derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounters {
    pub hits: u64,
    pub misses: u64,
}

/// One occupancy sample of the L2: resident lines, and how many of those
/// receive a demand hit at some point during their current residency.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancySample {
    pub useful_lines: u64,
    pub valid_lines: u64,
}

/// Raw event counts of one simulation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub l1: LevelCounters,
    pub l2: LevelCounters,
    pub l3: LevelCounters,
    pub demand_accesses: u64,
    pub prefetch_insertions: u64,
    /// Prefetched lines that never served a demand hit, whether evicted or
    /// still resident at the end of the trace.
    pub prefetch_unused_evictions: u64,
    pub l2_miss_penalty_cycles: u64,
    pub total_cycles: u64,
    pub tokens: u64,
    pub occupancy: Vec<OccupancySample>,
}

impl Counters {
    /// Demand accesses served by main memory.
    pub fn memory_fills(&self) -> u64 {
        self.l3.misses
    }

    /// Checks that no event was lost between levels.
    pub fn check_accounting(&self) -> Result<()> {
        let ok = self.l1.hits + self.l1.misses == self.demand_accesses
            && self.l2.hits + self.l2.misses == self.l1.misses
            && self.l3.hits + self.l3.misses == self.l2.misses
            && self.prefetch_unused_evictions <= self.prefetch_insertions
            && self.total_cycles >= self.l2_miss_penalty_cycles
            && self
                .occupancy
                .iter()
                .all(|s| s.useful_lines <= s.valid_lines);
        if ok {
            Ok(())
        } else {
            Err(Error::Invariant(format!("inconsistent counters: {self:?}")))
        }
    }
}

fn require_accesses(c: &Counters) -> Result<f64> {
    if c.demand_accesses == 0 {
        return Err(Error::Degenerate("no demand accesses".into()));
    }
    Ok(c.demand_accesses as f64)
}

/// Cache hit rate over demand accesses, in percent.
pub fn chr(c: &Counters) -> Result<f64> {
    let n = require_accesses(c)?;
    Ok(100.0 * (c.l1.hits + c.l2.hits + c.l3.hits) as f64 / n)
}

/// Share of prefetch insertions that never served a demand hit, in percent.
pub fn ppr(c: &Counters) -> f64 {
    if c.prefetch_insertions == 0 {
        return 0.0;
    }
    100.0 * c.prefetch_unused_evictions as f64 / c.prefetch_insertions as f64
}

/// L2 miss penalty saved relative to an LRU run on the same trace, in
/// percent. Negative when the policy does worse.
pub fn mpr(c: &Counters, lru: &Counters) -> Result<f64> {
    if lru.l2_miss_penalty_cycles == 0 {
        return Err(Error::Degenerate("baseline L2 miss penalty is zero".into()));
    }
    let base = lru.l2_miss_penalty_cycles as f64;
    Ok(100.0 * (base - c.l2_miss_penalty_cycles as f64) / base)
}

/// Mean demand access latency in cycles.
pub fn mal(c: &Counters) -> Result<f64> {
    Ok(c.total_cycles as f64 / require_accesses(c)?)
}

/// Effective memory utilisation of the L2, in percent.
pub fn emu(c: &Counters) -> Result<f64> {
    if c.occupancy.is_empty() {
        return Err(Error::Degenerate("no occupancy samples".into()));
    }
    let useful: u64 = c.occupancy.iter().map(|s| s.useful_lines).sum();
    let valid: u64 = c.occupancy.iter().map(|s| s.valid_lines).sum();
    if valid == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * useful as f64 / valid as f64)
}

/// Tokens per million cycles.
pub fn tgt(c: &Counters) -> Result<f64> {
    if c.tokens == 0 || c.total_cycles == 0 {
        return Err(Error::Degenerate(
            "throughput needs at least one token and one cycle".into(),
        ));
    }
    Ok(c.tokens as f64 / (c.total_cycles as f64 / 1e6))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chr_pct: f64,
    pub ppr_pct: f64,
    pub mpr_pct: f64,
    pub mal_cycles: f64,
    pub emu_pct: f64,
    pub tgt_tokens_per_mcycle: f64,
    pub policy: String,
    pub trace_id: String,
    pub seed: u64,
}

impl MetricsReport {
    /// All metrics of a run. `lru` is the LRU run on the same trace.
    pub fn from_counters(
        c: &Counters,
        lru: &Counters,
        policy: &str,
        trace_id: &str,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            chr_pct: chr(c)?,
            ppr_pct: ppr(c),
            mpr_pct: mpr(c, lru)?,
            mal_cycles: mal(c)?,
            emu_pct: emu(c)?,
            tgt_tokens_per_mcycle: tgt(c)?,
            policy: policy.to_string(),
            trace_id: trace_id.to_string(),
            seed,
        })
    }
}

/// Relative change of `candidate` over `baseline`, in percent of the
/// baseline.
pub fn relative_gain(metric: &str, baseline: f64, candidate: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::Degenerate(format!(
            "baseline {metric} is zero; relative change undefined"
        )));
    }
    Ok(100.0 * (candidate - baseline) / baseline)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvements {
    pub pollution_reduction_pct: f64,
    pub chr_gain_pct: f64,
    pub mpr_gain_pct: f64,
    pub tgt_gain_pct: f64,
}

/// Relative improvements of `candidate` over `baseline`. Pollution
/// reduction is the relative drop in PPR; the others are relative gains.
pub fn derived_improvements(
    baseline: &MetricsReport,
    candidate: &MetricsReport,
) -> Result<Improvements> {
    if baseline.trace_id != candidate.trace_id {
        return Err(Error::InvalidInput(format!(
            "reports come from different traces ({} vs {})",
            baseline.trace_id, candidate.trace_id
        )));
    }
    Ok(Improvements {
        pollution_reduction_pct: -relative_gain("PPR", baseline.ppr_pct, candidate.ppr_pct)?,
        chr_gain_pct: relative_gain("CHR", baseline.chr_pct, candidate.chr_pct)?,
        mpr_gain_pct: relative_gain("MPR", baseline.mpr_pct, candidate.mpr_pct)?,
        tgt_gain_pct: relative_gain(
            "TGT",
            baseline.tgt_tokens_per_mcycle,
            candidate.tgt_tokens_per_mcycle,
        )?,
    })
}

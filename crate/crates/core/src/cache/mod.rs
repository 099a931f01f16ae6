//! Three-level set-associative cache simulator.
//!
//! L1 and L3 always use LRU; the configured policy governs L2. The hierarchy
//! is non-inclusive and allocates on every demand miss. A next-line
//! prefetcher fills L2 when a demand access misses both L1 and L2.

pub mod level;
pub mod policy;
mod sim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use level::{CacheLevel, Fill, LevelAccess};
pub use policy::{
    compute_priority, lru_touch, lru_victim, parm_insert, parm_victim, prefetch_next_line,
    srrip_hit, srrip_insert, srrip_victim, update_frequency, utility_scores, CacheSet, LineState,
    PREFETCH_ADMIT_THRESHOLD,
};
pub use sim::{
    events_to_csv, predict_for_access, AccessOutcome, EventRow, L2Fill, ReusePredictor, Simulator,
    VictimInfo, EVENT_HEADER, OCCUPANCY_INTERVAL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Policy {
    Lru,
    Random,
    Srrip,
    /// Priority replacement driven by the feed-forward predictor.
    Mlp,
    /// Priority replacement driven by the convolutional predictor.
    Parm,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Lru,
        Policy::Random,
        Policy::Srrip,
        Policy::Mlp,
        Policy::Parm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Lru => "LRU",
            Policy::Random => "RANDOM",
            Policy::Srrip => "SRRIP",
            Policy::Mlp => "MLP",
            Policy::Parm => "PARM",
        }
    }

    /// Whether the policy consults a reuse predictor.
    pub fn is_learned(self) -> bool {
        matches!(self, Policy::Mlp | Policy::Parm)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

/// Where a demand access was served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
    #[serde(rename = "MEM")]
    Mem,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::L3 => "L3",
            Level::Mem => "MEM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelGeometry {
    pub line_size: u64,
    pub sets: usize,
    pub ways: usize,
}

impl LevelGeometry {
    /// Geometry for a capacity in bytes.
    pub fn with_capacity(bytes: u64, ways: usize, line_size: u64) -> Self {
        Self {
            line_size,
            sets: (bytes / (line_size * ways as u64)) as usize,
            ways,
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.line_size * (self.sets * self.ways) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Latencies {
    pub l1_hit: u64,
    pub l2_hit: u64,
    pub l3_hit: u64,
    pub dram: u64,
}

impl Latencies {
    pub fn of(&self, level: Level) -> u64 {
        match level {
            Level::L1 => self.l1_hit,
            Level::L2 => self.l2_hit,
            Level::L3 => self.l3_hit,
            Level::Mem => self.dram,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PrefetchTarget {
    #[default]
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefetcherConfig {
    pub enabled: bool,
    pub degree: usize,
    #[serde(default)]
    pub target_level: PrefetchTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    pub l1: LevelGeometry,
    pub l2: LevelGeometry,
    pub l3: LevelGeometry,
    pub latencies: Latencies,
    pub prefetcher: PrefetcherConfig,
    pub policy: Policy,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Run the predictor on every `stride`-th demand access.
    #[serde(default = "default_stride")]
    pub stride: u64,
}

fn default_alpha() -> f64 {
    0.5
}

fn default_stride() -> u64 {
    1
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            l1: LevelGeometry::with_capacity(64 << 10, 8, 64),
            l2: LevelGeometry::with_capacity(512 << 10, 8, 64),
            l3: LevelGeometry::with_capacity(64 << 20, 16, 64),
            latencies: Latencies {
                l1_hit: 4,
                l2_hit: 14,
                l3_hit: 40,
                dram: 200,
            },
            prefetcher: PrefetcherConfig {
                enabled: true,
                degree: 1,
                target_level: PrefetchTarget::L2,
            },
            policy: Policy::Lru,
            alpha: default_alpha(),
            stride: default_stride(),
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("l1", &self.l1), ("l2", &self.l2), ("l3", &self.l3)] {
            if !g.sets.is_power_of_two() {
                return Err(Error::Config(format!(
                    "{name}.sets must be a power of two, got {}",
                    g.sets
                )));
            }
            if g.ways == 0 {
                return Err(Error::Config(format!("{name}.ways must be at least 1")));
            }
            if g.line_size == 0 || g.line_size != self.l1.line_size {
                return Err(Error::Config(format!(
                    "{name}.line_size must be positive and equal across levels"
                )));
            }
        }
        let l = &self.latencies;
        if !(l.l1_hit < l.l2_hit && l.l2_hit < l.l3_hit && l.l3_hit < l.dram) {
            return Err(Error::Config(format!(
                "latencies must strictly increase from l1_hit to dram, got {}/{}/{}/{}",
                l.l1_hit, l.l2_hit, l.l3_hit, l.dram
            )));
        }
        policy::check_alpha(self.alpha)?;
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("cache config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

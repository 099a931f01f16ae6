use super::policy::{
    lru_touch, lru_victim, parm_insert, parm_victim, random_victim, srrip_hit, srrip_insert,
    srrip_victim, update_frequency, CacheSet, LineState, NEUTRAL_PREDICTION,
    PREFETCH_ADMIT_THRESHOLD,
};
use super::Policy;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// A line about to be installed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fill {
    pub tag: u64,
    pub y_hat: f64,
    pub prefetch: bool,
    pub fill_id: u64,
    pub first_sample: usize,
}

impl Fill {
    pub fn demand(tag: u64) -> Self {
        Self {
            tag,
            y_hat: NEUTRAL_PREDICTION,
            prefetch: false,
            fill_id: 0,
            first_sample: 0,
        }
    }
}

/// Result of a demand access to a single level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelAccess {
    pub hit: bool,
    pub way: usize,
    pub victim: Option<u64>,
}

/// One set-associative cache level. Line ids map to sets by their low bits.
#[derive(Debug, Clone)]
pub struct CacheLevel {
    sets: Vec<CacheSet>,
    set_mask: u64,
    policy: Policy,
    alpha: f64,
    rng: SplitMix64,
}

impl CacheLevel {
    pub fn new(sets: usize, ways: usize, policy: Policy, alpha: f64, seed: u64) -> Result<Self> {
        if !sets.is_power_of_two() {
            return Err(Error::Config(format!(
                "set count {sets} is not a power of two"
            )));
        }
        if ways == 0 {
            return Err(Error::Config("associativity must be at least 1".into()));
        }
        super::policy::check_alpha(alpha)?;
        Ok(Self {
            sets: vec![CacheSet::new(ways); sets],
            set_mask: sets as u64 - 1,
            policy,
            alpha,
            rng: SplitMix64::new(seed),
        })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn num_sets(&self) -> usize {
        self.sets.len()
    }

    pub fn ways(&self) -> usize {
        self.sets[0].lines.len()
    }

    pub fn set_index(&self, tag: u64) -> usize {
        (tag & self.set_mask) as usize
    }

    pub fn set(&self, index: usize) -> &CacheSet {
        &self.sets[index]
    }

    pub fn sets(&self) -> &[CacheSet] {
        &self.sets
    }

    pub fn lookup(&self, tag: u64) -> Option<usize> {
        self.sets[self.set_index(tag)].find(tag)
    }

    pub fn line(&self, tag: u64) -> Option<&LineState> {
        let set = &self.sets[self.set_index(tag)];
        set.find(tag).map(|w| &set.lines[w])
    }

    pub fn lines(&self) -> impl Iterator<Item = &LineState> {
        self.sets
            .iter()
            .flat_map(|s| s.lines.iter())
            .filter(|l| l.valid)
    }

    /// Policy bookkeeping for a demand hit on `tag`, resident in `way`.
    /// `y_hat` replaces the stored prediction when given.
    pub fn demand_hit(&mut self, tag: u64, way: usize, y_hat: Option<f64>) {
        let idx = self.set_index(tag);
        let set = &mut self.sets[idx];
        set.lines[way].demand_hits_since_fill += 1;
        if let Some(y) = y_hat {
            set.lines[way].y_hat = y;
        }
        match self.policy {
            Policy::Lru => lru_touch(set, way),
            Policy::Random => {}
            Policy::Srrip => srrip_hit(&mut set.lines[way]),
            Policy::Mlp | Policy::Parm => update_frequency(set, way),
        }
    }

    /// Installs a line that is not resident. Empty ways are used first;
    /// otherwise the policy picks a victim, which is returned.
    pub fn fill(&mut self, fill: Fill) -> (usize, Option<LineState>) {
        let idx = self.set_index(fill.tag);
        debug_assert!(self.sets[idx].find(fill.tag).is_none());
        let set = &mut self.sets[idx];
        let (way, evicted) = match set.first_invalid() {
            Some(w) => (w, None),
            None => {
                let w = match self.policy {
                    Policy::Lru => lru_victim(set).expect("set is full"),
                    Policy::Random => random_victim(set, &mut self.rng),
                    Policy::Srrip => srrip_victim(set),
                    Policy::Mlp | Policy::Parm => parm_victim(set, self.alpha),
                };
                (w, Some(set.lines[w].clone()))
            }
        };
        set.lines[way] = LineState {
            tag: fill.tag,
            valid: true,
            inserted_by_prefetch: fill.prefetch,
            y_hat: fill.y_hat,
            fill_id: fill.fill_id,
            first_sample: fill.first_sample,
            ..LineState::default()
        };
        match self.policy {
            Policy::Lru => lru_touch(set, way),
            Policy::Random => {}
            Policy::Srrip => srrip_insert(&mut set.lines[way]),
            Policy::Mlp | Policy::Parm => parm_insert(set, way, fill.tag, fill.y_hat, self.alpha),
        }
        (way, evicted)
    }

    /// Whether `fill` would be installed. Learned policies decline
    /// prefetches predicted unlikely to be reused.
    pub fn admits(&self, fill: &Fill) -> bool {
        !fill.prefetch || !self.policy.is_learned() || fill.y_hat >= PREFETCH_ADMIT_THRESHOLD
    }

    /// Demand access with allocation on miss and a neutral prediction.
    pub fn access(&mut self, tag: u64) -> LevelAccess {
        match self.lookup(tag) {
            Some(way) => {
                self.demand_hit(tag, way, None);
                LevelAccess {
                    hit: true,
                    way,
                    victim: None,
                }
            }
            None => {
                let (way, evicted) = self.fill(Fill::demand(tag));
                LevelAccess {
                    hit: false,
                    way,
                    victim: evicted.map(|l| l.tag),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_two_way_example() {
        let mut c = CacheLevel::new(1, 2, Policy::Lru, 0.5, 0).unwrap();
        c.access(0xA);
        c.access(0xB);
        assert!(c.access(0xA).hit);
        assert_eq!(c.access(0xC).victim, Some(0xB));
    }

    #[test]
    fn hot_line_never_lru_victim() {
        let mut c = CacheLevel::new(1, 4, Policy::Lru, 0.5, 0).unwrap();
        for k in 0..100 {
            c.access(7);
            let v = c.access(100 + k).victim;
            assert_ne!(v, Some(7));
        }
    }

    #[test]
    fn empty_way_fills_never_evict() {
        for policy in Policy::ALL {
            let mut c = CacheLevel::new(2, 3, policy, 0.5, 1).unwrap();
            for tag in 0..6 {
                assert_eq!(c.access(tag).victim, None);
            }
        }
    }

    #[test]
    fn direct_mapped_conflict() {
        let mut c = CacheLevel::new(1, 1, Policy::Lru, 0.5, 0).unwrap();
        for i in 0..20 {
            assert!(!c.access(if i % 2 == 0 { 1 } else { 2 }).hit);
        }
    }

    #[test]
    fn srrip_fill_example() {
        let mut c = CacheLevel::new(1, 2, Policy::Srrip, 0.5, 0).unwrap();
        c.access(0xA);
        c.access(0xB);
        assert_eq!(c.access(0xC).victim, Some(0xA));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(CacheLevel::new(3, 2, Policy::Lru, 0.5, 0).is_err());
        assert!(CacheLevel::new(4, 0, Policy::Lru, 0.5, 0).is_err());
        assert!(CacheLevel::new(4, 2, Policy::Parm, 1.1, 0).is_err());
    }

    #[test]
    fn learned_policies_filter_prefetches() {
        let pf = |y_hat| Fill {
            prefetch: true,
            y_hat,
            ..Fill::demand(5)
        };
        for policy in Policy::ALL {
            let c = CacheLevel::new(2, 2, policy, 0.5, 0).unwrap();
            assert!(c.admits(&Fill::demand(5)));
            assert!(c.admits(&pf(0.5)));
            assert_eq!(c.admits(&pf(0.49)), !policy.is_learned());
        }
    }

    #[test]
    fn random_is_seeded() {
        let run = |seed| {
            let mut c = CacheLevel::new(1, 4, Policy::Random, 0.5, seed).unwrap();
            (0..200).map(|i| c.access(i % 9).victim).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }
}

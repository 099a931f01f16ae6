//! Reference models shared by the integration tests.
#![allow(dead_code)]

use acpc_core::rng::SplitMix64;

/// LRU set as a recency list, most recent first.
pub struct LruOracle {
    sets: Vec<Vec<u64>>,
    ways: usize,
}

impl LruOracle {
    pub fn new(sets: usize, ways: usize) -> Self {
        Self {
            sets: vec![Vec::new(); sets],
            ways,
        }
    }

    /// `(hit, victim)`.
    pub fn access(&mut self, tag: u64) -> (bool, Option<u64>) {
        let n = self.sets.len() as u64;
        let list = &mut self.sets[(tag % n) as usize];
        if let Some(pos) = list.iter().position(|&t| t == tag) {
            list.remove(pos);
            list.insert(0, tag);
            return (true, None);
        }
        let victim = if list.len() == self.ways {
            list.pop()
        } else {
            None
        };
        list.insert(0, tag);
        (false, victim)
    }
}

/// SRRIP set as an association list of `(slot, tag, rrpv)` entries.
pub struct SrripOracle {
    sets: Vec<Vec<(usize, u64, u8)>>,
    ways: usize,
}

impl SrripOracle {
    pub fn new(sets: usize, ways: usize) -> Self {
        Self {
            sets: vec![Vec::new(); sets],
            ways,
        }
    }

    pub fn access(&mut self, tag: u64) -> (bool, Option<u64>) {
        let n = self.sets.len() as u64;
        let entries = &mut self.sets[(tag % n) as usize];
        if let Some(e) = entries.iter_mut().find(|e| e.1 == tag) {
            e.2 = 0;
            return (true, None);
        }
        let free = (0..self.ways).find(|s| entries.iter().all(|e| e.0 != *s));
        if let Some(slot) = free {
            entries.push((slot, tag, 2));
            return (false, None);
        }
        loop {
            let mut at_max: Vec<&mut (usize, u64, u8)> =
                entries.iter_mut().filter(|e| e.2 == 3).collect();
            at_max.sort_by_key(|e| e.0);
            if let Some(e) = at_max.into_iter().next() {
                let victim = e.1;
                e.1 = tag;
                e.2 = 2;
                return (false, Some(victim));
            }
            for e in entries.iter_mut() {
                e.2 += 1;
            }
        }
    }
}

/// Random single-level workload: geometry and tag sequence.
pub struct RandomCase {
    pub sets: usize,
    pub ways: usize,
    pub tags: Vec<u64>,
}

pub fn random_case(rng: &mut SplitMix64) -> RandomCase {
    let sets = 1 << rng.below(3);
    let ways = 1 + rng.below(4) as usize;
    let len = 1 + rng.below(512) as usize;
    let universe = 1 + rng.below((3 * sets * ways) as u64);
    let tags = (0..len).map(|_| rng.below(universe)).collect();
    RandomCase { sets, ways, tags }
}

//! Synthetic LLM-inference access traces: generation, reuse labels, stack
//! distances, per-access feature vectors, the train/val/test split and the
//! CSV trace format.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::rng::{mix64, SplitMix64};

/// Line-id region bases. Each access class lives in its own region so that a
/// next-line prefetch never crosses from one class into another.
pub const EMBEDDING_BASE: u64 = 0;
pub const KV_BASE: u64 = 1 << 40;
pub const WEIGHT_BASE: u64 = 2 << 40;

/// Default prediction window for reuse labels, in accesses.
pub const DEFAULT_LABEL_WINDOW: usize = 1024;

pub const FEATURE_DIM: usize = 16;

pub const TRACE_HEADER: [&str; 8] = [
    "t",
    "line_id",
    "access_type",
    "feature_hash",
    "seq_len",
    "reuse_dist",
    "label",
    "token_id",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AccessType {
    Embedding,
    KvRead,
    KvAppend,
    Weight,
}

impl AccessType {
    pub const ALL: [AccessType; 4] = [
        AccessType::Embedding,
        AccessType::KvRead,
        AccessType::KvAppend,
        AccessType::Weight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AccessType::Embedding => "EMBEDDING",
            AccessType::KvRead => "KV_READ",
            AccessType::KvAppend => "KV_APPEND",
            AccessType::Weight => "WEIGHT",
        }
    }
}

impl fmt::Display for AccessType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AccessType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        AccessType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown access type {s:?}"))
    }
}

/// One cache access event.
///
/// `reuse_dist` is `None` (written as `-1`) for the first access to a line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRecord {
    pub t: u64,
    pub line_id: u64,
    pub access_type: AccessType,
    pub feature_hash: u64,
    pub seq_len: u32,
    pub reuse_dist: Option<u64>,
    pub label: bool,
    pub token_id: u64,
}

/// Workload knobs for [`generate_trace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub num_tokens: u64,
    pub embedding_table_lines: u64,
    /// Embedding rows looked up per generated token.
    #[serde(default = "default_lookups")]
    pub embedding_lookups_per_token: u64,
    pub zipf_exponent: f64,
    pub kv_lines_per_token: u64,
    /// Size of the weight region streamed once per token; 0 disables weights.
    pub weight_lines_per_token: u64,
    pub kv_scan_fraction: f64,
    pub seed: u64,
}

fn default_lookups() -> u64 {
    1
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_tokens: 256,
            embedding_table_lines: 1000,
            embedding_lookups_per_token: 1,
            zipf_exponent: 1.0,
            kv_lines_per_token: 4,
            weight_lines_per_token: 32,
            kv_scan_fraction: 0.1,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_tokens", self.num_tokens),
            ("embedding_table_lines", self.embedding_table_lines),
            (
                "embedding_lookups_per_token",
                self.embedding_lookups_per_token,
            ),
            ("kv_lines_per_token", self.kv_lines_per_token),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent > 0.0) {
            return Err(Error::Config(format!(
                "zipf_exponent must be finite and > 0, got {}",
                self.zipf_exponent
            )));
        }
        if !(0.0..=1.0).contains(&self.kv_scan_fraction) {
            return Err(Error::Config(format!(
                "kv_scan_fraction must lie in [0, 1], got {}",
                self.kv_scan_fraction
            )));
        }
        if self.embedding_table_lines >= KV_BASE || self.weight_lines_per_token >= KV_BASE {
            return Err(Error::Config("region size exceeds line-id region".into()));
        }
        Ok(())
    }
}

/// Inverse-CDF Zipf sampler over ranks `0..n` (rank 0 most popular).
#[derive(Debug, Clone)]
pub struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub fn new(n: usize, exponent: f64) -> Self {
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += (k as f64).powf(-exponent);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Self { cdf }
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    pub fn sample(&self, rng: &mut SplitMix64) -> usize {
        let u = rng.next_f64();
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }
}

/// Floyd's algorithm: `m` distinct values from `0..n`, returned ascending.
fn sample_distinct(rng: &mut SplitMix64, n: u64, m: u64) -> Vec<u64> {
    let mut chosen = std::collections::BTreeSet::new();
    for j in (n - m)..n {
        let r = rng.below(j + 1);
        if !chosen.insert(r) {
            chosen.insert(j);
        }
    }
    chosen.into_iter().collect()
}

/// Generates one synthetic decoding trace.
///
/// Per token, in order: Zipf-distributed embedding lookups (ranks scattered
/// over the table by a seeded permutation), an ascending read scan over a
/// uniform `kv_scan_fraction` sample of all previously appended KV lines,
/// `kv_lines_per_token` appends of fresh KV lines, and one pass over the
/// weight region. Reuse distances and sequence lengths are filled in;
/// labels are left unset.
pub fn generate_trace(cfg: &GenConfig) -> Result<Vec<AccessRecord>> {
    cfg.validate()?;
    let mut zipf_rng = SplitMix64::derive(cfg.seed, 1);
    let mut kv_rng = SplitMix64::derive(cfg.seed, 2);

    let table = ZipfTable::new(cfg.embedding_table_lines as usize, cfg.zipf_exponent);
    let mut rank_to_row: Vec<u64> = (0..cfg.embedding_table_lines).collect();
    SplitMix64::derive(cfg.seed, 3).shuffle(&mut rank_to_row);

    let mut trace = Vec::new();
    let mut kv_appended: u64 = 0;
    for token in 0..cfg.num_tokens {
        let seq_len = u32::try_from(token + 1).unwrap_or(u32::MAX);
        let mut push = |line_id: u64, access_type: AccessType, feature_hash: u64| {
            trace.push(AccessRecord {
                t: trace.len() as u64,
                line_id,
                access_type,
                feature_hash,
                seq_len,
                reuse_dist: None,
                label: false,
                token_id: token,
            });
        };

        for _ in 0..cfg.embedding_lookups_per_token {
            let row = rank_to_row[table.sample(&mut zipf_rng)];
            push(EMBEDDING_BASE + row, AccessType::Embedding, mix64(row));
        }

        let reads = (cfg.kv_scan_fraction * kv_appended as f64).round() as u64;
        let token_hash = mix64(token ^ 0x5EED);
        for idx in sample_distinct(&mut kv_rng, kv_appended, reads.min(kv_appended)) {
            push(KV_BASE + idx, AccessType::KvRead, token_hash);
        }
        for _ in 0..cfg.kv_lines_per_token {
            push(KV_BASE + kv_appended, AccessType::KvAppend, token_hash);
            kv_appended += 1;
        }

        for w in 0..cfg.weight_lines_per_token {
            push(WEIGHT_BASE + w, AccessType::Weight, token_hash);
        }
    }
    compute_reuse_distance(&mut trace);
    Ok(trace)
}

/// Sets `label` on every record: true iff the same line is accessed again
/// within the next `window` records.
pub fn compute_reuse_labels(trace: &mut [AccessRecord], window: usize) {
    let mut next_seen: HashMap<u64, usize> = HashMap::new();
    for i in (0..trace.len()).rev() {
        let line = trace[i].line_id;
        trace[i].label = match next_seen.get(&line) {
            Some(&j) => j - i <= window,
            None => false,
        };
        next_seen.insert(line, i);
    }
}

/// Fenwick tree over trace positions.
struct Fenwick {
    tree: Vec<i64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, pos: usize, delta: i64) {
        let mut i = pos + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..end`.
    fn prefix(&self, end: usize) -> i64 {
        let mut i = end;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Sets `reuse_dist` to the LRU stack distance: the number of distinct lines
/// touched strictly between the previous access to this line and this one.
///
/// Each position holding the most recent access of its line carries a 1 in a
/// Fenwick tree, so the distance is a range count in O(log n).
pub fn compute_reuse_distance(trace: &mut [AccessRecord]) {
    let mut marks = Fenwick::new(trace.len());
    let mut last: HashMap<u64, usize> = HashMap::new();
    for (i, record) in trace.iter_mut().enumerate() {
        record.reuse_dist = match last.insert(record.line_id, i) {
            Some(p) => {
                let between = marks.prefix(i) - marks.prefix(p + 1);
                marks.add(p, -1);
                Some(between as u64)
            }
            None => None,
        };
        marks.add(i, 1);
    }
}

/// Fixed 16-component feature layout:
///
/// | index  | content                                                      |
/// |--------|--------------------------------------------------------------|
/// | 0      | `log2(1 + dt) / 32` clipped to `[0, 1]`; 1 for a first access |
/// | 1..=4  | access type one-hot (EMBEDDING, KV_READ, KV_APPEND, WEIGHT)   |
/// | 5..=10 | reuse distance one-hot: 0, 1-2, 3-8, 9-64, 65-1024, >1024/never |
/// | 11..=14| ±1 hash code of the line id                                   |
/// | 15     | `min(seq_len / 4096, 1)`                                      |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub const ZERO: FeatureVector = FeatureVector([0.0; FEATURE_DIM]);

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub const TYPE_OFFSET: usize = 1;
pub const BUCKET_OFFSET: usize = 5;
pub const HASH_OFFSET: usize = 11;
pub const SEQ_INDEX: usize = 15;

/// Index (0..6) of the reuse-distance bucket.
pub fn reuse_bucket(reuse_dist: Option<u64>) -> usize {
    match reuse_dist {
        Some(0) => 0,
        Some(1..=2) => 1,
        Some(3..=8) => 2,
        Some(9..=64) => 3,
        Some(65..=1024) => 4,
        _ => 5,
    }
}

/// Component `c` of the line-id hash code: the sign bit of a SplitMix64 hash
/// of `line_id + (c + 1) * 0x9E3779B97F4A7C15`, mapped to -1 (set) / +1.
pub fn hash_code(line_id: u64, c: usize) -> f64 {
    let h = mix64(line_id.wrapping_add((c as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    if h >> 63 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Builds the feature vector for `record`; `prev_timestamp` is the time of
/// the previous access to the same line, if any.
pub fn extract_features(record: &AccessRecord, prev_timestamp: Option<u64>) -> FeatureVector {
    let mut x = [0.0; FEATURE_DIM];
    x[0] = match prev_timestamp {
        Some(prev) => {
            let dt = record.t.saturating_sub(prev) as f64;
            ((1.0 + dt).log2() / 32.0).clamp(0.0, 1.0)
        }
        None => 1.0,
    };
    x[TYPE_OFFSET + record.access_type.index()] = 1.0;
    x[BUCKET_OFFSET + reuse_bucket(record.reuse_dist)] = 1.0;
    for c in 0..4 {
        x[HASH_OFFSET + c] = hash_code(record.line_id, c);
    }
    x[SEQ_INDEX] = (record.seq_len as f64 / 4096.0).min(1.0);
    FeatureVector(x)
}

/// Features describing a next-line prefetch candidate issued by `trigger`:
/// typed as a weight access, with no reuse history.
pub fn prefetch_candidate_features(trigger: &AccessRecord, candidate: u64) -> FeatureVector {
    let synthetic = AccessRecord {
        t: trigger.t,
        line_id: candidate,
        access_type: AccessType::Weight,
        feature_hash: 0,
        seq_len: trigger.seq_len,
        reuse_dist: None,
        label: false,
        token_id: trigger.token_id,
    };
    extract_features(&synthetic, None)
}

/// For every record, whether line `line_id + 1` is accessed within the next
/// `window` records.
pub fn next_line_labels(trace: &[AccessRecord], window: usize) -> Vec<bool> {
    let mut next_seen: HashMap<u64, usize> = HashMap::new();
    let mut out = vec![false; trace.len()];
    for i in (0..trace.len()).rev() {
        let cand = trace[i].line_id.wrapping_add(1);
        out[i] = next_seen.get(&cand).is_some_and(|&j| j - i <= window);
        next_seen.insert(trace[i].line_id, i);
    }
    out
}

/// Tracks per-line previous access times so features can be produced while
/// streaming over a trace.
#[derive(Debug, Default, Clone)]
pub struct FeatureStream {
    last_seen: HashMap<u64, u64>,
}

impl FeatureStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next(&mut self, record: &AccessRecord) -> FeatureVector {
        let prev = self.last_seen.insert(record.line_id, record.t);
        extract_features(record, prev)
    }
}

/// Features for every record of a trace, in order.
pub fn trace_features(trace: &[AccessRecord]) -> Vec<FeatureVector> {
    let mut stream = FeatureStream::new();
    trace.iter().map(|r| stream.next(r)).collect()
}

pub const MIN_SPLIT_LEN: usize = 20;

/// Contiguous 70/15/15 split at `floor(0.70 n)` and `floor(0.85 n)`.
pub fn split_dataset<T: Clone>(items: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = items.len();
    if n < MIN_SPLIT_LEN {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_SPLIT_LEN} records to split, got {n}"
        )));
    }
    // Integer arithmetic keeps the boundaries exact.
    let a = n * 70 / 100;
    let b = n * 85 / 100;
    Ok((
        items[..a].to_vec(),
        items[a..b].to_vec(),
        items[b..].to_vec(),
    ))
}

/// Serializes a trace to the CSV format (header plus one row per record).
pub fn trace_to_csv(trace: &[AccessRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in trace {
        let reuse = match r.reuse_dist {
            Some(h) => h.to_string(),
            None => "-1".to_string(),
        };
        w.write_record([
            r.t.to_string(),
            r.line_id.to_string(),
            r.access_type.name().to_string(),
            r.feature_hash.to_string(),
            r.seq_len.to_string(),
            reuse,
            u8::from(r.label).to_string(),
            r.token_id.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn trace_from_csv(data: &[u8]) -> Result<Vec<AccessRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(data);
    let mut rows = rdr.records();
    let header = match rows.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::Format(format!("unreadable header: {e}"))),
        None => return Err(Error::Format("empty trace file: missing header".into())),
    };
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "bad header {:?}, expected {}",
            header.iter().collect::<Vec<_>>(),
            TRACE_HEADER.join(",")
        )));
    }

    let mut out = Vec::new();
    for (idx, row) in rows.enumerate() {
        // Line 1 is the header.
        let line = idx + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if row.len() != TRACE_HEADER.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, got {}", TRACE_HEADER.len(), row.len()),
            });
        }
        fn field<T: FromStr>(row: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
            row[i].trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid {} value {:?}", TRACE_HEADER[i], &row[i]),
            })
        }
        let reuse: i64 = field(&row, 5, line)?;
        let reuse_dist = match reuse {
            -1 => None,
            h if h >= 0 => Some(h as u64),
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("invalid reuse_dist {reuse}"),
                })
            }
        };
        let label = match &row[6] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line,
                    msg: format!("invalid label {other:?}"),
                })
            }
        };
        let seq_len: u32 = field(&row, 4, line)?;
        if seq_len == 0 {
            return Err(Error::Parse {
                line,
                msg: "seq_len must be positive".into(),
            });
        }
        out.push(AccessRecord {
            t: field(&row, 0, line)?,
            line_id: field(&row, 1, line)?,
            access_type: row[2].parse().map_err(|msg| Error::Parse { line, msg })?,
            feature_hash: field(&row, 3, line)?,
            seq_len,
            reuse_dist,
            label,
            token_id: field(&row, 7, line)?,
        });
    }
    Ok(out)
}

pub fn write_trace(trace: &[AccessRecord], path: &Path) -> Result<()> {
    fsio::write_atomic(path, &trace_to_csv(trace)?)
}

pub fn read_trace(path: &Path) -> Result<Vec<AccessRecord>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    trace_from_csv(&data)
}

/// Checks the ordering invariants of a trace (non-decreasing time and token).
pub fn check_ordering(trace: &[AccessRecord]) -> Result<()> {
    for (i, w) in trace.windows(2).enumerate() {
        if w[1].t < w[0].t {
            return Err(Error::InvalidInput(format!(
                "timestamp decreases at record {}",
                i + 1
            )));
        }
        if w[1].token_id < w[0].token_id {
            return Err(Error::InvalidInput(format!(
                "token_id decreases at record {}",
                i + 1
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: u64, line_id: u64) -> AccessRecord {
        AccessRecord {
            t,
            line_id,
            access_type: AccessType::KvRead,
            feature_hash: 0,
            seq_len: 1,
            reuse_dist: None,
            label: false,
            token_id: 0,
        }
    }

    fn from_lines(lines: &[u64]) -> Vec<AccessRecord> {
        lines
            .iter()
            .enumerate()
            .map(|(i, &l)| rec(i as u64, l))
            .collect()
    }

    fn labels(lines: &[u64], w: usize) -> Vec<bool> {
        let mut t = from_lines(lines);
        compute_reuse_labels(&mut t, w);
        t.iter().map(|r| r.label).collect()
    }

    fn distances(lines: &[u64]) -> Vec<Option<u64>> {
        let mut t = from_lines(lines);
        compute_reuse_distance(&mut t);
        t.iter().map(|r| r.reuse_dist).collect()
    }

    #[test]
    fn minimal_generation_counts() {
        let cfg = GenConfig {
            num_tokens: 1,
            embedding_table_lines: 10,
            embedding_lookups_per_token: 1,
            zipf_exponent: 1.0,
            kv_lines_per_token: 1,
            weight_lines_per_token: 0,
            kv_scan_fraction: 0.5,
            seed: 3,
        };
        let trace = generate_trace(&cfg).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!(trace[0].access_type, AccessType::Embedding);
        assert_eq!(trace[1].access_type, AccessType::KvAppend);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig {
            seed: 42,
            ..GenConfig::default()
        };
        let a = trace_to_csv(&generate_trace(&cfg).unwrap()).unwrap();
        let b = trace_to_csv(&generate_trace(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = trace_to_csv(&generate_trace(&GenConfig { seed: 43, ..cfg }).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_trace_shape() {
        let cfg = GenConfig::default();
        let trace = generate_trace(&cfg).unwrap();
        check_ordering(&trace).unwrap();
        let mut kv_next = KV_BASE;
        for r in &trace {
            assert_eq!(r.seq_len as u64, r.token_id + 1);
            match r.access_type {
                AccessType::KvAppend => {
                    assert_eq!(r.line_id, kv_next);
                    kv_next += 1;
                }
                AccessType::KvRead => assert!(r.line_id < kv_next),
                AccessType::Weight => {
                    assert!(r.line_id - WEIGHT_BASE < cfg.weight_lines_per_token)
                }
                AccessType::Embedding => assert!(r.line_id < cfg.embedding_table_lines),
            }
        }
        let mut seen = std::collections::HashSet::new();
        for r in &trace {
            assert_eq!(r.reuse_dist.is_none(), seen.insert(r.line_id));
        }
    }

    #[test]
    fn kv_scans_are_ascending_and_distinct() {
        let trace = generate_trace(&GenConfig {
            kv_scan_fraction: 0.3,
            ..GenConfig::default()
        })
        .unwrap();
        for token in 0..256 {
            let reads: Vec<u64> = trace
                .iter()
                .filter(|r| r.token_id == token && r.access_type == AccessType::KvRead)
                .map(|r| r.line_id)
                .collect();
            assert!(reads.windows(2).all(|w| w[0] < w[1]));
            let expected = (0.3 * (token * 4) as f64).round() as usize;
            assert_eq!(reads.len(), expected);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            GenConfig {
                num_tokens: 0,
                ..GenConfig::default()
            },
            GenConfig {
                zipf_exponent: f64::NAN,
                ..GenConfig::default()
            },
            GenConfig {
                kv_scan_fraction: 1.5,
                ..GenConfig::default()
            },
        ] {
            assert!(matches!(generate_trace(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn label_examples() {
        assert_eq!(labels(&[1, 2, 1], 2), [true, false, false]);
        assert_eq!(labels(&[1, 2, 1], 1), [false, false, false]);
        assert_eq!(labels(&[1, 1, 1, 2], 0), [false; 4]);
        assert_eq!(labels(&[1, 2, 3, 4], 1024), [false; 4]);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distances(&[1, 1]), [None, Some(0)]);
        assert_eq!(distances(&[1, 2, 1]), [None, None, Some(1)]);
        assert_eq!(distances(&[1, 2, 2, 1]), [None, None, Some(0), Some(1)]);
        assert_eq!(
            distances(&[1, 2, 3, 2, 1, 3]),
            [None, None, None, Some(1), Some(2), Some(2)]
        );
    }

    #[test]
    fn bucket_boundaries() {
        let expected = |h: u64| match h {
            0 => 0,
            1 | 2 => 1,
            3..=8 => 2,
            9..=64 => 3,
            65..=1024 => 4,
            _ => 5,
        };
        for h in 0..=2000u64 {
            assert_eq!(reuse_bucket(Some(h)), expected(h), "h = {h}");
        }
        assert_eq!(reuse_bucket(None), 5);
        assert_eq!(reuse_bucket(Some(5)), 2);
    }

    #[test]
    fn feature_layout() {
        let mut r = rec(100, 77);
        r.access_type = AccessType::Embedding;
        r.reuse_dist = Some(5);
        r.seq_len = 2048;
        let x = extract_features(&r, Some(99)).0;
        assert_eq!(x.len(), FEATURE_DIM);
        assert!(x.iter().all(|v| v.is_finite()));
        assert_eq!(&x[1..5], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&x[5..11], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(x[11..15].iter().all(|v| v.abs() == 1.0));
        assert_eq!(x[15], 0.5);
        assert_eq!(x[0], 1.0 / 32.0);

        let first = extract_features(&rec(0, 77), None).0;
        assert_eq!(first[0], 1.0);
        assert_eq!(first[10], 1.0);

        let mut long = rec(u64::MAX, 1);
        long.seq_len = u32::MAX;
        let y = extract_features(&long, Some(0)).0;
        assert_eq!(y[0], 1.0);
        assert_eq!(y[15], 1.0);
    }

    #[test]
    fn hash_code_is_balanced() {
        for c in 0..4 {
            let ones = (0..4000u64).filter(|&l| hash_code(l, c) > 0.0).count();
            assert!((1700..2300).contains(&ones), "component {c}: {ones}");
        }
    }

    #[test]
    fn split_sizes() {
        let v: Vec<u32> = (0..100).collect();
        let (a, b, c) = split_dataset(&v).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (70, 15, 15));
        let joined: Vec<u32> = a.into_iter().chain(b).chain(c).collect();
        assert_eq!(joined, v);

        let (a, b, c) = split_dataset(&v[..20]).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (14, 3, 3));
        assert!(split_dataset(&v[..19]).is_err());
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(trace_from_csv(b""), Err(Error::Format(_))));
        assert!(matches!(
            trace_from_csv(b"a,b,c\n1,2,3\n"),
            Err(Error::Format(_))
        ));
        let bad = format!(
            "{}\n0,1,KV_READ,0,1,-1,0,0\nx,1,KV_READ,0,1,-1,0,0\n",
            TRACE_HEADER.join(",")
        );
        match trace_from_csv(bad.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains('t'));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_type = format!("{}\n0,1,STORE,0,1,-1,0,0\n", TRACE_HEADER.join(","));
        assert!(matches!(
            trace_from_csv(bad_type.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn csv_round_trip_file() {
        let mut trace = generate_trace(&GenConfig::default()).unwrap();
        compute_reuse_labels(&mut trace, 64);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trace(&trace, &path).unwrap();
        assert_eq!(read_trace(&path).unwrap(), trace);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text
            .starts_with("t,line_id,access_type,feature_hash,seq_len,reuse_dist,label,token_id\n"));
    }

    #[test]
    fn gen_config_json_field_names() {
        let json = serde_json::to_value(GenConfig::default()).unwrap();
        let obj = json.as_object().unwrap();
        for k in [
            "num_tokens",
            "embedding_table_lines",
            "zipf_exponent",
            "kv_lines_per_token",
            "weight_lines_per_token",
            "kv_scan_fraction",
            "seed",
        ] {
            assert!(obj.contains_key(k), "{k}");
        }
        let parsed: GenConfig = serde_json::from_str(
            r#"{"num_tokens":2,"embedding_table_lines":5,"zipf_exponent":1.1,
                "kv_lines_per_token":1,"weight_lines_per_token":0,
                "kv_scan_fraction":0.0,"seed":9}"#,
        )
        .unwrap();
        assert_eq!(parsed.embedding_lookups_per_token, 1);
        assert!(serde_json::from_str::<GenConfig>(r#"{"num_tokens":2,"bogus":1}"#).is_err());
    }
}

use std::collections::HashSet;

use acpc_core::predictor::Dataset;
use acpc_core::trace::{
    compute_reuse_distance, compute_reuse_labels, generate_trace, next_line_labels,
    prefetch_candidate_features, trace_features, AccessRecord, AccessType, GenConfig,
};
use proptest::prelude::*;

fn records(lines: &[u64]) -> Vec<AccessRecord> {
    lines
        .iter()
        .enumerate()
        .map(|(i, &line_id)| AccessRecord {
            t: i as u64,
            line_id,
            access_type: AccessType::Embedding,
            feature_hash: 0,
            seq_len: 1,
            reuse_dist: None,
            label: false,
            token_id: 0,
        })
        .collect()
}

fn brute_label(lines: &[u64], i: usize, target: u64, window: usize) -> bool {
    lines[i + 1..].iter().take(window).any(|&l| l == target)
}

fn brute_distance(lines: &[u64], i: usize) -> Option<u64> {
    let p = lines[..i].iter().rposition(|&l| l == lines[i])?;
    Some(lines[p + 1..i].iter().collect::<HashSet<_>>().len() as u64)
}

proptest! {
    #[test]
    fn labels_and_distances_match_scans(
        lines in prop::collection::vec(0u64..24, 1..300),
        window in 1usize..40,
    ) {
        let mut trace = records(&lines);
        compute_reuse_labels(&mut trace, window);
        compute_reuse_distance(&mut trace);
        let next = next_line_labels(&trace, window);
        for i in 0..lines.len() {
            prop_assert_eq!(trace[i].label, brute_label(&lines, i, lines[i], window));
            prop_assert_eq!(trace[i].reuse_dist, brute_distance(&lines, i));
            prop_assert_eq!(next[i], brute_label(&lines, i, lines[i] + 1, window));
        }
    }
}

#[test]
fn next_line_label_examples() {
    let trace = records(&[10, 11, 5, 20, 6]);
    assert_eq!(
        next_line_labels(&trace, 3),
        [true, false, true, false, false]
    );
    assert_eq!(
        next_line_labels(&trace, 1),
        [true, false, false, false, false]
    );
}

#[test]
fn candidate_features_describe_unseen_weight_line() {
    let trace = records(&[7]);
    let x = prefetch_candidate_features(&trace[0], 8);
    assert_eq!(x.0[0], 1.0);
    assert_eq!(x.0[4], 1.0);
    assert_eq!(x.0[10], 1.0);
}

#[test]
fn candidate_examples_extend_dataset() {
    let trace = generate_trace(&GenConfig {
        num_tokens: 20,
        ..GenConfig::default()
    })
    .unwrap();
    let base = Dataset::from_trace(&trace);
    let n = base.len();
    let ds = base.with_prefetch_candidates(&trace, 64, 10);
    assert_eq!(ds.len(), n + 10);
    let labels = next_line_labels(&trace, 64);
    let features = trace_features(&trace);
    for k in 0..10 {
        let i = k * trace.len() / 10;
        let ex = ds.example(n + k);
        assert_eq!(ex.label, f64::from(u8::from(labels[i])));
        assert_eq!(ex.window[ex.window.len() - 2], features[i]);
        assert_eq!(
            ex.window[ex.window.len() - 1],
            prefetch_candidate_features(&trace[i], trace[i].line_id + 1)
        );
    }
    let thin = ds.thin(n / 2);
    assert_eq!(thin.len(), n / 2);
}

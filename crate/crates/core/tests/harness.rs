use std::collections::HashMap;

use acpc_core::cache::{CacheConfig, LevelGeometry, Policy, Simulator};
use acpc_core::harness::{
    compare_table, fan_out, online_feedback_loop, run_experiment, run_policy, Baselines,
    ExperimentConfig, Models, OnlineConfig,
};
use acpc_core::metrics::MetricsReport;
use acpc_core::predictor::{AnyModel, MlpParams, TcnParams, TrainConfig};
use acpc_core::trace::{generate_trace, write_trace, AccessRecord, GenConfig};
use proptest::prelude::*;

fn cache(policy: Policy) -> CacheConfig {
    let geo = |sets, ways| LevelGeometry {
        line_size: 64,
        sets,
        ways,
    };
    let mut cfg = CacheConfig {
        l1: geo(8, 2),
        l2: geo(16, 4),
        l3: geo(32, 4),
        policy,
        ..CacheConfig::default()
    };
    cfg.prefetcher.enabled = true;
    cfg
}

fn trace(tokens: u64, seed: u64) -> Vec<AccessRecord> {
    generate_trace(&GenConfig {
        num_tokens: tokens,
        embedding_table_lines: 512,
        embedding_lookups_per_token: 6,
        weight_lines_per_token: 12,
        seed,
        ..GenConfig::default()
    })
    .unwrap()
}

fn learned_models() -> [(Policy, AnyModel); 2] {
    [
        (Policy::Parm, AnyModel::Tcn(TcnParams::init(11))),
        (Policy::Mlp, AnyModel::Mlp(MlpParams::init(12))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lru_against_itself_has_zero_penalty_reduction(
        tokens in 1u64..80,
        trace_seed in any::<u64>(),
        sim_seed in any::<u64>(),
        prefetch in any::<bool>(),
    ) {
        let t = trace(tokens, trace_seed);
        let mut cfg = cache(Policy::Lru);
        cfg.prefetcher.enabled = prefetch;
        let r = run_policy(&t, "t", Policy::Lru, &cfg, None, sim_seed, &Baselines::new()).unwrap();
        prop_assert_eq!(r.report.mpr_pct, 0.0);
        prop_assert!(r.report.mpr_pct.is_sign_positive());
    }
}

#[test]
fn baseline_is_simulated_once_per_trace_and_seed() {
    let t = trace(40, 1);
    let baselines = Baselines::new();
    let model = AnyModel::Tcn(TcnParams::init(0));
    for policy in [Policy::Lru, Policy::Random, Policy::Srrip, Policy::Lru] {
        run_policy(&t, "a", policy, &cache(policy), None, 0, &baselines).unwrap();
    }
    run_policy(
        &t,
        "a",
        Policy::Parm,
        &cache(Policy::Parm),
        Some(&model),
        0,
        &baselines,
    )
    .unwrap();
    assert_eq!(baselines.simulations(), 1);
    run_policy(
        &t,
        "a",
        Policy::Srrip,
        &cache(Policy::Srrip),
        None,
        1,
        &baselines,
    )
    .unwrap();
    run_policy(
        &t,
        "b",
        Policy::Srrip,
        &cache(Policy::Srrip),
        None,
        1,
        &baselines,
    )
    .unwrap();
    assert_eq!(baselines.simulations(), 3);
}

#[test]
fn baseline_counters_match_a_direct_lru_run() {
    let t = trace(60, 2);
    let r = run_policy(
        &t,
        "t",
        Policy::Srrip,
        &cache(Policy::Srrip),
        None,
        4,
        &Baselines::new(),
    )
    .unwrap();
    let lru = Simulator::run(&cache(Policy::Lru), &t, None, 4).unwrap();
    let direct = Simulator::run(&cache(Policy::Srrip), &t, None, 4).unwrap();
    assert_eq!(r.counters, direct);
    let expected = MetricsReport::from_counters(&direct, &lru, "SRRIP", "t", 4).unwrap();
    assert_eq!(r.report, expected);
}

#[test]
fn learned_policies_require_matching_models() {
    let t = trace(10, 0);
    let b = Baselines::new();
    let tcn = AnyModel::Tcn(TcnParams::init(0));
    let mlp = AnyModel::Mlp(MlpParams::init(0));
    let err = |r: acpc_core::Result<_>| r.err().map(|e: acpc_core::Error| e.category());
    assert_eq!(
        err(run_policy(
            &t,
            "t",
            Policy::Parm,
            &cache(Policy::Parm),
            None,
            0,
            &b
        )),
        Some("config")
    );
    assert_eq!(
        err(run_policy(
            &t,
            "t",
            Policy::Parm,
            &cache(Policy::Parm),
            Some(&mlp),
            0,
            &b
        )),
        Some("config")
    );
    assert_eq!(
        err(run_policy(
            &t,
            "t",
            Policy::Mlp,
            &cache(Policy::Mlp),
            Some(&tcn),
            0,
            &b
        )),
        Some("config")
    );
    assert!(run_policy(&t, "t", Policy::Mlp, &cache(Policy::Mlp), Some(&mlp), 0, &b).is_ok());
    assert_eq!(
        err(run_policy(
            &[],
            "t",
            Policy::Lru,
            &cache(Policy::Lru),
            None,
            0,
            &b
        )),
        Some("input")
    );
}

#[test]
fn online_with_zero_learning_rate_matches_offline_run() {
    let t = trace(120, 3);
    let train = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let online = OnlineConfig {
        enabled: true,
        batch_tokens: 8,
        resolution_window: 200,
    };
    for (policy, model) in learned_models() {
        for seed in [0, 9] {
            let b = Baselines::new();
            let cfg = cache(policy);
            let offline = run_policy(&t, "t", policy, &cfg, Some(&model), seed, &b).unwrap();
            let out =
                online_feedback_loop(&t, "t", &model, &cfg, &train, &online, seed, &b).unwrap();
            assert_eq!(out.result.counters, offline.counters);
            assert_eq!(out.result.report, offline.report);
            assert_eq!(out.model, model);
            assert_eq!(out.stats.updates, 120 / 8);
            assert_eq!(b.simulations(), 1);
        }
    }
}

#[test]
fn online_batch_longer_than_trace_never_updates() {
    let t = trace(30, 4);
    let online = OnlineConfig {
        enabled: true,
        batch_tokens: 31,
        resolution_window: 64,
    };
    let train = TrainConfig {
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    for (policy, model) in learned_models() {
        let b = Baselines::new();
        let out =
            online_feedback_loop(&t, "t", &model, &cache(policy), &train, &online, 0, &b).unwrap();
        assert_eq!(out.stats.updates, 0);
        assert!(out.loss_curve.is_empty());
        assert_eq!(out.model, model);
        let offline = run_policy(&t, "t", policy, &cache(policy), Some(&model), 0, &b).unwrap();
        assert_eq!(out.result.counters, offline.counters);
    }
}

#[test]
fn online_labels_account_for_every_l2_fill() {
    let t = trace(90, 5);
    let online = OnlineConfig {
        enabled: true,
        batch_tokens: 10,
        resolution_window: 128,
    };
    let train = TrainConfig {
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    for (policy, model) in learned_models() {
        let out = online_feedback_loop(
            &t,
            "t",
            &model,
            &cache(policy),
            &train,
            &online,
            1,
            &Baselines::new(),
        )
        .unwrap();
        let s = out.stats;
        let c = &out.result.counters;
        assert_eq!(s.fills, c.l2.misses + c.prefetch_insertions);
        assert_eq!(
            s.fills,
            s.resolved_at_eviction + s.resolved_by_window + s.censored
        );
        assert_eq!(s.updates, 9);
        assert_eq!(out.loss_curve.len(), 9);
        assert!(s.examples <= s.resolved_at_eviction + s.resolved_by_window);
        assert_ne!(out.model, model);
    }
}

#[test]
fn online_rejects_bad_settings() {
    let t = trace(10, 0);
    let (policy, model) = learned_models()[0].clone();
    let b = Baselines::new();
    let train = TrainConfig::default();
    let zero = OnlineConfig {
        batch_tokens: 0,
        ..OnlineConfig::default()
    };
    assert!(online_feedback_loop(&t, "t", &model, &cache(policy), &train, &zero, 0, &b).is_err());
    let lru = online_feedback_loop(
        &t,
        "t",
        &model,
        &cache(Policy::Lru),
        &train,
        &OnlineConfig::default(),
        0,
        &b,
    );
    assert_eq!(lru.unwrap_err().category(), "config");
}

fn reference_report(policy: &str, chr: f64, ppr: f64, mpr: f64, tgt: f64) -> MetricsReport {
    MetricsReport {
        chr_pct: chr,
        ppr_pct: ppr,
        mpr_pct: mpr,
        mal_cycles: 0.0,
        emu_pct: 0.0,
        tgt_tokens_per_mcycle: tgt,
        policy: policy.into(),
        trace_id: "reference".into(),
        seed: 0,
    }
}

#[test]
fn reference_rows_give_expected_improvements() {
    let reports = [
        reference_report("LRU", 78.4, 12.6, 0.0, 196.0),
        reference_report("MLP", 82.3, 10.8, 15.5, 214.0),
        reference_report("PARM", 89.6, 6.3, 24.8, 248.0),
    ];
    let losses = HashMap::from([("PARM".to_string(), 0.21)]);
    let table = compare_table(&reports, &losses).unwrap();
    let vs_mlp = table
        .derived
        .iter()
        .find(|d| d.candidate == "PARM" && d.baseline == "MLP")
        .unwrap();
    let close = |got: Option<f64>, want: f64| (got.unwrap() - want).abs() <= 0.05;
    assert!(close(vs_mlp.pollution_reduction, 41.7));
    assert!(close(vs_mlp.chr_gain, 8.9));
    assert!(close(vs_mlp.mpr_gain, 60.0));
    assert!(close(vs_mlp.tgt_gain, 15.9));
    let csv = String::from_utf8(table.to_csv().unwrap()).unwrap();
    assert!(csv.contains("PARM,89.6000,6.3000,24.8000,248.0000,0.2100"));
    assert!(csv.contains("PARM vs MLP (relative %),8.8700,41.6667,60.0000,15.8879,"));
    let vs_lru = table
        .derived
        .iter()
        .find(|d| d.candidate == "MLP" && d.baseline == "LRU")
        .unwrap();
    assert_eq!(vs_lru.mpr_gain, None);
}

#[test]
fn fan_out_preserves_order() {
    let items: Vec<u64> = (0..37).collect();
    let serial = fan_out(&items, 1, |&x| x * x + 1);
    for jobs in [2, 4, 64] {
        assert_eq!(fan_out(&items, jobs, |&x| x * x + 1), serial);
    }
}

#[test]
fn experiment_writes_reports_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decode.csv");
    write_trace(&trace(50, 6), &path).unwrap();
    let cfg = ExperimentConfig {
        traces: vec![path],
        policies: vec![Policy::Lru, Policy::Srrip, Policy::Parm],
        cache: cache(Policy::Lru),
        train: TrainConfig::default(),
        online: OnlineConfig::default(),
        seeds: vec![0, 1],
        output_dir: dir.path().join("out"),
    };
    let models = Models {
        tcn: Some(AnyModel::Tcn(TcnParams::init(3))),
        mlp: None,
    };
    let serial = run_experiment(&cfg, &models, 1).unwrap();
    let first_table = std::fs::read(dir.path().join("out/decode/comparison.csv")).unwrap();
    let parallel = run_experiment(&cfg, &models, 4).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial.len(), 6);
    assert_eq!(
        std::fs::read(dir.path().join("out/decode/comparison.csv")).unwrap(),
        first_table
    );
    for name in ["lru_0", "lru_1", "srrip_0", "srrip_1", "parm_0", "parm_1"] {
        assert!(dir
            .path()
            .join(format!("out/decode/{name}.metrics.json"))
            .exists());
    }
    assert!(!dir.path().join("out/decode/loss_curve.csv").exists());

    let online_cfg = ExperimentConfig {
        online: OnlineConfig {
            enabled: true,
            batch_tokens: 10,
            resolution_window: 128,
        },
        output_dir: dir.path().join("online"),
        ..cfg.clone()
    };
    run_experiment(&online_cfg, &models, 2).unwrap();
    let out = dir.path().join("online/decode");
    let first = std::fs::read(out.join("parm_0.loss_curve.csv")).unwrap();
    assert_eq!(std::fs::read(out.join("loss_curve.csv")).unwrap(), first);
    assert!(out.join("parm_1.loss_curve.csv").exists());
    assert!(!out.join("lru_0.loss_curve.csv").exists());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("epoch_or_batch,loss\n1,"));
    assert_eq!(text.lines().count(), 1 + 5);

    let no_model = Models::default();
    assert!(run_experiment(&cfg, &no_model, 1).is_err());
}

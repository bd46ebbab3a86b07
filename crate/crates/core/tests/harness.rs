use std::f64::consts::FRAC_PI_2;

use shiftex::aggregator::{partition_shifted, signal_local_finetune, train_expert, ExpertRegistry};
use shiftex::config::{MethodKind, RunConfig};
use shiftex::dataset::Dataset;
use shiftex::harness::{evaluate_parties, prepare, run_experiment, PartyWindow};
use shiftex::models::{evaluate, TrainConfig};
use shiftex::party::{build_profile, detect_shift, PartyReport};
use shiftex::rng::rng_for;
use shiftex::stream::{
    sample_window, ActiveShift, CovariateTransform, PartyStream, ShiftEvent, TransformKind,
};

fn regime(dim: usize) -> ActiveShift {
    let transform = CovariateTransform::new(vec![
        TransformKind::Rotation { angle: FRAC_PI_2 },
        TransformKind::Shift {
            offset: vec![1.5; dim],
        },
        TransformKind::GaussianNoise { sigma: 0.5 },
    ])
    .unwrap();
    ActiveShift {
        transform,
        ..Default::default()
    }
}

fn stream(cfg: &RunConfig, party: usize) -> PartyStream {
    PartyStream {
        party_id: party,
        base: cfg.mixture().unwrap(),
        seed: 99,
    }
}

#[test]
fn null_schedule_has_no_accuracy_drop() {
    let cfg = RunConfig {
        events: Vec::new(),
        ..RunConfig::default()
    };
    let log = run_experiment(&cfg).unwrap();
    for m in &log.methods {
        for w in &m.windows {
            assert!(
                w.accuracy_drop.abs() < 3.0,
                "{} window {}: drop {}",
                m.method,
                w.window_index,
                w.accuracy_drop
            );
        }
    }
}

#[test]
fn recurring_regime_reuses_its_expert() {
    let dim = RunConfig::default().feature_dim;
    let everyone = |window_index, transform| ShiftEvent {
        window_index,
        affected_fraction: 1.0,
        covariate: Some(transform),
        label_dirichlet_alpha: None,
    };
    let cfg = RunConfig {
        methods: vec![MethodKind::Shiftex],
        windows: 3,
        events: vec![
            everyone(1, regime(dim).transform),
            everyone(2, CovariateTransform::identity()),
        ],
        ..RunConfig::default()
    };
    let log = run_experiment(&cfg).unwrap();
    let shiftex = log.method(MethodKind::Shiftex).unwrap();
    assert_eq!(shiftex.final_experts, 2);
    let last = shiftex.snapshots.last().unwrap();
    let home = last
        .experts
        .iter()
        .find(|e| e.id.0 == 0)
        .expect("bootstrap expert survives");
    // Parties missed by detection or left in small groups keep their expert.
    assert!(
        home.assigned_parties.len() * 10 >= cfg.parties * 8,
        "{} parties back home",
        home.assigned_parties.len()
    );
}

#[test]
fn planted_regime_expert_beats_bootstrap_model() {
    let cfg = RunConfig::default();
    let theta0 = prepare(&cfg).unwrap().boot.theta0;
    let shifted = regime(cfg.feature_dim);
    let data: Vec<Dataset> = (0..10)
        .map(|p| {
            sample_window(
                &stream(&cfg, p),
                &shifted,
                160,
                &mut rng_for(1, &[p as u64]),
            )
            .unwrap()
        })
        .collect();
    let cohort: Vec<usize> = (0..10).collect();
    let expert = train_expert(&theta0, &cohort, &data, &cfg.train, 15, 3).unwrap();
    let held_out = sample_window(&stream(&cfg, 50), &shifted, 2000, &mut rng_for(2, &[])).unwrap();
    let before = 100.0 * evaluate(&theta0, &held_out).unwrap();
    let after = 100.0 * evaluate(&expert, &held_out).unwrap();
    assert!(
        after >= before + 10.0,
        "theta0 {before:.1}%, expert {after:.1}%"
    );
}

#[test]
fn local_finetune_helps_on_next_window() {
    let cfg = RunConfig::default();
    let theta0 = prepare(&cfg).unwrap().boot.theta0;
    let shifted = regime(cfg.feature_dim);
    let s = stream(&cfg, 0);
    let now = sample_window(&s, &shifted, 160, &mut rng_for(3, &[0])).unwrap();
    let next = sample_window(&s, &shifted, 400, &mut rng_for(3, &[1])).unwrap();
    let registry = ExpertRegistry::empty();
    let tuned = signal_local_finetune(&[0], &registry, &theta0, &[now], &cfg.train, 4).unwrap();
    let personal = evaluate(&tuned[&0], &next).unwrap();
    assert!(personal >= evaluate(&theta0, &next).unwrap());
    assert!(registry.is_empty());
}

#[test]
fn planted_shift_partition_is_recovered() {
    let cfg = RunConfig::default();
    let prep = prepare(&cfg).unwrap();
    let encoder = &prep.boot.theta0;
    let shifted = regime(cfg.feature_dim);
    let reports: Vec<PartyReport> = (0..40)
        .map(|p| {
            let s = stream(&cfg, p);
            let prev_data = sample_window(
                &s,
                &ActiveShift::default(),
                160,
                &mut rng_for(5, &[p as u64, 0]),
            )
            .unwrap();
            let active = if p < 10 {
                shifted.clone()
            } else {
                ActiveShift::default()
            };
            let cur = sample_window(&s, &active, 160, &mut rng_for(5, &[p as u64, 1])).unwrap();
            let prev = build_profile(
                encoder,
                &prev_data,
                cfg.m_profile,
                &mut rng_for(5, &[p as u64, 2]),
            )
            .unwrap();
            let hist = prev_data.label_histogram().unwrap();
            let mut rng = rng_for(5, &[p as u64, 3]);
            detect_shift(
                p,
                1,
                Some((&prev, &hist)),
                &cur,
                encoder,
                cfg.bandwidth,
                cfg.m_profile,
                &mut rng,
            )
            .unwrap()
        })
        .collect();
    let partition = partition_shifted(&reports, &prep.thresholds);
    let true_pos = partition.shifted.iter().filter(|&&p| p < 10).count() as f64;
    let precision = true_pos / partition.shifted.len() as f64;
    let recall = true_pos / 10.0;
    // 30 null parties at a 5% rate per statistic can add a few false alarms.
    assert!(recall >= 0.95, "recall {recall}");
    assert!(precision >= 0.6, "precision {precision}");
}

#[test]
fn aggregate_accuracy_weights_by_test_size() {
    let cfg = RunConfig::default();
    let theta0 = prepare(&cfg).unwrap().boot.theta0;
    let s = stream(&cfg, 0);
    let small = sample_window(&s, &ActiveShift::default(), 10, &mut rng_for(6, &[0])).unwrap();
    let large = sample_window(&s, &regime(cfg.feature_dim), 90, &mut rng_for(6, &[1])).unwrap();
    let a_small = evaluate(&theta0, &small).unwrap();
    let a_large = evaluate(&theta0, &large).unwrap();
    let window = vec![
        PartyWindow {
            train: small.clone(),
            test: small,
        },
        PartyWindow {
            train: large.clone(),
            test: large,
        },
    ];
    let agg = evaluate_parties(&window, |_| &theta0).unwrap();
    let expected = 100.0 * (10.0 * a_small + 90.0 * a_large) / 100.0;
    assert!((agg - expected).abs() < 1e-9, "{agg} vs {expected}");
}

#[test]
fn fedprox_baseline_requires_positive_coefficient() {
    let cfg = RunConfig {
        fedprox_mu: 0.0,
        ..RunConfig::default()
    };
    assert!(cfg.validate().is_err());
    let train = TrainConfig {
        prox_coefficient: -1.0,
        ..TrainConfig::default()
    };
    assert!(train.validate().is_err());
}

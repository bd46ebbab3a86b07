//! End-to-end experiments: stream generation, a shared bootstrap, ShiftEx
//! and global-model baselines, per-round evaluation and window metrics.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::lifecycle::federated_round;
use crate::aggregator::selection::cohort_size;
use crate::aggregator::{
    bootstrap, calibrate_thresholds, run_window, AggregatorState, BootstrapOutcome, Calibration,
    RegistrySnapshot, ShiftExConfig, Thresholds,
};
use crate::config::{MethodKind, RunConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{evaluate, ModelParams, TrainConfig};
use crate::party::{PartyReport, PartyState};
use crate::rng::{derive_seed, rng_for, tag};
use crate::stream::{apply_schedule, assemble_window, sample_window, ActiveShift, PartyStream};

/// Rounds needed to regain 95% of the pre-shift accuracy, or a marker that
/// the window ended first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryTime {
    Rounds(usize),
    Beyond(usize),
}

impl RecoveryTime {
    /// Comparable value: unrecovered windows rank after every round count.
    pub fn rank(self) -> usize {
        match self {
            RecoveryTime::Rounds(r) => r,
            RecoveryTime::Beyond(h) => h + 1,
        }
    }
}

impl fmt::Display for RecoveryTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecoveryTime::Rounds(r) => write!(f, "{r}"),
            RecoveryTime::Beyond(h) => write!(f, ">{h}"),
        }
    }
}

impl Serialize for RecoveryTime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Pre-shift accuracy minus the first post-shift round, in points.
pub fn accuracy_drop(pre_shift: f64, series: &[f64]) -> Result<f64> {
    let first = series
        .first()
        .ok_or(Error::Empty("post-shift accuracy series"))?;
    Ok(pre_shift - first)
}

/// 1-based index of the first round reaching 95% of `pre_shift`.
pub fn recovery_time(pre_shift: f64, series: &[f64], horizon: usize) -> RecoveryTime {
    let target = 0.95 * pre_shift;
    series
        .iter()
        .position(|&a| a >= target)
        .map_or(RecoveryTime::Beyond(horizon), |i| {
            RecoveryTime::Rounds(i + 1)
        })
}

pub fn max_accuracy(series: &[f64]) -> Result<f64> {
    series
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(Error::Empty("accuracy series"))
}

/// Sample-count weighted mean of per-party accuracies.
pub fn aggregate_accuracy(parts: &[(f64, usize)]) -> Result<f64> {
    let total: usize = parts.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Empty("evaluation data"));
    }
    Ok(parts.iter().map(|(a, n)| a * *n as f64).sum::<f64>() / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowMetrics {
    pub window_index: usize,
    pub pre_shift_accuracy: f64,
    pub accuracy_drop: f64,
    pub recovery_time: RecoveryTime,
    pub max_accuracy: f64,
    pub per_round_accuracy: Vec<f64>,
}

impl WindowMetrics {
    pub fn from_series(window_index: usize, pre_shift: f64, series: Vec<f64>) -> Result<Self> {
        Ok(Self {
            window_index,
            pre_shift_accuracy: pre_shift,
            accuracy_drop: accuracy_drop(pre_shift, &series)?,
            recovery_time: recovery_time(pre_shift, &series, series.len()),
            max_accuracy: max_accuracy(&series)?,
            per_round_accuracy: series,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: MethodKind,
    pub seed: u64,
    pub window: usize,
    pub round: usize,
    pub accuracy: f64,
    pub experts_active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: MethodKind,
    pub window: usize,
    pub drop: f64,
    pub time: RecoveryTime,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct MethodLog {
    pub method: MethodKind,
    pub windows: Vec<WindowMetrics>,
    pub rows: Vec<MetricRow>,
    pub snapshots: Vec<RegistrySnapshot>,
    pub final_experts: usize,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub seed: u64,
    pub calibration: Calibration,
    pub thresholds: Thresholds,
    /// Accuracy of the bootstrap model, the pre-shift reference for window 0.
    pub bootstrap_accuracy: f64,
    pub methods: Vec<MethodLog>,
}

impl RunLog {
    pub fn method(&self, kind: MethodKind) -> Option<&MethodLog> {
        self.methods.iter().find(|m| m.method == kind)
    }

    /// Writes metrics.csv, summary.csv and one registry snapshot per window;
    /// returns the paths written.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir)?;
        let mut written = Vec::new();
        let metrics = out_dir.join("metrics.csv");
        let mut w = csv::Writer::from_path(&metrics)?;
        for m in &self.methods {
            for row in &m.rows {
                w.serialize(row)?;
            }
        }
        w.flush()?;
        written.push(metrics);
        let summary = out_dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&summary)?;
        for m in &self.methods {
            for wm in &m.windows {
                w.serialize(SummaryRow {
                    method: m.method,
                    window: wm.window_index,
                    drop: wm.accuracy_drop,
                    time: wm.recovery_time,
                    max: wm.max_accuracy,
                })?;
            }
        }
        w.flush()?;
        written.push(summary);
        for m in &self.methods {
            for snap in &m.snapshots {
                let path = out_dir.join(format!("registry_w{}.json", snap.window));
                fs::write(&path, serde_json::to_string_pretty(snap)?)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

#[derive(Debug, Clone)]
pub struct PartyWindow {
    pub train: Dataset,
    pub test: Dataset,
}

/// All party data for a run: bootstrap windows, then evaluated windows.
#[derive(Debug, Clone)]
pub struct SimData {
    pub bootstrap: Vec<Vec<PartyWindow>>,
    pub windows: Vec<Vec<PartyWindow>>,
    /// Regime of every party at every evaluated window.
    pub regimes: Vec<Vec<ActiveShift>>,
}

impl SimData {
    pub fn train(window: &[PartyWindow]) -> Vec<Dataset> {
        window.iter().map(|w| w.train.clone()).collect()
    }
}

fn party_window(
    cfg: &RunConfig,
    stream: &PartyStream,
    regimes: &[ActiveShift],
    window: usize,
    key: u64,
) -> Result<PartyWindow> {
    let step = cfg.window.step();
    let p = stream.party_id as u64;
    let full = assemble_window(&cfg.window, window, |b| {
        // Sliding windows can reach past the last scheduled block.
        let regime = &regimes[b.min(regimes.len() - 1)];
        sample_window(
            stream,
            regime,
            step,
            &mut rng_for(cfg.seed, &[tag::STREAM, key, p, b as u64]),
        )
    })?;
    let (train, test) = full.split(
        cfg.train_fraction,
        &mut rng_for(cfg.seed, &[tag::SPLIT, key, p, window as u64]),
    );
    Ok(PartyWindow { train, test })
}

pub fn generate_data(cfg: &RunConfig) -> Result<SimData> {
    cfg.validate()?;
    let base = cfg.mixture()?;
    let stream_seed = derive_seed(cfg.seed, &[tag::STREAM]);
    let streams: Vec<PartyStream> = (0..cfg.parties)
        .map(|p| PartyStream {
            party_id: p,
            base: base.clone(),
            seed: stream_seed,
        })
        .collect();
    let schedule = cfg.schedule()?;
    let mut regimes = vec![vec![ActiveShift::default(); cfg.parties]];
    for w in 1..cfg.windows {
        let next = apply_schedule(&regimes[w - 1], &schedule, w, cfg.seed)?;
        regimes.push(next);
    }
    let per_party: Vec<Vec<ActiveShift>> = (0..cfg.parties)
        .map(|p| regimes.iter().map(|r| r[p].clone()).collect())
        .collect();
    let clean = vec![ActiveShift::default()];
    let build = |n_windows: usize, key: u64, bootstrap: bool| -> Result<Vec<Vec<PartyWindow>>> {
        (0..n_windows)
            .map(|w| {
                streams
                    .par_iter()
                    .map(|s| {
                        let r = if bootstrap {
                            &clean
                        } else {
                            &per_party[s.party_id]
                        };
                        party_window(cfg, s, r, w, key)
                    })
                    .collect()
            })
            .collect()
    };
    Ok(SimData {
        bootstrap: build(cfg.bootstrap_windows, tag::BOOTSTRAP, true)?,
        windows: build(cfg.windows, 0, false)?,
        regimes,
    })
}

/// Percent accuracy over every party's test split, each party using the
/// model returned by `model_for`.
pub fn evaluate_parties<'a>(
    window: &[PartyWindow],
    model_for: impl Fn(usize) -> &'a ModelParams + Sync,
) -> Result<f64> {
    let parts: Vec<(f64, usize)> = window
        .par_iter()
        .enumerate()
        .map(|(p, w)| Ok((evaluate(model_for(p), &w.test)?, w.test.len())))
        .collect::<Result<_>>()?;
    Ok(100.0 * aggregate_accuracy(&parts)?)
}

pub fn shiftex_config(cfg: &RunConfig, thresholds: Thresholds) -> ShiftExConfig {
    ShiftExConfig {
        thresholds,
        train: TrainConfig {
            prox_coefficient: 0.0,
            ..cfg.train
        },
        rounds_per_window: cfg.rounds_per_window,
        m_profile: cfg.m_profile,
        m_signature: cfg.m_signature,
        bandwidth: cfg.bandwidth,
        frozen_encoder: cfg.frozen_encoder,
    }
}

/// Bootstrap shared by all methods, plus calibrated thresholds.
pub struct Prepared {
    pub data: SimData,
    pub boot: BootstrapOutcome,
    pub calibration: Calibration,
    pub thresholds: Thresholds,
    pub bootstrap_accuracy: f64,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let data = generate_data(cfg)?;
    let placeholder = cfg.thresholds.resolve(&Calibration {
        delta_cov: 0.0,
        delta_label: 0.0,
        p_value: cfg.thresholds.p_value,
        n_null: 0,
    });
    let boot_train: Vec<Vec<Dataset>> = data.bootstrap.iter().map(|w| SimData::train(w)).collect();
    let boot = bootstrap(
        cfg.shape()?,
        &boot_train,
        &shiftex_config(cfg, placeholder),
        cfg.bootstrap_rounds,
        cfg.seed,
    )?;
    let calibration = calibrate_thresholds(&boot.null_reports, cfg.thresholds.p_value)?;
    let thresholds = cfg.thresholds.resolve(&calibration);
    let last = data.bootstrap.last().expect("validated bootstrap windows");
    let bootstrap_accuracy = evaluate_parties(last, |_| &boot.theta0)?;
    info!(
        "bootstrap accuracy {bootstrap_accuracy:.2}%, delta_cov {:.5}, delta_label {:.5}",
        thresholds.delta_cov, thresholds.delta_label
    );
    Ok(Prepared {
        data,
        boot,
        calibration,
        thresholds,
        bootstrap_accuracy,
    })
}

fn run_shiftex(cfg: &RunConfig, prep: &Prepared) -> Result<MethodLog> {
    let mut state = AggregatorState {
        theta0: prep.boot.theta0.clone(),
        registry: prep.boot.registry.clone(),
        config: shiftex_config(cfg, prep.thresholds),
        seed: cfg.seed,
    };
    let mut party_states: Vec<PartyState> = prep.boot.party_states.clone();
    let mut log = MethodLog {
        method: MethodKind::Shiftex,
        windows: Vec::new(),
        rows: Vec::new(),
        snapshots: Vec::new(),
        final_experts: 0,
    };
    let mut pre = prep.bootstrap_accuracy;
    for (w, window) in prep.data.windows.iter().enumerate() {
        let train = SimData::train(window);
        let reports: Vec<PartyReport> = party_states
            .par_iter_mut()
            .zip(&train)
            .map(|(ps, d)| {
                let mut rng = rng_for(cfg.seed, &[tag::PROFILE, w as u64, ps.party_id as u64]);
                ps.observe(
                    w,
                    d,
                    state.encoder_for(ps.party_id),
                    cfg.bandwidth,
                    cfg.m_profile,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        let mut series = Vec::with_capacity(cfg.rounds_per_window);
        let rows = &mut log.rows;
        let summary = run_window(&mut state, &reports, &train, w, |st, round| {
            let acc = evaluate_parties(window, |p| st.model_for(p))?;
            series.push(acc);
            rows.push(MetricRow {
                method: MethodKind::Shiftex,
                seed: cfg.seed,
                window: w,
                round: round + 1,
                accuracy: acc,
                experts_active: st.registry.len(),
            });
            Ok(())
        })?;
        info!(
            "shiftex window {w}: {} shifted, {} groups, {} created, {} matched, {} merges, {} experts",
            summary.shifted.len(),
            summary.groups,
            summary.created.len(),
            summary.matched,
            summary.merges.len(),
            summary.experts_active
        );
        let last = *series.last().expect("at least one round");
        log.windows
            .push(WindowMetrics::from_series(w, pre, series)?);
        log.snapshots.push(state.registry.snapshot(w));
        pre = last;
    }
    log.final_experts = state.registry.len();
    Ok(log)
}

fn run_global(cfg: &RunConfig, prep: &Prepared, method: MethodKind) -> Result<MethodLog> {
    let train_cfg = match method {
        MethodKind::FedproxGlobal => TrainConfig {
            prox_coefficient: cfg.fedprox_mu,
            ..cfg.train
        },
        _ => TrainConfig {
            prox_coefficient: 0.0,
            ..cfg.train
        },
    };
    let method_key = method as u64 + 1;
    let mut global = prep.boot.theta0.clone();
    let mut log = MethodLog {
        method,
        windows: Vec::new(),
        rows: Vec::new(),
        snapshots: Vec::new(),
        final_experts: 1,
    };
    let mut pre = prep.bootstrap_accuracy;
    let n = cfg.parties;
    let budget = cohort_size(n, cfg.thresholds.participant_fraction);
    for (w, window) in prep.data.windows.iter().enumerate() {
        let train = SimData::train(window);
        let mut series = Vec::with_capacity(cfg.rounds_per_window);
        for round in 0..cfg.rounds_per_window {
            let key = [tag::SELECT, method_key, w as u64, round as u64];
            let mut cohort = index::sample(&mut rng_for(cfg.seed, &key), n, budget).into_vec();
            cohort.sort_unstable();
            let train_seed =
                derive_seed(cfg.seed, &[tag::TRAIN, method_key, w as u64, round as u64]);
            global = federated_round(&global, &cohort, &train, &train_cfg, train_seed)?;
            let acc = evaluate_parties(window, |_| &global)?;
            series.push(acc);
            log.rows.push(MetricRow {
                method,
                seed: cfg.seed,
                window: w,
                round: round + 1,
                accuracy: acc,
                experts_active: 1,
            });
        }
        let last = *series.last().expect("at least one round");
        let metrics = WindowMetrics::from_series(w, pre, series)?;
        info!(
            "{method} window {w}: drop {:.2}, time {}, max {:.2}",
            metrics.accuracy_drop, metrics.recovery_time, metrics.max_accuracy
        );
        log.windows.push(metrics);
        pre = last;
    }
    Ok(log)
}

/// Runs every configured method on identical data from a shared bootstrap.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunLog> {
    let prep = prepare(cfg)?;
    let methods: Vec<MethodLog> = cfg
        .methods
        .par_iter()
        .map(|&m| match m {
            MethodKind::Shiftex => run_shiftex(cfg, &prep),
            other => run_global(cfg, &prep, other),
        })
        .collect::<Result<_>>()?;
    Ok(RunLog {
        seed: cfg.seed,
        calibration: prep.calibration,
        thresholds: prep.thresholds,
        bootstrap_accuracy: prep.bootstrap_accuracy,
        methods,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub n: usize,
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl NullSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("null statistics"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            n: v.len(),
            min: v[0],
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: crate::numerics::nearest_rank_quantile(&v, 0.5)?,
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub delta_cov: f64,
    pub delta_label: f64,
    pub p_value: f64,
    pub null_cov: NullSummary,
    pub null_label: NullSummary,
}

/// Bootstrap and threshold calibration only.
pub fn calibrate(cfg: &RunConfig) -> Result<CalibrationReport> {
    let data = generate_data(cfg)?;
    let placeholder = cfg.thresholds.resolve(&Calibration {
        delta_cov: 0.0,
        delta_label: 0.0,
        p_value: cfg.thresholds.p_value,
        n_null: 0,
    });
    let boot_train: Vec<Vec<Dataset>> = data.bootstrap.iter().map(|w| SimData::train(w)).collect();
    let boot = bootstrap(
        cfg.shape()?,
        &boot_train,
        &shiftex_config(cfg, placeholder),
        cfg.bootstrap_rounds,
        cfg.seed,
    )?;
    let cal = calibrate_thresholds(&boot.null_reports, cfg.thresholds.p_value)?;
    let cov: Vec<f64> = boot.null_reports.iter().map(|r| r.delta_cov).collect();
    let label: Vec<f64> = boot.null_reports.iter().map(|r| r.delta_label).collect();
    Ok(CalibrationReport {
        delta_cov: cal.delta_cov,
        delta_label: cal.delta_label,
        p_value: cal.p_value,
        null_cov: NullSummary::of(&cov)?,
        null_label: NullSummary::of(&label)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_examples() {
        assert_eq!(accuracy_drop(70.0, &[50.0]).unwrap(), 20.0);
        assert_eq!(accuracy_drop(70.0, &[70.0, 10.0]).unwrap(), 0.0);
        assert_eq!(accuracy_drop(50.0, &[60.0]).unwrap(), -10.0);
        assert!(accuracy_drop(50.0, &[]).is_err());
    }

    #[test]
    fn recovery_examples() {
        assert_eq!(
            recovery_time(70.0, &[50.0, 60.0, 67.0], 3),
            RecoveryTime::Rounds(3)
        );
        assert_eq!(
            recovery_time(70.0, &[70.0, 20.0], 2),
            RecoveryTime::Rounds(1)
        );
        assert_eq!(recovery_time(70.0, &[50.0; 51], 51).to_string(), ">51");
        assert_eq!(RecoveryTime::Rounds(3).to_string(), "3");
        assert!(RecoveryTime::Beyond(15).rank() > RecoveryTime::Rounds(15).rank());
    }

    #[test]
    fn max_examples() {
        assert_eq!(max_accuracy(&[60.0, 65.0, 63.0]).unwrap(), 65.0);
        assert_eq!(max_accuracy(&[40.0]).unwrap(), 40.0);
        assert_eq!(max_accuracy(&[1.0, 2.0, 3.0]).unwrap(), 3.0);
        assert!(max_accuracy(&[]).is_err());
    }

    #[test]
    fn aggregate_is_sample_weighted() {
        // 1 of 1 correct and 1 of 3 correct: 2 of 4 overall, not the
        // unweighted (1 + 1/3) / 2.
        let acc = aggregate_accuracy(&[(1.0, 1), (1.0 / 3.0, 3)]).unwrap();
        assert!((acc - 0.5).abs() < 1e-15);
        assert!(aggregate_accuracy(&[]).is_err());
    }

    #[test]
    fn data_generation_is_deterministic_and_split() {
        let mut cfg = RunConfig {
            parties: 10,
            ..RunConfig::default()
        };
        cfg.window.length = 50;
        let a = generate_data(&cfg).unwrap();
        let b = generate_data(&cfg).unwrap();
        assert_eq!(a.windows[2][3].train, b.windows[2][3].train);
        assert_eq!(a.windows[0][0].train.len(), 40);
        assert_eq!(a.windows[0][0].test.len(), 10);
        assert_eq!(a.bootstrap.len(), 3);
        assert_eq!(a.regimes.len(), 5);
        assert!(a.regimes[0].iter().all(|r| *r == ActiveShift::default()));
        assert_eq!(
            a.regimes[1]
                .iter()
                .filter(|r| !r.transform.is_identity())
                .count(),
            5
        );
    }
}

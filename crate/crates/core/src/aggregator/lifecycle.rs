//! Per-window adaptation loop: plan (detect, group, match or create), train
//! for a number of rounds, then consolidate and update latent memories.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::registry::{
    consolidate_experts, create_expert, match_expert_where, update_latent_memory, Merge,
};
use super::selection::{cluster_shifted, flips_select, pool_group};
use super::{partition_shifted, Partition, Thresholds};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{fed_aggregate, init_model, local_train, ModelParams, ModelShape, TrainConfig};
use crate::numerics::{Bandwidth, EmbeddingSet, LabelHistogram};
use crate::party::{PartyReport, PartyState};
use crate::rng::{derive_seed, rng_for, tag};

use super::registry::{ExpertId, ExpertRegistry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftExConfig {
    pub thresholds: Thresholds,
    pub train: TrainConfig,
    pub rounds_per_window: usize,
    pub m_profile: usize,
    pub m_signature: usize,
    pub bandwidth: Bandwidth,
    /// Embed with the bootstrap model rather than each party's current expert.
    pub frozen_encoder: bool,
}

impl ShiftExConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.train.validate()?;
        if self.rounds_per_window == 0 {
            return Err(Error::invalid("rounds_per_window must be at least 1"));
        }
        if self.m_profile == 0 || self.m_signature == 0 {
            return Err(Error::invalid(
                "profile and signature sizes must be at least 1",
            ));
        }
        Ok(())
    }
}

/// Everything the aggregator carries between windows.
#[derive(Debug, Clone)]
pub struct AggregatorState {
    pub theta0: ModelParams,
    pub registry: ExpertRegistry,
    pub config: ShiftExConfig,
    pub seed: u64,
}

impl AggregatorState {
    /// The model serving `party`: its assigned expert, or the bootstrap model
    /// for unknown parties.
    pub fn model_for(&self, party: usize) -> &ModelParams {
        self.registry
            .expert_of(party)
            .and_then(|id| self.registry.get(id))
            .map_or(&self.theta0, |e| &e.params)
    }

    pub fn encoder_for(&self, party: usize) -> &ModelParams {
        if self.config.frozen_encoder {
            &self.theta0
        } else {
            self.model_for(party)
        }
    }
}

/// One federated training task: an expert and the parties that train it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingJob {
    pub expert: ExpertId,
    pub parties: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct WindowPlan {
    pub window: usize,
    pub partition: Partition,
    pub groups: Vec<Vec<usize>>,
    pub created: Vec<ExpertId>,
    pub matched: Vec<(ExpertId, f64)>,
    /// Experts retrained by shifted groups every round.
    pub jobs: Vec<TrainingJob>,
    /// Experts refreshed by their stable parties once per window.
    pub refresh: Vec<TrainingJob>,
    /// Parties of too-small groups and their locally fine-tuned models.
    pub finetuned: BTreeMap<usize, ModelParams>,
    pending_memory: Vec<(ExpertId, Vec<f64>, EmbeddingSet)>,
    hists: BTreeMap<usize, (LabelHistogram, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSummary {
    pub window: usize,
    pub shifted: Vec<usize>,
    pub groups: usize,
    pub created: Vec<ExpertId>,
    pub matched: usize,
    pub merges: Vec<Merge>,
    pub experts_active: usize,
}

/// Federated training of `expert` over a fixed cohort: every round each
/// member trains locally from the current model (the proximal anchor when
/// enabled) and the results are averaged by sample count.
pub fn train_expert(
    expert: &ModelParams,
    cohort: &[usize],
    data: &[Dataset],
    cfg: &TrainConfig,
    rounds: usize,
    seed: u64,
) -> Result<ModelParams> {
    let mut current = expert.clone();
    for round in 0..rounds {
        current = federated_round(
            &current,
            cohort,
            data,
            cfg,
            derive_seed(seed, &[round as u64]),
        )?;
    }
    Ok(current)
}

pub(crate) fn federated_round(
    current: &ModelParams,
    cohort: &[usize],
    data: &[Dataset],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams> {
    for &p in cohort {
        if p >= data.len() {
            return Err(Error::invalid(format!("no data for party {p}")));
        }
    }
    let members: Vec<usize> = cohort
        .iter()
        .copied()
        .filter(|&p| !data[p].is_empty())
        .collect();
    if members.is_empty() {
        return Ok(current.clone());
    }
    let updates: Vec<ModelParams> = members
        .par_iter()
        .map(|&p| {
            local_train(
                current,
                &data[p],
                cfg,
                Some(current),
                &mut rng_for(seed, &[p as u64]),
            )
        })
        .collect::<Result<_>>()?;
    let weighted: Vec<(&ModelParams, f64)> = updates
        .iter()
        .zip(&members)
        .map(|(m, &p)| (m, data[p].len() as f64))
        .collect();
    fed_aggregate(&weighted)
}

/// Parties in groups too small to found an expert fine-tune their current
/// expert on local data; the results stay with the party.
pub fn signal_local_finetune(
    parties: &[usize],
    registry: &ExpertRegistry,
    fallback: &ModelParams,
    data: &[Dataset],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BTreeMap<usize, ModelParams>> {
    let tuned: Vec<(usize, ModelParams)> = parties
        .par_iter()
        .map(|&p| {
            let local = data
                .get(p)
                .ok_or_else(|| Error::invalid(format!("no data for party {p}")))?;
            let base = registry
                .expert_of(p)
                .and_then(|id| registry.get(id))
                .map_or(fallback, |e| &e.params);
            let model = local_train(
                base,
                local,
                cfg,
                Some(base),
                &mut rng_for(seed, &[p as u64]),
            )?;
            Ok((p, model))
        })
        .collect::<Result<_>>()?;
    Ok(tuned.into_iter().collect())
}

/// Adaptation step at the start of a window.
pub fn plan_window(
    state: &mut AggregatorState,
    reports: &[PartyReport],
    data: &[Dataset],
    window: usize,
) -> Result<WindowPlan> {
    let cfg = state.config.clone();
    let th = cfg.thresholds;
    let seed = state.seed;
    let by_party: BTreeMap<usize, &PartyReport> = reports.iter().map(|r| (r.party_id, r)).collect();
    let partition = partition_shifted(reports, &th);
    let shifted_reports: Vec<&PartyReport> =
        partition.shifted.iter().map(|p| by_party[p]).collect();
    let groups = cluster_shifted(
        &shifted_reports,
        &mut rng_for(seed, &[tag::CLUSTER, window as u64]),
    )?;

    let mut plan = WindowPlan {
        window,
        partition,
        groups: groups.clone(),
        created: Vec::new(),
        matched: Vec::new(),
        jobs: Vec::new(),
        refresh: Vec::new(),
        finetuned: BTreeMap::new(),
        pending_memory: Vec::new(),
        hists: reports
            .iter()
            .map(|r| (r.party_id, (r.label_hist.clone(), r.profile.n_source)))
            .collect(),
    };
    let mut job_parties: BTreeMap<ExpertId, BTreeSet<usize>> = BTreeMap::new();
    let mut small = Vec::new();

    for (gi, group) in groups.iter().enumerate() {
        if group.len() < th.gamma_min_cluster {
            small.extend_from_slice(group);
            continue;
        }
        let chunk = th.u_max.unwrap_or(group.len()).max(1);
        if chunk < group.len() {
            warn!(
                "group of {} parties exceeds expert capacity {chunk}; splitting",
                group.len()
            );
        }
        for (ci, part) in group.chunks(chunk).enumerate() {
            let members: Vec<&PartyReport> = part.iter().map(|p| by_party[p]).collect();
            let mut rng = rng_for(seed, &[tag::MEMORY, window as u64, gi as u64, ci as u64]);
            let summary = pool_group(&members, cfg.m_signature, &mut rng)?;
            let registry = &state.registry;
            let eligible = |id: ExpertId| match th.u_max {
                None => true,
                Some(cap) => {
                    let already = part
                        .iter()
                        .filter(|&&p| registry.expert_of(p) == Some(id))
                        .count();
                    registry.load(id) - already + part.len() <= cap
                }
            };
            let matched = match_expert_where(
                &summary.sample,
                registry,
                th.epsilon_match,
                cfg.bandwidth,
                eligible,
            )?;
            let expert = match matched {
                Some((id, dist)) => {
                    debug!(
                        "window {window}: group {:?} matched {id} (mmd2 {dist:.4})",
                        summary.parties
                    );
                    for &p in part {
                        state.registry.assign(p, id)?;
                    }
                    plan.matched.push((id, dist));
                    plan.pending_memory.push((id, summary.mean, summary.sample));
                    id
                }
                None => {
                    let id = create_expert(
                        &mut state.registry,
                        &state.theta0,
                        part,
                        summary.mean,
                        summary.sample,
                        summary.label_hist,
                        window,
                    )?;
                    info!(
                        "window {window}: created expert {id} for {} parties",
                        part.len()
                    );
                    plan.created.push(id);
                    id
                }
            };
            job_parties
                .entry(expert)
                .or_default()
                .extend(part.iter().copied());
        }
    }

    if !small.is_empty() {
        small.sort_unstable();
        plan.finetuned = signal_local_finetune(
            &small,
            &state.registry,
            &state.theta0,
            data,
            &cfg.train,
            derive_seed(seed, &[tag::TRAIN, window as u64, u64::MAX]),
        )?;
    }

    plan.jobs = job_parties
        .into_iter()
        .map(|(expert, parties)| TrainingJob {
            expert,
            parties: parties.into_iter().collect(),
        })
        .collect();
    let stable: BTreeSet<usize> = plan.partition.stable.iter().copied().collect();
    for id in state.registry.ids() {
        let parties: Vec<usize> = state
            .registry
            .parties_of(id)
            .into_iter()
            .filter(|p| stable.contains(p))
            .collect();
        if !parties.is_empty() {
            plan.refresh.push(TrainingJob {
                expert: id,
                parties,
            });
        }
    }
    Ok(plan)
}

fn run_job(
    state: &mut AggregatorState,
    plan: &WindowPlan,
    job: &TrainingJob,
    data: &[Dataset],
    key: &[u64],
) -> Result<()> {
    let hists: Vec<(usize, &LabelHistogram)> = job
        .parties
        .iter()
        .filter_map(|p| plan.hists.get(p).map(|(h, _)| (*p, h)))
        .collect();
    if hists.is_empty() {
        return Ok(());
    }
    let seed = state.seed;
    let mut sel_key = vec![tag::SELECT];
    sel_key.extend_from_slice(key);
    let cohort = flips_select(
        &hists,
        state.config.thresholds.participant_fraction,
        &mut rng_for(seed, &sel_key),
    )?;
    let mut train_key = vec![tag::TRAIN];
    train_key.extend_from_slice(key);
    let expert = state
        .registry
        .get(job.expert)
        .ok_or_else(|| Error::invalid(format!("unknown expert {}", job.expert)))?;
    let updated = federated_round(
        &expert.params,
        &cohort,
        data,
        &state.config.train,
        derive_seed(seed, &train_key),
    )?;
    state
        .registry
        .get_mut(job.expert)
        .expect("checked above")
        .params = updated;
    Ok(())
}

/// One training round of a planned window. Stable parties refresh their
/// experts in the first round only.
pub fn execute_round(
    state: &mut AggregatorState,
    plan: &WindowPlan,
    data: &[Dataset],
    round: usize,
) -> Result<()> {
    let w = plan.window as u64;
    let r = round as u64;
    if round == 0 {
        for (j, job) in plan.refresh.iter().enumerate() {
            run_job(state, plan, job, data, &[w, r, 1, j as u64])?;
        }
    }
    for (j, job) in plan.jobs.iter().enumerate() {
        run_job(state, plan, job, data, &[w, r, 0, j as u64])?;
    }
    Ok(())
}

/// Closes a window: merges redundant experts, folds matched groups into
/// latent memory and refreshes every expert's label histogram.
pub fn finish_window(state: &mut AggregatorState, plan: WindowPlan) -> Result<WindowSummary> {
    let cfg = state.config.clone();
    let mut rng = rng_for(state.seed, &[tag::MEMORY, plan.window as u64, u64::MAX]);
    let merges = consolidate_experts(
        &mut state.registry,
        cfg.thresholds.tau_merge,
        cfg.thresholds.u_max,
        cfg.m_signature,
        &mut rng,
    )?;
    let resolve = |mut id: ExpertId| {
        while let Some(m) = merges.iter().find(|m| m.absorbed == id) {
            id = m.kept;
        }
        id
    };
    for (id, mean, sample) in &plan.pending_memory {
        let id = resolve(*id);
        let expert = state.registry.get(id).expect("resolved expert exists");
        let updated = update_latent_memory(
            expert,
            mean,
            sample,
            cfg.thresholds.ema_beta,
            cfg.m_signature,
            &mut rng,
        )?;
        *state.registry.get_mut(id).expect("resolved expert exists") = updated;
    }
    for id in state.registry.ids() {
        let parts: Vec<(&LabelHistogram, f64)> = state
            .registry
            .parties_of(id)
            .iter()
            .filter_map(|p| plan.hists.get(p).map(|(h, n)| (h, *n as f64)))
            .collect();
        if !parts.is_empty() {
            let hist = LabelHistogram::mixture(parts)?;
            state
                .registry
                .get_mut(id)
                .expect("listed expert")
                .agg_label_hist = hist;
        }
    }
    for m in &merges {
        info!(
            "window {}: merged {} into {} (cos {:.4})",
            plan.window, m.absorbed, m.kept, m.similarity
        );
    }
    Ok(WindowSummary {
        window: plan.window,
        shifted: plan.partition.shifted.clone(),
        groups: plan.groups.len(),
        created: plan.created.clone(),
        matched: plan.matched.len(),
        merges,
        experts_active: state.registry.len(),
    })
}

/// Plans, trains for the configured number of rounds and closes a window.
/// `on_round` runs after every round, e.g. to evaluate.
pub fn run_window(
    state: &mut AggregatorState,
    reports: &[PartyReport],
    data: &[Dataset],
    window: usize,
    mut on_round: impl FnMut(&AggregatorState, usize) -> Result<()>,
) -> Result<WindowSummary> {
    let plan = plan_window(state, reports, data, window)?;
    for round in 0..state.config.rounds_per_window {
        execute_round(state, &plan, data, round)?;
        on_round(state, round)?;
    }
    finish_window(state, plan)
}

#[derive(Debug, Clone)]
pub struct BootstrapOutcome {
    pub theta0: ModelParams,
    pub registry: ExpertRegistry,
    /// Detection statistics between consecutive unshifted windows.
    pub null_reports: Vec<PartyReport>,
    /// Detection state positioned at the last bootstrap window.
    pub party_states: Vec<PartyState>,
}

/// Trains the shared initial model on the first bootstrap window, then
/// profiles every bootstrap window with it to collect null statistics.
/// The registry starts with a single expert serving every party.
pub fn bootstrap(
    shape: ModelShape,
    windows: &[Vec<Dataset>],
    config: &ShiftExConfig,
    rounds: usize,
    seed: u64,
) -> Result<BootstrapOutcome> {
    let first = windows.first().ok_or(Error::Empty("bootstrap windows"))?;
    let n_parties = first.len();
    if n_parties == 0 {
        return Err(Error::Empty("bootstrap parties"));
    }
    if windows.iter().any(|w| w.len() != n_parties) {
        return Err(Error::invalid(
            "every bootstrap window needs data for every party",
        ));
    }
    let mut theta0 = init_model(shape, derive_seed(seed, &[tag::INIT]));
    let hists: Vec<LabelHistogram> = first
        .iter()
        .map(Dataset::label_histogram)
        .collect::<Result<_>>()?;
    let group: Vec<(usize, &LabelHistogram)> = hists.iter().enumerate().collect();
    for round in 0..rounds {
        let cohort = flips_select(
            &group,
            config.thresholds.participant_fraction,
            &mut rng_for(seed, &[tag::BOOTSTRAP, tag::SELECT, round as u64]),
        )?;
        theta0 = federated_round(
            &theta0,
            &cohort,
            first,
            &config.train,
            derive_seed(seed, &[tag::BOOTSTRAP, tag::TRAIN, round as u64]),
        )?;
    }

    let mut party_states: Vec<PartyState> = (0..n_parties).map(PartyState::new).collect();
    let mut null_reports = Vec::new();
    let mut last = Vec::new();
    for (w, window) in windows.iter().enumerate() {
        let reports: Vec<PartyReport> = party_states
            .par_iter_mut()
            .zip(window.par_iter())
            .map(|(st, d)| {
                let mut rng = rng_for(
                    seed,
                    &[tag::BOOTSTRAP, tag::PROFILE, w as u64, st.party_id as u64],
                );
                st.observe(w, d, &theta0, config.bandwidth, config.m_profile, &mut rng)
            })
            .collect::<Result<_>>()?;
        if w > 0 {
            null_reports.extend(reports.iter().cloned());
        }
        last = reports;
    }

    let refs: Vec<&PartyReport> = last.iter().collect();
    let summary = pool_group(
        &refs,
        config.m_signature,
        &mut rng_for(seed, &[tag::BOOTSTRAP, tag::MEMORY]),
    )?;
    let mut registry = ExpertRegistry::empty();
    create_expert(
        &mut registry,
        &theta0,
        &summary.parties,
        summary.mean,
        summary.sample,
        summary.label_hist,
        0,
    )?;
    Ok(BootstrapOutcome {
        theta0,
        registry,
        null_reports,
        party_states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::Calibration;
    use crate::models::evaluate;
    use crate::rng::SimRng;
    use crate::stream::{
        sample_window, ActiveShift, CovariateTransform, GaussianMixture, PartyStream, TransformKind,
    };
    use rand::SeedableRng;

    fn config() -> ShiftExConfig {
        let mut thresholds = Thresholds::from_calibration(Calibration {
            delta_cov: 0.0,
            delta_label: 0.0,
            p_value: 0.05,
            n_null: 0,
        });
        thresholds.participant_fraction = 0.5;
        ShiftExConfig {
            thresholds,
            train: TrainConfig::default(),
            rounds_per_window: 3,
            m_profile: 32,
            m_signature: 64,
            bandwidth: Bandwidth::MedianHeuristic,
            frozen_encoder: true,
        }
    }

    fn windows(
        n_parties: usize,
        n_windows: usize,
        active: &ActiveShift,
        salt: u64,
    ) -> Vec<Vec<Dataset>> {
        let base = GaussianMixture::ring(8, 4, 3.0, 0.7).unwrap();
        (0..n_windows)
            .map(|w| {
                (0..n_parties)
                    .map(|p| {
                        let s = PartyStream {
                            party_id: p,
                            base: base.clone(),
                            seed: 5,
                        };
                        let mut rng = SimRng::seed_from_u64(salt * 10_000 + (w * 100 + p) as u64);
                        sample_window(&s, active, 60, &mut rng).unwrap()
                    })
                    .collect()
            })
            .collect()
    }

    fn booted(n_parties: usize) -> (AggregatorState, Vec<PartyState>) {
        let out = bootstrap(
            ModelShape::new(8, 16, 4).unwrap(),
            &windows(n_parties, 3, &ActiveShift::default(), 0),
            &config(),
            20,
            1,
        )
        .unwrap();
        let cal = super::super::calibrate_thresholds(&out.null_reports, 0.05).unwrap();
        let mut cfg = config();
        cfg.thresholds.delta_cov = cal.delta_cov;
        cfg.thresholds.delta_label = cal.delta_label;
        cfg.thresholds.epsilon_match = cal.delta_cov;
        (
            AggregatorState {
                theta0: out.theta0,
                registry: out.registry,
                config: cfg,
                seed: 1,
            },
            out.party_states,
        )
    }

    #[test]
    fn bootstrap_produces_single_expert_and_null_reports() {
        let (state, states) = booted(12);
        assert_eq!(state.registry.len(), 1);
        assert_eq!(state.registry.load(ExpertId(0)), 12);
        assert_eq!(states.len(), 12);
        let data = &windows(12, 1, &ActiveShift::default(), 9)[0];
        let acc: f64 = data
            .iter()
            .map(|d| evaluate(&state.theta0, d).unwrap())
            .sum::<f64>()
            / 12.0;
        assert!(acc > 0.6, "bootstrap accuracy {acc}");
    }

    #[test]
    fn shifted_group_gets_new_expert_and_recurring_regime_reuses_it() {
        let (mut state, mut states) = booted(12);
        let rotated = ActiveShift {
            transform: CovariateTransform::new(vec![TransformKind::Shift {
                offset: vec![2.5; 8],
            }])
            .unwrap(),
            ..ActiveShift::default()
        };
        let clean = windows(12, 1, &ActiveShift::default(), 20).remove(0);
        let shifted = windows(12, 1, &rotated, 21).remove(0);
        let mixed: Vec<Dataset> = (0..12)
            .map(|p| {
                if p < 6 {
                    shifted[p].clone()
                } else {
                    clean[p].clone()
                }
            })
            .collect();
        let report = |states: &mut Vec<PartyState>,
                      data: &[Dataset],
                      w: usize,
                      state: &AggregatorState|
         -> Vec<PartyReport> {
            states
                .iter_mut()
                .zip(data)
                .map(|(s, d)| {
                    let enc = state.encoder_for(s.party_id).clone();
                    s.observe(
                        w,
                        d,
                        &enc,
                        Bandwidth::MedianHeuristic,
                        32,
                        &mut SimRng::seed_from_u64(w as u64),
                    )
                    .unwrap()
                })
                .collect()
        };
        state.config.thresholds.tau_merge = 0.9999;
        let reps = report(&mut states, &mixed, 1, &state);
        let mut rounds = 0;
        let summary = run_window(&mut state, &reps, &mixed, 1, |_, _| {
            rounds += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(rounds, 3);
        assert!(summary.shifted.iter().all(|&p| p < 6), "{summary:?}");
        assert!(summary.shifted.len() >= 5);
        assert_eq!(summary.created.len(), 1, "{summary:?}");
        let new = summary.created[0];
        assert!(state.registry.check_totality());
        assert_eq!(state.registry.expert_of(0), Some(new));
        assert_eq!(state.registry.expert_of(11), Some(ExpertId(0)));

        // Everyone returns to the clean regime: the shifted parties should
        // route back to the original expert rather than found a third one.
        let reps = report(&mut states, &clean, 2, &state);
        let summary = run_window(&mut state, &reps, &clean, 2, |_, _| Ok(())).unwrap();
        assert!(summary.created.is_empty(), "{summary:?}");
        assert_eq!(state.registry.expert_of(0), Some(ExpertId(0)));
    }

    #[test]
    fn small_groups_do_not_change_assignment() {
        let (mut state, mut states) = booted(12);
        let mut cfg = state.config.clone();
        cfg.thresholds.gamma_min_cluster = 20;
        state.config = cfg;
        let rotated = ActiveShift {
            transform: CovariateTransform::new(vec![TransformKind::Shift {
                offset: vec![6.0; 8],
            }])
            .unwrap(),
            ..ActiveShift::default()
        };
        let shifted = windows(12, 1, &rotated, 30).remove(0);
        let reps: Vec<PartyReport> = states
            .iter_mut()
            .zip(&shifted)
            .map(|(s, d)| {
                s.observe(
                    1,
                    d,
                    &state.theta0,
                    Bandwidth::MedianHeuristic,
                    32,
                    &mut SimRng::seed_from_u64(3),
                )
                .unwrap()
            })
            .collect();
        let before = state.registry.assignment().clone();
        let plan = plan_window(&mut state, &reps, &shifted, 1).unwrap();
        assert!(plan.created.is_empty());
        assert!(plan.jobs.is_empty());
        assert_eq!(plan.finetuned.len(), plan.partition.shifted.len());
        assert_eq!(state.registry.assignment(), &before);
    }

    #[test]
    fn training_is_deterministic() {
        let data = &windows(6, 1, &ActiveShift::default(), 40)[0];
        let m = init_model(ModelShape::new(8, 16, 4).unwrap(), 3);
        let a = train_expert(&m, &[0, 2, 4], data, &TrainConfig::default(), 2, 7).unwrap();
        let b = train_expert(&m, &[0, 2, 4], data, &TrainConfig::default(), 2, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, m);
        assert!(train_expert(&m, &[9], data, &TrainConfig::default(), 1, 7).is_err());
    }
}

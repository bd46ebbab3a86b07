//! Aggregator side of the expert pool: threshold calibration, shifted-party
//! grouping, expert matching and creation, training jobs and consolidation.

pub mod lifecycle;
pub mod registry;
pub mod selection;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::nearest_rank_quantile;
use crate::party::PartyReport;

pub use lifecycle::{
    bootstrap, run_window, signal_local_finetune, train_expert, AggregatorState, BootstrapOutcome,
    ShiftExConfig, WindowPlan, WindowSummary,
};
pub use registry::{
    consolidate_experts, create_expert, match_expert, update_latent_memory, ExpertId, ExpertRecord,
    ExpertRegistry, RegistrySnapshot,
};
pub use selection::{cluster_shifted, flips_select, pool_group, GroupSummary};

/// Fewest null reports accepted for threshold calibration.
pub const MIN_NULL_REPORTS: usize = 20;

/// Decision thresholds and pool-management knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub delta_cov: f64,
    pub delta_label: f64,
    /// Largest MMD² at which a group reuses an existing expert.
    pub epsilon_match: f64,
    /// Cosine similarity above which two experts merge.
    pub tau_merge: f64,
    /// Smallest shifted group that may found or retrain an expert.
    pub gamma_min_cluster: usize,
    /// Most parties one expert may serve, if bounded.
    pub u_max: Option<usize>,
    pub lambda_open: f64,
    pub mu_balance: f64,
    pub ema_beta: f64,
    pub participant_fraction: f64,
}

impl Thresholds {
    /// Thresholds from calibrated detection cut-offs; the matching radius
    /// defaults to the covariate cut-off.
    pub fn from_calibration(cal: Calibration) -> Self {
        Self {
            delta_cov: cal.delta_cov,
            delta_label: cal.delta_label,
            epsilon_match: cal.delta_cov,
            tau_merge: 0.95,
            gamma_min_cluster: 3,
            u_max: None,
            lambda_open: 0.5,
            mu_balance: 0.5,
            ema_beta: 0.9,
            participant_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{name} must be a finite non-negative number"
                )))
            }
        };
        nonneg(self.delta_cov, "delta_cov")?;
        nonneg(self.delta_label, "delta_label")?;
        nonneg(self.epsilon_match, "epsilon_match")?;
        nonneg(self.lambda_open, "lambda_open")?;
        nonneg(self.mu_balance, "mu_balance")?;
        if !(self.tau_merge > -1.0 && self.tau_merge <= 1.0) {
            return Err(Error::invalid("tau_merge must lie in (-1, 1]"));
        }
        if self.gamma_min_cluster == 0 {
            return Err(Error::invalid("gamma_min_cluster must be at least 1"));
        }
        if self.u_max == Some(0) {
            return Err(Error::invalid("u_max must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.ema_beta) {
            return Err(Error::invalid("ema_beta must lie in [0, 1)"));
        }
        if !(self.participant_fraction > 0.0 && self.participant_fraction <= 1.0) {
            return Err(Error::invalid("participant_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Detection cut-offs estimated from reports gathered with no shift injected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub delta_cov: f64,
    pub delta_label: f64,
    pub p_value: f64,
    pub n_null: usize,
}

/// Sets each cut-off to the nearest-rank `1 - p_value` quantile of the null
/// statistics.
pub fn calibrate_thresholds(null_reports: &[PartyReport], p_value: f64) -> Result<Calibration> {
    if !(p_value > 0.0 && p_value < 1.0) {
        return Err(Error::invalid("p_value must lie in (0, 1)"));
    }
    if null_reports.len() < MIN_NULL_REPORTS {
        return Err(Error::invalid(format!(
            "calibration needs at least {MIN_NULL_REPORTS} null reports, got {}",
            null_reports.len()
        )));
    }
    let cov: Vec<f64> = null_reports.iter().map(|r| r.delta_cov).collect();
    let label: Vec<f64> = null_reports.iter().map(|r| r.delta_label).collect();
    Ok(Calibration {
        delta_cov: nearest_rank_quantile(&cov, 1.0 - p_value)?,
        delta_label: nearest_rank_quantile(&label, 1.0 - p_value)?,
        p_value,
        n_null: null_reports.len(),
    })
}

/// Party ids split by the detection rule: shifted when either statistic is
/// strictly above its cut-off.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    pub shifted: Vec<usize>,
    pub stable: Vec<usize>,
}

pub fn is_shifted(report: &PartyReport, thresholds: &Thresholds) -> bool {
    report.delta_cov > thresholds.delta_cov || report.delta_label > thresholds.delta_label
}

pub fn partition_shifted(reports: &[PartyReport], thresholds: &Thresholds) -> Partition {
    let mut out = Partition::default();
    for r in reports {
        if is_shifted(r, thresholds) {
            out.shifted.push(r.party_id);
        } else {
            out.stable.push(r.party_id);
        }
    }
    out.shifted.sort_unstable();
    out.stable.sort_unstable();
    out
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::numerics::{EmbeddingSet, LabelHistogram};
    use crate::party::{LatentProfile, PartyReport};

    pub fn report(party_id: usize, delta_cov: f64, delta_label: f64) -> PartyReport {
        let sample = EmbeddingSet::new(vec![vec![party_id as f64, 0.0]; 3]).unwrap();
        PartyReport {
            party_id,
            window_index: 1,
            profile: LatentProfile {
                mean: sample.mean(),
                sample,
                n_source: 3,
            },
            label_hist: LabelHistogram::uniform(2).unwrap(),
            delta_cov,
            delta_label,
        }
    }
}

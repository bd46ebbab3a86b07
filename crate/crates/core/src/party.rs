//! Party-side shift detection.
//!
//! Each window a party embeds its local data, summarizes the embeddings as a
//! mean plus a bounded seeded subsample, and compares them to the previous
//! window: MMD² for covariate shift, JSD of label histograms for label shift.
//! Only embeddings, histograms and scalars leave the party.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::models::{embed, ModelParams};
use crate::numerics::{jsd, mmd_squared, Bandwidth, EmbeddingSet, LabelHistogram};

pub const DEFAULT_M_PROFILE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentProfile {
    pub mean: Vec<f64>,
    pub sample: EmbeddingSet,
    pub n_source: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyReport {
    pub party_id: usize,
    pub window_index: usize,
    pub profile: LatentProfile,
    pub label_hist: LabelHistogram,
    pub delta_cov: f64,
    pub delta_label: f64,
}

/// Embeds every sample; keeps the full-data mean and a seeded subsample of
/// at most `m_profile` embeddings.
pub fn build_profile<R: Rng + ?Sized>(
    encoder: &ModelParams,
    data: &Dataset,
    m_profile: usize,
    rng: &mut R,
) -> Result<LatentProfile> {
    if data.is_empty() {
        return Err(Error::Empty("party window data"));
    }
    if m_profile == 0 {
        return Err(Error::invalid("m_profile must be at least 1"));
    }
    let mut flat = Vec::with_capacity(data.len() * encoder.embedding_dim());
    for x in data.features() {
        flat.extend(embed(encoder, x)?);
    }
    let all = EmbeddingSet::from_flat(encoder.embedding_dim(), flat)?;
    let mean = all.mean();
    let sample = if all.len() <= m_profile {
        all
    } else {
        let mut picked = index::sample(rng, all.len(), m_profile).into_vec();
        picked.sort_unstable();
        all.select(&picked)?
    };
    Ok(LatentProfile {
        mean,
        sample,
        n_source: data.len(),
    })
}

/// Builds this window's report. Without a previous window both deltas are 0.
#[allow(clippy::too_many_arguments)]
pub fn detect_shift<R: Rng + ?Sized>(
    party_id: usize,
    window_index: usize,
    prev: Option<(&LatentProfile, &LabelHistogram)>,
    cur_data: &Dataset,
    encoder: &ModelParams,
    bandwidth: Bandwidth,
    m_profile: usize,
    rng: &mut R,
) -> Result<PartyReport> {
    let profile = build_profile(encoder, cur_data, m_profile, rng)?;
    let label_hist = cur_data.label_histogram()?;
    let (delta_cov, delta_label) = match prev {
        None => (0.0, 0.0),
        Some((prev_profile, prev_hist)) => {
            check_dim(prev_profile.sample.dim(), profile.sample.dim())?;
            let kernel = bandwidth.resolve(&profile.sample, &prev_profile.sample)?;
            let cov = mmd_squared(&profile.sample, &prev_profile.sample, &kernel)?.max(0.0);
            (cov, jsd(&label_hist, prev_hist)?)
        }
    };
    Ok(PartyReport {
        party_id,
        window_index,
        profile,
        label_hist,
        delta_cov,
        delta_label,
    })
}

/// Per-party detection state carried between windows.
#[derive(Debug, Clone, Default)]
pub struct PartyState {
    pub party_id: usize,
    previous: Option<(LatentProfile, LabelHistogram)>,
}

impl PartyState {
    pub fn new(party_id: usize) -> Self {
        Self {
            party_id,
            previous: None,
        }
    }

    /// Runs detection against the stored previous window, then remembers
    /// this window for the next call.
    pub fn observe<R: Rng + ?Sized>(
        &mut self,
        window_index: usize,
        data: &Dataset,
        encoder: &ModelParams,
        bandwidth: Bandwidth,
        m_profile: usize,
        rng: &mut R,
    ) -> Result<PartyReport> {
        let prev = self.previous.as_ref().map(|(p, h)| (p, h));
        let report = detect_shift(
            self.party_id,
            window_index,
            prev,
            data,
            encoder,
            bandwidth,
            m_profile,
            rng,
        )?;
        self.previous = Some((report.profile.clone(), report.label_hist.clone()));
        Ok(report)
    }
}

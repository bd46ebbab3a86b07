//! Grouping of shifted parties and label-aware participant selection.

use rand::seq::SliceRandom;
use rand::Rng;

use super::registry::cap_sample;
use crate::cluster::{select_k, DEFAULT_RESTARTS};
use crate::error::{Error, Result};
use crate::numerics::{EmbeddingSet, LabelHistogram};
use crate::party::PartyReport;

/// Largest number of groups considered when clustering shifted parties.
pub const GROUP_K_MAX: usize = 8;
/// Largest number of label clusters used for participant selection.
pub const SELECT_K_MAX: usize = 5;

/// Clusters the reports' latent profile means with k up to
/// `min(GROUP_K_MAX, n / 2)`. Returns groups of party ids, ordered by their
/// lowest member.
pub fn cluster_shifted<R: Rng + ?Sized>(
    reports: &[&PartyReport],
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if reports.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted: Vec<&PartyReport> = reports.to_vec();
    sorted.sort_by_key(|r| r.party_id);
    let points: Vec<Vec<f64>> = sorted.iter().map(|r| r.profile.mean.clone()).collect();
    // All-singleton clusterings score a Davies-Bouldin index of 0, so k is
    // kept at or below half the group to leave room for real clusters.
    let k_max = GROUP_K_MAX.min(points.len() / 2);
    let clustering = select_k(&points, k_max, DEFAULT_RESTARTS, rng)?;
    Ok(clustering
        .groups()
        .into_iter()
        .map(|g| g.into_iter().map(|i| sorted[i].party_id).collect())
        .collect())
}

/// Pooled view of a party group as the aggregator sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub parties: Vec<usize>,
    /// Sample-count weighted mean of the members' profile means.
    pub mean: Vec<f64>,
    /// Union of member profile samples, capped at the signature size.
    pub sample: EmbeddingSet,
    pub label_hist: LabelHistogram,
    pub n_source: usize,
}

pub fn pool_group<R: Rng + ?Sized>(
    members: &[&PartyReport],
    cap: usize,
    rng: &mut R,
) -> Result<GroupSummary> {
    let first = members.first().ok_or(Error::Empty("party group"))?;
    let dim = first.profile.mean.len();
    let n_source: usize = members.iter().map(|r| r.profile.n_source).sum();
    let mut mean = vec![0.0; dim];
    for r in members {
        let w = r.profile.n_source as f64 / n_source.max(1) as f64;
        mean.iter_mut()
            .zip(&r.profile.mean)
            .for_each(|(m, v)| *m += w * v);
    }
    let sample = cap_sample(
        EmbeddingSet::concat(members.iter().map(|r| &r.profile.sample))?,
        cap,
        rng,
    )?;
    let label_hist = LabelHistogram::mixture(
        members
            .iter()
            .map(|r| (&r.label_hist, r.profile.n_source as f64)),
    )?;
    let mut parties: Vec<usize> = members.iter().map(|r| r.party_id).collect();
    parties.sort_unstable();
    Ok(GroupSummary {
        parties,
        mean,
        sample,
        label_hist,
        n_source,
    })
}

/// Number of participants drawn from a group of `n` at the given fraction.
pub fn cohort_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Picks `ceil(fraction * n)` parties so that label-histogram clusters are
/// covered round-robin before any cluster contributes a second member.
/// Returns sorted party ids.
pub fn flips_select<R: Rng + ?Sized>(
    group: &[(usize, &LabelHistogram)],
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if group.is_empty() {
        return Err(Error::Empty("selection group"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("participant fraction must lie in (0, 1]"));
    }
    let budget = cohort_size(group.len(), fraction);
    if budget == group.len() {
        let mut all: Vec<usize> = group.iter().map(|(p, _)| *p).collect();
        all.sort_unstable();
        return Ok(all);
    }
    let points: Vec<Vec<f64>> = group.iter().map(|(_, h)| h.probs().to_vec()).collect();
    let clustering = select_k(&points, SELECT_K_MAX, DEFAULT_RESTARTS, rng)?;
    let mut buckets: Vec<Vec<usize>> = clustering
        .groups()
        .into_iter()
        .map(|members| {
            let mut ids: Vec<usize> = members.into_iter().map(|i| group[i].0).collect();
            ids.shuffle(rng);
            ids
        })
        .collect();
    buckets.shuffle(rng);
    let mut chosen = Vec::with_capacity(budget);
    let mut depth = 0;
    while chosen.len() < budget {
        for bucket in &buckets {
            if chosen.len() == budget {
                break;
            }
            if let Some(&p) = bucket.get(depth) {
                chosen.push(p);
            }
        }
        depth += 1;
    }
    chosen.sort_unstable();
    Ok(chosen)
}

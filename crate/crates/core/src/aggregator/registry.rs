//! Expert pool: parameters, latent-memory signatures and party assignment.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::models::{fed_aggregate, ModelParams};
use crate::numerics::{cosine_similarity, mmd_squared, Bandwidth, EmbeddingSet, LabelHistogram};

pub const DEFAULT_M_SIGNATURE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpertId(pub u32);

impl fmt::Display for ExpertId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertRecord {
    pub expert_id: ExpertId,
    pub params: ModelParams,
    /// EMA of the mean embeddings of groups routed to this expert.
    pub memory_signature: Vec<f64>,
    /// Bounded pooled embedding sample used for MMD matching.
    pub signature_sample: EmbeddingSet,
    pub agg_label_hist: LabelHistogram,
    pub created_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertRegistry {
    experts: BTreeMap<ExpertId, ExpertRecord>,
    assignment: BTreeMap<usize, ExpertId>,
    next_id: u32,
}

/// Per-window registry snapshot written alongside the run metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub window: usize,
    pub experts: Vec<ExpertSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSnapshot {
    pub id: ExpertId,
    pub created_window: usize,
    pub assigned_parties: Vec<usize>,
    pub signature_mean: Vec<f64>,
}

/// A merge performed during consolidation: `absorbed` folded into `kept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub kept: ExpertId,
    pub absorbed: ExpertId,
    pub similarity: f64,
}

/// Union of two samples, uniformly subsampled to at most `cap` rows.
pub fn reservoir_merge<R: Rng + ?Sized>(
    a: &EmbeddingSet,
    b: &EmbeddingSet,
    cap: usize,
    rng: &mut R,
) -> Result<EmbeddingSet> {
    let joined = EmbeddingSet::concat([a, b])?;
    cap_sample(joined, cap, rng)
}

pub fn cap_sample<R: Rng + ?Sized>(
    set: EmbeddingSet,
    cap: usize,
    rng: &mut R,
) -> Result<EmbeddingSet> {
    if cap == 0 {
        return Err(Error::invalid("signature cap must be at least 1"));
    }
    if set.len() <= cap {
        return Ok(set);
    }
    let mut picked = index::sample(rng, set.len(), cap).into_vec();
    picked.sort_unstable();
    set.select(&picked)
}

impl ExpertRegistry {
    pub fn empty() -> Self {
        Self {
            experts: BTreeMap::new(),
            assignment: BTreeMap::new(),
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn next_id(&self) -> ExpertId {
        ExpertId(self.next_id)
    }

    pub fn experts(&self) -> impl Iterator<Item = &ExpertRecord> {
        self.experts.values()
    }

    pub fn ids(&self) -> Vec<ExpertId> {
        self.experts.keys().copied().collect()
    }

    pub fn get(&self, id: ExpertId) -> Option<&ExpertRecord> {
        self.experts.get(&id)
    }

    pub fn get_mut(&mut self, id: ExpertId) -> Option<&mut ExpertRecord> {
        self.experts.get_mut(&id)
    }

    pub fn assignment(&self) -> &BTreeMap<usize, ExpertId> {
        &self.assignment
    }

    pub fn expert_of(&self, party: usize) -> Option<ExpertId> {
        self.assignment.get(&party).copied()
    }

    pub fn assign(&mut self, party: usize, id: ExpertId) -> Result<()> {
        if !self.experts.contains_key(&id) {
            return Err(Error::invalid(format!("unknown expert {id}")));
        }
        self.assignment.insert(party, id);
        Ok(())
    }

    pub fn parties_of(&self, id: ExpertId) -> Vec<usize> {
        self.assignment
            .iter()
            .filter(|(_, e)| **e == id)
            .map(|(p, _)| *p)
            .collect()
    }

    pub fn load(&self, id: ExpertId) -> usize {
        self.assignment.values().filter(|e| **e == id).count()
    }

    /// Adds an expert with a fresh id; ids are never reused.
    pub fn insert(
        &mut self,
        params: ModelParams,
        memory_signature: Vec<f64>,
        signature_sample: EmbeddingSet,
        agg_label_hist: LabelHistogram,
        created_window: usize,
    ) -> Result<ExpertId> {
        check_dim(signature_sample.dim(), memory_signature.len())?;
        let id = ExpertId(self.next_id);
        self.next_id += 1;
        self.experts.insert(
            id,
            ExpertRecord {
                expert_id: id,
                params,
                memory_signature,
                signature_sample,
                agg_label_hist,
                created_window,
            },
        );
        Ok(id)
    }

    /// Every party maps to a live expert.
    pub fn check_totality(&self) -> bool {
        self.assignment
            .values()
            .all(|id| self.experts.contains_key(id))
    }

    pub fn snapshot(&self, window: usize) -> RegistrySnapshot {
        RegistrySnapshot {
            window,
            experts: self
                .experts
                .values()
                .map(|e| ExpertSnapshot {
                    id: e.expert_id,
                    created_window: e.created_window,
                    assigned_parties: self.parties_of(e.expert_id),
                    signature_mean: e.memory_signature.clone(),
                })
                .collect(),
        }
    }

    /// Byte accounting of the aggregator-side state: parameters, signatures,
    /// signature samples and label histograms per expert, plus one
    /// party-to-expert entry per party.
    pub fn footprint_bytes(&self) -> usize {
        const F64: usize = std::mem::size_of::<f64>();
        let per_expert: usize = self
            .experts
            .values()
            .map(|e| {
                std::mem::size_of::<ExpertId>()
                    + std::mem::size_of::<usize>()
                    + F64
                        * (e.params.weights().len()
                            + e.memory_signature.len()
                            + e.signature_sample.as_flat().len()
                            + e.agg_label_hist.classes())
            })
            .sum();
        per_expert
            + self.assignment.len()
                * (std::mem::size_of::<usize>() + std::mem::size_of::<ExpertId>())
    }
}

/// Registry holding a clone of `base`, with the group's pooled signature, and
/// every group party reassigned to it.
#[allow(clippy::too_many_arguments)]
pub fn create_expert(
    registry: &mut ExpertRegistry,
    base: &ModelParams,
    group: &[usize],
    group_mean: Vec<f64>,
    group_sample: EmbeddingSet,
    group_hist: LabelHistogram,
    window: usize,
) -> Result<ExpertId> {
    if group.is_empty() {
        return Err(Error::Empty("expert founding group"));
    }
    let id = registry.insert(base.clone(), group_mean, group_sample, group_hist, window)?;
    for &party in group {
        registry.assign(party, id)?;
    }
    Ok(id)
}

/// The expert whose signature sample is closest in MMD² to `group_sample`,
/// if that distance is at most `epsilon`. Ties go to the lowest id.
pub fn match_expert(
    group_sample: &EmbeddingSet,
    registry: &ExpertRegistry,
    epsilon: f64,
    bandwidth: Bandwidth,
) -> Result<Option<(ExpertId, f64)>> {
    match_expert_where(group_sample, registry, epsilon, bandwidth, |_| true)
}

/// [`match_expert`] restricted to experts accepted by `eligible`.
pub fn match_expert_where(
    group_sample: &EmbeddingSet,
    registry: &ExpertRegistry,
    epsilon: f64,
    bandwidth: Bandwidth,
    eligible: impl Fn(ExpertId) -> bool,
) -> Result<Option<(ExpertId, f64)>> {
    let mut best: Option<(ExpertId, f64)> = None;
    for expert in registry.experts().filter(|e| eligible(e.expert_id)) {
        let kernel = bandwidth.resolve(group_sample, &expert.signature_sample)?;
        let d = mmd_squared(group_sample, &expert.signature_sample, &kernel)?;
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((expert.expert_id, d));
        }
    }
    Ok(best.filter(|&(_, d)| d <= epsilon))
}

/// EMA update of the memory signature and a capped reservoir merge of the
/// signature sample.
pub fn update_latent_memory<R: Rng + ?Sized>(
    expert: &ExpertRecord,
    group_mean: &[f64],
    group_sample: &EmbeddingSet,
    ema_beta: f64,
    m_signature: usize,
    rng: &mut R,
) -> Result<ExpertRecord> {
    check_dim(expert.memory_signature.len(), group_mean.len())?;
    check_dim(expert.signature_sample.dim(), group_sample.dim())?;
    if !(0.0..=1.0).contains(&ema_beta) {
        return Err(Error::invalid("ema_beta must lie in [0, 1]"));
    }
    let mut out = expert.clone();
    for (s, g) in out.memory_signature.iter_mut().zip(group_mean) {
        *s = ema_beta * *s + (1.0 - ema_beta) * g;
    }
    out.signature_sample =
        reservoir_merge(&expert.signature_sample, group_sample, m_signature, rng)?;
    Ok(out)
}

/// Repeatedly merges the most similar pair of experts (cosine similarity of
/// flattened parameters) while that similarity exceeds `tau_merge`.
///
/// Merged parameters, signatures and label histograms are averaged with
/// weights equal to assigned-party counts (equal weights when both are
/// empty). The lower id survives and inherits both parties. With `u_max`
/// set, pairs whose combined load would exceed it are skipped.
pub fn consolidate_experts<R: Rng + ?Sized>(
    registry: &mut ExpertRegistry,
    tau_merge: f64,
    u_max: Option<usize>,
    m_signature: usize,
    rng: &mut R,
) -> Result<Vec<Merge>> {
    let mut merges = Vec::new();
    loop {
        let ids = registry.ids();
        let mut best: Option<(ExpertId, ExpertId, f64)> = None;
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                if let Some(cap) = u_max {
                    if registry.load(a) + registry.load(b) > cap {
                        continue;
                    }
                }
                let ea = &registry.experts[&a];
                let eb = &registry.experts[&b];
                let Ok(sim) = cosine_similarity(ea.params.weights(), eb.params.weights()) else {
                    continue;
                };
                if sim > tau_merge && best.is_none_or(|(_, _, s)| sim > s) {
                    best = Some((a, b, sim));
                }
            }
        }
        let Some((kept, absorbed, similarity)) = best else {
            break;
        };
        let (na, nb) = (registry.load(kept) as f64, registry.load(absorbed) as f64);
        let (wa, wb) = if na == 0.0 && nb == 0.0 {
            (1.0, 1.0)
        } else {
            (na, nb)
        };
        let ea = registry.experts.remove(&kept).expect("kept expert exists");
        let eb = registry
            .experts
            .remove(&absorbed)
            .expect("absorbed expert exists");
        let params = fed_aggregate(&[(&ea.params, wa), (&eb.params, wb)])?;
        let total = wa + wb;
        let memory_signature = ea
            .memory_signature
            .iter()
            .zip(&eb.memory_signature)
            .map(|(x, y)| (wa * x + wb * y) / total)
            .collect();
        let signature_sample =
            reservoir_merge(&ea.signature_sample, &eb.signature_sample, m_signature, rng)?;
        let agg_label_hist =
            LabelHistogram::mixture([(&ea.agg_label_hist, wa), (&eb.agg_label_hist, wb)])?;
        registry.experts.insert(
            kept,
            ExpertRecord {
                expert_id: kept,
                params,
                memory_signature,
                signature_sample,
                agg_label_hist,
                created_window: ea.created_window.min(eb.created_window),
            },
        );
        for e in registry.assignment.values_mut() {
            if *e == absorbed {
                *e = kept;
            }
        }
        merges.push(Merge {
            kept,
            absorbed,
            similarity,
        });
    }
    Ok(merges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, ModelShape};
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn sample(seed: u64, n: usize, offset: f64) -> EmbeddingSet {
        let mut rng = SimRng::seed_from_u64(seed);
        EmbeddingSet::new(
            (0..n)
                .map(|_| (0..3).map(|_| offset + rng.random::<f64>()).collect())
                .collect(),
        )
        .unwrap()
    }

    fn registry_with(params: &[ModelParams]) -> ExpertRegistry {
        let mut r = ExpertRegistry::empty();
        for (i, p) in params.iter().enumerate() {
            let s = sample(i as u64, 5, 0.0);
            let id = r
                .insert(
                    p.clone(),
                    s.mean(),
                    s,
                    LabelHistogram::uniform(2).unwrap(),
                    0,
                )
                .unwrap();
            r.assign(i, id).unwrap();
        }
        r
    }

    fn model(seed: u64) -> ModelParams {
        init_model(ModelShape::new(3, 4, 2).unwrap(), seed)
    }

    #[test]
    fn create_expert_clones_base_and_reassigns() {
        let mut r = registry_with(&[model(0)]);
        let base = model(9);
        let s = sample(4, 6, 1.0);
        let before = r.next_id();
        let id = create_expert(
            &mut r,
            &base,
            &[0, 5, 6],
            s.mean(),
            s,
            LabelHistogram::uniform(2).unwrap(),
            2,
        )
        .unwrap();
        assert_eq!(id, before);
        assert_eq!(r.len(), 2);
        assert_eq!(r.get(id).unwrap().params, base);
        for p in [0, 5, 6] {
            assert_eq!(r.expert_of(p), Some(id));
        }
        assert!(r.check_totality());
    }

    #[test]
    fn matching_rules() {
        let r = registry_with(&[model(0), model(1)]);
        let own = r.get(ExpertId(1)).unwrap().signature_sample.clone();
        let m = match_expert(&own, &r, 1e-9, Bandwidth::MedianHeuristic).unwrap();
        assert_eq!(m.map(|x| x.0), Some(ExpertId(1)));
        let far = sample(99, 5, 50.0);
        assert_eq!(
            match_expert(&far, &r, 1e-3, Bandwidth::Fixed(1.0)).unwrap(),
            None
        );
    }

    #[test]
    fn matching_tie_prefers_lowest_id() {
        let mut r = ExpertRegistry::empty();
        let s = sample(3, 5, 0.0);
        for _ in 0..3 {
            r.insert(
                model(0),
                s.mean(),
                s.clone(),
                LabelHistogram::uniform(2).unwrap(),
                0,
            )
            .unwrap();
        }
        let probe = sample(8, 5, 0.2);
        let m = match_expert(&probe, &r, 10.0, Bandwidth::Fixed(0.5))
            .unwrap()
            .unwrap();
        assert_eq!(m.0, ExpertId(0));
    }

    #[test]
    fn ema_arithmetic_and_convergence() {
        let r = registry_with(&[model(0)]);
        let mut e = r.get(ExpertId(0)).unwrap().clone();
        e.memory_signature = vec![0.0; 3];
        let g = sample(1, 4, 0.0);
        let mut rng = SimRng::seed_from_u64(0);
        let u = update_latent_memory(&e, &[1.0; 3], &g, 0.9, 16, &mut rng).unwrap();
        assert!(u.memory_signature.iter().all(|v| (v - 0.1).abs() < 1e-15));
        let same = update_latent_memory(&e, &[1.0; 3], &g, 1.0, 16, &mut rng).unwrap();
        assert_eq!(same.memory_signature, e.memory_signature);
        let target = [0.3, -2.0, 5.0];
        let mut cur = e.clone();
        for _ in 0..200 {
            cur = update_latent_memory(&cur, &target, &g, 0.9, 16, &mut rng).unwrap();
        }
        let err: f64 = cur
            .memory_signature
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-6);
        assert!(cur.signature_sample.len() <= 16);
        assert!(update_latent_memory(&e, &[1.0; 2], &g, 0.9, 16, &mut rng).is_err());
    }

    #[test]
    fn identical_experts_merge() {
        let mut r = registry_with(&[model(0), model(0)]);
        let merges =
            consolidate_experts(&mut r, 0.95, None, 16, &mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(merges.len(), 1);
        assert_eq!(r.ids(), vec![ExpertId(0)]);
        assert_eq!(r.expert_of(1), Some(ExpertId(0)));
        assert!(r.check_totality());
    }

    #[test]
    fn three_identical_experts_leave_one() {
        let mut r = registry_with(&[model(2), model(2), model(2)]);
        let merges =
            consolidate_experts(&mut r, 0.95, None, 16, &mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(merges.len(), 2);
        assert_eq!(r.ids(), vec![ExpertId(0)]);
        assert_eq!(r.parties_of(ExpertId(0)), vec![0, 1, 2]);
    }

    #[test]
    fn dissimilar_experts_untouched() {
        let mut r = registry_with(&[model(0), model(1), model(2)]);
        let before = r.clone();
        let merges =
            consolidate_experts(&mut r, 0.95, None, 16, &mut SimRng::seed_from_u64(0)).unwrap();
        assert!(merges.is_empty());
        assert_eq!(r, before);
    }

    #[test]
    fn merge_weights_follow_party_counts() {
        let mut a = model(0);
        let mut r = ExpertRegistry::empty();
        let s = sample(0, 4, 0.0);
        let id0 = r
            .insert(
                a.clone(),
                vec![0.0; 3],
                s.clone(),
                LabelHistogram::uniform(2).unwrap(),
                0,
            )
            .unwrap();
        a.weights_mut().iter_mut().for_each(|w| *w *= 1.01);
        let id1 = r
            .insert(
                a.clone(),
                vec![4.0; 3],
                s,
                LabelHistogram::uniform(2).unwrap(),
                1,
            )
            .unwrap();
        for p in 0..3 {
            r.assign(p, id1).unwrap();
        }
        r.assign(3, id0).unwrap();
        consolidate_experts(&mut r, 0.95, None, 16, &mut SimRng::seed_from_u64(0)).unwrap();
        let merged = r.get(ExpertId(0)).unwrap();
        assert!(merged
            .memory_signature
            .iter()
            .all(|v| (v - 3.0).abs() < 1e-12));
        assert_eq!(r.load(ExpertId(0)), 4);
    }

    #[test]
    fn footprint_scales_with_experts_and_parties() {
        let r1 = registry_with(&[model(0)]);
        let r2 = registry_with(&[model(0), model(1)]);
        let r3 = registry_with(&[model(0), model(1), model(2)]);
        let d1 = r2.footprint_bytes() - r1.footprint_bytes();
        let d2 = r3.footprint_bytes() - r2.footprint_bytes();
        assert_eq!(d1, d2);
    }
}

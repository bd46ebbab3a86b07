//! Facility-location assignment of parties to existing experts or candidate
//! new experts, with an exact solver for small instances and the greedy
//! cluster-then-match heuristic used at runtime.
//!
//! The objective is the total party-to-expert MMD², plus `lambda_open` per
//! opened candidate, plus `mu_balance` times the JSD between each active
//! expert's pooled label histogram and a reference histogram.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{jsd, mmd_squared, EmbeddingSet, KernelSpec, LabelHistogram};
use crate::rng::{rng_for, tag};

/// Largest instance the exact solver accepts.
pub const EXACT_MAX_PARTIES: usize = 12;
pub const EXACT_MAX_OPTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartyEntry {
    pub party_id: usize,
    pub sample: EmbeddingSet,
    pub label_hist: LabelHistogram,
    /// Weight of this party's histogram when pooling label histograms.
    #[serde(default = "one")]
    pub n_samples: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertEntry {
    pub id: usize,
    pub sample: EmbeddingSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateEntry {
    pub id: usize,
    /// Pooled sample of the cluster that proposes this candidate.
    pub sample: EmbeddingSet,
    /// Parties of that cluster.
    #[serde(default)]
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentProblem {
    pub parties: Vec<PartyEntry>,
    pub existing: Vec<ExpertEntry>,
    pub candidates: Vec<CandidateEntry>,
    pub lambda_open: f64,
    pub mu_balance: f64,
    #[serde(default)]
    pub u_max: Option<usize>,
    /// Reference label distribution; uniform when absent.
    #[serde(default)]
    pub reference_hist: Option<LabelHistogram>,
    pub kernel: KernelSpec,
    /// Precomputed MMD² table, one row per party in listed order and one
    /// column per expert then candidate in listed order. Replaces the kernel
    /// computation when present.
    #[serde(default)]
    pub costs: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSolution {
    /// `(party_id, expert_or_candidate_id)` pairs with z = 1.
    pub z: Vec<(usize, usize)>,
    /// Candidate id to opened flag.
    pub w: BTreeMap<usize, bool>,
    pub objective: f64,
}

impl AssignmentSolution {
    pub fn expert_of(&self, party: usize) -> Option<usize> {
        self.z.iter().find(|(p, _)| *p == party).map(|(_, k)| *k)
    }

    pub fn opened(&self) -> Vec<usize> {
        self.w
            .iter()
            .filter(|(_, open)| **open)
            .map(|(k, _)| *k)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Totality { party: usize, count: usize },
    ActivationCoupling { party: usize, candidate: usize },
    ForcedOpen { expert: usize },
    Capacity { option: usize, load: usize },
    UnknownId { id: usize },
}

impl Violation {
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::Totality { .. } => "totality",
            Violation::ActivationCoupling { .. } => "activation coupling",
            Violation::ForcedOpen { .. } => "forced open",
            Violation::Capacity { .. } => "capacity",
            Violation::UnknownId { .. } => "unknown id",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Totality { party, count } => {
                write!(f, "totality: party {party} has {count} assignments")
            }
            Violation::ActivationCoupling { party, candidate } => {
                write!(
                    f,
                    "activation coupling: party {party} uses closed candidate {candidate}"
                )
            }
            Violation::ForcedOpen { expert } => {
                write!(f, "forced open: existing expert {expert} marked closed")
            }
            Violation::Capacity { option, load } => {
                write!(f, "capacity: {option} serves {load} parties")
            }
            Violation::UnknownId { id } => write!(f, "unknown id {id}"),
        }
    }
}

/// Problem in canonical order (parties and options by id) with the cost
/// table resolved.
struct Prepared<'a> {
    parties: Vec<&'a PartyEntry>,
    option_ids: Vec<usize>,
    is_candidate: Vec<bool>,
    costs: Vec<Vec<f64>>,
    reference: LabelHistogram,
    problem: &'a AssignmentProblem,
}

impl AssignmentProblem {
    pub fn n_options(&self) -> usize {
        self.existing.len() + self.candidates.len()
    }

    pub fn within_exact_envelope(&self) -> bool {
        self.parties.len() <= EXACT_MAX_PARTIES && self.n_options() <= EXACT_MAX_OPTIONS
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_options() == 0 {
            return Err(Error::invalid(
                "assignment problem needs at least one expert or candidate",
            ));
        }
        let mut seen = BTreeSet::new();
        for id in self
            .existing
            .iter()
            .map(|e| e.id)
            .chain(self.candidates.iter().map(|c| c.id))
        {
            if !seen.insert(id) {
                return Err(Error::invalid(format!(
                    "duplicate expert/candidate id {id}"
                )));
            }
        }
        let mut parties = BTreeSet::new();
        for p in &self.parties {
            if !parties.insert(p.party_id) {
                return Err(Error::invalid(format!("duplicate party id {}", p.party_id)));
            }
        }
        for (v, name) in [
            (self.lambda_open, "lambda_open"),
            (self.mu_balance, "mu_balance"),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be a finite non-negative number"
                )));
            }
        }
        if let Some(cap) = self.u_max {
            if cap.saturating_mul(self.n_options()) < self.parties.len() {
                return Err(Error::Infeasible(format!(
                    "{} parties exceed total capacity {} x {cap}",
                    self.parties.len(),
                    self.n_options()
                )));
            }
        }
        if let Some(costs) = &self.costs {
            if costs.len() != self.parties.len()
                || costs.iter().any(|r| r.len() != self.n_options())
            {
                return Err(Error::invalid(
                    "cost table must be parties x (experts + candidates)",
                ));
            }
            if costs
                .iter()
                .flatten()
                .any(|c| !(c.is_finite() && *c >= 0.0))
            {
                return Err(Error::invalid("costs must be finite and non-negative"));
            }
        }
        Ok(())
    }

    fn prepare(&self) -> Result<Prepared<'_>> {
        self.validate()?;
        let mut options: Vec<(usize, bool, &EmbeddingSet, usize)> = self
            .existing
            .iter()
            .enumerate()
            .map(|(j, e)| (e.id, false, &e.sample, j))
            .chain(
                self.candidates
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (c.id, true, &c.sample, self.existing.len() + j)),
            )
            .collect();
        options.sort_by_key(|o| o.0);
        let mut order: Vec<usize> = (0..self.parties.len()).collect();
        order.sort_by_key(|&i| self.parties[i].party_id);
        let costs = order
            .iter()
            .map(|&i| {
                options
                    .iter()
                    .map(|&(_, _, sample, col)| match &self.costs {
                        Some(table) => Ok(table[i][col]),
                        None => Ok(
                            mmd_squared(&self.parties[i].sample, sample, &self.kernel)?.max(0.0)
                        ),
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let classes = self
            .parties
            .first()
            .map(|p| p.label_hist.classes())
            .or(self.reference_hist.as_ref().map(LabelHistogram::classes))
            .unwrap_or(1);
        let reference = match &self.reference_hist {
            Some(h) => h.clone(),
            None => LabelHistogram::uniform(classes)?,
        };
        Ok(Prepared {
            parties: order.iter().map(|&i| &self.parties[i]).collect(),
            option_ids: options.iter().map(|o| o.0).collect(),
            is_candidate: options.iter().map(|o| o.1).collect(),
            costs,
            reference,
            problem: self,
        })
    }
}

impl Prepared<'_> {
    fn n_options(&self) -> usize {
        self.option_ids.len()
    }

    /// Objective of an assignment given as an option index per canonical
    /// party, with `opened` candidates paying the opening cost.
    fn objective(&self, assign: &[usize], opened: &[bool]) -> Result<f64> {
        let mmd: f64 = assign
            .iter()
            .enumerate()
            .map(|(i, &j)| self.costs[i][j])
            .sum();
        let n_open = opened
            .iter()
            .zip(&self.is_candidate)
            .filter(|(o, c)| **o && **c)
            .count();
        let mut balance = 0.0;
        if self.problem.mu_balance > 0.0 {
            for j in 0..self.n_options() {
                let members: Vec<(&LabelHistogram, f64)> = assign
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a == j)
                    .map(|(i, _)| {
                        (
                            &self.parties[i].label_hist,
                            self.parties[i].n_samples.max(1) as f64,
                        )
                    })
                    .collect();
                if !members.is_empty() {
                    balance += jsd(&LabelHistogram::mixture(members)?, &self.reference)?;
                }
            }
        }
        Ok(mmd + self.problem.lambda_open * n_open as f64 + self.problem.mu_balance * balance)
    }

    fn used(&self, assign: &[usize]) -> Vec<bool> {
        let mut used = vec![false; self.n_options()];
        for &j in assign {
            used[j] = true;
        }
        used
    }

    fn solution(&self, assign: &[usize]) -> Result<AssignmentSolution> {
        let used = self.used(assign);
        let objective = self.objective(assign, &used)?;
        Ok(AssignmentSolution {
            z: assign
                .iter()
                .enumerate()
                .map(|(i, &j)| (self.parties[i].party_id, self.option_ids[j]))
                .collect(),
            w: (0..self.n_options())
                .filter(|&j| self.is_candidate[j])
                .map(|j| (self.option_ids[j], used[j]))
                .collect(),
            objective,
        })
    }
}

/// Every constraint violated by `solution`; empty when feasible.
pub fn check_feasibility(
    problem: &AssignmentProblem,
    solution: &AssignmentSolution,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let existing: BTreeSet<usize> = problem.existing.iter().map(|e| e.id).collect();
    let candidates: BTreeSet<usize> = problem.candidates.iter().map(|c| c.id).collect();
    let parties: BTreeSet<usize> = problem.parties.iter().map(|p| p.party_id).collect();
    let mut counts: BTreeMap<usize, usize> = parties.iter().map(|&p| (p, 0)).collect();
    let mut loads: BTreeMap<usize, usize> = BTreeMap::new();
    for &(party, option) in &solution.z {
        match counts.get_mut(&party) {
            Some(c) => *c += 1,
            None => violations.push(Violation::UnknownId { id: party }),
        }
        if !existing.contains(&option) && !candidates.contains(&option) {
            violations.push(Violation::UnknownId { id: option });
            continue;
        }
        if candidates.contains(&option) && !solution.w.get(&option).copied().unwrap_or(false) {
            violations.push(Violation::ActivationCoupling {
                party,
                candidate: option,
            });
        }
        *loads.entry(option).or_default() += 1;
    }
    for (&party, &count) in &counts {
        if count != 1 {
            violations.push(Violation::Totality { party, count });
        }
    }
    for (&id, &open) in &solution.w {
        if existing.contains(&id) && !open {
            violations.push(Violation::ForcedOpen { expert: id });
        } else if !existing.contains(&id) && !candidates.contains(&id) {
            violations.push(Violation::UnknownId { id });
        }
    }
    if let Some(cap) = problem.u_max {
        for (&option, &load) in &loads {
            if load > cap {
                violations.push(Violation::Capacity { option, load });
            }
        }
    }
    violations
}

/// Objective of a feasible solution; infeasible solutions are rejected.
pub fn objective_value(problem: &AssignmentProblem, solution: &AssignmentSolution) -> Result<f64> {
    let violations = check_feasibility(problem, solution);
    if let Some(v) = violations.first() {
        return Err(Error::invalid(format!("infeasible solution: {v}")));
    }
    let prep = problem.prepare()?;
    let index: BTreeMap<usize, usize> = prep
        .option_ids
        .iter()
        .enumerate()
        .map(|(j, &id)| (id, j))
        .collect();
    let assign: Vec<usize> = prep
        .parties
        .iter()
        .map(|p| {
            index[&solution
                .expert_of(p.party_id)
                .expect("feasible solution is total")]
        })
        .collect();
    let opened: Vec<bool> = prep
        .option_ids
        .iter()
        .zip(&prep.is_candidate)
        .map(|(id, &cand)| !cand || solution.w.get(id).copied().unwrap_or(false))
        .collect();
    prep.objective(&assign, &opened)
}

struct Search<'a, 'p> {
    prep: &'a Prepared<'p>,
    cap: usize,
    /// Sum of each remaining party's cheapest cost, from party i onwards.
    rest_min: Vec<f64>,
    assign: Vec<usize>,
    loads: Vec<usize>,
    prune_above: f64,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_, '_> {
    fn run(&mut self, i: usize, partial: f64, n_open: usize) -> Result<()> {
        let prep = self.prep;
        let bound = partial + self.rest_min[i] + prep.problem.lambda_open * n_open as f64;
        if bound > self.prune_above {
            return Ok(());
        }
        if let Some((best, _)) = &self.best {
            if bound >= *best {
                return Ok(());
            }
        }
        if i == prep.parties.len() {
            let objective = prep.objective(&self.assign, &prep.used(&self.assign))?;
            if self.best.as_ref().is_none_or(|(b, _)| objective < *b) {
                self.best = Some((objective, self.assign.clone()));
            }
            return Ok(());
        }
        for j in 0..prep.n_options() {
            if self.loads[j] >= self.cap {
                continue;
            }
            let opens = prep.is_candidate[j] && self.loads[j] == 0;
            self.loads[j] += 1;
            self.assign.push(j);
            self.run(
                i + 1,
                partial + prep.costs[i][j],
                n_open + usize::from(opens),
            )?;
            self.assign.pop();
            self.loads[j] -= 1;
        }
        Ok(())
    }
}

/// Global optimum by depth-first branch and bound over party assignments
/// (opening exactly the candidates that are used). Among equal objectives the
/// lexicographically smallest assignment by ids wins, so the result does not
/// depend on input order.
pub fn solve_exact(problem: &AssignmentProblem) -> Result<AssignmentSolution> {
    if !problem.within_exact_envelope() {
        return Err(Error::invalid(format!(
            "instance with {} parties and {} options exceeds the exact envelope ({EXACT_MAX_PARTIES} parties, {EXACT_MAX_OPTIONS} options)",
            problem.parties.len(),
            problem.n_options()
        )));
    }
    let prep = problem.prepare()?;
    let n = prep.parties.len();
    if n == 0 {
        return prep.solution(&[]);
    }
    let mut rest_min = vec![0.0; n + 1];
    for i in (0..n).rev() {
        rest_min[i] = rest_min[i + 1] + prep.costs[i].iter().copied().fold(f64::INFINITY, f64::min);
    }
    let greedy = solve_greedy(problem)?;
    let mut search = Search {
        prep: &prep,
        cap: problem.u_max.unwrap_or(usize::MAX),
        rest_min,
        assign: Vec::with_capacity(n),
        loads: vec![0; prep.n_options()],
        prune_above: greedy.objective + 1e-9 * (1.0 + greedy.objective.abs()),
        best: None,
    };
    search.run(0, 0.0, 0)?;
    match search.best {
        Some((_, assign)) => prep.solution(&assign),
        // Rounding kept every leaf above the greedy bound; greedy is optimal.
        None => Ok(greedy),
    }
}

/// Runtime heuristic: each candidate's cluster moves as a block to the
/// cheapest existing expert unless opening the candidate is cheaper by more
/// than the opening cost. Parties outside every cluster take their cheapest
/// option with room.
pub fn solve_greedy(problem: &AssignmentProblem) -> Result<AssignmentSolution> {
    let prep = problem.prepare()?;
    let n = prep.parties.len();
    let cap = problem.u_max.unwrap_or(usize::MAX);
    let row: BTreeMap<usize, usize> = prep
        .parties
        .iter()
        .enumerate()
        .map(|(i, p)| (p.party_id, i))
        .collect();
    let mut assign: Vec<Option<usize>> = vec![None; n];
    let mut loads = vec![0usize; prep.n_options()];
    let mut opened = vec![false; prep.n_options()];
    let existing: Vec<usize> = (0..prep.n_options())
        .filter(|&j| !prep.is_candidate[j])
        .collect();

    let mut candidates: Vec<&CandidateEntry> = problem.candidates.iter().collect();
    candidates.sort_by_key(|c| c.id);
    for cand in candidates {
        let cj = prep
            .option_ids
            .iter()
            .position(|&id| id == cand.id)
            .expect("candidate is an option");
        let mut members: Vec<usize> = cand
            .members
            .iter()
            .filter_map(|p| row.get(p).copied())
            .filter(|&i| assign[i].is_none())
            .collect();
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            continue;
        }
        let block_cost = |j: usize| members.iter().map(|&i| prep.costs[i][j]).sum::<f64>();
        let fits = |j: usize, loads: &[usize]| loads[j].saturating_add(members.len()) <= cap;
        let best_existing = existing
            .iter()
            .copied()
            .filter(|&j| fits(j, &loads))
            .map(|j| (j, block_cost(j)))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 <= cur.1 => Some(b),
                _ => Some(cur),
            });
        let centroid_cost = block_cost(cj);
        let target = match best_existing {
            Some((j, c)) if c <= centroid_cost + problem.lambda_open => Some(j),
            _ if fits(cj, &loads) => {
                opened[cj] = true;
                Some(cj)
            }
            Some((j, _)) => Some(j),
            None => None,
        };
        if let Some(j) = target {
            for &i in &members {
                assign[i] = Some(j);
                loads[j] += 1;
            }
        }
    }
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        if assign[i].is_some() {
            continue;
        }
        let pick = |open_only: bool| {
            (0..prep.n_options())
                .filter(|&j| loads[j] < cap && (!open_only || !prep.is_candidate[j] || opened[j]))
                .fold(None, |best: Option<usize>, j| match best {
                    Some(b) if prep.costs[i][b] <= prep.costs[i][j] => Some(b),
                    _ => Some(j),
                })
        };
        let j = pick(true)
            .or_else(|| pick(false))
            .ok_or_else(|| Error::Infeasible("no expert has room".into()))?;
        opened[j] = true;
        assign[i] = Some(j);
        loads[j] += 1;
    }
    let assign: Vec<usize> = assign
        .into_iter()
        .map(|a| a.expect("every party assigned"))
        .collect();
    prep.solution(&assign)
}

/// Exact and greedy objectives for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapResult {
    pub exact: f64,
    pub greedy: f64,
}

impl GapResult {
    /// Greedy over exact; 1 when both are zero.
    pub fn ratio(&self) -> f64 {
        if self.exact > 0.0 {
            self.greedy / self.exact
        } else if self.greedy <= 1e-12 {
            1.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn optimality_gap(problem: &AssignmentProblem) -> Result<GapResult> {
    Ok(GapResult {
        exact: solve_exact(problem)?.objective,
        greedy: solve_greedy(problem)?.objective,
    })
}

fn random_hist<R: Rng + ?Sized>(classes: usize, rng: &mut R) -> Result<LabelHistogram> {
    let raw: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // Absorb rounding so the histogram sums to one.
    let drift = 1.0 - p.iter().sum::<f64>();
    p[0] += drift;
    LabelHistogram::new(p)
}

/// Seeded random instance inside the exact envelope: parties drawn around a
/// few regime centres, existing experts at some regimes, and candidates
/// proposed by random clusters of parties.
pub fn fuzz_instance(seed: u64) -> Result<AssignmentProblem> {
    let mut rng = rng_for(seed, &[tag::TASK]);
    let dim = 2;
    let classes = 3;
    let n = rng.random_range(1..=EXACT_MAX_PARTIES);
    let n_existing = rng.random_range(0..=3usize);
    let n_candidates =
        rng.random_range(usize::from(n_existing == 0)..=EXACT_MAX_OPTIONS - n_existing);
    let regimes: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let cloud = |centre: &[f64], m: usize, rng: &mut crate::rng::SimRng| {
        EmbeddingSet::new(
            (0..m)
                .map(|_| {
                    centre
                        .iter()
                        .map(|c| c + rng.random_range(-0.5..0.5))
                        .collect()
                })
                .collect(),
        )
    };
    let mut parties = Vec::with_capacity(n);
    let mut party_regime = Vec::with_capacity(n);
    for p in 0..n {
        let r = rng.random_range(0..regimes.len());
        party_regime.push(r);
        parties.push(PartyEntry {
            party_id: p * 3 + 1,
            sample: cloud(&regimes[r], 6, &mut rng)?,
            label_hist: random_hist(classes, &mut rng)?,
            n_samples: rng.random_range(10..100),
        });
    }
    let existing = (0..n_existing)
        .map(|j| {
            Ok(ExpertEntry {
                id: j,
                sample: cloud(&regimes[rng.random_range(0..regimes.len())], 8, &mut rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut candidates = Vec::with_capacity(n_candidates);
    for j in 0..n_candidates {
        let members: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
        let sample = if members.is_empty() {
            cloud(&regimes[rng.random_range(0..regimes.len())], 8, &mut rng)?
        } else {
            EmbeddingSet::concat(members.iter().map(|&i| &parties[i].sample))?
        };
        candidates.push(CandidateEntry {
            id: 100 + j,
            sample,
            members: members.iter().map(|&i| parties[i].party_id).collect(),
        });
    }
    let n_options = n_existing + n_candidates;
    let u_max = if rng.random_bool(0.3) {
        Some(n.div_ceil(n_options) + rng.random_range(0..=2))
    } else {
        None
    };
    Ok(AssignmentProblem {
        parties,
        existing,
        candidates,
        lambda_open: rng.random_range(0.0..1.0),
        mu_balance: rng.random_range(0.0..1.0),
        u_max,
        reference_hist: None,
        kernel: KernelSpec::rbf(1.0)?,
        costs: None,
    })
}

/// Instance in which existing expert 0 matches every party exactly and all
/// label histograms equal the reference, so assigning everyone to it is the
/// unique zero-cost optimum.
pub fn dominance_instance(seed: u64) -> Result<AssignmentProblem> {
    let mut rng = rng_for(seed, &[tag::TASK, 1]);
    let n = rng.random_range(1..=EXACT_MAX_PARTIES);
    let shared = EmbeddingSet::new(
        (0..6)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect(),
    )?;
    let far = |offset: f64, rng: &mut crate::rng::SimRng| {
        EmbeddingSet::new(
            (0..6)
                .map(|_| vec![offset + rng.random::<f64>(), offset])
                .collect(),
        )
    };
    let uniform = LabelHistogram::uniform(3)?;
    let parties = (0..n)
        .map(|p| PartyEntry {
            party_id: p,
            sample: shared.clone(),
            label_hist: uniform.clone(),
            n_samples: 20,
        })
        .collect();
    let mut existing = vec![ExpertEntry {
        id: 0,
        sample: shared.clone(),
    }];
    let n_other = rng.random_range(0..=2usize);
    for j in 0..n_other {
        existing.push(ExpertEntry {
            id: j + 1,
            sample: far(5.0 + j as f64, &mut rng)?,
        });
    }
    let n_candidates = rng.random_range(0..=EXACT_MAX_OPTIONS - existing.len());
    let candidates = (0..n_candidates)
        .map(|j| {
            Ok(CandidateEntry {
                id: 10 + j,
                sample: far(-4.0 - j as f64, &mut rng)?,
                members: (0..n).filter(|p| p % (j + 2) == 0).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AssignmentProblem {
        parties,
        existing,
        candidates,
        lambda_open: rng.random_range(0.0..1.0),
        mu_balance: rng.random_range(0.0..1.0),
        u_max: None,
        reference_hist: None,
        kernel: KernelSpec::rbf(1.0)?,
        costs: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(x: f64) -> EmbeddingSet {
        EmbeddingSet::new(vec![vec![x]]).unwrap()
    }

    /// Two parties; costs to the existing expert (0.1, 0.8) and to the
    /// candidate built from party B's cluster (0.9, 0.0).
    pub(crate) fn two_party(lambda: f64) -> AssignmentProblem {
        let h = LabelHistogram::uniform(2).unwrap();
        AssignmentProblem {
            parties: vec![
                PartyEntry {
                    party_id: 0,
                    sample: point(0.0),
                    label_hist: h.clone(),
                    n_samples: 1,
                },
                PartyEntry {
                    party_id: 1,
                    sample: point(1.0),
                    label_hist: h,
                    n_samples: 1,
                },
            ],
            existing: vec![ExpertEntry {
                id: 0,
                sample: point(0.0),
            }],
            candidates: vec![CandidateEntry {
                id: 1,
                sample: point(1.0),
                members: vec![1],
            }],
            lambda_open: lambda,
            mu_balance: 0.0,
            u_max: None,
            reference_hist: None,
            kernel: KernelSpec::rbf(1.0).unwrap(),
            costs: Some(vec![vec![0.1, 0.9], vec![0.8, 0.0]]),
        }
    }

    /// Objective by enumerating every assignment and every opening pattern.
    fn brute_force(problem: &AssignmentProblem) -> f64 {
        let prep = problem.prepare().unwrap();
        let n = prep.parties.len();
        let k = prep.n_options();
        let cap = problem.u_max.unwrap_or(usize::MAX);
        let mut best = f64::INFINITY;
        let mut assign = vec![0; n];
        loop {
            let mut loads = vec![0; k];
            assign.iter().for_each(|&j| loads[j] += 1);
            if loads.iter().all(|&l| l <= cap) {
                let cand: Vec<usize> = (0..k).filter(|&j| prep.is_candidate[j]).collect();
                for mask in 0..(1u32 << cand.len()) {
                    let mut opened = vec![true; k];
                    for (b, &j) in cand.iter().enumerate() {
                        opened[j] = mask & (1 << b) != 0;
                    }
                    if assign.iter().all(|&j| opened[j]) {
                        best = best.min(prep.objective(&assign, &opened).unwrap());
                    }
                }
            }
            let mut pos = 0;
            loop {
                if pos == n {
                    return best;
                }
                assign[pos] += 1;
                if assign[pos] < k {
                    break;
                }
                assign[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn worked_example_opens_candidate() {
        let p = two_party(0.5);
        let s = solve_exact(&p).unwrap();
        assert_eq!(s.objective, 0.6);
        assert_eq!(s.opened(), vec![1]);
        assert_eq!(s.expert_of(0), Some(0));
        assert_eq!(s.expert_of(1), Some(1));
        assert_eq!(objective_value(&p, &s).unwrap(), 0.6);
        let closed = AssignmentSolution {
            z: vec![(0, 0), (1, 0)],
            w: [(1, false)].into(),
            objective: 0.0,
        };
        assert!((objective_value(&p, &closed).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn expensive_opening_keeps_candidate_closed() {
        let s = solve_exact(&two_party(10.0)).unwrap();
        assert!((s.objective - 0.9).abs() < 1e-15);
        assert!(s.opened().is_empty());
    }

    #[test]
    fn trivial_objectives() {
        let h = LabelHistogram::uniform(2).unwrap();
        let mut p = AssignmentProblem {
            parties: vec![PartyEntry {
                party_id: 5,
                sample: point(0.3),
                label_hist: h.clone(),
                n_samples: 4,
            }],
            existing: vec![ExpertEntry {
                id: 0,
                sample: point(0.3),
            }],
            candidates: vec![],
            lambda_open: 0.5,
            mu_balance: 1.0,
            u_max: None,
            reference_hist: None,
            kernel: KernelSpec::rbf(1.0).unwrap(),
            costs: None,
        };
        let s = AssignmentSolution {
            z: vec![(5, 0)],
            w: BTreeMap::new(),
            objective: 0.0,
        };
        assert_eq!(objective_value(&p, &s).unwrap(), 0.0);
        p.existing.clear();
        p.candidates.push(CandidateEntry {
            id: 3,
            sample: point(0.3),
            members: vec![5],
        });
        p.mu_balance = 0.0;
        let s = AssignmentSolution {
            z: vec![(5, 3)],
            w: [(3, true)].into(),
            objective: 0.0,
        };
        assert_eq!(objective_value(&p, &s).unwrap(), 0.5);
        p.parties.clear();
        let e = solve_exact(&p).unwrap();
        assert!(e.z.is_empty());
        assert_eq!(e.objective, 0.0);
    }

    #[test]
    fn feasibility_violations() {
        let p = two_party(0.5);
        let ok = solve_exact(&p).unwrap();
        assert!(check_feasibility(&p, &ok).is_empty());
        let double = AssignmentSolution {
            z: vec![(0, 0), (0, 1), (1, 1)],
            w: [(1, true)].into(),
            objective: 0.0,
        };
        assert!(check_feasibility(&p, &double)
            .iter()
            .any(|v| v.kind() == "totality"));
        let closed = AssignmentSolution {
            z: vec![(0, 0), (1, 1)],
            w: [(1, false)].into(),
            objective: 0.0,
        };
        assert!(check_feasibility(&p, &closed)
            .iter()
            .any(|v| v.kind() == "activation coupling"));
        assert!(objective_value(&p, &closed).is_err());
        let mut bounded = p.clone();
        bounded.u_max = Some(1);
        let crowded = AssignmentSolution {
            z: vec![(0, 0), (1, 0)],
            w: [(1, false)].into(),
            objective: 0.0,
        };
        assert!(check_feasibility(&bounded, &crowded)
            .iter()
            .any(|v| v.kind() == "capacity"));
        let forced = AssignmentSolution {
            z: vec![(0, 0), (1, 1)],
            w: [(0, false), (1, true)].into(),
            objective: 0.0,
        };
        assert!(check_feasibility(&p, &forced)
            .iter()
            .any(|v| v.kind() == "forced open"));
    }

    #[test]
    fn exact_matches_brute_force() {
        for seed in 0..60 {
            let mut p = fuzz_instance(seed).unwrap();
            // Keep the brute force small.
            p.parties.truncate(6);
            let exact = solve_exact(&p).unwrap();
            assert!(check_feasibility(&p, &exact).is_empty());
            let brute = brute_force(&p);
            assert!(
                (exact.objective - brute).abs() < 1e-9,
                "seed {seed}: {} vs {brute}",
                exact.objective
            );
        }
    }

    #[test]
    fn greedy_never_beats_exact() {
        for seed in 0..100 {
            let p = fuzz_instance(seed).unwrap();
            let g = solve_greedy(&p).unwrap();
            assert!(check_feasibility(&p, &g).is_empty(), "seed {seed}");
            let gap = optimality_gap(&p).unwrap();
            assert!(gap.ratio() >= 1.0 - 1e-9, "seed {seed}: {gap:?}");
        }
    }

    #[test]
    fn dominance_instances_agree() {
        for seed in 0..30 {
            let p = dominance_instance(seed).unwrap();
            let (e, g) = (solve_exact(&p).unwrap(), solve_greedy(&p).unwrap());
            assert_eq!(e, g, "seed {seed}");
            assert!(e.objective.abs() < 1e-12);
        }
    }

    #[test]
    fn free_opening_opens_cheaper_candidates() {
        let mut p = two_party(0.0);
        let g = solve_greedy(&p).unwrap();
        assert_eq!(g.opened(), vec![1]);
        p.costs = Some(vec![vec![0.1, 0.9], vec![0.0, 0.0]]);
        assert!(solve_greedy(&p).unwrap().opened().is_empty());
    }

    #[test]
    fn exact_is_order_invariant() {
        for seed in 0..20 {
            let p = fuzz_instance(seed).unwrap();
            let mut q = p.clone();
            q.parties.reverse();
            q.existing.reverse();
            q.candidates.reverse();
            let (a, b) = (solve_exact(&p).unwrap(), solve_exact(&q).unwrap());
            let mut az = a.z.clone();
            let mut bz = b.z.clone();
            az.sort_unstable();
            bz.sort_unstable();
            assert_eq!(az, bz, "seed {seed}");
            assert!((a.objective - b.objective).abs() < 1e-12);
        }
    }

    #[test]
    fn envelope_and_validation() {
        let mut p = two_party(0.5);
        p.existing.extend((10..15).map(|id| ExpertEntry {
            id,
            sample: point(0.0),
        }));
        p.costs = None;
        assert!(solve_exact(&p).is_err());
        assert!(solve_greedy(&p).is_ok());
        let mut dup = two_party(0.5);
        dup.candidates[0].id = 0;
        assert!(solve_greedy(&dup).is_err());
        let json = serde_json::to_string(&two_party(0.5)).unwrap();
        let back: AssignmentProblem = serde_json::from_str(&json).unwrap();
        assert_eq!(back, two_party(0.5));
    }

    #[test]
    fn removing_a_party_removes_its_cost() {
        let p = fuzz_instance(3).unwrap();
        let mut q = p.clone();
        q.mu_balance = 0.0;
        let s = solve_greedy(&q).unwrap();
        let gone = q.parties.pop().unwrap();
        let expert = s.expert_of(gone.party_id).unwrap();
        let sample = q
            .existing
            .iter()
            .find(|e| e.id == expert)
            .map(|e| &e.sample)
            .or_else(|| {
                q.candidates
                    .iter()
                    .find(|c| c.id == expert)
                    .map(|c| &c.sample)
            })
            .unwrap();
        let cost = mmd_squared(&gone.sample, sample, &q.kernel)
            .unwrap()
            .max(0.0);
        let mut reduced = s.clone();
        reduced.z.retain(|(party, _)| *party != gone.party_id);
        let before = {
            let mut full = q.clone();
            full.parties.push(gone);
            objective_value(&full, &s).unwrap()
        };
        assert!((before - objective_value(&q, &reduced).unwrap() - cost).abs() < 1e-12);
    }
}

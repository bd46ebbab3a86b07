//! K-means with k-means++ seeding and Davies-Bouldin model selection.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::numerics::squared_distance;

const MAX_ITERS: usize = 100;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index per input point. Clusters are numbered in order of
    /// their first member.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Member indices per cluster, each list ascending.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignments.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }

    fn single(points: &[Vec<f64>]) -> Self {
        let dim = points[0].len();
        let mut centroid = vec![0.0; dim];
        for p in points {
            centroid.iter_mut().zip(p).for_each(|(c, v)| *c += v);
        }
        centroid.iter_mut().for_each(|c| *c /= points.len() as f64);
        let inertia = points.iter().map(|p| squared_distance(p, &centroid)).sum();
        Self {
            assignments: vec![0; points.len()],
            centroids: vec![centroid],
            inertia,
        }
    }
}

fn validate(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points
        .first()
        .map(Vec::len)
        .ok_or(Error::Empty("clustering input"))?;
    for p in points {
        check_dim(dim, p.len())?;
    }
    Ok(dim)
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Clustering {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (j, _) = nearest(p, &centroids);
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // Re-seed an empty cluster at the worst-served point.
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, squared_distance(p, &centroids[assignments[i]])))
                    .fold(
                        (0, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
                centroids[j] = points[far.0].clone();
                assignments[far.0] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    canonicalize(points, assignments, centroids.len())
}

/// Renumbers clusters by first appearance, drops empty ones and recomputes
/// centroids and inertia from the final assignment.
fn canonicalize(points: &[Vec<f64>], assignments: Vec<usize>, k: usize) -> Clustering {
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    let assignments: Vec<usize> = assignments
        .iter()
        .map(|&a| {
            if remap[a] == usize::MAX {
                remap[a] = next;
                next += 1;
            }
            remap[a]
        })
        .collect();
    let dim = points[0].len();
    let mut centroids = vec![vec![0.0; dim]; next];
    let mut counts = vec![0usize; next];
    for (p, &a) in points.iter().zip(&assignments) {
        counts[a] += 1;
        centroids[a].iter_mut().zip(p).for_each(|(c, v)| *c += v);
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum();
    Clustering {
        assignments,
        centroids,
        inertia,
    }
}

/// Best-inertia k-means over `restarts` k-means++ initializations.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<Clustering> {
    validate(points)?;
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!(
            "k = {k} outside 1..={}",
            points.len()
        )));
    }
    if k == 1 {
        return Ok(Clustering::single(points));
    }
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, plus_plus_init(points, k, rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Davies-Bouldin index (lower is better). Undefined for a single cluster,
/// where `f64::INFINITY` is returned.
pub fn davies_bouldin(points: &[Vec<f64>], clustering: &Clustering) -> f64 {
    let k = clustering.k();
    if k < 2 {
        return f64::INFINITY;
    }
    let mut spread = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(&clustering.assignments) {
        spread[a] += squared_distance(p, &clustering.centroids[a]).sqrt();
        counts[a] += 1;
    }
    for (s, n) in spread.iter_mut().zip(&counts) {
        *s /= (*n).max(1) as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst: f64 = 0.0;
        for j in 0..k {
            if i == j {
                continue;
            }
            let sep = squared_distance(&clustering.centroids[i], &clustering.centroids[j]).sqrt();
            let ratio = if sep > 0.0 {
                (spread[i] + spread[j]) / sep
            } else {
                f64::INFINITY
            };
            worst = worst.max(ratio);
        }
        total += worst;
    }
    total / k as f64
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    let cmp = |a: &&Vec<f64>, b: &&Vec<f64>| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    sorted.sort_by(cmp);
    sorted.dedup_by(|a, b| cmp(&&**a, &&**b).is_eq());
    sorted.len()
}

/// Chooses k by Davies-Bouldin over `2..=min(k_max, n, distinct points)`.
///
/// A single cluster is returned when there are fewer than four points or
/// fewer than two distinct points; otherwise the lowest-index k wins among
/// equal scores.
pub fn select_k<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k_max: usize,
    restarts: usize,
    rng: &mut R,
) -> Result<Clustering> {
    validate(points)?;
    let distinct = distinct_count(points);
    let upper = k_max.min(points.len()).min(distinct);
    if points.len() < 4 || upper < 2 {
        return Ok(Clustering::single(points));
    }
    let mut best: Option<(f64, Clustering)> = None;
    for k in 2..=upper {
        let c = kmeans(points, k, restarts, rng)?;
        let score = davies_bouldin(points, &c);
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, c));
        }
    }
    Ok(best.expect("k range is non-empty").1)
}

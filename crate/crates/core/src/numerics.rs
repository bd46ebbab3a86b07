//! Kernel functions and distribution statistics.
//!
//! Everything here is a pure function of its inputs. The MMD estimator is the
//! biased V-statistic, which is non-negative for the RBF kernel and exactly
//! zero when both samples are identical.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A non-empty set of equal-length real vectors stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("embedding set"))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        if data.is_empty() {
            return Err(Error::Empty("embedding set"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "flat length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Concatenates several sets of the same dimension.
    pub fn concat<'a>(sets: impl IntoIterator<Item = &'a EmbeddingSet>) -> Result<Self> {
        let mut iter = sets.into_iter();
        let first = iter.next().ok_or(Error::Empty("embedding sets"))?;
        let mut out = first.clone();
        for set in iter {
            check_dim(out.dim, set.dim)?;
            out.data.extend_from_slice(&set.data);
        }
        Ok(out)
    }

    /// Keeps only the rows at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("row selection"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            dim: self.dim,
            data,
        })
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        self.dim.cmp(&other.dim).then_with(|| {
            for (a, b) in self.data.iter().zip(&other.data) {
                match a.total_cmp(b) {
                    Ordering::Equal => continue,
                    ord => return ord,
                }
            }
            self.data.len().cmp(&other.data.len())
        })
    }
}

/// Normalized class-frequency vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelHistogram {
    probs: Vec<f64>,
}

impl LabelHistogram {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("label histogram"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(
                "histogram entries must be finite and non-negative",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("histogram sums to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    /// Uniform distribution over `classes` classes.
    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Empty("label histogram"));
        }
        Ok(Self {
            probs: vec![1.0 / classes as f64; classes],
        })
    }

    /// Weighted mixture of histograms; weights need not be normalized.
    pub fn mixture<'a>(parts: impl IntoIterator<Item = (&'a LabelHistogram, f64)>) -> Result<Self> {
        let mut acc: Option<Vec<f64>> = None;
        let mut total = 0.0;
        for (hist, weight) in parts {
            if weight < 0.0 || !weight.is_finite() {
                return Err(Error::invalid(
                    "mixture weights must be finite and non-negative",
                ));
            }
            let acc = acc.get_or_insert_with(|| vec![0.0; hist.classes()]);
            check_dim(acc.len(), hist.classes())?;
            for (a, p) in acc.iter_mut().zip(&hist.probs) {
                *a += weight * p;
            }
            total += weight;
        }
        let mut acc = acc.ok_or(Error::Empty("histogram mixture"))?;
        if total <= 0.0 {
            return Err(Error::invalid("mixture weights sum to zero"));
        }
        acc.iter_mut().for_each(|a| *a /= total);
        Self::new(acc)
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl TryFrom<Vec<f64>> for LabelHistogram {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<LabelHistogram> for Vec<f64> {
    fn from(h: LabelHistogram) -> Self {
        h.probs
    }
}

/// RBF kernel `k(x, y) = exp(-gamma * |x - y|^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    gamma: f64,
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel gamma must be positive, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Median heuristic: `1 / median(|x - y|^2)` over distinct pairs of the
    /// pooled rows. Falls back to `gamma = 1` when the median distance is zero.
    pub fn median_heuristic(sets: &[&EmbeddingSet]) -> Result<Self> {
        let pooled = EmbeddingSet::concat(sets.iter().copied())?;
        let n = pooled.len();
        let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                dists.push(squared_distance(pooled.row(i), pooled.row(j)));
            }
        }
        if dists.is_empty() {
            return Self::rbf(1.0);
        }
        let mid = (dists.len() - 1) / 2;
        let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
        if *median > 0.0 && median.is_finite() {
            Self::rbf(1.0 / *median)
        } else {
            Self::rbf(1.0)
        }
    }
}

/// How the kernel bandwidth is chosen for a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Recompute the median heuristic over the pooled pair for every comparison.
    #[default]
    MedianHeuristic,
    Fixed(f64),
}

impl Bandwidth {
    pub fn resolve(&self, x: &EmbeddingSet, y: &EmbeddingSet) -> Result<KernelSpec> {
        match *self {
            Bandwidth::MedianHeuristic => KernelSpec::median_heuristic(&[x, y]),
            Bandwidth::Fixed(gamma) => KernelSpec::rbf(gamma),
        }
    }
}

pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rbf_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    Ok((-spec.gamma * squared_distance(x, y)).exp())
}

fn mean_kernel(a: &EmbeddingSet, b: &EmbeddingSet, gamma: f64) -> f64 {
    let mut sum = 0.0;
    for x in a.rows() {
        for y in b.rows() {
            sum += (-gamma * squared_distance(x, y)).exp();
        }
    }
    sum / (a.len() as f64 * b.len() as f64)
}

/// Biased (V-statistic) estimate of squared MMD.
///
/// The cross term is accumulated in a canonical order so that
/// `mmd_squared(x, y) == mmd_squared(y, x)` holds bit for bit.
pub fn mmd_squared(x: &EmbeddingSet, y: &EmbeddingSet, spec: &KernelSpec) -> Result<f64> {
    check_dim(x.dim(), y.dim())?;
    let gamma = spec.gamma;
    let kxx = mean_kernel(x, x, gamma);
    let kyy = mean_kernel(y, y, gamma);
    let kxy = match x.total_cmp(y) {
        Ordering::Greater => mean_kernel(y, x, gamma),
        _ => mean_kernel(x, y, gamma),
    };
    Ok(kxx + kyy - 2.0 * kxy)
}

fn kl_term(p: f64, m: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / m).ln()
    }
}

/// Jensen-Shannon divergence with natural logarithms, bounded by `ln 2`.
pub fn jsd(p: &LabelHistogram, q: &LabelHistogram) -> Result<f64> {
    check_dim(p.classes(), q.classes())?;
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        let m = 0.5 * (a + b);
        kl_p += kl_term(a, m);
        kl_q += kl_term(b, m);
    }
    Ok((0.5 * kl_p + 0.5 * kl_q).clamp(0.0, std::f64::consts::LN_2))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn label_histogram(labels: &[usize], classes: usize) -> Result<LabelHistogram> {
    if labels.is_empty() {
        return Err(Error::Empty("label list"));
    }
    let mut counts = vec![0usize; classes];
    for &label in labels {
        if label >= classes {
            return Err(Error::invalid(format!(
                "label {label} outside [0, {classes})"
            )));
        }
        counts[label] += 1;
    }
    let n = labels.len() as f64;
    LabelHistogram::new(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Nearest-rank empirical quantile (`q` in `[0, 1]`).
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile input"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("quantile level {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

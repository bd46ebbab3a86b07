use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::numerics::{label_histogram, LabelHistogram};

/// Labeled feature matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::invalid("dataset needs dim >= 1 and classes >= 1"));
        }
        check_dim(labels.len() * dim, features.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        Ok(Self {
            dim,
            classes,
            features,
            labels,
        })
    }

    pub fn from_rows(classes: usize, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::Empty("dataset"))?;
        let mut features = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            check_dim(dim, row.len())?;
            features.extend_from_slice(row);
        }
        Self::new(dim, classes, features, labels)
    }

    pub fn empty(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn label_histogram(&self) -> Result<LabelHistogram> {
        label_histogram(&self.labels, self.classes)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.feature(i));
            labels.push(self.labels[i]);
        }
        Self {
            dim: self.dim,
            classes: self.classes,
            features,
            labels,
        }
    }

    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        check_dim(self.dim, other.dim)?;
        check_dim(self.classes, other.classes)?;
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    /// Seeded shuffle, then the first `train_fraction` goes to train and the
    /// remainder to test. Both parts get at least one row when `len() >= 2`.
    pub fn split<R: Rng + ?Sized>(&self, train_fraction: f64, rng: &mut R) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        let mut cut = (train_fraction * self.len() as f64).round() as usize;
        if self.len() >= 2 {
            cut = cut.clamp(1, self.len() - 1);
        }
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }
}

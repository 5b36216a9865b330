use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Labeled samples, one feature row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Input(format!(
                "features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn empty(input_dim: usize, num_classes: usize) -> Self {
        Self {
            features: Tensor::zeros(0, input_dim),
            labels: Vec::new(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Same samples, declared over at least `num_classes` classes.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if num_classes < self.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, cannot shrink to {num_classes}",
                self.num_classes
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Features and labels of the given rows, in order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let (features, labels) = self.gather(indices);
        Self {
            features,
            labels,
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Indices of samples per class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by[y].push(i);
        }
        by
    }

    /// Concatenation of datasets sharing input width and class count.
    pub fn concat(parts: &[LabeledDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.input_dim() != first.input_dim() || p.num_classes != first.num_classes {
                return Err(Error::Input("datasets differ in width or classes".into()));
            }
            data.extend_from_slice(p.features.data());
            labels.extend_from_slice(&p.labels);
        }
        let features = Tensor::matrix(labels.len(), first.input_dim(), data)?;
        Self::new(features, labels, first.num_classes)
    }

    /// Seeded random subset of `n` samples (all of them when `n >= len`).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx = rand::seq::index::sample(rng, self.len(), n).into_vec();
        idx.sort_unstable();
        self.subset(&idx)
    }

    /// Shuffled split into `(train, test)` with `round(len * test_fraction)`
    /// test samples, at least one of each when `len >= 2`.
    pub fn split_train_test<R: Rng + ?Sized>(
        &self,
        test_fraction: f64,
        rng: &mut R,
    ) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!(
                "test fraction must be in [0, 1), got {test_fraction}"
            )));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut n_test = (n as f64 * test_fraction).round() as usize;
        if n >= 2 && test_fraction > 0.0 {
            n_test = n_test.clamp(1, n - 1);
        }
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    /// `(min, max)` over all feature values, `None` when empty.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        let data = self.features.data();
        if data.is_empty() {
            return None;
        }
        Some(data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        }))
    }
}

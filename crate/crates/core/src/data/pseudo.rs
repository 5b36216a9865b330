//! Unlabeled pseudo-data built by averaging groups of local samples.

use rand::seq::index;
use rand::Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// How many pseudo samples each client contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoCount {
    /// Exactly `K` per client.
    PerClient(usize),
    /// `⌈|D_i| / M⌉` for client `i`.
    CeilSizeOverM,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDataset {
    features: Tensor,
    m_per_sample: usize,
    per_client: Vec<usize>,
}

impl PseudoDataset {
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn m_per_sample(&self) -> usize {
        self.m_per_sample
    }

    /// Number of pseudo samples contributed by each client, in client order.
    pub fn per_client(&self) -> &[usize] {
        &self.per_client
    }
}

/// For every client, draws `K` groups of `M` distinct local samples and keeps
/// each group's arithmetic mean. Labels are discarded.
pub fn build_pseudo_data<R: Rng + ?Sized>(
    locals: &[LabeledDataset],
    count: PseudoCount,
    m: usize,
    rng: &mut R,
) -> Result<PseudoDataset> {
    if m < 2 {
        return Err(Error::Input(format!("need at least 2 samples per pseudo sample, got {m}")));
    }
    let dim = locals
        .first()
        .ok_or_else(|| Error::Input("no client datasets".into()))?
        .input_dim();
    let mut data = Vec::new();
    let mut per_client = Vec::with_capacity(locals.len());
    for (client, ds) in locals.iter().enumerate() {
        if ds.len() < m {
            return Err(Error::Input(format!(
                "client {client} has {} samples, fewer than M = {m}",
                ds.len()
            )));
        }
        if ds.input_dim() != dim {
            return Err(Error::Input(format!("client {client} has a different input width")));
        }
        let k = match count {
            PseudoCount::PerClient(k) => k,
            PseudoCount::CeilSizeOverM => ds.len().div_ceil(m),
        };
        for _ in 0..k {
            // Running mean: identical inputs reproduce themselves exactly, and
            // the clamp keeps rounding from leaving the group's value range.
            let mut mean = vec![0.0; dim];
            let mut lo = vec![f64::INFINITY; dim];
            let mut hi = vec![f64::NEG_INFINITY; dim];
            for (j, i) in index::sample(rng, ds.len(), m).into_iter().enumerate() {
                let n = (j + 1) as f64;
                for (d, v) in ds.features().row(i).iter().enumerate() {
                    mean[d] += (v - mean[d]) / n;
                    lo[d] = lo[d].min(*v);
                    hi[d] = hi[d].max(*v);
                }
            }
            data.extend((0..dim).map(|d| mean[d].clamp(lo[d], hi[d])));
        }
        per_client.push(k);
    }
    let rows = per_client.iter().sum();
    Ok(PseudoDataset {
        features: Tensor::matrix(rows, dim, data)?,
        m_per_sample: m,
        per_client,
    })
}

/// Uniform sample of `batch_size` distinct pseudo rows.
pub fn sample_pseudo_batch<R: Rng + ?Sized>(
    pd: &PseudoDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Tensor> {
    if batch_size > pd.len() {
        return Err(Error::Input(format!(
            "pseudo batch of {batch_size} from {} samples",
            pd.len()
        )));
    }
    let idx = index::sample(rng, pd.len(), batch_size).into_vec();
    Ok(pd.features.select_rows(&idx))
}

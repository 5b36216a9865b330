//! Label-skewed client partitioning with per-class Dirichlet draws.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};

const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_clients: usize,
    /// Dirichlet concentration; larger means closer to IID.
    pub alpha: f64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be a positive finite number, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Symmetric Dirichlet(α, …, α) draw of length `n`.
///
/// Gamma variates are drawn in log space so tiny α (where `U^{1/α}`
/// underflows) still yields a valid distribution.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let shape = if alpha < 1.0 { alpha + 1.0 } else { alpha };
    let gamma = Gamma::new(shape, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let mut lg = gamma.sample(rng).ln();
            if alpha < 1.0 {
                // Gamma(α) = Gamma(α + 1) · U^{1/α}
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                lg += u.ln() / alpha;
            }
            lg
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Integer counts summing exactly to `total`, proportional to `shares`
/// (largest-remainder rounding; ties go to the lower index).
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-client sample indices for each class drawn from Dirichlet(α).
fn allocate<R: Rng + ?Sized>(
    by_class: &[Vec<usize>],
    spec: &PartitionSpec,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut clients = vec![Vec::new(); spec.num_clients];
    for members in by_class {
        if members.is_empty() {
            continue;
        }
        let shares = sample_dirichlet(spec.alpha, spec.num_clients, rng);
        let counts = largest_remainder(&shares, members.len());
        let mut shuffled = members.clone();
        shuffled.shuffle(rng);
        let mut start = 0;
        for (client, &n) in clients.iter_mut().zip(&counts) {
            client.extend_from_slice(&shuffled[start..start + n]);
            start += n;
        }
    }
    clients
}

/// Splits `ds` across `spec.num_clients` clients. Every sample is assigned
/// exactly once and no client is left empty.
///
/// Empty clients trigger a fresh allocation (up to 100 times); if that keeps
/// failing, each empty client takes one sample from the currently largest.
pub fn lda_partition<R: Rng + ?Sized>(
    ds: &LabeledDataset,
    spec: &PartitionSpec,
    rng: &mut R,
) -> Result<Vec<LabeledDataset>> {
    spec.validate()?;
    if spec.num_clients > ds.len() {
        return Err(Error::Partition(format!(
            "{} clients but only {} samples",
            spec.num_clients,
            ds.len()
        )));
    }
    let by_class = ds.indices_by_class();
    let mut clients = allocate(&by_class, spec, rng);
    let mut attempts = 1;
    while clients.iter().any(Vec::is_empty) && attempts < MAX_RESAMPLES {
        clients = allocate(&by_class, spec, rng);
        attempts += 1;
    }
    while let Some(empty) = clients.iter().position(Vec::is_empty) {
        let donor = (0..clients.len())
            .max_by_key(|&i| (clients[i].len(), std::cmp::Reverse(i)))
            .expect("at least one client");
        if clients[donor].len() < 2 {
            return Err(Error::Partition(
                "cannot give every client a sample".into(),
            ));
        }
        let moved = clients[donor].pop().expect("donor has samples");
        clients[empty].push(moved);
    }
    Ok(clients
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            ds.subset(&idx)
        })
        .collect())
}

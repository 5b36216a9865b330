//! Communication rounds: broadcast, local training, aggregation, evaluation.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::algorithms::{run_local, AlgorithmKind, AlgorithmSpec, ClientAux, LocalResult, LocalTask};
use crate::config::{DataSource, RunConfig};
use crate::data::{
    build_pseudo_data, lda_partition, load_idx, rotate_images, synthetic_blobs, LabeledDataset,
    PseudoDataset,
};
use crate::error::{Error, Result};
use crate::nn::{add_scaled, weighted_average_params, ModelGrads, ModelParams, ModelSpec, ParamSet};
use crate::report::{RoundMetrics, RunReport, Summary};
use crate::rng::{SeedTree, Stream};

/// One participant: its training split, held-out test split and the shared
/// pseudo-data.
#[derive(Debug, Clone)]
pub struct ClientContext {
    pub id: usize,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub pseudo: Option<Arc<PseudoDataset>>,
}

/// Everything that changes between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    /// Completed rounds.
    pub round: usize,
    pub global: ModelParams,
    /// Aggregation weights `p_i`, fixed for the whole run.
    pub weights: Vec<f64>,
    /// SCAFFOLD server control variate.
    pub server_control: Option<ModelGrads>,
    /// SCAFFOLD per-client control variates.
    pub client_controls: Option<Vec<ModelGrads>>,
    /// Moon's per-client previous local models.
    pub previous_local: Option<Vec<ModelParams>>,
    /// Weighted mean local objective of the last round.
    pub last_train_loss: Option<f64>,
}

impl RoundState {
    /// Round-zero state; control variates start at zero and Moon's memory at
    /// the initial global model.
    pub fn new(global: ModelParams, weights: Vec<f64>, kind: AlgorithmKind) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || (total - 1.0).abs() > 1e-9 || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(format!(
                "client weights must be non-negative and sum to 1 (got {total})"
            )));
        }
        let n = weights.len();
        let (server_control, client_controls) = if kind == AlgorithmKind::Scaffold {
            let zero = global.zero_grads();
            (Some(zero.clone()), Some(vec![zero; n]))
        } else {
            (None, None)
        };
        let previous_local = (kind == AlgorithmKind::Moon).then(|| vec![global.clone(); n]);
        Ok(Self {
            round: 0,
            global,
            weights,
            server_control,
            client_controls,
            previous_local,
            last_train_loss: None,
        })
    }
}

/// Local-training knobs shared by all clients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub algorithm: AlgorithmSpec,
    pub local_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seeds: SeedTree,
}

/// `p_i = |D_i| / Σ_j |D_j|` over training splits.
pub fn size_weights(clients: &[ClientContext]) -> Result<Vec<f64>> {
    let total: usize = clients.iter().map(|c| c.train.len()).sum();
    if total == 0 {
        return Err(Error::Config("clients hold no training data".into()));
    }
    Ok(clients
        .iter()
        .map(|c| c.train.len() as f64 / total as f64)
        .collect())
}

/// One communication round. Clients train in parallel on the broadcast
/// snapshot; results are reduced in client order, so the outcome does not
/// depend on scheduling.
pub fn run_round(state: &RoundState, clients: &[ClientContext], settings: &TrainSettings) -> Result<RoundState> {
    if clients.len() != state.weights.len() {
        return Err(Error::Internal(format!(
            "{} clients but {} weights",
            clients.len(),
            state.weights.len()
        )));
    }
    let round = state.round as u64;
    let results: Vec<Result<LocalResult>> = clients
        .par_iter()
        .enumerate()
        .map(|(i, client)| {
            let task = LocalTask {
                train: &client.train,
                pseudo: client.pseudo.as_deref(),
                steps: settings.local_steps,
                lr: settings.lr,
                batch_size: settings.batch_size,
                batch_rng: settings.seeds.rng(Stream::Batch, &[round, client.id as u64]),
                pseudo_rng: settings.seeds.rng(Stream::PseudoBatch, &[round, client.id as u64]),
            };
            let aux = ClientAux {
                server_control: state.server_control.as_ref(),
                client_control: state.client_controls.as_ref().map(|c| &c[i]),
                previous: state.previous_local.as_ref().map(|p| &p[i]),
            };
            run_local(&settings.algorithm, &task, &state.global, aux).map_err(|e| Error::Client {
                client: client.id,
                source: Box::new(e),
            })
        })
        .collect();
    let results: Vec<LocalResult> = results.into_iter().collect::<Result<_>>()?;

    let entries: Vec<(&ModelParams, f64)> = results
        .iter()
        .zip(&state.weights)
        .map(|(r, &w)| (&r.params, w))
        .collect();
    let global = weighted_average_params(&entries)?;
    let train_loss = results
        .iter()
        .zip(&state.weights)
        .map(|(r, w)| w * r.mean_loss())
        .sum();

    let mut next = RoundState {
        round: state.round + 1,
        global,
        weights: state.weights.clone(),
        server_control: state.server_control.clone(),
        client_controls: state.client_controls.clone(),
        previous_local: None,
        last_train_loss: Some(train_loss),
    };
    if let (Some(c), Some(cis)) = (&mut next.server_control, &mut next.client_controls) {
        for ((ci, r), &w) in cis.iter_mut().zip(&results).zip(&state.weights) {
            let delta = r
                .control_delta
                .as_ref()
                .ok_or_else(|| Error::Internal("scaffold client returned no control delta".into()))?;
            add_scaled(ci, delta, 1.0)?;
            add_scaled(c, delta, w)?;
        }
    }
    if state.previous_local.is_some() {
        next.previous_local = Some(results.into_iter().map(|r| r.params).collect());
    }
    Ok(next)
}

/// Per-client test accuracy and the mean weighted by test-set size.
pub fn evaluate_global(params: &ModelParams, clients: &[ClientContext]) -> Result<(Vec<f64>, f64)> {
    let mut accs = Vec::with_capacity(clients.len());
    let mut correct_total = 0usize;
    let mut n_total = 0usize;
    for c in clients {
        if c.test.is_empty() {
            return Err(Error::Config(format!("client {} has an empty test split", c.id)));
        }
        let pred = params.predict(c.test.features())?;
        let correct = pred.iter().zip(c.test.labels()).filter(|(p, y)| p == y).count();
        accs.push(correct as f64 / c.test.len() as f64);
        correct_total += correct;
        n_total += c.test.len();
    }
    Ok((accs, correct_total as f64 / n_total as f64))
}

/// Loads or generates the full dataset described by `config`, applying the
/// subset selection.
pub fn load_dataset(config: &RunConfig) -> Result<LabeledDataset> {
    let seeds = SeedTree::new(config.schedule.seed);
    let d = &config.dataset;
    let ds = match d.source {
        DataSource::Idx => load_idx(&d.images, &d.labels)?,
        DataSource::Synthetic => {
            let seed = rand::Rng::random(&mut seeds.rng(Stream::Synthetic, &[]));
            synthetic_blobs(d.n_per_class, d.num_classes, d.input_dim, d.spread, seed)?
        }
    };
    if d.subset > 0 {
        Ok(ds.sample(d.subset, &mut seeds.rng(Stream::Subset, &[])))
    } else {
        Ok(ds)
    }
}

/// Partitions, optionally rotates per client, splits train/test and builds
/// the shared pseudo-data when the algorithm needs it.
pub fn prepare_clients(config: &RunConfig, ds: &LabeledDataset) -> Result<Vec<ClientContext>> {
    let seeds = SeedTree::new(config.schedule.seed);
    let parts = lda_partition(ds, &config.partition, &mut seeds.rng(Stream::Partition, &[]))?;
    let d = &config.dataset;
    let mut splits = Vec::with_capacity(parts.len());
    for (i, part) in parts.into_iter().enumerate() {
        let part = if d.rotate_step != 0.0 {
            let angle = (i % d.rotate_groups) as f64 * d.rotate_step;
            rotate_images(&part, angle)?
        } else {
            part
        };
        splits.push(part.split_train_test(d.test_fraction, &mut seeds.rng(Stream::Split, &[i as u64]))?);
    }
    let pseudo = if config.algorithm.uses_pseudo_data() {
        let trains: Vec<LabeledDataset> = splits.iter().map(|(tr, _)| tr.clone()).collect();
        let pd = build_pseudo_data(
            &trains,
            config.pseudo.count(),
            config.pseudo.m,
            &mut seeds.rng(Stream::PseudoData, &[]),
        )?;
        Some(Arc::new(pd))
    } else {
        None
    };
    Ok(splits
        .into_iter()
        .enumerate()
        .map(|(id, (train, test))| ClientContext {
            id,
            train,
            test,
            pseudo: pseudo.clone(),
        })
        .collect())
}

pub fn model_spec(config: &RunConfig, input_dim: usize, num_classes: usize) -> ModelSpec {
    let head = if config.algorithm.kind == AlgorithmKind::Moon {
        &config.model.moon_head
    } else {
        &config.model.augca_head
    };
    ModelSpec {
        input_dim,
        feature_layers: config.model.feature_layers.clone(),
        num_classes,
        projection_layers: head.clone(),
    }
}

/// A prepared federated run that can be stepped round by round.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub clients: Vec<ClientContext>,
    pub state: RoundState,
    pub settings: TrainSettings,
}

impl Simulation {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let ds = load_dataset(config)?;
        Self::from_dataset(config, &ds)
    }

    pub fn from_dataset(config: &RunConfig, ds: &LabeledDataset) -> Result<Self> {
        let clients = prepare_clients(config, ds)?;
        let seeds = SeedTree::new(config.schedule.seed);
        let spec = model_spec(config, ds.input_dim(), ds.num_classes());
        let global = ModelParams::init(&spec, &mut seeds.rng(Stream::Init, &[]))?;
        let state = RoundState::new(global, size_weights(&clients)?, config.algorithm.kind)?;
        Ok(Self {
            clients,
            state,
            settings: TrainSettings {
                algorithm: config.algorithm.clone(),
                local_steps: config.schedule.local_steps,
                batch_size: config.schedule.batch_size,
                lr: config.schedule.lr,
                seeds,
            },
        })
    }

    pub fn step(&mut self) -> Result<()> {
        self.state = run_round(&self.state, &self.clients, &self.settings)?;
        Ok(())
    }

    pub fn evaluate(&self) -> Result<RoundMetrics> {
        let (client_accuracy, mean_accuracy) = evaluate_global(&self.state.global, &self.clients)?;
        let worst_accuracy = client_accuracy.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(RoundMetrics {
            round: self.state.round,
            client_accuracy,
            mean_accuracy,
            worst_accuracy,
            train_loss: self.state.last_train_loss,
        })
    }

    pub fn num_params(&self) -> usize {
        self.state.global.num_params()
    }
}

/// Runs `rounds` rounds, evaluating at round 0, every `eval_every` rounds and
/// after the last round. `rounds = 0` only evaluates the initial model.
pub fn run_simulation(config: &RunConfig) -> Result<RunReport> {
    run_simulation_observed(config, |_| {})
}

pub fn run_simulation_observed(config: &RunConfig, on_eval: impl FnMut(&RoundMetrics)) -> Result<RunReport> {
    let start = Instant::now();
    let mut sim = Simulation::new(config)?;
    let series = run_rounds_observed(&mut sim, config.schedule.rounds, config.schedule.eval_every, on_eval)?;
    Ok(RunReport {
        summary: Summary::from_series(&series, config.output.top_k, config.output.acc_threshold)?,
        config: config.clone(),
        rounds: series,
        duration_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn run_rounds(sim: &mut Simulation, rounds: usize, eval_every: usize) -> Result<Vec<RoundMetrics>> {
    run_rounds_observed(sim, rounds, eval_every, |_| {})
}

/// [`run_rounds`] with a callback after every evaluation.
pub fn run_rounds_observed(
    sim: &mut Simulation,
    rounds: usize,
    eval_every: usize,
    mut on_eval: impl FnMut(&RoundMetrics),
) -> Result<Vec<RoundMetrics>> {
    let first = sim.evaluate()?;
    on_eval(&first);
    let mut series = vec![first];
    for t in 1..=rounds {
        sim.step()?;
        if t % eval_every.max(1) == 0 || t == rounds {
            let m = sim.evaluate()?;
            on_eval(&m);
            series.push(m);
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn client(id: usize, xs: &[[f64; 2]], ys: &[usize]) -> ClientContext {
        let ds = LabeledDataset::new(Tensor::from_rows(xs).unwrap(), ys.to_vec(), 3).unwrap();
        ClientContext {
            id,
            train: ds.clone(),
            test: ds,
            pseudo: None,
        }
    }

    fn constant_model(class: usize) -> ModelParams {
        use crate::nn::{Activation, Dense, DenseNet};
        let phi = DenseNet::new(vec![Dense::new(2, 2, vec![0.0; 4], vec![1.0, 1.0], Activation::Relu).unwrap()]).unwrap();
        let mut bias = vec![0.0; 3];
        bias[class] = 1.0;
        let omega = DenseNet::new(vec![Dense::new(2, 3, vec![0.0; 6], bias, Activation::Identity).unwrap()]).unwrap();
        let theta = DenseNet::new(vec![Dense::new(2, 2, vec![0.0; 4], vec![0.0; 2], Activation::Identity).unwrap()]).unwrap();
        ModelParams::new(phi, omega, theta).unwrap()
    }

    #[test]
    fn constant_predictor_accuracy_is_class_share() {
        let xs = [[0.0, 0.0]; 10];
        let ys = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2];
        let (acc, mean) = evaluate_global(&constant_model(0), &[client(0, &xs, &ys)]).unwrap();
        assert!((acc[0] - 0.3).abs() < 1e-12);
        assert!((mean - 0.3).abs() < 1e-12);
    }

    #[test]
    fn mean_is_weighted_by_test_size() {
        let a = client(0, &[[0.0, 0.0]; 1], &[0]);
        let b = client(1, &[[0.0, 0.0]; 3], &[1, 1, 1]);
        let (acc, mean) = evaluate_global(&constant_model(0), &[a, b]).unwrap();
        assert_eq!(acc, vec![1.0, 0.0]);
        assert!((mean - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_test_split_is_a_config_error() {
        let mut c = client(0, &[[0.0, 0.0]; 2], &[0, 1]);
        c.test = LabeledDataset::empty(2, 3);
        assert!(matches!(evaluate_global(&constant_model(0), &[c]), Err(Error::Config(_))));
    }

    #[test]
    fn round_state_rejects_bad_weights() {
        let g = constant_model(0);
        assert!(RoundState::new(g.clone(), vec![0.5, 0.6], AlgorithmKind::FedAvg).is_err());
        let s = RoundState::new(g, vec![0.5, 0.5], AlgorithmKind::Scaffold).unwrap();
        assert_eq!(s.client_controls.as_ref().unwrap().len(), 2);
    }
}

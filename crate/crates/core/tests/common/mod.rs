//! Helpers shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use std::path::PathBuf;

use fedaug_core::algorithms::{
    classification_grads, fedaug_objective, moon_objective, AlgorithmKind, AlgorithmSpec,
    FedAugParams,
};
use fedaug_core::config::{DataSource, RunConfig};
use fedaug_core::data::{
    build_pseudo_data, lda_partition, synthetic_blobs, LabeledDataset, PartitionSpec, PseudoCount,
};
use fedaug_core::engine::{run_round, ClientContext, RoundState, Simulation, TrainSettings};
use fedaug_core::nn::{
    add_scaled, augmean_loss, contrastive_loss, finite_diff_check, proximal_term, sgd_step,
    ModelGrads, ModelParams, ModelSpec, NetGrads, ParamSet, Tensor,
};
use fedaug_core::rng::SeedTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn mnist_paths() -> (PathBuf, PathBuf) {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k");
    (
        root.join("images-idx3-ubyte.gz"),
        root.join("labels-idx1-ubyte.gz"),
    )
}

pub fn tiny_spec() -> ModelSpec {
    ModelSpec {
        input_dim: 4,
        feature_layers: vec![6, 5],
        num_classes: 3,
        projection_layers: vec![4, 3],
    }
}

/// Initialized tiny model with small random biases, so that no layer starts
/// with every unit inactive (zero embeddings make cosine similarity
/// degenerate and finite differences meaningless).
pub fn tiny_model(seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = ModelParams::init(&tiny_spec(), &mut rng).unwrap();
    let flat: Vec<f64> = m
        .to_flat()
        .into_iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    m.assign_flat(&flat).unwrap();
    m
}

pub fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn rand_labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Phi,
    Omega,
    Theta,
}

fn part_of(g: &ModelGrads, part: Part) -> &NetGrads {
    match part {
        Part::Phi => &g.phi,
        Part::Omega => &g.omega,
        Part::Theta => &g.theta,
    }
}

/// Max relative error of `objective`'s gradient w.r.t. one model part,
/// checked on every coordinate by central differences.
pub fn check_part<F>(model: &ModelParams, part: Part, objective: F) -> f64
where
    F: Fn(&ModelParams) -> (f64, ModelGrads),
{
    let flat = match part {
        Part::Phi => model.phi.to_flat(),
        Part::Omega => model.omega.to_flat(),
        Part::Theta => model.theta.to_flat(),
    };
    let report = finite_diff_check(
        |p| {
            let mut m = model.clone();
            match part {
                Part::Phi => m.phi.assign_flat(p).unwrap(),
                Part::Omega => m.omega.assign_flat(p).unwrap(),
                Part::Theta => m.theta.assign_flat(p).unwrap(),
            }
            let (loss, g) = objective(&m);
            (loss, part_of(&g, part).to_flat())
        },
        &flat,
        1e-6,
        usize::MAX,
        0,
    );
    report.max_rel_error
}

/// Every loss of the system, each checked w.r.t. every part it depends on.
pub fn gradient_check_suite() -> Vec<(String, f64)> {
    let model = tiny_model(11);
    let global = tiny_model(12);
    let previous = tiny_model(13);
    let x = rand_tensor(6, 4, 21);
    let xa = rand_tensor(6, 4, 22);
    let y = rand_labels(6, 3, 23);
    let prior = vec![1.0 / 3.0; 3];
    let mut out = Vec::new();

    for part in [Part::Phi, Part::Omega] {
        out.push((
            format!("cross-entropy wrt {part:?}"),
            check_part(&model, part, |m| classification_grads(m, &x, &y).unwrap()),
        ));
    }

    let contrastive = |m: &ModelParams, projected: bool| {
        let theta = projected.then_some(&m.theta);
        let c = contrastive_loss(&m.phi, &global.phi, theta, &x, &xa, 0.5, 0.3).unwrap();
        let mut g = m.zero_grads();
        g.phi = c.phi;
        if let Some(t) = c.theta {
            g.theta = t;
        }
        (c.loss, g)
    };
    out.push((
        "contrastive wrt Phi".into(),
        check_part(&model, Part::Phi, |m| contrastive(m, true)),
    ));
    out.push((
        "contrastive wrt Theta".into(),
        check_part(&model, Part::Theta, |m| contrastive(m, true)),
    ));
    out.push((
        "contrastive (raw features) wrt Phi".into(),
        check_part(&model, Part::Phi, |m| contrastive(m, false)),
    ));

    for part in [Part::Phi, Part::Omega] {
        out.push((
            format!("augmean wrt {part:?}"),
            check_part(&model, part, |m| augmean_loss(m, &xa, &prior).unwrap()),
        ));
    }

    out.push((
        "fedprox proximal wrt Phi".into(),
        check_part(&model, Part::Phi, |m| {
            let mut g = m.zero_grads();
            let l = proximal_term(&m.phi, &global.phi, 0.7, &mut g.phi).unwrap();
            (l, g)
        }),
    ));

    for part in [Part::Phi, Part::Omega, Part::Theta] {
        out.push((
            format!("moon objective wrt {part:?}"),
            check_part(&model, part, |m| {
                moon_objective(m, &global, &previous, &x, &y, 0.8, 0.5).unwrap()
            }),
        ));
    }

    let hp = FedAugParams {
        lambda: 0.7,
        mu: 0.9,
        tau1: 0.5,
        tau2: 0.4,
        theta_lr: 0.1,
        use_projection: true,
    };
    for part in [Part::Phi, Part::Omega] {
        out.push((
            format!("fedaug stage-two objective wrt {part:?}"),
            check_part(&model, part, |m| {
                let (l, g) = fedaug_objective(m, &global.phi, &x, &y, &xa, &hp, &prior).unwrap();
                (l.total, g)
            }),
        ));
    }
    out
}

/// Small synthetic run description used by the engine-level checks.
pub fn synthetic_config(kind: &str, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.source = DataSource::Synthetic;
    cfg.dataset.n_per_class = 30;
    cfg.dataset.num_classes = 4;
    cfg.dataset.input_dim = 6;
    cfg.dataset.spread = 0.15;
    cfg.partition.num_clients = 3;
    cfg.partition.alpha = 0.5;
    cfg.model.feature_layers = vec![8, 6];
    cfg.model.augca_head = vec![6, 4];
    cfg.model.moon_head = vec![5];
    cfg.algorithm.kind = kind.parse().unwrap();
    cfg.pseudo.m = 3;
    cfg.schedule.rounds = 6;
    cfg.schedule.local_steps = 4;
    cfg.schedule.batch_size = 8;
    cfg.schedule.lr = 0.1;
    cfg.schedule.seed = seed;
    cfg.schedule.eval_every = 2;
    cfg
}

pub fn max_abs_diff<P: ParamSet>(a: &P, b: &P) -> f64 {
    a.to_flat()
        .iter()
        .zip(b.to_flat())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn bitwise_equal<P: ParamSet>(a: &P, b: &P) -> bool {
    let (a, b) = (a.to_flat(), b.to_flat());
    a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Per-client class shares and label entropies over several seeds.
pub struct PartitionStats {
    pub max_share_deviation: f64,
    pub mean_entropy: f64,
    pub conserved: bool,
}

pub fn partition_stats(alpha: f64, seeds: std::ops::Range<u64>) -> PartitionStats {
    let ds = synthetic_blobs(500, 10, 2, 0.1, 99).unwrap();
    let mut max_dev: f64 = 0.0;
    let mut entropy_sum = 0.0;
    let mut clients_seen = 0usize;
    let mut conserved = true;
    for seed in seeds {
        let spec = PartitionSpec { num_clients: 10, alpha };
        let parts = lda_partition(&ds, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut totals = vec![0usize; 10];
        for p in &parts {
            let counts = p.class_counts();
            for (t, c) in totals.iter_mut().zip(&counts) {
                *t += c;
            }
            let n = p.len() as f64;
            let mut h = 0.0;
            for &c in &counts {
                if c > 0 {
                    let q = c as f64 / n;
                    max_dev = max_dev.max((q - 0.1).abs());
                    h -= q * q.ln();
                } else {
                    max_dev = max_dev.max(0.1);
                }
            }
            entropy_sum += h;
            clients_seen += 1;
        }
        conserved &= totals == ds.class_counts() && parts.iter().map(|p| p.len()).sum::<usize>() == ds.len();
    }
    PartitionStats {
        max_share_deviation: max_dev,
        mean_entropy: entropy_sum / clients_seen as f64,
        conserved,
    }
}


/// |D_A| = N·K, values inside the source range, identical sources exact.
pub fn pseudo_properties() -> (bool, bool, bool) {
    let ds = synthetic_blobs(20, 4, 6, 0.3, 3).unwrap();
    let parts: Vec<LabeledDataset> = (0..5)
        .map(|i| ds.subset(&(i * 16..(i + 1) * 16).collect::<Vec<_>>()))
        .collect();
    let pd = build_pseudo_data(&parts, PseudoCount::PerClient(7), 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let size_ok = pd.len() == 5 * 7 && pd.per_client() == [7; 5];
    let (lo, hi) = ds.value_range().unwrap();
    let range_ok = pd.features().data().iter().all(|v| *v >= lo && *v <= hi);
    let x = [0.1, 0.7, 0.3, 0.9, 0.5, 0.2];
    let same = LabeledDataset::new(Tensor::from_rows(&[x; 6]).unwrap(), vec![0; 6], 1).unwrap();
    let pd = build_pseudo_data(&[same], PseudoCount::PerClient(3), 5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let exact_ok = pd.features().iter_rows().all(|r| r == x);
    (size_ok, range_ok, exact_ok)
}


/// Largest `|c − Σ p_i c_i|` seen after any of `rounds` SCAFFOLD rounds.
pub fn scaffold_invariant_gap(rounds: usize) -> f64 {
    let mut cfg = synthetic_config("scaffold", 2);
    cfg.partition.num_clients = 4;
    cfg.partition.alpha = 0.2;
    let mut sim = Simulation::new(&cfg).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..rounds {
        sim.step().unwrap();
        let st = &sim.state;
        let mut sum = st.global.zero_grads();
        for (ci, w) in st.client_controls.as_ref().unwrap().iter().zip(&st.weights) {
            add_scaled(&mut sum, ci, *w).unwrap();
        }
        worst = worst.max(max_abs_diff(st.server_control.as_ref().unwrap(), &sum));
    }
    worst
}


pub fn clients_from(parts: Vec<LabeledDataset>) -> Vec<ClientContext> {
    parts
        .into_iter()
        .enumerate()
        .map(|(id, d)| ClientContext {
            id,
            train: d.clone(),
            test: d,
            pseudo: None,
        })
        .collect()
}

pub fn settings(kind: AlgorithmKind, steps: usize, lr: f64, bs: usize) -> TrainSettings {
    TrainSettings {
        algorithm: AlgorithmSpec::new(kind),
        local_steps: steps,
        batch_size: bs,
        lr,
        seeds: SeedTree::new(3),
    }
}

/// Round of one full-batch step per client versus one centralized step on
/// the union; weights `p_i = |D_i|/|D|` make the two coincide.
pub fn full_batch_round_vs_centralized() -> f64 {
    let ds = synthetic_blobs(12, 3, 4, 0.2, 77).unwrap();
    let parts = vec![
        ds.subset(&(0..5).collect::<Vec<_>>()),
        ds.subset(&(5..20).collect::<Vec<_>>()),
        ds.subset(&(20..36).collect::<Vec<_>>()),
    ];
    let clients = clients_from(parts);
    let g = tiny_model(21);
    let weights: Vec<f64> = clients.iter().map(|c| c.train.len() as f64 / 36.0).collect();
    let state = RoundState::new(g.clone(), weights, AlgorithmKind::FedAvg).unwrap();
    let next = run_round(&state, &clients, &settings(AlgorithmKind::FedAvg, 1, 0.4, 1000)).unwrap();
    let (_, grads) = classification_grads(&g, ds.features(), ds.labels()).unwrap();
    let mut central = g.clone();
    sgd_step(&mut central.phi, &grads.phi, 0.4).unwrap();
    sgd_step(&mut central.omega, &grads.omega, 0.4).unwrap();
    max_abs_diff(&next.global, &central)
}


//! Equivalences between local rules and between a federated round and
//! centralized training.

mod common;

use common::*;
use fedaug_core::algorithms::{
    augca_no_adversarial, augca_stage_one, classification_grads, fedaug_local, fedaug_objective,
    local_update_fedavg, local_update_fedmix, local_update_fedprox, local_update_moon,
    local_update_scaffold, mix_inputs, run_local, AlgorithmKind, AlgorithmSpec, ClientAux,
    FedAugParams, LocalTask,
};
use fedaug_core::data::{build_pseudo_data, synthetic_blobs, LabeledDataset, PseudoCount, PseudoDataset};
use fedaug_core::engine::{run_round, RoundState, Simulation};
use fedaug_core::nn::{sgd_step, ModelParams, ParamSet};
use fedaug_core::report::write_metrics_csv;
use fedaug_core::engine::run_rounds;
use fedaug_core::rng::Stream;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn blobs(seed: u64) -> LabeledDataset {
    synthetic_blobs(10, 3, 4, 0.2, seed).unwrap()
}

fn pseudo_for(ds: &LabeledDataset) -> PseudoDataset {
    build_pseudo_data(std::slice::from_ref(ds), PseudoCount::PerClient(20), 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
}

fn task<'a>(ds: &'a LabeledDataset, pseudo: Option<&'a PseudoDataset>, steps: usize, lr: f64, bs: usize) -> LocalTask<'a> {
    LocalTask {
        train: ds,
        pseudo,
        steps,
        lr,
        batch_size: bs,
        batch_rng: ChaCha8Rng::seed_from_u64(1),
        pseudo_rng: ChaCha8Rng::seed_from_u64(2),
    }
}

#[test]
fn fedprox_without_proximal_weight_is_bitwise_fedavg() {
    let ds = blobs(1);
    let g = tiny_model(3);
    let a = local_update_fedavg(&task(&ds, None, 7, 0.1, 8), &g).unwrap();
    let b = local_update_fedprox(&task(&ds, None, 7, 0.1, 8), &g, 0.0).unwrap();
    assert!(bitwise_equal(&a.params, &b.params));
    assert_eq!(a.loss_trace, b.loss_trace);
}

#[test]
fn huge_proximal_weight_pins_the_model() {
    let ds = blobs(1);
    let g = tiny_model(3);
    // The proximal gradient vanishes on the first step (w starts at
    // w_global), so the pull shows over many steps. With η·μ_prox = 1 each
    // step lands at w_global − η·g, while the free run keeps drifting.
    let one = local_update_fedprox(&task(&ds, None, 1, 1e-9, 30), &g, 1e9).unwrap();
    let free_one = local_update_fedprox(&task(&ds, None, 1, 1e-9, 30), &g, 0.0).unwrap();
    assert!(bitwise_equal(&one.params, &free_one.params));

    let free = local_update_fedprox(&task(&ds, None, 200, 1e-9, 30), &g, 0.0).unwrap();
    let pinned = local_update_fedprox(&task(&ds, None, 200, 1e-9, 30), &g, 1e9).unwrap();
    let ratio = max_abs_diff(&free.params, &g) / max_abs_diff(&pinned.params, &g);
    assert!(ratio >= 100.0, "ratio {ratio}");
}

#[test]
fn scaffold_with_zero_controls_and_one_step_is_fedavg() {
    let ds = blobs(2);
    let g = tiny_model(4);
    let zero = g.zero_grads();
    let a = local_update_fedavg(&task(&ds, None, 1, 0.2, 8), &g).unwrap();
    let b = local_update_scaffold(&task(&ds, None, 1, 0.2, 8), &g, &zero, &zero).unwrap();
    assert!(max_abs_diff(&a.params, &b.params) <= 1e-12);
}

#[test]
fn fedaug_without_auxiliary_weights_is_fedavg() {
    let ds = blobs(3);
    let pd = pseudo_for(&ds);
    let g = tiny_model(5);
    let hp = FedAugParams {
        lambda: 0.0,
        mu: 0.0,
        tau1: 0.5,
        tau2: 0.5,
        theta_lr: 0.1,
        use_projection: true,
    };
    let a = local_update_fedavg(&task(&ds, None, 9, 0.1, 8), &g).unwrap();
    let b = fedaug_local(&task(&ds, Some(&pd), 9, 0.1, 8), &g, &hp, &[1.0 / 3.0; 3]).unwrap();
    assert!(max_abs_diff(&a.params, &b.params) <= 1e-12);
    assert!(bitwise_equal(&g.theta, &b.params.theta));
}

#[test]
fn zero_weight_variants_reduce_to_fedavg() {
    let ds = blobs(4);
    let pd = pseudo_for(&ds);
    let g = tiny_model(6);
    let base = local_update_fedavg(&task(&ds, None, 5, 0.1, 8), &g).unwrap();
    let mix = local_update_fedmix(&task(&ds, Some(&pd), 5, 0.1, 8), &g, 0.0).unwrap();
    assert!(bitwise_equal(&base.params, &mix.params));
    let moon = local_update_moon(&task(&ds, None, 5, 0.1, 8), &g, &tiny_model(7), 0.0, 0.5).unwrap();
    assert!(bitwise_equal(&base.params, &moon.params));
    let noadv = augca_no_adversarial(&task(&ds, Some(&pd), 5, 0.1, 8), &g, 0.0, 0.5, 0.5, &[1.0 / 3.0; 3]).unwrap();
    assert!(max_abs_diff(&base.params, &noadv.params) <= 1e-12);
}

#[test]
fn zero_learning_rate_leaves_every_rule_unchanged() {
    let ds = blobs(5);
    let pd = pseudo_for(&ds);
    let g = tiny_model(8);
    for kind in AlgorithmKind::ALL {
        let spec = AlgorithmSpec::new(kind);
        let zero = g.zero_grads();
        let aux = ClientAux {
            server_control: Some(&zero),
            client_control: Some(&zero),
            previous: Some(&g),
        };
        let out = run_local(&spec, &task(&ds, Some(&pd), 4, 0.0, 8), &g, aux).unwrap();
        assert!(bitwise_equal(&out.params, &g), "{kind} moved with lr 0");
        if let Some(d) = out.control_delta {
            assert!(d.to_flat().iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn one_step_full_batch_fedavg_is_plain_gradient_descent() {
    let ds = blobs(6);
    let g = tiny_model(9);
    let out = local_update_fedavg(&task(&ds, None, 1, 0.3, ds.len()), &g).unwrap();
    let (_, grads) = classification_grads(&g, ds.features(), ds.labels()).unwrap();
    let mut expected = g.clone();
    sgd_step(&mut expected.phi, &grads.phi, 0.3).unwrap();
    sgd_step(&mut expected.omega, &grads.omega, 0.3).unwrap();
    // Full batch visits rows in a shuffled order, so sums differ by rounding.
    assert!(max_abs_diff(&out.params, &expected) <= 1e-12);
}

#[test]
fn stages_update_disjoint_parameter_sets() {
    let ds = blobs(7);
    let pd = pseudo_for(&ds);
    let mut model = tiny_model(10);
    let frozen = tiny_model(11).phi;
    let (x, y) = ds.gather(&[0, 3, 6, 9, 12, 15]);
    let xa = pd.features().select_rows(&[0, 1, 2, 3, 4, 5]);
    let hp = FedAugParams {
        lambda: 1.0,
        mu: 1.0,
        tau1: 0.5,
        tau2: 0.5,
        theta_lr: 0.5,
        use_projection: true,
    };
    let before = model.clone();
    augca_stage_one(&mut model, &frozen, &x, &xa, &hp).unwrap();
    assert!(bitwise_equal(&model.phi, &before.phi));
    assert!(bitwise_equal(&model.omega, &before.omega));
    assert!(!bitwise_equal(&model.theta, &before.theta));

    let after_one = model.clone();
    let (_, grads) = fedaug_objective(&model, &frozen, &x, &y, &xa, &hp, &[1.0 / 3.0; 3]).unwrap();
    assert!(grads.theta.to_flat().iter().all(|v| *v == 0.0));
    sgd_step(&mut model.phi, &grads.phi, 0.1).unwrap();
    sgd_step(&mut model.omega, &grads.omega, 0.1).unwrap();
    assert!(bitwise_equal(&model.theta, &after_one.theta));
    assert!(!bitwise_equal(&model.phi, &after_one.phi));
}

#[test]
fn stage_one_ascends_the_contrastive_loss() {
    let ds = blobs(8);
    let pd = pseudo_for(&ds);
    let mut model = tiny_model(12);
    let frozen = tiny_model(13).phi;
    let (x, _) = ds.gather(&[1, 2, 4, 8, 16, 20]);
    let xa = pd.features().select_rows(&[6, 7, 8, 9, 10, 11]);
    let hp = FedAugParams {
        lambda: 1.0,
        mu: 0.0,
        tau1: 0.5,
        tau2: 0.5,
        theta_lr: 1e-3,
        use_projection: true,
    };
    let l0 = augca_stage_one(&mut model, &frozen, &x, &xa, &hp).unwrap();
    let l1 = augca_stage_one(&mut model, &frozen, &x, &xa, &hp).unwrap();
    assert!(l1 > l0, "{l1} <= {l0}");
}

#[test]
fn no_adversarial_ablation_never_touches_theta() {
    let ds = blobs(9);
    let pd = pseudo_for(&ds);
    let g = tiny_model(14);
    let out = augca_no_adversarial(&task(&ds, Some(&pd), 6, 0.1, 8), &g, 1.0, 0.5, 0.5, &[1.0 / 3.0; 3]).unwrap();
    assert!(bitwise_equal(&out.params.theta, &g.theta));
    assert!(!bitwise_equal(&out.params.phi, &g.phi));
}

#[test]
fn moon_contrast_is_ln2_when_all_models_coincide() {
    let ds = blobs(10);
    let g = tiny_model(15);
    let (x, y) = ds.gather(&[0, 1, 2, 3]);
    let (l_with, _) = fedaug_core::algorithms::moon_objective(&g, &g, &g, &x, &y, 1.0, 0.5).unwrap();
    let (l_without, _) = classification_grads(&g, &x, &y).unwrap();
    assert!((l_with - l_without - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn mixed_inputs_stay_in_range() {
    let a = rand_tensor(5, 4, 1);
    let b = rand_tensor(5, 4, 2);
    for lam in [0.0, 0.3, 1.0] {
        let m = mix_inputs(&a, &b, lam).unwrap();
        assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_eq!(mix_inputs(&a, &b, 1.0).unwrap(), b);
}

#[test]
fn full_batch_round_equals_centralized_step() {
    assert!(full_batch_round_vs_centralized() <= 1e-9);
}

#[test]
fn single_client_round_is_local_sgd() {
    let ds = blobs(11);
    let g = tiny_model(22);
    let clients = clients_from(vec![ds.clone()]);
    let state = RoundState::new(g.clone(), vec![1.0], AlgorithmKind::FedAvg).unwrap();
    let s = settings(AlgorithmKind::FedAvg, 6, 0.1, 8);
    let next = run_round(&state, &clients, &s).unwrap();
    let t = LocalTask {
        train: &ds,
        pseudo: None,
        steps: 6,
        lr: 0.1,
        batch_size: 8,
        batch_rng: s.seeds.rng(Stream::Batch, &[0, 0]),
        pseudo_rng: s.seeds.rng(Stream::PseudoBatch, &[0, 0]),
    };
    let local = local_update_fedavg(&t, &g).unwrap();
    assert!(bitwise_equal(&next.global, &local.params));
}

#[test]
fn identical_clients_aggregate_to_either_result() {
    let ds = blobs(12);
    let g = tiny_model(23);
    let mut clients = clients_from(vec![ds.clone(), ds]);
    // Same id => same batch stream, so both clients compute the same update.
    clients[1].id = 0;
    let state = RoundState::new(g, vec![0.5, 0.5], AlgorithmKind::Scaffold).unwrap();
    let s = settings(AlgorithmKind::Scaffold, 5, 0.1, 8);
    let mut st = state;
    for _ in 0..3 {
        st = run_round(&st, &clients, &s).unwrap();
        let cis = st.client_controls.as_ref().unwrap();
        assert!(max_abs_diff(&cis[0], &cis[1]) <= 1e-9);
    }
    let t = LocalTask {
        train: &clients[0].train,
        pseudo: None,
        steps: 5,
        lr: 0.1,
        batch_size: 8,
        batch_rng: s.seeds.rng(Stream::Batch, &[3, 0]),
        pseudo_rng: s.seeds.rng(Stream::PseudoBatch, &[3, 0]),
    };
    let c = st.server_control.clone().unwrap();
    let ci = st.client_controls.as_ref().unwrap()[0].clone();
    let local = local_update_scaffold(&t, &st.global, &c, &ci).unwrap();
    let next = run_round(&st, &clients, &s).unwrap();
    assert!(max_abs_diff(&next.global, &local.params) <= 1e-12);
}

fn run_to_csv(cfg: &fedaug_core::RunConfig) -> (String, ModelParams) {
    let mut sim = Simulation::new(cfg).unwrap();
    let series = run_rounds(&mut sim, cfg.schedule.rounds, cfg.schedule.eval_every).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_metrics_csv(&series, &path).unwrap();
    (std::fs::read_to_string(path).unwrap(), sim.state.global)
}

#[test]
fn engine_level_reductions() {
    let avg = synthetic_config("fedavg", 4);
    let (csv_avg, g_avg) = run_to_csv(&avg);

    let mut prox = synthetic_config("fedprox", 4);
    prox.algorithm.mu_prox = 0.0;
    let (csv_prox, g_prox) = run_to_csv(&prox);
    assert_eq!(csv_avg, csv_prox);
    assert!(bitwise_equal(&g_avg, &g_prox));

    let mut aug = synthetic_config("fedaug", 4);
    aug.algorithm.lambda = 0.0;
    aug.algorithm.mu = 0.0;
    let (_, g_aug) = run_to_csv(&aug);
    assert!(max_abs_diff(&g_avg, &g_aug) <= 1e-12);

    let mut sc = synthetic_config("scaffold", 4);
    sc.schedule.local_steps = 1;
    sc.schedule.rounds = 1;
    let mut one = synthetic_config("fedavg", 4);
    one.schedule.local_steps = 1;
    one.schedule.rounds = 1;
    let (_, g_sc) = run_to_csv(&sc);
    let (_, g_one) = run_to_csv(&one);
    assert!(max_abs_diff(&g_sc, &g_one) <= 1e-12);
}

#[test]
fn parameter_count_is_constant_across_rounds() {
    let cfg = synthetic_config("fedaug", 1);
    let mut sim = Simulation::new(&cfg).unwrap();
    let n = sim.num_params();
    for _ in 0..3 {
        sim.step().unwrap();
        assert_eq!(sim.num_params(), n);
    }
}

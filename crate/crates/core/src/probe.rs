//! Measures local-learning bias: a model trained on a subset of classes is
//! compared against a centrally trained one from the same initialization.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{classification_grads, BatchSampler};
use crate::config::RunConfig;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{cosine_similarity, sgd_step, ModelParams, ModelSpec};
use crate::rng::{SeedTree, Stream};

pub const OPERATIONALIZATION_NOTE: &str = "bias is flagged when classifier_bias >= 0.99 and \
s_local > s_cross; both thresholds are operational choices for what is otherwise a visual, \
qualitative observation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub local_classes: Vec<usize>,
    pub epochs: usize,
    pub seed: u64,
    /// Share of held-out samples from the unseen classes that the local
    /// model assigns to one of its own classes.
    pub classifier_bias: f64,
    /// Same statistic for the centrally trained model.
    pub global_classifier_bias: f64,
    /// Mean cosine similarity between local and global features of the same
    /// seen-class input.
    pub s_cross: f64,
    /// Mean cosine similarity between local features of a seen-class input
    /// and an unseen-class input.
    pub s_local: f64,
    pub pairs: usize,
    /// Local-model predictions on unseen-class samples, per class.
    pub unseen_prediction_histogram: Vec<usize>,
    pub local_accuracy_seen: f64,
    pub global_accuracy: f64,
    pub bias_detected: bool,
    pub note: String,
}

/// Everything a probe produced, including the two trained models.
#[derive(Debug, Clone)]
pub struct ProbeRun {
    pub report: ProbeReport,
    pub local: ModelParams,
    pub global: ModelParams,
    pub seen_test: LabeledDataset,
    pub unseen_test: LabeledDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSettings {
    pub classes: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub pairs: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub feature_layers: Vec<usize>,
}

impl ProbeSettings {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            classes: config.probe.classes.clone(),
            epochs: config.probe.epochs,
            lr: config.probe.lr,
            batch_size: config.probe.batch_size,
            pairs: config.probe.pairs,
            test_fraction: config.probe.test_fraction,
            seed: config.schedule.seed,
            feature_layers: config.model.feature_layers.clone(),
        }
    }
}

/// `(samples in class_set, all other samples)`.
pub fn split_by_classes(ds: &LabeledDataset, class_set: &[usize]) -> Result<(LabeledDataset, LabeledDataset)> {
    if class_set.is_empty() {
        return Err(Error::Input("class set is empty".into()));
    }
    if let Some(c) = class_set.iter().find(|&&c| c >= ds.num_classes()) {
        return Err(Error::Input(format!(
            "class {c} out of range for {} classes",
            ds.num_classes()
        )));
    }
    let (inside, outside): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| class_set.contains(&ds.labels()[i]));
    if inside.is_empty() || outside.is_empty() {
        return Err(Error::Input(format!(
            "class split leaves one side empty ({} / {} samples)",
            inside.len(),
            outside.len()
        )));
    }
    Ok((ds.subset(&inside), ds.subset(&outside)))
}

/// Plain mini-batch SGD on the classification loss for `epochs` passes.
pub fn train_classifier(
    model: &mut ModelParams,
    data: &LabeledDataset,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: ChaCha8Rng,
) -> Result<()> {
    let mut sampler = BatchSampler::new(data.len(), batch_size, rng)?;
    let steps_per_epoch = data.len() / sampler.batch_size();
    for _ in 0..epochs * steps_per_epoch {
        let (x, y) = data.gather(sampler.next_batch());
        let (_, g) = classification_grads(model, &x, &y)?;
        sgd_step(&mut model.phi, &g.phi, lr)?;
        sgd_step(&mut model.omega, &g.omega, lr)?;
    }
    Ok(())
}

fn accuracy(model: &ModelParams, ds: &LabeledDataset) -> Result<f64> {
    let pred = model.predict(ds.features())?;
    let ok = pred.iter().zip(ds.labels()).filter(|(p, y)| p == y).count();
    Ok(ok as f64 / ds.len().max(1) as f64)
}

pub fn run_probe(ds: &LabeledDataset, settings: &ProbeSettings) -> Result<ProbeRun> {
    let seeds = SeedTree::new(settings.seed);
    let (seen, unseen) = split_by_classes(ds, &settings.classes)?;
    let (seen_train, seen_test) = seen.split_train_test(settings.test_fraction, &mut seeds.rng(Stream::Probe, &[0]))?;
    let (unseen_train, unseen_test) =
        unseen.split_train_test(settings.test_fraction, &mut seeds.rng(Stream::Probe, &[1]))?;
    if seen_test.is_empty() || unseen_test.is_empty() {
        return Err(Error::Input("probe needs held-out samples on both sides".into()));
    }

    let spec = ModelSpec {
        input_dim: ds.input_dim(),
        feature_layers: settings.feature_layers.clone(),
        num_classes: ds.num_classes(),
        projection_layers: vec![1],
    };
    let init = ModelParams::init(&spec, &mut seeds.rng(Stream::Init, &[]))?;
    let mut local = init.clone();
    let mut global = init;
    train_classifier(
        &mut local,
        &seen_train,
        settings.epochs,
        settings.lr,
        settings.batch_size,
        seeds.rng(Stream::Batch, &[0]),
    )?;
    let union = LabeledDataset::concat(&[seen_train, unseen_train])?;
    train_classifier(
        &mut global,
        &union,
        settings.epochs,
        settings.lr,
        settings.batch_size,
        seeds.rng(Stream::Batch, &[1]),
    )?;

    let in_set = |preds: &[usize]| {
        preds.iter().filter(|p| settings.classes.contains(p)).count() as f64 / preds.len() as f64
    };
    let local_unseen = local.predict(unseen_test.features())?;
    let global_unseen = global.predict(unseen_test.features())?;
    let mut histogram = vec![0usize; ds.num_classes()];
    for &p in &local_unseen {
        histogram[p] += 1;
    }

    let f_local_seen = local.phi.forward(seen_test.features())?;
    let f_global_seen = global.phi.forward(seen_test.features())?;
    let f_local_unseen = local.phi.forward(unseen_test.features())?;
    let mut rng = seeds.rng(Stream::Probe, &[2]);
    let mut s_cross = 0.0;
    let mut s_local = 0.0;
    for _ in 0..settings.pairs {
        let a = rng.random_range(0..seen_test.len());
        s_cross += cosine_similarity(f_local_seen.row(a), f_global_seen.row(a));
        let a = rng.random_range(0..seen_test.len());
        let b = rng.random_range(0..unseen_test.len());
        s_local += cosine_similarity(f_local_seen.row(a), f_local_unseen.row(b));
    }
    s_cross /= settings.pairs as f64;
    s_local /= settings.pairs as f64;

    let classifier_bias = in_set(&local_unseen);
    let held_out = LabeledDataset::concat(&[seen_test.clone(), unseen_test.clone()])?;
    let report = ProbeReport {
        local_classes: settings.classes.clone(),
        epochs: settings.epochs,
        seed: settings.seed,
        classifier_bias,
        global_classifier_bias: in_set(&global_unseen),
        s_cross,
        s_local,
        pairs: settings.pairs,
        unseen_prediction_histogram: histogram,
        local_accuracy_seen: accuracy(&local, &seen_test)?,
        global_accuracy: accuracy(&global, &held_out)?,
        bias_detected: classifier_bias >= 0.99 && s_local > s_cross,
        note: OPERATIONALIZATION_NOTE.to_string(),
    };
    Ok(ProbeRun {
        report,
        local,
        global,
        seen_test,
        unseen_test,
    })
}

/// Writes `label,f0,...,f{d-1}` followed by one row per sample.
pub fn export_features(model: &ModelParams, ds: &LabeledDataset, path: &Path) -> Result<()> {
    let dim = model.phi.output_dim();
    let mut out = String::from("label");
    for j in 0..dim {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    if !ds.is_empty() {
        let feats = model.phi.forward(ds.features())?;
        for (row, y) in feats.iter_rows().zip(ds.labels()) {
            let _ = write!(out, "{y}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub const PROBE_REPORT_FILE: &str = "probe.json";

/// Writes the JSON report plus feature dumps of the held-out samples from
/// both models into `dir` (created if needed).
pub fn export_probe(run: &ProbeRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&run.report)
        .map_err(|e| Error::Internal(format!("serializing probe report: {e}")))?;
    let path = dir.join(PROBE_REPORT_FILE);
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let held_out = LabeledDataset::concat(&[run.seen_test.clone(), run.unseen_test.clone()])?;
    export_features(&run.local, &held_out, &dir.join("features_local.csv"))?;
    export_features(&run.global, &held_out, &dir.join("features_global.csv"))
}

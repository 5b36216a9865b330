//! Experiment configuration: a sectioned `key = value` text format.
//!
//! ```text
//! [algorithm]
//! kind = fedaug
//! lambda = 1.0
//!
//! [schedule]
//! rounds = 100
//! ```
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown sections and keys are rejected, as are repeated keys.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmKind, AlgorithmSpec};
use crate::data::{PartitionSpec, PseudoCount};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Gaussian blobs generated from the run seed.
    Synthetic,
    /// IDX image/label files (optionally gzipped).
    Idx,
}

impl DataSource {
    fn as_str(self) -> &'static str {
        match self {
            DataSource::Synthetic => "synthetic",
            DataSource::Idx => "idx",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub images: PathBuf,
    pub labels: PathBuf,
    /// Keep a seeded random subset of this many samples; 0 keeps all.
    pub subset: usize,
    /// Synthetic source only.
    pub n_per_class: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    pub spread: f64,
    /// Fraction of each client's partition held out for testing.
    pub test_fraction: f64,
    /// Client `i` sees its images rotated by `(i mod rotate_groups) · rotate_step`
    /// degrees. 0 disables rotation.
    pub rotate_step: f64,
    pub rotate_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden widths of the feature extractor; the last is the feature size.
    pub feature_layers: Vec<usize>,
    /// Projection head used by the pseudo-data methods.
    pub augca_head: Vec<usize>,
    /// Projection head used by Moon.
    pub moon_head: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoConfig {
    /// Real samples averaged into each pseudo sample.
    pub m: usize,
    /// Pseudo samples per client; 0 means `⌈|D_i| / m⌉`.
    pub per_client: usize,
}

impl PseudoConfig {
    pub fn count(&self) -> PseudoCount {
        if self.per_client == 0 {
            PseudoCount::CeilSizeOverM
        } else {
            PseudoCount::PerClient(self.per_client)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub rounds: usize,
    pub local_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Evaluate every this many rounds (round 0 and the final round are
    /// always evaluated).
    pub eval_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    /// Empty means "decided by the caller".
    pub dir: PathBuf,
    /// Mean-accuracy level used for rounds-to-threshold.
    pub acc_threshold: f64,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Classes the local model sees.
    pub classes: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Random pairs used for the similarity estimates.
    pub pairs: usize,
    pub test_fraction: f64,
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub partition: PartitionSpec,
    pub model: ModelConfig,
    pub algorithm: AlgorithmSpec,
    pub pseudo: PseudoConfig,
    pub schedule: ScheduleConfig,
    pub output: OutputConfig,
    pub probe: ProbeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig {
                source: DataSource::Idx,
                images: PathBuf::from("data/mnist-5k/images-idx3-ubyte.gz"),
                labels: PathBuf::from("data/mnist-5k/labels-idx1-ubyte.gz"),
                subset: 0,
                n_per_class: 100,
                num_classes: 10,
                input_dim: 20,
                spread: 0.1,
                test_fraction: 0.2,
                rotate_step: 0.0,
                rotate_groups: 6,
            },
            partition: PartitionSpec {
                num_clients: 10,
                alpha: 0.1,
            },
            model: ModelConfig {
                feature_layers: vec![128, 64],
                augca_head: vec![64, 64, 32],
                moon_head: vec![64, 32],
            },
            algorithm: AlgorithmSpec::new(AlgorithmKind::FedAvg),
            pseudo: PseudoConfig { m: 10, per_client: 0 },
            schedule: ScheduleConfig {
                rounds: 200,
                local_steps: 50,
                batch_size: 32,
                lr: 0.001,
                seed: 0,
                eval_every: 5,
            },
            output: OutputConfig {
                dir: PathBuf::new(),
                acc_threshold: 0.8,
                top_k: 5,
            },
            probe: ProbeConfig {
                classes: vec![0, 1, 2, 3, 4],
                epochs: 10,
                lr: 0.05,
                batch_size: 32,
                pairs: 10_000,
                test_fraction: 0.2,
            },
        }
    }
}

/// Recognised keys, in serialization order.
const KEYS: &[(&str, &[&str])] = &[
    (
        "dataset",
        &[
            "source",
            "images",
            "labels",
            "subset",
            "n_per_class",
            "num_classes",
            "input_dim",
            "spread",
            "test_fraction",
            "rotate_step",
            "rotate_groups",
        ],
    ),
    ("partition", &["num_clients", "alpha"]),
    ("model", &["feature_layers", "augca_head", "moon_head"]),
    (
        "algorithm",
        &[
            "kind",
            "lambda",
            "mu",
            "tau1",
            "tau2",
            "mu_prox",
            "mu_moon",
            "moon_tau",
            "lambda_mix",
            "use_projection",
            "theta_lr",
            "pseudo_m",
            "pseudo_per_client",
        ],
    ),
    (
        "schedule",
        &["rounds", "local_steps", "batch_size", "lr", "seed", "eval_every"],
    ),
    ("output", &["dir", "acc_threshold", "top_k"]),
    (
        "probe",
        &["classes", "epochs", "lr", "batch_size", "pairs", "test_fraction"],
    ),
];

fn known(section: &str, key: &str) -> bool {
    KEYS.iter()
        .any(|(s, keys)| *s == section && keys.contains(&key))
}

fn parse_err(location: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.to_string(),
        message: message.into(),
    }
}

fn typed<T: FromStr>(raw: &str, what: &str, loc: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| parse_err(loc, format!("expected {what}, got '{raw}'")))
}

fn real(raw: &str, loc: &str) -> Result<f64> {
    let v: f64 = typed(raw, "a number", loc)?;
    if !v.is_finite() {
        return Err(parse_err(loc, format!("value must be finite, got '{raw}'")));
    }
    Ok(v)
}

fn non_negative(raw: &str, loc: &str) -> Result<f64> {
    let v = real(raw, loc)?;
    if v < 0.0 {
        return Err(parse_err(loc, format!("must be >= 0, got {v}")));
    }
    Ok(v)
}

fn positive(raw: &str, loc: &str) -> Result<f64> {
    let v = real(raw, loc)?;
    if v <= 0.0 {
        return Err(parse_err(loc, format!("must be > 0, got {v}")));
    }
    Ok(v)
}

fn unit(raw: &str, loc: &str) -> Result<f64> {
    let v = real(raw, loc)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(parse_err(loc, format!("must be in [0, 1], got {v}")));
    }
    Ok(v)
}

fn count(raw: &str, loc: &str) -> Result<usize> {
    typed(raw, "a non-negative integer", loc)
}

fn at_least_one(raw: &str, loc: &str) -> Result<usize> {
    let v = count(raw, loc)?;
    if v == 0 {
        return Err(parse_err(loc, "must be at least 1"));
    }
    Ok(v)
}

fn flag(raw: &str, loc: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(parse_err(loc, format!("expected true or false, got '{raw}'"))),
    }
}

fn widths(raw: &str, loc: &str) -> Result<Vec<usize>> {
    let v: Vec<usize> = raw
        .split(',')
        .map(|p| at_least_one(p.trim(), loc))
        .collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(parse_err(loc, "need at least one layer width"));
    }
    Ok(v)
}

fn class_list(raw: &str, loc: &str) -> Result<Vec<usize>> {
    if raw.trim().is_empty() {
        return Err(parse_err(loc, "need at least one class"));
    }
    raw.split(',').map(|p| count(p.trim(), loc)).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses a configuration file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(Some(path.as_ref()), &[])
    }

    /// Parses configuration text; `origin` names it in error messages.
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// File (if any) first, then `section.key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (key, (value, loc)) in collect_entries(text, origin)? {
            let (section, name) = key.split_once('.').expect("collected keys are qualified");
            self.set(section, name, &value, &loc)?;
        }
        Ok(())
    }

    /// Applies one `section.key=value` assignment.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let loc = format!("--set {assignment}");
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| parse_err(&loc, "expected section.key=value"))?;
        let (section, name) = key
            .trim()
            .split_once('.')
            .ok_or_else(|| parse_err(&loc, "key must be qualified as section.key"))?;
        self.set(section, name, value.trim(), &loc)
    }

    fn set(&mut self, section: &str, key: &str, raw: &str, loc: &str) -> Result<()> {
        if !known(section, key) {
            return Err(parse_err(loc, format!("unknown key '{section}.{key}'")));
        }
        let loc = &format!("{loc} ({section}.{key})");
        match (section, key) {
            ("dataset", "source") => {
                self.dataset.source = match raw {
                    "synthetic" => DataSource::Synthetic,
                    "idx" => DataSource::Idx,
                    _ => return Err(parse_err(loc, format!("expected synthetic or idx, got '{raw}'"))),
                }
            }
            ("dataset", "images") => self.dataset.images = PathBuf::from(raw),
            ("dataset", "labels") => self.dataset.labels = PathBuf::from(raw),
            ("dataset", "subset") => self.dataset.subset = count(raw, loc)?,
            ("dataset", "n_per_class") => self.dataset.n_per_class = at_least_one(raw, loc)?,
            ("dataset", "num_classes") => self.dataset.num_classes = at_least_one(raw, loc)?,
            ("dataset", "input_dim") => self.dataset.input_dim = at_least_one(raw, loc)?,
            ("dataset", "spread") => self.dataset.spread = non_negative(raw, loc)?,
            ("dataset", "test_fraction") => self.dataset.test_fraction = unit(raw, loc)?,
            ("dataset", "rotate_step") => self.dataset.rotate_step = real(raw, loc)?,
            ("dataset", "rotate_groups") => self.dataset.rotate_groups = at_least_one(raw, loc)?,
            ("partition", "num_clients") => self.partition.num_clients = at_least_one(raw, loc)?,
            ("partition", "alpha") => self.partition.alpha = positive(raw, loc)?,
            ("model", "feature_layers") => self.model.feature_layers = widths(raw, loc)?,
            ("model", "augca_head") => self.model.augca_head = widths(raw, loc)?,
            ("model", "moon_head") => self.model.moon_head = widths(raw, loc)?,
            ("algorithm", "kind") => {
                self.algorithm.kind = raw.parse().map_err(|e: Error| parse_err(loc, e.to_string()))?
            }
            ("algorithm", "lambda") => self.algorithm.lambda = non_negative(raw, loc)?,
            ("algorithm", "mu") => self.algorithm.mu = non_negative(raw, loc)?,
            ("algorithm", "tau1") => self.algorithm.tau1 = positive(raw, loc)?,
            ("algorithm", "tau2") => self.algorithm.tau2 = positive(raw, loc)?,
            ("algorithm", "mu_prox") => self.algorithm.mu_prox = non_negative(raw, loc)?,
            ("algorithm", "mu_moon") => self.algorithm.mu_moon = non_negative(raw, loc)?,
            ("algorithm", "moon_tau") => self.algorithm.moon_tau = positive(raw, loc)?,
            ("algorithm", "lambda_mix") => self.algorithm.lambda_mix = unit(raw, loc)?,
            ("algorithm", "use_projection") => self.algorithm.use_projection = flag(raw, loc)?,
            ("algorithm", "theta_lr") => {
                self.algorithm.theta_lr = match raw {
                    "" | "auto" => None,
                    _ => Some(non_negative(raw, loc)?),
                }
            }
            ("algorithm", "pseudo_m") => {
                let m = count(raw, loc)?;
                if m < 2 {
                    return Err(parse_err(loc, "must be at least 2"));
                }
                self.pseudo.m = m;
            }
            ("algorithm", "pseudo_per_client") => self.pseudo.per_client = count(raw, loc)?,
            ("schedule", "rounds") => self.schedule.rounds = count(raw, loc)?,
            ("schedule", "local_steps") => self.schedule.local_steps = at_least_one(raw, loc)?,
            ("schedule", "batch_size") => self.schedule.batch_size = at_least_one(raw, loc)?,
            ("schedule", "lr") => self.schedule.lr = positive(raw, loc)?,
            ("schedule", "seed") => self.schedule.seed = typed(raw, "an unsigned 64-bit integer", loc)?,
            ("schedule", "eval_every") => self.schedule.eval_every = at_least_one(raw, loc)?,
            ("output", "dir") => self.output.dir = PathBuf::from(raw),
            ("output", "acc_threshold") => self.output.acc_threshold = unit(raw, loc)?,
            ("output", "top_k") => self.output.top_k = at_least_one(raw, loc)?,
            ("probe", "classes") => self.probe.classes = class_list(raw, loc)?,
            ("probe", "epochs") => self.probe.epochs = count(raw, loc)?,
            ("probe", "lr") => self.probe.lr = positive(raw, loc)?,
            ("probe", "batch_size") => self.probe.batch_size = at_least_one(raw, loc)?,
            ("probe", "pairs") => self.probe.pairs = at_least_one(raw, loc)?,
            ("probe", "test_fraction") => self.probe.test_fraction = unit(raw, loc)?,
            _ => unreachable!("key table and setter disagree on {section}.{key}"),
        }
        Ok(())
    }

    /// Cross-field checks that a single key cannot express.
    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        self.algorithm.validate()?;
        if !(self.schedule.lr > 0.0 && self.schedule.lr.is_finite()) {
            return Err(Error::Config(format!("schedule.lr must be > 0, got {}", self.schedule.lr)));
        }
        if self.schedule.local_steps == 0 || self.schedule.batch_size == 0 || self.schedule.eval_every == 0 {
            return Err(Error::Config(
                "schedule.local_steps, batch_size and eval_every must be at least 1".into(),
            ));
        }
        if !(self.dataset.test_fraction > 0.0 && self.dataset.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "dataset.test_fraction must be strictly between 0 and 1, got {}",
                self.dataset.test_fraction
            )));
        }
        if self.dataset.source == DataSource::Synthetic && self.dataset.num_classes < 2 {
            return Err(Error::Config("dataset.num_classes must be at least 2".into()));
        }
        if self.pseudo.m < 2 {
            return Err(Error::Config("algorithm.pseudo_m must be at least 2".into()));
        }
        Ok(())
    }

    /// Serializes to the text format; parsing the result gives back `self`.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        for (section, keys) in KEYS {
            let _ = writeln!(out, "[{section}]");
            for key in *keys {
                let _ = writeln!(out, "{key} = {}", self.value_of(section, key));
            }
            out.push('\n');
        }
        out
    }

    fn value_of(&self, section: &str, key: &str) -> String {
        let d = &self.dataset;
        let a = &self.algorithm;
        let s = &self.schedule;
        let p = &self.probe;
        match (section, key) {
            ("dataset", "source") => d.source.as_str().into(),
            ("dataset", "images") => d.images.display().to_string(),
            ("dataset", "labels") => d.labels.display().to_string(),
            ("dataset", "subset") => d.subset.to_string(),
            ("dataset", "n_per_class") => d.n_per_class.to_string(),
            ("dataset", "num_classes") => d.num_classes.to_string(),
            ("dataset", "input_dim") => d.input_dim.to_string(),
            ("dataset", "spread") => d.spread.to_string(),
            ("dataset", "test_fraction") => d.test_fraction.to_string(),
            ("dataset", "rotate_step") => d.rotate_step.to_string(),
            ("dataset", "rotate_groups") => d.rotate_groups.to_string(),
            ("partition", "num_clients") => self.partition.num_clients.to_string(),
            ("partition", "alpha") => self.partition.alpha.to_string(),
            ("model", "feature_layers") => join(&self.model.feature_layers),
            ("model", "augca_head") => join(&self.model.augca_head),
            ("model", "moon_head") => join(&self.model.moon_head),
            ("algorithm", "kind") => a.kind.to_string(),
            ("algorithm", "lambda") => a.lambda.to_string(),
            ("algorithm", "mu") => a.mu.to_string(),
            ("algorithm", "tau1") => a.tau1.to_string(),
            ("algorithm", "tau2") => a.tau2.to_string(),
            ("algorithm", "mu_prox") => a.mu_prox.to_string(),
            ("algorithm", "mu_moon") => a.mu_moon.to_string(),
            ("algorithm", "moon_tau") => a.moon_tau.to_string(),
            ("algorithm", "lambda_mix") => a.lambda_mix.to_string(),
            ("algorithm", "use_projection") => a.use_projection.to_string(),
            ("algorithm", "theta_lr") => a.theta_lr.map_or_else(|| "auto".into(), |v| v.to_string()),
            ("algorithm", "pseudo_m") => self.pseudo.m.to_string(),
            ("algorithm", "pseudo_per_client") => self.pseudo.per_client.to_string(),
            ("schedule", "rounds") => s.rounds.to_string(),
            ("schedule", "local_steps") => s.local_steps.to_string(),
            ("schedule", "batch_size") => s.batch_size.to_string(),
            ("schedule", "lr") => s.lr.to_string(),
            ("schedule", "seed") => s.seed.to_string(),
            ("schedule", "eval_every") => s.eval_every.to_string(),
            ("output", "dir") => self.output.dir.display().to_string(),
            ("output", "acc_threshold") => self.output.acc_threshold.to_string(),
            ("output", "top_k") => self.output.top_k.to_string(),
            ("probe", "classes") => join(&p.classes),
            ("probe", "epochs") => p.epochs.to_string(),
            ("probe", "lr") => p.lr.to_string(),
            ("probe", "batch_size") => p.batch_size.to_string(),
            ("probe", "pairs") => p.pairs.to_string(),
            ("probe", "test_fraction") => p.test_fraction.to_string(),
            _ => unreachable!("key table and serializer disagree on {section}.{key}"),
        }
    }
}

/// `section.key -> (value, "origin:line")`, rejecting structural errors.
fn collect_entries(text: &str, origin: &str) -> Result<BTreeMap<String, (String, String)>> {
    let mut entries = BTreeMap::new();
    let mut section: Option<String> = None;
    for (n, line) in text.lines().enumerate() {
        let loc = format!("{origin}:{}", n + 1);
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| parse_err(&loc, "unterminated section header"))?
                .trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(parse_err(&loc, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(&loc, format!("expected key = value, got '{line}'")))?;
        let key = key.trim();
        let Some(sec) = &section else {
            return Err(parse_err(&loc, format!("key '{key}' appears before any section header")));
        };
        if !known(sec, key) {
            return Err(parse_err(&loc, format!("unknown key '{sec}.{key}'")));
        }
        let qualified = format!("{sec}.{key}");
        if entries.contains_key(&qualified) {
            return Err(parse_err(&loc, format!("duplicate key '{qualified}'")));
        }
        entries.insert(qualified, (value.trim().to_string(), loc));
    }
    Ok(entries)
}

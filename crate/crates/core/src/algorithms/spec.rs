use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    FedAvg,
    FedProx,
    Scaffold,
    FedMix,
    Moon,
    AugMean,
    AugCa,
    FedAug,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 8] = [
        AlgorithmKind::FedAvg,
        AlgorithmKind::FedProx,
        AlgorithmKind::Scaffold,
        AlgorithmKind::FedMix,
        AlgorithmKind::Moon,
        AlgorithmKind::AugMean,
        AlgorithmKind::AugCa,
        AlgorithmKind::FedAug,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmKind::FedAvg => "fedavg",
            AlgorithmKind::FedProx => "fedprox",
            AlgorithmKind::Scaffold => "scaffold",
            AlgorithmKind::FedMix => "fedmix",
            AlgorithmKind::Moon => "moon",
            AlgorithmKind::AugMean => "augmean",
            AlgorithmKind::AugCa => "augca",
            AlgorithmKind::FedAug => "fedaug",
        }
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgorithmKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown algorithm '{s}' (expected one of fedavg, fedprox, scaffold, fedmix, moon, augmean, augca, fedaug)"
                ))
            })
    }
}

/// Which local rule a client runs, with every hyperparameter any rule reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub kind: AlgorithmKind,
    /// Weight of the contrastive term (AugCA / FedAug).
    pub lambda: f64,
    /// Weight of the output-balancing term (AugMean / FedAug).
    pub mu: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub mu_prox: f64,
    pub mu_moon: f64,
    pub moon_tau: f64,
    pub lambda_mix: f64,
    /// Measure similarities after the adversarially trained projection head.
    /// `false` gives the ablation that compares raw features.
    pub use_projection: bool,
    /// Learning rate for the projection-head ascent; `None` uses the model rate.
    pub theta_lr: Option<f64>,
}

impl AlgorithmSpec {
    pub fn new(kind: AlgorithmKind) -> Self {
        Self {
            kind,
            lambda: 1.0,
            mu: 1.0,
            tau1: 0.5,
            tau2: 0.5,
            mu_prox: 0.01,
            mu_moon: 1.0,
            moon_tau: 0.5,
            lambda_mix: 0.05,
            use_projection: true,
            theta_lr: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("mu_prox", self.mu_prox),
            ("mu_moon", self.mu_moon),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("algorithm.{name} must be >= 0, got {w}")));
            }
        }
        for (name, t) in [("tau1", self.tau1), ("tau2", self.tau2), ("moon_tau", self.moon_tau)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("algorithm.{name} must be > 0, got {t}")));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_mix) {
            return Err(Error::Config(format!(
                "algorithm.lambda_mix must be in [0, 1], got {}",
                self.lambda_mix
            )));
        }
        if let Some(lr) = self.theta_lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("algorithm.theta_lr must be >= 0, got {lr}")));
            }
        }
        Ok(())
    }

    pub fn uses_pseudo_data(&self) -> bool {
        matches!(
            self.kind,
            AlgorithmKind::FedMix | AlgorithmKind::AugMean | AlgorithmKind::AugCa | AlgorithmKind::FedAug
        )
    }

    /// `(λ, μ)` actually applied by the pseudo-data rules: AugMean drops the
    /// contrastive term, AugCA drops the output-balancing term.
    pub fn effective_weights(&self) -> (f64, f64) {
        match self.kind {
            AlgorithmKind::AugMean => (0.0, self.mu),
            AlgorithmKind::AugCa => (self.lambda, 0.0),
            AlgorithmKind::FedAug => (self.lambda, self.mu),
            _ => (0.0, 0.0),
        }
    }
}

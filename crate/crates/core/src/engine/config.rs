use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::ArchConfig;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, RampSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Supervised,
    Mt,
    Uamt,
    Ict,
    Mcic,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Supervised, Mode::Mt, Mode::Uamt, Mode::Ict, Mode::Mcic];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Supervised => "supervised",
            Mode::Mt => "mt",
            Mode::Uamt => "uamt",
            Mode::Ict => "ict",
            Mode::Mcic => "mcic",
        }
    }

    pub fn uses_unlabeled(self) -> bool {
        self != Mode::Supervised
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub ema_alpha: f64,
    pub mc_passes: usize,
    pub mix_beta: f64,
    pub learning_rate: f64,
    pub adamw: AdamWConfig,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub epochs: usize,
    pub ramp: RampSchedule,
    pub loss_weights: LossWeights,
    pub noise_sigma_mt: f64,
    pub seed: u64,
    pub arch: ArchConfig,
    /// Evaluate on the test split every this many epochs (0: final epoch only).
    pub eval_every: usize,
    pub eval_with_teacher: bool,
    /// Advance the ramp within an epoch instead of once per epoch.
    pub ramp_per_iteration: bool,
    pub hd95_spacing: f64,
    /// Write an intermediate checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mcic,
            ema_alpha: 0.99,
            mc_passes: 12,
            mix_beta: 1.0,
            learning_rate: 0.005,
            adamw: AdamWConfig::default(),
            batch_labeled: 32,
            batch_unlabeled: 32,
            epochs: 200,
            ramp: RampSchedule::default(),
            loss_weights: LossWeights::default(),
            noise_sigma_mt: 0.1,
            seed: 0,
            arch: ArchConfig::default(),
            eval_every: 10,
            eval_with_teacher: true,
            ramp_per_iteration: false,
            hd95_spacing: 1.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.ema_alpha > 0.0 && self.ema_alpha < 1.0) {
            return bad("ema_alpha must be in (0, 1)");
        }
        if self.mc_passes < 1 {
            return bad("mc_passes must be >= 1");
        }
        if !(self.mix_beta > 0.0 && self.mix_beta.is_finite()) {
            return bad("mix_beta must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        let a = &self.adamw;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0 && a.weight_decay >= 0.0) {
            return bad("adamw needs beta in [0, 1), eps > 0, weight_decay >= 0");
        }
        if self.batch_labeled < 1 {
            return bad("batch_labeled must be >= 1");
        }
        if self.mode.uses_unlabeled() && self.batch_unlabeled < 2 {
            return bad("batch_unlabeled must be >= 2 for semi-supervised modes");
        }
        if !(self.noise_sigma_mt >= 0.0 && self.noise_sigma_mt.is_finite()) {
            return bad("noise_sigma_mt must be >= 0");
        }
        if !(self.hd95_spacing > 0.0 && self.hd95_spacing.is_finite()) {
            return bad("hd95_spacing must be positive");
        }
        self.ramp.validate()?;
        self.loss_weights.validate()?;
        self.arch.validate()
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_roundtrip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        let back: TrainConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let partial: TrainConfig = serde_json::from_str(r#"{"mode": "ict", "epochs": 3}"#).unwrap();
        assert_eq!(partial.mode, Mode::Ict);
        assert_eq!(partial.ema_alpha, 0.99);
        assert_ne!(partial.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rat": 0.1}"#).is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"adamw": {"beta3": 0.1}}"#).is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"mode": "fixmatch"}"#).is_err());
        for bad in [
            TrainConfig {
                ema_alpha: 1.0,
                ..Default::default()
            },
            TrainConfig {
                mc_passes: 0,
                ..Default::default()
            },
            TrainConfig {
                mix_beta: 0.0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
        assert_eq!("uamt".parse::<Mode>().unwrap(), Mode::Uamt);
    }
}

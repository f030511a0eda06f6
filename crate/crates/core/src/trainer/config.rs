//! Training configuration, modes and the stage table.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::data::VideoKind;
use crate::error::{Error, Result};
use crate::heads::{Lambdas, Objective};
use crate::model::HeadKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Psp,
    CpspS,
    CpspV,
    CpspJoin,
    CpspSepa,
    Sspsp,
    WeakPsp,
    WeakCpsp,
}

impl TrainMode {
    pub const ALL: [TrainMode; 8] = [
        TrainMode::Psp,
        TrainMode::CpspS,
        TrainMode::CpspV,
        TrainMode::CpspJoin,
        TrainMode::CpspSepa,
        TrainMode::Sspsp,
        TrainMode::WeakPsp,
        TrainMode::WeakCpsp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Psp => "psp",
            TrainMode::CpspS => "cpsp_s",
            TrainMode::CpspV => "cpsp_v",
            TrainMode::CpspJoin => "cpsp_join",
            TrainMode::CpspSepa => "cpsp_sepa",
            TrainMode::Sspsp => "sspsp",
            TrainMode::WeakPsp => "weak_psp",
            TrainMode::WeakCpsp => "weak_cpsp",
        }
    }

    pub fn stage(self) -> StageSpec {
        use TrainMode::*;
        let mixed_and_ae: &'static [VideoKind] = &[VideoKind::Mixed, VideoKind::AllEvent];
        let (objective, spsa, vpsa, ss) = match self {
            Psp => (Objective::Fully, false, false, false),
            CpspS => (Objective::FullyRefined, true, false, false),
            CpspV => (Objective::FullyRefined, false, true, false),
            CpspJoin | CpspSepa => (Objective::FullyRefined, true, true, false),
            Sspsp => (Objective::Sspsp, false, false, true),
            WeakPsp => (Objective::Weak, false, false, false),
            WeakCpsp => (Objective::WeakRefined, false, true, false),
        };
        let (kinds, lr, requires, epochs): (&'static [VideoKind], f64, Option<&'static [TrainMode]>, usize) =
            match self {
                Psp | WeakPsp => (mixed_and_ae, 1e-3, None, 30),
                CpspS => (&[VideoKind::Mixed], 1e-4, Some(&[Psp]), 10),
                CpspV => (&[VideoKind::AllEvent], 1e-5, Some(&[Psp]), 10),
                CpspJoin => (mixed_and_ae, 1e-5, Some(&[Psp]), 10),
                CpspSepa => (&[VideoKind::AllEvent], 1e-5, Some(&[CpspS]), 10),
                Sspsp => (mixed_and_ae, 1e-4, Some(&[Psp]), 10),
                WeakCpsp => (&[VideoKind::AllEvent], 1e-5, Some(&[WeakPsp]), 10),
            };
        StageSpec {
            objective,
            spsa,
            vpsa,
            ss,
            kinds,
            lr,
            epochs,
            requires,
            head: match self {
                WeakPsp | WeakCpsp => HeadKind::Weak,
                _ => HeadKind::Fully,
            },
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        TrainMode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown training mode {s:?}")))
    }
}

/// One row of the stage table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSpec {
    pub objective: Objective,
    pub spsa: bool,
    pub vpsa: bool,
    pub ss: bool,
    /// Training videos are those of the train partition with these kinds.
    pub kinds: &'static [VideoKind],
    pub lr: f64,
    pub epochs: usize,
    /// Modes whose checkpoint may initialize this stage. `None` means a fresh
    /// Xavier initialization.
    pub requires: Option<&'static [TrainMode]>,
    pub head: HeadKind,
}

/// Ablation switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Variant {
    /// Keep every connection (`τ = −∞`).
    pub asp: bool,
    /// Keep every nonnegative connection (`τ = 0`).
    pub wpsp: bool,
    /// Self-attention before the temporal encoders.
    pub sapsp: bool,
    /// Weak head without the segment weighting branch.
    pub no_weight_branch: bool,
}

impl FromStr for Variant {
    type Err = Error;

    /// Comma-separated flag names, e.g. `asp` or `sapsp,no_weight_branch`.
    fn from_str(s: &str) -> Result<Self> {
        let mut v = Variant::default();
        for flag in s.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            match flag.to_ascii_lowercase().replace('-', "_").as_str() {
                "asp" => v.asp = true,
                "wpsp" => v.wpsp = true,
                "sapsp" => v.sapsp = true,
                "no_weight_branch" => v.no_weight_branch = true,
                "psp" | "none" => {}
                other => return Err(Error::Config(format!("unknown variant {other:?}"))),
            }
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    #[serde(with = "tau_serde")]
    pub tau: f64,
    pub eta: f64,
    pub eta_prime: f64,
    pub k: usize,
    pub theta: f64,
    pub mu: f64,
    pub lambdas: Lambdas,
    pub batch_size: usize,
    /// Defaults to the stage table when unset.
    pub epochs: Option<usize>,
    pub seed: u64,
    /// Defaults to the stage table when unset.
    pub lr: Option<f64>,
    pub init_checkpoint: Option<PathBuf>,
    pub variant: Variant,
    pub dropout: f64,
    pub patience: usize,
    pub clip_norm: f64,
    pub d_att: usize,
    pub d_l: usize,
    pub d_h: usize,
    /// Build batches on a helper thread.
    pub prefetch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Psp,
            tau: 0.095,
            eta: 0.1,
            eta_prime: 0.3,
            k: 4,
            theta: 0.6,
            mu: 0.6,
            lambdas: Lambdas::default(),
            batch_size: 128,
            epochs: None,
            seed: 0,
            lr: None,
            init_checkpoint: None,
            variant: Variant::default(),
            dropout: 0.1,
            patience: 5,
            clip_norm: 5.0,
            d_att: 128,
            d_l: 256,
            d_h: 64,
            prefetch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.tau.is_nan() || self.tau > 1.0 {
            return bad(format!("tau must lie in [-inf, 1], got {}", self.tau));
        }
        if !(self.eta > 0.0 && self.eta_prime > 0.0) {
            return bad("temperatures must be positive".into());
        }
        if self.k < 1 {
            return bad("K must be at least 1".into());
        }
        if !(self.theta >= 0.0) || !(0.0..=1.0).contains(&self.mu) {
            return bad("theta must be >= 0 and mu in [0, 1]".into());
        }
        let l = &self.lambdas;
        if [l.avpsp, l.spsa, l.vpsa, l.weak_vpsa, l.ss].iter().any(|x| !(*x >= 0.0)) {
            return bad("loss weights must be nonnegative".into());
        }
        if self.batch_size == 0 || self.epochs == Some(0) {
            return bad("batch size and epochs must be positive".into());
        }
        if self.lr.is_some_and(|lr| !(lr > 0.0)) {
            return bad("learning rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if self.variant.asp && self.variant.wpsp {
            return bad("variants asp and wpsp are mutually exclusive".into());
        }
        if self.d_l % 2 != 0 || self.d_l == 0 {
            return bad("d_l must be even and positive".into());
        }
        Ok(())
    }

    /// Threshold after applying variant flags.
    pub fn effective_tau(&self) -> f64 {
        if self.variant.asp {
            f64::NEG_INFINITY
        } else if self.variant.wpsp {
            0.0
        } else {
            self.tau
        }
    }

    pub fn stage(&self) -> StageSpec {
        self.mode.stage()
    }

    pub fn effective_lr(&self) -> f64 {
        self.lr.unwrap_or(self.stage().lr)
    }

    pub fn effective_epochs(&self) -> usize {
        self.epochs.unwrap_or(self.stage().epochs)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// SHA-256 over the JSON encoding of any serializable config.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

/// JSON has no infinity literal, so `τ = −∞` is written as the string
/// `"-inf"`. Plain numbers are accepted as usual.
pub mod tau_serde {
    use super::*;

    pub fn serialize<S: Serializer>(tau: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if tau.is_infinite() && *tau < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*tau)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => parse_tau(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// Parses a threshold, accepting `-inf` spellings.
pub fn parse_tau(s: &str) -> std::result::Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "-inf" | "-infinity" | "neg_inf" => Ok(f64::NEG_INFINITY),
        other => other.parse::<f64>().map_err(|e| format!("bad tau {s:?}: {e}")),
    }
}

//! TOML experiment configuration: sections for paradigm, encoder, head,
//! schedule, and data. Command-line flags override file values, which
//! override the built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::head::HeadConfig;
use crate::prompting::{Paradigm, WptMode};
use crate::trainer::{ExperimentConfig, Protocol, ScheduleConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParadigmSection {
    /// One of fr, ft, pt, wpt, shallow-pt, after-pt, del-pt.
    pub kind: String,
    #[serde(default)]
    pub prompt_tokens: usize,
    #[serde(default)]
    pub wavelet_tokens: usize,
    /// every-forward (default) or at-init.
    #[serde(default = "default_wpt_mode")]
    pub wpt_mode: String,
}

fn default_wpt_mode() -> String {
    "every-forward".to_string()
}

impl ParadigmSection {
    pub fn to_paradigm(&self) -> Result<Paradigm> {
        let p = self.prompt_tokens;
        let w = self.wavelet_tokens;
        let mode = match self.wpt_mode.as_str() {
            "every-forward" => WptMode::EveryForward,
            "at-init" => WptMode::AtInit,
            other => {
                return Err(Error::ConfigParse(format!(
                    "unknown wpt_mode {other:?} (expected every-forward or at-init)"
                )))
            }
        };
        let paradigm = match self.kind.as_str() {
            "fr" => Paradigm::Fr,
            "ft" => Paradigm::Ft,
            "pt" => Paradigm::Pt { p },
            "wpt" => Paradigm::Wpt { w, p, mode },
            "shallow-pt" => Paradigm::ShallowPt { p },
            "after-pt" => Paradigm::AfterPt { p },
            "del-pt" => Paradigm::DelPt { p },
            other => {
                return Err(Error::ConfigParse(format!(
                    "unknown paradigm kind {other:?} (expected fr, ft, pt, wpt, shallow-pt, after-pt, del-pt)"
                )))
            }
        };
        paradigm.validate()?;
        Ok(paradigm)
    }

    pub fn from_paradigm(p: Paradigm) -> Self {
        let (kind, mode) = match p {
            Paradigm::Fr => ("fr", WptMode::EveryForward),
            Paradigm::Ft => ("ft", WptMode::EveryForward),
            Paradigm::Pt { .. } => ("pt", WptMode::EveryForward),
            Paradigm::Wpt { mode, .. } => ("wpt", mode),
            Paradigm::ShallowPt { .. } => ("shallow-pt", WptMode::EveryForward),
            Paradigm::AfterPt { .. } => ("after-pt", WptMode::EveryForward),
            Paradigm::DelPt { .. } => ("del-pt", WptMode::EveryForward),
        };
        ParadigmSection {
            kind: kind.to_string(),
            prompt_tokens: p.prompt_tokens(),
            wavelet_tokens: p.wavelet_tokens(),
            wpt_mode: match mode {
                WptMode::EveryForward => "every-forward".to_string(),
                WptMode::AtInit => "at-init".to_string(),
            },
        }
    }
}

/// Schedule section; omitted fields fall back to the reference
/// hyperparameters for the paradigm and protocol.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScheduleSection {
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr_halving_period: Option<usize>,
    pub seed: Option<u64>,
}

impl ScheduleSection {
    pub fn resolve(&self, paradigm: Paradigm, protocol: Protocol) -> ScheduleConfig {
        let base = match protocol {
            Protocol::SingleType => ScheduleConfig::paper_single_type(paradigm, 42),
            Protocol::CoTrain => ScheduleConfig::paper_co_train(paradigm, 42),
        };
        ScheduleConfig {
            lr: self.lr.unwrap_or(base.lr),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            lr_halving_period: self.lr_halving_period.unwrap_or(base.lr_halving_period),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSection {
    /// Root of a generated benchmark (contains audio/ and manifests/).
    pub benchmark_dir: PathBuf,
    /// Training scope: an audio type name or "combined".
    #[serde(default = "default_scope")]
    pub train_scope: String,
}

fn default_scope() -> String {
    "combined".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileConfig {
    pub paradigm: ParadigmSection,
    #[serde(default = "EncoderConfig::desk")]
    pub encoder: EncoderConfig,
    #[serde(default = "HeadConfig::desk")]
    pub head: HeadConfig,
    #[serde(default)]
    pub schedule: ScheduleSection,
    pub data: DataSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::ConfigParse(format!("{}: {e}", path.display())))
    }

    pub fn to_experiment(&self, protocol: Protocol) -> Result<ExperimentConfig> {
        let paradigm = self.paradigm.to_paradigm()?;
        let cfg = ExperimentConfig {
            paradigm,
            encoder: self.encoder.clone(),
            head: self.head,
            schedule: self.schedule.resolve(paradigm, protocol),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

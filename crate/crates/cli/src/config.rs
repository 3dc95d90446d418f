//! Run configuration: one flat JSON object with dotted keys.
//!
//! Precedence, lowest to highest: built-in defaults, config file, regime
//! preset, command-line flags. The effective merged configuration is
//! written back into every run directory so a run is reproducible from its
//! own artifacts.

use adlite_core::graph::ADLiteConfig;
use adlite_core::optim::{DecayStyle, LrSchedule};
use adlite_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(rename = "model.input_size", default = "d_input_size")]
    pub input_size: usize,
    #[serde(rename = "model.input_channels", default = "d_one")]
    pub input_channels: usize,
    /// Absent means "take the class count from the dataset".
    #[serde(rename = "model.num_classes", default)]
    pub num_classes: Option<usize>,
    #[serde(rename = "model.base_filters", default = "d_base_filters")]
    pub base_filters: Vec<usize>,
    #[serde(rename = "model.first_kernel", default = "d_first_kernel")]
    pub first_kernel: usize,
    #[serde(rename = "model.other_kernels", default = "d_other_kernels")]
    pub other_kernels: usize,
    #[serde(rename = "model.dwsc_count", default = "d_two")]
    pub dwsc_count: usize,
    #[serde(rename = "model.pcb_enabled", default = "d_true")]
    pub pcb_enabled: bool,
    #[serde(rename = "model.pcb_tap_block", default = "d_three")]
    pub pcb_tap_block: usize,
    #[serde(rename = "model.pcb_filters", default = "d_pcb_filters")]
    pub pcb_filters: Vec<usize>,
    #[serde(rename = "model.tx_m", default = "d_tx_m")]
    pub tx_m: f64,
    #[serde(rename = "model.tx_c", default = "d_tx_c")]
    pub tx_c: f64,

    #[serde(rename = "data.paths", default)]
    pub data_paths: Vec<String>,
    /// Dataset names, used as the left side of class-map lookups when
    /// merging; defaults to ds0, ds1, ...
    #[serde(rename = "data.names", default)]
    pub data_names: Vec<String>,
    /// "ads1" or "folder".
    #[serde(rename = "data.format", default = "d_format")]
    pub data_format: String,
    /// Path to a class-map JSON file, or the builtin name "ad-adni".
    #[serde(rename = "data.classmap", default)]
    pub classmap: Option<String>,

    #[serde(rename = "split.test_fraction", default = "d_fraction")]
    pub test_fraction: f64,
    #[serde(rename = "split.val_fraction", default = "d_fraction")]
    pub val_fraction: f64,

    #[serde(rename = "train.batch_size", default = "d_batch")]
    pub batch_size: usize,
    #[serde(rename = "train.epochs", default = "d_epochs")]
    pub epochs: u32,
    #[serde(rename = "train.lr", default = "d_lr")]
    pub lr: f64,
    /// Decay applies from the epoch after this one; absent disables decay.
    #[serde(rename = "train.alr_start_epoch", default = "d_alr_start")]
    pub alr_start_epoch: Option<u32>,
    #[serde(rename = "train.alr_decay_rate", default = "d_alr_rate")]
    pub alr_decay_rate: f64,
    /// "per-epoch" (compounding) or "one-shot" (a single cut).
    #[serde(rename = "train.alr_style", default = "d_alr_style")]
    pub alr_style: String,
    /// "cce" or "wcce".
    #[serde(rename = "train.loss", default = "d_loss")]
    pub loss: String,

    #[serde(rename = "run.seed", default = "d_seed")]
    pub seed: u64,
    #[serde(rename = "run.out_dir", default)]
    pub out_dir: Option<String>,
    /// "f32" or "f64".
    #[serde(rename = "run.precision", default = "d_precision")]
    pub precision: String,
    #[serde(rename = "run.threads", default)]
    pub threads: Option<usize>,

    #[serde(rename = "kfold.k", default = "d_k")]
    pub kfold_k: usize,
}

fn d_input_size() -> usize {
    224
}
fn d_one() -> usize {
    1
}
fn d_two() -> usize {
    2
}
fn d_three() -> usize {
    3
}
fn d_true() -> bool {
    true
}
fn d_base_filters() -> Vec<usize> {
    vec![16, 32, 64, 96, 128]
}
fn d_pcb_filters() -> Vec<usize> {
    vec![32, 64]
}
fn d_first_kernel() -> usize {
    5
}
fn d_other_kernels() -> usize {
    3
}
fn d_tx_m() -> f64 {
    0.8
}
fn d_tx_c() -> f64 {
    255.0
}
fn d_format() -> String {
    "ads1".into()
}
fn d_fraction() -> f64 {
    0.2
}
fn d_batch() -> usize {
    64
}
fn d_epochs() -> u32 {
    18
}
fn d_lr() -> f64 {
    0.00095
}
fn d_alr_start() -> Option<u32> {
    Some(8)
}
fn d_alr_rate() -> f64 {
    0.05
}
fn d_alr_style() -> String {
    "per-epoch".into()
}
fn d_loss() -> String {
    "cce".into()
}
fn d_seed() -> u64 {
    7
}
fn d_precision() -> String {
    "f32".into()
}
fn d_k() -> usize {
    10
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Per-dataset training regimes: epoch budget and learning-rate decay
/// onset, at the shared base rate of 0.00095.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// 18 epochs, 5% decay after epoch 8.
    Ad,
    /// 15 epochs, constant rate.
    Adni,
    /// 7 epochs, 5% decay after epoch 4.
    Oasis,
}

impl Regime {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ad" => Ok(Regime::Ad),
            "adni" => Ok(Regime::Adni),
            "oasis" => Ok(Regime::Oasis),
            other => Err(Error::Config(format!(
                "unknown regime \"{other}\" (expected ad, adni, or oasis)"
            ))),
        }
    }

    pub fn apply(self, cfg: &mut RunConfig) {
        cfg.lr = d_lr();
        cfg.alr_decay_rate = 0.05;
        match self {
            Regime::Ad => {
                cfg.epochs = 18;
                cfg.alr_start_epoch = Some(8);
            }
            Regime::Adni => {
                cfg.epochs = 15;
                cfg.alr_start_epoch = None;
            }
            Regime::Oasis => {
                cfg.epochs = 7;
                cfg.alr_start_epoch = Some(4);
            }
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The architecture part, with the class count resolved.
    pub fn model_config(&self, num_classes_from_data: Option<usize>) -> Result<ADLiteConfig> {
        let num_classes = self
            .num_classes
            .or(num_classes_from_data)
            .ok_or_else(|| Error::Config("number of classes is not known".into()))?;
        if let (Some(fixed), Some(found)) = (self.num_classes, num_classes_from_data) {
            if fixed != found {
                return Err(Error::Config(format!(
                    "configured for {fixed} classes but the dataset has {found}"
                )));
            }
        }
        let cfg = ADLiteConfig {
            input_size: self.input_size,
            input_channels: self.input_channels,
            num_classes,
            base_filters: self.base_filters.clone(),
            first_kernel: self.first_kernel,
            other_kernels: self.other_kernels,
            dwsc_count: self.dwsc_count,
            pcb_enabled: self.pcb_enabled,
            pcb_tap_block: self.pcb_tap_block,
            pcb_filters: if self.pcb_enabled {
                self.pcb_filters.clone()
            } else {
                Vec::new()
            },
            tx_m: self.tx_m,
            tx_c: self.tx_c,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> LrSchedule {
        let mut schedule = match self.alr_start_epoch {
            Some(start) => LrSchedule::decaying(self.lr, start, self.alr_decay_rate),
            None => LrSchedule::constant(self.lr),
        };
        if self.alr_style == "one-shot" {
            schedule.style = DecayStyle::OneShot;
        }
        schedule
    }

    pub fn dataset_name(&self, i: usize) -> String {
        self.data_names
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("ds{i}"))
    }

    pub fn validate_for_training(&self) -> Result<()> {
        if self.data_paths.is_empty() {
            return Err(Error::Config("no dataset path given".into()));
        }
        if !matches!(self.data_format.as_str(), "ads1" | "folder") {
            return Err(Error::Config(format!(
                "unknown data format \"{}\"",
                self.data_format
            )));
        }
        if !matches!(self.loss.as_str(), "cce" | "wcce") {
            return Err(Error::Config(format!("unknown loss \"{}\"", self.loss)));
        }
        if !matches!(self.alr_style.as_str(), "per-epoch" | "one-shot") {
            return Err(Error::Config(format!(
                "unknown decay style \"{}\"",
                self.alr_style
            )));
        }
        if !matches!(self.precision.as_str(), "f32" | "f64") {
            return Err(Error::Config(format!(
                "unknown precision \"{}\"",
                self.precision
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        for (name, f) in [
            ("test fraction", self.test_fraction),
            ("validation fraction", self.val_fraction),
        ] {
            if !(0.0 < f && f < 1.0) {
                return Err(Error::Config(format!("{name} {f} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_dotted_json() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.input_size, 224);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.lr, 0.00095);
        assert_eq!(cfg.base_filters, vec![16, 32, 64, 96, 128]);
        let json = cfg.to_json_string();
        assert!(json.contains("\"model.input_size\""));
        assert!(json.contains("\"train.lr\""));
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn regimes_encode_the_three_training_recipes() {
        let mut cfg = RunConfig::default();
        Regime::Ad.apply(&mut cfg);
        assert_eq!((cfg.epochs, cfg.alr_start_epoch), (18, Some(8)));
        Regime::Adni.apply(&mut cfg);
        assert_eq!((cfg.epochs, cfg.alr_start_epoch), (15, None));
        Regime::Oasis.apply(&mut cfg);
        assert_eq!((cfg.epochs, cfg.alr_start_epoch), (7, Some(4)));
        assert_eq!(cfg.lr, 0.00095);
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"model.input_size": 64, "run.seed": 99}"#).unwrap();
        assert_eq!(cfg.input_size, 64);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.batch_size, 64);
    }

    #[test]
    fn model_config_resolves_class_count() {
        let cfg = RunConfig::default();
        let m = cfg.model_config(Some(4)).unwrap();
        assert_eq!(m.num_classes, 4);
        assert!(cfg.model_config(None).is_err());

        let mut fixed = RunConfig::default();
        fixed.num_classes = Some(3);
        assert!(fixed.model_config(Some(4)).is_err());
    }
}

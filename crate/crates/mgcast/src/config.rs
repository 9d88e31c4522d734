//! Run configuration files and their canonical hash.

use std::path::{Path, PathBuf};

use mgcast_core::optim::AdamConfig;
use mgcast_core::{ModelConfig, OpChoice, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, DatasetPreset, SplitSpec};
use crate::error::{Error, Result};

pub const DATA_DIR_ENV: &str = "MGCAST_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            batch_size: 16,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            max_epochs: 50,
            patience: 5,
            clip_norm: 5.0,
            loss: Loss::Mse,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("train.max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(
                "train.beta1 and train.beta2 must lie in [0, 1)".into(),
            ));
        }
        if !self.epsilon.is_finite()
            || self.epsilon <= 0.0
            || !self.clip_norm.is_finite()
            || self.clip_norm < 0.0
        {
            return Err(Error::Config(
                "train.epsilon must be positive and train.clip_norm non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    TwoTone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub kind: SyntheticKind,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Benchmark name; supplies the file name and split when those are absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
}

/// Where the series comes from once a config is resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticConfig),
}

impl DataConfig {
    pub fn preset(&self) -> Result<Option<&'static DatasetPreset>> {
        match &self.preset {
            None => Ok(None),
            Some(name) => data::preset(name)
                .map(Some)
                .ok_or_else(|| Error::Config(format!("unknown dataset preset {name:?}"))),
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        Ok(self
            .split
            .or(self.preset()?.map(|p| p.split))
            .unwrap_or(SplitSpec::STANDARD))
    }

    /// Short dataset label for metrics records.
    pub fn label(&self) -> String {
        if let Some(p) = &self.preset {
            return p.to_ascii_lowercase();
        }
        if let Some(s) = &self.synthetic {
            return match s.kind {
                SyntheticKind::TwoTone => "two-tone".into(),
            };
        }
        self.path
            .as_deref()
            .and_then(|p| Path::new(p).file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "unknown".into())
    }

    fn validate(&self) -> Result<()> {
        self.preset()?;
        if let Some(split) = &self.split {
            split.validate()?;
        }
        match (&self.synthetic, &self.path, &self.preset) {
            (Some(_), None, None) => Ok(()),
            (Some(_), _, _) => Err(Error::Config(
                "data.synthetic cannot be combined with data.path or data.preset".into(),
            )),
            (None, None, None) => Err(Error::Config(
                "data needs one of path, preset or synthetic".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Resolves the data file: as given, then relative to `base_dir`, then
    /// under `$MGCAST_DATA_DIR`.
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<DataSource> {
        if let Some(s) = &self.synthetic {
            return Ok(DataSource::Synthetic(s.clone()));
        }
        let file = match (&self.path, self.preset()?) {
            (Some(p), _) => PathBuf::from(p),
            (None, Some(preset)) => PathBuf::from(preset.file),
            (None, None) => {
                return Err(Error::Config(
                    "data needs one of path, preset or synthetic".into(),
                ))
            }
        };
        let mut tried = Vec::new();
        let mut candidates = vec![file.clone()];
        if file.is_relative() {
            if let Some(base) = base_dir {
                candidates.push(base.join(&file));
            }
            if let Some(root) = std::env::var_os(DATA_DIR_ENV) {
                candidates.push(PathBuf::from(root).join(&file));
            }
        }
        for c in candidates {
            if c.is_file() {
                return Ok(DataSource::File(c));
            }
            tried.push(c.display().to_string());
        }
        Err(Error::Data(format!(
            "dataset {} not found (tried {}; set {DATA_DIR_ENV} to the dataset root)",
            file.display(),
            tried.join(", ")
        )))
    }
}

/// Variants and operator pairs compared by `mgcast ablate`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<Variant>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ops: Vec<(OpChoice, OpChoice)>,
    /// Defaults to `[model.output_len]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub horizons: Vec<usize>,
    /// Smoothing steps of the residual baseline; defaults to the sum of
    /// `model.smoothing_iters`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_iters: Option<usize>,
}

/// Axis values for `mgcast sweep`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iters: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_len: Vec<usize>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablate: Option<AblateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// Directory of the file this config was read from; not part of the hash.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(data: DataConfig, model: ModelConfig, train: TrainConfig, seed: u64) -> Self {
        RunConfig {
            seed,
            data,
            model,
            train,
            ablate: None,
            sweep: None,
            base_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// Compact JSON with fields in declaration order and shortest
    /// round-trip float formatting.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First 16 hex digits of the hash, used for output directory names.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_owned()
    }

    /// The same run without ablation or sweep sections.
    pub fn cell(&self, model: ModelConfig) -> Self {
        RunConfig {
            model,
            ablate: None,
            sweep: None,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ILI: &str = r#"
seed = 7

[data]
preset = "ili"

[model]
variant = "fv-mgnet"
input_len = 60
output_len = 24
grids = 3
smoothing_iters = [2, 2, 2]

[train]
learning_rate = 0.0005
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::from_toml_str(ILI).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.train.learning_rate, 5e-4);
        assert_eq!(cfg.data.split_spec().unwrap(), SplitSpec::STANDARD);
        assert_eq!(cfg.data.label(), "ili");
    }

    #[test]
    fn ettm2_preset_split() {
        let text = ILI.replace("\"ili\"", "\"ettm2\"");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.data.split_spec().unwrap(), SplitSpec::ETT);
    }

    #[test]
    fn malformed_config_reports_location() {
        let err = RunConfig::from_toml_str("[model]\nvariant = \"fv-mgnet\"\ninput_len = \"x\"\n")
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("line 3"), "{err}");
        let err =
            RunConfig::from_toml_str(&ILI.replace("[train]", "[train]\nbogus = 1")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn invalid_model_is_config_error() {
        let text = ILI.replace("input_len = 60", "input_len = 62");
        assert!(matches!(
            RunConfig::from_toml_str(&text),
            Err(Error::Config(_)) | Err(Error::Model(_))
        ));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::from_toml_str(ILI).unwrap();
        let b = RunConfig::from_toml_str(
            &RunConfig::from_toml_str(ILI)
                .unwrap()
                .to_toml_string()
                .unwrap(),
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed += 1;
        assert_ne!(a.hash(), c.hash());
        let mut d = a.clone();
        d.base_dir = Some("/elsewhere".into());
        assert_eq!(a.hash(), d.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn missing_dataset_is_data_error() {
        let data = DataConfig {
            path: Some("definitely-not-here.csv".into()),
            ..Default::default()
        };
        assert!(matches!(data.resolve(None), Err(Error::Data(_))));
    }

    #[test]
    fn zero_patience_rejected() {
        let text = ILI.replace("[train]", "[train]\npatience = 0");
        assert!(RunConfig::from_toml_str(&text).is_err());
    }
}

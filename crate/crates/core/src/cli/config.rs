//! Experiment configuration: a TOML file whose keys mirror the `run` flags.
//!
//! ```toml
//! scheme = "float12"
//! rounding = "stochastic"
//! seed = 1
//! topology = "cifar10-cnn"   # or "compact", "linear", or a .json file
//! output = "runs/float12"
//! histograms = false
//! kernel = "auto"              # or "multiply"
//! # resume = "runs/prev/checkpoint"
//!
//! [formats]                    # per-class overrides
//! outputs = "fixed[6,6]"
//!
//! [data]
//! source = "cifar10"           # or "synthetic"
//! # cifar_dir = "/data/cifar-10-batches-bin"
//! subset = 5000
//! test_subset = 1000
//! mean_subtraction = false
//!
//! [data.synthetic]
//! classes = 10
//! per_class = 50
//!
//! [train]
//! epochs = 10
//! batch_size = 100
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::network::{FormatSpec, KernelMode, ParameterClass, SchemeConfig, Shape3, Topology};
use crate::qformats::RoundingMode;
use crate::trainer::TrainConfig;

/// Environment variable naming the default CIFAR-10 directory.
pub const CIFAR_DIR_ENV: &str = "LPNUM_CIFAR10_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Cifar10,
    Synthetic,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub cifar_dir: Option<PathBuf>,
    /// Stratified training subset size.
    pub subset: Option<usize>,
    /// Stratified test subset size.
    pub test_subset: Option<usize>,
    /// Subtract the training set's per-channel means from both splits.
    pub mean_subtraction: bool,
    pub synthetic: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: String,
    pub rounding: RoundingMode,
    pub seed: u64,
    pub topology: String,
    pub output: PathBuf,
    pub histograms: bool,
    pub kernel: KernelMode,
    pub resume: Option<PathBuf>,
    pub formats: BTreeMap<String, String>,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scheme: "float12".into(),
            rounding: RoundingMode::Stochastic,
            seed: 1,
            topology: "cifar10-cnn".into(),
            output: PathBuf::from("runs/latest"),
            histograms: false,
            kernel: KernelMode::Auto,
            resume: None,
            formats: BTreeMap::new(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Named scheme with the per-class overrides applied.
    pub fn resolve_scheme(&self) -> Result<SchemeConfig> {
        let mut s = SchemeConfig::from_name(&self.scheme)?;
        for (class, spec) in &self.formats {
            let c: ParameterClass = class.parse()?;
            let f: FormatSpec = spec.parse()?;
            s.set(c, f);
        }
        if !self.formats.is_empty() {
            s.name = format!("{}+overrides", s.name);
        }
        Ok(s)
    }

    pub fn resolve_topology(&self, input: Shape3, classes: usize) -> Result<Topology> {
        resolve_topology(&self.topology, input, classes)
    }

    pub fn cifar_dir(&self) -> Option<PathBuf> {
        self.data
            .cifar_dir
            .clone()
            .or_else(|| std::env::var_os(CIFAR_DIR_ENV).map(PathBuf::from))
    }

    /// Training and test sets per the data section, optionally centred on
    /// the training channel means, then subset.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (mut train, mut test) = match self.data.source {
            DataSource::Synthetic => (
                data::synthesize(&self.data.synthetic, Split::Train)?,
                data::synthesize(&self.data.synthetic, Split::Test)?,
            ),
            DataSource::Cifar10 => {
                let dir = self.cifar_dir().ok_or_else(|| {
                    Error::Config(format!(
                        "no CIFAR-10 directory: pass --cifar-dir or set {CIFAR_DIR_ENV} (or use --data synthetic)"
                    ))
                })?;
                (
                    data::load_cifar10(&dir, Split::Train)?,
                    data::load_cifar10(&dir, Split::Test)?,
                )
            }
        };
        if self.data.mean_subtraction {
            let mean = train.subtract_channel_mean();
            test.subtract_mean(&mean);
        }
        let train = match self.data.subset {
            Some(n) => data::subset(&train, n, self.seed)?,
            None => train,
        };
        let test = match self.data.test_subset {
            Some(n) => data::subset(&test, n, self.seed)?,
            None => test,
        };
        Ok((train, test))
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve_scheme()?;
        self.train.validate()
    }
}

/// Built-in topology by name, or a JSON topology file.
pub fn resolve_topology(name: &str, input: Shape3, classes: usize) -> Result<Topology> {
    if name.ends_with(".json") {
        let path = Path::new(name);
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        return Ok(serde_json::from_slice(&text)?);
    }
    Topology::by_name(name, input, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("schem = \"pot\"").is_err());
        assert!(ExperimentConfig::parse("[train]\nepoch = 3").is_err());
    }

    #[test]
    fn overrides_apply() {
        let c = ExperimentConfig::parse("scheme = \"fixed12\"\n[formats]\noutputs = \"float[5,6]\"").unwrap();
        let s = c.resolve_scheme().unwrap();
        assert_eq!(s.outputs.to_string(), "float[5,6]");
        let bad = ExperimentConfig::parse("[formats]\noutput = \"float[5,6]\"").unwrap();
        assert!(bad.resolve_scheme().is_err());
    }
}

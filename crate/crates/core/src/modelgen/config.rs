//! One TOML file describing a full training run: data, architecture, trainer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{gen_dataset, ToyDataset};
use super::train::{train, ArchSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::network::Network;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub size: usize,
    pub classes: usize,
}

/// `[dataset]`, optional `[arch]` (the demo architecture when absent) and `[train]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub arch: Option<ArchSpec>,
    pub train: TrainConfig,
}

impl RunSpec {
    pub fn parse(text: &str) -> Result<RunSpec> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunSpec> {
        RunSpec::parse(&std::fs::read_to_string(path)?).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn arch(&self) -> ArchSpec {
        self.arch.clone().unwrap_or_else(|| ArchSpec::demo(self.dataset.classes))
    }

    pub fn dataset(&self) -> Result<ToyDataset> {
        gen_dataset(self.dataset.seed, self.dataset.size, self.dataset.classes)
    }

    /// Generate the dataset and train on it.
    pub fn run(&self) -> Result<(ToyDataset, Network)> {
        let data = self.dataset()?;
        let net = train(&self.arch(), &data, &self.train)?;
        Ok((data, net))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let spec = RunSpec::parse(
            "[dataset]\nseed = 1\nsize = 10\nclasses = 2\n[train]\nseed = 3\nepochs = 0\nlr = 0.1\nbatch_size = 4\n",
        )
        .unwrap();
        assert_eq!(spec.arch(), ArchSpec::demo(2));
        assert!(!spec.train.pgd.enabled);
        assert_eq!(RunSpec::parse(&spec.to_toml().unwrap()).unwrap(), spec);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = "[dataset]\nseed = 1\nsize = 10\nclasses = 2\nfoo = 1\n[train]\nseed = 3\nepochs = 0\nlr = 0.1\nbatch_size = 4\n";
        assert!(matches!(RunSpec::parse(bad), Err(Error::Format(_))));
    }
}

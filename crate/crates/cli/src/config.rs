//! The TOML run configuration.
//!
//! ```toml
//! [train]            # every field optional; defaults shown by `tfn config`
//! learning_rate = 5e-4
//! epochs = 30
//!
//! [train.arch]
//! subnet_width = 32
//!
//! [synth]            # synthetic dataset recipe for `tfn synth`
//! n_utterances = 2000
//!
//! [search]           # optional grid; the cartesian product is searched per fold
//! learning_rate = [5e-4, 1e-3]
//!
//! [cv]
//! folds = 5
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tfn_core::data::SynthSpec;
use tfn_core::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub search: SearchGrid,
    pub cv: CvSection,
    pub paths: Paths,
}

/// Values to sweep; an empty list keeps the `[train]` value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchGrid {
    pub learning_rate: Vec<f64>,
    pub dropout_p: Vec<f64>,
    pub l2_coeff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSection {
    pub folds: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection { folds: 5 }
    }
}

/// Fallbacks for the corresponding command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfigFile = toml::from_str(text).map_err(|e| crate::ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// The `[train]` section expanded over the `[search]` lists, in
    /// learning-rate-major order.
    pub fn grid(&self) -> Vec<TrainConfig> {
        let pick = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
        let t = &self.train;
        let mut out = Vec::new();
        for lr in pick(&self.search.learning_rate, t.learning_rate) {
            for p in pick(&self.search.dropout_p, t.dropout_p) {
                for l2 in pick(&self.search.l2_coeff, t.l2_coeff) {
                    out.push(TrainConfig {
                        learning_rate: lr,
                        dropout_p: p,
                        l2_coeff: l2,
                        ..t.clone()
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfigFile::parse("[train]\nlearning_rat = 1.0\n").is_err());
        assert!(RunConfigFile::parse("[bogus]\n").is_err());
    }

    #[test]
    fn defaults_and_grid() {
        let c = RunConfigFile::parse("[search]\nlearning_rate = [0.0, 5e-4]\nl2_coeff = [0.0, 0.01]\n").unwrap();
        assert_eq!(c.cv.folds, 5);
        let g = c.grid();
        assert_eq!(g.len(), 4);
        assert_eq!((g[0].learning_rate, g[0].l2_coeff), (0.0, 0.0));
        assert_eq!((g[3].learning_rate, g[3].l2_coeff), (5e-4, 0.01));
    }
}

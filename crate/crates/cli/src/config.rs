use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stcorr::benchmark::synth::SynthConfig;
use stcorr::{FlowSampling, GridShape};

use crate::error::CliError;

/// Run settings read from `--config`; command-line flags take precedence
/// over every field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub grid: Option<GridShape>,
    pub setup: Option<String>,
    pub matcher: Option<String>,
    pub temperature: Option<f32>,
    pub alpha: Option<f64>,
    pub ks: Option<Vec<u32>>,
    pub min_shared: Option<usize>,
    pub jobs: Option<usize>,
    pub sampling: Option<FlowSampling>,
    pub paths: PathConfig,
    pub synth: Option<SynthConfig>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub data: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: Option<usize>,
    pub lr: Option<f32>,
    pub layers: Option<usize>,
    pub hidden: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Parses a comma-separated list of non-negative frame tolerances.
pub fn parse_ks(text: &str) -> Result<Vec<u32>, String> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|e| format!("invalid k {s:?}: {e}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_parse() {
        let cfg = RunConfig::from_json(r#"{"grid":{"t":4,"h":4,"w":4},"matcher":"st-match","paths":{"data":"d"}}"#)
            .unwrap();
        assert_eq!(cfg.grid, Some(GridShape { t: 4, h: 4, w: 4 }));
        assert_eq!(cfg.paths.data, Some(PathBuf::from("d")));
        assert!(RunConfig::from_json(r#"{"gird":1}"#).is_err());
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn ks_lists() {
        assert_eq!(parse_ks("1,3,5").unwrap(), vec![1, 3, 5]);
        assert_eq!(parse_ks(" 0 ").unwrap(), vec![0]);
        assert!(parse_ks("1,,3").is_err());
        assert!(parse_ks("-1").is_err());
    }
}

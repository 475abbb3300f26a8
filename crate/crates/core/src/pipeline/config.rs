use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::ImportanceUnits;
use crate::neuralnet::{ArchitecturePolicy, TrainConfig};
use crate::segmentation::{AffinityOptions, DomainBoxes, SigmaPolicy};
use crate::trend::TrendWindow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    None,
    Spectral { k: usize },
    Domain,
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::None => "none".into(),
            Strategy::Spectral { k } => format!("spectral_k{k}"),
            Strategy::Domain => "domain".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPaths {
    pub name: String,
    pub hindcast: PathBuf,
    pub projection: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Scaled,
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapConfig {
    pub enabled: bool,
    /// Background rows per cluster.
    pub background: usize,
    pub max_points_per_cluster: Option<usize>,
    /// Coalition samples; `None` enumerates all of them.
    pub samples: Option<usize>,
    pub units: Units,
    pub per_point_table: bool,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            enabled: true,
            background: 100,
            max_points_per_cluster: None,
            samples: None,
            units: Units::Scaled,
            per_point_table: false,
        }
    }
}

impl ShapConfig {
    pub fn importance_units(&self) -> ImportanceUnits {
        match self.units {
            Units::Scaled => ImportanceUnits::Scaled,
            Units::Label => ImportanceUnits::Label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSetting {
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffinityConfig {
    pub sigma: SigmaSetting,
    pub knn: Option<usize>,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        AffinityConfig { sigma: SigmaSetting::Median, knn: None }
    }
}

impl AffinityConfig {
    pub fn options(&self) -> AffinityOptions {
        AffinityOptions {
            sigma: match self.sigma {
                SigmaSetting::Median => SigmaPolicy::Median,
                SigmaSetting::Fixed(s) => SigmaPolicy::Fixed(s),
            },
            knn: self.knn,
        }
    }
}

/// Everything one run needs. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub observation: PathBuf,
    pub models: Vec<ModelPaths>,
    pub train_window: TrendWindow,
    pub predict_window: TrendWindow,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub affinity: AffinityConfig,
    #[serde(default)]
    pub domain_boxes: DomainBoxes,
    #[serde(default)]
    pub architecture: ArchitecturePolicy,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_passes")]
    pub mc_passes: usize,
    #[serde(default)]
    pub shap: ShapConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Known future trend field, scored against when present.
    #[serde(default)]
    pub truth_future: Option<PathBuf>,
    #[serde(default = "default_sweep")]
    pub sweep_ks: Vec<usize>,
    /// Skip the leave-one-out column in sweeps.
    #[serde(default)]
    pub sweep_skip_loo: bool,
}

fn default_strategy() -> Strategy {
    Strategy::Spectral { k: 4 }
}

fn default_passes() -> usize {
    100
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_sweep() -> Vec<usize> {
    vec![2, 4, 8, 16, 32, 64]
}

impl RunConfig {
    /// Parses and resolves every path relative to the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = cfg.resolved(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolved(mut self, base: &Path) -> RunConfig {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.observation);
        fix(&mut self.out);
        for m in &mut self.models {
            fix(&mut m.hindcast);
            fix(&mut m.projection);
        }
        if let Some(t) = &mut self.truth_future {
            fix(t);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.len() < 2 {
            return Err(Error::arg(format!("need at least 2 climate models, config lists {}", self.models.len())));
        }
        if let Strategy::Spectral { k: 0 } = self.strategy {
            return Err(Error::arg("spectral strategy needs k >= 1"));
        }
        if self.mc_passes == 0 {
            return Err(Error::arg("mc_passes must be at least 1"));
        }
        if self.shap.enabled && self.shap.background == 0 {
            return Err(Error::arg("shap.background must be at least 1"));
        }
        self.train.validate()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{
            "observation": "obs.grd1",
            "models": [
                {"name": "a", "hindcast": "m/a_h.grd1", "projection": "m/a_p.grd1"},
                {"name": "b", "hindcast": "/abs/b_h.grd1", "projection": "m/b_p.grd1"}
            ],
            "train_window": {"start_year": 1993, "end_year": 2022},
            "predict_window": {"start_year": 2023, "end_year": 2052},
            "strategy": {"kind": "spectral", "k": 8}
        }"#;
        let path = dir.path().join("run.json");
        fs::write(&path, text).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.observation, dir.path().join("obs.grd1"));
        assert_eq!(cfg.models[1].hindcast, PathBuf::from("/abs/b_h.grd1"));
        assert_eq!(cfg.out, dir.path().join("out"));
        assert_eq!(cfg.strategy, Strategy::Spectral { k: 8 });
        assert_eq!(cfg.mc_passes, 100);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn strategy_json_shapes() {
        let s: Strategy = serde_json::from_str(r#"{"kind":"none"}"#).unwrap();
        assert_eq!(s, Strategy::None);
        let s: Strategy = serde_json::from_str(r#"{"kind":"domain"}"#).unwrap();
        assert_eq!(s, Strategy::Domain);
        let a: AffinityConfig = serde_json::from_str(r#"{"sigma":{"fixed":0.5}}"#).unwrap();
        assert_eq!(a.sigma, SigmaSetting::Fixed(0.5));
    }
}

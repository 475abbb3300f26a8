//! One scaler and network per cluster of a partition.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kfold::{kfold_select, Candidate, Selection};
use super::mlp::{Mlp, TrainingSet};
use super::scaler::Scaler;
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::grid::LatWeights;
use crate::rng;
use crate::segmentation::Partition;

/// How each cluster's hidden layers are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitecturePolicy {
    pub large_hidden: Vec<usize>,
    pub small_hidden: Vec<usize>,
    /// Clusters holding at least this share of all points get `large_hidden`.
    pub large_fraction: f64,
    /// When non-empty, k-fold selection over these layouts replaces the size rule.
    pub candidates: Vec<Vec<usize>>,
    pub folds: usize,
}

impl Default for ArchitecturePolicy {
    fn default() -> Self {
        ArchitecturePolicy {
            large_hidden: vec![1024, 512, 256],
            small_hidden: vec![256, 128],
            large_fraction: 0.25,
            candidates: Vec::new(),
            folds: 5,
        }
    }
}

/// A trained network with the scaler fitted on its training cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub mlp: Mlp,
    pub scaler: Scaler,
}

impl FittedModel {
    /// Deterministic prediction in label units from raw inputs.
    pub fn predict_raw(&self, x_raw: &[f64]) -> Result<f64> {
        let mut xs = vec![0.0; x_raw.len()];
        if x_raw.len() != self.scaler.n_features() {
            return Err(Error::arg(format!(
                "model expects {} inputs, got {}",
                self.scaler.n_features(),
                x_raw.len()
            )));
        }
        self.scaler.transform_row(x_raw, &mut xs);
        Ok(self.scaler.inverse_y(self.mlp.forward(&xs)?))
    }
}

#[derive(Debug, Clone)]
pub struct ClusterFit {
    pub model: FittedModel,
    pub hidden: Vec<usize>,
    pub selection: Option<Selection>,
    pub n_points: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct RegionalModel {
    pub partition: Partition,
    pub clusters: Vec<ClusterFit>,
}

fn gather_rows(x: &[f64], n_features: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * n_features);
    for &r in rows {
        out.extend_from_slice(&x[r * n_features..(r + 1) * n_features]);
    }
    out
}

fn fit_cluster(
    c: usize,
    members: &[usize],
    x_raw: &[f64],
    n_features: usize,
    y_raw: &[f64],
    w: &LatWeights,
    total_points: usize,
    policy: &ArchitecturePolicy,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ClusterFit> {
    let x = gather_rows(x_raw, n_features, members);
    let y: Vec<f64> = members.iter().map(|&p| y_raw[p]).collect();
    let scaler = Scaler::fit(&x, n_features, &y)?;
    let data = TrainingSet::new(
        scaler.transform_x(&x)?,
        y.iter().map(|&v| scaler.transform_y(v)).collect(),
        w.select(members).as_slice().to_vec(),
        n_features,
    )?;
    let cluster_cfg = TrainConfig { seed: rng::derive_seed(seed, "train", c as u64), ..cfg.clone() };

    let (hidden, selection) = if policy.candidates.is_empty() {
        let large = members.len() as f64 >= policy.large_fraction * total_points as f64;
        let hidden = if large { &policy.large_hidden } else { &policy.small_hidden };
        (hidden.clone(), None)
    } else {
        let cands: Vec<Candidate> = policy
            .candidates
            .iter()
            .map(|h| Candidate { hidden: h.clone(), config: cluster_cfg.clone() })
            .collect();
        let sel = kfold_select(&cands, &data, policy.folds, rng::derive_seed(seed, "kfold", c as u64))?;
        (policy.candidates[sel.best].clone(), Some(sel))
    };
    let cand = Candidate { hidden: hidden.clone(), config: cluster_cfg.clone() };
    let out = train(&cand.init(n_features)?, &data, &cluster_cfg)?;
    Ok(ClusterFit {
        model: FittedModel { mlp: out.model, scaler },
        hidden,
        selection,
        n_points: members.len(),
        epochs_run: out.history.len(),
        best_epoch: out.best_epoch,
    })
}

/// Trains one network per cluster; `x_raw` is row-major `points x n_features`.
/// Clusters train in parallel, each from its own seed stream.
#[allow(clippy::too_many_arguments)]
pub fn fit_regional(
    x_raw: &[f64],
    n_features: usize,
    y_raw: &[f64],
    w: &LatWeights,
    partition: &Partition,
    policy: &ArchitecturePolicy,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RegionalModel> {
    let n = partition.n_points();
    if y_raw.len() != n || w.len() != n || x_raw.len() != n * n_features {
        return Err(Error::arg(format!(
            "regional fit shapes disagree: {} points, {} labels, {} weights, {} inputs",
            n,
            y_raw.len(),
            w.len(),
            x_raw.len()
        )));
    }
    cfg.validate()?;
    let clusters = (0..partition.k())
        .into_par_iter()
        .map(|c| {
            fit_cluster(c, &partition.members(c), x_raw, n_features, y_raw, w, n, policy, cfg, seed)
                .map_err(|e| Error::Cluster { cluster: c, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegionalModel { partition: partition.clone(), clusters })
}

impl RegionalModel {
    pub fn n_features(&self) -> usize {
        self.clusters[0].model.scaler.n_features()
    }

    /// Deterministic predictions, each point through its own cluster's model.
    pub fn predict(&self, x_raw: &[f64]) -> Result<Vec<f64>> {
        let m = self.n_features();
        if x_raw.len() != self.partition.n_points() * m {
            return Err(Error::arg(format!(
                "expected {} x {} inputs, got {}",
                self.partition.n_points(),
                m,
                x_raw.len()
            )));
        }
        x_raw
            .par_chunks(m)
            .zip(self.partition.labels().par_iter())
            .map(|(row, &c)| self.clusters[c].model.predict_raw(row))
            .collect()
    }

    pub fn models(&self) -> Vec<FittedModel> {
        self.clusters.iter().map(|c| c.model.clone()).collect()
    }
}

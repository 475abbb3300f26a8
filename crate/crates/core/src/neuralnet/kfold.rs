use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{weighted_mse, Mlp, TrainingSet};
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::rng;

/// A hidden-layer layout plus the settings used to train it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub hidden: Vec<usize>,
    pub config: TrainConfig,
}

impl Candidate {
    pub fn sizes(&self, n_inputs: usize) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(n_inputs);
        s.extend_from_slice(&self.hidden);
        s.push(1);
        s
    }

    /// Freshly initialized network; the init stream is keyed by the config seed.
    pub fn init(&self, n_inputs: usize) -> Result<Mlp> {
        let mut r = rng::stream(self.config.seed, "init", 0);
        Mlp::new(&self.sizes(n_inputs), self.config.dropout, 0, &mut r)
    }

    pub fn fit(&self, data: &TrainingSet) -> Result<Mlp> {
        Ok(train(&self.init(data.n_features)?, data, &self.config)?.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: usize,
    /// `fold_scores[c][f]`: validation weighted MSE of candidate `c` on fold `f`.
    pub fold_scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
}

/// Splits `0..n` (shuffled once with `seed`) into `k` contiguous folds whose
/// sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    folds
}

/// Picks the candidate with the lowest mean validation MSE over `k` folds;
/// ties go to the earlier candidate.
pub fn kfold_select(candidates: &[Candidate], data: &TrainingSet, k: usize, seed: u64) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::arg("no candidate architectures to select from"));
    }
    if k < 2 {
        return Err(Error::arg(format!("k-fold needs k >= 2, got {k}")));
    }
    if data.len() < k {
        return Err(Error::arg(format!("{} rows cannot form {k} folds", data.len())));
    }
    let folds = kfold_indices(data.len(), k, seed);
    let mut fold_scores = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let mut scores = Vec::with_capacity(k);
        for (f, val_idx) in folds.iter().enumerate() {
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            let model = cand.fit(&data.subset(&train_idx))?;
            scores.push(weighted_mse(&model, &data.subset(val_idx))?);
        }
        fold_scores.push(scores);
    }
    let mean_scores: Vec<f64> = fold_scores.iter().map(|s| s.iter().sum::<f64>() / k as f64).collect();
    let mut best = 0;
    for (i, &s) in mean_scores.iter().enumerate() {
        if s < mean_scores[best] {
            best = i;
        }
    }
    Ok(Selection { best, fold_scores, mean_scores })
}

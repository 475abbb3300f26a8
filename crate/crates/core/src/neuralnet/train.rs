use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{backprop, weighted_mse, Mlp, TrainingSet, Workspace};
use crate::error::{Error, Result};

/// Optimizer and regularization settings for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of rows held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 64,
            l2: 5e-6,
            dropout: 0.2,
            seed: 0,
            patience: 50,
            validation_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::arg(format!("train config: {what}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.l2 >= 0.0) {
            return bad("l2 must be >= 0");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam moments must be in [0, 1) and epsilon positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean penalized minibatch loss with dropout active.
    pub train_loss: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (last epoch without validation).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Minibatch Adam on the penalized weighted MSE with dropout active.
///
/// With a validation split, training stops after `patience` epochs without
/// improvement and the best-validation parameters are returned.
pub fn train(initial: &Mlp, data: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::arg("cannot train on an empty set"));
    }
    if data.n_features != initial.n_inputs() {
        return Err(Error::arg(format!(
            "network expects {} inputs, data has {}",
            initial.n_inputs(),
            data.n_features
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_val = (data.len() as f64 * cfg.validation_fraction).floor() as usize;
    let (train_idx, val_set) = if n_val >= 1 && n_val < data.len() {
        order.shuffle(&mut rng);
        let val = data.subset(&order[..n_val]);
        (order[n_val..].to_vec(), Some(val))
    } else {
        (order, None)
    };

    let mut model = initial.clone();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut adam = Adam::new(model.params().len());
    let mut grad = vec![0.0; model.params().len()];
    let mut ws = Workspace::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut shuffled = train_idx.clone();

    for epoch in 0..cfg.epochs {
        shuffled.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in shuffled.chunks(cfg.batch_size) {
            let batch = data.subset(chunk);
            let loss = backprop(&model, &batch, cfg.l2, Some(&mut rng), &mut ws, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            adam.step(model.params_mut(), &grad, cfg);
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_mse = match &val_set {
            Some(v) => {
                let mse = weighted_mse(&model, v)?;
                if !mse.is_finite() {
                    return Err(Error::Diverged { epoch, loss: mse });
                }
                Some(mse)
            }
            None => None,
        };
        history.push(EpochRecord { epoch, train_loss, val_mse });
        match val_mse {
            Some(v) if v < best_val => {
                best_val = v;
                best = model.clone();
                best_epoch = epoch;
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
            None => best_epoch = epoch,
        }
    }
    let model = if val_set.is_some() && best_val.is_finite() { best } else { model };
    Ok(TrainOutcome { model, history, best_epoch, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear_set(n: usize, seed: u64) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * 6).map(|_| rng.random_range(0.0..1.0)).collect();
        let coef = [0.3, -0.2, 0.5, 0.1, 0.0, 0.25];
        let y = x.chunks(6).map(|r| 0.2 + r.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>()).collect();
        TrainingSet::new(x, y, vec![1.0; n], 6).unwrap()
    }

    #[test]
    fn overfits_ten_points() {
        let data = linear_set(10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mlp::new(&[6, 16, 8, 1], 0.0, 0, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 2000,
            learning_rate: 3e-3,
            batch_size: 10,
            l2: 0.0,
            dropout: 0.0,
            validation_fraction: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&m, &data, &cfg).unwrap();
        let mse = weighted_mse(&out.model, &data).unwrap();
        assert!(mse < 1e-4, "mse {mse}");
        assert_eq!(out.history.len(), 2000);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let data = linear_set(30, 3);
        let m = Mlp::new(&[6, 8, 1], 0.2, 0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 5, ..TrainConfig::default() };
        let out = train(&m, &data, &cfg).unwrap();
        let a: Vec<u64> = m.params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = out.model.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let data = linear_set(50, 5);
        let m = Mlp::new(&[6, 8, 4, 1], 0.2, 0, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let cfg = TrainConfig { epochs: 30, seed: 9, ..TrainConfig::default() };
        let a = train(&m, &data, &cfg).unwrap();
        let b = train(&m, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn early_stopping_triggers() {
        let data = linear_set(60, 7);
        let m = Mlp::new(&[6, 8, 1], 0.0, 0, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let cfg = TrainConfig { epochs: 5000, patience: 3, learning_rate: 0.05, ..TrainConfig::default() };
        let out = train(&m, &data, &cfg).unwrap();
        assert!(out.stopped_early);
        assert!(out.history.len() < 5000);
    }

    #[test]
    fn divergence_is_reported() {
        let mut data = linear_set(10, 9);
        data.y[0] = 1e300;
        let m = Mlp::new(&[6, 4, 1], 0.0, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = TrainConfig { epochs: 3, validation_fraction: 0.0, ..TrainConfig::default() };
        assert!(matches!(train(&m, &data, &cfg), Err(Error::Diverged { epoch: 0, .. })));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { dropout: 1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}

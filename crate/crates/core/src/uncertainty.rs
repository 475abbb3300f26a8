//! Monte Carlo dropout: repeated stochastic forward passes per point, reported
//! as a mean prediction and a population standard deviation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Field, LatWeights, OceanMask};
use crate::neuralnet::{FittedModel, RegionalModel};
use crate::rng::derive_seed;

/// Per-point predictive mean and spread (label units), canonical point order.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub passes: usize,
}

impl UncertaintyMap {
    pub fn to_fields(&self, mask: &OceanMask) -> Result<(Field, Field)> {
        Ok((Field::from_ocean_values(mask, &self.mean)?, Field::from_ocean_values(mask, &self.std)?))
    }
}

/// The dropout stream of one point: keyed by `(seed, point_id)` only, so the
/// first `T` passes are the same whatever `T` or the visiting order.
pub fn point_stream(seed: u64, point_id: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mc_dropout", 0));
    r.set_stream(point_id as u64);
    r
}

/// The `passes` unscaled dropout-mode predictions for one point.
pub fn mc_samples(model: &FittedModel, x_raw: &[f64], passes: usize, seed: u64, point_id: usize) -> Result<Vec<f64>> {
    let n = model.scaler.n_features();
    if x_raw.len() != n {
        return Err(Error::arg(format!("model expects {n} inputs, got {}", x_raw.len())));
    }
    let mut xs = vec![0.0; n];
    model.scaler.transform_row(x_raw, &mut xs);
    let mut rng = point_stream(seed, point_id);
    (0..passes)
        .map(|_| Ok(model.scaler.inverse_y(model.mlp.forward_dropout(&xs, &mut rng)?)))
        .collect()
}

/// Sample mean and population (`1/T`) standard deviation.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let t = samples.len() as f64;
    if samples.iter().all(|&s| s == samples[0]) {
        return (samples[0], 0.0);
    }
    let mean = samples.iter().sum::<f64>() / t;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / t;
    (mean, var.sqrt())
}

/// MC dropout for points that all share one model. `point_ids` key the
/// per-point streams and must be unique within a run.
pub fn mc_dropout_predict(
    model: &FittedModel,
    x_raw: &[f64],
    point_ids: &[usize],
    passes: usize,
    seed: u64,
) -> Result<UncertaintyMap> {
    if passes == 0 {
        return Err(Error::arg("MC dropout needs at least one pass"));
    }
    let m = model.scaler.n_features();
    if x_raw.len() != point_ids.len() * m {
        return Err(Error::arg(format!(
            "{} inputs for {} points of {m} features",
            x_raw.len(),
            point_ids.len()
        )));
    }
    let (mean, std) = x_raw
        .par_chunks(m)
        .zip(point_ids.par_iter())
        .map(|(row, &id)| mc_samples(model, row, passes, seed, id).map(|s| mean_std(&s)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(UncertaintyMap { mean, std, passes })
}

/// MC dropout over all points, each through its cluster's model; point `p`
/// uses stream `p`.
pub fn mc_dropout_regional(model: &RegionalModel, x_raw: &[f64], passes: usize, seed: u64) -> Result<UncertaintyMap> {
    if passes == 0 {
        return Err(Error::arg("MC dropout needs at least one pass"));
    }
    let m = model.n_features();
    if x_raw.len() != model.partition.n_points() * m {
        return Err(Error::arg("inputs do not match the partition's points"));
    }
    let (mean, std) = x_raw
        .par_chunks(m)
        .enumerate()
        .map(|(p, row)| {
            let c = model.partition.labels()[p];
            mc_samples(&model.clusters[c].model, row, passes, seed, p).map(|s| mean_std(&s))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(UncertaintyMap { mean, std, passes })
}

/// Latitude-weighted RMS of the standard deviation map.
pub fn uncertainty_rms(u: &UncertaintyMap, w: &LatWeights) -> Result<f64> {
    if u.std.len() != w.len() {
        return Err(Error::arg(format!("{} std values but {} weights", u.std.len(), w.len())));
    }
    let (num, den) = u
        .std
        .iter()
        .zip(w.as_slice())
        .fold((0.0, 0.0), |(n, d), (s, wi)| (n + wi * s * s, d + wi));
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::{Mlp, Scaler};

    fn unit_scaler() -> Scaler {
        Scaler { x_min: vec![0.0; 6], x_max: vec![1.0; 6], y_min: 0.0, y_max: 1.0 }
    }

    fn random_model(dropout: f64) -> FittedModel {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        FittedModel { mlp: Mlp::new(&[6, 16, 8, 1], dropout, 0, &mut r).unwrap(), scaler: unit_scaler() }
    }

    #[test]
    fn no_dropout_means_no_spread() {
        let model = random_model(0.0);
        let x = [0.1, 0.5, 0.3, 0.9, 0.2, 0.4, 0.6, 0.6, 0.1, 0.0, 1.0, 0.3];
        let u = mc_dropout_predict(&model, &x, &[0, 1], 25, 3).unwrap();
        assert_eq!(u.std, vec![0.0, 0.0]);
        assert_eq!(u.mean[0], model.predict_raw(&x[..6]).unwrap());
    }

    #[test]
    fn single_pass_has_zero_std() {
        let model = random_model(0.3);
        let x = [0.1, 0.5, 0.3, 0.9, 0.2, 0.4];
        let u = mc_dropout_predict(&model, &x, &[7], 1, 3).unwrap();
        assert_eq!(u.std[0], 0.0);
        assert_eq!(u.mean[0], mc_samples(&model, &x, 1, 3, 7).unwrap()[0]);
        assert!(mc_dropout_predict(&model, &x, &[7], 0, 3).is_err());
    }

    #[test]
    fn stream_prefix_is_stable_and_order_free() {
        let model = random_model(0.3);
        let x = [0.1, 0.5, 0.3, 0.9, 0.2, 0.4];
        let short = mc_samples(&model, &x, 10, 5, 42).unwrap();
        let long = mc_samples(&model, &x, 40, 5, 42).unwrap();
        assert_eq!(short[..], long[..10]);
        let xx = [x, x].concat();
        let a = mc_dropout_predict(&model, &xx, &[3, 9], 20, 5).unwrap();
        let b = mc_dropout_predict(&model, &xx, &[9, 3], 20, 5).unwrap();
        assert_eq!(a.mean[0], b.mean[1]);
        assert_eq!(a.std[1], b.std[0]);
    }

    #[test]
    fn std_ignores_constant_offset() {
        let model = random_model(0.3);
        let mut shifted = model.clone();
        shifted.mlp.biases_mut(2)[0] += 4.0;
        let x = [0.2, 0.2, 0.7, 0.9, 0.1, 0.5];
        let a = mc_dropout_predict(&model, &x, &[0], 200, 8).unwrap();
        let b = mc_dropout_predict(&shifted, &x, &[0], 200, 8).unwrap();
        assert!((a.std[0] - b.std[0]).abs() < 1e-9);
        assert!((b.mean[0] - a.mean[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn rms_of_constant_std() {
        let w = LatWeights::from_vec(vec![0.2, 0.7, 1.0]).unwrap();
        let u = UncertaintyMap { mean: vec![0.0; 3], std: vec![0.0; 3], passes: 1 };
        assert_eq!(uncertainty_rms(&u, &w).unwrap(), 0.0);
        let u = UncertaintyMap { std: vec![0.35; 3], ..u };
        assert!((uncertainty_rms(&u, &w).unwrap() - 0.35).abs() < 1e-15);
    }
}

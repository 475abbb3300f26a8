use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column min-max scaling of inputs and label onto `[0, 1]`.
///
/// Values outside the fitted range are mapped linearly, never clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub y_min: f64,
    pub y_max: f64,
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

impl Scaler {
    /// Fits on a row-major `n x n_features` input matrix and its labels.
    pub fn fit(x: &[f64], n_features: usize, y: &[f64]) -> Result<Scaler> {
        if n_features == 0 || x.len() != y.len() * n_features {
            return Err(Error::arg(format!(
                "{} input values do not match {} labels x {} features",
                x.len(),
                y.len(),
                n_features
            )));
        }
        if y.is_empty() {
            return Err(Error::arg("cannot fit a scaler on no rows"));
        }
        let mut x_min = Vec::with_capacity(n_features);
        let mut x_max = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let (lo, hi) = min_max(x.iter().skip(f).step_by(n_features).copied());
            if !(hi > lo) {
                return Err(Error::degenerate(format!("feature {f} is constant ({lo})")));
            }
            x_min.push(lo);
            x_max.push(hi);
        }
        let (y_min, y_max) = min_max(y.iter().copied());
        if !(y_max > y_min) {
            return Err(Error::degenerate(format!("label is constant ({y_min})")));
        }
        Ok(Scaler { x_min, x_max, y_min, y_max })
    }

    pub fn n_features(&self) -> usize {
        self.x_min.len()
    }

    pub fn label_range(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for (f, (o, v)) in out.iter_mut().zip(row).enumerate() {
            *o = (v - self.x_min[f]) / (self.x_max[f] - self.x_min[f]);
        }
    }

    pub fn transform_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.n_features();
        if !x.len().is_multiple_of(m) {
            return Err(Error::arg(format!("input length {} is not a multiple of {m}", x.len())));
        }
        let mut out = vec![0.0; x.len()];
        for (row, o) in x.chunks(m).zip(out.chunks_mut(m)) {
            self.transform_row(row, o);
        }
        Ok(out)
    }

    pub fn inverse_x(&self, x: &[f64]) -> Vec<f64> {
        let m = self.n_features();
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let f = i % m;
                self.x_min[f] + v * (self.x_max[f] - self.x_min[f])
            })
            .collect()
    }

    pub fn transform_y(&self, y: f64) -> f64 {
        (y - self.y_min) / (self.y_max - self.y_min)
    }

    pub fn inverse_y(&self, y: f64) -> f64 {
        self.y_min + y * (self.y_max - self.y_min)
    }
}

/// Fits a scaler and returns it with the scaled inputs and labels.
pub fn scaler_fit_transform(x: &[f64], n_features: usize, y: &[f64]) -> Result<(Scaler, Vec<f64>, Vec<f64>)> {
    let s = Scaler::fit(x, n_features, y)?;
    let xs = s.transform_x(x)?;
    let ys = y.iter().map(|&v| s.transform_y(v)).collect();
    Ok((s, xs, ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn maps_column_to_unit_interval() {
        let (s, x, y) = scaler_fit_transform(&[0.0, 1.0, 5.0, 2.0, 10.0, 3.0], 2, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![0.0, 0.0, 0.5, 0.5, 1.0, 1.0]);
        assert_eq!(y, vec![0.0, 0.5, 1.0]);
        assert_eq!(s.transform_x(&[12.0, 1.0]).unwrap()[0], 1.2);
    }

    #[test]
    fn constant_column_is_degenerate() {
        assert!(matches!(Scaler::fit(&[1.0, 1.0, 1.0], 1, &[0.0, 1.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(matches!(Scaler::fit(&[1.0, 2.0], 1, &[3.0, 3.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..60).map(|_| rng.random_range(-4.0..9.0)).collect();
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (s, xs, ys) = scaler_fit_transform(&x, 6, &y).unwrap();
        for (a, b) in s.inverse_x(&xs).iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in ys.iter().zip(&y) {
            assert!((s.inverse_y(*a) - b).abs() < 1e-12);
        }
        assert!(xs.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

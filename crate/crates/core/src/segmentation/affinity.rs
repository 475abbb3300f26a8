use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaPolicy {
    /// Median of all pairwise distances between z-scored rows.
    #[default]
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AffinityOptions {
    pub sigma: SigmaPolicy,
    /// Keep only each point's `knn` strongest neighbors (symmetrized union).
    pub knn: Option<usize>,
}

/// Dense symmetric Gaussian affinity between points.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinity {
    pub a: DMatrix<f64>,
    pub sigma: f64,
}

impl Affinity {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// Zero mean and unit (population) variance per row; constant rows become zeros.
fn zscore_rows(features: &[f64], d: usize) -> Vec<f64> {
    let mut out = features.to_vec();
    for row in out.chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        if var > 0.0 {
            let sd = var.sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        } else {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out
}

fn median_distance(dist2: &DMatrix<f64>) -> f64 {
    let n = dist2.nrows();
    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for j in 1..n {
        for i in 0..j {
            upper.push(dist2[(i, j)]);
        }
    }
    let m = upper.len();
    let cmp = |a: &f64, b: &f64| a.total_cmp(b);
    let (_, &mut hi, _) = upper.select_nth_unstable_by(m / 2, cmp);
    if m % 2 == 1 {
        hi.sqrt()
    } else {
        let lo = upper[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo.sqrt() + hi.sqrt())
    }
}

/// Gaussian affinity `exp(-|z_i - z_j|^2 / (2 sigma^2))` over z-scored rows of
/// the row-major `n x d` feature matrix.
pub fn build_affinity(features: &[f64], d: usize, opts: &AffinityOptions) -> Result<Affinity> {
    if d == 0 || !features.len().is_multiple_of(d) {
        return Err(Error::arg(format!("{} feature values do not form rows of {d}", features.len())));
    }
    let n = features.len() / d;
    if n < 2 {
        return Err(Error::arg(format!("affinity needs at least 2 points, got {n}")));
    }
    let z = zscore_rows(features, d);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = &z[i * d..(i + 1) * d];
            (0..n)
                .map(|j| {
                    let zj = &z[j * d..(j + 1) * d];
                    zi.iter().zip(zj).map(|(a, b)| (a - b) * (a - b)).sum()
                })
                .collect()
        })
        .collect();
    let dist2 = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    drop(rows);

    let sigma = match opts.sigma {
        SigmaPolicy::Median => median_distance(&dist2),
        SigmaPolicy::Fixed(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::arg(format!("fixed sigma must be positive, got {s}")));
            }
            s
        }
    };
    if sigma == 0.0 {
        return Err(Error::degenerate("all feature rows are identical (median distance is zero)"));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut a = dist2.map(|d2| (-d2 * inv).exp());

    if let Some(knn) = opts.knn {
        if knn == 0 {
            return Err(Error::arg("knn must be at least 1"));
        }
        let mut keep = DMatrix::from_element(n, n, false);
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&x, &y| a[(i, y)].total_cmp(&a[(i, x)]).then(x.cmp(&y)));
            for &j in order.iter().take(knn) {
                keep[(i, j)] = true;
                keep[(j, i)] = true;
            }
            keep[(i, i)] = true;
        }
        a.zip_apply(&keep, |v, k| {
            if !k {
                *v = 0.0;
            }
        });
    }
    Ok(Affinity { a, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn diagonal_is_one_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f: Vec<f64> = (0..5 * 7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let aff = build_affinity(&f, 7, &AffinityOptions::default()).unwrap();
        for i in 0..5 {
            assert_eq!(aff.a[(i, i)], 1.0);
            for j in 0..5 {
                assert_eq!(aff.a[(i, j)], aff.a[(j, i)]);
                assert!(aff.a[(i, j)] >= 0.0);
            }
        }
    }

    #[test]
    fn orthogonal_series_identity() {
        let d = 24;
        let s: Vec<f64> = (0..d).map(|t| (2.0 * PI * t as f64 / d as f64).sin()).collect();
        let c: Vec<f64> = (0..d).map(|t| (2.0 * PI * t as f64 / d as f64).cos()).collect();
        let f = [s, c].concat();
        let sigma = 3.0;
        let opts = AffinityOptions { sigma: SigmaPolicy::Fixed(sigma), knn: None };
        let aff = build_affinity(&f, d, &opts).unwrap();
        let expected = (-(d as f64) / (sigma * sigma)).exp();
        assert!((aff.a[(0, 1)] - expected).abs() < 1e-12);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let (n, d) = (50, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let aff = build_affinity(&f, d, &AffinityOptions::default()).unwrap();

        let mut z = vec![vec![0.0; d]; n];
        for i in 0..n {
            let row = &f[i * d..(i + 1) * d];
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64).sqrt();
            for t in 0..d {
                z[i][t] = (row[t] - mean) / sd;
            }
        }
        let mut dists = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d2: f64 = (0..d).map(|t| (z[i][t] - z[j][t]).powi(2)).sum();
                dists.push(d2.sqrt());
            }
        }
        dists.sort_by(f64::total_cmp);
        let m = dists.len();
        let sigma = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
        assert!((aff.sigma - sigma).abs() < 1e-12);
        for i in 0..n {
            for j in 0..n {
                let d2: f64 = (0..d).map(|t| (z[i][t] - z[j][t]).powi(2)).sum();
                let expected = (-d2 / (2.0 * sigma * sigma)).exp();
                assert!((aff.a[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let f = vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        assert!(matches!(
            build_affinity(&f, 3, &AffinityOptions::default()),
            Err(Error::Degenerate(_))
        ));
        assert!(build_affinity(&f[..3], 3, &AffinityOptions::default()).is_err());
    }

    #[test]
    fn knn_sparsification_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f: Vec<f64> = (0..20 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let opts = AffinityOptions { sigma: SigmaPolicy::Median, knn: Some(3) };
        let aff = build_affinity(&f, 6, &opts).unwrap();
        for i in 0..20 {
            let nonzero = (0..20).filter(|&j| j != i && aff.a[(i, j)] > 0.0).count();
            assert!(nonzero >= 3);
            for j in 0..20 {
                assert_eq!(aff.a[(i, j)], aff.a[(j, i)]);
            }
        }
    }
}

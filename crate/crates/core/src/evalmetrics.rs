//! Area-weighted scores, the persistence baseline and the leave-one-out
//! evaluation over climate models.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{area_weights, Field, LatWeights, OceanMask};
use crate::neuralnet::{fit_regional, ArchitecturePolicy, TrainConfig};
use crate::rng::derive_seed;
use crate::segmentation::Partition;
use crate::trend::{trend_map, TimeSeriesStack, TrendMap, TrendWindow};

fn check_len(a: &[f64], b: &[f64], w: &LatWeights) -> Result<()> {
    if a.len() != b.len() || a.len() != w.len() {
        return Err(Error::arg(format!(
            "score inputs disagree: {} vs {} values, {} weights",
            a.len(),
            b.len(),
            w.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::arg("cannot score empty fields"));
    }
    Ok(())
}

pub fn weighted_rmse(a: &[f64], b: &[f64], w: &LatWeights) -> Result<f64> {
    check_len(a, b, w)?;
    let (num, den) = a
        .iter()
        .zip(b)
        .zip(w.as_slice())
        .fold((0.0, 0.0), |(n, d), ((x, y), wi)| (n + wi * (x - y) * (x - y), d + wi));
    Ok((num / den).sqrt())
}

/// Weighted, centered Pearson correlation.
pub fn weighted_pearson(a: &[f64], b: &[f64], w: &LatWeights) -> Result<f64> {
    check_len(a, b, w)?;
    let w = w.as_slice();
    let sw: f64 = w.iter().sum();
    let ma = a.iter().zip(w).map(|(x, wi)| wi * x).sum::<f64>() / sw;
    let mb = b.iter().zip(w).map(|(x, wi)| wi * x).sum::<f64>() / sw;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for ((x, y), wi) in a.iter().zip(b).zip(w) {
        let (dx, dy) = (x - ma, y - mb);
        cov += wi * dx * dy;
        va += wi * dx * dx;
        vb += wi * dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::degenerate("correlation of a constant field"));
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

pub fn rms_variability(a: &[f64], w: &LatWeights) -> Result<f64> {
    if a.len() != w.len() || a.is_empty() {
        return Err(Error::arg(format!("{} values but {} weights", a.len(), w.len())));
    }
    // Scaling by max |a| avoids overflow and makes a constant field come out as exactly |c|.
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Ok(scale);
    }
    let (num, den) = a.iter().zip(w.as_slice()).fold((0.0, 0.0), |(n, d), (x, wi)| {
        let s = x / scale;
        (n + wi * s * s, d + wi)
    });
    Ok(scale * (num / den).sqrt())
}

/// Ocean values of two fields that must share one land pattern.
pub fn paired_values(a: &Field, b: &Field) -> Result<(OceanMask, Vec<f64>, Vec<f64>)> {
    if a.grid != b.grid {
        return Err(Error::arg("fields are on different grids"));
    }
    let ma = OceanMask::from_field(a);
    if ma != OceanMask::from_field(b) {
        return Err(Error::arg("fields have different ocean masks"));
    }
    let (va, vb) = (a.ocean_values(&ma)?, b.ocean_values(&ma)?);
    Ok((ma, va, vb))
}

/// RMSE and correlation of two fields on their shared mask.
pub fn field_scores(a: &Field, b: &Field) -> Result<(f64, f64)> {
    let (mask, va, vb) = paired_values(a, b)?;
    let w = area_weights(&mask);
    Ok((weighted_rmse(&va, &vb, &w)?, weighted_pearson(&va, &vb, &w)?))
}

/// The past trend reused as the forecast for `future`.
pub fn persistence(past: &TrendMap, future: TrendWindow) -> TrendMap {
    TrendMap { mask: past.mask.clone(), slope: past.slope.clone(), window: future }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub label: String,
    pub rmse: f64,
    pub correlation: f64,
    /// RMS of the prediction.
    pub rms_variability: f64,
}

impl ScoreReport {
    pub fn new(label: impl Into<String>, prediction: &[f64], truth: &[f64], w: &LatWeights) -> Result<Self> {
        Ok(ScoreReport {
            label: label.into(),
            rmse: weighted_rmse(prediction, truth, w)?,
            correlation: weighted_pearson(prediction, truth, w)?,
            rms_variability: rms_variability(prediction, w)?,
        })
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation, ties taking their average rank.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::arg("spearman needs two equal-length series of at least 2 values"));
    }
    let w = LatWeights::from_vec(vec![1.0; a.len()])?;
    weighted_pearson(&ranks(a), &ranks(b), &w)
}

/// One climate model's trends over the training and forecast windows,
/// computed after monthly global-mean removal.
#[derive(Debug, Clone)]
pub struct LooDataset {
    pub name: String,
    pub hindcast: TrendMap,
    pub projection: TrendMap,
}

impl LooDataset {
    pub fn from_stacks(
        name: impl Into<String>,
        hindcast: &TimeSeriesStack,
        projection: &TimeSeriesStack,
        past: TrendWindow,
        future: TrendWindow,
    ) -> Result<Self> {
        Ok(LooDataset {
            name: name.into(),
            hindcast: trend_map(&hindcast.remove_global_mean()?, past)?,
            projection: trend_map(&projection.remove_global_mean()?, future)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScorePair {
    pub rmse: f64,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooRow {
    pub name: String,
    pub ml: ScorePair,
    pub persistence: ScorePair,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LooTable {
    pub rows: Vec<LooRow>,
}

fn mean(x: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = x.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

impl LooTable {
    pub fn average_ml(&self) -> ScorePair {
        ScorePair {
            rmse: mean(self.rows.iter().map(|r| r.ml.rmse)),
            correlation: mean(self.rows.iter().map(|r| r.ml.correlation)),
        }
    }

    pub fn average_persistence(&self) -> ScorePair {
        ScorePair {
            rmse: mean(self.rows.iter().map(|r| r.persistence.rmse)),
            correlation: mean(self.rows.iter().map(|r| r.persistence.correlation)),
        }
    }

    /// Metrics as rows, held-out models as columns, then the average.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["metric".to_string()];
        header.extend(self.rows.iter().map(|r| r.name.clone()));
        header.push("average".into());
        w.write_record(&header)?;
        let metrics: [(&str, fn(&LooRow) -> f64); 4] = [
            ("ml_rmse", |r| r.ml.rmse),
            ("ml_correlation", |r| r.ml.correlation),
            ("persistence_rmse", |r| r.persistence.rmse),
            ("persistence_correlation", |r| r.persistence.correlation),
        ];
        for (name, get) in metrics {
            let mut rec = vec![name.to_string()];
            rec.extend(self.rows.iter().map(|r| fmt_num(get(r))));
            rec.push(fmt_num(mean(self.rows.iter().map(get))));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same value.
pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Holds out each dataset in turn: the other models' hindcast trends are the
/// inputs and the held-out hindcast the label; the trained networks then map
/// the other models' projections onto a forecast scored against the held-out
/// projection. `partition_for(d)` supplies the segmentation used for holdout `d`.
pub fn leave_one_out<F>(
    datasets: &[LooDataset],
    partition_for: F,
    policy: &ArchitecturePolicy,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LooTable>
where
    F: Fn(usize) -> Result<Partition> + Sync,
{
    if datasets.len() < 3 {
        return Err(Error::arg(format!(
            "leave-one-out needs at least 3 datasets (2 features after holdout), got {}",
            datasets.len()
        )));
    }
    let mask = &datasets[0].hindcast.mask;
    if datasets.iter().any(|d| &d.hindcast.mask != mask || &d.projection.mask != mask) {
        return Err(Error::arg("leave-one-out datasets must share one ocean mask"));
    }
    let w = area_weights(mask);
    let n = mask.ocean_count();
    let rows = (0..datasets.len())
        .into_par_iter()
        .map(|d| {
            let others: Vec<&LooDataset> = datasets.iter().enumerate().filter(|(i, _)| *i != d).map(|(_, x)| x).collect();
            let m = others.len();
            let stack = |pick: fn(&LooDataset) -> &TrendMap| {
                let mut x = vec![0.0; n * m];
                for (f, o) in others.iter().enumerate() {
                    for (p, v) in pick(o).slope.iter().enumerate() {
                        x[p * m + f] = *v;
                    }
                }
                x
            };
            let x_train = stack(|o| &o.hindcast);
            let x_future = stack(|o| &o.projection);
            let held = &datasets[d];
            let run_seed = derive_seed(seed, "loo", d as u64);
            let partition = partition_for(d)?;
            let model = fit_regional(&x_train, m, &held.hindcast.slope, &w, &partition, policy, cfg, run_seed)?;
            let pred = model.predict(&x_future)?;
            let truth = &held.projection.slope;
            let score = |p: &[f64]| -> Result<ScorePair> {
                Ok(ScorePair { rmse: weighted_rmse(p, truth, &w)?, correlation: weighted_pearson(p, truth, &w)? })
            };
            Ok(LooRow { name: held.name.clone(), ml: score(&pred)?, persistence: score(&held.hindcast.slope)?, seed: run_seed })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LooTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights(n: usize, seed: u64) -> LatWeights {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        LatWeights::from_vec((0..n).map(|_| r.random_range(0.05..1.0)).collect()).unwrap()
    }

    #[test]
    fn identities() {
        let w = weights(20, 1);
        let a: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
        assert_eq!(weighted_rmse(&a, &a, &w).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + 0.25).collect();
        assert!((weighted_rmse(&a, &shifted, &w).unwrap() - 0.25).abs() < 1e-15);
        let affine: Vec<f64> = a.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((weighted_pearson(&a, &affine, &w).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((weighted_pearson(&a, &neg, &w).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(rms_variability(&vec![-1.5; 20], &w).unwrap(), 1.5);
        assert_eq!(rms_variability(&vec![0.0; 20], &w).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_correlation_is_degenerate() {
        let w = weights(5, 2);
        assert!(matches!(weighted_pearson(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0], &w), Err(Error::Degenerate(_))));
    }

    #[test]
    fn field_mask_mismatch_is_an_argument_error() {
        let g = Grid::global(3, 2).unwrap();
        let a = Field::new(g, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Field::new(g, vec![1.0, f64::NAN, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert!(matches!(field_scores(&a, &b), Err(Error::Argument(_))));
        let (rmse, corr) = field_scores(&a, &a).unwrap();
        assert_eq!((rmse, corr), (0.0, 1.0));
    }

    #[test]
    fn persistence_is_a_relabelled_copy() {
        let mask = OceanMask::all_ocean(Grid::global(4, 2).unwrap());
        let past = TrendMap { mask, slope: vec![0.1, -0.3, 0.2, 0.0, 1.0, 2.0, -1.0, 0.5], window: TrendWindow::new(1993, 2022).unwrap() };
        let fut = persistence(&past, past.window.following());
        assert_eq!(fut.slope, past.slope);
        assert_eq!(fut.window, TrendWindow::new(2023, 2052).unwrap());
    }

    #[test]
    fn spearman_of_monotone_series() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[0.1, 0.5, 0.9, 10.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn too_few_datasets() {
        let mask = OceanMask::all_ocean(Grid::global(2, 2).unwrap());
        let w = TrendWindow::new(2000, 2001).unwrap();
        let tm = TrendMap { mask, slope: vec![0.0, 1.0, 2.0, 3.0], window: w };
        let d = LooDataset { name: "a".into(), hindcast: tm.clone(), projection: tm };
        let err = leave_one_out(&[d.clone(), d], |_| Partition::single(4), &ArchitecturePolicy::default(), &TrainConfig::default(), 0);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    fn vecs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(0.01..1.0f64, n),
        )
    }

    proptest! {
        #[test]
        fn rmse_symmetric_and_triangle((a, b, c, w) in vecs(24)) {
            let w = LatWeights::from_vec(w).unwrap();
            let ab = weighted_rmse(&a, &b, &w).unwrap();
            prop_assert_eq!(ab, weighted_rmse(&b, &a, &w).unwrap());
            let ac = weighted_rmse(&a, &c, &w).unwrap();
            let cb = weighted_rmse(&c, &b, &w).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn pearson_affine_invariant((a, b, _c, w) in vecs(24), s in 0.1..10.0f64, t in -5.0..5.0f64) {
            let w = LatWeights::from_vec(w).unwrap();
            let r = weighted_pearson(&a, &b, &w).unwrap();
            let a2: Vec<f64> = a.iter().map(|v| s * v + t).collect();
            prop_assert!((weighted_pearson(&a2, &b, &w).unwrap() - r).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r));
        }

        #[test]
        fn demeaning_never_raises_rms((a, _b, _c, w) in vecs(24)) {
            let w = LatWeights::from_vec(w).unwrap();
            let mut d = a.clone();
            crate::grid::demean_in_place(&mut d, &w).unwrap();
            prop_assert!(rms_variability(&d, &w).unwrap() <= rms_variability(&a, &w).unwrap() + 1e-12);
        }
    }
}

//! Shapley attribution of a prediction to its input features.
//!
//! Missing features are marginalized by substituting background rows. Two
//! solvers share that value function: brute-force enumeration of the Shapley
//! sum, and Kernel SHAP's constrained weighted least squares.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::neuralnet::{FittedModel, Mlp};
use crate::segmentation::Partition;

/// Largest feature count the enumeration paths accept.
pub const MAX_EXACT_FEATURES: usize = 16;

pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn predict(&self, x: &[f64]) -> f64;
}

impl Predictor for Mlp {
    fn n_features(&self) -> usize {
        self.n_inputs()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.forward(x).expect("input width checked by the explainer")
    }
}

/// Wraps a closure as a predictor.
pub struct FnPredictor<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.n
    }

    fn predict(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Included-feature indicator `z'` as a bit set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coalition {
    bits: u64,
    m: usize,
}

impl Coalition {
    pub fn from_bits(bits: u64, m: usize) -> Self {
        debug_assert!(m <= 63 && bits < (1u64 << m));
        Coalition { bits, m }
    }

    pub fn from_included(included: &[bool]) -> Self {
        let bits = included.iter().enumerate().fold(0u64, |b, (i, &on)| b | (u64::from(on) << i));
        Coalition { bits, m: included.len() }
    }

    pub fn empty(m: usize) -> Self {
        Coalition { bits: 0, m }
    }

    pub fn full(m: usize) -> Self {
        Coalition { bits: (1u64 << m) - 1, m }
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn includes(&self, i: usize) -> bool {
        self.bits >> i & 1 == 1
    }

    pub fn size(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_full(&self) -> bool {
        self.size() == self.m
    }
}

/// Replacement rows for marginalizing excluded features.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    rows: Vec<f64>,
    m: usize,
}

impl BackgroundSet {
    pub fn new(rows: Vec<f64>, m: usize) -> Result<Self> {
        if m == 0 || rows.is_empty() || !rows.len().is_multiple_of(m) {
            return Err(Error::arg(format!("background of {} values is not a non-empty set of {m}-rows", rows.len())));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("background rows must be finite"));
        }
        Ok(BackgroundSet { rows, m })
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.m
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.rows[b * self.m..(b + 1) * self.m]
    }
}

/// Up to `size` rows drawn uniformly without replacement (all rows if fewer).
pub fn sample_background(x: &[f64], m: usize, size: usize, seed: u64) -> Result<BackgroundSet> {
    if m == 0 || !x.len().is_multiple_of(m) {
        return Err(Error::arg("background source is not a whole number of rows"));
    }
    let n = x.len() / m;
    if n <= size {
        return BackgroundSet::new(x.to_vec(), m);
    }
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, size).into_vec();
    idx.sort_unstable();
    let mut rows = Vec::with_capacity(size * m);
    for i in idx {
        rows.extend_from_slice(&x[i * m..(i + 1) * m]);
    }
    BackgroundSet::new(rows, m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attribution {
    pub phi: Vec<f64>,
    /// Expected model output over the background.
    pub phi0: f64,
    /// Model output at the explained point.
    pub fx: f64,
}

impl Attribution {
    /// `|phi0 + sum(phi) - f(x)|`.
    pub fn efficiency_gap(&self) -> f64 {
        (self.phi0 + self.phi.iter().sum::<f64>() - self.fx).abs()
    }
}

fn check_shapes<P: Predictor + ?Sized>(f: &P, x: &[f64], bg: &BackgroundSet) -> Result<usize> {
    let m = f.n_features();
    if x.len() != m || bg.n_features() != m {
        return Err(Error::arg(format!(
            "model has {m} features, point has {}, background has {}",
            x.len(),
            bg.n_features()
        )));
    }
    Ok(m)
}

/// `v(S)`: mean model output with the features outside `S` taken from each background row.
pub fn coalition_value<P: Predictor + ?Sized>(f: &P, x: &[f64], s: Coalition, bg: &BackgroundSet) -> f64 {
    if s.is_full() {
        return f.predict(x);
    }
    let mut z = vec![0.0; x.len()];
    let mut sum = 0.0;
    for b in 0..bg.len() {
        let row = bg.row(b);
        for i in 0..x.len() {
            z[i] = if s.includes(i) { x[i] } else { row[i] };
        }
        sum += f.predict(&z);
    }
    sum / bg.len() as f64
}

fn all_values<P: Predictor + ?Sized>(f: &P, x: &[f64], bg: &BackgroundSet, m: usize) -> Vec<f64> {
    (0..1u64 << m).map(|bits| coalition_value(f, x, Coalition::from_bits(bits, m), bg)).collect()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Brute-force enumeration of the Shapley sum over all coalitions.
pub fn exact_shapley<P: Predictor + ?Sized>(f: &P, x: &[f64], bg: &BackgroundSet) -> Result<Attribution> {
    let m = check_shapes(f, x, bg)?;
    if m > MAX_EXACT_FEATURES {
        return Err(Error::Capability(format!(
            "exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {m}; use kernel_shap with sampling"
        )));
    }
    let v = all_values(f, x, bg, m);
    let m_fact = factorial(m);
    let coef: Vec<f64> = (0..m).map(|s| factorial(s) * factorial(m - s - 1) / m_fact).collect();
    let phi = (0..m)
        .map(|i| {
            let bit = 1u64 << i;
            (0..1u64 << m)
                .filter(|s| s & bit == 0)
                .map(|s| coef[s.count_ones() as usize] * (v[(s | bit) as usize] - v[s as usize]))
                .sum()
        })
        .collect();
    Ok(Attribution { phi, phi0: v[0], fx: v[(1usize << m) - 1] })
}

/// Shapley kernel weight of a coalition of size `s` among `m` features.
pub fn shapley_kernel_weight(m: usize, s: usize) -> f64 {
    assert!(s > 0 && s < m, "kernel weight is only defined for interior coalitions");
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// All `2^M - 2` interior coalitions with their kernel weights.
    Exact,
    /// Coalitions drawn from the kernel distribution over sizes, unit weights.
    Samples { n: usize, seed: u64 },
}

/// Kernel SHAP: weighted least squares fit of `phi0 + sum phi_i z_i` to the
/// coalition values, with `v(empty)` and `v(full)` imposed exactly.
pub fn kernel_shap<P: Predictor + ?Sized>(
    f: &P,
    x: &[f64],
    bg: &BackgroundSet,
    sampling: Sampling,
) -> Result<Attribution> {
    let m = check_shapes(f, x, bg)?;
    if m < 2 {
        return Err(Error::arg("kernel SHAP needs at least 2 features"));
    }
    let coalitions: Vec<(Coalition, f64)> = match sampling {
        Sampling::Exact => {
            if m > MAX_EXACT_FEATURES {
                return Err(Error::Capability(format!(
                    "exact coalition enumeration supports at most {MAX_EXACT_FEATURES} features, got {m}"
                )));
            }
            (1..(1u64 << m) - 1)
                .map(|bits| {
                    let c = Coalition::from_bits(bits, m);
                    (c, shapley_kernel_weight(m, c.size()))
                })
                .collect()
        }
        Sampling::Samples { n, seed } => {
            if m > 63 {
                return Err(Error::Capability(format!("at most 63 features supported, got {m}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let size_mass: Vec<f64> = (1..m).map(|s| 1.0 / (s * (m - s)) as f64).collect();
            let total: f64 = size_mass.iter().sum();
            (0..n)
                .map(|_| {
                    let mut u = rng.random::<f64>() * total;
                    let mut s = m - 1;
                    for (k, mass) in size_mass.iter().enumerate() {
                        if u < *mass {
                            s = k + 1;
                            break;
                        }
                        u -= mass;
                    }
                    let bits = sample(&mut rng, m, s).into_iter().fold(0u64, |b, i| b | 1 << i);
                    (Coalition::from_bits(bits, m), 1.0)
                })
                .collect()
        }
    };

    let v0 = coalition_value(f, x, Coalition::empty(m), bg);
    let fx = coalition_value(f, x, Coalition::full(m), bg);
    let delta = fx - v0;
    // Eliminate the last feature through the efficiency constraint.
    let k = m - 1;
    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut atb = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for (c, w) in &coalitions {
        let zm = f64::from(u8::from(c.includes(m - 1)));
        let target = coalition_value(f, x, *c, bg) - v0 - zm * delta;
        for (i, r) in row.iter_mut().enumerate() {
            *r = f64::from(u8::from(c.includes(i))) - zm;
        }
        for i in 0..k {
            atb[i] += w * row[i] * target;
            for j in 0..k {
                ata[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    let solved = ata
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&atb))
        .or_else(|| ata.lu().solve(&atb))
        .ok_or_else(|| Error::Numerical("kernel SHAP regression system is singular".into()))?;
    let mut phi: Vec<f64> = solved.iter().copied().collect();
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("kernel SHAP produced non-finite attributions".into()));
    }
    Ok(Attribution { phi, phi0: v0, fx })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceUnits {
    /// Model-space (0-1 scaled) units.
    Scaled,
    /// Multiplied by the cluster label scaler's range.
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterImportance {
    pub cluster: usize,
    pub points_explained: usize,
    /// Mean `|phi_i|` per feature, in feature order.
    pub mean_abs_phi: Vec<f64>,
    /// Feature indices sorted by descending importance (ties by index).
    pub ranking: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointAttribution {
    pub point: usize,
    pub cluster: usize,
    pub attribution: Attribution,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainOptions {
    pub sampling: Sampling,
    /// Explain at most this many points per cluster (evenly spaced).
    pub max_points_per_cluster: Option<usize>,
    pub units: ImportanceUnits,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions { sampling: Sampling::Exact, max_points_per_cluster: None, units: ImportanceUnits::Scaled }
    }
}

fn thin(members: Vec<usize>, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c > 0 && members.len() > c => {
            (0..c).map(|i| members[i * members.len() / c]).collect()
        }
        _ => members,
    }
}

/// Attributions for the points of every cluster (dropout off), using that
/// cluster's model and background; `x_raw` is row-major `points x M`.
pub fn explain_points(
    models: &[FittedModel],
    x_raw: &[f64],
    partition: &Partition,
    backgrounds: &[BackgroundSet],
    opts: &ExplainOptions,
) -> Result<Vec<PointAttribution>> {
    if models.len() != partition.k() || backgrounds.len() != partition.k() {
        return Err(Error::arg(format!(
            "{} models and {} backgrounds for {} clusters",
            models.len(),
            backgrounds.len(),
            partition.k()
        )));
    }
    let m = models[0].scaler.n_features();
    if x_raw.len() != partition.n_points() * m {
        return Err(Error::arg("inputs do not match the partition's points"));
    }
    let jobs: Vec<(usize, usize)> = (0..partition.k())
        .flat_map(|c| thin(partition.members(c), opts.max_points_per_cluster).into_iter().map(move |p| (c, p)))
        .collect();
    jobs.par_iter()
        .map(|&(c, p)| {
            let model = &models[c];
            let mut xs = vec![0.0; m];
            model.scaler.transform_row(&x_raw[p * m..(p + 1) * m], &mut xs);
            let mut a = match opts.sampling {
                Sampling::Exact => exact_shapley(&model.mlp, &xs, &backgrounds[c])?,
                s => kernel_shap(&model.mlp, &xs, &backgrounds[c], s)?,
            };
            if opts.units == ImportanceUnits::Label {
                let r = model.scaler.label_range();
                a.phi.iter_mut().for_each(|v| *v *= r);
                a.phi0 = model.scaler.inverse_y(a.phi0);
                a.fx = model.scaler.inverse_y(a.fx);
            }
            Ok(PointAttribution { point: p, cluster: c, attribution: a })
        })
        .collect()
}

/// Per-cluster mean `|phi|` per feature and the resulting ranking.
pub fn cluster_importance(attributions: &[PointAttribution], k: usize, m: usize) -> Vec<ClusterImportance> {
    (0..k)
        .map(|c| {
            let mut sum = vec![0.0; m];
            let mut n = 0usize;
            for pa in attributions.iter().filter(|pa| pa.cluster == c) {
                for (s, p) in sum.iter_mut().zip(&pa.attribution.phi) {
                    *s += p.abs();
                }
                n += 1;
            }
            let mean_abs_phi: Vec<f64> = sum.iter().map(|s| if n > 0 { s / n as f64 } else { 0.0 }).collect();
            let mut ranking: Vec<usize> = (0..m).collect();
            ranking.sort_by(|&a, &b| mean_abs_phi[b].total_cmp(&mean_abs_phi[a]).then(a.cmp(&b)));
            ClusterImportance { cluster: c, points_explained: n, mean_abs_phi, ranking }
        })
        .collect()
}

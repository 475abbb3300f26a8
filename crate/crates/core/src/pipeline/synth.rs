//! Synthetic observation and climate-model datasets with planted trends.
//!
//! Every series is `trend * (t - t0) + seasonal + mode * oscillation + noise`.
//! The seasonal cycle is symmetric within each year and the oscillation is
//! centered on the window midpoint, so neither contributes to an OLS slope
//! over whole years: noiseless stacks reproduce the planted trends.
//!
//! Model trends are smoothed copies of the observed pattern plus a
//! model-specific bias pattern held fixed across both windows, rescaled so
//! their hindcast variance is half the observed one.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelPaths, RunConfig, ShapConfig, Strategy};
use super::grd1::{write_field, write_stack};
use crate::error::{Error, Result};
use crate::grid::{area_weights, demean_in_place, Field, Grid, LatWeights, OceanMask};
use crate::neuralnet::{ArchitecturePolicy, TrainConfig};
use crate::rng::derive_seed;
use crate::trend::{TimeSeriesStack, TrendWindow};

pub const MODEL_NAMES: [&str; 6] = ["CESM1", "CESM2", "GFDLESM2M", "MPIGE", "MPI-ESM1-2-HR", "MPI-ESM1-2-LR"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_lon: usize,
    pub n_lat: usize,
    pub n_models: usize,
    /// Months per window; a multiple of 12.
    pub months: usize,
    pub start_year: i32,
    pub seed: u64,
    /// Monthly white noise on the observations (mm).
    pub obs_noise: f64,
    pub model_noise: f64,
    /// Weighted-rms of the observed trend pattern (mm/year).
    pub pattern_rms: f64,
    /// Correlation between the past and future trend patterns.
    pub persistence_corr: f64,
    /// Bias pattern amplitude relative to the smoothed signal.
    pub model_bias: f64,
    pub variance_factor: f64,
    /// Global mean rise in the past and future windows (mm/year).
    pub gmsl_past: f64,
    pub gmsl_future: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_lon: 36,
            n_lat: 18,
            n_models: 6,
            months: 72,
            start_year: 1993,
            seed: 0,
            obs_noise: 3.0,
            model_noise: 0.5,
            pattern_rms: 1.2,
            persistence_corr: 0.3,
            model_bias: 0.3,
            variance_factor: 0.5,
            gmsl_past: 3.4,
            gmsl_future: 4.5,
        }
    }
}

impl SynthSpec {
    pub fn past_window(&self) -> TrendWindow {
        let years = (self.months / 12) as i32;
        TrendWindow { start_year: self.start_year, end_year: self.start_year + years - 1 }
    }

    pub fn future_window(&self) -> TrendWindow {
        self.past_window().following()
    }

    fn validate(&self) -> Result<()> {
        if self.months == 0 || !self.months.is_multiple_of(12) {
            return Err(Error::arg(format!("months must be a positive multiple of 12, got {}", self.months)));
        }
        if self.n_models < 2 || self.n_models > MODEL_NAMES.len() {
            return Err(Error::arg(format!("n_models must be in 2..={}", MODEL_NAMES.len())));
        }
        if !(0.0..=1.0).contains(&self.persistence_corr) || !(self.variance_factor > 0.0) {
            return Err(Error::arg("persistence_corr must be in [0, 1] and variance_factor positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub grid: Grid,
    pub ocean_points: usize,
    pub past_window: TrendWindow,
    pub future_window: TrendWindow,
    pub observation: FileRecord,
    pub models: Vec<(String, FileRecord, FileRecord)>,
    /// Planted trends including the global-mean rise.
    pub truth_past: FileRecord,
    pub truth_future: FileRecord,
    pub config: PathBuf,
}

/// Continents as coarse boxes plus both polar caps.
pub fn synthetic_land(lat: f64, lon: f64) -> bool {
    let lon = lon.rem_euclid(360.0);
    let boxes: [(f64, f64, f64, f64); 6] = [
        (15.0, 70.0, 235.0, 295.0),
        (-55.0, 10.0, 285.0, 320.0),
        (-35.0, 35.0, 0.0, 45.0),
        (40.0, 75.0, 0.0, 140.0),
        (10.0, 40.0, 60.0, 100.0),
        (-40.0, -12.0, 115.0, 150.0),
    ];
    lat < -70.0 || lat > 75.0 || boxes.iter().any(|&(a, b, c, d)| lat >= a && lat < b && lon >= c && lon < d)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Random smooth pattern on the ocean points, weighted-demeaned to unit rms.
fn smooth_pattern(mask: &OceanMask, w: &LatWeights, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let terms: Vec<(f64, f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                f64::from(rng.random_range(1..4u8)),
                f64::from(rng.random_range(1..4u8)),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut v: Vec<f64> = (0..mask.ocean_count())
        .map(|p| {
            let (lat, lon) = (mask.point_lat(p).to_radians(), mask.point_lon(p).to_radians());
            terms.iter().map(|&(a, k, l, ph, ps)| a * (k * lon + ph).cos() * (l * lat + ps).cos()).sum()
        })
        .collect();
    normalize(&mut v, w)?;
    Ok(v)
}

fn normalize(v: &mut [f64], w: &LatWeights) -> Result<()> {
    demean_in_place(v, w)?;
    let rms = weighted_rms(v, w);
    if rms == 0.0 {
        return Err(Error::degenerate("synthetic pattern is constant"));
    }
    v.iter_mut().for_each(|x| *x /= rms);
    Ok(())
}

fn weighted_rms(v: &[f64], w: &LatWeights) -> f64 {
    let (n, d) = v.iter().zip(w.as_slice()).fold((0.0, 0.0), |(n, d), (x, wi)| (n + wi * x * x, d + wi));
    (n / d).sqrt()
}

/// 3x3 box mean over ocean neighbours, longitudes wrapping.
fn box_smooth(mask: &OceanMask, v: &[f64]) -> Vec<f64> {
    let g = mask.grid();
    let mut full = vec![f64::NAN; g.n_cells()];
    for (&cell, &x) in mask.points().iter().zip(v) {
        full[cell] = x;
    }
    (0..mask.ocean_count())
        .map(|p| {
            let (r, c) = mask.point_row_col(p);
            let (mut s, mut n) = (0.0, 0.0);
            for dr in -1i64..=1 {
                let rr = r as i64 + dr;
                if rr < 0 || rr >= g.n_lat as i64 {
                    continue;
                }
                for dc in -1i64..=1 {
                    let cc = (c as i64 + dc).rem_euclid(g.n_lon as i64) as usize;
                    let x = full[g.cell(rr as usize, cc)];
                    if x.is_finite() {
                        s += x;
                        n += 1.0;
                    }
                }
            }
            s / n
        })
        .collect()
}

fn enso_mode(lat: f64, lon: f64) -> f64 {
    let eq = (-(lat / 15.0).powi(2)).exp();
    eq * ((-((lon - 210.0) / 40.0).powi(2)).exp() - 0.5 * (-((lon - 140.0) / 25.0).powi(2)).exp())
}

struct SeriesParts<'a> {
    trend: &'a [f64],
    seasonal: &'a [f64],
    mode: &'a [f64],
    mode_amp: f64,
    noise: f64,
}

fn build_stack(mask: &OceanMask, window: TrendWindow, parts: &SeriesParts, rng: &mut ChaCha8Rng) -> Result<TimeSeriesStack> {
    let n_months = window.months();
    let t0 = f64::from(window.start_year);
    let tc = t0 + n_months as f64 / 24.0;
    let period = 4.0;
    let noise = Normal::new(0.0, parts.noise.max(0.0)).map_err(|e| Error::arg(e.to_string()))?;
    TimeSeriesStack::from_fn(mask.clone(), window.start_year, 1, n_months, |p, m| {
        let t = t0 + (m as f64 + 0.5) / 12.0;
        let season = (2.0 * PI * ((m % 12) as f64 + 0.5) / 12.0).cos();
        let osc = (2.0 * PI * (t - tc) / period).cos();
        let eps = if parts.noise > 0.0 { noise.sample(rng) } else { 0.0 };
        parts.trend[p] * (t - t0) + parts.seasonal[p] * season + parts.mode_amp * parts.mode[p] * osc + eps
    })
}

/// Writes the observation stack, `n_models` hindcast/projection pairs, the
/// planted trend fields, `manifest.json` and a desk-scale `config.json`.
pub fn gen_synth(spec: &SynthSpec, dir: &Path) -> Result<SynthManifest> {
    spec.validate()?;
    fs::create_dir_all(dir.join("models")).map_err(|e| Error::io(dir, e))?;
    let grid = Grid::global(spec.n_lon, spec.n_lat)?;
    let cells = (0..grid.n_cells())
        .map(|c| {
            let (r, col) = grid.row_col(c);
            !synthetic_land(grid.lat(r), grid.lon(col))
        })
        .collect();
    let mask = OceanMask::new(grid, cells)?;
    if mask.ocean_count() < 10 {
        return Err(Error::arg("grid too coarse: fewer than 10 ocean points"));
    }
    let w = area_weights(&mask);
    let n = mask.ocean_count();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth_patterns", 0));

    let p1 = smooth_pattern(&mask, &w, &mut rng)?;
    let p2 = smooth_pattern(&mask, &w, &mut rng)?;
    let rho = spec.persistence_corr;
    let past_pattern: Vec<f64> = p1.iter().map(|v| spec.pattern_rms * v).collect();
    let future_pattern: Vec<f64> =
        p1.iter().zip(&p2).map(|(a, b)| spec.pattern_rms * (rho * a + (1.0 - rho * rho).sqrt() * b)).collect();
    let truth_past: Vec<f64> = past_pattern.iter().map(|v| v + spec.gmsl_past).collect();
    let truth_future: Vec<f64> = future_pattern.iter().map(|v| v + spec.gmsl_future).collect();

    let lat_lon: Vec<(f64, f64)> = (0..n).map(|p| (mask.point_lat(p), mask.point_lon(p))).collect();
    let seasonal: Vec<f64> = lat_lon.iter().map(|&(lat, _)| 40.0 * lat.to_radians().sin()).collect();
    let mode: Vec<f64> = lat_lon.iter().map(|&(lat, lon)| enso_mode(lat, lon)).collect();
    let past = spec.past_window();
    let future = spec.future_window();

    let mut obs_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth_obs", 0));
    let obs = build_stack(
        &mask,
        past,
        &SeriesParts { trend: &truth_past, seasonal: &seasonal, mode: &mode, mode_amp: 60.0, noise: spec.obs_noise },
        &mut obs_rng,
    )?;
    let rel = |p: &str| PathBuf::from(p);
    let obs_path = rel("obs.grd1");
    write_stack(&obs, &dir.join(&obs_path))?;

    let smooth_past = box_smooth(&mask, &past_pattern);
    let smooth_future = box_smooth(&mask, &future_pattern);
    let target_rms = spec.variance_factor.sqrt() * weighted_rms(&past_pattern, &w);
    let mut models = Vec::with_capacity(spec.n_models);
    let mut model_paths = Vec::with_capacity(spec.n_models);
    for (i, name) in MODEL_NAMES.iter().take(spec.n_models).enumerate() {
        let mut brng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth_bias", i as u64));
        let bias = smooth_pattern(&mask, &w, &mut brng)?;
        let bias_scale = spec.model_bias * spec.pattern_rms;
        let mut hind: Vec<f64> = smooth_past.iter().zip(&bias).map(|(s, b)| s + bias_scale * b).collect();
        let mut proj: Vec<f64> = smooth_future.iter().zip(&bias).map(|(s, b)| s + bias_scale * b).collect();
        demean_in_place(&mut hind, &w)?;
        demean_in_place(&mut proj, &w)?;
        // One scale for both windows keeps the hindcast-to-projection relation intact.
        let c = target_rms / weighted_rms(&hind, &w);
        let rise = 0.8 + 0.1 * i as f64;
        let hind: Vec<f64> = hind.iter().map(|v| c * v + rise * spec.gmsl_past).collect();
        let proj: Vec<f64> = proj.iter().map(|v| c * v + rise * spec.gmsl_future).collect();
        let amp = 15.0 + 5.0 * i as f64;
        let mut mrng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth_model", i as u64));
        let parts = |trend| SeriesParts { trend, seasonal: &seasonal, mode: &mode, mode_amp: amp, noise: spec.model_noise };
        let h_stack = build_stack(&mask, past, &parts(&hind), &mut mrng)?;
        let p_stack = build_stack(&mask, future, &parts(&proj), &mut mrng)?;
        let hp = PathBuf::from("models").join(format!("{name}_hindcast.grd1"));
        let pp = PathBuf::from("models").join(format!("{name}_projection.grd1"));
        write_stack(&h_stack, &dir.join(&hp))?;
        write_stack(&p_stack, &dir.join(&pp))?;
        models.push((
            name.to_string(),
            FileRecord { sha256: sha256_file(&dir.join(&hp))?, path: hp.clone() },
            FileRecord { sha256: sha256_file(&dir.join(&pp))?, path: pp.clone() },
        ));
        model_paths.push(ModelPaths { name: name.to_string(), hindcast: hp, projection: pp });
    }

    let tp = rel("truth_past_trend.grd1");
    let tf = rel("truth_future_trend.grd1");
    write_field(&Field::from_ocean_values(&mask, &truth_past)?, &dir.join(&tp), past.start_year, 1)?;
    write_field(&Field::from_ocean_values(&mask, &truth_future)?, &dir.join(&tf), future.start_year, 1)?;

    let config = desk_config(model_paths, obs_path.clone(), past, future, Some(tf.clone()), spec.seed);
    let config_path = rel("config.json");
    config.save(&dir.join(&config_path))?;

    let manifest = SynthManifest {
        spec: spec.clone(),
        grid,
        ocean_points: n,
        past_window: past,
        future_window: future,
        observation: FileRecord { sha256: sha256_file(&dir.join(&obs_path))?, path: obs_path },
        models,
        truth_past: FileRecord { sha256: sha256_file(&dir.join(&tp))?, path: tp },
        truth_future: FileRecord { sha256: sha256_file(&dir.join(&tf))?, path: tf },
        config: config_path,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), text + "\n").map_err(|e| Error::io(dir, e))?;
    Ok(manifest)
}

/// Small networks and budgets sized for a 36 x 18 grid.
pub fn desk_config(
    models: Vec<ModelPaths>,
    observation: PathBuf,
    train_window: TrendWindow,
    predict_window: TrendWindow,
    truth_future: Option<PathBuf>,
    seed: u64,
) -> RunConfig {
    RunConfig {
        observation,
        models,
        train_window,
        predict_window,
        strategy: Strategy::Spectral { k: 4 },
        affinity: Default::default(),
        domain_boxes: Default::default(),
        architecture: ArchitecturePolicy {
            large_hidden: vec![32, 16],
            small_hidden: vec![16, 8],
            ..ArchitecturePolicy::default()
        },
        train: TrainConfig {
            epochs: 600,
            batch_size: 16,
            learning_rate: 3e-3,
            dropout: 0.1,
            // Desk clusters hold ~20 points; a validation split would leave one or two.
            validation_fraction: 0.0,
            ..TrainConfig::default()
        },
        mc_passes: 100,
        shap: ShapConfig { background: 50, max_points_per_cluster: Some(40), ..ShapConfig::default() },
        seed,
        out: PathBuf::from("out"),
        truth_future,
        sweep_ks: vec![2, 4, 8, 16],
        sweep_skip_loo: false,
    }
}

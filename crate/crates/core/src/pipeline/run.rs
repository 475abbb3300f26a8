//! End-to-end runs: load, trends, segmentation, training, forecast,
//! uncertainty, attribution, and the artifacts each stage writes.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{RunConfig, Strategy};
use super::grd1::{read_field, read_stack, write_field};
use super::heatmap::{write_label_ppm, write_pgm};
use super::model_io::{load_model, save_model};
use crate::error::{Error, Result, StageExt};
use crate::evalmetrics::{
    fmt_num, leave_one_out, rms_variability, spearman, weighted_pearson, LooDataset, LooTable, ScoreReport,
};
use crate::explain::{cluster_importance, explain_points, sample_background, ClusterImportance, ExplainOptions, PointAttribution, Sampling};
use crate::grid::{area_weights, demean_in_place, Field, LatWeights, OceanMask};
use crate::neuralnet::{fit_regional, RegionalModel};
use crate::rng::derive_seed;
use crate::segmentation::{domain_partition, spectral_cluster, write_partition_csv, Partition};
use crate::trend::{deseasonalize, trend_map, TimeSeriesStack, TrendMap};
use crate::uncertainty::{mc_dropout_regional, uncertainty_rms, UncertaintyMap};

pub struct ModelInputs {
    pub name: String,
    pub hindcast: TimeSeriesStack,
    pub projection: TimeSeriesStack,
}

/// All datasets restricted to the ocean points they have in common.
pub struct Inputs {
    pub mask: OceanMask,
    pub obs: TimeSeriesStack,
    pub models: Vec<ModelInputs>,
    /// `(file, sha256)` of every input read.
    pub hashes: Vec<(String, String)>,
}

fn sha256_of(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let mut hashes = Vec::new();
    let mut read = |p: &Path| -> Result<TimeSeriesStack> {
        let s = read_stack(p)?;
        let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
        hashes.push((name, sha256_of(p)?));
        Ok(s)
    };
    let obs = read(&cfg.observation)?;
    let mut raw = Vec::with_capacity(cfg.models.len());
    for m in &cfg.models {
        raw.push((m.name.clone(), read(&m.hindcast)?, read(&m.projection)?));
    }
    let mut mask = obs.mask().clone();
    for (_, h, p) in &raw {
        mask = mask.intersect(h.mask())?.intersect(p.mask())?;
    }
    if mask.ocean_count() == 0 {
        return Err(Error::Data("datasets share no ocean points".into()));
    }
    info!("{} shared ocean points", mask.ocean_count());
    let models = raw
        .into_iter()
        .map(|(name, h, p)| Ok(ModelInputs { name, hindcast: h.restrict(&mask)?, projection: p.restrict(&mask)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Inputs { obs: obs.restrict(&mask)?, mask, models, hashes })
}

/// Trends of the global-mean-removed monthly series.
pub struct Trends {
    pub weights: LatWeights,
    pub obs_past: TrendMap,
    pub hindcast: Vec<TrendMap>,
    pub projection: Vec<TrendMap>,
    /// Row-major `points x models` inputs for the training window.
    pub x_past: Vec<f64>,
    pub x_future: Vec<f64>,
}

impl Trends {
    pub fn n_features(&self) -> usize {
        self.hindcast.len()
    }
}

fn interleave(maps: &[TrendMap]) -> Vec<f64> {
    let m = maps.len();
    let n = maps[0].slope.len();
    let mut x = vec![0.0; n * m];
    for (f, t) in maps.iter().enumerate() {
        for (p, v) in t.slope.iter().enumerate() {
            x[p * m + f] = *v;
        }
    }
    x
}

pub fn compute_trends(inputs: &Inputs, cfg: &RunConfig) -> Result<Trends> {
    let fit = |s: &TimeSeriesStack, w| trend_map(&s.remove_global_mean()?, w);
    let obs_past = fit(&inputs.obs, cfg.train_window)?;
    let hindcast = inputs.models.iter().map(|m| fit(&m.hindcast, cfg.train_window)).collect::<Result<Vec<_>>>()?;
    let projection =
        inputs.models.iter().map(|m| fit(&m.projection, cfg.predict_window)).collect::<Result<Vec<_>>>()?;
    Ok(Trends {
        weights: area_weights(&inputs.mask),
        x_past: interleave(&hindcast),
        x_future: interleave(&projection),
        obs_past,
        hindcast,
        projection,
    })
}

/// Spectral features: the deseasonalized, global-mean-removed series over the training window.
fn spectral_features(stack: &TimeSeriesStack, cfg: &RunConfig) -> Result<(Vec<f64>, usize)> {
    let s = deseasonalize(&stack.remove_global_mean()?.slice_window(cfg.train_window)?)?;
    Ok((s.values().to_vec(), s.n_months()))
}

/// `features_from` is the stack whose series drive spectral clustering.
pub fn segment(features_from: &TimeSeriesStack, mask: &OceanMask, cfg: &RunConfig, seed: u64) -> Result<Partition> {
    match cfg.strategy {
        Strategy::None => Partition::single(mask.ocean_count()),
        Strategy::Spectral { k } => {
            let (f, d) = spectral_features(features_from, cfg)?;
            spectral_cluster(&f, d, k, seed, &cfg.affinity.options())
        }
        Strategy::Domain => domain_partition(mask, &cfg.domain_boxes),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Seeds {
    pub base: u64,
    pub segmentation: u64,
    pub training: u64,
    pub mc_dropout: u64,
    pub shap: u64,
    pub leave_one_out: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Seeds {
            base: seed,
            segmentation: derive_seed(seed, "segmentation", 0),
            training: derive_seed(seed, "regional", 0),
            mc_dropout: derive_seed(seed, "mc", 0),
            shap: derive_seed(seed, "shap", 0),
            leave_one_out: derive_seed(seed, "leave_one_out", 0),
        }
    }
}

pub fn train_stage(trends: &Trends, partition: &Partition, cfg: &RunConfig, seeds: &Seeds) -> Result<RegionalModel> {
    fit_regional(
        &trends.x_past,
        trends.n_features(),
        &trends.obs_past.slope,
        &trends.weights,
        partition,
        &cfg.architecture,
        &cfg.train,
        seeds.training,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct ForecastScores {
    /// Fit to the observed training-window trend.
    pub training: ScoreReport,
    pub future_rms: f64,
    pub obs_past_rms: f64,
    pub corr_with_past: f64,
    /// Against a known future trend, when configured.
    pub vs_truth: Option<ScoreReport>,
    pub persistence_vs_truth: Option<ScoreReport>,
}

pub struct Forecast {
    pub training_prediction: Vec<f64>,
    pub future_prediction: Vec<f64>,
    pub scores: ForecastScores,
}

/// Known future trend on the shared mask with its global mean removed.
pub fn load_truth(path: &Path, mask: &OceanMask, w: &LatWeights) -> Result<Vec<f64>> {
    let mut v = read_field(path)?.ocean_values(mask)?;
    demean_in_place(&mut v, w)?;
    Ok(v)
}

pub fn forecast_stage(model: &RegionalModel, trends: &Trends, truth: Option<&[f64]>) -> Result<Forecast> {
    let w = &trends.weights;
    let training_prediction = model.predict(&trends.x_past)?;
    let future_prediction = model.predict(&trends.x_future)?;
    let past = &trends.obs_past.slope;
    let (vs_truth, persistence_vs_truth) = match truth {
        Some(t) => (
            Some(ScoreReport::new("future_vs_truth", &future_prediction, t, w)?),
            Some(ScoreReport::new("persistence_vs_truth", past, t, w)?),
        ),
        None => (None, None),
    };
    let scores = ForecastScores {
        training: ScoreReport::new("training", &training_prediction, past, w)?,
        future_rms: rms_variability(&future_prediction, w)?,
        obs_past_rms: rms_variability(past, w)?,
        corr_with_past: weighted_pearson(&future_prediction, past, w)?,
        vs_truth,
        persistence_vs_truth,
    };
    Ok(Forecast { training_prediction, future_prediction, scores })
}

pub fn uncertainty_stage(model: &RegionalModel, trends: &Trends, cfg: &RunConfig, seeds: &Seeds) -> Result<(UncertaintyMap, f64)> {
    let u = mc_dropout_regional(model, &trends.x_future, cfg.mc_passes, seeds.mc_dropout)?;
    let rms = uncertainty_rms(&u, &trends.weights)?;
    Ok((u, rms))
}

pub struct Explanation {
    pub points: Vec<PointAttribution>,
    pub importance: Vec<ClusterImportance>,
}

/// Attributions of the future predictions; backgrounds come from each cluster's scaled training inputs.
pub fn explain_stage(model: &RegionalModel, trends: &Trends, cfg: &RunConfig, seeds: &Seeds) -> Result<Explanation> {
    let m = trends.n_features();
    let models = model.models();
    let backgrounds = (0..model.partition.k())
        .map(|c| {
            let members = model.partition.members(c);
            let mut rows = Vec::with_capacity(members.len() * m);
            for &p in &members {
                rows.extend_from_slice(&trends.x_past[p * m..(p + 1) * m]);
            }
            let scaled = models[c].scaler.transform_x(&rows)?;
            sample_background(&scaled, m, cfg.shap.background, derive_seed(seeds.shap, "background", c as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let sampling = match cfg.shap.samples {
        None => Sampling::Exact,
        Some(n) => Sampling::Samples { n, seed: derive_seed(seeds.shap, "coalitions", 0) },
    };
    let opts = ExplainOptions {
        sampling,
        max_points_per_cluster: cfg.shap.max_points_per_cluster,
        units: cfg.shap.importance_units(),
    };
    let points = explain_points(&models, &trends.x_future, &model.partition, &backgrounds, &opts)?;
    let importance = cluster_importance(&points, model.partition.k(), m);
    Ok(Explanation { points, importance })
}

fn loo_datasets(inputs: &Inputs, trends: &Trends) -> Vec<LooDataset> {
    inputs
        .models
        .iter()
        .zip(trends.hindcast.iter().zip(&trends.projection))
        .map(|(m, (h, p))| LooDataset { name: m.name.clone(), hindcast: h.clone(), projection: p.clone() })
        .collect()
}

/// Leave-one-out over the climate models; for spectral runs the held-out
/// model's hindcast series stand in for the observations when clustering.
pub fn loo_stage(inputs: &Inputs, trends: &Trends, cfg: &RunConfig, seeds: &Seeds) -> Result<LooTable> {
    let datasets = loo_datasets(inputs, trends);
    leave_one_out(
        &datasets,
        |d| segment(&inputs.models[d].hindcast, &inputs.mask, cfg, derive_seed(seeds.segmentation, "loo", d as u64)),
        &cfg.architecture,
        &cfg.train,
        seeds.leave_one_out,
    )
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    Ok(cfg.out.clone())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_point_field(mask: &OceanMask, values: &[f64], path: &Path, year: i32) -> Result<Field> {
    let f = Field::from_ocean_values(mask, values)?;
    write_field(&f, path, year, 1)?;
    Ok(f)
}

pub fn write_trends(inputs: &Inputs, trends: &Trends, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let tdir = dir.join("trends");
    fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, v: &[f64], year: i32| -> Result<()> {
        let p = tdir.join(name);
        write_point_field(&inputs.mask, v, &p, year)?;
        written.push(p);
        Ok(())
    };
    put("obs_past_trend.grd1".into(), &trends.obs_past.slope, cfg.train_window.start_year)?;
    for (m, (h, p)) in inputs.models.iter().zip(trends.hindcast.iter().zip(&trends.projection)) {
        put(format!("{}_hindcast_trend.grd1", m.name), &h.slope, cfg.train_window.start_year)?;
        put(format!("{}_projection_trend.grd1", m.name), &p.slope, cfg.predict_window.start_year)?;
    }
    let path = tdir.join("trend_rms.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["dataset", "window", "rms_variability"])?;
    w.write_record(["observation", "train", &fmt_num(rms_variability(&trends.obs_past.slope, &trends.weights)?)])?;
    for (m, (h, p)) in inputs.models.iter().zip(trends.hindcast.iter().zip(&trends.projection)) {
        w.write_record([m.name.as_str(), "train", &fmt_num(rms_variability(&h.slope, &trends.weights)?)])?;
        w.write_record([m.name.as_str(), "predict", &fmt_num(rms_variability(&p.slope, &trends.weights)?)])?;
    }
    finish(w, &path)?;
    written.push(path);
    Ok(written)
}

pub fn write_partition(mask: &OceanMask, partition: &Partition, dir: &Path) -> Result<()> {
    write_partition_csv(&dir.join("partition.csv"), mask, partition)?;
    let labels: Vec<f64> = partition.labels().iter().map(|&l| l as f64).collect();
    let f = write_point_field(mask, &labels, &dir.join("clusters.grd1"), 0)?;
    write_label_ppm(&f, &dir.join("clusters.ppm"), &format!("cluster labels, k = {}", partition.k()))
}

fn write_clusters_csv(model: &RegionalModel, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cluster", "n_points", "hidden", "epochs_run", "best_epoch"])?;
    for (c, fit) in model.clusters.iter().enumerate() {
        let hidden = fit.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-");
        w.write_record([c.to_string(), fit.n_points.to_string(), hidden, fit.epochs_run.to_string(), fit.best_epoch.to_string()])?;
    }
    finish(w, path)
}

pub fn write_forecast(mask: &OceanMask, trends: &Trends, fc: &Forecast, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let past_year = cfg.train_window.start_year;
    let fut_year = cfg.predict_window.start_year;
    write_point_field(mask, &fc.training_prediction, &dir.join("training_prediction.grd1"), past_year)?;
    let fut = write_point_field(mask, &fc.future_prediction, &dir.join("future_prediction.grd1"), fut_year)?;
    write_pgm(&fut, &dir.join("future_prediction.pgm"), "predicted future trend (mm/year)")?;
    let past = write_point_field(mask, &trends.obs_past.slope, &dir.join("obs_past_trend.grd1"), past_year)?;
    write_pgm(&past, &dir.join("obs_past_trend.pgm"), "observed past trend (mm/year)")?;

    let path = dir.join("scores.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["label", "rmse", "correlation", "rms_variability"])?;
    let s = &fc.scores;
    for r in [Some(&s.training), s.vs_truth.as_ref(), s.persistence_vs_truth.as_ref()].into_iter().flatten() {
        w.write_record([r.label.clone(), fmt_num(r.rmse), fmt_num(r.correlation), fmt_num(r.rms_variability)])?;
    }
    finish(w, &path)
}

pub fn write_uncertainty(mask: &OceanMask, u: &UncertaintyMap, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let year = cfg.predict_window.start_year;
    write_point_field(mask, &u.mean, &dir.join("mc_mean.grd1"), year)?;
    let std = write_point_field(mask, &u.std, &dir.join("mc_std.grd1"), year)?;
    write_pgm(&std, &dir.join("mc_std.pgm"), &format!("MC dropout std over {} passes (mm/year)", u.passes))?;
    Ok(())
}

pub fn write_explanation(mask: &OceanMask, names: &[String], ex: &Explanation, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join("shap_importance.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["cluster", "feature", "mean_abs_phi", "rank", "points_explained"])?;
    for ci in &ex.importance {
        for (rank, &f) in ci.ranking.iter().enumerate() {
            w.write_record([
                ci.cluster.to_string(),
                names[f].clone(),
                fmt_num(ci.mean_abs_phi[f]),
                (rank + 1).to_string(),
                ci.points_explained.to_string(),
            ])?;
        }
    }
    finish(w, &path)?;
    if cfg.shap.per_point_table {
        let path = dir.join("shap_points.csv");
        let mut w = csv_writer(&path)?;
        let mut header = vec!["point".to_string(), "lat_index".into(), "lon_index".into(), "cluster".into(), "phi0".into(), "fx".into()];
        header.extend(names.iter().map(|n| format!("phi_{n}")));
        w.write_record(&header)?;
        for pa in &ex.points {
            let (r, c) = mask.point_row_col(pa.point);
            let mut rec = vec![pa.point.to_string(), r.to_string(), c.to_string(), pa.cluster.to_string()];
            rec.push(fmt_num(pa.attribution.phi0));
            rec.push(fmt_num(pa.attribution.fx));
            rec.extend(pa.attribution.phi.iter().map(|&v| fmt_num(v)));
            w.write_record(&rec)?;
        }
        finish(w, &path)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Every modelling choice in effect, for the run manifest.
fn decisions(cfg: &RunConfig, model: &RegionalModel) -> serde_json::Value {
    json!({
        "normalization_order": "monthly global-mean removal, then OLS trend, then per-cluster min-max scaling",
        "area_weights": "cos(latitude)",
        "affinity": {
            "kernel": "gaussian on z-scored series",
            "sigma": cfg.affinity.sigma,
            "knn": cfg.affinity.knn,
            "features": "deseasonalized global-mean-removed observation series over the training window",
        },
        "domain_boxes": cfg.domain_boxes,
        "optimizer": {
            "name": "adam",
            "learning_rate": cfg.train.learning_rate,
            "beta1": cfg.train.beta1,
            "beta2": cfg.train.beta2,
            "epsilon": cfg.train.epsilon,
            "batch_size": cfg.train.batch_size,
            "epochs": cfg.train.epochs,
            "patience": cfg.train.patience,
            "validation_fraction": cfg.train.validation_fraction,
            "l2": cfg.train.l2,
            "dropout": cfg.train.dropout,
        },
        "architecture": cfg.architecture,
        "cluster_hidden": model.clusters.iter().map(|c| c.hidden.clone()).collect::<Vec<_>>(),
        "mc_dropout": { "passes": cfg.mc_passes, "std": "population (1/T)" },
        "shap": {
            "background": cfg.shap.background,
            "background_source": "cluster training inputs, scaled",
            "sampling": cfg.shap.samples.map_or("exact enumeration".to_string(), |n| format!("{n} sampled coalitions")),
            "aggregate": "mean |phi| per cluster",
            "units": cfg.shap.units,
            "explained_inputs": "projection-window trends",
        },
        "correlation": "weighted centered pearson",
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub strategy: String,
    pub k: usize,
    pub scores: ForecastScores,
    pub uncertainty_rms: f64,
    pub out: PathBuf,
    pub artifacts: Vec<String>,
}

/// The full pipeline with every artifact written under `cfg.out`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary> {
    let seeds = Seeds::from_base(cfg.seed);
    let dir = out_dir(cfg)?;
    info!("run: strategy {}", cfg.strategy.label());
    let inputs = load_inputs(cfg).stage("load")?;
    let trends = compute_trends(&inputs, cfg).stage("trends")?;
    write_trends(&inputs, &trends, cfg, &dir).stage("write trends")?;
    let partition = segment(&inputs.obs, &inputs.mask, cfg, seeds.segmentation).stage("segmentation")?;
    info!("segmentation: {} clusters, sizes {:?}", partition.k(), partition.sizes());
    write_partition(&inputs.mask, &partition, &dir).stage("write partition")?;
    let model = train_stage(&trends, &partition, cfg, &seeds).stage("training")?;
    save_model(&model, &inputs.mask, &dir.join("model.mdl")).stage("write model")?;
    write_clusters_csv(&model, &dir.join("clusters.csv")).stage("write model")?;
    let truth = match &cfg.truth_future {
        Some(p) => Some(load_truth(p, &inputs.mask, &trends.weights).stage("load truth")?),
        None => None,
    };
    let fc = forecast_stage(&model, &trends, truth.as_deref()).stage("prediction")?;
    write_forecast(&inputs.mask, &trends, &fc, cfg, &dir).stage("write prediction")?;
    let (u, u_rms) = uncertainty_stage(&model, &trends, cfg, &seeds).stage("uncertainty")?;
    write_uncertainty(&inputs.mask, &u, cfg, &dir).stage("write uncertainty")?;
    let names: Vec<String> = inputs.models.iter().map(|m| m.name.clone()).collect();
    if cfg.shap.enabled {
        let ex = explain_stage(&model, &trends, cfg, &seeds).stage("explain")?;
        write_explanation(&inputs.mask, &names, &ex, cfg, &dir).stage("write explanation")?;
    }

    let mut artifacts: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    artifacts.push("manifest.json".into());
    artifacts.sort();
    artifacts.dedup();
    let manifest = json!({
        "config": cfg,
        "strategy": cfg.strategy.label(),
        "seeds": seeds,
        "ocean_points": inputs.mask.ocean_count(),
        "datasets": inputs.hashes.iter().map(|(f, h)| json!({"file": f, "sha256": h})).collect::<Vec<_>>(),
        "cluster_sizes": partition.sizes(),
        "decisions": decisions(cfg, &model),
        "scores": fc.scores,
        "uncertainty_rms": u_rms,
        "artifacts": artifacts,
    });
    write_json(&dir.join("manifest.json"), &manifest).stage("write manifest")?;
    Ok(RunSummary {
        strategy: cfg.strategy.label(),
        k: partition.k(),
        scores: fc.scores,
        uncertainty_rms: u_rms,
        out: dir,
        artifacts,
    })
}

pub fn cmd_trends(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = out_dir(cfg)?;
    let inputs = load_inputs(cfg).stage("load")?;
    let trends = compute_trends(&inputs, cfg).stage("trends")?;
    write_trends(&inputs, &trends, cfg, &dir).stage("write trends")
}

pub fn cmd_cluster(cfg: &RunConfig) -> Result<Partition> {
    let dir = out_dir(cfg)?;
    let inputs = load_inputs(cfg).stage("load")?;
    let p = segment(&inputs.obs, &inputs.mask, cfg, Seeds::from_base(cfg.seed).segmentation).stage("segmentation")?;
    write_partition(&inputs.mask, &p, &dir).stage("write partition")?;
    Ok(p)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<RegionalModel> {
    let seeds = Seeds::from_base(cfg.seed);
    let dir = out_dir(cfg)?;
    let inputs = load_inputs(cfg).stage("load")?;
    let trends = compute_trends(&inputs, cfg).stage("trends")?;
    let partition = segment(&inputs.obs, &inputs.mask, cfg, seeds.segmentation).stage("segmentation")?;
    write_partition(&inputs.mask, &partition, &dir).stage("write partition")?;
    let model = train_stage(&trends, &partition, cfg, &seeds).stage("training")?;
    save_model(&model, &inputs.mask, &dir.join("model.mdl")).stage("write model")?;
    write_clusters_csv(&model, &dir.join("clusters.csv")).stage("write model")?;
    Ok(model)
}

/// Inputs, trends and the model saved by `cmd_train` in `cfg.out`.
fn with_saved_model(cfg: &RunConfig) -> Result<(Inputs, Trends, RegionalModel, PathBuf)> {
    let dir = out_dir(cfg)?;
    let inputs = load_inputs(cfg).stage("load")?;
    let trends = compute_trends(&inputs, cfg).stage("trends")?;
    let path = dir.join("model.mdl");
    if !path.exists() {
        return Err(Error::arg(format!("no trained model at {}; run `train` first", path.display())));
    }
    let (model, mask) = load_model(&path).stage("load model")?;
    if mask != inputs.mask {
        return Err(Error::Data("saved model was trained on a different ocean mask".into()));
    }
    Ok((inputs, trends, model, dir))
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<ForecastScores> {
    let (inputs, trends, model, dir) = with_saved_model(cfg)?;
    let truth = match &cfg.truth_future {
        Some(p) => Some(load_truth(p, &inputs.mask, &trends.weights).stage("load truth")?),
        None => None,
    };
    let fc = forecast_stage(&model, &trends, truth.as_deref()).stage("prediction")?;
    write_forecast(&inputs.mask, &trends, &fc, cfg, &dir).stage("write prediction")?;
    Ok(fc.scores)
}

pub fn cmd_uncertainty(cfg: &RunConfig) -> Result<f64> {
    let (inputs, trends, model, dir) = with_saved_model(cfg)?;
    let (u, rms) = uncertainty_stage(&model, &trends, cfg, &Seeds::from_base(cfg.seed)).stage("uncertainty")?;
    write_uncertainty(&inputs.mask, &u, cfg, &dir).stage("write uncertainty")?;
    Ok(rms)
}

pub fn cmd_explain(cfg: &RunConfig) -> Result<Vec<ClusterImportance>> {
    let (inputs, trends, model, dir) = with_saved_model(cfg)?;
    let ex = explain_stage(&model, &trends, cfg, &Seeds::from_base(cfg.seed)).stage("explain")?;
    let names: Vec<String> = inputs.models.iter().map(|m| m.name.clone()).collect();
    write_explanation(&inputs.mask, &names, &ex, cfg, &dir).stage("write explanation")?;
    Ok(ex.importance)
}

pub fn cmd_eval_loo(cfg: &RunConfig) -> Result<LooTable> {
    let dir = out_dir(cfg)?;
    let inputs = load_inputs(cfg).stage("load")?;
    let trends = compute_trends(&inputs, cfg).stage("trends")?;
    let table = loo_stage(&inputs, &trends, cfg, &Seeds::from_base(cfg.seed)).stage("leave-one-out")?;
    let name = format!("loo_{}.csv", cfg.strategy.label());
    table.write_csv(&dir.join(name)).stage("write leave-one-out")?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub training_rmse: f64,
    pub future_rms: f64,
    pub uncertainty_rms: f64,
    pub corr_with_past: f64,
    pub loo_mean_correlation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Rank correlation of k with training RMSE (needs at least 2 rows).
    pub spearman_k_training_rmse: Option<f64>,
}

/// Spectral runs over `cfg.sweep_ks`, written to `sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    let dir = out_dir(cfg)?;
    let seeds = Seeds::from_base(cfg.seed);
    let inputs = load_inputs(cfg).stage("load")?;
    let trends = compute_trends(&inputs, cfg).stage("trends")?;
    let mut rows = Vec::with_capacity(cfg.sweep_ks.len());
    for &k in &cfg.sweep_ks {
        info!("sweep: k = {k}");
        let kcfg = RunConfig { strategy: Strategy::Spectral { k }, ..cfg.clone() };
        let partition = segment(&inputs.obs, &inputs.mask, &kcfg, seeds.segmentation).stage("segmentation")?;
        let model = train_stage(&trends, &partition, &kcfg, &seeds).stage("training")?;
        let fc = forecast_stage(&model, &trends, None).stage("prediction")?;
        let (_, u_rms) = uncertainty_stage(&model, &trends, &kcfg, &seeds).stage("uncertainty")?;
        let loo = if cfg.sweep_skip_loo {
            None
        } else {
            Some(loo_stage(&inputs, &trends, &kcfg, &seeds).stage("leave-one-out")?.average_ml().correlation)
        };
        rows.push(SweepRow {
            k,
            training_rmse: fc.scores.training.rmse,
            future_rms: fc.scores.future_rms,
            uncertainty_rms: u_rms,
            corr_with_past: fc.scores.corr_with_past,
            loo_mean_correlation: loo,
        });
    }
    let path = dir.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["k", "training_rmse", "future_rms", "uncertainty_rms", "corr_with_past", "loo_mean_correlation"])?;
    for r in &rows {
        w.write_record([
            r.k.to_string(),
            fmt_num(r.training_rmse),
            fmt_num(r.future_rms),
            fmt_num(r.uncertainty_rms),
            fmt_num(r.corr_with_past),
            r.loo_mean_correlation.map_or_else(String::new, fmt_num),
        ])?;
    }
    finish(w, &path)?;
    let spearman_k_training_rmse = if rows.len() >= 2 {
        let ks: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
        let rmse: Vec<f64> = rows.iter().map(|r| r.training_rmse).collect();
        spearman(&ks, &rmse).ok()
    } else {
        None
    };
    Ok(SweepReport { rows, spearman_k_training_rmse })
}

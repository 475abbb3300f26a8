use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use seatrend::evalmetrics::fmt_num;
use seatrend::pipeline::{self, RunConfig, Strategy, SynthSpec};

#[derive(Parser)]
#[command(name = "seatrend", version, about = "Regional sea-level trend prediction from climate-model ensembles")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic dataset directory with a ready-to-run config.json.
    GenSynth(SynthArgs),
    /// Trend maps of every input.
    Trends(RunArgs),
    /// Segment the ocean and write partition.csv.
    Cluster(RunArgs),
    /// Train the per-cluster networks and save model.mdl.
    Train(RunArgs),
    /// Predict the future trend with a saved model.
    Predict(RunArgs),
    /// MC dropout spread of the future prediction with a saved model.
    Uncertainty(RunArgs),
    /// Per-cluster Shapley feature rankings with a saved model.
    Explain(RunArgs),
    /// Leave-one-out evaluation over the climate models.
    EvalLoo(RunArgs),
    /// Spectral runs over several cluster counts.
    Sweep(RunArgs),
    /// The whole pipeline.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synth")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 36)]
    n_lon: usize,
    #[arg(long, default_value_t = 18)]
    n_lat: usize,
    /// Months per window, a multiple of 12.
    #[arg(long, default_value_t = 72)]
    months: usize,
    #[arg(long, default_value_t = 6)]
    models: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    None,
    Spectral,
    Domain,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Cluster count; comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
}

impl RunArgs {
    fn config(&self, sweep: bool) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if sweep {
            if !self.k.is_empty() {
                cfg.sweep_ks = self.k.clone();
            }
        } else {
            if self.k.len() > 1 {
                bail!("--k takes a single value outside `sweep`");
            }
            let k = self.k.first().copied();
            cfg.strategy = match (self.strategy, k) {
                (Some(StrategyArg::None), None) => Strategy::None,
                (Some(StrategyArg::Domain), None) => Strategy::Domain,
                (Some(StrategyArg::None | StrategyArg::Domain), Some(_)) => bail!("--k only applies to the spectral strategy"),
                (Some(StrategyArg::Spectral) | None, Some(k)) => Strategy::Spectral { k },
                (Some(StrategyArg::Spectral), None) => match cfg.strategy {
                    Strategy::Spectral { k } => Strategy::Spectral { k },
                    _ => bail!("--strategy spectral needs --k"),
                },
                (None, None) => cfg.strategy,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.cmd {
        Cmd::GenSynth(a) => {
            let spec = SynthSpec {
                n_lon: a.n_lon,
                n_lat: a.n_lat,
                n_models: a.models,
                months: a.months,
                seed: a.seed,
                ..SynthSpec::default()
            };
            let man = pipeline::gen_synth(&spec, &a.out)?;
            println!("wrote {} ({} ocean points, {} models)", show(&a.out), man.ocean_points, man.models.len());
            println!("config: {}", show(&a.out.join(&man.config)));
        }
        Cmd::Trends(a) => {
            let files = pipeline::cmd_trends(&a.config(false)?)?;
            println!("wrote {} trend files", files.len());
        }
        Cmd::Cluster(a) => {
            let p = pipeline::cmd_cluster(&a.config(false)?)?;
            println!("k = {}, sizes {:?}", p.k(), p.sizes());
        }
        Cmd::Train(a) => {
            let cfg = a.config(false)?;
            let m = pipeline::cmd_train(&cfg)?;
            for (c, fit) in m.clusters.iter().enumerate() {
                println!("cluster {c}: {} points, hidden {:?}, best epoch {}", fit.n_points, fit.hidden, fit.best_epoch);
            }
            println!("model: {}", show(&cfg.out.join("model.mdl")));
        }
        Cmd::Predict(a) => {
            let s = pipeline::cmd_predict(&a.config(false)?)?;
            println!("training rmse {} corr {}", fmt_num(s.training.rmse), fmt_num(s.training.correlation));
            println!("future rms {}  corr with past {}", fmt_num(s.future_rms), fmt_num(s.corr_with_past));
            if let (Some(ml), Some(pe)) = (&s.vs_truth, &s.persistence_vs_truth) {
                println!("vs truth: ml rmse {}  persistence rmse {}", fmt_num(ml.rmse), fmt_num(pe.rmse));
            }
        }
        Cmd::Uncertainty(a) => {
            let rms = pipeline::cmd_uncertainty(&a.config(false)?)?;
            println!("uncertainty rms {}", fmt_num(rms));
        }
        Cmd::Explain(a) => {
            for ci in pipeline::cmd_explain(&a.config(false)?)? {
                println!("cluster {}: ranking {:?} over {} points", ci.cluster, ci.ranking, ci.points_explained);
            }
        }
        Cmd::EvalLoo(a) => {
            let t = pipeline::cmd_eval_loo(&a.config(false)?)?;
            for r in &t.rows {
                println!("{}: ml corr {}  persistence corr {}", r.name, fmt_num(r.ml.correlation), fmt_num(r.persistence.correlation));
            }
            println!("average ml corr {}", fmt_num(t.average_ml().correlation));
        }
        Cmd::Sweep(a) => {
            let rep = pipeline::cmd_sweep(&a.config(true)?)?;
            for r in &rep.rows {
                println!(
                    "k={} training_rmse={} future_rms={} uncertainty_rms={} corr_with_past={} loo_corr={}",
                    r.k,
                    fmt_num(r.training_rmse),
                    fmt_num(r.future_rms),
                    fmt_num(r.uncertainty_rms),
                    fmt_num(r.corr_with_past),
                    r.loo_mean_correlation.map_or_else(|| "-".into(), fmt_num)
                );
            }
            if let Some(s) = rep.spearman_k_training_rmse {
                println!("spearman(k, training rmse) = {}", fmt_num(s));
            }
        }
        Cmd::Run(a) => {
            let s = pipeline::cmd_run(&a.config(false)?)?;
            info!("{} artifacts", s.artifacts.len());
            println!("strategy {} (k = {})", s.strategy, s.k);
            println!("training rmse {}", fmt_num(s.scores.training.rmse));
            println!("future rms {}  uncertainty rms {}", fmt_num(s.scores.future_rms), fmt_num(s.uncertainty_rms));
            println!("outputs in {}", show(&s.out));
        }
    }
    Ok(())
}

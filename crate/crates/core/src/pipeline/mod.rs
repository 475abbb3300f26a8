//! File formats, configuration, synthetic data and the end-to-end commands.

pub mod config;
pub mod grd1;
pub mod heatmap;
pub mod model_io;
pub mod run;
pub mod synth;

pub use config::{ModelPaths, RunConfig, ShapConfig, Strategy};
pub use grd1::{read_field, read_grd1, read_stack, write_field, write_grd1, write_stack, Grd1Data, Grd1Header, Grd1Raw};
pub use run::{
    cmd_cluster, cmd_eval_loo, cmd_explain, cmd_predict, cmd_run, cmd_sweep, cmd_train, cmd_trends, cmd_uncertainty,
    RunSummary, SweepReport, SweepRow,
};
pub use synth::{gen_synth, SynthManifest, SynthSpec};

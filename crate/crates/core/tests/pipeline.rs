use std::fs;
use std::path::{Path, PathBuf};

use seatrend::grid::OceanMask;
use seatrend::pipeline::grd1::read_field;
use seatrend::pipeline::heatmap::read_pgm;
use seatrend::pipeline::{
    cmd_cluster, cmd_explain, cmd_predict, cmd_run, cmd_train, cmd_uncertainty, gen_synth, RunConfig, Strategy, SynthSpec,
};
use seatrend::segmentation::read_partition_csv;

fn synth(dir: &Path) -> RunConfig {
    gen_synth(&SynthSpec::default(), dir).unwrap();
    RunConfig::load(&dir.join("config.json")).unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let fa = files_under(a);
    let fb = files_under(b);
    let rel = |v: &[PathBuf], root: &Path| v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect::<Vec<_>>();
    assert_eq!(rel(&fa, a), rel(&fb, b));
    for (x, y) in fa.iter().zip(&fb) {
        let (bx, by) = (fs::read(x).unwrap(), fs::read(y).unwrap());
        if x.file_name().unwrap() == "manifest.json" {
            // Only the output path may differ.
            let strip = |s: Vec<u8>, root: &Path| String::from_utf8(s).unwrap().replace(&root.display().to_string(), "<out>");
            assert_eq!(strip(bx, a), strip(by, b), "{}", x.display());
        } else {
            assert!(bx == by, "{} differs", x.display());
        }
    }
}

#[test]
fn runs_are_byte_reproducible_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let base = synth(tmp.path());
    let a = RunConfig { out: tmp.path().join("a"), ..base.clone() };
    let b = RunConfig { out: tmp.path().join("b"), ..base.clone() };
    let c = RunConfig { out: tmp.path().join("c"), ..base };
    cmd_run(&a).unwrap();
    cmd_run(&b).unwrap();
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| cmd_run(&c).unwrap());
    assert_same_tree(&a.out, &b.out);
    assert_same_tree(&a.out, &c.out);
}

#[test]
fn manifest_records_design_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { out: tmp.path().join("out"), ..synth(tmp.path()) };
    cmd_run(&cfg).unwrap();
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(cfg.out.join("manifest.json")).unwrap()).unwrap();
    let d = &m["decisions"];
    assert_eq!(d["affinity"]["sigma"], "median");
    assert_eq!(d["optimizer"]["name"], "adam");
    assert_eq!(d["mc_dropout"]["passes"], 100);
    assert_eq!(d["shap"]["background"], 50);
    assert!(d["domain_boxes"]["north_atlantic"].is_object());
    assert!(d["normalization_order"].as_str().unwrap().starts_with("monthly global-mean removal"));
    assert_eq!(m["datasets"].as_array().unwrap().len(), 13);
    assert!(m["seeds"]["training"].is_u64());
    let listed: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in &listed {
        assert!(cfg.out.join(f).is_file(), "{f}");
    }
}

#[test]
fn subcommands_match_the_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let base = synth(tmp.path());
    let full = RunConfig { out: tmp.path().join("full"), ..base.clone() };
    let staged = RunConfig { out: tmp.path().join("staged"), ..base };
    cmd_run(&full).unwrap();
    let p = cmd_cluster(&staged).unwrap();
    let model = cmd_train(&staged).unwrap();
    assert_eq!(model.partition.labels(), p.labels());
    cmd_predict(&staged).unwrap();
    cmd_uncertainty(&staged).unwrap();
    cmd_explain(&staged).unwrap();
    for f in [
        "partition.csv",
        "model.mdl",
        "future_prediction.grd1",
        "training_prediction.grd1",
        "scores.csv",
        "mc_std.grd1",
        "mc_mean.grd1",
        "shap_importance.csv",
    ] {
        assert!(fs::read(full.out.join(f)).unwrap() == fs::read(staged.out.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn saved_partition_and_heatmap_read_back() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig { strategy: Strategy::Domain, out: tmp.path().join("out"), ..synth(tmp.path()) };
    let s = cmd_run(&cfg).unwrap();
    assert_eq!(s.k, 4);
    let fut = read_field(&cfg.out.join("future_prediction.grd1")).unwrap();
    let mask = OceanMask::from_field(&fut);
    let p = read_partition_csv(&cfg.out.join("partition.csv"), &mask).unwrap();
    assert_eq!(p.k(), 4);

    let (scale, w, h, pix) = read_pgm(&cfg.out.join("future_prediction.pgm")).unwrap();
    assert_eq!((w, h), (fut.grid.n_lon, fut.grid.n_lat));
    for row in 0..h {
        for col in 0..w {
            // Image rows run north to south.
            let v = fut.values[fut.grid.cell(h - 1 - row, col)];
            let g = pix[row * w + col];
            match scale.dequantize(g) {
                None => assert!(v.is_nan()),
                Some(back) => assert!((back - v).abs() <= scale.step() + 1e-12, "{back} vs {v}"),
            }
        }
    }
}

#[test]
fn errors_name_the_failing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig { out: tmp.path().join("out"), ..synth(tmp.path()) };
    cfg.observation = tmp.path().join("missing.grd1");
    let msg = cmd_run(&cfg).unwrap_err().to_string();
    assert!(msg.starts_with("load:"), "{msg}");
    assert!(msg.contains("missing.grd1"), "{msg}");

    let fresh = RunConfig { out: tmp.path().join("untrained"), ..synth(tmp.path()) };
    let msg = cmd_predict(&fresh).unwrap_err().to_string();
    assert!(msg.contains("run `train` first"), "{msg}");
}

use std::path::Path;
use std::process::{Command, Output};

fn seatrend(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seatrend"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn gen_synth_then_every_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&seatrend(&["gen-synth", "--out", "data", "--seed", "3"], dir));
    assert!(dir.join("data/config.json").is_file());
    let cfg = "data/config.json";

    let out = ok(&seatrend(&["--threads", "2", "run", "--config", cfg, "--strategy", "domain", "--out", "run_dom"], dir));
    assert!(out.contains("strategy domain (k = 4)"), "{out}");
    for f in ["manifest.json", "future_prediction.grd1", "mc_std.pgm", "clusters.ppm", "shap_importance.csv"] {
        assert!(dir.join("run_dom").join(f).is_file(), "{f}");
    }

    let staged = ["--config", cfg, "--k", "2", "--out", "staged"];
    ok(&seatrend(&[&["trends"][..], &staged].concat(), dir));
    assert!(dir.join("staged/trends/trend_rms.csv").is_file());
    assert!(ok(&seatrend(&[&["cluster"][..], &staged].concat(), dir)).starts_with("k = 2"));
    ok(&seatrend(&[&["train"][..], &staged].concat(), dir));
    assert!(ok(&seatrend(&[&["predict"][..], &staged].concat(), dir)).contains("persistence rmse"));
    assert!(ok(&seatrend(&[&["uncertainty"][..], &staged].concat(), dir)).starts_with("uncertainty rms"));
    assert!(ok(&seatrend(&[&["explain"][..], &staged].concat(), dir)).contains("ranking"));
    let loo = ok(&seatrend(&[&["eval-loo"][..], &staged].concat(), dir));
    assert!(loo.contains("average ml corr"), "{loo}");
    assert!(dir.join("staged/loo_spectral_k2.csv").is_file());

    let sweep = ok(&seatrend(&["sweep", "--config", cfg, "--k", "1,2", "--out", "sweep"], dir));
    assert_eq!(sweep.lines().filter(|l| l.starts_with("k=")).count(), 2);
    let csv = std::fs::read_to_string(dir.join("sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&seatrend(&["gen-synth", "--out", "d"], dir));
    let out = seatrend(&["run", "--config", "d/config.json", "--strategy", "none", "--k", "3"], dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--k only applies"));
    let out = seatrend(&["predict", "--config", "d/config.json", "--out", "nothing"], dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `train` first"));
    let out = seatrend(&["gen-synth", "--out", "bad", "--months", "30"], dir);
    assert!(!out.status.success());
}

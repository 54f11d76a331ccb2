//! CLI behavior: exit codes, the documented subcommand flow, and full-run
//! byte determinism (acceptance criterion 8).

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_eta-fuse"))
}

fn write_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let data = dir.join("data");
    let out = dir.join("out");
    let text = format!(
        "\
seed = {seed}
trips_path = {data}/trips.txt
nextlinks_path = {data}/nextlinks.txt
weather_path = {data}/weather.txt
out_dir = {out}
cutoff_date = 2020-08-22
synth.n_links = 80
synth.n_drivers = 12
synth.n_trips = 150
synth.noise_sd = 0.05
nn.epochs = 1
nn.batch_size = 32
nn.mlp_widths = 16
skipgram.dim = 4
skipgram.epochs = 1
nn1.embed_dim = 9
nn1.truncation = front
nn2.embed_dim = 9
nn2.truncation = back
gbdt1.n_trees = 15
gbdt1.max_depth = 3
gbdt1.min_samples_leaf = 5
gbdt2.n_trees = 10
gbdt2.max_depth = 2
gbdt2.min_samples_leaf = 5
",
        data = data.display(),
        out = out.display(),
    );
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_ok(cfg: &Path, subcommand: &str) -> Output {
    let out = bin()
        .arg(subcommand)
        .arg("--config")
        .arg(cfg)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "`{subcommand}` failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const FULL_FLOW: [&str; 7] = [
    "synth",
    "featurize",
    "train-nn",
    "train-gbdt",
    "fit-ensemble",
    "predict",
    "evaluate",
];

/// Every file under `root`, as (relative path, bytes), sorted.
fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let out = bin().arg("synth").arg("--frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "no usage text in: {stderr}");
}

#[test]
fn missing_config_flag_exits_1() {
    let out = bin().arg("synth").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn missing_input_path_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 1);
    // no synth ran, so the trips file does not exist
    let out = bin()
        .arg("featurize")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("trips.txt"), "path missing from: {stderr}");
}

#[test]
fn invalid_config_value_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "synth.n_trips = many\n").unwrap();
    let out = bin()
        .arg("synth")
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_0() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("eta-fuse"));
}

#[test]
fn documented_example_flow_produces_metrics_with_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 5);
    for sub in ["synth", "featurize", "train-gbdt", "evaluate"] {
        run_ok(&cfg, sub);
    }
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(metrics.starts_with("component,mape,mae"));
    assert!(metrics.contains("baseline_simple_eta,"));
    assert!(metrics.contains("gbdt_1,"));
    // featurize trained the transfer-source model on the way
    assert!(dir.path().join("out/models/nn_d9_front.model").exists());
    assert!(dir.path().join("out/report.txt").exists());
}

#[test]
fn criterion_8_full_pipeline_byte_determinism() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let cfg_a = write_config(dir_a.path(), 21);
    let cfg_b = write_config(dir_b.path(), 21);

    for sub in FULL_FLOW {
        run_ok(&cfg_a, sub);
    }
    for sub in FULL_FLOW {
        run_ok(&cfg_b, sub);
    }

    for sub in ["data", "out"] {
        let a = snapshot(&dir_a.path().join(sub));
        let b = snapshot(&dir_b.path().join(sub));
        assert!(!a.is_empty());
        assert_eq!(
            a.iter().map(|(p, _)| p).collect::<Vec<_>>(),
            b.iter().map(|(p, _)| p).collect::<Vec<_>>(),
            "file sets differ under {sub}/"
        );
        for ((path_a, bytes_a), (_, bytes_b)) in a.iter().zip(&b) {
            assert_eq!(
                bytes_a, bytes_b,
                "criterion 8: `{sub}/{path_a}` differs between identical runs"
            );
        }
    }

    // running evaluate again over the same artifacts is also byte-stable
    let before = std::fs::read(dir_a.path().join("out/metrics.csv")).unwrap();
    run_ok(&cfg_a, "evaluate");
    let after = std::fs::read(dir_a.path().join("out/metrics.csv")).unwrap();
    assert_eq!(before, after);
    println!("criterion 8 (pipeline determinism): PASS");
}

#[test]
fn fused_predictions_and_weights_exist_after_full_flow() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 9);
    for sub in FULL_FLOW {
        run_ok(&cfg, sub);
    }
    let out = dir.path().join("out");
    assert!(out.join("weights.json").exists());
    assert!(out.join("preds/val_ensemble.csv").exists());

    // per-epoch / per-iteration training logs
    let nn_log = std::fs::read_to_string(out.join("logs/nn_d9_front_log.csv")).unwrap();
    assert!(nn_log.starts_with("epoch,train_mape,val_mape"));
    assert_eq!(nn_log.lines().count(), 2); // header + 1 epoch
    let gb_log = std::fs::read_to_string(out.join("logs/gbdt_1_log.csv")).unwrap();
    assert!(gb_log.starts_with("iteration,train_mae"));
    assert_eq!(gb_log.lines().count(), 16); // header + 15 iterations
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    for component in [
        "baseline_simple_eta",
        "gbdt_1",
        "gbdt_2",
        "nn_d9_front",
        "nn_d9_back",
        "ensemble",
    ] {
        assert!(
            metrics
                .lines()
                .any(|l| l.starts_with(&format!("{component},"))),
            "metrics missing {component}: {metrics}"
        );
    }

    // --out override redirects artifacts
    let alt = dir.path().join("alt_out");
    let out2 = bin()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&alt)
        .output()
        .unwrap();
    // evaluate in a fresh dir has no index yet: that is an I/O failure (2)
    assert_eq!(out2.status.code(), Some(2));
}

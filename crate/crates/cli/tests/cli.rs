use assert_cmd::Command;

const TINY: &str = r#"
seed = 3
[data]
per_class = 5
snr_grid = [10.0]
[model]
stage_channels = [4, 8]
stage_depths = [1, 1]
head_width = 8
[train]
epochs = 1
batch_size = 8
[fed]
clients = 2
clients_per_round = 2
rounds = 2
"#;

fn lsnet() -> Command {
    let mut c = Command::cargo_bin("lsnet").unwrap();
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn gen_data_writes_windows_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    lsnet()
        .args([
            "gen-data",
            "--classes",
            "DJI,Noise",
            "--per-class",
            "3",
            "--snr-min",
            "-10",
        ])
        .args(["--snr-max", "0", "--snr-step", "10", "--seed", "1", "--out"])
        .arg(&out)
        .assert()
        .success();
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(sidecar["entries"].as_array().unwrap().len(), 6);
    let first = &sidecar["entries"][0];
    let bytes = std::fs::metadata(out.join(first["file"].as_str().unwrap()))
        .unwrap()
        .len();
    assert_eq!(bytes, 16_384 * 8);
}

#[test]
fn central_then_report_then_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    lsnet()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&run)
        .arg("train-central")
        .assert()
        .success();
    for f in [
        "metrics.csv",
        "run.json",
        "config.toml",
        "model.ckpt",
        "scores.csv",
        "confusion.csv",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    lsnet().args(["report"]).arg(&run).assert().success();
    assert!(run.join("report/summary.csv").exists());

    let again = dir.path().join("again");
    lsnet()
        .arg("rerun")
        .arg(run.join("run.json"))
        .arg("--out")
        .arg(&again)
        .assert()
        .success();
    assert_eq!(
        std::fs::read(run.join("metrics.csv")).unwrap(),
        std::fs::read(again.join("metrics.csv")).unwrap()
    );

    let eval = dir.path().join("eval");
    lsnet()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&eval)
        .arg("eval")
        .arg("--checkpoint")
        .arg(run.join("model.ckpt"))
        .assert()
        .success();
    assert!(eval.join("metrics.csv").exists());
}

#[test]
fn federated_participation_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("fed");
    lsnet()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["train-fed", "--per-round", "1,2"])
        .assert()
        .success();
    assert!(out.join("m1/rounds.jsonl").exists());
    assert!(out.join("m2/rounds.jsonl").exists());
    lsnet().arg("report").arg(&out).assert().success();
    assert!(out.join("report/accuracy_vs_round.svg").exists());
}

#[test]
fn failures_exit_nonzero_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[classes]\nknown = [\"DJI\", \"Noise\"]\nunknown = [\"Noise\"]\n").unwrap();
    let out = lsnet()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("r"))
        .arg("train-central")
        .assert()
        .code(2)
        .get_output()
        .clone();
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));

    lsnet().arg("report").arg(dir.path().join("empty")).assert().code(9);
    lsnet().args(["gen-data", "--classes", "Spektrum"]).assert().failure();
}

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[data.synthetic]
family = "copula_esn"
series_ids = ["A", "B"]
t_len = 1200
seed = 5
short_lags = [1, 2]

[data.synthetic.reservoir]
n_h = 10

[schedule]
train_window = "600 steps"
refit_cadence = "200 steps"
origin_cadence = 4
horizon = 4
max_origins = 40

[features]
short_lags = [1, 2]
long_lags = []

[reservoir]
n_h = 10

[models]
families = ["copula", "gaussian"]
k = 2
n_iter = 300
n_burn = 100

[simulation]
n_path = 50
"#;

fn deepcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepcast"))
        .current_dir(dir)
        .env("DEEPCAST_WORKERS", "1")
        .args(args)
        .output()
        .unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("no stderr");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepcast(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "fit",
        "forecast",
        "backtest",
        "score",
        "synth",
        "calibration",
        "audit",
        "template",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from usage");
    }
}

#[test]
fn synth_backtest_score() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let ok = |args: &[&str]| {
        let out = deepcast(d, args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    ok(&["synth", "-c", "tiny.toml", "-o", "panel.csv"]);
    ok(&["backtest", "-c", "tiny.toml", "--panel", "panel.csv", "-o", "bt"]);
    for f in [
        "forecasts.csv",
        "scores.csv",
        "scores.json",
        "dm.csv",
        "calibration.csv",
        "summary_system.csv",
        "manifest.json",
        "audit.json",
    ] {
        assert!(d.join("bt").join(f).exists(), "{f} not written");
    }
    ok(&[
        "score",
        "-c",
        "tiny.toml",
        "--panel",
        "panel.csv",
        "--forecasts",
        "bt/forecasts.csv",
        "-o",
        "sc",
    ]);
    let a = std::fs::read(d.join("bt/scores.csv")).unwrap();
    let b = std::fs::read(d.join("sc/scores.csv")).unwrap();
    assert_eq!(a, b, "rescoring the archive changed the scores");
}

#[test]
fn fit_then_forecast_matches_backtest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let ok = |args: &[&str]| {
        let out = deepcast(d, args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    ok(&["fit", "-c", "tiny.toml", "--max-origins", "8", "-o", "fits.json"]);
    ok(&[
        "backtest",
        "-c",
        "tiny.toml",
        "--max-origins",
        "8",
        "--fits",
        "fits.json",
        "-o",
        "bt",
    ]);
    let archive = std::fs::read_to_string(d.join("bt/forecasts.csv")).unwrap();
    let origin = archive.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string();
    ok(&[
        "forecast",
        "-c",
        "tiny.toml",
        "--fits",
        "fits.json",
        "--origin",
        &origin,
        "-o",
        "one.csv",
    ]);
    let mut want: Vec<&str> = archive
        .lines()
        .filter(|l| l.split(',').nth(1) == Some(origin.as_str()))
        .collect();
    let one = std::fs::read_to_string(d.join("one.csv")).unwrap();
    let mut got: Vec<&str> = one.lines().skip(1).collect();
    want.sort();
    got.sort();
    assert_eq!(want, got);
}

#[test]
fn short_train_window_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = TINY
        .replace("train_window = \"600 steps\"", "train_window = \"2 steps\"")
        .replace("short_lags = [1, 2]\nlong_lags", "short_lags = [1, 2, 3]\nlong_lags");
    std::fs::write(d.join("bad.toml"), cfg).unwrap();
    let out = deepcast(d, &["backtest", "-c", "bad.toml", "-o", "bt"]);
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["error"], "invalid_config");
    assert!(!d.join("bt").exists());
}

#[test]
fn leaky_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/leaky_demand.toml");
    let fixture = fixture.to_str().unwrap();
    for cmd in ["audit", "backtest"] {
        let out = deepcast(dir.path(), &[cmd, "-c", fixture]);
        assert!(!out.status.success(), "{cmd} accepted a leaky config");
        let err = error_json(&out);
        assert_eq!(err["error"], "look_ahead");
        assert!(err["message"].as_str().unwrap().contains("D50"));
    }
}

#[test]
fn unknown_flag_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = deepcast(dir.path(), &["backtest", "--config", "x.toml", "--bogus"]);
    assert!(!out.status.success());
    let out = deepcast(dir.path(), &["backtest", "--config", "missing.toml"]);
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["error"], "io");
}

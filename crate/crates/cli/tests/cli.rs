use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tension_sentinel::{Checkpoint, DamageReport, MultiChannelSeries};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tension-sentinel"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    rows
}

/// Two-hour corpus shared by the slower tests.
fn small_corpus(dir: &TempDir) -> PathBuf {
    let out = p(dir, "corpus.csv");
    ok(&["synth", "--seed", "3", "--duration", "2h", "--out", s(&out)]);
    out
}

fn small_checkpoint(dir: &TempDir, data: &Path, model: &str) -> PathBuf {
    let ckpt = p(dir, &format!("{model}.json"));
    let log = p(dir, &format!("{model}.log.csv"));
    ok(&[
        "train", "--data", s(data), "--out", s(&ckpt), "--log", s(&log), "--model", model,
        "--iterations", "4", "--window", "40", "--seed", "1",
    ]);
    ckpt
}

#[test]
fn synth_writes_fourteen_channels_deterministically() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (p(&dir, "a.csv"), p(&dir, "b.csv"));
    ok(&["synth", "--seed", "1", "--duration", "600", "--out", s(&a)]);
    ok(&["synth", "--seed", "1", "--duration", "600", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let series = MultiChannelSeries::import_csv(&a).unwrap();
    assert_eq!(series.channel_count(), 14);
    assert_eq!(series.names()[3], "SJS11");
}

#[test]
fn synth_row_count_follows_duration_and_rate() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "day.csv");
    ok(&["synth", "--duration", "86400", "--rate", "2", "--out", s(&out)]);
    // 86400 s at 2 Hz, plus the header.
    let lines = std::fs::read_to_string(&out).unwrap().lines().count();
    assert_eq!(lines, 172_800 + 1);
}

#[test]
fn detrend_parts_sum_to_input() {
    let dir = TempDir::new().unwrap();
    let data = small_corpus(&dir);
    let (det, trend) = (p(&dir, "det.csv"), p(&dir, "trend.csv"));
    ok(&["detrend", "--input", s(&data), "--out", s(&det), "--trend-out", s(&trend)]);
    let x = MultiChannelSeries::import_csv(&data).unwrap();
    let d = MultiChannelSeries::import_csv(&det).unwrap();
    let t = MultiChannelSeries::import_csv(&trend).unwrap();
    for r in (0..x.len()).step_by(97) {
        for c in 0..x.channel_count() {
            let sum = d.get(r, c).unwrap() + t.get(r, c).unwrap();
            let v = x.get(r, c).unwrap();
            assert!((sum - v).abs() <= 1e-9 * v.abs().max(1.0), "row {r} col {c}");
        }
    }
}

#[test]
fn detrend_of_constant_input_is_zero() {
    let dir = TempDir::new().unwrap();
    let input = p(&dir, "flat.csv");
    let mut text = String::from("timestamp,a,b\n");
    for i in 0..240 {
        text.push_str(&format!("{},5.5,-2\n", i as f64 * 0.5));
    }
    std::fs::write(&input, text).unwrap();
    let (det, trend) = (p(&dir, "det.csv"), p(&dir, "trend.csv"));
    ok(&["detrend", "--input", s(&input), "--out", s(&det), "--trend-out", s(&trend)]);
    let d = MultiChannelSeries::import_csv(&det).unwrap();
    assert!(d.values().as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn missing_data_flag_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&["train", "--out", s(&p(&dir, "m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn nonexistent_input_fails_before_work() {
    let dir = TempDir::new().unwrap();
    let ckpt = p(&dir, "m.json");
    let out = run(&["train", "--data", s(&p(&dir, "nope.csv")), "--out", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!ckpt.exists());
}

#[test]
fn outputs_may_not_overwrite_inputs() {
    let dir = TempDir::new().unwrap();
    let data = small_corpus(&dir);
    let before = std::fs::read(&data).unwrap();
    let trend = p(&dir, "trend.csv");
    let out = run(&["detrend", "--input", s(&data), "--out", s(&data), "--trend-out", s(&trend)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(std::fs::read(&data).unwrap(), before);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "run.json");
    std::fs::write(&cfg, r#"{"seed": 1, "trainning": {}}"#).unwrap();
    let out = run(&["--config", s(&cfg), "synth", "--duration", "60", "--out", s(&p(&dir, "x.csv"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_values_apply_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "run.json");
    std::fs::write(&cfg, r#"{"seed": 9, "scenario": {"traffic": {"duration": 120, "sample_rate": 1}}}"#).unwrap();
    let (a, b) = (p(&dir, "a.csv"), p(&dir, "b.csv"));
    ok(&["--config", s(&cfg), "synth", "--out", s(&a)]);
    ok(&["--config", s(&cfg), "synth", "--rate", "2", "--out", s(&b)]);
    assert_eq!(MultiChannelSeries::import_csv(&a).unwrap().len(), 120);
    assert_eq!(MultiChannelSeries::import_csv(&b).unwrap().len(), 240);
}

#[test]
fn dnn_checkpoint_has_comparison_shapes() {
    let dir = TempDir::new().unwrap();
    let data = small_corpus(&dir);
    let ckpt = small_checkpoint(&dir, &data, "dnn");
    let c = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(c.model_kind.to_string(), "dnn");
    assert_eq!(c.shapes.encoder, [64, 32, 5]);
    assert_eq!(c.shapes.decoder, [5, 32, 14]);
    assert_eq!(c.train_config.drop_k, 7);
}

#[test]
fn same_seed_training_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let data = small_corpus(&dir);
    let a = small_checkpoint(&dir, &data, "lstm");
    let first = std::fs::read(&a).unwrap();
    std::fs::remove_file(&a).unwrap();
    small_checkpoint(&dir, &data, "lstm");
    assert_eq!(std::fs::read(&a).unwrap(), first);
}

#[test]
fn impute_fills_hidden_channel() {
    let dir = TempDir::new().unwrap();
    let data = small_corpus(&dir);
    let ckpt = small_checkpoint(&dir, &data, "lstm");
    let out = p(&dir, "filled.csv");
    ok(&["impute", "--data", s(&data), "--checkpoint", s(&ckpt), "--hide", "SJS10", "--out", s(&out)]);
    let filled = MultiChannelSeries::import_csv(&out).unwrap();
    let c = filled.channel_index("SJS10").unwrap();
    assert_eq!(filled.observed_count(c), filled.len());
}

#[test]
fn diagnose_and_plot_exports() {
    let dir = TempDir::new().unwrap();
    let data = small_corpus(&dir);
    let ckpt = small_checkpoint(&dir, &data, "lstm");
    let report = p(&dir, "report.json");
    let imputed = p(&dir, "imputed.csv");
    let out = run(&[
        "diagnose", "--data", s(&data), "--checkpoint", s(&ckpt), "--baseline-period", "0:1h",
        "--eval-period", "1h:2h", "--window", "60", "--missing", "SJS08,SJX12",
        "--out", s(&report), "--imputed-out", s(&imputed),
    ]);
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 2, "{}", String::from_utf8_lossy(&out.stderr));
    let parsed: DamageReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed.channels.len(), 14);
    assert_eq!(code == 2, parsed.any_damage());
    let filled = MultiChannelSeries::import_csv(&imputed).unwrap();
    assert_eq!(filled.len(), 7200);

    let z = p(&dir, "z.csv");
    ok(&["plot", "--kind", "zbars", "--input", s(&report), "--out", s(&z)]);
    let rows = csv_rows(&z);
    assert_eq!(rows[0], ["channel", "z", "threshold", "damaged"]);
    assert_eq!(rows.len(), 15);
    assert!(rows[1..].iter().all(|r| r[2] == "3"));

    let loss = p(&dir, "loss.csv");
    ok(&["plot", "--kind", "loss", "--input", s(&p(&dir, "lstm.log.csv")), "--out", s(&loss)]);
    assert_eq!(csv_rows(&loss)[0], ["iteration", "loss"]);

    let violin = p(&dir, "violin.csv");
    ok(&[
        "plot", "--kind", "violin", "--data", s(&data), "--checkpoint", s(&ckpt), "--window", "120",
        "--out", s(&violin),
    ]);
    let rows = csv_rows(&violin);
    assert_eq!(rows[0], ["channel", "error", "density", "median"]);
    assert_eq!(rows.len(), 1 + 14 * 64);

    let overlay = p(&dir, "overlay.csv");
    ok(&[
        "plot", "--kind", "overlay", "--data", s(&data), "--checkpoint", s(&ckpt), "--channel", "SJX11",
        "--out", s(&overlay),
    ]);
    let rows = csv_rows(&overlay);
    assert_eq!(rows[0], ["time", "truth", "imputed"]);
    assert!(rows[1..].iter().all(|r| !r[2].is_empty()));
}

#[test]
fn diagnose_requires_baseline_period() {
    let dir = TempDir::new().unwrap();
    let data = small_corpus(&dir);
    let ckpt = small_checkpoint(&dir, &data, "dnn");
    let out = run(&["diagnose", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&p(&dir, "r.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline-period"));
}

#[test]
fn sweep_export_covers_zero_to_twelve() {
    let dir = TempDir::new().unwrap();
    let data = small_corpus(&dir);
    let out = p(&dir, "sweep.csv");
    ok(&[
        "plot", "--kind", "sweep", "--data", s(&data), "--model", "dnn", "--iterations", "2",
        "--train-window", "20", "--out", s(&out),
    ]);
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["model", "k", "missing_rate", "final_loss"]);
    let ks: Vec<usize> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(ks, (0..=12).collect::<Vec<_>>());
}

#[test]
fn thread_variable_must_be_positive() {
    let dir = TempDir::new().unwrap();
    let out = bin()
        .env("TENSION_SENTINEL_THREADS", "0")
        .args(["synth", "--duration", "60", "--out", s(&p(&dir, "x.csv"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

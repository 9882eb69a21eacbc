use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use physfactor_cli::report::{AttendReport, BenchReport, DemoReport, FactorizeReport};
use physfactor_cli::RunConfig;
use physfactor_core::MetricsReport;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_physfactor"));
    c.env_remove("PHYSFACTOR_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    stdout(&o)
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn pulse_file(dir: &TempDir, name: &str, rate: &str, duration: &str, seed: &str) -> PathBuf {
    let path = p(dir, name);
    ok(&[
        "--seed", seed, "synth", "pulse", "--rate", rate, "--duration", duration, "--fs", "30", "--harmonic", "0.3",
        "--out", s(&path),
    ]);
    path
}

#[test]
fn help_lists_subcommands() {
    let out = ok(&["--help"]);
    for cmd in ["factorize", "attend", "metrics", "synth", "bench", "demo-forward", "config"] {
        assert!(out.contains(cmd), "missing {cmd}");
    }
    assert!(out.contains("--seed") && out.contains("PHYSFACTOR_CONFIG"));
}

#[test]
fn print_defaults_round_trips_through_config_file() {
    let dir = TempDir::new().unwrap();
    let defaults = ok(&["config", "--print-defaults"]);
    assert_eq!(RunConfig::parse(&defaults).unwrap(), RunConfig::default());
    let path = p(&dir, "run.toml");
    std::fs::write(&path, &defaults).unwrap();
    let shown = ok(&["--config", s(&path), "config", "--show"]);
    assert_eq!(RunConfig::parse(&shown).unwrap(), RunConfig::default());
}

#[test]
fn env_var_and_seed_override() {
    let dir = TempDir::new().unwrap();
    let path = p(&dir, "env.toml");
    std::fs::write(&path, "[rng]\nseed = 5\n[attention]\nvariant = \"grbf\"\n").unwrap();
    let o = bin().env("PHYSFACTOR_CONFIG", &path).args(["config", "--show"]).output().unwrap();
    let cfg = RunConfig::parse(&stdout(&o)).unwrap();
    assert_eq!(cfg.rng.seed, 5);
    assert_eq!(cfg.attention.variant, physfactor_core::AttentionVariant::Grbf);
    let o = bin()
        .env("PHYSFACTOR_CONFIG", &path)
        .args(["--seed", "11", "config", "--show"])
        .output()
        .unwrap();
    assert_eq!(RunConfig::parse(&stdout(&o)).unwrap().rng.seed, 11);
}

#[test]
fn bad_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let path = p(&dir, "bad.toml");
    std::fs::write(&path, "[attention]\nrnak = 2\n").unwrap();
    let o = run(&["--config", s(&path), "config", "--show"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rnak"));
    let o = run(&["--config", s(&p(&dir, "missing.toml")), "config", "--show"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identical_signals_score_perfectly_and_json_round_trips() {
    let dir = TempDir::new().unwrap();
    let gt = pulse_file(&dir, "gt.csv", "72", "60", "1");
    let out = ok(&["metrics", "--pred", s(&gt), "--gt", s(&gt), "--fs", "30"]);
    let report: MetricsReport = serde_json::from_str(&out).unwrap();
    assert_eq!(report.mae.avg, 0.0);
    assert!((report.macc.avg - 1.0).abs() < 1e-12);
    assert_eq!(report.n, 2);
    let mut again = serde_json::to_string_pretty(&report).unwrap();
    again.push('\n');
    assert_eq!(again, out);
    let table = ok(&["metrics", "--pred", s(&gt), "--gt", s(&gt), "--fs", "30", "--format", "table"]);
    assert!(table.contains("MACC") && table.contains("MAE"));
}

#[test]
fn two_column_files_need_no_fs() {
    let dir = TempDir::new().unwrap();
    let gt = p(&dir, "gt2.csv");
    ok(&["synth", "pulse", "--duration", "30", "--time-column", "--out", s(&gt)]);
    let pred = pulse_file(&dir, "pred.csv", "75", "30", "2");
    // pred is single-column: the shared --fs is still needed
    let o = run(&["metrics", "--pred", s(&pred), "--gt", s(&gt)]);
    assert_eq!(o.status.code(), Some(2));
    let out = ok(&["metrics", "--pred", s(&gt), "--gt", s(&gt)]);
    let report: MetricsReport = serde_json::from_str(&out).unwrap();
    assert!((report.windows[0].gt_rate - 72.0).abs() < 0.5);
}

#[test]
fn malformed_row_exits_2_with_line_number() {
    let dir = TempDir::new().unwrap();
    let gt = pulse_file(&dir, "gt.csv", "72", "30", "1");
    let bad = p(&dir, "bad.csv");
    let mut text = std::fs::read_to_string(&gt).unwrap();
    text = text.lines().enumerate().map(|(i, l)| if i == 6 { "oops\n".to_string() } else { format!("{l}\n") }).collect();
    std::fs::write(&bad, text).unwrap();
    let o = run(&["metrics", "--pred", s(&bad), "--gt", s(&gt), "--fs", "30"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
}

#[test]
fn short_ground_truth_exits_1() {
    let dir = TempDir::new().unwrap();
    let gt = pulse_file(&dir, "short.csv", "72", "5", "1");
    let o = run(&["metrics", "--pred", s(&gt), "--gt", s(&gt), "--fs", "30"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("too short"), "{}", stderr(&o));
}

#[test]
fn synth_is_seed_deterministic() {
    let a = ok(&["--seed", "3", "synth", "pulse", "--noise", "0.2", "--duration", "5"]);
    let b = ok(&["--seed", "3", "synth", "pulse", "--noise", "0.2", "--duration", "5"]);
    let c = ok(&["--seed", "4", "synth", "pulse", "--noise", "0.2", "--duration", "5"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.lines().count(), 150);
    let o = run(&["synth", "pulse", "--rate", "500"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn factorize_reports_monotone_trace() {
    let dir = TempDir::new().unwrap();
    let emb = p(&dir, "emb.csv");
    let y = p(&dir, "y.csv");
    ok(&["synth", "embedding", "--frames", "90", "--out", s(&emb), "--target-out", s(&y)]);
    for variant in ["fsam", "grbf", "tsfm"] {
        let out = ok(&[
            "factorize", "--input", s(&emb), "--target", s(&y), "--variant", variant, "--iterations", "12",
        ]);
        let r: FactorizeReport = serde_json::from_str(&out).unwrap();
        assert_eq!((r.m, r.n, r.error_trace.len()), (90, 8 * 36, 12));
        assert!(r.error_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{variant}");
    }
    let low = p(&dir, "low.csv");
    ok(&["factorize", "--input", s(&emb), "--variant", "fsam", "--low-rank-out", s(&low)]);
    assert_eq!(std::fs::read_to_string(&low).unwrap().lines().count(), 90);
    let o = run(&["factorize", "--input", s(&emb), "--variant", "tsfm"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("target"));
}

#[test]
fn attend_synthetic_is_selective_and_deterministic() {
    let args = ["--seed", "2", "attend", "--synthetic"];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    let r: AttendReport = serde_json::from_str(&a).unwrap();
    assert_eq!(r.shape, [160, 8, 6, 6]);
    assert!(r.csim.unwrap().gap.unwrap() >= 0.2);
}

#[test]
fn attend_file_input_matches_synthetic_run() {
    let dir = TempDir::new().unwrap();
    let emb = p(&dir, "emb.csv");
    let y = p(&dir, "y.csv");
    ok(&["--seed", "2", "synth", "embedding", "--out", s(&emb), "--target-out", s(&y)]);
    let excited = p(&dir, "exc.csv");
    let from_file = ok(&[
        "--seed", "2", "attend", "--input", s(&emb), "--shape", "8,6,6", "--target", s(&y), "--excited-out",
        s(&excited),
    ]);
    let synthetic: AttendReport = serde_json::from_str(&ok(&["--seed", "2", "attend", "--synthetic"])).unwrap();
    let file: AttendReport = serde_json::from_str(&from_file).unwrap();
    // CSV text round trip is exact for shortest float formatting
    assert_eq!(file.error_trace, synthetic.error_trace);
    assert_eq!(std::fs::read_to_string(&excited).unwrap().lines().count(), 160);
    let o = run(&["attend", "--input", s(&emb), "--shape", "8,6,5", "--target", s(&y)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_reports_samples_and_rejects_zero_repeats() {
    let o = run(&["bench", "--repeats", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let small: BenchReport =
        serde_json::from_str(&ok(&["bench", "--repeats", "3", "--frames", "64", "--resolution", "9"])).unwrap();
    assert_eq!((small.samples_ms.len(), small.warmup, small.frames), (3, 3, 64));
    assert!(small.min_ms <= small.median_ms);
    let large: BenchReport =
        serde_json::from_str(&ok(&["bench", "--repeats", "3", "--frames", "64", "--resolution", "72"])).unwrap();
    assert!(small.median_ms < large.median_ms);
    assert_eq!(small.params, large.params);
}

#[test]
fn demo_forward_shapes_and_routing() {
    let dir = TempDir::new().unwrap();
    let rppg = p(&dir, "rppg.csv");
    let out = ok(&["demo-forward", "--resolution", "9", "--rppg-out", s(&rppg)]);
    let r: DemoReport = serde_json::from_str(&out).unwrap();
    assert_eq!((r.rppg_len, r.rrsp_len), (160, 160));
    assert!(!r.bvp_attention && r.rppg_rate_bpm.is_none());
    assert_eq!(std::fs::read_to_string(&rppg).unwrap().lines().count(), 161);

    let cfg = p(&dir, "split.toml");
    std::fs::write(&cfg, "[model]\nrouting = \"split\"\nchannels = 4\nresolution = 9\nframes = 320\n").unwrap();
    let out = ok(&["--config", s(&cfg), "demo-forward", "--modality", "both", "--with-target"]);
    let r: DemoReport = serde_json::from_str(&out).unwrap();
    assert_eq!((r.rppg_len, r.rrsp_len), (320, 320));
    assert!(r.bvp_attention && r.rsp_attention && r.rppg_rate_bpm.is_some());
    let o = run(&["--config", s(&cfg), "demo-forward", "--modality", "rgb"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["demo-forward", "--frames", "162", "--resolution", "9"]);
    assert_eq!(o.status.code(), Some(1));
}

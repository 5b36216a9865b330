//! End-to-end tests of the `fedaug` binary.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

const TINY: &[&str] = &[
    "dataset.source=synthetic",
    "dataset.num_classes=6",
    "dataset.n_per_class=40",
    "dataset.input_dim=8",
    "partition.num_clients=3",
    "model.feature_layers=16",
    "model.augca_head=8",
    "schedule.rounds=4",
    "schedule.local_steps=3",
    "schedule.batch_size=8",
    "schedule.lr=0.1",
    "schedule.eval_every=1",
    "probe.epochs=1",
    "probe.pairs=200",
];

fn fedaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedaug"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_args<'a>(cmd: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![cmd, "--quiet", "--out", out];
    for s in TINY {
        args.push("--set");
        args.push(s);
    }
    args.extend_from_slice(extra);
    args
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tiny_run_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let start = Instant::now();
    let o = fedaug(&tiny_args("run", path_str(&out), &["--set", "algorithm.kind=fedaug"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs() < 10);
    for f in ["metrics.csv", "report.json", "summary.txt"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("fedaug seed 0"), "{stdout}");
}

#[test]
fn same_seed_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = fedaug(&tiny_args("run", path_str(dir), &["--seed", "7"]));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ma = std::fs::read(a.join("metrics.csv")).unwrap();
    let mb = std::fs::read(b.join("metrics.csv")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn missing_dataset_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = fedaug(&[
        "run",
        "--quiet",
        "--out",
        path_str(&out),
        "--set",
        "dataset.images=/nonexistent/images.idx",
        "--set",
        "dataset.labels=/nonexistent/labels.idx",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = fedaug(&tiny_args("run", path_str(&out), &["--set", "partition.alpha=-1"]));
    assert_eq!(o.status.code(), Some(2));
    let o = fedaug(&tiny_args("run", path_str(&out), &["--set", "schedule.nope=1"]));
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("schedule.nope"), "{stderr}");
}

#[test]
fn config_file_is_read_and_overrides_win() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ini = String::new();
    let mut section = "";
    for entry in TINY {
        let (key, value) = entry.split_once('=').unwrap();
        let (sec, name) = key.split_once('.').unwrap();
        if sec != section {
            ini.push_str(&format!("[{sec}]\n"));
            section = sec;
        }
        ini.push_str(&format!("{name} = {value}\n"));
    }
    let cfg = tmp.path().join("run.ini");
    std::fs::write(&cfg, ini).unwrap();

    let out = tmp.path().join("file");
    let o = fedaug(&["run", "--quiet", "--out", path_str(&out), "--config", path_str(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6, "{csv}");

    let out = tmp.path().join("override");
    let o = fedaug(&[
        "run", "--quiet", "--out", path_str(&out), "--config", path_str(&cfg),
        "--set", "schedule.rounds=1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert!(fedaug(&tiny_args("run", path_str(&out), &[])).status.success());
    let again = fedaug(&tiny_args("run", path_str(&out), &[]));
    assert_eq!(again.status.code(), Some(4));
    let forced = fedaug(&tiny_args("run", path_str(&out), &["--force"]));
    assert!(forced.status.success());
}

#[test]
fn compare_needs_two_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(fedaug(&tiny_args("run", path_str(&a), &[])).status.success());
    let one = fedaug(&["compare", path_str(&a)]);
    assert_eq!(one.status.code(), Some(2));

    let o = fedaug(&tiny_args("run", path_str(&b), &["--set", "algorithm.kind=fedprox"]));
    assert!(o.status.success());
    let two = fedaug(&["compare", path_str(&a), path_str(&b), "--threshold", "0.2"]);
    assert!(two.status.success(), "{}", String::from_utf8_lossy(&two.stderr));
    let table = String::from_utf8_lossy(&two.stdout);
    assert!(table.contains("fedavg") && table.contains("fedprox"), "{table}");
}

#[test]
fn probe_quick_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("probe");
    let o = fedaug(&tiny_args("probe", path_str(&out), &[]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("probe.json").is_file());
    assert!(out.join("features_local.csv").is_file());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("classifier_bias"), "{stdout}");
}

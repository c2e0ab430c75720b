//! The `lpnum` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const ARTIFACTS: [&str; 5] = [
    "metrics.jsonl",
    "summary.csv",
    "histograms.jsonl",
    "checkpoint.json",
    "checkpoint.bin",
];

fn lpnum(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpnum"))
        .args(args)
        .env_remove("LPNUM_CIFAR10_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = lpnum(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn synthetic_run<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "run",
        "--data",
        "synthetic",
        "--synthetic-classes",
        "2",
        "--synthetic-per-class",
        "30",
        "--synthetic-shape",
        "3,8,8",
        "--topology",
        "compact",
        "--batch-size",
        "10",
        "--learning-rate",
        "0.1",
        "--out",
        out,
    ];
    v.extend_from_slice(extra);
    v
}

fn lines(p: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn run_writes_one_record_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let out_s = out.to_str().unwrap();
    let args = synthetic_run(
        out_s,
        &[
            "--scheme",
            "float12",
            "--rounding",
            "stochastic",
            "--subset",
            "40",
            "--epochs",
            "5",
            "--seed",
            "1",
            "--histograms",
        ],
    );
    let stdout = ok(&args);
    assert!(stdout.contains("after 5 epochs"), "{stdout}");
    for f in ARTIFACTS.iter().chain(&["config.toml", "run.log"]) {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let m = lines(&out.join("metrics.jsonl"));
    assert_eq!(m.len(), 5);
    for (i, r) in m.iter().enumerate() {
        assert_eq!(r["epoch"], i + 1);
        let acc = r["test_accuracy"].as_f64().unwrap();
        assert!((0.0..=100.0).contains(&acc));
    }
    for h in lines(&out.join("histograms.jsonl")) {
        let bins: u64 = h["bins"]
            .as_object()
            .unwrap()
            .values()
            .map(|v| v.as_u64().unwrap())
            .sum();
        assert_eq!(
            bins + h["zeros"].as_u64().unwrap(),
            h["count"].as_u64().unwrap(),
            "{}",
            h["site"]
        );
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(
        summary.starts_with("scheme,rounding,seed,epochs,final_accuracy"),
        "{summary}"
    );
    // timestamps live only in the log
    assert!(!fs::read_to_string(out.join("metrics.jsonl"))
        .unwrap()
        .contains("elapsed"));
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&synthetic_run(
            out.to_str().unwrap(),
            &[
                "--scheme",
                "ctx-float12",
                "--epochs",
                "2",
                "--seed",
                "7",
                "--histograms",
            ],
        ));
    }
    for f in ARTIFACTS {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    ok(&synthetic_run(
        c.to_str().unwrap(),
        &["--scheme", "ctx-float12", "--epochs", "2", "--seed", "8"],
    ));
    assert_ne!(
        fs::read(a.join("checkpoint.bin")).unwrap(),
        fs::read(c.join("checkpoint.bin")).unwrap()
    );
}

#[test]
fn resume_switches_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    ok(&synthetic_run(
        first.to_str().unwrap(),
        &["--scheme", "float12", "--epochs", "2"],
    ));
    let stem = first.join("checkpoint");
    ok(&synthetic_run(
        second.to_str().unwrap(),
        &[
            "--scheme",
            "ctx-fixed12",
            "--epochs",
            "1",
            "--resume",
            stem.to_str().unwrap(),
        ],
    ));
    let m = lines(&second.join("metrics.jsonl"));
    assert_eq!(m.len(), 1);
    assert_eq!(m[0]["epoch"], 3);
    let header: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(second.join("checkpoint.json")).unwrap()).unwrap();
    assert!(header.to_string().contains("ctx-fixed12"));
}

#[test]
fn summarize_folds_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        ok(&synthetic_run(
            out.to_str().unwrap(),
            &["--scheme", "fixed12", "--epochs", "1", "--seed", seed],
        ));
        runs.push(out.to_str().unwrap().to_string());
    }
    let mut args = vec!["summarize"];
    args.extend(runs.iter().map(String::as_str));
    let csv = ok(&args);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2, "{csv}");
    assert!(rows[0].starts_with("scheme,rounding,runs,accuracy_mean,accuracy_std"));
    assert!(rows[1].starts_with("fixed12,stochastic,2,"), "{}", rows[1]);
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cfg");
    let cfg = dir.path().join("exp.toml");
    let text = format!(
        "scheme = \"pot\"\nrounding = \"nearest\"\ntopology = \"compact\"\noutput = {:?}\n\n[data]\nsource = \"synthetic\"\n\n[data.synthetic]\nclasses = 3\nper_class = 10\nshape = [3, 8, 8]\n\n[train]\nepochs = 2\nbatch_size = 15\n",
        out.to_str().unwrap()
    );
    fs::write(&cfg, text).unwrap();
    ok(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(lines(&out.join("metrics.jsonl")).len(), 2);
    let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(resolved.contains("scheme = \"pot\""), "{resolved}");

    fs::write(&cfg, "scheme = \"pot\"\nlearning_rat = 0.1\n").unwrap();
    let o = lpnum(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));
}

#[test]
fn bad_invocations_fail() {
    let o = lpnum(&["run", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    let o = lpnum(&["run", "--scheme", "fp16", "--data", "synthetic"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fp16"));
    // no dataset directory configured
    let o = lpnum(&["run", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let help = ok(&["run", "--help"]);
    for flag in [
        "--scheme",
        "--rounding",
        "--format",
        "--subset",
        "--resume",
        "--histograms",
        "--cifar-dir",
    ] {
        assert!(help.contains(flag), "{flag}");
    }
}

#[test]
fn cost_emits_layer_rows_and_totals() {
    let csv = ok(&["cost", "--scheme", "pot"]);
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0][..3], ["scheme", "layer", "mul"]);
    assert!(rows.iter().any(|r| r[1] == "conv1"));
    let total = rows.iter().find(|r| r[1] == "total").unwrap();
    let hours: f64 = total[rows[0].iter().position(|h| *h == "time").unwrap()]
        .parse()
        .unwrap();
    assert!((hours - 0.228).abs() < 0.05 * 0.228, "{hours}");

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    fs::write(&empty, r#"{"name":"empty","input":[3,32,32],"layers":[]}"#).unwrap();
    let csv = ok(&[
        "cost",
        "--scheme",
        "fp32-baseline",
        "--topology",
        empty.to_str().unwrap(),
    ]);
    let last = csv.lines().last().unwrap();
    assert!(
        last.split(',').skip(2).all(|v| v.parse::<f64>().unwrap() == 0.0),
        "{last}"
    );

    let o = lpnum(&["cost", "--cost-table", "/nonexistent/table.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn dump_formats_lists_codepoints() {
    let text = ok(&["dump-formats", "float[6,0]", "fixed[0,3]"]);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(r.headers().unwrap(), vec!["format", "index", "value"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let fixed: Vec<f64> = rows
        .iter()
        .filter(|r| &r[0] == "fixed[0,3]")
        .map(|r| r[2].parse().unwrap())
        .collect();
    assert_eq!(fixed.len(), 8);
    assert_eq!((fixed[0], fixed[7]), (-0.5, 0.375));
    assert!(rows.iter().filter(|r| &r[0] == "float[6,0]").count() > 100);
}

#[test]
fn conformance_self_test_fails_on_injected_bias() {
    let args = [
        "conformance",
        "--points",
        "20",
        "--draws",
        "2000",
        "--pairs",
        "20",
        "--inject-bias-offset",
        "1",
    ];
    let o = lpnum(&args);
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("FAIL") && text.contains("code 0x001:"), "{text}");
}

//! End-to-end runs of the command-line binary.

use std::fs;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dsrc-backoff");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("DSRC_BACKOFF_SEED")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn sweep_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("s.conf");
    fs::write(
        &conf,
        "[scenario]\ncw = 31\nnum_periods = 50\nnum_replications = 2\n\n[sweep]\nvariable = n_cs\nvalues = 0:5:10\nengines = both\n",
    )
    .unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}.csv"));
        let o = run(&[
            "sweep",
            "--config",
            conf.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let side = dir.path().join(format!("run{i}_irt.csv"));
        outputs.push((fs::read(&out).unwrap(), fs::read(&side).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let main = String::from_utf8(outputs[0].0.clone()).unwrap();
    assert_eq!(main.lines().count(), 1 + 3 * 2 * 2);
    assert!(main.starts_with("var,allocator,engine,tau,"));
}

#[test]
fn unknown_suite_lists_available() {
    let o = run(&["accept", "--suite", "nightly"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(
        e.contains("nightly") && e.contains("quick") && e.contains("full"),
        "{e}"
    );
}

#[test]
fn invalid_parameter_is_reported() {
    let o = run(&["analyze", "--set", "cw=0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cw must be ≥ 1"), "{}", stderr(&o));
}

#[test]
fn config_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "[scenario]\ncw = 15\nbogus = 1\n").unwrap();
    let o = run(&["analyze", "--config", conf.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn defaults_round_trip_through_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["print-defaults"]);
    assert!(o.status.success());
    let conf = dir.path().join("defaults.conf");
    fs::write(&conf, &o.stdout).unwrap();
    let a = run(&["analyze", "--config", conf.to_str().unwrap()]);
    let b = run(&["analyze"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let report: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    let pdr = report["pdr"].as_f64().unwrap();
    assert!(pdr > 0.0 && pdr <= 1.0);
}

#[test]
fn dump_chain_rows_sum_to_one() {
    let o = run(&[
        "dump-chain",
        "--p-b",
        "0.3",
        "--set",
        "cw=4",
        "--set",
        "l_bcn=2",
        "--set",
        "big_l_bcn=10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#') && l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().unwrap())
                .collect()
        })
        .collect();
    assert!(!rows.is_empty());
    for r in rows {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{r:?}");
    }
}

use std::path::Path;
use std::process::{Command, Output};

use chrono::{TimeZone, Utc};

fn arct(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arct"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn gold(dir: &Path) {
    let mut text = String::from("id\twarrant0\twarrant1\tlabel\treason\tclaim\tdebateTitle\tdebateInfo\n");
    for i in 0..4 {
        text.push_str(&format!("g{i}\tfirst {i}\tsecond {i}\t{}\tr\tc\tt\ti\n", i % 2));
    }
    std::fs::write(dir.join("gold.tsv"), text).unwrap();
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    gold(dir.path());
    assert_eq!(arct(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert!(!arct(dir.path(), &["frobnicate"]).stderr.is_empty());
    assert_eq!(arct(dir.path(), &["evaluate", "--gold", "gold.tsv", "--random"]).status.code(), Some(2));
    assert_eq!(arct(dir.path(), &["reliability", "--responses", "r.jsonl"]).status.code(), Some(2));
    assert_eq!(arct(dir.path(), &["evaluate", "--gold", "missing.tsv", "--random", "--seed", "1"]).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.csv"), "instanceId,label\ng0,7\n").unwrap();
    assert_eq!(arct(dir.path(), &["evaluate", "--pred", "bad.csv", "--gold", "gold.tsv"]).status.code(), Some(1));
    assert_eq!(arct(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(arct(dir.path(), &["evaluate", "--gold", "gold.tsv", "--config", "none.conf"]).status.code(), Some(2));
}

#[test]
fn evaluate_prints_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    gold(dir.path());
    std::fs::write(dir.path().join("p.csv"), "instanceId,label\ng0,0\ng1,1\ng2,1\ng3,1\n").unwrap();
    let out = arct(dir.path(), &["evaluate", "--pred", "p.csv", "--gold", "gold.tsv"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "accuracy\t0.750000\n");
}

#[test]
fn reliability_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for item in 0..12 {
        for w in 0..18 {
            let t = Utc.timestamp_opt(1_600_000_000 + (w * 7 + item) as i64, 0).unwrap();
            let label = if (item + w) % 5 == 0 { "b" } else { "a" };
            lines.push_str(&format!(
                "{{\"itemId\":\"i{item}\",\"workerId\":\"w{w}\",\"submissionTime\":\"{}\",\"label\":\"{label}\"}}\n",
                t.to_rfc3339()
            ));
        }
    }
    std::fs::write(dir.path().join("r.jsonl"), lines).unwrap();
    let out = arct(
        dir.path(),
        &["reliability", "--responses", "r.jsonl", "--k", "1-9", "--fractions", "0.85,0.90,0.95,1.0", "--repeats", "3", "--seed", "7"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "k,keep_fraction,mean_kappa,std_kappa,mean_coverage,repeats");
    assert_eq!(rows.len(), 1 + 9 * 4);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    gold(dir.path());
    std::fs::write(dir.path().join("run.conf"), "# random baseline\nrandom = true\nseed = 3\n").unwrap();
    let a = arct(dir.path(), &["evaluate", "--gold", "gold.tsv", "--config", "run.conf"]);
    let b = arct(dir.path(), &["evaluate", "--gold", "gold.tsv", "--random", "--seed", "3"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

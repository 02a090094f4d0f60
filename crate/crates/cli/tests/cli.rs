//! End-to-end checks of the compiled binary: subcommands, exit codes, and
//! the files it writes.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cablesoup"))
}

#[test]
fn list_experiments_prints_catalogue() {
    let out = bin().arg("list-experiments").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "arcsin-check",
        "isomorphism-check",
        "coupling-equivalence",
        "twopoint-decay",
        "highdim-scan",
        "edge-oracle",
    ] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
}

#[test]
fn validate_rejects_bad_configs_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "experiment = \"no-such-thing\"\n").unwrap();
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stderr).unwrap();
    assert!(text.contains("unknown experiment"));
    assert!(text.contains("arcsin-check"), "should list valid names");
}

#[test]
fn validate_prints_normalized_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ok.toml");
    std::fs::write(
        &cfg,
        "experiment = \"highdim-scan\"\nsamples = 200\n[ladder]\nd = 7\nns = [3, 2]\n",
    )
    .unwrap();
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("config ok"));
    let toml_part = text.split_once('\n').unwrap().1;
    let value: toml::Value = toml::from_str(toml_part).unwrap();
    let ns: Vec<i64> = value["ladder"]["ns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_integer().unwrap())
        .collect();
    assert_eq!(ns, vec![2, 3], "ladder normalized ascending:\n{text}");
}

#[test]
fn run_writes_jsonl_and_exits_zero_on_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "experiment = \"arcsin-check\"\nsamples = 5000\nseed = 1\n\
         [domain]\nkind = \"path\"\nk = 2\n",
    )
    .unwrap();
    let out_path = dir.path().join("results.jsonl");
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_path)
        .arg("--threads")
        .arg("2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let jsonl = std::fs::read_to_string(&out_path).unwrap();
    let record: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(record["experiment"], "arcsin-check");
    assert_eq!(record["format_version"], 1);
    assert_eq!(record["config"]["seed"], 1);
}

#[test]
fn run_exits_one_on_failed_verdict() {
    // kappa = 1 makes the edge-oracle verdict fail (and only the oracle
    // itself runs with a miscalibrated constant; others abort).
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("wrong.toml");
    std::fs::write(&cfg, "experiment = \"edge-oracle\"\nsamples = 5000\nkappa = 1.0\n").unwrap();
    let out = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let cfg2 = dir.path().join("dependent.toml");
    std::fs::write(
        &cfg2,
        "experiment = \"arcsin-check\"\nsamples = 5000\nkappa = 1.0\n\
         [domain]\nkind = \"path\"\nk = 2\n",
    )
    .unwrap();
    let out = bin().arg("run").arg(&cfg2).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stderr).unwrap();
    assert!(text.contains("calibration"), "{text}");
}

#[test]
fn seed_override_changes_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("seeded.toml");
    std::fs::write(
        &cfg,
        "experiment = \"edge-oracle\"\nsamples = 2000\nseed = 5\n",
    )
    .unwrap();
    let a = bin().arg("run").arg(&cfg).output().unwrap();
    let b = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--seed")
        .arg("6")
        .output()
        .unwrap();
    let line_a = String::from_utf8(a.stdout).unwrap();
    let line_b = String::from_utf8(b.stdout).unwrap();
    let rec_a: serde_json::Value = serde_json::from_str(line_a.lines().next().unwrap()).unwrap();
    let rec_b: serde_json::Value = serde_json::from_str(line_b.lines().next().unwrap()).unwrap();
    assert_eq!(rec_a["config"]["seed"], 5);
    assert_eq!(rec_b["config"]["seed"], 6);
    assert_ne!(
        rec_a["results"]["simulated_frequency"],
        rec_b["results"]["simulated_frequency"]
    );
}

use std::fs;
use std::process::Command;

fn uwtrust() -> Command {
    Command::new(env!("CARGO_BIN_EXE_uwtrust"))
}

#[test]
fn run_then_verify_and_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("small.toml");
    fs::write(
        &scenario,
        "n_agents = 20\nn_auvs = 4\nmission_duration_s = 1800.0\nwarmup_intervals = 2\n\n[adversary]\nfraction = 0.2\nmix = [\"SelectiveDrop\"]\ndrop_probability = 1.0\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = uwtrust()
        .args(["run", "--mode", "bayesian", "--seed", "2", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let csv = fs::read_to_string(out.join("runs/bayesian_seed2.csv")).unwrap();
    assert!(csv.starts_with("run_id,seed,interval_index,mode,accuracy,"));
    assert_eq!(csv.lines().count(), 61);

    let ledger = out.join("ledgers/bayesian_seed2.jsonl");
    let ok = uwtrust().args(["ledger", "verify", "--file"]).arg(&ledger).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));

    let mut bytes = fs::read(&ledger).unwrap();
    assert!(!bytes.is_empty(), "expected committed blocks");
    let last_line = bytes.iter().filter(|&&b| b == b'\n').count() - 1;
    let at = bytes.len() - 5;
    bytes[at] ^= 0x02;
    fs::write(&ledger, &bytes).unwrap();
    let bad = uwtrust().args(["ledger", "verify", "--file"]).arg(&ledger).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&bad.stdout);
    assert!(msg.contains(&format!("height {last_line}")), "{msg}");
}

#[test]
fn bad_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("typo.toml");
    fs::write(&scenario, "n_agnets = 20\n").unwrap();
    let r = uwtrust()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(2));
    let r = uwtrust()
        .args(["ledger", "verify", "--file"])
        .arg(dir.path().join("missing.jsonl"))
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(2));
    // Interrogator mode without a model is a configuration error.
    let r = uwtrust().args(["run", "--mode", "interrogator", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
}

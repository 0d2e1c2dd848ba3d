use std::process::Command;

fn obsdesign() -> Command {
    Command::new(env!("CARGO_BIN_EXE_obsdesign"))
}

#[test]
fn simulate_fit_profile_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("obs.csv");
    let st = obsdesign()
        .args(["simulate", "--n-s", "11", "--seed", "4", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(st.success());
    let csv = std::fs::read_to_string(&data).unwrap();
    assert_eq!(csv.lines().count(), 12);

    let fit = obsdesign().args(["fit", "--restarts", "10"]).arg(&data).output().unwrap();
    assert!(fit.status.success());
    let json: serde_json::Value = serde_json::from_slice(&fit.stdout).unwrap();
    assert!((json["mle"]["K"].as_f64().unwrap() - 50.0).abs() < 5.0);

    let out = dir.path().join("prof");
    let prof = obsdesign()
        .args(["profile", "--restarts", "10", "--out-dir"])
        .arg(&out)
        .arg(&data)
        .output()
        .unwrap();
    assert!(prof.status.success(), "{}", String::from_utf8_lossy(&prof.stderr));
    let cis: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("intervals.json")).unwrap()).unwrap();
    assert_eq!(cis.as_array().unwrap().len(), 3);
    assert!(out.join("profile_r.csv").exists());
}

#[test]
fn design_commands_are_seeded() {
    let run = || {
        obsdesign()
            .args(["design-fim", "--n-s", "4", "--restarts", "5", "--seed", "2", "--csv"])
            .output()
            .unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let times: Vec<f64> = String::from_utf8(a.stdout)
        .unwrap()
        .trim()
        .split(',')
        .map(|t| t.parse().unwrap())
        .collect();
    assert_eq!(times.len(), 4);
    assert_eq!(*times.last().unwrap(), 80.0);
}

#[test]
fn global_design_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.txt");
    assert!(obsdesign()
        .args(["sobol-cache", "--n-base", "1024", "--out"])
        .arg(&cache)
        .status()
        .unwrap()
        .success());
    let out = obsdesign().args(["design-global", "--n-s", "3", "--sobol-cache"]).arg(&cache).output().unwrap();
    assert!(out.status.success());
    let rec: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec["kind"], "global");
    assert_eq!(rec["times"].as_array().unwrap().len(), 3);
}

#[test]
fn scenario_run_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let file = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/s3_time_perturbation.toml");
    let out = obsdesign()
        .args(["scenario", "run", file, "--replicates", "2", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["replicates.csv", "summary.csv", "summary.json", "designs.csv"] {
        assert!(dir.path().join(format!("s3_time_perturbation_{f}")).exists(), "{f}");
    }
}

#[test]
fn failures_exit_nonzero_with_diagnostic() {
    let infeasible = obsdesign().args(["design-fim", "--n-s", "50"]).output().unwrap();
    assert_eq!(infeasible.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&infeasible.stderr).contains("infeasible"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nseed = 1\nreplicates = 0\n[design]\nsource = \"even\"\nn_s = 5\n[[arms]]\nlabel = \"a\"\ntruth = { kind = \"iid\", variance = 1.0 }\nanalysis = { kind = \"iid\" }\n").unwrap();
    let cfg = obsdesign().args(["scenario", "run"]).arg(&bad).output().unwrap();
    assert_eq!(cfg.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&cfg.stderr).contains("replicates"));
}

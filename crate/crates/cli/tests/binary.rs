use std::path::Path;
use std::process::Command;

fn geomask(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_geomask")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = geomask(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn subcommands_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("config.json");
    std::fs::write(&cfg, r#"{ "n_clusters": 30, "replicates": 1, "prediction_grid": 4 }"#).unwrap();
    let sim = d.join("sim");
    ok(&["simulate", "--config", s(&cfg), "--set", "jitter=dhs", "--out", s(&sim)]);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(sim.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["jitter"], "dhs");
    assert_eq!(manifest["config"]["n_clusters"], 30);

    let clusters = sim.join("rep_000/clusters.csv");
    let regions = sim.join("regions.geojson");
    let fit = d.join("fit.json");
    ok(&[
        "fit",
        "--clusters",
        s(&clusters),
        "--regions",
        s(&regions),
        "--coords",
        "km",
        "--model",
        "j",
        "--jitter",
        "dhs",
        "--rho0",
        "160",
        "--grid",
        "6",
        "--out",
        s(&fit),
    ]);
    let fit_json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    assert_eq!(fit_json["summaries"].as_array().unwrap().len(), 3);

    let truth = sim.join("rep_000/prediction.csv");
    ok(&["predict", "--fit", s(&fit), "--points", s(&truth), "--samples", "100", "--out", s(&d.join("pred.csv"))]);
    ok(&["score", "--jittered", s(&fit), "--truth", s(&truth), "--samples", "100", "--out", s(&d.join("scores"))]);
    assert!(d.join("scores/scores.csv").is_file());

    let dump = d.join("quad.csv");
    ok(&["quad-dump", "--clusters", s(&clusters), "--regions", s(&regions), "--coords", "km", "--jitter", "dhs", "--out", s(&dump)]);
    assert!(std::fs::read_to_string(&dump).unwrap().starts_with("cluster,ring,k,x,y,weight,weight_uncorrected\n"));
}

#[test]
fn bad_overrides_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = geomask(&["simulate", "--set", "no_such_key=1", "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid configuration"));
}

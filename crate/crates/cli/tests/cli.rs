//! Command-line behaviour: outputs, exit codes and error messages.

use std::path::Path;
use std::process::{Command, Output};

fn geoalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoalign")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sample_line(id: &str, lat: f64, lon: f64, street: &str, region: usize) -> String {
    format!(
        "{{\"id\":\"{id}\",\"lat_deg\":{lat:?},\"lon_deg\":{lon:?},\"street\":\"{street}\",\"city\":\"Leeds\",\
         \"country\":\"UK\",\"region_id\":{region},\"image_feature\":[0.5,-0.25]}}"
    )
}

/// Two samples exactly 100 m apart on a meridian plus one 20 km away.
fn write_pair_world(path: &Path) {
    let lat0 = 53.8;
    let dlat = (100.0 / 6_371_000.0f64).to_degrees();
    let lines = [
        sample_line("a", lat0, -1.55, "Park Row", 0),
        sample_line("b", lat0 + dlat, -1.55, "Boar Lane", 0),
        sample_line("far", lat0 + 0.18, -1.55, "Kirkgate", 0),
    ];
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

/// Parses `index -> weight` from inspect-weights output.
fn weights(out: &str) -> Vec<(usize, f64)> {
    out.lines()
        .skip(2)
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].parse().unwrap(), f[f.len() - 1].parse().unwrap())
        })
        .collect()
}

#[test]
fn gen_data_writes_the_default_world() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("world.jsonl");
    let o = geoalign(&["gen-data", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("wrote 800 samples"));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 800);
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "n_cities = 2\nn_citeis = 3\n").unwrap();
    let out = dir.path().join("w.jsonl");
    let o = geoalign(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("n_citeis"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_nonzero() {
    let o = geoalign(&["train", "--out", "x.json"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--data"), "{}", stderr(&o));

    let o = geoalign(&["compare", "--reports", "only.json"]);
    assert!(!o.status.success());

    let o = geoalign(&["gen-data", "--out", "x.jsonl", "--frobnicate"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--frobnicate"));
}

#[test]
fn help_lists_subcommands_and_defaults() {
    let o = geoalign(&["--help"]);
    let text = stdout(&o);
    for cmd in ["gen-data", "train", "eval", "compare", "inspect-weights"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let o = geoalign(&["eval", "--help"]);
    assert!(stdout(&o).contains("[default: test]"));
    assert!(stdout(&o).contains("[default: 1000]"));
}

#[test]
fn inspect_weights_two_point_example() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pair.jsonl");
    write_pair_world(&data);
    let d = data.to_str().unwrap();
    let o = geoalign(&[
        "inspect-weights", "--data", d, "--index", "0",
        "--set", "sigma_m=100", "--set", "alpha_street=0", "--set", "beta_city=0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let w = weights(&stdout(&o));
    assert_eq!(w.len(), 2);
    assert_eq!(w[0].0, 0);
    assert!((w[0].1 - 0.622459).abs() < 1e-6, "{w:?}");
    assert_eq!(w[1].0, 1);
    assert!((w[1].1 - 0.377541).abs() < 1e-6, "{w:?}");

    // nothing within the cutoff: all weight stays on the sample itself
    let o = geoalign(&["inspect-weights", "--data", d, "--index", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(weights(&stdout(&o)), vec![(2, 1.0)]);

    let o = geoalign(&["inspect-weights", "--data", d, "--index", "3"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("out of range"), "{}", stderr(&o));
}

#[test]
fn train_eval_compare_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let world = p("w.jsonl");
    let small = ["--set", "n_cities=3", "--set", "samples_per_street=20"];
    let o = geoalign(&[&["gen-data", "--out", world.as_str()][..], &small].concat());
    assert!(o.status.success(), "{}", stderr(&o));

    for mode in ["sw", "baseline"] {
        let ck = p(&format!("{mode}.json"));
        let o = geoalign(&[
            "train", "--data", &world, "--mode", mode, "--out", &ck,
            "--set", "epochs=3", "--set", "batch_size=16",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains(&format!("mode {mode}")));
        let log = std::fs::read_to_string(format!("{ck}.log.jsonl")).unwrap();
        assert!(log.lines().count() >= 3);

        let rep = p(&format!("{mode}.report.json"));
        let pq = p(&format!("{mode}.queries.jsonl"));
        let o = geoalign(&["eval", "--data", &world, "--checkpoint", &ck, "--report", &rep, "--per-query", &pq]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains(mode));
        assert_eq!(std::fs::read_to_string(&pq).unwrap().lines().count(), 12);
    }

    let o = geoalign(&["compare", "--reports", &p("sw.report.json"), &p("baseline.report.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("R@1") && text.contains("City-Align"));
    assert!(text.contains('*'));

    let o = geoalign(&["eval", "--data", &world, "--checkpoint", &p("missing.json"), "--report", &p("r.json")]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));
}

//! End-to-end runs of the `cae-sched` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cae_sched::reference_scenario;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cae-sched"))
}

fn write_scenario(dir: &Path, ps: f64, delay: u8, f_max: f64) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, reference_scenario(ps, delay, f_max).to_json()).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn records(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn validate_accepts_good_and_rejects_bad_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_scenario(dir.path(), 0.4, 0, 0.4);
    assert_eq!(run(bin().args(["validate", "--scenario"]).arg(&good)).status.code(), Some(0));

    let bad = dir.path().join("bad.json");
    let mut sc = reference_scenario(0.4, 0, 0.4);
    sc.sources[0].transition[0][0] = 0.5;
    sc.channel.p_success = 1.5;
    std::fs::write(&bad, sc.to_json()).unwrap();
    let out = bin().args(["validate", "--scenario"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("source 1") && msg.contains("p_success"), "{msg}");

    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/reference.json");
    let sc = cae_sched::validate_scenario(cae_sched::Scenario::load(&shipped).unwrap()).unwrap();
    let want = reference_scenario(0.4, 0, 0.4);
    assert_eq!((sc.channel, sc.f_max), (want.channel, want.f_max));
    for (a, b) in sc.sources.iter().zip(&want.sources) {
        assert_eq!((&a.cae, a.weight), (&b.cae, b.weight));
        let flat = |m: &[Vec<f64>]| m.concat();
        assert!(flat(&a.transition).iter().zip(flat(&b.transition)).all(|(x, y)| (x - y).abs() < 1e-12));
    }
    assert_eq!(run(bin().args(["validate", "--scenario"]).arg(&shipped)).status.code(), Some(0));

    let missing = bin().args(["validate", "--scenario", "/nonexistent/x.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn single_point_search_finds_the_reference_multiplier() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), 0.4, 0, 0.4);
    let out_dir = dir.path().join("search");
    let out = run(bin().args(["search", "--method", "insect", "--scenario"]).arg(&sc).arg("--out").arg(&out_dir));
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["gamma"].as_f64().unwrap() - 10.0).abs() <= 1e-3);
    assert!(out_dir.join("trace.csv").exists());
    let policy = cae_sched::Policy::load(out_dir.join("policy.json")).unwrap();
    assert_eq!(policy.kind(), "mixture");
}

#[test]
fn solve_and_simulate_round_trip_a_policy_document() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), 0.4, 0, 0.4);
    let pol = dir.path().join("pol.json");
    let solved = run(bin().args(["solve", "--lambda", "5", "--scenario"]).arg(&sc).arg("--out").arg(&pol));
    assert_eq!(solved.status.code(), Some(0));
    let trace = dir.path().join("trace.csv");
    let sim = run(bin()
        .args(["simulate", "--horizon", "1000", "--seed", "3", "--scenario"])
        .arg(&sc)
        .arg("--policy")
        .arg(&pol)
        .arg("--trace")
        .arg(&trace));
    assert_eq!(sim.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&sim.stdout).unwrap();
    assert_eq!(v["horizon"], 1000);
    assert_eq!(records(&trace).1.len(), 1000);

    let dpp = run(bin().args(["simulate", "--method", "dpp", "--horizon", "1000", "--scenario"]).arg(&sc));
    let v: serde_json::Value = serde_json::from_slice(&dpp.stdout).unwrap();
    assert!(v["queue"]["max_z"].as_f64().is_some());
}

#[test]
fn learn_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), 0.4, 0, 0.4);
    let out_dir = dir.path().join("learn");
    let out = run(bin()
        .args(["learn", "--lambda", "2", "--sweeps", "50", "--eval-horizon", "1000", "--checkpoint-every", "25"])
        .arg("--scenario")
        .arg(&sc)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(out.status.code(), Some(0));
    assert!(out_dir.join("q.json").exists() && out_dir.join("policy.json").exists());
    assert_eq!(records(&out_dir.join("checkpoints.csv")).1.len(), 2);
}

#[test]
fn average_error_falls_as_the_channel_improves() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), 0.4, 0, 0.4);
    let out_dir = dir.path().join("fig");
    let out = run(bin()
        .args(["sweep", "--method", "insect,sa", "--p-success", "0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0"])
        .args(["--delay", "0,1", "--horizon", "0", "--jobs", "2", "--scenario"])
        .arg(&sc)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(out.status.code(), Some(0));
    let (h, rows) = records(&out_dir.join("results.csv"));
    assert_eq!(rows.len(), 9 * 2 * 2);
    let (m, d, c, ps) = (column(&h, "method"), column(&h, "delay"), column(&h, "C"), column(&h, "p_success"));
    for delay in ["0", "1"] {
        let curve: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r[m] == "insect" && r[d] == delay)
            .map(|r| (r[ps].parse().unwrap(), r[c].parse().unwrap()))
            .collect();
        assert_eq!(curve.len(), 9);
        for w in curve.windows(2) {
            assert!(w[0].0 < w[1].0 && w[1].1 <= w[0].1 + 1e-9, "d={delay}: {curve:?}");
        }
    }
}

#[test]
fn error_stops_improving_past_the_unconstrained_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), 0.6, 0, 0.4);
    let out_dir = dir.path().join("fig");
    let out = run(bin()
        .args(["sweep", "--method", "insect", "--f-max", "0.2,0.3,0.4,0.6,0.8185,0.9,1.0"])
        .args(["--delay", "0,1", "--horizon", "0", "--scenario"])
        .arg(&sc)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(out.status.code(), Some(0));
    let (h, rows) = records(&out_dir.join("results.csv"));
    let (d, c, f) = (column(&h, "delay"), column(&h, "C"), column(&h, "f_max"));
    let curve = |delay: &str, from: f64| -> Vec<f64> {
        rows.iter()
            .filter(|r| r[d] == delay && r[f].parse::<f64>().unwrap() >= from)
            .map(|r| r[c].parse().unwrap())
            .collect()
    };
    for (delay, from) in [("0", 0.8185), ("1", 0.3)] {
        let flat = curve(delay, from);
        assert!(flat.len() >= 3);
        assert!(flat.iter().all(|x| (x - flat[0]).abs() <= 1e-6), "d={delay}: {flat:?}");
    }
    // below the threshold the budget still binds
    let d0 = curve("0", 0.0);
    assert!(d0[0] > d0[d0.len() - 1] + 1e-3);
}

#[test]
fn manifest_rerun_is_bit_identical_and_failures_are_partial() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), 0.4, 0, 0.4);
    let first = dir.path().join("a");
    // f_max = 0 is an invalid budget: that row fails, the rest must not
    let out = bin()
        .args(["sweep", "--method", "insect,dpp,sa,rvi", "--p-success", "0.3,0.7", "--f-max", "0.4,0"])
        .args(["--lambda", "4", "--horizon", "20000", "--seed", "5", "--jobs", "2", "--scenario"])
        .arg(&sc)
        .arg("--out")
        .arg(&first)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, a) = records(&first.join("results.csv"));
    let status = column(&h, "status");
    assert_eq!(a.len(), 16);
    assert_eq!(a.iter().filter(|r| r[status] == "error").count(), 8);
    assert!(a.iter().filter(|r| r[status] == "ok").all(|r| !r[column(&h, "sim_C")].is_empty()));

    let second = dir.path().join("b");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(first.join("manifest.json"))
        .arg("--out")
        .arg(&second)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let (_, b) = records(&second.join("results.csv"));
    let wall = column(&h, "wall_time_s");
    for (x, y) in a.iter().zip(&b) {
        for (i, (u, v)) in x.iter().zip(y).enumerate() {
            if i != wall {
                assert_eq!(u, v, "column {}", h[i]);
            }
        }
    }
    assert!(first.join("traces").read_dir().unwrap().count() >= 2);
}

#[test]
fn bad_sweep_configuration_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), 0.4, 0, 0.4);
    let out = bin().args(["sweep", "--method", "sa", "--jobs", "0", "--scenario"]).arg(&sc).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["sweep", "--method", "nonsense", "--scenario"]).arg(&sc).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

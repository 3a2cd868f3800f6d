use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn pgg(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgg"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("PGG_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

/// Mean-reverting panel: c_{t+1} = c_t + 0.4 (8 − c_t) + small deterministic jitter.
fn ar_panel(path: &Path) {
    let mut s = String::from("player_id,village_id,group_id,round,contribution\n");
    let mut state: u64 = 12345;
    let mut jitter = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.6
    };
    for v in 0..20 {
        for g in 0..5 {
            for i in 0..5 {
                let mut c: f64 = ((v * 25 + g * 5 + i) % 13) as f64;
                for t in 1..=10 {
                    writeln!(s, "v{v}g{g}p{i},v{v},v{v}g{g},{t},{:.4}", c.clamp(0.0, 12.0)).unwrap();
                    c += 0.4 * (8.0 - c) + jitter();
                }
            }
        }
    }
    fs::write(path, s).unwrap();
}

#[test]
fn help_lists_global_flags_and_subcommands() {
    let o = Command::new(env!("CARGO_BIN_EXE_pgg")).arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--out", "--threads", "--strict"] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
    for sub in [
        "simulate", "analyze-singular", "welfare", "simulate-fermi", "calibrate", "drift", "hmm", "hazards",
        "cluster", "flips", "critical-mass", "early-warn", "state-logit", "iv", "backout",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let o = Command::new(env!("CARGO_BIN_EXE_pgg")).args(["calibrate", "--help"]).output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("--seed") && text.contains("--grid") && text.contains("--target"));
}

#[test]
fn stochastic_subcommands_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = pgg(dir.path(), &["simulate-fermi", "--d", "1", "--k", "0.5"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--seed"));
}

#[test]
fn calibrate_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("target.json");
    fs::write(&target, r#"{"p": [[0.85, 0.15], [0.3, 0.7]]}"#).unwrap();
    let t = target.to_str().unwrap();
    let args = |threads: &'static str| {
        vec![
            "--threads", threads, "calibrate", "--target", t, "--grid", "d=-1:2:0.5,k=0:1:0.5", "--grid-reps", "40",
            "--refine-reps", "80", "--seed", "9",
        ]
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&pgg(&a, &args("1"))), 0);
    assert_eq!(code(&pgg(&b, &args("4"))), 0);
    let fa = fs::read(a.join("calibration.json")).unwrap();
    assert_eq!(fa, fs::read(b.join("calibration.json")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&fa).unwrap();
    let (d, k, kd) = (v["d_hat"].as_f64().unwrap(), v["k_hat"].as_f64().unwrap(), v["kd_hat"].as_f64().unwrap());
    assert!((d * k - kd).abs() < 1e-9);
}

#[test]
fn drift_locates_the_attractor_of_a_mean_reverting_panel() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("panel.csv");
    ar_panel(&panel);
    let out = dir.path().join("drift");
    let o = pgg(&out, &["drift", "--input", panel.to_str().unwrap(), "--bootstrap", "100", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit = json(&out.join("drift.json"));
    let c_star = fit["c_star"].as_f64().expect("a downward crossing");
    assert!((c_star - 8.0).abs() < 0.5, "c* = {c_star}");
    let curve = fs::read_to_string(out.join("drift_curve.csv")).unwrap();
    assert!(curve.starts_with("c,m_hat,band_lo,band_hi"));
    assert_eq!(curve.lines().count(), 201);
}

#[test]
fn missing_input_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = pgg(dir.path(), &["hazards", "--input", "/nonexistent/panel.csv"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn malformed_panel_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "player_id,village_id,group_id,round,contribution\np1,v1,g1,1,seven\n").unwrap();
    let o = pgg(&dir.path().join("o"), &["hazards", "--input", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = pgg(&dir.path().join("o"), &["flips", "--input", bad.to_str().unwrap(), "--threshold", "sometimes"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn strict_turns_warnings_into_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // strong altruism pushes the singular strategy past the endowment
    let args = ["analyze-singular", "--d", "20"];
    let o = pgg(&dir.path().join("lax"), &args);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning:"));
    let strict = dir.path().join("strict");
    let mut with = vec!["--strict"];
    with.extend(args);
    assert_eq!(code(&pgg(&strict, &with)), 3);
    // the manifest is still written and records the warning
    let m = json(&strict.join("manifest.json"));
    assert_eq!(m["warnings"].as_array().unwrap().len(), 1);
    // no warnings: strict is a no-op
    assert_eq!(code(&pgg(&dir.path().join("ok"), &["--strict", "analyze-singular", "--d", "1"])), 0);
}

#[test]
fn manifest_digests_match_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(code(&pgg(&sim, &["simulate", "--seed", "5", "--villages", "2", "--h", "0.2"])), 0);
    let panel = sim.join("panel.csv");
    let out = dir.path().join("hz");
    assert_eq!(code(&pgg(&out, &["hazards", "--input", panel.to_str().unwrap(), "--threshold", "fixed:6"])), 0);

    let m = json(&out.join("manifest.json"));
    assert_eq!(m["subcommand"], "hazards");
    assert_eq!(m["config"]["states"]["threshold"], "fixed:6");
    assert!(m["seed"].is_null());
    let digest = |p: &Path| hex::encode(Sha256::digest(fs::read(p).unwrap()));
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap(), digest(&panel));
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    for o in outputs {
        assert_eq!(o["sha256"].as_str().unwrap(), digest(Path::new(o["path"].as_str().unwrap())));
    }
    let sm = json(&sim.join("manifest.json"));
    assert_eq!(sm["seed"], 5);
}

#[test]
fn simulate_round_trips_through_the_panel_loader() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(code(&pgg(&sim, &["simulate", "--seed", "8", "--villages", "3", "--rounds", "6"])), 0);
    let out = dir.path().join("fl");
    let o = pgg(
        &out,
        &["flips", "--input", sim.join("panel.csv").to_str().unwrap(), "--rounds", "6"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let f = json(&out.join("flips.json"));
    assert_eq!(f["flips"]["n_players"], 150);
    assert_eq!(f["meta"]["T"], 6);
}

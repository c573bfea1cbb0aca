use std::path::Path;
use std::process::{Command, Output};

fn odyn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odyn")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn toy_writes_the_four_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let o = odyn(&["toy", "--out", "runs/"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["grand-l", "grand++-l", "graphcon-tran", "bimp"] {
        let text = std::fs::read_to_string(dir.path().join("runs").join(format!("{name}.csv"))).unwrap();
        assert!(text.starts_with("t,node,option,value\n0,0,0,0.43\n"), "{name}");
        // 401 snapshots of a 3x3 state
        assert_eq!(text.lines().count(), 1 + 401 * 9, "{name}");
    }
}

#[test]
fn bifurcation_branch_count_changes_near_a_quarter() {
    let dir = tempfile::tempdir().unwrap();
    let o = odyn(
        &["bifurcation", "--d", "1", "--alpha", "1", "--u-min", "0.05", "--u-max", "0.6", "--points", "112"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut counts: Vec<(f64, usize)> = Vec::new();
    for line in text.lines().skip(1) {
        let u: f64 = line.split(',').next().unwrap().parse().unwrap();
        match counts.last_mut() {
            Some((last, n)) if *last == u => *n += 1,
            _ => counts.push((u, 1)),
        }
    }
    assert_eq!(counts.len(), 112);
    let first_three = counts.iter().find(|c| c.1 == 3).unwrap().0;
    assert!((first_three - 0.25).abs() < 0.01, "{first_three}");
    assert!(counts.iter().all(|&(u, n)| if u < first_three { n == 1 } else { n == 3 }));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let g = r#"{"n":4,"edges":[[0,1,1.0],[1,0,1.0],[1,2,2.0],[2,1,2.0],[2,3,1.0],[3,2,1.0]]}"#;
    std::fs::write(dir.path().join("g.json"), g).unwrap();
    let args = ["simulate", "--graph", "g.json", "--seed", "7", "--steps", "50", "--record-every", "5"];
    let a = odyn(&args, dir.path());
    let b = odyn(&args, dir.path());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let c = odyn(&["simulate", "--graph", "g.json", "--seed", "8", "--steps", "50", "--record-every", "5"], dir.path());
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"kernel": "laplacian", "dt": 0.1, "steps": 30}"#).unwrap();
    let o = odyn(&["energy", "--config", "c.json", "--steps", "10"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().last().unwrap().starts_with("1,"), "{text}");

    std::fs::write(dir.path().join("bad.json"), r#"{"nonsense": 1}"#).unwrap();
    assert_eq!(code(&odyn(&["energy", "--config", "bad.json"], dir.path())), 1);
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["simulate", "--kernel", "nope"],
        vec!["simulate", "--dt", "1.5"],
        vec!["simulate", "--b-mode", "file"],
        vec!["bifurcation", "--u-min", "0.6", "--u-max", "0.1"],
        vec!["verify", "--only", "13"],
        vec!["plot", "--input", "missing.csv"],
    ] {
        let o = odyn(&args, dir.path());
        assert_eq!(code(&o), 1, "{args:?}");
        assert!(o.stdout.is_empty(), "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
    assert_eq!(code(&odyn(&["--help"], dir.path())), 0);
    assert_eq!(code(&odyn(&["--version"], dir.path())), 0);
}

#[test]
fn blow_up_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = odyn(&["simulate", "--kernel", "laplacian", "--dt", "10", "--steps", "2000"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn verify_reports_json_and_signals_failures() {
    let dir = tempfile::tempdir().unwrap();
    let o = odyn(&["verify", "--only", "2,3"], dir.path());
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["criteria"].as_array().unwrap().len(), 2);

    // criterion 4 cannot be met at the bifurcation point; see the README
    let o = odyn(&["verify", "--only", "4"], dir.path());
    assert_eq!(code(&o), 3);
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["criteria"][0]["passed"], false);
    let failures: serde_json::Value = serde_json::from_slice(
        o.stderr
            .split(|&b| b == b'\n')
            .take_while(|l| !l.starts_with(b"error:"))
            .collect::<Vec<_>>()
            .join(&b'\n')
            .as_slice(),
    )
    .unwrap();
    assert_eq!(failures[0]["id"], 4);
}

#[test]
fn plot_renders_every_schema() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&odyn(&["toy", "--out", "runs", "--record-every", "20"], p)), 0);
    assert_eq!(code(&odyn(&["bifurcation", "--out", "bif.csv"], p)), 0);
    assert_eq!(code(&odyn(&["train", "--epochs", "3", "--out", "hist.csv"], p)), 0);
    for input in ["runs/bimp.csv", "runs/grand-l-metrics.csv", "bif.csv", "hist.csv"] {
        let o = odyn(&["plot", "--input", input, "--out", "fig.svg"], p);
        assert_eq!(code(&o), 0, "{input}: {}", String::from_utf8_lossy(&o.stderr));
        let svg = std::fs::read_to_string(p.join("fig.svg")).unwrap();
        assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""), "{input}");
        assert!(!svg.contains("href"), "{input}");
    }
}

#[test]
fn gradcheck_emits_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = odyn(&["gradcheck", "--seed", "3"], dir.path());
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["rel_error"].as_f64().unwrap() < 1e-6);
    assert!(r["inf_norm"].as_f64().unwrap() <= r["bound"].as_f64().unwrap());
}

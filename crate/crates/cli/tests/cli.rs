use std::process::{Command, Output};

fn htype(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htype"))
        .args(args)
        .env("HTYPE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("valid json")
}

#[test]
fn k2_at_maximiser_is_exactly_two() {
    let o = htype(&["poly", "k2", "--group", "heisenberg:1", "--t", "1/3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "2");
    let o = htype(&["poly", "k2", "--group", "heisenberg:2", "--t", "2/9"]);
    assert_eq!(stdout(&o).trim(), "11/7");
}

#[test]
fn heat_of_polynomial() {
    let o = htype(&["poly", "heat", "--t", "1/2", "--poly", "x1^2"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "1 + 1 * x1^2");
}

#[test]
fn kernel_value_at_origin() {
    let o = htype(&["kernel", "eval", "--group", "heisenberg:1", "--t", "1", "--x", "0,0", "--z", "0"]);
    assert!(o.status.success());
    let v = json(&o);
    let p = v["value"].as_f64().unwrap();
    assert!((p - 0.0625).abs() < 1e-8);
    assert!(v["error_estimate"].as_f64().unwrap() < 1e-8);
    // 17 significant digits.
    assert!(stdout(&o).contains("\"value\": 6.2500000000000"));
}

#[test]
fn negative_coordinates_are_accepted() {
    let o = htype(&["geodesy", "dist", "--x", "-1,0.5", "--z", "-0.3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(json(&o)["distance"].as_f64().unwrap() > 1.0);
}

#[test]
fn invalid_group_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"n":1,"m":1,"J":[[0,1,1,0]]}"#).unwrap();
    let o = htype(&["group", "validate", "--file", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("axiom violation"));
}

#[test]
fn exported_group_validates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.json");
    let o = htype(&["group", "export", "--group", "quaternionic:1", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let o = htype(&["group", "validate", "--file", path.to_str().unwrap()]);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["m"].as_u64(), Some(3));
    assert_eq!(v["exact"].as_bool(), Some(true));
    let o = htype(&["kernel", "mass", "--group", path.to_str().unwrap()]);
    assert!(json(&o)["deviation"].as_f64().unwrap().abs() < 1e-4);
}

#[test]
fn usage_errors_name_the_flag() {
    let o = htype(&["kernel", "eval", "--t", "1", "--x", "0,0", "--z", "0", "--bogus", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--bogus"));
    let o = htype(&["kernel", "eval", "--t", "1", "--x", "0", "--z", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--x"));
    let o = htype(&["poly", "k2", "--t", "abc"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--t"));
}

#[test]
fn help_for_every_subcommand() {
    let paths: &[&[&str]] = &[
        &["group", "validate"],
        &["group", "export"],
        &["kernel", "eval"],
        &["kernel", "mass"],
        &["kernel", "grid"],
        &["geodesy", "dist"],
        &["geodesy", "phi"],
        &["geodesy", "phi-inv"],
        &["geodesy", "jacobian"],
        &["poly", "k2"],
        &["poly", "heat"],
        &["verify"],
    ];
    for p in paths {
        let mut args = p.to_vec();
        args.push("--help");
        let o = htype(&args);
        assert!(o.status.success(), "{p:?}");
        assert!(stdout(&o).contains("Usage"), "{p:?}");
    }
}

#[test]
fn reports_are_reproducible_apart_from_timestamp() {
    let run = || {
        let mut v = json(&htype(&["verify", "optimal", "--seed", "5"]));
        v.as_object_mut().unwrap().remove("timestamp");
        v
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a["optimal_constant"]["t_max"], "1/3");
    assert_eq!(a["passed"], true);

    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.json");
    let p2 = dir.path().join("b.json");
    for p in [&p1, &p2] {
        let o = htype(&["verify", "p1", "--out", p.to_str().unwrap()]);
        assert!(o.status.success());
    }
    let strip = |p: &std::path::Path| {
        let text = std::fs::read_to_string(p).unwrap();
        text.lines().filter(|l| !l.contains("\"timestamp\"")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip(&p1), strip(&p2));
}

#[test]
fn witness_csv_and_kernel_grid_csv() {
    let o = htype(&["verify", "jacobian", "--format", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("estimate_id,witness,label,ratio,r,rho,point"));
    assert_eq!(text.lines().count(), 3);
    let o = htype(&["kernel", "grid", "--nr", "3", "--nz", "2"]);
    let text = stdout(&o);
    assert!(text.starts_with("r,zeta,p,grad_x_coeff,grad_z_coeff,error_estimate"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn failing_suite_exits_two() {
    let o = htype(&[
        "verify",
        "p1",
        "--max-subdivisions",
        "16",
        "--rel-tol",
        "1e-13",
        "--abs-tol",
        "1e-300",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let v = json(&o);
    assert_eq!(v["passed"], false);
    assert!(!v["estimates"][0]["failures"].as_array().unwrap().is_empty());
}

use std::process::{Command, Output};

fn zermelo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zermelo")).args(args).env_remove("ZERMELO_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn lists_builtins() {
    let out = zermelo(&["scenario", "list"]);
    assert!(out.status.success());
    let names = stdout(&out);
    for name in ["euclidean_n2", "funk_n3", "strong_wind_cone", "bh_minimal_circle"] {
        assert!(names.lines().any(|l| l == name), "{name}");
    }
}

#[test]
fn show_then_validate_round_trips() {
    let shown = stdout(&zermelo(&["scenario", "show", "-s", "funk_n2"]));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("funk.toml");
    std::fs::write(&path, &shown).unwrap();
    let out = zermelo(&["scenario", "validate", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("mild"));
    let again = stdout(&zermelo(&["scenario", "show", "--config", path.to_str().unwrap()]));
    assert_eq!(shown, again);
}

#[test]
fn parse_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\ndim = = 2\n").unwrap();
    let out = zermelo(&["scenario", "validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2:"));
    assert_eq!(zermelo(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(zermelo(&["eval", "metric", "-s", "funk_n2", "--point", "0,q", "--vector", "1,0"]).status.code(), Some(2));
    assert_eq!(zermelo(&["eval", "metric", "-s", "funk_n2", "--point", "5,0", "--vector", "1,0"]).status.code(), Some(2));
}

#[test]
fn evaluates_funk_metric() {
    // outward unit vector at radius 1/2: F = 1 / (1 - r)
    let out = zermelo(&["eval", "metric", "-s", "funk_n2", "--point", "0.5,0", "--vector", "1,0"]);
    let value: f64 = stdout(&out).trim().parse().unwrap();
    assert!((value - 2.0).abs() < 1e-12);
}

#[test]
fn json_switches_format() {
    let out = zermelo(&["--json", "curvature", "nonlinear", "-s", "funk_n2", "--point", "0.3,0"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - (1.0 / 0.3 - 2.0)).abs() < 1e-6);
}

#[test]
fn verify_exit_codes() {
    let ok = zermelo(&["verify", "-s", "euclidean_n2"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).lines().all(|l| !l.starts_with("FAIL")));
    let strict = zermelo(&["verify", "-s", "funk_n2", "--filter", "round_spheres", "--tol", "1e-300"]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn seed_env_var_is_the_default() {
    let run = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_zermelo"));
        cmd.args(["--json", "verify", "-s", "constant_wind", "--filter", "transfer[norm]"]);
        match seed {
            Some(s) => cmd.env("ZERMELO_SEED", s),
            None => cmd.env_remove("ZERMELO_SEED"),
        };
        let v: serde_json::Value = serde_json::from_slice(&cmd.output().unwrap().stdout).unwrap();
        v["seed"].as_u64().unwrap()
    };
    assert_eq!(run(None), 0);
    assert_eq!(run(Some("17")), 17);
}

#[test]
fn emits_profile_and_fan() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("profile.csv");
    let out = zermelo(&[
        "emit", "profile", "-s", "funk_n3", "--direction", "1,0,0", "--from", "0.6", "--to", "0.7", "--count", "101",
        "--out", table.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r,mean_curvature"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    let crossing = rows.windows(2).find(|w| w[0].1 > 0.0 && w[1].1 <= 0.0).unwrap();
    assert!((crossing[0].0 - 2.0 / 3.0).abs() < 1e-3);

    let fan = dir.path().join("fan.csv");
    let out = zermelo(&["emit", "fan", "-s", "funk_n2", "--point", "0.2,0", "--count", "8", "--out", fan.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&fan).unwrap();
    assert!(text.starts_with("path,index,t,x0,x1\n"));
    assert!(text.lines().count() > 8);
}

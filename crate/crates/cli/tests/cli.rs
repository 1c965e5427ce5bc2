use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.cfg"))
}

fn hjblab(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjblab"))
        .args(args)
        .env("HJBLAB_OUT", out_root)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn summary(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().rev().find(|l| l.starts_with('{')).expect("json summary on stderr");
    serde_json::from_str(line).unwrap()
}

#[test]
fn catalog_lists_families_into_env_root() {
    let root = tempfile::tempdir().unwrap();
    let out = hjblab(&["catalog"], root.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["counterexample", "bang_bang", "smooth_baseline", "tabulated"] {
        assert!(text.contains(name), "{text}");
    }
    assert!(root.path().join("catalog/manifest.json").is_file());
    assert!(root.path().join("catalog/catalog.json").is_file());
}

#[test]
fn policy_iter_on_bang_bang_exits_zero() {
    let root = tempfile::tempdir().unwrap();
    let dest = root.path().join("pi");
    let cfg = scenario("bang_bang");
    let out = hjblab(
        &["policy-iter", "--config", cfg.to_str().unwrap(), "--out", dest.to_str().unwrap(), "--threads", "2"],
        root.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trace.csv", "value.csv", "policy.csv", "manifest.json"] {
        assert!(dest.join(f).is_file(), "{f}");
    }
}

#[test]
fn invalid_config_exits_two_with_field_path() {
    let root = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("bang_bang")).unwrap().replace("nt = 128", "nt = 0");
    let cfg = root.path().join("bad.cfg");
    std::fs::write(&cfg, text).unwrap();
    let out = hjblab(&["solve-hjb", "--config", cfg.to_str().unwrap()], root.path());
    assert_eq!(out.status.code(), Some(2));
    let s = summary(&out);
    assert_eq!(s["status"], "failed");
    assert!(s["error"].as_str().unwrap().contains("time.nt"), "{s}");
}

#[test]
fn failed_checks_exit_one_with_their_names() {
    // Paths leave the small box, so the simulated cost misses the boundary data.
    let root = tempfile::tempdir().unwrap();
    let cfg = scenario("counterexample_sweep");
    let out = hjblab(&["simulate", "--config", cfg.to_str().unwrap()], root.path());
    assert_eq!(out.status.code(), Some(1));
    let s = summary(&out);
    let names: Vec<&str> = s["failed_checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, vec!["simulate.cross_route"]);
    assert!(s["warnings"].as_u64().unwrap() >= 1);
}

#[test]
fn strict_turns_warnings_into_failure() {
    let root = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("step_drift"))
        .unwrap()
        .replace("eps = [0.4, 0.2, 0.1, 0.05]", "eps = [0.4, 0.2, 0.1, 0.05, 0.01]");
    let cfg = root.path().join("refused.cfg");
    std::fs::write(&cfg, text).unwrap();
    let relaxed = hjblab(&["mollify-sweep", "--config", cfg.to_str().unwrap()], root.path());
    assert_eq!(relaxed.status.code(), Some(0), "{}", String::from_utf8_lossy(&relaxed.stderr));
    let strict = hjblab(&["mollify-sweep", "--strict", "--config", cfg.to_str().unwrap()], root.path());
    assert_eq!(strict.status.code(), Some(1));
    assert!(summary(&strict)["error"].as_str().unwrap().contains("--strict"));
}

#[test]
fn seed_override_lands_in_manifest() {
    let root = tempfile::tempdir().unwrap();
    let cfg = scenario("bang_bang");
    let out = hjblab(
        &["simulate", "--config", cfg.to_str().unwrap(), "--seed-override", "4242"],
        root.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.path().join("simulate/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"], serde_json::json!([4242]));
    assert_eq!(m["config"]["mc"]["seed"], 4242);
}

#[test]
fn missing_config_is_an_error() {
    let root = tempfile::tempdir().unwrap();
    let out = hjblab(&["verify"], root.path());
    assert_eq!(out.status.code(), Some(2));
}

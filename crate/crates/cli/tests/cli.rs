use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_voroperc"));
    c.env_remove("VOROPERC_SEED");
    c
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("voroperc-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status,
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

const SPEC: &str = r#"{
  "name": "cli-small",
  "backend": "h2",
  "lambdas": [1.0, 0.3],
  "ps": [0.6, 0.9],
  "estimators": ["factorgraph", "uniqueness", "twopoint"],
  "windows": {"r_in": 0.5, "r_out": 1.5},
  "replicas": 3,
  "seed": 11
}"#;

fn write_spec(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("spec.json");
    fs::write(&p, text).unwrap();
    p
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn bundles_do_not_depend_on_thread_count() {
    let d = scratch("threads");
    let spec = write_spec(&d, SPEC);
    let a = d.join("a");
    let b = d.join("b");
    ok(&bin().args(["run", spec.to_str().unwrap(), "--threads", "1", "--out", a.to_str().unwrap()]).output().unwrap());
    ok(&bin().args(["run", spec.to_str().unwrap(), "--threads", "3", "--out", b.to_str().unwrap()]).output().unwrap());
    let fa = files(&a);
    assert_eq!(fa.len(), 3);
    assert_eq!(fa, files(&b));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["complete"], true);
    assert!(manifest["version"].is_string());
    for f in manifest["files"].as_array().unwrap() {
        assert!(f["discarded"].as_u64().unwrap() <= f["replicas"].as_u64().unwrap());
    }
}

#[test]
fn seed_flag_and_environment() {
    let d = scratch("seed");
    let spec = write_spec(&d, SPEC);
    let run = |out: &Path, seed: Option<&str>, env: Option<&str>| {
        let mut c = bin();
        c.args(["run", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        if let Some(s) = seed {
            c.args(["--seed", s]);
        }
        if let Some(e) = env {
            c.env("VOROPERC_SEED", e);
        }
        ok(&c.output().unwrap());
        files(out)
    };
    let flag = run(&d.join("flag"), Some("99"), None);
    let env = run(&d.join("env"), None, Some("99"));
    let both = run(&d.join("both"), Some("99"), Some("5"));
    let spec_seed = run(&d.join("spec"), None, None);
    assert_eq!(flag, env);
    assert_eq!(flag, both);
    assert_ne!(flag, spec_seed);
}

#[test]
fn validation_errors_exit_2() {
    let d = scratch("invalid");
    let spec = write_spec(
        &d,
        r#"{"name": "bad", "backend": "h2", "lambdas": [], "ps": [0.5], "estimators": ["uniqueness"],
            "windows": {"r_in": 2.0, "r_out": 1.0}, "replicas": 0}"#,
    );
    let o = bin().args(["run", spec.to_str().unwrap(), "--out", d.join("o").to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for field in ["lambdas", "replicas", "windows"] {
        assert!(err.contains(field), "{err}");
    }
    assert!(!d.join("o").exists());

    let o = bin().args(["run", "--preset", "no-such-preset"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let garbage = write_spec(&d, "{not json");
    let o = bin().args(["run", garbage.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plot_curves_and_unknown_ids() {
    let d = scratch("plot");
    let spec = write_spec(&d, SPEC);
    let out = d.join("bundle");
    ok(&bin().args(["run", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]).output().unwrap());
    for curve in ["degree", "uniqueness", "twopoint"] {
        let svg = d.join(format!("{curve}.svg"));
        ok(&bin().args(["plot", out.to_str().unwrap(), curve, "--out", svg.to_str().unwrap()]).output().unwrap());
        let text = fs::read_to_string(&svg).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        ok(&bin().args(["plot", out.to_str().unwrap(), curve, "--out", d.join("again.svg").to_str().unwrap()]).output().unwrap());
        assert_eq!(text, fs::read_to_string(d.join("again.svg")).unwrap(), "layout is deterministic");
    }
    let o = bin().args(["plot", out.to_str().unwrap(), "sigmoid"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let o = bin().arg("selftest").output().unwrap();
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    for suite in ["[geometry]", "[mecke]", "[oracle]"] {
        assert!(text.contains(suite), "{text}");
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn list_names_presets_and_curves() {
    let o = bin().arg("list").output().unwrap();
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("touching-higher-rank") && text.contains("threshold"));
}

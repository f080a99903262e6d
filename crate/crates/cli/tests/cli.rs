use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use timeslice_cli::context::CACHED_KINDS;
use timeslice_cli::LoadedConfig;
use timeslice_core::field_solver::{green_kernel, vacuum_two_point};
use timeslice_core::kernel_cache::{cache_path, read_kernel, HEADER_LEN};
use timeslice_core::KernelKind;

const SMALL: &str = r#"
seed = 11
suites = ["ccr", "green"]

[lattice]
n_t = 8
n_x = 8
dt = 0.5
dx = 1.0

[field]
mass_sq = 0.5

[params.ccr]
samples = 4
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_timeslice"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn verify(suite: &str, config: &Path, extra: &[&str]) -> Output {
    bin().arg("verify").arg(suite).arg("--config").arg(config).args(extra).output().unwrap()
}

fn report_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn strip_wall_time(mut v: Value) -> Value {
    for suite in v["suites"].as_array_mut().unwrap() {
        for r in suite["records"].as_array_mut().unwrap() {
            r.as_object_mut().unwrap().remove("wall_time");
        }
    }
    v
}

#[test]
fn ccr_on_small_lattice_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let report = dir.path().join("r.json");
    let out = verify("ccr", &cfg, &["--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = report_json(&report);
    let records = v["suites"][0]["records"].as_array().unwrap();
    assert!(!records.is_empty());
    for r in records {
        assert_eq!(r["pass"], Value::Bool(true));
        assert!(r["deviation"].as_f64().unwrap() < 1e-10);
    }
    let text = fs::read_to_string(&report).unwrap();
    let at = |k: &str| text.find(&format!("\"{k}\"")).unwrap();
    assert!(at("config_digest") < at("tool_version") && at("tool_version") < at("suites"));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let report = dir.path().join("r.json");
    let out = verify("no-such-suite", &cfg, &["--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!report.exists());
}

#[test]
fn missing_arguments_are_a_usage_error() {
    assert_eq!(bin().arg("verify").arg("ccr").output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(2));
}

#[test]
fn thin_slab_fails_before_any_report() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("n_t = 8", "n_t = 16")
        + "\n[slabs.N]\nt_lo = 5\nt_hi = 8\n\n[params.free-timeslice]\nslab = \"N\"\nsupport_rows = [10, 12]\n";
    let cfg = write_config(dir.path(), "c.toml", &text);
    let report = dir.path().join("r.json");
    let out = verify("free-timeslice", &cfg, &["--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("thickness"));
    assert!(!report.exists());
}

#[test]
fn bad_config_values_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("topology.toml", SMALL.replace("mass_sq = 0.5", "mass_sq = 0.5\npotential = [0.0, 1.0]")),
        ("order.toml", SMALL.to_string()),
        ("syntax.toml", "[lattice\n".to_string()),
    ] {
        let cfg = write_config(dir.path(), name, &text);
        let extra: &[&str] = if name == "order.toml" { &["--order", "9"] } else { &[] };
        assert_eq!(verify("ccr", &cfg, extra).status.code(), Some(2), "{name}");
    }
    assert_eq!(verify("ccr", &dir.path().join("missing.toml"), &[]).status.code(), Some(2));
}

#[test]
fn empty_suite_list_gives_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL.replace(r#"suites = ["ccr", "green"]"#, "suites = []"));
    let report = dir.path().join("r.json");
    let out = verify("all", &cfg, &["--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(report_json(&report)["suites"].as_array().unwrap().len(), 0);
}

#[test]
fn failing_check_exits_with_1_and_reports_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n[tolerances]\n\"ccr.commutator.00\" = 1e-300\n");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let report = dir.path().join("r.json");
    let out = verify("ccr", &cfg, &["--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let v = report_json(&report);
    let failed: Vec<&Value> =
        v["suites"][0]["records"].as_array().unwrap().iter().filter(|r| r["pass"] == Value::Bool(false)).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["check_id"], "ccr.commutator.00");
    assert_eq!(failed[0]["tolerance"].as_f64(), Some(1e-300));
    assert!(failed[0]["deviation"].as_f64().unwrap() > 1e-300);
}

#[test]
fn reruns_are_identical_apart_from_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let (a, b, c) = (dir.path().join("a.json"), dir.path().join("b.json"), dir.path().join("c.json"));
    for p in [&a, &b] {
        assert_eq!(verify("all", &cfg, &["--report", p.to_str().unwrap()]).status.code(), Some(0));
    }
    assert_eq!(strip_wall_time(report_json(&a)), strip_wall_time(report_json(&b)));
    verify("all", &cfg, &["--seed", "12", "--report", c.to_str().unwrap()]);
    assert_ne!(strip_wall_time(report_json(&a)), strip_wall_time(report_json(&c)));
}

#[test]
fn cached_kernels_are_bit_exact_and_transparent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let cache = dir.path().join("cache");
    let out = bin().args(["kernels", "build", "--config"]).arg(&cfg).arg("--cache-dir").arg(&cache).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let op = LoadedConfig::from_path(&cfg).unwrap().config.operator().unwrap();
    for kind in CACHED_KINDS {
        let fresh = match kind {
            KernelKind::TwoPoint => vacuum_two_point(&op).unwrap(),
            _ => green_kernel(&op, kind).unwrap(),
        };
        let cached = read_kernel(fs::File::open(cache_path(&cache, &op, kind)).unwrap(), &op, kind).unwrap();
        let bits = |k: &timeslice_core::Kernel| k.values().iter().flat_map(|c| [c.re.to_bits(), c.im.to_bits()]).collect::<Vec<_>>();
        assert_eq!(bits(&fresh), bits(&cached), "{kind:?}");
    }

    let (plain, cached) = (dir.path().join("plain.json"), dir.path().join("cached.json"));
    verify("all", &cfg, &["--report", plain.to_str().unwrap()]);
    let out = verify("all", &cfg, &["--report", cached.to_str().unwrap(), "--cache-dir", cache.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(strip_wall_time(report_json(&plain)), strip_wall_time(report_json(&cached)));
}

#[test]
fn corrupted_cache_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let cache = dir.path().join("cache");
    bin().args(["kernels", "build", "--config"]).arg(&cfg).arg("--cache-dir").arg(&cache).output().unwrap();
    let op = LoadedConfig::from_path(&cfg).unwrap().config.operator().unwrap();
    let path = cache_path(&cache, &op, KernelKind::Retarded);
    let original = fs::read(&path).unwrap();
    let report = dir.path().join("r.json");
    // A flipped byte in the stored operator hash, then a truncated payload.
    let mut flipped = original.clone();
    flipped[HEADER_LEN - 1] ^= 0xff;
    for bytes in [flipped, original[..original.len() - 16].to_vec()] {
        fs::write(&path, &bytes).unwrap();
        let out = verify("green", &cfg, &["--cache-dir", cache.to_str().unwrap(), "--report", report.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains("kernel cache"));
        assert!(!report.exists());
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        LoadedConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 8);
}

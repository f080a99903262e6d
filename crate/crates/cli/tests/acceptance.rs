//! Acceptance run: one line per criterion, each backed by a shipped config.
//! Exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use timeslice_cli::{run, LoadedConfig, Record, Report, RunOptions};

struct Criterion {
    number: u32,
    title: &'static str,
    config: &'static str,
    /// Only records whose id starts with one of these count.
    prefixes: &'static [&'static str],
    limit: Option<Duration>,
}

const CRITERIA: [Criterion; 8] = [
    Criterion {
        number: 1,
        title: "CCR and Green kernels",
        config: "c1_ccr.toml",
        prefixes: &["ccr.", "green."],
        limit: Some(Duration::from_secs(10)),
    },
    Criterion {
        number: 2,
        title: "star product weights and associativity",
        config: "c2_wick.toml",
        prefixes: &["wick-algebra.weight", "wick-algebra.oracle", "wick-algebra.associativity", "wick-algebra.adjoint"],
        limit: Some(Duration::from_secs(30)),
    },
    Criterion {
        number: 3,
        title: "on-shell ideal",
        config: "c3_ideal.toml",
        prefixes: &["wick-algebra.ideal", "wick-algebra.absorbency", "wick-algebra.quotient"],
        limit: None,
    },
    Criterion {
        number: 4,
        title: "free time slice compression",
        config: "c4_free_timeslice.toml",
        prefixes: &["free-timeslice."],
        limit: Some(Duration::from_secs(120)),
    },
    Criterion {
        number: 5,
        title: "past cone cover bound",
        config: "c5_prop2.toml",
        prefixes: &["prop2."],
        limit: None,
    },
    Criterion {
        number: 6,
        title: "causal factorization",
        config: "c6_factorization.toml",
        prefixes: &["factorization."],
        limit: Some(Duration::from_secs(300)),
    },
    Criterion {
        number: 7,
        title: "b-independence",
        config: "c7_b_independence.toml",
        prefixes: &["b-independence."],
        limit: None,
    },
    Criterion {
        number: 8,
        title: "interacting time slice",
        config: "c8_interacting.toml",
        prefixes: &["interacting-timeslice."],
        limit: Some(Duration::from_secs(600)),
    },
];

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run_config(name: &str) -> Result<(Report, Duration), String> {
    let loaded = LoadedConfig::from_path(&config_path(name)).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let report = run(&loaded, "all", &RunOptions::default()).map_err(|e| e.to_string())?;
    Ok((report, started.elapsed()))
}

fn selected<'a>(c: &Criterion, report: &'a Report) -> Vec<&'a Record> {
    report.records().filter(|r| c.prefixes.iter().any(|p| r.check_id.starts_with(p))).collect()
}

/// What must match bit for bit between runs.
fn fingerprint(report: &Report) -> Vec<(String, String, u64)> {
    report.records().map(|r| (r.check_id.clone(), r.inputs_digest.clone(), r.deviation.to_bits())).collect()
}

fn main() -> ExitCode {
    let mut all_pass = true;
    let mut first_runs = Vec::new();

    for c in &CRITERIA {
        match run_config(c.config) {
            Ok((report, elapsed)) => {
                let records = selected(c, &report);
                let failed: Vec<&str> = records.iter().filter(|r| !r.pass).map(|r| r.check_id.as_str()).collect();
                let within_time = c.limit.is_none_or(|l| elapsed < l);
                let pass = !records.is_empty() && failed.is_empty() && within_time;
                let worst = records
                    .iter()
                    .max_by(|a, b| a.deviation.total_cmp(&b.deviation))
                    .map(|r| format!("max deviation {:.2e} ({})", r.deviation, r.check_id))
                    .unwrap_or_else(|| "no records".into());
                let limit = c.limit.map(|l| format!(" < {}s", l.as_secs())).unwrap_or_default();
                println!(
                    "criterion {} [{}] {}: {}/{} checks pass, {worst}, runtime {:.2}s{limit}",
                    c.number,
                    c.title,
                    if pass { "PASS" } else { "FAIL" },
                    records.len() - failed.len(),
                    records.len(),
                    elapsed.as_secs_f64(),
                );
                for id in failed {
                    println!("    failed: {id}");
                }
                all_pass &= pass;
                first_runs.push(Some(report));
            }
            Err(e) => {
                println!("criterion {} [{}] FAIL: {e}", c.number, c.title);
                all_pass = false;
                first_runs.push(None);
            }
        }
    }

    // Criterion 9: a second run, then explicit 1- and 4-thread pools.
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool");
    let (single, multi) = (pool(1), pool(4));
    let mut mismatches = Vec::new();
    for (c, first) in CRITERIA.iter().zip(&first_runs) {
        let Some(first) = first else {
            mismatches.push(format!("{} (first run failed)", c.config));
            continue;
        };
        let again = run_config(c.config).map(|r| r.0);
        let serial = single.install(|| run_config(c.config)).map(|r| r.0);
        let parallel = multi.install(|| run_config(c.config)).map(|r| r.0);
        for (label, other) in [("rerun", again), ("1 thread", serial), ("4 threads", parallel)] {
            match other {
                Ok(r) if fingerprint(&r) == fingerprint(first) => {}
                Ok(_) => mismatches.push(format!("{} ({label})", c.config)),
                Err(e) => mismatches.push(format!("{} ({label}: {e})", c.config)),
            }
        }
    }
    println!(
        "criterion 9 [determinism] {}: {} configs x (rerun, 1 thread, 4 threads), {} mismatches",
        if mismatches.is_empty() { "PASS" } else { "FAIL" },
        CRITERIA.len(),
        mismatches.len()
    );
    for m in &mismatches {
        println!("    mismatch: {m}");
    }
    all_pass &= mismatches.is_empty();

    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Named verification suites. Each one draws its random inputs from a stream
//! keyed by the run seed and the suite name, runs its checks and returns the
//! records sorted by check id.

mod b_independence;
mod ccr;
mod factorization;
mod free_timeslice;
mod green;
mod interacting;
mod prop2;
mod wick;

use timeslice_core::{WickElement, C64};

use crate::context::Context;
use crate::report::SuiteReport;
use crate::CliError;

pub const NAMES: [&str; 8] = [
    "ccr",
    "green",
    "wick-algebra",
    "free-timeslice",
    "prop2",
    "factorization",
    "b-independence",
    "interacting-timeslice",
];

pub fn run_suite(ctx: &Context, name: &str) -> Result<SuiteReport, CliError> {
    match name {
        "ccr" => ccr::run(ctx),
        "green" => green::run(ctx),
        "wick-algebra" => wick::run(ctx),
        "free-timeslice" => free_timeslice::run(ctx),
        "prop2" => prop2::run(ctx),
        "factorization" => factorization::run(ctx),
        "b-independence" => b_independence::run(ctx),
        "interacting-timeslice" => interacting::run(ctx),
        other => Err(CliError::Usage(format!("unknown suite '{other}'"))),
    }
}

/// `max|a - b|` over all coefficients divided by `scale`; zero when both
/// sides vanish identically.
fn scaled_diff(a: &WickElement, b: &WickElement, scale: f64) -> f64 {
    let d = a.max_abs_diff(b);
    if d == 0.0 {
        0.0
    } else {
        d / scale
    }
}

fn rel(d: f64, scale: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        d / scale
    }
}

fn norm_max(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn id(prefix: &str, i: usize) -> String {
    format!("{prefix}.{i:02}")
}

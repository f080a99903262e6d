use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use timeslice_core::perturbation::{CouplingFunction, FormalSeries};
use timeslice_core::{Region, WickElement, C64};

use crate::config::hex;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub check_id: String,
    pub anchor: String,
    pub inputs_digest: String,
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Seconds. The only field allowed to differ between identical runs.
    pub wall_time: f64,
}

impl Record {
    /// A check passes when `deviation < tolerance`; a zero tolerance demands
    /// an exact zero. NaN never passes.
    pub fn passes(deviation: f64, tolerance: f64) -> bool {
        if tolerance == 0.0 {
            deviation == 0.0
        } else {
            deviation < tolerance
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub records: Vec<Record>,
}

impl SuiteReport {
    pub fn new(suite: &str, mut records: Vec<Record>) -> Self {
        records.sort_by(|a, b| a.check_id.cmp(&b.check_id));
        Self { suite: suite.to_string(), records }
    }

    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub config_digest: String,
    pub tool_version: String,
    pub suites: Vec<SuiteReport>,
}

impl Report {
    pub fn new(config_digest: String, suites: Vec<SuiteReport>) -> Self {
        Self { config_digest, tool_version: TOOL_VERSION.to_string(), suites }
    }

    pub fn all_pass(&self) -> bool {
        self.suites.iter().all(SuiteReport::all_pass)
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.suites.iter().flat_map(|s| &s.records)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_pass() {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn emit(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

/// SHA-256 over a canonical byte encoding of a check's inputs.
#[derive(Default)]
pub struct InputsDigest(Sha256);

impl InputsDigest {
    pub fn new(check_id: &str) -> Self {
        let mut d = Self(Sha256::new());
        d.0.update(check_id.as_bytes());
        d
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn str(mut self, s: &str) -> Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    pub fn values(mut self, v: &[C64]) -> Self {
        for c in v {
            self.0.update(c.re.to_le_bytes());
            self.0.update(c.im.to_le_bytes());
        }
        self
    }

    pub fn element(mut self, a: &WickElement) -> Self {
        for (n, t) in a.grades() {
            self.0.update((n as u64).to_le_bytes());
            let mut entries: Vec<_> = t.iter().collect();
            entries.sort_by(|x, y| x.0.cmp(y.0));
            for (k, v) in entries {
                for p in k {
                    self.0.update(p.to_le_bytes());
                }
                self.0.update(v.re.to_le_bytes());
                self.0.update(v.im.to_le_bytes());
            }
        }
        self
    }

    pub fn series(self, s: &FormalSeries) -> Self {
        s.coeffs().iter().fold(self, |d, c| d.element(c))
    }

    pub fn coupling(mut self, c: &CouplingFunction) -> Self {
        for (p, m, v) in c.entries() {
            for u in [p.t as u64, p.x as u64, m as u64] {
                self.0.update(u.to_le_bytes());
            }
            self.0.update(v.re.to_le_bytes());
            self.0.update(v.im.to_le_bytes());
        }
        self
    }

    pub fn region(mut self, r: &Region) -> Self {
        for p in r.iter() {
            self.0.update((p.t as u64).to_le_bytes());
            self.0.update((p.x as u64).to_le_bytes());
        }
        self
    }

    pub fn finish(self) -> String {
        hex(&self.0.finalize())
    }
}

/// Collects records for one suite, resolving tolerance overrides.
pub struct Recorder<'a> {
    config: &'a crate::VerificationConfig,
    records: Vec<Record>,
}

impl<'a> Recorder<'a> {
    pub fn new(config: &'a crate::VerificationConfig) -> Self {
        Self { config, records: Vec::new() }
    }

    pub fn push(
        &mut self,
        check_id: impl Into<String>,
        anchor: &str,
        inputs_digest: String,
        deviation: f64,
        default_tolerance: f64,
        started: Instant,
    ) {
        let check_id = check_id.into();
        let tolerance = self.config.tolerance(&check_id, default_tolerance);
        self.records.push(Record {
            pass: Record::passes(deviation, tolerance),
            anchor: anchor.to_string(),
            inputs_digest,
            deviation,
            tolerance,
            wall_time: started.elapsed().as_secs_f64(),
            check_id,
        });
    }

    pub fn finish(self, suite: &str) -> SuiteReport {
        SuiteReport::new(suite, self.records)
    }
}

//! Oracle and property suites behind the `verify` command and the
//! acceptance tests. Every check is deterministic given its seed.

pub mod grad;

pub mod dsp_suite;
pub mod flows_suite;
pub mod losses_suite;
pub mod mas_suite;
pub mod sdp_suite;

use std::fmt;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub details: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, details: impl Into<String>) -> Self {
        CheckResult { name: name.into(), passed, details: details.into() }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} — {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.details
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Mas,
    Flows,
    Losses,
    Grad,
    Dsp,
    Sdp,
}

impl Suite {
    pub fn parse(name: &str) -> Option<Vec<Suite>> {
        match name {
            "all" => Some(vec![
                Suite::Mas,
                Suite::Flows,
                Suite::Losses,
                Suite::Grad,
                Suite::Dsp,
                Suite::Sdp,
            ]),
            "mas" => Some(vec![Suite::Mas]),
            "flows" => Some(vec![Suite::Flows]),
            "losses" => Some(vec![Suite::Losses]),
            "grad" => Some(vec![Suite::Grad]),
            "dsp" => Some(vec![Suite::Dsp]),
            "sdp" => Some(vec![Suite::Sdp]),
            _ => None,
        }
    }
}

/// Run one suite's checks with the given base seed.
pub fn run_suite(suite: Suite, seed: u64) -> Vec<CheckResult> {
    match suite {
        Suite::Mas => mas_suite::run(seed),
        Suite::Flows => flows_suite::run(seed),
        Suite::Losses => losses_suite::run(seed),
        Suite::Grad => grad::run(seed),
        Suite::Dsp => dsp_suite::run(seed),
        Suite::Sdp => sdp_suite::run(seed),
    }
}

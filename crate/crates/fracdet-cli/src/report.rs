//! Structured verification reports.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// One check: what was measured, against what tolerance, and the verdict.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckEntry {
    pub id: String,
    pub description: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckEntry {
    /// Pass iff `measured <= tolerance` (both finite).
    pub fn within(id: &str, description: &str, measured: f64, tolerance: f64) -> Self {
        CheckEntry {
            id: String::from(id),
            description: String::from(description),
            measured,
            tolerance,
            pass: measured.is_finite() && measured <= tolerance,
        }
    }

    /// Exactness check: pass iff `measured == 0.0`.
    pub fn exact(id: &str, description: &str, measured: f64) -> Self {
        CheckEntry::within(id, description, measured, 0.0)
    }
}

/// A suite run: entries plus the resolved configuration and version, so a
/// report reproduces itself. `overall_pass` holds iff every entry passes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suite: String,
    pub artifact_version: String,
    pub timestamp_unix: u64,
    pub config: RunConfig,
    pub entries: Vec<CheckEntry>,
    pub overall_pass: bool,
}

impl VerificationReport {
    pub fn new(suite: &str, config: &RunConfig, entries: Vec<CheckEntry>) -> Self {
        let overall_pass = entries.iter().all(|e| e.pass);
        VerificationReport {
            suite: String::from(suite),
            artifact_version: String::from(env!("CARGO_PKG_VERSION")),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: config.clone(),
            entries,
            overall_pass,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Pass/fail lines for the terminal.
    pub fn print_summary(&self) {
        for e in &self.entries {
            println!(
                "[{}] {}: measured {:e} (tol {:e}) - {}",
                if e.pass { "PASS" } else { "FAIL" },
                e.id,
                e.measured,
                e.tolerance,
                e.description
            );
        }
        println!(
            "suite {}: {}",
            self.suite,
            if self.overall_pass { "PASS" } else { "FAIL" }
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overall_pass_iff_all_entries_pass() {
        let config = RunConfig::default();
        let good = CheckEntry::within("a", "fine", 1e-13, 1e-12);
        let bad = CheckEntry::within("b", "broken softmax row", 0.02, 1e-12);
        assert!(good.pass);
        assert!(!bad.pass);
        let report = VerificationReport::new("demo", &config, vec![good.clone()]);
        assert!(report.overall_pass);
        let report = VerificationReport::new("demo", &config, vec![good, bad]);
        assert!(!report.overall_pass);
    }

    #[test]
    fn exact_entries_require_zero() {
        assert!(CheckEntry::exact("a", "identity", 0.0).pass);
        assert!(!CheckEntry::exact("a", "identity", 1e-300).pass);
    }

    #[test]
    fn json_differs_only_in_timestamp_between_runs() {
        let config = RunConfig::default();
        let entries = || vec![CheckEntry::within("a", "x", 0.5, 1.0)];
        let mut a = VerificationReport::new("s", &config, entries());
        let mut b = VerificationReport::new("s", &config, entries());
        a.timestamp_unix = 0;
        b.timestamp_unix = 0;
        assert_eq!(a.to_json(), b.to_json());
    }
}

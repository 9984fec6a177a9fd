//! Machine-readable suite reports: one JSON document plus one CSV per table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One observed-versus-expected comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// Acceptance criterion this check belongs to.
    pub criterion: Option<u32>,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub se: Option<f64>,
    pub pass: bool,
    /// Diagnostic only; excluded from the criterion verdict.
    pub informational: bool,
    pub detail: String,
    pub error: Option<String>,
}

impl CheckRecord {
    pub fn new(
        name: impl Into<String>,
        criterion: u32,
        observed: f64,
        expected: f64,
        tolerance: f64,
        pass: bool,
    ) -> Self {
        Self {
            name: name.into(),
            criterion: Some(criterion),
            observed,
            expected,
            tolerance,
            se: None,
            pass,
            informational: false,
            detail: String::new(),
            error: None,
        }
    }

    /// `observed <= tolerance`, with `expected = 0`.
    pub fn at_most(name: impl Into<String>, criterion: u32, observed: f64, tolerance: f64) -> Self {
        Self::new(name, criterion, observed, 0.0, tolerance, observed <= tolerance)
    }

    /// `|observed - expected| <= z · se`; records the z-score in the detail.
    pub fn z_test(name: impl Into<String>, criterion: u32, observed: f64, expected: f64, se: f64, z: f64) -> Self {
        let diff = (observed - expected).abs();
        let score = if diff == 0.0 { 0.0 } else { diff / se };
        let mut c = Self::new(name, criterion, observed, expected, z, score <= z);
        c.se = Some(se);
        c.detail = format!("z = {score:.3}");
        c
    }

    pub fn failed(name: impl Into<String>, criterion: u32, err: &Error) -> Self {
        let mut c = Self::new(name, criterion, f64::NAN, f64::NAN, f64::NAN, false);
        c.error = Some(err.to_string());
        c
    }

    pub fn with_se(mut self, se: f64) -> Self {
        self.se = Some(se);
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn informational(mut self) -> Self {
        self.informational = true;
        self
    }
}

/// Verdict of one acceptance criterion over its checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub checks: usize,
    pub failed: usize,
    /// Stated runtime budget in seconds, if any.
    pub budget_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Wall-clock timings; the only non-deterministic part of a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub total_seconds: f64,
    /// (criterion id, seconds).
    pub criteria: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment_id: String,
    pub suite: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub criteria: Vec<CriterionResult>,
    pub checks: Vec<CheckRecord>,
    pub tables: Vec<Table>,
    pub wall_clock: WallClock,
    pub pass: bool,
}

impl Report {
    pub fn criterion(&self, id: u32) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| c.id == id)
    }

    pub fn checks_for(&self, id: u32) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(move |c| c.criterion == Some(id))
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| !c.pass && !c.informational)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Report JSON with the wall-clock section blanked; equal across reruns
    /// with the same configuration and seed.
    pub fn numeric_json(&self) -> String {
        let mut r = self.clone();
        r.wall_clock = WallClock::default();
        serde_json::to_string(&r).expect("report serializes")
    }

    /// Writes `report.json` and `<table>.csv` files; returns the paths.
    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = vec![dir.join("report.json")];
        std::fs::write(&paths[0], self.to_json())?;
        for t in &self.tables {
            let p = dir.join(format!("{}.csv", t.name));
            std::fs::write(&p, t.to_csv())?;
            paths.push(p);
        }
        Ok(paths)
    }

    /// One `PASS`/`FAIL` line per criterion.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.criteria {
            let secs = self
                .wall_clock
                .criteria
                .iter()
                .find(|(id, _)| *id == c.id)
                .map_or(f64::NAN, |(_, s)| *s);
            out.push_str(&format!(
                "{} criterion {:>2} {:<28} {}/{} checks ok, {:.1}s{}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.id,
                c.name,
                c.checks - c.failed,
                c.checks,
                secs,
                c.budget_seconds.map_or(String::new(), |b| format!(" (budget {b}s)"))
            ));
        }
        out
    }
}

/// FNV-1a hash of a string, as 16 hex digits.
pub fn fnv_hex(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_test_records_score() {
        let c = CheckRecord::z_test("x", 3, 1.1, 1.0, 0.05, 4.0);
        assert!(c.pass);
        assert_eq!(c.detail, "z = 2.000");
        assert!(!CheckRecord::z_test("x", 3, 1.3, 1.0, 0.05, 4.0).pass);
        assert!(CheckRecord::z_test("x", 3, 1.0, 1.0, 0.0, 4.0).pass);
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec!["1".into(), "2".into()]);
        assert_eq!(t.to_csv(), "a,b\n1,2\n");
    }

    #[test]
    fn fnv_known_values() {
        assert_eq!(fnv_hex(""), "cbf29ce484222325");
        assert_eq!(fnv_hex("a"), "af63dc4c8601ec8c");
    }
}

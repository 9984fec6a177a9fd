//! Experiment orchestration: configuration, suites and reports.
//!
//! Every suite derives its randomness from `Stream::new(seed)` through
//! labelled children (`c<criterion>`, role, replica), so a criterion produces
//! the same numbers whether it runs alone or inside `all`, and regardless of
//! the thread count.

pub mod config;
pub mod report;
pub mod suites;

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{load_config, parse_config, parse_config_with_base, ConfigError, ExperimentConfig};
pub use report::{CheckRecord, CriterionResult, Report, Table, WallClock};

use crate::rng::Stream;
use suites::Section;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Identities,
    Correlations,
    Papangelou,
    Gnz,
    Balance,
    Reversibility,
    Stationarity,
    Scaling,
    All,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::Identities,
        Suite::Correlations,
        Suite::Papangelou,
        Suite::Gnz,
        Suite::Balance,
        Suite::Reversibility,
        Suite::Stationarity,
        Suite::Scaling,
        Suite::All,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::Correlations => "correlations",
            Suite::Papangelou => "papangelou",
            Suite::Gnz => "gnz",
            Suite::Balance => "balance",
            Suite::Reversibility => "reversibility",
            Suite::Stationarity => "stationarity",
            Suite::Scaling => "scaling",
            Suite::All => "all",
        }
    }

    /// Acceptance criteria covered by the suite.
    pub fn criteria(&self) -> Vec<u32> {
        match self {
            Suite::Identities => vec![1, 2, 3],
            Suite::Correlations => vec![4],
            Suite::Papangelou => vec![5],
            Suite::Gnz => vec![6],
            Suite::Balance => vec![7],
            Suite::Reversibility => vec![8],
            Suite::Stationarity => vec![9],
            Suite::Scaling => vec![10],
            Suite::All => (1..=11).collect(),
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .iter()
            .copied()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

/// (id, name, runtime budget in seconds).
pub const CRITERIA: [(u32, &str, Option<f64>); 11] = [
    (1, "alpha-permanent identities", Some(5.0)),
    (2, "kernel identities", Some(10.0)),
    (3, "gaussian moments", Some(30.0)),
    (4, "correlation functions", Some(300.0)),
    (5, "papangelou cross-validation", Some(120.0)),
    (6, "gnz identity", Some(300.0)),
    (7, "balance conditions", Some(1.0)),
    (8, "exact reversibility", Some(120.0)),
    (9, "stationarity", Some(600.0)),
    (10, "diffusion scaling", Some(1200.0)),
    (11, "determinism", None),
];

/// Suites rerun by the determinism criterion, on [`ExperimentConfig::quick`].
pub const DETERMINISM_SUITES: [Suite; 3] = [Suite::Correlations, Suite::Gnz, Suite::Stationarity];
/// Thread counts compared by the determinism criterion.
pub const DETERMINISM_THREADS: [usize; 2] = [1, 4];

fn run_criterion(id: u32, seed: u64, root: &Stream, cfg: &ExperimentConfig) -> Section {
    match id {
        1 => suites::permanent_identities(root),
        2 => suites::kernel_identities(root),
        3 => suites::gaussian_moments(root, cfg),
        4 => suites::correlations(root, cfg),
        5 => suites::papangelou(root, cfg),
        6 => suites::gnz(root, cfg),
        7 => suites::balance(),
        8 => suites::reversibility(root, cfg),
        9 => suites::stationarity(root, cfg),
        10 => suites::scaling(root, cfg),
        11 => determinism(cfg, seed),
        _ => unreachable!("criteria are numbered 1 to 11"),
    }
}

/// Runs `suites` on the quick configuration once per thread count and
/// compares the numeric reports byte for byte.
fn determinism(cfg: &ExperimentConfig, seed: u64) -> Section {
    let quick = cfg.quick();
    suites::guarded(11, "determinism", |s| {
        let mut runs: Vec<Vec<String>> = Vec::new();
        for threads in DETERMINISM_THREADS {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
            runs.push(pool.install(|| {
                DETERMINISM_SUITES
                    .iter()
                    .map(|&suite| run_suite(&quick, suite, Some(seed)).numeric_json())
                    .collect()
            }));
        }
        for (i, suite) in DETERMINISM_SUITES.iter().enumerate() {
            let same = runs.iter().all(|r| r[i] == runs[0][i]);
            let mut c = CheckRecord::new(
                format!("{} identical across {:?} threads", suite.name(), DETERMINISM_THREADS),
                11,
                f64::from(u8::from(!same)),
                0.0,
                0.0,
                same,
            );
            c.detail = format!("{} bytes of numeric report", runs[0][i].len());
            s.checks.push(c);
        }
        Ok(())
    })
}

/// Runs a suite; never panics on module errors, which become failed checks.
pub fn run_suite(cfg: &ExperimentConfig, suite: Suite, seed: Option<u64>) -> Report {
    run_criteria(cfg, suite.name(), &suite.criteria(), seed)
}

/// Runs the given acceptance criteria (1 to 11) under a report label.
pub fn run_criteria(cfg: &ExperimentConfig, label: &str, ids: &[u32], seed: Option<u64>) -> Report {
    assert!(
        ids.iter().all(|id| (1..=11).contains(id)),
        "criteria are numbered 1 to 11"
    );
    let seed = cfg.master_seed(seed);
    let root = Stream::new(seed);
    let start = Instant::now();
    let mut checks = Vec::new();
    let mut tables = Vec::new();
    let mut criteria = Vec::new();
    let mut clock = WallClock::default();
    for &id in ids {
        let t0 = Instant::now();
        let sec = run_criterion(id, seed, &root, cfg);
        clock.criteria.push((id, t0.elapsed().as_secs_f64()));
        let (_, name, budget) = CRITERIA[id as usize - 1];
        let scored: Vec<&CheckRecord> = sec.checks.iter().filter(|c| !c.informational).collect();
        let failed = scored.iter().filter(|c| !c.pass).count();
        criteria.push(CriterionResult {
            id,
            name: name.into(),
            pass: failed == 0 && !scored.is_empty(),
            checks: scored.len(),
            failed,
            budget_seconds: budget,
        });
        checks.extend(sec.checks);
        tables.extend(sec.tables);
    }
    clock.total_seconds = start.elapsed().as_secs_f64();
    let config = serde_json::to_value(cfg).expect("config serializes");
    let experiment_id = report::fnv_hex(&format!("{config}|{label}|{seed}"));
    let pass = criteria.iter().all(|c| c.pass);
    Report {
        experiment_id,
        suite: label.into(),
        seed,
        config,
        criteria,
        checks,
        tables,
        wall_clock: clock,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn balance_report_shape() {
        let r = run_suite(&ExperimentConfig::default(), Suite::Balance, Some(4));
        assert!(r.pass, "{}", r.to_json());
        assert_eq!(r.criteria.len(), 1);
        assert_eq!(r.seed, 4);
        assert!(r.checks.iter().all(|c| c.criterion == Some(7)));
    }

    #[test]
    fn reruns_match_except_wall_clock() {
        let cfg = ExperimentConfig::default();
        let a = run_suite(&cfg, Suite::Balance, None);
        let b = run_suite(&cfg, Suite::Balance, None);
        assert_eq!(a.numeric_json(), b.numeric_json());
    }

    #[test]
    fn module_errors_are_failed_checks() {
        let mut cfg = ExperimentConfig::default();
        // table kernel without knots cannot be built
        cfg.kernel.shape = config::KernelShapeName::Table;
        let r = run_suite(&cfg, Suite::Correlations, Some(1));
        assert!(!r.pass);
        assert!(r.checks.iter().any(|c| c.error.is_some()));
    }
}

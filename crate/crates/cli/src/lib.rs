//! Batch front end: configuration, presets, experiment orchestration and
//! result files.
//!
//! Output schemas (column order is stable):
//!
//! * `summary.csv`: `scenario,N,L,trials,total,loc,missed,false`
//! * `per_scan.csv`: `time,total,loc,missed,false`, averaged over trials
//! * `trajectories.json`: `{"trials": [{"trial", "filtered", "smoothed"}]}`,
//!   each trajectory `{"birth", "last", "states"}`
//! * `convergence.csv` (with `--debug-dual`): `trial,time,iteration,dual,best_primal,gap`
//!
//! Every file is a function of the configuration alone. Wall-clock time per
//! trial is only printed, in the summary row.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use trajpmbm::pmbm::{FilterConfig, Trajectory, Window};
use trajpmbm::simulation::{run_monte_carlo, MonteCarloReport, ScenarioConfig, TrialOptions};

pub const PRESETS: [&str; 4] = [
    "table1-pd09-lc10",
    "table1-pd09-lc30",
    "table1-pd07-lc10",
    "table1-pd07-lc30",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub filter: FilterConfig,
    pub trials: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            filter: FilterConfig::default(),
            trials: 100,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> trajpmbm::Result<()> {
        self.scenario.validate()?;
        self.filter.validate()?;
        if self.trials < 1 {
            return Err(trajpmbm::Error::InvalidConfig {
                field: "trials",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(t) = o.trials {
            self.trials = t;
        }
        if let Some(s) = o.seed {
            self.scenario.seed = s;
        }
        if let Some(n) = o.nscan {
            self.filter.n_scan = n;
        }
        if let Some(w) = o.window {
            self.filter.window = w;
        }
        if let Some(d) = &o.out {
            self.output_dir = d.clone();
        }
    }
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub nscan: Option<usize>,
    pub window: Option<Window>,
    pub out: Option<PathBuf>,
}

/// The four detection-probability and clutter-rate settings of the benchmark.
pub fn preset(name: &str) -> Option<RunConfig> {
    let (pd, clutter_rate) = match name {
        "table1-pd09-lc10" => (0.9, 10.0),
        "table1-pd09-lc30" => (0.9, 30.0),
        "table1-pd07-lc10" => (0.7, 10.0),
        "table1-pd07-lc30" => (0.7, 30.0),
        _ => return None,
    };
    Some(RunConfig {
        scenario: ScenarioConfig {
            name: name.to_string(),
            pd,
            clutter_rate,
            ..ScenarioConfig::default()
        },
        ..RunConfig::default()
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// The benchmark-table row: total, localization per target, missed, false,
/// then the mean wall-clock seconds per trial.
pub fn summary_row(cfg: &RunConfig, report: &MonteCarloReport) -> String {
    format!(
        "{} N={} L={} trials={} | te {:.2} | le {:.2} | mt {:.2} | ft {:.2} | {:.2} s/trial",
        cfg.scenario.name,
        cfg.filter.n_scan,
        cfg.filter.window,
        report.trials.len(),
        report.mean.total,
        report.localization_per_target,
        report.mean.missed,
        report.mean.false_,
        report.mean_trial_seconds,
    )
}

#[derive(Serialize)]
struct TrialTrajectories<'a> {
    trial: u64,
    filtered: &'a [Trajectory],
    smoothed: Option<&'a [Trajectory]>,
}

#[derive(Serialize)]
struct TrajectoryFile<'a> {
    trials: Vec<TrialTrajectories<'a>>,
}

/// Writes the result files into `dir`, creating it if needed.
pub fn emit_results(
    cfg: &RunConfig,
    report: &MonteCarloReport,
    dir: &Path,
    debug_dual: bool,
) -> Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let key = format!(
        "{},{},{},{}",
        cfg.scenario.name,
        cfg.filter.n_scan,
        cfg.filter.window,
        report.trials.len()
    );

    let mut summary = String::from("scenario,N,L,trials,total,loc,missed,false\n");
    if !report.trials.is_empty() {
        let m = &report.mean;
        writeln!(
            summary,
            "{key},{},{},{},{}",
            m.total, m.localization, m.missed, m.false_
        )?;
    }
    write(dir, "summary.csv", &summary)?;

    let mut per_scan = String::from("time,total,loc,missed,false\n");
    for (i, g) in report.per_scan.iter().enumerate() {
        writeln!(
            per_scan,
            "{},{},{},{},{}",
            i + 1,
            g.total,
            g.localization,
            g.missed,
            g.false_
        )?;
    }
    write(dir, "per_scan.csv", &per_scan)?;

    let file = TrajectoryFile {
        trials: report
            .trials
            .iter()
            .map(|t| TrialTrajectories {
                trial: t.trial,
                filtered: &t.filtered,
                smoothed: t.smoothed.as_deref(),
            })
            .collect(),
    };
    write(dir, "trajectories.json", &serde_json::to_string(&file)?)?;

    if debug_dual {
        let mut conv = String::from("trial,time,iteration,dual,best_primal,gap\n");
        for t in &report.trials {
            for (k, r) in &t.convergence {
                writeln!(
                    conv,
                    "{},{k},{},{},{},{}",
                    t.trial, r.iteration, r.dual, r.best_primal, r.gap
                )?;
            }
        }
        write(dir, "convergence.csv", &conv)?;
    }
    Ok(())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// Worker cap from `TRAJMBM_THREADS`; unset or invalid means all cores.
pub fn thread_cap() -> Option<usize> {
    std::env::var("TRAJMBM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs the experiment described by `cfg` and writes its outputs.
pub fn execute(cfg: &RunConfig, debug_dual: bool) -> Result<MonteCarloReport> {
    let opts = TrialOptions {
        record_trace: debug_dual,
    };
    let report = run_monte_carlo(&cfg.scenario, &cfg.filter, cfg.trials, thread_cap(), opts)?;
    emit_results(cfg, &report, &cfg.output_dir, debug_dual)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_cover_the_grid() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.scenario.name, name);
        }
        assert_eq!(preset("table1-pd07-lc30").unwrap().scenario.pd, 0.7);
        assert_eq!(
            preset("table1-pd07-lc30").unwrap().scenario.clutter_rate,
            30.0
        );
        assert!(preset("nope").is_none());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"filter": {"nscan": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("nscan"));
    }
}

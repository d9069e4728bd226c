use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trajpmbm::pmbm::Window;
use trajpmbm::simulation::{run_trial, MonteCarloReport, ScenarioConfig, TrialOptions};
use trajpmbm_cli::{emit_results, load_config, preset, summary_row, Overrides, RunConfig};

fn small_config(out: &Path) -> RunConfig {
    RunConfig {
        scenario: ScenarioConfig {
            name: "small".into(),
            steps: 20,
            births: vec![1, 4],
            deaths: vec![20, 18],
            clutter_rate: 2.0,
            ..ScenarioConfig::default()
        },
        trials: 2,
        output_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajpmbm"))
        .args(args)
        .env("TRAJMBM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.filter.window = Window::Latest(1);
    cfg.filter.eps_gap = 0.02;
    let text = serde_json::to_string(&cfg).unwrap();
    let back: RunConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
    let path = write_config(dir.path(), &cfg);
    assert_eq!(load_config(&path).unwrap(), cfg);
}

#[test]
fn overrides_take_precedence_per_field() {
    let base = small_config(Path::new("from-file"));
    let cases: Vec<(Overrides, Box<dyn Fn(&RunConfig) -> bool>)> = vec![
        (
            Overrides {
                trials: Some(7),
                ..Overrides::default()
            },
            Box::new(|c| c.trials == 7),
        ),
        (
            Overrides {
                seed: Some(99),
                ..Overrides::default()
            },
            Box::new(|c| c.scenario.seed == 99),
        ),
        (
            Overrides {
                nscan: Some(3),
                ..Overrides::default()
            },
            Box::new(|c| c.filter.n_scan == 3),
        ),
        (
            Overrides {
                window: Some(Window::Latest(1)),
                ..Overrides::default()
            },
            Box::new(|c| c.filter.window == Window::Latest(1)),
        ),
        (
            Overrides {
                out: Some(PathBuf::from("elsewhere")),
                ..Overrides::default()
            },
            Box::new(|c| c.output_dir == Path::new("elsewhere")),
        ),
    ];
    for (o, check) in cases {
        let mut cfg = base.clone();
        cfg.apply(&o);
        assert!(check(&cfg), "{o:?}");
        // Exactly one field differs from the file values.
        let mut restored = cfg.clone();
        restored.trials = base.trials;
        restored.scenario.seed = base.scenario.seed;
        restored.filter.n_scan = base.filter.n_scan;
        restored.filter.window = base.filter.window;
        restored.output_dir = base.output_dir.clone();
        assert_eq!(restored, base);
        assert_ne!(cfg, base);
    }
    let mut cfg = base.clone();
    cfg.apply(&Overrides::default());
    assert_eq!(cfg, base);
}

#[test]
fn command_line_overrides_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let path = write_config(dir.path(), &small_config(Path::new("ignored")));
    let o = cli(&[
        "--config",
        path.to_str().unwrap(),
        "--trials",
        "1",
        "--nscan",
        "2",
        "--window",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = csv_rows(&out.join("summary.csv"));
    assert_eq!(summary[1][..4], ["small", "2", "1", "1"]);
    assert!(!Path::new("ignored").exists());
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let o = cli(&["--config", "/nonexistent/run.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/run.json"));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.filter.r_threshold = 2.0;
    let path = write_config(dir.path(), &cfg);
    let o = cli(&["--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("r_threshold"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_config(dir.path()));
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = cli(&[
            "--config",
            path.to_str().unwrap(),
            "--trials",
            "1",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
            "--debug-dual",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 4);
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn preset_prints_the_summary_row_and_full_length_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cli(&[
        "--preset",
        "table1-pd09-lc10",
        "--trials",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let row = stdout.lines().next().unwrap();
    assert!(
        row.starts_with("table1-pd09-lc10 N=5 L=full trials=1 | te "),
        "{row}"
    );
    for field in ["| le ", "| mt ", "| ft ", "s/trial"] {
        assert!(row.contains(field), "{row}");
    }

    let per_scan = csv_rows(&out.join("per_scan.csv"));
    assert_eq!(per_scan[0], ["time", "total", "loc", "missed", "false"]);
    assert_eq!(per_scan.len(), 1 + 101);

    // Summary columns recomputed from the per-scan file.
    let summary = csv_rows(&out.join("summary.csv"));
    assert_eq!(
        summary[0],
        ["scenario", "N", "L", "trials", "total", "loc", "missed", "false"]
    );
    assert_eq!(summary.len(), 2);
    for (col, name) in [(1, "total"), (2, "loc"), (3, "missed"), (4, "false")] {
        let mean = per_scan[1..]
            .iter()
            .map(|r| r[col].parse::<f64>().unwrap())
            .sum::<f64>()
            / 101.0;
        let reported: f64 = summary[1][col + 3].parse().unwrap();
        assert!(
            (reported - mean).abs() <= 1e-9 * (1.0 + mean),
            "{name}: {reported} vs {mean}"
        );
    }
    let te: f64 = row
        .split("| te ")
        .nth(1)
        .unwrap()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((te - summary[1][4].parse::<f64>().unwrap()).abs() < 0.006);

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("trajectories.json")).unwrap()).unwrap();
    let trial = &json["trials"][0];
    assert_eq!(trial["trial"], 0);
    let first = &trial["filtered"][0];
    let (birth, last) = (
        first["birth"].as_u64().unwrap(),
        first["last"].as_u64().unwrap(),
    );
    assert_eq!(
        first["states"].as_array().unwrap().len() as u64,
        last - birth + 1
    );
    assert!(trial["smoothed"].is_array());
}

#[test]
fn empty_report_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let report = MonteCarloReport::aggregate(Vec::new());
    emit_results(&cfg, &report, dir.path(), true).unwrap();
    for (name, header) in [
        (
            "summary.csv",
            "scenario,N,L,trials,total,loc,missed,false\n",
        ),
        ("per_scan.csv", "time,total,loc,missed,false\n"),
        (
            "convergence.csv",
            "trial,time,iteration,dual,best_primal,gap\n",
        ),
    ] {
        assert_eq!(
            fs::read_to_string(dir.path().join(name)).unwrap(),
            header,
            "{name}"
        );
    }
}

#[test]
fn single_trial_report_matches_the_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let t = run_trial(&cfg.scenario, &cfg.filter, 0, TrialOptions::default()).unwrap();
    let per_scan = t.per_scan.clone();
    let report = MonteCarloReport::aggregate(vec![t]);
    emit_results(&cfg, &report, dir.path(), false).unwrap();
    let rows = csv_rows(&dir.path().join("per_scan.csv"));
    assert_eq!(rows.len(), 1 + cfg.scenario.steps);
    for (row, g) in rows[1..].iter().zip(&per_scan) {
        assert_eq!(row[1].parse::<f64>().unwrap(), g.total);
    }
    assert!(!dir.path().join("convergence.csv").exists());
    assert!(summary_row(&cfg, &report).starts_with("small N=5 L=full trials=1 |"));
}

#[test]
fn presets_reject_unknown_names() {
    assert!(preset("table1-pd05-lc10").is_none());
    let o = cli(&["--preset", "table1-pd05-lc10"]);
    assert_eq!(o.status.code(), Some(2));
}

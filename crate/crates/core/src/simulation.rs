//! Ground truth, measurement synthesis and the Monte Carlo harness.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::IterationRecord;
use crate::error::{invalid, Error, Result};
use crate::gaussian::{
    chi_square_quantile, DiagonalGaussian, GaussianDensity, MeasurementModel, MotionModel,
};
use crate::index::TrackId;
use crate::metrics::{gospa, GospaConfig, GospaResult};
use crate::pmbm::estimate::{selected_bernoullis, trajectory_of};
use crate::pmbm::{
    step, EstimateMode, FilterConfig, FilterState, Models, PoissonIntensity, Trajectory,
    TrajectoryBernoulli, Window,
};

/// Axis-aligned surveillance rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Region {
    pub fn area(&self) -> f64 {
        (self.x[1] - self.x[0]) * (self.y[1] - self.y[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub steps: usize,
    pub births: Vec<usize>,
    /// Last time step each target is alive.
    pub deaths: Vec<usize>,
    pub midpoint: DiagonalGaussian,
    pub region: Region,
    pub pd: f64,
    pub ps: f64,
    pub clutter_rate: f64,
    pub seed: u64,
    pub period: f64,
    /// Scale of the continuous white-noise acceleration.
    pub process_noise: f64,
    pub measurement_noise: f64,
    pub birth_weight: f64,
    pub birth: DiagonalGaussian,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "coalescence".into(),
            steps: 101,
            births: vec![1, 11, 21, 31, 41, 51],
            deaths: vec![61, 71, 81, 91, 101, 101],
            midpoint: DiagonalGaussian {
                mean: vec![0.0; 4],
                variances: vec![1e-6; 4],
            },
            region: Region {
                x: [-100.0, 100.0],
                y: [-100.0, 100.0],
            },
            pd: 0.9,
            ps: 0.99,
            clutter_rate: 10.0,
            seed: 1,
            period: 1.0,
            process_noise: 0.002,
            measurement_noise: 1.0,
            birth_weight: 0.05,
            birth: DiagonalGaussian {
                mean: vec![0.0; 4],
                variances: vec![1e4, 1.0, 1e4, 1.0],
            },
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(invalid("steps", "must be at least 1"));
        }
        if self.births.len() != self.deaths.len() {
            return Err(invalid("deaths", "must have one entry per birth"));
        }
        for (&b, &d) in self.births.iter().zip(&self.deaths) {
            if b < 1 || b >= d || d > self.steps {
                return Err(invalid(
                    "births",
                    format!(
                        "target alive from {b} to {d} does not fit 1 <= birth < death <= {}",
                        self.steps
                    ),
                ));
            }
        }
        for (field, v) in [("pd", self.pd), ("ps", self.ps)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(field, format!("{v} is outside [0, 1]")));
            }
        }
        if !(self.clutter_rate >= 0.0) {
            return Err(invalid("clutter_rate", "must be non-negative"));
        }
        if !(self.region.area() > 0.0) {
            return Err(invalid("region", "must have positive area"));
        }
        if !(self.period > 0.0) {
            return Err(invalid("period", "must be positive"));
        }
        if !(self.process_noise >= 0.0) {
            return Err(invalid("process_noise", "must be non-negative"));
        }
        if !(self.measurement_noise > 0.0) {
            return Err(invalid("measurement_noise", "must be positive"));
        }
        if !(self.birth_weight > 0.0) {
            return Err(invalid("birth_weight", "must be positive"));
        }
        if self.midpoint.mean.len() != 4 || self.birth.mean.len() != 4 {
            return Err(invalid(
                "midpoint",
                "states are four-dimensional [px, vx, py, vy]",
            ));
        }
        self.midpoint.to_density()?;
        self.birth.to_density()?;
        Ok(())
    }

    pub fn motion(&self) -> Result<MotionModel> {
        MotionModel::constant_velocity_2d(self.period, self.process_noise, self.ps)
    }

    pub fn models(&self, filter: &FilterConfig) -> Result<Models> {
        let motion = self.motion()?;
        let gate = chi_square_quantile(filter.gate_quantile, 2)?;
        let measurement = MeasurementModel::position_2d(
            self.measurement_noise,
            self.pd,
            self.clutter_rate,
            1.0 / self.region.area(),
            gate,
        )?;
        let mut birth = PoissonIntensity::new();
        birth.push(self.birth_weight, 0, self.birth.to_density()?);
        Ok(Models {
            motion,
            measurement,
            birth,
        })
    }

    /// The independent random stream of trial `trial`.
    pub fn trial_rng(&self, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial);
        rng
    }
}

/// Draws from a zero-mean Gaussian with a positive semi-definite covariance.
struct NoiseSampler {
    factor: DMatrix<f64>,
}

impl NoiseSampler {
    fn new(cov: &DMatrix<f64>) -> Self {
        let eig = cov.clone().symmetric_eigen();
        let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        Self {
            factor: &eig.eigenvectors * DMatrix::from_diagonal(&sqrt),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.factor.ncols();
        let u = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
        &self.factor * u
    }
}

fn sample_density<R: Rng>(d: &GaussianDensity, rng: &mut R) -> DVector<f64> {
    &d.mean + NoiseSampler::new(&d.cov).sample(rng)
}

/// Truth trajectories: each midpoint state is drawn at `⌊(β+ε)/2⌋`, then the
/// motion model runs forward to `ε` and its inverse runs backward to `β`.
pub fn generate_truth<R: Rng>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Vec<Trajectory>> {
    let motion = cfg.motion()?;
    let f = &motion.transition;
    let f_inv = f
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("transition matrix"))?;
    let noise = NoiseSampler::new(&motion.process_noise);
    let midpoint = cfg.midpoint.to_density()?;
    let mut out = Vec::with_capacity(cfg.births.len());
    for (&b, &e) in cfg.births.iter().zip(&cfg.deaths) {
        let mid = (b + e) / 2;
        let mut states = vec![DVector::zeros(4); e - b + 1];
        states[mid - b] = sample_density(&midpoint, rng);
        for k in mid + 1..=e {
            states[k - b] = f * &states[k - 1 - b] + noise.sample(rng);
        }
        for k in (b..mid).rev() {
            states[k - b] = &f_inv * (&states[k + 1 - b] - noise.sample(rng));
        }
        out.push(Trajectory::from_vectors(b, &states));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Scan {
    pub time: usize,
    pub measurements: Vec<DVector<f64>>,
    pub detections: usize,
}

/// Detections of the targets alive at `k` plus uniform Poisson clutter, shuffled.
pub fn generate_scan<R: Rng>(
    truth: &[Trajectory],
    k: usize,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Scan {
    let h = DMatrix::<f64>::identity(2, 2).kronecker(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
    let sd = cfg.measurement_noise.sqrt();
    let mut measurements = Vec::new();
    for t in truth {
        let Some(x) = t.state_at(k) else { continue };
        if rng.gen::<f64>() < cfg.pd {
            let x = DVector::from_column_slice(x);
            let v = DVector::from_iterator(
                2,
                (0..2).map(|_| {
                    sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                }),
            );
            measurements.push(&h * x + v);
        }
    }
    let detections = measurements.len();
    if cfg.clutter_rate > 0.0 {
        let count = Poisson::new(cfg.clutter_rate)
            .expect("positive rate")
            .sample(rng) as usize;
        for _ in 0..count {
            let x = rng.gen_range(cfg.region.x[0]..cfg.region.x[1]);
            let y = rng.gen_range(cfg.region.y[0]..cfg.region.y[1]);
            measurements.push(DVector::from_vec(vec![x, y]));
        }
    }
    measurements.shuffle(rng);
    Scan {
        time: k,
        measurements,
        detections,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrialOptions {
    /// Keep the dual-decomposition iterations of every scan.
    pub record_trace: bool,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: u64,
    pub per_scan: Vec<GospaResult>,
    /// Estimate-to-truth pairs within the GOSPA cutoff at every scan.
    pub per_scan_matched: Vec<usize>,
    pub truth: Vec<Trajectory>,
    /// Latest trajectory estimate of every track ever reported, by track id.
    pub filtered: Vec<Trajectory>,
    /// Smoothed counterparts of `filtered`; only with the full window.
    pub smoothed: Option<Vec<Trajectory>>,
    /// Existence probabilities of the estimates at the final scan.
    pub final_existence: Vec<f64>,
    /// Scans whose best global hypothesis failed the partition check.
    pub infeasible_scans: usize,
    /// Scans on which the solver hit its iteration budget.
    pub unconverged_scans: usize,
    pub seconds: f64,
    pub convergence: Vec<(usize, IterationRecord)>,
}

/// One Monte Carlo trial of the full filter over the scenario.
pub fn run_trial(
    scenario: &ScenarioConfig,
    filter: &FilterConfig,
    trial: u64,
    opts: TrialOptions,
) -> Result<TrialResult> {
    scenario.validate()?;
    filter.validate()?;
    let start = Instant::now();
    let mut rng = scenario.trial_rng(trial);
    let models = scenario.models(filter)?;
    let gospa_cfg = GospaConfig::default();
    let truth = generate_truth(scenario, &mut rng)?;
    let mut state = FilterState::new(filter.window);

    let mut per_scan = Vec::with_capacity(scenario.steps);
    let mut per_scan_matched = Vec::with_capacity(scenario.steps);
    let mut infeasible_scans = 0;
    let mut unconverged_scans = 0;
    let mut convergence = Vec::new();
    let mut latest: BTreeMap<TrackId, TrajectoryBernoulli> = BTreeMap::new();
    let mut segments: BTreeMap<TrackId, Vec<(usize, Vec<Vec<f64>>)>> = BTreeMap::new();
    let mut final_existence = Vec::new();

    for k in 1..=scenario.steps {
        let scan = generate_scan(&truth, k, scenario, &mut rng);
        let report = step(&mut state, &scan.measurements, &models, filter)
            .map_err(|e| Error::Infeasible(format!("trial {trial}, scan {k}: {e}")))?;
        infeasible_scans += usize::from(!report.feasible);
        unconverged_scans += usize::from(!report.converged);
        if opts.record_trace {
            convergence.extend(report.trace.iter().map(|r| (k, *r)));
        }

        let selected = selected_bernoullis(&state, &state.forest.best);
        let estimates: Vec<Vec<f64>> = selected
            .iter()
            .map(|(_, b)| b.current().mean.iter().copied().collect())
            .collect();
        let alive: Vec<Vec<f64>> = truth
            .iter()
            .filter_map(|t| t.state_at(k).map(<[f64]>::to_vec))
            .collect();
        let g = gospa(&alive, &estimates, &gospa_cfg);
        let half = gospa_cfg.c.powf(gospa_cfg.p) / 2.0;
        per_scan_matched.push(alive.len() - (g.missed / half).round() as usize);
        per_scan.push(g);

        for ((track, b), x) in selected.iter().zip(&estimates) {
            match filter.window {
                Window::Full => {
                    latest.insert(*track, (*b).clone());
                }
                Window::Latest(_) => {
                    let segs = segments.entry(*track).or_default();
                    match segs.last_mut() {
                        Some((from, states)) if *from + states.len() == k => states.push(x.clone()),
                        _ => segs.push((k, vec![x.clone()])),
                    }
                }
            }
        }
        if k == scenario.steps {
            final_existence = selected.iter().map(|(_, b)| b.existence).collect();
        }
    }

    let (filtered, smoothed) = match filter.window {
        Window::Full => {
            let filtered = latest
                .values()
                .map(|b| trajectory_of(b, EstimateMode::Filtered, &models.motion))
                .collect::<Result<Vec<_>>>()?;
            let smoothed = latest
                .values()
                .map(|b| trajectory_of(b, EstimateMode::Smoothed, &models.motion))
                .collect::<Result<Vec<_>>>()?;
            (filtered, Some(smoothed))
        }
        Window::Latest(_) => (
            segments
                .into_values()
                .flatten()
                .map(|(from, states)| Trajectory::new(from, states))
                .collect(),
            None,
        ),
    };

    Ok(TrialResult {
        trial,
        per_scan,
        per_scan_matched,
        truth,
        filtered,
        smoothed,
        final_existence,
        infeasible_scans,
        unconverged_scans,
        seconds: start.elapsed().as_secs_f64(),
        convergence,
    })
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub trials: Vec<TrialResult>,
    /// Per-scan decomposition averaged over trials.
    pub per_scan: Vec<GospaResult>,
    /// Average over scans of `per_scan`.
    pub mean: GospaResult,
    /// Localization error per matched target.
    pub localization_per_target: f64,
    pub mean_trial_seconds: f64,
}

impl MonteCarloReport {
    /// Averages in trial order, so the result does not depend on scheduling.
    pub fn aggregate(trials: Vec<TrialResult>) -> Self {
        let steps = trials.first().map_or(0, |t| t.per_scan.len());
        let mut per_scan = vec![GospaResult::default(); steps];
        for t in &trials {
            for (acc, g) in per_scan.iter_mut().zip(&t.per_scan) {
                acc.add(g);
            }
        }
        let n = trials.len().max(1) as f64;
        let per_scan: Vec<GospaResult> = per_scan.iter().map(|g| g.scaled(1.0 / n)).collect();
        let mut mean = GospaResult::default();
        for g in &per_scan {
            mean.add(g);
        }
        let mean = mean.scaled(1.0 / steps.max(1) as f64);
        let mean_trial_seconds = trials.iter().map(|t| t.seconds).sum::<f64>() / n;
        let loc: f64 = trials
            .iter()
            .flat_map(|t| &t.per_scan)
            .map(|g| g.localization)
            .sum();
        let matched: usize = trials.iter().flat_map(|t| &t.per_scan_matched).sum();
        let localization_per_target = if matched > 0 {
            loc / matched as f64
        } else {
            0.0
        };
        Self {
            trials,
            per_scan,
            mean,
            localization_per_target,
            mean_trial_seconds,
        }
    }

    pub fn infeasible_scans(&self) -> usize {
        self.trials.iter().map(|t| t.infeasible_scans).sum()
    }
}

/// Runs trials `0..trials` in parallel on at most `threads` workers (all
/// cores when `None`).
pub fn run_monte_carlo(
    scenario: &ScenarioConfig,
    filter: &FilterConfig,
    trials: usize,
    threads: Option<usize>,
    opts: TrialOptions,
) -> Result<MonteCarloReport> {
    if trials < 1 {
        return Err(invalid("trials", "must be at least 1"));
    }
    scenario.validate()?;
    filter.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| invalid("threads", e.to_string()))?;
    let results = pool.install(|| {
        (0..trials as u64)
            .into_par_iter()
            .map(|t| run_trial(scenario, filter, t, opts))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(MonteCarloReport::aggregate(results))
}

//! Poisson multi-Bernoulli mixture filter over sets of trajectories.
//!
//! Undetected trajectories are a Poisson point process with a Gaussian-mixture
//! intensity; detected ones are tracks of single trajectory hypotheses kept in
//! a [`HypothesisForest`]. Each scan runs prediction, the measurement update,
//! the multi-frame assignment that selects the best global hypothesis, and
//! N-scan pruning around it.

pub mod bernoulli;
pub mod estimate;
pub mod ppp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assignment::{self, IterationRecord, SolverOptions};
use crate::error::{invalid, Result};
use crate::gaussian::{kf_predict, GaussianDensity, Innovation, MeasurementModel, MotionModel};
use crate::hypothesis::{
    apply_miss_only_policy, n_scan_prune, prune_within_tracks, remove_dead_tracks,
    GlobalHypothesis, HypothesisForest, Sth, Track,
};
use crate::index::{MeasurementIndex, SthId, TrackId};

pub use bernoulli::{MomentHistory, Trajectory, TrajectoryBernoulli, Window};
pub use estimate::{extract_estimates, map_cardinality, Estimate, EstimateMode};
pub use ppp::{prune_ppp, PoissonComponent, PoissonIntensity};

/// Tuning of the filter recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// N-scan pruning depth.
    pub n_scan: usize,
    pub window: Window,
    /// Hypotheses with a lower existence probability are only miss-updated.
    pub r_threshold: f64,
    pub max_consecutive_misses: u32,
    pub eps_gap: f64,
    pub max_iter: usize,
    /// Branch-and-bound node budget per primal recovery.
    pub node_limit: usize,
    pub ppp_prune: f64,
    pub gate_quantile: f64,
    /// Hypotheses whose adjusted log weight is more than this below the best
    /// of their track are dropped.
    pub sth_prune_log_ratio: f64,
    pub max_sths_per_track: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_scan: 5,
            window: Window::Full,
            r_threshold: 1e-4,
            max_consecutive_misses: 3,
            eps_gap: 0.01,
            max_iter: 200,
            node_limit: 20_000,
            ppp_prune: 1e-4,
            gate_quantile: 0.999,
            sth_prune_log_ratio: 12.0,
            max_sths_per_track: 16,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scan < 1 {
            return Err(invalid("n_scan", "must be at least 1"));
        }
        if let Window::Latest(0) = self.window {
            return Err(invalid("window", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.r_threshold) {
            return Err(invalid(
                "r_threshold",
                format!("{} is outside [0, 1]", self.r_threshold),
            ));
        }
        if !(self.eps_gap > 0.0) {
            return Err(invalid("eps_gap", "must be positive"));
        }
        if self.max_iter < 1 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        if self.node_limit < 1 {
            return Err(invalid("node_limit", "must be at least 1"));
        }
        if !(self.ppp_prune >= 0.0) {
            return Err(invalid("ppp_prune", "must be non-negative"));
        }
        if !(self.gate_quantile > 0.0 && self.gate_quantile < 1.0) {
            return Err(invalid(
                "gate_quantile",
                format!("{} is outside (0, 1)", self.gate_quantile),
            ));
        }
        if !(self.sth_prune_log_ratio > 0.0) {
            return Err(invalid("sth_prune_log_ratio", "must be positive"));
        }
        if self.max_sths_per_track < 1 {
            return Err(invalid("max_sths_per_track", "must be at least 1"));
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            eps_gap: self.eps_gap,
            max_iter: self.max_iter,
            node_limit: self.node_limit,
        }
    }
}

/// Motion, measurement and birth models shared by every scan.
#[derive(Debug, Clone)]
pub struct Models {
    pub motion: MotionModel,
    pub measurement: MeasurementModel,
    pub birth: PoissonIntensity,
}

#[derive(Debug, Clone)]
pub struct FilterState {
    pub undetected: PoissonIntensity,
    pub forest: HypothesisForest,
    pub time: usize,
    pub window: Window,
}

impl FilterState {
    pub fn new(window: Window) -> Self {
        Self {
            undetected: PoissonIntensity::new(),
            forest: HypothesisForest::new(),
            time: 0,
            window,
        }
    }
}

/// Advances the state by one step: survival thinning and Kalman prediction
/// of every hypothesis and PPP component, plus the birth components.
pub fn predict(s: &mut FilterState, motion: &MotionModel, birth: &PoissonIntensity) -> Result<()> {
    let k = s.time + 1;
    s.undetected = s.undetected.predict(motion, birth, k, s.window)?;
    for t in &mut s.forest.tracks {
        for h in &mut t.sths {
            let b = &mut h.bernoulli;
            if b.existence <= 0.0 {
                continue;
            }
            b.existence *= motion.survival;
            b.moments = b.moments.push(kf_predict(b.current(), motion)?, s.window);
            b.last = k;
        }
    }
    s.time = k;
    Ok(())
}

/// Missed-detection update. `None` when the hypothesis has zero likelihood.
pub fn sth_miss_update(h: &Sth, id: SthId, meas: &MeasurementModel) -> Option<Sth> {
    let r = h.existence();
    let pd = meas.detection;
    let miss_likelihood = 1.0 - r + r * (1.0 - pd);
    if miss_likelihood <= 0.0 {
        return None;
    }
    let mut b = h.bernoulli.clone();
    b.existence = r * (1.0 - pd) / miss_likelihood;
    Some(Sth {
        id,
        parent: Some(h.id),
        log_weight: h.log_weight + miss_likelihood.ln(),
        bernoulli: b,
        measurements: h.measurements.clone(),
        consecutive_misses: h.consecutive_misses + u32::from(r > 0.0),
        miss_only: h.miss_only,
    })
}

/// Update of `h` by measurement `z` with index `index`. `None` when `h` cannot exist.
pub fn sth_meas_update(
    h: &Sth,
    id: SthId,
    z: &DVector<f64>,
    index: MeasurementIndex,
    meas: &MeasurementModel,
) -> Result<Option<Sth>> {
    let innovation = Innovation::new(h.bernoulli.current(), meas)?;
    Ok(meas_update_with(
        h,
        id,
        z,
        index,
        &innovation,
        meas.detection,
    ))
}

fn meas_update_with(
    h: &Sth,
    id: SthId,
    z: &DVector<f64>,
    index: MeasurementIndex,
    innovation: &Innovation,
    detection: f64,
) -> Option<Sth> {
    let r = h.existence();
    if r <= 0.0 || detection <= 0.0 {
        return None;
    }
    let b = &h.bernoulli;
    let mut measurements = Vec::with_capacity(h.measurements.len() + 1);
    measurements.extend_from_slice(&h.measurements);
    measurements.push(index);
    Some(Sth {
        id,
        parent: Some(h.id),
        log_weight: h.log_weight + r.ln() + detection.ln() + innovation.log_likelihood(z),
        bernoulli: TrajectoryBernoulli {
            existence: 1.0,
            birth: b.birth,
            last: b.last,
            moments: b.moments.replace_latest(innovation.posterior(z)),
        },
        measurements,
        consecutive_misses: 0,
        miss_only: false,
    })
}

/// Weight, existence and density of the hypothesis that a measurement is the
/// first detection of an undetected trajectory.
#[derive(Debug, Clone)]
pub struct FirstDetection {
    pub log_weight: f64,
    pub existence: f64,
    pub birth: usize,
    pub moments: MomentHistory,
}

/// Innovations of every PPP component, prepared once per scan.
pub fn ppp_innovations(
    undetected: &PoissonIntensity,
    meas: &MeasurementModel,
) -> Result<Vec<Innovation>> {
    undetected
        .components
        .iter()
        .map(|c| Innovation::new(c.density(), meas))
        .collect()
}

/// Combines clutter and the gated, measurement-updated PPP components.
///
/// The density is the moment-matched Gaussian of the updated components that
/// share the birth time of the highest-weight one; that component's history
/// supplies the earlier moments. `None` when the weight is zero.
pub fn first_detection(
    z: &DVector<f64>,
    time: usize,
    undetected: &PoissonIntensity,
    innovations: &[Innovation],
    meas: &MeasurementModel,
) -> Result<Option<FirstDetection>> {
    let pd = meas.detection;
    let mut terms: Vec<(usize, f64)> = Vec::new();
    if pd > 0.0 {
        for (i, (c, innov)) in undetected.components.iter().zip(innovations).enumerate() {
            if c.weight <= 0.0 || innov.mahalanobis_sq(z)? > meas.gate_threshold {
                continue;
            }
            terms.push((i, c.weight.ln() + pd.ln() + innov.log_likelihood(z)));
        }
    }
    let log_detect = log_sum_exp(terms.iter().map(|t| t.1));
    let clutter = meas.clutter_intensity();
    let log_clutter = if clutter > 0.0 {
        clutter.ln()
    } else {
        f64::NEG_INFINITY
    };
    let log_weight = log_sum_exp([log_clutter, log_detect].into_iter());
    if log_weight == f64::NEG_INFINITY {
        return Ok(None);
    }
    let existence = (log_detect - log_weight).exp();

    let Some(&(lead, _)) = terms.iter().reduce(|a, b| if b.1 > a.1 { b } else { a }) else {
        // Pure clutter: the density is never used because existence is zero.
        let h = &meas.observation;
        let placeholder =
            GaussianDensity::new(h.transpose() * z, DMatrix::identity(h.ncols(), h.ncols()))?;
        return Ok(Some(FirstDetection {
            log_weight,
            existence: 0.0,
            birth: time,
            moments: MomentHistory::new(placeholder),
        }));
    };
    let birth = undetected.components[lead].birth;
    let group: Vec<(usize, f64)> = terms
        .iter()
        .filter(|(i, _)| undetected.components[*i].birth == birth)
        .copied()
        .collect();
    let group_max = group.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = group.iter().map(|g| (g.1 - group_max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let posteriors: Vec<GaussianDensity> = group
        .iter()
        .map(|(i, _)| innovations[*i].posterior(z))
        .collect();
    let n = posteriors[0].dim();
    let mut mean = DVector::zeros(n);
    for (w, p) in weights.iter().zip(&posteriors) {
        mean += &p.mean * (w / total);
    }
    let mut cov = DMatrix::zeros(n, n);
    for (w, p) in weights.iter().zip(&posteriors) {
        let d = &p.mean - &mean;
        cov += (&p.cov + &d * d.transpose()) * (w / total);
    }
    crate::gaussian::symmetrize(&mut cov);
    Ok(Some(FirstDetection {
        log_weight,
        existence,
        birth,
        moments: undetected.components[lead]
            .moments
            .replace_latest(GaussianDensity { mean, cov }),
    }))
}

/// The track initiated by measurement `index`: a non-existence hypothesis
/// with weight one and the first-detection hypothesis.
pub fn new_track(
    z: &DVector<f64>,
    index: MeasurementIndex,
    undetected: &PoissonIntensity,
    meas: &MeasurementModel,
    forest: &mut HypothesisForest,
) -> Result<Option<Track>> {
    let innovations = ppp_innovations(undetected, meas)?;
    let Some(fd) = first_detection(z, index.scan, undetected, &innovations, meas)? else {
        return Ok(None);
    };
    Ok(Some(track_from_detection(fd, index, forest)))
}

fn track_from_detection(
    fd: FirstDetection,
    index: MeasurementIndex,
    forest: &mut HypothesisForest,
) -> Track {
    let absent = Sth {
        id: forest.next_sth_id(),
        parent: None,
        log_weight: 0.0,
        bernoulli: TrajectoryBernoulli {
            existence: 0.0,
            birth: index.scan,
            last: index.scan,
            moments: fd.moments.clone(),
        },
        measurements: Vec::new(),
        consecutive_misses: 0,
        miss_only: true,
    };
    let detected = Sth {
        id: forest.next_sth_id(),
        parent: None,
        log_weight: fd.log_weight,
        bernoulli: TrajectoryBernoulli {
            existence: fd.existence,
            birth: fd.birth,
            last: index.scan,
            moments: fd.moments,
        },
        measurements: vec![index],
        consecutive_misses: 0,
        miss_only: false,
    };
    Track {
        id: forest.next_track_id(),
        created_at: index.scan,
        sths: vec![absent, detected],
    }
}

/// Measurement update of a predicted state.
///
/// Returns the global hypothesis made of the best hypothesis' miss children
/// and every new track's first detection, which is feasible whenever it exists.
pub fn update(
    s: &mut FilterState,
    scan: &[DVector<f64>],
    meas: &MeasurementModel,
) -> Result<Option<GlobalHypothesis>> {
    let k = s.time;
    s.forest.record_scan(k, scan.len());
    let pd = meas.detection;
    let mut warm: Option<Vec<(TrackId, SthId)>> = Some(Vec::new());

    let mut tracks = std::mem::take(&mut s.forest.tracks);
    for t in &mut tracks {
        let chosen = s.forest.best.chosen(t.id);
        let mut children = Vec::with_capacity(t.sths.len() * 2);
        let mut warm_child = None;
        for h in &t.sths {
            if let Some(c) = sth_miss_update(h, s.forest.next_sth_id(), meas) {
                if chosen == Some(h.id) {
                    warm_child = Some(c.id);
                }
                children.push(c);
            }
            if h.miss_only || h.existence() <= 0.0 || pd <= 0.0 || scan.is_empty() {
                continue;
            }
            let innovation = Innovation::new(h.bernoulli.current(), meas)?;
            for (j, z) in scan.iter().enumerate() {
                if innovation.mahalanobis_sq(z)? > meas.gate_threshold {
                    continue;
                }
                let id = s.forest.next_sth_id();
                if let Some(c) =
                    meas_update_with(h, id, z, MeasurementIndex::new(k, j), &innovation, pd)
                {
                    children.push(c);
                }
            }
        }
        match (warm.as_mut(), warm_child) {
            (Some(w), Some(c)) => w.push((t.id, c)),
            _ => warm = None,
        }
        t.sths = children;
    }

    let innovations = ppp_innovations(&s.undetected, meas)?;
    for (j, z) in scan.iter().enumerate() {
        let index = MeasurementIndex::new(k, j);
        match first_detection(z, k, &s.undetected, &innovations, meas)? {
            Some(fd) => {
                s.forest.detection_log_weights.insert(index, fd.log_weight);
                let track = track_from_detection(fd, index, &mut s.forest);
                if let Some(w) = warm.as_mut() {
                    w.push((track.id, track.sths[1].id));
                }
                tracks.push(track);
            }
            None => warm = None,
        }
    }
    s.forest.tracks = tracks;
    s.undetected.thin(pd);

    Ok(warm.map(|mut choice| {
        choice.sort();
        GlobalHypothesis {
            choice,
            log_weight: 0.0,
        }
    }))
}

/// Diagnostics of one filter recursion.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub time: usize,
    /// Whether the selected global hypothesis passed the partition check.
    pub feasible: bool,
    pub iterations: usize,
    pub gap: f64,
    pub converged: bool,
    pub tracks: usize,
    pub hypotheses: usize,
    pub trace: Vec<IterationRecord>,
}

/// One full recursion: predict, update, select the best global hypothesis,
/// then prune.
pub fn step(
    s: &mut FilterState,
    scan: &[DVector<f64>],
    models: &Models,
    cfg: &FilterConfig,
) -> Result<StepReport> {
    predict(s, &models.motion, &models.birth)?;
    let warm = update(s, scan, &models.measurement)?;
    let k = s.time;

    let problem = s.forest.to_problem()?;
    let incumbent = warm.and_then(|g| s.forest.selection_of(&problem, &g));
    let outcome = assignment::solve_with_incumbent(&problem, &cfg.solver_options(), incumbent)?;
    let best = s
        .forest
        .hypothesis_from_selection(&problem, &outcome.selection);
    let feasible = s.forest.is_feasible(&best);

    n_scan_prune(&mut s.forest, &best, cfg.n_scan, k);
    prune_within_tracks(
        &mut s.forest,
        cfg.sth_prune_log_ratio,
        cfg.max_sths_per_track,
    );
    apply_miss_only_policy(&mut s.forest, cfg.r_threshold, cfg.max_consecutive_misses);
    remove_dead_tracks(&mut s.forest, cfg.r_threshold);
    s.forest.normalize_track_weights();
    s.undetected = prune_ppp(&s.undetected, cfg.ppp_prune);

    Ok(StepReport {
        time: k,
        feasible,
        iterations: outcome.iterations,
        gap: outcome.gap,
        converged: outcome.converged,
        tracks: s.forest.tracks.len(),
        hypotheses: s.forest.sth_count(),
        trace: outcome.trace,
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

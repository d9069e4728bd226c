//! Track and single-trajectory-hypothesis bookkeeping.
//!
//! Global hypotheses other than the best one are represented implicitly by
//! the surviving hypotheses of every track.

use std::collections::BTreeMap;

use crate::assignment::{HypothesisCost, MultiFrameProblem, TrackHypotheses, WindowScan};
use crate::error::{Error, Result};
use crate::index::{MeasurementIndex, SthId, TrackId};
use crate::pmbm::bernoulli::TrajectoryBernoulli;

/// Single trajectory hypothesis: one measurement history of a track.
#[derive(Debug, Clone)]
pub struct Sth {
    pub id: SthId,
    pub parent: Option<SthId>,
    /// Unnormalised log weight; the assignment cost is its negation.
    pub log_weight: f64,
    pub bernoulli: TrajectoryBernoulli,
    /// At most one entry per scan, ordered by scan.
    pub measurements: Vec<MeasurementIndex>,
    pub consecutive_misses: u32,
    pub miss_only: bool,
}

impl Sth {
    pub fn existence(&self) -> f64 {
        self.bernoulli.existence
    }

    /// Associations up to and including `scan`; identifies the ancestor at that scan.
    pub fn ancestor(&self, scan: usize) -> &[MeasurementIndex] {
        let end = self.measurements.partition_point(|m| m.scan <= scan);
        &self.measurements[..end]
    }
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: TrackId,
    pub created_at: usize,
    pub sths: Vec<Sth>,
}

impl Track {
    pub fn sth(&self, id: SthId) -> Option<&Sth> {
        self.sths.iter().find(|h| h.id == id)
    }
}

/// One hypothesis per track.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalHypothesis {
    /// Sorted by track id.
    pub choice: Vec<(TrackId, SthId)>,
    pub log_weight: f64,
}

impl GlobalHypothesis {
    pub fn chosen(&self, track: TrackId) -> Option<SthId> {
        self.choice
            .binary_search_by_key(&track, |&(t, _)| t)
            .ok()
            .map(|i| self.choice[i].1)
    }

    pub fn contains(&self, track: TrackId, sth: SthId) -> bool {
        self.chosen(track) == Some(sth)
    }
}

#[derive(Debug, Clone, Default)]
pub struct HypothesisForest {
    pub tracks: Vec<Track>,
    pub best: GlobalHypothesis,
    /// Associations at scans up to this one are settled.
    pub horizon: usize,
    /// Measurement count of every scan received so far.
    pub scan_sizes: BTreeMap<usize, usize>,
    /// Log weight of the first-detection hypothesis of each windowed measurement.
    pub detection_log_weights: BTreeMap<MeasurementIndex, f64>,
    next_sth: u64,
    next_track: u64,
}

impl HypothesisForest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_sth_id(&mut self) -> SthId {
        self.next_sth += 1;
        SthId(self.next_sth - 1)
    }

    pub fn next_track_id(&mut self) -> TrackId {
        self.next_track += 1;
        TrackId(self.next_track - 1)
    }

    pub fn record_scan(&mut self, scan: usize, measurements: usize) {
        self.scan_sizes.insert(scan, measurements);
    }

    pub fn track(&self, id: TrackId) -> Option<&Track> {
        self.tracks
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|i| &self.tracks[i])
    }

    pub fn sth_count(&self) -> usize {
        self.tracks.iter().map(|t| t.sths.len()).sum()
    }

    /// Scans whose associations are still open.
    pub fn window_scans(&self) -> Vec<WindowScan> {
        self.scan_sizes
            .range(self.horizon + 1..)
            .map(|(&scan, &measurements)| WindowScan { scan, measurements })
            .collect()
    }

    /// Chosen hypotheses of `g`, in track order. Missing choices are skipped.
    pub fn selected<'a>(
        &'a self,
        g: &'a GlobalHypothesis,
    ) -> impl Iterator<Item = (&'a Track, &'a Sth)> + 'a {
        self.tracks
            .iter()
            .filter_map(move |t| g.chosen(t.id).and_then(|id| t.sth(id)).map(|h| (t, h)))
    }

    /// One existing hypothesis per track, and every windowed measurement
    /// explained by exactly one of them.
    pub fn is_feasible(&self, g: &GlobalHypothesis) -> bool {
        if g.choice.len() != self.tracks.len() {
            return false;
        }
        let mut seen: BTreeMap<MeasurementIndex, u32> = BTreeMap::new();
        for t in &self.tracks {
            let Some(h) = g.chosen(t.id).and_then(|id| t.sth(id)) else {
                return false;
            };
            for m in h.measurements.iter().filter(|m| m.scan > self.horizon) {
                *seen.entry(*m).or_default() += 1;
            }
        }
        if seen.values().any(|&c| c != 1) {
            return false;
        }
        let required: usize = self
            .scan_sizes
            .range(self.horizon + 1..)
            .map(|(_, &m)| m)
            .sum();
        seen.len() == required
            && seen.keys().all(|m| {
                self.scan_sizes
                    .get(&m.scan)
                    .is_some_and(|&size| m.index < size)
            })
    }

    /// The windowed multi-frame assignment problem. Costs are shifted per
    /// track so that each track's cheapest hypothesis costs zero.
    pub fn to_problem(&self) -> Result<MultiFrameProblem> {
        let scans = self.window_scans();
        let tracks = self
            .tracks
            .iter()
            .map(|t| {
                let top = t
                    .sths
                    .iter()
                    .map(|h| h.log_weight)
                    .fold(f64::NEG_INFINITY, f64::max);
                TrackHypotheses {
                    track: t.id,
                    created_at: t.created_at,
                    hypotheses: t
                        .sths
                        .iter()
                        .map(|h| HypothesisCost {
                            sth: h.id,
                            cost: top - h.log_weight,
                            measurements: h
                                .measurements
                                .iter()
                                .filter(|m| m.scan > self.horizon)
                                .copied()
                                .collect(),
                        })
                        .collect(),
                }
            })
            .collect();
        MultiFrameProblem::new(scans, tracks)
    }

    /// Positions of the hypotheses of `g` in the problem built by [`Self::to_problem`].
    pub fn selection_of(
        &self,
        problem: &MultiFrameProblem,
        g: &GlobalHypothesis,
    ) -> Option<Vec<usize>> {
        problem
            .tracks()
            .iter()
            .map(|t| {
                let id = g.chosen(t.track)?;
                t.hypotheses.iter().position(|h| h.sth == id)
            })
            .collect()
    }

    pub fn hypothesis_from_selection(
        &self,
        problem: &MultiFrameProblem,
        selection: &[usize],
    ) -> GlobalHypothesis {
        let mut choice: Vec<(TrackId, SthId)> = problem
            .tracks()
            .iter()
            .zip(selection)
            .map(|(t, &i)| (t.track, t.hypotheses[i].sth))
            .collect();
        choice.sort();
        let log_weight = choice
            .iter()
            .map(|&(t, h)| {
                self.track(t)
                    .and_then(|t| t.sth(h))
                    .map_or(0.0, |h| h.log_weight)
            })
            .sum();
        GlobalHypothesis { choice, log_weight }
    }

    /// Subtracts each track's largest log weight. Relative weights within a
    /// track, and therefore every argmin, are unchanged.
    pub fn normalize_track_weights(&mut self) {
        for t in &mut self.tracks {
            let top = t
                .sths
                .iter()
                .map(|h| h.log_weight)
                .fold(f64::NEG_INFINITY, f64::max);
            if top.is_finite() {
                for h in &mut t.sths {
                    h.log_weight -= top;
                }
            }
        }
        self.refresh_best_weight();
    }

    fn refresh_best_weight(&mut self) {
        let mut total = 0.0;
        for &(t, h) in &self.best.choice {
            if let Some(s) = self.track(t).and_then(|t| t.sth(h)) {
                total += s.log_weight;
            }
        }
        self.best.log_weight = total;
    }

    fn drop_tracks(&mut self, keep: impl Fn(&Track) -> bool) {
        let mut removed = Vec::new();
        self.tracks.retain(|t| {
            let k = keep(t);
            if !k {
                removed.push(t.id);
            }
            k
        });
        if !removed.is_empty() {
            self.best.choice.retain(|(t, _)| !removed.contains(t));
        }
    }
}

/// Removes every hypothesis whose ancestor at scan `tau - n` differs from the
/// ancestor of the hypothesis `best` chooses for that track, then deletes
/// tracks left with only non-existence hypotheses. A zero-existence
/// hypothesis that still holds a measurement after the horizon (a trajectory
/// that ended inside the window) keeps its track. `best` becomes the forest's
/// best hypothesis.
pub fn n_scan_prune(f: &mut HypothesisForest, best: &GlobalHypothesis, n: usize, tau: usize) {
    f.best = best.clone();
    if n >= tau {
        return;
    }
    let horizon = tau - n;
    for t in &mut f.tracks {
        let Some(chosen) = best.chosen(t.id) else {
            continue;
        };
        let Some(anchor) = t.sth(chosen).map(|h| h.ancestor(horizon).to_vec()) else {
            continue;
        };
        t.sths.retain(|h| h.ancestor(horizon) == anchor.as_slice());
    }
    f.horizon = f.horizon.max(horizon);
    let cutoff = f.horizon;
    f.drop_tracks(|t| {
        t.sths
            .iter()
            .any(|h| h.existence() > 0.0 || h.measurements.last().is_some_and(|m| m.scan > cutoff))
    });
    f.detection_log_weights.retain(|m, _| m.scan > cutoff);
    f.refresh_best_weight();
}

/// Flags low-existence hypotheses as miss-only and removes hypotheses with
/// more than `max_consecutive_misses` consecutive misses unless the best
/// hypothesis uses them.
pub fn apply_miss_only_policy(
    f: &mut HypothesisForest,
    r_threshold: f64,
    max_consecutive_misses: u32,
) {
    let best = &f.best;
    for t in &mut f.tracks {
        let chosen = best.chosen(t.id);
        t.sths
            .retain(|h| h.consecutive_misses <= max_consecutive_misses || chosen == Some(h.id));
        for h in &mut t.sths {
            h.miss_only = h.existence() < r_threshold;
        }
    }
}

/// Caps the hypotheses of every track.
///
/// Hypotheses are ranked by their log weight with the first-detection log
/// weight of every windowed measurement they hold subtracted, which puts
/// hypotheses holding different measurements on a common scale. Those more
/// than `log_ratio` below the top of their track are dropped and at most
/// `max_per_track` are kept. Non-existence hypotheses and the best hypothesis
/// always survive.
pub fn prune_within_tracks(f: &mut HypothesisForest, log_ratio: f64, max_per_track: usize) {
    let horizon = f.horizon;
    let detection = &f.detection_log_weights;
    let best = &f.best;
    for t in &mut f.tracks {
        if t.sths.len() <= 1 {
            continue;
        }
        let chosen = best.chosen(t.id);
        let score: Vec<f64> = t
            .sths
            .iter()
            .map(|h| {
                h.log_weight
                    - h.measurements
                        .iter()
                        .filter(|m| m.scan > horizon)
                        .map(|m| detection.get(m).copied().unwrap_or(0.0))
                        .sum::<f64>()
            })
            .collect();
        let top = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut order: Vec<usize> = (0..t.sths.len()).collect();
        order.sort_by(|&a, &b| {
            score[b]
                .total_cmp(&score[a])
                .then(t.sths[a].id.cmp(&t.sths[b].id))
        });
        let mut keep = vec![false; t.sths.len()];
        let mut kept = 0;
        for &i in &order {
            let h = &t.sths[i];
            let protected = chosen == Some(h.id) || h.existence() == 0.0;
            if protected || (kept < max_per_track && score[i] >= top - log_ratio) {
                keep[i] = true;
                kept += 1;
            }
        }
        let mut i = 0;
        t.sths.retain(|_| {
            i += 1;
            keep[i - 1]
        });
    }
}

/// Deletes tracks whose hypotheses all have existence below `r_threshold` and
/// hold no measurement inside the association window.
pub fn remove_dead_tracks(f: &mut HypothesisForest, r_threshold: f64) {
    let horizon = f.horizon;
    f.drop_tracks(|t| {
        t.sths.iter().any(|h| h.existence() >= r_threshold)
            || t.sths
                .iter()
                .any(|h| h.measurements.last().is_some_and(|m| m.scan > horizon))
    });
}

/// Every feasible global hypothesis with weights normalised to sum to one
/// (returned as log weights). Fails when the product of per-track hypothesis
/// counts exceeds `cap`.
pub fn enumerate_global_hypotheses(
    f: &HypothesisForest,
    cap: u128,
) -> Result<Vec<GlobalHypothesis>> {
    let mut count: u128 = 1;
    for t in &f.tracks {
        count = count.saturating_mul(t.sths.len() as u128);
        if count > cap {
            return Err(Error::CapExceeded { count, cap });
        }
    }
    let required: usize = f.scan_sizes.range(f.horizon + 1..).map(|(_, &m)| m).sum();
    let mut used: BTreeMap<MeasurementIndex, ()> = BTreeMap::new();
    let mut current = Vec::with_capacity(f.tracks.len());
    let mut out = Vec::new();
    enumerate_rec(f, 0, required, &mut used, &mut current, 0.0, &mut out);

    let max = out
        .iter()
        .map(|g| g.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        let log_norm = max
            + out
                .iter()
                .map(|g| (g.log_weight - max).exp())
                .sum::<f64>()
                .ln();
        for g in &mut out {
            g.log_weight -= log_norm;
        }
    }
    Ok(out)
}

fn enumerate_rec(
    f: &HypothesisForest,
    pos: usize,
    required: usize,
    used: &mut BTreeMap<MeasurementIndex, ()>,
    current: &mut Vec<(TrackId, SthId)>,
    log_weight: f64,
    out: &mut Vec<GlobalHypothesis>,
) {
    if pos == f.tracks.len() {
        if used.len() == required {
            let mut choice = current.clone();
            choice.sort();
            out.push(GlobalHypothesis { choice, log_weight });
        }
        return;
    }
    let t = &f.tracks[pos];
    for h in &t.sths {
        let window: Vec<MeasurementIndex> = h
            .measurements
            .iter()
            .filter(|m| m.scan > f.horizon)
            .copied()
            .collect();
        if window.iter().any(|m| used.contains_key(m)) {
            continue;
        }
        for m in &window {
            used.insert(*m, ());
        }
        current.push((t.id, h.id));
        enumerate_rec(
            f,
            pos + 1,
            required,
            used,
            current,
            log_weight + h.log_weight,
            out,
        );
        current.pop();
        for m in &window {
            used.remove(m);
        }
    }
}

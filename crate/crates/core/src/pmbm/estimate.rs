use crate::error::{Error, Result};
use crate::gaussian::{rts_smooth, MotionModel};
use crate::hypothesis::GlobalHypothesis;
use crate::index::TrackId;

use super::bernoulli::{Trajectory, TrajectoryBernoulli, Window};
use super::FilterState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMode {
    Filtered,
    Smoothed,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub track: TrackId,
    pub existence: f64,
    pub trajectory: Trajectory,
}

/// Mode of the cardinality distribution of independent Bernoullis. Ties go
/// to the smaller cardinality.
pub fn map_cardinality(existence: &[f64]) -> usize {
    let mut pmf = vec![1.0];
    for &r in existence {
        let mut next = vec![0.0; pmf.len() + 1];
        for (n, p) in pmf.iter().enumerate() {
            next[n] += p * (1.0 - r);
            next[n + 1] += p * r;
        }
        pmf = next;
    }
    let mut best = 0;
    for (n, &p) in pmf.iter().enumerate() {
        if p > pmf[best] {
            best = n;
        }
    }
    best
}

/// The `n*` Bernoullis of `best` with the highest existence, `n*` being the
/// MAP cardinality. Ties in existence go to the older track.
pub fn selected_bernoullis<'a>(
    s: &'a FilterState,
    best: &'a GlobalHypothesis,
) -> Vec<(TrackId, &'a TrajectoryBernoulli)> {
    let mut all: Vec<(TrackId, &TrajectoryBernoulli)> = s
        .forest
        .selected(best)
        .map(|(t, h)| (t.id, &h.bernoulli))
        .collect();
    let existence: Vec<f64> = all.iter().map(|(_, b)| b.existence).collect();
    let n = map_cardinality(&existence);
    all.sort_by(|a, b| b.1.existence.total_cmp(&a.1.existence).then(a.0.cmp(&b.0)));
    all.truncate(n);
    all
}

/// Trajectory of the retained moments of `b`, smoothed if requested.
pub fn trajectory_of(
    b: &TrajectoryBernoulli,
    mode: EstimateMode,
    motion: &MotionModel,
) -> Result<Trajectory> {
    let filtered = b.moments.to_vec();
    let densities = match mode {
        EstimateMode::Filtered => filtered,
        EstimateMode::Smoothed => rts_smooth(&filtered, motion)?,
    };
    let states: Vec<_> = densities.into_iter().map(|d| d.mean).collect();
    Ok(Trajectory::from_vectors(b.window_start(), &states))
}

/// Trajectory estimates from the given global hypothesis.
pub fn extract_estimates(
    s: &FilterState,
    best: &GlobalHypothesis,
    mode: EstimateMode,
    motion: &MotionModel,
) -> Result<Vec<Estimate>> {
    if mode == EstimateMode::Smoothed && s.window != Window::Full {
        return Err(Error::InsufficientHistory);
    }
    selected_bernoullis(s, best)
        .into_iter()
        .map(|(track, b)| {
            Ok(Estimate {
                track,
                existence: b.existence,
                trajectory: trajectory_of(b, mode, motion)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianDensity;
    use crate::hypothesis::{Sth, Track};
    use crate::index::SthId;
    use crate::pmbm::bernoulli::MomentHistory;

    /// Cardinality pmf by summing over all 2ⁿ existence patterns.
    fn brute_force_map(r: &[f64]) -> usize {
        let n = r.len();
        let mut pmf = vec![0.0; n + 1];
        for mask in 0..(1u32 << n) {
            let mut p = 1.0;
            for (i, ri) in r.iter().enumerate() {
                p *= if mask & (1 << i) != 0 { *ri } else { 1.0 - ri };
            }
            pmf[mask.count_ones() as usize] += p;
        }
        (0..=n).fold(0, |b, k| if pmf[k] > pmf[b] { k } else { b })
    }

    #[test]
    fn map_cardinality_matches_enumeration() {
        assert_eq!(map_cardinality(&[0.99, 0.98, 0.01]), 2);
        assert_eq!(brute_force_map(&[0.99, 0.98, 0.01]), 2);
        assert_eq!(map_cardinality(&[0.0, 0.0]), 0);
        assert_eq!(map_cardinality(&[]), 0);
        for r in [
            [0.3, 0.6, 0.7, 0.51],
            [0.5, 0.5, 0.5, 0.9],
            [0.1, 0.2, 0.95, 0.8],
        ] {
            assert_eq!(map_cardinality(&r), brute_force_map(&r));
        }
    }

    fn state_with(rs: &[f64], window: Window) -> (FilterState, GlobalHypothesis) {
        let mut s = FilterState::new(window);
        let mut choice = Vec::new();
        for (i, &r) in rs.iter().enumerate() {
            let mut moments =
                MomentHistory::new(GaussianDensity::from_slices(&[i as f64], &[1.0]).unwrap());
            for k in 1..3 {
                moments = moments.push(
                    GaussianDensity::from_slices(&[(i + k) as f64], &[1.0]).unwrap(),
                    window,
                );
            }
            s.forest.tracks.push(Track {
                id: TrackId(i as u64),
                created_at: 1,
                sths: vec![Sth {
                    id: SthId(i as u64),
                    parent: None,
                    log_weight: 0.0,
                    bernoulli: TrajectoryBernoulli {
                        existence: r,
                        birth: 1,
                        last: 3,
                        moments,
                    },
                    measurements: Vec::new(),
                    consecutive_misses: 0,
                    miss_only: false,
                }],
            });
            choice.push((TrackId(i as u64), SthId(i as u64)));
        }
        (
            s,
            GlobalHypothesis {
                choice,
                log_weight: 0.0,
            },
        )
    }

    fn scalar_motion() -> MotionModel {
        MotionModel::new(
            nalgebra::DMatrix::from_element(1, 1, 1.0),
            nalgebra::DMatrix::from_element(1, 1, 1.0),
            0.99,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn extraction_picks_map_count() {
        let (s, best) = state_with(&[0.99, 0.01, 0.98], Window::Full);
        let est = extract_estimates(&s, &best, EstimateMode::Filtered, &scalar_motion()).unwrap();
        let tracks: Vec<u64> = est.iter().map(|e| e.track.0).collect();
        assert_eq!(tracks, vec![0, 2]);
    }

    #[test]
    fn empty_when_nothing_exists() {
        let (s, best) = state_with(&[0.0, 0.0], Window::Full);
        assert!(
            extract_estimates(&s, &best, EstimateMode::Filtered, &scalar_motion())
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn deterministic_trajectory_length() {
        let (s, best) = state_with(&[1.0], Window::Full);
        let est = extract_estimates(&s, &best, EstimateMode::Smoothed, &scalar_motion()).unwrap();
        assert_eq!(est[0].trajectory.birth, 1);
        assert_eq!(est[0].trajectory.last, 3);
        assert_eq!(est[0].trajectory.len(), 3);
    }

    #[test]
    fn smoothing_needs_full_window() {
        let (s, best) = state_with(&[1.0], Window::Latest(1));
        assert_eq!(
            extract_estimates(&s, &best, EstimateMode::Smoothed, &scalar_motion()).unwrap_err(),
            Error::InsufficientHistory
        );
        let est = extract_estimates(&s, &best, EstimateMode::Filtered, &scalar_motion()).unwrap();
        assert_eq!(est[0].trajectory.birth, 3);
        assert_eq!(est[0].trajectory.states, vec![vec![2.0]]);
    }
}

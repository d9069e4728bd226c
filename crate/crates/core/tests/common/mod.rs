//! Random instances and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use trajpmbm::assignment::{
    AssignmentMatrix, HypothesisCost, MultiFrameProblem, TrackHypotheses, WindowScan,
};
use trajpmbm::index::{MeasurementIndex, SthId, TrackId};

/// A feasible multi-frame instance: every measurement is planted in one
/// track's hypothesis list, the other hypotheses take random measurements.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    max_scans: usize,
    max_meas: usize,
    max_tracks: usize,
) -> MultiFrameProblem {
    let tw = rng.gen_range(1..=max_scans);
    let scans: Vec<WindowScan> = (0..tw)
        .map(|k| WindowScan {
            scan: k + 1,
            measurements: rng.gen_range(0..=max_meas),
        })
        .collect();
    let busiest = scans.iter().map(|s| s.measurements).max().unwrap_or(0);
    let nt = rng.gen_range(busiest.max(1)..=max_tracks.max(busiest).max(1));

    let mut planted: Vec<Vec<MeasurementIndex>> = vec![Vec::new(); nt];
    for s in &scans {
        let mut free: Vec<usize> = (0..nt).collect();
        for j in 0..s.measurements {
            let t = free.swap_remove(rng.gen_range(0..free.len()));
            planted[t].push(MeasurementIndex::new(s.scan, j));
        }
    }

    let mut next_id = 0u64;
    let mut tracks = Vec::with_capacity(nt);
    for (t, plant) in planted.into_iter().enumerate() {
        let earliest = plant.first().map_or(tw, |m| m.scan);
        let created_at = rng.gen_range(1..=earliest);
        let mut sets = vec![plant];
        for _ in 0..rng.gen_range(0..=4) {
            let mut h = Vec::new();
            for s in scans.iter().filter(|s| s.scan >= created_at) {
                if s.measurements > 0 && rng.gen_bool(0.5) {
                    h.push(MeasurementIndex::new(
                        s.scan,
                        rng.gen_range(0..s.measurements),
                    ));
                }
            }
            sets.push(h);
        }
        let hypotheses = sets
            .into_iter()
            .map(|measurements| {
                next_id += 1;
                HypothesisCost {
                    sth: SthId(next_id),
                    cost: rng.gen_range(0.0..10.0),
                    measurements,
                }
            })
            .collect();
        tracks.push(TrackHypotheses {
            track: TrackId(t as u64),
            created_at,
            hypotheses,
        });
    }
    MultiFrameProblem::new(scans, tracks).expect("generated instance is well formed")
}

/// Exhaustive minimum over all feasible selections.
pub fn brute_force(p: &MultiFrameProblem) -> Option<(f64, Vec<usize>)> {
    fn rec(
        p: &MultiFrameProblem,
        t: usize,
        sel: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if t == p.tracks().len() {
            if p.is_feasible(sel) {
                let c = p.primal_cost(sel);
                if best.as_ref().map_or(true, |(b, _)| c < *b) {
                    *best = Some((c, sel.clone()));
                }
            }
            return;
        }
        for h in 0..p.tracks()[t].hypotheses.len() {
            sel.push(h);
            rec(p, t + 1, sel, best);
            sel.pop();
        }
    }
    let mut best = None;
    rec(p, 0, &mut Vec::new(), &mut best);
    best
}

/// Direct set check: chosen measurement sets are disjoint and cover the window.
pub fn is_partition(p: &MultiFrameProblem, selection: &[usize]) -> bool {
    let window: BTreeSet<usize> = p.scans().iter().map(|s| s.scan).collect();
    let mut seen = BTreeSet::new();
    for (t, &h) in selection.iter().enumerate() {
        for m in &p.tracks()[t].hypotheses[h].measurements {
            if window.contains(&m.scan) && !seen.insert(*m) {
                return false;
            }
        }
    }
    let total: usize = p.scans().iter().map(|s| s.measurements).sum();
    seen.len() == total
}

/// Minimum over all injective row-to-column maps, by permutation search.
pub fn brute_force_assignment(m: &AssignmentMatrix) -> Option<f64> {
    fn rec(m: &AssignmentMatrix, r: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if r == m.rows() {
            *best = best.min(acc);
            return;
        }
        for c in 0..m.cols() {
            let v = m.get(r, c);
            if !used[c] && v.is_finite() {
                used[c] = true;
                rec(m, r + 1, used, acc + v, best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(m, 0, &mut vec![false; m.cols()], 0.0, &mut best);
    best.is_finite().then_some(best)
}

/// GOSPA (α = 2) by minimising over every partial matching of `x` into `y`.
pub fn brute_force_gospa(x: &[Vec<f64>], y: &[Vec<f64>], c: f64, p: f64) -> f64 {
    fn dist(a: &[f64], b: &[f64]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }
    fn rec(
        x: &[Vec<f64>],
        y: &[Vec<f64>],
        i: usize,
        used: &mut Vec<bool>,
        matched: usize,
        acc: f64,
        c: f64,
        p: f64,
        best: &mut f64,
    ) {
        if i == x.len() {
            let unmatched = (x.len() - matched) + (y.len() - matched);
            *best = best.min(acc + c.powf(p) / 2.0 * unmatched as f64);
            return;
        }
        rec(x, y, i + 1, used, matched, acc, c, p, best);
        for j in 0..y.len() {
            if !used[j] {
                used[j] = true;
                rec(
                    x,
                    y,
                    i + 1,
                    used,
                    matched + 1,
                    acc + dist(&x[i], &y[j]).min(c).powf(p),
                    c,
                    p,
                    best,
                );
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(x, y, 0, &mut vec![false; y.len()], 0, 0.0, c, p, &mut best);
    best.powf(1.0 / p)
}

//! GOSPA scoring and a coarse trajectory diagnostic.

use serde::{Deserialize, Serialize};

use crate::assignment::{auction_solve, AssignmentMatrix};
use crate::error::{invalid, Result};
use crate::pmbm::Trajectory;

/// Cost quantum of the GOSPA assignment, far below any reported precision.
const GOSPA_RESOLUTION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GospaConfig {
    pub c: f64,
    pub p: f64,
    pub alpha: f64,
    /// State components entering the distance.
    pub position_indices: Vec<usize>,
}

impl Default for GospaConfig {
    fn default() -> Self {
        Self {
            c: 20.0,
            p: 1.0,
            alpha: 2.0,
            position_indices: vec![0, 2],
        }
    }
}

impl GospaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(invalid("c", "must be positive"));
        }
        if !(self.p >= 1.0) {
            return Err(invalid("p", "must be at least 1"));
        }
        if self.alpha != 2.0 {
            return Err(invalid("alpha", "only alpha = 2 is supported"));
        }
        Ok(())
    }

    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        self.position_indices
            .iter()
            .map(|&i| (x[i] - y[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// GOSPA value and its decomposition, the parts in units of distance^p.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GospaResult {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    #[serde(rename = "false")]
    pub false_: f64,
}

impl GospaResult {
    pub fn add(&mut self, o: &GospaResult) {
        self.total += o.total;
        self.localization += o.localization;
        self.missed += o.missed;
        self.false_ += o.false_;
    }

    pub fn scaled(&self, s: f64) -> GospaResult {
        GospaResult {
            total: self.total * s,
            localization: self.localization * s,
            missed: self.missed * s,
            false_: self.false_ * s,
        }
    }
}

/// GOSPA with α = 2 between two finite sets of states.
///
/// Solved as an assignment on the `(|X|+|Y|)`-square matrix that pairs every
/// point either with a point of the other set (cost `min(d, c)^p`) or with a
/// dummy (cost `c^p / 2`). A pair at distance `c` or more is worth the same
/// as leaving both unmatched and is reported that way.
pub fn gospa(truth: &[Vec<f64>], est: &[Vec<f64>], cfg: &GospaConfig) -> GospaResult {
    let nx = truth.len();
    let ny = est.len();
    let cp = cfg.c.powf(cfg.p);
    let half = cp / 2.0;
    if nx == 0 || ny == 0 {
        let missed = half * nx as f64;
        let false_ = half * ny as f64;
        return finish(0.0, missed, false_, cfg.p);
    }
    let n = nx + ny;
    let mut dist = vec![0.0; nx * ny];
    let mut m = AssignmentMatrix::forbidden(n, n);
    for i in 0..n {
        for j in 0..n {
            let cost = match (i < nx, j < ny) {
                (true, true) => {
                    let d = cfg.distance(&truth[i], &est[j]);
                    dist[i * ny + j] = d;
                    d.powf(cfg.p).min(cp)
                }
                (true, false) => {
                    if j - ny == i {
                        half
                    } else {
                        f64::INFINITY
                    }
                }
                (false, true) => {
                    if i - nx == j {
                        half
                    } else {
                        f64::INFINITY
                    }
                }
                (false, false) => 0.0,
            };
            m.set(i, j, cost);
        }
    }
    let a = auction_solve(&m, GOSPA_RESOLUTION).expect("augmented GOSPA matrix is always feasible");
    let mut loc = 0.0;
    let mut matched = 0usize;
    for (i, &j) in a.row_to_col.iter().enumerate().take(nx) {
        if j < ny && dist[i * ny + j] < cfg.c {
            loc += dist[i * ny + j].powf(cfg.p);
            matched += 1;
        }
    }
    let missed = half * (nx - matched) as f64;
    let false_ = half * (ny - matched) as f64;
    finish(loc, missed, false_, cfg.p)
}

fn finish(localization: f64, missed: f64, false_: f64, p: f64) -> GospaResult {
    GospaResult {
        total: (localization + missed + false_).powf(1.0 / p),
        localization,
        missed,
        false_,
    }
}

/// Root-mean-square position error over matched time steps, or `None` when
/// no estimated trajectory overlaps a true one in time.
///
/// Pairs are matched greedily by mean position distance over their common
/// time steps (longer overlap breaks ties); each trajectory is matched at
/// most once. This is a diagnostic, not a trajectory metric.
pub fn matched_position_rmse(
    truth: &[Trajectory],
    est: &[Trajectory],
    position_indices: &[usize],
) -> Option<f64> {
    struct Pair {
        t: usize,
        e: usize,
        mean: f64,
        overlap: usize,
        sq_sum: f64,
    }
    let mut pairs = Vec::new();
    for (ti, t) in truth.iter().enumerate() {
        for (ei, e) in est.iter().enumerate() {
            let from = t.birth.max(e.birth);
            let to = t.last.min(e.last);
            if from > to {
                continue;
            }
            let mut sum = 0.0;
            let mut sq_sum = 0.0;
            for k in from..=to {
                let (x, y) = (t.state_at(k).unwrap(), e.state_at(k).unwrap());
                let sq: f64 = position_indices
                    .iter()
                    .map(|&i| (x[i] - y[i]).powi(2))
                    .sum();
                sum += sq.sqrt();
                sq_sum += sq;
            }
            let overlap = to - from + 1;
            pairs.push(Pair {
                t: ti,
                e: ei,
                mean: sum / overlap as f64,
                overlap,
                sq_sum,
            });
        }
    }
    pairs.sort_by(|a, b| {
        a.mean
            .total_cmp(&b.mean)
            .then(b.overlap.cmp(&a.overlap))
            .then(a.t.cmp(&b.t))
            .then(a.e.cmp(&b.e))
    });
    let mut used_t = vec![false; truth.len()];
    let mut used_e = vec![false; est.len()];
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for p in pairs {
        if used_t[p.t] || used_e[p.e] {
            continue;
        }
        used_t[p.t] = true;
        used_e[p.e] = true;
        sq_sum += p.sq_sum;
        count += p.overlap;
    }
    (count > 0).then(|| (sq_sum / count as f64).sqrt())
}

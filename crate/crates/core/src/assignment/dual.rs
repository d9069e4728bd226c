//! Multi-frame assignment by dual decomposition.
//!
//! The problem selects one single-trajectory hypothesis per track so that every
//! measurement of every windowed scan is explained exactly once. It is split
//! into one 2-D assignment subproblem per scan; the copies of the selection are
//! coupled through Lagrange multipliers that sum to zero over the scans and are
//! driven towards consensus by projected subgradient steps. Feasible solutions
//! are recovered each iteration by branch and bound over the tracks on which
//! the subproblems disagree.

use std::collections::BTreeMap;

use super::auction::{auction_solve, AssignmentMatrix, DEFAULT_RESOLUTION};
use crate::error::{Error, Result};
use crate::index::{MeasurementIndex, SthId, TrackId};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowScan {
    pub scan: usize,
    pub measurements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCost {
    pub sth: SthId,
    /// Negative log weight.
    pub cost: f64,
    pub measurements: Vec<MeasurementIndex>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackHypotheses {
    pub track: TrackId,
    /// Scan at which the track was initiated; it cannot hold earlier measurements.
    pub created_at: usize,
    pub hypotheses: Vec<HypothesisCost>,
}

/// A multi-frame assignment instance restricted to a window of scans.
///
/// Measurements outside the window are ignored: associations there are frozen
/// and identical across the hypotheses of a track.
#[derive(Debug, Clone)]
pub struct MultiFrameProblem {
    scans: Vec<WindowScan>,
    tracks: Vec<TrackHypotheses>,
    hyp_offset: Vec<usize>,
    hyp_track: Vec<usize>,
    cost: Vec<f64>,
    meas_at: Vec<u32>,
    hyp_meas: Vec<Vec<u32>>,
    meas_offset: Vec<usize>,
    first_pos: Vec<usize>,
}

impl MultiFrameProblem {
    /// Validates and indexes an instance. Hypotheses of each track are
    /// reordered by id so that index order breaks ties.
    pub fn new(mut scans: Vec<WindowScan>, mut tracks: Vec<TrackHypotheses>) -> Result<Self> {
        scans.sort_by_key(|s| s.scan);
        if scans.windows(2).any(|w| w[0].scan == w[1].scan) {
            return Err(Error::Infeasible("duplicate scan in window".into()));
        }
        let tw = scans.len();
        let pos_of: BTreeMap<usize, usize> =
            scans.iter().enumerate().map(|(k, s)| (s.scan, k)).collect();
        let mut meas_offset = Vec::with_capacity(tw + 1);
        let mut acc = 0;
        for s in &scans {
            meas_offset.push(acc);
            acc += s.measurements;
        }
        meas_offset.push(acc);

        let mut hyp_offset = vec![0];
        let mut hyp_track = Vec::new();
        let mut cost = Vec::new();
        let mut meas_at = Vec::new();
        let mut hyp_meas = Vec::new();
        let mut first_pos = Vec::with_capacity(tracks.len());
        for (ti, t) in tracks.iter_mut().enumerate() {
            if t.hypotheses.is_empty() {
                return Err(Error::Infeasible(format!(
                    "track {} has no hypotheses",
                    t.track
                )));
            }
            t.hypotheses.sort_by_key(|h| h.sth);
            first_pos.push(
                scans
                    .iter()
                    .position(|s| s.scan >= t.created_at)
                    .unwrap_or(tw),
            );
            for h in &t.hypotheses {
                if !h.cost.is_finite() {
                    return Err(Error::Infeasible(format!(
                        "hypothesis {} has cost {}",
                        h.sth, h.cost
                    )));
                }
                let mut row = vec![NONE; tw];
                let mut flat = Vec::new();
                for mi in &h.measurements {
                    let Some(&k) = pos_of.get(&mi.scan) else {
                        continue;
                    };
                    if mi.index >= scans[k].measurements {
                        return Err(Error::Infeasible(format!(
                            "hypothesis {} references measurement {mi} beyond the scan size",
                            h.sth
                        )));
                    }
                    if mi.scan < t.created_at {
                        return Err(Error::Infeasible(format!(
                            "hypothesis {} holds {mi} from before its track was created",
                            h.sth
                        )));
                    }
                    if row[k] != NONE {
                        return Err(Error::Infeasible(format!(
                            "hypothesis {} holds two measurements of scan {}",
                            h.sth, mi.scan
                        )));
                    }
                    row[k] = mi.index as u32;
                    flat.push((meas_offset[k] + mi.index) as u32);
                }
                meas_at.extend(row);
                hyp_meas.push(flat);
                cost.push(h.cost);
                hyp_track.push(ti);
            }
            hyp_offset.push(cost.len());
        }
        Ok(Self {
            scans,
            tracks,
            hyp_offset,
            hyp_track,
            cost,
            meas_at,
            hyp_meas,
            meas_offset,
            first_pos,
        })
    }

    pub fn scans(&self) -> &[WindowScan] {
        &self.scans
    }

    pub fn tracks(&self) -> &[TrackHypotheses] {
        &self.tracks
    }

    pub fn window_len(&self) -> usize {
        self.scans.len()
    }

    pub fn hypothesis_count(&self) -> usize {
        self.cost.len()
    }

    fn total_measurements(&self) -> usize {
        *self.meas_offset.last().unwrap()
    }

    fn hyps(&self, track: usize) -> std::ops::Range<usize> {
        self.hyp_offset[track]..self.hyp_offset[track + 1]
    }

    fn meas_at(&self, hyp: usize, k: usize) -> u32 {
        self.meas_at[hyp * self.scans.len() + k]
    }

    /// Sum of the costs of one hypothesis per track (indices into each track's list).
    pub fn primal_cost(&self, selection: &[usize]) -> f64 {
        selection
            .iter()
            .enumerate()
            .map(|(t, &h)| self.cost[self.hyp_offset[t] + h])
            .sum()
    }

    /// Checks the partition constraints: one hypothesis per track, and every
    /// windowed measurement explained by exactly one selected hypothesis.
    pub fn is_feasible(&self, selection: &[usize]) -> bool {
        if selection.len() != self.tracks.len() {
            return false;
        }
        let mut count = vec![0u32; self.total_measurements()];
        for (t, &h) in selection.iter().enumerate() {
            if h >= self.hyps(t).len() {
                return false;
            }
            for &m in &self.hyp_meas[self.hyp_offset[t] + h] {
                count[m as usize] += 1;
            }
        }
        count.iter().all(|&c| c == 1)
    }
}

/// Lagrange multipliers and per-iteration bookkeeping.
#[derive(Debug, Clone)]
pub struct DualState {
    /// `multipliers[k][h]` for window position `k` and flat hypothesis `h`.
    pub multipliers: Vec<Vec<f64>>,
    /// Hypothesis chosen for every track by the subproblem of each window position.
    pub subproblem_solutions: Vec<Vec<usize>>,
    pub subproblem_values: Vec<f64>,
    pub best_primal: Option<(f64, Vec<usize>)>,
    pub dual_cost: f64,
    pub best_dual: f64,
    pub iteration: usize,
    /// Factor on the Polyak step, halved whenever the dual stalls.
    pub step_scale: f64,
    /// Upper bound on how far the dual value can overshoot because of cost quantisation.
    pub dual_tolerance: f64,
}

impl DualState {
    pub fn new(p: &MultiFrameProblem) -> Self {
        let tw = p.window_len();
        Self {
            multipliers: vec![vec![0.0; p.hypothesis_count()]; tw],
            subproblem_solutions: vec![vec![0; p.tracks.len()]; tw],
            subproblem_values: vec![0.0; tw],
            best_primal: None,
            dual_cost: f64::NEG_INFINITY,
            best_dual: f64::NEG_INFINITY,
            iteration: 0,
            step_scale: 1.0,
            dual_tolerance: 0.0,
        }
    }

    fn penalized(&self, p: &MultiFrameProblem, k: usize, h: usize) -> f64 {
        p.cost[h] / p.window_len() as f64 + self.multipliers[k][h]
    }

    fn offer_primal(&mut self, cost: f64, selection: Vec<usize>) {
        if self.best_primal.as_ref().map_or(true, |(c, _)| cost < *c) {
            self.best_primal = Some((cost, selection));
        }
    }
}

/// The 2-D assignment problem of one scan.
///
/// Rows are the scan's measurements followed by slack rows; columns are the
/// tracks that can take at least one of the measurements. A measurement entry
/// is the penalised cost of the cheapest hypothesis taking that measurement,
/// minus the cheapest hypothesis of the track taking none; slack entries are 0.
/// Tracks without such an alternative keep their raw costs and forbid slack.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub matrix: AssignmentMatrix,
    /// Track index of every column.
    pub columns: Vec<usize>,
    pub measurement_rows: usize,
    /// Constant part of the objective not represented in the matrix.
    pub offset: f64,
    free_choice: Vec<Option<usize>>,
    meas_choice: Vec<Vec<(u32, usize)>>,
}

pub fn build_subproblem(p: &MultiFrameProblem, k: usize, d: &DualState) -> Result<Subproblem> {
    build_scan_problem(p, k, |h| d.penalized(p, k, h), |_| true)
}

/// Scan-`k` assignment over the hypotheses accepted by `allowed`, priced by `cost`.
fn build_scan_problem(
    p: &MultiFrameProblem,
    k: usize,
    cost: impl Fn(usize) -> f64,
    allowed: impl Fn(usize) -> bool,
) -> Result<Subproblem> {
    let m = p.scans[k].measurements;
    let mut columns = Vec::new();
    let mut meas_choice: Vec<Vec<(u32, usize)>> = Vec::new();
    let mut free_choice = vec![None; p.tracks.len()];
    let mut free_cost = vec![f64::INFINITY; p.tracks.len()];
    let mut offset = 0.0;
    let mut best_by_meas: Vec<(u32, usize, f64)> = Vec::new();
    for t in 0..p.tracks.len() {
        let late = k < p.first_pos[t];
        best_by_meas.clear();
        for h in p.hyps(t).filter(|&h| allowed(h)) {
            let c = cost(h);
            let j = if late { NONE } else { p.meas_at(h, k) };
            if j == NONE {
                if c < free_cost[t] {
                    free_cost[t] = c;
                    free_choice[t] = Some(h);
                }
            } else {
                match best_by_meas.iter_mut().find(|e| e.0 == j) {
                    Some(e) if c < e.2 => {
                        e.1 = h;
                        e.2 = c;
                    }
                    Some(_) => {}
                    None => best_by_meas.push((j, h, c)),
                }
            }
        }
        if best_by_meas.is_empty() {
            if free_choice[t].is_none() {
                return Err(Error::Infeasible(format!(
                    "track {} has no admissible hypothesis",
                    p.tracks[t].track
                )));
            }
            offset += free_cost[t];
            continue;
        }
        if free_cost[t].is_finite() {
            offset += free_cost[t];
        }
        columns.push(t);
        meas_choice.push(best_by_meas.iter().map(|&(j, h, _)| (j, h)).collect());
    }
    let n = columns.len();
    if n < m {
        return Err(Error::Infeasible(format!(
            "scan {} has {m} measurements but only {n} tracks can take them",
            p.scans[k].scan
        )));
    }
    let mut matrix = AssignmentMatrix::forbidden(n, n);
    for (c, &t) in columns.iter().enumerate() {
        let base = free_cost[t];
        for &(j, h) in &meas_choice[c] {
            let v = cost(h);
            matrix.set(j as usize, c, if base.is_finite() { v - base } else { v });
        }
        if base.is_finite() {
            for r in m..n {
                matrix.set(r, c, 0.0);
            }
        }
    }
    Ok(Subproblem {
        matrix,
        columns,
        measurement_rows: m,
        offset,
        free_choice,
        meas_choice,
    })
}

/// Flat hypothesis per track picked by the solution of `sub`.
fn assign(p: &MultiFrameProblem, sub: &Subproblem) -> Result<Vec<usize>> {
    let assignment = auction_solve(&sub.matrix, DEFAULT_RESOLUTION)?;
    let mut flat: Vec<Option<usize>> = sub.free_choice.clone();
    for (row, &col) in assignment.row_to_col.iter().enumerate() {
        let t = sub.columns[col];
        if row < sub.measurement_rows {
            let h = sub.meas_choice[col]
                .iter()
                .find(|(j, _)| *j as usize == row)
                .map(|&(_, h)| h)
                .expect("assigned entry is admissible");
            flat[t] = Some(h);
        }
    }
    flat.into_iter()
        .enumerate()
        .map(|(t, h)| {
            h.ok_or_else(|| {
                Error::Infeasible(format!(
                    "track {} left without a hypothesis",
                    p.tracks[t].track
                ))
            })
        })
        .collect()
}

/// Feasible selection built one scan at a time.
///
/// Each scan in `order` is settled by a 2-D assignment priced with the cost
/// of the cheapest hypothesis still compatible with the earlier decisions;
/// the track then keeps only the hypotheses agreeing with what it received at
/// that scan. Every measurement ends up covered exactly once.
pub fn sequential_primal(p: &MultiFrameProblem, order: &[usize]) -> Result<(f64, Vec<usize>)> {
    sequential(p, order, None)
}

/// With multipliers, the hypotheses at each stage are priced by the full cost
/// less the penalised share of the scans already settled.
fn sequential(
    p: &MultiFrameProblem,
    order: &[usize],
    d: Option<&DualState>,
) -> Result<(f64, Vec<usize>)> {
    let mut alive = vec![true; p.hypothesis_count()];
    let mut price = p.cost.clone();
    for &k in order {
        let sub = build_scan_problem(p, k, |h| price[h], |h| alive[h])?;
        let chosen = assign(p, &sub)?;
        for (t, &c) in chosen.iter().enumerate() {
            let j = p.meas_at(c, k);
            for h in p.hyps(t) {
                if p.meas_at(h, k) != j {
                    alive[h] = false;
                }
            }
        }
        if let Some(d) = d {
            for (h, v) in price.iter_mut().enumerate() {
                *v -= d.penalized(p, k, h);
            }
        }
    }
    let selection: Vec<usize> = (0..p.tracks.len())
        .map(|t| {
            p.hyps(t)
                .filter(|&h| alive[h])
                .min_by(|&a, &b| p.cost[a].total_cmp(&p.cost[b]).then(a.cmp(&b)))
                .expect("decisions keep one hypothesis per track")
                - p.hyp_offset[t]
        })
        .collect();
    Ok((p.primal_cost(&selection), selection))
}

/// Solves the subproblem of window position `k`, returning the chosen
/// hypothesis (index within its track) for every track and the subproblem value.
pub fn solve_subproblem(
    p: &MultiFrameProblem,
    k: usize,
    d: &DualState,
) -> Result<(Vec<usize>, f64)> {
    let sub = build_subproblem(p, k, d)?;
    let flat = assign(p, &sub)?;
    let value = flat.iter().map(|&h| d.penalized(p, k, h)).sum();
    let choice = flat
        .iter()
        .enumerate()
        .map(|(t, &h)| h - p.hyp_offset[t])
        .collect();
    Ok((choice, value))
}

/// Projected subgradient step on the multipliers. Returns the squared norm of
/// the subgradient; zero means all subproblems agree.
pub fn subgradient_step(p: &MultiFrameProblem, d: &mut DualState) -> f64 {
    let tw = p.window_len();
    if tw == 0 {
        return 0.0;
    }
    let twf = tw as f64;
    // Per track: distinct selected hypotheses and how many subproblems chose each.
    let mut updates: Vec<(usize, f64)> = Vec::new();
    let mut norm_sq = 0.0;
    for t in 0..p.tracks.len() {
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for k in 0..tw {
            let h = p.hyp_offset[t] + d.subproblem_solutions[k][t];
            match counts.iter_mut().find(|e| e.0 == h) {
                Some(e) => e.1 += 1,
                None => counts.push((h, 1)),
            }
        }
        if counts.len() == 1 {
            continue;
        }
        for &(h, c) in &counts {
            let share = c as f64 / twf;
            norm_sq += c as f64 * (1.0 - share).powi(2) + (tw - c) as f64 * share * share;
            updates.push((h, share));
        }
    }
    if norm_sq == 0.0 {
        return 0.0;
    }
    let primal = d.best_primal.as_ref().map(|(c, _)| *c);
    let step = match primal {
        Some(bp) => (d.step_scale * (bp - d.dual_cost) / norm_sq).max(0.0),
        None => 1.0 / norm_sq.sqrt(),
    };
    if step == 0.0 {
        return norm_sq;
    }
    for (h, share) in updates {
        let t = p.hyp_track[h];
        for k in 0..tw {
            let selected = p.hyp_offset[t] + d.subproblem_solutions[k][t] == h;
            let g = if selected { 1.0 - share } else { -share };
            d.multipliers[k][h] += step * g;
        }
    }
    norm_sq
}

/// Reconstructs a feasible selection from the current subproblem solutions.
///
/// Tracks on which every subproblem agrees are fixed; the rest are resolved by
/// depth-first branch and bound with an additive per-track-minimum bound,
/// trying first the hypotheses picked by most subproblems. The
/// state's best primal solution seeds the bound and is returned if nothing
/// cheaper is found.
pub fn recover_primal(
    p: &MultiFrameProblem,
    d: &DualState,
    node_limit: usize,
) -> Option<(f64, Vec<usize>)> {
    let tw = p.window_len();
    let mut fixed: Vec<Option<usize>> = vec![None; p.tracks.len()];
    if tw > 0 {
        for (t, f) in fixed.iter_mut().enumerate() {
            let first = d.subproblem_solutions[0][t];
            if d.subproblem_solutions.iter().all(|s| s[t] == first) {
                *f = Some(p.hyp_offset[t] + first);
            }
        }
    }
    let mut votes = vec![0u32; p.hypothesis_count()];
    for s in &d.subproblem_solutions {
        for (t, &h) in s.iter().enumerate() {
            votes[p.hyp_offset[t] + h] += 1;
        }
    }
    let incumbent = d.best_primal.clone();
    if let Some(Some(found)) = branch_and_bound(p, &fixed, &votes, incumbent.clone(), node_limit) {
        return Some(found);
    }
    let free = vec![None; p.tracks.len()];
    branch_and_bound(p, &free, &votes, incumbent.clone(), node_limit)
        .flatten()
        .or(incumbent)
}

/// Tracks freed together in one local-search move, at most.
const NEIGHBORHOOD_LIMIT: usize = 12;
const POLISH_PASSES: usize = 3;

/// Local search around a feasible selection: each track with a choice is
/// freed together with the tracks currently holding a measurement it could
/// take, and that neighborhood is re-solved exactly with everything else
/// held fixed.
pub fn polish(
    p: &MultiFrameProblem,
    cost: f64,
    selection: Vec<usize>,
    node_limit: usize,
) -> (f64, Vec<usize>) {
    let nm = p.total_measurements();
    let votes = vec![0u32; p.hypothesis_count()];
    let mut best = (cost, selection);
    for _ in 0..POLISH_PASSES {
        let mut improved = false;
        for t in 0..p.tracks.len() {
            if p.hyps(t).len() < 2 {
                continue;
            }
            let mut holder = vec![usize::MAX; nm];
            for (u, &h) in best.1.iter().enumerate() {
                for &m in &p.hyp_meas[p.hyp_offset[u] + h] {
                    holder[m as usize] = u;
                }
            }
            let mut hood = vec![t];
            for h in p.hyps(t) {
                for &m in &p.hyp_meas[h] {
                    let u = holder[m as usize];
                    if u != usize::MAX && !hood.contains(&u) {
                        hood.push(u);
                    }
                }
            }
            if hood.len() > NEIGHBORHOOD_LIMIT {
                continue;
            }
            let fixed: Vec<Option<usize>> = best
                .1
                .iter()
                .enumerate()
                .map(|(u, &h)| (!hood.contains(&u)).then_some(p.hyp_offset[u] + h))
                .collect();
            if let Some(Some((c, s))) =
                branch_and_bound(p, &fixed, &votes, Some(best.clone()), node_limit)
            {
                if c < best.0 - 1e-9 * (1.0 + best.0.abs()) {
                    best = (c, s);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    best
}

/// Outer `None`: the fixed part admits no feasible completion.
fn branch_and_bound(
    p: &MultiFrameProblem,
    fixed: &[Option<usize>],
    votes: &[u32],
    incumbent: Option<(f64, Vec<usize>)>,
    node_limit: usize,
) -> Option<Option<(f64, Vec<usize>)>> {
    let nm = p.total_measurements();
    let mut covered = vec![false; nm];
    let mut base = vec![0usize; p.tracks.len()];
    let mut base_cost = 0.0;
    for (t, f) in fixed.iter().enumerate() {
        if let Some(h) = *f {
            for &m in &p.hyp_meas[h] {
                if covered[m as usize] {
                    return None;
                }
                covered[m as usize] = true;
            }
            base[t] = h - p.hyp_offset[t];
            base_cost += p.cost[h];
        }
    }
    let mut free: Vec<(usize, Vec<usize>)> = Vec::new();
    for (t, f) in fixed.iter().enumerate() {
        if f.is_some() {
            continue;
        }
        let mut cands: Vec<usize> = p
            .hyps(t)
            .filter(|&h| p.hyp_meas[h].iter().all(|&m| !covered[m as usize]))
            .collect();
        if cands.is_empty() {
            return None;
        }
        cands.sort_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(p.cost[a].total_cmp(&p.cost[b]))
                .then(a.cmp(&b))
        });
        free.push((t, cands));
    }
    free.sort_by_key(|(t, c)| (c.len(), *t));

    let mut last_coverer: Vec<Option<usize>> = vec![None; nm];
    for (pos, (_, cands)) in free.iter().enumerate() {
        for &h in cands {
            for &m in &p.hyp_meas[h] {
                last_coverer[m as usize] = Some(pos);
            }
        }
    }
    let mut closing = vec![Vec::new(); free.len()];
    for m in 0..nm {
        if covered[m] {
            continue;
        }
        match last_coverer[m] {
            Some(pos) => closing[pos].push(m as u32),
            None => return None,
        }
    }
    let mut suffix_min = vec![0.0; free.len() + 1];
    for pos in (0..free.len()).rev() {
        let cheapest = free[pos]
            .1
            .iter()
            .map(|&h| p.cost[h])
            .fold(f64::INFINITY, f64::min);
        suffix_min[pos] = suffix_min[pos + 1] + cheapest;
    }

    let (best_cost, best) = match incumbent {
        Some((c, s)) => (c, Some(s)),
        None => (f64::INFINITY, None),
    };
    let mut search = Search {
        p,
        free: &free,
        closing: &closing,
        suffix_min: &suffix_min,
        covered,
        current: base,
        best_cost,
        best,
        improved: false,
        nodes: 0,
        node_limit,
    };
    search.dfs(0, base_cost);
    Some(search.best.map(|s| (search.best_cost, s)))
}

struct Search<'a> {
    p: &'a MultiFrameProblem,
    free: &'a [(usize, Vec<usize>)],
    closing: &'a [Vec<u32>],
    suffix_min: &'a [f64],
    covered: Vec<bool>,
    current: Vec<usize>,
    best_cost: f64,
    best: Option<Vec<usize>>,
    improved: bool,
    nodes: usize,
    node_limit: usize,
}

impl Search<'_> {
    fn threshold(&self) -> f64 {
        if !self.best_cost.is_finite() {
            return f64::INFINITY;
        }
        self.best_cost - 1e-12 * (1.0 + self.best_cost.abs())
    }

    fn dfs(&mut self, pos: usize, partial: f64) {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            return;
        }
        if pos == self.free.len() {
            if partial < self.threshold() {
                self.best_cost = partial;
                self.best = Some(self.current.clone());
                self.improved = true;
            }
            return;
        }
        let (track, cands) = &self.free[pos];
        for &h in cands {
            let c = partial + self.p.cost[h] + self.suffix_min[pos + 1];
            if c >= self.threshold() {
                continue;
            }
            let meas = &self.p.hyp_meas[h];
            if meas.iter().any(|&m| self.covered[m as usize]) {
                continue;
            }
            for &m in meas {
                self.covered[m as usize] = true;
            }
            if self.closing[pos].iter().all(|&m| self.covered[m as usize]) {
                self.current[*track] = h - self.p.hyp_offset[*track];
                self.dfs(pos + 1, partial + self.p.cost[h]);
            }
            for &m in meas {
                self.covered[m as usize] = false;
            }
            if self.nodes > self.node_limit {
                return;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub eps_gap: f64,
    pub max_iter: usize,
    /// Node budget of each branch-and-bound primal recovery.
    pub node_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_gap: 0.01,
            max_iter: 200,
            node_limit: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Dual value of this iteration (sum of subproblem minima).
    pub dual: f64,
    pub best_primal: f64,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    /// Chosen hypothesis index per track.
    pub selection: Vec<usize>,
    pub cost: f64,
    /// Best lower bound, never above `cost`.
    pub dual: f64,
    pub gap: f64,
    pub converged: bool,
    pub iterations: usize,
    pub dual_tolerance: f64,
    pub trace: Vec<IterationRecord>,
}

/// Iterations without dual improvement before the step scale is halved.
const STALL_LIMIT: usize = 5;
const MIN_STEP_SCALE: f64 = 1.0 / 64.0;
/// Branch and bound runs on every `BNB_PERIOD`-th iteration, the cheap
/// sequential recovery on all of them.
const BNB_PERIOD: usize = 5;

pub fn relative_gap(best_primal: f64, dual: f64) -> f64 {
    let diff = best_primal - dual;
    if !best_primal.is_finite() {
        f64::INFINITY
    } else if diff <= 1e-12 * (1.0 + best_primal.abs()) {
        0.0
    } else if best_primal.abs() < 1e-12 {
        f64::INFINITY
    } else {
        diff / best_primal.abs()
    }
}

/// Dual decomposition with subgradient updates until the relative gap falls
/// below `eps_gap` or the iteration budget runs out (`converged == false`).
pub fn solve(p: &MultiFrameProblem, opts: &SolverOptions) -> Result<SolveOutcome> {
    solve_with_incumbent(p, opts, None)
}

/// As [`solve`], seeding the upper bound with a known feasible selection.
pub fn solve_with_incumbent(
    p: &MultiFrameProblem,
    opts: &SolverOptions,
    incumbent: Option<Vec<usize>>,
) -> Result<SolveOutcome> {
    if opts.eps_gap <= 0.0 {
        return Err(crate::error::invalid("eps_gap", "must be positive"));
    }
    let tw = p.window_len();
    if tw == 0 {
        let selection: Vec<usize> = (0..p.tracks.len())
            .map(|t| {
                p.hyps(t)
                    .min_by(|&a, &b| p.cost[a].total_cmp(&p.cost[b]).then(a.cmp(&b)))
                    .unwrap()
                    - p.hyp_offset[t]
            })
            .collect();
        let cost = p.primal_cost(&selection);
        return Ok(SolveOutcome {
            selection,
            cost,
            dual: cost,
            gap: 0.0,
            converged: true,
            iterations: 0,
            dual_tolerance: 0.0,
            trace: Vec::new(),
        });
    }

    let mut d = DualState::new(p);
    d.dual_tolerance = (0..tw)
        .map(|k| (p.tracks.len() + p.scans[k].measurements) as f64)
        .sum::<f64>()
        * 2.0
        * DEFAULT_RESOLUTION;
    if let Some(sel) = incumbent {
        if p.is_feasible(&sel) {
            d.best_primal = Some((p.primal_cost(&sel), sel));
        }
    }
    let forward: Vec<usize> = (0..tw).collect();
    let backward: Vec<usize> = (0..tw).rev().collect();
    for order in [forward, backward] {
        if let Ok((c, s)) = sequential_primal(p, &order) {
            d.offer_primal(c, s);
        }
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let mut stalled = 0;
    for it in 1..=opts.max_iter.max(1) {
        d.iteration = it;
        let mut dual = 0.0;
        for k in 0..tw {
            let (choice, value) = solve_subproblem(p, k, &d)?;
            d.subproblem_solutions[k] = choice;
            d.subproblem_values[k] = value;
            dual += value;
        }
        let agreed = (1..tw).all(|k| d.subproblem_solutions[k] == d.subproblem_solutions[0]);
        if agreed {
            let sel = d.subproblem_solutions[0].clone();
            debug_assert!(p.is_feasible(&sel));
            let cost = p.primal_cost(&sel);
            // The multipliers cancel over the window, so the dual is exactly
            // this cost; the summed subproblem values differ only by roundoff.
            debug_assert!((dual - cost).abs() <= 1e-9 * (1.0 + cost.abs()));
            dual = cost;
            d.offer_primal(cost, sel);
        } else {
            let order: Vec<usize> = (0..tw).map(|i| (i + it) % tw).collect();
            if let Ok((c, s)) = sequential(p, &order, Some(&d)) {
                d.offer_primal(c, s);
            }
            if it % BNB_PERIOD == 1 {
                if let Some((c, s)) = recover_primal(p, &d, opts.node_limit) {
                    d.offer_primal(c, s);
                }
            }
        }
        d.dual_cost = dual;
        let best = d.best_primal.as_ref().map_or(f64::INFINITY, |(c, _)| *c);
        debug_assert!(
            dual <= best + d.dual_tolerance + 1e-9 * best.abs(),
            "weak duality violated: dual {dual} > primal {best}"
        );
        if dual > d.best_dual + 1e-9 * (1.0 + dual.abs()) {
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                d.step_scale = (d.step_scale / 2.0).max(MIN_STEP_SCALE);
                stalled = 0;
            }
        }
        d.best_dual = d.best_dual.max(dual).min(best);
        let gap = if agreed {
            0.0
        } else {
            relative_gap(best, d.best_dual)
        };
        trace.push(IterationRecord {
            iteration: it,
            dual,
            best_primal: best,
            gap,
        });
        if agreed || gap <= opts.eps_gap {
            if agreed {
                d.best_dual = best;
            }
            converged = true;
            break;
        }
        if subgradient_step(p, &mut d) == 0.0 {
            converged = true;
            break;
        }
    }
    if d.best_primal.is_none() {
        let votes = vec![0u32; p.hypothesis_count()];
        d.best_primal =
            branch_and_bound(p, &vec![None; p.tracks.len()], &votes, None, usize::MAX).flatten();
    }
    let Some((cost, selection)) = d.best_primal.take() else {
        return Err(Error::Infeasible(
            "no feasible global hypothesis found".into(),
        ));
    };
    let (cost, selection) = polish(p, cost, selection, opts.node_limit);
    let dual = d.best_dual.min(cost);
    Ok(SolveOutcome {
        selection,
        cost,
        dual,
        gap: relative_gap(cost, dual),
        converged,
        iterations: d.iteration,
        dual_tolerance: d.dual_tolerance,
        trace,
    })
}

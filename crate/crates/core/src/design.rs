//! Observation-time design solvers.
//!
//! Two problems are solved here: continuous placement of `n_s` times that
//! maximises `log det F` subject to a minimum spacing and a terminal time,
//! and selection of `n_s` points from a fixed candidate grid that maximises
//! `log det G`. Both have exhaustive counterparts used as oracles.

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::information::{fim, global_info, log_det3, GlobalWeighting};
use crate::model::LogisticParams;
use crate::noise::NoiseModel;
use crate::optim::NelderMead;
use crate::seed::child_rng;
use crate::sobol::SobolProfile;

const SPACING_SLACK: f64 = 1e-9;
/// Designs whose objectives differ by less than this are considered tied.
pub const TIE_TOLERANCE: f64 = 1e-9;
/// Largest subset count searched exhaustively by the grid selector.
pub const EXHAUSTIVE_LIMIT: u64 = 200_000;

/// Feasible region for observation times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub t_min: f64,
    pub t_final: f64,
    pub min_spacing: f64,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints {
            t_min: 0.0,
            t_final: 80.0,
            min_spacing: 2.0,
        }
    }
}

impl Constraints {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min.is_finite() && self.t_final.is_finite() && self.t_min >= 0.0 && self.t_final > self.t_min) {
            return Err(Error::InfeasibleConstraints(format!(
                "need 0 <= t_min < t_final, got [{}, {}]",
                self.t_min, self.t_final
            )));
        }
        if !(self.min_spacing > 0.0 && self.min_spacing.is_finite()) {
            return Err(Error::InfeasibleConstraints(format!(
                "minimum spacing must be > 0, got {}",
                self.min_spacing
            )));
        }
        Ok(())
    }

    /// Free time left after reserving the minimum gaps for `n_s` points.
    pub fn slack(&self, n_s: usize) -> Result<f64> {
        self.validate()?;
        if n_s == 0 {
            return Err(Error::InfeasibleConstraints("need at least one observation".into()));
        }
        let slack = (self.t_final - self.t_min) - (n_s - 1) as f64 * self.min_spacing;
        if slack < -SPACING_SLACK {
            return Err(Error::InfeasibleConstraints(format!(
                "{n_s} points spaced {} apart do not fit in [{}, {}]",
                self.min_spacing, self.t_min, self.t_final
            )));
        }
        Ok(slack.max(0.0))
    }

    pub fn admits(&self, times: &[f64]) -> bool {
        !times.is_empty()
            && times[0] >= self.t_min - SPACING_SLACK
            && times[times.len() - 1] <= self.t_final + SPACING_SLACK
            && times.windows(2).all(|w| w[1] - w[0] >= self.min_spacing - SPACING_SLACK)
    }
}

/// Sorted observation times satisfying [`Constraints`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    times: Vec<f64>,
    constraints: Constraints,
}

impl Design {
    pub fn new(mut times: Vec<f64>, constraints: Constraints) -> Result<Self> {
        constraints.validate()?;
        times.sort_by(f64::total_cmp);
        if !constraints.admits(&times) {
            return Err(Error::InfeasibleConstraints(format!(
                "times {times:?} violate spacing {} on [{}, {}]",
                constraints.min_spacing, constraints.t_min, constraints.t_final
            )));
        }
        Ok(Design { times, constraints })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn to_grid(&self) -> crate::model::TimeGrid {
        crate::model::TimeGrid::new(self.times.clone()).expect("designs are strictly increasing")
    }

    /// One-line CSV of the times.
    pub fn to_csv_line(&self) -> String {
        self.times.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Fine grid `t_min, t_min + d, ...` closed by `t_final`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrid {
    times: Vec<f64>,
}

impl CandidateGrid {
    pub fn new(c: &Constraints) -> Result<Self> {
        c.validate()?;
        let mut times = Vec::new();
        let mut i = 0usize;
        loop {
            let t = c.t_min + i as f64 * c.min_spacing;
            if t > c.t_final + SPACING_SLACK {
                break;
            }
            times.push(t.min(c.t_final));
            i += 1;
        }
        let last = *times.last().expect("t_min is always on the grid");
        if (last - c.t_final).abs() > SPACING_SLACK {
            if c.t_final - last >= c.min_spacing - SPACING_SLACK || times.len() == 1 {
                times.push(c.t_final);
            } else {
                *times.last_mut().expect("nonempty") = c.t_final;
            }
        }
        Ok(CandidateGrid { times })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        crate::model::TimeGrid::new(times.clone())?;
        Ok(CandidateGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn to_time_grid(&self) -> crate::model::TimeGrid {
        crate::model::TimeGrid::new(self.times.clone()).expect("candidate grid is increasing")
    }
}

/// Binary indicator over a candidate grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionVector {
    bits: Vec<bool>,
}

impl SelectionVector {
    pub fn from_indices(k: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; k];
        for &i in indices {
            if i >= k || bits[i] {
                return Err(Error::InvalidParameter {
                    name: "selection",
                    reason: format!("index {i} out of range or repeated"),
                });
            }
            bits[i] = true;
        }
        Ok(SelectionVector { bits })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Optimised design and its objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub design: Design,
    pub log_det: f64,
}

fn better(value: f64, times: &[f64], best_value: f64, best_times: &[f64]) -> bool {
    if value > best_value + TIE_TOLERANCE {
        return true;
    }
    if value >= best_value - TIE_TOLERANCE {
        return times
            .iter()
            .zip(best_times)
            .find(|(a, b)| a != b)
            .is_some_and(|(a, b)| a < b);
    }
    false
}

/// Arithmetic progression of `n_s` times including both endpoints.
pub fn even_design(n_s: usize, c: &Constraints) -> Result<Design> {
    c.slack(n_s)?;
    if n_s == 1 {
        return Design::new(vec![c.t_min], *c);
    }
    let step = (c.t_final - c.t_min) / (n_s - 1) as f64;
    let mut times: Vec<f64> = (0..n_s).map(|i| c.t_min + i as f64 * step).collect();
    times[n_s - 1] = c.t_final;
    Design::new(times, *c)
}

fn times_from_weights(w: &[f64], c: &Constraints) -> Vec<f64> {
    let n_s = w.len() - 1;
    let mut times = Vec::with_capacity(n_s);
    let mut t = c.t_min + w[0];
    times.push(t);
    for wi in &w[1..n_s] {
        t += c.min_spacing + wi;
        times.push(t);
    }
    for t in times.iter_mut() {
        *t = t.min(c.t_final);
    }
    times
}

/// Feasible times from free coordinates: slack shares `z_i^2 / sum z^2`.
fn times_from_free(z: &[f64], slack: f64, c: &Constraints) -> Vec<f64> {
    let norm: f64 = z.iter().map(|v| v * v).sum();
    let w: Vec<f64> = if norm > 0.0 {
        z.iter().map(|v| slack * v * v / norm).collect()
    } else {
        let mut w = vec![0.0; z.len()];
        *w.last_mut().expect("nonempty") = slack;
        w
    };
    times_from_weights(&w, c)
}

fn weights_from_times(times: &[f64], c: &Constraints) -> Vec<f64> {
    let mut w = Vec::with_capacity(times.len() + 1);
    w.push(times[0] - c.t_min);
    for pair in times.windows(2) {
        w.push(pair[1] - pair[0] - c.min_spacing);
    }
    w.push(c.t_final - times[times.len() - 1]);
    w.into_iter().map(|x| x.max(0.0)).collect()
}

/// Zero out slack shares below `tol * slack`, returning exact boundary designs.
fn snap_to_boundaries(times: &[f64], slack: f64, c: &Constraints) -> Vec<f64> {
    let mut w = weights_from_times(times, c);
    let tol = 1e-6 * slack.max(1e-300);
    let kept: f64 = w.iter().filter(|&&x| x >= tol).sum();
    if kept <= 0.0 {
        return times.to_vec();
    }
    for x in w.iter_mut() {
        *x = if *x < tol { 0.0 } else { *x * slack / kept };
    }
    let mut out = times_from_weights(&w, c);
    // pin the last time to t_final when no trailing slack remains
    if w[w.len() - 1] == 0.0 {
        let n = out.len();
        out[n - 1] = c.t_final;
    }
    out
}

/// Multistart continuous maximisation of `objective(times)` over feasible
/// designs of `n_s` points. Restart `j` is seeded from `(seed, j)`.
pub fn optimize_continuous<F>(objective: F, n_s: usize, c: &Constraints, restarts: usize, seed: u64) -> Result<DesignResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let slack = c.slack(n_s)?;
    if slack <= SPACING_SLACK {
        let times: Vec<f64> = (0..n_s).map(|i| c.t_min + i as f64 * c.min_spacing).collect();
        let value = objective(&times);
        return Ok(DesignResult {
            design: Design::new(times, *c)?,
            log_det: value,
        });
    }
    let dim = n_s + 1;
    let nm = NelderMead::default().with_max_evals(400 * dim * dim).with_step(0.3);
    let cost = |z: &[f64]| {
        let v = objective(&times_from_free(z, slack, c));
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };

    let candidates: Vec<(f64, Vec<f64>)> = (0..restarts.max(1))
        .into_par_iter()
        .map(|j| {
            let mut rng = child_rng(seed, &[j as u64]);
            // uniform point on the simplex of slack shares
            let z0: Vec<f64> = (0..dim)
                .map(|_| {
                    let e: f64 = Exp1.sample(&mut rng);
                    e.sqrt() * if rng.random::<bool>() { 1.0 } else { -1.0 }
                })
                .collect();
            let m = nm.minimize_with_restarts(cost, &z0, 6);
            let raw = times_from_free(&m.x, slack, c);
            let raw_value = objective(&raw);
            let snapped = snap_to_boundaries(&raw, slack, c);
            let snapped_value = objective(&snapped);
            if c.admits(&snapped) && snapped_value >= raw_value - TIE_TOLERANCE {
                (snapped_value, snapped)
            } else {
                (raw_value, raw)
            }
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for (value, times) in candidates {
        let take = match &best {
            None => true,
            Some((bv, bt)) => better(value, &times, *bv, bt),
        };
        if take {
            best = Some((value, times));
        }
    }
    let (log_det, times) = best.expect("at least one restart");
    Ok(DesignResult {
        design: Design::new(times, *c)?,
        log_det,
    })
}

/// D-optimal continuous design for the Fisher information at `params`.
pub fn optimize_fim_design(
    params: &LogisticParams,
    noise: &NoiseModel,
    n_s: usize,
    c: &Constraints,
    restarts: usize,
    seed: u64,
) -> Result<DesignResult> {
    if n_s < 3 {
        log::warn!("{n_s} observations cannot identify three parameters; objective is -inf");
    }
    optimize_continuous(
        |t| fim(params, t, noise).map(|f| f.log_det()).unwrap_or(f64::NEG_INFINITY),
        n_s,
        c,
        restarts,
        seed,
    )
}

/// Number of `n_s`-subsets of `k` items, saturating at `u64::MAX`.
pub fn binomial(k: usize, n_s: usize) -> u64 {
    if n_s > k {
        return 0;
    }
    let n_s = n_s.min(k - n_s);
    let mut acc: u128 = 1;
    for i in 0..n_s {
        acc = acc * (k - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

fn next_combination(idx: &mut [usize], k: usize) -> bool {
    let n = idx.len();
    let mut i = n;
    while i > 0 {
        i -= 1;
        if idx[i] < k - n + i {
            idx[i] += 1;
            for j in i + 1..n {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Grid subset with its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub log_det: f64,
}

fn subset_times(grid: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| grid[i]).collect()
}

fn take_better(best: &mut Option<Selection>, idx: &[usize], value: f64) {
    // lexicographic order on sorted index sets matches order on times
    let replace = match best {
        None => true,
        Some(b) => {
            value > b.log_det + TIE_TOLERANCE || (value >= b.log_det - TIE_TOLERANCE && idx < b.indices.as_slice())
        }
    };
    if replace {
        *best = Some(Selection {
            indices: idx.to_vec(),
            log_det: value,
        });
    }
}

/// Exhaustive search over all `n_s`-subsets of a `k`-point grid.
pub fn exhaustive_selection<M>(k: usize, n_s: usize, matrix: M) -> Result<Selection>
where
    M: Fn(&[usize]) -> Matrix3<f64> + Sync,
{
    if n_s == 0 || n_s > k {
        return Err(Error::InfeasibleConstraints(format!("cannot choose {n_s} of {k} grid points")));
    }
    // split on the first index so the work parallelises with a fixed reduction order
    let partial: Vec<Option<Selection>> = (0..=k - n_s)
        .into_par_iter()
        .map(|first| {
            let mut idx: Vec<usize> = (first..first + n_s).collect();
            let mut best = None;
            loop {
                if idx[0] != first {
                    break;
                }
                take_better(&mut best, &idx, log_det3(&matrix(&idx)));
                if !next_combination(&mut idx, k) {
                    break;
                }
            }
            best
        })
        .collect();
    let mut best = None;
    for s in partial.into_iter().flatten() {
        take_better(&mut best, &s.indices, s.log_det);
    }
    best.ok_or_else(|| Error::InfeasibleConstraints("empty search".into()))
}

fn swap_search<M>(k: usize, mut idx: Vec<usize>, matrix: &M) -> Selection
where
    M: Fn(&[usize]) -> Matrix3<f64>,
{
    idx.sort_unstable();
    let mut value = log_det3(&matrix(&idx));
    loop {
        let mut best_move: Option<(Vec<usize>, f64)> = None;
        let mut trial = idx.clone();
        for pos in 0..idx.len() {
            for cand in 0..k {
                if idx.binary_search(&cand).is_ok() {
                    continue;
                }
                trial.copy_from_slice(&idx);
                trial[pos] = cand;
                trial.sort_unstable();
                let v = log_det3(&matrix(&trial));
                let improves = match &best_move {
                    None => v > value + TIE_TOLERANCE || (value == f64::NEG_INFINITY && v > value),
                    Some((bi, bv)) => v > bv + TIE_TOLERANCE || (v >= bv - TIE_TOLERANCE && trial < *bi),
                };
                if improves && (v > value + TIE_TOLERANCE || (value == f64::NEG_INFINITY && v > value)) {
                    best_move = Some((trial.clone(), v));
                }
            }
        }
        match best_move {
            Some((next, v)) => {
                idx = next;
                value = v;
            }
            None => break,
        }
    }
    Selection { indices: idx, log_det: value }
}

/// Greedy forward selection on a ridge-regularised objective followed by
/// best-improvement pairwise swaps, plus `budget` swap searches from random
/// subsets.
pub fn heuristic_selection<M>(k: usize, n_s: usize, matrix: M, budget: usize, seed: u64) -> Result<Selection>
where
    M: Fn(&[usize]) -> Matrix3<f64> + Sync,
{
    if n_s == 0 || n_s > k {
        return Err(Error::InfeasibleConstraints(format!("cannot choose {n_s} of {k} grid points")));
    }
    let all: Vec<usize> = (0..k).collect();
    let ridge = 1e-8 * matrix(&all).trace().max(1e-300) / 3.0;
    let mut chosen: Vec<usize> = Vec::with_capacity(n_s);
    while chosen.len() < n_s {
        let mut pick: Option<(usize, f64)> = None;
        for cand in 0..k {
            if chosen.contains(&cand) {
                continue;
            }
            let mut trial = chosen.clone();
            trial.push(cand);
            trial.sort_unstable();
            let v = log_det3(&(matrix(&trial) + Matrix3::identity() * ridge));
            if pick.is_none_or(|(_, pv)| v > pv + TIE_TOLERANCE) {
                pick = Some((cand, v));
            }
        }
        chosen.push(pick.expect("k > chosen").0);
    }

    let mut starts = vec![chosen];
    for j in 0..budget {
        let mut rng = child_rng(seed, &[j as u64]);
        let mut pool = all.clone();
        for i in 0..n_s {
            let swap = rng.random_range(i..k);
            pool.swap(i, swap);
        }
        starts.push(pool[..n_s].to_vec());
    }
    let results: Vec<Selection> = starts.into_par_iter().map(|s| swap_search(k, s, &matrix)).collect();
    let mut best = None;
    for s in results {
        take_better(&mut best, &s.indices, s.log_det);
    }
    Ok(best.expect("at least the greedy start"))
}

/// Grid selection maximising `log det` of `matrix`: exhaustive when the
/// subset count is at most [`EXHAUSTIVE_LIMIT`], heuristic otherwise.
pub fn select_on_grid<M>(k: usize, n_s: usize, matrix: M, budget: usize, seed: u64) -> Result<Selection>
where
    M: Fn(&[usize]) -> Matrix3<f64> + Sync,
{
    if binomial(k, n_s) <= EXHAUSTIVE_LIMIT {
        exhaustive_selection(k, n_s, matrix)
    } else {
        heuristic_selection(k, n_s, matrix, budget, seed)
    }
}

/// Global-information design on the candidate grid.
#[allow(clippy::too_many_arguments)]
pub fn optimize_global_design(
    profile: &SobolProfile,
    noise: &NoiseModel,
    n_s: usize,
    grid: &CandidateGrid,
    constraints: &Constraints,
    weighting: GlobalWeighting,
    budget: usize,
    seed: u64,
) -> Result<DesignResult> {
    profile.columns_for(grid.times())?;
    let times = grid.times();
    let matrix = |idx: &[usize]| {
        global_info(profile, &subset_times(times, idx), noise, weighting)
            .map(|g| *g.matrix())
            .unwrap_or_else(|_| Matrix3::zeros())
    };
    let sel = select_on_grid(grid.len(), n_s, matrix, budget, seed)?;
    Ok(DesignResult {
        design: Design::new(subset_times(times, &sel.indices), *constraints)?,
        log_det: sel.log_det,
    })
}

/// Fisher-information design restricted to the candidate grid.
pub fn optimize_fim_on_grid(
    params: &LogisticParams,
    noise: &NoiseModel,
    n_s: usize,
    grid: &CandidateGrid,
    constraints: &Constraints,
    budget: usize,
    seed: u64,
) -> Result<DesignResult> {
    let times = grid.times();
    let matrix = |idx: &[usize]| {
        fim(params, &subset_times(times, idx), noise)
            .map(|f| *f.matrix())
            .unwrap_or_else(|_| Matrix3::zeros())
    };
    let sel = select_on_grid(grid.len(), n_s, matrix, budget, seed)?;
    Ok(DesignResult {
        design: Design::new(subset_times(times, &sel.indices), *constraints)?,
        log_det: sel.log_det,
    })
}

/// Serialised design: JSON provenance record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub kind: String,
    pub noise: NoiseModel,
    pub n_s: usize,
    pub times: Vec<f64>,
    pub logdet: Option<f64>,
    pub seed: u64,
}

impl DesignRecord {
    pub fn new(kind: &str, noise: NoiseModel, result: &DesignResult, seed: u64) -> Self {
        DesignRecord {
            kind: kind.to_string(),
            noise,
            n_s: result.design.len(),
            times: result.design.times().to_vec(),
            logdet: result.log_det.is_finite().then_some(result.log_det),
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParamRanges, TimeGrid};
    use crate::sobol::{total_effect_indices, Sampling};

    const C: Constraints = Constraints {
        t_min: 0.0,
        t_final: 80.0,
        min_spacing: 2.0,
    };

    #[test]
    fn even_designs() {
        let d = even_design(11, &C).unwrap();
        assert_eq!(d.times(), &[0.0, 8.0, 16.0, 24.0, 32.0, 40.0, 48.0, 56.0, 64.0, 72.0, 80.0]);
        assert_eq!(even_design(2, &C).unwrap().times(), &[0.0, 80.0]);
        assert_eq!(even_design(5, &C).unwrap().times(), &[0.0, 20.0, 40.0, 60.0, 80.0]);
        assert!(even_design(42, &C).is_err());
        assert_eq!(even_design(41, &C).unwrap().times()[1], 2.0);
    }

    #[test]
    fn candidate_grid_default() {
        let g = CandidateGrid::new(&C).unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g.times()[40], 80.0);
        let odd = CandidateGrid::new(&Constraints { t_final: 81.0, ..C }).unwrap();
        assert_eq!(*odd.times().last().unwrap(), 81.0);
        assert_eq!(odd.times()[odd.len() - 2], 78.0);
        let wide = CandidateGrid::new(&Constraints { t_final: 83.0, ..C }).unwrap();
        assert_eq!(&wide.times()[wide.len() - 2..], &[80.0, 83.0]);
    }

    #[test]
    fn design_validation() {
        assert!(Design::new(vec![0.0, 1.0], C).is_err());
        assert!(Design::new(vec![0.0, 81.0], C).is_err());
        let d = Design::new(vec![10.0, 0.0, 2.0], C).unwrap();
        assert_eq!(d.times(), &[0.0, 2.0, 10.0]);
        assert_eq!(d.to_csv_line(), "0,2,10");
    }

    #[test]
    fn infeasible_count_rejected() {
        let noise = NoiseModel::iid(9.0).unwrap();
        let r = optimize_fim_design(&LogisticParams::TRUE, &noise, 42, &C, 2, 0);
        assert!(matches!(r, Err(Error::InfeasibleConstraints(_))));
    }

    #[test]
    fn tight_constraints_give_unique_design() {
        let noise = NoiseModel::iid(9.0).unwrap();
        let c = Constraints { t_final: 8.0, ..C };
        let r = optimize_fim_design(&LogisticParams::TRUE, &noise, 5, &c, 3, 0).unwrap();
        assert_eq!(r.design.times(), &[0.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn free_map_is_always_feasible() {
        let mut rng = child_rng(1, &[]);
        for n_s in 3..10 {
            let slack = C.slack(n_s).unwrap();
            for _ in 0..50 {
                let z: Vec<f64> = (0..=n_s).map(|_| rng.random::<f64>() - 0.5).collect();
                assert!(C.admits(&times_from_free(&z, slack, &C)));
            }
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(41, 3), 10660);
        assert_eq!(binomial(41, 4), 101_270);
        assert_eq!(binomial(41, 5), 749_398);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn full_grid_selection_is_whole_grid() {
        let grid = CandidateGrid::from_times(vec![0.0, 10.0, 20.0, 80.0]).unwrap();
        let noise = NoiseModel::iid(1.0).unwrap();
        let r = optimize_fim_on_grid(&LogisticParams::TRUE, &noise, 4, &grid, &C, 0, 0).unwrap();
        assert_eq!(r.design.times(), grid.times());
    }

    #[test]
    fn heuristic_matches_exhaustive_on_coarse_grid() {
        let coarse: Vec<f64> = (0..10).map(|i| i as f64 * 80.0 / 9.0).collect();
        let tg = TimeGrid::new(coarse.clone()).unwrap();
        let prof = total_effect_indices(&ParamRanges::PAPER, &tg, 1024, Sampling::Sobol, 2).unwrap();
        for noise in [NoiseModel::iid(9.0).unwrap(), NoiseModel::ou_stationary(0.02, 9.0).unwrap()] {
            let m = |idx: &[usize]| {
                *global_info(&prof, &subset_times(&coarse, idx), &noise, GlobalWeighting::Covariance)
                    .unwrap()
                    .matrix()
            };
            let ex = exhaustive_selection(10, 3, m).unwrap();
            let he = heuristic_selection(10, 3, m, 4, 1).unwrap();
            assert_eq!(ex.indices, he.indices);
        }
    }

    #[test]
    fn continuous_beats_even() {
        let noise = NoiseModel::iid(9.0).unwrap();
        let r = optimize_fim_design(&LogisticParams::TRUE, &noise, 4, &C, 8, 3).unwrap();
        let even = fim(&LogisticParams::TRUE, even_design(4, &C).unwrap().times(), &noise).unwrap();
        assert!(r.log_det >= even.log_det());
        assert!(C.admits(r.design.times()));
    }

    #[test]
    fn record_serialises() {
        let noise = NoiseModel::iid(9.0).unwrap();
        let res = DesignResult {
            design: even_design(3, &C).unwrap(),
            log_det: 1.5,
        };
        let rec = DesignRecord::new("fim", noise, &res, 7);
        let json = serde_json::to_string(&rec).unwrap();
        let back: DesignRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rec);
        assert!(json.contains("\"kind\":\"fim\""));
    }
}

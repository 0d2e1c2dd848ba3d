//! Total-effect Sobol' indices of the logistic trajectory over a time grid.
//!
//! Uses the Jansen estimator with one pair of base matrices `A`, `B` shared by
//! every grid time, which keeps `S_i(t)` smooth in `t`. Model evaluations are
//! reduced in fixed-size chunks in a fixed order, so results are bitwise
//! identical whatever the thread count.

use std::fmt::Write as _;

use nalgebra::Matrix3xX;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{solve, Interval, LogisticParams, ParamId, ParamRanges, TimeGrid};
use crate::seed::child_rng;

/// Estimates outside `[-tol, 1 + tol]` are treated as estimator failure.
pub const INDEX_TOLERANCE: f64 = 0.02;
const MIN_VARIANCE: f64 = 1e-12;
const CHUNK: usize = 1024;
const CACHE_HEADER: &str = "# obsdesign-sobol-cache v1";

/// How the base sample matrices fill the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Digitally shifted Sobol' low-discrepancy sequence.
    #[default]
    Sobol,
    LatinHypercube,
    Uniform,
}

impl Sampling {
    pub fn label(self) -> &'static str {
        match self {
            Sampling::LatinHypercube => "latin-hypercube",
            Sampling::Sobol => "sobol",
            Sampling::Uniform => "uniform",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [Sampling::LatinHypercube, Sampling::Sobol, Sampling::Uniform]
            .into_iter()
            .find(|m| m.label() == s)
    }
}

/// Cached total-effect indices on a grid; rows `(r, K, C0)`, one column per time.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolProfile {
    grid: TimeGrid,
    indices: Matrix3xX<f64>,
    n_base: usize,
    seed: u64,
    ranges: ParamRanges,
    sampling: Sampling,
}

impl SobolProfile {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn indices(&self) -> &Matrix3xX<f64> {
        &self.indices
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ranges(&self) -> &ParamRanges {
        &self.ranges
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    pub fn index(&self, param: ParamId, column: usize) -> f64 {
        self.indices[(param.index(), column)]
    }

    /// Column of the cached grid holding time `t`, if any.
    pub fn column_of(&self, t: f64) -> Option<usize> {
        let times = self.grid.times();
        let i = times.partition_point(|&x| x < t - 1e-9);
        (i < times.len() && (times[i] - t).abs() <= 1e-9 * t.abs().max(1.0)).then_some(i)
    }

    /// 3 x n matrix of indices at `times`; every time must be cached.
    pub fn columns_for(&self, times: &[f64]) -> Result<Matrix3xX<f64>> {
        let mut m = Matrix3xX::zeros(times.len());
        for (j, &t) in times.iter().enumerate() {
            let c = self.column_of(t).ok_or(Error::TimeNotInGrid(t))?;
            m.set_column(j, &self.indices.column(c));
        }
        Ok(m)
    }

    /// Build a profile from known values (used for exact-index tests and caches).
    pub fn from_parts(
        grid: TimeGrid,
        indices: Matrix3xX<f64>,
        n_base: usize,
        seed: u64,
        ranges: ParamRanges,
        sampling: Sampling,
    ) -> Result<Self> {
        if indices.ncols() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} index columns for {} times",
                indices.ncols(),
                grid.len()
            )));
        }
        Ok(SobolProfile {
            grid,
            indices,
            n_base,
            seed,
            ranges,
            sampling,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,S_r,S_K,S_C0\n");
        for (j, t) in self.grid.times().iter().enumerate() {
            let _ = writeln!(
                s,
                "{t},{},{},{}",
                self.indices[(0, j)],
                self.indices[(1, j)],
                self.indices[(2, j)]
            );
        }
        s
    }

    /// Versioned cache text: provenance header lines, then the CSV table.
    pub fn to_cache_string(&self) -> String {
        let r = &self.ranges;
        let mut s = String::new();
        let _ = writeln!(s, "{CACHE_HEADER}");
        let _ = writeln!(s, "# n_base = {}", self.n_base);
        let _ = writeln!(s, "# seed = {}", self.seed);
        let _ = writeln!(s, "# sampling = {}", self.sampling.label());
        let _ = writeln!(
            s,
            "# ranges = r:{}:{};K:{}:{};C0:{}:{}",
            r.r.lo, r.r.hi, r.k.lo, r.k.hi, r.c0.lo, r.c0.hi
        );
        s.push_str(&self.to_csv());
        s
    }

    pub fn from_cache_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CACHE_HEADER) {
            return Err(Error::Parse("missing or unsupported Sobol' cache header".into()));
        }
        let (mut n_base, mut seed, mut sampling, mut ranges) = (None, None, None, None);
        let mut times = Vec::new();
        let mut cols: [Vec<f64>; 3] = Default::default();
        for line in lines {
            let line = line.trim();
            if let Some(meta) = line.strip_prefix('#') {
                let (key, value) = meta
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("bad header line `{line}`")))?;
                let value = value.trim();
                let bad = |what: &str| Error::Parse(format!("bad {what} `{value}`"));
                match key.trim() {
                    "n_base" => n_base = Some(value.parse().map_err(|_| bad("n_base"))?),
                    "seed" => seed = Some(value.parse().map_err(|_| bad("seed"))?),
                    "sampling" => sampling = Some(Sampling::from_label(value).ok_or_else(|| bad("sampling"))?),
                    "ranges" => ranges = Some(parse_ranges(value)?),
                    _ => {}
                }
                continue;
            }
            if line.is_empty() || line.starts_with("time") {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row `{line}`: {e}")))?;
            if vals.len() != 4 {
                return Err(Error::Parse(format!("row `{line}` needs 4 columns")));
            }
            times.push(vals[0]);
            for i in 0..3 {
                cols[i].push(vals[i + 1]);
            }
        }
        let missing = |k: &str| Error::Parse(format!("cache header lacks `{k}`"));
        let n = times.len();
        let indices = Matrix3xX::from_fn(n, |i, j| cols[i][j]);
        SobolProfile::from_parts(
            TimeGrid::new(times)?,
            indices,
            n_base.ok_or_else(|| missing("n_base"))?,
            seed.ok_or_else(|| missing("seed"))?,
            ranges.ok_or_else(|| missing("ranges"))?,
            sampling.ok_or_else(|| missing("sampling"))?,
        )
    }
}

fn parse_ranges(s: &str) -> Result<ParamRanges> {
    let mut out = [None; 3];
    for part in s.split(';') {
        let f: Vec<&str> = part.split(':').collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("bad range `{part}`")));
        }
        let id = ParamId::from_label(f[0]).ok_or_else(|| Error::Parse(format!("unknown parameter `{}`", f[0])))?;
        let lo = f[1].parse().map_err(|_| Error::Parse(format!("bad bound `{}`", f[1])))?;
        let hi = f[2].parse().map_err(|_| Error::Parse(format!("bad bound `{}`", f[2])))?;
        out[id.index()] = Some(Interval::new(lo, hi)?);
    }
    match out {
        [Some(r), Some(k), Some(c0)] => Ok(ParamRanges::new(r, k, c0)),
        _ => Err(Error::Parse("ranges must list r, K and C0".into())),
    }
}

// Sobol' sequence: Joe & Kuo direction numbers for the first six dimensions.
const SOBOL_DIMS: usize = 6;
const SOBOL_BITS: usize = 32;
// (degree s, coefficient a, initial m_1..m_s) for dimensions 2..=6
const JOE_KUO: [(u32, u32, &[u32]); SOBOL_DIMS - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
];

fn direction_numbers() -> [[u32; SOBOL_BITS]; SOBOL_DIMS] {
    let mut v = [[0u32; SOBOL_BITS]; SOBOL_DIMS];
    for (i, slot) in v[0].iter_mut().enumerate() {
        *slot = 1u32 << (31 - i);
    }
    for (d, &(s, a, m)) in JOE_KUO.iter().enumerate() {
        let s = s as usize;
        let dir = &mut v[d + 1];
        for i in 0..SOBOL_BITS {
            if i < s {
                dir[i] = m[i] << (31 - i);
            } else {
                let mut x = dir[i - s] ^ (dir[i - s] >> s);
                for k in 1..s {
                    if (a >> (s - 1 - k)) & 1 == 1 {
                        x ^= dir[i - k];
                    }
                }
                dir[i] = x;
            }
        }
    }
    v
}

/// First `n` points of the 6-dimensional Sobol' sequence (Gray-code order),
/// XOR-shifted by `shift` per dimension. Values lie in the open unit interval.
pub fn sobol_points(n: usize, shift: [u32; SOBOL_DIMS]) -> Vec<[f64; SOBOL_DIMS]> {
    let v = direction_numbers();
    let mut x = [0u32; SOBOL_DIMS];
    let scale = 1.0 / (1u64 << 32) as f64;
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        if idx > 0 {
            let c = (!(idx as u64 - 1)).trailing_zeros() as usize;
            for d in 0..SOBOL_DIMS {
                x[d] ^= v[d][c];
            }
        }
        let mut p = [0.0; SOBOL_DIMS];
        for d in 0..SOBOL_DIMS {
            p[d] = ((x[d] ^ shift[d]) as f64 + 0.5) * scale;
        }
        out.push(p);
    }
    out
}

/// Unit-cube base matrices `A` and `B`, `n` rows of three columns each.
fn base_matrices(n: usize, sampling: Sampling, seed: u64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let mut rng = child_rng(seed, &[0x50B0]);
    match sampling {
        Sampling::Sobol => {
            let shift: [u32; SOBOL_DIMS] = std::array::from_fn(|_| rng.random());
            let pts = sobol_points(n, shift);
            let a = pts.iter().map(|p| [p[0], p[1], p[2]]).collect();
            let b = pts.iter().map(|p| [p[3], p[4], p[5]]).collect();
            (a, b)
        }
        Sampling::LatinHypercube => {
            let mut lhs = || {
                let mut m = vec![[0.0; 3]; n];
                for d in 0..3 {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut rng);
                    for (row, &cell) in m.iter_mut().zip(&perm) {
                        row[d] = (cell as f64 + rng.random::<f64>()) / n as f64;
                    }
                }
                m
            };
            let a = lhs();
            let b = lhs();
            (a, b)
        }
        Sampling::Uniform => {
            let mut draw = || (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect::<Vec<_>>();
            let a = draw();
            let b = draw();
            (a, b)
        }
    }
}

#[derive(Clone)]
struct ChunkStats {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    jansen: [Vec<f64>; 3],
}

impl ChunkStats {
    fn new(nt: usize) -> Self {
        ChunkStats {
            count: 0.0,
            mean: vec![0.0; nt],
            m2: vec![0.0; nt],
            jansen: [vec![0.0; nt], vec![0.0; nt], vec![0.0; nt]],
        }
    }

    fn push(&mut self, t: usize, f: f64) {
        // count is advanced by the caller once per sample across all times
        let delta = f - self.mean[t];
        self.mean[t] += delta / self.count;
        self.m2[t] += delta * (f - self.mean[t]);
    }

    fn merge(&mut self, other: &ChunkStats) {
        let n = self.count + other.count;
        if other.count == 0.0 {
            return;
        }
        for t in 0..self.mean.len() {
            let delta = other.mean[t] - self.mean[t];
            self.mean[t] += delta * other.count / n;
            self.m2[t] += other.m2[t] + delta * delta * self.count * other.count / n;
            for i in 0..3 {
                self.jansen[i][t] += other.jansen[i][t];
            }
        }
        self.count = n;
    }
}

fn to_params(ranges: &ParamRanges, u: &[f64; 3]) -> LogisticParams {
    let iv = ranges.as_array();
    LogisticParams::from_array([iv[0].lerp(u[0]), iv[1].lerp(u[1]), iv[2].lerp(u[2])])
        .expect("ranges are strictly positive")
}

/// Jansen-form total-effect indices on `grid` with uniform priors on `ranges`.
pub fn total_effect_indices(
    ranges: &ParamRanges,
    grid: &TimeGrid,
    n_base: usize,
    sampling: Sampling,
    seed: u64,
) -> Result<SobolProfile> {
    if n_base < 2 {
        return Err(Error::InvalidParameter {
            name: "n_base",
            reason: format!("need at least 2 base samples, got {n_base}"),
        });
    }
    let (a, b) = base_matrices(n_base, sampling, seed);
    let times = grid.times();
    let nt = times.len();

    let chunks: Vec<ChunkStats> = (0..n_base.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut stats = ChunkStats::new(nt);
            let mut fa = vec![0.0; nt];
            for j in c * CHUNK..((c + 1) * CHUNK).min(n_base) {
                let pa = to_params(ranges, &a[j]);
                let pb = to_params(ranges, &b[j]);
                stats.count += 1.0;
                for (t, &time) in times.iter().enumerate() {
                    fa[t] = solve(&pa, time);
                    stats.push(t, fa[t]);
                }
                stats.count += 1.0;
                for (t, &time) in times.iter().enumerate() {
                    stats.push(t, solve(&pb, time));
                }
                for i in 0..3 {
                    let mut mixed = a[j];
                    mixed[i] = b[j][i];
                    let pab = to_params(ranges, &mixed);
                    for (t, &time) in times.iter().enumerate() {
                        let d = fa[t] - solve(&pab, time);
                        stats.jansen[i][t] += d * d;
                    }
                }
            }
            stats
        })
        .collect();

    let mut total = ChunkStats::new(nt);
    for c in &chunks {
        total.merge(c);
    }

    let mut indices = Matrix3xX::zeros(nt);
    for (t, &time) in times.iter().enumerate() {
        let variance = total.m2[t] / (total.count - 1.0);
        if !(variance >= MIN_VARIANCE) {
            return Err(Error::DegenerateVariance { time, variance });
        }
        for id in ParamId::ALL {
            let i = id.index();
            let s = total.jansen[i][t] / (2.0 * n_base as f64) / variance;
            if !(-INDEX_TOLERANCE..=1.0 + INDEX_TOLERANCE).contains(&s) {
                return Err(Error::IndexOutOfTolerance {
                    param: id.label(),
                    time,
                    value: s,
                });
            }
            indices[(i, t)] = s.clamp(0.0, 1.0);
        }
    }
    SobolProfile::from_parts(grid.clone(), indices, n_base, seed, *ranges, sampling)
}

//! Closed-form logistic growth and its analytic parameter sensitivities.
//!
//! `C(t) = C0 K / ((K - C0) e^{-rt} + C0)` solves `dC/dt = r C (1 - C/K)` with
//! `C(0) = C0`. Sensitivities are with respect to the natural parameters;
//! log-parameter weighting is applied by the information module.

use nalgebra::{DVector, Matrix3xX};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of one of the three logistic parameters, in `(r, K, C0)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamId {
    #[serde(rename = "r")]
    GrowthRate,
    #[serde(rename = "K")]
    CarryingCapacity,
    #[serde(rename = "C0")]
    InitialPopulation,
}

impl ParamId {
    pub const ALL: [ParamId; 3] = [
        ParamId::GrowthRate,
        ParamId::CarryingCapacity,
        ParamId::InitialPopulation,
    ];

    pub fn index(self) -> usize {
        match self {
            ParamId::GrowthRate => 0,
            ParamId::CarryingCapacity => 1,
            ParamId::InitialPopulation => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ParamId::GrowthRate => "r",
            ParamId::CarryingCapacity => "K",
            ParamId::InitialPopulation => "C0",
        }
    }

    pub fn from_label(label: &str) -> Option<ParamId> {
        ParamId::ALL.into_iter().find(|p| p.label().eq_ignore_ascii_case(label))
    }
}

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Logistic model parameters `(r, K, C0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct LogisticParams {
    growth_rate: f64,
    carrying_capacity: f64,
    initial_population: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    r: f64,
    #[serde(rename = "K")]
    k: f64,
    #[serde(rename = "C0")]
    c0: f64,
}

impl TryFrom<RawParams> for LogisticParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        LogisticParams::new(raw.r, raw.k, raw.c0)
    }
}

impl From<LogisticParams> for RawParams {
    fn from(p: LogisticParams) -> Self {
        RawParams {
            r: p.growth_rate,
            k: p.carrying_capacity,
            c0: p.initial_population,
        }
    }
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams::TRUE
    }
}

impl LogisticParams {
    /// Reference parameters used throughout the experiments.
    pub const TRUE: LogisticParams = LogisticParams {
        growth_rate: 0.2,
        carrying_capacity: 50.0,
        initial_population: 4.5,
    };

    pub fn new(growth_rate: f64, carrying_capacity: f64, initial_population: f64) -> Result<Self> {
        for (name, v) in [
            ("r", growth_rate),
            ("K", carrying_capacity),
            ("C0", initial_population),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and > 0, got {v}"),
                });
            }
        }
        Ok(LogisticParams {
            growth_rate,
            carrying_capacity,
            initial_population,
        })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn growth_rate(&self) -> f64 {
        self.growth_rate
    }

    pub fn carrying_capacity(&self) -> f64 {
        self.carrying_capacity
    }

    pub fn initial_population(&self) -> f64 {
        self.initial_population
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.growth_rate, self.carrying_capacity, self.initial_population]
    }

    pub fn get(&self, id: ParamId) -> f64 {
        self.as_array()[id.index()]
    }

    /// Copy with one coordinate replaced.
    pub fn with(&self, id: ParamId, value: f64) -> Result<Self> {
        let mut v = self.as_array();
        v[id.index()] = value;
        Self::from_array(v)
    }
}

/// Closed interval `[lo, hi]` with `0 < lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
            return Err(Error::InvalidParameter {
                name: "interval",
                reason: format!("need 0 < lo < hi, got [{lo}, {hi}]"),
            });
        }
        Ok(Interval { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Map a unit-interval coordinate onto the interval.
    pub fn lerp(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }
}

/// Per-parameter prior/search ranges in `(r, K, C0)` order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub r: Interval,
    #[serde(rename = "K")]
    pub k: Interval,
    #[serde(rename = "C0")]
    pub c0: Interval,
}

impl Default for ParamRanges {
    fn default() -> Self {
        ParamRanges::PAPER
    }
}

impl ParamRanges {
    /// Ranges used for the global (Sobol') objective and as the fitting seed box.
    pub const PAPER: ParamRanges = ParamRanges {
        r: Interval { lo: 0.14, hi: 0.26 },
        k: Interval { lo: 35.0, hi: 65.0 },
        c0: Interval { lo: 3.15, hi: 5.85 },
    };

    pub fn new(r: Interval, k: Interval, c0: Interval) -> Self {
        ParamRanges { r, k, c0 }
    }

    pub fn get(&self, id: ParamId) -> Interval {
        match id {
            ParamId::GrowthRate => self.r,
            ParamId::CarryingCapacity => self.k,
            ParamId::InitialPopulation => self.c0,
        }
    }

    pub fn as_array(&self) -> [Interval; 3] {
        [self.r, self.k, self.c0]
    }

    /// Scale every interval multiplicatively: `[lo * lower, hi * upper]`.
    pub fn widened(&self, lower: f64, upper: f64) -> ParamRanges {
        let w = |iv: Interval| Interval {
            lo: iv.lo * lower,
            hi: iv.hi * upper,
        };
        ParamRanges::new(w(self.r), w(self.k), w(self.c0))
    }

    pub fn contains(&self, p: &LogisticParams) -> bool {
        self.as_array()
            .iter()
            .zip(p.as_array())
            .all(|(iv, v)| iv.contains(v))
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> LogisticParams {
        let v = self.as_array().map(|iv| iv.lerp(rng.random::<f64>()));
        LogisticParams::from_array(v).expect("ranges are strictly positive")
    }
}

/// Strictly increasing, nonnegative observation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(times: Vec<f64>) -> Result<Self> {
        TimeGrid::new(times)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.times
    }
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidGrid("grid is empty".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite time".into()));
        }
        if times[0] < 0.0 {
            return Err(Error::InvalidGrid(format!("negative first time {}", times[0])));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(TimeGrid { times })
    }

    /// Evenly stepped grid `start, start + step, ...` up to and including `end`.
    pub fn stepped(start: f64, end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || end < start {
            return Err(Error::InvalidGrid(format!("bad stepped grid {start}..{end} by {step}")));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        Self::new((0..=n).map(|i| start + i as f64 * step).collect())
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
}

/// Population at time `t`.
pub fn solve(params: &LogisticParams, t: f64) -> f64 {
    let [r, k, c0] = params.as_array();
    let e = (-r * t).exp();
    c0 * k / ((k - c0) * e + c0)
}

/// `(dC/dr, dC/dK, dC/dC0)` at time `t`.
pub fn sensitivities(params: &LogisticParams, t: f64) -> [f64; 3] {
    let [r, k, c0] = params.as_array();
    let e = (-r * t).exp();
    let d = (k - c0) * e + c0;
    let d2 = d * d;
    [
        c0 * k * (k - c0) * t * e / d2,
        c0 * c0 * (1.0 - e) / d2,
        k * k * e / d2,
    ]
}

pub fn solve_vec(params: &LogisticParams, grid: &TimeGrid) -> DVector<f64> {
    DVector::from_iterator(grid.len(), grid.times().iter().map(|&t| solve(params, t)))
}

/// 3 x n matrix; row order `(r, K, C0)`, column `i` belongs to `grid[i]`.
pub fn sensitivities_vec(params: &LogisticParams, grid: &TimeGrid) -> Matrix3xX<f64> {
    sensitivities_at(params, grid.times())
}

pub(crate) fn sensitivities_at(params: &LogisticParams, times: &[f64]) -> Matrix3xX<f64> {
    let mut m = Matrix3xX::zeros(times.len());
    for (j, &t) in times.iter().enumerate() {
        let s = sensitivities(params, t);
        for i in 0..3 {
            m[(i, j)] = s[i];
        }
    }
    m
}

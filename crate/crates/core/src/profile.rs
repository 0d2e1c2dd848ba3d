//! Profile likelihoods, confidence intervals and prediction bands.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{params_from_free, FitResult, Likelihood, SearchBox};
use crate::model::{solve, Interval, LogisticParams, ParamId, ParamRanges, TimeGrid};
use crate::optim::{LogBox, NelderMead};
use crate::seed::child_rng;

/// Univariate 95% threshold, chi-square(1) quantile over two.
pub const CI_THRESHOLD: f64 = 1.92;
/// Joint 95% threshold for three parameters.
pub const JOINT_THRESHOLD: f64 = 3.9074;
/// Profile values above zero by more than this trigger a refit.
pub const IMPROVEMENT_TOLERANCE: f64 = 1e-6;
const Z_95: f64 = 1.645;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSettings {
    /// Grid points on each side of the MLE inside the start box, and again
    /// in the extension out to the hard bounds.
    pub points_per_side: usize,
    pub search: SearchBox,
    /// Bisection steps used to bracket each threshold crossing.
    pub bisection_steps: usize,
    pub max_evals: usize,
    /// Random nuisance starts tried when the warm starts fail.
    pub fallback_starts: usize,
}

impl Default for ProfileSettings {
    fn default() -> Self {
        ProfileSettings {
            points_per_side: 20,
            search: SearchBox::default(),
            bisection_steps: 12,
            max_evals: 1000,
            fallback_starts: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub value: f64,
    /// Normalised profile log-likelihood.
    pub loglik: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub param: ParamId,
    pub lower: f64,
    pub upper: f64,
    pub open_lower: bool,
    pub open_upper: bool,
}

impl ConfidenceInterval {
    pub fn is_closed(&self) -> bool {
        !(self.open_lower || self.open_upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileResult {
    pub param: ParamId,
    pub mle: LogisticParams,
    pub max_loglik: f64,
    /// Sorted by parameter value.
    pub points: Vec<ProfilePoint>,
    pub ci: ConfidenceInterval,
}

impl ProfileResult {
    /// Builds a result from precomputed normalised points.
    pub fn from_points(param: ParamId, mle: LogisticParams, max_loglik: f64, mut points: Vec<ProfilePoint>) -> Result<Self> {
        points.sort_by(|a, b| a.value.total_cmp(&b.value));
        let mut p = ProfileResult {
            param,
            mle,
            max_loglik,
            points,
            ci: ConfidenceInterval {
                param,
                lower: f64::NAN,
                upper: f64::NAN,
                open_lower: true,
                open_upper: true,
            },
        };
        p.ci = confidence_interval(&p)?;
        Ok(p)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,value,loglik,valid\n");
        for pt in &self.points {
            out.push_str(&format!("{},{},{},{}\n", self.param, pt.value, pt.loglik, pt.valid));
        }
        out
    }

    /// Interval at an arbitrary threshold.
    pub fn interval_at(&self, threshold: f64) -> Result<ConfidenceInterval> {
        interval_at(self, threshold)
    }
}

/// 95% interval where the normalised profile crosses `-1.92`.
pub fn confidence_interval(p: &ProfileResult) -> Result<ConfidenceInterval> {
    interval_at(p, CI_THRESHOLD)
}

fn interval_at(p: &ProfileResult, threshold: f64) -> Result<ConfidenceInterval> {
    let valid: Vec<&ProfilePoint> = p.points.iter().filter(|q| q.valid && q.loglik.is_finite()).collect();
    if valid.len() < 2 {
        return Err(Error::NoConvergence(format!(
            "profile for {} has {} valid points",
            p.param,
            valid.len()
        )));
    }
    let centre = p.mle.get(p.param);
    let start = valid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.value - centre).abs().total_cmp(&(b.1.value - centre).abs()))
        .map(|(i, _)| i)
        .expect("nonempty");
    let level = -threshold;
    let crossing = |a: &ProfilePoint, b: &ProfilePoint| {
        let w = (a.loglik - level) / (a.loglik - b.loglik);
        a.value + w * (b.value - a.value)
    };

    let mut upper = (valid[valid.len() - 1].value, true);
    for i in start..valid.len() - 1 {
        if valid[i + 1].loglik < level && valid[i].loglik >= level {
            upper = (crossing(valid[i], valid[i + 1]), false);
            break;
        }
    }
    let mut lower = (valid[0].value, true);
    for i in (1..=start).rev() {
        if valid[i - 1].loglik < level && valid[i].loglik >= level {
            lower = (crossing(valid[i], valid[i - 1]), false);
            break;
        }
    }
    Ok(ConfidenceInterval {
        param: p.param,
        lower: lower.0,
        upper: upper.0,
        open_lower: lower.1,
        open_upper: upper.1,
    })
}

struct Profiler<'a> {
    lik: &'a Likelihood,
    param: ParamId,
    others: [usize; 2],
    boxes: [LogBox; 3],
    nm: NelderMead,
    start_box: ParamRanges,
    fallback_starts: usize,
    seed: u64,
}

struct Eval {
    loglik: f64,
    z: [f64; 2],
    converged: bool,
}

impl Profiler<'_> {
    fn params(&self, value: f64, z: &[f64]) -> LogisticParams {
        let mut full = [0.0; 3];
        full[self.param.index()] = self.boxes[self.param.index()].to_free(value);
        full[self.others[0]] = z[0];
        full[self.others[1]] = z[1];
        let mut p = params_from_free(&self.boxes, &full);
        // keep the profiled coordinate exact rather than round-tripped
        p = p.with(self.param, value).expect("value inside hard bounds");
        p
    }

    fn free_nuisance(&self, p: &LogisticParams) -> [f64; 2] {
        let a = p.as_array();
        [
            self.boxes[self.others[0]].to_free(a[self.others[0]]),
            self.boxes[self.others[1]].to_free(a[self.others[1]]),
        ]
    }

    fn run(&self, value: f64, z0: [f64; 2]) -> Eval {
        let m = self.nm.minimize_with_restarts(|z: &[f64]| -self.lik.eval(&self.params(value, z)), &z0, 2);
        Eval {
            loglik: -m.value,
            z: [m.x[0], m.x[1]],
            converged: m.converged && m.value.is_finite(),
        }
    }

    /// Maximise over the nuisance parameters, warm-started from `warm` and
    /// from the MLE, with random starts if neither converges.
    fn optimise(&self, value: f64, warm: [f64; 2], mle_z: [f64; 2], tag: u64) -> Eval {
        let mut best = self.run(value, warm);
        if warm != mle_z {
            let alt = self.run(value, mle_z);
            if alt.loglik > best.loglik || (!best.converged && alt.converged) {
                best = alt;
            }
        }
        if !best.converged {
            for j in 0..self.fallback_starts {
                let mut rng = child_rng(self.seed, &[tag, j as u64]);
                let p = self.start_box.sample_uniform(&mut rng);
                let alt = self.run(value, self.free_nuisance(&p));
                if alt.converged && (!best.converged || alt.loglik > best.loglik) {
                    best = alt;
                }
            }
        }
        best
    }
}

struct RawPoint {
    u: f64,
    loglik: f64,
    z: [f64; 2],
    valid: bool,
}

enum Sweep {
    Done(Vec<RawPoint>),
    Improved(LogisticParams, f64),
}

fn sweep_side(pr: &Profiler, u0: f64, dir: f64, max_ll: f64, mle_z: [f64; 2], settings: &ProfileSettings) -> Sweep {
    let iv = pr.start_box.get(pr.param);
    let hard = pr.boxes[pr.param.index()];
    let span_start_box = 0.5 * (iv.hi.ln() - iv.lo.ln());
    let to_edge = |lo: f64, hi: f64| if dir > 0.0 { hi.ln() - u0 } else { u0 - lo.ln() };
    let hard_span = to_edge(hard.lo(), hard.hi()) * (1.0 - 1e-9);
    let first_span = to_edge(iv.lo, iv.hi).max(span_start_box).min(hard_span);
    let n = settings.points_per_side.max(2);

    let tag_base = if dir > 0.0 { 1u64 << 32 } else { 2u64 << 32 };
    let mut pts: Vec<RawPoint> = Vec::new();
    let mut warm = mle_z;
    let mut below_joint = false;
    let mut stage_offsets: Vec<f64> = (1..=n).map(|i| first_span * i as f64 / n as f64).collect();
    let mut extended = false;
    let mut i = 0usize;
    while i < stage_offsets.len() {
        let u = u0 + dir * stage_offsets[i];
        let e = pr.optimise(u.exp(), warm, mle_z, tag_base + i as u64);
        if e.converged && e.loglik > max_ll + IMPROVEMENT_TOLERANCE {
            return Sweep::Improved(pr.params(u.exp(), &e.z), e.loglik);
        }
        if e.converged {
            warm = e.z;
        }
        let rel = e.loglik - max_ll;
        pts.push(RawPoint {
            u,
            loglik: rel,
            z: e.z,
            valid: e.converged,
        });
        if e.converged && rel < -JOINT_THRESHOLD {
            below_joint = true;
            if rel < -JOINT_THRESHOLD - 1.0 {
                break;
            }
        }
        i += 1;
        if i == stage_offsets.len() && !below_joint && !extended && first_span < hard_span {
            extended = true;
            let extra = hard_span - first_span;
            stage_offsets.extend((1..=n).map(|k| first_span + extra * k as f64 / n as f64));
        }
    }

    // tighten the brackets around both thresholds
    for level in [-CI_THRESHOLD, -JOINT_THRESHOLD] {
        let mut prev_u = u0;
        let mut prev_ll = 0.0;
        let mut prev_z = mle_z;
        let mut bracket = None;
        for p in pts.iter().filter(|p| p.valid) {
            if p.loglik < level && prev_ll >= level {
                bracket = Some((prev_u, prev_z, p.u));
                break;
            }
            prev_u = p.u;
            prev_ll = p.loglik;
            prev_z = p.z;
        }
        let Some((mut inner, mut z_in, mut outer)) = bracket else {
            continue;
        };
        for step in 0..settings.bisection_steps {
            let mid = 0.5 * (inner + outer);
            let e = pr.optimise(mid.exp(), z_in, mle_z, tag_base + (1 << 16) + step as u64);
            if e.converged && e.loglik > max_ll + IMPROVEMENT_TOLERANCE {
                return Sweep::Improved(pr.params(mid.exp(), &e.z), e.loglik);
            }
            let rel = e.loglik - max_ll;
            pts.push(RawPoint {
                u: mid,
                loglik: rel,
                z: e.z,
                valid: e.converged,
            });
            if !e.converged {
                break;
            }
            if rel >= level {
                inner = mid;
                z_in = e.z;
            } else {
                outer = mid;
            }
        }
        pts.sort_by(|a, b| (dir * a.u).total_cmp(&(dir * b.u)));
    }
    Sweep::Done(pts)
}

fn polish(lik: &Likelihood, search: &SearchBox, start: &LogisticParams, max_evals: usize) -> (LogisticParams, f64) {
    let boxes = search.log_boxes();
    let z0: Vec<f64> = (0..3).map(|i| boxes[i].to_free(start.as_array()[i])).collect();
    let nm = NelderMead::default().with_max_evals(max_evals).with_step(0.05);
    let m = nm.minimize_with_restarts(|z: &[f64]| -lik.eval(&params_from_free(&boxes, z)), &z0, 3);
    let p = params_from_free(&boxes, &m.x);
    let l = lik.eval(&p);
    if l >= lik.eval(start) {
        (p, l)
    } else {
        (*start, lik.eval(start))
    }
}

fn profile_once(
    lik: &Likelihood,
    mle: &LogisticParams,
    max_ll: f64,
    param: ParamId,
    settings: &ProfileSettings,
    seed: u64,
) -> std::result::Result<ProfileResult, (LogisticParams, f64)> {
    let others = match param {
        ParamId::GrowthRate => [1, 2],
        ParamId::CarryingCapacity => [0, 2],
        ParamId::InitialPopulation => [0, 1],
    };
    let pr = Profiler {
        lik,
        param,
        others,
        boxes: settings.search.log_boxes(),
        nm: NelderMead::default().with_max_evals(settings.max_evals).with_step(0.1),
        start_box: settings.search.start,
        fallback_starts: settings.fallback_starts,
        seed,
    };
    let u0 = mle.get(param).ln();
    let mle_z = pr.free_nuisance(mle);
    let sides: Vec<Sweep> = [1.0, -1.0]
        .par_iter()
        .map(|&dir| sweep_side(&pr, u0, dir, max_ll, mle_z, settings))
        .collect();
    let mut points = vec![ProfilePoint {
        value: mle.get(param),
        loglik: 0.0,
        valid: true,
    }];
    for side in sides {
        match side {
            Sweep::Improved(p, l) => return Err((p, l)),
            Sweep::Done(raw) => points.extend(raw.into_iter().map(|r| ProfilePoint {
                value: r.u.exp(),
                loglik: r.loglik,
                valid: r.valid,
            })),
        }
    }
    ProfileResult::from_points(param, *mle, max_ll, points).map_err(|_| (*mle, max_ll))
}

/// Profile of one parameter around a fitted MLE. If the sweep finds a
/// better point the fit is polished from there and the sweep restarted.
pub fn profile_parameter<R: Rng + ?Sized>(
    lik: &Likelihood,
    fit: &FitResult,
    param: ParamId,
    settings: &ProfileSettings,
    rng: &mut R,
) -> Result<ProfileResult> {
    let seed: u64 = rng.random();
    let (mut mle, mut max_ll) = (fit.mle, fit.loglik);
    for _ in 0..4 {
        match profile_once(lik, &mle, max_ll, param, settings, seed) {
            Ok(p) => return Ok(p),
            Err((p, l)) => {
                let (q, lq) = polish(lik, &settings.search, &p, settings.max_evals * 4);
                if lq <= max_ll + IMPROVEMENT_TOLERANCE && l <= max_ll + IMPROVEMENT_TOLERANCE {
                    break;
                }
                (mle, max_ll) = if lq >= l { (q, lq) } else { (p, l) };
            }
        }
    }
    Err(Error::NoConvergence(format!("profile for {param} kept improving on the MLE")))
}

/// Profiles all three parameters against a common MLE. Any improvement
/// found by one profile updates the fit and all three are recomputed.
pub fn profile_all<R: Rng + ?Sized>(
    lik: &Likelihood,
    fit: &FitResult,
    settings: &ProfileSettings,
    rng: &mut R,
) -> Result<(FitResult, Vec<ProfileResult>)> {
    let seed: u64 = rng.random();
    let mut fit = fit.clone();
    for _ in 0..4 {
        let results: Vec<std::result::Result<ProfileResult, (LogisticParams, f64)>> = ParamId::ALL
            .par_iter()
            .map(|&param| profile_once(lik, &fit.mle, fit.loglik, param, settings, seed))
            .collect();
        let best_gain = results
            .iter()
            .filter_map(|r| r.as_ref().err())
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .copied();
        match best_gain {
            None => return Ok((fit, results.into_iter().map(|r| r.unwrap_or_else(|_| unreachable!())).collect())),
            Some((p, l)) => {
                let (q, lq) = polish(lik, &settings.search, &p, settings.max_evals * 4);
                let (mle, ll) = if lq >= l { (q, lq) } else { (p, l) };
                if ll <= fit.loglik + IMPROVEMENT_TOLERANCE {
                    break;
                }
                fit.mle = mle;
                fit.loglik = ll;
                fit.noise_scale_hat = lik.scale_at(&mle);
            }
        }
    }
    Err(Error::NoConvergence("profiles kept improving on the MLE".into()))
}

/// Box from which prediction-band parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub ranges: ParamRanges,
}

impl ParamBox {
    /// Box spanned by each profile's crossings of the joint threshold; an
    /// open side extends to the farthest profiled value.
    pub fn from_profiles(profiles: &[ProfileResult]) -> Result<Self> {
        let mut iv = [Interval { lo: 0.0, hi: 0.0 }; 3];
        for id in ParamId::ALL {
            let p = profiles
                .iter()
                .find(|p| p.param == id)
                .ok_or_else(|| Error::NoConvergence(format!("missing profile for {id}")))?;
            let ci = p.interval_at(JOINT_THRESHOLD)?;
            iv[id.index()] = Interval::new(ci.lower, ci.upper)?;
        }
        Ok(ParamBox {
            ranges: ParamRanges::new(iv[0], iv[1], iv[2]),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionBand {
    pub grid: TimeGrid,
    /// Envelope of the retained trajectories.
    pub model_lower: Vec<f64>,
    pub model_upper: Vec<f64>,
    /// Envelope widened by the noise quantiles.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub retained: usize,
}

impl PredictionBand {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,model_lower,model_upper,lower,upper\n");
        for (i, t) in self.grid.times().iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t, self.model_lower[i], self.model_upper[i], self.lower[i], self.upper[i]
            ));
        }
        out
    }

    /// Whether `value` at time `t` lies inside the band; `t` must be on the grid.
    pub fn contains(&self, t: f64, value: f64) -> Option<bool> {
        let i = self.grid.times().iter().position(|&g| (g - t).abs() < 1e-9)?;
        Some(value >= self.lower[i] && value <= self.upper[i])
    }
}

/// Observation times merged with the integers between the first and last.
pub fn band_grid(obs_grid: &TimeGrid) -> TimeGrid {
    let ts = obs_grid.times();
    let (a, b) = (ts[0], ts[ts.len() - 1]);
    let mut all: Vec<f64> = ts.to_vec();
    let mut t = a.ceil();
    while t <= b {
        all.push(t);
        t += 1.0;
    }
    all.sort_by(f64::total_cmp);
    all.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
    TimeGrid::new(all).expect("sorted and deduplicated")
}

/// Samples `n_samples` parameter triples uniformly in `pbox`, keeps those
/// within the joint threshold of the MLE, and envelopes their trajectories.
pub fn prediction_band<R: Rng + ?Sized>(
    lik: &Likelihood,
    fit: &FitResult,
    pbox: &ParamBox,
    n_samples: usize,
    rng: &mut R,
) -> Result<PredictionBand> {
    if n_samples < 1000 {
        return Err(Error::InvalidParameter {
            name: "n_samples",
            reason: format!("need at least 1000 samples, got {n_samples}"),
        });
    }
    let samples: Vec<LogisticParams> = (0..n_samples).map(|_| pbox.ranges.sample_uniform(rng)).collect();
    let mut kept: Vec<LogisticParams> = samples
        .into_par_iter()
        .filter(|p| lik.eval(p) - fit.loglik >= -JOINT_THRESHOLD)
        .collect();
    if kept.len() < 50 {
        return Err(Error::TooFewRetained {
            retained: kept.len(),
            required: 50,
        });
    }
    let retained = kept.len();
    kept.push(fit.mle);

    let grid = band_grid(lik.observations().grid());
    let n = grid.len();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in &kept {
        for (i, &t) in grid.times().iter().enumerate() {
            let c = solve(p, t);
            lo[i] = lo[i].min(c);
            hi[i] = hi[i].max(c);
        }
    }
    let sd = lik.noise_model_at(&fit.mle)?.stationary_variance().sqrt();
    Ok(PredictionBand {
        lower: lo.iter().map(|v| v - Z_95 * sd).collect(),
        upper: hi.iter().map(|v| v + Z_95 * sd).collect(),
        model_lower: lo,
        model_upper: hi,
        grid,
        retained,
    })
}

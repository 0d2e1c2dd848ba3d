//! Declarative scenarios: replicated synthesis, fitting and profiling over
//! a sweep axis, with tidy CSV and JSON outputs.
//!
//! A scenario lists one or more arms. Each arm names the noise that
//! generates the data and the noise assumed in the analysis; every axis
//! point runs all arms on the same replicate seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{
    even_design, optimize_fim_design, optimize_global_design, CandidateGrid, Constraints, Design,
};
use crate::error::{Error, Result};
use crate::information::GlobalWeighting;
use crate::likelihood::{family_of, fit_mle, FitSettings, Likelihood, NoiseSpec, ScaleMode, SearchBox};
use crate::model::{LogisticParams, ParamId, ParamRanges, TimeGrid};
use crate::noise::{synthesize, NoiseModel};
use crate::profile::{prediction_band, profile_all, ParamBox, ProfileSettings};
use crate::seed::{child_rng, child_seed};
use crate::sobol::{total_effect_indices, Sampling, SobolProfile};

/// Version tag written into every output table.
pub const OUTPUT_VERSION: u32 = 1;

/// Noise description with fields left open for the sweep to fill in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseTemplate {
    Iid {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<f64>,
    },
    Ou {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phi: Option<f64>,
        /// Stationary variance `sigma_OU^2 / (2 phi)`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        volatility_sq: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    #[default]
    None,
    #[serde(rename = "n_s")]
    NS,
    Variance,
    Phi,
    Designs,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::None => "none",
            Axis::NS => "n_s",
            Axis::Variance => "variance",
            Axis::Phi => "phi",
            Axis::Designs => "design",
        }
    }
}

/// How a variance sweep value maps onto OU noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// The value is the OU stationary variance.
    #[default]
    Matched,
    /// The value is the OU squared volatility.
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub axis: Axis,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default)]
    pub coupling: Coupling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignSource {
    Even,
    Fim,
    Global,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub source: DesignSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_s: Option<usize>,
    /// Rows of explicit times; a `designs` sweep iterates over them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub times: Vec<Vec<f64>>,
    /// Noise assumed when optimising; defaults to the arm's analysis noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseTemplate>,
    #[serde(default = "default_design_restarts")]
    pub restarts: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub weighting: GlobalWeighting,
}

fn default_design_restarts() -> usize {
    50
}

fn default_budget() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleChoice {
    #[default]
    Fixed,
    Profiled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub label: String,
    pub truth: NoiseTemplate,
    pub analysis: NoiseTemplate,
    #[serde(default)]
    pub scale: ScaleChoice,
    /// Overrides the scenario design for this arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub replicates: usize,
    #[serde(default = "default_params")]
    pub params: LogisticParams,
    #[serde(default = "default_ranges")]
    pub ranges: ParamRanges,
    #[serde(default)]
    pub constraints: Constraints,
    pub design: DesignSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    pub arms: Vec<Arm>,
    #[serde(default = "default_fit_restarts")]
    pub fit_restarts: usize,
    #[serde(default = "default_n_base")]
    pub n_base: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sobol_cache: Option<PathBuf>,
    /// Prediction band samples for the first replicate of each arm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_samples: Option<usize>,
}

fn default_params() -> LogisticParams {
    LogisticParams::TRUE
}

fn default_ranges() -> ParamRanges {
    ParamRanges::PAPER
}

fn default_fit_restarts() -> usize {
    50
}

fn default_n_base() -> usize {
    1 << 13
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|sp| {
                    let line = text[..sp.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "scenario".into());
            Error::config(field, e.message().to_string())
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut s = Self::from_toml_str(&text)?;
        if let (Some(cache), Some(dir)) = (&s.sobol_cache, path.parent()) {
            if cache.is_relative() {
                s.sobol_cache = Some(dir.join(cache));
            }
        }
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::config("name", "use letters, digits, '-' or '_'"));
        }
        if self.replicates == 0 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        if self.arms.is_empty() {
            return Err(Error::config("arms", "at least one arm is required"));
        }
        self.constraints
            .validate()
            .map_err(|e| Error::config("constraints", e.to_string()))?;
        let mut labels: Vec<&str> = self.arms.iter().map(|a| a.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("arms.label", "labels must be unique"));
        }
        for (i, arm) in self.arms.iter().enumerate() {
            if let (NoiseTemplate::Iid { .. }, NoiseTemplate::Ou { .. }) = (arm.truth, arm.analysis) {
                return Err(Error::config(
                    format!("arms[{i}].analysis"),
                    "only OU data analysed as IID is a supported misspecification",
                ));
            }
            check_design(&arm.design.clone().unwrap_or_else(|| self.design.clone()), &self.sweep, &format!("arms[{i}].design"))?;
        }
        match self.sweep.axis {
            Axis::None | Axis::Designs => {}
            _ if self.sweep.values.is_empty() => {
                return Err(Error::config("sweep.values", "a sweep needs at least one value"))
            }
            Axis::NS if self.sweep.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) => {
                return Err(Error::config("sweep.values", "n_s values must be positive integers"))
            }
            Axis::Variance | Axis::Phi if self.sweep.values.iter().any(|v| !(*v > 0.0 && v.is_finite())) => {
                return Err(Error::config("sweep.values", "values must be positive"))
            }
            _ => {}
        }
        // resolve every arm once so template errors surface before running
        for point in self.axis_points() {
            for (i, arm) in self.arms.iter().enumerate() {
                let truth = resolve(&arm.truth, &self.sweep, point, None)
                    .map_err(|e| Error::config(format!("arms[{i}].truth"), e.to_string()))?;
                resolve(&arm.analysis, &self.sweep, point, Some(&truth))
                    .map_err(|e| Error::config(format!("arms[{i}].analysis"), e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Axis values in run order; a single `NaN` when there is no sweep.
    pub fn axis_points(&self) -> Vec<f64> {
        match self.sweep.axis {
            Axis::None => vec![f64::NAN],
            Axis::Designs => {
                let rows = self
                    .arms
                    .iter()
                    .map(|a| a.design.as_ref().unwrap_or(&self.design).times.len())
                    .max()
                    .unwrap_or(0);
                (0..rows).map(|i| i as f64).collect()
            }
            _ => self.sweep.values.clone(),
        }
    }
}

fn check_design(d: &DesignSpec, sweep: &SweepSpec, field: &str) -> Result<()> {
    match d.source {
        DesignSource::Explicit => {
            if d.times.is_empty() {
                return Err(Error::config(format!("{field}.times"), "explicit designs need at least one row"));
            }
            if sweep.axis != Axis::Designs && d.times.len() != 1 {
                return Err(Error::config(
                    format!("{field}.times"),
                    "several rows need `sweep.axis = \"designs\"`",
                ));
            }
        }
        _ => {
            if sweep.axis == Axis::Designs {
                return Err(Error::config(field, "a designs sweep needs explicit times"));
            }
            if sweep.axis != Axis::NS && d.n_s.is_none() {
                return Err(Error::config(format!("{field}.n_s"), "required unless sweeping n_s"));
            }
        }
    }
    Ok(())
}

fn missing(what: &str) -> Error {
    Error::InvalidParameter {
        name: "noise",
        reason: format!("{what} is not set and cannot be inferred"),
    }
}

/// Fills a template from the sweep point and, for analysis noise, from the
/// resolved truth.
pub fn resolve(t: &NoiseTemplate, sweep: &SweepSpec, point: f64, truth: Option<&NoiseModel>) -> Result<NoiseModel> {
    match *t {
        NoiseTemplate::Iid { variance } => {
            let v = match sweep.axis {
                Axis::Variance => Some(point),
                _ => variance,
            };
            let v = v
                .or_else(|| truth.map(NoiseModel::stationary_variance))
                .ok_or_else(|| missing("IID variance"))?;
            NoiseModel::iid(v)
        }
        NoiseTemplate::Ou {
            phi,
            variance,
            volatility_sq,
        } => {
            let phi = match sweep.axis {
                Axis::Phi => Some(point),
                _ => phi,
            }
            .or_else(|| truth.and_then(NoiseModel::phi))
            .ok_or_else(|| missing("OU phi"))?;
            match (sweep.axis, sweep.coupling) {
                (Axis::Variance, Coupling::Matched) => return NoiseModel::ou_stationary(phi, point),
                (Axis::Variance, Coupling::Equal) => return NoiseModel::ou(phi, point),
                _ => {}
            }
            match (variance, volatility_sq) {
                (Some(_), Some(_)) => Err(Error::InvalidParameter {
                    name: "noise",
                    reason: "give either `variance` or `volatility_sq`, not both".into(),
                }),
                (Some(v), None) => NoiseModel::ou_stationary(phi, v),
                (None, Some(s)) => NoiseModel::ou(phi, s),
                (None, None) => {
                    let v = truth.map(NoiseModel::stationary_variance).ok_or_else(|| missing("OU variance"))?;
                    NoiseModel::ou_stationary(phi, v)
                }
            }
        }
    }
}

/// One replicate's interval for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub axis_value: f64,
    pub arm: String,
    pub replicate: usize,
    pub seed: u64,
    pub param: ParamId,
    pub status: String,
    pub mle: f64,
    pub lower: f64,
    pub upper: f64,
    pub open_lower: bool,
    pub open_upper: bool,
}

impl ReplicateRow {
    pub fn closed(&self) -> bool {
        self.status == "ok" && !self.open_lower && !self.open_upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Aggregate for one (axis value, arm, parameter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub arm: String,
    pub param: ParamId,
    pub design: Vec<f64>,
    /// Mean width over closed intervals only.
    pub mean_width: Option<f64>,
    pub closed: usize,
    pub half_open: usize,
    pub failed: usize,
    pub half_open_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub version: u32,
    pub scenario: String,
    pub axis: String,
    pub replicates: usize,
    pub points: Vec<SweepPoint>,
    pub config: Scenario,
}

impl SweepResult {
    pub fn point(&self, axis_value: f64, arm: &str, param: ParamId) -> Option<&SweepPoint> {
        self.points.iter().find(|p| {
            p.arm == arm && p.param == param && (p.axis_value == axis_value || (p.axis_value.is_nan() && axis_value.is_nan()))
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# obsdesign summary v{OUTPUT_VERSION}\n{},arm,param,design,mean_width,closed,half_open,failed,half_open_fraction\n",
            self.axis
        );
        for p in &self.points {
            let design = p.design.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
            let mean = p.mean_width.map(|w| w.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                fmt_axis(p.axis_value),
                p.arm,
                p.param,
                design,
                mean,
                p.closed,
                p.half_open,
                p.failed,
                p.half_open_fraction
            );
        }
        out
    }
}

fn fmt_axis(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Replicate table as tidy CSV.
pub fn rows_to_csv(axis: Axis, rows: &[ReplicateRow]) -> String {
    let mut out = format!(
        "# obsdesign replicates v{OUTPUT_VERSION}\n{},arm,replicate,seed,param,status,mle,lower,upper,open_lower,open_upper,width\n",
        axis.label()
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_axis(r.axis_value),
            r.arm,
            r.replicate,
            r.seed,
            r.param,
            r.status,
            r.mle,
            r.lower,
            r.upper,
            r.open_lower,
            r.open_upper,
            r.width()
        );
    }
    out
}

/// Everything a scenario run produces.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub summary: SweepResult,
    pub rows: Vec<ReplicateRow>,
    /// Designs used, keyed by `(axis index, arm label)`.
    pub designs: BTreeMap<(usize, String), Design>,
    /// Prediction band CSV for replicate 0 of each `(axis index, arm)`.
    pub bands: BTreeMap<(usize, String), String>,
}

impl ScenarioOutput {
    pub fn designs_csv(&self) -> String {
        let points = self.summary.config.axis_points();
        let mut out = format!("# obsdesign designs v{OUTPUT_VERSION}\n{},arm,n_s,times\n", self.summary.axis);
        for ((a, arm), d) in &self.designs {
            let times = d.times().iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
            let _ = writeln!(out, "{},{},{},{}", fmt_axis(points[*a]), arm, d.len(), times);
        }
        out
    }

    /// Writes `<name>_replicates.csv`, `<name>_summary.csv`,
    /// `<name>_summary.json`, `<name>_designs.csv` and any bands.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let name = &self.summary.scenario;
        let axis = self.summary.config.sweep.axis;
        let mut files = vec![
            (format!("{name}_replicates.csv"), rows_to_csv(axis, &self.rows)),
            (format!("{name}_summary.csv"), self.summary.to_csv()),
            (format!("{name}_summary.json"), serde_json::to_string_pretty(&self.summary)? + "\n"),
            (format!("{name}_designs.csv"), self.designs_csv()),
        ];
        for ((a, arm), csv) in &self.bands {
            files.push((format!("{name}_band_{a}_{arm}.csv"), csv.clone()));
        }
        let mut written = Vec::new();
        for (file, body) in files {
            let path = dir.join(file);
            std::fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn design_for(
    s: &Scenario,
    spec: &DesignSpec,
    axis_index: usize,
    point: f64,
    design_noise: &NoiseModel,
    sobol: &dyn Fn() -> Result<SobolProfile>,
) -> Result<Design> {
    let n_s = match s.sweep.axis {
        Axis::NS => point as usize,
        _ => spec.n_s.unwrap_or(0),
    };
    let seed = child_seed(s.seed, &[u64::MAX - 1, axis_index as u64]);
    match spec.source {
        DesignSource::Even => even_design(n_s, &s.constraints),
        DesignSource::Explicit => {
            let row = if s.sweep.axis == Axis::Designs { axis_index } else { 0 };
            let times = spec
                .times
                .get(row)
                .ok_or_else(|| Error::config("design.times", format!("no row {row}")))?;
            Design::new(times.clone(), s.constraints)
        }
        DesignSource::Fim => Ok(optimize_fim_design(&s.params, design_noise, n_s, &s.constraints, spec.restarts, seed)?.design),
        DesignSource::Global => {
            let grid = CandidateGrid::new(&s.constraints)?;
            let profile = sobol()?;
            Ok(optimize_global_design(
                &profile,
                design_noise,
                n_s,
                &grid,
                &s.constraints,
                spec.weighting,
                spec.budget,
                seed,
            )?
            .design)
        }
    }
}

fn load_or_compute_sobol(s: &Scenario) -> Result<SobolProfile> {
    let grid = CandidateGrid::new(&s.constraints)?;
    if let Some(path) = &s.sobol_cache {
        if path.exists() {
            let cached = SobolProfile::from_cache_str(&std::fs::read_to_string(path)?)?;
            cached.columns_for(grid.times())?;
            return Ok(cached);
        }
    }
    total_effect_indices(
        &s.ranges,
        &grid.to_time_grid(),
        s.n_base,
        Sampling::default(),
        child_seed(s.seed, &[u64::MAX]),
    )
}

struct Job {
    axis_index: usize,
    arm_index: usize,
    replicate: usize,
}

struct Prepared {
    truth: NoiseModel,
    spec: NoiseSpec,
    grid: TimeGrid,
}

/// Runs every axis point, arm and replicate of a scenario.
pub fn run_scenario(s: &Scenario) -> Result<ScenarioOutput> {
    s.validate()?;
    let points = s.axis_points();
    let sobol_cell = std::sync::OnceLock::new();
    let sobol = || -> Result<SobolProfile> {
        if let Some(p) = sobol_cell.get() {
            return Ok(Clone::clone(p));
        }
        let p = load_or_compute_sobol(s)?;
        Ok(sobol_cell.get_or_init(|| p).clone())
    };

    let mut designs = BTreeMap::new();
    let mut prepared: Vec<Vec<Prepared>> = Vec::with_capacity(points.len());
    for (a, &point) in points.iter().enumerate() {
        let mut row = Vec::with_capacity(s.arms.len());
        for arm in &s.arms {
            let truth = resolve(&arm.truth, &s.sweep, point, None)?;
            let analysis = resolve(&arm.analysis, &s.sweep, point, Some(&truth))?;
            let spec_d = arm.design.as_ref().unwrap_or(&s.design);
            let design_noise = match &spec_d.noise {
                Some(t) => resolve(t, &s.sweep, point, Some(&truth))?,
                None => analysis,
            };
            let design = design_for(s, spec_d, a, point, &design_noise, &sobol)?;
            let spec = match arm.scale {
                ScaleChoice::Fixed => NoiseSpec::known(&analysis),
                ScaleChoice::Profiled => NoiseSpec {
                    family: family_of(&analysis),
                    scale: ScaleMode::Profiled,
                },
            };
            row.push(Prepared {
                truth,
                spec,
                grid: design.to_grid(),
            });
            designs.insert((a, arm.label.clone()), design);
        }
        prepared.push(row);
    }

    let jobs: Vec<Job> = (0..points.len())
        .flat_map(|a| {
            (0..s.arms.len()).flat_map(move |i| (0..s.replicates).map(move |k| Job {
                axis_index: a,
                arm_index: i,
                replicate: k,
            }))
        })
        .collect();

    let fit_settings = FitSettings {
        search: SearchBox::around(&s.ranges.widened(0.5, 2.0), 4.0),
        restarts: s.fit_restarts,
        ..FitSettings::default()
    };
    let profile_settings = ProfileSettings {
        search: fit_settings.search,
        ..ProfileSettings::default()
    };

    let results: Vec<(Vec<ReplicateRow>, Option<String>)> = jobs
        .par_iter()
        .map(|job| {
            let prep = &prepared[job.axis_index][job.arm_index];
            let arm = &s.arms[job.arm_index];
            let point = points[job.axis_index];
            // data seeds ignore the arm so arms share random numbers
            let seed = child_seed(s.seed, &[job.axis_index as u64, job.replicate as u64]);
            let obs = synthesize(&s.params, &prep.truth, &prep.grid, &mut child_rng(seed, &[]));
            let outcome = Likelihood::new(obs, prep.spec).and_then(|lik| {
                let fit = fit_mle(&lik, &fit_settings, &mut child_rng(seed, &[1]))?;
                let (fit, profiles) = profile_all(&lik, &fit, &profile_settings, &mut child_rng(seed, &[2]))?;
                let band = match s.band_samples {
                    Some(m) if job.replicate == 0 => ParamBox::from_profiles(&profiles)
                        .and_then(|b| prediction_band(&lik, &fit, &b, m, &mut child_rng(seed, &[3])))
                        .map(|b| b.to_csv())
                        .ok(),
                    _ => None,
                };
                Ok((fit, profiles, band))
            });
            let rows = match outcome {
                Ok((fit, profiles, band)) => (
                    profiles
                        .iter()
                        .map(|p| ReplicateRow {
                            axis_value: point,
                            arm: arm.label.clone(),
                            replicate: job.replicate,
                            seed,
                            param: p.param,
                            status: "ok".into(),
                            mle: fit.mle.get(p.param),
                            lower: p.ci.lower,
                            upper: p.ci.upper,
                            open_lower: p.ci.open_lower,
                            open_upper: p.ci.open_upper,
                        })
                        .collect(),
                    band,
                ),
                Err(e) => {
                    log::warn!("{} replicate {} failed: {e}", arm.label, job.replicate);
                    (
                        ParamId::ALL
                            .iter()
                            .map(|&param| ReplicateRow {
                                axis_value: point,
                                arm: arm.label.clone(),
                                replicate: job.replicate,
                                seed,
                                param,
                                status: "failed".into(),
                                mle: f64::NAN,
                                lower: f64::NAN,
                                upper: f64::NAN,
                                open_lower: true,
                                open_upper: true,
                            })
                            .collect(),
                        None,
                    )
                }
            };
            rows
        })
        .collect();

    let mut rows = Vec::with_capacity(results.len() * 3);
    let mut bands = BTreeMap::new();
    for (job, (r, band)) in jobs.iter().zip(results) {
        rows.extend(r);
        if let Some(b) = band {
            bands.insert((job.axis_index, s.arms[job.arm_index].label.clone()), b);
        }
    }

    let mut summary_points = Vec::new();
    for (a, &point) in points.iter().enumerate() {
        for arm in &s.arms {
            for param in ParamId::ALL {
                let subset: Vec<&ReplicateRow> = rows
                    .iter()
                    .filter(|r| r.arm == arm.label && r.param == param && same_axis(r.axis_value, point))
                    .collect();
                summary_points.push(aggregate(point, &arm.label, param, &designs[&(a, arm.label.clone())], &subset));
            }
        }
    }

    Ok(ScenarioOutput {
        summary: SweepResult {
            version: OUTPUT_VERSION,
            scenario: s.name.clone(),
            axis: s.sweep.axis.label().to_string(),
            replicates: s.replicates,
            points: summary_points,
            config: s.clone(),
        },
        rows,
        designs,
        bands,
    })
}

fn same_axis(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

/// Mean over closed intervals, summed in sorted order so the result does
/// not depend on replicate order.
pub fn aggregate(axis_value: f64, arm: &str, param: ParamId, design: &Design, rows: &[&ReplicateRow]) -> SweepPoint {
    let mut widths: Vec<f64> = rows.iter().filter(|r| r.closed()).map(|r| r.width()).collect();
    widths.sort_by(f64::total_cmp);
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let closed = widths.len();
    let half_open = rows.len() - failed - closed;
    let ok = rows.len() - failed;
    SweepPoint {
        axis_value,
        arm: arm.to_string(),
        param,
        design: design.times().to_vec(),
        mean_width: (closed > 0).then(|| widths.iter().sum::<f64>() / closed as f64),
        closed,
        half_open,
        failed,
        half_open_fraction: if ok > 0 { half_open as f64 / ok as f64 } else { 0.0 },
    }
}

/// Mean-reversion sweep with an 11-point Fisher design re-optimised at each
/// `phi`. `variance` fixes the stationary variance; `volatility_sq` fixes
/// the squared volatility instead.
pub fn phi_sweep_scenario(
    name: &str,
    phis: &[f64],
    variance: Option<f64>,
    volatility_sq: Option<f64>,
    replicates: usize,
    seed: u64,
) -> Scenario {
    Scenario {
        name: name.to_string(),
        seed,
        replicates,
        params: LogisticParams::TRUE,
        ranges: ParamRanges::PAPER,
        constraints: Constraints::default(),
        design: DesignSpec {
            source: DesignSource::Fim,
            n_s: Some(11),
            times: Vec::new(),
            noise: None,
            restarts: default_design_restarts(),
            budget: default_budget(),
            weighting: GlobalWeighting::default(),
        },
        sweep: SweepSpec {
            axis: Axis::Phi,
            values: phis.to_vec(),
            coupling: Coupling::default(),
        },
        arms: vec![Arm {
            label: "ou".into(),
            truth: NoiseTemplate::Ou {
                phi: None,
                variance,
                volatility_sq,
            },
            analysis: NoiseTemplate::Ou {
                phi: None,
                variance,
                volatility_sq,
            },
            scale: ScaleChoice::Fixed,
            design: None,
        }],
        fit_restarts: default_fit_restarts(),
        n_base: default_n_base(),
        sobol_cache: None,
        band_samples: None,
    }
}

pub fn run_phi_sweep(s: &Scenario) -> Result<ScenarioOutput> {
    if s.sweep.axis != Axis::Phi {
        return Err(Error::config("sweep.axis", "a phi sweep needs axis = \"phi\""));
    }
    run_scenario(s)
}

/// Explicit time rows probing the value of observations near `t = 20`.
pub fn s3_rows() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 20.0, 40.0, 60.0, 80.0],
        vec![0.0, 20.0, 40.0, 60.0, 64.0, 80.0],
        vec![0.0, 13.3, 20.0, 40.0, 60.0, 80.0],
        vec![0.0, 11.4, 20.0, 40.0, 45.7, 60.0, 68.6, 80.0],
        (0..=8).map(|i| i as f64 * 10.0).collect(),
    ]
}

pub fn s3_scenario(name: &str, replicates: usize, seed: u64) -> Scenario {
    let iid = NoiseTemplate::Iid { variance: Some(0.64) };
    Scenario {
        name: name.to_string(),
        seed,
        replicates,
        params: LogisticParams::TRUE,
        ranges: ParamRanges::PAPER,
        constraints: Constraints::default(),
        design: DesignSpec {
            source: DesignSource::Explicit,
            n_s: None,
            times: s3_rows(),
            noise: None,
            restarts: default_design_restarts(),
            budget: default_budget(),
            weighting: GlobalWeighting::default(),
        },
        sweep: SweepSpec {
            axis: Axis::Designs,
            values: Vec::new(),
            coupling: Coupling::default(),
        },
        arms: vec![Arm {
            label: "iid".into(),
            truth: iid,
            analysis: iid,
            scale: ScaleChoice::Fixed,
            design: None,
        }],
        fit_restarts: default_fit_restarts(),
        n_base: default_n_base(),
        sobol_cache: None,
        band_samples: None,
    }
}

pub fn run_s3_perturbation(s: &Scenario) -> Result<ScenarioOutput> {
    if s.sweep.axis != Axis::Designs {
        return Err(Error::config("sweep.axis", "the perturbation table needs axis = \"designs\""));
    }
    run_scenario(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "small"
seed = 7
replicates = 3
fit_restarts = 8

[design]
source = "even"
n_s = 11

[[arms]]
label = "iid"
truth = { kind = "iid", variance = 9.0 }
analysis = { kind = "iid", variance = 9.0 }

[[arms]]
label = "mis"
truth = { kind = "ou", phi = 0.02, variance = 9.0 }
analysis = { kind = "iid" }
"#;

    #[test]
    fn parses_and_resolves() {
        let s = Scenario::from_toml_str(SMALL).unwrap();
        assert_eq!(s.params, LogisticParams::TRUE);
        assert_eq!(s.n_base, 8192);
        let truth = resolve(&s.arms[1].truth, &s.sweep, f64::NAN, None).unwrap();
        let analysis = resolve(&s.arms[1].analysis, &s.sweep, f64::NAN, Some(&truth)).unwrap();
        assert_eq!(analysis, NoiseModel::iid(9.0).unwrap());
        let back = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn config_errors_name_the_problem() {
        let bad = SMALL.replace("replicates = 3", "replicates = 0");
        assert!(matches!(Scenario::from_toml_str(&bad), Err(Error::Config { field, .. }) if field == "replicates"));
        let typo = SMALL.replace("fit_restarts", "fit_restart");
        let err = Scenario::from_toml_str(&typo).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        let reversed = SMALL.replace(
            "truth = { kind = \"iid\", variance = 9.0 }\nanalysis = { kind = \"iid\", variance = 9.0 }",
            "truth = { kind = \"iid\", variance = 9.0 }\nanalysis = { kind = \"ou\", phi = 0.1 }",
        );
        assert!(Scenario::from_toml_str(&reversed).is_err());
        let no_n = SMALL.replace("n_s = 11", "");
        assert!(Scenario::from_toml_str(&no_n).is_err());
    }

    #[test]
    fn sweep_resolution() {
        let matched = SweepSpec {
            axis: Axis::Variance,
            values: vec![4.0],
            coupling: Coupling::Matched,
        };
        let ou = NoiseTemplate::Ou {
            phi: Some(0.02),
            variance: None,
            volatility_sq: None,
        };
        assert!((resolve(&ou, &matched, 4.0, None).unwrap().stationary_variance() - 4.0).abs() < 1e-12);
        let equal = SweepSpec {
            coupling: Coupling::Equal,
            ..matched.clone()
        };
        assert!((resolve(&ou, &equal, 4.0, None).unwrap().stationary_variance() - 100.0).abs() < 1e-9);
        let phi = SweepSpec {
            axis: Axis::Phi,
            values: vec![0.5],
            coupling: Coupling::Matched,
        };
        let vol = NoiseTemplate::Ou {
            phi: None,
            variance: None,
            volatility_sq: Some(0.09),
        };
        let m = resolve(&vol, &phi, 0.5, None).unwrap();
        assert_eq!(m.phi(), Some(0.5));
        assert!((m.stationary_variance() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn small_run_is_deterministic_and_tidy() {
        let s = Scenario::from_toml_str(SMALL).unwrap();
        let a = run_scenario(&s).unwrap();
        let b = run_scenario(&s).unwrap();
        assert_eq!(rows_to_csv(s.sweep.axis, &a.rows), rows_to_csv(s.sweep.axis, &b.rows));
        assert_eq!(a.rows.len(), 2 * 3 * 3);
        assert_eq!(a.summary.points.len(), 6);
        // common random numbers: arms share data seeds
        assert_eq!(a.rows[0].seed, a.rows[9].seed);
        let iid_r = a.summary.point(f64::NAN, "iid", ParamId::GrowthRate).unwrap();
        assert_eq!(iid_r.closed + iid_r.half_open + iid_r.failed, 3);
    }

    #[test]
    fn aggregation_ignores_order() {
        let d = even_design(3, &Constraints::default()).unwrap();
        let rows: Vec<ReplicateRow> = [0.1, 0.3, 0.7, 1e-9, 5.0]
            .iter()
            .enumerate()
            .map(|(i, w)| ReplicateRow {
                axis_value: 1.0,
                arm: "a".into(),
                replicate: i,
                seed: i as u64,
                param: ParamId::GrowthRate,
                status: "ok".into(),
                mle: 0.2,
                lower: 0.2 - w / 3.0,
                upper: 0.2 + w / 7.0,
                open_lower: false,
                open_upper: i == 4,
            })
            .collect();
        let fwd: Vec<&ReplicateRow> = rows.iter().collect();
        let rev: Vec<&ReplicateRow> = rows.iter().rev().collect();
        let a = aggregate(1.0, "a", ParamId::GrowthRate, &d, &fwd);
        let b = aggregate(1.0, "a", ParamId::GrowthRate, &d, &rev);
        assert_eq!(a, b);
        assert_eq!(a.half_open, 1);
        assert!((a.half_open_fraction - 0.2).abs() < 1e-15);
    }

    #[test]
    fn builders_validate() {
        phi_sweep_scenario("phi", &[0.05, 0.2], None, Some(0.09), 2, 1).validate().unwrap();
        s3_scenario("s3", 2, 1).validate().unwrap();
        assert_eq!(s3_scenario("s3", 2, 1).axis_points(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }
}

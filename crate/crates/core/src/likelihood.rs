//! Gaussian log-likelihoods under IID and OU observation noise, the
//! closed-form noise-scale estimators, and multistart maximum likelihood.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{solve, solve_vec, Interval, LogisticParams, ParamRanges};
use crate::noise::{correlation_matrix, covariance, CovMatrix, NoiseModel, Observations};
use crate::optim::{LogBox, NelderMead};
use crate::seed::child_rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Noise family assumed at analysis time. `phi` is treated as known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseFamily {
    Iid,
    Ou { phi: f64 },
}

/// How the noise scale (IID variance or OU squared volatility) is handled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    /// Replace the scale by its closed-form MLE at every parameter value.
    Profiled,
    /// Hold the scale at a known value.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: ScaleMode,
}

impl NoiseSpec {
    /// Analysis assumption equal to a known noise model.
    pub fn known(model: &NoiseModel) -> Self {
        NoiseSpec {
            family: family_of(model),
            scale: ScaleMode::Fixed(model.scale()),
        }
    }

    pub fn profiled(family: NoiseFamily) -> Self {
        NoiseSpec {
            family,
            scale: ScaleMode::Profiled,
        }
    }

    pub fn model_with_scale(&self, scale: f64) -> Result<NoiseModel> {
        match self.family {
            NoiseFamily::Iid => NoiseModel::iid(scale),
            NoiseFamily::Ou { phi } => NoiseModel::ou(phi, scale),
        }
    }
}

pub fn family_of(model: &NoiseModel) -> NoiseFamily {
    match model.phi() {
        Some(phi) => NoiseFamily::Ou { phi },
        None => NoiseFamily::Iid,
    }
}

/// Multivariate normal log-density of `residual` with covariance `cov`.
pub fn loglik_gaussian(residual: &DVector<f64>, cov: &CovMatrix) -> f64 {
    let n = residual.len() as f64;
    -0.5 * n * LN_2PI - 0.5 * cov.log_det() - 0.5 * cov.quad_form(residual)
}

fn residuals(params: &LogisticParams, obs: &Observations) -> DVector<f64> {
    DVector::from_column_slice(obs.values()) - solve_vec(params, obs.grid())
}

fn sum_sq_residuals(params: &LogisticParams, obs: &Observations) -> f64 {
    obs.grid()
        .times()
        .iter()
        .zip(obs.values())
        .map(|(&t, &y)| (y - solve(params, t)).powi(2))
        .sum()
}

/// IID Gaussian log-likelihood with variance `variance`.
pub fn loglik_iid(params: &LogisticParams, obs: &Observations, variance: f64) -> f64 {
    let n = obs.len() as f64;
    -0.5 * n * (LN_2PI + variance.ln()) - sum_sq_residuals(params, obs) / (2.0 * variance)
}

/// Maximum-likelihood IID variance: mean squared residual.
pub fn sigma2_iid_hat(params: &LogisticParams, obs: &Observations) -> f64 {
    sum_sq_residuals(params, obs) / obs.len() as f64
}

/// OU log-likelihood through the Cholesky factor of the full covariance.
pub fn loglik_ou(params: &LogisticParams, obs: &Observations, phi: f64, volatility_sq: f64) -> Result<f64> {
    let cov = covariance(&NoiseModel::ou(phi, volatility_sq)?, obs.grid())?;
    Ok(loglik_gaussian(&residuals(params, obs), &cov))
}

/// Maximum-likelihood OU squared volatility for known `phi`.
pub fn sigma2_ou_hat(params: &LogisticParams, obs: &Observations, phi: f64) -> Result<f64> {
    let corr = correlation_matrix(phi, obs.grid().times())?;
    Ok(2.0 * phi * corr.quad_form(&residuals(params, obs)) / obs.len() as f64)
}

/// Log-likelihood of the logistic model for fixed data and noise assumption.
///
/// The OU correlation factor depends only on the observation times and `phi`,
/// so it is factorised once here and reused for every parameter value.
#[derive(Debug, Clone)]
pub struct Likelihood {
    obs: Observations,
    spec: NoiseSpec,
    corr: Option<CovMatrix>,
}

impl Likelihood {
    pub fn new(obs: Observations, spec: NoiseSpec) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::InvalidGrid("no observations".into()));
        }
        if let ScaleMode::Fixed(s) = spec.scale {
            spec.model_with_scale(s)?;
        }
        let corr = match spec.family {
            NoiseFamily::Iid => None,
            NoiseFamily::Ou { phi } => {
                if !(phi.is_finite() && phi > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "phi",
                        reason: format!("must be > 0, got {phi}"),
                    });
                }
                Some(correlation_matrix(phi, obs.grid().times())?)
            }
        };
        Ok(Likelihood { obs, spec, corr })
    }

    pub fn observations(&self) -> &Observations {
        &self.obs
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    /// `eps^T R^{-1} eps` for the unit-variance correlation `R` (identity for IID).
    fn unit_quad(&self, params: &LogisticParams) -> f64 {
        match &self.corr {
            None => sum_sq_residuals(params, &self.obs),
            Some(corr) => corr.quad_form(&residuals(params, &self.obs)),
        }
    }

    fn unit_log_det(&self) -> f64 {
        self.corr.as_ref().map_or(0.0, CovMatrix::log_det)
    }

    fn stationary_from_scale(&self, scale: f64) -> f64 {
        match self.spec.family {
            NoiseFamily::Iid => scale,
            NoiseFamily::Ou { phi } => scale / (2.0 * phi),
        }
    }

    /// Noise-scale MLE at `params` (IID variance or OU squared volatility).
    pub fn scale_hat(&self, params: &LogisticParams) -> f64 {
        let v = self.unit_quad(params) / self.obs.len() as f64;
        match self.spec.family {
            NoiseFamily::Iid => v,
            NoiseFamily::Ou { phi } => 2.0 * phi * v,
        }
    }

    /// Scale used at `params`: the fixed value or the plug-in MLE.
    pub fn scale_at(&self, params: &LogisticParams) -> f64 {
        match self.spec.scale {
            ScaleMode::Fixed(s) => s,
            ScaleMode::Profiled => self.scale_hat(params),
        }
    }

    pub fn eval_with_scale(&self, params: &LogisticParams, scale: f64) -> f64 {
        let n = self.obs.len() as f64;
        let v = self.stationary_from_scale(scale);
        -0.5 * n * (LN_2PI + v.ln()) - 0.5 * self.unit_log_det() - 0.5 * self.unit_quad(params) / v
    }

    /// Log-likelihood with the scale handled per the configured scale mode.
    pub fn eval(&self, params: &LogisticParams) -> f64 {
        match self.spec.scale {
            ScaleMode::Fixed(s) => self.eval_with_scale(params, s),
            ScaleMode::Profiled => {
                let n = self.obs.len() as f64;
                let v = (self.unit_quad(params) / n).max(f64::MIN_POSITIVE);
                -0.5 * n * (LN_2PI + v.ln() + 1.0) - 0.5 * self.unit_log_det()
            }
        }
    }

    /// Noise model implied at `params` for prediction widening.
    pub fn noise_model_at(&self, params: &LogisticParams) -> Result<NoiseModel> {
        self.spec.model_with_scale(self.scale_at(params))
    }
}

/// Box used for maximum-likelihood and profile searches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    /// Box from which multistart initial points are drawn.
    pub start: ParamRanges,
    /// Hard bounds of the search.
    pub bounds: ParamRanges,
}

impl Default for SearchBox {
    fn default() -> Self {
        SearchBox::around(&ParamRanges::PAPER.widened(0.5, 2.0), 4.0)
    }
}

impl SearchBox {
    /// Hard bounds span `extension` times the log-width of `start`, centred on it.
    pub fn around(start: &ParamRanges, extension: f64) -> Self {
        let ext = |iv: Interval| {
            let (a, b) = (iv.lo.ln(), iv.hi.ln());
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a) * extension;
            Interval {
                lo: (mid - half).exp(),
                hi: (mid + half).exp(),
            }
        };
        SearchBox {
            start: *start,
            bounds: ParamRanges::new(ext(start.r), ext(start.k), ext(start.c0)),
        }
    }

    pub(crate) fn log_boxes(&self) -> [LogBox; 3] {
        self.bounds.as_array().map(|iv| LogBox::new(iv.lo, iv.hi))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSettings {
    pub search: SearchBox,
    pub restarts: usize,
    pub max_evals: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            search: SearchBox::default(),
            restarts: 50,
            max_evals: 2000,
        }
    }
}

impl FitSettings {
    pub(crate) fn optimizer(&self) -> NelderMead {
        NelderMead::default().with_max_evals(self.max_evals).with_step(0.1)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub mle: LogisticParams,
    pub loglik: f64,
    pub noise_scale_hat: f64,
    pub converged: bool,
    pub restarts_used: usize,
}

pub(crate) fn params_from_free(boxes: &[LogBox; 3], z: &[f64]) -> LogisticParams {
    let v = [boxes[0].to_value(z[0]), boxes[1].to_value(z[1]), boxes[2].to_value(z[2])];
    LogisticParams::from_array(v).expect("log box values are positive")
}

/// Multistart Nelder-Mead maximisation of the log-likelihood within the
/// search box. Restart `j` draws its start from a child stream of a single
/// base seed, so a larger restart count always explores a superset.
pub fn fit_mle<R: Rng + ?Sized>(lik: &Likelihood, settings: &FitSettings, rng: &mut R) -> Result<FitResult> {
    let base: u64 = rng.random();
    let boxes = settings.search.log_boxes();
    let nm = settings.optimizer();
    let objective = |z: &[f64]| -lik.eval(&params_from_free(&boxes, z));

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for j in 0..settings.restarts.max(1) {
        let mut r = child_rng(base, &[j as u64]);
        let start = settings.search.start.sample_uniform(&mut r).as_array();
        let z0: Vec<f64> = (0..3).map(|i| boxes[i].to_free(start[i])).collect();
        let m = nm.minimize_with_restarts(objective, &z0, 2);
        let better = match &best {
            None => true,
            Some((_, v, _)) => m.value < *v,
        };
        if m.value.is_finite() && better {
            best = Some((m.x, m.value, m.converged));
        }
    }
    let (z, value, converged) = best.ok_or_else(|| Error::NoConvergence("no finite likelihood value".into()))?;
    let polished = nm.minimize_with_restarts(objective, &z, 3);
    let (z, converged) = if polished.value <= value {
        (polished.x, polished.converged || converged)
    } else {
        (z, converged)
    };
    if !converged {
        return Err(Error::NoConvergence(format!(
            "none of {} restarts met the tolerances",
            settings.restarts
        )));
    }
    let mle = params_from_free(&boxes, &z);
    Ok(FitResult {
        mle,
        loglik: lik.eval(&mle),
        noise_scale_hat: lik.scale_at(&mle),
        converged,
        restarts_used: settings.restarts.max(1),
    })
}

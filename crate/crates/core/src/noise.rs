//! Observation noise: IID Gaussian and stationary Ornstein-Uhlenbeck.
//!
//! The OU process `d eps = -phi eps dt + sigma dW` started in its stationary
//! law has covariance `sigma^2 / (2 phi) * exp(-phi |t_i - t_j|)` between any
//! two observation times. Paths are drawn with the exact Gaussian transition,
//! so there is no discretisation error regardless of grid spacing.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{solve_vec, LogisticParams, TimeGrid};

/// Variants of the noise process. Construct through [`NoiseModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    Iid { variance: f64 },
    Ou { phi: f64, volatility_sq: f64 },
}

/// Validated noise model; every parameter is strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseKind", into = "NoiseKind")]
pub struct NoiseModel(NoiseKind);

impl TryFrom<NoiseKind> for NoiseModel {
    type Error = Error;
    fn try_from(kind: NoiseKind) -> Result<Self> {
        match kind {
            NoiseKind::Iid { variance } => NoiseModel::iid(variance),
            NoiseKind::Ou { phi, volatility_sq } => NoiseModel::ou(phi, volatility_sq),
        }
    }
}

impl From<NoiseModel> for NoiseKind {
    fn from(m: NoiseModel) -> Self {
        m.0
    }
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {v}"),
        })
    }
}

impl NoiseModel {
    pub fn iid(variance: f64) -> Result<Self> {
        Ok(NoiseModel(NoiseKind::Iid {
            variance: positive("variance", variance)?,
        }))
    }

    /// OU noise from its mean-reversion rate and squared volatility.
    pub fn ou(phi: f64, volatility_sq: f64) -> Result<Self> {
        Ok(NoiseModel(NoiseKind::Ou {
            phi: positive("phi", phi)?,
            volatility_sq: positive("volatility_sq", volatility_sq)?,
        }))
    }

    /// OU noise parameterised by its stationary variance `sigma^2 / (2 phi)`.
    pub fn ou_stationary(phi: f64, stationary_variance: f64) -> Result<Self> {
        positive("phi", phi)?;
        Self::ou(phi, 2.0 * phi * positive("stationary_variance", stationary_variance)?)
    }

    /// Zero-variance model for tests of noiseless behaviour. Bypasses the
    /// positivity checks, so covariance construction on it will fail.
    #[doc(hidden)]
    pub fn zero_noise_hook(phi: Option<f64>) -> Self {
        match phi {
            Some(phi) => NoiseModel(NoiseKind::Ou {
                phi,
                volatility_sq: 0.0,
            }),
            None => NoiseModel(NoiseKind::Iid { variance: 0.0 }),
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.0
    }

    pub fn is_ou(&self) -> bool {
        matches!(self.0, NoiseKind::Ou { .. })
    }

    pub fn phi(&self) -> Option<f64> {
        match self.0 {
            NoiseKind::Ou { phi, .. } => Some(phi),
            NoiseKind::Iid { .. } => None,
        }
    }

    /// Marginal variance of a single observation.
    pub fn stationary_variance(&self) -> f64 {
        match self.0 {
            NoiseKind::Iid { variance } => variance,
            NoiseKind::Ou { phi, volatility_sq } => volatility_sq / (2.0 * phi),
        }
    }

    /// The scale parameter estimated by maximum likelihood: the IID variance
    /// or the OU squared volatility.
    pub fn scale(&self) -> f64 {
        match self.0 {
            NoiseKind::Iid { variance } => variance,
            NoiseKind::Ou { volatility_sq, .. } => volatility_sq,
        }
    }

    /// Same family and `phi`, different scale parameter.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        match self.0 {
            NoiseKind::Iid { .. } => Self::iid(scale),
            NoiseKind::Ou { phi, .. } => Self::ou(phi, scale),
        }
    }

    pub fn covariance_entry(&self, ti: f64, tj: f64) -> f64 {
        match self.0 {
            NoiseKind::Iid { variance } => {
                if ti == tj {
                    variance
                } else {
                    0.0
                }
            }
            NoiseKind::Ou { phi, .. } => self.stationary_variance() * (-phi * (ti - tj).abs()).exp(),
        }
    }
}

impl std::fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            NoiseKind::Iid { variance } => write!(f, "iid(variance={variance})"),
            NoiseKind::Ou { phi, volatility_sq } => {
                write!(f, "ou(phi={phi}, volatility_sq={volatility_sq})")
            }
        }
    }
}

/// OU autocorrelation at lag `lag`.
pub fn autocorrelation(phi: f64, lag: f64) -> f64 {
    (-phi * lag).exp()
}

/// Symmetric positive-definite covariance with its cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl CovMatrix {
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        let chol = Cholesky::new(matrix.clone()).ok_or(Error::FactorizationFailed { n })?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::FactorizationFailed { n });
        }
        Ok(CovMatrix {
            matrix,
            chol,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn cholesky_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `L^{-1} v` for the lower Cholesky factor `L`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("Cholesky diagonal is nonzero")
    }

    /// `L^{-1} M` applied column-wise.
    pub fn whiten_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(m)
            .expect("Cholesky diagonal is nonzero")
    }

    /// `v^T Sigma^{-1} v` via one triangular solve.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        self.whiten(v).norm_squared()
    }

    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    /// Draw `L z` with `z` standard normal: a joint sample with this covariance.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        self.chol.l_dirty().lower_triangle() * z
    }
}

/// Covariance of the noise at the given (strictly increasing) times.
pub fn covariance(noise: &NoiseModel, grid: &TimeGrid) -> Result<CovMatrix> {
    covariance_at(noise, grid.times())
}

pub(crate) fn covariance_at(noise: &NoiseModel, times: &[f64]) -> Result<CovMatrix> {
    let n = times.len();
    let m = DMatrix::from_fn(n, n, |i, j| noise.covariance_entry(times[i], times[j]));
    CovMatrix::from_matrix(m)
}

/// Unit-variance OU correlation matrix `exp(-phi |t_i - t_j|)`.
pub fn correlation_matrix(phi: f64, times: &[f64]) -> Result<CovMatrix> {
    let n = times.len();
    let m = DMatrix::from_fn(n, n, |i, j| autocorrelation(phi, (times[i] - times[j]).abs()));
    CovMatrix::from_matrix(m)
}

/// Exact noise draw on `grid`. OU paths start in the stationary law and use
/// the Gaussian transition between consecutive times.
pub fn sample_noise<R: Rng + ?Sized>(noise: &NoiseModel, grid: &TimeGrid, rng: &mut R) -> DVector<f64> {
    let times = grid.times();
    let mut out = DVector::zeros(times.len());
    match noise.kind() {
        NoiseKind::Iid { variance } => {
            let sd = variance.sqrt();
            for v in out.iter_mut() {
                *v = sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        NoiseKind::Ou { phi, .. } => {
            let stationary = noise.stationary_variance();
            let mut prev = stationary.sqrt() * rng.sample::<f64, _>(StandardNormal);
            out[0] = prev;
            for i in 1..times.len() {
                let decay = (-phi * (times[i] - times[i - 1])).exp();
                let sd = (stationary * (1.0 - decay * decay)).sqrt();
                prev = prev * decay + sd * rng.sample::<f64, _>(StandardNormal);
                out[i] = prev;
            }
        }
    }
    out
}

/// Time-stamped population observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Observations {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::InvalidGrid(format!(
                "{} times but {} values",
                grid.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite observation value".into()));
        }
        Ok(Observations { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,value\n");
        for (t, y) in self.grid.times().iter().zip(&self.values) {
            s.push_str(&format!("{t},{y}\n"));
        }
        s
    }

    /// Parse a two-column `time,value` CSV with a header row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || lineno == 0 && line.starts_with("time") {
                continue;
            }
            let mut cols = line.split(',');
            let mut next = |what: &str| -> Result<f64> {
                cols.next()
                    .ok_or_else(|| Error::Parse(format!("line {}: missing {what}", lineno + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {what}: {e}", lineno + 1)))
            };
            times.push(next("time")?);
            values.push(next("value")?);
        }
        Observations::new(TimeGrid::new(times)?, values)
    }
}

/// Model trajectory plus a noise draw.
pub fn synthesize<R: Rng + ?Sized>(
    params: &LogisticParams,
    noise: &NoiseModel,
    grid: &TimeGrid,
    rng: &mut R,
) -> Observations {
    let values = solve_vec(params, grid) + sample_noise(noise, grid, rng);
    Observations {
        grid: grid.clone(),
        values: values.iter().copied().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn even_grid() -> TimeGrid {
        TimeGrid::stepped(0.0, 80.0, 8.0).unwrap()
    }

    #[test]
    fn constructors_reject_nonpositive() {
        assert!(NoiseModel::iid(0.0).is_err());
        assert!(NoiseModel::ou(-0.1, 1.0).is_err());
        assert!(NoiseModel::ou(0.1, 0.0).is_err());
        assert!(serde_json::from_str::<NoiseModel>(r#"{"kind":"iid","variance":-1}"#).is_err());
        let m: NoiseModel = serde_json::from_str(r#"{"kind":"ou","phi":0.02,"volatility_sq":0.36}"#).unwrap();
        assert!((m.stationary_variance() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn ou_diagonal_is_stationary_variance() {
        let ou = NoiseModel::ou(0.02, 0.36).unwrap();
        let c = covariance(&ou, &even_grid()).unwrap();
        for i in 0..c.dim() {
            assert!((c.matrix()[(i, i)] - 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn iid_covariance_is_scaled_identity() {
        let g = TimeGrid::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let c = covariance(&NoiseModel::iid(9.0).unwrap(), &g).unwrap();
        assert_eq!(c.matrix(), &(DMatrix::identity(4, 4) * 9.0));
        assert!((c.log_det() - 4.0 * 9.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ou_off_diagonal_value() {
        let g = TimeGrid::new(vec![0.0, 5.0]).unwrap();
        let c = covariance(&NoiseModel::ou(0.1, 1.0).unwrap(), &g).unwrap();
        assert!((c.matrix()[(0, 1)] - 5.0 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((c.matrix()[(0, 1)] - 3.0327).abs() < 1e-4);
    }

    #[test]
    fn autocorrelation_values() {
        assert_eq!(autocorrelation(0.02, 0.0), 1.0);
        assert!((autocorrelation(0.02, 8.0) - 0.8521).abs() < 1e-4);
        assert!(autocorrelation(100.0, 2.0) < 1e-80);
    }

    #[test]
    fn zero_noise_hook_gives_zero_paths() {
        let mut rng = rng_from_seed(1);
        for hook in [NoiseModel::zero_noise_hook(Some(0.02)), NoiseModel::zero_noise_hook(None)] {
            let eps = sample_noise(&hook, &even_grid(), &mut rng);
            assert!(eps.iter().all(|&e| e == 0.0));
            let obs = synthesize(&LogisticParams::TRUE, &hook, &even_grid(), &mut rng);
            assert_eq!(obs.values(), solve_vec(&LogisticParams::TRUE, &even_grid()).as_slice());
        }
        assert!(covariance(&NoiseModel::zero_noise_hook(None), &even_grid()).is_err());
    }

    #[test]
    fn synthesize_is_deterministic() {
        let ou = NoiseModel::ou(0.02, 0.36).unwrap();
        let a = synthesize(&LogisticParams::TRUE, &ou, &even_grid(), &mut rng_from_seed(9));
        let b = synthesize(&LogisticParams::TRUE, &ou, &even_grid(), &mut rng_from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn quad_form_matches_dense_solve() {
        let g = TimeGrid::new(vec![0.0, 1.5, 4.0, 9.0, 9.5]).unwrap();
        let c = covariance(&NoiseModel::ou(0.3, 2.0).unwrap(), &g).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, 0.1]);
        let dense = c.matrix().clone().lu().solve(&v).unwrap();
        let exact = v.dot(&dense);
        assert!((c.quad_form(&v) - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn csv_round_trip() {
        let obs = synthesize(
            &LogisticParams::TRUE,
            &NoiseModel::iid(1.0).unwrap(),
            &even_grid(),
            &mut rng_from_seed(2),
        );
        assert_eq!(Observations::from_csv(&obs.to_csv()).unwrap(), obs);
        assert!(Observations::from_csv("time,value\n1,2\n0,3\n").is_err());
    }
}

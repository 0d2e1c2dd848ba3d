//! Fisher and Sobol'-based information matrices and the log-determinant
//! (D-optimality) objective.

use nalgebra::{DMatrix, Matrix3, Matrix3xX};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{sensitivities_at, LogisticParams};
use crate::noise::{correlation_matrix, covariance_at, NoiseKind, NoiseModel};
use crate::sobol::SobolProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoKind {
    FisherIid,
    FisherOu,
    GlobalIid,
    GlobalOu,
}

/// Covariance used to weight Sobol' vectors under OU noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GlobalWeighting {
    /// Full OU covariance including the stationary variance.
    #[default]
    Covariance,
    /// Unit-variance correlation `exp(-phi |t_i - t_j|)`.
    Correlation,
}

/// Symmetric 3 x 3 information matrix in `(r, K, C0)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    matrix: Matrix3<f64>,
    kind: InfoKind,
    times: Vec<f64>,
}

impl InfoMatrix {
    pub fn new(matrix: Matrix3<f64>, kind: InfoKind, times: Vec<f64>) -> Self {
        InfoMatrix { matrix, kind, times }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> InfoKind {
        self.kind
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn scaled(&self, c: f64) -> InfoMatrix {
        InfoMatrix {
            matrix: self.matrix * c,
            ..self.clone()
        }
    }

    pub fn log_det(&self) -> f64 {
        log_det_objective(self)
    }
}

/// `X W X^T` where `W` is the inverse noise covariance at `times`.
fn precision_gram(columns: &Matrix3xX<f64>, times: &[f64], noise: &NoiseModel, weighting: GlobalWeighting) -> Result<Matrix3<f64>> {
    match noise.kind() {
        NoiseKind::Iid { variance } => {
            let scale = match weighting {
                GlobalWeighting::Covariance => 1.0 / variance,
                GlobalWeighting::Correlation => 1.0,
            };
            Ok(columns * columns.transpose() * scale)
        }
        NoiseKind::Ou { phi, .. } => {
            let cov = match weighting {
                GlobalWeighting::Covariance => covariance_at(noise, times)?,
                GlobalWeighting::Correlation => correlation_matrix(phi, times)?,
            };
            let xt = DMatrix::from_fn(times.len(), 3, |i, j| columns[(j, i)]);
            let w = cov.whiten_columns(&xt);
            let g = w.transpose() * w;
            Ok(Matrix3::from_fn(|i, j| 0.5 * (g[(i, j)] + g[(j, i)])))
        }
    }
}

/// Fisher information in log-parameters at observation `times`.
pub fn fim(params: &LogisticParams, times: &[f64], noise: &NoiseModel) -> Result<InfoMatrix> {
    let mut s = sensitivities_at(params, times);
    for (i, theta) in params.as_array().into_iter().enumerate() {
        s.row_mut(i).scale_mut(theta);
    }
    let m = precision_gram(&s, times, noise, GlobalWeighting::Covariance)?;
    let kind = if noise.is_ou() {
        InfoKind::FisherOu
    } else {
        InfoKind::FisherIid
    };
    Ok(InfoMatrix::new(m, kind, times.to_vec()))
}

/// Global information matrix from cached total-effect indices.
///
/// Under IID noise this is the plain Gram matrix of the index vectors; under
/// OU noise the vectors are weighted by the inverse covariance (or correlation)
/// at the design times.
pub fn global_info(profile: &SobolProfile, times: &[f64], noise: &NoiseModel, weighting: GlobalWeighting) -> Result<InfoMatrix> {
    let s = profile.columns_for(times)?;
    let (m, kind) = match noise.kind() {
        NoiseKind::Iid { .. } => (s.clone() * s.transpose(), InfoKind::GlobalIid),
        NoiseKind::Ou { .. } => (precision_gram(&s, times, noise, weighting)?, InfoKind::GlobalOu),
    };
    Ok(InfoMatrix::new(m, kind, times.to_vec()))
}

/// Relative pivot below which a 3 x 3 matrix is treated as singular.
const SINGULAR_PIVOT: f64 = 1e-12;

/// `log det M` through an LDL^T factorisation; `-inf` when `M` is singular or
/// indefinite.
pub fn log_det3(m: &Matrix3<f64>) -> f64 {
    let scale = m.diagonal().max();
    if !(scale > 0.0) || !scale.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut l = Matrix3::<f64>::identity();
    let mut d = [0.0; 3];
    for j in 0..3 {
        let mut dj = m[(j, j)];
        for k in 0..j {
            dj -= l[(j, k)] * l[(j, k)] * d[k];
        }
        if !(dj > SINGULAR_PIVOT * scale) {
            return f64::NEG_INFINITY;
        }
        d[j] = dj;
        for i in j + 1..3 {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)] * d[k];
            }
            l[(i, j)] = v / dj;
        }
    }
    d.iter().map(|x| x.ln()).sum()
}

/// D-optimality objective: `log det M`, or `-inf` for a singular matrix.
pub fn log_det_objective(m: &InfoMatrix) -> f64 {
    log_det3(&m.matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParamRanges, TimeGrid};
    use crate::sobol::Sampling;
    use proptest::prelude::*;

    const P: LogisticParams = LogisticParams::TRUE;

    fn even(n: usize) -> Vec<f64> {
        (0..n).map(|i| 80.0 * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn single_time_is_singular() {
        for noise in [NoiseModel::iid(9.0).unwrap(), NoiseModel::ou(0.02, 0.36).unwrap()] {
            let f = fim(&P, &[10.0], &noise).unwrap();
            assert_eq!(log_det_objective(&f), f64::NEG_INFINITY);
        }
    }

    #[test]
    fn log_det_identity_and_scaling() {
        let id = InfoMatrix::new(Matrix3::identity(), InfoKind::FisherIid, vec![]);
        assert_eq!(log_det_objective(&id), 0.0);
        let f = fim(&P, &even(6), &NoiseModel::iid(9.0).unwrap()).unwrap();
        let shift = f.scaled(3.5).log_det() - f.log_det();
        assert!((shift - 3.0 * 3.5f64.ln()).abs() < 1e-10);
        assert_eq!(log_det3(&Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0)), f64::NEG_INFINITY);
    }

    #[test]
    fn ou_fisher_decorrelation_limit() {
        let times = even(7);
        let phi = 1e4;
        let iid = fim(&P, &times, &NoiseModel::iid(9.0).unwrap()).unwrap();
        let ou = fim(&P, &times, &NoiseModel::ou(phi, 2.0 * phi * 9.0).unwrap()).unwrap();
        for (a, b) in ou.matrix().iter().zip(iid.matrix().iter()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn iid_variance_scaling() {
        let times = even(5);
        let a = fim(&P, &times, &NoiseModel::iid(1.0).unwrap()).unwrap();
        let b = fim(&P, &times, &NoiseModel::iid(4.0).unwrap()).unwrap();
        assert!((a.log_det() - b.log_det() - 3.0 * 4.0f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn global_single_time_zero() {
        let grid = TimeGrid::new(vec![0.0]).unwrap();
        let prof = SobolProfile::from_parts(
            grid,
            Matrix3xX::from_column_slice(&[0.0, 0.0, 1.0]),
            0,
            0,
            ParamRanges::PAPER,
            Sampling::Sobol,
        )
        .unwrap();
        let ou = NoiseModel::ou(0.02, 0.36).unwrap();
        let g = global_info(&prof, &[0.0], &ou, GlobalWeighting::Covariance).unwrap();
        let mut expect = Matrix3::zeros();
        expect[(2, 2)] = 1.0 / 9.0;
        assert!((g.matrix() - expect).abs().max() < 1e-15);
        let gi = global_info(&prof, &[0.0], &NoiseModel::iid(9.0).unwrap(), GlobalWeighting::Covariance).unwrap();
        assert_eq!(gi.matrix()[(2, 2)], 1.0);
        assert!(global_info(&prof, &[1.0], &ou, GlobalWeighting::Covariance).is_err());
    }

    #[test]
    fn global_ou_large_phi_limit() {
        let grid = TimeGrid::stepped(0.0, 80.0, 2.0).unwrap();
        let prof = crate::sobol::total_effect_indices(&ParamRanges::PAPER, &grid, 512, Sampling::Sobol, 1).unwrap();
        let times = [0.0, 10.0, 20.0, 60.0, 80.0];
        let iid = global_info(&prof, &times, &NoiseModel::iid(1.0).unwrap(), GlobalWeighting::Covariance).unwrap();
        let phi = 1e3;
        let ou = NoiseModel::ou_stationary(phi, 4.0).unwrap();
        let g = global_info(&prof, &times, &ou, GlobalWeighting::Covariance).unwrap();
        assert!((g.matrix() - iid.matrix() / 4.0).abs().max() < 1e-12);
        let gc = global_info(&prof, &times, &ou, GlobalWeighting::Correlation).unwrap();
        assert!((gc.matrix() - iid.matrix()).abs().max() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fim_is_symmetric_psd_and_order_free(mut times in proptest::collection::vec(0.0f64..80.0, 3..9), phi in 0.01f64..1.0) {
            times.sort_by(f64::total_cmp);
            times.dedup_by(|a, b| (*a - *b).abs() < 0.5);
            prop_assume!(times.len() >= 3);
            let mut rev = times.clone();
            rev.reverse();
            for noise in [NoiseModel::iid(2.0).unwrap(), NoiseModel::ou_stationary(phi, 2.0).unwrap()] {
                let f = fim(&P, &times, &noise).unwrap();
                let m = f.matrix();
                prop_assert!((m - m.transpose()).abs().max() <= 1e-12 * m.abs().max());
                let eig = m.symmetric_eigen().eigenvalues;
                prop_assert!(eig.min() >= -1e-9 * m.norm());
                let g = fim(&P, &rev, &noise).unwrap();
                prop_assert!((g.matrix() - m).abs().max() <= 1e-9 * m.abs().max());
            }
        }

        #[test]
        fn adding_a_time_never_lowers_iid_det(mut times in proptest::collection::vec(0.0f64..80.0, 3..8), extra in 0.0f64..80.0) {
            times.sort_by(f64::total_cmp);
            let noise = NoiseModel::iid(9.0).unwrap();
            let before = fim(&P, &times, &noise).unwrap().log_det();
            times.push(extra);
            let after = fim(&P, &times, &noise).unwrap().log_det();
            prop_assert!(after >= before - 1e-9 || before == f64::NEG_INFINITY);
        }
    }
}

//! Extended Kalman filter over [`PlantModel`]s.
//!
//! The pair (mean, covariance) produced here is the finite-dimensional
//! information state the learner acts on. [`propagate`] is the full
//! one-step map: time update with the applied control, then measurement
//! update with the next observation.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{all_finite, psd_repair, spd_solve, symmetrize};
use crate::model::PlantModel;

/// Filtered mean `x̂_{k|k}` and covariance `Σ_{k|k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// One-step prediction `x̂_{k+1|k}`, `Σ_{k+1|k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl InformationState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim("covariance rows", mean.len(), cov.nrows())?;
        check_dim("covariance cols", mean.len(), cov.ncols())?;
        Ok(InformationState { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_trace(&self) -> f64 {
        self.cov.trace()
    }
}

impl From<PredictedState> for InformationState {
    fn from(p: PredictedState) -> Self {
        InformationState {
            mean: p.mean,
            cov: p.cov,
        }
    }
}

/// Length of the feature vector for an `n`-dimensional state.
pub const fn feature_len(n: usize) -> usize {
    n + n * (n + 1) / 2
}

fn check_finite_state(mean: &DVector<f64>, cov: &DMatrix<f64>, stage: &str) -> Result<()> {
    if mean.iter().all(|v| v.is_finite()) && all_finite(cov) {
        Ok(())
    } else {
        Err(Error::numerical(format!("non-finite {stage} estimate")))
    }
}

pub fn time_update(
    model: &PlantModel,
    state: &InformationState,
    u: &DVector<f64>,
) -> Result<PredictedState> {
    check_dim("information state", model.state_dim(), state.dim())?;
    let f = model.dynamics_jacobian(&state.mean, u)?;
    let mean = model.dynamics(&state.mean, u)?;
    let cov = symmetrize(&(&f * &state.cov * f.transpose() + model.process_cov()));
    check_finite_state(&mean, &cov, "predicted")?;
    Ok(PredictedState { mean, cov })
}

/// Measurement update with the observation Jacobian linearized at the
/// predicted mean. The covariance uses `Σ - L H Σ` followed by
/// [`psd_repair`].
pub fn measurement_update(
    model: &PlantModel,
    pred: &PredictedState,
    y: &DVector<f64>,
) -> Result<InformationState> {
    check_dim("predicted state", model.state_dim(), pred.mean.len())?;
    check_dim("observation", model.output_dim(), y.len())?;
    let h = model.observation_jacobian(&pred.mean)?;
    let innovation = y - model.observation(&pred.mean)?;

    let sigma_ht = &pred.cov * h.transpose();
    let s = symmetrize(&(&h * &sigma_ht + model.measurement_cov()));
    // L = Σ Hᵀ S⁻¹, solved as S Lᵀ = H Σ
    let gain = spd_solve(&s, &sigma_ht.transpose())
        .map_err(|_| Error::numerical("innovation covariance is singular"))?
        .transpose();

    let mean = &pred.mean + &gain * innovation;
    let cov = psd_repair(&(&pred.cov - &gain * &h * &pred.cov))?;
    check_finite_state(&mean, &cov, "filtered")?;
    Ok(InformationState { mean, cov })
}

/// The information-state map `π̂_{k+1} = T̂(π̂_k, u_k, y_{k+1})`.
pub fn propagate(
    model: &PlantModel,
    state: &InformationState,
    u: &DVector<f64>,
    y_next: &DVector<f64>,
) -> Result<InformationState> {
    let pred = time_update(model, state, u)?;
    measurement_update(model, &pred, y_next)
}

/// Mean followed by the row-major upper triangle of the covariance.
pub fn vectorize(state: &InformationState) -> Vec<f64> {
    let n = state.dim();
    let mut out = Vec::with_capacity(feature_len(n));
    out.extend(state.mean.iter().copied());
    for i in 0..n {
        for j in i..n {
            out.push(state.cov[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vectorize`] for an `n`-dimensional state.
pub fn devectorize(features: &[f64], n: usize) -> Result<InformationState> {
    check_dim("feature vector", feature_len(n), features.len())?;
    let mean = DVector::from_column_slice(&features[..n]);
    let mut cov = DMatrix::zeros(n, n);
    let mut idx = n;
    for i in 0..n {
        for j in i..n {
            cov[(i, j)] = features[idx];
            cov[(j, i)] = features[idx];
            idx += 1;
        }
    }
    Ok(InformationState { mean, cov })
}

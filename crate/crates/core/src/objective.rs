//! Quadratic cost on information states and the reward derived from it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::filter::InformationState;
use crate::linalg::{min_eigenvalue, psd_sqrt, quad_form};
use crate::model::matrix_from_rows;

/// `Q ⪰ 0` on the state, `R ≻ 0` on the control, discount `γ ∈ (0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gamma: f64,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !q.is_square() || !r.is_square() {
            return Err(Error::Config("cost weights must be square".into()));
        }
        if (&q - q.transpose()).amax() > 0.0 || (&r - r.transpose()).amax() > 0.0 {
            return Err(Error::Config("cost weights must be symmetric".into()));
        }
        if min_eigenvalue(&q) < -1e-12 {
            return Err(Error::Config("state weight Q must be positive semidefinite".into()));
        }
        if !(min_eigenvalue(&r) > 0.0) {
            return Err(Error::Config("control weight R must be positive definite".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("discount factor {gamma} not in (0, 1)")));
        }
        Ok(CostWeights { q, r, gamma })
    }

    /// `Q = I`, `R = I`, `γ = 0.95`.
    pub fn identity(state_dim: usize, input_dim: usize) -> Self {
        CostWeights {
            q: DMatrix::identity(state_dim, state_dim),
            r: DMatrix::identity(input_dim, input_dim),
            gamma: 0.95,
        }
    }
}

/// Serialized form of [`CostWeights`] used in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSpec {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec {
            q: vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            r: vec![vec![1.0]],
            gamma: 0.95,
        }
    }
}

impl CostSpec {
    pub fn build(&self) -> Result<CostWeights> {
        CostWeights::new(
            matrix_from_rows("cost.q", &self.q)?,
            matrix_from_rows("cost.r", &self.r)?,
            self.gamma,
        )
    }
}

/// `x̂ᵀQx̂ + tr(QΣ) + uᵀRu`.
pub fn stage_cost(w: &CostWeights, state: &InformationState, u: &DVector<f64>) -> f64 {
    debug_assert_eq!(w.q.nrows(), state.dim());
    debug_assert_eq!(w.r.nrows(), u.len());
    quad_form(&w.q, &state.mean) + (&w.q * &state.cov).trace() + quad_form(&w.r, u)
}

pub fn reward(w: &CostWeights, state: &InformationState, u: &DVector<f64>) -> f64 {
    -stage_cost(w, state, u)
}

/// `Σ γᵏ r_k`.
pub fn discounted_return(w: &CostWeights, rewards: &[f64]) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= w.gamma;
    }
    total
}

/// Monte-Carlo estimate of `E{xᵀQx}` for `x ~ N(mean, cov)`.
pub fn mc_expected_quadratic<R: Rng + ?Sized>(
    q: &DMatrix<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    n_samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = mean.len();
    check_dim("cov rows", n, cov.nrows())?;
    check_dim("q rows", n, q.nrows())?;
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    let l = psd_sqrt(cov)?;
    let mut z = DVector::zeros(n);
    let mut x = DVector::zeros(n);
    let mut acc = 0.0;
    for _ in 0..n_samples {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        x.copy_from(mean);
        x.gemv(1.0, &l, &z, 1.0);
        acc += quad_form(q, &x);
    }
    Ok(acc / n_samples as f64)
}

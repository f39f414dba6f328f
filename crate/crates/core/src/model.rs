//! Partially observed nonlinear plants with additive Gaussian noise.
//!
//! A [`PlantModel`] carries the dynamics `x' = f(x, u) + w`, the observation
//! `y = h(x) + v`, their Jacobians, the noise covariances and the box of
//! admissible controls. [`example_plant`] builds the three-state benchmark
//! whose single output saturates for negative first coordinates; any plant
//! with linear dynamics and a scalar nonlinearity per output row can be
//! described with [`LinearPlantSpec`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{min_eigenvalue, psd_sqrt};

pub type DynamicsFn = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type DynamicsJacobianFn =
    Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ObservationFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type ObservationJacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Exponential linear unit: `e^z - 1` below zero, identity above.
pub fn elu(z: f64) -> f64 {
    if z < 0.0 {
        z.exp_m1()
    } else {
        z
    }
}

/// Derivative of [`elu`], right-continuous at zero.
pub fn elu_prime(z: f64) -> f64 {
    if z < 0.0 {
        z.exp()
    } else {
        1.0
    }
}

#[derive(Clone)]
pub struct PlantModel {
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    dynamics: DynamicsFn,
    observation: ObservationFn,
    dynamics_jacobian: DynamicsJacobianFn,
    observation_jacobian: ObservationJacobianFn,
    process_cov: DMatrix<f64>,
    measurement_cov: DMatrix<f64>,
    process_sqrt: DMatrix<f64>,
    measurement_sqrt: DMatrix<f64>,
    input_lower: DVector<f64>,
    input_upper: DVector<f64>,
}

impl fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantModel")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("process_cov", &self.process_cov)
            .field("measurement_cov", &self.measurement_cov)
            .field("input_lower", &self.input_lower)
            .field("input_upper", &self.input_upper)
            .finish_non_exhaustive()
    }
}

/// Validated construction of a [`PlantModel`] from function handles.
pub struct PlantBuilder {
    pub state_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub dynamics: DynamicsFn,
    pub observation: ObservationFn,
    pub dynamics_jacobian: DynamicsJacobianFn,
    pub observation_jacobian: ObservationJacobianFn,
    pub process_cov: DMatrix<f64>,
    pub measurement_cov: DMatrix<f64>,
    pub input_lower: DVector<f64>,
    pub input_upper: DVector<f64>,
}

impl PlantBuilder {
    pub fn build(self) -> Result<PlantModel> {
        if self.state_dim == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("plant dimensions must be positive".into()));
        }
        check_dim("process_cov rows", self.state_dim, self.process_cov.nrows())?;
        check_dim("process_cov cols", self.state_dim, self.process_cov.ncols())?;
        check_dim("measurement_cov rows", self.output_dim, self.measurement_cov.nrows())?;
        check_dim("measurement_cov cols", self.output_dim, self.measurement_cov.ncols())?;
        check_dim("input_lower", self.input_dim, self.input_lower.len())?;
        check_dim("input_upper", self.input_dim, self.input_upper.len())?;
        for (name, cov) in [
            ("process_cov", &self.process_cov),
            ("measurement_cov", &self.measurement_cov),
        ] {
            if (cov - cov.transpose()).amax() > 0.0 {
                return Err(Error::Config(format!("{name} is not symmetric")));
            }
            if !(min_eigenvalue(cov) > 0.0) {
                return Err(Error::Config(format!("{name} is not positive definite")));
            }
        }
        if self
            .input_lower
            .iter()
            .zip(self.input_upper.iter())
            .any(|(lo, hi)| !(lo < hi))
        {
            return Err(Error::Config(
                "input_lower must be strictly below input_upper".into(),
            ));
        }
        let process_sqrt = psd_sqrt(&self.process_cov)?;
        let measurement_sqrt = psd_sqrt(&self.measurement_cov)?;
        Ok(PlantModel {
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            dynamics: self.dynamics,
            observation: self.observation,
            dynamics_jacobian: self.dynamics_jacobian,
            observation_jacobian: self.observation_jacobian,
            process_cov: self.process_cov,
            measurement_cov: self.measurement_cov,
            process_sqrt,
            measurement_sqrt,
            input_lower: self.input_lower,
            input_upper: self.input_upper,
        })
    }
}

/// Zero-mean Gaussian noise sample for one plant step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub process_noise: DVector<f64>,
    pub measurement_noise: DVector<f64>,
}

impl PlantModel {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn process_cov(&self) -> &DMatrix<f64> {
        &self.process_cov
    }

    pub fn measurement_cov(&self) -> &DMatrix<f64> {
        &self.measurement_cov
    }

    pub fn input_lower(&self) -> &DVector<f64> {
        &self.input_lower
    }

    pub fn input_upper(&self) -> &DVector<f64> {
        &self.input_upper
    }

    /// Copy of this plant with a different process covariance.
    ///
    /// Unlike [`PlantBuilder::build`] this accepts a PSD (possibly zero)
    /// covariance so that noise-free simulations can be expressed.
    pub fn with_process_cov(&self, cov: DMatrix<f64>) -> Result<Self> {
        check_dim("process_cov rows", self.state_dim, cov.nrows())?;
        check_dim("process_cov cols", self.state_dim, cov.ncols())?;
        let mut out = self.clone();
        out.process_sqrt = psd_sqrt(&cov)?;
        out.process_cov = cov;
        Ok(out)
    }

    pub fn with_measurement_cov(&self, cov: DMatrix<f64>) -> Result<Self> {
        check_dim("measurement_cov rows", self.output_dim, cov.nrows())?;
        check_dim("measurement_cov cols", self.output_dim, cov.ncols())?;
        let mut out = self.clone();
        out.measurement_sqrt = psd_sqrt(&cov)?;
        out.measurement_cov = cov;
        Ok(out)
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        check_dim("state vector", self.state_dim, x.len())
    }

    fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        check_dim("control vector", self.input_dim, u.len())
    }

    pub fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        self.check_input(u)?;
        Ok((self.dynamics)(x, u))
    }

    pub fn observation(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x)?;
        Ok((self.observation)(x))
    }

    pub fn dynamics_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        self.check_input(u)?;
        Ok((self.dynamics_jacobian)(x, u))
    }

    pub fn observation_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(x)?;
        Ok((self.observation_jacobian)(x))
    }

    /// Clamps each control coordinate into the admissible box.
    pub fn clamp_input(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            u.iter()
                .zip(self.input_lower.iter().zip(self.input_upper.iter()))
                .map(|(v, (lo, hi))| v.clamp(*lo, *hi)),
        )
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseDraw {
        NoiseDraw {
            process_noise: self.sample_process_noise(rng),
            measurement_noise: self.sample_measurement_noise(rng),
        }
    }

    fn sample_process_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.state_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.process_sqrt * z
    }

    fn sample_measurement_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.output_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.measurement_sqrt * z
    }

    /// Advances the true state one step: `f(x, u) + w`.
    pub fn step_truth<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let next = self.dynamics(x, u)?;
        Ok(next + self.sample_process_noise(rng))
    }

    /// Noisy measurement of the true state: `h(x) + v`.
    pub fn observe<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let y = self.observation(x)?;
        Ok(y + self.sample_measurement_noise(rng))
    }
}

/// Scalar nonlinearity applied to one linear combination of the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputNonlinearity {
    Linear,
    Cubic,
    Elu,
    EluCubic,
}

impl OutputNonlinearity {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            OutputNonlinearity::Linear => z,
            OutputNonlinearity::Cubic => z * z * z,
            OutputNonlinearity::Elu => elu(z),
            OutputNonlinearity::EluCubic => elu(z * z * z),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            OutputNonlinearity::Linear => 1.0,
            OutputNonlinearity::Cubic => 3.0 * z * z,
            OutputNonlinearity::Elu => elu_prime(z),
            OutputNonlinearity::EluCubic => 3.0 * z * z * elu_prime(z * z * z),
        }
    }
}

/// Linear dynamics `x' = A x + B u` with outputs `y_i = s_i φ_i(c_iᵀ x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearPlantSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// One row per output.
    pub c: Vec<Vec<f64>>,
    pub output_scale: Vec<f64>,
    pub nonlinearity: Vec<OutputNonlinearity>,
    pub process_cov: Vec<Vec<f64>>,
    pub measurement_cov: Vec<Vec<f64>>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
}

pub(crate) fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::Config(format!("{name} must be a non-empty matrix")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{name} has ragged rows")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl LinearPlantSpec {
    /// Parameters of the benchmark plant.
    pub fn example() -> Self {
        LinearPlantSpec {
            a: vec![
                vec![0.92, 0.2, -0.1],
                vec![0.0, 0.95, -0.3],
                vec![0.0, 0.0, 0.93],
            ],
            b: vec![vec![0.0], vec![0.0], vec![1.0]],
            c: vec![vec![1.0, 0.0, 0.0]],
            output_scale: vec![1.0 / 27.0],
            nonlinearity: vec![OutputNonlinearity::EluCubic],
            process_cov: vec![
                vec![0.5, 0.0, 0.0],
                vec![0.0, 0.5, 0.0],
                vec![0.0, 0.0, 0.5],
            ],
            measurement_cov: vec![vec![0.2]],
            input_lower: vec![-5.0],
            input_upper: vec![5.0],
        }
    }

    pub fn state_matrix(&self) -> Result<DMatrix<f64>> {
        matrix_from_rows("a", &self.a)
    }

    pub fn input_matrix(&self) -> Result<DMatrix<f64>> {
        matrix_from_rows("b", &self.b)
    }

    pub fn build(&self) -> Result<PlantModel> {
        let a = self.state_matrix()?;
        let b = self.input_matrix()?;
        let c = matrix_from_rows("c", &self.c)?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Config("a must be square".into()));
        }
        if b.nrows() != n {
            return Err(Error::Config("b must have as many rows as a".into()));
        }
        if c.ncols() != n {
            return Err(Error::Config("c must have as many columns as a".into()));
        }
        let p = c.nrows();
        if self.output_scale.len() != p || self.nonlinearity.len() != p {
            return Err(Error::Config(
                "output_scale and nonlinearity need one entry per row of c".into(),
            ));
        }
        let scale = DVector::from_vec(self.output_scale.clone());
        let phi = self.nonlinearity.clone();

        let (a1, b1) = (a.clone(), b.clone());
        let dynamics: DynamicsFn = Arc::new(move |x, u| &a1 * x + &b1 * u);
        let a2 = a.clone();
        let dynamics_jacobian: DynamicsJacobianFn = Arc::new(move |_, _| a2.clone());

        let (c1, s1, phi1) = (c.clone(), scale.clone(), phi.clone());
        let observation: ObservationFn = Arc::new(move |x| {
            let z = &c1 * x;
            DVector::from_fn(z.len(), |i, _| s1[i] * phi1[i].eval(z[i]))
        });
        let observation_jacobian: ObservationJacobianFn = Arc::new(move |x| {
            let z = &c * x;
            let mut h = c.clone();
            for i in 0..h.nrows() {
                let g = scale[i] * phi[i].derivative(z[i]);
                h.row_mut(i).scale_mut(g);
            }
            h
        });

        PlantBuilder {
            state_dim: n,
            input_dim: b.ncols(),
            output_dim: p,
            dynamics,
            observation,
            dynamics_jacobian,
            observation_jacobian,
            process_cov: matrix_from_rows("process_cov", &self.process_cov)?,
            measurement_cov: matrix_from_rows("measurement_cov", &self.measurement_cov)?,
            input_lower: DVector::from_vec(self.input_lower.clone()),
            input_upper: DVector::from_vec(self.input_upper.clone()),
        }
        .build()
    }
}

/// Three-state plant whose scalar output `(1/27) ELU(x₁³)` carries no
/// information about the state when `x₁ ≤ 0`.
pub fn example_plant() -> PlantModel {
    LinearPlantSpec::example()
        .build()
        .expect("benchmark plant parameters are valid")
}

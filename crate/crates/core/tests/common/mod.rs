//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use dualrl::model::{LinearPlantSpec, OutputNonlinearity, PlantModel};
use dualrl::neural::{Activation, Mlp};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: Rng>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn random_spd<R: Rng>(n: usize, floor: f64, rng: &mut R) -> DMatrix<f64> {
    let l = gaussian_matrix(n, n, rng);
    &l * l.transpose() * (1.0 / n as f64) + DMatrix::identity(n, n) * floor
}

pub fn random_psd<R: Rng>(n: usize, rank: usize, rng: &mut R) -> DMatrix<f64> {
    let l = gaussian_matrix(n, rank, rng);
    &l * l.transpose()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Largest singular value, an upper bound on the spectral radius.
fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().svd(false, false).singular_values.max()
}

pub struct LinearGaussianPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub model: PlantModel,
}

/// Random stable plant with linear outputs; `A` is scaled to spectral norm 0.9.
pub fn random_linear_plant<R: Rng>(n: usize, m: usize, p: usize, rng: &mut R) -> LinearGaussianPlant {
    let a0 = gaussian_matrix(n, n, rng);
    let a = &a0 * (0.9 / spectral_norm(&a0));
    let b = gaussian_matrix(n, m, rng);
    let c = gaussian_matrix(p, n, rng);
    let w = random_spd(n, 0.1, rng);
    let v = random_spd(p, 0.1, rng);
    let spec = LinearPlantSpec {
        a: rows(&a),
        b: rows(&b),
        c: rows(&c),
        output_scale: vec![1.0; p],
        nonlinearity: vec![OutputNonlinearity::Linear; p],
        process_cov: rows(&w),
        measurement_cov: rows(&v),
        input_lower: vec![-10.0; m],
        input_upper: vec![10.0; m],
    };
    let model = spec.build().expect("random plant is valid");
    LinearGaussianPlant { a, b, c, w, v, model }
}

/// Textbook Kalman filter step with an explicit innovation inverse.
pub fn kalman_step(
    plant: &LinearGaussianPlant,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let m_pred = &plant.a * mean + &plant.b * u;
    let p_pred = &plant.a * cov * plant.a.transpose() + &plant.w;
    let s = &plant.c * &p_pred * plant.c.transpose() + &plant.v;
    let gain = &p_pred * plant.c.transpose() * s.try_inverse().expect("innovation covariance");
    let m_new = &m_pred + &gain * (y - &plant.c * &m_pred);
    let n = mean.len();
    let p_new = (DMatrix::identity(n, n) - &gain * &plant.c) * p_pred;
    (m_new, p_new)
}

/// Entry-wise closeness: relative when the reference is large, absolute otherwise.
pub fn close(reference: f64, value: f64, rel: f64, abs: f64, small: f64) -> bool {
    let err = (reference - value).abs();
    if reference.abs() < small {
        err < abs
    } else {
        err / reference.abs().max(value.abs()) < rel
    }
}

pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn random_activation<R: Rng>(rng: &mut R) -> Activation {
    if rng.random_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Tanh
    }
}

/// Network with random dims in `2..=16`, random hidden activation and
/// nonzero biases.
pub fn random_net<R: Rng>(
    input: usize,
    output: usize,
    output_activation: Activation,
    output_scale: f64,
    rng: &mut R,
) -> Mlp {
    let depth = rng.random_range(1..=2);
    let mut dims = vec![input];
    for _ in 0..depth {
        dims.push(rng.random_range(2..=16));
    }
    dims.push(output);
    let mut net = Mlp::init(&dims, random_activation(rng), output_activation, output_scale, rng).unwrap();
    for l in net.layers_mut() {
        for b in l.biases.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net
}

pub fn random_vec<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Flattened parameter access in layer order, weights before biases.
pub fn param_mut(net: &mut Mlp, mut idx: usize) -> &mut f64 {
    for l in net.layers_mut() {
        if idx < l.weights.len() {
            return &mut l.weights[idx];
        }
        idx -= l.weights.len();
        if idx < l.biases.len() {
            return &mut l.biases[idx];
        }
        idx -= l.biases.len();
    }
    panic!("parameter index out of range")
}

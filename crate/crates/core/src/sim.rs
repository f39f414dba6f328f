//! Seeded random streams and the closed-loop step shared by training and
//! evaluation rollouts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::filter::{propagate, InformationState};
use crate::model::PlantModel;

pub type SimRng = ChaCha8Rng;

const STREAM_NETWORK_INIT: u64 = 0;
const STREAM_REPLAY: u64 = 1;
const STREAM_EPISODE_BASE: u64 = 16;

fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generator for network weight initialization.
pub fn init_rng(seed: u64) -> SimRng {
    stream(seed, STREAM_NETWORK_INIT)
}

/// Generator for replay minibatch sampling.
pub fn replay_rng(seed: u64) -> SimRng {
    stream(seed, STREAM_REPLAY)
}

/// Initial condition, process noise and measurement noise of one episode.
/// Identical for every policy run under the same `(seed, episode)`.
pub fn episode_rng(seed: u64, episode: usize) -> SimRng {
    stream(seed, STREAM_EPISODE_BASE + 2 * episode as u64)
}

/// Exploration noise of one training episode, separate from the plant noise.
pub fn exploration_rng(seed: u64, episode: usize) -> SimRng {
    stream(seed, STREAM_EPISODE_BASE + 2 * episode as u64 + 1)
}

/// `x̂₀ ~ U([-r, r]ⁿ)`, `Σ₀ = c·I`, `x₀ ~ N(x̂₀, Σ₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConditionScheme {
    pub mean_range: f64,
    pub cov_scale: f64,
}

impl Default for InitialConditionScheme {
    fn default() -> Self {
        InitialConditionScheme {
            mean_range: 3.0,
            cov_scale: 1.0,
        }
    }
}

impl InitialConditionScheme {
    pub fn initial_cov(&self, n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n) * self.cov_scale
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        model: &PlantModel,
        rng: &mut R,
    ) -> (InformationState, DVector<f64>) {
        let n = model.state_dim();
        let r = self.mean_range;
        let mean = DVector::from_fn(n, |_, _| {
            if r > 0.0 {
                rng.random_range(-r..r)
            } else {
                0.0
            }
        });
        let sd = self.cov_scale.sqrt();
        let x0 = DVector::from_fn(n, |i, _| mean[i] + sd * rng.sample::<f64, _>(StandardNormal));
        let cov = self.initial_cov(n);
        (InformationState { mean, cov }, x0)
    }
}

/// Outcome of applying one control to plant and filter.
pub struct StepOutcome {
    pub next_state: DVector<f64>,
    pub output: DVector<f64>,
    pub next_info: InformationState,
}

/// Apply `u`, sample the next true state and measurement, run the filter.
pub fn closed_loop_step<R: Rng + ?Sized>(
    model: &PlantModel,
    x: &DVector<f64>,
    info: &InformationState,
    u: &DVector<f64>,
    rng: &mut R,
) -> Result<StepOutcome> {
    closed_loop_step_mismatched(model, model, x, info, u, rng)
}

/// As [`closed_loop_step`], but the truth is simulated with `truth` while
/// the filter assumes `estimator`.
pub fn closed_loop_step_mismatched<R: Rng + ?Sized>(
    truth: &PlantModel,
    estimator: &PlantModel,
    x: &DVector<f64>,
    info: &InformationState,
    u: &DVector<f64>,
    rng: &mut R,
) -> Result<StepOutcome> {
    let next_state = truth.step_truth(x, u, rng)?;
    let output = truth.observe(&next_state, rng)?;
    let next_info = propagate(estimator, info, u, &output)?;
    Ok(StepOutcome {
        next_state,
        output,
        next_info,
    })
}

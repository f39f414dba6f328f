//! Closed-loop rollouts, paired policy comparisons and multi-trial training.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{act, train, DdpgAgent, DdpgConfig};
use crate::baseline::{lqg_policy, RiccatiSolution};
use crate::error::{check_dim, Error, Result};
use crate::filter::{propagate, InformationState};
use crate::linalg::{spd_solve, symmetrize};
use crate::model::PlantModel;
use crate::neural::Mlp;
use crate::objective::{discounted_return, reward, CostWeights};
use crate::sim::{closed_loop_step_mismatched, episode_rng, InitialConditionScheme};

/// A feedback law on information states.
pub trait Policy: Sync {
    fn label(&self) -> &str;
    fn control(&self, state: &InformationState) -> Result<DVector<f64>>;
}

/// Certainty-equivalence controller `u = clamp(K x̂)`.
pub struct LqgController {
    pub solution: RiccatiSolution,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl LqgController {
    pub fn new(solution: RiccatiSolution, model: &PlantModel) -> Self {
        LqgController {
            solution,
            lower: model.input_lower().clone(),
            upper: model.input_upper().clone(),
        }
    }
}

impl Policy for LqgController {
    fn label(&self) -> &str {
        "lqg"
    }

    fn control(&self, state: &InformationState) -> Result<DVector<f64>> {
        Ok(lqg_policy(&self.solution, state, &self.lower, &self.upper))
    }
}

/// Deterministic evaluation of a trained actor.
pub struct ActorPolicy {
    pub actor: Mlp,
    pub label: String,
}

impl ActorPolicy {
    pub fn new(actor: Mlp) -> Self {
        ActorPolicy {
            actor,
            label: "rl".into(),
        }
    }
}

impl Policy for ActorPolicy {
    fn label(&self) -> &str {
        &self.label
    }

    fn control(&self, state: &InformationState) -> Result<DVector<f64>> {
        act(&self.actor, state)
    }
}

/// Adapter for closures.
pub struct FnPolicy<F> {
    pub label: String,
    pub f: F,
}

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&InformationState) -> DVector<f64> + Sync,
{
    fn label(&self) -> &str {
        &self.label
    }

    fn control(&self, state: &InformationState) -> Result<DVector<f64>> {
        Ok((self.f)(state))
    }
}

/// Row `k` of a trace: the state and estimate at `k`, the control applied at
/// `k`, the measurement it produced at `k + 1`, and the stage reward.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub true_state: DVector<f64>,
    pub estimate: DVector<f64>,
    pub cov_trace: f64,
    pub control: DVector<f64>,
    pub output: DVector<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub episode: usize,
    pub policy: String,
    pub initial: InformationState,
    pub steps: Vec<TraceStep>,
    /// Set when the filter failed and the trace was cut short.
    pub failure: Option<String>,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn peak_cov_trace(&self) -> f64 {
        self.steps.iter().map(|s| s.cov_trace).fold(0.0, f64::max)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Simulates plant and filter in lockstep under `policy`.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    model: &PlantModel,
    weights: &CostWeights,
    policy: &dyn Policy,
    initial: &InformationState,
    x0: &DVector<f64>,
    steps: usize,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    rollout_mismatched(model, model, weights, policy, initial, x0, steps, rng)
}

/// Rollout whose truth follows `truth` while the filter assumes `estimator`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_mismatched<R: Rng + ?Sized>(
    truth: &PlantModel,
    estimator: &PlantModel,
    weights: &CostWeights,
    policy: &dyn Policy,
    initial: &InformationState,
    x0: &DVector<f64>,
    steps: usize,
    rng: &mut R,
) -> Result<EpisodeTrace> {
    check_dim("initial estimate", estimator.state_dim(), initial.dim())?;
    check_dim("initial state", truth.state_dim(), x0.len())?;
    let mut trace = EpisodeTrace {
        seed: 0,
        episode: 0,
        policy: policy.label().to_string(),
        initial: initial.clone(),
        steps: Vec::with_capacity(steps),
        failure: None,
    };
    let mut info = initial.clone();
    let mut x = x0.clone();
    for k in 0..steps {
        let u = estimator.clamp_input(&policy.control(&info)?);
        let r = reward(weights, &info, &u);
        match closed_loop_step_mismatched(truth, estimator, &x, &info, &u, rng) {
            Ok(step) => {
                trace.steps.push(TraceStep {
                    true_state: x,
                    estimate: info.mean.clone(),
                    cov_trace: info.cov_trace(),
                    control: u,
                    output: step.output,
                    reward: r,
                });
                info = step.next_info;
                x = step.next_state;
            }
            Err(e) => {
                trace.failure = Some(e.at_step(k).to_string());
                break;
            }
        }
    }
    Ok(trace)
}

/// Episode `episode` of the common-random-numbers protocol: the initial
/// condition and every noise draw depend only on `(seed, episode)`.
#[allow(clippy::too_many_arguments)]
pub fn seeded_rollout(
    model: &PlantModel,
    weights: &CostWeights,
    policy: &dyn Policy,
    scheme: &InitialConditionScheme,
    steps: usize,
    seed: u64,
    episode: usize,
) -> Result<EpisodeTrace> {
    let mut rng = episode_rng(seed, episode);
    let (info, x0) = scheme.sample(model, &mut rng);
    let mut trace = rollout(model, weights, policy, &info, &x0, steps, &mut rng)?;
    trace.seed = seed;
    trace.episode = episode;
    Ok(trace)
}

/// Re-runs the filter on the recorded controls and measurements and returns
/// the largest deviation from the recorded estimates and covariance traces.
pub fn replay_error(model: &PlantModel, trace: &EpisodeTrace) -> Result<f64> {
    let mut info = trace.initial.clone();
    let mut worst: f64 = 0.0;
    for (k, row) in trace.steps.iter().enumerate() {
        worst = worst
            .max((&info.mean - &row.estimate).amax())
            .max((info.cov_trace() - row.cov_trace).abs());
        info = propagate(model, &info, &row.control, &row.output).map_err(|e| e.at_step(k))?;
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceStat {
    pub diverged: bool,
    pub first_crossing: Option<usize>,
}

/// Flags the first step whose covariance trace strictly exceeds `threshold`.
pub fn divergence_stat(trace: &EpisodeTrace, threshold: f64) -> DivergenceStat {
    let first_crossing = trace.steps.iter().position(|s| s.cov_trace > threshold);
    DivergenceStat {
        diverged: first_crossing.is_some(),
        first_crossing,
    }
}

/// Stationary filtered covariance of the EKF with its linearization frozen
/// at `(x, u)`, found by iterating the covariance recursion.
pub fn stationary_covariance(
    model: &PlantModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let f = model.dynamics_jacobian(x, u)?;
    let h = model.observation_jacobian(x)?;
    let n = model.state_dim();
    let mut cov = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        let pred = symmetrize(&(&f * &cov * f.transpose() + model.process_cov()));
        let s = symmetrize(&(&h * &pred * h.transpose() + model.measurement_cov()));
        let gain = spd_solve(&s, &(&h * &pred))?.transpose();
        let next = symmetrize(&(&pred - &gain * &h * &pred));
        let gap = (&next - &cov).amax();
        cov = next;
        if !gap.is_finite() {
            return Err(Error::numerical("covariance recursion diverged"));
        }
        if gap < tol {
            return Ok(cov);
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Five times the stationary covariance trace of the filter linearized at
/// an observable operating point.
pub fn default_divergence_threshold(model: &PlantModel, observable_point: &DVector<f64>) -> Result<f64> {
    let u = DVector::zeros(model.input_dim());
    let cov = stationary_covariance(model, observable_point, &u, 1e-12, 100_000)?;
    Ok(5.0 * cov.trace())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub peak_cov_trace: f64,
    pub diverged: bool,
    pub first_crossing: Option<usize>,
    pub discounted_return: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub label: String,
    pub median_peak_cov_trace: f64,
    pub max_peak_cov_trace: f64,
    pub divergent_fraction: f64,
    pub mean_discounted_return: f64,
    pub episodes: Vec<EpisodeSummary>,
}

impl PolicySummary {
    pub fn from_episodes(label: &str, episodes: Vec<EpisodeSummary>) -> Self {
        let peaks: Vec<f64> = episodes.iter().map(|e| e.peak_cov_trace).collect();
        let n = episodes.len().max(1) as f64;
        PolicySummary {
            label: label.to_string(),
            median_peak_cov_trace: median(&peaks),
            max_peak_cov_trace: peaks.iter().copied().fold(f64::NAN, f64::max),
            divergent_fraction: episodes.iter().filter(|e| e.diverged).count() as f64 / n,
            mean_discounted_return: episodes.iter().map(|e| e.discounted_return).sum::<f64>() / n,
            episodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub n_episodes: usize,
    pub steps: usize,
    pub divergence_threshold: f64,
    pub policies: Vec<PolicySummary>,
}

impl ComparisonReport {
    pub fn policy(&self, label: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.label == label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub n_episodes: usize,
    pub steps: usize,
    pub seed: u64,
    pub divergence_threshold: f64,
    pub initial_condition: InitialConditionScheme,
}

pub struct Comparison {
    pub report: ComparisonReport,
    /// `traces[p][e]`: policy `p`, episode `e`.
    pub traces: Vec<Vec<EpisodeTrace>>,
}

pub fn summarize(trace: &EpisodeTrace, weights: &CostWeights, threshold: f64) -> EpisodeSummary {
    let div = divergence_stat(trace, threshold);
    EpisodeSummary {
        episode: trace.episode,
        peak_cov_trace: trace.peak_cov_trace(),
        diverged: div.diverged,
        first_crossing: div.first_crossing,
        discounted_return: discounted_return(weights, &trace.rewards()),
        failed: trace.failure.is_some(),
    }
}

/// Paired rollouts of every policy on identical initial conditions and
/// noise realizations.
pub fn compare(
    model: &PlantModel,
    weights: &CostWeights,
    policies: &[&dyn Policy],
    opts: &CompareOptions,
) -> Result<Comparison> {
    let mut traces = Vec::with_capacity(policies.len());
    let mut summaries = Vec::with_capacity(policies.len());
    for policy in policies {
        let runs: Vec<EpisodeTrace> = (0..opts.n_episodes)
            .into_par_iter()
            .map(|e| {
                seeded_rollout(
                    model,
                    weights,
                    *policy,
                    &opts.initial_condition,
                    opts.steps,
                    opts.seed,
                    e,
                )
            })
            .collect::<Result<_>>()?;
        let eps = runs
            .iter()
            .map(|t| summarize(t, weights, opts.divergence_threshold))
            .collect();
        summaries.push(PolicySummary::from_episodes(policy.label(), eps));
        traces.push(runs);
    }
    Ok(Comparison {
        report: ComparisonReport {
            seed: opts.seed,
            n_episodes: opts.n_episodes,
            steps: opts.steps,
            divergence_threshold: opts.divergence_threshold,
            policies: summaries,
        },
        traces,
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// Divides every curve by the largest absolute value over all curves.
pub fn normalize_returns(curves: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let scale = curves
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return curves.to_vec();
    }
    curves
        .iter()
        .map(|c| c.iter().map(|v| v / scale).collect())
        .collect()
}

/// Per-episode mean and `±2σ` band across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnBands {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn return_bands(curves: &[Vec<f64>]) -> ReturnBands {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let mut bands = ReturnBands {
        mean: Vec::with_capacity(len),
        lower: Vec::with_capacity(len),
        upper: Vec::with_capacity(len),
    };
    let n = curves.len() as f64;
    for e in 0..len {
        let mean = curves.iter().map(|c| c[e]).sum::<f64>() / n;
        let var = curves.iter().map(|c| (c[e] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        bands.mean.push(mean);
        bands.lower.push(mean - 2.0 * sd);
        bands.upper.push(mean + 2.0 * sd);
    }
    bands
}

/// Number of trailing episodes averaged when ranking trials.
pub const TERMINAL_WINDOW: usize = 10;

/// Mean return over the last [`TERMINAL_WINDOW`] episodes.
pub fn terminal_return(returns: &[f64]) -> f64 {
    if returns.is_empty() {
        return f64::NEG_INFINITY;
    }
    let tail = &returns[returns.len().saturating_sub(TERMINAL_WINDOW)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

pub struct TrialResult {
    pub seed: u64,
    pub returns: Vec<f64>,
    pub failed_episodes: usize,
    pub agent: DdpgAgent,
}

pub struct MultiTrialResult {
    pub trials: Vec<TrialResult>,
    pub failures: Vec<(u64, String)>,
    pub normalized: Vec<Vec<f64>>,
    pub bands: ReturnBands,
    /// Index into `trials` of the best terminal return.
    pub best: Option<usize>,
}

impl MultiTrialResult {
    pub fn best_trial(&self) -> Option<&TrialResult> {
        self.best.map(|i| &self.trials[i])
    }
}

/// Independent training runs with seeds `base_seed..base_seed + n_trials`.
pub fn multi_trial_train(
    model: &PlantModel,
    weights: &CostWeights,
    cfg: &DdpgConfig,
    n_trials: usize,
    base_seed: u64,
) -> Result<MultiTrialResult> {
    if n_trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    cfg.validate()?;
    let outcomes: Vec<(u64, Result<_>)> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i;
            (seed, train(model, weights, cfg, seed))
        })
        .collect();

    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok((agent, log)) => trials.push(TrialResult {
                seed,
                failed_episodes: log.failures.len(),
                returns: log.returns,
                agent,
            }),
            Err(e) => {
                warn!("trial with seed {seed} failed and is excluded: {e}");
                failures.push((seed, e.to_string()));
            }
        }
    }
    let curves: Vec<Vec<f64>> = trials.iter().map(|t| t.returns.clone()).collect();
    let normalized = normalize_returns(&curves);
    let bands = return_bands(&normalized);
    // first trial wins ties
    let mut best: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => terminal_return(&t.returns) > terminal_return(&trials[b].returns),
        };
        if better {
            best = Some(i);
        }
    }
    Ok(MultiTrialResult {
        trials,
        failures,
        normalized,
        bands,
        best,
    })
}

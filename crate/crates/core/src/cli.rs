//! Command-line front end: `train`, `evaluate`, `compare` and `riccati`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use crate::baseline::{solve_discounted_riccati, RiccatiProblem, RiccatiSolution};
use crate::config::{Resolved, RunConfig};
use crate::error::{Error, Result};
use crate::export::{fmt_f64, write_bands, write_returns, write_summaries, write_trace};
use crate::filter::feature_len;
use crate::harness::{
    compare, default_divergence_threshold, multi_trial_train, seeded_rollout, summarize,
    terminal_return, ActorPolicy, CompareOptions, ComparisonReport, EpisodeTrace, LqgController,
    Policy, PolicySummary,
};
use crate::neural::Mlp;

#[derive(Debug, Parser)]
#[command(name = "dualrl", version, about = "Dual control by reinforcement learning on EKF information states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration or a manifest from an earlier run.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Training episodes for `train`, evaluation episodes otherwise.
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train several seeds and keep the best actor and critic.
    Train(CommonArgs),
    /// Roll out a trained actor and export its traces.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Paired rollouts of the trained actor and the LQG controller.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Solve the Riccati equation for the configured plant and cost.
    Riccati(CommonArgs),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum EpisodeTarget {
    Training,
    Evaluation,
}

fn load_config(args: &CommonArgs, target: EpisodeTarget) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(e) = args.episodes {
        match target {
            EpisodeTarget::Training => cfg.ddpg.episodes = e,
            EpisodeTarget::Evaluation => cfg.evaluation.episodes = e,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn override_checkpoint(cfg: &mut RunConfig, checkpoint: &Option<PathBuf>) -> Result<()> {
    if let Some(p) = checkpoint {
        cfg.evaluation.checkpoint = Some(p.clone());
    }
    cfg.validate()
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&load_config(&a, EpisodeTarget::Training)?),
        Command::Evaluate { common, checkpoint } => {
            let mut cfg = load_config(&common, EpisodeTarget::Evaluation)?;
            override_checkpoint(&mut cfg, &checkpoint)?;
            cmd_evaluate(&cfg)
        }
        Command::Compare { common, checkpoint } => {
            let mut cfg = load_config(&common, EpisodeTarget::Evaluation)?;
            override_checkpoint(&mut cfg, &checkpoint)?;
            cmd_compare(&cfg)
        }
        Command::Riccati(a) => {
            let cfg = load_config(&a, EpisodeTarget::Evaluation)?;
            let report = cmd_riccati(&cfg)?;
            print!("{report}");
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_manifest(cfg: &RunConfig, command: &str, extra: toml::Table) -> Result<PathBuf> {
    let mut meta = toml::Table::new();
    meta.insert("command".into(), command.into());
    meta.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    meta.insert("config_sha256".into(), cfg.digest()?.into());
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0);
    meta.insert("created_unix".into(), created.into());
    meta.extend(extra);
    let mut doc = toml::Table::new();
    doc.insert("manifest".into(), meta.into());
    let config = toml::Value::try_from(cfg)
        .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    doc.insert("config".into(), config);
    let path = cfg.out_dir.join(format!("{command}_manifest.toml"));
    let text = toml::to_string(&doc).map_err(|e| Error::Config(format!("cannot write manifest: {e}")))?;
    fs::write(&path, text)?;
    Ok(path)
}

fn seed_value(s: u64) -> toml::Value {
    toml::Value::Integer(s as i64)
}

/// Runs the multi-trial sweep and writes return curves, the best networks
/// and a manifest into the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let Resolved { model, weights, .. } = cfg.resolve()?;
    let sweep = multi_trial_train(&model, &weights, &cfg.ddpg, cfg.trials, cfg.seed)?;
    let best = sweep
        .best_trial()
        .ok_or_else(|| Error::numerical("every training trial failed"))?;

    let out = &cfg.out_dir;
    fs::create_dir_all(out)?;
    for (t, norm) in sweep.trials.iter().zip(&sweep.normalized) {
        write_returns(create(&out.join(format!("returns_seed{}.csv", t.seed)))?, &t.returns, norm)?;
    }
    write_bands(create(&out.join("return_bands.csv"))?, &sweep.bands)?;
    best.agent.actor.save(out.join("best_actor.json"))?;
    best.agent.critic.save(out.join("best_critic.json"))?;

    let mut extra = toml::Table::new();
    extra.insert(
        "seeds".into(),
        toml::Value::Array((0..cfg.trials as u64).map(|i| seed_value(cfg.seed + i)).collect()),
    );
    extra.insert("best_seed".into(), seed_value(best.seed));
    extra.insert(
        "failed_seeds".into(),
        toml::Value::Array(sweep.failures.iter().map(|(s, _)| seed_value(*s)).collect()),
    );
    let manifest = write_manifest(cfg, "train", extra)?;

    for t in &sweep.trials {
        let terminal = match t.returns.is_empty() {
            true => "n/a".to_string(),
            false => format!("{:.4}", terminal_return(&t.returns)),
        };
        println!(
            "seed {:>4}  terminal return {terminal:>14}  aborted episodes {}",
            t.seed, t.failed_episodes
        );
    }
    for (seed, reason) in &sweep.failures {
        println!("seed {seed:>4}  failed: {reason}");
    }
    println!("best seed {}; wrote {}", best.seed, manifest.display());
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.evaluation
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("best_actor.json"))
}

fn load_actor(cfg: &RunConfig, r: &Resolved) -> Result<Mlp> {
    let path = checkpoint_path(cfg);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "actor checkpoint {} not found; run `train` first or pass --checkpoint",
            path.display()
        )));
    }
    let actor = Mlp::load(&path)?;
    let n = feature_len(r.model.state_dim());
    if actor.input_dim() != n || actor.output_dim() != r.model.input_dim() {
        return Err(Error::Checkpoint(format!(
            "{} maps {} features to {} controls; the plant needs {} to {}",
            path.display(),
            actor.input_dim(),
            actor.output_dim(),
            n,
            r.model.input_dim()
        )));
    }
    Ok(actor)
}

fn divergence_threshold(cfg: &RunConfig, r: &Resolved) -> Result<f64> {
    match cfg.evaluation.divergence_threshold {
        Some(t) => Ok(t),
        None => default_divergence_threshold(&r.model, &cfg.observable_point()),
    }
}

fn write_traces(dir: &Path, prefix: &str, traces: &[EpisodeTrace]) -> Result<()> {
    for t in traces {
        write_trace(create(&dir.join(format!("{prefix}trace_{:03}.csv", t.episode)))?, t)?;
    }
    Ok(())
}

fn print_summary(s: &PolicySummary) {
    println!(
        "{:<6} median peak tr(cov) {:>12.4}  max {:>12.4}  diverged {:>6.3}  mean return {:>16.4}",
        s.label, s.median_peak_cov_trace, s.max_peak_cov_trace, s.divergent_fraction, s.mean_discounted_return
    );
}

/// Deterministic rollouts of the configured actor.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let r = cfg.resolve()?;
    let policy = ActorPolicy::new(load_actor(cfg, &r)?);
    let threshold = divergence_threshold(cfg, &r)?;
    let ev = &cfg.evaluation;
    let traces: Vec<EpisodeTrace> = (0..ev.episodes)
        .into_par_iter()
        .map(|e| {
            seeded_rollout(
                &r.model,
                &r.weights,
                &policy,
                &cfg.ddpg.initial_condition,
                ev.steps,
                ev.seed,
                e,
            )
        })
        .collect::<Result<_>>()?;
    let episodes = traces.iter().map(|t| summarize(t, &r.weights, threshold)).collect();
    let summary = PolicySummary::from_episodes(policy.label(), episodes);

    let dir = cfg.out_dir.join("evaluate");
    fs::create_dir_all(&dir)?;
    write_traces(&dir, "", &traces)?;
    write_summaries(create(&dir.join("episodes.csv"))?, &summary.episodes)?;
    write_manifest(cfg, "evaluate", threshold_table(threshold))?;

    println!("divergence threshold {threshold:.6}");
    print_summary(&summary);
    Ok(())
}

fn threshold_table(threshold: f64) -> toml::Table {
    let mut t = toml::Table::new();
    t.insert("divergence_threshold".into(), threshold.into());
    t
}

pub fn lqg_solution(cfg: &RunConfig, r: &Resolved) -> Result<RiccatiSolution> {
    let a = r.spec.state_matrix()?;
    let b = r.spec.input_matrix()?;
    let problem = RiccatiProblem {
        a: &a,
        b: &b,
        q: &r.weights.q,
        r: &r.weights.r,
        gamma: cfg.riccati_discount(),
    };
    solve_discounted_riccati(&problem, cfg.riccati.tolerance, cfg.riccati.max_iterations)
}

/// Paired LQG and RL rollouts with per-episode exports.
pub fn cmd_compare(cfg: &RunConfig) -> Result<()> {
    let r = cfg.resolve()?;
    let rl = ActorPolicy::new(load_actor(cfg, &r)?);
    let lqg = LqgController::new(lqg_solution(cfg, &r)?, &r.model);
    let opts = CompareOptions {
        n_episodes: cfg.evaluation.episodes,
        steps: cfg.evaluation.steps,
        seed: cfg.evaluation.seed,
        divergence_threshold: divergence_threshold(cfg, &r)?,
        initial_condition: cfg.ddpg.initial_condition,
    };
    let policies: [&dyn Policy; 2] = [&lqg, &rl];
    let result = compare(&r.model, &r.weights, &policies, &opts)?;
    let report: &ComparisonReport = &result.report;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))?;

    let dir = cfg.out_dir.join("compare");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("report.json"), json + "\n")?;
    for (summary, traces) in report.policies.iter().zip(&result.traces) {
        write_summaries(create(&dir.join(format!("{}_episodes.csv", summary.label)))?, &summary.episodes)?;
        write_traces(&dir, &format!("{}_", summary.label), traces)?;
    }
    write_manifest(cfg, "compare", threshold_table(opts.divergence_threshold))?;

    println!("divergence threshold {:.6}", opts.divergence_threshold);
    for s in &report.policies {
        print_summary(s);
    }
    Ok(())
}

/// Solves the Riccati equation and formats `P`, `K`, the residual and the
/// closed-loop eigenvalue moduli.
pub fn cmd_riccati(cfg: &RunConfig) -> Result<String> {
    let r = cfg.resolve()?;
    let sol = lqg_solution(cfg, &r)?;
    let gamma = cfg.riccati_discount();
    let moduli = sol.closed_loop_moduli(&r.spec.state_matrix()?, &r.spec.input_matrix()?, gamma);
    info!("Riccati iteration converged in {} steps", sol.iterations);
    let row = |m: &nalgebra::DMatrix<f64>, i: usize| {
        (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect::<Vec<_>>().join("  ")
    };
    let mut s = String::new();
    s += &format!("discount {gamma}\niterations {}\nresidual {}\n", sol.iterations, fmt_f64(sol.residual));
    s += "P\n";
    for i in 0..sol.p.nrows() {
        s += &format!("  {}\n", row(&sol.p, i));
    }
    s += "K\n";
    for i in 0..sol.k.nrows() {
        s += &format!("  {}\n", row(&sol.k, i));
    }
    s += "closed-loop eigenvalue moduli\n";
    s += &format!(
        "  {}\n",
        moduli.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join("  ")
    );
    Ok(s)
}

//! Several independent training seeds, normalized curves and `±2σ` bands.
//!
//! `cargo run --release --example multi_trial -- [trials] [episodes]`

use dualrl::agent::DdpgConfig;
use dualrl::harness::{multi_trial_train, terminal_return};
use dualrl::model::example_plant;
use dualrl::objective::CostWeights;

fn main() -> dualrl::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let trials = args.next().and_then(|v| v.parse().ok()).unwrap_or(3);
    let episodes = args.next().and_then(|v| v.parse().ok()).unwrap_or(100);
    let cfg = DdpgConfig {
        episodes,
        ..DdpgConfig::default()
    };
    let sweep = multi_trial_train(&example_plant(), &CostWeights::identity(3, 1), &cfg, trials, 0)?;
    for t in &sweep.trials {
        println!("seed {}  terminal return {:.2}", t.seed, terminal_return(&t.returns));
    }
    if let Some(best) = sweep.best_trial() {
        println!("best seed {}", best.seed);
    }
    let b = &sweep.bands;
    for e in (0..b.mean.len()).step_by((b.mean.len() / 10).max(1)) {
        println!("episode {e:>4}  normalized mean {:>8.4}  band [{:>8.4}, {:>8.4}]", b.mean[e], b.lower[e], b.upper[e]);
    }
    Ok(())
}

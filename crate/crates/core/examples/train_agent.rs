//! Trains one DDPG agent on information states and saves its networks.
//!
//! `cargo run --release --example train_agent -- [episodes] [seed] [out_dir]`

use std::path::PathBuf;

use dualrl::agent::{train, DdpgConfig};
use dualrl::model::example_plant;
use dualrl::objective::CostWeights;

fn main() -> dualrl::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let episodes = args.next().and_then(|v| v.parse().ok()).unwrap_or(100);
    let seed = args.next().and_then(|v| v.parse().ok()).unwrap_or(0);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/example".into()));

    let cfg = DdpgConfig {
        episodes,
        ..DdpgConfig::default()
    };
    let (agent, log) = train(&example_plant(), &CostWeights::identity(3, 1), &cfg, seed)?;
    for (i, chunk) in log.returns.chunks(10).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("episodes {:>4}..{:<4} mean return {mean:>14.2}", 10 * i, 10 * i + chunk.len());
    }
    if !log.failures.is_empty() {
        println!("{} episodes aborted by the filter", log.failures.len());
    }
    std::fs::create_dir_all(&out)?;
    agent.actor.save(out.join("actor.json"))?;
    agent.critic.save(out.join("critic.json"))?;
    println!("saved networks to {}", out.display());
    Ok(())
}

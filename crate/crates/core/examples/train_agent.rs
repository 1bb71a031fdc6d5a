//! Train a hedging agent on simulated GBM episodes with the desk preset, then
//! compare it with the delta hedge on 200 held-out episodes.
//!
//! cargo run --release --example train_agent -- [lambda] [ba_bp] [iterations] [seed]

use std::time::Instant;

use cdx_hedge::config::RunConfig;
use cdx_hedge::evaluation::{evaluate, Hedger};
use cdx_hedge::market_data::CostModel;
use cdx_hedge::trvo::{train, SimulatedHedging};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let lambda: f64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(4.0);
    let ba: f64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0.0);
    let iterations: Option<usize> = args.next().map(|a| a.parse()).transpose()?;
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(7);

    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.training.iterations = iterations;
    let hp = cfg.hyperparams(lambda);
    let (env_cfg, grid) = (cfg.env_config()?, cfg.grid()?);
    let make = |seed| SimulatedHedging::new(env_cfg.clone(), cfg.spread_model(), grid.clone(), CostModel::Constant(ba), seed);
    let env = make(seed)?;

    let start = Instant::now();
    let (policy, _) = train(&env, &hp, None, |p, row| {
        if row.iteration % 5 == 0 || row.iteration + 1 == hp.iterations {
            println!(
                "iter {:>4}  J {:>9.1}  nu2 {:>11.4e}  eta {:>9.1}  kl {:.4}  std {:.4}  {:>4.0}s",
                row.iteration,
                row.j,
                row.nu2,
                row.eta,
                row.mean_kl,
                p.std(),
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;

    let test = make(cfg.test_seed())?;
    let paths = (0..200).map(|i| test.priced_episode(i)).collect::<Result<Vec<_>, _>>()?;
    let r = evaluate(Hedger::Agent(&policy), Hedger::DeltaHedge, &paths)?;
    println!("held-out mean |a - N_h| {:.4}, mean |Δa| {:.5}", r.agent.mean_abs_gap, r.agent.mean_abs_change);
    println!(
        "mean p&l agent {:.0} EUR (vol {:.0}), delta hedge {:.0} EUR (vol {:.0})",
        r.agent.mean_pnl, r.agent.pl_vol, r.baseline.mean_pnl, r.baseline.pl_vol
    );
    Ok(())
}

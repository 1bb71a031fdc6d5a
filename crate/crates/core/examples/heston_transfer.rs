//! Train on GBM, test on Heston: an agent trained with λ = 10 at 1 bp bid/ask
//! against the delta hedge on stochastic-volatility paths it never saw.
//!
//! cargo run --release --example heston_transfer -- [iterations] [test_episodes]

use cdx_hedge::config::{Model, RunConfig};
use cdx_hedge::evaluation::{evaluate, Hedger};
use cdx_hedge::market_data::CostModel;
use cdx_hedge::trvo::{train, SimulatedHedging};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iterations: Option<usize> = args.next().map(|a| a.parse()).transpose()?;
    let episodes: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(2000);
    let mut cfg = RunConfig::default();
    cfg.training.iterations = iterations;
    let cost = CostModel::Constant(1.0);

    let gbm = SimulatedHedging::new(cfg.env_config()?, cfg.spread_model(), cfg.grid()?, cost.clone(), cfg.seed)?;
    let (policy, log) = train(&gbm, &cfg.hyperparams(10.0), None, |_, _| Ok(()))?;
    println!("trained on {} GBM episodes", log.last().unwrap().episodes_seen);

    cfg.simulation.model = Model::Heston;
    let heston = SimulatedHedging::new(cfg.env_config()?, cfg.spread_model(), cfg.grid()?, cost, cfg.test_seed())?;
    let paths = (0..episodes).map(|i| heston.priced_episode(i)).collect::<Result<Vec<_>, _>>()?;
    let r = evaluate(Hedger::Agent(&policy), Hedger::DeltaHedge, &paths)?;
    println!(
        "Heston, {} episodes: agent mean p&l {:.0} EUR (vol {:.0}), delta hedge {:.0} EUR (vol {:.0}), Δp&l {:.0} EUR",
        r.agent.episodes, r.agent.mean_pnl, r.agent.pl_vol, r.baseline.mean_pnl, r.baseline.pl_vol, r.delta_pl
    );
    Ok(())
}

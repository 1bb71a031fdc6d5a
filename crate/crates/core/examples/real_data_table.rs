//! Per-scenario table on market-data episodes: agents trained at 1 bp on GBM
//! run on the five 40-day episodes of the synthetic quote year, with the
//! observed bid/ask widths, next to the delta hedge.
//!
//! cargo run --release --example real_data_table -- [iterations]

use cdx_hedge::config::RunConfig;
use cdx_hedge::env::price_data_episode;
use cdx_hedge::evaluation::{scenario_table, write_scenario_table};
use cdx_hedge::market_data::{clean_all, fill_grid, slice_episodes, synthetic_quotes, CleaningMode, CostModel};
use cdx_hedge::trvo::{train, SimulatedHedging};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations: Option<usize> = std::env::args().nth(1).map(|a| a.parse()).transpose()?;
    let mut cfg = RunConfig::default();
    cfg.training.iterations = iterations;

    let (series, _) = clean_all(&synthetic_quotes(17, cfg.seed)?, CleaningMode::TwoSigma)?;
    let (filled, _) = fill_grid(&series, 17)?;
    let env_cfg = cfg.env_config()?;
    let scenarios = slice_episodes(&filled, 40, 17)?
        .iter()
        .map(|e| price_data_episode(&env_cfg, e))
        .collect::<Result<Vec<_>, _>>()?;

    let env = SimulatedHedging::new(env_cfg, cfg.spread_model(), cfg.grid()?, CostModel::Constant(1.0), cfg.seed)?;
    let mut agents = Vec::new();
    for lambda in [2.0, 10.0] {
        agents.push((lambda, train(&env, &cfg.hyperparams(lambda), None, |_, _| Ok(()))?.0));
    }
    let refs: Vec<_> = agents.iter().map(|(l, p)| (*l, p)).collect();
    let rows = scenario_table(&refs, &scenarios)?;
    write_scenario_table(&rows, std::io::stdout())?;
    Ok(())
}

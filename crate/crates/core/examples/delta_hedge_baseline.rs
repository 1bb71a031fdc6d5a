//! Delta hedge a short at-the-money payer over simulated GBM episodes at several
//! bid/ask widths and print the terminal p&l statistics.
//!
//! cargo run --release --example delta_hedge_baseline -- [episodes] [seed]

use std::sync::Arc;

use cdx_hedge::calendar::{build_episode_grid, Timestamp};
use cdx_hedge::env::{delta_hedge_policy, price_paths, run_policy, EnvConfig};
use cdx_hedge::market_data::CostModel;
use cdx_hedge::market_sim::{simulate_gbm, GbmParams};
use rayon::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(2000);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(1);

    let grid = Arc::new(build_episode_grid(Timestamp::ymd_hm(2021, 3, 22, 9, 30), 40, 17)?);
    let paths = simulate_gbm(&GbmParams::default(), &grid, seed, episodes)?;
    let cfg = EnvConfig::default();
    println!("{:>6} {:>14} {:>12} {:>14}", "ba_bp", "mean_pnl_eur", "std_err", "pnl_std_eur");
    for ba in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let priced = price_paths(&cfg, &paths, &CostModel::Constant(ba))?;
        let pnl: Vec<f64> = priced
            .par_iter()
            .map(|p| run_policy(p, delta_hedge_policy).map(|r| r.total_pnl()))
            .collect::<Result<_, _>>()?;
        let n = pnl.len() as f64;
        let mean = pnl.iter().sum::<f64>() / n;
        let std = (pnl.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        println!("{ba:>6.1} {mean:>14.0} {:>12.0} {std:>14.0}", std / n.sqrt());
        if ba == 0.0 {
            println!("premium {:.0} EUR", priced[0].premium());
        }
    }
    Ok(())
}

//! Simulate GBM and Heston spread paths on the 40-day, 17-steps-per-day grid and
//! compare their terminal distributions and realized volatilities.
//!
//! cargo run --release --example simulate_paths -- [paths] [seed]

use std::sync::Arc;

use cdx_hedge::calendar::{build_episode_grid, Timestamp};
use cdx_hedge::market_sim::{GbmParams, HestonParams, MarketPath, SpreadModel};

fn summary(name: &str, paths: &[MarketPath]) {
    let n = paths.len() as f64;
    let terminal: Vec<f64> = paths.iter().map(|p| *p.spreads.last().unwrap() * 1e4).collect();
    let mean = terminal.iter().sum::<f64>() / n;
    let sd = (terminal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (lo, hi) = terminal.iter().fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(*x), b.max(*x)));
    let years = 40.0 / 252.0;
    let realized = paths
        .iter()
        .map(|p| {
            let qv: f64 = p.spreads.windows(2).map(|w| (w[1] / w[0]).ln().powi(2)).sum();
            (qv / years).sqrt()
        })
        .sum::<f64>()
        / n;
    println!("{name:>7}: terminal spread mean {mean:.2} bp, std {sd:.2} bp, range [{lo:.1}, {hi:.1}] bp, mean realized vol {:.1}%", realized * 100.0);
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(2000);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(1);
    let grid = Arc::new(build_episode_grid(Timestamp::ymd_hm(2021, 3, 22, 9, 30), 40, 17)?);
    println!("grid: {} points from {} to {}", grid.len(), grid.first(), grid.last());
    summary("gbm", &SpreadModel::Gbm(GbmParams::default()).simulate(&grid, seed, n)?);
    summary("heston", &SpreadModel::Heston(HestonParams::default()).simulate(&grid, seed, n)?);
    Ok(())
}

//! Train agents over a small (λ, ba) grid and print the frontier against the
//! delta hedge: Δp&l and p&l volatility per agent, plus the dominance flags.
//!
//! cargo run --release --example frontier_sweep -- [iterations] [test_episodes]

use cdx_hedge::config::RunConfig;
use cdx_hedge::evaluation::{build_frontier, FrontierCell};
use cdx_hedge::market_data::CostModel;
use cdx_hedge::trvo::{train, SimulatedHedging};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(20);
    let episodes: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(500);
    let mut cfg = RunConfig::default();
    cfg.training.iterations = Some(iterations);
    let lambdas = [1.0, 4.0, 10.0];
    let levels = [0.5, 2.0];

    let mut trained = Vec::new();
    let mut test_sets = Vec::new();
    for ba in levels {
        let (env_cfg, grid) = (cfg.env_config()?, cfg.grid()?);
        let env = |seed| SimulatedHedging::new(env_cfg.clone(), cfg.spread_model(), grid.clone(), CostModel::Constant(ba), seed);
        for lambda in lambdas {
            let (policy, _) = train(&env(cfg.seed)?, &cfg.hyperparams(lambda), None, |_, _| Ok(()))?;
            println!("trained lambda {lambda} at ba {ba}");
            trained.push((lambda, ba, policy));
        }
        let test = env(cfg.test_seed())?;
        test_sets.push((ba, (0..episodes).map(|i| test.priced_episode(i)).collect::<Result<Vec<_>, _>>()?));
    }
    let cells: Vec<FrontierCell> = trained.iter().map(|(l, b, p)| FrontierCell { lambda: *l, ba_bp: *b, policy: p }).collect();
    let frontier = build_frontier(&cells, &test_sets)?;
    for b in &frontier.baselines {
        println!("delta hedge at ba {}: mean p&l {:.0} EUR, p&l vol {:.0} EUR", b.ba_bp, b.mean_pnl_eur, b.pl_vol_eur);
    }
    println!("{:>6} {:>5} {:>12} {:>11} {:>9} {:>9}", "lambda", "ba", "delta_pl", "pl_vol", "beats_pl", "beats_vol");
    for (p, d) in frontier.points.iter().zip(frontier.dominance()) {
        println!("{:>6} {:>5} {:>12.0} {:>11.0} {:>9} {:>9}", p.lambda, p.ba_bp, p.delta_pl_eur, p.pl_vol_eur, d.beats_pl, d.beats_vol);
    }
    for ba in levels {
        println!("spearman(lambda, path vol) at ba {ba}: {:?}", frontier.lambda_vol_spearman(ba));
    }
    Ok(())
}

//! Command-line driver: `simulate`, `clean`, `train`, `evaluate`, `frontier`.
//!
//! Every command writes under `--out`: `paths/`, `checkpoints/`, `reports/` and
//! `resolved-config.toml`. Exit codes: 0 success, 1 usage or config error,
//! 2 runtime failure.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Cleaning, Model, Preset, RunConfig};
use crate::env::{price_data_episode, PricedPath};
use crate::evaluation::{build_frontier, evaluate, scenario_table, write_scenario_table, FrontierCell, Hedger, Histogram};
use crate::market_data::{
    clean_all, fill_grid, load_clean_series, load_quotes, save_clean_series, save_quotes, slice_episodes, synthetic_quotes,
    CostModel,
};
use crate::market_sim::write_paths_csv;
use crate::trvo::{train, write_train_log, PolicyParams, SimulatedHedging};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Parser)]
#[command(name = "cdx-hedge", about = "Hedge CDS index options under transaction costs", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Gbm,
    Heston,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Desk,
    Full,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate spread paths to `paths/paths.csv`.
    Simulate {
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Clean dealer quotes into a mid/bid-ask series and slice it into episodes.
    Clean {
        /// Quote CSV `timestamp,dealer_id,bid_bp,ask_bp`.
        #[arg(long, required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        /// Generate the synthetic one-year quote sample instead of reading a file.
        #[arg(long)]
        synthetic: bool,
        /// Median of the unfiltered quotes instead of the two-sigma filter.
        #[arg(long)]
        median: bool,
    },
    /// Train one agent on simulated episodes.
    Train {
        #[arg(long)]
        lambda: Option<f64>,
        /// Bid/ask width in bp.
        #[arg(long)]
        ba: Option<f64>,
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
    },
    /// Compare policies with the delta hedge on simulated test paths or on a cleaned series.
    Evaluate {
        /// Policy checkpoint, optionally labelled `LAMBDA=PATH`; repeatable. None: delta hedge only.
        #[arg(long = "policy")]
        policies: Vec<String>,
        #[arg(long)]
        ba: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        /// Cleaned series CSV; evaluates on its episodes with the observed bid/ask.
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Train one agent per (λ, ba) cell and report the frontier against the delta hedge.
    Frontier {
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long = "ba", value_delimiter = ',')]
        ba_levels: Option<Vec<f64>>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl<E: Into<BoxError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into().to_string())
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn resolve(common: &Common, command: &Command) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let set_model = |cfg: &mut RunConfig, m: &Option<ModelArg>| {
        if let Some(m) = m {
            cfg.simulation.model = match m {
                ModelArg::Gbm => Model::Gbm,
                ModelArg::Heston => Model::Heston,
            };
        }
    };
    match command {
        Command::Simulate { model, episodes } => {
            set_model(&mut cfg, model);
            if let Some(n) = episodes {
                cfg.simulation.episodes = *n;
            }
        }
        Command::Clean { median, .. } => {
            if *median {
                cfg.data.cleaning = Cleaning::Median;
            }
        }
        Command::Train { lambda, ba, preset, iterations, model } => {
            set_model(&mut cfg, model);
            if let Some(l) = lambda {
                cfg.training.lambda = *l;
            }
            if let Some(b) = ba {
                cfg.costs.ba_bp = *b;
            }
            if let Some(p) = preset {
                cfg.training.preset = match p {
                    PresetArg::Desk => Preset::Desk,
                    PresetArg::Full => Preset::Full,
                };
            }
            if iterations.is_some() {
                cfg.training.iterations = *iterations;
            }
        }
        Command::Evaluate { ba, episodes, model, .. } => {
            set_model(&mut cfg, model);
            if let Some(b) = ba {
                cfg.costs.ba_bp = *b;
            }
            if let Some(n) = episodes {
                cfg.evaluation.episodes = *n;
            }
        }
        Command::Frontier { lambdas, ba_levels, iterations, episodes } => {
            if let Some(l) = lambdas {
                cfg.frontier.lambdas = l.clone();
            }
            if let Some(b) = ba_levels {
                cfg.frontier.ba_bp = b.clone();
            }
            if iterations.is_some() {
                cfg.training.iterations = *iterations;
            }
            if let Some(n) = episodes {
                cfg.evaluation.episodes = *n;
            }
        }
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

struct Layout {
    paths: PathBuf,
    checkpoints: PathBuf,
    reports: PathBuf,
}

fn prepare(out: &Path, cfg: &RunConfig) -> Result<Layout, Failure> {
    let layout = Layout { paths: out.join("paths"), checkpoints: out.join("checkpoints"), reports: out.join("reports") };
    for d in [&layout.paths, &layout.checkpoints, &layout.reports] {
        fs::create_dir_all(d).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", d.display())))?;
    }
    fs::write(out.join("resolved-config.toml"), cfg.to_toml())?;
    Ok(layout)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve(&cli.common, &cli.command)?;
    if cli.common.threads > 0 {
        // A second call in the same process keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.common.threads).build_global();
    }
    let layout = prepare(&cli.common.out, &cfg)?;
    match &cli.command {
        Command::Simulate { .. } => cmd_simulate(&cfg, &layout),
        Command::Clean { input, synthetic, .. } => cmd_clean(&cfg, &layout, input.as_deref(), *synthetic),
        Command::Train { .. } => cmd_train(&cfg, &layout).map(|_| ()),
        Command::Evaluate { policies, series, .. } => cmd_evaluate(&cfg, &layout, policies, series.as_deref()),
        Command::Frontier { .. } => cmd_frontier(&cfg, &layout),
    }
}

fn cmd_simulate(cfg: &RunConfig, layout: &Layout) -> Result<(), Failure> {
    let grid = cfg.grid()?;
    let paths = cfg.spread_model().simulate(&grid, cfg.seed, cfg.simulation.episodes)?;
    let file = layout.paths.join("paths.csv");
    write_paths_csv(&paths, create(&file)?)?;
    println!("wrote {} paths of {} points to {}", paths.len(), grid.len(), file.display());
    Ok(())
}

fn cmd_clean(cfg: &RunConfig, layout: &Layout, input: Option<&Path>, synthetic: bool) -> Result<(), Failure> {
    let steps = cfg.grid.steps_per_day;
    let quotes = if synthetic {
        let q = synthetic_quotes(steps, cfg.seed)?;
        save_quotes(&q, &layout.paths.join("quotes.csv"))?;
        q
    } else {
        load_quotes(input.expect("clap requires --input without --synthetic"))?
    };
    let (series, report) = clean_all(&quotes, cfg.cleaning_mode())?;
    let (filled, fill) = fill_grid(&series, steps)?;
    let out = layout.paths.join("clean_series.csv");
    save_clean_series(&filled, &out)?;
    let episodes = slice_episodes(&filled, cfg.data.episode_days, steps).map(|e| e.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(create(&layout.reports.join("cleaning.csv"))?);
    w.write_record(["snapshots", "quotes", "discarded_bids", "discarded_asks", "crossed", "marks", "filled", "episodes"])?;
    w.write_record(
        [report.snapshots, report.quotes, report.discarded_bids, report.discarded_asks, report.crossed.len(), fill.marks, fill.filled, episodes]
            .map(|x| x.to_string()),
    )?;
    w.flush()?;
    println!(
        "{} snapshots, {} quotes: discarded {} bids and {} asks, {} crossed; {} of {} marks filled; {} episodes of {} days",
        report.snapshots,
        report.quotes,
        report.discarded_bids,
        report.discarded_asks,
        report.crossed.len(),
        fill.filled,
        fill.marks,
        episodes,
        cfg.data.episode_days
    );
    Ok(())
}

fn checkpoint_name(lambda: f64, ba: f64) -> String {
    format!("policy_lambda{lambda}_ba{ba}.txt")
}

/// Trains at the config's λ and ba; returns the checkpoint path.
fn cmd_train(cfg: &RunConfig, layout: &Layout) -> Result<PathBuf, Failure> {
    let (lambda, ba) = (cfg.training.lambda, cfg.costs.ba_bp);
    let (policy_path, log) = train_cell(cfg, layout, lambda, ba)?;
    let last = log.last().expect("at least one iteration");
    println!(
        "trained lambda {lambda} ba {ba}: {} iterations, {} episodes, final J {:.1} EUR, nu2 {:.4e}, eta {:.1}; checkpoint {}",
        log.len(),
        last.episodes_seen,
        last.j,
        last.nu2,
        last.eta,
        policy_path.display()
    );
    Ok(policy_path)
}

fn train_cell(
    cfg: &RunConfig,
    layout: &Layout,
    lambda: f64,
    ba: f64,
) -> Result<(PathBuf, Vec<crate::trvo::TrainLogRow>), Failure> {
    let env = SimulatedHedging::new(cfg.env_config()?, cfg.spread_model(), cfg.grid()?, CostModel::Constant(ba), cfg.seed)?;
    let hp = cfg.hyperparams(lambda);
    let ckpt = layout.checkpoints.join(checkpoint_name(lambda, ba));
    let (_, log) = train(&env, &hp, None, |p, _| p.save(&ckpt))?;
    write_train_log(&log, create(&layout.reports.join(format!("train_log_lambda{lambda}_ba{ba}.csv")))?)?;
    Ok((ckpt, log))
}

fn parse_policy_arg(arg: &str) -> Result<(Option<f64>, PathBuf), Failure> {
    match arg.split_once('=') {
        Some((l, p)) => {
            let lambda = l.parse::<f64>().map_err(|e| Failure::Usage(format!("--policy {arg}: bad lambda: {e}")))?;
            Ok((Some(lambda), PathBuf::from(p)))
        }
        None => Ok((None, PathBuf::from(arg))),
    }
}

fn test_paths(cfg: &RunConfig, ba: f64) -> Result<Vec<PricedPath>, Failure> {
    let env = SimulatedHedging::new(cfg.env_config()?, cfg.spread_model(), cfg.grid()?, CostModel::Constant(ba), cfg.test_seed())?;
    let priced: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        (0..cfg.evaluation.episodes as u64).into_par_iter().map(|i| env.priced_episode(i)).collect()
    };
    Ok(priced?)
}

fn cmd_evaluate(cfg: &RunConfig, layout: &Layout, policies: &[String], series: Option<&Path>) -> Result<(), Failure> {
    let mut agents = Vec::new();
    for arg in policies {
        let (lambda, path) = parse_policy_arg(arg)?;
        agents.push((lambda, PolicyParams::load(&path)?));
    }
    if let Some(series) = series {
        let clean = load_clean_series(series)?;
        let episodes = slice_episodes(&clean, cfg.data.episode_days, cfg.grid.steps_per_day)?;
        let env_cfg = cfg.env_config()?;
        let scenarios = episodes.iter().map(|e| price_data_episode(&env_cfg, e)).collect::<Result<Vec<_>, _>>()?;
        let labelled: Vec<(f64, &PolicyParams)> =
            agents.iter().enumerate().map(|(i, (l, p))| (l.unwrap_or(i as f64 + 1.0), p)).collect();
        let rows = scenario_table(&labelled, &scenarios)?;
        let file = layout.reports.join("table.csv");
        write_scenario_table(&rows, create(&file)?)?;
        println!("{} scenarios, {} agents; table written to {}", scenarios.len(), labelled.len(), file.display());
        return Ok(());
    }
    let paths = test_paths(cfg, cfg.costs.ba_bp)?;
    if agents.is_empty() {
        let report = evaluate(Hedger::DeltaHedge, Hedger::DeltaHedge, &paths)?;
        report.write_csv(create(&layout.reports.join("evaluation.csv"))?)?;
        let b = report.baseline;
        println!("delta hedge: mean p&l {:.0} EUR (se {:.0}), p&l vol {:.0} EUR over {} episodes", b.mean_pnl, b.std_err, b.pl_vol, b.episodes);
        return Ok(());
    }
    for (i, (lambda, policy)) in agents.iter().enumerate() {
        let tag = lambda.map_or(format!("policy{}", i + 1), |l| format!("lambda{l}"));
        let report = evaluate(Hedger::Agent(policy), Hedger::DeltaHedge, &paths)?;
        report.write_csv(create(&layout.reports.join(format!("evaluation_{tag}.csv")))?)?;
        Histogram::new(&report.pnl_differences(), cfg.evaluation.bin_width_eur)?
            .write_csv(create(&layout.reports.join(format!("pl_distribution_{tag}.csv")))?)?;
        println!(
            "{tag}: mean p&l {:.0} EUR vs delta hedge {:.0} EUR (Δ {:.0}), p&l vol {:.0} vs {:.0}",
            report.agent.mean_pnl, report.baseline.mean_pnl, report.delta_pl, report.agent.pl_vol, report.baseline.pl_vol
        );
    }
    Ok(())
}

fn cmd_frontier(cfg: &RunConfig, layout: &Layout) -> Result<(), Failure> {
    let mut trained = Vec::new();
    for &ba in &cfg.frontier.ba_bp {
        for &lambda in &cfg.frontier.lambdas {
            let (ckpt, _) = train_cell(cfg, layout, lambda, ba)?;
            trained.push((lambda, ba, PolicyParams::load(&ckpt)?));
            println!("trained lambda {lambda} ba {ba}");
        }
    }
    let test_sets = cfg.frontier.ba_bp.iter().map(|&ba| Ok((ba, test_paths(cfg, ba)?))).collect::<Result<Vec<_>, Failure>>()?;
    let cells: Vec<FrontierCell> = trained.iter().map(|(l, b, p)| FrontierCell { lambda: *l, ba_bp: *b, policy: p }).collect();
    let frontier = build_frontier(&cells, &test_sets)?;
    frontier.write_csv(create(&layout.reports.join("frontier.csv"))?)?;
    frontier.write_dominance_csv(create(&layout.reports.join("dominance.csv"))?)?;
    let dom = frontier.dominance();
    println!(
        "{} points: {} beat the delta hedge in p&l, {} also in p&l volatility",
        dom.len(),
        dom.iter().filter(|d| d.beats_pl).count(),
        dom.iter().filter(|d| d.beats_pl && d.beats_vol).count()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_arguments() {
        let (l, p) = parse_policy_arg("4=ck/a.txt").unwrap();
        assert_eq!((l, p), (Some(4.0), PathBuf::from("ck/a.txt")));
        assert_eq!(parse_policy_arg("a.txt").unwrap().0, None);
        assert!(matches!(parse_policy_arg("x=a.txt"), Err(Failure::Usage(_))));
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["cdx-hedge", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["cdx-hedge", "--help"]), EXIT_OK);
    }

    #[test]
    fn zero_episodes_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["cdx-hedge", "simulate", "--episodes", "0", "--out", out]), EXIT_USAGE);
    }

    #[test]
    fn missing_checkpoint_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let code = run(["cdx-hedge", "evaluate", "--episodes", "2", "--policy", "/nonexistent/p.txt", "--out", out]);
        assert_eq!(code, EXIT_RUNTIME);
    }
}

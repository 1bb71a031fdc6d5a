//! Paired evaluation of hedging policies against the delta hedge, frontier
//! construction and report CSVs.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::env::{delta_hedge_policy, run_policy, EnvError, EpisodeRecord, PricedPath};
use crate::trvo::PolicyParams;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no episodes to evaluate")]
    Empty,
    #[error("path volatility needs at least 2 steps, episode has {0}")]
    TooFewSteps(usize),
    #[error("agent and baseline saw different paths at episode {0}")]
    Unpaired(usize),
    #[error("histogram bin width must be positive, got {0}")]
    BinWidth(f64),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// A hedging rule evaluated deterministically.
#[derive(Debug, Clone, Copy)]
pub enum Hedger<'a> {
    DeltaHedge,
    /// Trained policy acting with its Gaussian mean.
    Agent(&'a PolicyParams),
}

impl Hedger<'_> {
    pub fn run(&self, path: &PricedPath) -> Result<EpisodeRecord, EnvError> {
        match self {
            Hedger::DeltaHedge => run_policy(path, delta_hedge_policy),
            Hedger::Agent(p) => {
                let premium = path.premium();
                run_policy(path, |s| p.mean(&s.features(premium)))
            }
        }
    }
}

/// Two-pass population standard deviation; 0 for fewer than two values.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Standard deviation of the per-step rewards within one episode.
pub fn path_volatility(rewards: &[f64]) -> Result<f64, EvalError> {
    if rewards.len() < 2 {
        return Err(EvalError::TooFewSteps(rewards.len()));
    }
    Ok(population_std(rewards))
}

/// Per-episode summary of one policy on one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub pnl: f64,
    pub cost: f64,
    pub path_vol: f64,
    /// Mean |action − hedge ratio| over the decisions.
    pub mean_abs_gap: f64,
    /// Mean |a_t − a_{t−1}| over consecutive decisions.
    pub mean_abs_change: f64,
    pub checksum: u64,
}

impl EpisodeOutcome {
    pub fn from_record(rec: &EpisodeRecord) -> Result<Self, EvalError> {
        let n = rec.actions.len() as f64;
        let gap = rec.actions.iter().zip(&rec.states).map(|(a, s)| (a - s.hedge_ratio).abs()).sum::<f64>() / n;
        let change = rec.actions.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (n - 1.0).max(1.0);
        Ok(Self {
            pnl: rec.total_pnl(),
            cost: rec.total_cost(),
            path_vol: path_volatility(&rec.rewards)?,
            mean_abs_gap: gap,
            mean_abs_change: change,
            checksum: rec.checksum,
        })
    }
}

/// Runs `hedger` over every path in parallel; outcomes are in path order.
pub fn run_episodes(hedger: Hedger<'_>, paths: &[PricedPath]) -> Result<Vec<EpisodeOutcome>, EvalError> {
    if paths.is_empty() {
        return Err(EvalError::Empty);
    }
    paths
        .par_iter()
        .map(|p| EpisodeOutcome::from_record(&hedger.run(p)?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyStats {
    pub episodes: usize,
    pub mean_pnl: f64,
    pub std_err: f64,
    /// Standard deviation of terminal p&l across episodes.
    pub pl_vol: f64,
    pub mean_cost: f64,
    pub mean_path_vol: f64,
    pub mean_abs_gap: f64,
    pub mean_abs_change: f64,
}

impl PolicyStats {
    pub fn from_outcomes(outcomes: &[EpisodeOutcome]) -> Result<Self, EvalError> {
        if outcomes.is_empty() {
            return Err(EvalError::Empty);
        }
        let n = outcomes.len() as f64;
        let mean = |f: fn(&EpisodeOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
        let pnl: Vec<f64> = outcomes.iter().map(|o| o.pnl).collect();
        let pl_vol = population_std(&pnl);
        Ok(Self {
            episodes: outcomes.len(),
            mean_pnl: mean(|o| o.pnl),
            std_err: pl_vol / n.sqrt(),
            pl_vol,
            mean_cost: mean(|o| o.cost),
            mean_path_vol: mean(|o| o.path_vol),
            mean_abs_gap: mean(|o| o.mean_abs_gap),
            mean_abs_change: mean(|o| o.mean_abs_change),
        })
    }
}

/// Agent and baseline on identical paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub agent: PolicyStats,
    pub baseline: PolicyStats,
    /// Agent mean p&l minus baseline mean p&l.
    pub delta_pl: f64,
    pub agent_outcomes: Vec<EpisodeOutcome>,
    pub baseline_outcomes: Vec<EpisodeOutcome>,
}

impl EvalReport {
    /// Per-episode agent p&l minus baseline p&l.
    pub fn pnl_differences(&self) -> Vec<f64> {
        self.agent_outcomes.iter().zip(&self.baseline_outcomes).map(|(a, b)| a.pnl - b.pnl).collect()
    }

    /// CSV `policy,episodes,mean_pnl_eur,std_err_eur,pl_vol_eur,mean_cost_eur,mean_path_vol_eur,mean_abs_gap,mean_abs_change,delta_pl_eur`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "policy",
            "episodes",
            "mean_pnl_eur",
            "std_err_eur",
            "pl_vol_eur",
            "mean_cost_eur",
            "mean_path_vol_eur",
            "mean_abs_gap",
            "mean_abs_change",
            "delta_pl_eur",
        ])?;
        for (name, s, d) in [("agent", &self.agent, self.delta_pl), ("delta_hedge", &self.baseline, 0.0)] {
            w.write_record([
                name.to_string(),
                s.episodes.to_string(),
                s.mean_pnl.to_string(),
                s.std_err.to_string(),
                s.pl_vol.to_string(),
                s.mean_cost.to_string(),
                s.mean_path_vol.to_string(),
                s.mean_abs_gap.to_string(),
                s.mean_abs_change.to_string(),
                d.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Pairs two sets of outcomes, checking that they come from the same paths.
pub fn compare(agent: Vec<EpisodeOutcome>, baseline: Vec<EpisodeOutcome>) -> Result<EvalReport, EvalError> {
    if agent.len() != baseline.len() {
        return Err(EvalError::Unpaired(agent.len().min(baseline.len())));
    }
    if let Some(i) = agent.iter().zip(&baseline).position(|(a, b)| a.checksum != b.checksum) {
        return Err(EvalError::Unpaired(i));
    }
    let a = PolicyStats::from_outcomes(&agent)?;
    let b = PolicyStats::from_outcomes(&baseline)?;
    Ok(EvalReport { agent: a, baseline: b, delta_pl: a.mean_pnl - b.mean_pnl, agent_outcomes: agent, baseline_outcomes: baseline })
}

/// Evaluates `agent` and `baseline` on the same paths.
pub fn evaluate(agent: Hedger<'_>, baseline: Hedger<'_>, paths: &[PricedPath]) -> Result<EvalReport, EvalError> {
    compare(run_episodes(agent, paths)?, run_episodes(baseline, paths)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    /// User-scale risk aversion.
    pub lambda: f64,
    pub ba_bp: f64,
    /// Agent mean p&l minus delta-hedge mean p&l.
    pub delta_pl_eur: f64,
    pub pl_vol_eur: f64,
    pub path_vol_eur: f64,
}

/// Delta-hedge reference at one bid/ask level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierBaseline {
    pub ba_bp: f64,
    pub mean_pnl_eur: f64,
    pub pl_vol_eur: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    pub points: Vec<FrontierPoint>,
    pub baselines: Vec<FrontierBaseline>,
}

/// A trained agent and the bid/ask level it is tested at.
#[derive(Debug, Clone, Copy)]
pub struct FrontierCell<'a> {
    pub lambda: f64,
    pub ba_bp: f64,
    pub policy: &'a PolicyParams,
}

/// Evaluates each cell against the delta hedge on the test set of its bid/ask level.
///
/// `test_sets` maps a bid/ask level to its priced paths; every cell's level must be present.
pub fn build_frontier(cells: &[FrontierCell<'_>], test_sets: &[(f64, Vec<PricedPath>)]) -> Result<Frontier, EvalError> {
    let mut baselines = Vec::new();
    let mut baseline_outcomes = Vec::new();
    for (ba, paths) in test_sets {
        let out = run_episodes(Hedger::DeltaHedge, paths)?;
        let s = PolicyStats::from_outcomes(&out)?;
        baselines.push(FrontierBaseline { ba_bp: *ba, mean_pnl_eur: s.mean_pnl, pl_vol_eur: s.pl_vol });
        baseline_outcomes.push(out);
    }
    let mut points = Vec::with_capacity(cells.len());
    for cell in cells {
        let i = test_sets.iter().position(|(ba, _)| *ba == cell.ba_bp).ok_or(EvalError::Empty)?;
        let agent = run_episodes(Hedger::Agent(cell.policy), &test_sets[i].1)?;
        let report = compare(agent, baseline_outcomes[i].clone())?;
        points.push(FrontierPoint {
            lambda: cell.lambda,
            ba_bp: cell.ba_bp,
            delta_pl_eur: report.delta_pl,
            pl_vol_eur: report.agent.pl_vol,
            path_vol_eur: report.agent.mean_path_vol,
        });
    }
    Ok(Frontier { points, baselines })
}

/// Dominance of one frontier point over the delta hedge at its bid/ask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dominance {
    pub lambda: f64,
    pub ba_bp: f64,
    pub beats_pl: bool,
    pub beats_vol: bool,
}

impl Frontier {
    pub fn dominance(&self) -> Vec<Dominance> {
        self.points
            .iter()
            .map(|p| {
                let base = self.baselines.iter().find(|b| b.ba_bp == p.ba_bp);
                Dominance {
                    lambda: p.lambda,
                    ba_bp: p.ba_bp,
                    beats_pl: p.delta_pl_eur > 0.0,
                    beats_vol: base.is_some_and(|b| p.pl_vol_eur < b.pl_vol_eur),
                }
            })
            .collect()
    }

    /// CSV `lambda,ba_bp,delta_pl_eur,pl_vol_eur`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "ba_bp", "delta_pl_eur", "pl_vol_eur"])?;
        for p in &self.points {
            w.write_record([p.lambda.to_string(), p.ba_bp.to_string(), p.delta_pl_eur.to_string(), p.pl_vol_eur.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// CSV `lambda,ba_bp,beats_delta_pl,beats_delta_vol,delta_hedge_pl_vol_eur`.
    pub fn write_dominance_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lambda", "ba_bp", "beats_delta_pl", "beats_delta_vol", "delta_hedge_pl_vol_eur"])?;
        for d in self.dominance() {
            let base = self.baselines.iter().find(|b| b.ba_bp == d.ba_bp).map_or(f64::NAN, |b| b.pl_vol_eur);
            w.write_record([
                d.lambda.to_string(),
                d.ba_bp.to_string(),
                d.beats_pl.to_string(),
                d.beats_vol.to_string(),
                base.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Spearman correlation of λ and mean path volatility at one bid/ask level.
    pub fn lambda_vol_spearman(&self, ba_bp: f64) -> Option<f64> {
        let (l, v): (Vec<f64>, Vec<f64>) =
            self.points.iter().filter(|p| p.ba_bp == ba_bp).map(|p| (p.lambda, p.path_vol_eur)).unzip();
        spearman(&l, &v)
    }
}

/// Histogram of per-episode p&l differences.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    /// (lower edge, count); bins are `[lower, lower + width)`.
    pub bins: Vec<(f64, usize)>,
}

impl Histogram {
    pub fn new(values: &[f64], bin_width: f64) -> Result<Self, EvalError> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(EvalError::BinWidth(bin_width));
        }
        if values.is_empty() {
            return Err(EvalError::Empty);
        }
        let idx = |x: f64| (x / bin_width).floor() as i64;
        let lo = values.iter().map(|x| idx(*x)).min().unwrap();
        let hi = values.iter().map(|x| idx(*x)).max().unwrap();
        let mut counts = vec![0usize; (hi - lo + 1) as usize];
        for x in values {
            counts[(idx(*x) - lo) as usize] += 1;
        }
        let bins = counts.into_iter().enumerate().map(|(i, c)| ((lo + i as i64) as f64 * bin_width, c)).collect();
        Ok(Self { bin_width, bins })
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.1).sum()
    }

    /// CSV `bin_lower_eur,bin_upper_eur,count`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_lower_eur", "bin_upper_eur", "count"])?;
        for (lo, c) in &self.bins {
            w.write_record([lo.to_string(), (lo + self.bin_width).to_string(), c.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Distribution of agent p&l minus baseline p&l over paired episodes.
pub fn pl_distribution(agent: Hedger<'_>, baseline: Hedger<'_>, paths: &[PricedPath], bin_width: f64) -> Result<Histogram, EvalError> {
    Histogram::new(&evaluate(agent, baseline, paths)?.pnl_differences(), bin_width)
}

/// One row of the per-scenario table; `lambda = None` marks the delta hedge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioRow {
    pub scenario: usize,
    pub lambda: Option<f64>,
    pub pl_eur: f64,
    pub path_vol_eur: f64,
}

/// Runs every agent and the delta hedge on each scenario.
pub fn scenario_table(agents: &[(f64, &PolicyParams)], scenarios: &[PricedPath]) -> Result<Vec<ScenarioRow>, EvalError> {
    if scenarios.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut rows = Vec::new();
    for (i, path) in scenarios.iter().enumerate() {
        let hedgers = agents.iter().map(|(l, p)| (Some(*l), Hedger::Agent(p))).chain([(None, Hedger::DeltaHedge)]);
        for (lambda, h) in hedgers {
            let o = EpisodeOutcome::from_record(&h.run(path)?)?;
            rows.push(ScenarioRow { scenario: i + 1, lambda, pl_eur: o.pnl, path_vol_eur: o.path_vol });
        }
    }
    Ok(rows)
}

/// CSV `scenario,lambda,pl_keur,path_vol_keur`; the delta hedge's lambda is `delta`.
pub fn write_scenario_table<W: Write>(rows: &[ScenarioRow], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "lambda", "pl_keur", "path_vol_keur"])?;
    for r in rows {
        w.write_record([
            r.scenario.to_string(),
            r.lambda.map_or("delta".to_string(), |l| l.to_string()),
            (r.pl_eur / 1e3).to_string(),
            (r.path_vol_eur / 1e3).to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|a, b| xs[*a].total_cmp(&xs[*b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` if undefined.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

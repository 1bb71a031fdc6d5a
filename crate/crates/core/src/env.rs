//! The hedging decision process: a short (or long) index option hedged with the
//! index itself, rebalanced at every grid point, under bid/ask transaction costs.
//!
//! Every quantity the reward needs is priced once per path in [`PricedPath`], so
//! [`PricedPath::step`] is plain arithmetic and safe to call from many threads.

use std::io::Write;
use std::sync::Arc;

use chrono::NaiveDate;
use rayon::prelude::*;
use thiserror::Error;

use crate::calendar::{coupon_payments_between, Timestamp, TradingGrid};
use crate::market_data::{unit_cost, CostModel, DataEpisode, TradeSide, BP};
use crate::market_sim::MarketPath;
use crate::pricing::{IndexSpec, OptionKind, OptionPricer, OptionSpec, PricingError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error("path has {path} points, grid has {grid}")]
    LengthMismatch { path: usize, grid: usize },
    #[error("invalid cost model: {0}")]
    Cost(String),
    #[error("action is NaN at step {0}")]
    NanAction(usize),
    #[error("episode already finished at step {0}")]
    Done(usize),
    #[error("grid must hold at least two points")]
    ShortGrid,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositionSign {
    #[default]
    ShortOption,
    LongOption,
}

impl PositionSign {
    pub fn sign(self) -> f64 {
        match self {
            PositionSign::ShortOption => -1.0,
            PositionSign::LongOption => 1.0,
        }
    }
}

/// Contract and position terms. The option expires at the last grid point and
/// its notional equals the index notional.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub index: IndexSpec,
    pub kind: OptionKind,
    /// Strike as a decimal spread; `None` strikes at the path's first spread.
    pub strike: Option<f64>,
    pub volatility: f64,
    pub position: PositionSign,
    /// Charge the first trade away from the flat start.
    pub charge_entry: bool,
    /// Charge unwinding the hedge at settlement.
    pub charge_exit: bool,
}

impl Default for EnvConfig {
    /// Short at-the-money payer, 60% vol, 100 mln on the June 2026 index. The
    /// hedge is set up with the option and absorbed by its settlement, so only
    /// rebalancing in between pays the bid/ask.
    fn default() -> Self {
        Self {
            index: IndexSpec::new(NaiveDate::from_ymd_opt(2026, 6, 20).expect("valid date"), 100e6),
            kind: OptionKind::Payer,
            strike: None,
            volatility: 0.60,
            position: PositionSign::ShortOption,
            charge_entry: false,
            charge_exit: false,
        }
    }
}

impl EnvConfig {
    pub fn option_spec(&self, strike: f64, expiry: Timestamp) -> OptionSpec {
        OptionSpec { kind: self.kind, strike, expiry, volatility: self.volatility, notional: self.index.notional }
    }

    /// Side of the index trade when the hedge fraction increases.
    fn increase_side(&self) -> TradeSide {
        let long_protection = match (self.kind, self.position) {
            (OptionKind::Payer, PositionSign::ShortOption) | (OptionKind::Receiver, PositionSign::LongOption) => true,
            (OptionKind::Payer, PositionSign::LongOption) | (OptionKind::Receiver, PositionSign::ShortOption) => false,
        };
        if long_protection {
            TradeSide::BuyProtection
        } else {
            TradeSide::SellProtection
        }
    }
}

fn opposite(side: TradeSide) -> TradeSide {
    match side {
        TradeSide::BuyProtection => TradeSide::SellProtection,
        TradeSide::SellProtection => TradeSide::BuyProtection,
    }
}

/// Pricers for every grid point of one (grid, strike) pair, shared across paths.
#[derive(Debug, Clone)]
pub struct GridPricing {
    grid: Arc<TradingGrid>,
    strike: f64,
    pricers: Vec<OptionPricer>,
    /// Running coupon paid on a unit protection position over each transition, fraction of notional.
    coupon_cash: Vec<f64>,
}

impl GridPricing {
    pub fn new(cfg: &EnvConfig, grid: Arc<TradingGrid>, strike: f64) -> Result<Self, EnvError> {
        if grid.len() < 2 {
            return Err(EnvError::ShortGrid);
        }
        let opt = cfg.option_spec(strike, grid.last());
        let pricers = grid
            .points()
            .iter()
            .map(|t| OptionPricer::new(*t, &opt, &cfg.index))
            .collect::<Result<Vec<_>, _>>()?;
        let coupon_cash = grid
            .points()
            .windows(2)
            .map(|w| {
                coupon_payments_between(w[0].date(), w[1].date(), cfg.index.maturity)
                    .iter()
                    .map(|(start, pay)| cfg.index.coupon * (*pay - *start).num_days() as f64 / 360.0)
                    .sum()
            })
            .collect();
        Ok(Self { grid, strike, pricers, coupon_cash })
    }

    pub fn grid(&self) -> &Arc<TradingGrid> {
        &self.grid
    }

    pub fn strike(&self) -> f64 {
        self.strike
    }
}

/// The four-component state plus the step clock that locates it on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub step: usize,
    pub timestamp: Timestamp,
    pub spread: f64,
    /// Option value, EUR.
    pub pay: f64,
    pub hedge_ratio: f64,
    pub prev_action: f64,
}

impl EnvState {
    /// Learner inputs: spread in bp/100, option value in premium units, hedge ratio, previous action.
    pub fn features(&self, premium: f64) -> [f64; 4] {
        [self.spread * 100.0, self.pay / premium, self.hedge_ratio, self.prev_action]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: EnvState,
    /// Clipped action actually held over the step.
    pub action: f64,
    pub reward: f64,
    pub option_pnl: f64,
    pub hedge_pnl: f64,
    pub cost: f64,
    pub done: bool,
}

/// One path with option values, hedge ratios, upfronts and unit trading costs at every grid point.
#[derive(Debug, Clone)]
pub struct PricedPath {
    pricing: Arc<GridPricing>,
    sign: f64,
    notional: f64,
    increase_side: TradeSide,
    charge_entry: bool,
    charge_exit: bool,
    spreads: Vec<f64>,
    pay: Vec<f64>,
    hedge: Vec<f64>,
    upf: Vec<f64>,
    /// EUR per unit change of the hedge fraction when increasing / decreasing it.
    cost_up: Vec<f64>,
    cost_down: Vec<f64>,
    bidask_bp: Vec<f64>,
    checksum: u64,
}

impl PricedPath {
    pub fn new(cfg: &EnvConfig, pricing: Arc<GridPricing>, path: &MarketPath, cost: &CostModel) -> Result<Self, EnvError> {
        let n = pricing.grid.len();
        if path.len() != n {
            return Err(EnvError::LengthMismatch { path: path.len(), grid: n });
        }
        cost.validate(n).map_err(EnvError::Cost)?;
        let increase_side = cfg.increase_side();
        let mut pay = Vec::with_capacity(n);
        let mut hedge = Vec::with_capacity(n);
        let mut upf = Vec::with_capacity(n);
        let mut cost_up = Vec::with_capacity(n);
        let mut cost_down = Vec::with_capacity(n);
        let mut bidask_bp = Vec::with_capacity(n);
        for (k, (pricer, &s)) in pricing.pricers.iter().zip(&path.spreads).enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(PricingError::InvalidInput(format!("spread {s} at step {k}")).into());
            }
            pay.push(pricer.price(s));
            hedge.push(pricer.hedge_ratio(s)?);
            upf.push(pricer.upfront(s));
            let ba = cost.bidask_bp(k);
            bidask_bp.push(ba);
            if ba == 0.0 {
                cost_up.push(0.0);
                cost_down.push(0.0);
            } else {
                let terms = pricer.upfront_terms();
                cost_up.push(cfg.index.notional * unit_cost(terms, s, ba * BP, increase_side));
                cost_down.push(cfg.index.notional * unit_cost(terms, s, ba * BP, opposite(increase_side)));
            }
        }
        Ok(Self {
            pricing,
            sign: cfg.position.sign(),
            notional: cfg.index.notional,
            increase_side,
            charge_entry: cfg.charge_entry,
            charge_exit: cfg.charge_exit,
            spreads: path.spreads.clone(),
            pay,
            hedge,
            upf,
            cost_up,
            cost_down,
            bidask_bp,
            checksum: path.checksum(),
        })
    }

    /// Prices a path on its own grid, striking at the configured or first spread.
    pub fn standalone(cfg: &EnvConfig, path: &MarketPath, cost: &CostModel) -> Result<Self, EnvError> {
        let strike = cfg.strike.unwrap_or(path.spreads[0]);
        let pricing = Arc::new(GridPricing::new(cfg, path.grid.clone(), strike)?);
        Self::new(cfg, pricing, path, cost)
    }

    pub fn len(&self) -> usize {
        self.spreads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spreads.is_empty()
    }

    pub fn grid(&self) -> &Arc<TradingGrid> {
        &self.pricing.grid
    }

    /// Initial option value, EUR.
    pub fn premium(&self) -> f64 {
        self.pay[0]
    }

    pub fn spreads(&self) -> &[f64] {
        &self.spreads
    }

    pub fn hedge_ratios(&self) -> &[f64] {
        &self.hedge
    }

    pub fn option_values(&self) -> &[f64] {
        &self.pay
    }

    pub fn bidask_bp(&self) -> &[f64] {
        &self.bidask_bp
    }

    /// Checksum of the underlying spread path.
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn increase_side(&self) -> TradeSide {
        self.increase_side
    }

    fn state_at(&self, k: usize, prev_action: f64) -> EnvState {
        EnvState {
            step: k,
            timestamp: self.pricing.grid.points()[k],
            spread: self.spreads[k],
            pay: self.pay[k],
            hedge_ratio: self.hedge[k],
            prev_action,
        }
    }

    /// First state, flat hedge.
    pub fn reset(&self) -> EnvState {
        self.state_at(0, 0.0)
    }

    /// Holds `action` (clipped to [0, 1]) from the state's grid point to the next.
    ///
    /// The final transition settles the option at intrinsic value.
    pub fn step(&self, state: &EnvState, action: f64) -> Result<StepResult, EnvError> {
        let k = state.step;
        let last = self.len() - 1;
        if k >= last {
            return Err(EnvError::Done(k));
        }
        if action.is_nan() {
            return Err(EnvError::NanAction(k));
        }
        let a = action.clamp(0.0, 1.0);
        let option_pnl = self.sign * (self.pay[k + 1] - self.pay[k]);
        let index_move = self.upf[k + 1] - self.upf[k] + self.pricing.coupon_cash[k];
        let hedge_pnl = -self.sign * a * index_move * self.notional;
        let trade = a - state.prev_action;
        let mut cost = if k == 0 && !self.charge_entry {
            0.0
        } else if trade > 0.0 {
            trade * self.cost_up[k]
        } else {
            -trade * self.cost_down[k]
        };
        let done = k + 1 == last;
        if done && self.charge_exit {
            cost += a * self.cost_down[k + 1];
        }
        Ok(StepResult {
            state: self.state_at(k + 1, a),
            action: a,
            reward: option_pnl - hedge_pnl - cost,
            option_pnl,
            hedge_pnl,
            cost,
            done,
        })
    }
}

/// Prices many paths sharing one grid and one strike, in parallel, preserving order.
pub fn price_paths(cfg: &EnvConfig, paths: &[MarketPath], cost: &CostModel) -> Result<Vec<PricedPath>, EnvError> {
    let Some(first) = paths.first() else {
        return Ok(Vec::new());
    };
    let strike = cfg.strike.unwrap_or(first.spreads[0]);
    let pricing = Arc::new(GridPricing::new(cfg, first.grid.clone(), strike)?);
    paths
        .par_iter()
        .map(|p| {
            if Arc::ptr_eq(&p.grid, &pricing.grid) || *p.grid == *pricing.grid {
                PricedPath::new(cfg, pricing.clone(), p, cost)
            } else {
                PricedPath::standalone(cfg, p, cost)
            }
        })
        .collect()
}

/// Prices a market-data episode with its own bid/ask series, striking at its first spread
/// unless a strike is configured.
pub fn price_data_episode(cfg: &EnvConfig, episode: &DataEpisode) -> Result<PricedPath, EnvError> {
    let path = MarketPath::new(episode.grid.clone(), episode.spreads.clone());
    let cost = CostModel::Series(Arc::new(episode.bidask.iter().map(|b| b / BP).collect()));
    PricedPath::standalone(cfg, &path, &cost)
}

/// Full trajectory of one policy over one path.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// All visited states, one per grid point.
    pub states: Vec<EnvState>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub option_pnl: Vec<f64>,
    pub hedge_pnl: Vec<f64>,
    pub costs: Vec<f64>,
    pub checksum: u64,
}

impl EpisodeRecord {
    pub fn total_pnl(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// CSV `step,timestamp,spread_bp,action,reward_eur,cost_eur`, one row per decision.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EnvError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "timestamp", "spread_bp", "action", "reward_eur", "cost_eur"])?;
        for (k, ((a, r), c)) in self.actions.iter().zip(&self.rewards).zip(&self.costs).enumerate() {
            let s = &self.states[k];
            w.write_record([
                k.to_string(),
                s.timestamp.to_string(),
                (s.spread / BP).to_string(),
                a.to_string(),
                r.to_string(),
                c.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Runs a policy from reset to settlement.
pub fn run_policy<F: FnMut(&EnvState) -> f64>(path: &PricedPath, mut policy: F) -> Result<EpisodeRecord, EnvError> {
    let n = path.len();
    let mut rec = EpisodeRecord {
        states: Vec::with_capacity(n),
        actions: Vec::with_capacity(n - 1),
        rewards: Vec::with_capacity(n - 1),
        option_pnl: Vec::with_capacity(n - 1),
        hedge_pnl: Vec::with_capacity(n - 1),
        costs: Vec::with_capacity(n - 1),
        checksum: path.checksum(),
    };
    let mut state = path.reset();
    rec.states.push(state);
    loop {
        let res = path.step(&state, policy(&state))?;
        rec.actions.push(res.action);
        rec.rewards.push(res.reward);
        rec.option_pnl.push(res.option_pnl);
        rec.hedge_pnl.push(res.hedge_pnl);
        rec.costs.push(res.cost);
        rec.states.push(res.state);
        state = res.state;
        if res.done {
            return Ok(rec);
        }
    }
}

/// Holds the analytic hedge ratio, clipped to [0, 1].
pub fn delta_hedge_policy(state: &EnvState) -> f64 {
    state.hedge_ratio.clamp(0.0, 1.0)
}

//! Spread path generation on a trading grid: exact log-normal GBM stepping and a
//! full-truncation Euler Heston scheme.
//!
//! Each path draws from its own ChaCha stream (spread shocks on stream `2 * id`,
//! variance shocks on `2 * id + 1`), so output depends only on
//! `(params, grid, seed, n_paths)` regardless of thread count.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::calendar::TradingGrid;

/// Hours in a 365-day year; converts grid gaps into year fractions.
pub const HOURS_PER_YEAR: f64 = 24.0 * 365.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("path csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbmParams {
    pub s0: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self { s0: 0.01, mu: 0.0, sigma: 0.60 }
    }
}

impl GbmParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(SimError::InvalidParams(format!("s0 = {} must be positive", self.s0)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !self.mu.is_finite() {
            return Err(SimError::InvalidParams("sigma must be >= 0 and mu finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HestonParams {
    pub s0: f64,
    pub v0: f64,
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
}

impl Default for HestonParams {
    /// Stress-test configuration: starts at 60% volatility and mean-reverts to it.
    fn default() -> Self {
        Self { s0: 0.01, v0: 0.36, kappa: 2.0, theta: 0.36, xi: 0.9, rho: 0.0 }
    }
}

impl HestonParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.s0 > 0.0
            && self.v0 >= 0.0
            && self.kappa >= 0.0
            && self.theta >= 0.0
            && self.xi >= 0.0
            && self.rho.abs() <= 1.0
            && [self.s0, self.v0, self.kappa, self.theta, self.xi, self.rho].iter().all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Spreads (and optionally instantaneous variance) on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    pub grid: Arc<TradingGrid>,
    pub spreads: Vec<f64>,
    pub variance: Option<Vec<f64>>,
}

impl MarketPath {
    pub fn new(grid: Arc<TradingGrid>, spreads: Vec<f64>) -> Self {
        Self { grid, spreads, variance: None }
    }

    pub fn len(&self) -> usize {
        self.spreads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spreads.is_empty()
    }

    /// FNV-1a over the spread bits; used to prove two evaluations saw the same path.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in &self.spreads {
            for b in s.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn year_fractions(grid: &TradingGrid) -> Vec<f64> {
    grid.elapsed_hours().iter().map(|h| h / HOURS_PER_YEAR).collect()
}

/// One GBM path; `path_id` selects the RNG stream.
pub fn gbm_path(params: &GbmParams, grid: &Arc<TradingGrid>, seed: u64, path_id: u64) -> MarketPath {
    let dts = year_fractions(grid);
    let mut rng = stream_rng(seed, 2 * path_id);
    let mut spreads = Vec::with_capacity(grid.len());
    let mut s = params.s0;
    spreads.push(s);
    for dt in dts {
        let z: f64 = rng.sample(StandardNormal);
        s *= ((params.mu - 0.5 * params.sigma * params.sigma) * dt + params.sigma * dt.sqrt() * z).exp();
        spreads.push(s);
    }
    MarketPath::new(grid.clone(), spreads)
}

pub fn simulate_gbm(params: &GbmParams, grid: &Arc<TradingGrid>, seed: u64, n_paths: usize) -> Result<Vec<MarketPath>, SimError> {
    params.validate()?;
    if n_paths == 0 {
        return Err(SimError::InvalidParams("n_paths must be at least 1".into()));
    }
    Ok((0..n_paths as u64).into_par_iter().map(|id| gbm_path(params, grid, seed, id)).collect())
}

/// One Heston path with full truncation of the variance inside drift and diffusion.
pub fn heston_path(params: &HestonParams, grid: &Arc<TradingGrid>, seed: u64, path_id: u64) -> MarketPath {
    let dts = year_fractions(grid);
    let mut spread_rng = stream_rng(seed, 2 * path_id);
    let mut var_rng = stream_rng(seed, 2 * path_id + 1);
    let corr = (1.0 - params.rho * params.rho).sqrt();
    let mut spreads = Vec::with_capacity(grid.len());
    let mut variance = Vec::with_capacity(grid.len());
    let (mut s, mut v) = (params.s0, params.v0);
    spreads.push(s);
    variance.push(v.max(0.0));
    for dt in dts {
        let z_s: f64 = spread_rng.sample(StandardNormal);
        let z_v: f64 = var_rng.sample(StandardNormal);
        let z_s = if params.rho == 0.0 { z_s } else { params.rho * z_v + corr * z_s };
        let vp = v.max(0.0);
        s *= (-0.5 * vp * dt + (vp * dt).sqrt() * z_s).exp();
        v += params.kappa * (params.theta - vp) * dt + params.xi * (vp * dt).sqrt() * z_v;
        spreads.push(s);
        variance.push(v.max(0.0));
    }
    MarketPath { grid: grid.clone(), spreads, variance: Some(variance) }
}

pub fn simulate_heston(params: &HestonParams, grid: &Arc<TradingGrid>, seed: u64, n_paths: usize) -> Result<Vec<MarketPath>, SimError> {
    params.validate()?;
    if n_paths == 0 {
        return Err(SimError::InvalidParams("n_paths must be at least 1".into()));
    }
    Ok((0..n_paths as u64).into_par_iter().map(|id| heston_path(params, grid, seed, id)).collect())
}

/// Either dynamics, for code that draws episodes one at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpreadModel {
    Gbm(GbmParams),
    Heston(HestonParams),
}

impl SpreadModel {
    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            SpreadModel::Gbm(p) => p.validate(),
            SpreadModel::Heston(p) => p.validate(),
        }
    }

    pub fn s0(&self) -> f64 {
        match self {
            SpreadModel::Gbm(p) => p.s0,
            SpreadModel::Heston(p) => p.s0,
        }
    }

    pub fn path(&self, grid: &Arc<TradingGrid>, seed: u64, path_id: u64) -> MarketPath {
        match self {
            SpreadModel::Gbm(p) => gbm_path(p, grid, seed, path_id),
            SpreadModel::Heston(p) => heston_path(p, grid, seed, path_id),
        }
    }

    pub fn simulate(&self, grid: &Arc<TradingGrid>, seed: u64, n_paths: usize) -> Result<Vec<MarketPath>, SimError> {
        match self {
            SpreadModel::Gbm(p) => simulate_gbm(p, grid, seed, n_paths),
            SpreadModel::Heston(p) => simulate_heston(p, grid, seed, n_paths),
        }
    }
}

/// Writes `path_id,step,timestamp,spread[,variance]` rows.
pub fn write_paths_csv<W: Write>(paths: &[MarketPath], out: W) -> Result<(), SimError> {
    let with_var = paths.iter().any(|p| p.variance.is_some());
    let mut w = csv::Writer::from_writer(out);
    if with_var {
        w.write_record(["path_id", "step", "timestamp", "spread", "variance"])?;
    } else {
        w.write_record(["path_id", "step", "timestamp", "spread"])?;
    }
    for (id, path) in paths.iter().enumerate() {
        for (step, (ts, s)) in path.grid.points().iter().zip(&path.spreads).enumerate() {
            let mut rec = vec![id.to_string(), step.to_string(), ts.to_string(), s.to_string()];
            if with_var {
                let v = path.variance.as_ref().map(|v| v[step].to_string()).unwrap_or_default();
                rec.push(v);
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

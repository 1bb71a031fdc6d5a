//! Run configuration: a TOML file with one section per module. Every field has
//! a default, unknown keys are rejected, and the resolved configuration is
//! written next to each command's outputs.

use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{build_episode_grid, Timestamp, TradingGrid};
use crate::env::{EnvConfig, PositionSign};
use crate::market_data::{CleaningMode, BP};
use crate::market_sim::{GbmParams, HestonParams, SpreadModel};
use crate::pricing::{IndexSpec, OptionKind};
use crate::trvo::{Hyperparams, TrustRegion};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub index: IndexSection,
    pub option: OptionSection,
    pub grid: GridSection,
    pub simulation: SimulationSection,
    pub costs: CostSection,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
    pub frontier: FrontierSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            index: IndexSection::default(),
            option: OptionSection::default(),
            grid: GridSection::default(),
            simulation: SimulationSection::default(),
            costs: CostSection::default(),
            training: TrainingSection::default(),
            evaluation: EvaluationSection::default(),
            frontier: FrontierSection::default(),
            data: DataSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexSection {
    /// ISO date.
    pub maturity: String,
    pub notional_eur: f64,
    pub coupon_bp: f64,
    pub lgd: f64,
}

impl Default for IndexSection {
    fn default() -> Self {
        Self { maturity: "2026-06-20".into(), notional_eur: 100e6, coupon_bp: 100.0, lgd: 0.6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Payer,
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Short,
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptionSection {
    pub kind: Kind,
    pub position: Position,
    /// Absent: at the money on each path.
    pub strike_bp: Option<f64>,
    pub volatility: f64,
    pub charge_entry: bool,
    pub charge_exit: bool,
}

impl Default for OptionSection {
    fn default() -> Self {
        Self { kind: Kind::Payer, position: Position::Short, strike_bp: None, volatility: 0.6, charge_entry: false, charge_exit: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// ISO date of the first trading day.
    pub start: String,
    pub days: usize,
    pub steps_per_day: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { start: "2021-03-22".into(), days: 40, steps_per_day: 17 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Gbm,
    Heston,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub model: Model,
    pub episodes: usize,
    pub s0_bp: f64,
    pub mu: f64,
    pub sigma: f64,
    pub heston: HestonSection,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let g = GbmParams::default();
        Self { model: Model::Gbm, episodes: 2000, s0_bp: g.s0 / BP, mu: g.mu, sigma: g.sigma, heston: HestonSection::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HestonSection {
    pub v0: f64,
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
}

impl Default for HestonSection {
    fn default() -> Self {
        let h = HestonParams::default();
        Self { v0: h.v0, kappa: h.kappa, theta: h.theta, xi: h.xi, rho: h.rho }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub ba_bp: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self { ba_bp: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Full,
}

/// Training settings; unset fields take the preset's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub preset: Preset,
    pub lambda: f64,
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub gamma: Option<f64>,
    pub advantage_gamma: Option<f64>,
    pub delta: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub init_mean: Option<f64>,
    pub init_log_std: Option<f64>,
    pub cg_iters: Option<usize>,
    pub cg_damping: Option<f64>,
    pub backtracks: Option<usize>,
    pub fisher_stride: Option<usize>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            lambda: 4.0,
            iterations: None,
            batch_size: None,
            gamma: None,
            advantage_gamma: None,
            delta: None,
            hidden: None,
            init_mean: None,
            init_log_std: None,
            cg_iters: None,
            cg_damping: None,
            backtracks: None,
            fisher_stride: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub episodes: usize,
    /// Test paths use `seed + seed_offset`, disjoint from training paths.
    pub seed_offset: u64,
    pub bin_width_eur: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { episodes: 2000, seed_offset: 1_000_003, bin_width_eur: 10_000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontierSection {
    pub lambdas: Vec<f64>,
    pub ba_bp: Vec<f64>,
}

impl Default for FrontierSection {
    fn default() -> Self {
        Self { lambdas: vec![1.0, 2.0, 4.0, 10.0, 25.0], ba_bp: vec![0.5, 1.0, 1.5, 2.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cleaning {
    TwoSigma,
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub cleaning: Cleaning,
    pub episode_days: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { cleaning: Cleaning::TwoSigma, episode_days: 40 }
    }
}

fn parse_date(field: &str, s: &str) -> Result<NaiveDate, ConfigError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| ConfigError::Invalid(format!("{field} = {s:?}: {e}")))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section; called before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env_config()?.index.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.option.volatility > 0.0 && self.option.volatility.is_finite()) {
            return invalid(format!("option.volatility {} must be positive", self.option.volatility));
        }
        if let Some(k) = self.option.strike_bp {
            if !(k > 0.0 && k.is_finite()) {
                return invalid(format!("option.strike_bp {k} must be positive"));
            }
        }
        parse_date("grid.start", &self.grid.start)?;
        if self.grid.days == 0 || self.grid.steps_per_day < 2 {
            return invalid("grid.days must be >= 1 and grid.steps_per_day >= 2");
        }
        if self.simulation.episodes == 0 {
            return invalid("simulation.episodes must be positive");
        }
        self.spread_model().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let ba_ok = |b: f64| b >= 0.0 && b.is_finite();
        if !ba_ok(self.costs.ba_bp) || !self.frontier.ba_bp.iter().all(|b| ba_ok(*b)) {
            return invalid("bid/ask widths must be finite and >= 0");
        }
        if !self.frontier.lambdas.iter().all(|l| *l >= 0.0 && l.is_finite()) {
            return invalid("frontier.lambdas must be finite and >= 0");
        }
        if self.evaluation.episodes == 0 || !(self.evaluation.bin_width_eur > 0.0) {
            return invalid("evaluation.episodes and evaluation.bin_width_eur must be positive");
        }
        if self.data.episode_days == 0 {
            return invalid("data.episode_days must be positive");
        }
        self.hyperparams(self.training.lambda).validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn env_config(&self) -> Result<EnvConfig, ConfigError> {
        let i = &self.index;
        let o = &self.option;
        Ok(EnvConfig {
            index: IndexSpec {
                maturity: parse_date("index.maturity", &i.maturity)?,
                coupon: i.coupon_bp * BP,
                lgd: i.lgd,
                notional: i.notional_eur,
            },
            kind: match o.kind {
                Kind::Payer => OptionKind::Payer,
                Kind::Receiver => OptionKind::Receiver,
            },
            strike: o.strike_bp.map(|k| k * BP),
            volatility: o.volatility,
            position: match o.position {
                Position::Short => PositionSign::ShortOption,
                Position::Long => PositionSign::LongOption,
            },
            charge_entry: o.charge_entry,
            charge_exit: o.charge_exit,
        })
    }

    pub fn grid(&self) -> Result<Arc<TradingGrid>, ConfigError> {
        let start = Timestamp::new(parse_date("grid.start", &self.grid.start)?, 9, 30).expect("valid session open");
        build_episode_grid(start, self.grid.days, self.grid.steps_per_day)
            .map(Arc::new)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn spread_model(&self) -> SpreadModel {
        let s = &self.simulation;
        match s.model {
            Model::Gbm => SpreadModel::Gbm(GbmParams { s0: s.s0_bp * BP, mu: s.mu, sigma: s.sigma }),
            Model::Heston => SpreadModel::Heston(HestonParams {
                s0: s.s0_bp * BP,
                v0: s.heston.v0,
                kappa: s.heston.kappa,
                theta: s.heston.theta,
                xi: s.heston.xi,
                rho: s.heston.rho,
            }),
        }
    }

    pub fn cleaning_mode(&self) -> CleaningMode {
        match self.data.cleaning {
            Cleaning::TwoSigma => CleaningMode::TwoSigma,
            Cleaning::Median => CleaningMode::Median,
        }
    }

    /// Trainer settings for risk aversion `lambda`: the preset overlaid with explicit fields.
    pub fn hyperparams(&self, lambda: f64) -> Hyperparams {
        let t = &self.training;
        let base = match t.preset {
            Preset::Desk => Hyperparams::desk_scale(),
            Preset::Full => Hyperparams::default(),
        };
        let tr = base.trust_region;
        Hyperparams {
            lambda,
            gamma: t.gamma.unwrap_or(base.gamma),
            advantage_gamma: t.advantage_gamma.or(base.advantage_gamma),
            trust_region: TrustRegion {
                delta: t.delta.unwrap_or(tr.delta),
                cg_iters: t.cg_iters.unwrap_or(tr.cg_iters),
                cg_damping: t.cg_damping.unwrap_or(tr.cg_damping),
                backtracks: t.backtracks.unwrap_or(tr.backtracks),
                fisher_stride: t.fisher_stride.unwrap_or(tr.fisher_stride),
            },
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            iterations: t.iterations.unwrap_or(base.iterations),
            seed: self.seed,
            hidden: t.hidden.clone().unwrap_or(base.hidden),
            init_mean: t.init_mean.unwrap_or(base.init_mean),
            init_log_std: t.init_log_std.unwrap_or(base.init_log_std),
        }
    }

    pub fn test_seed(&self) -> u64 {
        self.seed.wrapping_add(self.evaluation.seed_offset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.grid().unwrap().len(), 680);
        assert_eq!(cfg.env_config().unwrap(), EnvConfig::default());
        assert_eq!(cfg.hyperparams(4.0), Hyperparams { seed: 1, ..Hyperparams::desk_scale() });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("sede = 3"), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::from_toml("[training]\nlamda = 3"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 9\n[simulation]\nmodel = \"heston\"\nepisodes = 10\n[training]\npreset = \"full\"\niterations = 3\n[option]\nstrike_bp = 110.0\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(matches!(cfg.spread_model(), SpreadModel::Heston(_)));
        let hp = cfg.hyperparams(2.0);
        assert_eq!((hp.iterations, hp.gamma, hp.lambda, hp.advantage_gamma), (3, 0.999, 2.0, None));
        assert!((cfg.env_config().unwrap().strike.unwrap() - 0.011).abs() < 1e-15);
    }

    #[test]
    fn invalid_values_are_reported() {
        assert!(RunConfig::from_toml("[simulation]\nepisodes = 0").is_err());
        assert!(RunConfig::from_toml("[grid]\nstart = \"2021-13-01\"").is_err());
        assert!(RunConfig::from_toml("[training]\ngamma = 1.5").is_err());
        assert!(RunConfig::from_toml("[costs]\nba_bp = -1.0").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.training.delta = Some(0.02);
        cfg.option.strike_bp = Some(95.0);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}

//! Closed-form valuation of the CDS index upfront and of payer/receiver index
//! options (Black formula on the default-adjusted forward spread), plus the
//! delta-hedge ratio.
//!
//! Spreads are decimals (0.01 = 100 bp). Interest rates are zero. The survival
//! curve is flat in the traded spread: `P(t, θ) = exp(-S τ(t, θ) / LGD)` with
//! τ in ACT/360.

use chrono::NaiveDate;
use thiserror::Error;

use crate::calendar::{coupon_schedule, year_fraction, CalendarError, CouponSchedule, DayCount, Timestamp};

/// Spread bump used for the finite-difference hedge ratio: 0.01 bp.
pub const HEDGE_BUMP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PricingError {
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("option expiry {expiry} must lie strictly before index maturity {maturity}")]
    DegenerateAnnuity { expiry: Timestamp, maturity: NaiveDate },
    #[error("evaluation time {t} is after option expiry {expiry}")]
    Expired { t: Timestamp, expiry: Timestamp },
    #[error("upfront sensitivity {0:e} is too small to hedge against")]
    SingularHedge(f64),
}

/// Standard normal CDF via the complementary error function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Static contract terms of the CDS index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSpec {
    pub maturity: NaiveDate,
    /// Standardized running coupon, 0.01 = 1%.
    pub coupon: f64,
    pub lgd: f64,
    /// EUR.
    pub notional: f64,
}

impl IndexSpec {
    pub fn new(maturity: NaiveDate, notional: f64) -> Self {
        Self { maturity, coupon: 0.01, lgd: 0.60, notional }
    }

    pub fn validate(&self) -> Result<(), PricingError> {
        if !(self.lgd > 0.0 && self.lgd <= 1.0) {
            return Err(PricingError::InvalidInput(format!("LGD {} outside (0, 1]", self.lgd)));
        }
        if !self.coupon.is_finite() || !self.notional.is_finite() || self.notional < 0.0 {
            return Err(PricingError::InvalidInput("coupon and notional must be finite, notional >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Payer,
    Receiver,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptionSpec {
    pub kind: OptionKind,
    /// Strike spread, decimal.
    pub strike: f64,
    pub expiry: Timestamp,
    /// Annualized Black volatility of the spread.
    pub volatility: f64,
    /// EUR.
    pub notional: f64,
}

impl OptionSpec {
    pub fn validate(&self, index: &IndexSpec) -> Result<(), PricingError> {
        if !(self.strike > 0.0) {
            return Err(PricingError::InvalidInput(format!("strike {} must be positive", self.strike)));
        }
        if !(self.volatility > 0.0) {
            return Err(PricingError::InvalidInput(format!("volatility {} must be positive", self.volatility)));
        }
        if self.expiry.date() >= index.maturity {
            return Err(PricingError::DegenerateAnnuity { expiry: self.expiry, maturity: index.maturity });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketState {
    pub t: Timestamp,
    pub spread: f64,
}

fn check_spread(spread: f64) -> Result<(), PricingError> {
    if spread.is_finite() && spread >= 0.0 {
        Ok(())
    } else {
        Err(PricingError::InvalidInput(format!("spread {spread} must be finite and non-negative")))
    }
}

pub fn survival_probability(spread: f64, t: Timestamp, theta: Timestamp, lgd: f64) -> Result<f64, PricingError> {
    if !(lgd > 0.0) {
        return Err(PricingError::InvalidInput(format!("LGD {lgd} must be positive")));
    }
    check_spread(spread)?;
    let tau = year_fraction(t, theta, DayCount::Act360)?;
    Ok((-spread * tau / lgd).exp())
}

/// Coupon strip reduced to ACT/360 times measured from the evaluation time.
///
/// The annuity at any spread is then a sum of exponentials over these nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnuityTerms {
    /// (period accrual fraction, start offset from t, end offset from t) per coupon.
    periods: Vec<(f64, f64, f64)>,
    lgd: f64,
}

impl AnnuityTerms {
    pub fn new(t: Timestamp, schedule: &CouponSchedule, lgd: f64) -> Result<Self, PricingError> {
        if !(lgd > 0.0) {
            return Err(PricingError::InvalidInput(format!("LGD {lgd} must be positive")));
        }
        if schedule.dates.is_empty() {
            return Err(PricingError::Calendar(CalendarError::EmptySchedule(t, schedule.maturity)));
        }
        let periods = schedule
            .period_starts()
            .zip(&schedule.dates)
            .map(|(start, end)| {
                let start = Timestamp::midnight(start).max(t);
                let end = Timestamp::midnight(*end);
                let frac = start.days_until(&end) / 360.0;
                let x0 = t.days_until(&start) / 360.0;
                let x1 = t.days_until(&end) / 360.0;
                (frac, x0, x1)
            })
            .collect();
        Ok(Self { periods, lgd })
    }

    pub fn value(&self, spread: f64) -> f64 {
        let h = spread / self.lgd;
        self.periods
            .iter()
            .map(|&(frac, x0, x1)| frac * 0.5 * ((-h * x0).exp() + (-h * x1).exp()))
            .sum()
    }

    /// d(annuity)/d(spread).
    pub fn derivative(&self, spread: f64) -> f64 {
        let h = spread / self.lgd;
        self.periods
            .iter()
            .map(|&(frac, x0, x1)| -frac * 0.5 * (x0 * (-h * x0).exp() + x1 * (-h * x1).exp()) / self.lgd)
            .sum()
    }

    /// Sum of period fractions, the zero-spread annuity.
    pub fn total_fraction(&self) -> f64 {
        self.periods.iter().map(|p| p.0).sum()
    }
}

/// Survival-weighted strip of coupon fractions seen from `t`.
pub fn annuity(spread: f64, t: Timestamp, schedule: &CouponSchedule, lgd: f64) -> Result<f64, PricingError> {
    check_spread(spread)?;
    Ok(AnnuityTerms::new(t, schedule, lgd)?.value(spread))
}

/// Accrued coupon fraction since the last coupon date, with the extra day.
///
/// Zero on the coupon date itself, so a par trade on a coupon date has zero upfront.
pub fn accrual_fraction(t: Timestamp, schedule: &CouponSchedule) -> f64 {
    if t.date() == schedule.accrual_start {
        0.0
    } else {
        (Timestamp::midnight(schedule.accrual_start).days_until(&t) + 1.0) / 360.0
    }
}

/// Everything needed to value the index upfront at a fixed time for any spread.
#[derive(Debug, Clone, PartialEq)]
pub struct UpfrontTerms {
    annuity: AnnuityTerms,
    coupon: f64,
    accrual: f64,
}

impl UpfrontTerms {
    pub fn new(t: Timestamp, spec: &IndexSpec) -> Result<Self, PricingError> {
        spec.validate()?;
        let schedule = coupon_schedule(t, spec.maturity)?;
        Ok(Self {
            annuity: AnnuityTerms::new(t, &schedule, spec.lgd)?,
            coupon: spec.coupon,
            accrual: accrual_fraction(t, &schedule),
        })
    }

    /// Upfront as a fraction of notional, received by the protection buyer.
    pub fn value(&self, spread: f64) -> f64 {
        (self.coupon - spread) * self.annuity.value(spread) + self.coupon * self.accrual
    }

    pub fn derivative(&self, spread: f64) -> f64 {
        -self.annuity.value(spread) + (self.coupon - spread) * self.annuity.derivative(spread)
    }

    pub fn annuity(&self) -> &AnnuityTerms {
        &self.annuity
    }
}

/// Upfront as a fraction of notional, received by the protection buyer.
pub fn upfront(spread: f64, t: Timestamp, spec: &IndexSpec) -> Result<f64, PricingError> {
    check_spread(spread)?;
    Ok(UpfrontTerms::new(t, spec)?.value(spread))
}

/// Forward spread adjusted for protection running from `t` rather than `expiry`.
pub fn adjusted_forward(spread: f64, t: Timestamp, expiry: Timestamp, spec: &IndexSpec) -> Result<f64, PricingError> {
    check_spread(spread)?;
    let terms = OptionTerms::new(t, expiry, spec)?;
    Ok(terms.forward(spread))
}

/// Time-dependent pieces of an option valuation at a fixed evaluation time.
#[derive(Debug, Clone, PartialEq)]
struct OptionTerms {
    /// Annuity of the strip from expiry to maturity, survival measured from expiry.
    forward_annuity: AnnuityTerms,
    /// τ(t, T) in ACT/360, for the survival probability to expiry.
    tau_to_expiry: f64,
    /// τ̄(t, T) in ACT/365, for the Black variance.
    tau_bar: f64,
    lgd: f64,
}

impl OptionTerms {
    fn new(t: Timestamp, expiry: Timestamp, spec: &IndexSpec) -> Result<Self, PricingError> {
        spec.validate()?;
        if t > expiry {
            return Err(PricingError::Expired { t, expiry });
        }
        if expiry.date() >= spec.maturity {
            return Err(PricingError::DegenerateAnnuity { expiry, maturity: spec.maturity });
        }
        let schedule = coupon_schedule(expiry, spec.maturity)
            .map_err(|_| PricingError::DegenerateAnnuity { expiry, maturity: spec.maturity })?;
        Ok(Self {
            forward_annuity: AnnuityTerms::new(expiry, &schedule, spec.lgd)?,
            tau_to_expiry: year_fraction(t, expiry, DayCount::Act360)?,
            tau_bar: year_fraction(t, expiry, DayCount::Act365)?,
            lgd: spec.lgd,
        })
    }

    fn survival_to_expiry(&self, spread: f64) -> f64 {
        (-spread * self.tau_to_expiry / self.lgd).exp()
    }

    fn forward(&self, spread: f64) -> f64 {
        spread + self.lgd * (1.0 - self.survival_to_expiry(spread)) / self.forward_annuity.value(spread)
    }

    /// Option value per unit notional, together with the forward and annuity used.
    fn value(&self, kind: OptionKind, spread: f64, strike: f64, vol: f64) -> f64 {
        let annuity = self.forward_annuity.value(spread);
        let fwd = self.forward(spread);
        let intrinsic_only = self.tau_bar <= 0.0;
        let undiscounted = if intrinsic_only {
            match kind {
                OptionKind::Payer => (fwd - strike).max(0.0),
                OptionKind::Receiver => (strike - fwd).max(0.0),
            }
        } else {
            let (d, e) = black_d(fwd, strike, vol, self.tau_bar);
            match kind {
                OptionKind::Payer => norm_cdf(d) * fwd - norm_cdf(e) * strike,
                OptionKind::Receiver => norm_cdf(-e) * strike - norm_cdf(-d) * fwd,
            }
        };
        undiscounted.max(0.0) * annuity
    }

    /// Chain-rule derivative of the per-notional option value w.r.t. the spot spread.
    fn value_derivative(&self, kind: OptionKind, spread: f64, strike: f64, vol: f64) -> f64 {
        let annuity = self.forward_annuity.value(spread);
        let d_annuity = self.forward_annuity.derivative(spread);
        let surv = self.survival_to_expiry(spread);
        let fwd = spread + self.lgd * (1.0 - surv) / annuity;
        let d_fwd = 1.0 + self.tau_to_expiry * surv / annuity - self.lgd * (1.0 - surv) * d_annuity / (annuity * annuity);
        let (black, d_black) = if self.tau_bar <= 0.0 {
            match kind {
                OptionKind::Payer if fwd > strike => (fwd - strike, 1.0),
                OptionKind::Receiver if fwd < strike => (strike - fwd, -1.0),
                _ => (0.0, 0.0),
            }
        } else {
            let (d, e) = black_d(fwd, strike, vol, self.tau_bar);
            match kind {
                OptionKind::Payer => (norm_cdf(d) * fwd - norm_cdf(e) * strike, norm_cdf(d)),
                OptionKind::Receiver => (norm_cdf(-e) * strike - norm_cdf(-d) * fwd, -norm_cdf(-d)),
            }
        };
        d_annuity * black + annuity * d_black * d_fwd
    }
}

fn black_d(fwd: f64, strike: f64, vol: f64, tau_bar: f64) -> (f64, f64) {
    let sd = vol * tau_bar.sqrt();
    let d = ((fwd / strike).ln() + 0.5 * sd * sd) / sd;
    (d, d - sd)
}

/// Prices one option at a fixed evaluation time for any spot spread.
///
/// Builds the coupon strips once; the hedging environment evaluates thousands of
/// spreads per timestamp through this.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionPricer {
    option: OptionTerms,
    upfront: UpfrontTerms,
    kind: OptionKind,
    strike: f64,
    vol: f64,
    notional: f64,
}

impl OptionPricer {
    pub fn new(t: Timestamp, opt: &OptionSpec, spec: &IndexSpec) -> Result<Self, PricingError> {
        opt.validate(spec)?;
        Ok(Self {
            option: OptionTerms::new(t, opt.expiry, spec)?,
            upfront: UpfrontTerms::new(t, spec)?,
            kind: opt.kind,
            strike: opt.strike,
            vol: opt.volatility,
            notional: opt.notional,
        })
    }

    /// Option value in EUR.
    pub fn price(&self, spread: f64) -> f64 {
        self.option.value(self.kind, spread, self.strike, self.vol) * self.notional
    }

    pub fn forward(&self, spread: f64) -> f64 {
        self.option.forward(spread)
    }

    pub fn forward_annuity(&self, spread: f64) -> f64 {
        self.option.forward_annuity.value(spread)
    }

    pub fn upfront_terms(&self) -> &UpfrontTerms {
        &self.upfront
    }

    /// Index upfront, fraction of notional.
    pub fn upfront(&self, spread: f64) -> f64 {
        self.upfront.value(spread)
    }

    /// Central finite-difference hedge ratio with a 0.01 bp bump.
    ///
    /// Positive for payers: the fraction of the option notional of index
    /// protection to buy against a long payer.
    pub fn hedge_ratio(&self, spread: f64) -> Result<f64, PricingError> {
        let h = HEDGE_BUMP.min(spread * 0.5).max(f64::MIN_POSITIVE);
        let (lo, hi) = (spread - h, spread + h);
        let d_opt = self.option.value(self.kind, hi, self.strike, self.vol)
            - self.option.value(self.kind, lo, self.strike, self.vol);
        let d_upf = self.upfront.value(hi) - self.upfront.value(lo);
        let slope = d_upf / (2.0 * h);
        if slope.abs() < 1e-12 {
            return Err(PricingError::SingularHedge(slope));
        }
        Ok(-d_opt / d_upf)
    }

    /// Chain-rule hedge ratio; agrees with [`Self::hedge_ratio`] up to bump error.
    pub fn hedge_ratio_analytic(&self, spread: f64) -> Result<f64, PricingError> {
        let d_opt = self.option.value_derivative(self.kind, spread, self.strike, self.vol);
        let d_upf = self.upfront.derivative(spread);
        if d_upf.abs() < 1e-12 {
            return Err(PricingError::SingularHedge(d_upf));
        }
        Ok(-d_opt / d_upf)
    }
}

/// Option value in EUR under the Black formula on the adjusted forward.
///
/// At expiry the option is worth its intrinsic value on the simplified payoff.
pub fn option_price(mkt: MarketState, opt: &OptionSpec, spec: &IndexSpec) -> Result<f64, PricingError> {
    check_spread(mkt.spread)?;
    Ok(OptionPricer::new(mkt.t, opt, spec)?.price(mkt.spread))
}

/// Delta hedge `N_h = -(∂Pay/∂S) / (∂Upf/∂S)` as a fraction of the option notional.
pub fn hedge_ratio(mkt: MarketState, opt: &OptionSpec, spec: &IndexSpec) -> Result<f64, PricingError> {
    check_spread(mkt.spread)?;
    OptionPricer::new(mkt.t, opt, spec)?.hedge_ratio(mkt.spread)
}

//! Dates, day counts, IMM coupon schedules and the intraday trading grid.
//!
//! Every time quantity is measured with minute resolution. Year fractions are
//! fractional: an interval of 12 hours counts as half a day.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use thiserror::Error;

/// First decision time of a trading day.
pub const SESSION_OPEN: (u32, u32) = (9, 30);
/// Last decision time of a trading day.
pub const SESSION_CLOSE: (u32, u32) = (17, 30);

const SESSION_MINUTES: i64 = 8 * 60;
const MINUTES_PER_DAY: f64 = 1440.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalendarError {
    #[error("cannot parse timestamp `{0}` (expected YYYY-MM-DDTHH:MM)")]
    Parse(String),
    #[error("episode must start on a weekday, got {0}")]
    WeekendStart(Timestamp),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("interval runs backwards: {0} > {1}")]
    Backwards(Timestamp, Timestamp),
    #[error("empty coupon schedule between {0} and maturity {1}")]
    EmptySchedule(Timestamp, NaiveDate),
    #[error("index maturity {0} is not a 20 June / 20 December date")]
    NonImmMaturity(NaiveDate),
}

/// A calendar date and time of day with minute resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(NaiveDateTime);

impl Timestamp {
    pub fn new(date: NaiveDate, hour: u32, minute: u32) -> Option<Self> {
        let time = NaiveTime::from_hms_opt(hour, minute, 0)?;
        Some(Self(date.and_time(time)))
    }

    /// Convenience constructor; panics on an invalid date, intended for literals.
    pub fn ymd_hm(year: i32, month: u32, day: u32, hour: u32, minute: u32) -> Self {
        NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| Self::new(d, hour, minute))
            .unwrap_or_else(|| panic!("invalid timestamp {year}-{month}-{day} {hour}:{minute}"))
    }

    pub fn midnight(date: NaiveDate) -> Self {
        Self(date.and_time(NaiveTime::MIN))
    }

    pub fn date(&self) -> NaiveDate {
        self.0.date()
    }

    pub fn hour(&self) -> u32 {
        self.0.hour()
    }

    pub fn minute(&self) -> u32 {
        self.0.minute()
    }

    pub fn minutes_of_day(&self) -> u32 {
        self.0.hour() * 60 + self.0.minute()
    }

    pub fn is_weekday(&self) -> bool {
        is_weekday(self.date())
    }

    pub fn add_minutes(&self, minutes: i64) -> Self {
        Self(self.0 + Duration::minutes(minutes))
    }

    /// Signed minutes from `self` to `later`.
    pub fn minutes_until(&self, later: &Timestamp) -> i64 {
        (later.0 - self.0).num_minutes()
    }

    /// Signed fractional days from `self` to `later`.
    pub fn days_until(&self, later: &Timestamp) -> f64 {
        self.minutes_until(later) as f64 / MINUTES_PER_DAY
    }

    pub fn hours_until(&self, later: &Timestamp) -> f64 {
        self.minutes_until(later) as f64 / 60.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%dT%H:%M"))
    }
}

impl FromStr for Timestamp {
    type Err = CalendarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M")
            .or_else(|_| {
                NaiveDate::parse_from_str(s, "%Y-%m-%d").map(|d| d.and_time(NaiveTime::MIN))
            })
            .map(Self)
            .map_err(|_| CalendarError::Parse(s.to_string()))
    }
}

impl From<NaiveDate> for Timestamp {
    fn from(date: NaiveDate) -> Self {
        Self::midnight(date)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DayCount {
    Act360,
    Act365,
}

impl DayCount {
    fn denominator(self) -> f64 {
        match self {
            DayCount::Act360 => 360.0,
            DayCount::Act365 => 365.0,
        }
    }
}

/// Fractional days between `d1` and `d2` over the convention's denominator.
pub fn year_fraction(d1: Timestamp, d2: Timestamp, convention: DayCount) -> Result<f64, CalendarError> {
    if d1 > d2 {
        return Err(CalendarError::Backwards(d1, d2));
    }
    Ok(d1.days_until(&d2) / convention.denominator())
}

pub fn is_weekday(date: NaiveDate) -> bool {
    !matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Following-weekday adjustment.
pub fn following_business_day(date: NaiveDate) -> NaiveDate {
    let mut d = date;
    while !is_weekday(d) {
        d = d.succ_opt().expect("date overflow");
    }
    d
}

fn next_weekday(date: NaiveDate) -> NaiveDate {
    following_business_day(date.succ_opt().expect("date overflow"))
}

/// The irregular sequence of decision times of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TradingGrid {
    points: Vec<Timestamp>,
    elapsed_hours: Vec<f64>,
    day_index: Vec<usize>,
    steps_per_day: usize,
}

impl TradingGrid {
    /// Builds a grid from explicit timestamps, e.g. the marks of a real data episode.
    ///
    /// Points are grouped into trading days by calendar date; every day must hold
    /// exactly `steps_per_day` points.
    pub fn from_timestamps(points: Vec<Timestamp>, steps_per_day: usize) -> Result<Self, CalendarError> {
        if steps_per_day < 2 {
            return Err(CalendarError::InvalidGrid("steps_per_day must be at least 2".into()));
        }
        if points.is_empty() || points.len() % steps_per_day != 0 {
            return Err(CalendarError::InvalidGrid(format!(
                "{} points is not a whole number of {steps_per_day}-step days",
                points.len()
            )));
        }
        if let Some(w) = points.windows(2).find(|w| w[0] >= w[1]) {
            return Err(CalendarError::InvalidGrid(format!(
                "timestamps not strictly increasing at {}",
                w[1]
            )));
        }
        let mut day_index = Vec::with_capacity(points.len());
        for (day, chunk) in points.chunks(steps_per_day).enumerate() {
            let date = chunk[0].date();
            if chunk.iter().any(|p| p.date() != date) {
                return Err(CalendarError::InvalidGrid(format!(
                    "trading day {day} starting {} spans several dates",
                    chunk[0]
                )));
            }
            day_index.extend(std::iter::repeat_n(day, steps_per_day));
        }
        let elapsed_hours = points.windows(2).map(|w| w[0].hours_until(&w[1])).collect();
        Ok(Self { points, elapsed_hours, day_index, steps_per_day })
    }

    pub fn points(&self) -> &[Timestamp] {
        &self.points
    }

    /// Hours elapsed over each transition; one entry fewer than `points`.
    pub fn elapsed_hours(&self) -> &[f64] {
        &self.elapsed_hours
    }

    pub fn day_index(&self) -> &[usize] {
        &self.day_index
    }

    pub fn steps_per_day(&self) -> usize {
        self.steps_per_day
    }

    pub fn n_days(&self) -> usize {
        self.points.len() / self.steps_per_day
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Timestamp {
        self.points[0]
    }

    pub fn last(&self) -> Timestamp {
        *self.points.last().expect("grid is never empty")
    }
}

/// Builds `n_days` consecutive weekdays of `steps_per_day` decision times between
/// 09:30 and 17:30.
///
/// With 17 steps per day the intraday gap is exactly 30 minutes. Other densities
/// spread the 8-hour session evenly, rounding each mark to the minute.
pub fn build_episode_grid(start_date: Timestamp, n_days: usize, steps_per_day: usize) -> Result<TradingGrid, CalendarError> {
    if !start_date.is_weekday() {
        return Err(CalendarError::WeekendStart(start_date));
    }
    if n_days == 0 {
        return Err(CalendarError::InvalidGrid("n_days must be at least 1".into()));
    }
    if steps_per_day < 2 {
        return Err(CalendarError::InvalidGrid("steps_per_day must be at least 2".into()));
    }
    let offsets: Vec<i64> = (0..steps_per_day)
        .map(|k| {
            let exact = k as f64 * SESSION_MINUTES as f64 / (steps_per_day - 1) as f64;
            exact.round() as i64
        })
        .collect();
    let mut points = Vec::with_capacity(n_days * steps_per_day);
    let mut date = start_date.date();
    for day in 0..n_days {
        if day > 0 {
            date = next_weekday(date);
        }
        let open = Timestamp::new(date, SESSION_OPEN.0, SESSION_OPEN.1).expect("valid open");
        points.extend(offsets.iter().map(|m| open.add_minutes(*m)));
    }
    TradingGrid::from_timestamps(points, steps_per_day)
}

/// Premium-leg coupon dates seen from an evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct CouponSchedule {
    /// Adjusted coupon date on or before the evaluation date; start of accrual.
    pub accrual_start: NaiveDate,
    /// Start of the first included coupon period.
    pub first_period_start: NaiveDate,
    /// Coupon dates strictly after t + 1 day, up to and including the maturity.
    pub dates: Vec<NaiveDate>,
    pub maturity: NaiveDate,
}

impl CouponSchedule {
    /// Start date of each included coupon period, aligned with `dates`.
    pub fn period_starts(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        std::iter::once(self.first_period_start).chain(self.dates.iter().copied()).take(self.dates.len())
    }
}

pub fn is_imm_maturity(date: NaiveDate) -> bool {
    date.day() == 20 && matches!(date.month(), 6 | 12)
}

/// All adjusted quarterly coupon dates up to `maturity`, from the quarter before `from`.
fn adjusted_coupon_dates(from: NaiveDate, maturity: NaiveDate) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let mut year = from.year() - 1;
    'outer: loop {
        for month in [3, 6, 9, 12] {
            let raw = NaiveDate::from_ymd_opt(year, month, 20).expect("valid IMM date");
            if raw > maturity {
                break 'outer;
            }
            if raw == maturity {
                out.push(raw);
                break 'outer;
            }
            out.push(following_business_day(raw));
        }
        year += 1;
    }
    out
}

/// The strip of coupon dates in (t + 1 day, t_n].
///
/// Intermediate dates follow the next weekday when the 20th falls on a weekend;
/// the maturity itself is never adjusted.
pub fn coupon_schedule(t: Timestamp, maturity: NaiveDate) -> Result<CouponSchedule, CalendarError> {
    if !is_imm_maturity(maturity) {
        return Err(CalendarError::NonImmMaturity(maturity));
    }
    let today = t.date();
    if today >= maturity {
        return Err(CalendarError::EmptySchedule(t, maturity));
    }
    let all = adjusted_coupon_dates(today, maturity);
    let accrual_start = *all
        .iter()
        .rev()
        .find(|d| **d <= today)
        .expect("coupon list starts a year before t");
    let cutoff = today + Duration::days(1);
    let first = all
        .iter()
        .position(|d| *d > cutoff)
        .ok_or(CalendarError::EmptySchedule(t, maturity))?;
    Ok(CouponSchedule {
        accrual_start,
        first_period_start: all[first - 1],
        dates: all[first..].to_vec(),
        maturity,
    })
}

/// Coupon payments in `(from, to]`: (period start, payment date) pairs of adjusted dates.
///
/// Used to book the running coupon on a held index position between two marks.
pub fn coupon_payments_between(from: NaiveDate, to: NaiveDate, maturity: NaiveDate) -> Vec<(NaiveDate, NaiveDate)> {
    if to <= from {
        return Vec::new();
    }
    let all = adjusted_coupon_dates(from, maturity.max(from));
    all.windows(2)
        .filter(|w| w[1] > from && w[1] <= to)
        .map(|w| (w[0], w[1]))
        .collect()
}

//! Dealer quote ingestion, outlier cleaning, resampling onto the trading grid,
//! episode slicing and the bid/ask transaction-cost functional.
//!
//! Quotes and bid/ask widths are in basis points at the file boundary; the
//! pricing layer works in decimals.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::calendar::{build_episode_grid, is_weekday, CalendarError, Timestamp, TradingGrid};
use crate::pricing::{IndexSpec, PricingError, UpfrontTerms};

pub const BP: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed quote rows:\n{}", .0.join("\n"))]
    Malformed(Vec<String>),
    #[error("snapshot at {0} has no {1} quotes")]
    EmptySide(Timestamp, &'static str),
    #[error("clean series timestamps not strictly increasing at {0}")]
    Unordered(Timestamp),
    #[error("series holds {available} complete trading days, fewer than one {needed}-day episode")]
    TooShort { available: usize, needed: usize },
    #[error(transparent)]
    Calendar(#[from] CalendarError),
    #[error(transparent)]
    Pricing(#[from] PricingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DealerQuote {
    pub dealer_id: String,
    pub bid: f64,
    pub ask: f64,
}

/// All dealer quotes observed at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteSnapshot {
    pub timestamp: Timestamp,
    pub quotes: Vec<DealerQuote>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CleaningMode {
    /// Drop quotes further than two population standard deviations from the
    /// side mean, then average the survivors.
    #[default]
    TwoSigma,
    /// Median of the unfiltered quotes.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanedQuote {
    pub bid: f64,
    pub ask: f64,
    pub mid: f64,
    pub bidask: f64,
    pub discarded_bids: usize,
    pub discarded_asks: usize,
}

/// Returns the applicable level of one side and how many quotes were discarded.
pub fn clean_side(values: &[f64], mode: CleaningMode) -> Option<(f64, usize)> {
    if values.is_empty() {
        return None;
    }
    match mode {
        CleaningMode::Median => {
            let mut v = values.to_vec();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let med = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
            Some((med, 0))
        }
        CleaningMode::TwoSigma => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            if values.len() < 3 {
                return Some((mean, 0));
            }
            let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let kept: Vec<f64> = values.iter().copied().filter(|v| (v - mean).abs() <= 2.0 * sd).collect();
            let level = kept.iter().sum::<f64>() / kept.len() as f64;
            Some((level, values.len() - kept.len()))
        }
    }
}

pub fn clean_snapshot(snap: &QuoteSnapshot, mode: CleaningMode) -> Result<CleanedQuote, DataError> {
    let bids: Vec<f64> = snap.quotes.iter().map(|q| q.bid).collect();
    let asks: Vec<f64> = snap.quotes.iter().map(|q| q.ask).collect();
    let (bid, discarded_bids) = clean_side(&bids, mode).ok_or(DataError::EmptySide(snap.timestamp, "bid"))?;
    let (ask, discarded_asks) = clean_side(&asks, mode).ok_or(DataError::EmptySide(snap.timestamp, "ask"))?;
    Ok(CleanedQuote { bid, ask, mid: 0.5 * (bid + ask), bidask: ask - bid, discarded_bids, discarded_asks })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleanPoint {
    pub timestamp: Timestamp,
    pub mid_bp: f64,
    pub bidask_bp: f64,
}

/// Mid and bid/ask series in bp with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CleanSeries {
    points: Vec<CleanPoint>,
}

impl CleanSeries {
    pub fn new(points: Vec<CleanPoint>) -> Result<Self, DataError> {
        if let Some(w) = points.windows(2).find(|w| w[0].timestamp >= w[1].timestamp) {
            return Err(DataError::Unordered(w[1].timestamp));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CleanPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CleaningReport {
    pub snapshots: usize,
    pub quotes: usize,
    pub discarded_bids: usize,
    pub discarded_asks: usize,
    /// Snapshots whose applicable bid exceeds the applicable ask. Reported, not fixed.
    pub crossed: Vec<Timestamp>,
}

pub fn clean_all(snapshots: &[QuoteSnapshot], mode: CleaningMode) -> Result<(CleanSeries, CleaningReport), DataError> {
    let mut report = CleaningReport { snapshots: snapshots.len(), ..Default::default() };
    let mut points = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        let c = clean_snapshot(snap, mode)?;
        report.quotes += snap.quotes.len();
        report.discarded_bids += c.discarded_bids;
        report.discarded_asks += c.discarded_asks;
        if c.bid > c.ask {
            report.crossed.push(snap.timestamp);
        }
        points.push(CleanPoint { timestamp: snap.timestamp, mid_bp: c.mid, bidask_bp: c.bidask });
    }
    Ok((CleanSeries::new(points)?, report))
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

fn create(path: &Path) -> Result<File, DataError> {
    File::create(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

/// Parses `timestamp,dealer_id,bid_bp,ask_bp` rows into snapshots sorted by time.
pub fn read_quotes<R: Read>(input: R) -> Result<Vec<QuoteSnapshot>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let expected = ["timestamp", "dealer_id", "bid_bp", "ask_bp"];
    if headers.len() > 0 && headers.iter().ne(expected.iter().copied()) {
        return Err(DataError::Malformed(vec![format!(
            "line 1: header {:?}, expected {}",
            headers.iter().collect::<Vec<_>>(),
            expected.join(",")
        )]));
    }
    let mut by_time: BTreeMap<Timestamp, Vec<DealerQuote>> = BTreeMap::new();
    let mut bad = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                bad.push(format!("line {line}: {e}"));
                continue;
            }
        };
        if rec.len() != 4 {
            bad.push(format!("line {line}: expected 4 fields, found {}", rec.len()));
            continue;
        }
        let ts = rec[0].parse::<Timestamp>();
        let bid = rec[2].parse::<f64>();
        let ask = rec[3].parse::<f64>();
        match (ts, bid, ask) {
            (Ok(ts), Ok(bid), Ok(ask)) if bid > 0.0 && ask > 0.0 && bid.is_finite() && ask.is_finite() => {
                by_time.entry(ts).or_default().push(DealerQuote { dealer_id: rec[1].to_string(), bid, ask });
            }
            (Err(e), _, _) => bad.push(format!("line {line}: {e}")),
            _ => bad.push(format!("line {line}: bid/ask must be positive numbers, got `{}`,`{}`", &rec[2], &rec[3])),
        }
    }
    if !bad.is_empty() {
        return Err(DataError::Malformed(bad));
    }
    Ok(by_time.into_iter().map(|(timestamp, quotes)| QuoteSnapshot { timestamp, quotes }).collect())
}

pub fn load_quotes(path: &Path) -> Result<Vec<QuoteSnapshot>, DataError> {
    read_quotes(open(path)?)
}

pub fn write_quotes<W: Write>(snapshots: &[QuoteSnapshot], out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "dealer_id", "bid_bp", "ask_bp"])?;
    for snap in snapshots {
        for q in &snap.quotes {
            w.write_record([snap.timestamp.to_string(), q.dealer_id.clone(), q.bid.to_string(), q.ask.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn save_quotes(snapshots: &[QuoteSnapshot], path: &Path) -> Result<(), DataError> {
    write_quotes(snapshots, create(path)?)
}

pub fn write_clean_series<W: Write>(series: &CleanSeries, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "mid_bp", "bidask_bp"])?;
    for p in series.points() {
        w.write_record([p.timestamp.to_string(), p.mid_bp.to_string(), p.bidask_bp.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_clean_series<R: Read>(input: R) -> Result<CleanSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut points = Vec::new();
    let mut bad = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed = (
            rec.get(0).map(str::parse::<Timestamp>),
            rec.get(1).map(str::parse::<f64>),
            rec.get(2).map(str::parse::<f64>),
        );
        match parsed {
            (Some(Ok(timestamp)), Some(Ok(mid_bp)), Some(Ok(bidask_bp))) if bidask_bp >= 0.0 && mid_bp > 0.0 => {
                points.push(CleanPoint { timestamp, mid_bp, bidask_bp })
            }
            _ => bad.push(format!("line {}: cannot parse clean-series row", i + 2)),
        }
    }
    if !bad.is_empty() {
        return Err(DataError::Malformed(bad));
    }
    CleanSeries::new(points)
}

pub fn load_clean_series(path: &Path) -> Result<CleanSeries, DataError> {
    read_clean_series(open(path)?)
}

pub fn save_clean_series(series: &CleanSeries, path: &Path) -> Result<(), DataError> {
    write_clean_series(series, create(path)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FillReport {
    pub marks: usize,
    pub filled: usize,
}

/// Resamples the series onto the session marks of every date it covers.
///
/// Each mark takes the latest observation at or before it; a mark with no exact
/// observation counts as a fill. Marks before the first observation take it.
pub fn fill_grid(series: &CleanSeries, steps_per_day: usize) -> Result<(CleanSeries, FillReport), DataError> {
    let mut dates: Vec<_> = series.points().iter().map(|p| p.timestamp.date()).collect();
    dates.dedup();
    let mut out = Vec::with_capacity(dates.len() * steps_per_day);
    let mut report = FillReport::default();
    let pts = series.points();
    let mut cursor = 0;
    for date in dates {
        let open = Timestamp::new(date, 9, 30).expect("valid session open");
        let day_grid = build_episode_grid(open, 1, steps_per_day)?;
        for mark in day_grid.points() {
            while cursor + 1 < pts.len() && pts[cursor + 1].timestamp <= *mark {
                cursor += 1;
            }
            let src = pts[cursor];
            report.marks += 1;
            if src.timestamp != *mark {
                report.filled += 1;
            }
            out.push(CleanPoint { timestamp: *mark, mid_bp: src.mid_bp, bidask_bp: src.bidask_bp });
        }
    }
    Ok((CleanSeries::new(out)?, report))
}

/// One real-data episode: grid plus spreads and bid/ask widths as decimals.
#[derive(Debug, Clone, PartialEq)]
pub struct DataEpisode {
    pub grid: Arc<TradingGrid>,
    pub spreads: Vec<f64>,
    pub bidask: Vec<f64>,
}

/// Non-overlapping consecutive windows of `n_days` complete trading days.
///
/// A day is complete when it holds exactly `steps_per_day` points; an
/// incomplete day closes the current window. The trailing partial window is dropped.
pub fn slice_episodes(series: &CleanSeries, n_days: usize, steps_per_day: usize) -> Result<Vec<DataEpisode>, DataError> {
    let mut days: Vec<&[CleanPoint]> = Vec::new();
    let pts = series.points();
    let mut start = 0;
    while start < pts.len() {
        let date = pts[start].timestamp.date();
        let end = pts[start..].iter().position(|p| p.timestamp.date() != date).map_or(pts.len(), |k| start + k);
        days.push(&pts[start..end]);
        start = end;
    }
    let mut episodes = Vec::new();
    let mut window: Vec<&[CleanPoint]> = Vec::with_capacity(n_days);
    let mut complete_days = 0;
    for day in days {
        if day.len() != steps_per_day {
            window.clear();
            continue;
        }
        complete_days += 1;
        window.push(day);
        if window.len() == n_days {
            let flat: Vec<CleanPoint> = window.iter().flat_map(|d| d.iter().copied()).collect();
            let grid = TradingGrid::from_timestamps(flat.iter().map(|p| p.timestamp).collect(), steps_per_day)?;
            episodes.push(DataEpisode {
                grid: Arc::new(grid),
                spreads: flat.iter().map(|p| p.mid_bp * BP).collect(),
                bidask: flat.iter().map(|p| p.bidask_bp * BP).collect(),
            });
            window.clear();
        }
    }
    if episodes.is_empty() {
        return Err(DataError::TooShort { available: complete_days, needed: n_days });
    }
    Ok(episodes)
}

/// Trading days of the synthetic one-year sample: weekdays from 2020-07-01 to
/// 2021-05-14 less the TARGET closing days in that window.
pub fn synthetic_sample_days() -> Vec<NaiveDate> {
    let ymd = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
    let closed = [ymd(2020, 12, 25), ymd(2020, 12, 26), ymd(2021, 1, 1), ymd(2021, 4, 2), ymd(2021, 4, 5), ymd(2021, 5, 1)];
    let mut days = Vec::new();
    let mut d = ymd(2020, 7, 1);
    while d <= ymd(2021, 5, 14) {
        if is_weekday(d) && !closed.contains(&d) {
            days.push(d);
        }
        d = d.succ_opt().expect("in range");
    }
    days
}

/// Dealer quotes on every grid mark of [`synthetic_sample_days`].
///
/// The mid follows a lognormal walk from 60 bp (60% annual vol), the quoted
/// width drifts between 0.5 and 2 bp, eight dealers quote around it, and one
/// snapshot in twenty carries a single typo at ten times the level.
pub fn synthetic_quotes(steps_per_day: usize, seed: u64) -> Result<Vec<QuoteSnapshot>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mid, mut width) = (60.0f64, 1.0f64);
    let dt = 1.0 / (252.0 * steps_per_day as f64);
    let mut out = Vec::new();
    for day in synthetic_sample_days() {
        let open = Timestamp::new(day, 9, 30).expect("valid session open");
        for ts in build_episode_grid(open, 1, steps_per_day)?.points() {
            let z: f64 = rng.sample(StandardNormal);
            mid *= (-0.5 * 0.36 * dt + 0.6 * dt.sqrt() * z).exp();
            width = (width + 0.05 * rng.sample::<f64, _>(StandardNormal)).clamp(0.5, 2.0);
            let typo = (rng.random::<f64>() < 0.05).then(|| (rng.random_range(0..8), rng.random::<bool>()));
            let quotes = (0..8)
                .map(|i| {
                    let centre = mid + 0.1 * rng.sample::<f64, _>(StandardNormal);
                    let mut bid = centre - width / 2.0;
                    let mut ask = centre + width / 2.0;
                    match typo {
                        Some((d, true)) if d == i => bid *= 10.0,
                        Some((d, false)) if d == i => ask *= 10.0,
                        _ => {}
                    }
                    DealerQuote { dealer_id: format!("D{}", i + 1), bid: bid.max(0.01), ask: ask.max(0.02) }
                })
                .collect();
            out.push(QuoteSnapshot { timestamp: *ts, quotes });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TradeSide {
    BuyProtection,
    SellProtection,
}

/// Bid/ask width applied to trades.
#[derive(Debug, Clone, PartialEq)]
pub enum CostModel {
    /// Constant width in bp.
    Constant(f64),
    /// Width in bp at each grid point of an episode.
    Series(Arc<Vec<f64>>),
}

impl CostModel {
    /// Width in bp at grid point `step`.
    pub fn bidask_bp(&self, step: usize) -> f64 {
        match self {
            CostModel::Constant(ba) => *ba,
            CostModel::Series(v) => v[step],
        }
    }

    pub fn validate(&self, len: usize) -> Result<(), String> {
        match self {
            CostModel::Constant(ba) if *ba >= 0.0 && ba.is_finite() => Ok(()),
            CostModel::Constant(ba) => Err(format!("bid/ask {ba} must be non-negative")),
            CostModel::Series(v) if v.len() != len => Err(format!("bid/ask series has {} points, path has {len}", v.len())),
            CostModel::Series(v) => match v.iter().find(|b| !(**b >= 0.0)) {
                Some(b) => Err(format!("bid/ask {b} must be non-negative")),
                None => Ok(()),
            },
        }
    }
}

/// Cost per unit notional of crossing half the bid/ask at a fixed time.
pub fn unit_cost(upfront: &UpfrontTerms, spread: f64, bidask: f64, side: TradeSide) -> f64 {
    let shifted = match side {
        TradeSide::BuyProtection => spread + 0.5 * bidask,
        TradeSide::SellProtection => spread - 0.5 * bidask,
    };
    (upfront.value(shifted) - upfront.value(spread)).abs()
}

/// EUR cost of trading `notional` of index protection at spread `spread`.
///
/// `bidask_bp` is the full quote width in bp; half of it is paid.
pub fn transaction_cost(
    notional: f64,
    spread: f64,
    t: Timestamp,
    bidask_bp: f64,
    side: TradeSide,
    spec: &IndexSpec,
) -> Result<f64, DataError> {
    if notional == 0.0 || bidask_bp == 0.0 {
        return Ok(0.0);
    }
    let terms = UpfrontTerms::new(t, spec)?;
    Ok(notional.abs() * unit_cost(&terms, spread, bidask_bp * BP, side))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(bids: &[f64], asks: &[f64]) -> QuoteSnapshot {
        QuoteSnapshot {
            timestamp: Timestamp::ymd_hm(2020, 7, 1, 9, 30),
            quotes: bids
                .iter()
                .zip(asks)
                .enumerate()
                .map(|(i, (b, a))| DealerQuote { dealer_id: format!("D{i}"), bid: *b, ask: *a })
                .collect(),
        }
    }

    #[test]
    fn equal_quotes_are_kept() {
        let (level, dropped) = clean_side(&[60.0; 5], CleaningMode::TwoSigma).unwrap();
        assert_eq!(level, 60.0);
        assert_eq!(dropped, 0);
    }

    #[test]
    fn two_sigma_outlier_dropped() {
        let bids = [10.0, 10.0, 10.0, 10.0, 10.0, 100.0];
        // mean 25, population sd sqrt(1125) = 33.54, threshold 67.08 < 75.
        let (level, dropped) = clean_side(&bids, CleaningMode::TwoSigma).unwrap();
        assert_eq!(level, 10.0);
        assert_eq!(dropped, 1);
        // A second pass over the survivors discards nothing.
        assert_eq!(clean_side(&[10.0; 5], CleaningMode::TwoSigma).unwrap(), (10.0, 0));
    }

    #[test]
    fn ties_at_two_sigma_are_kept() {
        // Two points symmetric about the mean sit at exactly one sd; with three
        // points {0, 0, 3}: mean 1, sd sqrt(2), |3-1| = 2 <= 2.83.
        assert_eq!(clean_side(&[0.0, 0.0, 3.0], CleaningMode::TwoSigma).unwrap().1, 0);
    }

    #[test]
    fn small_samples_pass_through() {
        assert_eq!(clean_side(&[10.0, 100.0], CleaningMode::TwoSigma).unwrap(), (55.0, 0));
        assert!(clean_side(&[], CleaningMode::TwoSigma).is_none());
    }

    #[test]
    fn median_mode() {
        assert_eq!(clean_side(&[1.0, 9.0, 3.0], CleaningMode::Median).unwrap().0, 3.0);
        assert_eq!(clean_side(&[1.0, 9.0, 3.0, 5.0], CleaningMode::Median).unwrap().0, 4.0);
    }

    #[test]
    fn mid_and_bidask() {
        let c = clean_snapshot(&snap(&[59.5; 4], &[60.5; 4]), CleaningMode::TwoSigma).unwrap();
        assert_eq!((c.mid, c.bidask), (60.0, 1.0));
        let empty = QuoteSnapshot { timestamp: Timestamp::ymd_hm(2020, 7, 1, 9, 30), quotes: vec![] };
        assert!(matches!(clean_snapshot(&empty, CleaningMode::TwoSigma), Err(DataError::EmptySide(..))));
    }

    #[test]
    fn read_quotes_groups_and_sorts() {
        let text = "timestamp,dealer_id,bid_bp,ask_bp\n\
                    2020-07-01T10:00,A,60,61\n\
                    2020-07-01T09:30,A,59,60\n\
                    2020-07-01T09:30,B,59.5,60.5\n";
        let snaps = read_quotes(text.as_bytes()).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[0].quotes.len(), 2);
        assert_eq!(snaps[0].timestamp, Timestamp::ymd_hm(2020, 7, 1, 9, 30));
    }

    #[test]
    fn empty_file_gives_no_snapshots() {
        assert!(read_quotes("".as_bytes()).unwrap().is_empty());
        assert!(read_quotes("timestamp,dealer_id,bid_bp,ask_bp\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = "timestamp,dealer_id,bid_bp,ask_bp\n\
                    2020-07-01T09:30,A,59,60\n\
                    2020-07-01T09:30,B,abc,60\n\
                    yesterday,C,59,60\n";
        match read_quotes(text.as_bytes()) {
            Err(DataError::Malformed(lines)) => {
                assert_eq!(lines.len(), 2);
                assert!(lines[0].starts_with("line 3"));
                assert!(lines[1].starts_with("line 4"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quotes_round_trip() {
        let snaps = vec![snap(&[59.25, 60.125, 58.0], &[60.0, 61.5, 59.75])];
        let mut buf = Vec::new();
        write_quotes(&snaps, &mut buf).unwrap();
        assert_eq!(read_quotes(buf.as_slice()).unwrap(), snaps);
    }

    fn series_for_days(dates: &[NaiveDate], steps: usize) -> CleanSeries {
        let mut pts = Vec::new();
        for d in dates {
            let g = build_episode_grid(Timestamp::new(*d, 9, 30).unwrap(), 1, steps).unwrap();
            for ts in g.points() {
                pts.push(CleanPoint { timestamp: *ts, mid_bp: 100.0, bidask_bp: 1.0 });
            }
        }
        CleanSeries::new(pts).unwrap()
    }

    fn weekdays(from: NaiveDate, n: usize) -> Vec<NaiveDate> {
        let mut out = Vec::new();
        let mut d = from;
        while out.len() < n {
            if crate::calendar::is_weekday(d) {
                out.push(d);
            }
            d = d.succ_opt().unwrap();
        }
        out
    }

    #[test]
    fn synthetic_year_yields_five_episodes() {
        assert_eq!(synthetic_sample_days().len(), 224);
        let quotes = synthetic_quotes(17, 11).unwrap();
        let (series, report) = clean_all(&quotes, CleaningMode::TwoSigma).unwrap();
        assert!(report.discarded_bids + report.discarded_asks > 0);
        let (filled, _) = fill_grid(&series, 17).unwrap();
        let eps = slice_episodes(&filled, 40, 17).unwrap();
        assert_eq!(eps.len(), 5);
        assert!(eps.iter().all(|e| e.spreads.len() == 680 && e.bidask.iter().all(|b| *b > 0.0)));
    }

    #[test]
    fn exact_episode_slices_once() {
        let s = series_for_days(&weekdays(NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(), 40), 17);
        assert_eq!(s.len(), 680);
        let eps = slice_episodes(&s, 40, 17).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].spreads.len(), 680);
        assert_eq!(eps[0].spreads[0], 0.01);
        assert_eq!(eps[0].bidask[0], 1e-4);
    }

    #[test]
    fn one_point_short_gives_no_episode() {
        let s = series_for_days(&weekdays(NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(), 40), 17);
        let short = CleanSeries::new(s.points()[..679].to_vec()).unwrap();
        assert!(matches!(slice_episodes(&short, 40, 17), Err(DataError::TooShort { .. })));
    }

    #[test]
    fn full_calendar_year_of_weekdays_holds_six_windows() {
        let days = weekdays(NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(), 261);
        let s = series_for_days(&days, 17);
        assert_eq!(slice_episodes(&s, 40, 17).unwrap().len(), 6);
    }

    #[test]
    fn fill_grid_forward_fills_missing_marks() {
        let mut s = series_for_days(&weekdays(NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(), 2), 17).points().to_vec();
        s[3].mid_bp = 101.0;
        s.remove(4); // 11:30 on day one
        s.remove(17 - 1); // 09:30 on day two (index shifted by the removal above)
        let (filled, report) = fill_grid(&CleanSeries::new(s).unwrap(), 17).unwrap();
        assert_eq!(filled.len(), 34);
        assert_eq!(report.filled, 2);
        assert_eq!(filled.points()[4].mid_bp, 101.0);
        assert_eq!(filled.points()[4].timestamp, Timestamp::ymd_hm(2020, 7, 1, 11, 30));
    }

    #[test]
    fn cost_is_zero_without_trade_or_width() {
        let spec = IndexSpec::new(NaiveDate::from_ymd_opt(2026, 6, 20).unwrap(), 100e6);
        let t = Timestamp::ymd_hm(2021, 3, 24, 9, 30);
        assert_eq!(transaction_cost(0.0, 0.01, t, 1.0, TradeSide::BuyProtection, &spec).unwrap(), 0.0);
        assert_eq!(transaction_cost(1e8, 0.01, t, 0.0, TradeSide::SellProtection, &spec).unwrap(), 0.0);
    }

    #[test]
    fn one_bp_cost_on_hundred_million_is_about_half_bp_annuity() {
        let spec = IndexSpec::new(NaiveDate::from_ymd_opt(2026, 6, 20).unwrap(), 100e6);
        let t = Timestamp::ymd_hm(2021, 3, 24, 9, 30);
        let c = transaction_cost(1e8, 0.01, t, 1.0, TradeSide::BuyProtection, &spec).unwrap();
        let a = UpfrontTerms::new(t, &spec).unwrap().annuity().value(0.01);
        assert!((c / (1e8 * 0.5e-4 * a) - 1.0).abs() < 0.01, "{c}");
        assert!(c > 2.0e4 && c < 3.0e4);
    }

    #[test]
    fn cost_is_linear_in_notional() {
        let spec = IndexSpec::new(NaiveDate::from_ymd_opt(2026, 6, 20).unwrap(), 100e6);
        let t = Timestamp::ymd_hm(2021, 3, 24, 9, 30);
        let c1 = transaction_cost(1e7, 0.012, t, 1.5, TradeSide::SellProtection, &spec).unwrap();
        let c4 = transaction_cost(4e7, 0.012, t, 1.5, TradeSide::SellProtection, &spec).unwrap();
        assert_eq!(c4, 4.0 * c1);
    }
}

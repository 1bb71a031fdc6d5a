//! Clean dealer quotes: the two-sigma filter on a single snapshot, then a
//! synthetic year of quotes cleaned, resampled and sliced into 40-day episodes.
//!
//! cargo run --release --example clean_quotes -- [seed]

use cdx_hedge::market_data::{clean_all, clean_side, fill_grid, slice_episodes, synthetic_quotes, CleaningMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(1);

    let bids = [10.0, 10.0, 10.0, 10.0, 10.0, 100.0];
    let (mean, dropped) = clean_side(&bids, CleaningMode::TwoSigma).unwrap();
    let (median, _) = clean_side(&bids, CleaningMode::Median).unwrap();
    println!("quotes {bids:?}: two-sigma mean {mean} ({dropped} dropped), median {median}");

    let quotes = synthetic_quotes(17, seed)?;
    for mode in [CleaningMode::TwoSigma, CleaningMode::Median] {
        let (series, report) = clean_all(&quotes, mode)?;
        let (filled, _) = fill_grid(&series, 17)?;
        let episodes = slice_episodes(&filled, 40, 17)?;
        let mids: Vec<f64> = filled.points().iter().map(|p| p.mid_bp).collect();
        let widths: Vec<f64> = filled.points().iter().map(|p| p.bidask_bp).collect();
        let max_mid = mids.iter().cloned().fold(f64::MIN, f64::max);
        let mean_width = widths.iter().sum::<f64>() / widths.len() as f64;
        println!(
            "{mode:?}: {} snapshots, {} bids and {} asks dropped, max mid {max_mid:.1} bp, mean bid/ask {mean_width:.2} bp, {} episodes",
            report.snapshots,
            report.discarded_bids,
            report.discarded_asks,
            episodes.len()
        );
        for (i, e) in episodes.iter().enumerate() {
            println!("  episode {}: {} .. {}, start {:.1} bp", i + 1, e.grid.first(), e.grid.last(), e.spreads[0] * 1e4);
        }
    }
    Ok(())
}

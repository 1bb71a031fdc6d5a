//! Price the at-the-money payer and receiver on the 5y index and show the
//! forward, upfront and hedge ratio across spreads.
//!
//! cargo run --release --example price_option

use chrono::NaiveDate;
use cdx_hedge::calendar::Timestamp;
use cdx_hedge::pricing::{IndexSpec, OptionKind, OptionPricer, OptionSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let index = IndexSpec::new(NaiveDate::from_ymd_opt(2026, 6, 20).unwrap(), 100e6);
    let today = Timestamp::ymd_hm(2021, 3, 22, 9, 30);
    let expiry = Timestamp::ymd_hm(2021, 5, 14, 17, 30);
    let spec = |kind| OptionSpec { kind, strike: 0.01, expiry, volatility: 0.6, notional: index.notional };
    let payer = OptionPricer::new(today, &spec(OptionKind::Payer), &index)?;
    let receiver = OptionPricer::new(today, &spec(OptionKind::Receiver), &index)?;

    println!("{:>9} {:>11} {:>12} {:>12} {:>12} {:>8}", "spread_bp", "forward_bp", "payer_eur", "receiver_eur", "upfront_pct", "N_h");
    for s_bp in [60.0, 80.0, 100.0, 120.0, 150.0] {
        let s = s_bp * 1e-4;
        println!(
            "{s_bp:>9.0} {:>11.3} {:>12.0} {:>12.0} {:>12.4} {:>8.4}",
            payer.forward(s) * 1e4,
            payer.price(s),
            receiver.price(s),
            payer.upfront(s) * 100.0,
            payer.hedge_ratio(s)?
        );
    }
    let s = 0.01;
    let parity = payer.price(s) - receiver.price(s);
    let expected = (payer.forward(s) - 0.01) * payer.forward_annuity(s) * index.notional;
    println!("put-call parity residual at 100 bp: {:.3e} EUR", parity - expected);
    Ok(())
}

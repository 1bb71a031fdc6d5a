//! Property tests of the model invariants.

use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use proptest::prelude::*;

use cdx_hedge::calendar::{build_episode_grid, coupon_schedule, year_fraction, DayCount, Timestamp, TradingGrid};
use cdx_hedge::env::{delta_hedge_policy, run_policy, EnvConfig, PricedPath};
use cdx_hedge::evaluation::{evaluate, Hedger};
use cdx_hedge::market_data::{clean_side, transaction_cost, CleaningMode, CostModel, TradeSide};
use cdx_hedge::market_sim::{GbmParams, HestonParams, SpreadModel};
use cdx_hedge::pricing::{annuity, survival_probability, upfront, IndexSpec, OptionKind, OptionPricer, OptionSpec};
use cdx_hedge::trvo::{estimate_j, reward_volatility, transform_rewards, PolicyParams, TrajectoryBatch};

fn index() -> IndexSpec {
    IndexSpec::new(NaiveDate::from_ymd_opt(2026, 6, 20).unwrap(), 100e6)
}

fn t0() -> Timestamp {
    Timestamp::ymd_hm(2021, 3, 22, 9, 30)
}

fn weekday_start() -> impl Strategy<Value = Timestamp> {
    (0i64..2000).prop_map(|d| {
        let mut date = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap() + Duration::days(d);
        while !cdx_hedge::calendar::is_weekday(date) {
            date = date.succ_opt().unwrap();
        }
        Timestamp::new(date, 9, 30).unwrap()
    })
}

fn short_grid(days: usize, steps: usize) -> Arc<TradingGrid> {
    Arc::new(build_episode_grid(t0(), days, steps).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn elapsed_hours_sum_to_wall_clock(start in weekday_start(), days in 1usize..30, steps in 2usize..70) {
        let g = build_episode_grid(start, days, steps).unwrap();
        let total: f64 = g.elapsed_hours().iter().sum();
        prop_assert!((total - g.first().hours_until(&g.last())).abs() < 1e-9);
    }

    #[test]
    fn coupon_dates_follow_the_next_day(start in weekday_start()) {
        let s = coupon_schedule(start, NaiveDate::from_ymd_opt(2026, 6, 20).unwrap()).unwrap();
        let next = start.date().succ_opt().unwrap();
        prop_assert!(s.dates.iter().all(|d| *d >= next));
    }

    #[test]
    fn year_fractions_are_additive(a in 0i64..100_000, b in 0i64..100_000, c in 0i64..100_000) {
        let mut m = [a, b, c];
        m.sort();
        let ts: Vec<Timestamp> = m.iter().map(|x| t0().add_minutes(*x * 7)).collect();
        for dc in [DayCount::Act360, DayCount::Act365] {
            let ab = year_fraction(ts[0], ts[1], dc).unwrap();
            let bc = year_fraction(ts[1], ts[2], dc).unwrap();
            let ac = year_fraction(ts[0], ts[2], dc).unwrap();
            prop_assert!((ab + bc - ac).abs() < 1e-12);
        }
    }

    #[test]
    fn survival_is_a_decreasing_probability(s in 0.0f64..0.1, ds in 0.0f64..0.05, h1 in 0i64..4000, h2 in 0i64..4000) {
        let (lo, hi) = (h1.min(h2), h1.max(h2));
        let (t1, t2) = (t0().add_minutes(lo * 60), t0().add_minutes(hi * 60));
        let p1 = survival_probability(s, t0(), t1, 0.6).unwrap();
        let p2 = survival_probability(s, t0(), t2, 0.6).unwrap();
        let p3 = survival_probability(s + ds, t0(), t2, 0.6).unwrap();
        prop_assert!(p1 > 0.0 && p1 <= 1.0);
        prop_assert!(p2 <= p1 && p3 <= p2);
        prop_assert_eq!(survival_probability(s, t0(), t0(), 0.6).unwrap(), 1.0);
    }

    #[test]
    fn annuity_is_positive_and_decreasing_in_spread(s in 0.0005f64..0.05, ds in 0.0001f64..0.02) {
        let mat = NaiveDate::from_ymd_opt(2026, 6, 20).unwrap();
        let sched = coupon_schedule(t0(), mat).unwrap();
        let a = annuity(s, t0(), &sched, 0.6).unwrap();
        prop_assert!(a > 0.0);
        prop_assert!(annuity(s + ds, t0(), &sched, 0.6).unwrap() < a);
    }

    #[test]
    fn option_prices_are_monotone_and_at_parity(
        s in 0.002f64..0.04, ds in 0.0f64..0.01, k in 0.002f64..0.04, vol in 0.05f64..1.2, dv in 0.0f64..0.5, days in 1i64..360,
    ) {
        let spec = index();
        let expiry = t0().add_minutes(days * 24 * 60);
        let opt = |kind, v| OptionSpec { kind, strike: k, expiry, volatility: v, notional: spec.notional };
        let payer = OptionPricer::new(t0(), &opt(OptionKind::Payer, vol), &spec).unwrap();
        let payer_hi = OptionPricer::new(t0(), &opt(OptionKind::Payer, vol + dv), &spec).unwrap();
        let receiver = OptionPricer::new(t0(), &opt(OptionKind::Receiver, vol), &spec).unwrap();
        let (p, r) = (payer.price(s), receiver.price(s));
        prop_assert!(p >= 0.0 && r >= 0.0);
        prop_assert!(payer.price(s + ds) >= p - 1e-9 * p.abs().max(1.0));
        prop_assert!(receiver.price(s + ds) <= r + 1e-9 * r.abs().max(1.0));
        prop_assert!(payer_hi.price(s) >= p - 1e-9 * p.abs().max(1.0));
        let rhs = (payer.forward(s) - k) * payer.forward_annuity(s) * spec.notional;
        prop_assert!(((p - r) - rhs).abs() <= 1e-12 * (p.abs() + r.abs() + rhs.abs()));
    }

    #[test]
    fn bumped_hedge_ratio_matches_the_derivative(s in 0.004f64..0.03, k in 0.005f64..0.02, days in 5i64..120) {
        let spec = index();
        let opt = OptionSpec { kind: OptionKind::Payer, strike: k, expiry: t0().add_minutes(days * 24 * 60), volatility: 0.6, notional: spec.notional };
        let pricer = OptionPricer::new(t0(), &opt, &spec).unwrap();
        prop_assert!((pricer.hedge_ratio(s).unwrap() - pricer.hedge_ratio_analytic(s).unwrap()).abs() < 1e-4);
    }

    #[test]
    fn upfront_vanishes_at_the_coupon_on_a_roll_date(months in 0u32..20) {
        let d = NaiveDate::from_ymd_opt(2021, 3, 20).unwrap() + chrono::Months::new(3 * months);
        prop_assume!(cdx_hedge::calendar::is_weekday(d));
        let t = Timestamp::midnight(d);
        let spec = index();
        prop_assert!(upfront(spec.coupon, t, &spec).unwrap().abs() < 1e-12);
    }

    #[test]
    fn paths_are_positive_and_reproducible(seed in any::<u64>(), id in 0u64..1000, xi in 0.0f64..3.0, kappa in 0.0f64..10.0) {
        let g = short_grid(3, 17);
        let heston = SpreadModel::Heston(HestonParams { xi, kappa, ..HestonParams::default() });
        for model in [SpreadModel::Gbm(GbmParams::default()), heston] {
            let p = model.path(&g, seed, id);
            prop_assert!(p.spreads.iter().all(|s| *s > 0.0 && s.is_finite()));
            if let Some(v) = &p.variance {
                prop_assert!(v.iter().all(|x| *x >= 0.0));
            }
            prop_assert_eq!(&p, &model.path(&g, seed, id));
        }
    }

    #[test]
    fn cleaning_twice_discards_nothing_more(v in prop::collection::vec(50.0f64..52.0, 1..12), typo in prop::option::of(100.0f64..1000.0)) {
        let mut v = v;
        if let Some(x) = typo {
            v.push(x);
        }
        let survivors = two_sigma_survivors(&v);
        prop_assume!(two_sigma_survivors(&survivors).len() == survivors.len());
        let (m1, _) = clean_side(&v, CleaningMode::TwoSigma).unwrap();
        let (m2, dropped) = clean_side(&survivors, CleaningMode::TwoSigma).unwrap();
        prop_assert_eq!(dropped, 0);
        prop_assert!((m1 - m2).abs() <= 1e-12 * m1);
    }

    #[test]
    fn transaction_cost_is_linear_in_notional(n in 1.0f64..1e9, m in 1.0f64..1e9, s in 0.001f64..0.05, ba in 0.0f64..5.0) {
        let spec = index();
        for side in [TradeSide::BuyProtection, TradeSide::SellProtection] {
            let cn = transaction_cost(n, s, t0(), ba, side, &spec).unwrap();
            let cm = transaction_cost(m, s, t0(), ba, side, &spec).unwrap();
            prop_assert!(cn >= 0.0);
            prop_assert!((cn - n / m * cm).abs() <= 1e-13 * cn.abs().max(1e-300));
        }
    }

    #[test]
    fn j_shifts_and_volatility_is_invariant(r in prop::collection::vec(-5.0f64..5.0, 2..40), c in -100.0f64..100.0, gamma in 0.5f64..1.0) {
        let mut b = TrajectoryBatch { obs_dim: 1, ..Default::default() };
        b.rewards = r.clone();
        b.timesteps = (0..r.len()).map(|k| k % 7).collect();
        let shifted = TrajectoryBatch { rewards: r.iter().map(|x| x + c).collect(), ..b.clone() };
        let (j, js) = (estimate_j(&b, gamma), estimate_j(&shifted, gamma));
        prop_assert!((js - j - c).abs() < 1e-9);
        let (v, vs) = (reward_volatility(&b, j, gamma), reward_volatility(&shifted, js, gamma));
        prop_assert!((v - vs).abs() < 1e-9 * v.max(1.0));
        prop_assert_eq!(transform_rewards(&r, j, 0.0), r);
    }
}

fn two_sigma_survivors(v: &[f64]) -> Vec<f64> {
    if v.len() < 3 {
        return v.to_vec();
    }
    let mu = v.iter().sum::<f64>() / v.len() as f64;
    let sd = cdx_hedge::evaluation::population_std(v);
    v.iter().copied().filter(|x| (x - mu).abs() <= 2.0 * sd).collect()
}

fn priced(seed: u64, ba: f64, steps: usize) -> PricedPath {
    let g = short_grid(4, steps);
    let path = SpreadModel::Gbm(GbmParams::default()).path(&g, seed, 0);
    PricedPath::standalone(&EnvConfig::default(), &path, &CostModel::Constant(ba)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn episode_accounting_identity(seed in any::<u64>(), ba in 0.0f64..3.0, actions in prop::collection::vec(0.0f64..1.0, 68)) {
        let p = priced(seed, ba, 17);
        let mut k = 0;
        let rec = run_policy(&p, |_| { k += 1; actions[(k - 1) % actions.len()] }).unwrap();
        let sign = -1.0;
        let opt = (p.option_values().last().unwrap() - p.option_values()[0]) * sign;
        let hedge: f64 = rec.hedge_pnl.iter().sum();
        let cost: f64 = rec.costs.iter().sum();
        let total = rec.total_pnl();
        prop_assert!((total - (opt - hedge - cost)).abs() <= 1e-9 * (opt.abs() + hedge.abs() + cost.abs()).max(1.0));
        prop_assert!(rec.costs.iter().all(|c| *c >= 0.0));
    }

    #[test]
    fn costs_vanish_without_trading_or_width(seed in any::<u64>(), a in 0.0f64..1.0, ba in 0.1f64..3.0) {
        let flat = run_policy(&priced(seed, ba, 4), |_| a).unwrap();
        prop_assert!(flat.costs[1..].iter().all(|c| *c == 0.0));
        let free = run_policy(&priced(seed, 0.0, 4), delta_hedge_policy).unwrap();
        prop_assert!(free.costs.iter().all(|c| *c == 0.0));
        let moving = run_policy(&priced(seed, ba, 4), |s| if s.step % 2 == 0 { 0.2 } else { 0.7 }).unwrap();
        prop_assert!(moving.costs[1..].iter().all(|c| *c > 0.0));
    }

    #[test]
    fn step_is_pure(seed in any::<u64>(), a in -0.5f64..1.5) {
        let p = priced(seed, 1.0, 4);
        let s = p.reset();
        prop_assert_eq!(p.step(&s, a).unwrap(), p.step(&s, a).unwrap());
    }

    #[test]
    fn delta_pl_is_antisymmetric(seed in 0u64..1000, mean in 0.0f64..1.0) {
        let paths = vec![priced(seed, 1.0, 4), priced(seed + 1, 1.0, 4)];
        let agent = PolicyParams::for_hedging(&[3], mean, -2.0, seed);
        let ab = evaluate(Hedger::Agent(&agent), Hedger::DeltaHedge, &paths).unwrap();
        let ba = evaluate(Hedger::DeltaHedge, Hedger::Agent(&agent), &paths).unwrap();
        prop_assert!((ab.delta_pl + ba.delta_pl).abs() <= 1e-9 * ab.delta_pl.abs().max(1.0));
    }
}

/// Discretization error of the frictionless delta hedge shrinks with denser grids.
#[test]
fn delta_hedge_error_shrinks_with_rebalancing_frequency() {
    let model = SpreadModel::Gbm(GbmParams::default());
    let cfg = EnvConfig::default();
    let mut stds = Vec::new();
    for steps in [4, 17, 68] {
        let g = Arc::new(build_episode_grid(t0(), 40, steps).unwrap());
        let pnl: Vec<f64> = (0..200)
            .map(|i| {
                let p = PricedPath::standalone(&cfg, &model.path(&g, 5, i), &CostModel::Constant(0.0)).unwrap();
                run_policy(&p, delta_hedge_policy).unwrap().total_pnl()
            })
            .collect();
        stds.push(cdx_hedge::evaluation::population_std(&pnl));
    }
    assert!(stds[0] > stds[1] && stds[1] > stds[2], "{stds:?}");
}

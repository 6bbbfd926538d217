//! End-to-end walk-forward backtests on generated markets.

use std::fs;
use std::sync::OnceLock;

use bess_core::backtest::{emit_reports, run_backtest, BacktestConfig, BacktestOutput, DataSource};
use bess_core::market::{ProductDuration, Regime};
use bess_core::{FcrStrategy, RiConfig, TrainConfig};
use chrono::NaiveDate;

fn small_config(oos_days: usize, pool_size: usize, seed: u64) -> BacktestConfig {
    BacktestConfig {
        ri: RiConfig {
            cadence_min: 180,
            ..RiConfig::default()
        },
        source: DataSource::Synthetic {
            seed,
            regime: Regime::Mixed,
            snapshot_interval_min: 180,
            product_duration: ProductDuration::Hour,
            depth: 2,
        },
        oos_start: NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(),
        oos_days,
        window_days: 6,
        pool_size,
        seed,
        train: TrainConfig {
            folds: 2,
            fold_validation_days: 3,
            sampled_candidates: 2,
        },
        ..BacktestConfig::default()
    }
}

static SHARED: OnceLock<BacktestOutput> = OnceLock::new();

/// One four-day run shared by the read-only assertions below.
fn shared_run() -> &'static BacktestOutput {
    SHARED.get_or_init(|| run_backtest(&small_config(4, 2, 11)).expect("backtest runs"))
}

#[test]
fn a_span_of_one_day_yields_exactly_one_decision() {
    let mut cfg = small_config(1, 2, 3);
    cfg.toggles.only_idm = false;
    let out = run_backtest(&cfg).unwrap();
    assert_eq!(out.decisions.len(), 1);
    assert_eq!(out.lcs_results.len(), 1);
    assert_eq!(out.report.days, vec![cfg.oos_start]);
    assert_eq!(out.matrix.day_count(), cfg.window_days + 1);
    assert!(out.zero_profits.is_empty());
}

#[test]
fn a_pool_of_one_reduces_to_the_dynamic_benchmark() {
    let mut cfg = small_config(3, 1, 5);
    cfg.toggles.only_idm = false;
    cfg.toggles.only_fcr = false;
    let out = run_backtest(&cfg).unwrap();
    for d in &out.decisions {
        assert_eq!(d.pool.len(), 1);
        assert_eq!(
            d.lcs, d.db,
            "a single-label classifier must echo the window's best strategy"
        );
    }
    let row = |name: &str| {
        out.report
            .rows
            .iter()
            .find(|r| r.name == name)
            .unwrap_or_else(|| panic!("{name} row missing"))
    };
    assert_eq!(row("LCS").pi_total_eur, row("DB").pi_total_eur);
}

#[test]
fn decisions_are_well_formed_and_traceable() {
    let out = shared_run();
    let cfg = &out.config;
    assert_eq!(out.decisions.len(), cfg.oos_days);
    assert_eq!(out.matrix.day_count(), cfg.window_days + cfg.oos_days);
    assert_eq!(out.zero_profits.len(), cfg.window_days + cfg.oos_days);
    assert_eq!(out.feature_schema_hash.len(), 64);
    let catalogue = out.matrix.strategies();
    for (d, res) in out.decisions.iter().zip(&out.lcs_results) {
        assert_eq!(d.pool.len(), cfg.pool_size);
        assert!(d.pool.contains(&d.lcs), "prediction stays inside the pool");
        assert!(catalogue.contains(&d.db));
        assert_eq!(res.day, d.day);
        assert_eq!(res.strategy, d.lcs);
        let col = catalogue.iter().position(|s| *s == d.lcs).unwrap();
        let cached = out.matrix.entry(d.day, col).unwrap();
        assert!(
            (res.pi_total_eur - cached.total()).abs() <= 0.005,
            "replayed day must match the cached cell to the cent"
        );
    }
}

#[test]
fn clairvoyant_bounds_dominate_every_benchmark() {
    let out = shared_run();
    let report = &out.report;
    let names: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(
        names,
        vec!["SB", "DB", "CV-3", "CV-28", "LCS", "Only-FCR", "Only-IDM"]
    );
    let row = |name: &str| report.rows.iter().find(|r| r.name == name).unwrap();
    let cv_full = row("CV-28").pi_total_eur;
    let tol = 1e-6 * cv_full.abs().max(1.0);
    for r in &report.rows {
        assert_eq!(r.pi_total_eur, r.pi_fcr_eur + r.pi_idm_eur, "{}", r.name);
        if r.name != "Only-IDM" {
            assert!(
                r.pi_total_eur <= cv_full + tol,
                "{} exceeds the catalogue clairvoyant",
                r.name
            );
        }
        assert!(r.shortfall_vs_cv_full_pct <= tol, "{}", r.name);
    }
    assert!(row("CV-3").pi_total_eur >= row("LCS").pi_total_eur - tol);
    assert!(cv_full >= row("CV-3").pi_total_eur - tol);
    assert_eq!(row("CV-28").shortfall_vs_cv_full_pct, 0.0);
    assert_eq!(row("CV-28").equals_cv_full_pct, 100.0);
    assert_eq!(row("CV-3").equals_cv_pool_pct, 100.0);
    assert_eq!(row("LCS").beats_lcs_pct, 0.0);
}

#[test]
fn static_rows_hold_their_strategies_and_only_idm_books_no_reserve() {
    let out = shared_run();
    let row = |name: &str| out.report.rows.iter().find(|r| r.name == name).unwrap();
    assert_eq!(row("Only-FCR").strategy, Some(FcrStrategy([8; 6])));
    assert_eq!(row("Only-IDM").strategy, Some(FcrStrategy([0; 6])));
    assert_eq!(row("Only-IDM").pi_fcr_eur, 0.0);
    let sb = row("SB").strategy.expect("static row carries its pick");
    assert!(out.matrix.strategies().contains(&sb));
    assert!(row("DB").strategy.is_none());
    assert!(row("LCS").strategy.is_none());
}

#[test]
fn profits_accumulate_monotonically_on_riskless_trading() {
    let out = shared_run();
    for (r, cum) in out.report.rows.iter().zip(&out.report.cumulative) {
        assert!(
            cum.windows(2).all(|w| w[1] >= w[0] - 1e-9),
            "{} cumulative profit dips",
            r.name
        );
        assert!(
            (cum.last().unwrap() - r.pi_total_eur).abs() < 1e-6,
            "{} cumulative series does not close on the row total",
            r.name
        );
    }
    for weekly in &out.report.weekly_normalized {
        assert!(weekly.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn reports_are_byte_identical_across_reruns() {
    let cfg = small_config(2, 2, 17);
    let out1 = run_backtest(&cfg).unwrap();
    let out2 = run_backtest(&cfg).unwrap();
    assert_eq!(out1.report, out2.report);

    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    emit_reports(&out1, dir1.path()).unwrap();
    emit_reports(&out2, dir2.path()).unwrap();
    for file in [
        "strategies.csv",
        "benchmarks.csv",
        "cumulative.csv",
        "weekly_normalized.csv",
        "run_manifest.json",
    ] {
        let a = fs::read(dir1.path().join(file)).unwrap();
        let b = fs::read(dir2.path().join(file)).unwrap();
        assert!(!a.is_empty(), "{file} is empty");
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

//! Walk-forward backtest over a span of delivery days.
//!
//! Every (day, strategy) pair is traded once, up front, by the rolling
//! intrinsic engine; that cached profit matrix backs the daily walk
//! (pool re-selection, classifier retraining, prediction) and every
//! benchmark row, so each report number traces to one engine run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    base_schema, build_feature_matrix, build_features, predict, tune_and_train, FeatureConfig,
    FeatureMatrix, GbdtParams, TrainConfig, TrainedModel,
};
use crate::error::{Error, Result};
use crate::fcr::{BessSpec, FcrStrategy};
use crate::market::{
    io as market_io, synthesize_market, ExogenousSeries, OrderBookSnapshot, ProductDuration,
    Regime, SynthConfig,
};
use crate::pool::{default_catalogue, PoolSelection, ProfitEntry, ProfitMatrix};
use crate::ri::{run_day, DayResult, RiConfig};

/// Where the order books and exogenous series come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Deterministic generated market. The generator's span is derived
    /// from the evaluation window, so coverage always holds.
    Synthetic {
        seed: u64,
        regime: Regime,
        #[serde(default = "default_snapshot_interval")]
        snapshot_interval_min: i64,
        #[serde(default = "default_product_duration")]
        product_duration: ProductDuration,
        #[serde(default = "default_depth")]
        depth: usize,
    },
    /// User-supplied CSV files, one per series.
    Csv {
        snapshots: PathBuf,
        daa: PathBuf,
        forecasts: PathBuf,
        fcr_clearing: PathBuf,
        frequency: PathBuf,
    },
}

fn default_snapshot_interval() -> i64 {
    30
}

fn default_product_duration() -> ProductDuration {
    ProductDuration::Hour
}

fn default_depth() -> usize {
    4
}

/// Which benchmark rows to compute. The learned strategy is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkToggles {
    pub sb: bool,
    pub db: bool,
    pub cv_pool: bool,
    pub cv_full: bool,
    pub only_fcr: bool,
    pub only_idm: bool,
}

impl Default for BenchmarkToggles {
    fn default() -> Self {
        BenchmarkToggles {
            sb: true,
            db: true,
            cv_pool: true,
            cv_full: true,
            only_fcr: true,
            only_idm: true,
        }
    }
}

/// Full description of one backtest run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub spec: BessSpec,
    pub ri: RiConfig,
    pub source: DataSource,
    /// First out-of-sample delivery day.
    pub oos_start: NaiveDate,
    /// Number of out-of-sample days; must be at least one.
    pub oos_days: usize,
    /// Trailing training window, days.
    pub window_days: usize,
    /// Strategy pool size.
    pub pool_size: usize,
    /// Master seed for the classifier's tuning streams.
    pub seed: u64,
    pub train: TrainConfig,
    pub toggles: BenchmarkToggles,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            spec: BessSpec::default(),
            ri: RiConfig::default(),
            source: DataSource::Synthetic {
                seed: 7,
                regime: Regime::Mixed,
                snapshot_interval_min: default_snapshot_interval(),
                product_duration: default_product_duration(),
                depth: default_depth(),
            },
            oos_start: NaiveDate::from_ymd_opt(2024, 9, 1).unwrap(),
            oos_days: 30,
            window_days: 240,
            pool_size: 3,
            seed: 7,
            train: TrainConfig::default(),
            toggles: BenchmarkToggles::default(),
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.ri.validate()?;
        if self.oos_days == 0 {
            return Err(Error::config(
                "span must leave at least one out-of-sample day",
            ));
        }
        let floor = self.train.folds * self.train.fold_validation_days;
        if self.window_days < floor {
            return Err(Error::config(format!(
                "window of {} days cannot hold {} folds validating {} days each",
                self.window_days, self.train.folds, self.train.fold_validation_days
            )));
        }
        let n = default_catalogue(&self.spec).len();
        if self.pool_size == 0 || self.pool_size > n {
            return Err(Error::config(format!(
                "pool size {} outside 1..={n}",
                self.pool_size
            )));
        }
        Ok(())
    }

    /// First day of the earliest training window.
    pub fn window_start(&self) -> NaiveDate {
        self.oos_start - Days::new(self.window_days as u64)
    }

    /// Last out-of-sample day.
    pub fn oos_end(&self) -> NaiveDate {
        self.oos_start + Days::new(self.oos_days as u64 - 1)
    }

    /// Every day the engine trades: training window plus the span.
    pub fn all_days(&self) -> Vec<NaiveDate> {
        let mut days = Vec::with_capacity(self.window_days + self.oos_days);
        let mut d = self.window_start();
        while d <= self.oos_end() {
            days.push(d);
            d = d.succ_opt().expect("date has a successor");
        }
        days
    }

    fn oos_day_list(&self) -> Vec<NaiveDate> {
        self.all_days()
            .into_iter()
            .filter(|d| *d >= self.oos_start)
            .collect()
    }
}

/// What the engine decided for one out-of-sample day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayDecision {
    pub day: NaiveDate,
    /// Selected pool, in catalogue order.
    pub pool: Vec<FcrStrategy>,
    /// Strategy the classifier traded.
    pub lcs: FcrStrategy,
    /// Best strategy over the trailing window.
    pub db: FcrStrategy,
    /// Validation profit of the winning hyperparameters.
    pub validation_profit_eur: f64,
}

/// One line of the benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub name: String,
    /// Fixed choice for static rows; None when the pick varies by day.
    pub strategy: Option<FcrStrategy>,
    pub pi_fcr_eur: f64,
    pub pi_idm_eur: f64,
    pub pi_total_eur: f64,
    pub shortfall_vs_cv_full_pct: f64,
    pub equals_cv_pool_pct: f64,
    pub equals_cv_full_pct: f64,
    pub beats_lcs_pct: f64,
}

/// Benchmark table plus the daily and weekly series behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub days: Vec<NaiveDate>,
    pub rows: Vec<BenchmarkRow>,
    /// Row-aligned profit per day, EUR.
    pub daily_totals: Vec<Vec<f64>>,
    /// Row-aligned running profit, EUR.
    pub cumulative: Vec<Vec<f64>>,
    /// ISO week labels, e.g. "2024-W05".
    pub weeks: Vec<String>,
    /// Row-aligned weekly profit scaled to [0, 1] within each row.
    pub weekly_normalized: Vec<Vec<f64>>,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct BacktestOutput {
    pub config: BacktestConfig,
    /// Realized profits of every catalogue strategy on every traded day.
    pub matrix: ProfitMatrix,
    /// Realized profits of the all-zero (pure intraday) strategy.
    pub zero_profits: BTreeMap<NaiveDate, ProfitEntry>,
    pub decisions: Vec<DayDecision>,
    /// Full engine results for the strategy actually traded each day.
    pub lcs_results: Vec<DayResult>,
    pub feature_schema_hash: String,
    pub report: BenchmarkReport,
}

const ROW_SB: &str = "SB";
const ROW_DB: &str = "DB";
const ROW_CV_POOL: &str = "CV-3";
const ROW_CV_FULL: &str = "CV-28";
const ROW_LCS: &str = "LCS";
const ROW_ONLY_FCR: &str = "Only-FCR";
const ROW_ONLY_IDM: &str = "Only-IDM";

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn load_data(
    cfg: &BacktestConfig,
    start: NaiveDate,
    day_count: usize,
) -> Result<(Vec<OrderBookSnapshot>, ExogenousSeries)> {
    match &cfg.source {
        DataSource::Synthetic {
            seed,
            regime,
            snapshot_interval_min,
            product_duration,
            depth,
        } => {
            let mut sc = SynthConfig::new(*regime);
            sc.start_date = start;
            sc.snapshot_interval_min = *snapshot_interval_min;
            sc.product_duration = *product_duration;
            sc.depth = *depth;
            sc.session_open_hour_prev = cfg.ri.session_open_hour_prev;
            sc.gate_lead_min = cfg.ri.gate_lead_min;
            Ok(synthesize_market(*seed, day_count, &sc))
        }
        DataSource::Csv {
            snapshots,
            daa,
            forecasts,
            fcr_clearing,
            frequency,
        } => {
            let snaps = market_io::load_snapshots(snapshots, None)?;
            let exo = ExogenousSeries {
                daa_prices: market_io::load_daa(daa)?,
                forecasts: market_io::load_forecasts(forecasts)?,
                fcr_clearing: market_io::load_fcr_clearing(fcr_clearing)?,
                frequency: market_io::load_frequency(frequency)?,
            };
            exo.validate_no_gaps()?;
            Ok((snaps, exo))
        }
    }
}

/// Snapshots relevant to each delivery day, in stream order. A snapshot
/// quoting several days lands in each of their streams.
fn group_snapshots(
    all: &[OrderBookSnapshot],
    days: &[NaiveDate],
) -> BTreeMap<NaiveDate, Vec<OrderBookSnapshot>> {
    let mut by_day: BTreeMap<NaiveDate, Vec<OrderBookSnapshot>> =
        days.iter().map(|d| (*d, Vec::new())).collect();
    for snap in all {
        let dates: BTreeSet<NaiveDate> = snap
            .books
            .keys()
            .map(|p| p.delivery_date())
            .filter(|d| by_day.contains_key(d))
            .collect();
        for d in dates {
            by_day.get_mut(&d).expect("key was just filtered").push(snap.clone());
        }
    }
    by_day
}

/// Fails fast, naming the first day and series any input is missing.
/// `lag` is the extra day before the span whose clearing prices the
/// lagged features need.
fn verify_coverage(
    by_day: &BTreeMap<NaiveDate, Vec<OrderBookSnapshot>>,
    exo: &ExogenousSeries,
    days: &[NaiveDate],
    lag: NaiveDate,
) -> Result<()> {
    exo.fcr_prices_for_day(lag).map_err(|e| {
        Error::data(format!(
            "feature lag needs the day before the window: {e}"
        ))
    })?;
    let zones = exo.zones();
    if zones.is_empty() {
        return Err(Error::data("no day-ahead price zones in the data"));
    }
    for &day in days {
        if by_day.get(&day).map_or(true, |s| s.is_empty()) {
            return Err(Error::data(format!(
                "order book snapshots are missing for {day}"
            )));
        }
        exo.fcr_prices_for_day(day)?;
        for zone in &zones {
            exo.daa_hourly(zone, day)?;
        }
        for kind in crate::market::ForecastKind::ALL {
            exo.forecast_hourly(kind, day)?;
        }
        let start = day.and_hms_opt(0, 0, 0).unwrap().and_utc();
        let end = start + chrono::Duration::days(1);
        let _ = exo
            .frequency
            .window(start, end)
            .map_err(|e| Error::data(format!("frequency series for {day}: {e}")))?;
    }
    Ok(())
}

/// Trades every catalogue strategy, plus the all-zero strategy when
/// `include_zero` is set, across all days. Cells are independent, so the
/// fan-out is embarrassingly parallel and order-free.
fn backtest_catalogue(
    cfg: &BacktestConfig,
    catalogue: &[FcrStrategy],
    by_day: &BTreeMap<NaiveDate, Vec<OrderBookSnapshot>>,
    exo: &ExogenousSeries,
    include_zero: bool,
) -> Result<(ProfitMatrix, BTreeMap<NaiveDate, ProfitEntry>)> {
    let days: Vec<NaiveDate> = by_day.keys().copied().collect();
    let prices: Vec<[f64; 6]> = days
        .iter()
        .map(|d| exo.fcr_prices_for_day(*d))
        .collect::<Result<Vec<_>>>()?;
    let zero = FcrStrategy([0; 6]);
    let n = catalogue.len();
    let cols = if include_zero { n + 1 } else { n };

    let cells: Vec<(usize, usize)> = (0..days.len())
        .flat_map(|di| (0..cols).map(move |si| (di, si)))
        .collect();
    let entries: Vec<ProfitEntry> = cells
        .par_iter()
        .map(|&(di, si)| {
            let day = days[di];
            let strategy = if si == n { &zero } else { &catalogue[si] };
            run_day(
                day,
                &by_day[&day],
                &exo.frequency,
                &prices[di],
                strategy,
                &cfg.spec,
                &cfg.ri,
            )
            .map(|r| ProfitEntry {
                pi_fcr_eur: r.pi_fcr_eur,
                pi_idm_eur: r.pi_idm_eur,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut matrix = ProfitMatrix::new(catalogue.to_vec())?;
    let mut zero_profits = BTreeMap::new();
    for (di, day) in days.iter().enumerate() {
        let row = &entries[di * cols..(di + 1) * cols];
        matrix.insert_day(*day, row[..n].to_vec())?;
        if include_zero {
            zero_profits.insert(*day, row[n]);
        }
    }
    Ok((matrix, zero_profits))
}

/// Seed for the model trained for `day`, stable across entry points.
fn day_seed(master: u64, day: NaiveDate) -> u64 {
    mix(master ^ day.num_days_from_ce() as u64)
}

/// Best catalogue strategy over the window; ties go to the entry listed
/// first.
fn window_argmax(window: &ProfitMatrix) -> FcrStrategy {
    let n = window.strategies().len();
    let mut best = 0usize;
    let mut best_sum = f64::NEG_INFINITY;
    for j in 0..n {
        let sum: f64 = window
            .days()
            .map(|d| window.entry(d, j).expect("row is complete").total())
            .sum();
        if sum > best_sum {
            best_sum = sum;
            best = j;
        }
    }
    window.strategies()[best]
}

/// Runs the whole walk-forward backtest described by `cfg`.
pub fn run_backtest(cfg: &BacktestConfig) -> Result<BacktestOutput> {
    cfg.validate()?;
    let catalogue = default_catalogue(&cfg.spec);
    let (snapshots, exo) = load_data(cfg, cfg.window_start(), cfg.window_days + cfg.oos_days)?;
    let days = cfg.all_days();
    let by_day = group_snapshots(&snapshots, &days);
    drop(snapshots);
    let lag = cfg.window_start().pred_opt().expect("date has a predecessor");
    verify_coverage(&by_day, &exo, &days, lag)?;

    let (matrix, zero_profits) =
        backtest_catalogue(cfg, &catalogue, &by_day, &exo, cfg.toggles.only_idm)?;

    let fcfg = FeatureConfig {
        zones: exo.zones(),
        trend_origin: cfg.window_start(),
    };
    let schema = base_schema(&fcfg);
    let all_features = build_feature_matrix(&exo, &fcfg, &days)?;
    let row_of = |day: NaiveDate| -> usize {
        all_features
            .days
            .binary_search(&day)
            .expect("every traded day has features")
    };

    let mut incumbent: Option<GbdtParams> = None;
    let mut decisions = Vec::with_capacity(cfg.oos_days);
    let mut lcs_results = Vec::with_capacity(cfg.oos_days);
    for day in cfg.oos_day_list() {
        let from = day - Days::new(cfg.window_days as u64);
        let to = day.pred_opt().expect("date has a predecessor");
        let window = matrix.restrict(from, to);
        let selection = window.select_pool(cfg.pool_size)?;
        let labels = window.label_days(&selection.strategies)?;
        let window_days: Vec<NaiveDate> = labels.iter().map(|(d, _)| *d).collect();
        let features = FeatureMatrix {
            schema: schema.clone(),
            rows: window_days.iter().map(|d| all_features.rows[row_of(*d)].clone()).collect(),
            days: window_days,
        };
        let model = tune_and_train(
            &features,
            &labels,
            &window,
            &selection.strategies,
            incumbent,
            day_seed(cfg.seed, day),
            &cfg.train,
        )?;
        incumbent = Some(model.params);

        let today = build_features(&exo, &fcfg, day)?;
        let lcs = predict(&model, &schema, &today)?;
        let db = window_argmax(&window);
        decisions.push(DayDecision {
            day,
            pool: selection.strategies.clone(),
            lcs,
            db,
            validation_profit_eur: model.validation_profit_eur,
        });

        // full engine detail for the traded strategy, replayed against the
        // cached cell as an accounting check
        let result = run_day(
            day,
            &by_day[&day],
            &exo.frequency,
            &exo.fcr_prices_for_day(day)?,
            &lcs,
            &cfg.spec,
            &cfg.ri,
        )?;
        let col = catalogue
            .iter()
            .position(|s| *s == lcs)
            .expect("prediction comes from the catalogue");
        let cached = matrix.entry(day, col).expect("cell was backtested").total();
        if (result.pi_total_eur - cached).abs() > 0.005 {
            return Err(Error::validation(format!(
                "replay of {day} with {lcs} booked {} EUR but the cache holds {cached} EUR",
                result.pi_total_eur
            )));
        }
        lcs_results.push(result);
    }

    let report = benchmarks(&matrix, &zero_profits, &decisions, &cfg.toggles)?;
    Ok(BacktestOutput {
        config: cfg.clone(),
        matrix,
        zero_profits,
        decisions,
        lcs_results,
        feature_schema_hash: schema.hash_hex(),
        report,
    })
}

/// Trades the catalogue over the `window_days`-day window ending just
/// before `asof`, returning the profit matrix and the exogenous series
/// covering it.
fn trade_window(cfg: &BacktestConfig, asof: NaiveDate) -> Result<(ProfitMatrix, ExogenousSeries)> {
    cfg.spec.validate()?;
    cfg.ri.validate()?;
    if cfg.window_days == 0 {
        return Err(Error::config("window must hold at least one day"));
    }
    let start = asof - Days::new(cfg.window_days as u64);
    let mut days = Vec::with_capacity(cfg.window_days);
    let mut d = start;
    while d < asof {
        days.push(d);
        d = d.succ_opt().expect("date has a successor");
    }
    let catalogue = default_catalogue(&cfg.spec);
    let (snapshots, exo) = load_data(cfg, start, cfg.window_days)?;
    let by_day = group_snapshots(&snapshots, &days);
    drop(snapshots);
    let lag = start.pred_opt().expect("date has a predecessor");
    verify_coverage(&by_day, &exo, &days, lag)?;
    let (matrix, _) = backtest_catalogue(cfg, &catalogue, &by_day, &exo, false)?;
    Ok((matrix, exo))
}

/// Trades the catalogue over the `window_days`-day window ending just
/// before `asof`, using the run's data source.
pub fn backtest_window(cfg: &BacktestConfig, asof: NaiveDate) -> Result<ProfitMatrix> {
    trade_window(cfg, asof).map(|(matrix, _)| matrix)
}

/// A standalone training run's artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub selection: PoolSelection,
    pub matrix: ProfitMatrix,
}

/// Selects a pool and trains a classifier on the window ending just
/// before `asof`, without an incumbent. The fit seed is keyed on the
/// date, matching the seed the walk-forward run uses for that day.
pub fn train_asof(cfg: &BacktestConfig, asof: NaiveDate) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (matrix, exo) = trade_window(cfg, asof)?;
    let selection = matrix.select_pool(cfg.pool_size)?;
    let labels = matrix.label_days(&selection.strategies)?;
    let fcfg = FeatureConfig {
        zones: exo.zones(),
        trend_origin: asof - Days::new(cfg.window_days as u64),
    };
    let window_days: Vec<NaiveDate> = labels.iter().map(|(d, _)| *d).collect();
    let features = build_feature_matrix(&exo, &fcfg, &window_days)?;
    let model = tune_and_train(
        &features,
        &labels,
        &matrix,
        &selection.strategies,
        None,
        day_seed(cfg.seed, asof),
        &cfg.train,
    )?;
    Ok(TrainOutcome {
        model,
        selection,
        matrix,
    })
}

/// Catalogue entry committing the most reserve, ties to the first listed.
fn max_commitment(catalogue: &[FcrStrategy]) -> FcrStrategy {
    let mut best = 0usize;
    let mut best_sum = 0u32;
    for (j, s) in catalogue.iter().enumerate() {
        let sum = s.0.iter().sum::<u32>();
        if j == 0 || sum > best_sum {
            best = j;
            best_sum = sum;
        }
    }
    catalogue[best]
}

struct RowSeries {
    name: &'static str,
    fixed: Option<FcrStrategy>,
    picks: Vec<FcrStrategy>,
}

/// Builds the benchmark table from realized profits and the day-by-day
/// decisions. Agreement and shortfall columns always reference the
/// clairvoyant rows, so those are computed even when their rows are off.
pub fn benchmarks(
    matrix: &ProfitMatrix,
    zero_profits: &BTreeMap<NaiveDate, ProfitEntry>,
    decisions: &[DayDecision],
    toggles: &BenchmarkToggles,
) -> Result<BenchmarkReport> {
    if decisions.is_empty() {
        return Err(Error::data("no out-of-sample days to benchmark"));
    }
    let catalogue = matrix.strategies();
    let days: Vec<NaiveDate> = decisions.iter().map(|d| d.day).collect();
    let zero = FcrStrategy([0; 6]);

    let col_of = |s: &FcrStrategy| -> Result<usize> {
        catalogue
            .iter()
            .position(|c| c == s)
            .ok_or_else(|| Error::domain(format!("strategy {s} not in the catalogue")))
    };
    let profit_of = |day: NaiveDate, s: &FcrStrategy| -> Result<ProfitEntry> {
        if *s == zero {
            return zero_profits
                .get(&day)
                .copied()
                .ok_or_else(|| Error::data(format!("no zero-strategy profits for {day}")));
        }
        matrix
            .entry(day, col_of(s)?)
            .copied()
            .ok_or_else(|| Error::data(format!("no profits for {day}")))
    };

    // per-day clairvoyant picks; ties go to the earlier catalogue entry
    let argmax_over = |day: NaiveDate, indices: &[usize]| -> Result<FcrStrategy> {
        let mut best = indices[0];
        let mut best_total = f64::NEG_INFINITY;
        for &j in indices {
            let total = matrix
                .entry(day, j)
                .ok_or_else(|| Error::data(format!("no profits for {day}")))?
                .total();
            if total > best_total {
                best_total = total;
                best = j;
            }
        }
        Ok(catalogue[best])
    };
    let all_indices: Vec<usize> = (0..catalogue.len()).collect();
    let mut cv_full_picks = Vec::with_capacity(days.len());
    let mut cv_pool_picks = Vec::with_capacity(days.len());
    for d in decisions {
        cv_full_picks.push(argmax_over(d.day, &all_indices)?);
        let mut pool_idx = d
            .pool
            .iter()
            .map(|s| col_of(s))
            .collect::<Result<Vec<_>>>()?;
        pool_idx.sort_unstable();
        cv_pool_picks.push(argmax_over(d.day, &pool_idx)?);
    }
    let lcs_picks: Vec<FcrStrategy> = decisions.iter().map(|d| d.lcs).collect();

    // the static row replays the best single strategy in hindsight
    let sb_pick = {
        let mut best = 0usize;
        let mut best_sum = f64::NEG_INFINITY;
        for (j, _) in catalogue.iter().enumerate() {
            let mut sum = 0.0;
            for &day in &days {
                sum += matrix
                    .entry(day, j)
                    .ok_or_else(|| Error::data(format!("no profits for {day}")))?
                    .total();
            }
            if sum > best_sum {
                best_sum = sum;
                best = j;
            }
        }
        catalogue[best]
    };

    let mut rows_spec: Vec<RowSeries> = Vec::new();
    if toggles.sb {
        rows_spec.push(RowSeries {
            name: ROW_SB,
            fixed: Some(sb_pick),
            picks: vec![sb_pick; days.len()],
        });
    }
    if toggles.db {
        rows_spec.push(RowSeries {
            name: ROW_DB,
            fixed: None,
            picks: decisions.iter().map(|d| d.db).collect(),
        });
    }
    if toggles.cv_pool {
        rows_spec.push(RowSeries {
            name: ROW_CV_POOL,
            fixed: None,
            picks: cv_pool_picks.clone(),
        });
    }
    if toggles.cv_full {
        rows_spec.push(RowSeries {
            name: ROW_CV_FULL,
            fixed: None,
            picks: cv_full_picks.clone(),
        });
    }
    rows_spec.push(RowSeries {
        name: ROW_LCS,
        fixed: None,
        picks: lcs_picks.clone(),
    });
    if toggles.only_fcr {
        let pick = max_commitment(catalogue);
        rows_spec.push(RowSeries {
            name: ROW_ONLY_FCR,
            fixed: Some(pick),
            picks: vec![pick; days.len()],
        });
    }
    if toggles.only_idm {
        rows_spec.push(RowSeries {
            name: ROW_ONLY_IDM,
            fixed: Some(zero),
            picks: vec![zero; days.len()],
        });
    }

    // reference series the comparison columns need, kept independent of
    // which rows were toggled on
    let cv_full_daily: Vec<f64> = days
        .iter()
        .zip(&cv_full_picks)
        .map(|(&d, s)| profit_of(d, s).map(|e| e.total()))
        .collect::<Result<Vec<_>>>()?;
    let cv_full_total: f64 = cv_full_daily.iter().sum();
    let lcs_daily: Vec<f64> = days
        .iter()
        .zip(&lcs_picks)
        .map(|(&d, s)| profit_of(d, s).map(|e| e.total()))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(rows_spec.len());
    let mut daily_totals = Vec::with_capacity(rows_spec.len());
    for spec in &rows_spec {
        let mut fcr = 0.0;
        let mut idm = 0.0;
        let mut daily = Vec::with_capacity(days.len());
        let mut eq_pool = 0usize;
        let mut eq_full = 0usize;
        let mut beats = 0usize;
        for (k, (&day, pick)) in days.iter().zip(&spec.picks).enumerate() {
            let entry = profit_of(day, pick)?;
            fcr += entry.pi_fcr_eur;
            idm += entry.pi_idm_eur;
            daily.push(entry.total());
            if *pick == cv_pool_picks[k] {
                eq_pool += 1;
            }
            if *pick == cv_full_picks[k] {
                eq_full += 1;
            }
            if entry.total() > lcs_daily[k] {
                beats += 1;
            }
        }
        let total = fcr + idm;
        let shortfall = if (total - cv_full_total).abs() < 1e-9 || cv_full_total == 0.0 {
            0.0
        } else {
            (total - cv_full_total) / cv_full_total * 100.0
        };
        let pct = |n: usize| n as f64 / days.len() as f64 * 100.0;
        rows.push(BenchmarkRow {
            name: spec.name.to_string(),
            strategy: spec.fixed,
            pi_fcr_eur: fcr,
            pi_idm_eur: idm,
            pi_total_eur: total,
            shortfall_vs_cv_full_pct: shortfall,
            equals_cv_pool_pct: pct(eq_pool),
            equals_cv_full_pct: pct(eq_full),
            beats_lcs_pct: pct(beats),
        });
        daily_totals.push(daily);
    }

    // dominance sanity: nothing beats per-day clairvoyance over the
    // catalogue, and the classifier cannot beat clairvoyance over its pool
    let tol = 1e-6 * cv_full_total.abs().max(1.0);
    for row in &rows {
        if row.name != ROW_ONLY_IDM && row.pi_total_eur > cv_full_total + tol {
            return Err(Error::validation(format!(
                "{} booked {} EUR, above the clairvoyant catalogue bound {cv_full_total} EUR",
                row.name, row.pi_total_eur
            )));
        }
    }
    let cv_pool_total: f64 = days
        .iter()
        .zip(&cv_pool_picks)
        .map(|(&d, s)| profit_of(d, s).map(|e| e.total()))
        .collect::<Result<Vec<_>>>()?
        .iter()
        .sum();
    let lcs_total: f64 = lcs_daily.iter().sum();
    if lcs_total > cv_pool_total + tol {
        return Err(Error::validation(format!(
            "learned strategy booked {lcs_total} EUR, above its pool's clairvoyant bound {cv_pool_total} EUR"
        )));
    }

    let cumulative: Vec<Vec<f64>> = daily_totals
        .iter()
        .map(|daily| {
            daily
                .iter()
                .scan(0.0, |acc, v| {
                    *acc += v;
                    Some(*acc)
                })
                .collect()
        })
        .collect();

    // weekly sums, then each row scaled to [0, 1] by its own range
    let mut weeks: Vec<String> = Vec::new();
    let mut week_of_day: Vec<usize> = Vec::with_capacity(days.len());
    for &day in &days {
        let iw = day.iso_week();
        let label = format!("{:04}-W{:02}", iw.year(), iw.week());
        match weeks.last() {
            Some(last) if *last == label => {}
            _ => weeks.push(label.clone()),
        }
        week_of_day.push(weeks.len() - 1);
    }
    let weekly_normalized: Vec<Vec<f64>> = daily_totals
        .iter()
        .map(|daily| {
            let mut sums = vec![0.0; weeks.len()];
            for (k, v) in daily.iter().enumerate() {
                sums[week_of_day[k]] += v;
            }
            let lo = sums.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo <= 0.0 {
                vec![0.0; weeks.len()]
            } else {
                sums.iter().map(|v| (v - lo) / (hi - lo)).collect()
            }
        })
        .collect();

    Ok(BenchmarkReport {
        days,
        rows,
        daily_totals,
        cumulative,
        weeks,
        weekly_normalized,
    })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Writes the four CSV reports and the run manifest into `dir`. Outputs
/// are byte-identical for identical config, data, and seed.
pub fn emit_reports(output: &BacktestOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let report = &output.report;
    let days = &report.days;

    let mut w = csv::Writer::from_path(dir.join("strategies.csv"))?;
    w.write_record(["strategy_id", "pi_fcr", "pi_idm", "pi_total"])?;
    let mut strategy_rows: Vec<(FcrStrategy, f64, f64)> = Vec::new();
    for (j, s) in output.matrix.strategies().iter().enumerate() {
        let mut fcr = 0.0;
        let mut idm = 0.0;
        for &day in days {
            let e = output.matrix.entry(day, j).expect("cell was backtested");
            fcr += e.pi_fcr_eur;
            idm += e.pi_idm_eur;
        }
        strategy_rows.push((*s, fcr, idm));
    }
    if output.config.toggles.only_idm {
        let mut fcr = 0.0;
        let mut idm = 0.0;
        for &day in days {
            let e = output.zero_profits[&day];
            fcr += e.pi_fcr_eur;
            idm += e.pi_idm_eur;
        }
        strategy_rows.push((FcrStrategy([0; 6]), fcr, idm));
    }
    for (s, fcr, idm) in strategy_rows {
        w.write_record([s.to_string(), fmt(fcr), fmt(idm), fmt(fcr + idm)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("benchmarks.csv"))?;
    w.write_record([
        "name",
        "strategy",
        "pi_fcr",
        "pi_idm",
        "pi_total",
        "shortfall_vs_cv28_pct",
        "equals_cv3_pct",
        "equals_cv28_pct",
        "beats_lcs_pct",
    ])?;
    for row in &report.rows {
        w.write_record([
            row.name.clone(),
            row.strategy.map(|s| s.to_string()).unwrap_or_default(),
            fmt(row.pi_fcr_eur),
            fmt(row.pi_idm_eur),
            fmt(row.pi_total_eur),
            fmt(row.shortfall_vs_cv_full_pct),
            fmt(row.equals_cv_pool_pct),
            fmt(row.equals_cv_full_pct),
            fmt(row.beats_lcs_pct),
        ])?;
    }
    w.flush()?;

    let names: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
    let mut w = csv::Writer::from_path(dir.join("cumulative.csv"))?;
    let mut header = vec!["date".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    w.write_record(&header)?;
    for (k, day) in days.iter().enumerate() {
        let mut rec = vec![day.format("%Y-%m-%d").to_string()];
        rec.extend(report.cumulative.iter().map(|c| fmt(c[k])));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("weekly_normalized.csv"))?;
    let mut header = vec!["week".to_string()];
    header.extend(names.iter().map(|n| n.to_string()));
    w.write_record(&header)?;
    for (k, week) in report.weeks.iter().enumerate() {
        let mut rec = vec![week.clone()];
        rec.extend(report.weekly_normalized.iter().map(|c| fmt(c[k])));
        w.write_record(&rec)?;
    }
    w.flush()?;

    #[derive(Serialize)]
    struct RunManifest<'a> {
        code_version: &'static str,
        feature_schema_hash: &'a str,
        oos_start: NaiveDate,
        oos_days: usize,
        window_days: usize,
        rows: Vec<&'a str>,
        config: &'a BacktestConfig,
    }
    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION"),
        feature_schema_hash: &output.feature_schema_hash,
        oos_start: output.config.oos_start,
        oos_days: output.config.oos_days,
        window_days: output.config.window_days,
        rows: names,
        config: &output.config,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("run_manifest.json"), text)?;
    Ok(())
}

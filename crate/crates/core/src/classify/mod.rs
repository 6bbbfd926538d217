//! Next-day strategy classifier: block-statistic features from exogenous
//! market data, correlation-filtered quadratic interactions, and a
//! boosted-tree model tuned by anchored walk-forward validation scored on
//! trading profit.

pub mod gbdt;

use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fcr::FcrStrategy;
use crate::market::{ExogenousSeries, ForecastKind};
use crate::pool::ProfitMatrix;
pub use gbdt::{Gbdt, GbdtParams};

/// Bump when the feature layout changes; part of the schema hash.
pub const SCHEMA_VERSION: u32 = 1;
/// Bump when the model artifact layout changes.
pub const MODEL_VERSION: u32 = 1;

const PEARSON_THRESHOLD: f64 = 0.94;

/// Feature-construction settings. The zone list is ordered and ordering
/// is part of the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub zones: Vec<String>,
    /// Day mapped to trend index 0; usually the first day of the dataset.
    pub trend_origin: NaiveDate,
}

impl FeatureConfig {
    pub fn new(trend_origin: NaiveDate) -> Self {
        FeatureConfig {
            zones: vec![
                "DE-LU".to_string(),
                "IT-North".to_string(),
                "NO2".to_string(),
                "SE4".to_string(),
            ],
            trend_origin,
        }
    }
}

/// Ordered, versioned feature naming; its hash gates prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        h.update(SCHEMA_VERSION.to_le_bytes());
        for name in &self.names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Base feature values of one day, in `base_schema` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub day: NaiveDate,
    pub values: Vec<f64>,
}

/// Day-by-feature matrix with its schema; rows sorted by day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub schema: FeatureSchema,
    pub days: Vec<NaiveDate>,
    pub rows: Vec<Vec<f64>>,
}

/// Names of the base features, in the fixed order build_features emits.
pub fn base_schema(cfg: &FeatureConfig) -> FeatureSchema {
    let mut names = Vec::new();
    for zone in &cfg.zones {
        for b in 1..=6 {
            names.push(format!("daa:{zone}:b{b}:mean"));
            names.push(format!("daa:{zone}:b{b}:std"));
        }
    }
    for kind in ForecastKind::ALL {
        for b in 1..=6 {
            names.push(format!("ppf:{}:b{b}:mean", kind.as_str()));
            names.push(format!("ppf:{}:b{b}:std", kind.as_str()));
        }
    }
    for b in 1..=6 {
        names.push(format!("fcr_lag:b{b}"));
    }
    for cal in [
        "weekday",
        "weekend",
        "day_of_year",
        "trend",
        "annual_sin",
        "annual_cos",
        "weekly_sin",
        "weekly_cos",
    ] {
        names.push(format!("cal:{cal}"));
    }
    FeatureSchema { names }
}

/// Population mean and standard deviation of one EFA block (4 hours).
fn block_stats(hourly: &[f64; 24], block: usize) -> (f64, f64) {
    let xs = &hourly[4 * (block - 1)..4 * block];
    let mean = xs.iter().sum::<f64>() / 4.0;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
    (mean, var.sqrt())
}

/// Base features for trading day `day`. Uses only information available
/// before the reserve auction closes: day-ahead prices and public power
/// forecasts for `day`, the previous day's reserve clearing prices, and
/// the calendar.
pub fn build_features(
    exo: &ExogenousSeries,
    cfg: &FeatureConfig,
    day: NaiveDate,
) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(110);
    for zone in &cfg.zones {
        let hourly = exo
            .daa_hourly(zone, day)
            .map_err(|_| Error::Feature(format!("DAA prices for zone {zone} on {day}")))?;
        for b in 1..=6 {
            let (mean, std) = block_stats(&hourly, b);
            values.push(mean);
            values.push(std);
        }
    }
    for kind in ForecastKind::ALL {
        let hourly = exo
            .forecast_hourly(kind, day)
            .map_err(|_| Error::Feature(format!("{} forecast on {day}", kind.as_str())))?;
        for b in 1..=6 {
            let (mean, std) = block_stats(&hourly, b);
            values.push(mean);
            values.push(std);
        }
    }
    let prev = day - Duration::days(1);
    let fcr = exo
        .fcr_prices_for_day(prev)
        .map_err(|_| Error::Feature(format!("FCR clearing prices on {prev}")))?;
    values.extend_from_slice(&fcr);

    let weekday = day.weekday().num_days_from_sunday() as f64;
    let weekend = if weekday == 0.0 || weekday == 6.0 { 1.0 } else { 0.0 };
    let doy = day.ordinal() as f64;
    let trend = (day - cfg.trend_origin).num_days() as f64;
    let tau = std::f64::consts::TAU;
    values.extend_from_slice(&[
        weekday,
        weekend,
        doy,
        trend,
        (tau * doy / 365.0).sin(),
        (tau * doy / 365.0).cos(),
        (tau * weekday / 7.0).sin(),
        (tau * weekday / 7.0).cos(),
    ]);
    Ok(FeatureVector { day, values })
}

/// Base feature matrix over `days` (sorted, deduplicated).
pub fn build_feature_matrix(
    exo: &ExogenousSeries,
    cfg: &FeatureConfig,
    days: &[NaiveDate],
) -> Result<FeatureMatrix> {
    let mut sorted: Vec<NaiveDate> = days.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let rows = sorted
        .iter()
        .map(|&d| build_features(exo, cfg, d).map(|fv| fv.values))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        schema: base_schema(cfg),
        days: sorted,
        rows,
    })
}

/// One column of the expanded feature set: a base feature or a product
/// of two base features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureId {
    Base(usize),
    Product(usize, usize),
}

/// Fitted feature expansion: quadratic cross-group interactions followed
/// by zero-variance and pairwise-correlation filtering. Immutable after
/// fit; applying it to new days cannot leak their values into selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    base_names: Vec<String>,
    selected: Vec<FeatureId>,
}

fn column(rows: &[Vec<f64>], id: FeatureId) -> Vec<f64> {
    match id {
        FeatureId::Base(i) => rows.iter().map(|r| r[i]).collect(),
        FeatureId::Product(i, j) => rows.iter().map(|r| r[i] * r[j]).collect(),
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn pearson(x: &[f64], sx: (f64, f64), y: &[f64], sy: (f64, f64)) -> f64 {
    if sx.1 == 0.0 || sy.1 == 0.0 {
        return 0.0;
    }
    let n = x.len() as f64;
    let cov = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - sx.0) * (b - sy.0))
        .sum::<f64>()
        / n;
    cov / (sx.1 * sy.1)
}

impl FeaturePipeline {
    /// Candidate columns in schema order: every base feature, then
    /// day-ahead block means crossed with the reserve-price lags, then
    /// forecast block means crossed with the same lags.
    fn candidates(schema: &FeatureSchema) -> Vec<FeatureId> {
        let names = &schema.names;
        let mean_ids = |prefix: &str| -> Vec<usize> {
            names
                .iter()
                .enumerate()
                .filter(|(_, n)| n.starts_with(prefix) && n.ends_with(":mean"))
                .map(|(i, _)| i)
                .collect()
        };
        let lag_ids: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with("fcr_lag:"))
            .map(|(i, _)| i)
            .collect();
        let mut ids: Vec<FeatureId> = (0..names.len()).map(FeatureId::Base).collect();
        for &i in &mean_ids("daa:") {
            for &l in &lag_ids {
                ids.push(FeatureId::Product(i, l));
            }
        }
        for &i in &mean_ids("ppf:") {
            for &l in &lag_ids {
                ids.push(FeatureId::Product(i, l));
            }
        }
        ids
    }

    /// Number of columns considered before filtering.
    pub fn candidate_count(schema: &FeatureSchema) -> usize {
        Self::candidates(schema).len()
    }

    /// Fits the expansion on a training window: drops constant columns,
    /// then greedily keeps columns in schema order, skipping any whose
    /// absolute Pearson correlation with an already-kept column exceeds
    /// the threshold (the later feature of each offending pair loses).
    pub fn fit(base: &FeatureMatrix) -> Result<FeaturePipeline> {
        if base.rows.len() < 2 {
            return Err(Error::domain(
                "interaction filtering needs at least 2 days of features",
            ));
        }
        let ids = Self::candidates(&base.schema);
        let cols: Vec<Vec<f64>> = ids.iter().map(|&id| column(&base.rows, id)).collect();
        let stats: Vec<(f64, f64)> = cols.iter().map(|c| mean_std(c)).collect();
        let mut kept: Vec<usize> = Vec::new();
        for (k, col) in cols.iter().enumerate() {
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            if lo == hi {
                continue; // constant column carries no signal
            }
            let redundant = kept
                .iter()
                .any(|&j| pearson(col, stats[k], &cols[j], stats[j]).abs() > PEARSON_THRESHOLD);
            if !redundant {
                kept.push(k);
            }
        }
        Ok(FeaturePipeline {
            base_names: base.schema.names.clone(),
            selected: kept.into_iter().map(|k| ids[k]).collect(),
        })
    }

    pub fn selected(&self) -> &[FeatureId] {
        &self.selected
    }

    pub fn output_schema(&self) -> FeatureSchema {
        let names = self
            .selected
            .iter()
            .map(|id| match *id {
                FeatureId::Base(i) => self.base_names[i].clone(),
                FeatureId::Product(i, j) => {
                    format!("{}*{}", self.base_names[i], self.base_names[j])
                }
            })
            .collect();
        FeatureSchema { names }
    }

    pub fn transform_row(&self, base: &[f64]) -> Result<Vec<f64>> {
        if base.len() != self.base_names.len() {
            return Err(Error::domain(format!(
                "feature vector has {} values, pipeline expects {}",
                base.len(),
                self.base_names.len()
            )));
        }
        Ok(self
            .selected
            .iter()
            .map(|id| match *id {
                FeatureId::Base(i) => base[i],
                FeatureId::Product(i, j) => base[i] * base[j],
            })
            .collect())
    }

    pub fn transform(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.schema.names != self.base_names {
            return Err(Error::SchemaMismatch {
                expected: FeatureSchema {
                    names: self.base_names.clone(),
                }
                .hash_hex(),
                actual: m.schema.hash_hex(),
            });
        }
        let rows = m
            .rows
            .iter()
            .map(|r| self.transform_row(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureMatrix {
            schema: self.output_schema(),
            days: m.days.clone(),
            rows,
        })
    }
}

/// Walk-forward tuning settings. Defaults follow the 5-fold, 15-day
/// layout with 20 randomly sampled grid points per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub folds: usize,
    pub fold_validation_days: usize,
    pub sampled_candidates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            folds: 5,
            fold_validation_days: 15,
            sampled_candidates: 20,
        }
    }
}

/// Anchored fold layout over a window of `n` rows: fold k trains on
/// everything before its validation slice, and validation slices tile
/// the final `folds * val_len` rows in order.
pub fn anchored_folds(
    n: usize,
    folds: usize,
    val_len: usize,
) -> Result<Vec<(Range<usize>, Range<usize>)>> {
    if folds == 0 || val_len == 0 {
        return Err(Error::config("folds and validation length must be positive"));
    }
    if n < folds * val_len {
        return Err(Error::config(format!(
            "training window of {n} days cannot hold {folds} folds of {val_len} validation days"
        )));
    }
    Ok((0..folds)
        .map(|k| {
            let val_start = n - (folds - k) * val_len;
            (0..val_start, val_start..val_start + val_len)
        })
        .collect())
}

/// The full hyperparameter grid in a fixed order.
fn full_grid() -> Vec<GbdtParams> {
    let mut grid = Vec::with_capacity(288);
    for &learning_rate in &[0.01, 0.05, 0.1] {
        for &min_split_loss in &[0.0, 0.5, 1.0, 2.0] {
            for &row_subsample in &[0.8, 1.0] {
                for &col_subsample in &[0.8, 1.0] {
                    for &max_depth in &[3usize, 4, 5] {
                        for &n_trees in &[200usize, 400] {
                            grid.push(GbdtParams {
                                learning_rate,
                                min_split_loss,
                                row_subsample,
                                col_subsample,
                                max_depth,
                                n_trees,
                            });
                        }
                    }
                }
            }
        }
    }
    grid
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// A tuned, fitted classifier plus everything needed to apply it to a
/// new day and to seed the next day's search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    /// Hash of the base schema the pipeline consumes.
    pub base_schema_hash: String,
    /// Hash of the expanded schema the forest consumes.
    pub schema_hash: String,
    pub pipeline: FeaturePipeline,
    /// Label set, in catalogue order; predictions index into it.
    pub labels: Vec<FcrStrategy>,
    pub params: GbdtParams,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub window_days: usize,
    pub seed: u64,
    /// Summed validation profit of the winning hyperparameters.
    pub validation_profit_eur: f64,
    forest: Gbdt,
}

/// Tunes hyperparameters by anchored walk-forward validation scored on
/// realized trading profit, then refits on the whole window.
///
/// `features` is the base matrix over the training window; `labels` the
/// per-day best pool strategy; `profits` must hold a row for every
/// validation day and a column for every pool strategy. The previous
/// day's winning parameters can be passed as `incumbent`; they are
/// evaluated first and win ties.
pub fn tune_and_train(
    features: &FeatureMatrix,
    labels: &[(NaiveDate, FcrStrategy)],
    profits: &ProfitMatrix,
    pool: &[FcrStrategy],
    incumbent: Option<GbdtParams>,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let n = features.rows.len();
    if labels.len() != n {
        return Err(Error::domain(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if pool.is_empty() {
        return Err(Error::domain("label set must not be empty"));
    }
    let folds = anchored_folds(n, cfg.folds, cfg.fold_validation_days)?;

    let mut y = Vec::with_capacity(n);
    for ((day, strategy), feat_day) in labels.iter().zip(&features.days) {
        if day != feat_day {
            return Err(Error::domain(format!(
                "label day {day} does not line up with feature day {feat_day}"
            )));
        }
        let class = pool
            .iter()
            .position(|s| s == strategy)
            .ok_or_else(|| Error::domain(format!("label {strategy} outside the pool")))?;
        y.push(class);
    }
    let pool_cols: Vec<usize> = pool
        .iter()
        .map(|s| {
            profits
                .strategies()
                .iter()
                .position(|c| c == s)
                .ok_or_else(|| Error::domain(format!("pool strategy {s} not in profit matrix")))
        })
        .collect::<Result<Vec<_>>>()?;
    // every validation day must have realized profits to score against
    let val_profit = |row: usize, class: usize| -> Result<f64> {
        let day = features.days[row];
        profits
            .entry(day, pool_cols[class])
            .map(|e| e.total())
            .ok_or_else(|| Error::data(format!("profit matrix has no row for {day}")))
    };

    let pipeline = FeaturePipeline::fit(features)?;
    let expanded = pipeline.transform(features)?;
    let x = &expanded.rows;

    // candidate order: incumbent first (ties keep it), then the sample
    let grid = full_grid();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x9d1d));
    let take = cfg.sampled_candidates.min(grid.len());
    order.partial_shuffle(&mut rng, take);
    let mut candidates: Vec<GbdtParams> = Vec::with_capacity(take + 1);
    if let Some(inc) = incumbent {
        candidates.push(inc);
    }
    for &gi in &order[..take] {
        if Some(grid[gi]) != incumbent {
            candidates.push(grid[gi]);
        }
    }

    // fit seeds keyed on the grid position, not the evaluation order, so
    // the same combination always trains identically for a given seed
    let cand_seed = |params: &GbdtParams| -> u64 {
        let gi = grid
            .iter()
            .position(|g| g == params)
            .map_or(u64::MAX, |i| i as u64);
        splitmix(seed ^ gi)
    };

    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|params| {
            let base = cand_seed(params);
            let mut profit = 0.0;
            for (f, (train, val)) in folds.iter().enumerate() {
                let model = gbdt::fit(
                    &x[train.clone()],
                    &y[train.clone()],
                    pool.len(),
                    params,
                    splitmix(base ^ f as u64),
                )?;
                for r in val.clone() {
                    profit += val_profit(r, model.predict_class(&x[r]))?;
                }
            }
            Ok(profit)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best = 0usize;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    let params = candidates[best];
    let forest = gbdt::fit(x, &y, pool.len(), &params, splitmix(cand_seed(&params) ^ 0xf17))?;

    let base_hash = features.schema.hash_hex();
    let schema_hash = pipeline.output_schema().hash_hex();
    Ok(TrainedModel {
        version: MODEL_VERSION,
        base_schema_hash: base_hash,
        schema_hash,
        pipeline,
        labels: pool.to_vec(),
        params,
        window_start: features.days[0],
        window_end: *features.days.last().expect("window is nonempty"),
        window_days: n,
        seed,
        validation_profit_eur: scores[best],
        forest,
    })
}

/// Applies a trained model to one day's base features. The caller's
/// schema must hash-match the training schema.
pub fn predict(
    model: &TrainedModel,
    schema: &FeatureSchema,
    features: &FeatureVector,
) -> Result<FcrStrategy> {
    let actual = schema.hash_hex();
    if actual != model.base_schema_hash {
        return Err(Error::SchemaMismatch {
            expected: model.base_schema_hash.clone(),
            actual,
        });
    }
    let row = model.pipeline.transform_row(&features.values)?;
    Ok(model.labels[model.forest.predict_class(&row)])
}

pub mod io {
    //! Model artifacts as versioned JSON; feature matrices as CSV.

    use std::fs::File;
    use std::io::{BufReader, BufWriter, Write};
    use std::path::Path;

    use super::{FeatureMatrix, TrainedModel, MODEL_VERSION};
    use crate::error::{Error, Result};

    pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, model)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load_model(path: &Path) -> Result<TrainedModel> {
        let model: TrainedModel = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if model.version != MODEL_VERSION {
            return Err(Error::config(format!(
                "model artifact version {} unsupported, expected {MODEL_VERSION}",
                model.version
            )));
        }
        Ok(model)
    }

    /// Audit export: `day,<feature names...>` with full-precision floats.
    pub fn save_feature_matrix(path: &Path, m: &FeatureMatrix) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["day".to_string()];
        header.extend(m.schema.names.iter().cloned());
        w.write_record(&header)?;
        for (day, row) in m.days.iter().zip(&m.rows) {
            let mut rec = vec![day.to_string()];
            rec.extend(row.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcr::BessSpec;
    use crate::market::FrequencySeries;
    use crate::pool::{default_catalogue, ProfitEntry};

    fn day(n: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, n).unwrap()
    }

    /// One-zone exogenous set with constant DAA price and simple series.
    fn tiny_exo(days: &[NaiveDate], daa_price: f64, fcr_price: f64) -> ExogenousSeries {
        let mut exo = ExogenousSeries::new(FrequencySeries::default());
        let mut all: Vec<NaiveDate> = days.to_vec();
        // features for day d read FCR prices of d-1
        all.extend(days.iter().map(|d| *d - Duration::days(1)));
        for d in all {
            for h in 0..24 {
                let ts = d.and_hms_opt(h, 0, 0).unwrap().and_utc();
                exo.daa_prices.insert(("Z1".to_string(), ts), daa_price);
                for kind in ForecastKind::ALL {
                    let v = match kind {
                        ForecastKind::Solar => (h as f64 - 12.0).abs(),
                        ForecastKind::WindOn => h as f64,
                        ForecastKind::WindOff => 2.0 * h as f64,
                        ForecastKind::Load => 100.0 + h as f64,
                    };
                    exo.forecasts.insert((kind, ts), v);
                }
            }
            for b in 1..=6 {
                exo.fcr_clearing.insert((d, b), fcr_price);
            }
        }
        exo
    }

    fn tiny_cfg() -> FeatureConfig {
        FeatureConfig {
            zones: vec!["Z1".to_string()],
            trend_origin: day(1),
        }
    }

    #[test]
    fn constant_daa_prices_make_flat_block_stats() {
        let d = day(5);
        let exo = tiny_exo(&[d], 50.0, 10.0);
        let cfg = tiny_cfg();
        let fv = build_features(&exo, &cfg, d).unwrap();
        let schema = base_schema(&cfg);
        assert_eq!(fv.values.len(), schema.len());
        for b in 0..6 {
            assert_eq!(fv.values[2 * b], 50.0, "block {} mean", b + 1);
            assert_eq!(fv.values[2 * b + 1], 0.0, "block {} std", b + 1);
        }
    }

    #[test]
    fn calendar_features_follow_the_stated_encodings() {
        // 2024-03-31 is a Sunday with ordinal 91
        let d = NaiveDate::from_ymd_opt(2024, 3, 31).unwrap();
        let exo = tiny_exo(&[d], 50.0, 10.0);
        let cfg = FeatureConfig {
            zones: vec!["Z1".to_string()],
            trend_origin: NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(),
        };
        let fv = build_features(&exo, &cfg, d).unwrap();
        let schema = base_schema(&cfg);
        let at = |name: &str| {
            let i = schema.names.iter().position(|n| n == name).unwrap();
            fv.values[i]
        };
        assert_eq!(at("cal:weekday"), 0.0);
        assert_eq!(at("cal:weekend"), 1.0);
        assert_eq!(at("cal:day_of_year"), 91.0);
        assert_eq!(at("cal:trend"), 30.0);
        let expected_sin = (std::f64::consts::TAU * 91.0 / 365.0).sin();
        assert_eq!(at("cal:annual_sin"), expected_sin);
        assert_eq!(at("cal:weekly_sin"), 0.0);
        assert_eq!(at("cal:weekly_cos"), 1.0);
        // Saturday is weekday 6 and also a weekend day
        let sat = NaiveDate::from_ymd_opt(2024, 3, 30).unwrap();
        let exo2 = tiny_exo(&[sat], 50.0, 10.0);
        let fv2 = build_features(&exo2, &cfg, sat).unwrap();
        let i = schema.names.iter().position(|n| n == "cal:weekday").unwrap();
        assert_eq!(fv2.values[i], 6.0);
        assert_eq!(fv2.values[i + 1], 1.0);
    }

    #[test]
    fn missing_series_errors_name_the_series() {
        let d = day(5);
        let cfg = tiny_cfg();
        let mut exo = tiny_exo(&[d], 50.0, 10.0);
        exo.forecasts.retain(|(k, _), _| *k != ForecastKind::WindOff);
        let err = build_features(&exo, &cfg, d).unwrap_err().to_string();
        assert!(err.contains("wind-off"), "{err}");

        let mut exo = tiny_exo(&[d], 50.0, 10.0);
        exo.daa_prices.retain(|(z, _), _| z != "Z1");
        let err = build_features(&exo, &cfg, d).unwrap_err().to_string();
        assert!(err.contains("Z1"), "{err}");

        let mut exo = tiny_exo(&[d], 50.0, 10.0);
        exo.fcr_clearing.remove(&(d - Duration::days(1), 3));
        let err = build_features(&exo, &cfg, d).unwrap_err().to_string();
        assert!(err.contains("FCR") && err.contains("2024-01-04"), "{err}");
    }

    #[test]
    fn constant_lags_collapse_interactions_onto_base_features() {
        // FCR lag identical across days: every product column is either
        // proportional to its base feature or constant, so none survive
        let days: Vec<NaiveDate> = (5..15).map(day).collect();
        let mut exo = tiny_exo(&days, 50.0, 10.0);
        let cfg = tiny_cfg();
        // vary DAA so base features are not degenerate
        for (i, d) in days.iter().enumerate() {
            for h in 0..24 {
                let ts = d.and_hms_opt(h, 0, 0).unwrap().and_utc();
                exo.daa_prices
                    .insert(("Z1".to_string(), ts), 40.0 + i as f64 * 3.0 + (h as f64) * 0.5);
            }
        }
        let base = build_feature_matrix(&exo, &cfg, &days).unwrap();
        let pipeline = FeaturePipeline::fit(&base).unwrap();
        assert!(
            pipeline
                .selected()
                .iter()
                .all(|id| matches!(id, FeatureId::Base(_))),
            "interactions with a constant lag must all be filtered"
        );
        // and the constant lag columns themselves are gone
        let names = pipeline.output_schema().names;
        assert!(names.iter().all(|n| !n.starts_with("fcr_lag:")));
    }

    #[test]
    fn identical_columns_keep_only_the_earlier_one() {
        let days: Vec<NaiveDate> = (5..12).map(day).collect();
        let exo = tiny_exo(&days, 50.0, 10.0);
        let mut exo2 = exo.clone();
        // a second zone with byte-identical prices
        for ((z, ts), v) in exo.daa_prices.iter() {
            assert_eq!(z, "Z1");
            exo2.daa_prices.insert(("Z2".to_string(), *ts), *v);
        }
        // vary prices across days so columns are non-degenerate
        for (i, d) in days.iter().enumerate() {
            for h in 0..24 {
                let ts = d.and_hms_opt(h, 0, 0).unwrap().and_utc();
                let v = 40.0 + i as f64 * 3.0 + (h % 5) as f64;
                exo2.daa_prices.insert(("Z1".to_string(), ts), v);
                exo2.daa_prices.insert(("Z2".to_string(), ts), v);
            }
        }
        let cfg = FeatureConfig {
            zones: vec!["Z1".to_string(), "Z2".to_string()],
            trend_origin: day(1),
        };
        let base = build_feature_matrix(&exo2, &cfg, &days).unwrap();
        let pipeline = FeaturePipeline::fit(&base).unwrap();
        let names = pipeline.output_schema().names;
        assert!(names.iter().any(|n| n.starts_with("daa:Z1:")));
        assert!(
            names.iter().all(|n| !n.starts_with("daa:Z2:")),
            "duplicate zone columns must lose to the earlier zone"
        );
    }

    #[test]
    fn anchored_folds_are_nested_and_validate_forward() {
        let folds = anchored_folds(240, 5, 15).unwrap();
        assert_eq!(folds.len(), 5);
        let mut prev_train_end = 0;
        for (train, val) in &folds {
            assert_eq!(train.start, 0);
            assert!(train.end >= prev_train_end, "training sets must grow");
            assert_eq!(val.start, train.end, "validation follows training");
            assert_eq!(val.len(), 15);
            prev_train_end = train.end;
        }
        assert_eq!(folds[0].0.end, 165);
        assert_eq!(folds[4].1.end, 240);
        assert!(anchored_folds(74, 5, 15).is_err());
        assert!(anchored_folds(75, 5, 15).is_ok());
    }

    /// A profit matrix over the tiny catalogue where `winner` earns 100
    /// on every day and everything else earns 0.
    fn flat_profits(days: &[NaiveDate], n_strats: usize, winner: usize) -> ProfitMatrix {
        let strategies = default_catalogue(&BessSpec::default())[..n_strats].to_vec();
        let mut m = ProfitMatrix::new(strategies).unwrap();
        for &d in days {
            let entries = (0..n_strats)
                .map(|j| ProfitEntry {
                    pi_fcr_eur: 0.0,
                    pi_idm_eur: if j == winner { 100.0 } else { 0.0 },
                })
                .collect();
            m.insert_day(d, entries).unwrap();
        }
        m
    }

    fn fast_cfg() -> TrainConfig {
        TrainConfig {
            folds: 2,
            fold_validation_days: 3,
            sampled_candidates: 2,
        }
    }

    #[test]
    fn single_label_training_predicts_that_label() {
        let days: Vec<NaiveDate> = (5..15).map(day).collect();
        let exo = tiny_exo(&days, 50.0, 10.0);
        let cfg = tiny_cfg();
        let base = build_feature_matrix(&exo, &cfg, &days).unwrap();
        let profits = flat_profits(&days, 3, 1);
        let pool = vec![profits.strategies()[1]];
        let labels: Vec<(NaiveDate, FcrStrategy)> =
            days.iter().map(|&d| (d, pool[0])).collect();
        let model =
            tune_and_train(&base, &labels, &profits, &pool, None, 7, &fast_cfg()).unwrap();
        let schema = base_schema(&cfg);
        for &d in &days {
            let fv = build_features(&exo, &cfg, d).unwrap();
            assert_eq!(predict(&model, &schema, &fv).unwrap(), pool[0]);
        }
        // validation profit is that strategy's profit on the 6 val days
        assert_eq!(model.validation_profit_eur, 600.0);
    }

    #[test]
    fn window_shorter_than_the_fold_layout_is_a_config_error() {
        let days: Vec<NaiveDate> = (5..9).map(day).collect();
        let exo = tiny_exo(&days, 50.0, 10.0);
        let cfg = tiny_cfg();
        let base = build_feature_matrix(&exo, &cfg, &days).unwrap();
        let profits = flat_profits(&days, 2, 0);
        let pool = profits.strategies().to_vec();
        let labels: Vec<(NaiveDate, FcrStrategy)> =
            days.iter().map(|&d| (d, pool[0])).collect();
        let err = tune_and_train(
            &base,
            &labels,
            &profits,
            &pool,
            None,
            7,
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn tuning_is_deterministic_for_a_fixed_seed() {
        let days: Vec<NaiveDate> = (5..17).map(day).collect();
        let mut exo = tiny_exo(&days, 50.0, 10.0);
        for (i, d) in days.iter().enumerate() {
            for h in 0..24 {
                let ts = d.and_hms_opt(h, 0, 0).unwrap().and_utc();
                exo.daa_prices
                    .insert(("Z1".to_string(), ts), 40.0 + ((i * 7 + h as usize) % 13) as f64);
            }
        }
        let cfg = tiny_cfg();
        let base = build_feature_matrix(&exo, &cfg, &days).unwrap();
        let profits = flat_profits(&days, 2, 0);
        let pool = profits.strategies().to_vec();
        let labels: Vec<(NaiveDate, FcrStrategy)> = days
            .iter()
            .enumerate()
            .map(|(i, &d)| (d, pool[i % 2]))
            .collect();
        let a = tune_and_train(&base, &labels, &profits, &pool, None, 42, &fast_cfg()).unwrap();
        let b = tune_and_train(&base, &labels, &profits, &pool, None, 42, &fast_cfg()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn prediction_rejects_a_foreign_schema() {
        let days: Vec<NaiveDate> = (5..15).map(day).collect();
        let exo = tiny_exo(&days, 50.0, 10.0);
        let cfg = tiny_cfg();
        let base = build_feature_matrix(&exo, &cfg, &days).unwrap();
        let profits = flat_profits(&days, 2, 0);
        let pool = profits.strategies().to_vec();
        let labels: Vec<(NaiveDate, FcrStrategy)> =
            days.iter().map(|&d| (d, pool[0])).collect();
        let model =
            tune_and_train(&base, &labels, &profits, &pool, None, 7, &fast_cfg()).unwrap();
        let other_cfg = FeatureConfig {
            zones: vec!["Z1".to_string(), "Z9".to_string()],
            trend_origin: day(1),
        };
        let fv = build_features(&exo, &cfg, days[0]).unwrap();
        let err = predict(&model, &base_schema(&other_cfg), &fv).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch { .. }), "{err}");
    }

    #[test]
    fn model_artifact_round_trips_and_checks_version() {
        let days: Vec<NaiveDate> = (5..15).map(day).collect();
        let exo = tiny_exo(&days, 50.0, 10.0);
        let cfg = tiny_cfg();
        let base = build_feature_matrix(&exo, &cfg, &days).unwrap();
        let profits = flat_profits(&days, 2, 0);
        let pool = profits.strategies().to_vec();
        let labels: Vec<(NaiveDate, FcrStrategy)> =
            days.iter().map(|&d| (d, pool[0])).collect();
        let model =
            tune_and_train(&base, &labels, &profits, &pool, None, 7, &fast_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        io::save_model(&path, &model).unwrap();
        let loaded = io::load_model(&path).unwrap();
        assert_eq!(loaded, model);
        let mut bumped = model.clone();
        bumped.version = MODEL_VERSION + 1;
        io::save_model(&path, &bumped).unwrap();
        assert!(matches!(io::load_model(&path), Err(Error::Config(_))));
    }

    #[test]
    fn feature_matrix_export_is_byte_stable() {
        let days: Vec<NaiveDate> = (5..8).map(day).collect();
        let exo = tiny_exo(&days, 50.25, 10.5);
        let cfg = tiny_cfg();
        let base = build_feature_matrix(&exo, &cfg, &days).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        io::save_feature_matrix(&path, &base).unwrap();
        let first = std::fs::read(&path).unwrap();
        io::save_feature_matrix(&path, &base).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        let text = String::from_utf8(first).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("day,daa:Z1:b1:mean,daa:Z1:b1:std"));
        assert_eq!(text.lines().count(), 1 + days.len());
    }
}

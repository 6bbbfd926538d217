//! CSV ingestion and export. All timestamps are RFC 3339 UTC; all errors
//! carry the 1-based file row (header is row 1).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use csv::StringRecord;

use crate::error::{Error, Result};
use crate::market::types::{
    DeliveryPeriod, ForecastKind, FrequencySeries, Order, OrderBookSnapshot, ProductBook,
    ProductDuration, Side,
};

fn ingest_err(row: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        row,
        message: message.into(),
    }
}

fn parse_ts(row: usize, s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| ingest_err(row, format!("bad timestamp {s:?}: {e}")))
}

fn parse_date(row: usize, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| ingest_err(row, format!("bad date {s:?}: {e}")))
}

fn parse_f64(row: usize, field: &str, s: &str) -> Result<f64> {
    f64::from_str(s.trim()).map_err(|e| ingest_err(row, format!("bad {field} {s:?}: {e}")))
}

fn field<'r>(row: usize, rec: &'r StringRecord, idx: usize, name: &str) -> Result<&'r str> {
    rec.get(idx)
        .ok_or_else(|| ingest_err(row, format!("missing column {name}")))
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(Error::from)
}

fn check_header(path: &Path, reader: &mut csv::Reader<std::fs::File>, expected: &[&str]) -> Result<()> {
    let headers = reader.headers()?.clone();
    let actual: Vec<&str> = headers.iter().collect();
    if actual != expected {
        return Err(Error::SchemaMismatch {
            expected: expected.join(","),
            actual: format!("{} in {}", actual.join(","), path.display()),
        });
    }
    Ok(())
}

const SNAPSHOT_HEADER: [&str; 7] = [
    "timestamp",
    "product_start",
    "duration_h",
    "side",
    "price",
    "quantity",
    "order_id",
];

/// Reads a snapshot stream. Rows sharing a timestamp form one snapshot;
/// a timestamp change starts the next, and timestamps must be strictly
/// increasing across snapshots. Ladders are price-sorted after load and
/// optionally truncated to `depth` levels per side.
pub fn load_snapshots(path: &Path, depth: Option<usize>) -> Result<Vec<OrderBookSnapshot>> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &SNAPSHOT_HEADER)?;
    let mut snapshots: Vec<OrderBookSnapshot> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ingest_err(row, e.to_string()))?;
        let ts = parse_ts(row, field(row, &rec, 0, "timestamp")?)?;
        let product_start = parse_ts(row, field(row, &rec, 1, "product_start")?)?;
        let duration_h = parse_f64(row, "duration_h", field(row, &rec, 2, "duration_h")?)?;
        let duration = ProductDuration::from_hours(duration_h)
            .map_err(|e| ingest_err(row, e.to_string()))?;
        let side = Side::parse(field(row, &rec, 3, "side")?)
            .map_err(|e| ingest_err(row, e.to_string()))?;
        let price = parse_f64(row, "price", field(row, &rec, 4, "price")?)?;
        let quantity = parse_f64(row, "quantity", field(row, &rec, 5, "quantity")?)?;
        let order_id = field(row, &rec, 6, "order_id")?.to_string();

        let product = DeliveryPeriod::new(product_start, duration)
            .map_err(|e| ingest_err(row, e.to_string()))?;
        let order = Order {
            order_id,
            product,
            side,
            limit_price: price,
            quantity_mw: quantity,
        };
        order.validate().map_err(|e| ingest_err(row, e.to_string()))?;

        match snapshots.last_mut() {
            Some(last) if last.timestamp == ts => {
                let book = last.books.entry(product).or_default();
                match side {
                    Side::Bid => book.bids.push(order),
                    Side::Ask => book.asks.push(order),
                }
            }
            Some(last) if last.timestamp > ts => {
                return Err(ingest_err(
                    row,
                    format!(
                        "snapshot timestamps not increasing: {ts} after {}",
                        last.timestamp
                    ),
                ));
            }
            _ => {
                let mut snap = OrderBookSnapshot::new(ts);
                let mut book = ProductBook::default();
                match side {
                    Side::Bid => book.bids.push(order),
                    Side::Ask => book.asks.push(order),
                }
                snap.books.insert(product, book);
                snapshots.push(snap);
            }
        }
    }
    for snap in &mut snapshots {
        for book in snap.books.values_mut() {
            book.sort_ladders();
            if let Some(d) = depth {
                book.truncate_depth(d);
            }
            book.validate()?;
        }
    }
    Ok(snapshots)
}

pub fn save_snapshots(path: &Path, snapshots: &[OrderBookSnapshot]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SNAPSHOT_HEADER)?;
    for snap in snapshots {
        let ts = snap.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        for (product, book) in &snap.books {
            for order in book.bids.iter().chain(book.asks.iter()) {
                w.write_record([
                    ts.as_str(),
                    &product.start.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                    &format!("{}", product.duration.hours()),
                    &order.side.to_string(),
                    &format!("{}", order.limit_price),
                    &format!("{}", order.quantity_mw),
                    &order.order_id,
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

const KEYED_HEADER: [&str; 3] = ["timestamp", "key", "value"];

fn load_keyed_series(path: &Path) -> Result<Vec<(DateTime<Utc>, String, f64)>> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &KEYED_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ingest_err(row, e.to_string()))?;
        let ts = parse_ts(row, field(row, &rec, 0, "timestamp")?)?;
        let key = field(row, &rec, 1, "key")?.to_string();
        let value = parse_f64(row, "value", field(row, &rec, 2, "value")?)?;
        out.push((ts, key, value));
    }
    Ok(out)
}

fn save_keyed_series<'a>(
    path: &Path,
    rows: impl Iterator<Item = (&'a DateTime<Utc>, &'a str, f64)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(KEYED_HEADER)?;
    for (ts, key, value) in rows {
        w.write_record([
            ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true).as_str(),
            key,
            &format!("{value}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Day-ahead auction prices, key = zone name.
pub fn load_daa(path: &Path) -> Result<BTreeMap<(String, DateTime<Utc>), f64>> {
    Ok(load_keyed_series(path)?
        .into_iter()
        .map(|(ts, zone, v)| ((zone, ts), v))
        .collect())
}

pub fn save_daa(path: &Path, daa: &BTreeMap<(String, DateTime<Utc>), f64>) -> Result<()> {
    save_keyed_series(path, daa.iter().map(|((z, ts), v)| (ts, z.as_str(), *v)))
}

/// Public power forecasts, key = forecast kind.
pub fn load_forecasts(path: &Path) -> Result<BTreeMap<(ForecastKind, DateTime<Utc>), f64>> {
    let mut out = BTreeMap::new();
    for (i, (ts, key, v)) in load_keyed_series(path)?.into_iter().enumerate() {
        let kind = ForecastKind::parse(&key).map_err(|e| ingest_err(i + 2, e.to_string()))?;
        out.insert((kind, ts), v);
    }
    Ok(out)
}

pub fn save_forecasts(
    path: &Path,
    forecasts: &BTreeMap<(ForecastKind, DateTime<Utc>), f64>,
) -> Result<()> {
    save_keyed_series(path, forecasts.iter().map(|((k, ts), v)| (ts, k.as_str(), *v)))
}

const FCR_HEADER: [&str; 3] = ["date", "efa_block", "price_eur_mw"];

pub fn load_fcr_clearing(path: &Path) -> Result<BTreeMap<(NaiveDate, u8), f64>> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &FCR_HEADER)?;
    let mut out = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ingest_err(row, e.to_string()))?;
        let date = parse_date(row, field(row, &rec, 0, "date")?)?;
        let block: u8 = field(row, &rec, 1, "efa_block")?
            .parse()
            .map_err(|e| ingest_err(row, format!("bad efa_block: {e}")))?;
        if !(1..=6).contains(&block) {
            return Err(ingest_err(row, format!("efa_block {block} outside 1..=6")));
        }
        let price = parse_f64(row, "price_eur_mw", field(row, &rec, 2, "price_eur_mw")?)?;
        out.insert((date, block), price);
    }
    Ok(out)
}

pub fn save_fcr_clearing(path: &Path, prices: &BTreeMap<(NaiveDate, u8), f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FCR_HEADER)?;
    for ((date, block), price) in prices {
        w.write_record([
            date.format("%Y-%m-%d").to_string().as_str(),
            &block.to_string(),
            &format!("{price}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const FREQUENCY_HEADER: [&str; 2] = ["timestamp", "delta_f_hz"];

/// Frequency deviations on a uniform grid; irregular spacing is an
/// ingestion error.
pub fn load_frequency(path: &Path) -> Result<FrequencySeries> {
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &FREQUENCY_HEADER)?;
    let mut start: Option<DateTime<Utc>> = None;
    let mut step: Option<i64> = None;
    let mut prev: Option<DateTime<Utc>> = None;
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ingest_err(row, e.to_string()))?;
        let ts = parse_ts(row, field(row, &rec, 0, "timestamp")?)?;
        let v = parse_f64(row, "delta_f_hz", field(row, &rec, 1, "delta_f_hz")?)?;
        if let Some(p) = prev {
            let dt = (ts - p).num_seconds();
            if dt <= 0 {
                return Err(ingest_err(row, "timestamps not strictly increasing"));
            }
            match step {
                None => step = Some(dt),
                Some(s) if s != dt => {
                    return Err(ingest_err(
                        row,
                        format!("irregular sampling: step {dt}s, expected {s}s"),
                    ))
                }
                _ => {}
            }
        } else {
            start = Some(ts);
        }
        prev = Some(ts);
        values.push(v);
    }
    let start = start.ok_or_else(|| ingest_err(2, "frequency file has no samples"))?;
    let step = step.unwrap_or(10);
    Ok(FrequencySeries {
        start,
        step_seconds: step as u32,
        delta_f_hz: values,
    })
}

pub fn save_frequency(path: &Path, series: &FrequencySeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FREQUENCY_HEADER)?;
    for (k, v) in series.delta_f_hz.iter().enumerate() {
        let ts = series.start + Duration::seconds(series.step_seconds as i64 * k as i64);
        w.write_record([
            ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true).as_str(),
            &format!("{v}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

//! Order-book and exogenous-series data models.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Duration, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exchange price limits, EUR/MWh.
pub const MIN_PRICE: f64 = -9999.0;
pub const MAX_PRICE: f64 = 9999.0;
/// Minimum bid volume and volume increment, MW.
pub const MIN_VOLUME_MW: f64 = 0.1;

const VOLUME_GRID_EPS: f64 = 1e-6;

/// Side of a resting order. `sign()` follows the bid = -1 / ask = +1
/// convention; the trade executed against a resting order runs in the
/// opposite direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Bid => -1.0,
            Side::Ask => 1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }

    pub fn parse(s: &str) -> Result<Side> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bid" | "buy" | "b" | "-1" => Ok(Side::Bid),
            "ask" | "sell" | "a" | "1" | "+1" => Ok(Side::Ask),
            other => Err(Error::domain(format!("unknown side {other:?}"))),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Bid => write!(f, "bid"),
            Side::Ask => write!(f, "ask"),
        }
    }
}

/// Contract granularity of a delivery period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProductDuration {
    QuarterHour,
    HalfHour,
    Hour,
}

impl ProductDuration {
    pub fn hours(self) -> f64 {
        match self {
            ProductDuration::QuarterHour => 0.25,
            ProductDuration::HalfHour => 0.5,
            ProductDuration::Hour => 1.0,
        }
    }

    pub fn minutes(self) -> i64 {
        match self {
            ProductDuration::QuarterHour => 15,
            ProductDuration::HalfHour => 30,
            ProductDuration::Hour => 60,
        }
    }

    pub fn from_hours(h: f64) -> Result<ProductDuration> {
        if (h - 0.25).abs() < 1e-9 {
            Ok(ProductDuration::QuarterHour)
        } else if (h - 0.5).abs() < 1e-9 {
            Ok(ProductDuration::HalfHour)
        } else if (h - 1.0).abs() < 1e-9 {
            Ok(ProductDuration::Hour)
        } else {
            Err(Error::domain(format!(
                "duration {h} h is not one of 0.25, 0.5, 1.0"
            )))
        }
    }

    /// Number of products of this granularity in one day.
    pub fn products_per_day(self) -> usize {
        (24 * 60 / self.minutes()) as usize
    }
}

/// One tradeable contract: delivery start plus granularity.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct DeliveryPeriod {
    pub start: DateTime<Utc>,
    pub duration: ProductDuration,
}

impl DeliveryPeriod {
    pub fn new(start: DateTime<Utc>, duration: ProductDuration) -> Result<Self> {
        let p = DeliveryPeriod { start, duration };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let aligned = self.start.second() == 0
            && self.start.nanosecond() == 0
            && (self.start.minute() as i64 % self.duration.minutes().min(60)) == 0
            && (self.duration != ProductDuration::Hour || self.start.minute() == 0);
        if !aligned {
            return Err(Error::validation(format!(
                "delivery start {} not aligned to {} min grid",
                self.start,
                self.duration.minutes()
            )));
        }
        Ok(())
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::minutes(self.duration.minutes())
    }

    /// Calendar day the contract delivers on.
    pub fn delivery_date(&self) -> NaiveDate {
        self.start.date_naive()
    }

    /// EFA block (1..=6) containing the delivery start.
    pub fn efa_block(&self) -> u8 {
        (self.start.hour() / 4) as u8 + 1
    }
}

/// A resting limit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub order_id: String,
    pub product: DeliveryPeriod,
    pub side: Side,
    pub limit_price: f64,
    pub quantity_mw: f64,
}

impl Order {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_PRICE..=MAX_PRICE).contains(&self.limit_price) {
            return Err(Error::validation(format!(
                "order {}: price {} outside [{MIN_PRICE}, {MAX_PRICE}]",
                self.order_id, self.limit_price
            )));
        }
        if self.quantity_mw < MIN_VOLUME_MW - VOLUME_GRID_EPS {
            return Err(Error::validation(format!(
                "order {}: quantity {} below minimum volume {MIN_VOLUME_MW}",
                self.order_id, self.quantity_mw
            )));
        }
        let lots = self.quantity_mw / MIN_VOLUME_MW;
        if (lots - lots.round()).abs() > VOLUME_GRID_EPS {
            return Err(Error::validation(format!(
                "order {}: quantity {} not a multiple of {MIN_VOLUME_MW} MW",
                self.order_id, self.quantity_mw
            )));
        }
        Ok(())
    }
}

/// A fill produced by clearing against the book.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub order_id: String,
    pub mw: f64,
    pub price: f64,
}

/// Bid and ask ladders for one product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProductBook {
    /// Sorted descending by price.
    pub bids: Vec<Order>,
    /// Sorted ascending by price.
    pub asks: Vec<Order>,
}

impl ProductBook {
    pub fn best_bid(&self) -> Option<&Order> {
        self.bids.first()
    }

    pub fn best_ask(&self) -> Option<&Order> {
        self.asks.first()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty() && self.asks.is_empty()
    }

    /// Price-sorts both ladders (stable, so ties keep file order).
    pub fn sort_ladders(&mut self) {
        self.bids
            .sort_by(|a, b| b.limit_price.partial_cmp(&a.limit_price).unwrap());
        self.asks
            .sort_by(|a, b| a.limit_price.partial_cmp(&b.limit_price).unwrap());
    }

    pub fn truncate_depth(&mut self, depth: usize) {
        self.bids.truncate(depth);
        self.asks.truncate(depth);
    }

    pub fn validate(&self) -> Result<()> {
        for o in self.bids.iter().chain(self.asks.iter()) {
            o.validate()?;
        }
        if !self.bids.windows(2).all(|w| w[0].limit_price >= w[1].limit_price) {
            return Err(Error::validation("bid ladder not sorted descending"));
        }
        if !self.asks.windows(2).all(|w| w[0].limit_price <= w[1].limit_price) {
            return Err(Error::validation("ask ladder not sorted ascending"));
        }
        if let (Some(b), Some(a)) = (self.best_bid(), self.best_ask()) {
            if b.limit_price >= a.limit_price {
                return Err(Error::validation(format!(
                    "crossed book: best bid {} >= best ask {}",
                    b.limit_price, a.limit_price
                )));
            }
        }
        Ok(())
    }

    /// Resting quantity left on `side` after applying `fills`.
    pub fn apply_fills(&mut self, side: Side, fills: &[Fill]) {
        let ladder = match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        };
        for fill in fills {
            if let Some(o) = ladder.iter_mut().find(|o| o.order_id == fill.order_id) {
                o.quantity_mw -= fill.mw;
            }
        }
        ladder.retain(|o| o.quantity_mw > VOLUME_GRID_EPS);
    }
}

/// Full order-book state at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderBookSnapshot {
    pub timestamp: DateTime<Utc>,
    pub books: BTreeMap<DeliveryPeriod, ProductBook>,
}

impl OrderBookSnapshot {
    pub fn new(timestamp: DateTime<Utc>) -> Self {
        OrderBookSnapshot {
            timestamp,
            books: BTreeMap::new(),
        }
    }

    pub fn book(&self, product: &DeliveryPeriod) -> Option<&ProductBook> {
        self.books.get(product)
    }

    /// Structural checks: ladder order, no crossed products, and every
    /// product still tradeable given the gate-closure lead time.
    pub fn validate(&self, gate_lead: Duration) -> Result<()> {
        for (product, book) in &self.books {
            product.validate()?;
            book.validate()?;
            if product.start <= self.timestamp + gate_lead {
                return Err(Error::validation(format!(
                    "product starting {} already gate-closed at snapshot time {}",
                    product.start, self.timestamp
                )));
            }
        }
        Ok(())
    }

    pub fn order_count(&self) -> usize {
        self.books
            .values()
            .map(|b| b.bids.len() + b.asks.len())
            .sum()
    }
}

/// Kind of public power forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastKind {
    Solar,
    WindOn,
    WindOff,
    Load,
}

impl ForecastKind {
    pub const ALL: [ForecastKind; 4] = [
        ForecastKind::Solar,
        ForecastKind::WindOn,
        ForecastKind::WindOff,
        ForecastKind::Load,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ForecastKind::Solar => "solar",
            ForecastKind::WindOn => "wind-on",
            ForecastKind::WindOff => "wind-off",
            ForecastKind::Load => "load",
        }
    }

    pub fn parse(s: &str) -> Result<ForecastKind> {
        match s.trim() {
            "solar" => Ok(ForecastKind::Solar),
            "wind-on" => Ok(ForecastKind::WindOn),
            "wind-off" => Ok(ForecastKind::WindOff),
            "load" => Ok(ForecastKind::Load),
            other => Err(Error::domain(format!("unknown forecast kind {other:?}"))),
        }
    }
}

/// Uniformly sampled grid-frequency deviation series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySeries {
    pub start: DateTime<Utc>,
    pub step_seconds: u32,
    pub delta_f_hz: Vec<f64>,
}

impl Default for FrequencySeries {
    fn default() -> Self {
        FrequencySeries {
            start: DateTime::<Utc>::UNIX_EPOCH,
            step_seconds: 10,
            delta_f_hz: Vec::new(),
        }
    }
}

impl FrequencySeries {
    pub fn empty(start: DateTime<Utc>, step_seconds: u32) -> Self {
        FrequencySeries {
            start,
            step_seconds,
            delta_f_hz: Vec::new(),
        }
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start + Duration::seconds(self.step_seconds as i64 * self.delta_f_hz.len() as i64)
    }

    pub fn step_hours(&self) -> f64 {
        self.step_seconds as f64 / 3600.0
    }

    /// Samples whose timestamps fall in `[from, to)`, as (timestamp, value).
    /// Errors if the requested window is not fully covered by the series.
    pub fn window(
        &self,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<impl Iterator<Item = (DateTime<Utc>, f64)> + '_> {
        if to < from {
            return Err(Error::domain("frequency window end before start"));
        }
        if from < self.start || to > self.end() {
            return Err(Error::Ingestion {
                row: 0,
                message: format!(
                    "frequency series [{}, {}) does not cover requested window [{}, {})",
                    self.start,
                    self.end(),
                    from,
                    to
                ),
            });
        }
        let step = self.step_seconds as i64;
        let offset = (from - self.start).num_seconds();
        let first = (offset + step - 1) / step; // first sample index at or after `from`
        let start = self.start;
        Ok((first..self.delta_f_hz.len() as i64)
            .map(move |k| (start + Duration::seconds(k * step), self.delta_f_hz[k as usize]))
            .take_while(move |(ts, _)| *ts < to))
    }
}

/// All non-order-book inputs: day-ahead prices, power forecasts, FCR
/// clearing prices, and the frequency-deviation series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExogenousSeries {
    /// (zone, hour start) -> EUR/MWh
    pub daa_prices: BTreeMap<(String, DateTime<Utc>), f64>,
    /// (kind, hour start) -> MW
    pub forecasts: BTreeMap<(ForecastKind, DateTime<Utc>), f64>,
    /// (delivery day, EFA block 1..=6) -> EUR/MW
    pub fcr_clearing: BTreeMap<(NaiveDate, u8), f64>,
    pub frequency: FrequencySeries,
}

impl ExogenousSeries {
    pub fn new(frequency: FrequencySeries) -> Self {
        ExogenousSeries {
            daa_prices: BTreeMap::new(),
            forecasts: BTreeMap::new(),
            fcr_clearing: BTreeMap::new(),
            frequency,
        }
    }

    pub fn zones(&self) -> Vec<String> {
        let mut zones: Vec<String> = self
            .daa_prices
            .keys()
            .map(|(z, _)| z.clone())
            .collect();
        zones.dedup();
        zones.sort();
        zones.dedup();
        zones
    }

    /// 24 hourly DAA prices for one zone and day.
    pub fn daa_hourly(&self, zone: &str, day: NaiveDate) -> Result<[f64; 24]> {
        let mut out = [0.0; 24];
        for (h, slot) in out.iter_mut().enumerate() {
            let ts = day
                .and_hms_opt(h as u32, 0, 0)
                .unwrap()
                .and_utc();
            *slot = *self
                .daa_prices
                .get(&(zone.to_string(), ts))
                .ok_or_else(|| {
                    Error::data(format!("DAA price missing for zone {zone} at {ts}"))
                })?;
        }
        Ok(out)
    }

    /// 24 hourly forecast values for one kind and day.
    pub fn forecast_hourly(&self, kind: ForecastKind, day: NaiveDate) -> Result<[f64; 24]> {
        let mut out = [0.0; 24];
        for (h, slot) in out.iter_mut().enumerate() {
            let ts = day.and_hms_opt(h as u32, 0, 0).unwrap().and_utc();
            *slot = *self.forecasts.get(&(kind, ts)).ok_or_else(|| {
                Error::data(format!(
                    "forecast {} missing at {ts}",
                    kind.as_str()
                ))
            })?;
        }
        Ok(out)
    }

    /// The six FCR clearing prices of one delivery day.
    pub fn fcr_prices_for_day(&self, day: NaiveDate) -> Result<[f64; 6]> {
        let mut out = [0.0; 6];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = *self
                .fcr_clearing
                .get(&(day, i as u8 + 1))
                .ok_or_else(|| {
                    Error::data(format!(
                        "FCR clearing price missing for {day} block {}",
                        i + 1
                    ))
                })?;
        }
        Ok(out)
    }

    /// Checks that every day with any DAA/forecast value has the full
    /// 24-hour grid; partial days are ingestion errors.
    pub fn validate_no_gaps(&self) -> Result<()> {
        let mut daa_days: BTreeMap<(String, NaiveDate), usize> = BTreeMap::new();
        for (zone, ts) in self.daa_prices.keys() {
            if ts.minute() != 0 || ts.second() != 0 {
                return Err(Error::validation(format!(
                    "DAA timestamp {ts} not on the hourly grid"
                )));
            }
            *daa_days.entry((zone.clone(), ts.date_naive())).or_insert(0) += 1;
        }
        for ((zone, day), n) in &daa_days {
            if *n != 24 {
                return Err(Error::validation(format!(
                    "DAA series for zone {zone} on {day} has {n} hours, expected 24"
                )));
            }
        }
        let mut fk_days: BTreeMap<(ForecastKind, NaiveDate), usize> = BTreeMap::new();
        for (kind, ts) in self.forecasts.keys() {
            *fk_days.entry((*kind, ts.date_naive())).or_insert(0) += 1;
        }
        for ((kind, day), n) in &fk_days {
            if *n != 24 {
                return Err(Error::validation(format!(
                    "forecast {} on {day} has {n} hours, expected 24",
                    kind.as_str()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(h: u32, m: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 5, h, m, 0).unwrap()
    }

    #[test]
    fn delivery_period_alignment() {
        assert!(DeliveryPeriod::new(ts(10, 0), ProductDuration::Hour).is_ok());
        assert!(DeliveryPeriod::new(ts(10, 30), ProductDuration::Hour).is_err());
        assert!(DeliveryPeriod::new(ts(10, 45), ProductDuration::QuarterHour).is_ok());
        assert!(DeliveryPeriod::new(ts(10, 40), ProductDuration::QuarterHour).is_err());
    }

    #[test]
    fn efa_block_of_period() {
        let p = DeliveryPeriod::new(ts(0, 0), ProductDuration::Hour).unwrap();
        assert_eq!(p.efa_block(), 1);
        let p = DeliveryPeriod::new(ts(23, 0), ProductDuration::Hour).unwrap();
        assert_eq!(p.efa_block(), 6);
        let p = DeliveryPeriod::new(ts(4, 0), ProductDuration::Hour).unwrap();
        assert_eq!(p.efa_block(), 2);
    }

    #[test]
    fn order_quantity_grid() {
        let product = DeliveryPeriod::new(ts(12, 0), ProductDuration::Hour).unwrap();
        let mut o = Order {
            order_id: "o1".into(),
            product,
            side: Side::Ask,
            limit_price: 45.0,
            quantity_mw: 1.3,
        };
        assert!(o.validate().is_ok());
        o.quantity_mw = 0.05;
        assert!(o.validate().is_err());
        o.quantity_mw = 1.34;
        assert!(o.validate().is_err());
        o.quantity_mw = 1.3;
        o.limit_price = -10000.0;
        assert!(o.validate().is_err());
    }

    #[test]
    fn crossed_book_rejected() {
        let product = DeliveryPeriod::new(ts(12, 0), ProductDuration::Hour).unwrap();
        let mk = |id: &str, side, price| Order {
            order_id: id.into(),
            product,
            side,
            limit_price: price,
            quantity_mw: 1.0,
        };
        let mut book = ProductBook::default();
        book.bids.push(mk("b", Side::Bid, 50.0));
        book.asks.push(mk("a", Side::Ask, 48.0));
        assert!(book.validate().is_err());
        book.asks[0].limit_price = 51.0;
        assert!(book.validate().is_ok());
    }

    #[test]
    fn snapshot_gate_closure() {
        let product = DeliveryPeriod::new(ts(12, 0), ProductDuration::Hour).unwrap();
        let mut snap = OrderBookSnapshot::new(ts(11, 40));
        snap.books.insert(product, ProductBook::default());
        // 20 minutes to delivery < 30 minute lead
        assert!(snap.validate(Duration::minutes(30)).is_err());
        assert!(snap.validate(Duration::minutes(15)).is_ok());
    }

    #[test]
    fn frequency_window_selection() {
        let series = FrequencySeries {
            start: ts(0, 0),
            step_seconds: 600,
            delta_f_hz: (0..12).map(|i| i as f64).collect(),
        };
        let got: Vec<f64> = series
            .window(ts(0, 30), ts(1, 30))
            .unwrap()
            .map(|(_, v)| v)
            .collect();
        assert_eq!(got, vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert!(series.window(ts(0, 0), ts(3, 0)).is_err());
    }
}

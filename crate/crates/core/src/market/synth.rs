//! Deterministic synthetic market generator.
//!
//! Every stream is keyed by (seed, day index, purpose), so any single day
//! can be regenerated in isolation and a run with more days never changes
//! the days it shares with a shorter run.

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::types::{
    DeliveryPeriod, ExogenousSeries, ForecastKind, FrequencySeries, Order, OrderBookSnapshot,
    ProductBook, ProductDuration, Side, MAX_PRICE, MIN_PRICE,
};

/// Price-shape regime of the synthetic intraday market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Cheap first half-day, expensive second half-day.
    BlockSpread,
    /// Hourly high/low alternation.
    Alternating,
    /// Day-varying blend of the two, driven by latent wind/solar factors.
    Mixed,
}

impl Regime {
    pub fn parse(s: &str) -> Result<Regime> {
        match s.trim().to_ascii_lowercase().as_str() {
            "block-spread" | "block_spread" | "blockspread" => Ok(Regime::BlockSpread),
            "alternating" => Ok(Regime::Alternating),
            "mixed" => Ok(Regime::Mixed),
            other => Err(Error::config(format!("unknown regime {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::BlockSpread => "block-spread",
            Regime::Alternating => "alternating",
            Regime::Mixed => "mixed",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Generator knobs. Defaults produce an hourly-product market with a full
/// overnight-to-gate-closure snapshot stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub regime: Regime,
    pub start_date: NaiveDate,
    pub product_duration: ProductDuration,
    pub snapshot_interval_min: i64,
    /// Levels per ladder side.
    pub depth: usize,
    /// Session opens at this hour on the prior day.
    pub session_open_hour_prev: u32,
    /// With `Some(h)`, the last snapshot is at h:00 on the prior day;
    /// with `None` snapshots run until the last gate closure.
    pub session_close_hour_prev: Option<u32>,
    pub gate_lead_min: i64,
    pub freq_step_seconds: u32,
    pub zones: Vec<String>,
}

impl SynthConfig {
    pub fn new(regime: Regime) -> Self {
        SynthConfig {
            regime,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            product_duration: ProductDuration::Hour,
            snapshot_interval_min: 30,
            depth: 4,
            session_open_hour_prev: 19,
            session_close_hour_prev: None,
            gate_lead_min: 30,
            freq_step_seconds: 10,
            zones: vec![
                "DE-LU".to_string(),
                "IT-North".to_string(),
                "NO2".to_string(),
                "SE4".to_string(),
            ],
        }
    }
}

const STREAM_DAY: u64 = 1;
const STREAM_FREQ: u64 = 2;
const STREAM_BOOK: u64 = 3;
const STREAM_DAA: u64 = 4;
const STREAM_FORECAST: u64 = 5;
const STREAM_FCR: u64 = 6;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, day_idx: i64, stream: u64, sub: u64) -> ChaCha8Rng {
    let mut s = splitmix(seed);
    s = splitmix(s ^ (day_idx as u64));
    s = splitmix(s ^ stream);
    s = splitmix(s ^ sub);
    ChaCha8Rng::seed_from_u64(s)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps streams easy to reason about.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Latent factors of one trading day. Forecast levels, FCR prices and
/// intraday price shape all derive from these, which is what gives the
/// classifier something to learn.
#[derive(Debug, Clone, Copy)]
struct DayFactors {
    u_wind: f64,
    u_solar: f64,
    weekend: bool,
    /// Blend weight of the block-spread shape in the mixed regime.
    w_shape: f64,
    /// Intraday spread amplitude.
    amp: f64,
    /// FCR price level, EUR/MW per block.
    fcr_level: f64,
}

fn day_factors(seed: u64, cfg: &SynthConfig, date: NaiveDate) -> DayFactors {
    let day_idx = (date - cfg.start_date).num_days();
    let mut rng = stream_rng(seed, day_idx, STREAM_DAY, 0);
    let u_wind: f64 = rng.gen_range(0.0..1.0);
    let u_solar: f64 = rng.gen_range(0.0..1.0);
    let u_noise: f64 = rng.gen_range(0.0..1.0);
    let weekend = matches!(date.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun);
    match cfg.regime {
        Regime::BlockSpread | Regime::Alternating => DayFactors {
            u_wind,
            u_solar,
            weekend,
            w_shape: if cfg.regime == Regime::BlockSpread { 1.0 } else { 0.0 },
            amp: 1.0,
            fcr_level: 10.0 + (u_noise - 0.5),
        },
        Regime::Mixed => DayFactors {
            u_wind,
            u_solar,
            weekend,
            w_shape: (0.3 + 0.4 * u_noise).clamp(0.0, 1.0),
            amp: 0.6 + 0.9 * u_solar,
            fcr_level: 6.0 + 14.0 * u_wind + if weekend { 1.5 } else { 0.0 },
        },
    }
}

/// Deterministic intraday price shape for delivery hour `h`.
fn pattern_price(f: &DayFactors, h: u32) -> f64 {
    let g = 30.0 * f.amp;
    let block = if h < 12 {
        55.0 - g + 1.5 * h as f64
    } else {
        55.0 + g - 1.5 * (h - 12) as f64
    };
    let alt = if h % 2 == 0 {
        55.0 - 25.0 * f.amp
    } else {
        55.0 + 25.0 * f.amp
    };
    f.w_shape * block + (1.0 - f.w_shape) * alt
}

/// All delivery periods of one calendar day at the given granularity.
pub fn products_for_day(date: NaiveDate, duration: ProductDuration) -> Vec<DeliveryPeriod> {
    let step = duration.minutes();
    (0..duration.products_per_day() as i64)
        .map(|k| {
            let start = date.and_hms_opt(0, 0, 0).unwrap().and_utc() + Duration::minutes(k * step);
            DeliveryPeriod { start, duration }
        })
        .collect()
}

/// Snapshot instants of the trading session for delivery day `date`.
pub fn session_snapshot_times(cfg: &SynthConfig, date: NaiveDate) -> Vec<DateTime<Utc>> {
    let prev = date.pred_opt().expect("date has a predecessor");
    let open = prev
        .and_hms_opt(cfg.session_open_hour_prev, 0, 0)
        .unwrap()
        .and_utc();
    let close = match cfg.session_close_hour_prev {
        Some(h) => prev.and_hms_opt(h, 0, 0).unwrap().and_utc(),
        None => {
            let last_start = date.and_hms_opt(0, 0, 0).unwrap().and_utc()
                + Duration::minutes(24 * 60 - cfg.product_duration.minutes());
            last_start - Duration::minutes(cfg.gate_lead_min) - Duration::minutes(1)
        }
    };
    let mut times = Vec::new();
    let mut t = open;
    while t <= close {
        times.push(t);
        t += Duration::minutes(cfg.snapshot_interval_min);
    }
    times
}

struct HourPath {
    mids: Vec<f64>,
    /// (price offset from mid, quantity) per ladder level, per snapshot.
    ask_levels: Vec<Vec<(f64, f64)>>,
    bid_levels: Vec<Vec<(f64, f64)>>,
}

/// Mid-price and ladder path for one delivery hour across the session.
/// Keyed only by (seed, day, hour), so every product inside the hour sees
/// identical books regardless of granularity.
fn hour_path(seed: u64, cfg: &SynthConfig, date: NaiveDate, hour: u32, n_snaps: usize) -> HourPath {
    let day_idx = (date - cfg.start_date).num_days();
    let f = day_factors(seed, cfg, date);
    let base = pattern_price(&f, hour);
    let mut rng = stream_rng(seed, day_idx, STREAM_BOOK, hour as u64);
    let mut x = 1.5 * normal(&mut rng);
    let half_spread = 1.6;
    let step = 1.3;
    let mut mids = Vec::with_capacity(n_snaps);
    let mut ask_levels = Vec::with_capacity(n_snaps);
    let mut bid_levels = Vec::with_capacity(n_snaps);
    for _ in 0..n_snaps {
        x = (0.85 * x + normal(&mut rng)).clamp(-6.0, 6.0);
        let mid = base + x;
        mids.push(mid);
        let mut asks = Vec::with_capacity(cfg.depth);
        let mut bids = Vec::with_capacity(cfg.depth);
        for j in 0..cfg.depth {
            let jitter_a: f64 = rng.gen_range(0.0..0.3);
            let jitter_b: f64 = rng.gen_range(0.0..0.3);
            let qty_a = 0.1 * rng.gen_range(10..=60) as f64;
            let qty_b = 0.1 * rng.gen_range(10..=60) as f64;
            asks.push((half_spread + j as f64 * step + jitter_a, qty_a));
            bids.push((-half_spread - j as f64 * step - jitter_b, qty_b));
        }
        ask_levels.push(asks);
        bid_levels.push(bids);
    }
    HourPath {
        mids,
        ask_levels,
        bid_levels,
    }
}

fn round_price(p: f64) -> f64 {
    ((p * 100.0).round() / 100.0).clamp(MIN_PRICE, MAX_PRICE)
}

/// Snapshot stream of the trading session for delivery day `date`.
/// Deterministic in (seed, cfg, date); independent of any other day.
pub fn day_snapshots(seed: u64, cfg: &SynthConfig, date: NaiveDate) -> Vec<OrderBookSnapshot> {
    let times = session_snapshot_times(cfg, date);
    let products = products_for_day(date, cfg.product_duration);
    let gate_lead = Duration::minutes(cfg.gate_lead_min);
    let paths: Vec<HourPath> = (0..24)
        .map(|h| hour_path(seed, cfg, date, h, times.len()))
        .collect();
    let mut snapshots = Vec::with_capacity(times.len());
    for (k, &ts) in times.iter().enumerate() {
        let mut snap = OrderBookSnapshot::new(ts);
        for product in &products {
            if product.start <= ts + gate_lead {
                continue; // gate closed
            }
            let hour = product.start.hour() as usize;
            let path = &paths[hour];
            let mid = path.mids[k];
            let mut book = ProductBook::default();
            let tag = product.start.format("%d%H%M");
            for (j, (off, qty)) in path.ask_levels[k].iter().enumerate() {
                book.asks.push(Order {
                    order_id: format!("{tag}-a{j}-t{k}"),
                    product: *product,
                    side: Side::Ask,
                    limit_price: round_price(mid + off),
                    quantity_mw: *qty,
                });
            }
            for (j, (off, qty)) in path.bid_levels[k].iter().enumerate() {
                book.bids.push(Order {
                    order_id: format!("{tag}-b{j}-t{k}"),
                    product: *product,
                    side: Side::Bid,
                    limit_price: round_price(mid + off),
                    quantity_mw: *qty,
                });
            }
            book.sort_ladders();
            debug_assert!(book.validate().is_ok());
            snap.books.insert(*product, book);
        }
        if !snap.books.is_empty() {
            snapshots.push(snap);
        }
    }
    snapshots
}

/// One day of frequency deviations, an OU path sampled at the configured
/// step, clamped to plus or minus 0.22 Hz.
fn day_frequency(seed: u64, cfg: &SynthConfig, date: NaiveDate) -> Vec<f64> {
    let day_idx = (date - cfg.start_date).num_days();
    let mut rng = stream_rng(seed, day_idx, STREAM_FREQ, 0);
    let n = (86_400 / cfg.freq_step_seconds as usize).max(1);
    let dt = cfg.freq_step_seconds as f64;
    let a = (-dt / 300.0).exp();
    let sd_stat = 0.04;
    let innov = sd_stat * (1.0 - a * a).sqrt();
    let mut x = sd_stat * normal(&mut rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        x = (a * x + innov * normal(&mut rng)).clamp(-0.22, 0.22);
        out.push(x);
    }
    out
}

fn fill_exogenous_day(seed: u64, cfg: &SynthConfig, date: NaiveDate, out: &mut ExogenousSeries) {
    let day_idx = (date - cfg.start_date).num_days();
    let f = day_factors(seed, cfg, date);
    let hour_ts = |h: u32| date.and_hms_opt(h, 0, 0).unwrap().and_utc();

    let mut rng = stream_rng(seed, day_idx, STREAM_DAA, 0);
    let zone_scale = [1.0, 1.05, 0.9, 0.95];
    let zone_offset = [0.0, 6.0, -9.0, -4.0];
    for (z, zone) in cfg.zones.iter().enumerate() {
        for h in 0..24 {
            let v = pattern_price(&f, h) * zone_scale[z % 4]
                + zone_offset[z % 4]
                + 2.0 * normal(&mut rng);
            out.daa_prices.insert((zone.clone(), hour_ts(h)), round_price(v));
        }
    }

    let mut rng = stream_rng(seed, day_idx, STREAM_FORECAST, 0);
    let solar_cap = 400.0 + 1200.0 * f.u_solar;
    let wind_on_base = 200.0 + 900.0 * f.u_wind;
    let wind_off_base = 150.0 + 500.0 * f.u_wind;
    let load_base = if f.weekend { 780.0 } else { 900.0 };
    for h in 0..24 {
        let daylight = (std::f64::consts::PI * (h as f64 - 6.0) / 12.0).sin().max(0.0);
        let hump = (-((h as f64 - 9.0) / 3.5).powi(2)).exp()
            + (-((h as f64 - 19.0) / 3.0).powi(2)).exp();
        let rows = [
            (ForecastKind::Solar, solar_cap * daylight + 10.0 * normal(&mut rng).abs()),
            (ForecastKind::WindOn, (wind_on_base + 60.0 * normal(&mut rng)).max(0.0)),
            (ForecastKind::WindOff, (wind_off_base + 40.0 * normal(&mut rng)).max(0.0)),
            (ForecastKind::Load, load_base + 150.0 * hump + 20.0 * normal(&mut rng)),
        ];
        for (kind, v) in rows {
            out.forecasts.insert((kind, hour_ts(h)), (v * 10.0).round() / 10.0);
        }
    }

    let mut rng = stream_rng(seed, day_idx, STREAM_FCR, 0);
    let shape = [1.05, 0.9, 0.95, 1.1, 1.15, 1.0];
    for b in 1..=6u8 {
        let price = (f.fcr_level * shape[(b - 1) as usize] + 0.5 * normal(&mut rng)).max(0.5);
        out.fcr_clearing
            .insert((date, b), (price * 100.0).round() / 100.0);
    }
}

/// Exogenous series covering one warm-up day before `start_date` plus
/// `day_count` trading days.
pub fn synthesize_exogenous(seed: u64, cfg: &SynthConfig, day_count: usize) -> ExogenousSeries {
    let first = cfg.start_date.pred_opt().expect("date has a predecessor");
    let mut freq = FrequencySeries::empty(
        first.and_hms_opt(0, 0, 0).unwrap().and_utc(),
        cfg.freq_step_seconds,
    );
    let mut out = ExogenousSeries::new(FrequencySeries::empty(freq.start, cfg.freq_step_seconds));
    let mut date = first;
    for _ in 0..day_count + 1 {
        fill_exogenous_day(seed, cfg, date, &mut out);
        freq.delta_f_hz.extend(day_frequency(seed, cfg, date));
        date = date.succ_opt().expect("date has a successor");
    }
    out.frequency = freq;
    out
}

/// Full synthetic market: the snapshot streams of `day_count` trading days
/// plus the matching exogenous series. Bit-identical across calls with the
/// same arguments.
pub fn synthesize_market(
    seed: u64,
    day_count: usize,
    cfg: &SynthConfig,
) -> (Vec<OrderBookSnapshot>, ExogenousSeries) {
    let mut snapshots = Vec::new();
    let mut date = cfg.start_date;
    for _ in 0..day_count {
        snapshots.extend(day_snapshots(seed, cfg, date));
        date = date.succ_opt().expect("date has a successor");
    }
    let exo = synthesize_exogenous(seed, cfg, day_count);
    (snapshots, exo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        let cfg = SynthConfig::new(Regime::BlockSpread);
        let (s1, e1) = synthesize_market(7, 2, &cfg);
        let (s2, e2) = synthesize_market(7, 2, &cfg);
        assert_eq!(s1, s2);
        assert_eq!(e1, e2);
        assert!(!s1.is_empty());
    }

    #[test]
    fn longer_runs_share_their_prefix() {
        let cfg = SynthConfig::new(Regime::Mixed);
        let (s2, _) = synthesize_market(3, 2, &cfg);
        let (s4, _) = synthesize_market(3, 4, &cfg);
        assert_eq!(s2[..], s4[..s2.len()]);
    }

    #[test]
    fn books_are_well_formed() {
        let cfg = SynthConfig::new(Regime::Mixed);
        let (snaps, _) = synthesize_market(11, 2, &cfg);
        for snap in &snaps {
            snap.validate(Duration::minutes(cfg.gate_lead_min)).unwrap();
        }
    }

    #[test]
    fn block_spread_halves_are_separated() {
        let cfg = SynthConfig::new(Regime::BlockSpread);
        let f = day_factors(5, &cfg, cfg.start_date);
        let low_max = (0..12).map(|h| pattern_price(&f, h)).fold(f64::MIN, f64::max);
        let high_min = (12..24).map(|h| pattern_price(&f, h)).fold(f64::MAX, f64::min);
        assert!(high_min - low_max > 10.0);
    }

    #[test]
    fn alternating_hours_alternate() {
        let cfg = SynthConfig::new(Regime::Alternating);
        let f = day_factors(5, &cfg, cfg.start_date);
        for h in 0..23 {
            let a = pattern_price(&f, h);
            let b = pattern_price(&f, h + 1);
            assert!((a - b).abs() > 20.0);
            assert_eq!(a < b, h % 2 == 0);
        }
    }

    #[test]
    fn frequency_is_bounded_and_full_length() {
        let cfg = SynthConfig::new(Regime::BlockSpread);
        let exo = synthesize_exogenous(9, &cfg, 2);
        // warm-up day + 2 trading days
        assert_eq!(exo.frequency.delta_f_hz.len(), 3 * 8640);
        assert!(exo.frequency.delta_f_hz.iter().all(|v| v.abs() <= 0.22));
        exo.validate_no_gaps().unwrap();
        exo.fcr_prices_for_day(cfg.start_date).unwrap();
    }

    #[test]
    fn sub_hourly_products_replicate_the_hourly_book() {
        let mut cfg = SynthConfig::new(Regime::BlockSpread);
        cfg.session_close_hour_prev = Some(23);
        let hourly = day_snapshots(21, &cfg, cfg.start_date);
        cfg.product_duration = ProductDuration::QuarterHour;
        let quarter = day_snapshots(21, &cfg, cfg.start_date);
        assert_eq!(hourly.len(), quarter.len());
        let snap_h = &hourly[3];
        let snap_q = &quarter[3];
        for (product, book_h) in &snap_h.books {
            let hour = product.start.hour();
            for q in 0..4u32 {
                let start = product.start + Duration::minutes(15 * q as i64);
                let pq = DeliveryPeriod {
                    start,
                    duration: ProductDuration::QuarterHour,
                };
                let book_q = snap_q.books.get(&pq).expect("quarter book present");
                assert_eq!(book_q.asks.len(), book_h.asks.len(), "hour {hour}");
                for (a, b) in book_h.asks.iter().zip(book_q.asks.iter()) {
                    assert_eq!(a.limit_price, b.limit_price);
                    assert_eq!(a.quantity_mw, b.quantity_mw);
                }
                for (a, b) in book_h.bids.iter().zip(book_q.bids.iter()) {
                    assert_eq!(a.limit_price, b.limit_price);
                    assert_eq!(a.quantity_mw, b.quantity_mw);
                }
            }
        }
    }
}

//! Rolling-intrinsic trading for one delivery day.
//!
//! The engine walks a fixed decision clock from the evening session open
//! to midnight of the delivery day. Each tick retires products whose gate
//! closed (folding their energy into storage and charging degradation),
//! applies reserve-activation drift, and re-solves the intrinsic against
//! the latest book. Executed quantities are rounded to the minimum trade
//! size before booking, exactly as they would hit the venue.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcr::{energy_drift, fcr_revenue, soc_envelope, BessSpec, EfaBlock, FcrStrategy};
use crate::intrinsic::{build_instance, solve, InstanceContext, IntrinsicOutcome};
use crate::market::{
    DeliveryPeriod, FrequencySeries, OrderBookSnapshot, ProductBook, Side,
};

/// Decision-clock and session parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiConfig {
    /// Minutes between decision instants.
    pub cadence_min: i64,
    /// Trading stops this many minutes before delivery.
    pub gate_lead_min: i64,
    /// Session opens at this hour on the previous day.
    pub session_open_hour_prev: u32,
    pub initial_soc_mwh: f64,
    pub terminal_soc_mwh: f64,
    /// Re-solve once this much drift has accumulated since the last solve;
    /// below it the rounded trades cannot change.
    pub drift_resolve_mwh: f64,
}

impl Default for RiConfig {
    fn default() -> Self {
        RiConfig {
            cadence_min: 1,
            gate_lead_min: 30,
            session_open_hour_prev: 19,
            initial_soc_mwh: 2.0,
            terminal_soc_mwh: 2.0,
            drift_resolve_mwh: 0.05,
        }
    }
}

impl RiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cadence_min < 1 {
            return Err(Error::config("cadence must be at least one minute"));
        }
        if self.gate_lead_min < 0 {
            return Err(Error::config("gate lead must be nonnegative"));
        }
        if self.session_open_hour_prev > 23 {
            return Err(Error::config("session open hour must be 0..=23"));
        }
        if self.drift_resolve_mwh < 0.0 {
            return Err(Error::config("drift threshold must be nonnegative"));
        }
        Ok(())
    }
}

/// One executed fill, from our perspective: `Bid` bought, `Ask` sold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub solve_time: DateTime<Utc>,
    pub product_start: DateTime<Utc>,
    pub side: Side,
    pub price: f64,
    pub mw: f64,
    pub cash_eur: f64,
}

/// Mutable trading state, confined to one (day, strategy) run.
///
/// `soc_mwh` is the planning level: the storage level entering the first
/// still-tradeable period, with retired schedules already folded in.
/// `physical_mwh` tracks the battery itself, crediting each schedule only
/// as its delivery window elapses.
#[derive(Debug, Clone)]
pub struct RiState {
    /// Open positions b_t^0, MW, positive charging.
    pub positions: BTreeMap<DeliveryPeriod, f64>,
    /// Drift-corrected planning level, MWh.
    pub soc_mwh: f64,
    /// Actual storage level, MWh.
    pub physical_mwh: f64,
    /// Cash booked minus degradation charged so far, EUR.
    pub realized_eur: f64,
    pub cycles_left: f64,
    pub trades: Vec<TradeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocPoint {
    pub time: DateTime<Utc>,
    pub mwh: f64,
}

/// Outcome of one day under one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResult {
    pub day: NaiveDate,
    pub strategy: FcrStrategy,
    pub pi_fcr_eur: f64,
    pub pi_idm_eur: f64,
    pub pi_total_eur: f64,
    pub soc_trajectory: Vec<SocPoint>,
    pub solves: usize,
    pub infeasible_solves: usize,
    pub violations: Vec<String>,
    pub trades: Vec<TradeRecord>,
    /// Cash net of planned-degradation change per executed solve.
    pub solve_increments_eur: Vec<f64>,
    /// Total |power| delivered, MWh of schedule.
    pub delivered_mwh: f64,
}

impl DayResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<DayResult> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Rounds raw quantities to multiples of the minimum trade size, clamped
/// to the resting volume.
pub fn round_trades(raw: &[f64], caps: &[f64], delta_mw: f64) -> Vec<f64> {
    raw.iter()
        .zip(caps.iter())
        .map(|(q, cap)| ((q / delta_mw).round() * delta_mw).clamp(0.0, *cap))
        .collect()
}

/// Net SoC change from reserve activation over [from, to), restricted to
/// the delivery day and using each block's committed capacity.
pub fn activation_drift(
    frequency: &FrequencySeries,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    day: NaiveDate,
    strategy: &FcrStrategy,
    spec: &BessSpec,
) -> Result<f64> {
    let day_start = Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0).unwrap());
    let day_end = day_start + Duration::days(1);
    let mut a = from.max(day_start);
    let hi = to.min(day_end);
    let mut drift = 0.0;
    while a < hi {
        let block = EfaBlock::of_instant(a);
        let block_end = block.end(a.date_naive()).min(hi);
        let x = strategy.mw(block);
        if x > 0.0 {
            drift += energy_drift(frequency, a, block_end, x, spec)?;
        }
        a = block_end;
    }
    Ok(drift)
}

/// Applies the drift correction to the running state and returns the
/// correction itself.
pub fn apply_drift(
    state: &mut RiState,
    frequency: &FrequencySeries,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    day: NaiveDate,
    strategy: &FcrStrategy,
    spec: &BessSpec,
) -> Result<f64> {
    let d = activation_drift(frequency, from, to, day, strategy, spec)?;
    state.soc_mwh += d;
    Ok(d)
}

fn soc_step(spec: &BessSpec, b_mw: f64, delta_h: f64) -> f64 {
    if b_mw >= 0.0 {
        delta_h * spec.eta_ch * b_mw
    } else {
        delta_h * b_mw / spec.eta_dis
    }
}

/// The book minus liquidity we already consumed: a resting order keeps its
/// identity across snapshots and cannot be hit twice.
fn remaining_book(
    snap: &OrderBookSnapshot,
    consumed: &BTreeMap<String, f64>,
    min_mw: f64,
) -> OrderBookSnapshot {
    let mut out = OrderBookSnapshot::new(snap.timestamp);
    for (product, book) in &snap.books {
        let mut nb = ProductBook::default();
        for order in book.bids.iter().chain(book.asks.iter()) {
            let used = consumed.get(&order.order_id).copied().unwrap_or(0.0);
            let rem = order.quantity_mw - used;
            if rem >= min_mw - 1e-9 {
                let mut o = order.clone();
                o.quantity_mw = rem;
                match o.side {
                    Side::Bid => nb.bids.push(o),
                    Side::Ask => nb.asks.push(o),
                }
            }
        }
        if !(nb.bids.is_empty() && nb.asks.is_empty()) {
            out.books.insert(*product, nb);
        }
    }
    out
}

/// Runs Algorithm-style rolling intrinsic for one delivery day.
///
/// `snapshots` must be strictly increasing in time; products outside the
/// delivery day are ignored. `fcr_prices` are the six block clearing
/// prices in EUR/MW.
pub fn run_day(
    day: NaiveDate,
    snapshots: &[OrderBookSnapshot],
    frequency: &FrequencySeries,
    fcr_prices: &[f64; 6],
    strategy: &FcrStrategy,
    spec: &BessSpec,
    cfg: &RiConfig,
) -> Result<DayResult> {
    spec.validate()?;
    cfg.validate()?;
    if !snapshots.windows(2).all(|w| w[0].timestamp < w[1].timestamp) {
        return Err(Error::data("snapshots must be strictly increasing in time"));
    }

    let day_start = Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0).unwrap());
    let day_end = day_start + Duration::days(1);
    let open = day_start - Duration::days(1)
        + Duration::hours(i64::from(cfg.session_open_hour_prev));
    let lead = Duration::minutes(cfg.gate_lead_min);
    let cadence = Duration::minutes(cfg.cadence_min);

    let mut state = RiState {
        positions: BTreeMap::new(),
        soc_mwh: cfg.initial_soc_mwh,
        physical_mwh: cfg.initial_soc_mwh,
        realized_eur: 0.0,
        cycles_left: spec.cycles_per_day,
        trades: Vec::new(),
    };
    // frozen schedules whose delivery windows are still flowing
    let mut delivering: BTreeMap<DeliveryPeriod, f64> = BTreeMap::new();
    let mut trajectory = vec![SocPoint {
        time: open,
        mwh: state.soc_mwh,
    }];
    let mut violations: Vec<String> = Vec::new();
    let mut in_violation = false;
    let mut solves = 0usize;
    let mut infeasible_solves = 0usize;
    let mut increments: Vec<f64> = Vec::new();
    let mut delivered_mwh = 0.0f64;

    // the product universe is whatever the stream ever quotes for this day
    let universe: BTreeSet<DeliveryPeriod> = snapshots
        .iter()
        .flat_map(|s| s.books.keys())
        .filter(|p| p.delivery_date() == day)
        .copied()
        .collect();

    let mut snap_idx: Option<usize> = None;
    let mut seen_snap: Option<usize> = None; // last snapshot actually solved on
    let mut drift_since_solve = 0.0f64;
    let mut rolled_over = false;
    let mut consumed: BTreeMap<String, f64> = BTreeMap::new();

    let mut tick = open;
    let mut prev_tick = open;
    let mut done = false;
    while !done {
        let now = tick;
        if now >= day_end {
            done = true;
        }
        let now = now.min(day_end);

        // drift since the previous tick
        if !strategy.is_zero() && now > prev_tick {
            let d = apply_drift(&mut state, frequency, prev_tick, now, day, strategy, spec)?;
            state.physical_mwh += d;
            drift_since_solve += d;
        }

        // credit delivery windows that elapsed since the previous tick
        if now > prev_tick {
            delivering.retain(|p, b| {
                let from = prev_tick.max(p.start);
                let until = now.min(p.end());
                if until > from {
                    let h = (until - from).num_seconds() as f64 / 3600.0;
                    state.physical_mwh += soc_step(spec, *b, h);
                }
                p.end() > now
            });
        }

        // retire products whose gate closed: fold energy, charge wear
        let retired: Vec<DeliveryPeriod> = state
            .positions
            .keys()
            .filter(|p| p.start <= now + lead)
            .copied()
            .collect();
        let mut retired_abs_mwh = 0.0;
        for p in retired {
            let b = state.positions.remove(&p).unwrap();
            let dh = p.duration.hours();
            state.soc_mwh += soc_step(spec, b, dh);
            state.realized_eur -= spec.degradation_eur_mwh * b.abs() * dh;
            retired_abs_mwh += b.abs() * dh;
            delivered_mwh += b.abs() * dh;
            delivering.insert(p, b);
        }

        // cycle budget: reset at the day rollover, then pay for what was
        // just committed (retirements on the rollover tick draw on the
        // fresh budget, not the expiring one)
        if !rolled_over && now >= day_start {
            state.cycles_left = spec.cycles_per_day;
            rolled_over = true;
        }
        if retired_abs_mwh > 0.0 {
            state.cycles_left -= retired_abs_mwh / (2.0 * spec.energy_cap_mwh);
            if state.cycles_left < 0.0 {
                if state.cycles_left < -1e-9 {
                    violations.push(format!(
                        "{now}: cycle budget overrun by {:.6}",
                        -state.cycles_left
                    ));
                }
                state.cycles_left = 0.0;
            }
        }

        // physical envelope check while committed capacity is delivering
        if now >= day_start && now < day_end {
            let x = strategy.mw(EfaBlock::of_instant(now));
            let env = soc_envelope(spec, x)?;
            let out = state.physical_mwh < env.lower_mwh - 1e-6
                || state.physical_mwh > env.upper_mwh + 1e-6;
            if out && !in_violation {
                violations.push(format!(
                    "{now}: storage {:.4} MWh outside envelope [{:.4}, {:.4}]",
                    state.physical_mwh, env.lower_mwh, env.upper_mwh
                ));
            }
            in_violation = out;
        }

        // newest book at or before this instant
        while snap_idx.map_or(0, |i| i + 1) < snapshots.len()
            && snapshots[snap_idx.map_or(0, |i| i + 1)].timestamp <= now
        {
            snap_idx = Some(snap_idx.map_or(0, |i| i + 1));
        }

        let products: Vec<DeliveryPeriod> = universe
            .iter()
            .chain(state.positions.keys())
            .filter(|p| p.delivery_date() == day && p.start > now + lead)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let book_changed = snap_idx != seen_snap;
        let drift_pending = drift_since_solve.abs() > cfg.drift_resolve_mwh;
        if !products.is_empty() && (book_changed || drift_pending) {
            let snap = match snap_idx {
                Some(i) => remaining_book(&snapshots[i], &consumed, spec.min_trade_mw),
                None => OrderBookSnapshot::new(now),
            };
            let ctx = InstanceContext {
                products: &products,
                c0_mwh: state.soc_mwh,
                terminal_mwh: cfg.terminal_soc_mwh,
                cycle_budget: state.cycles_left,
                prior_mw: &state.positions,
            };
            let instance = build_instance(&snap, &ctx, strategy, spec)?;
            solves += 1;
            seen_snap = snap_idx;
            drift_since_solve = 0.0;
            match solve(&instance)? {
                IntrinsicOutcome::Plan(plan) => {
                    let caps: Vec<f64> =
                        instance.orders.iter().map(|o| o.quantity_mw).collect();
                    let q = round_trades(&plan.q_mw, &caps, spec.min_trade_mw);
                    let before_abs: f64 = state.positions.values().map(|b| b.abs()).sum();
                    let mut cash_now = 0.0;
                    let mut traded = false;
                    for (o, qi) in instance.orders.iter().zip(q.iter()) {
                        if *qi <= 0.0 {
                            continue;
                        }
                        traded = true;
                        let product = instance.periods[o.period].product;
                        let cash = instance.delta_h * o.price * o.trade_sign() * qi;
                        cash_now += cash;
                        *state.positions.entry(product).or_insert(0.0) -=
                            o.trade_sign() * qi;
                        *consumed.entry(o.order_id.clone()).or_insert(0.0) += qi;
                        state.trades.push(TradeRecord {
                            solve_time: now,
                            product_start: product.start,
                            side: match o.side {
                                Side::Ask => Side::Bid, // we lifted an ask: bought
                                Side::Bid => Side::Ask,
                            },
                            price: o.price,
                            mw: *qi,
                            cash_eur: cash,
                        });
                    }
                    state.positions.retain(|_, b| b.abs() > 1e-12);
                    if traded {
                        let after_abs: f64 =
                            state.positions.values().map(|b| b.abs()).sum();
                        increments.push(
                            cash_now
                                - spec.degradation_eur_mwh
                                    * instance.delta_h
                                    * (after_abs - before_abs),
                        );
                        state.realized_eur += cash_now;
                    }
                }
                IntrinsicOutcome::Infeasible => {
                    infeasible_solves += 1;
                    violations.push(format!("{now}: no feasible schedule"));
                }
            }
        }

        trajectory.push(SocPoint {
            time: now,
            mwh: state.physical_mwh,
        });
        prev_tick = now;
        tick = tick + cadence;
    }

    // anything still open delivers as scheduled; charge its wear
    for (p, b) in &state.positions {
        let dh = p.duration.hours();
        state.realized_eur -= spec.degradation_eur_mwh * b.abs() * dh;
        state.soc_mwh += soc_step(spec, *b, dh);
        delivered_mwh += b.abs() * dh;
    }
    state.positions.clear();

    let pi_fcr = fcr_revenue(strategy, fcr_prices);
    let pi_idm = state.realized_eur;
    Ok(DayResult {
        day,
        strategy: *strategy,
        pi_fcr_eur: pi_fcr,
        pi_idm_eur: pi_idm,
        pi_total_eur: pi_fcr + pi_idm,
        soc_trajectory: trajectory,
        solves,
        infeasible_solves,
        violations,
        trades: state.trades,
        solve_increments_eur: increments,
        delivered_mwh,
    })
}

pub mod io {
    //! Trade-log CSV with schema `solve_time,product_start,side,price,mw,cash_eur`.

    use std::path::Path;

    use chrono::{DateTime, SecondsFormat, Utc};

    use super::TradeRecord;
    use crate::error::{Error, Result};
    use crate::market::Side;

    const HEADER: [&str; 6] = ["solve_time", "product_start", "side", "price", "mw", "cash_eur"];

    pub fn save_trade_log(path: &Path, trades: &[TradeRecord]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(HEADER)?;
        for t in trades {
            w.write_record([
                t.solve_time.to_rfc3339_opts(SecondsFormat::Secs, true),
                t.product_start.to_rfc3339_opts(SecondsFormat::Secs, true),
                match t.side {
                    Side::Bid => "buy".to_string(),
                    Side::Ask => "sell".to_string(),
                },
                format!("{}", t.price),
                format!("{}", t.mw),
                format!("{}", t.cash_eur),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_trade_log(path: &Path) -> Result<Vec<TradeRecord>> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut rows = r.records();
        let header = rows
            .next()
            .ok_or_else(|| Error::data("empty trade log"))??;
        if header.iter().ne(HEADER) {
            return Err(Error::SchemaMismatch {
                expected: HEADER.join(","),
                actual: header.iter().collect::<Vec<_>>().join(","),
            });
        }
        let mut out = Vec::new();
        for (i, rec) in rows.enumerate() {
            let rec = rec?;
            let row = i + 2;
            let field = |j: usize| -> Result<&str> {
                rec.get(j).ok_or(Error::Ingestion {
                    row,
                    message: "missing field".into(),
                })
            };
            let ts = |s: &str| -> Result<DateTime<Utc>> {
                s.parse::<DateTime<Utc>>().map_err(|e| Error::Ingestion {
                    row,
                    message: format!("bad timestamp {s:?}: {e}"),
                })
            };
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|e| Error::Ingestion {
                    row,
                    message: format!("bad number {s:?}: {e}"),
                })
            };
            let side = match field(2)? {
                "buy" => Side::Bid,
                "sell" => Side::Ask,
                other => {
                    return Err(Error::Ingestion {
                        row,
                        message: format!("side must be buy or sell, got {other:?}"),
                    })
                }
            };
            out.push(TradeRecord {
                solve_time: ts(field(0)?)?,
                product_start: ts(field(1)?)?,
                side,
                price: num(field(3)?)?,
                mw: num(field(4)?)?,
                cash_eur: num(field(5)?)?,
            });
        }
        Ok(out)
    }
}

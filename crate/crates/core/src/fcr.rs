//! Battery parameters, FCR activation physics, SoC envelopes and the
//! EFA-block calendar.

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::FrequencySeries;

/// Frequency deadband inside which no FCR power is delivered, Hz.
pub const DEADBAND_HZ: f64 = 0.01;
/// Deviation at which activation saturates at the full bid, Hz.
pub const FULL_ACTIVATION_HZ: f64 = 0.2;

/// Physical and commercial parameters of the battery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BessSpec {
    /// X̄, MW.
    pub power_cap_mw: f64,
    /// Ē, MWh.
    pub energy_cap_mwh: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    /// Lower SoC fraction kept in reserve.
    pub alpha_lo: f64,
    /// Upper SoC fraction kept in reserve.
    pub alpha_hi: f64,
    /// κ, EUR per MWh of scheduled throughput.
    pub degradation_eur_mwh: f64,
    /// Full cycles allowed per day.
    pub cycles_per_day: f64,
    /// δ, MW granularity of implementable trades.
    pub min_trade_mw: f64,
}

impl Default for BessSpec {
    fn default() -> Self {
        BessSpec {
            power_cap_mw: 10.0,
            energy_cap_mwh: 10.0,
            eta_ch: 0.95,
            eta_dis: 0.95,
            alpha_lo: 0.01,
            alpha_hi: 0.985,
            degradation_eur_mwh: 3.0,
            cycles_per_day: 2.0,
            min_trade_mw: 0.1,
        }
    }
}

impl BessSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.power_cap_mw > 0.0 && self.energy_cap_mwh > 0.0) {
            return Err(Error::config("power and energy caps must be positive"));
        }
        for (name, eta) in [("eta_ch", self.eta_ch), ("eta_dis", self.eta_dis)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::config(format!("{name} = {eta} outside (0, 1]")));
            }
        }
        if !(0.0 <= self.alpha_lo && self.alpha_lo < self.alpha_hi && self.alpha_hi <= 1.0) {
            return Err(Error::config(format!(
                "alpha bounds ({}, {}) must satisfy 0 <= lo < hi <= 1",
                self.alpha_lo, self.alpha_hi
            )));
        }
        if self.degradation_eur_mwh < 0.0 {
            return Err(Error::config("degradation cost must be nonnegative"));
        }
        if self.min_trade_mw <= 0.0 {
            return Err(Error::config("min trade size must be positive"));
        }
        if self.cycles_per_day <= 0.0 {
            return Err(Error::config("cycle budget must be positive"));
        }
        Ok(())
    }

    /// Largest FCR bid the auction accepts per block, MW.
    pub fn fcr_bid_cap_mw(&self) -> u32 {
        (0.8 * self.power_cap_mw).floor() as u32
    }
}

/// One of the six four-hour EFA blocks, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EfaBlock(u8);

impl EfaBlock {
    pub const ALL: [EfaBlock; 6] = [
        EfaBlock(1),
        EfaBlock(2),
        EfaBlock(3),
        EfaBlock(4),
        EfaBlock(5),
        EfaBlock(6),
    ];

    pub fn new(index: u8) -> Result<EfaBlock> {
        if (1..=6).contains(&index) {
            Ok(EfaBlock(index))
        } else {
            Err(Error::domain(format!("EFA block {index} outside 1..=6")))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn of_hour(hour: u32) -> EfaBlock {
        debug_assert!(hour < 24);
        EfaBlock((hour / 4) as u8 + 1)
    }

    pub fn of_instant(ts: DateTime<Utc>) -> EfaBlock {
        use chrono::Timelike;
        EfaBlock::of_hour(ts.hour())
    }

    /// First covered hour of the day.
    pub fn start_hour(self) -> u32 {
        (self.0 as u32 - 1) * 4
    }

    pub fn start(self, date: NaiveDate) -> DateTime<Utc> {
        date.and_hms_opt(self.start_hour(), 0, 0).unwrap().and_utc()
    }

    pub fn end(self, date: NaiveDate) -> DateTime<Utc> {
        self.start(date) + Duration::hours(4)
    }
}

/// Capacity committed to FCR in each EFA block, whole MW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FcrStrategy(pub [u32; 6]);

impl FcrStrategy {
    pub fn new(x: [u32; 6], spec: &BessSpec) -> Result<FcrStrategy> {
        let cap = spec.fcr_bid_cap_mw();
        for (i, xi) in x.iter().enumerate() {
            if *xi > cap {
                return Err(Error::InfeasibleStrategy(format!(
                    "block {}: bid {xi} MW exceeds cap {cap} MW",
                    i + 1
                )));
            }
        }
        Ok(FcrStrategy(x))
    }

    pub fn zero() -> FcrStrategy {
        FcrStrategy([0; 6])
    }

    pub fn mw(&self, block: EfaBlock) -> f64 {
        self.0[(block.index() - 1) as usize] as f64
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0)
    }

    pub fn parse(s: &str) -> Result<FcrStrategy> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 6 {
            return Err(Error::domain(format!(
                "strategy {s:?} must have six components"
            )));
        }
        let mut x = [0u32; 6];
        for (i, p) in parts.iter().enumerate() {
            x[i] = p
                .parse()
                .map_err(|e| Error::domain(format!("strategy component {p:?}: {e}")))?;
        }
        Ok(FcrStrategy(x))
    }
}

impl std::fmt::Display for FcrStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [a, b, c, d, e, g] = self.0;
        write!(f, "({a},{b},{c},{d},{e},{g})")
    }
}

/// Delivered FCR power for a frequency deviation, MW. Positive means the
/// battery absorbs from the grid.
pub fn fcr_activation(delta_f_hz: f64, p_bid_mw: f64) -> f64 {
    debug_assert!(p_bid_mw >= 0.0);
    let a = delta_f_hz.abs();
    if a <= DEADBAND_HZ {
        0.0
    } else if a <= FULL_ACTIVATION_HZ {
        delta_f_hz / FULL_ACTIVATION_HZ * p_bid_mw
    } else {
        delta_f_hz.signum() * p_bid_mw
    }
}

/// Admissible SoC interval while `x_i_mw` is committed to FCR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocBounds {
    pub lower_mwh: f64,
    pub upper_mwh: f64,
}

/// SoC interval of Eq.-style reserve logic: a quarter hour of full
/// activation must fit in both directions, on top of the alpha margins.
pub fn soc_envelope(spec: &BessSpec, x_i_mw: f64) -> Result<SocBounds> {
    let lower = (spec.alpha_lo * spec.energy_cap_mwh).max(x_i_mw / 4.0);
    let upper = (spec.alpha_hi * spec.energy_cap_mwh).min(spec.energy_cap_mwh - x_i_mw / 4.0);
    if lower > upper {
        return Err(Error::InfeasibleStrategy(format!(
            "empty SoC envelope for bid {x_i_mw} MW on a {} MWh battery",
            spec.energy_cap_mwh
        )));
    }
    Ok(SocBounds {
        lower_mwh: lower,
        upper_mwh: upper,
    })
}

/// Net SoC change from FCR activations over `[from, to)`, MWh. A Riemann
/// sum over the sampled frequency series: each sample contributes
/// P(Δf)·η·h with η = η_ch when charging and 1/η_dis when discharging.
pub fn energy_drift(
    frequency: &FrequencySeries,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    p_bid_mw: f64,
    spec: &BessSpec,
) -> Result<f64> {
    if p_bid_mw == 0.0 {
        // still validate coverage so missing data never passes silently
        frequency.window(from, to)?.for_each(drop);
        return Ok(0.0);
    }
    let h = frequency.step_hours();
    let mut drift = 0.0;
    for (_, df) in frequency.window(from, to)? {
        let p = fcr_activation(df, p_bid_mw);
        let eta = if p > 0.0 {
            spec.eta_ch
        } else if p < 0.0 {
            1.0 / spec.eta_dis
        } else {
            continue;
        };
        drift += p * eta * h;
    }
    Ok(drift)
}

/// Capacity revenue of one day: inner product of the strategy with the six
/// block clearing prices.
pub fn fcr_revenue(strategy: &FcrStrategy, clearing_eur_mw: &[f64; 6]) -> f64 {
    strategy
        .0
        .iter()
        .zip(clearing_eur_mw.iter())
        .map(|(x, p)| *x as f64 * p)
        .sum()
}

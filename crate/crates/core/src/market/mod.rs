//! Intraday order-book data: types, clearing, CSV ingestion and the
//! synthetic generator.

pub mod clearing;
pub mod io;
pub mod synth;
mod types;

pub use clearing::clear_order;
pub use synth::{
    day_snapshots, products_for_day, session_snapshot_times, synthesize_exogenous,
    synthesize_market, Regime, SynthConfig,
};
pub use types::{
    DeliveryPeriod, ExogenousSeries, Fill, ForecastKind, FrequencySeries, Order,
    OrderBookSnapshot, ProductBook, ProductDuration, Side, MAX_PRICE, MIN_PRICE, MIN_VOLUME_MW,
};

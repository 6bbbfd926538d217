//! Core library of the bess workspace: battery and FCR physics, intraday
//! order-book data handling, the intrinsic trading optimizer, the rolling
//! intrinsic day loop, strategy-pool selection, the learned strategy
//! classifier, and the backtest driver that ties them together.

pub mod backtest;
pub mod classify;
pub mod error;
pub mod fcr;
pub mod intrinsic;
pub mod market;
pub mod pool;
pub mod ri;
pub mod solver;

pub use classify::{
    build_feature_matrix, build_features, predict, tune_and_train, FeatureConfig,
    FeatureMatrix, FeaturePipeline, FeatureSchema, FeatureVector, GbdtParams, TrainConfig,
    TrainedModel,
};
pub use error::{Error, Result};
pub use fcr::{BessSpec, EfaBlock, FcrStrategy};
pub use intrinsic::{
    build_instance, solve as solve_intrinsic, InstanceContext, IntrinsicInstance,
    IntrinsicOutcome, TradePlan,
};
pub use backtest::{
    benchmarks, emit_reports, run_backtest, BacktestConfig, BacktestOutput, BenchmarkReport,
    BenchmarkRow, BenchmarkToggles, DataSource, DayDecision,
};
pub use pool::{default_catalogue, PoolSelection, ProfitEntry, ProfitMatrix};
pub use ri::{run_day, DayResult, RiConfig, RiState, TradeRecord};
pub use market::{
    DeliveryPeriod, ExogenousSeries, Order, OrderBookSnapshot, Side,
};

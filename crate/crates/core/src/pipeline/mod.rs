//! Forecasting strategies wired end to end: batch fits on the training
//! period, then a sequential loop that forecasts each step before feeding
//! it any outcome, with every consumed observation logged for the
//! no-lookahead audit.

mod audit;
mod engine;
mod run;
mod spec;

pub use audit::{audit_no_lookahead, read_update_log, write_update_log, AuditReport, Component, UpdateEntry};
pub use engine::{
    Context, Engine, EngineOutput, EngineState, KalmanTrack, Normalization, Pending, QuantileState, TraceRow,
};
pub use run::{finish, level_column, run_strategy, write_trace, RunManifest, RunOptions, RunOutput, MANIFEST_VERSION};
pub use spec::{standard_strategies, MeanMode, QuantileInputs, QuantileMode, StrategySpec};

//! Configuration, rolling-window backtests, provenance audit and report files.

pub mod archive;
pub mod audit;
pub mod backtest;
pub mod config;

pub use audit::{audit, AuditReport};
pub use backtest::{
    load_data, plan, run_backtest, run_backtest_with_fits, score_archive, BacktestResult, Plan, Window, WindowFits,
};
pub use config::{BacktestConfig, Span, TEMPLATE};

//! Forecasting life-table death counts with compositional transforms,
//! principal components and exponential smoothing, plus backtesting,
//! prediction intervals and annuity pricing.

pub mod actuarial;
pub mod cli;
pub mod config;
pub mod curve;
pub mod error;
pub mod ets;
pub mod evaluation;
pub mod factor;
pub mod hmd;
pub mod optim;
pub mod transforms;
pub mod uncertainty;

pub use curve::{DeathCurve, Panel, Sex, DEFAULT_RADIX, N_AGES};
pub use error::{Error, Result};
pub use factor::Selector;
pub use transforms::Transform;

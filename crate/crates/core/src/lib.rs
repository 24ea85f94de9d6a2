//! Transmission-spectrum retrieval from raw infrared detector frames:
//! detector calibration, light-curve extraction, transit segmentation and
//! geometric detrending, tabular features, bagged kernel ridge regression
//! with heteroskedastic uncertainties, and likelihood-based scoring.
//! A synthetic forward instrument model provides ground-truth datasets.

pub mod calib;
pub mod curves;
pub mod detrend;
pub mod error;
pub mod features;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod scoring;
pub mod simgen;
pub mod types;

pub use error::{Error, Result};

//! Optical + SAR fusion land-cover classification.
//!
//! The crate simulates Sentinel-like optical and radar time series over a
//! ground-truth scene, reduces them to mean composites, trains CART trees on
//! class-labelled pins and measures the accuracy of optical-only versus fused
//! classification with error matrices. [`pipeline`] composes the stages in memory and
//! [`stages`] runs them against an output directory, both driven by one
//! [`config::Config`] document.

pub mod cart;
pub mod classify;
pub mod collection;
pub mod compositing;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod raster;
pub mod samples;
pub mod scene;
pub mod stages;
pub mod validation;

pub use error::{Error, ErrorClass, Result};

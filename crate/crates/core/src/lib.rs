// SPDX-License-Identifier: Apache-2.0

//! Retry-storm simulator and analytics for a two-tier service tandem.

// Validation writes `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod cost;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod guard;
pub mod policy;
pub mod services;

pub use error::{Error, Result};

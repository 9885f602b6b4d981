//! Three-sector GDP composition transfer model.
//!
//! * [`model`]: transfer ODE, closed-form shares, classification into the
//!   eight transfer types, collapse transform.
//! * [`numerics`]: least squares, correlation, RK4, bisection, quartiles,
//!   histograms.
//! * [`sce`]: Shuffled Complex Evolution global minimizer.
//! * [`fit`]: two-step per-country fitting and synthetic series.
//! * [`ingest`]: World Bank indicator files, cleaning rules, result files.
//! * [`analysis`]: collapse coordinates and the rural population correlation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod fit;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod sce;

pub use model::{AltParams, ModelError, ModelParams, SectorShares, TransferType};

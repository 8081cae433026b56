//! Conic Finsler, Randers and Zermelo metrics on a single coordinate chart.
//!
//! The crate evaluates metrics built from navigation data, their gradients,
//! Laplacians, geodesics, volume densities and mean curvatures, and bundles
//! named scenarios with a verification suite that checks the transfer
//! identities between a Zermelo metric and its base.

use nalgebra::DVector;

pub mod curvature;
pub mod domain;
pub mod emit;
pub mod error;
pub mod fd;
pub mod fields;
pub mod geodesic;
pub mod metric;
pub mod scenario;
pub mod suite;
pub mod volume;

/// A point of the chart.
pub type Point = DVector<f64>;
/// A tangent vector or covector in chart coordinates.
pub type Vector = DVector<f64>;

pub use domain::{Bounds, ChartDomain};
pub use error::{GeomError, Result};
pub use fields::{ScalarFieldSpec, SpreadReport, VectorFieldSpec, VolumeFormSpec, VolumeOrigin};
pub use metric::{FundamentalTensor, MetricSpec, WindClass, WindKind};

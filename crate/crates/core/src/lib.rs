//! Semi-implicit finite-element laboratory for p-Laplace type stochastic PDEs driven by
//! multiplicative Wiener noise and compensated Poisson jumps.
//!
//! All numerical routines are generic over [`Real`]; the aliases at the crate root fix the
//! scalar to `f64`, which is what the command-line tool uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod diagnostics;
pub mod ergodic;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod quadrature;
pub mod scalar;
pub mod scheme;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mesh = grid::SpatialMesh<f64>;
pub type Field = grid::NodalField<f64>;
pub type Model = model::ModelSpec<f64>;
pub type Scheme = scheme::SchemeConfig<f64>;
pub type Control = scheme::ControlSignal<f64>;
pub type Trajectory = scheme::TrajectoryRecord<f64>;
pub type Cost = control::CostSpec<f64>;
pub type Family = control::ControlFamily<f64>;
pub type Measure = ergodic::EmpiricalMeasure<f64>;

pub use grid::{build_mesh, MassKind, NodalField, SpatialMesh};
pub use model::{validate_assumptions, ModelSpec};
pub use noise::RngPolicy;
pub use scheme::{implicit_step, project_control, run_ensemble, run_trajectory, smooth_initial, SchemeConfig};

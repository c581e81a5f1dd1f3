//! Hybrid deterministic / Monte Carlo shielding toolkit.
//!
//! A 2-D discrete-ordinates solver produces forward and adjoint fluxes, the
//! [`importance`] module turns them into consistent source-biasing and
//! weight-window parameters (CADIS, FW-CADIS and the variants driven by the
//! forward-weighted adjoint flux), and [`mc`] measures how well those
//! parameters work on a multigroup Monte Carlo run of the same model.

pub mod cli;
pub mod importance;
pub mod mc;
pub mod model;
pub mod quadrature;
pub mod sn;

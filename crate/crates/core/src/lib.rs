//! Desk-scale candidate generation for reading duration: a multi-task
//! (mixture-of-experts + entire-space factorized) teacher, a double-tower
//! student trained by distillation, the three classic double-tower
//! baselines, a synthetic click/duration log generator, offline/serving
//! evaluation and top-k inner-product retrieval.
//!
//! The tensor math in [`numerics`] is generic over the scalar type; the
//! pipeline itself runs at 64-bit precision through the aliases below, which
//! keeps gradient checks and oracle comparisons tight.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod numerics;
pub mod retrieval;
pub mod student;
pub mod teacher;
pub mod train;

pub use error::{Error, Result};

/// Scalar type used by the full pipeline.
pub type Real = f64;

/// Pipeline vector at [`Real`] precision.
pub type Vector = numerics::Vector<Real>;

/// Pipeline matrix at [`Real`] precision.
pub type Matrix = numerics::Matrix<Real>;

/// Pipeline dense network at [`Real`] precision.
pub type DenseNet = numerics::DenseNet<Real>;

/// Pipeline optimizer at [`Real`] precision.
pub type Optimizer = numerics::Optimizer<Real>;

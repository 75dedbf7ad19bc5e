//! Graph neural tangent kernels over collections of graphs, with three
//! interchangeable aggregation backends: a naive Kronecker-product
//! baseline, an exact matrix-product decoupling, and iterative AMS
//! sketching. On top of the kernel constructor the crate provides the
//! one-level closed-form decomposition, kernel ridge regression, and
//! validation harnesses for the sketching error bound.
//!
//! See the `book/` guide for a chapter-by-chapter walkthrough; its code
//! snippets compile as doc-tests of this crate.

pub mod closed_form;
pub mod error;
pub mod graph;
pub mod kernel;
pub mod linalg;
pub mod regression;
pub mod sketch;

pub use error::{Error, Result};
pub use graph::{Dataset, Graph, ScalingRule};
pub use kernel::{Backend, CombineForm, GntkConfig, KernelMatrix, Readout, Scaling};
pub use linalg::{DenseMatrix, DenseVector};
pub use sketch::SketchMatrix;

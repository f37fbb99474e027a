//! Tree tensor networks with orthogonal blocks: dense oracles, quotient
//! geometry, Cartesian retractions, kernel learning and Riemannian
//! optimizers, plus a harness for the digits classification experiment.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` also rejects NaN.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod learning;
pub mod linalg;
pub mod optim;
pub mod retraction;
pub mod scalar;
pub mod tensor;
pub mod tree;
pub mod ttn;

pub use error::{Error, Result};
pub use geometry::{metric, SkewFamily, TtnTangent};
pub use learning::{BatchObjective, LabeledSample, Objective, Sample};
pub use optim::{HessianChoice, OptimizerReport, ProjectorChoice, Termination};
pub use retraction::RetractionKind;
pub use scalar::Scalar;
pub use tensor::{contract, dematricize, inner, kron, matricize, mode_product, multilinear, DenseTensor, Matrix};
pub use tree::{DimensionTree, NodeId, Traversal, TreeSpec};
pub use ttn::{phi_dense, Checkpoint, GaugeElement, TtnParam};

pub type Ttn = TtnParam<f64>;
pub type Tangent = TtnTangent<f64>;
pub type Gauge = GaugeElement<f64>;
pub type Skew = SkewFamily<f64>;
pub type Tensor = DenseTensor<f64>;
pub type Mat = Matrix<f64>;
pub type Labeled = LabeledSample<f64>;
pub type Batch = BatchObjective<f64>;
pub type Report = OptimizerReport<f64>;

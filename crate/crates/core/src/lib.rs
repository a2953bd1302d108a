//! Corrected continuous-time Markov chains on partitions of Euclidean
//! domains, approximating reflected Brownian motion.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`). The pipeline and configuration layer work in `f64`.
//! Concrete aliases are provided below.

pub mod chain;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod generator;
pub mod geometry;
pub mod linalg;
pub mod partition;
pub mod pipeline;
pub mod real;
pub mod reference;
pub mod rng;
pub mod spatial;

pub use chain::{ChainKernel, Trajectory};
pub use config::RunConfig;
pub use diagnostics::{ConsistencyReport, NeumannTestFunction};
pub use error::{Error, Result};
pub use generator::{CellGenerator, GeneratorReport, GeneratorTable};
pub use geometry::{BoundaryPoint, Domain};
pub use linalg::DenseMatrix;
pub use partition::{Cell, Partition, PartitionKind, ScaleSchedule};
pub use real::Real;
pub use reference::RbmConfig;

pub type Domain64 = Domain<f64>;
pub type Domain32 = Domain<f32>;
pub type Partition64 = Partition<f64>;
pub type Partition32 = Partition<f32>;
pub type GeneratorTable64 = GeneratorTable<f64>;
pub type GeneratorTable32 = GeneratorTable<f32>;
pub type ChainKernel64 = ChainKernel<f64>;
pub type ChainKernel32 = ChainKernel<f32>;
pub type DenseMatrix64 = DenseMatrix<f64>;
pub type DenseMatrix32 = DenseMatrix<f32>;

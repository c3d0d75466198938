//! Spatial-frequency dual-domain attention U-Net for medical image segmentation.
//!
//! The crate is self-contained: dense tensors with a reverse-mode tape,
//! Fourier analysis of feature maps, the network blocks, training, metrics
//! and data handling.

pub mod ablation;
pub mod autodiff;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fourier;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod param;
pub mod tensor;
pub mod training;

pub use autodiff::{CVar, Tape, Var};
pub use error::{Error, Result};
pub use param::{ParamId, Parameter, ParameterRegistry};
pub use tensor::{Complex, ComplexTensor4, Dims, LabelMap, RealTensor4};

//! Grid resampling and splatting on affine-oriented voxel grids.
//!
//! Medical volumes rarely share a grid: each acquisition carries its own
//! dimensions, voxel size and orientation, recorded as an affine
//! voxel-to-world matrix in the image header. This crate provides the two
//! adjoint operators that move data between such grids — [`pull`]
//! (resampling, a gather) and [`push`] (splatting, a scatter) — together
//! with the construction of a *mean space*: a common grid whose orientation
//! is the barycentric mean of a cohort's affines, factored into a rotation
//! and per-axis voxel sizes.
//!
//! On top of the operators sit the forward-composition pipelines used to
//! fit a grid-to-grid transform (for instance a segmentation network)
//! either in a resampled space or directly on native-resolution data, with
//! predictions pulled back to the label grid for evaluation.
//!
//! Modules:
//! - [`geometry`]: affine voxel-to-world algebra, matrix log/exp, the
//!   barycentric (Karcher) mean, rotation x scale factorization and the
//!   mean-space construction.
//! - [`volume`]: multi-channel voxel data bound to a grid.
//! - [`gridops`]: pull, push, count images and their explicit
//!   sparse-matrix form.
//! - [`pipeline`]: splat assembly, the three forward compositions,
//!   softmax, Dice scoring.
//! - [`io`]: reading and writing volumes with affine headers.
//!
//! [`pull`]: gridops::pull
//! [`push`]: gridops::push

pub mod error;
pub mod geometry;
pub mod gridops;
pub mod io;
pub mod pipeline;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{AffineMap, GridSpec, MeanSpaceResult, SpaceDescriptor};
pub use gridops::{PushResult, SparseOperator};
pub use volume::{Volume, VolumeKind};

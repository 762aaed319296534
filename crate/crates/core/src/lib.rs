//! Octree-guided point cloud networks built on spherical convolution kernels.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: points, clouds and the Cartesian/spherical transform.
//! * [`octree`]: the depth-`L` octree that coarsens a cloud layer by layer and
//!   supplies every convolution neighborhood.
//! * [`kernel`]: spherical kernel bin geometry, asymmetry validation and bin
//!   assignment of neighbor offsets.
//! * [`layers`]: differentiable building blocks with hand-written backward passes.
//! * [`network`]: classification and segmentation networks assembled from the layers.
//! * [`training`]: datasets, augmentation, SGD with momentum, metrics and checkpoints.
//! * [`neighbors`]: neighborhood-construction methods behind a named registry,
//!   used by the scaling benchmark.
//! * [`gradcheck`]: the finite-difference gradient suite.

pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod kernel;
pub mod layers;
pub mod neighbors;
pub mod network;
pub mod octree;
pub mod real;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{Point3, PointCloud, SphericalCoord};
pub use kernel::KernelGeometry;
pub use octree::Octree;
pub use real::Real;

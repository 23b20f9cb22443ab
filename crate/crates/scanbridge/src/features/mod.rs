//! Neighbor search, surface normals and FPFH descriptors — the feature
//! stage feeding the full 6-D registration pipeline's pre-alignment.

mod fpfh;
mod index;
mod normals;

pub use fpfh::{compute_fpfh, FpfhDescriptor, FPFH_BINS};
pub use index::{IndexError, NeighborIndex};
pub use normals::{estimate_normals, NormalCloud};

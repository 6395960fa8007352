//! Shadow-removal refinement driven by material-consistent shadow edges.
//!
//! The crate is organised bottom-up:
//!
//! * [`imagery`] loads and stores images, shadow masks and segmentation label maps.
//! * [`morphology`] provides binary erosion/dilation, boundary bands and the
//!   Euclidean distance transform used for penumbra blending.
//! * [`mc_edges`] selects segments whose shadow boundary crosses a single
//!   material and samples edge pixels and patches on both sides.
//! * [`metrics`] holds color histograms, 1-D EMD, the refinement losses and the
//!   Color Distribution Difference (CDD) evaluation metric.
//! * [`refine`] optimizes a per-channel affine relighting model against those
//!   losses with a projected quasi-Newton search on finite-difference gradients.
//! * [`harness`] covers annotations, dataset manifests, batch evaluation and reports.
//! * [`fixtures`] generates synthetic textured scenes used by tests and demos.

pub mod error;
pub mod fixtures;
pub mod harness;
pub mod imagery;
pub mod mc_edges;
pub mod metrics;
pub mod morphology;
pub mod refine;

pub use error::{Error, Result};
pub use imagery::{BinaryMask, LabelMap, Patch, PixelSet, RgbImage};

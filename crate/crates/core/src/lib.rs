//! Spatial false-discovery-rate control for voxel-wise multiple testing.
//!
//! The crate bundles everything needed to go from a 3D map of test
//! statistics to a rejection mask:
//!
//! - [`volume`]: dense 3D volumes with an optional mask, raw on-disk format,
//!   padding and z-to-p conversion.
//! - [`tensor`]: a small reverse-mode automatic differentiation engine with the
//!   3D layers a U-net needs, plus SGD with momentum.
//! - [`ncut`]: the voxel affinity graph and the soft normalized-cut loss.
//! - [`wnet`]: two cascaded U-nets trained by alternating soft-Ncut and
//!   reconstruction losses; the first one's probability map estimates LIS.
//! - [`lis`]: the LIS step-up rule, Dice-based label flipping and the
//!   end-to-end pipeline.
//! - [`baselines`]: BH, Storey q-value and Lindsey-method local fdr.
//! - [`sim`]: Gaussian-mixture simulations, confusion metrics and the
//!   replication harness.

pub mod baselines;
pub mod error;
pub mod lis;
pub mod ncut;
pub mod normal;
pub mod outcome;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod volume;
pub mod wnet;

pub use error::{Error, Result};
pub use outcome::TestOutcome;
pub use volume::{Volume3D, VolumeKind};

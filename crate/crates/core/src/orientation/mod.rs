//! Relative orientation by first-order bias compensation, the success
//! gate, and least-squares patch refinement of matches.

mod bias;
mod epipolar;
mod lsm;
mod ransac;

pub use bias::BiasCorrection;
pub use epipolar::epipolar_error;
pub use lsm::{lsm_refine, refine_matchset, LsmConfig, LsmResult, RefineStats};
pub use ransac::{ransac_bias, Orientation, OrientationConfig};

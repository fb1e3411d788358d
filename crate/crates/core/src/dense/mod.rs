//! Dense reconstruction: rectification, semi-global matching and DSM
//! gridding.

mod dsm;
mod rectify;
mod sgm;

pub use dsm::{dsm_from_disparity, grid_points, DsmGrid, GridSpec, GriddingStats, Sidecar, NODATA};
pub use rectify::{rectify, Affine2, AffineCameraFit, GroundRect, RectificationMap, Rectified};
pub use sgm::{sgm, DisparityMap, SgmConfig};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frame::LocalFrame;
use crate::orientation::BiasCorrection;
use crate::raster::Raster;
use crate::rpc::RpcModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DenseStats {
    pub rectified_width: usize,
    pub rectified_height: usize,
    pub d_min: i32,
    pub d_max: i32,
    pub valid_disparities: usize,
    pub gridding: GriddingStats,
}

/// Rectify, match and grid one oriented pair.
#[allow(clippy::too_many_arguments)]
pub fn densify(
    m1: &RpcModel,
    m2: &RpcModel,
    bias: &BiasCorrection,
    roi: &GroundRect,
    img1: &Raster,
    img2: &Raster,
    cfg: &SgmConfig,
    spec: &GridSpec,
    map_frame: &LocalFrame,
) -> Result<(DsmGrid, DenseStats)> {
    let rect = rectify(m1, m2, bias, roi, img1, img2)?;
    let map = &rect.map;
    log::debug!(
        "rectified {}x{}, disparity [{}, {}]",
        map.width,
        map.height,
        map.d_min,
        map.d_max
    );
    let disparity = sgm(&rect.left, &rect.right, map.d_min, map.d_max, cfg)?;
    let (grid, gridding) = dsm_from_disparity(&disparity, map, m1, m2, bias, spec, map_frame)?;
    let stats = DenseStats {
        rectified_width: map.width,
        rectified_height: map.height,
        d_min: map.d_min,
        d_max: map.d_max,
        valid_disparities: disparity.valid_count(),
        gridding,
    };
    Ok((grid, stats))
}

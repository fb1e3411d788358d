//! Quasi-epipolar rectification from local affine approximations of the two
//! cameras.
//!
//! Both cameras are fitted as affine maps from local (east, north, up)
//! coordinates to pixels over the region of interest. The left null vector
//! `f` of the stacked 4x3 linear parts gives the affine epipolar constraint
//! `f·(s1, l1, s2, l2) = κ`, from which the rectified row coordinate follows.
//! The column coordinate of image 2 is chosen so that horizontal ground
//! displacements move both images alike, making disparity linear in height.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::LocalFrame;
use crate::matching::Dims;
use crate::orientation::BiasCorrection;
use crate::raster::Raster;
use crate::rpc::{GroundPoint, ImagePoint, RpcModel};

const CONTROL_GRID: usize = 11;
const CONTROL_LEVELS: usize = 5;
const MAX_RECTIFIED_SIDE: f64 = 20_000.0;
/// Disparity search margin on top of the height range, pixels.
const DISPARITY_MARGIN: f64 = 4.0;

/// Geographic box with a height range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundRect {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl GroundRect {
    /// Box of `half_east` x `half_north` meters around `center`.
    pub fn around(center: &GroundPoint, half_east: f64, half_north: f64, h_min: f64, h_max: f64) -> Self {
        let frame = LocalFrame::at(center);
        let dlat = half_north / frame.m_per_deg_lat();
        let dlon = half_east / frame.m_per_deg_lon();
        Self {
            lat_min: center.lat - dlat,
            lat_max: center.lat + dlat,
            lon_min: center.lon - dlon,
            lon_max: center.lon + dlon,
            h_min,
            h_max,
        }
    }

    /// Intersection of the bounding boxes of both image footprints at the
    /// middle of the height range.
    pub fn footprint_overlap(m1: &RpcModel, d1: Dims, m2: &RpcModel, d2: Dims, h_min: f64, h_max: f64) -> Result<Self> {
        let h = 0.5 * (h_min + h_max);
        let bbox = |m: &RpcModel, d: Dims| -> Result<[f64; 4]> {
            let (w, hh) = (d.width as f64 - 1.0, d.height as f64 - 1.0);
            let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
            for (s, l) in [(0.0, 0.0), (w, 0.0), (0.0, hh), (w, hh)] {
                let g = m.inverse(&ImagePoint::new(s, l), h)?;
                b = [b[0].min(g.lat), b[1].max(g.lat), b[2].min(g.lon), b[3].max(g.lon)];
            }
            Ok(b)
        };
        let (a, b) = (bbox(m1, d1)?, bbox(m2, d2)?);
        let r = Self {
            lat_min: a[0].max(b[0]),
            lat_max: a[1].min(b[1]),
            lon_min: a[2].max(b[2]),
            lon_max: a[3].min(b[3]),
            h_min,
            h_max,
        };
        if r.lat_min >= r.lat_max || r.lon_min >= r.lon_max {
            return Err(Error::EmptyOverlap("the two image footprints do not intersect".into()));
        }
        Ok(r)
    }

    pub fn center(&self) -> GroundPoint {
        GroundPoint::new(
            0.5 * (self.lat_min + self.lat_max),
            0.5 * (self.lon_min + self.lon_max),
            0.5 * (self.h_min + self.h_max),
        )
    }

    fn validate(&self) -> Result<()> {
        let ok = self.lat_min < self.lat_max && self.lon_min < self.lon_max && self.h_min <= self.h_max;
        if !ok || ![self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.h_min, self.h_max]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Validation(format!("invalid region of interest {self:?}")));
        }
        Ok(())
    }
}

/// 2x3 affine map `p' = M·p + t`, row-major `[m00, m01, t0, m10, m11, t1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2(pub [f64; 6]);

impl Affine2 {
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let a = &self.0;
        (a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5])
    }

    fn inverse(&self) -> Option<Self> {
        let a = &self.0;
        let det = a[0] * a[4] - a[1] * a[3];
        if det.abs() < 1e-12 {
            return None;
        }
        let (i00, i01, i10, i11) = (a[4] / det, -a[1] / det, -a[3] / det, a[0] / det);
        Some(Affine2([
            i00,
            i01,
            -(i00 * a[2] + i01 * a[5]),
            i10,
            i11,
            -(i10 * a[2] + i11 * a[5]),
        ]))
    }
}

/// Pixel = `A·(east, north, up) + t`, rows for sample and line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCameraFit {
    pub rows: [[f64; 4]; 2],
    pub rms_px: f64,
}

impl AffineCameraFit {
    fn project(&self, x: [f64; 3]) -> [f64; 2] {
        let r = &self.rows;
        [
            r[0][0] * x[0] + r[0][1] * x[1] + r[0][2] * x[2] + r[0][3],
            r[1][0] * x[0] + r[1][1] * x[1] + r[1][2] * x[2] + r[1][3],
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectificationMap {
    pub width: usize,
    pub height: usize,
    /// Rectified coordinate of pixel (0, 0).
    pub x0: f64,
    pub y0: f64,
    pub forward1: Affine2,
    pub forward2: Affine2,
    pub inverse1: Affine2,
    pub inverse2: Affine2,
    /// Reference of the local frame the camera fits are expressed in.
    pub ref_lat: f64,
    pub ref_lon: f64,
    pub camera1: AffineCameraFit,
    pub camera2: AffineCameraFit,
    /// Disparity = `disparity_per_meter · (h − h_ref)` for the affine fits.
    pub disparity_per_meter: f64,
    pub h_ref: f64,
    /// Suggested search range covering the region's heights.
    pub d_min: i32,
    pub d_max: i32,
}

impl RectificationMap {
    /// Source pixel in image 1 of rectified pixel `(col, row)`.
    pub fn to_source1(&self, col: f64, row: f64) -> ImagePoint {
        let (s, l) = self.inverse1.apply(self.x0 + col, self.y0 + row);
        ImagePoint::new(s, l)
    }

    /// Observed pixel in image 2 of rectified pixel `(col, row)`.
    pub fn to_source2(&self, col: f64, row: f64) -> ImagePoint {
        let (s, l) = self.inverse2.apply(self.x0 + col, self.y0 + row);
        ImagePoint::new(s, l)
    }

    /// Rectified `(col, row)` of an image-1 pixel.
    pub fn from_source1(&self, p: &ImagePoint) -> (f64, f64) {
        let (x, y) = self.forward1.apply(p.sample, p.line);
        (x - self.x0, y - self.y0)
    }

    /// Rectified `(col, row)` of an observed image-2 pixel.
    pub fn from_source2(&self, p: &ImagePoint) -> (f64, f64) {
        let (x, y) = self.forward2.apply(p.sample, p.line);
        (x - self.x0, y - self.y0)
    }

    pub fn frame(&self) -> LocalFrame {
        LocalFrame::new(self.ref_lat, self.ref_lon)
    }

    /// Ground point predicted by the affine fits for a left pixel and its
    /// disparity; a starting point for rigorous triangulation.
    pub fn approximate_ground(&self, col: f64, row: f64, disparity: f64) -> GroundPoint {
        let up = self.h_ref + disparity / self.disparity_per_meter;
        let p = self.to_source1(col, row);
        let r = &self.camera1.rows;
        let a = Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1]);
        let b = Vector2::new(
            p.sample - r[0][2] * up - r[0][3],
            p.line - r[1][2] * up - r[1][3],
        );
        let en = a.try_inverse().map(|inv| inv * b).unwrap_or_else(Vector2::zeros);
        self.frame().to_ground(en[0], en[1], up)
    }
}

pub struct Rectified {
    pub map: RectificationMap,
    pub left: Raster,
    pub right: Raster,
}

fn fit_camera(samples: &[([f64; 3], [f64; 2])]) -> Result<AffineCameraFit> {
    let n = samples.len();
    let a = DMatrix::from_fn(n, 4, |i, j| if j < 3 { samples[i].0[j] } else { 1.0 });
    let svd = a.clone().svd(true, true);
    let mut rows = [[0.0; 4]; 2];
    let mut ss = 0.0;
    for k in 0..2 {
        let b = DVector::from_fn(n, |i, _| samples[i].1[k]);
        let x = svd
            .solve(&b, 1e-12 * svd.singular_values.max())
            .map_err(|e| Error::RectificationFailure(e.to_string()))?;
        let r = &a * &x - &b;
        ss += r.norm_squared();
        rows[k] = [x[0], x[1], x[2], x[3]];
    }
    Ok(AffineCameraFit {
        rows,
        rms_px: (ss / (2 * n) as f64).sqrt(),
    })
}

/// Resamples both images into a common rectified geometry over `roi`.
///
/// `bias` maps image-2 RPC predictions to observed pixels.
pub fn rectify(
    m1: &RpcModel,
    m2: &RpcModel,
    bias: &BiasCorrection,
    roi: &GroundRect,
    img1: &Raster,
    img2: &Raster,
) -> Result<Rectified> {
    roi.validate()?;
    let center = roi.center();
    let frame = LocalFrame::at(&center);

    // control points
    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    let (mut in1, mut in2) = (false, false);
    let (d1, d2) = (Dims::new(img1.width, img1.height), Dims::new(img2.width, img2.height));
    for i in 0..CONTROL_GRID {
        for j in 0..CONTROL_GRID {
            for k in 0..CONTROL_LEVELS {
                let t = |n: usize, idx: usize| idx as f64 / (n - 1) as f64;
                let g = GroundPoint::new(
                    roi.lat_min + (roi.lat_max - roi.lat_min) * t(CONTROL_GRID, i),
                    roi.lon_min + (roi.lon_max - roi.lon_min) * t(CONTROL_GRID, j),
                    roi.h_min + (roi.h_max - roi.h_min) * t(CONTROL_LEVELS, k),
                );
                let local = frame.to_local(&g);
                let p1 = m1.project(&g)?;
                let p2 = bias.apply(&m2.project(&g)?);
                in1 |= d1.contains(&p1);
                in2 |= d2.contains(&p2);
                s1.push((local, [p1.sample, p1.line]));
                s2.push((local, [p2.sample, p2.line]));
            }
        }
    }
    if !in1 || !in2 {
        return Err(Error::EmptyOverlap(format!(
            "region of interest falls outside image {}",
            if !in1 { 1 } else { 2 }
        )));
    }
    let cam1 = fit_camera(&s1)?;
    let cam2 = fit_camera(&s2)?;

    // left null vector of the stacked linear parts (generalized cross product)
    let lin = [
        [cam1.rows[0][0], cam1.rows[0][1], cam1.rows[0][2]],
        [cam1.rows[1][0], cam1.rows[1][1], cam1.rows[1][2]],
        [cam2.rows[0][0], cam2.rows[0][1], cam2.rows[0][2]],
        [cam2.rows[1][0], cam2.rows[1][1], cam2.rows[1][2]],
    ];
    let mut f = [0.0; 4];
    for (skip, fi) in f.iter_mut().enumerate() {
        let r: Vec<&[f64; 3]> = (0..4).filter(|&i| i != skip).map(|i| &lin[i]).collect();
        let minor = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
        .determinant();
        *fi = if skip % 2 == 0 { minor } else { -minor };
    }
    let col_norm = |j: usize| (0..4).map(|i| lin[i][j] * lin[i][j]).sum::<f64>().sqrt();
    let scale = col_norm(0) * col_norm(1) * col_norm(2);
    let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(fnorm > 1e-6 * scale) {
        return Err(Error::RectificationFailure(
            "cameras have (near) zero baseline: no epipolar geometry".into(),
        ));
    }
    let n1 = Vector2::new(f[0], f[1]);
    let n1_len = n1.norm();
    if n1_len < 1e-9 * fnorm || Vector2::new(f[2], f[3]).norm() < 1e-9 * fnorm {
        return Err(Error::RectificationFailure("degenerate epipolar direction".into()));
    }
    // rows increase with image lines
    let sign = if f[1] < 0.0 { -1.0 } else { 1.0 };
    let f: Vec<f64> = f.iter().map(|v| v * sign / n1_len).collect();
    let kappa = f[0] * cam1.rows[0][3] + f[1] * cam1.rows[1][3] + f[2] * cam2.rows[0][3] + f[3] * cam2.rows[1][3];

    // columns of image 1 run along the epipolar direction, increasing with samples
    let e1 = Vector2::new(f[1], -f[0]);
    let u1: Vec<f64> = (0..3).map(|j| e1[0] * lin[0][j] + e1[1] * lin[1][j]).collect();
    let a2 = Matrix2::new(lin[2][0], lin[3][0], lin[2][1], lin[3][1]);
    let w = a2
        .try_inverse()
        .map(|inv| inv * Vector2::new(u1[0], u1[1]))
        .ok_or_else(|| Error::RectificationFailure("image 2 affine fit is singular".into()))?;
    let u2z = w[0] * lin[2][2] + w[1] * lin[3][2];
    let disparity_per_meter = u1[2] - u2z;
    if disparity_per_meter.abs() < 1e-9 {
        return Err(Error::RectificationFailure("disparity does not depend on height".into()));
    }
    let c_local = [0.0, 0.0, center.h];
    let pc1 = cam1.project(c_local);
    let pc2 = cam2.project(c_local);
    let x1c = e1[0] * pc1[0] + e1[1] * pc1[1];
    let w0 = x1c - (w[0] * pc2[0] + w[1] * pc2[1]);

    let forward1 = Affine2([e1[0], e1[1], 0.0, f[0], f[1], -kappa]);
    let forward2 = Affine2([w[0], w[1], w0, -f[2], -f[3], 0.0]);
    let (Some(inverse1), Some(inverse2)) = (forward1.inverse(), forward2.inverse()) else {
        return Err(Error::RectificationFailure("rectifying transform is singular".into()));
    };

    // extent of the region in rectified coordinates of image 1
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (_, p) in &s1 {
        let (x, y) = forward1.apply(p[0], p[1]);
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let (x0, y0) = (xmin.floor(), ymin.floor());
    let (wf, hf) = ((xmax - x0).ceil() + 1.0, (ymax - y0).ceil() + 1.0);
    if !(wf <= MAX_RECTIFIED_SIDE && hf <= MAX_RECTIFIED_SIDE) {
        return Err(Error::RectificationFailure(format!("rectified size {wf}x{hf} is too large")));
    }
    let (width, height) = (wf as usize, hf as usize);

    let dz = [roi.h_min - center.h, roi.h_max - center.h];
    let dd = [disparity_per_meter * dz[0], disparity_per_meter * dz[1]];
    let d_min = (dd[0].min(dd[1]) - DISPARITY_MARGIN).floor() as i32;
    let d_max = (dd[0].max(dd[1]) + DISPARITY_MARGIN).ceil() as i32;

    let map = RectificationMap {
        width,
        height,
        x0,
        y0,
        forward1,
        forward2,
        inverse1,
        inverse2,
        ref_lat: center.lat,
        ref_lon: center.lon,
        camera1: cam1,
        camera2: cam2,
        disparity_per_meter,
        h_ref: center.h,
        d_min,
        d_max,
    };
    let resample = |img: &Raster, inv: bool| -> Raster {
        let mut data = vec![f32::NAN; width * height];
        data.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
            for (c, v) in row.iter_mut().enumerate() {
                let p = if inv {
                    map.to_source2(c as f64, r as f64)
                } else {
                    map.to_source1(c as f64, r as f64)
                };
                if let Some(x) = img.bilinear(p.sample, p.line) {
                    *v = x as f32;
                }
            }
        });
        let mut out = Raster::new(width, height, data);
        out.white = img.white;
        out
    };
    let left = resample(img1, false);
    let right = resample(img2, true);
    let any_common = left
        .data
        .iter()
        .zip(&right.data)
        .any(|(a, b)| a.is_finite() && b.is_finite());
    if !any_common {
        return Err(Error::EmptyOverlap("no rectified pixel is seen by both images".into()));
    }
    Ok(Rectified { map, left, right })
}

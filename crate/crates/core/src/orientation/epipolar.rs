use nalgebra::{Matrix6, Vector6};

use super::BiasCorrection;
use crate::error::Result;
use crate::matching::Dims;
use crate::rpc::{
    default_height_range, epipolar_curve, point_to_curve_distance, ImagePoint, RpcModel,
    DEFAULT_EPIPOLAR_SAMPLES,
};

/// Singular values below this fraction of the largest are treated as
/// unobservable directions (the along-epipolar part of the bias).
const RELATIVE_RANK_TOLERANCE: f64 = 1e-6;

/// Distance from `p2` to the bias-corrected epipolar curve of `p1`.
pub fn epipolar_error(
    m1: &RpcModel,
    m2: &RpcModel,
    bias: &BiasCorrection,
    p1: &ImagePoint,
    p2: &ImagePoint,
) -> Result<f64> {
    let curve = raw_curve(m1, m2, p1)?;
    let corrected: Vec<ImagePoint> = curve.iter().map(|v| bias.apply(v)).collect();
    Ok(point_to_curve_distance(p2, &corrected))
}

pub(crate) fn raw_curve(m1: &RpcModel, m2: &RpcModel, p1: &ImagePoint) -> Result<Vec<ImagePoint>> {
    let (lo, hi) = default_height_range(m1);
    epipolar_curve(m1, m2, p1, lo, hi, DEFAULT_EPIPOLAR_SAMPLES)
}

/// Bias parameters relative to identity in centered, scaled image
/// coordinates of the second image, which keeps the normal equations well
/// conditioned:
///
/// ```text
/// s' = s + c0 + c1·u + c2·w
/// l' = l + c3 + c4·u + c5·w,   u = (s - sc) / k,  w = (l - lc) / k
/// ```
#[derive(Debug, Clone, Copy)]
pub(crate) struct BiasFrame {
    sc: f64,
    lc: f64,
    k: f64,
}

impl BiasFrame {
    pub fn new(dims: Dims) -> Self {
        Self {
            sc: (dims.width as f64 - 1.0) / 2.0,
            lc: (dims.height as f64 - 1.0) / 2.0,
            k: (dims.width.max(dims.height) as f64 / 2.0).max(1.0),
        }
    }

    #[inline]
    pub fn uw(&self, p: &ImagePoint) -> (f64, f64) {
        ((p.sample - self.sc) / self.k, (p.line - self.lc) / self.k)
    }

    pub fn to_bias(&self, c: &Vector6<f64>) -> BiasCorrection {
        let (k, sc, lc) = (self.k, self.sc, self.lc);
        BiasCorrection::from_array([
            c[0] - c[1] * sc / k - c[2] * lc / k,
            1.0 + c[1] / k,
            c[2] / k,
            c[3] - c[4] * sc / k - c[5] * lc / k,
            c[4] / k,
            1.0 + c[5] / k,
        ])
    }
}

/// Signed distance of `p2` to the corrected curve and its gradient with
/// respect to the centered parameters.
///
/// The derivative holds the segment normal fixed at the foot point, which
/// is exact to first order.
pub(crate) fn signed_residual(
    frame: &BiasFrame,
    bias: &BiasCorrection,
    curve: &[ImagePoint],
    p2: &ImagePoint,
) -> (f64, [f64; 6]) {
    let mut best = (f64::INFINITY, 0.0, [0.0; 6]);
    let mut prev = bias.apply(&curve[0]);
    for k in 0..curve.len() - 1 {
        let next = bias.apply(&curve[k + 1]);
        let (dx, dy) = (next.sample - prev.sample, next.line - prev.line);
        let (px, py) = (p2.sample - prev.sample, p2.line - prev.line);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let dist = (px - t * dx).hypot(py - t * dy);
        if dist < best.0 {
            let len = len2.sqrt();
            // left normal of the segment
            let (ns, nl) = if len > 0.0 { (-dy / len, dx / len) } else { (0.0, 0.0) };
            let signed = ns * px + nl * py;
            let foot = ImagePoint::new(
                curve[k].sample + t * (curve[k + 1].sample - curve[k].sample),
                curve[k].line + t * (curve[k + 1].line - curve[k].line),
            );
            let (u, w) = frame.uw(&foot);
            let grad = [-ns, -ns * u, -ns * w, -nl, -nl * u, -nl * w];
            // beyond a segment end the distance is radial; keep the sign
            // of the normal component
            let value = if signed < 0.0 { -dist } else { dist };
            best = (dist, value, grad);
        }
        prev = next;
    }
    (best.1, best.2)
}

/// Gauss-Newton fit of the bias from identity, taking the minimum-norm
/// step whenever the parameters are not all observable.
pub(crate) fn fit_bias(
    frame: &BiasFrame,
    curves: &[&[ImagePoint]],
    points: &[ImagePoint],
    max_iter: usize,
) -> BiasCorrection {
    let mut c = Vector6::zeros();
    let mut bias = frame.to_bias(&c);
    for _ in 0..max_iter {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for (curve, p2) in curves.iter().zip(points) {
            let (r, g) = signed_residual(frame, &bias, curve, p2);
            let g = Vector6::from_row_slice(&g);
            jtj += g * g.transpose();
            jtr += g * r;
        }
        let svd = jtj.svd(true, true);
        let top = svd.singular_values.max();
        if top <= 0.0 {
            break;
        }
        let eps = RELATIVE_RANK_TOLERANCE * top;
        let Ok(step) = svd.solve(&(-jtr), eps) else {
            break;
        };
        c += step;
        bias = frame.to_bias(&c);
        if step.norm() < 1e-10 {
            break;
        }
    }
    bias
}

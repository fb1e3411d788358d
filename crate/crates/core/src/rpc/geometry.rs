use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, Vector2, Vector3};

use super::{GroundPoint, ImagePoint, RpcModel};
use crate::error::{Error, Result};
use crate::frame::LocalFrame;

/// Central-difference step, in normalized ground units.
const JACOBIAN_STEP: f64 = 1e-6;
const INVERSE_TOLERANCE_PX: f64 = 1e-6;
const INVERSE_MAX_ITER: usize = 50;
const TRIANGULATION_MAX_ITER: usize = 50;
const MAX_CONDITION: f64 = 1e12;

pub const DEFAULT_EPIPOLAR_SAMPLES: usize = 11;

/// Height sweep `[h_off - h_scale, h_off + h_scale]` covering the validity volume.
pub fn default_height_range(m: &RpcModel) -> (f64, f64) {
    (m.h_off - m.h_scale, m.h_off + m.h_scale)
}

pub(super) fn inverse(m: &RpcModel, p: &ImagePoint, h: f64) -> Result<GroundPoint> {
    if !h.is_finite() {
        return Err(Error::Validation(format!("height {h} is not finite")));
    }
    let hn = (h - m.h_off) / m.h_scale;
    let target = Vector2::new(p.sample, p.line);
    let mut x = Vector2::new(0.0, 0.0);
    let mut residual = f64::INFINITY;
    // once converged, allow a couple of polishing steps to clear the
    // round-off of the numerical Jacobian
    let mut polish = 0;

    for _ in 0..INVERSE_MAX_ITER {
        let f = eval2(m, x, hn)?;
        let r = target - f;
        residual = r.norm();
        if residual < INVERSE_TOLERANCE_PX {
            if residual < 1e-10 || polish == 2 {
                let mut g = m.denormalize_ground([x[0], x[1], hn]);
                g.h = h;
                return Ok(g);
            }
            polish += 1;
        }
        let mut jac = Matrix2::zeros();
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += JACOBIAN_STEP;
            xm[k] -= JACOBIAN_STEP;
            let d = (eval2(m, xp, hn)? - eval2(m, xm, hn)?) / (2.0 * JACOBIAN_STEP);
            jac.set_column(k, &d);
        }
        let det = jac.determinant();
        let scale = jac.norm_squared();
        if scale == 0.0 || det.abs() <= 1e-12 * scale {
            return Err(Error::SingularJacobian);
        }
        let Some(inv) = jac.try_inverse() else {
            return Err(Error::SingularJacobian);
        };
        x += inv * r;
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: INVERSE_MAX_ITER,
        residual,
    })
}

#[inline]
fn eval2(m: &RpcModel, x: Vector2<f64>, hn: f64) -> Result<Vector2<f64>> {
    let p = m.project_normalized([x[0], x[1], hn])?;
    Ok(Vector2::new(p.sample, p.line))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub ground: GroundPoint,
    /// RMS over the four reprojection residual components, pixels.
    pub residual_px: f64,
}

/// Intersects the rays of two conjugate image points.
///
/// Gauss-Newton over (lat, lon, h), parameterized in the first model's
/// normalized frame, minimizing the stacked reprojection residuals.
pub fn triangulate(
    m1: &RpcModel,
    m2: &RpcModel,
    p1: &ImagePoint,
    p2: &ImagePoint,
) -> Result<Triangulation> {
    let start = m1.inverse(p1, m1.h_off)?;
    triangulate_from(m1, m2, p1, p2, &start)
}

/// [`triangulate`] with a caller-provided starting point.
pub fn triangulate_from(
    m1: &RpcModel,
    m2: &RpcModel,
    p1: &ImagePoint,
    p2: &ImagePoint,
    start: &GroundPoint,
) -> Result<Triangulation> {
    let obs = SVector::<f64, 4>::new(p1.sample, p1.line, p2.sample, p2.line);
    let stacked = |x: &Vector3<f64>| -> Result<SVector<f64, 4>> {
        let g = m1.denormalize_ground([x[0], x[1], x[2]]);
        let a = m1.project(&g)?;
        let b = m2.project(&g)?;
        Ok(SVector::<f64, 4>::new(a.sample, a.line, b.sample, b.line))
    };

    let n = m1.normalize_ground(start);
    let mut x = Vector3::new(n[0], n[1], n[2]);
    let mut r = obs - stacked(&x)?;

    for _ in 0..TRIANGULATION_MAX_ITER {
        let mut jac = SMatrix::<f64, 4, 3>::zeros();
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += JACOBIAN_STEP;
            xm[k] -= JACOBIAN_STEP;
            let d = (stacked(&xp)? - stacked(&xm)?) / (2.0 * JACOBIAN_STEP);
            jac.set_column(k, &d);
        }
        let normal: Matrix3<f64> = jac.transpose() * jac;
        if condition_number(&normal) > MAX_CONDITION {
            return Err(Error::DegenerateGeometry(
                "viewing rays are numerically parallel".into(),
            ));
        }
        let Some(step) = normal.cholesky().map(|c| c.solve(&(jac.transpose() * r))) else {
            return Err(Error::DegenerateGeometry(
                "normal matrix is not positive definite".into(),
            ));
        };
        x += step;
        r = obs - stacked(&x)?;
        if step.amax() < 1e-12 {
            break;
        }
    }
    Ok(Triangulation {
        ground: m1.denormalize_ground([x[0], x[1], x[2]]),
        residual_px: (r.norm_squared() / 4.0).sqrt(),
    })
}

fn condition_number(normal: &Matrix3<f64>) -> f64 {
    let eig = normal.symmetric_eigenvalues();
    let max = eig.amax();
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Projects the height sweep of `p` (seen in `src`) into `dst`.
pub fn epipolar_curve(
    src: &RpcModel,
    dst: &RpcModel,
    p: &ImagePoint,
    h_min: f64,
    h_max: f64,
    n: usize,
) -> Result<Vec<ImagePoint>> {
    if !(h_min < h_max) {
        return Err(Error::Validation(format!(
            "epipolar height range [{h_min}, {h_max}] is empty"
        )));
    }
    if n < 2 {
        return Err(Error::Validation(format!(
            "epipolar curve needs at least 2 samples, got {n}"
        )));
    }
    let step = (h_max - h_min) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let h = if i == n - 1 { h_max } else { h_min + step * i as f64 };
            let g = src.inverse(p, h)?;
            dst.project(&g)
        })
        .collect()
}

/// Minimum Euclidean distance from `p` to a polyline.
pub fn point_to_curve_distance(p: &ImagePoint, curve: &[ImagePoint]) -> f64 {
    match curve {
        [] => f64::INFINITY,
        [only] => p.distance(only),
        _ => curve
            .windows(2)
            .map(|w| segment_distance(p, &w[0], &w[1]).0)
            .fold(f64::INFINITY, f64::min),
    }
}

/// Distance to the polyline, signed by the side of the nearest segment
/// (positive to the left when walking the curve in vertex order, in
/// sample/line axes).
pub fn signed_curve_distance(p: &ImagePoint, curve: &[ImagePoint]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for w in curve.windows(2) {
        let (d, cross) = segment_distance(p, &w[0], &w[1]);
        if d < best.0 {
            best = (d, cross);
        }
    }
    if curve.len() == 1 {
        return p.distance(&curve[0]);
    }
    if best.1 < 0.0 {
        -best.0
    } else {
        best.0
    }
}

/// Returns (distance, cross product sign carrier).
#[inline]
fn segment_distance(p: &ImagePoint, a: &ImagePoint, b: &ImagePoint) -> (f64, f64) {
    let (dx, dy) = (b.sample - a.sample, b.line - a.line);
    let (px, py) = (p.sample - a.sample, p.line - a.line);
    let len2 = dx * dx + dy * dy;
    let cross = dx * py - dy * px;
    if len2 == 0.0 {
        return (px.hypot(py), cross);
    }
    let t = ((px * dx + py * dy) / len2).clamp(0.0, 1.0);
    ((px - t * dx).hypot(py - t * dy), cross)
}

/// Angle in degrees between the two cameras' viewing rays through
/// `footprint_center`.
///
/// Each ray joins the two ground points obtained by inverting the center's
/// image projection at `h_off ± h_scale / 2`, expressed in a local
/// east/north/up frame at the center.
pub fn intersection_angle(
    m1: &RpcModel,
    m2: &RpcModel,
    footprint_center: &GroundPoint,
) -> Result<f64> {
    let frame = LocalFrame::at(footprint_center);
    let r1 = viewing_ray(m1, footprint_center, &frame)?;
    let r2 = viewing_ray(m2, footprint_center, &frame)?;
    Ok(angle_between(r1, r2))
}

/// Angle in degrees between two 3-vectors, via `atan2(|u×v|, u·v)` so that
/// parallel vectors give exactly 0.
pub fn angle_between(u: [f64; 3], v: [f64; 3]) -> f64 {
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let cos = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    sin.atan2(cos).to_degrees()
}

fn viewing_ray(m: &RpcModel, center: &GroundPoint, frame: &LocalFrame) -> Result<[f64; 3]> {
    let p = m.project(center)?;
    let lo = frame.to_local(&m.inverse(&p, m.h_off - m.h_scale / 2.0)?);
    let hi = frame.to_local(&m.inverse(&p, m.h_off + m.h_scale / 2.0)?);
    let d = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateGeometry("zero-length viewing ray".into()));
    }
    Ok([d[0] / norm, d[1] / norm, d[2] / norm])
}

//! Rational polynomial camera model.
//!
//! Coefficients follow the RPC00B convention: each of the four polynomials
//! has 20 cubic terms in normalized longitude `L`, latitude `P` and height
//! `H`, ordered
//!
//! ```text
//! 1, L, P, H, LP, LH, PH, L², P², H², PLH, L³, LP², LH², L²P, P³, PH², L²H, P²H, H³
//! ```
//!
//! Image coordinates are `(sample, line)` with 0-based pixel indexing.

mod geometry;
mod io;

pub use geometry::{
    angle_between, default_height_range, epipolar_curve, intersection_angle, point_to_curve_distance,
    signed_curve_distance, triangulate, triangulate_from, Triangulation,
    DEFAULT_EPIPOLAR_SAMPLES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized coordinates beyond this magnitude are outside the validity domain.
pub const DOMAIN_LIMIT: f64 = 1.5;

const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    /// Degrees.
    pub lat: f64,
    /// Degrees.
    pub lon: f64,
    /// Meters above the ellipsoid.
    pub h: f64,
}

impl GroundPoint {
    pub fn new(lat: f64, lon: f64, h: f64) -> Self {
        Self { lat, lon, h }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
            && self.h.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImagePoint {
    /// Column, pixels.
    pub sample: f64,
    /// Row, pixels.
    pub line: f64,
}

impl ImagePoint {
    pub fn new(sample: f64, line: f64) -> Self {
        Self { sample, line }
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.sample - other.sample).hypot(self.line - other.line)
    }
}

/// Result of a forward projection together with the validity-domain flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: ImagePoint,
    pub in_domain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcModel {
    pub line_num: [f64; 20],
    pub line_den: [f64; 20],
    pub samp_num: [f64; 20],
    pub samp_den: [f64; 20],
    pub lat_off: f64,
    pub lat_scale: f64,
    pub lon_off: f64,
    pub lon_scale: f64,
    pub h_off: f64,
    pub h_scale: f64,
    pub line_off: f64,
    pub line_scale: f64,
    pub samp_off: f64,
    pub samp_scale: f64,
}

/// The 20 cubic monomials in RPC00B order.
#[inline]
pub(crate) fn monomials(l: f64, p: f64, h: f64) -> [f64; 20] {
    [
        1.0,
        l,
        p,
        h,
        l * p,
        l * h,
        p * h,
        l * l,
        p * p,
        h * h,
        p * l * h,
        l * l * l,
        l * p * p,
        l * h * h,
        l * l * p,
        p * p * p,
        p * h * h,
        l * l * h,
        p * p * h,
        h * h * h,
    ]
}

#[inline]
fn dot20(c: &[f64; 20], t: &[f64; 20]) -> f64 {
    c.iter().zip(t).map(|(a, b)| a * b).sum()
}

impl RpcModel {
    /// Checks the scale invariants and rescales each rational polynomial so
    /// that its denominator constant term is exactly 1.
    pub fn validated(mut self) -> Result<Self> {
        let scales = [
            ("lat_scale", self.lat_scale),
            ("lon_scale", self.lon_scale),
            ("h_scale", self.h_scale),
            ("line_scale", self.line_scale),
            ("samp_scale", self.samp_scale),
        ];
        for (name, v) in scales {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        let offsets = [
            self.lat_off,
            self.lon_off,
            self.h_off,
            self.line_off,
            self.samp_off,
        ];
        let mut all = self
            .line_num
            .iter()
            .chain(&self.line_den)
            .chain(&self.samp_num)
            .chain(&self.samp_den)
            .chain(&offsets);
        if all.any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite RPC value".into()));
        }
        normalize_pair(&mut self.line_num, &mut self.line_den, "line")?;
        normalize_pair(&mut self.samp_num, &mut self.samp_den, "sample")?;
        Ok(self)
    }

    /// Normalized `(L, P, H)` = (lon, lat, h) coordinates of a ground point.
    #[inline]
    pub fn normalize_ground(&self, g: &GroundPoint) -> [f64; 3] {
        [
            (g.lon - self.lon_off) / self.lon_scale,
            (g.lat - self.lat_off) / self.lat_scale,
            (g.h - self.h_off) / self.h_scale,
        ]
    }

    #[inline]
    pub fn denormalize_ground(&self, n: [f64; 3]) -> GroundPoint {
        GroundPoint {
            lat: n[1] * self.lat_scale + self.lat_off,
            lon: n[0] * self.lon_scale + self.lon_off,
            h: n[2] * self.h_scale + self.h_off,
        }
    }

    pub fn in_domain(&self, g: &GroundPoint) -> bool {
        self.normalize_ground(g)
            .iter()
            .all(|v| v.abs() <= DOMAIN_LIMIT)
    }

    /// Projection from normalized ground coordinates to pixels.
    #[inline]
    pub(crate) fn project_normalized(&self, n: [f64; 3]) -> Result<ImagePoint> {
        let t = monomials(n[0], n[1], n[2]);
        let line_den = dot20(&self.line_den, &t);
        let samp_den = dot20(&self.samp_den, &t);
        if line_den.abs() < MIN_DENOMINATOR {
            return Err(Error::SingularProjection(line_den));
        }
        if samp_den.abs() < MIN_DENOMINATOR {
            return Err(Error::SingularProjection(samp_den));
        }
        let line = dot20(&self.line_num, &t) / line_den;
        let samp = dot20(&self.samp_num, &t) / samp_den;
        Ok(ImagePoint {
            sample: samp * self.samp_scale + self.samp_off,
            line: line * self.line_scale + self.line_off,
        })
    }

    pub fn project(&self, g: &GroundPoint) -> Result<ImagePoint> {
        self.project_normalized(self.normalize_ground(g))
    }

    pub fn project_checked(&self, g: &GroundPoint) -> Result<Projection> {
        Ok(Projection {
            point: self.project(g)?,
            in_domain: self.in_domain(g),
        })
    }

    /// Ground point at height `h` that projects onto `p`.
    pub fn inverse(&self, p: &ImagePoint, h: f64) -> Result<GroundPoint> {
        geometry::inverse(self, p, h)
    }

    /// Center of the normalization volume.
    pub fn center(&self) -> GroundPoint {
        GroundPoint::new(self.lat_off, self.lon_off, self.h_off)
    }
}

fn normalize_pair(num: &mut [f64; 20], den: &mut [f64; 20], which: &str) -> Result<()> {
    let c = den[0];
    if c.abs() < MIN_DENOMINATOR {
        return Err(Error::Validation(format!(
            "{which} denominator constant term is zero"
        )));
    }
    if c != 1.0 {
        num.iter_mut().for_each(|v| *v /= c);
        den.iter_mut().for_each(|v| *v /= c);
        den[0] = 1.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_model() -> RpcModel {
        let mut den = [0.0; 20];
        den[0] = 1.0;
        RpcModel {
            line_num: [0.0; 20],
            line_den: den,
            samp_num: [0.0; 20],
            samp_den: den,
            lat_off: 30.0,
            lat_scale: 0.01,
            lon_off: -81.0,
            lon_scale: 0.01,
            h_off: 50.0,
            h_scale: 100.0,
            line_off: 1000.0,
            line_scale: 1000.0,
            samp_off: 1200.0,
            samp_scale: 1200.0,
        }
    }

    #[test]
    fn zero_numerators_project_to_offsets() {
        let m = unit_model();
        for g in [
            GroundPoint::new(30.004, -81.002, 12.0),
            GroundPoint::new(29.99, -80.995, 130.0),
        ] {
            let p = m.project(&g).unwrap();
            assert_eq!(p, ImagePoint::new(1200.0, 1000.0));
        }
    }

    #[test]
    fn center_projects_to_offsets_when_constant_term_is_zero() {
        let mut m = unit_model();
        m.line_num[1] = 0.7;
        m.line_num[9] = -0.2;
        m.samp_num[2] = 1.1;
        m.samp_num[15] = 0.05;
        let p = m.project(&m.center()).unwrap();
        assert_eq!(p, ImagePoint::new(1200.0, 1000.0));
    }

    #[test]
    fn denominator_is_normalized_on_validation() {
        let mut m = unit_model();
        m.line_num[1] = 2.0;
        m.line_den[0] = 2.0;
        m.line_den[3] = 0.5;
        let v = m.clone().validated().unwrap();
        assert_eq!(v.line_den[0], 1.0);
        assert_eq!(v.line_num[1], 1.0);
        assert_eq!(v.line_den[3], 0.25);
        let g = GroundPoint::new(30.003, -81.004, 80.0);
        let a = m.project(&g).unwrap();
        let b = v.project(&g).unwrap();
        assert!((a.line - b.line).abs() < 1e-9);
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        let mut m = unit_model();
        m.h_scale = 0.0;
        assert!(matches!(m.validated(), Err(Error::Validation(_))));
    }

    #[test]
    fn singular_denominator() {
        let mut m = unit_model();
        m.line_den[3] = 1.0;
        // H = -1 makes 1 + H vanish
        let g = GroundPoint::new(30.0, -81.0, m.h_off - m.h_scale);
        assert!(matches!(m.project(&g), Err(Error::SingularProjection(_))));
    }

    #[test]
    fn domain_flag() {
        let m = unit_model();
        let inside = m.project_checked(&GroundPoint::new(30.01, -81.0, 50.0)).unwrap();
        assert!(inside.in_domain);
        let outside = m.project_checked(&GroundPoint::new(30.02, -81.0, 50.0)).unwrap();
        assert!(!outside.in_domain);
    }
}

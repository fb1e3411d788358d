use serde::{Deserialize, Serialize};

use crate::rpc::ImagePoint;

/// First-order (affine) image-space correction of the second image:
///
/// ```text
/// s' = a0 + a1·s + a2·l
/// l' = a3 + a4·s + a5·l
/// ```
///
/// mapping the RPC-predicted position `(s, l)` to the observed pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCorrection {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
}

impl Default for BiasCorrection {
    fn default() -> Self {
        Self::identity()
    }
}

impl BiasCorrection {
    pub const SANE_DETERMINANT: std::ops::RangeInclusive<f64> = 0.5..=2.0;

    pub fn identity() -> Self {
        Self::from_array([0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    }

    pub fn translation(ds: f64, dl: f64) -> Self {
        Self::from_array([ds, 1.0, 0.0, dl, 0.0, 1.0])
    }

    /// Rotation by `angle_deg` about `center` followed by a translation.
    pub fn rigid(angle_deg: f64, center: ImagePoint, ds: f64, dl: f64) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        let a0 = center.sample - c * center.sample + s * center.line + ds;
        let a3 = center.line - s * center.sample - c * center.line + dl;
        Self::from_array([a0, c, -s, a3, s, c])
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            a0: a[0],
            a1: a[1],
            a2: a[2],
            a3: a[3],
            a4: a[4],
            a5: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a0, self.a1, self.a2, self.a3, self.a4, self.a5]
    }

    #[inline]
    pub fn apply(&self, p: &ImagePoint) -> ImagePoint {
        ImagePoint {
            sample: self.a0 + self.a1 * p.sample + self.a2 * p.line,
            line: self.a3 + self.a4 * p.sample + self.a5 * p.line,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a1 * self.a5 - self.a2 * self.a4
    }

    pub fn is_sane(&self) -> bool {
        Self::SANE_DETERMINANT.contains(&self.determinant())
    }

    /// Maps an observed pixel back to the RPC-predicted position.
    pub fn invert_point(&self, q: &ImagePoint) -> ImagePoint {
        let det = self.determinant();
        let (ds, dl) = (q.sample - self.a0, q.line - self.a3);
        ImagePoint {
            sample: (self.a5 * ds - self.a2 * dl) / det,
            line: (-self.a4 * ds + self.a1 * dl) / det,
        }
    }
}

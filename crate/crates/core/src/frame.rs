//! Local east/north/up frame around a reference point.
//!
//! Uses an equirectangular approximation: meters-per-degree are taken from
//! the WGS84 meridional and prime-vertical radii at the reference latitude.
//! Over tile-sized areas (a few km) the angular error stays well below 0.01°.

use crate::rpc::GroundPoint;

const WGS84_A: f64 = 6_378_137.0;
const WGS84_E2: f64 = 6.694_379_990_14e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub ref_lat: f64,
    pub ref_lon: f64,
    m_per_deg_lat: f64,
    m_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn new(ref_lat: f64, ref_lon: f64) -> Self {
        let phi = ref_lat.to_radians();
        let w = 1.0 - WGS84_E2 * phi.sin().powi(2);
        let meridional = WGS84_A * (1.0 - WGS84_E2) / w.powf(1.5);
        let prime_vertical = WGS84_A / w.sqrt();
        let deg = std::f64::consts::PI / 180.0;
        Self {
            ref_lat,
            ref_lon,
            m_per_deg_lat: meridional * deg,
            m_per_deg_lon: prime_vertical * phi.cos() * deg,
        }
    }

    pub fn at(g: &GroundPoint) -> Self {
        Self::new(g.lat, g.lon)
    }

    pub fn m_per_deg_lat(&self) -> f64 {
        self.m_per_deg_lat
    }

    pub fn m_per_deg_lon(&self) -> f64 {
        self.m_per_deg_lon
    }

    /// (east, north, up) in meters; up is the ellipsoidal height itself.
    pub fn to_local(&self, g: &GroundPoint) -> [f64; 3] {
        [
            (g.lon - self.ref_lon) * self.m_per_deg_lon,
            (g.lat - self.ref_lat) * self.m_per_deg_lat,
            g.h,
        ]
    }

    pub fn to_ground(&self, east: f64, north: f64, up: f64) -> GroundPoint {
        GroundPoint {
            lat: self.ref_lat + north / self.m_per_deg_lat,
            lon: self.ref_lon + east / self.m_per_deg_lon,
            h: up,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equator_scales_match_wgs84_radii() {
        let f = LocalFrame::new(0.0, 0.0);
        // semi-major axis times pi/180
        assert!((f.m_per_deg_lon() - 111_319.490_793).abs() < 1e-3);
        assert!((f.m_per_deg_lat() - 110_574.275_8).abs() < 0.1);
    }

    #[test]
    fn round_trip() {
        let f = LocalFrame::new(30.3, -81.6);
        let g = GroundPoint::new(30.301, -81.598, 12.5);
        let [e, n, u] = f.to_local(&g);
        let back = f.to_ground(e, n, u);
        assert!((back.lat - g.lat).abs() < 1e-12);
        assert!((back.lon - g.lon).abs() < 1e-12);
        assert_eq!(back.h, g.h);
    }
}

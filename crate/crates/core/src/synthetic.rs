//! Synthetic cameras and scenes with known geometry.
//!
//! Affine cameras are expressed as first-order RPCs so that every code path
//! (projection, inversion, epipolar curves, rectification) runs on them
//! unchanged. Used by the test suites and by the `synth` CLI command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::{DsmGrid, GridSpec, GroundRect};
use crate::frame::LocalFrame;
use crate::orientation::BiasCorrection;
use crate::raster::Raster;
use crate::rpc::{GroundPoint, ImagePoint, RpcModel};

#[derive(Debug, Clone, Copy)]
pub struct AffineCamera {
    pub center: GroundPoint,
    pub gsd: f64,
    pub width: usize,
    pub height: usize,
    /// Azimuth (clockwise from north) of the direction from the ground
    /// towards the satellite.
    pub view_azimuth_deg: f64,
    pub off_nadir_deg: f64,
    pub h_scale: f64,
}

impl AffineCamera {
    pub fn new(
        center: GroundPoint,
        gsd: f64,
        width: usize,
        height: usize,
        view_azimuth_deg: f64,
        off_nadir_deg: f64,
    ) -> Self {
        Self {
            center,
            gsd,
            width,
            height,
            view_azimuth_deg,
            off_nadir_deg,
            h_scale: 100.0,
        }
    }

    /// Unit vector from the ground towards the sensor in local (east, north, up).
    pub fn view_direction(&self) -> [f64; 3] {
        let az = self.view_azimuth_deg.to_radians();
        let th = self.off_nadir_deg.to_radians();
        [th.sin() * az.sin(), th.sin() * az.cos(), th.cos()]
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn orthonormalize(v: [f64; 3], against: &[[f64; 3]]) -> [f64; 3] {
    let mut out = v;
    for u in against {
        let k = dot(out, *u);
        for i in 0..3 {
            out[i] -= k * u[i];
        }
    }
    let n = dot(out, out).sqrt();
    [out[0] / n, out[1] / n, out[2] / n]
}

/// First-order RPC of an affine camera projecting along the view direction.
///
/// Sample increases roughly eastwards and line roughly southwards.
pub fn affine_rpc(cam: &AffineCamera) -> RpcModel {
    let frame = LocalFrame::at(&cam.center);
    let d = cam.view_direction();
    let a = orthonormalize([1.0, 0.0, 0.0], &[d]);
    let b = orthonormalize([0.0, -1.0, 0.0], &[d, a]);

    let half_extent_m = 0.75 * cam.gsd * cam.width.max(cam.height) as f64;
    let lat_scale = half_extent_m / frame.m_per_deg_lat();
    let lon_scale = half_extent_m / frame.m_per_deg_lon();
    let samp_scale = cam.width as f64 / 2.0;
    let line_scale = cam.height as f64 / 2.0;

    // Meters per unit of normalized L, P, H.
    let axis = [
        lon_scale * frame.m_per_deg_lon(),
        lat_scale * frame.m_per_deg_lat(),
        cam.h_scale,
    ];
    let mut samp_num = [0.0; 20];
    let mut line_num = [0.0; 20];
    for k in 0..3 {
        samp_num[k + 1] = a[k] * axis[k] / (cam.gsd * samp_scale);
        line_num[k + 1] = b[k] * axis[k] / (cam.gsd * line_scale);
    }
    let mut den = [0.0; 20];
    den[0] = 1.0;
    RpcModel {
        line_num,
        line_den: den,
        samp_num,
        samp_den: den,
        lat_off: cam.center.lat,
        lat_scale,
        lon_off: cam.center.lon,
        lon_scale,
        h_off: cam.center.h,
        h_scale: cam.h_scale,
        line_off: (cam.height as f64 - 1.0) / 2.0,
        line_scale,
        samp_off: (cam.width as f64 - 1.0) / 2.0,
        samp_scale,
    }
}

/// Adds small random higher-order terms, producing a genuinely rational
/// cubic model around the same geometry.
pub fn perturbed(model: &RpcModel, seed: u64, magnitude: f64) -> RpcModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = model.clone();
    for k in 4..20 {
        m.line_num[k] += rng.gen_range(-magnitude..magnitude);
        m.samp_num[k] += rng.gen_range(-magnitude..magnitude);
    }
    for k in 1..20 {
        m.line_den[k] += rng.gen_range(-magnitude..magnitude) * 0.1;
        m.samp_den[k] += rng.gen_range(-magnitude..magnitude) * 0.1;
    }
    m
}

/// Smooth pseudo-random texture over the local plane (meters).
///
/// Sum of bilinearly interpolated value-noise octaves; deterministic for a
/// given seed and independent of the viewing camera.
#[derive(Debug, Clone)]
pub struct GroundTexture {
    octaves: Vec<(f64, f64, Vec<f32>)>,
    lattice: usize,
}

impl GroundTexture {
    pub fn new(seed: u64, base_wavelength_m: f64) -> Self {
        let lattice = 1024;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let octaves = [(1.0, 0.6), (2.0, 0.3), (4.0, 0.25)]
            .iter()
            .map(|&(f, amp)| {
                let values = (0..lattice * lattice)
                    .map(|_| rng.gen_range(-1.0f32..1.0))
                    .collect();
                (base_wavelength_m * f, amp, values)
            })
            .collect();
        Self { octaves, lattice }
    }

    /// Intensity in [0, 255].
    pub fn sample(&self, east: f64, north: f64) -> f64 {
        let mut acc = 0.0;
        for (wavelength, amp, values) in &self.octaves {
            let u = east / wavelength + (self.lattice / 2) as f64;
            let v = north / wavelength + (self.lattice / 2) as f64;
            let (x0, y0) = (u.floor(), v.floor());
            let (fx, fy) = (u - x0, v - y0);
            let n = self.lattice as i64;
            let idx = |x: i64, y: i64| {
                let (x, y) = (x.rem_euclid(n), y.rem_euclid(n));
                values[(y * n + x) as usize] as f64
            };
            let (xi, yi) = (x0 as i64, y0 as i64);
            // smoothstep weights keep the gradient continuous
            let sx = fx * fx * (3.0 - 2.0 * fx);
            let sy = fy * fy * (3.0 - 2.0 * fy);
            let top = idx(xi, yi) * (1.0 - sx) + idx(xi + 1, yi) * sx;
            let bot = idx(xi, yi + 1) * (1.0 - sx) + idx(xi + 1, yi + 1) * sx;
            acc += amp * (top * (1.0 - sy) + bot * sy);
        }
        (127.5 + 110.0 * acc).clamp(0.0, 255.0)
    }
}

/// Terrain height as a function of local (east, north), meters.
pub trait Terrain: Sync {
    fn height(&self, east: f64, north: f64) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct Ramp {
    pub base: f64,
    pub slope_east: f64,
    pub slope_north: f64,
}

impl Terrain for Ramp {
    fn height(&self, east: f64, north: f64) -> f64 {
        self.base + self.slope_east * east + self.slope_north * north
    }
}

/// Renders the image seen by `model` over `terrain`, with an optional
/// image-space affine bias applied to the model's prediction
/// (`observed = bias(predicted)`).
pub fn render(
    model: &RpcModel,
    frame: &LocalFrame,
    terrain: &dyn Terrain,
    texture: &GroundTexture,
    width: usize,
    height: usize,
    bias: Option<&BiasCorrection>,
) -> Raster {
    use rayon::prelude::*;
    let mut data = vec![0f32; width * height];
    data.par_chunks_mut(width).enumerate().for_each(|(row, out)| {
        for (col, px) in out.iter_mut().enumerate() {
            let observed = ImagePoint::new(col as f64, row as f64);
            let predicted = match bias {
                Some(b) => b.invert_point(&observed),
                None => observed,
            };
            *px = ray_terrain(model, frame, terrain, &predicted)
                .map(|[e, n, _]| texture.sample(e, n) as f32)
                .unwrap_or(0.0);
        }
    });
    Raster::new(width, height, data)
}

/// Intersects the viewing ray of `p` with the terrain by fixed-point
/// iteration on height. Returns local (east, north, up).
pub fn ray_terrain(
    model: &RpcModel,
    frame: &LocalFrame,
    terrain: &dyn Terrain,
    p: &ImagePoint,
) -> Option<[f64; 3]> {
    let mut h = model.h_off;
    for _ in 0..50 {
        let g = model.inverse(p, h).ok()?;
        let [e, n, _] = frame.to_local(&g);
        let next = terrain.height(e, n);
        if (next - h).abs() < 1e-7 {
            return Some([e, n, next]);
        }
        h = next;
    }
    None
}

/// A rendered stereo pair over known terrain with its reference DSM.
pub struct StereoScene {
    pub m1: RpcModel,
    pub m2: RpcModel,
    pub img1: Raster,
    pub img2: Raster,
    /// Map frame of `truth` and of the terrain function.
    pub frame: LocalFrame,
    pub roi: GroundRect,
    pub truth: DsmGrid,
}

#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub center: GroundPoint,
    pub size: usize,
    pub gsd: f64,
    /// (view azimuth, off-nadir) of each camera, degrees.
    pub views: [(f64, f64); 2],
    pub texture_seed: u64,
    pub texture_wavelength_m: f64,
    /// Half side of the square region of interest, meters.
    pub roi_half_m: f64,
    pub cell_size: f64,
    /// Image-space bias of the second image.
    pub bias: Option<BiasCorrection>,
}

impl SceneConfig {
    pub fn new(center: GroundPoint, size: usize) -> Self {
        let gsd = 0.5;
        Self {
            center,
            size,
            gsd,
            views: [(90.0, 15.0), (250.0, 12.0)],
            texture_seed: 7,
            texture_wavelength_m: 4.0 * gsd,
            roi_half_m: 0.3 * size as f64 * gsd,
            cell_size: 2.0 * gsd,
            bias: None,
        }
    }
}

pub fn stereo_scene(terrain: &dyn Terrain, cfg: &SceneConfig) -> StereoScene {
    let cam = |(az, off): (f64, f64)| affine_rpc(&AffineCamera::new(cfg.center, cfg.gsd, cfg.size, cfg.size, az, off));
    let (m1, m2) = (cam(cfg.views[0]), cam(cfg.views[1]));
    let frame = LocalFrame::at(&cfg.center);
    let texture = GroundTexture::new(cfg.texture_seed, cfg.texture_wavelength_m);
    let img1 = render(&m1, &frame, terrain, &texture, cfg.size, cfg.size, None);
    let img2 = render(&m2, &frame, terrain, &texture, cfg.size, cfg.size, cfg.bias.as_ref());

    let e = cfg.roi_half_m;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=20 {
        for j in 0..=20 {
            let z = terrain.height(-e + e * i as f64 / 10.0, -e + e * j as f64 / 10.0);
            lo = lo.min(z);
            hi = hi.max(z);
        }
    }
    let roi = GroundRect::around(&cfg.center, e, e, lo - 1.0, hi + 1.0);
    let n = (2.0 * e / cfg.cell_size).floor() as usize;
    let spec = GridSpec {
        xll: -0.5 * n as f64 * cfg.cell_size,
        yll: -0.5 * n as f64 * cfg.cell_size,
        cell_size: cfg.cell_size,
        width: n,
        height: n,
    };
    let truth = DsmGrid::from_fn(spec, |x, y| Some(terrain.height(x, y)));
    StereoScene { m1, m2, img1, img2, frame, roi, truth }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_direction_is_projected_to_a_single_pixel() {
        let c = GroundPoint::new(30.0, -81.0, 10.0);
        let cam = AffineCamera::new(c, 0.5, 512, 512, 120.0, 17.0);
        let m = affine_rpc(&cam);
        let frame = LocalFrame::at(&c);
        let d = cam.view_direction();
        let g0 = frame.to_ground(3.0, -7.0, 10.0);
        let g1 = frame.to_ground(3.0 + 40.0 * d[0], -7.0 + 40.0 * d[1], 10.0 + 40.0 * d[2]);
        let p0 = m.project(&g0).unwrap();
        let p1 = m.project(&g1).unwrap();
        // limited by degree round-off, not by the model
        assert!(p0.distance(&p1) < 1e-7, "{p0:?} {p1:?}");
    }

    #[test]
    fn center_maps_to_image_center() {
        let c = GroundPoint::new(30.0, -81.0, 10.0);
        let m = affine_rpc(&AffineCamera::new(c, 0.5, 512, 256, 0.0, 20.0));
        let p = m.project(&c).unwrap();
        assert!((p.sample - 255.5).abs() < 1e-12);
        assert!((p.line - 127.5).abs() < 1e-12);
    }
}

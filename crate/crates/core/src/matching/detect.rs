//! Difference-of-Gaussians keypoints with 128-bin gradient-histogram
//! descriptors.

use std::f32::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{decimate, gaussian_blur, Raster};
use crate::rpc::ImagePoint;

pub const DESCRIPTOR_LEN: usize = 128;

const MIN_SIZE: usize = 64;
const ASSUMED_INPUT_BLUR: f64 = 0.5;
const BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_PEAK_RATIO: f32 = 0.8;
const ORI_SIGMA_FACTOR: f32 = 1.5;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const DESC_SCALE_FACTOR: f32 = 3.0;
const DESC_MAG_CLAMP: f32 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub octaves: usize,
    pub scales_per_octave: usize,
    pub sigma0: f64,
    /// Minimum |DoG| at the refined extremum, in normalized intensity.
    pub contrast_threshold: f32,
    /// Maximum ratio of principal curvatures.
    pub edge_threshold: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            octaves: 4,
            scales_per_octave: 3,
            sigma0: 1.6,
            contrast_threshold: 0.03,
            edge_threshold: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    /// Sub-pixel position in full-resolution image coordinates.
    pub position: ImagePoint,
    /// Gaussian scale in full-resolution pixels.
    pub scale: f64,
    /// Radians.
    pub orientation: f64,
    /// Unit-length descriptor.
    pub descriptor: Vec<f32>,
    /// Octave the keypoint was detected in.
    pub octave: usize,
}

struct Octave {
    gauss: Vec<Raster>,
    dog: Vec<Raster>,
}

struct Extremum {
    octave: usize,
    layer: usize,
    x: f32,
    y: f32,
    /// Continuous layer position.
    s: f32,
}

pub fn detect_and_describe(image: &Raster, cfg: &DetectorConfig) -> Result<Vec<Keypoint>> {
    if image.width < MIN_SIZE || image.height < MIN_SIZE {
        return Err(Error::Validation(format!(
            "image {}x{} is smaller than {MIN_SIZE}x{MIN_SIZE}",
            image.width, image.height
        )));
    }
    if image.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("image contains non-finite intensities".into()));
    }
    if cfg.octaves == 0 || cfg.scales_per_octave == 0 {
        return Err(Error::Validation("detector needs at least one octave and scale".into()));
    }

    let pyramid = build_pyramid(&image.normalized(), cfg);
    let extrema: Vec<Extremum> = pyramid
        .par_iter()
        .enumerate()
        .flat_map_iter(|(o, oct)| find_extrema(o, oct, cfg))
        .collect();

    let keypoints: Vec<Keypoint> = extrema
        .par_iter()
        .flat_map_iter(|e| describe(&pyramid[e.octave], e, cfg))
        .collect();
    Ok(keypoints)
}

fn build_pyramid(base: &Raster, cfg: &DetectorConfig) -> Vec<Octave> {
    let s = cfg.scales_per_octave;
    let k = 2f64.powf(1.0 / s as f64);
    let init_sigma = (cfg.sigma0.powi(2) - ASSUMED_INPUT_BLUR.powi(2)).max(0.01).sqrt();
    let mut current = gaussian_blur(base, init_sigma);

    let mut octaves = Vec::with_capacity(cfg.octaves);
    for o in 0..cfg.octaves {
        if current.width < 2 * BORDER + 3 || current.height < 2 * BORDER + 3 {
            break;
        }
        let mut gauss = Vec::with_capacity(s + 3);
        gauss.push(current.clone());
        for i in 1..s + 3 {
            let prev = cfg.sigma0 * k.powi(i as i32 - 1);
            let next = prev * k;
            let step = (next * next - prev * prev).sqrt();
            let blurred = gaussian_blur(&gauss[i - 1], step);
            gauss.push(blurred);
        }
        let dog = gauss
            .windows(2)
            .map(|w| {
                let data = w[1].data.iter().zip(&w[0].data).map(|(a, b)| a - b).collect();
                Raster::new(w[0].width, w[0].height, data)
            })
            .collect();
        if o + 1 < cfg.octaves {
            current = decimate(&gauss[s]);
        }
        octaves.push(Octave { gauss, dog });
    }
    octaves
}

fn find_extrema(o: usize, oct: &Octave, cfg: &DetectorConfig) -> Vec<Extremum> {
    let s = cfg.scales_per_octave;
    let prelim = 0.5 * cfg.contrast_threshold / s as f32;
    let (w, h) = (oct.dog[0].width, oct.dog[0].height);
    let mut out = Vec::new();
    for layer in 1..=s {
        let (below, cur, above) = (&oct.dog[layer - 1], &oct.dog[layer], &oct.dog[layer + 1]);
        for y in BORDER..h - BORDER {
            for x in BORDER..w - BORDER {
                let v = cur.get(x, y);
                if v.abs() <= prelim {
                    continue;
                }
                if !is_extremum(v, x, y, below, cur, above) {
                    continue;
                }
                if let Some(e) = refine(o, layer, x, y, oct, cfg) {
                    out.push(e);
                }
            }
        }
    }
    out
}

fn is_extremum(v: f32, x: usize, y: usize, below: &Raster, cur: &Raster, above: &Raster) -> bool {
    let maximum = v > 0.0;
    for (idx, r) in [below, cur, above].into_iter().enumerate() {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if idx == 1 && xx == x && yy == y {
                    continue;
                }
                let n = r.get(xx, yy);
                if (maximum && n >= v) || (!maximum && n <= v) {
                    return false;
                }
            }
        }
    }
    true
}

/// Quadratic sub-pixel/sub-scale refinement plus contrast and edge tests.
fn refine(o: usize, layer: usize, x: usize, y: usize, oct: &Octave, cfg: &DetectorConfig) -> Option<Extremum> {
    let s = cfg.scales_per_octave;
    let (w, h) = (oct.dog[0].width as isize, oct.dog[0].height as isize);
    let (mut xi, mut yi, mut li) = (x as isize, y as isize, layer as isize);
    for _ in 0..MAX_REFINE_STEPS {
        let at = |dl: isize, dx: isize, dy: isize| -> f32 {
            oct.dog[(li + dl) as usize].get((xi + dx) as usize, (yi + dy) as usize)
        };
        let v = at(0, 0, 0);
        let g = [
            0.5 * (at(0, 1, 0) - at(0, -1, 0)),
            0.5 * (at(0, 0, 1) - at(0, 0, -1)),
            0.5 * (at(1, 0, 0) - at(-1, 0, 0)),
        ];
        let dxx = at(0, 1, 0) + at(0, -1, 0) - 2.0 * v;
        let dyy = at(0, 0, 1) + at(0, 0, -1) - 2.0 * v;
        let dss = at(1, 0, 0) + at(-1, 0, 0) - 2.0 * v;
        let dxy = 0.25 * (at(0, 1, 1) - at(0, -1, 1) - at(0, 1, -1) + at(0, -1, -1));
        let dxs = 0.25 * (at(1, 1, 0) - at(1, -1, 0) - at(-1, 1, 0) + at(-1, -1, 0));
        let dys = 0.25 * (at(1, 0, 1) - at(1, 0, -1) - at(-1, 0, 1) + at(-1, 0, -1));
        let hess = nalgebra::Matrix3::new(
            dxx as f64, dxy as f64, dxs as f64, dxy as f64, dyy as f64, dys as f64, dxs as f64,
            dys as f64, dss as f64,
        );
        let grad = nalgebra::Vector3::new(g[0] as f64, g[1] as f64, g[2] as f64);
        let off = -(hess.try_inverse()? * grad);
        if off.iter().all(|c| c.abs() < 0.5) {
            let contrast = v as f64 + 0.5 * grad.dot(&off);
            if contrast.abs() < cfg.contrast_threshold as f64 {
                return None;
            }
            let tr = dxx + dyy;
            let det = dxx * dyy - dxy * dxy;
            let r = cfg.edge_threshold;
            if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
                return None;
            }
            return Some(Extremum {
                octave: o,
                layer: li as usize,
                x: xi as f32 + off[0] as f32,
                y: yi as f32 + off[1] as f32,
                s: li as f32 + off[2] as f32,
            });
        }
        xi += off[0].round() as isize;
        yi += off[1].round() as isize;
        li += off[2].round() as isize;
        let b = BORDER as isize;
        if li < 1 || li > s as isize || xi < b || yi < b || xi >= w - b || yi >= h - b {
            return None;
        }
    }
    None
}

fn describe(oct: &Octave, e: &Extremum, cfg: &DetectorConfig) -> Vec<Keypoint> {
    let s = cfg.scales_per_octave as f32;
    let sigma_oct = cfg.sigma0 as f32 * 2f32.powf(e.s / s);
    let img = &oct.gauss[e.layer];
    let factor = 2f64.powi(e.octave as i32);
    let (cx, cy) = (e.x.round() as isize, e.y.round() as isize);

    orientations(img, cx, cy, sigma_oct)
        .into_iter()
        .map(|angle| Keypoint {
            position: ImagePoint::new(e.x as f64 * factor, e.y as f64 * factor),
            scale: sigma_oct as f64 * factor,
            orientation: angle as f64,
            descriptor: descriptor(img, e.x, e.y, sigma_oct, angle),
            octave: e.octave,
        })
        .collect()
}

#[inline]
fn gradient(img: &Raster, x: isize, y: isize) -> Option<(f32, f32)> {
    if x < 1 || y < 1 || x >= img.width as isize - 1 || y >= img.height as isize - 1 {
        return None;
    }
    let (x, y) = (x as usize, y as usize);
    let dx = img.get(x + 1, y) - img.get(x - 1, y);
    let dy = img.get(x, y + 1) - img.get(x, y - 1);
    Some((dx, dy))
}

fn orientations(img: &Raster, cx: isize, cy: isize, sigma: f32) -> Vec<f32> {
    let ori_sigma = ORI_SIGMA_FACTOR * sigma;
    let radius = (3.0 * ori_sigma).round() as isize;
    let mut hist = [0f32; ORI_BINS];
    let denom = -1.0 / (2.0 * ori_sigma * ori_sigma);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let Some((gx, gy)) = gradient(img, cx + dx, cy + dy) else {
                continue;
            };
            let w = ((dx * dx + dy * dy) as f32 * denom).exp();
            let mag = (gx * gx + gy * gy).sqrt();
            let ang = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((ang / (2.0 * PI) * ORI_BINS as f32).round() as usize) % ORI_BINS;
            hist[bin] += w * mag;
        }
    }
    // [1 4 6 4 1] / 16 circular smoothing
    let mut smooth = [0f32; ORI_BINS];
    for (i, s) in smooth.iter_mut().enumerate() {
        let at = |k: isize| hist[(i as isize + k).rem_euclid(ORI_BINS as isize) as usize];
        *s = (at(-2) + at(2)) / 16.0 + 4.0 * (at(-1) + at(1)) / 16.0 + 6.0 * at(0) / 16.0;
    }
    let max = smooth.iter().cloned().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for i in 0..ORI_BINS {
        let l = smooth[(i + ORI_BINS - 1) % ORI_BINS];
        let r = smooth[(i + 1) % ORI_BINS];
        let c = smooth[i];
        if c > l && c > r && c >= ORI_PEAK_RATIO * max {
            let offset = 0.5 * (l - r) / (l - 2.0 * c + r);
            let bin = (i as f32 + offset).rem_euclid(ORI_BINS as f32);
            out.push(bin * 2.0 * PI / ORI_BINS as f32);
        }
    }
    out
}

fn descriptor(img: &Raster, x: f32, y: f32, sigma: f32, angle: f32) -> Vec<f32> {
    let d = DESC_WIDTH;
    let n = DESC_BINS;
    let hist_width = DESC_SCALE_FACTOR * sigma;
    let radius = (hist_width * std::f32::consts::SQRT_2 * (d as f32 + 1.0) * 0.5).round() as isize;
    let (sin, cos) = angle.sin_cos();
    let (cx, cy) = (x.round() as isize, y.round() as isize);
    let (fx, fy) = (x - cx as f32, y - cy as f32);
    let exp_scale = -1.0 / (0.5 * (d * d) as f32);
    let bins_per_rad = n as f32 / (2.0 * PI);
    let mut hist = vec![0f32; d * d * n];

    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (ox, oy) = (dx as f32 - fx, dy as f32 - fy);
            // rotate into the keypoint frame, in units of histogram cells
            let rx = (cos * ox + sin * oy) / hist_width;
            let ry = (-sin * ox + cos * oy) / hist_width;
            let rbin = ry + d as f32 / 2.0 - 0.5;
            let cbin = rx + d as f32 / 2.0 - 0.5;
            if rbin <= -1.0 || rbin >= d as f32 || cbin <= -1.0 || cbin >= d as f32 {
                continue;
            }
            let Some((gx, gy)) = gradient(img, cx + dx, cy + dy) else {
                continue;
            };
            let mag = (gx * gx + gy * gy).sqrt() * ((rx * rx + ry * ry) * exp_scale).exp();
            let ori = (gy.atan2(gx) - angle).rem_euclid(2.0 * PI) * bins_per_rad;

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), ori.floor());
            let (dr, dc, dor) = (rbin - r0, cbin - c0, ori - o0);
            for (ri, wr) in [(r0 as isize, 1.0 - dr), (r0 as isize + 1, dr)] {
                if ri < 0 || ri >= d as isize {
                    continue;
                }
                for (ci, wc) in [(c0 as isize, 1.0 - dc), (c0 as isize + 1, dc)] {
                    if ci < 0 || ci >= d as isize {
                        continue;
                    }
                    for (oi, wo) in [(o0 as usize % n, 1.0 - dor), ((o0 as usize + 1) % n, dor)] {
                        hist[(ri as usize * d + ci as usize) * n + oi] += mag * wr * wc * wo;
                    }
                }
            }
        }
    }
    normalize(&mut hist);
    hist.iter_mut().for_each(|v| *v = v.min(DESC_MAG_CLAMP));
    normalize(&mut hist);
    hist
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::GroundTexture;

    fn textured(w: usize, h: usize) -> Raster {
        let tex = GroundTexture::new(11, 3.0);
        Raster::from_fn(w, h, |x, y| tex.sample(x as f64, y as f64) as f32)
    }

    #[test]
    fn too_small_is_rejected() {
        let r = Raster::filled(63, 100, 1.0);
        assert!(matches!(
            detect_and_describe(&r, &DetectorConfig::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let r = Raster::filled(128, 128, 90.0);
        assert!(detect_and_describe(&r, &DetectorConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn descriptors_are_unit_length_and_deterministic() {
        let img = textured(160, 140);
        let a = detect_and_describe(&img, &DetectorConfig::default()).unwrap();
        let b = detect_and_describe(&img, &DetectorConfig::default()).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        for k in &a {
            assert_eq!(k.descriptor.len(), DESCRIPTOR_LEN);
            let n: f64 = k.descriptor.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(k.scale > 0.0);
        }
    }
}

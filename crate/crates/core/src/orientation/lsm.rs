//! Least-squares matching: affine geometric plus linear radiometric
//! refinement of the second point of a match.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{Match, MatchSet};
use crate::raster::Raster;
use crate::rpc::ImagePoint;

type Mat8 = SMatrix<f64, 8, 8>;
type Vec8 = SVector<f64, 8>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsmConfig {
    /// Odd window side, pixels.
    pub window: usize,
    pub max_iter: usize,
    /// Convergence on the translation update, pixels.
    pub tolerance: f64,
    /// Total translation beyond which the solution is treated as diverged.
    pub max_shift: f64,
    /// Minimum template standard deviation, intensity levels.
    pub min_std: f64,
}

impl Default for LsmConfig {
    fn default() -> Self {
        Self {
            window: 21,
            max_iter: 30,
            tolerance: 0.01,
            max_shift: 5.0,
            min_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsmResult {
    pub p2: ImagePoint,
    pub converged: bool,
    pub iterations: usize,
}

/// Refines `p2` so that the window around it in `img2` best matches the
/// window around `p1` in `img1`. On divergence the original `p2` is
/// returned with `converged = false`.
pub fn lsm_refine(img1: &Raster, img2: &Raster, p1: &ImagePoint, p2: &ImagePoint, cfg: &LsmConfig) -> Result<LsmResult> {
    if cfg.window < 3 || cfg.window % 2 == 0 {
        return Err(Error::Validation(format!("LSM window {} must be odd and >= 3", cfg.window)));
    }
    let half = (cfg.window / 2) as f64;
    let inside = |img: &Raster, p: &ImagePoint, margin: f64| {
        p.sample - half - margin >= 0.0
            && p.line - half - margin >= 0.0
            && p.sample + half + margin <= (img.width - 1) as f64
            && p.line + half + margin <= (img.height - 1) as f64
    };
    if !inside(img1, p1, 0.0) {
        return Err(Error::PatchOutOfBounds { x: p1.sample, y: p1.line });
    }
    if !inside(img2, p2, 1.0) {
        return Err(Error::PatchOutOfBounds { x: p2.sample, y: p2.line });
    }

    let offsets: Vec<(f64, f64)> = (0..cfg.window)
        .flat_map(|j| (0..cfg.window).map(move |i| (i as f64 - half, j as f64 - half)))
        .collect();
    let template: Vec<f64> = offsets
        .iter()
        .map(|&(dx, dy)| img1.bilinear(p1.sample + dx, p1.line + dy))
        .collect::<Option<_>>()
        .ok_or(Error::PatchOutOfBounds { x: p1.sample, y: p1.line })?;
    let n = template.len() as f64;
    let mean = template.iter().sum::<f64>() / n;
    let std = (template.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < cfg.min_std {
        return Err(Error::Textureless(std));
    }

    // [tx, a11, a12, ty, a21, a22, r0, r1], geometric part relative to identity
    let mut x = Vec8::zeros();
    x[7] = 1.0;
    let diverged = LsmResult { p2: *p2, converged: false, iterations: 0 };
    for it in 1..=cfg.max_iter {
        let mut ntn = Mat8::zeros();
        let mut ntr = Vec8::zeros();
        for (&(dx, dy), &t) in offsets.iter().zip(&template) {
            let xs = p2.sample + x[0] + (1.0 + x[1]) * dx + x[2] * dy;
            let ys = p2.line + x[3] + x[4] * dx + (1.0 + x[5]) * dy;
            let (Some(g), Some(gl), Some(gr), Some(gu), Some(gd)) = (
                img2.bilinear(xs, ys),
                img2.bilinear(xs - 1.0, ys),
                img2.bilinear(xs + 1.0, ys),
                img2.bilinear(xs, ys - 1.0),
                img2.bilinear(xs, ys + 1.0),
            ) else {
                return Ok(LsmResult { iterations: it, ..diverged });
            };
            let gx = 0.5 * (gr - gl) * x[7];
            let gy = 0.5 * (gd - gu) * x[7];
            let row = Vec8::from([gx, gx * dx, gx * dy, gy, gy * dx, gy * dy, 1.0, g]);
            let residual = t - (x[6] + x[7] * g);
            ntn += row * row.transpose();
            ntr += row * residual;
        }
        let Some(step) = ntn.cholesky().map(|c| c.solve(&ntr)) else {
            return Ok(LsmResult { iterations: it, ..diverged });
        };
        x += step;
        if x[0].hypot(x[3]) > cfg.max_shift || !x.iter().all(|v| v.is_finite()) {
            return Ok(LsmResult { iterations: it, ..diverged });
        }
        if step[0].hypot(step[3]) < cfg.tolerance {
            return Ok(LsmResult {
                p2: ImagePoint::new(p2.sample + x[0], p2.line + x[3]),
                converged: true,
                iterations: it,
            });
        }
    }
    Ok(LsmResult { iterations: cfg.max_iter, ..diverged })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineStats {
    /// Converged and moved to the refined position.
    pub refined: usize,
    /// Did not converge; original coordinates kept.
    pub kept: usize,
    /// Textureless or too close to the border; original coordinates kept.
    pub rejected: usize,
}

/// Applies [`lsm_refine`] to every match.
pub fn refine_matchset(img1: &Raster, img2: &Raster, matches: &MatchSet, cfg: &LsmConfig) -> (MatchSet, RefineStats) {
    let outcomes: Vec<(Match, u8)> = matches
        .matches
        .par_iter()
        .map(|m| match lsm_refine(img1, img2, &m.p1, &m.p2, cfg) {
            Ok(r) if r.converged => (Match { p2: r.p2, ..*m }, 0),
            Ok(_) => (*m, 1),
            Err(_) => (*m, 2),
        })
        .collect();
    let mut stats = RefineStats::default();
    for (_, kind) in &outcomes {
        match kind {
            0 => stats.refined += 1,
            1 => stats.kept += 1,
            _ => stats.rejected += 1,
        }
    }
    let refined: Vec<Match> = outcomes
        .into_iter()
        .map(|(m, _)| m)
        .filter(|m| matches.dims_b.contains(&m.p2))
        .collect();
    (matches.with_matches(refined), stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::GroundTexture;

    fn textured() -> Raster {
        let tex = GroundTexture::new(3, 5.0);
        Raster::from_fn(96, 96, |x, y| tex.sample(x as f64, y as f64) as f32)
    }

    #[test]
    fn aligned_patch_stays_put() {
        let img = textured();
        let p = ImagePoint::new(40.0, 50.0);
        let r = lsm_refine(&img, &img, &p, &p, &LsmConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.p2.distance(&p) < 1e-3);
    }

    #[test]
    fn constant_patch_is_textureless() {
        let img = Raster::filled(64, 64, 7.0);
        let p = ImagePoint::new(30.0, 30.0);
        assert!(matches!(
            lsm_refine(&img, &img, &p, &p, &LsmConfig::default()),
            Err(Error::Textureless(_))
        ));
    }

    #[test]
    fn border_patch_is_out_of_bounds() {
        let img = textured();
        let p = ImagePoint::new(5.0, 50.0);
        assert!(matches!(
            lsm_refine(&img, &img, &p, &p, &LsmConfig::default()),
            Err(Error::PatchOutOfBounds { .. })
        ));
    }
}

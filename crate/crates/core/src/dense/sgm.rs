//! Census-cost semi-global matching.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

const CENSUS_RADIUS: usize = 2;
const CENSUS_BITS: u8 = 24;
/// Cost for candidates outside the right image or with undefined census.
const INVALID_COST: u8 = CENSUS_BITS;
/// Keeps the sum of eight path costs within u16.
const MAX_P2: u16 = 8000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgmConfig {
    pub p1: u16,
    pub p2: u16,
    /// Left-right consistency tolerance, pixels.
    pub lr_tolerance: f32,
}

impl Default for SgmConfig {
    fn default() -> Self {
        Self {
            p1: 10,
            p2: 120,
            lr_tolerance: 1.0,
        }
    }
}

/// Horizontal disparities of the left image (`x_right = x_left − d`);
/// NaN marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
    pub d_min: i32,
    pub d_max: i32,
}

impl DisparityMap {
    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let v = self.data[y * self.width + x];
        v.is_finite().then_some(v)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_finite()).count()
    }

    pub fn as_raster(&self) -> Raster {
        Raster::new(self.width, self.height, self.data.clone())
    }
}

/// 5x5 census signatures; `None` where the window leaves the image or
/// touches an invalid pixel.
fn census(img: &Raster) -> Vec<Option<u32>> {
    let (w, h) = (img.width, img.height);
    let r = CENSUS_RADIUS;
    let mut out = vec![None; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        if y < r || y + r >= h {
            return;
        }
        for x in r..w.saturating_sub(r) {
            let c = img.get(x, y);
            if !c.is_finite() {
                continue;
            }
            let mut bits = 0u32;
            let mut ok = true;
            for dy in 0..=2 * r {
                for dx in 0..=2 * r {
                    if dx == r && dy == r {
                        continue;
                    }
                    let v = img.get(x + dx - r, y + dy - r);
                    if !v.is_finite() {
                        ok = false;
                    }
                    bits = (bits << 1) | (v < c) as u32;
                }
            }
            if ok {
                row[x] = Some(bits);
            }
        }
    });
    out
}

struct Volume {
    w: usize,
    nd: usize,
}

impl Volume {
    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.w + x) * self.nd
    }
}

/// One step of the path recursion for all disparities of a pixel.
#[inline]
fn step(cost: &[u8], prev: Option<&[u16]>, out: &mut [u16], p1: u16, p2: u16) {
    match prev {
        None => {
            for (o, c) in out.iter_mut().zip(cost) {
                *o = *c as u16;
            }
        }
        Some(prev) => {
            let min_prev = *prev.iter().min().unwrap();
            let nd = cost.len();
            for d in 0..nd {
                let mut best = prev[d];
                if d > 0 {
                    best = best.min(prev[d - 1] + p1);
                }
                if d + 1 < nd {
                    best = best.min(prev[d + 1] + p1);
                }
                best = best.min(min_prev + p2);
                out[d] = cost[d] as u16 + best - min_prev;
            }
        }
    }
}

/// Semi-global matching of rectified rasters over `d_min..=d_max`.
///
/// Aggregation is exact integer arithmetic, so the result does not depend
/// on how the work is scheduled.
pub fn sgm(left: &Raster, right: &Raster, d_min: i32, d_max: i32, cfg: &SgmConfig) -> Result<DisparityMap> {
    if d_min >= d_max {
        return Err(Error::Validation(format!("disparity range [{d_min}, {d_max}] is empty")));
    }
    if left.width != right.width || left.height != right.height {
        return Err(Error::Validation(format!(
            "rectified rasters differ in size: {}x{} vs {}x{}",
            left.width, left.height, right.width, right.height
        )));
    }
    if cfg.p2 > MAX_P2 {
        return Err(Error::Validation(format!("p2 ({}) exceeds {MAX_P2}", cfg.p2)));
    }
    if cfg.p2 <= cfg.p1 {
        return Err(Error::Validation(format!("p2 ({}) must exceed p1 ({})", cfg.p2, cfg.p1)));
    }
    let (w, h) = (left.width, left.height);
    let nd = (d_max - d_min + 1) as usize;
    let vol = Volume { w, nd };
    let cl = census(left);
    let cr = census(right);

    let mut cost = vec![INVALID_COST; w * h * nd];
    cost.par_chunks_mut(w * nd).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let Some(a) = cl[y * w + x] else { continue };
            for k in 0..nd {
                let xr = x as i64 - (d_min + k as i32) as i64;
                if xr < 0 || xr >= w as i64 {
                    continue;
                }
                if let Some(b) = cr[y * w + xr as usize] {
                    row[x * nd + k] = (a ^ b).count_ones() as u8;
                }
            }
        }
    });

    let mut sum = vec![0u16; w * h * nd];
    let (p1, p2) = (cfg.p1, cfg.p2);

    // horizontal paths, rows independent
    sum.par_chunks_mut(w * nd).enumerate().for_each(|(y, srow)| {
        let mut prev = vec![0u16; nd];
        let mut cur = vec![0u16; nd];
        for xs in [(0..w).collect::<Vec<_>>(), (0..w).rev().collect()] {
            for (i, &x) in xs.iter().enumerate() {
                let c = &cost[vol.idx(x, y)..vol.idx(x, y) + nd];
                step(c, (i > 0).then_some(&prev[..]), &mut cur, p1, p2);
                for (s, v) in srow[x * nd..(x + 1) * nd].iter_mut().zip(&cur) {
                    *s += v;
                }
                std::mem::swap(&mut prev, &mut cur);
            }
        }
    });

    // vertical and diagonal paths, row by row in both directions
    for downward in [true, false] {
        let mut prev = vec![0u16; 3 * w * nd];
        let mut cur = vec![0u16; 3 * w * nd];
        let rows: Vec<usize> = if downward { (0..h).collect() } else { (0..h).rev().collect() };
        for (i, &y) in rows.iter().enumerate() {
            let first = i == 0;
            let prev_ref = &prev;
            cur.par_chunks_mut(3 * nd).enumerate().for_each(|(x, out)| {
                let c = &cost[vol.idx(x, y)..vol.idx(x, y) + nd];
                // predecessors at x-1, x, x+1 on the previous row
                for (k, dx) in [-1i64, 0, 1].into_iter().enumerate() {
                    let px = x as i64 + dx;
                    let pred = if first || px < 0 || px >= w as i64 {
                        None
                    } else {
                        let base = px as usize * 3 * nd + k * nd;
                        Some(&prev_ref[base..base + nd])
                    };
                    step(c, pred, &mut out[k * nd..(k + 1) * nd], p1, p2);
                }
            });
            let srow = &mut sum[y * w * nd..(y + 1) * w * nd];
            srow.par_chunks_mut(nd).enumerate().for_each(|(x, s)| {
                let l = &cur[x * 3 * nd..(x + 1) * 3 * nd];
                for d in 0..nd {
                    s[d] += l[d] + l[nd + d] + l[2 * nd + d];
                }
            });
            std::mem::swap(&mut prev, &mut cur);
        }
    }

    // winner takes all, left and right
    let mut data = vec![f32::NAN; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let mut right_best = vec![u16::MAX; w];
        let mut right_disp: Vec<Option<i32>> = vec![None; w];
        for x in 0..w {
            let s = &sum[vol.idx(x, y)..vol.idx(x, y) + nd];
            for (k, &v) in s.iter().enumerate() {
                let xr = x as i64 - (d_min + k as i32) as i64;
                if xr < 0 || xr >= w as i64 {
                    continue;
                }
                let xr = xr as usize;
                if v < right_best[xr] {
                    right_best[xr] = v;
                    right_disp[xr] = Some(d_min + k as i32);
                }
            }
        }
        for x in 0..w {
            if cl[y * w + x].is_none() {
                continue;
            }
            let s = &sum[vol.idx(x, y)..vol.idx(x, y) + nd];
            let (mut k, mut best) = (0usize, u16::MAX);
            for (i, &v) in s.iter().enumerate() {
                if v < best {
                    best = v;
                    k = i;
                }
            }
            let mut d = (d_min + k as i32) as f32;
            if k > 0 && k + 1 < nd {
                let (a, b, c) = (s[k - 1] as f32, s[k] as f32, s[k + 1] as f32);
                let denom = a - 2.0 * b + c;
                if denom > 0.0 {
                    d += 0.5 * (a - c) / denom;
                }
            }
            let xr = x as f32 - d;
            let xr_i = xr.round();
            if xr_i < 0.0 || xr_i >= w as f32 || cr[y * w + xr_i as usize].is_none() {
                continue;
            }
            let Some(dr) = right_disp[xr_i as usize] else {
                continue;
            };
            if (d - dr as f32).abs() <= cfg.lr_tolerance {
                out[x] = d.clamp(d_min as f32, d_max as f32);
            }
        }
    });

    Ok(DisparityMap {
        width: w,
        height: h,
        data,
        d_min,
        d_max,
    })
}

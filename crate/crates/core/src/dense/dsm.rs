//! DSM grids, ESRI ASCII grid I/O and gridding of triangulated disparities.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rectify::RectificationMap;
use super::sgm::DisparityMap;
use crate::error::{Error, Result};
use crate::frame::LocalFrame;
use crate::orientation::BiasCorrection;
use crate::rpc::{triangulate_from, RpcModel};

pub const NODATA: f32 = -9999.0;

/// Placement of a north-up grid in map coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// West edge.
    pub xll: f64,
    /// South edge.
    pub yll: f64,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!("invalid grid {self:?}")));
        }
        Ok(())
    }

    /// Map coordinates of the center of cell (`col`, `row`); row 0 is north.
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.xll + (col as f64 + 0.5) * self.cell_size,
            self.yll + (self.height as f64 - row as f64 - 0.5) * self.cell_size,
        )
    }

    /// Cell containing a map point.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.xll) / self.cell_size).floor();
        let r = ((self.yll + self.height as f64 * self.cell_size - y) / self.cell_size).floor();
        (c >= 0.0 && r >= 0.0 && c < self.width as f64 && r < self.height as f64)
            .then(|| (c as usize, r as usize))
    }

    /// Continuous (column, row) of a map point in cell-center units.
    pub fn fractional(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.xll) / self.cell_size - 0.5,
            (self.yll + self.height as f64 * self.cell_size - y) / self.cell_size - 0.5,
        )
    }
}

/// Elevations in meters; NaN is nodata.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmGrid {
    pub spec: GridSpec,
    pub data: Vec<f32>,
}

impl DsmGrid {
    pub fn nodata(spec: GridSpec) -> Self {
        Self {
            spec,
            data: vec![f32::NAN; spec.width * spec.height],
        }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> Option<f64>) -> Self {
        let mut g = Self::nodata(spec);
        for row in 0..spec.height {
            for col in 0..spec.width {
                let (x, y) = spec.cell_center(col, row);
                if let Some(v) = f(x, y) {
                    g.data[row * spec.width + col] = v as f32;
                }
            }
        }
        g
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        let v = self.data[row * self.spec.width + col];
        v.is_finite().then_some(v as f64)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_finite()).count()
    }

    /// Bilinear elevation and its map-coordinate gradient at a map point.
    /// Defined only where all four neighbouring cells are valid.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        let (u, v) = self.spec.fractional(x, y);
        let (w, h) = (self.spec.width, self.spec.height);
        if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
            return None;
        }
        let c0 = (u.floor() as usize).min(w.saturating_sub(2));
        let r0 = (v.floor() as usize).min(h.saturating_sub(2));
        let (c1, r1) = ((c0 + 1).min(w - 1), (r0 + 1).min(h - 1));
        let (fu, fv) = (u - c0 as f64, v - r0 as f64);
        let z00 = self.get(c0, r0)?;
        let z10 = self.get(c1, r0)?;
        let z01 = self.get(c0, r1)?;
        let z11 = self.get(c1, r1)?;
        let z = (z00 * (1.0 - fu) + z10 * fu) * (1.0 - fv) + (z01 * (1.0 - fu) + z11 * fu) * fv;
        let du = (z10 - z00) * (1.0 - fv) + (z11 - z01) * fv;
        let dv = (z01 - z00) * (1.0 - fu) + (z11 - z10) * fu;
        let cs = self.spec.cell_size;
        // rows grow southwards
        Some((z, du / cs, -dv / cs))
    }

    pub fn save_asc(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_asc()).map_err(|e| Error::io(path, e))
    }

    pub fn to_asc(&self) -> String {
        let s = &self.spec;
        let mut out = String::with_capacity(s.width * s.height * 8 + 200);
        let _ = writeln!(out, "ncols {}", s.width);
        let _ = writeln!(out, "nrows {}", s.height);
        let _ = writeln!(out, "xllcorner {}", s.xll);
        let _ = writeln!(out, "yllcorner {}", s.yll);
        let _ = writeln!(out, "cellsize {}", s.cell_size);
        let _ = writeln!(out, "NODATA_value {NODATA}");
        for row in self.data.chunks(s.width) {
            let line: Vec<String> = row
                .iter()
                .map(|v| if v.is_finite() { v.to_string() } else { NODATA.to_string() })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn load_asc(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_asc(&text, path)
    }

    pub fn parse_asc(text: &str, origin: &Path) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((_, line)) = lines.peek() {
            let mut parts = line.split_whitespace();
            let Some(key) = parts.next() else {
                lines.next();
                continue;
            };
            if key.parse::<f64>().is_ok() {
                break;
            }
            let (n, _) = lines.next().unwrap();
            let value = parts
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::parse(origin, n + 1, format!("header `{key}` has no numeric value")))?;
            header.insert(key.to_ascii_lowercase(), value);
        }
        let need = |k: &str| {
            header
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(origin, 1, format!("missing header `{k}`")))
        };
        let width = need("ncols")? as usize;
        let height = need("nrows")? as usize;
        let cell_size = need("cellsize")?;
        let xll = match header.get("xllcorner") {
            Some(v) => *v,
            None => need("xllcenter")? - 0.5 * cell_size,
        };
        let yll = match header.get("yllcorner") {
            Some(v) => *v,
            None => need("yllcenter")? - 0.5 * cell_size,
        };
        let nodata = header.get("nodata_value").copied();
        let spec = GridSpec { xll, yll, cell_size, width, height };
        spec.validate()?;

        let mut data = Vec::with_capacity(width * height);
        for (n, line) in lines {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(origin, n + 1, format!("invalid value `{tok}`")))?;
                data.push(if Some(v) == nodata || !v.is_finite() { f32::NAN } else { v as f32 });
            }
        }
        if data.len() != width * height {
            return Err(Error::parse(
                origin,
                0,
                format!("expected {} values, found {}", width * height, data.len()),
            ));
        }
        Ok(Self { spec, data })
    }
}

/// Provenance written next to each raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub pair_id: String,
    pub method: String,
    pub config_hash: String,
    /// Reference of the map frame (local east/north meters).
    pub ref_lat: f64,
    pub ref_lon: f64,
    #[serde(default)]
    pub stats: serde_json::Value,
}

impl Sidecar {
    pub fn path_for(raster: &Path) -> PathBuf {
        raster.with_extension("json")
    }

    pub fn save(&self, raster: &Path) -> Result<()> {
        let path = Self::path_for(raster);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GriddingStats {
    pub points: usize,
    /// Triangulation failures.
    pub dropped: usize,
    /// Points falling outside the grid.
    pub outside: usize,
    pub cells: usize,
}

/// Median of each cell's contributions; cells without any stay nodata.
pub fn grid_points(spec: &GridSpec, points: &[(f64, f64, f64)]) -> (DsmGrid, usize) {
    let mut indexed: Vec<(usize, f64)> = Vec::with_capacity(points.len());
    let mut outside = 0;
    for &(x, y, z) in points {
        match spec.locate(x, y) {
            Some((c, r)) => indexed.push((r * spec.width + c, z)),
            None => outside += 1,
        }
    }
    indexed.par_sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut grid = DsmGrid::nodata(*spec);
    let mut start = 0;
    while start < indexed.len() {
        let cell = indexed[start].0;
        let mut end = start;
        while end < indexed.len() && indexed[end].0 == cell {
            end += 1;
        }
        let n = end - start;
        let mid = start + n / 2;
        let median = if n % 2 == 1 {
            indexed[mid].1
        } else {
            0.5 * (indexed[mid - 1].1 + indexed[mid].1)
        };
        grid.data[cell] = median as f32;
        start = end;
    }
    (grid, outside)
}

/// Triangulates every valid disparity and grids the heights in the map
/// frame `map_frame` (east/north meters).
pub fn dsm_from_disparity(
    disparity: &DisparityMap,
    rect: &RectificationMap,
    m1: &RpcModel,
    m2: &RpcModel,
    bias: &BiasCorrection,
    spec: &GridSpec,
    map_frame: &LocalFrame,
) -> Result<(DsmGrid, GriddingStats)> {
    spec.validate()?;
    if disparity.width != rect.width || disparity.height != rect.height {
        return Err(Error::Validation(format!(
            "disparity map {}x{} does not match rectification {}x{}",
            disparity.width, disparity.height, rect.width, rect.height
        )));
    }
    let rows: Vec<(Vec<(f64, f64, f64)>, usize)> = (0..disparity.height)
        .into_par_iter()
        .map(|r| {
            let mut pts = Vec::new();
            let mut dropped = 0;
            for c in 0..disparity.width {
                let Some(d) = disparity.get(c, r) else { continue };
                let (col, row, d) = (c as f64, r as f64, d as f64);
                let p1 = rect.to_source1(col, row);
                let p2 = bias.invert_point(&rect.to_source2(col - d, row));
                let start = rect.approximate_ground(col, row, d);
                match triangulate_from(m1, m2, &p1, &p2, &start) {
                    Ok(t) if t.ground.is_valid() => {
                        let [x, y, z] = map_frame.to_local(&t.ground);
                        pts.push((x, y, z));
                    }
                    _ => dropped += 1,
                }
            }
            (pts, dropped)
        })
        .collect();
    let mut stats = GriddingStats::default();
    let mut points = Vec::new();
    for (p, d) in rows {
        stats.dropped += d;
        points.extend(p);
    }
    stats.points = points.len();
    let (grid, outside) = grid_points(spec, &points);
    stats.outside = outside;
    stats.cells = grid.valid_count();
    Ok((grid, stats))
}

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{DsmGrid, GridSpec};
use crate::error::{Error, Result};
use crate::frame::LocalFrame;
use crate::orientation::BiasCorrection;
use crate::pairs::{ImageMeta, MapOrigin, TileManifest};
use crate::raster::Raster;
use crate::rpc::GroundPoint;
use crate::synthetic::{affine_rpc, render, AffineCamera, GroundTexture, Ramp, Terrain};

use super::run::write_json;

/// A toy tile: affine cameras over a ramp, a reference DSM and a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthTileConfig {
    pub tile_id: String,
    pub center: [f64; 3],
    pub size: usize,
    pub gsd: f64,
    /// (view azimuth, off-nadir) per image, degrees.
    pub views: Vec<(f64, f64)>,
    pub slope_east: f64,
    pub slope_north: f64,
    /// Largest translation bias (pixels) applied to images after the first.
    pub max_bias_px: f64,
    /// Indices of images replaced by noise, to produce failing pairs.
    pub noise_images: Vec<usize>,
    pub seed: u64,
}

impl Default for SynthTileConfig {
    fn default() -> Self {
        Self {
            tile_id: "synth".into(),
            center: [30.31, -81.66, 20.0],
            size: 256,
            gsd: 0.5,
            views: vec![(90.0, 15.0), (250.0, 12.0), (170.0, 14.0)],
            slope_east: 0.1,
            slope_north: 0.05,
            max_bias_px: 3.0,
            noise_images: Vec::new(),
            seed: 1,
        }
    }
}

/// Writes images, RPCs, `truth.asc` and `manifest.json` into `dir`.
pub fn write_synthetic_tile(dir: &Path, cfg: &SynthTileConfig) -> Result<PathBuf> {
    if cfg.views.len() < 2 || cfg.size < 64 || !(cfg.gsd > 0.0) {
        return Err(Error::Validation("a synthetic tile needs two views, size >= 64 and gsd > 0".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let center = GroundPoint::new(cfg.center[0], cfg.center[1], cfg.center[2]);
    let frame = LocalFrame::at(&center);
    let terrain = Ramp { base: center.h, slope_east: cfg.slope_east, slope_north: cfg.slope_north };
    let texture = GroundTexture::new(cfg.seed, 4.0 * cfg.gsd);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut images = Vec::new();
    for (k, &(az, off)) in cfg.views.iter().enumerate() {
        let id = format!("img{k:02}");
        let model = affine_rpc(&AffineCamera::new(center, cfg.gsd, cfg.size, cfg.size, az, off));
        let bias = (k > 0 && cfg.max_bias_px > 0.0).then(|| {
            let m = cfg.max_bias_px;
            BiasCorrection::translation(rng.gen_range(-m..m), rng.gen_range(-m..m))
        });
        let img = if cfg.noise_images.contains(&k) {
            let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed + 1000 + k as u64);
            Raster::new(cfg.size, cfg.size, (0..cfg.size * cfg.size).map(|_| noise.gen_range(0.0f32..255.0)).collect())
        } else {
            render(&model, &frame, &terrain, &texture, cfg.size, cfg.size, bias.as_ref())
        };
        let rpc_name = format!("{id}_RPC.TXT");
        let img_name = format!("{id}.png");
        model.save(dir.join(&rpc_name))?;
        img.save(dir.join(&img_name))?;
        images.push(ImageMeta {
            image_id: id,
            acquisition_date: NaiveDate::from_ymd_opt(2015, 1 + (k as u32 * 2) % 12, 10).expect("valid date"),
            sun_azimuth: 140.0 + 5.0 * k as f64,
            sun_elevation: 50.0 + 3.0 * k as f64,
            gsd: cfg.gsd,
            rpc_path: rpc_name.into(),
            image_path: Some(img_name.into()),
        });
    }

    // reference DSM over the central part of the footprint
    let cell = 2.0 * cfg.gsd;
    let n = ((0.6 * cfg.size as f64 * cfg.gsd) / cell).floor() as usize;
    let spec = GridSpec {
        xll: -0.5 * n as f64 * cell,
        yll: -0.5 * n as f64 * cell,
        cell_size: cell,
        width: n,
        height: n,
    };
    DsmGrid::from_fn(spec, |x, y| Some(terrain.height(x, y))).save_asc(dir.join("truth.asc"))?;

    let manifest = TileManifest {
        tile_id: cfg.tile_id.clone(),
        origin: Some(MapOrigin { lat: center.lat, lon: center.lon }),
        truth_dsm: Some("truth.asc".into()),
        images,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

//! Stereo pair selection: convergence-angle filtering, seasonal and
//! illumination annotation, and seeded sampling of `k` pairs per tile.

use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rpc::{intersection_angle, GroundPoint, RpcModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    #[serde(rename = "date")]
    pub acquisition_date: NaiveDate,
    pub sun_azimuth: f64,
    pub sun_elevation: f64,
    pub gsd: f64,
    pub rpc_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
}

impl ImageMeta {
    pub fn month(&self) -> u32 {
        self.acquisition_date.month()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sun_elevation > 0.0 && self.sun_elevation <= 90.0) {
            return Err(Error::Validation(format!(
                "{}: sun elevation {} outside (0, 90]",
                self.image_id, self.sun_elevation
            )));
        }
        if !(0.0..360.0).contains(&self.sun_azimuth) {
            return Err(Error::Validation(format!(
                "{}: sun azimuth {} outside [0, 360)",
                self.image_id, self.sun_azimuth
            )));
        }
        if !(self.gsd > 0.0) {
            return Err(Error::Validation(format!(
                "{}: gsd must be positive",
                self.image_id
            )));
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        if self.rpc_path.is_relative() {
            self.rpc_path = base.join(&self.rpc_path);
        }
        if let Some(p) = &self.image_path {
            if p.is_relative() {
                self.image_path = Some(base.join(p));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub angle_min: f64,
    pub angle_max: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            angle_min: 5.0,
            angle_max: 35.0,
            k: 5,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.angle_min && self.angle_min < self.angle_max) {
            return Err(Error::Validation(format!(
                "angle window [{}, {}] is invalid",
                self.angle_min, self.angle_max
            )));
        }
        if self.k < 1 {
            return Err(Error::Validation("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCandidate {
    pub id_a: String,
    pub id_b: String,
    pub intersection_angle: f64,
    pub sun_angle_diff: f64,
    pub month_diff: u32,
    pub rank_score: f64,
}

impl PairCandidate {
    pub fn pair_id(&self) -> String {
        format!("{}__{}", self.id_a, self.id_b)
    }
}

/// Cyclic month-of-year difference, in `[0, 6]`.
pub fn month_diff(month_a: u32, month_b: u32) -> Result<u32> {
    for m in [month_a, month_b] {
        if !(1..=12).contains(&m) {
            return Err(Error::Validation(format!("month {m} outside 1..=12")));
        }
    }
    let d = month_a.abs_diff(month_b);
    Ok(d.min(12 - d))
}

fn sun_vector(azimuth_deg: f64, elevation_deg: f64) -> [f64; 3] {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    [el.cos() * az.sin(), el.cos() * az.cos(), el.sin()]
}

/// Angle in degrees between the two sun directions.
pub fn sun_angle_diff(a: &ImageMeta, b: &ImageMeta) -> f64 {
    sun_angle_between(a.sun_azimuth, a.sun_elevation, b.sun_azimuth, b.sun_elevation)
}

pub fn sun_angle_between(az_a: f64, el_a: f64, az_b: f64, el_b: f64) -> f64 {
    let u = sun_vector(az_a, el_a);
    let v = sun_vector(az_b, el_b);
    crate::rpc::angle_between(u, v)
}

/// Equal-weight normalized sum of seasonal and illumination differences.
pub fn rank_score(month_diff: u32, sun_angle_diff: f64) -> f64 {
    month_diff as f64 / 6.0 + sun_angle_diff / 180.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// All pairs inside the angle window, sorted by (rank_score desc, ids).
    pub pool: Vec<PairCandidate>,
    /// The sampled pairs, in pool order.
    pub selected: Vec<PairCandidate>,
}

/// Builds the pair pool from images whose RPCs are already loaded and
/// samples `cfg.k` pairs uniformly without replacement.
pub fn enumerate_pairs_with_models(
    images: &[(ImageMeta, RpcModel)],
    cfg: &SelectionConfig,
) -> Result<Selection> {
    cfg.validate()?;
    let mut sorted: Vec<&(ImageMeta, RpcModel)> = images.iter().collect();
    sorted.sort_by(|a, b| a.0.image_id.cmp(&b.0.image_id));

    let mut pool = Vec::new();
    for (i, (ma, ra)) in sorted.iter().map(|x| (&x.0, &x.1)).enumerate() {
        for (mb, rb) in sorted[i + 1..].iter().map(|x| (&x.0, &x.1)) {
            let center = GroundPoint::new(
                0.5 * (ra.lat_off + rb.lat_off),
                0.5 * (ra.lon_off + rb.lon_off),
                0.5 * (ra.h_off + rb.h_off),
            );
            let angle = match intersection_angle(ra, rb, &center) {
                Ok(a) => a,
                Err(e) => {
                    warn!("pair {}/{}: {e}; skipped", ma.image_id, mb.image_id);
                    continue;
                }
            };
            if angle < cfg.angle_min || angle > cfg.angle_max {
                continue;
            }
            let md = month_diff(ma.month(), mb.month())?;
            let sd = sun_angle_diff(ma, mb);
            pool.push(PairCandidate {
                id_a: ma.image_id.clone(),
                id_b: mb.image_id.clone(),
                intersection_angle: angle,
                sun_angle_diff: sd,
                month_diff: md,
                rank_score: rank_score(md, sd),
            });
        }
    }
    pool.sort_by(|a, b| {
        b.rank_score
            .total_cmp(&a.rank_score)
            .then_with(|| a.id_a.cmp(&b.id_a))
            .then_with(|| a.id_b.cmp(&b.id_b))
    });

    let selected = if pool.len() <= cfg.k {
        pool.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = rand::seq::index::sample(&mut rng, pool.len(), cfg.k).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pool[i].clone()).collect()
    };
    Ok(Selection { pool, selected })
}

/// Loads each image's RPC, skipping (with a warning) those that fail, then
/// delegates to [`enumerate_pairs_with_models`].
pub fn enumerate_pairs(
    images: &[ImageMeta],
    cfg: &SelectionConfig,
) -> Result<(Selection, Vec<String>)> {
    let mut loaded = Vec::with_capacity(images.len());
    let mut warnings = Vec::new();
    for meta in images {
        if let Err(e) = meta.validate() {
            warnings.push(e.to_string());
            continue;
        }
        match RpcModel::load(&meta.rpc_path) {
            Ok(m) => loaded.push((meta.clone(), m)),
            Err(e) => {
                warn!("{}: unreadable RPC, image skipped: {e}", meta.image_id);
                warnings.push(format!("{}: {e}", meta.image_id));
            }
        }
    }
    if loaded.len() < 2 {
        warnings.push(format!("only {} usable images", loaded.len()));
    }
    Ok((enumerate_pairs_with_models(&loaded, cfg)?, warnings))
}

/// One tile: its images plus optional ground truth for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileManifest {
    pub tile_id: String,
    /// Reference point of the local map frame used by DSM rasters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<MapOrigin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_dsm: Option<PathBuf>,
    pub images: Vec<ImageMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOrigin {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestRepr {
    Tile(TileManifest),
    Tiles { tiles: Vec<TileManifest> },
    Images(Vec<ImageMeta>),
}

/// Reads a manifest holding a single tile, `{"tiles": [...]}`, or a bare
/// list of images. Relative paths are resolved against the manifest's
/// directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<TileManifest>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let repr: ManifestRepr = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let mut tiles = match repr {
        ManifestRepr::Tile(t) => vec![t],
        ManifestRepr::Tiles { tiles } => tiles,
        ManifestRepr::Images(images) => vec![TileManifest {
            tile_id: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "tile".into()),
            origin: None,
            truth_dsm: None,
            images,
        }],
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for t in &mut tiles {
        for img in &mut t.images {
            img.resolve(base);
        }
        if let Some(p) = &t.truth_dsm {
            if p.is_relative() {
                t.truth_dsm = Some(base.join(p));
            }
        }
    }
    Ok(tiles)
}

/// Output of the `pairs` command and input of the later stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsManifest {
    pub tile: TileManifest,
    pub config: SelectionConfig,
    pub pool_size: usize,
    pub pairs: Vec<PairCandidate>,
}

impl PairsManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn find(&self, pair_id: &str) -> Option<&PairCandidate> {
        self.pairs.iter().find(|p| p.pair_id() == pair_id)
    }

    pub fn image(&self, id: &str) -> Option<&ImageMeta> {
        self.tile.images.iter().find(|m| m.image_id == id)
    }
}

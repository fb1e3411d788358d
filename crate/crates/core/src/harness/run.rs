use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::config::{method_label, stage_seed, RunConfig};
use super::stats::{aggregate, AggregateStats};
use crate::dense::{densify, DsmGrid, GridSpec, GroundRect, Sidecar};
use crate::error::{Error, Result};
use crate::eval::{evaluate_dsm, EvalReport};
use crate::frame::LocalFrame;
use crate::matching::{
    detect_and_describe, load_matches, match_keypoints, Dims, MatchSet, BASELINE_METHOD,
};
use crate::orientation::{ransac_bias, refine_matchset, OrientationConfig};
use crate::pairs::{enumerate_pairs, load_manifest, PairCandidate, PairsManifest, TileManifest};
use crate::raster::Raster;
use crate::rpc::{default_height_range, RpcModel};

pub const MATCHES_FILE: &str = "matches.csv";
pub const ORIENTATION_FILE: &str = "orientation.json";
pub const DSM_FILE: &str = "dsm.asc";
pub const REPORT_FILE: &str = "report.json";
pub const STATS_JSON: &str = "stats.json";
pub const STATS_CSV: &str = "stats.csv";

/// Vertical margin added to a reference DSM's range for the dense search.
const TRUTH_HEIGHT_MARGIN: f64 = 2.0;

pub struct RunSummary {
    pub run_dir: PathBuf,
    pub reports: Vec<EvalReport>,
    pub stats: AggregateStats,
    /// Tasks whose outputs were already present.
    pub resumed: usize,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Map frame of a tile's DSMs.
pub fn tile_frame(tile: &TileManifest, fallback: &RpcModel) -> LocalFrame {
    match tile.origin {
        Some(o) => LocalFrame::new(o.lat, o.lon),
        None => LocalFrame::new(fallback.lat_off, fallback.lon_off),
    }
}

/// Ground box covered by a grid in `frame`.
pub fn grid_rect(spec: &GridSpec, frame: &LocalFrame, h_min: f64, h_max: f64) -> GroundRect {
    let sw = frame.to_ground(spec.xll, spec.yll, 0.0);
    let ne = frame.to_ground(
        spec.xll + spec.width as f64 * spec.cell_size,
        spec.yll + spec.height as f64 * spec.cell_size,
        0.0,
    );
    GroundRect {
        lat_min: sw.lat,
        lat_max: ne.lat,
        lon_min: sw.lon,
        lon_max: ne.lon,
        h_min,
        h_max,
    }
}

/// Grid covering a ground box in `frame`.
pub fn rect_grid(rect: &GroundRect, frame: &LocalFrame, cell_size: f64) -> GridSpec {
    let sw = frame.to_local(&crate::rpc::GroundPoint::new(rect.lat_min, rect.lon_min, 0.0));
    let ne = frame.to_local(&crate::rpc::GroundPoint::new(rect.lat_max, rect.lon_max, 0.0));
    GridSpec {
        xll: sw[0],
        yll: sw[1],
        cell_size,
        width: (((ne[0] - sw[0]) / cell_size).floor() as usize).max(1),
        height: (((ne[1] - sw[1]) / cell_size).floor() as usize).max(1),
    }
}

fn height_range(truth: Option<&DsmGrid>, m1: &RpcModel, fixed: Option<[f64; 2]>) -> (f64, f64) {
    if let Some([lo, hi]) = fixed {
        return (lo, hi);
    }
    if let Some(t) = truth {
        let (lo, hi) = t
            .data
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v as f64), b.max(v as f64)));
        if lo <= hi {
            return (lo - TRUTH_HEIGHT_MARGIN, hi + TRUTH_HEIGHT_MARGIN);
        }
    }
    default_height_range(m1)
}

/// Where a pair's DSM is computed: the reference grid when there is one,
/// otherwise the footprint overlap at `cell_size`.
pub struct DenseExtent {
    pub roi: GroundRect,
    pub spec: GridSpec,
    pub frame: LocalFrame,
}

impl DenseExtent {
    fn new(
        tile: &TileManifest,
        truth: Option<&DsmGrid>,
        inp: &Inputs,
        height: Option<[f64; 2]>,
        cell_size: f64,
    ) -> Result<Self> {
        Self::for_pair(tile, truth, &inp.m1, &inp.m2, (&inp.img1, &inp.img2), height, cell_size)
    }

    pub fn for_pair(
        tile: &TileManifest,
        truth: Option<&DsmGrid>,
        m1: &RpcModel,
        m2: &RpcModel,
        images: (&Raster, &Raster),
        height: Option<[f64; 2]>,
        cell_size: f64,
    ) -> Result<Self> {
        let frame = tile_frame(tile, m1);
        let (h_min, h_max) = height_range(truth, m1, height);
        let d1 = Dims::new(images.0.width, images.0.height);
        let d2 = Dims::new(images.1.width, images.1.height);
        let overlap = GroundRect::footprint_overlap(m1, d1, m2, d2, h_min, h_max)?;
        let Some(t) = truth else {
            let spec = rect_grid(&overlap, &frame, cell_size);
            return Ok(Self { roi: overlap, spec, frame });
        };
        let r = grid_rect(&t.spec, &frame, h_min, h_max);
        let roi = GroundRect {
            lat_min: r.lat_min.max(overlap.lat_min),
            lat_max: r.lat_max.min(overlap.lat_max),
            lon_min: r.lon_min.max(overlap.lon_min),
            lon_max: r.lon_max.min(overlap.lon_max),
            ..r
        };
        if roi.lat_min >= roi.lat_max || roi.lon_min >= roi.lon_max {
            return Err(Error::EmptyOverlap("reference DSM lies outside the pair's overlap".into()));
        }
        Ok(Self { roi, spec: t.spec, frame })
    }
}

struct Pair<'a> {
    tile: &'a TileManifest,
    truth: Option<&'a DsmGrid>,
    candidate: PairCandidate,
}

struct Inputs {
    m1: RpcModel,
    m2: RpcModel,
    img1: Raster,
    img2: Raster,
}

fn load_inputs(pair: &Pair) -> Result<Inputs> {
    let meta = |id: &str| {
        pair.tile
            .images
            .iter()
            .find(|m| m.image_id == id)
            .ok_or_else(|| Error::Validation(format!("image {id} is not in the manifest")))
    };
    let (a, b) = (meta(&pair.candidate.id_a)?, meta(&pair.candidate.id_b)?);
    let image = |m: &crate::pairs::ImageMeta| -> Result<Raster> {
        let p = m
            .image_path
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("image {} has no image_path", m.image_id)))?;
        Raster::load(p)
    };
    Ok(Inputs {
        m1: RpcModel::load(&a.rpc_path)?,
        m2: RpcModel::load(&b.rpc_path)?,
        img1: image(a)?,
        img2: image(b)?,
    })
}

fn initial_matches(cfg: &RunConfig, pair_id: &str, method: &str, inp: &Inputs) -> Result<MatchSet> {
    let (d1, d2) = (
        Dims::new(inp.img1.width, inp.img1.height),
        Dims::new(inp.img2.width, inp.img2.height),
    );
    if method == BASELINE_METHOD {
        let ka = detect_and_describe(&inp.img1, &cfg.detector)?;
        let kb = detect_and_describe(&inp.img2, &cfg.detector)?;
        let (set, stats) = match_keypoints(pair_id, method, &ka, &kb, d1, d2, &cfg.matching)?;
        info!("{pair_id}/{method}: {} matches ({stats:?})", set.len());
        Ok(set)
    } else {
        let dir = cfg
            .matches_dir
            .as_ref()
            .ok_or_else(|| Error::Config("matches_dir is not set".into()))?;
        let path = dir.join(method).join(format!("{pair_id}.csv"));
        let (set, report) = load_matches(&path, pair_id, method, d1, d2)?;
        if !report.rejected.is_empty() {
            warn!("{}: {} rows rejected", path.display(), report.rejected.len());
        }
        Ok(set)
    }
}

/// Orientation and, on success, DSM and evaluation for one variant.
fn run_variant(
    cfg: &RunConfig,
    pair: &Pair,
    inp: &Inputs,
    matches: &MatchSet,
    label: &str,
    dir: &Path,
) -> Result<EvalReport> {
    let pair_id = pair.candidate.pair_id();
    matches.write_csv(dir.join(MATCHES_FILE))?;
    let ocfg = OrientationConfig {
        seed: stage_seed(cfg.seed, "ransac", &pair_id),
        ..cfg.orientation
    };
    let mut report = EvalReport::failed(&pair_id, label, "");
    report.error = None;
    let orientation = match ransac_bias(&inp.m1, &inp.m2, matches, &ocfg) {
        Ok(o) => o,
        Err(e) => {
            report.error = Some(e.to_string());
            return Ok(report);
        }
    };
    orientation.save(dir.join(ORIENTATION_FILE))?;
    report.success = orientation.success;
    report.inlier_ratio = Some(orientation.inlier_ratio);
    report.epipolar_rms = orientation.epipolar_rms;
    if !orientation.success || !cfg.dense {
        return Ok(report);
    }

    let gsd = pair.tile.images.iter().find(|m| m.image_id == pair.candidate.id_a).map_or(1.0, |m| m.gsd);
    let extent = DenseExtent::new(pair.tile, pair.truth, &inp, cfg.height_range, cfg.cell_size.unwrap_or(gsd));
    let frame = extent.as_ref().map(|e| e.frame).unwrap_or_else(|_| tile_frame(pair.tile, &inp.m1));
    let dense = extent.and_then(|e| {
        densify(&inp.m1, &inp.m2, &orientation.bias, &e.roi, &inp.img1, &inp.img2, &cfg.sgm, &e.spec, &e.frame)
    });
    let (dsm, stats) = match dense {
        Ok(v) => v,
        Err(e) => {
            report.error = Some(format!("dense: {e}"));
            return Ok(report);
        }
    };
    let dsm_path = dir.join(DSM_FILE);
    dsm.save_asc(&dsm_path)?;
    Sidecar {
        pair_id: pair_id.clone(),
        method: label.to_string(),
        config_hash: cfg.digest(),
        ref_lat: frame.ref_lat,
        ref_lon: frame.ref_lon,
        stats: serde_json::to_value(stats).map_err(|e| Error::json(&dsm_path, e))?,
    }
    .save(&dsm_path)?;

    if let Some(truth) = pair.truth {
        match evaluate_dsm(&dsm, truth) {
            Ok((reg, completeness, rmse)) => {
                report.completeness = Some(completeness);
                report.rmse = Some(rmse);
                report.shift = Some(reg.shift);
                report.horizontal_degenerate = reg.horizontal_degenerate;
            }
            Err(e) => report.error = Some(format!("evaluation: {e}")),
        }
    }
    Ok(report)
}

/// All variants of one (pair, method) task; per-variant failures become
/// failed reports.
fn run_task(cfg: &RunConfig, run_dir: &Path, pair: &Pair, method: &str) -> Result<(Vec<EvalReport>, bool)> {
    let pair_id = pair.candidate.pair_id();
    let variants: Vec<(String, PathBuf)> = cfg
        .lsm
        .variants()
        .iter()
        .map(|&lsm| {
            let label = method_label(method, lsm);
            let dir = run_dir.join(&pair_id).join(&label);
            (label, dir)
        })
        .collect();
    if !cfg.force && variants.iter().all(|(_, d)| d.join(REPORT_FILE).is_file()) {
        let reports = variants
            .iter()
            .map(|(_, d)| read_report(&d.join(REPORT_FILE)))
            .collect::<Result<_>>()?;
        return Ok((reports, true));
    }
    for (_, d) in &variants {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let fail_all = |e: &Error| -> Vec<EvalReport> {
        variants
            .iter()
            .map(|(label, _)| EvalReport::failed(&pair_id, label, e.to_string()))
            .collect()
    };
    let prepared = load_inputs(pair).and_then(|inp| {
        let m = initial_matches(cfg, &pair_id, method, &inp)?;
        Ok((inp, m))
    });
    let reports = match prepared {
        Err(e) => {
            warn!("{pair_id}/{method}: {e}");
            fail_all(&e)
        }
        Ok((inp, matches)) => {
            let mut out = Vec::new();
            for (&lsm, (label, dir)) in cfg.lsm.variants().iter().zip(&variants) {
                let set = if lsm {
                    let (mut refined, stats) = refine_matchset(&inp.img1, &inp.img2, &matches, &cfg.lsm_config);
                    info!("{pair_id}/{label}: {stats:?}");
                    refined.method = label.clone();
                    refined
                } else {
                    matches.clone()
                };
                let r = run_variant(cfg, pair, &inp, &set, label, dir)
                    .unwrap_or_else(|e| EvalReport::failed(&pair_id, label, e.to_string()));
                out.push(r);
            }
            out
        }
    };
    for ((_, d), r) in variants.iter().zip(&reports) {
        write_json(&d.join(REPORT_FILE), r)?;
    }
    Ok((reports, false))
}

/// Runs every selected pair of every tile through every method, then
/// aggregates. Per-pair failures are recorded in the reports; only manifest
/// and I/O problems of the run directory abort.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let tiles = load_manifest(&cfg.manifest)?;
    let run_dir = cfg.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;

    let truths: Vec<Option<DsmGrid>> = tiles
        .iter()
        .map(|t| t.truth_dsm.as_ref().map(DsmGrid::load_asc).transpose())
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    for (tile, truth) in tiles.iter().zip(&truths) {
        let selection_cfg = crate::pairs::SelectionConfig {
            seed: stage_seed(cfg.seed, "pairs", &tile.tile_id),
            ..cfg.selection
        };
        let (selection, warnings) = enumerate_pairs(&tile.images, &selection_cfg)?;
        for w in warnings {
            warn!("{}: {w}", tile.tile_id);
        }
        info!(
            "{}: {} of {} pairs selected",
            tile.tile_id,
            selection.selected.len(),
            selection.pool.len()
        );
        PairsManifest {
            tile: tile.clone(),
            config: selection_cfg,
            pool_size: selection.pool.len(),
            pairs: selection.selected.clone(),
        }
        .save(run_dir.join(format!("pairs_{}.json", tile.tile_id)))?;
        for c in selection.selected {
            pairs.push(Pair { tile, truth: truth.as_ref(), candidate: c });
        }
    }

    let tasks: Vec<(&Pair, &str)> = pairs
        .iter()
        .flat_map(|p| cfg.methods.iter().map(move |m| (p, m.as_str())))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<(Vec<EvalReport>, bool)>> =
        pool.install(|| tasks.par_iter().map(|(p, m)| run_task(cfg, &run_dir, p, m)).collect());

    let mut reports = Vec::new();
    let mut resumed = 0;
    for r in results {
        let (rs, skipped) = r?;
        resumed += skipped as usize;
        reports.extend(rs);
    }
    reports.sort_by(|a, b| a.pair_id.cmp(&b.pair_id).then_with(|| a.method.cmp(&b.method)));
    let stats = aggregate(&reports);
    write_json(&run_dir.join(STATS_JSON), &stats)?;
    let csv_path = run_dir.join(STATS_CSV);
    std::fs::write(&csv_path, stats.to_long_csv()).map_err(|e| Error::io(&csv_path, e))?;
    Ok(RunSummary { run_dir, reports, stats, resumed })
}

/// Reports found under a run directory, sorted by pair and method.
pub fn collect_reports(run_dir: &Path) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    let entries = std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    for pair in entries {
        let pair = pair.map_err(|e| Error::io(run_dir, e))?.path();
        if !pair.is_dir() {
            continue;
        }
        for method in std::fs::read_dir(&pair).map_err(|e| Error::io(&pair, e))? {
            let p = method.map_err(|e| Error::io(&pair, e))?.path().join(REPORT_FILE);
            if p.is_file() {
                reports.push(read_report(&p)?);
            }
        }
    }
    reports.sort_by(|a, b| a.pair_id.cmp(&b.pair_id).then_with(|| a.method.cmp(&b.method)));
    Ok(reports)
}

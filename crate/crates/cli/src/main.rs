use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use satstereo::dense::{densify, DsmGrid, SgmConfig, Sidecar};
use satstereo::eval::{evaluate_dsm, EvalReport};
use satstereo::harness::{
    aggregate, collect_reports, run_pipeline, write_json, write_synthetic_tile, DenseExtent, RunConfig,
    SynthTileConfig, METRICS,
};
use satstereo::matching::{
    detect_and_describe, load_matches, match_keypoints, DetectorConfig, Dims, MatchConfig, BASELINE_METHOD,
};
use satstereo::orientation::{ransac_bias, refine_matchset, LsmConfig, Orientation, OrientationConfig};
use satstereo::pairs::{enumerate_pairs, load_manifest, PairsManifest, SelectionConfig};
use satstereo::raster::Raster;
use satstereo::rpc::RpcModel;

#[derive(Parser)]
#[command(name = "satstereo", version, about = "Satellite stereo matching evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select stereo pairs from a tile manifest.
    Pairs(PairsArgs),
    /// Match one pair with the built-in detector or import external matches.
    Match(MatchArgs),
    /// Estimate the bias correction of one pair and apply the success gate.
    Orient(OrientArgs),
    /// Rectify, run SGM and grid a DSM for an oriented pair.
    Densify(DensifyArgs),
    /// Co-register a DSM to a reference and report completeness and RMSE.
    DsmEval(DsmEvalArgs),
    /// Run the whole workflow from a config file.
    Run(RunArgs),
    /// Aggregate the reports of a run into CSV tables.
    Report(ReportArgs),
    /// Write a synthetic tile (images, RPCs, reference DSM, manifest).
    Synth(SynthArgs),
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Tile to use when the manifest holds several.
    #[arg(long)]
    tile: Option<String>,
    #[arg(long, default_value_t = 5.0)]
    angle_min: f64,
    #[arg(long, default_value_t = 35.0)]
    angle_max: f64,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PairArgs {
    /// Pairs manifest written by `pairs`.
    #[arg(long)]
    pairs: PathBuf,
    /// Pair id (`<id_a>__<id_b>`).
    #[arg(long)]
    pair: String,
}

#[derive(Args)]
struct MatchArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long, default_value = BASELINE_METHOD)]
    method: String,
    /// Import matches from this CSV instead of running the detector.
    #[arg(long)]
    import: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    ratio: f32,
    #[arg(long)]
    no_crosscheck: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OrientArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long)]
    matches: PathBuf,
    #[arg(long, default_value = BASELINE_METHOD)]
    method: String,
    /// Refine matches by least squares matching first.
    #[arg(long)]
    lsm: bool,
    /// Epipolar RMS threshold of the success gate, pixels.
    #[arg(long = "T", default_value_t = 5.0)]
    t: f64,
    #[arg(long, default_value_t = 2.0)]
    ransac_threshold: f64,
    #[arg(long, default_value_t = 2000)]
    ransac_iterations: usize,
    #[arg(long, default_value_t = 5)]
    min_inliers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the refined matches when `--lsm` is set.
    #[arg(long)]
    refined_out: Option<PathBuf>,
}

#[derive(Args)]
struct DensifyArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long)]
    orientation: PathBuf,
    /// Search height range, meters.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"], allow_negative_numbers = true)]
    height_range: Option<Vec<f64>>,
    /// Cell size when the tile has no reference DSM; defaults to the GSD.
    #[arg(long)]
    cell_size: Option<f64>,
    #[arg(long, default_value_t = 10)]
    p1: u16,
    #[arg(long, default_value_t = 120)]
    p2: u16,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DsmEvalArgs {
    #[arg(long)]
    dsm: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON or TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "SATSTEREO_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Recompute tasks whose outputs exist.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory (`<output>/<run-id>`).
    #[arg(long)]
    run: PathBuf,
    /// Directory of the CSV tables; defaults to `<run>/tables`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Replace these images (by index) with noise.
    #[arg(long, value_delimiter = ',')]
    noise: Vec<usize>,
}

struct PairContext {
    manifest: PairsManifest,
    m1: RpcModel,
    m2: RpcModel,
    img1: Raster,
    img2: Raster,
}

impl PairContext {
    fn load(args: &PairArgs) -> Result<Self> {
        let manifest = PairsManifest::load(&args.pairs)?;
        let cand = manifest
            .find(&args.pair)
            .ok_or_else(|| anyhow!("pair {} is not in {}", args.pair, args.pairs.display()))?
            .clone();
        let meta = |id: &str| manifest.image(id).ok_or_else(|| anyhow!("image {id} is not in the manifest"));
        let (a, b) = (meta(&cand.id_a)?.clone(), meta(&cand.id_b)?.clone());
        let image = |m: &satstereo::pairs::ImageMeta| -> Result<Raster> {
            let p = m.image_path.as_ref().ok_or_else(|| anyhow!("image {} has no image_path", m.image_id))?;
            Ok(Raster::load(p)?)
        };
        Ok(Self {
            m1: RpcModel::load(&a.rpc_path)?,
            m2: RpcModel::load(&b.rpc_path)?,
            img1: image(&a)?,
            img2: image(&b)?,
            manifest,
        })
    }

    fn dims(&self) -> (Dims, Dims) {
        (
            Dims::new(self.img1.width, self.img1.height),
            Dims::new(self.img2.width, self.img2.height),
        )
    }
}

fn pairs(a: PairsArgs) -> Result<()> {
    let tiles = load_manifest(&a.manifest)?;
    let tile = match &a.tile {
        Some(id) => tiles.into_iter().find(|t| &t.tile_id == id).ok_or_else(|| anyhow!("no tile {id}"))?,
        None if tiles.len() == 1 => tiles.into_iter().next().expect("one tile"),
        None => bail!("the manifest holds {} tiles; choose one with --tile", tiles.len()),
    };
    let cfg = SelectionConfig { angle_min: a.angle_min, angle_max: a.angle_max, k: a.k, seed: a.seed };
    let (selection, warnings) = enumerate_pairs(&tile.images, &cfg)?;
    for w in warnings {
        log::warn!("{w}");
    }
    println!("{} of {} pairs selected", selection.selected.len(), selection.pool.len());
    PairsManifest { tile, config: cfg, pool_size: selection.pool.len(), pairs: selection.selected }.save(&a.out)?;
    Ok(())
}

fn match_cmd(a: MatchArgs) -> Result<()> {
    let ctx = PairContext::load(&a.pair)?;
    let (d1, d2) = ctx.dims();
    let set = match &a.import {
        Some(csv) => {
            let (set, report) = load_matches(csv, &a.pair.pair, &a.method, d1, d2)?;
            println!(
                "{} rows, {} accepted, {} duplicates, {} rejected",
                report.rows,
                report.accepted,
                report.duplicates,
                report.rejected.len()
            );
            for (line, why) in &report.rejected {
                log::warn!("line {line}: {why}");
            }
            set
        }
        None => {
            if a.method != BASELINE_METHOD {
                bail!("method {} needs --import; only {BASELINE_METHOD} runs built in", a.method);
            }
            let det = DetectorConfig::default();
            let ka = detect_and_describe(&ctx.img1, &det)?;
            let kb = detect_and_describe(&ctx.img2, &det)?;
            let cfg = MatchConfig { ratio: a.ratio, cross_check: !a.no_crosscheck };
            let (set, stats) = match_keypoints(&a.pair.pair, &a.method, &ka, &kb, d1, d2, &cfg)?;
            println!(
                "{} + {} keypoints, {} matches",
                stats.keypoints_a, stats.keypoints_b, stats.accepted
            );
            set
        }
    };
    set.write_csv(&a.out)?;
    Ok(())
}

fn orient(a: OrientArgs) -> Result<()> {
    let ctx = PairContext::load(&a.pair)?;
    let (d1, d2) = ctx.dims();
    let (mut set, _) = load_matches(&a.matches, &a.pair.pair, &a.method, d1, d2)?;
    if a.lsm {
        let (refined, stats) = refine_matchset(&ctx.img1, &ctx.img2, &set, &LsmConfig::default());
        println!("lsm: {} refined, {} kept, {} rejected", stats.refined, stats.kept, stats.rejected);
        set = refined;
        if let Some(p) = &a.refined_out {
            set.write_csv(p)?;
        }
    }
    let cfg = OrientationConfig {
        t: a.t,
        ransac_threshold: a.ransac_threshold,
        ransac_iterations: a.ransac_iterations,
        min_inliers: a.min_inliers,
        seed: a.seed,
    };
    let o = ransac_bias(&ctx.m1, &ctx.m2, &set, &cfg)?;
    println!(
        "{} inliers of {} ({:.3}), epipolar rms {}, success {}",
        o.inliers,
        o.matches,
        o.inlier_ratio,
        o.epipolar_rms.map_or("-".into(), |r| format!("{r:.3} px")),
        o.success
    );
    o.save(&a.out)?;
    Ok(())
}

fn densify_cmd(a: DensifyArgs) -> Result<()> {
    let ctx = PairContext::load(&a.pair)?;
    let o = Orientation::load(&a.orientation)?;
    if !o.success {
        bail!("pair {} failed relative orientation and is not densified", o.pair_id);
    }
    let tile = &ctx.manifest.tile;
    let truth = tile.truth_dsm.as_ref().map(DsmGrid::load_asc).transpose()?;
    let height = a.height_range.as_deref().map(|h| [h[0], h[1]]);
    let gsd = tile.images.first().map_or(1.0, |m| m.gsd);
    let extent = DenseExtent::for_pair(
        tile,
        truth.as_ref(),
        &ctx.m1,
        &ctx.m2,
        (&ctx.img1, &ctx.img2),
        height,
        a.cell_size.unwrap_or(gsd),
    )?;
    let sgm = SgmConfig { p1: a.p1, p2: a.p2, ..SgmConfig::default() };
    let (dsm, stats) = densify(
        &ctx.m1,
        &ctx.m2,
        &o.bias,
        &extent.roi,
        &ctx.img1,
        &ctx.img2,
        &sgm,
        &extent.spec,
        &extent.frame,
    )?;
    println!(
        "disparity [{}, {}], {} valid, {} cells",
        stats.d_min, stats.d_max, stats.valid_disparities, stats.gridding.cells
    );
    dsm.save_asc(&a.out)?;
    Sidecar {
        pair_id: o.pair_id.clone(),
        method: o.method.clone(),
        config_hash: format!("p1={},p2={}", a.p1, a.p2),
        ref_lat: extent.frame.ref_lat,
        ref_lon: extent.frame.ref_lon,
        stats: serde_json::to_value(stats)?,
    }
    .save(&a.out)?;
    Ok(())
}

fn dsm_eval(a: DsmEvalArgs) -> Result<()> {
    let dsm = DsmGrid::load_asc(&a.dsm)?;
    let truth = DsmGrid::load_asc(&a.truth)?;
    let (reg, completeness, rmse) = evaluate_dsm(&dsm, &truth)?;
    let mut report = EvalReport::failed("", "", "");
    report.success = true;
    report.error = None;
    report.completeness = Some(completeness);
    report.rmse = Some(rmse);
    report.shift = Some(reg.shift);
    report.horizontal_degenerate = reg.horizontal_degenerate;
    println!(
        "completeness {completeness:.2} %, rmse {rmse:.3} m, shift ({:.3}, {:.3}, {:.3}) m{}",
        reg.shift[0],
        reg.shift[1],
        reg.shift[2],
        if reg.horizontal_degenerate { ", horizontal shift unobservable" } else { "" }
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(w) = a.workers {
        cfg.workers = w;
    }
    if let Some(id) = a.run_id {
        cfg.run_id = id;
    }
    if let Some(o) = a.output {
        cfg.output = o;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.force = a.force;
    let summary = run_pipeline(&cfg)?;
    println!(
        "{} reports ({} tasks resumed) in {}",
        summary.reports.len(),
        summary.resumed,
        summary.run_dir.display()
    );
    for m in &summary.stats.methods {
        println!("{}: {}/{} successful ({:.1} %)", m.method, m.successes, m.pairs, m.success_rate);
    }
    Ok(())
}

fn write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn report(a: ReportArgs) -> Result<()> {
    let reports = collect_reports(&a.run)?;
    if reports.is_empty() {
        bail!("no reports under {}", a.run.display());
    }
    let stats = aggregate(&reports);
    let out = a.out.unwrap_or_else(|| a.run.join("tables"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("success_rate.csv"), stats.success_csv())?;
    for m in METRICS {
        write(&out.join(format!("{m}.csv")), stats.distribution_csv(m))?;
    }
    write(&out.join("lsm_changes.csv"), stats.lsm_csv())?;
    print!("{}", stats.success_csv());
    println!("tables written to {}", out.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthTileConfig { size: a.size, seed: a.seed, noise_images: a.noise, ..SynthTileConfig::default() };
    let manifest = write_synthetic_tile(&a.out, &cfg)?;
    println!("{}", manifest.display());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pairs(a) => pairs(a),
        Command::Match(a) => match_cmd(a),
        Command::Orient(a) => orient(a),
        Command::Densify(a) => densify_cmd(a),
        Command::DsmEval(a) => dsm_eval(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Synth(a) => synth(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

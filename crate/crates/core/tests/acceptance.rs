//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any of them fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satstereo::dense::{densify, sgm, DisparityMap, DsmGrid, GridSpec, SgmConfig};
use satstereo::eval::{completeness, coregister, dsm_rmse, evaluate_dsm, EvalReport};
use satstereo::harness::aggregate;
use satstereo::orientation::{lsm_refine, ransac_bias, BiasCorrection, LsmConfig, OrientationConfig};
use satstereo::pairs::month_diff;
use satstereo::raster::Raster;
use satstereo::rpc::{triangulate, ImagePoint, RpcModel};
use satstereo::synthetic::{affine_rpc, perturbed, stereo_scene, AffineCamera, GroundTexture, Ramp, SceneConfig};
use satstereo::Error;

type Outcome = (bool, String);

fn camera(az: f64, off_nadir: f64) -> RpcModel {
    affine_rpc(&AffineCamera::new(center(), 0.3, SIZE, SIZE, az, off_nadir))
}

fn rpc_round_trip() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for (seed, (az, off)) in [(40.0, 15.0), (130.0, 25.0), (300.0, 5.0)].into_iter().enumerate() {
        let m = perturbed(&camera(az, off), seed as u64 + 7, 2e-3).validated().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
        for _ in 0..1000 {
            let n = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let g = m.denormalize_ground(n);
            let back = m.inverse(&m.project(&g).unwrap(), g.h).unwrap();
            let b = m.normalize_ground(&back);
            worst = worst.max((b[0] - n[0]).abs()).max((b[1] - n[1]).abs());
            points += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (worst < 1e-8 && secs < 5.0, format!("{points} points, max error {worst:.2e}, {secs:.2} s"))
}

fn rms_cost(m1: &RpcModel, m2: &RpcModel, p1: &ImagePoint, p2: &ImagePoint, n: [f64; 3]) -> f64 {
    let g = m1.denormalize_ground(n);
    let a = m1.project(&g).unwrap();
    let b = m2.project(&g).unwrap();
    let s = (a.sample - p1.sample).powi(2)
        + (a.line - p1.line).powi(2)
        + (b.sample - p2.sample).powi(2)
        + (b.line - p2.line).powi(2);
    (s / 4.0).sqrt()
}

/// Coarse-to-fine exhaustive search for the smallest reprojection residual.
fn grid_search(m1: &RpcModel, m2: &RpcModel, p1: &ImagePoint, p2: &ImagePoint, start: [f64; 3]) -> f64 {
    let mut best = start;
    let mut half = 0.02;
    let mut best_cost = rms_cost(m1, m2, p1, p2, best);
    for _ in 0..60 {
        let c = best;
        for i in -5..=5 {
            for j in -5..=5 {
                for k in -5..=5 {
                    let n = [
                        c[0] + half * i as f64 / 5.0,
                        c[1] + half * j as f64 / 5.0,
                        c[2] + half * k as f64 / 5.0,
                    ];
                    let cost = rms_cost(m1, m2, p1, p2, n);
                    if cost < best_cost {
                        best_cost = cost;
                        best = n;
                    }
                }
            }
        }
        half *= 0.5;
    }
    best_cost
}

fn triangulation() -> Outcome {
    let (m1, m2) = rational_pair();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut consistent: f64 = 0.0;
    for _ in 0..100 {
        let g = m1.denormalize_ground([
            rng.gen_range(-0.9..0.9),
            rng.gen_range(-0.9..0.9),
            rng.gen_range(-0.9..0.9),
        ]);
        let t = triangulate(&m1, &m2, &m1.project(&g).unwrap(), &m2.project(&g).unwrap()).unwrap();
        consistent = consistent.max(t.residual_px);
    }
    let mut gap: f64 = 0.0;
    for k in 0..10 {
        let g = m1.denormalize_ground([
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-0.8..0.8),
        ]);
        let p1 = m1.project(&g).unwrap();
        let mut p2 = m2.project(&g).unwrap();
        p2.line += 0.5 + 0.2 * k as f64;
        p2.sample -= 0.3;
        let t = triangulate(&m1, &m2, &p1, &p2).unwrap();
        let oracle = grid_search(&m1, &m2, &p1, &p2, m1.normalize_ground(&g));
        gap = gap.max((t.residual_px - oracle).abs());
    }
    (
        consistent < 1e-6 && gap < 1e-3,
        format!("consistent residual {consistent:.2e} px, grid-search gap {gap:.2e} px"),
    )
}

fn month_table() -> Outcome {
    let mut mismatches = 0;
    let mut max = 0;
    for a in 1..=12u32 {
        for b in 1..=12u32 {
            let d = month_diff(a, b).unwrap();
            let direct = (a as i32 - b as i32).unsigned_abs().min(12 - (a as i32 - b as i32).unsigned_abs());
            mismatches += (d != direct) as usize;
            max = max.max(d);
        }
    }
    (mismatches == 0 && max <= 6, format!("144 pairs, {mismatches} mismatches, max {max}"))
}

fn bias_recovery() -> Outcome {
    let (m1, m2) = rational_pair();
    let c = ImagePoint::new((SIZE - 1) as f64 / 2.0, (SIZE - 1) as f64 / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut recovered, mut worst_time, mut worst_err): (usize, f64, f64) = (0, 0.0, 0.0);
    for trial in 0..20u64 {
        let truth = BiasCorrection::rigid(
            rng.gen_range(-0.5..0.5),
            c,
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        );
        let mut matches = consistent_matches(&m1, &m2, 60, 100 + trial, &truth);
        matches.extend(outliers(40, 200 + trial));
        let s = set(matches);
        let start = Instant::now();
        let cfg = OrientationConfig { seed: trial, ..Default::default() };
        let o = ransac_bias(&m1, &m2, &s, &cfg).unwrap();
        worst_time = worst_time.max(start.elapsed().as_secs_f64());
        let err = cross_epipolar_rms(&m1, &m2, &o.bias, &truth);
        worst_err = worst_err.max(err);
        recovered += (err < 0.1) as usize;
    }
    (
        recovered >= 19 && worst_time < 10.0,
        format!("{recovered}/20 within 0.1 px (worst {worst_err:.3} px), slowest trial {worst_time:.2} s"),
    )
}

fn gate() -> Outcome {
    let (m1, m2) = affine_pair();
    let cfg = OrientationConfig { ransac_threshold: 100.0, ..Default::default() };
    let four = ransac_bias(&m1, &m2, &set(consistent_matches(&m1, &m2, 4, 6, &BiasCorrection::identity())), &cfg).unwrap();
    let high = ransac_bias(&m1, &m2, &set(irreducible_matches(&m1, &m2, 5, 5.1, 7)), &cfg).unwrap();
    let low = ransac_bias(&m1, &m2, &set(irreducible_matches(&m1, &m2, 5, 4.9, 7)), &cfg).unwrap();
    let ok = !four.success && !high.success && low.success && low.inliers == 5 && high.inliers == 5;
    let rms = |o: &satstereo::orientation::Orientation| o.epipolar_rms.unwrap_or(f64::NAN);
    (
        ok,
        format!(
            "4 inliers -> {}, 5 at {:.3} px -> {}, 5 at {:.3} px -> {}",
            four.success,
            rms(&high),
            high.success,
            rms(&low),
            low.success
        ),
    )
}

fn shifted(img: &Raster, dx: f64, dy: f64) -> Raster {
    Raster::from_fn(img.width, img.height, |x, y| {
        img.bilinear(x as f64 - dx, y as f64 - dy).unwrap_or(0.0) as f32
    })
}

fn lsm() -> Outcome {
    let tex = GroundTexture::new(11, 4.0);
    let img1 = Raster::from_fn(360, 360, |x, y| tex.sample(x as f64, y as f64) as f32);
    let cfg = LsmConfig::default();
    let (mut good, mut total) = (0, 0);
    for (k, angle) in [0.0f64, 45.0, 90.0, 135.0].into_iter().enumerate() {
        let (dx, dy) = (0.3 * angle.to_radians().cos(), 0.3 * angle.to_radians().sin());
        let img2 = shifted(&img1, dx, dy);
        for i in 0..50 {
            let p = ImagePoint::new(30.0 + 30.0 * (i % 10) as f64 + 3.0 * k as f64, 40.0 + 55.0 * (i / 10) as f64);
            total += 1;
            if let Ok(r) = lsm_refine(&img1, &img2, &p, &p, &cfg) {
                let err = (r.p2.sample - p.sample - dx).hypot(r.p2.line - p.line - dy);
                good += (r.converged && err <= 0.05) as usize;
            }
        }
    }
    let flat = Raster::filled(64, 64, 120.0);
    let faint = Raster::from_fn(64, 64, |x, _| 120.0 + 0.01 * x as f32);
    let p = ImagePoint::new(32.0, 32.0);
    let rejected = [&flat, &faint]
        .iter()
        .all(|img| matches!(lsm_refine(img, img, &p, &p, &cfg), Err(Error::Textureless(_))));
    (
        good as f64 >= 0.95 * total as f64 && rejected,
        format!("{good}/{total} patches within 0.05 px, textureless rejected: {rejected}"),
    )
}

fn random_dots(w: usize, h: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h).map(|_| rng.gen_range(0.0f32..255.0)).collect();
    Raster::new(w, h, data)
}

fn sgm_checks() -> Outcome {
    let cfg = SgmConfig::default();

    let left = random_dots(200, 150, 3);
    let right = Raster::from_fn(200, 150, |x, y| left.get_clamped(x as isize + 10, y as isize));
    let map = sgm(&left, &right, 0, 20, &cfg).unwrap();
    let valid: Vec<f32> = map.data.iter().copied().filter(|d| d.is_finite()).collect();
    let good = valid.iter().filter(|d| (**d - 10.0).abs() <= 1.0).count();
    let dots = good as f64 >= 0.95 * valid.len() as f64 && !valid.is_empty();

    // background at disparity 5, a slab over columns 80..140 at 15; left
    // background columns 70..80 are hidden in the right image
    let (w, h) = (220, 120);
    let bg = random_dots(w + 40, h, 5);
    let fg = random_dots(w + 40, h, 6);
    let slab = 80..140;
    let left2 = Raster::from_fn(w, h, |x, y| if slab.contains(&x) { fg.get(x, y) } else { bg.get(x, y) });
    let right2 = Raster::from_fn(w, h, |x, y| {
        if slab.contains(&(x + 15)) {
            fg.get(x + 15, y)
        } else {
            bg.get(x + 5, y)
        }
    });
    let occ = sgm(&left2, &right2, 0, 20, &cfg).unwrap();
    let (mut strip, mut wrong) = (0, 0);
    for y in 3..h - 3 {
        for x in 71..79 {
            strip += 1;
            wrong += occ.get(x, y).is_some_and(|d| (d - 5.0).abs() > 1.0) as usize;
        }
    }
    let occluded = (wrong as f64) < 0.1 * strip as f64;

    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sgm(&left, &right, -3, 12, &cfg).unwrap())
    };
    let bits = |m: &DisparityMap| m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let a = bits(&run(1));
    let identical = [2, 4, 8].iter().all(|&t| bits(&run(t)) == a);

    (
        dots && occluded && identical,
        format!(
            "random-dot {good}/{} within 1 px, occluded strip {wrong}/{strip} wrong, identical across 1/2/4/8 workers: {identical}",
            valid.len()
        ),
    )
}

fn end_to_end() -> Outcome {
    let mut c = center();
    c.h = 40.0;
    let ramp = Ramp { base: 40.0, slope_east: 0.1, slope_north: 0.05 };
    let s = stereo_scene(&ramp, &SceneConfig::new(c, 512));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let result = pool.install(|| {
        let (dsm, _) = densify(
            &s.m1,
            &s.m2,
            &BiasCorrection::identity(),
            &s.roi,
            &s.img1,
            &s.img2,
            &SgmConfig::default(),
            &s.truth.spec,
            &s.frame,
        )?;
        evaluate_dsm(&dsm, &s.truth)
    });
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok((_, comp, rmse)) => (
            comp >= 90.0 && rmse <= 0.3 && secs < 60.0,
            format!("completeness {comp:.2} %, RMSE {rmse:.3} m, {secs:.1} s on one worker"),
        ),
        Err(e) => (false, format!("pipeline error: {e}")),
    }
}

fn hills(x: f64, y: f64) -> f64 {
    20.0 + 6.0 * (x / 13.0).sin() * (y / 17.0).cos() + 3.0 * (y / 9.0 + 0.3).sin() + 0.04 * x
}

fn dsm_metrics() -> Outcome {
    let spec = GridSpec { xll: -60.0, yll: -60.0, cell_size: 1.0, width: 120, height: 120 };
    let truth = DsmGrid::from_fn(spec, |x, y| Some(hills(x, y)));
    let generated = DsmGrid::from_fn(spec, |x, y| Some(hills(x - 1.0, y + 0.5) - 2.0));
    let shift = coregister(&generated, &truth).unwrap().shift;
    let err = shift
        .iter()
        .zip([1.0, -0.5, 2.0])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let flat = DsmGrid::from_fn(spec, |_, _| Some(10.0));
    let raised = DsmGrid::from_fn(spec, |_, _| Some(12.0));
    let half = DsmGrid::from_fn(spec, |x, _| (x < 0.0).then_some(10.0));
    let empty = DsmGrid::from_fn(spec, |_, _| None);
    let trivial = completeness(&flat, &flat).unwrap() == 100.0
        && completeness(&empty, &flat).unwrap() == 0.0
        && completeness(&half, &flat).unwrap() == 50.0
        && dsm_rmse(&flat, &flat).unwrap() == 0.0
        && dsm_rmse(&raised, &flat).unwrap() == 2.0
        && matches!(dsm_rmse(&empty, &flat), Err(Error::UndefinedMetric(_)));
    (
        err < 0.05 && trivial,
        format!("shift {shift:.3?} (max error {err:.4} m), trivial cases exact: {trivial}"),
    )
}

fn relative_change_replay() -> Outcome {
    let report = |pair: &str, method: &str, v: f64| EvalReport {
        pair_id: pair.into(),
        method: method.into(),
        success: true,
        inlier_ratio: Some(v),
        epipolar_rms: None,
        completeness: None,
        rmse: None,
        shift: None,
        horizontal_degenerate: false,
        error: None,
    };
    let plain = [0.41, 0.57, 0.62, 0.35];
    let mut reports = Vec::new();
    for (i, v) in plain.iter().enumerate() {
        reports.push(report(&format!("p{i}"), "sift", *v));
        reports.push(report(&format!("p{i}"), "sift+lsm", v * 1.0076));
    }
    let stats = aggregate(&reports);
    let Some(got) = stats.lsm_changes.iter().find(|c| c.metric == "inlier_ratio").and_then(|c| c.relative_change)
    else {
        return (false, "no relative change computed".into());
    };
    let mp = plain.iter().sum::<f64>() / plain.len() as f64;
    let ml = plain.iter().map(|v| v * 1.0076).sum::<f64>() / plain.len() as f64;
    let hand = (ml - mp) / mp * 100.0;
    let csv = stats.lsm_csv().contains("sift,0.76,");
    (
        (got - hand).abs() < 1e-9 && (got - 0.76).abs() < 1e-9 && csv,
        format!("relative change {got:.12} % vs hand {hand:.12} %, table row sift,0.76: {csv}"),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("rpc round trip", rpc_round_trip),
        ("triangulation oracle", triangulation),
        ("month difference table", month_table),
        ("bias recovery", bias_recovery),
        ("gate semantics", gate),
        ("lsm", lsm),
        ("sgm", sgm_checks),
        ("end-to-end synthetic scene", end_to_end),
        ("dsm metrics", dsm_metrics),
        ("relative change replay", relative_change_replay),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let (ok, detail) = check();
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += !ok as usize;
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

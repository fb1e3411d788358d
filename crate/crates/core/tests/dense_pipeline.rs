mod common;

use common::{affine_pair, center, consistent_matches, dims};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satstereo::dense::{densify, dsm_from_disparity, rectify, sgm, DisparityMap, GroundRect, SgmConfig};
use satstereo::orientation::BiasCorrection;
use satstereo::raster::Raster;
use satstereo::rpc::GroundPoint;
use satstereo::synthetic::{stereo_scene, Ramp, SceneConfig, StereoScene};
use satstereo::Error;

fn random_dots(w: usize, h: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h).map(|_| rng.gen_range(0.0f32..255.0)).collect();
    Raster::new(w, h, data)
}

/// Right image of a scene with per-pixel disparity `d(x, y)` of the left image.
fn shifted(left: &Raster, d: i64) -> Raster {
    Raster::from_fn(left.width, left.height, |x, y| {
        left.get_clamped(x as isize + d as isize, y as isize)
    })
}

fn within(map: &DisparityMap, truth: f32, tol: f32, margin: usize) -> (usize, usize) {
    let (mut valid, mut good) = (0, 0);
    for y in margin..map.height - margin {
        for x in margin..map.width - margin {
            if let Some(d) = map.get(x, y) {
                valid += 1;
                good += ((d - truth).abs() <= tol) as usize;
            }
        }
    }
    (valid, good)
}

#[test]
fn rectified_rows_agree_for_conjugate_points() {
    let (m1, m2) = affine_pair();
    let roi = GroundRect::around(&center(), 150.0, 150.0, -55.0, 105.0);
    let blank = Raster::filled(dims().width, dims().height, 100.0);
    let rect = rectify(&m1, &m2, &BiasCorrection::identity(), &roi, &blank, &blank).unwrap();
    let matches = consistent_matches(&m1, &m2, 200, 11, &BiasCorrection::identity());
    let mut ss = 0.0;
    for m in &matches {
        let (_, y1) = rect.map.from_source1(&m.p1);
        let (_, y2) = rect.map.from_source2(&m.p2);
        ss += (y1 - y2).powi(2);
    }
    let rms = (ss / matches.len() as f64).sqrt();
    assert!(rms < 0.05, "y-parallax {rms}");
}

#[test]
fn disparity_is_linear_in_height() {
    let (m1, m2) = affine_pair();
    let roi = GroundRect::around(&center(), 150.0, 150.0, -55.0, 105.0);
    let blank = Raster::filled(dims().width, dims().height, 100.0);
    let map = rectify(&m1, &m2, &BiasCorrection::identity(), &roi, &blank, &blank).unwrap().map;
    let frame = map.frame();
    for (e, n, up) in [(10.0, -20.0, 0.0), (-40.0, 35.0, 60.0), (70.0, 5.0, -30.0)] {
        let g = frame.to_ground(e, n, up);
        let (x1, _) = map.from_source1(&m1.project(&g).unwrap());
        let (x2, _) = map.from_source2(&m2.project(&g).unwrap());
        let expected = map.disparity_per_meter * (up - map.h_ref);
        assert!((x1 - x2 - expected).abs() < 1e-6, "{} vs {expected}", x1 - x2);
    }
}

#[test]
fn identical_cameras_cannot_be_rectified() {
    let (m1, _) = affine_pair();
    let roi = GroundRect::around(&center(), 100.0, 100.0, 0.0, 50.0);
    let blank = Raster::filled(dims().width, dims().height, 0.0);
    let r = rectify(&m1, &m1, &BiasCorrection::identity(), &roi, &blank, &blank);
    assert!(matches!(r, Err(Error::RectificationFailure(_))));
}

#[test]
fn region_outside_both_footprints_is_empty() {
    let (m1, m2) = affine_pair();
    let far = GroundPoint::new(center().lat + 0.5, center().lon, 25.0);
    let roi = GroundRect::around(&far, 100.0, 100.0, 0.0, 50.0);
    let blank = Raster::filled(dims().width, dims().height, 0.0);
    let r = rectify(&m1, &m2, &BiasCorrection::identity(), &roi, &blank, &blank);
    assert!(matches!(r, Err(Error::EmptyOverlap(_))));
}

#[test]
fn random_dot_constant_disparity() {
    let left = random_dots(200, 150, 3);
    let right = shifted(&left, 10);
    let map = sgm(&left, &right, 0, 20, &SgmConfig::default()).unwrap();
    let (valid, good) = within(&map, 10.0, 1.0, 0);
    assert!(valid > 200 * 150 / 2, "{valid} valid");
    assert!(good as f64 >= 0.95 * valid as f64, "{good}/{valid}");
}

#[test]
fn identical_images_give_zero_disparity() {
    let img = random_dots(120, 80, 4);
    let map = sgm(&img, &img, -2, 2, &SgmConfig::default()).unwrap();
    let (valid, good) = within(&map, 0.0, 0.5, 0);
    assert!(valid > 0);
    assert!(good as f64 >= 0.99 * valid as f64, "{good}/{valid}");
}

#[test]
fn occluded_strip_is_invalidated() {
    // background at disparity 5, a foreground slab over columns 80..140 at 15
    let (w, h) = (220, 120);
    let bg = random_dots(w + 40, h, 5);
    let fg = random_dots(w + 40, h, 6);
    let slab = 80..140;
    let left = Raster::from_fn(w, h, |x, y| if slab.contains(&x) { fg.get(x, y) } else { bg.get(x, y) });
    let right = Raster::from_fn(w, h, |x, y| {
        if slab.contains(&(x + 15)) {
            fg.get(x + 15, y)
        } else {
            bg.get(x + 5, y)
        }
    });
    let map = sgm(&left, &right, 0, 20, &SgmConfig::default()).unwrap();
    // left background pixels 70..80 land behind the slab in the right image
    let (mut strip, mut strip_valid) = (0, 0);
    let (mut visible, mut correct) = (0, 0);
    for y in 3..h - 3 {
        for x in 25..w - 3 {
            let truth = if slab.contains(&x) { 15.0 } else { 5.0 };
            let d = map.get(x, y);
            if (71..79).contains(&x) {
                strip += 1;
                strip_valid += d.is_some_and(|d| (d - truth).abs() > 1.0) as usize;
            } else if !(69..81).contains(&x) && !(138..142).contains(&x) {
                visible += 1;
                correct += d.is_some_and(|d| (d - truth).abs() <= 1.0) as usize;
            }
        }
    }
    assert!((strip_valid as f64) < 0.1 * strip as f64, "{strip_valid}/{strip} hallucinated");
    assert!(correct as f64 > 0.9 * visible as f64, "{correct}/{visible}");
}

#[test]
fn disparities_do_not_depend_on_worker_count() {
    let left = random_dots(160, 90, 8);
    let right = shifted(&left, 7);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sgm(&left, &right, -3, 12, &SgmConfig::default()).unwrap())
    };
    let (a, b) = (run(1), run(4));
    let bits = |m: &DisparityMap| m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn invalid_configurations_are_rejected() {
    let img = random_dots(40, 30, 1);
    let small = random_dots(30, 30, 1);
    let cfg = SgmConfig::default();
    assert!(matches!(sgm(&img, &img, 3, 3, &cfg), Err(Error::Validation(_))));
    assert!(matches!(sgm(&img, &small, 0, 3, &cfg), Err(Error::Validation(_))));
    let bad = SgmConfig { p1: 20, p2: 10, ..cfg };
    assert!(matches!(sgm(&img, &img, 0, 3, &bad), Err(Error::Validation(_))));
}

fn scene(terrain: &Ramp, size: usize) -> StereoScene {
    let mut c = center();
    c.h = terrain.base;
    stereo_scene(terrain, &SceneConfig::new(c, size))
}

fn run_dense(s: &StereoScene) -> satstereo::dense::DsmGrid {
    densify(
        &s.m1,
        &s.m2,
        &BiasCorrection::identity(),
        &s.roi,
        &s.img1,
        &s.img2,
        &SgmConfig::default(),
        &s.truth.spec,
        &s.frame,
    )
    .unwrap()
    .0
}

#[test]
fn all_invalid_disparities_give_an_empty_dsm() {
    let s = scene(&Ramp { base: 100.0, slope_east: 0.0, slope_north: 0.0 }, 128);
    let bias = BiasCorrection::identity();
    let rect = rectify(&s.m1, &s.m2, &bias, &s.roi, &s.img1, &s.img2).unwrap();
    let empty = DisparityMap {
        width: rect.map.width,
        height: rect.map.height,
        data: vec![f32::NAN; rect.map.width * rect.map.height],
        d_min: rect.map.d_min,
        d_max: rect.map.d_max,
    };
    let (grid, stats) = dsm_from_disparity(&empty, &rect.map, &s.m1, &s.m2, &bias, &s.truth.spec, &s.frame).unwrap();
    assert_eq!(grid.valid_count(), 0);
    assert_eq!(stats.points, 0);
}

#[test]
fn flat_scene_is_reconstructed_at_its_height() {
    let s = scene(&Ramp { base: 100.0, slope_east: 0.0, slope_north: 0.0 }, 256);
    let dsm = run_dense(&s);
    let valid: Vec<f64> = dsm.data.iter().filter(|v| v.is_finite()).map(|&v| v as f64).collect();
    assert!(valid.len() as f64 > 0.8 * dsm.data.len() as f64, "{} cells", valid.len());
    let close = valid.iter().filter(|z| (*z - 100.0).abs() <= 0.2).count();
    assert!(close as f64 >= 0.95 * valid.len() as f64, "{close}/{}", valid.len());
}

#[test]
fn ramp_slope_is_recovered() {
    let ramp = Ramp { base: 30.0, slope_east: 0.12, slope_north: -0.06 };
    let s = scene(&ramp, 256);
    let dsm = run_dense(&s);
    // least-squares plane z = a + b x + c y
    let mut n = nalgebra::Matrix3::<f64>::zeros();
    let mut r = nalgebra::Vector3::<f64>::zeros();
    for row in 0..dsm.spec.height {
        for col in 0..dsm.spec.width {
            if let Some(z) = dsm.get(col, row) {
                let (x, y) = dsm.spec.cell_center(col, row);
                let j = nalgebra::Vector3::new(1.0, x, y);
                n += j * j.transpose();
                r += j * z;
            }
        }
    }
    let p = n.cholesky().unwrap().solve(&r);
    assert!((p[1] - ramp.slope_east).abs() <= 0.05 * ramp.slope_east.abs(), "east {}", p[1]);
    assert!((p[2] - ramp.slope_north).abs() <= 0.05 * ramp.slope_north.abs(), "north {}", p[2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn valid_disparities_lie_in_range(seed in 0u64..1000, shift in -4i64..8, lo in -6i32..2, span in 2i32..10) {
        let left = random_dots(48, 32, seed);
        let right = shifted(&left, shift);
        let map = sgm(&left, &right, lo, lo + span, &SgmConfig::default()).unwrap();
        for d in map.data.iter().filter(|v| v.is_finite()) {
            prop_assert!(*d >= lo as f32 && *d <= (lo + span) as f32);
        }
    }
}

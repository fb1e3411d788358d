//! Synthetic pairs and oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satstereo::matching::{Dims, Match, MatchSet};
use satstereo::orientation::BiasCorrection;
use satstereo::rpc::{
    default_height_range, epipolar_curve, GroundPoint, ImagePoint, RpcModel,
};
use satstereo::synthetic::{affine_rpc, perturbed, AffineCamera};

pub const SIZE: usize = 2048;

pub fn center() -> GroundPoint {
    GroundPoint::new(30.31, -81.66, 25.0)
}

pub fn dims() -> Dims {
    Dims::new(SIZE, SIZE)
}

/// Two mildly rational cameras about 20 degrees apart.
pub fn rational_pair() -> (RpcModel, RpcModel) {
    let cam = |az, off| affine_rpc(&AffineCamera::new(center(), 0.3, SIZE, SIZE, az, off));
    (
        perturbed(&cam(90.0, 12.0), 1, 1e-3).validated().unwrap(),
        perturbed(&cam(250.0, 9.0), 2, 1e-3).validated().unwrap(),
    )
}

/// Matches of random ground points seen by both cameras, with the second
/// image observed through `bias`.
pub fn consistent_matches(m1: &RpcModel, m2: &RpcModel, n: usize, seed: u64, bias: &BiasCorrection) -> Vec<Match> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dims();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let g = m1.denormalize_ground([
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.8..0.8),
        ]);
        let p1 = m1.project(&g).unwrap();
        let p2 = bias.apply(&m2.project(&g).unwrap());
        if d.contains(&p1) && d.contains(&p2) {
            out.push(Match::new(p1, p2));
        }
    }
    out
}

pub fn outliers(n: usize, seed: u64) -> Vec<Match> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = SIZE as f64;
    (0..n)
        .map(|_| {
            Match::new(
                ImagePoint::new(rng.gen_range(0.0..s), rng.gen_range(0.0..s)),
                ImagePoint::new(rng.gen_range(0.0..s), rng.gen_range(0.0..s)),
            )
        })
        .collect()
}

pub fn set(matches: Vec<Match>) -> MatchSet {
    let (set, report) = MatchSet::build("a__b", "synthetic", dims(), dims(), matches);
    assert!(report.rejected.is_empty());
    set
}

/// Unit normal of the epipolar curve through image-2 position `q`.
pub fn epipolar_normal(m1: &RpcModel, m2: &RpcModel, q: &ImagePoint) -> [f64; 2] {
    let g = m2.inverse(q, m2.h_off).unwrap();
    let p1 = m1.project(&g).unwrap();
    let (lo, hi) = default_height_range(m1);
    let c = epipolar_curve(m1, m2, &p1, lo, hi, 11).unwrap();
    let (dx, dy) = (c[10].sample - c[0].sample, c[10].line - c[0].line);
    let len = dx.hypot(dy);
    [-dy / len, dx / len]
}

/// RMS over a 21x21 grid of the image-2 extent of the cross-epipolar
/// component of the difference between two bias corrections. The
/// along-epipolar component is indistinguishable from a height change and
/// is not recoverable from matches.
pub fn cross_epipolar_rms(m1: &RpcModel, m2: &RpcModel, a: &BiasCorrection, b: &BiasCorrection) -> f64 {
    let mut ss = 0.0;
    let k = 21;
    for i in 0..k {
        for j in 0..k {
            let q = ImagePoint::new(
                (SIZE - 1) as f64 * i as f64 / (k - 1) as f64,
                (SIZE - 1) as f64 * j as f64 / (k - 1) as f64,
            );
            let n = epipolar_normal(m1, m2, &q);
            let (pa, pb) = (a.apply(&q), b.apply(&q));
            let d = n[0] * (pa.sample - pb.sample) + n[1] * (pa.line - pb.line);
            ss += d * d;
        }
    }
    (ss / (k * k) as f64).sqrt()
}

/// Purely affine version of [`rational_pair`].
pub fn affine_pair() -> (RpcModel, RpcModel) {
    let cam = |az, off| affine_rpc(&AffineCamera::new(center(), 0.3, SIZE, SIZE, az, off));
    (cam(90.0, 12.0), cam(250.0, 9.0))
}

/// `n` matches on an affine pair whose epipolar errors have exactly the
/// given RMS and cannot be reduced by any affine bias: the signed errors are
/// orthogonal to {1, s, l} over the match positions.
pub fn irreducible_matches(m1: &RpcModel, m2: &RpcModel, n: usize, rms: f64, seed: u64) -> Vec<Match> {
    let base = consistent_matches(m1, m2, n, seed, &BiasCorrection::identity());
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // Gram-Schmidt against the affine functions of the positions
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let funcs: [Box<dyn Fn(&Match) -> f64>; 3] = [
        Box::new(|_| 1.0),
        Box::new(|m| m.p2.sample / SIZE as f64),
        Box::new(|m| m.p2.line / SIZE as f64),
    ];
    for f in &funcs {
        let mut v: Vec<f64> = base.iter().map(|m| f(m)).collect();
        for b in &basis {
            let k: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= k * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    for b in &basis {
        let k: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
        r.iter_mut().zip(b).for_each(|(x, y)| *x -= k * y);
    }
    let cur = (r.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    base.iter()
        .zip(&r)
        .map(|(m, ri)| {
            let nrm = epipolar_normal(m1, m2, &m.p2);
            let k = ri * rms / cur;
            Match::new(m.p1, ImagePoint::new(m.p2.sample + k * nrm[0], m.p2.line + k * nrm[1]))
        })
        .collect()
}

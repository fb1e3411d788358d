use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::epipolar::{fit_bias, raw_curve, BiasFrame};
use super::BiasCorrection;
use crate::error::{Error, Result};
use crate::matching::MatchSet;
use crate::rpc::{point_to_curve_distance, ImagePoint, RpcModel};

const SAMPLE_SIZE: usize = 3;
const HYPOTHESIS_ITERATIONS: usize = 4;
const REFIT_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrientationConfig {
    /// Epipolar RMS threshold of the success gate, pixels.
    #[serde(rename = "T")]
    pub t: f64,
    pub ransac_threshold: f64,
    pub ransac_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for OrientationConfig {
    fn default() -> Self {
        Self {
            t: 5.0,
            ransac_threshold: 2.0,
            ransac_iterations: 2000,
            min_inliers: 5,
            seed: 0,
        }
    }
}

impl OrientationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) || !(self.ransac_threshold > 0.0) {
            return Err(Error::Validation(format!(
                "T ({}) and ransac_threshold ({}) must be positive",
                self.t, self.ransac_threshold
            )));
        }
        if self.ransac_iterations == 0 {
            return Err(Error::Validation("ransac_iterations must be positive".into()));
        }
        Ok(())
    }

    /// The success gate.
    pub fn passes(&self, inliers: usize, epipolar_rms: Option<f64>) -> bool {
        inliers >= self.min_inliers && epipolar_rms.is_some_and(|r| r <= self.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    pub pair_id: String,
    pub method: String,
    pub bias: BiasCorrection,
    pub inlier_mask: Vec<bool>,
    /// Per match; `None` where the epipolar curve could not be built.
    pub epipolar_errors: Vec<Option<f64>>,
    pub matches: usize,
    pub invalid: usize,
    pub inliers: usize,
    pub inlier_ratio: f64,
    /// Over inliers; `None` without inliers.
    pub epipolar_rms: Option<f64>,
    pub success: bool,
    pub config: OrientationConfig,
}

impl Orientation {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

struct Score {
    inliers: usize,
    rms: f64,
    index: usize,
}

impl Score {
    /// Orders by more inliers, then lower rms, then lower hypothesis index.
    fn better_than(&self, other: &Score) -> bool {
        if self.inliers != other.inliers {
            return self.inliers > other.inliers;
        }
        if self.rms != other.rms {
            return self.rms < other.rms;
        }
        self.index < other.index
    }
}

fn score(bias: &BiasCorrection, curves: &[Vec<ImagePoint>], points: &[ImagePoint], threshold: f64, index: usize) -> Score {
    let mut corrected = Vec::with_capacity(16);
    let (mut n, mut ss) = (0usize, 0.0);
    for (curve, p2) in curves.iter().zip(points) {
        corrected.clear();
        corrected.extend(curve.iter().map(|v| bias.apply(v)));
        let d = point_to_curve_distance(p2, &corrected);
        if d < threshold {
            n += 1;
            ss += d * d;
        }
    }
    let rms = if n > 0 { (ss / n as f64).sqrt() } else { f64::INFINITY };
    Score { inliers: n, rms, index }
}

/// Robust estimation of the second image's affine bias from matches.
pub fn ransac_bias(m1: &RpcModel, m2: &RpcModel, matches: &MatchSet, cfg: &OrientationConfig) -> Result<Orientation> {
    cfg.validate()?;
    if matches.len() < SAMPLE_SIZE {
        return Err(Error::InsufficientData(format!(
            "{} matches, at least {SAMPLE_SIZE} needed",
            matches.len()
        )));
    }
    let raw: Vec<Option<Vec<ImagePoint>>> = matches
        .matches
        .par_iter()
        .map(|m| raw_curve(m1, m2, &m.p1).ok())
        .collect();
    let valid: Vec<usize> = (0..raw.len()).filter(|&i| raw[i].is_some()).collect();
    let invalid = raw.len() - valid.len();
    if valid.len() < SAMPLE_SIZE {
        return Err(Error::InsufficientData(format!(
            "{} matches with a usable epipolar curve, at least {SAMPLE_SIZE} needed",
            valid.len()
        )));
    }
    let curves: Vec<Vec<ImagePoint>> = valid.iter().map(|&i| raw[i].clone().unwrap()).collect();
    let points: Vec<ImagePoint> = valid.iter().map(|&i| matches.matches[i].p2).collect();
    let frame = BiasFrame::new(matches.dims_b);

    // samples drawn up front so the outcome is independent of scheduling
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<Vec<usize>> = (0..cfg.ransac_iterations)
        .map(|_| rand::seq::index::sample(&mut rng, valid.len(), SAMPLE_SIZE).into_vec())
        .collect();

    let best = samples
        .par_iter()
        .enumerate()
        .map(|(index, sample)| {
            let c: Vec<&[ImagePoint]> = sample.iter().map(|&i| curves[i].as_slice()).collect();
            let p: Vec<ImagePoint> = sample.iter().map(|&i| points[i]).collect();
            let bias = fit_bias(&frame, &c, &p, HYPOTHESIS_ITERATIONS);
            (score(&bias, &curves, &points, cfg.ransac_threshold, index), bias)
        })
        .reduce_with(|a, b| if b.0.better_than(&a.0) { b } else { a })
        .expect("at least one hypothesis");

    // one refit on the consensus set, kept only if it is at least as good
    let (best_score, mut bias) = best;
    if best_score.inliers >= SAMPLE_SIZE {
        let inl: Vec<usize> = (0..curves.len())
            .filter(|&i| {
                let corrected: Vec<ImagePoint> = curves[i].iter().map(|v| bias.apply(v)).collect();
                point_to_curve_distance(&points[i], &corrected) < cfg.ransac_threshold
            })
            .collect();
        let c: Vec<&[ImagePoint]> = inl.iter().map(|&i| curves[i].as_slice()).collect();
        let p: Vec<ImagePoint> = inl.iter().map(|&i| points[i]).collect();
        let refit = fit_bias(&frame, &c, &p, REFIT_ITERATIONS);
        let refit_score = score(&refit, &curves, &points, cfg.ransac_threshold, 0);
        if (refit_score.inliers, -refit_score.rms) >= (best_score.inliers, -best_score.rms) {
            bias = refit;
        }
    }

    let mut errors = vec![None; matches.len()];
    let mut mask = vec![false; matches.len()];
    let (mut inliers, mut ss) = (0usize, 0.0);
    for (k, &i) in valid.iter().enumerate() {
        let corrected: Vec<ImagePoint> = curves[k].iter().map(|v| bias.apply(v)).collect();
        let d = point_to_curve_distance(&points[k], &corrected);
        errors[i] = Some(d);
        if d < cfg.ransac_threshold {
            mask[i] = true;
            inliers += 1;
            ss += d * d;
        }
    }
    let rms = (inliers > 0).then(|| (ss / inliers as f64).sqrt());
    if !bias.is_sane() {
        log::warn!(
            "{}: bias determinant {:.4} outside the sanity bound",
            matches.pair_id,
            bias.determinant()
        );
    }
    Ok(Orientation {
        pair_id: matches.pair_id.clone(),
        method: matches.method.clone(),
        bias,
        inlier_mask: mask,
        epipolar_errors: errors,
        matches: matches.len(),
        invalid,
        inliers,
        inlier_ratio: inliers as f64 / matches.len() as f64,
        epipolar_rms: rms,
        success: cfg.passes(inliers, rms),
        config: *cfg,
    })
}

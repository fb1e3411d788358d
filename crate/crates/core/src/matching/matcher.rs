//! Nearest-neighbour descriptor matching with the ratio test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detect::Keypoint;
use super::matchset::{Dims, Match, MatchSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Accept when d1 < ratio * d2.
    pub ratio: f32,
    /// Keep only pairs that also pass the ratio test in the reverse direction.
    pub cross_check: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { ratio: 0.95, cross_check: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchStats {
    pub keypoints_a: usize,
    pub keypoints_b: usize,
    /// Queries without a second neighbour; the ratio is undefined for them.
    pub no_second_neighbor: usize,
    pub ratio_passed: usize,
    pub accepted: usize,
}

/// Best neighbour of each query passing the ratio test, if any.
///
/// Returns `(train index, d1)` per query and the number of queries with no
/// second neighbour.
pub fn ratio_test<D: AsRef<[f32]> + Sync>(query: &[D], train: &[D], ratio: f32) -> (Vec<Option<(usize, f32)>>, usize) {
    if train.len() < 2 {
        return (vec![None; query.len()], query.len());
    }
    let best: Vec<Option<(usize, f32)>> = query
        .par_iter()
        .map(|q| {
            let q = q.as_ref();
            let (mut i1, mut d1, mut d2) = (0usize, f32::INFINITY, f32::INFINITY);
            for (j, t) in train.iter().enumerate() {
                let d = squared_distance(q, t.as_ref());
                if d < d1 {
                    d2 = d1;
                    d1 = d;
                    i1 = j;
                } else if d < d2 {
                    d2 = d;
                }
            }
            // compare squared distances against ratio^2
            (d1 < ratio * ratio * d2).then(|| (i1, d1.sqrt()))
        })
        .collect();
    (best, 0)
}

#[inline]
fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Matches two keypoint lists. Pairs are returned as `(index_a, index_b,
/// distance)` in ascending `index_a` order.
pub fn match_descriptors<D: AsRef<[f32]> + Sync>(
    a: &[D],
    b: &[D],
    cfg: &MatchConfig,
) -> Result<(Vec<(usize, usize, f32)>, MatchStats)> {
    if !(cfg.ratio > 0.0 && cfg.ratio <= 1.0) {
        return Err(Error::Validation(format!("ratio {} outside (0, 1]", cfg.ratio)));
    }
    let mut stats = MatchStats {
        keypoints_a: a.len(),
        keypoints_b: b.len(),
        ..Default::default()
    };
    let (forward, dropped) = ratio_test(a, b, cfg.ratio);
    stats.no_second_neighbor = dropped;
    stats.ratio_passed = forward.iter().flatten().count();

    let backward = if cfg.cross_check {
        let (back, dropped_b) = ratio_test(b, a, cfg.ratio);
        stats.no_second_neighbor += dropped_b;
        Some(back)
    } else {
        None
    };

    let pairs: Vec<(usize, usize, f32)> = forward
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let (j, d) = (*f)?;
            match &backward {
                Some(back) => (back[j].map(|(k, _)| k) == Some(i)).then_some((i, j, d)),
                None => Some((i, j, d)),
            }
        })
        .collect();
    stats.accepted = pairs.len();
    Ok((pairs, stats))
}

/// Matches keypoints of two images into a validated match set.
///
/// Scores are `1 - d1 / 2`, so that identical descriptors score 1.
pub fn match_keypoints(
    pair_id: &str,
    method: &str,
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    dims_a: Dims,
    dims_b: Dims,
    cfg: &MatchConfig,
) -> Result<(MatchSet, MatchStats)> {
    let da: Vec<&[f32]> = kps_a.iter().map(|k| k.descriptor.as_slice()).collect();
    let db: Vec<&[f32]> = kps_b.iter().map(|k| k.descriptor.as_slice()).collect();
    let (pairs, mut stats) = match_descriptors(&da, &db, cfg)?;
    let candidates = pairs.into_iter().map(|(i, j, d)| Match {
        p1: kps_a[i].position,
        p2: kps_b[j].position,
        score: Some((1.0 - d as f64 / 2.0).clamp(0.0, 1.0)),
    });
    let (set, _) = MatchSet::build(pair_id, method, dims_a, dims_b, candidates);
    stats.accepted = set.len();
    Ok((set, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f32]) -> Vec<f32> {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn single_train_descriptor_has_no_ratio() {
        let a = vec![unit(&[1.0, 0.0])];
        let b = vec![unit(&[1.0, 0.1])];
        let (pairs, stats) = match_descriptors(&a, &b, &MatchConfig::default()).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(stats.no_second_neighbor, 2);
    }

    #[test]
    fn ratio_just_above_threshold_is_rejected() {
        // d1 = 0.96, d2 = 1.0
        let a = vec![vec![0.0f32, 0.0]];
        let b = vec![vec![0.96f32, 0.0], vec![0.0, 1.0]];
        let cfg = MatchConfig { ratio: 0.95, cross_check: false };
        assert!(match_descriptors(&a, &b, &cfg).unwrap().0.is_empty());
        let b = vec![vec![0.94f32, 0.0], vec![0.0, 1.0]];
        assert_eq!(match_descriptors(&a, &b, &cfg).unwrap().0.len(), 1);
    }

    #[test]
    fn invalid_ratio() {
        let a: Vec<Vec<f32>> = vec![];
        let cfg = MatchConfig { ratio: 1.5, cross_check: true };
        assert!(match_descriptors(&a, &a, &cfg).is_err());
    }
}

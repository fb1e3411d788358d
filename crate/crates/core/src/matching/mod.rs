//! Sparse correspondences: keypoint detection, descriptor matching and the
//! CSV match-file interface shared with external matchers.

mod detect;
mod matcher;
mod matchset;

pub use detect::{detect_and_describe, DetectorConfig, Keypoint, DESCRIPTOR_LEN};
pub use matcher::{match_descriptors, match_keypoints, ratio_test, MatchConfig, MatchStats};
pub use matchset::{load_matches, parse_matches, Dims, LoadReport, Match, MatchSet};

/// Method name of the built-in detector and matcher.
pub const BASELINE_METHOD: &str = "sift";

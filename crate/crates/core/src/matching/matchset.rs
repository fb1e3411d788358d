//! Correspondence sets and the neutral match-file format.
//!
//! The file is UTF-8 CSV with header `x1,y1,x2,y2[,score]`, 0-based pixel
//! coordinates (x = sample, y = line), one correspondence per row.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rpc::ImagePoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub p1: ImagePoint,
    pub p2: ImagePoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Match {
    pub fn new(p1: ImagePoint, p2: ImagePoint) -> Self {
        Self { p1, p2, score: None }
    }
}

/// Width and height of an image, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn contains(&self, p: &ImagePoint) -> bool {
        p.sample >= 0.0
            && p.line >= 0.0
            && p.sample < self.width as f64
            && p.line < self.height as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub pair_id: String,
    pub method: String,
    pub dims_a: Dims,
    pub dims_b: Dims,
    pub matches: Vec<Match>,
}

/// Outcome of loading or building a match set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows: usize,
    pub accepted: usize,
    pub duplicates: usize,
    /// (1-based file line, reason)
    pub rejected: Vec<(usize, String)>,
}

type DedupKey = [i64; 4];

fn dedup_key(m: &Match) -> DedupKey {
    // 1e-3 px granularity
    let q = |v: f64| (v * 1000.0).round() as i64;
    [q(m.p1.sample), q(m.p1.line), q(m.p2.sample), q(m.p2.line)]
}

impl MatchSet {
    pub fn empty(pair_id: impl Into<String>, method: impl Into<String>, dims_a: Dims, dims_b: Dims) -> Self {
        Self {
            pair_id: pair_id.into(),
            method: method.into(),
            dims_a,
            dims_b,
            matches: Vec::new(),
        }
    }

    /// Builds a set enforcing the bounds and uniqueness invariants; rows
    /// that violate them are reported rather than kept.
    pub fn build(
        pair_id: impl Into<String>,
        method: impl Into<String>,
        dims_a: Dims,
        dims_b: Dims,
        candidates: impl IntoIterator<Item = Match>,
    ) -> (Self, LoadReport) {
        let mut set = Self::empty(pair_id, method, dims_a, dims_b);
        let mut report = LoadReport::default();
        let mut seen = HashSet::new();
        for (i, m) in candidates.into_iter().enumerate() {
            report.rows += 1;
            if let Err(reason) = set.check(&m) {
                report.rejected.push((i + 1, reason));
                continue;
            }
            if !seen.insert(dedup_key(&m)) {
                report.duplicates += 1;
                continue;
            }
            set.matches.push(m);
        }
        report.accepted = set.matches.len();
        (set, report)
    }

    fn check(&self, m: &Match) -> std::result::Result<(), String> {
        let finite = [m.p1.sample, m.p1.line, m.p2.sample, m.p2.line]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err("non-finite coordinate".into());
        }
        if !self.dims_a.contains(&m.p1) {
            return Err(format!(
                "point ({}, {}) outside first image {}x{}",
                m.p1.sample, m.p1.line, self.dims_a.width, self.dims_a.height
            ));
        }
        if !self.dims_b.contains(&m.p2) {
            return Err(format!(
                "point ({}, {}) outside second image {}x{}",
                m.p2.sample, m.p2.line, self.dims_b.width, self.dims_b.height
            ));
        }
        if let Some(s) = m.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(format!("score {s} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    /// Same correspondences with a new coordinate list, keeping provenance.
    pub fn with_matches(&self, matches: Vec<Match>) -> Self {
        Self {
            matches,
            ..self.clone()
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let with_score = !self.matches.is_empty() && self.matches.iter().all(|m| m.score.is_some());
        if with_score {
            writeln!(w, "x1,y1,x2,y2,score")?;
        } else {
            writeln!(w, "x1,y1,x2,y2")?;
        }
        for m in &self.matches {
            write!(w, "{},{},{},{}", m.p1.sample, m.p1.line, m.p2.sample, m.p2.line)?;
            match (with_score, m.score) {
                (true, Some(s)) => writeln!(w, ",{s}")?,
                _ => writeln!(w)?,
            }
        }
        Ok(())
    }
}

/// Reads a match file, validating every row against the image dimensions.
///
/// Malformed rows abort with the offending line number; rows out of bounds
/// are rejected and listed in the report; duplicates (at 1e-3 px) are
/// collapsed.
pub fn load_matches(
    path: impl AsRef<Path>,
    pair_id: &str,
    method: &str,
    dims_a: Dims,
    dims_b: Dims,
) -> Result<(MatchSet, LoadReport)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matches(&text, path, pair_id, method, dims_a, dims_b)
}

pub fn parse_matches(
    text: &str,
    origin: &Path,
    pair_id: &str,
    method: &str,
    dims_a: Dims,
    dims_b: Dims,
) -> Result<(MatchSet, LoadReport)> {
    let mut set = MatchSet::empty(pair_id, method, dims_a, dims_b);
    let mut report = LoadReport::default();
    if text.trim().is_empty() {
        return Ok((set, report));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse(origin, 1, e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let with_score = match names.as_slice() {
        ["x1", "y1", "x2", "y2"] => false,
        ["x1", "y1", "x2", "y2", "score"] => true,
        _ => {
            return Err(Error::parse(
                origin,
                1,
                format!("expected header x1,y1,x2,y2[,score], got {}", names.join(",")),
            ))
        }
    };

    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(origin, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let expected = if with_score { 5 } else { 4 };
        if record.len() != expected && !(with_score && record.len() == 4) {
            return Err(Error::parse(
                origin,
                line,
                format!("expected {expected} fields, got {}", record.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(origin, line, format!("invalid number `{}`", &record[i])))
        };
        let score = match record.get(4) {
            Some("") | None => None,
            Some(_) => Some(num(4)?),
        };
        let m = Match {
            p1: ImagePoint::new(num(0)?, num(1)?),
            p2: ImagePoint::new(num(2)?, num(3)?),
            score,
        };
        report.rows += 1;
        if let Err(reason) = set.check(&m) {
            report.rejected.push((line, reason));
            continue;
        }
        if !seen.insert(dedup_key(&m)) {
            report.duplicates += 1;
            continue;
        }
        set.matches.push(m);
    }
    report.accepted = set.matches.len();
    Ok((set, report))
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::LSM_SUFFIX;
use crate::eval::{relative_change, EvalReport};

pub const METRICS: [&str; 4] = ["inlier_ratio", "epipolar_rms", "completeness", "rmse"];

fn metric(r: &EvalReport, name: &str) -> Option<f64> {
    match name {
        "inlier_ratio" => r.inlier_ratio,
        "epipolar_rms" => r.epipolar_rms,
        "completeness" => r.completeness,
        "rmse" => r.rmse,
        _ => None,
    }
}

/// Five-number summary; quartiles are Tukey hinges (medians of the lower and
/// upper halves, each including the median when the count is odd).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn five_number(values: &[f64]) -> Option<Summary> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let half = n.div_ceil(2);
    Some(Summary {
        n,
        min: v[0],
        q1: median_sorted(&v[..half]),
        median: median_sorted(&v),
        q3: median_sorted(&v[n - half..]),
        max: v[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    pub pairs: usize,
    pub successes: usize,
    /// Percent.
    pub success_rate: f64,
    /// Over successful pairs only.
    pub summaries: BTreeMap<String, Summary>,
}

/// Relative change of one metric between paired plain and LSM runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmChange {
    pub method: String,
    pub metric: String,
    /// Pairs where both runs succeeded and report the metric.
    pub pairs: usize,
    pub mean_plain: f64,
    pub mean_lsm: f64,
    /// Percent; `None` when the plain mean is zero.
    pub relative_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregateStats {
    pub methods: Vec<MethodStats>,
    pub lsm_changes: Vec<LsmChange>,
}

/// Success rates over all reports, distributions over successful ones, and
/// relative changes on the means of pairs where both variants succeeded.
pub fn aggregate(reports: &[EvalReport]) -> AggregateStats {
    let mut by_method: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        by_method.entry(r.method.as_str()).or_default().push(r);
    }
    let methods = by_method
        .iter()
        .map(|(&method, rs)| {
            let ok: Vec<&&EvalReport> = rs.iter().filter(|r| r.success).collect();
            let summaries = METRICS
                .iter()
                .filter_map(|&m| {
                    let v: Vec<f64> = ok.iter().filter_map(|r| metric(r, m)).collect();
                    five_number(&v).map(|s| (m.to_string(), s))
                })
                .collect();
            MethodStats {
                method: method.to_string(),
                pairs: rs.len(),
                successes: ok.len(),
                success_rate: 100.0 * ok.len() as f64 / rs.len() as f64,
                summaries,
            }
        })
        .collect();

    let mut lsm_changes = Vec::new();
    for (&method, plain) in &by_method {
        let Some(refined) = by_method.get(format!("{method}{LSM_SUFFIX}").as_str()) else {
            continue;
        };
        let refined: BTreeMap<&str, &EvalReport> =
            refined.iter().map(|r| (r.pair_id.as_str(), *r)).collect();
        for m in METRICS {
            let paired: Vec<(f64, f64)> = plain
                .iter()
                .filter(|r| r.success)
                .filter_map(|p| {
                    let l = refined.get(p.pair_id.as_str()).filter(|l| l.success)?;
                    Some((metric(p, m)?, metric(l, m)?))
                })
                .collect();
            if paired.is_empty() {
                continue;
            }
            let n = paired.len() as f64;
            let mean_plain = paired.iter().map(|v| v.0).sum::<f64>() / n;
            let mean_lsm = paired.iter().map(|v| v.1).sum::<f64>() / n;
            lsm_changes.push(LsmChange {
                method: method.to_string(),
                metric: m.to_string(),
                pairs: paired.len(),
                mean_plain,
                mean_lsm,
                relative_change: relative_change(mean_lsm, mean_plain).ok(),
            });
        }
    }
    AggregateStats { methods, lsm_changes }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl AggregateStats {
    /// Long format: `method,metric,stat,value`.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("method,metric,stat,value\n");
        for m in &self.methods {
            let _ = writeln!(out, "{},success,pairs,{}", m.method, m.pairs);
            let _ = writeln!(out, "{},success,successes,{}", m.method, m.successes);
            let _ = writeln!(out, "{},success,rate,{}", m.method, m.success_rate);
            for (metric, s) in &m.summaries {
                for (stat, v) in [
                    ("n", s.n as f64),
                    ("min", s.min),
                    ("q1", s.q1),
                    ("median", s.median),
                    ("q3", s.q3),
                    ("max", s.max),
                ] {
                    let _ = writeln!(out, "{},{metric},{stat},{v}", m.method);
                }
            }
        }
        for c in &self.lsm_changes {
            let _ = writeln!(out, "{},{},relative_change,{}", c.method, c.metric, opt(c.relative_change));
        }
        out
    }

    pub fn success_csv(&self) -> String {
        let mut out = String::from("method,pairs,successes,success_rate\n");
        for m in &self.methods {
            let _ = writeln!(out, "{},{},{},{}", m.method, m.pairs, m.successes, m.success_rate);
        }
        out
    }

    /// One table per metric, one row per method.
    pub fn distribution_csv(&self, metric: &str) -> String {
        let mut out = String::from("method,n,min,q1,median,q3,max\n");
        for m in &self.methods {
            if let Some(s) = m.summaries.get(metric) {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    m.method, s.n, s.min, s.q1, s.median, s.q3, s.max
                );
            }
        }
        out
    }

    /// Methods as rows, metrics as columns, percent with two decimals.
    pub fn lsm_csv(&self) -> String {
        let mut out = format!("method,{}\n", METRICS.join(","));
        let mut rows: BTreeMap<&str, BTreeMap<&str, Option<f64>>> = BTreeMap::new();
        for c in &self.lsm_changes {
            rows.entry(&c.method).or_default().insert(&c.metric, c.relative_change);
        }
        for (method, cols) in rows {
            let vals: Vec<String> = METRICS
                .iter()
                .map(|m| cols.get(m).copied().flatten().map(|v| format!("{v:.2}")).unwrap_or_default())
                .collect();
            let _ = writeln!(out, "{method},{}", vals.join(","));
        }
        out
    }
}

//! DSM accuracy against a reference: surface co-registration, completeness,
//! RMSE and relative change between paired runs.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dense::DsmGrid;
use crate::error::{Error, Result};

const MIN_OVERLAP_CELLS: usize = 100;
const MAX_ITER: usize = 50;
const TOLERANCE_M: f64 = 1e-3;
const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coregistration {
    /// `generated(x + dx, y + dy) + dz ≈ truth(x, y)`, meters.
    pub shift: [f64; 3],
    pub pre_rmse: f64,
    pub post_rmse: f64,
    /// Mutually valid cells after alignment.
    pub cells: usize,
    pub iterations: usize,
    /// Horizontal shift not observable (flat surfaces); reported as 0.
    pub horizontal_degenerate: bool,
}

/// Residuals `generated(x+dx, y+dy) + dz − truth(x, y)` with gradients, over
/// truth-valid cells.
fn residuals(generated: &DsmGrid, truth: &DsmGrid, shift: [f64; 3]) -> Vec<(f64, f64, f64)> {
    let s = &truth.spec;
    let mut out = Vec::new();
    for row in 0..s.height {
        for col in 0..s.width {
            let Some(t) = truth.get(col, row) else { continue };
            let (x, y) = s.cell_center(col, row);
            if let Some((g, gx, gy)) = generated.sample(x + shift[0], y + shift[1]) {
                out.push((g + shift[2] - t, gx, gy));
            }
        }
    }
    out
}

fn rms(r: &[(f64, f64, f64)]) -> f64 {
    (r.iter().map(|v| v.0 * v.0).sum::<f64>() / r.len() as f64).sqrt()
}

/// Least-squares 3D translation of `generated` onto `truth`.
pub fn coregister(generated: &DsmGrid, truth: &DsmGrid) -> Result<Coregistration> {
    let initial = residuals(generated, truth, [0.0; 3]);
    if initial.len() < MIN_OVERLAP_CELLS {
        return Err(Error::InsufficientData(format!(
            "{} mutually valid cells, at least {MIN_OVERLAP_CELLS} needed",
            initial.len()
        )));
    }
    let pre_rmse = rms(&initial);
    let mut shift = [0.0; 3];
    let mut degenerate = false;
    let mut iterations = 0;
    let mut converged = false;
    let mut r = initial.clone();
    while iterations < MAX_ITER {
        iterations += 1;
        let mut n = Matrix3::zeros();
        let mut b = Vector3::zeros();
        for &(e, gx, gy) in &r {
            let j = Vector3::new(gx, gy, 1.0);
            n += j * j.transpose();
            b += j * e;
        }
        let eig = n.symmetric_eigenvalues();
        let (max, min) = (eig.amax(), eig.iter().fold(f64::INFINITY, |a, &v| a.min(v)));
        let step = if min <= 0.0 || max / min > MAX_CONDITION {
            degenerate = true;
            // vertical only
            Vector3::new(-shift[0], -shift[1], -b[2] / n[(2, 2)])
        } else {
            -(n.cholesky().ok_or_else(|| Error::DegenerateGeometry("normal matrix".into()))?.solve(&b))
        };
        for k in 0..3 {
            shift[k] += step[k];
        }
        if !shift.iter().all(|v| v.is_finite()) {
            return Err(Error::CoregistrationDiverged { shift, iterations });
        }
        r = residuals(generated, truth, shift);
        if r.len() < MIN_OVERLAP_CELLS {
            return Err(Error::CoregistrationDiverged { shift, iterations });
        }
        if step.norm() < TOLERANCE_M {
            converged = true;
            break;
        }
        if degenerate {
            // the vertical-only problem is linear; one more pass settles it
            continue;
        }
    }
    if !converged {
        return Err(Error::CoregistrationDiverged { shift, iterations });
    }

    // never report an alignment worse than the best vertical-only one
    let mut post_rmse = rms(&r);
    let dz = -initial.iter().map(|v| v.0).sum::<f64>() / initial.len() as f64;
    let vertical: Vec<_> = initial.iter().map(|&(e, gx, gy)| (e + dz, gx, gy)).collect();
    let vertical_rmse = rms(&vertical);
    if post_rmse > vertical_rmse {
        shift = [0.0, 0.0, dz];
        post_rmse = vertical_rmse;
        r = vertical;
    }
    Ok(Coregistration {
        shift,
        pre_rmse,
        post_rmse,
        cells: r.len(),
        iterations,
        horizontal_degenerate: degenerate,
    })
}

/// `generated` shifted and resampled onto the truth grid; a cell is valid
/// only if all four interpolation neighbours are.
pub fn resample(generated: &DsmGrid, truth: &DsmGrid, shift: [f64; 3]) -> DsmGrid {
    DsmGrid::from_fn(truth.spec, |x, y| {
        generated.sample(x + shift[0], y + shift[1]).map(|(z, _, _)| z + shift[2])
    })
}

fn same_grid(a: &DsmGrid, b: &DsmGrid) -> Result<()> {
    if a.spec != b.spec {
        return Err(Error::Validation(format!(
            "grids differ: {:?} vs {:?}",
            a.spec, b.spec
        )));
    }
    Ok(())
}

/// Percentage of truth-valid cells that are also valid in `generated`.
pub fn completeness(generated: &DsmGrid, truth: &DsmGrid) -> Result<f64> {
    same_grid(generated, truth)?;
    let (mut valid, mut covered) = (0usize, 0usize);
    for (g, t) in generated.data.iter().zip(&truth.data) {
        if t.is_finite() {
            valid += 1;
            covered += g.is_finite() as usize;
        }
    }
    if valid == 0 {
        return Err(Error::UndefinedMetric("reference DSM has no valid cells".into()));
    }
    Ok(100.0 * covered as f64 / valid as f64)
}

/// Root mean square elevation difference over mutually valid cells.
pub fn dsm_rmse(generated: &DsmGrid, truth: &DsmGrid) -> Result<f64> {
    same_grid(generated, truth)?;
    let (mut n, mut ss) = (0usize, 0.0);
    for (g, t) in generated.data.iter().zip(&truth.data) {
        if g.is_finite() && t.is_finite() {
            let d = *g as f64 - *t as f64;
            ss += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no mutually valid cells".into()));
    }
    Ok((ss / n as f64).sqrt())
}

/// `(m_lsm − m_plain) / m_plain × 100`.
pub fn relative_change(m_lsm: f64, m_plain: f64) -> Result<f64> {
    if m_plain == 0.0 {
        return Err(Error::UndefinedMetric("relative change against a zero baseline".into()));
    }
    Ok((m_lsm - m_plain) / m_plain * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pair_id: String,
    pub method: String,
    pub success: bool,
    pub inlier_ratio: Option<f64>,
    pub epipolar_rms: Option<f64>,
    /// Percent.
    pub completeness: Option<f64>,
    /// Meters, after co-registration.
    pub rmse: Option<f64>,
    pub shift: Option<[f64; 3]>,
    pub horizontal_degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalReport {
    pub fn failed(pair_id: &str, method: &str, error: impl Into<String>) -> Self {
        Self {
            pair_id: pair_id.into(),
            method: method.into(),
            success: false,
            inlier_ratio: None,
            epipolar_rms: None,
            completeness: None,
            rmse: None,
            shift: None,
            horizontal_degenerate: false,
            error: Some(error.into()),
        }
    }
}

/// Co-registers, resamples onto the truth grid and computes both metrics.
pub fn evaluate_dsm(generated: &DsmGrid, truth: &DsmGrid) -> Result<(Coregistration, f64, f64)> {
    let reg = coregister(generated, truth)?;
    let aligned = resample(generated, truth, reg.shift);
    let c = completeness(&aligned, truth)?;
    let r = dsm_rmse(&aligned, truth)?;
    Ok((reg, c, r))
}

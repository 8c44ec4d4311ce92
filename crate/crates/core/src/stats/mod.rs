//! Statistical estimation over areas: locally weighted regression for
//! spatially varying associations, and propensity-score matching with a
//! bootstrap for average treatment effects.

mod gwr;
mod psm;

pub use gwr::{gwr_fit, GwrKernel, GwrResult};
pub use psm::{binarize_treatment, logit, propensity_scores, psm_ate, AteResult};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cholesky factorization that also rejects numerically singular systems:
/// the plain factorization can slip past an exactly collinear design on
/// rounding noise, so every pivot must keep a sensible share of its
/// column's original magnitude.
pub(crate) fn checked_cholesky(a: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let diag: Vec<f64> = (0..a.nrows()).map(|j| a[(j, j)]).collect();
    let chol = Cholesky::new(a)?;
    let l = chol.l_dirty();
    for (j, &d) in diag.iter().enumerate() {
        let pivot2 = l[(j, j)] * l[(j, j)];
        if !(pivot2 > 1e-9 * d) {
            return None;
        }
    }
    Some(chol)
}

/// Linear rescaling of an observed range onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

/// Maps values onto [0, 1] so the observed minimum lands exactly on 0 and
/// the maximum exactly on 1. A constant vector has no range to scale.
pub fn min_max_normalize(values: &[f64]) -> Result<(Vec<f64>, MinMax)> {
    if values.is_empty() {
        return Err(Error::domain("cannot normalize an empty vector"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("cannot normalize non-finite values"));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(Error::domain(
            "all values are equal; min-max normalization is undefined",
        ));
    }
    let norm = MinMax { min, max };
    Ok((values.iter().map(|&v| norm.apply(v)).collect(), norm))
}

/// Outcome, predictors, and locations for area-level model fitting, with
/// rows carrying any missing field already dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub area_ids: Vec<String>,
    /// Outcome per area (normalized onto [0, 1] when `norm` is set).
    pub y: Vec<f64>,
    /// Predictor columns, one inner vector per area, no intercept column.
    pub x: Vec<Vec<f64>>,
    /// Predictor names, aligned with the columns of `x`.
    pub names: Vec<String>,
    /// Area centroid coordinates (projected metres).
    pub coords: Vec<(f64, f64)>,
    /// Set when the outcome has been min-max normalized.
    pub norm: Option<MinMax>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    /// Rescales the outcome onto [0, 1], remembering the transform so
    /// estimates can be reported on the original scale.
    pub fn normalize_outcome(&mut self) -> Result<()> {
        if self.norm.is_some() {
            return Err(Error::config("outcome is already normalized"));
        }
        let (y, norm) = min_max_normalize(&self.y)?;
        self.y = y;
        self.norm = Some(norm);
        Ok(())
    }

    /// Design matrix with a leading intercept column.
    pub(crate) fn with_intercept(&self) -> DMatrix<f64> {
        let n = self.n();
        let k = self.k();
        DMatrix::from_fn(n, k + 1, |i, j| if j == 0 { 1.0 } else { self.x[i][j - 1] })
    }

    pub(crate) fn y_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }
}

/// Assembles a design matrix from per-area records, dropping any area with
/// a missing outcome or predictor and reporting how many were lost. The
/// surviving sample must leave at least one spare degree of freedom beyond
/// the smallest usable model.
pub fn build_design(
    area_ids: &[String],
    outcome: &[Option<f64>],
    columns: &[(String, Vec<Option<f64>>)],
    coords: &[(f64, f64)],
    warnings: &mut Vec<String>,
) -> Result<DesignMatrix> {
    let n = area_ids.len();
    if outcome.len() != n || coords.len() != n {
        return Err(Error::config(format!(
            "misaligned design inputs: {} ids, {} outcomes, {} coordinates",
            n,
            outcome.len(),
            coords.len()
        )));
    }
    for (name, col) in columns {
        if col.len() != n {
            return Err(Error::config(format!(
                "predictor {name} has {} values for {n} areas",
                col.len()
            )));
        }
    }
    let mut dropped = Vec::new();
    let mut keep = Vec::new();
    for i in 0..n {
        let complete =
            outcome[i].is_some() && columns.iter().all(|(_, col)| col[i].is_some());
        if complete {
            keep.push(i);
        } else {
            dropped.push(area_ids[i].clone());
        }
    }
    if !dropped.is_empty() {
        warnings.push(format!(
            "dropped {} area(s) with missing outcome or predictors: {}",
            dropped.len(),
            dropped.join(", ")
        ));
    }
    let k = columns.len();
    if keep.len() < k + 2 {
        return Err(Error::InsufficientData(format!(
            "need at least {} complete areas for {} predictor(s), got {}",
            k + 2,
            k,
            keep.len()
        )));
    }
    Ok(DesignMatrix {
        area_ids: keep.iter().map(|&i| area_ids[i].clone()).collect(),
        y: keep.iter().map(|&i| outcome[i].unwrap()).collect(),
        x: keep
            .iter()
            .map(|&i| columns.iter().map(|(_, col)| col[i].unwrap()).collect())
            .collect(),
        names: columns.iter().map(|(name, _)| name.clone()).collect(),
        coords: keep.iter().map(|&i| coords[i]).collect(),
        norm: None,
    })
}

/// Ordinary least squares coefficients (intercept first) via the normal
/// equations.
pub fn ols(data: &DesignMatrix) -> Result<Vec<f64>> {
    let x = data.with_intercept();
    let y = data.y_vector();
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let chol = checked_cholesky(xtx)
        .ok_or_else(|| Error::Singular("collinear predictors in least squares".to_string()))?;
    Ok(chol.solve(&xty).iter().cloned().collect())
}

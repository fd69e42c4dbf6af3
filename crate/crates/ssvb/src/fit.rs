//! Options and report types shared by all four fitters.

use ndarray::Array1;

use crate::error::{Error, Result};

/// Stopping rule for the coordinate-ascent loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Convergence threshold on the largest parameter change per iteration.
    pub tol: f64,
    /// Iteration cap; hitting it sets `converged = false` on the report.
    pub max_iter: usize,
    /// Record the per-iteration max-change sequence in the report.
    pub track_trace: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            track_trace: true,
        }
    }
}

impl FitOptions {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter < 1 {
            return Err(Error::Domain("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Converged (or capped) state of a fit.
///
/// `tau` is `E[1/σ²]` for the linear model and `E[1/σ]` for the quantile
/// model; it is `None` for the collapsed and logistic fits, where no noise
/// scale is estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub mu: Array1<f64>,
    pub w: Array1<f64>,
    pub tau: Option<f64>,
    /// Zero-based indices with `w_j > 0.5` (strict).
    pub selected: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub delta_trace: Vec<f64>,
}

impl FitReport {
    pub(crate) fn new(
        mu: Array1<f64>,
        w: Array1<f64>,
        tau: Option<f64>,
        iterations: usize,
        converged: bool,
        delta_trace: Vec<f64>,
    ) -> Self {
        let selected = selected_set(&w);
        Self {
            mu,
            w,
            tau,
            selected,
            iterations,
            converged,
            delta_trace,
        }
    }
}

/// The selection rule: `{j : w_j > 0.5}`, strict inequality.
pub fn selected_set(w: &Array1<f64>) -> Vec<usize> {
    w.iter()
        .enumerate()
        .filter(|(_, wj)| **wj > 0.5)
        .map(|(j, _)| j)
        .collect()
}

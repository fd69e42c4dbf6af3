//! Collapsed coordinate ascent over the inclusion indicators, with the
//! regression coefficients and noise variance integrated out analytically.
//!
//! Each coordinate update solves the two ridge systems obtained by pinning
//! `w_j` to 0 and 1, scores both through the integrated evidence term, and
//! sets `w_j` to the resulting log-odds through the logistic transform. The
//! sweep is in place (ascending `j`), so later coordinates see earlier
//! updates within the same pass.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::fit::{FitOptions, FitReport};
use crate::linear::{assemble_precision, precision_diag};
use crate::math::{expit_raw, Cholesky, Dataset, ResponseKind, SpikeSlabHyper};

/// Floor under the evidence log argument; hitting it is reported as a
/// numerical-domain error rather than silently clamped.
const LOG_ARG_FLOOR: f64 = 1e-300;

/// Sweep state exposed to observers (after each full pass over `j`).
#[derive(Debug, Clone)]
pub struct CollapsedState {
    pub w: Array1<f64>,
    /// `logit(ρ) − ½ ln n − ½ ln v1`
    pub alpha: f64,
    pub t: usize,
}

/// `logit(ρ) − ½ ln n − ½ ln v1`, the prior-plus-volume offset of the
/// slab configuration.
pub fn collapsed_alpha(data: &Dataset, hyper: &SpikeSlabHyper) -> f64 {
    hyper.lambda - 0.5 * (data.n() as f64).ln() - 0.5 * hyper.v1.ln()
}

struct Precomputed {
    xtx: Array2<f64>,
    xty: Array1<f64>,
    yy: f64,
}

impl Precomputed {
    fn new(data: &Dataset) -> Self {
        Self {
            xtx: data.x.t().dot(&data.x),
            xty: data.x.t().dot(&data.y),
            yy: data.y.dot(&data.y),
        }
    }
}

fn mu_jk_with(
    pre: &Precomputed,
    hyper: &SpikeSlabHyper,
    w: &Array1<f64>,
    j: usize,
    k: u8,
) -> Result<Array1<f64>> {
    let mut wjk = w.clone();
    wjk[j] = k as f64;
    let d = precision_diag(&wjk.view(), hyper)?;
    let m = assemble_precision(&pre.xtx, 1.0, &d.view());
    let chol = Cholesky::new(&m.view())?;
    Ok(chol.solve_vec(&pre.xty.view()))
}

fn check_inputs(data: &Dataset, w: &Array1<f64>, j: usize) -> Result<()> {
    if data.y_kind != ResponseKind::Continuous {
        return Err(Error::Domain(
            "collapsed updates require a continuous response".into(),
        ));
    }
    if w.len() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "w has {} entries, expected {}",
            w.len(),
            data.p()
        )));
    }
    if j >= data.p() {
        return Err(Error::Domain(format!("column index {j} out of range")));
    }
    Ok(())
}

/// Ridge mean with `w_j` pinned to `k`:
/// `μ^{(jk)} = (XᵀX + (1/v0)I + (1/v1 − 1/v0)W^{(jk)})⁻¹ Xᵀy`.
pub fn mu_jk(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    w: &Array1<f64>,
    j: usize,
    k: u8,
) -> Result<Array1<f64>> {
    check_inputs(data, w, j)?;
    mu_jk_with(&Precomputed::new(data), hyper, w, j, k)
}

fn b_jk_with(
    pre: &Precomputed,
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    w: &Array1<f64>,
    j: usize,
    k: u8,
) -> Result<f64> {
    let mu = mu_jk_with(pre, hyper, w, j, k)?;
    let arg = hyper.b + 0.5 * pre.yy - 0.5 * pre.xty.dot(&mu);
    if arg <= LOG_ARG_FLOOR {
        return Err(Error::NumericalDomain(format!(
            "evidence log argument {arg} at (j = {j}, k = {k}) is not positive"
        )));
    }
    Ok((hyper.a + data.n() as f64 / 2.0) * arg.ln())
}

/// Evidence term `(A + n/2) · ln(B + ½‖y‖² − ½ yᵀX μ^{(jk)})`.
pub fn b_jk(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    w: &Array1<f64>,
    j: usize,
    k: u8,
) -> Result<f64> {
    check_inputs(data, w, j)?;
    b_jk_with(&Precomputed::new(data), data, hyper, w, j, k)
}

/// One coordinate update: `w_j = expit(T_{j1} − T_{j0})` where
/// `T_{jk} = −b_jk + k·α`.
pub fn collapsed_gamma_update(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    w: &Array1<f64>,
    j: usize,
) -> Result<f64> {
    check_inputs(data, w, j)?;
    let pre = Precomputed::new(data);
    gamma_update_with(&pre, data, hyper, w, j, collapsed_alpha(data, hyper))
}

fn gamma_update_with(
    pre: &Precomputed,
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    w: &Array1<f64>,
    j: usize,
    alpha: f64,
) -> Result<f64> {
    let t_j0 = -b_jk_with(pre, data, hyper, w, j, 0)?;
    let t_j1 = -b_jk_with(pre, data, hyper, w, j, 1)? + alpha;
    Ok(expit_raw(t_j1 - t_j0))
}

/// Fit by in-place sweeps from `w⁽⁰⁾ = ½·1` until `max |Δw| < tol`.
///
/// The report's `mu` is the ridge mean at the converged `W` and `tau` is
/// absent (the noise scale is integrated out).
pub fn fit_collapsed(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    opts: &FitOptions,
) -> Result<FitReport> {
    fit_collapsed_observed(data, hyper, opts, |_| {})
}

/// [`fit_collapsed`] with an observer called after each full sweep.
pub fn fit_collapsed_observed(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    opts: &FitOptions,
    mut observer: impl FnMut(&CollapsedState),
) -> Result<FitReport> {
    opts.validate()?;
    if data.y_kind != ResponseKind::Continuous {
        return Err(Error::Domain(
            "fit_collapsed requires a continuous response".into(),
        ));
    }
    let p = data.p();
    let pre = Precomputed::new(data);
    let alpha = collapsed_alpha(data, hyper);

    let mut state = CollapsedState {
        w: Array1::from_elem(p, 0.5),
        alpha,
        t: 0,
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=opts.max_iter {
        let before = state.w.clone();
        for j in 0..p {
            state.w[j] = gamma_update_with(&pre, data, hyper, &state.w, j, alpha)?;
        }
        state.t = t;
        let delta = state
            .w
            .iter()
            .zip(before.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        iterations = t;
        if opts.track_trace {
            trace.push(delta);
        }
        observer(&state);
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    let d = precision_diag(&state.w.view(), hyper)?;
    let m = assemble_precision(&pre.xtx, 1.0, &d.view());
    let mu = Cholesky::new(&m.view())?.solve_vec(&pre.xty.view());
    Ok(FitReport::new(
        mu, state.w, None, iterations, converged, trace,
    ))
}

/// Both sides of the rank-one evidence identity:
/// `lhs = yᵀX[Σ^{(j1)} − Σ^{(j0)}]Xᵀy` by two full solves,
/// `rhs = (1/v0 − 1/v1) μ_j^{(j0)} μ_j^{(j1)}`.
pub fn quad_form_identity(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    w: &Array1<f64>,
    j: usize,
) -> Result<(f64, f64)> {
    check_inputs(data, w, j)?;
    let pre = Precomputed::new(data);
    let mu0 = mu_jk_with(&pre, hyper, w, j, 0)?;
    let mu1 = mu_jk_with(&pre, hyper, w, j, 1)?;
    let lhs = pre.xty.dot(&mu1) - pre.xty.dot(&mu0);
    let rhs = (1.0 / hyper.v0 - 1.0 / hyper.v1) * mu0[j] * mu1[j];
    Ok((lhs, rhs))
}

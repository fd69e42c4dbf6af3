//! Mean-field coordinate ascent for the spike-and-slab linear model, plus
//! the precision-bound and sparsity diagnostics used by the invariant suite.
//!
//! One iteration updates, in order: the prior precision diagonal `D` from the
//! current inclusion probabilities, the Gaussian factor `(μ, Σ)`, the
//! inverse-gamma factor `(A₁, B₁)` giving `τ = E[1/σ²]`, and finally each
//! `w_j` through the logistic transform of its evidence `η_j`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::fit::{FitOptions, FitReport};
use crate::math::{expit_raw, Cholesky, Dataset, ResponseKind, SpikeSlabHyper};

/// Per-iteration state exposed to observers.
#[derive(Debug, Clone)]
pub struct LinearState {
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
    /// Inclusion probabilities after this iteration's update.
    pub w: Array1<f64>,
    /// Inclusion probabilities that formed this iteration's `D`.
    pub w_prev: Array1<f64>,
    /// `E[1/σ²] = A₁/B₁` after this iteration.
    pub tau: f64,
    pub a1: f64,
    pub b1: f64,
    /// Iteration counter, starting at 1.
    pub t: usize,
}

/// Diagonal of `D = (1/v0) I + (1/v1 - 1/v0) W`.
pub fn precision_diag(w: &ArrayView1<f64>, hyper: &SpikeSlabHyper) -> Result<Array1<f64>> {
    if let Some(j) = w.iter().position(|wj| !(*wj >= 0.0 && *wj <= 1.0)) {
        return Err(Error::Domain(format!(
            "precision_diag: w[{j}] = {} is outside [0, 1]",
            w[j]
        )));
    }
    let slope = 1.0 / hyper.v1 - 1.0 / hyper.v0;
    Ok(w.mapv(|wj| 1.0 / hyper.v0 + slope * wj))
}

pub(crate) fn assemble_precision(
    xtx: &Array2<f64>,
    scale: f64,
    d: &ArrayView1<f64>,
) -> Array2<f64> {
    let mut m = xtx * scale;
    for (j, dj) in d.iter().enumerate() {
        m[[j, j]] += dj;
    }
    m
}

fn beta_update_with(
    xtx: &Array2<f64>,
    xty: &Array1<f64>,
    tau: f64,
    d: &ArrayView1<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let m = assemble_precision(xtx, tau, d);
    let chol = Cholesky::new(&m.view())?;
    let mu = chol.solve_vec(&xty.view()) * tau;
    let sigma = chol.inverse();
    Ok((mu, sigma))
}

/// Gaussian factor update: `Σ = (τ XᵀX + D)⁻¹`, `μ = τ Σ Xᵀy`.
pub fn update_beta(
    data: &Dataset,
    tau: f64,
    d: &ArrayView1<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!(
            "update_beta: tau = {tau} must be > 0"
        )));
    }
    if let Some(j) = d.iter().position(|dj| !(*dj > 0.0)) {
        return Err(Error::Domain(format!(
            "update_beta: D[{j}] = {} must be > 0",
            d[j]
        )));
    }
    if d.len() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "update_beta: D has {} entries, expected {}",
            d.len(),
            data.p()
        )));
    }
    let xtx = data.x.t().dot(&data.x);
    let xty = data.x.t().dot(&data.y);
    beta_update_with(&xtx, &xty, tau, d)
}

/// `tr(AB)` for symmetric `A`, `B` of equal shape.
fn trace_product(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Inverse-gamma factor update. Returns `(A₁, B₁, τ)` with `A₁ = A + n/2`,
/// `B₁ = B + ½(‖y − Xμ‖² + tr(XᵀX Σ))` and `τ = A₁/B₁`.
pub fn update_sigma(
    data: &Dataset,
    mu: &ArrayView1<f64>,
    sigma: &Array2<f64>,
    hyper: &SpikeSlabHyper,
) -> (f64, f64, f64) {
    let xtx = data.x.t().dot(&data.x);
    let resid = &data.y - &data.x.dot(mu);
    let b1 = hyper.b + 0.5 * (resid.dot(&resid) + trace_product(&xtx, sigma));
    let a1 = hyper.a + data.n() as f64 / 2.0;
    (a1, b1, a1 / b1)
}

/// Inclusion-probability update: `w_j = expit(η_j)` with
/// `η_j = λ + ½ ln(v0/v1) + ½ (μ_j² + Σ_jj)(1/v0 − 1/v1)`.
pub fn update_gamma(
    mu: &ArrayView1<f64>,
    sigma_diag: &ArrayView1<f64>,
    hyper: &SpikeSlabHyper,
) -> Result<Array1<f64>> {
    if let Some(j) = sigma_diag.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Domain(format!(
            "update_gamma: Sigma[{j},{j}] = {} must be > 0",
            sigma_diag[j]
        )));
    }
    let base = hyper.lambda + 0.5 * (hyper.v0 / hyper.v1).ln();
    let gain = 0.5 * (1.0 / hyper.v0 - 1.0 / hyper.v1);
    let mut w = Array1::<f64>::zeros(mu.len());
    for j in 0..mu.len() {
        let eta = base + gain * (mu[j] * mu[j] + sigma_diag[j]);
        if !eta.is_finite() {
            return Err(Error::NumericalDomain(format!(
                "update_gamma: eta[{j}] is not finite"
            )));
        }
        w[j] = expit_raw(eta);
    }
    Ok(w)
}

fn check_continuous(data: &Dataset, what: &str) -> Result<()> {
    if data.y_kind != ResponseKind::Continuous {
        return Err(Error::Domain(format!(
            "{what} requires a continuous response"
        )));
    }
    Ok(())
}

/// One full coordinate-ascent iteration from `(w_prev, tau_prev)`.
///
/// Used by the fit loop and by the one-step sparsity probes.
pub fn linear_step(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    w_prev: &Array1<f64>,
    tau_prev: f64,
    t: usize,
) -> Result<LinearState> {
    let xtx = data.x.t().dot(&data.x);
    let xty = data.x.t().dot(&data.y);
    linear_step_with(data, hyper, &xtx, &xty, w_prev, tau_prev, t)
}

fn linear_step_with(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    xtx: &Array2<f64>,
    xty: &Array1<f64>,
    w_prev: &Array1<f64>,
    tau_prev: f64,
    t: usize,
) -> Result<LinearState> {
    let d = precision_diag(&w_prev.view(), hyper)?;
    let (mu, sigma) = beta_update_with(xtx, xty, tau_prev, &d.view())?;
    let resid = &data.y - &data.x.dot(&mu);
    let b1 = hyper.b + 0.5 * (resid.dot(&resid) + trace_product(xtx, &sigma));
    let a1 = hyper.a + data.n() as f64 / 2.0;
    let tau = a1 / b1;
    let w = update_gamma(&mu.view(), &sigma.diag(), hyper)?;
    Ok(LinearState {
        mu,
        sigma,
        w,
        w_prev: w_prev.clone(),
        tau,
        a1,
        b1,
        t,
    })
}

/// Fit the linear model from the standard start `w⁽⁰⁾ = ½·1`, `τ⁽⁰⁾ = 1`.
pub fn fit_linear(data: &Dataset, hyper: &SpikeSlabHyper, opts: &FitOptions) -> Result<FitReport> {
    fit_linear_observed(data, hyper, opts, |_| {})
}

/// [`fit_linear`] with a per-iteration observer for invariant checks.
pub fn fit_linear_observed(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    opts: &FitOptions,
    mut observer: impl FnMut(&LinearState),
) -> Result<FitReport> {
    opts.validate()?;
    check_continuous(data, "fit_linear")?;
    let p = data.p();
    let xtx = data.x.t().dot(&data.x);
    let xty = data.x.t().dot(&data.y);

    let mut w = Array1::<f64>::from_elem(p, 0.5);
    let mut tau = 1.0f64;
    let mut mu = Array1::<f64>::zeros(p);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=opts.max_iter {
        let state = linear_step_with(data, hyper, &xtx, &xty, &w, tau, t)?;
        let delta = max_abs_diff(&state.mu, &mu)
            .max(max_abs_diff(&state.w, &w))
            .max((state.tau - tau).abs() / state.tau);
        mu = state.mu.clone();
        w = state.w.clone();
        tau = state.tau;
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
    Ok(FitReport::new(
        mu,
        w,
        Some(tau),
        iterations,
        converged,
        trace,
    ))
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Interval that contains every `τ⁽ᵗ⁾`, `t ≥ 1`, for a given start `τ⁽⁰⁾`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauBounds {
    pub tau_l: f64,
    pub tau_r: f64,
}

/// Closed-form precision bounds. Requires `p ≤ n` and a full-rank design.
///
/// `τ_R` caps the precision by the least-squares residual; `τ_L` floors it
/// through the trace bound `tr(XᵀXΣ) ≤ p/τ` seeded at `τ⁽⁰⁾`.
pub fn tau_bounds(data: &Dataset, hyper: &SpikeSlabHyper, tau0: f64) -> Result<TauBounds> {
    if data.p() > data.n() {
        return Err(Error::Domain(format!(
            "tau_bounds requires p <= n, got p = {}, n = {}",
            data.p(),
            data.n()
        )));
    }
    if !data.full_rank {
        return Err(Error::RankDeficient(
            "tau_bounds requires full column rank".into(),
        ));
    }
    if !(tau0 > 0.0) {
        return Err(Error::Domain(format!("tau0 = {tau0} must be > 0")));
    }
    let (n, p) = (data.n() as f64, data.p() as f64);
    let xtx = data.x.t().dot(&data.x);
    let xty = data.x.t().dot(&data.y);
    let chol = Cholesky::new(&xtx.view())?;
    let beta_ls = chol.solve_vec(&xty.view());
    let fitted_energy = xty.dot(&beta_ls); // yᵀX(XᵀX)⁻¹Xᵀy
    let resid = &data.y - &data.x.dot(&beta_ls);
    let rss = resid.dot(&resid);
    let yy = data.y.dot(&data.y);
    let num_l = 2.0 * hyper.a + n - p;
    let tau_r = (2.0 * hyper.a + n) / (2.0 * hyper.b + rss);
    let tau_l = num_l
        / (2.0 * hyper.b
            + 2.0 * yy
            + 2.0 * fitted_energy
            + p * num_l / ((2.0 * hyper.a + n) * tau0));
    Ok(TauBounds { tau_l, tau_r })
}

/// Coordinate-level quantities behind the sparsity bounds.
///
/// `s_j` is the (scaled) residual leverage of column `j` after projecting
/// out the others, `h_j = (1/v0 + s_j)⁻¹` bounds `Σ_jj` in the small-`w`
/// regime, `c_j` bounds `μ_j/Σ_jj` via Cauchy–Schwarz, and
/// `m_j = λ + (h_j²c_j² + h_j)/(2 v0)` is the `v1`-free part of the
/// one-step evidence bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityDiagnostics {
    pub s_j: f64,
    pub h_j: f64,
    pub c_j: f64,
    pub m_j: f64,
    /// `(1/v0 + (1/v1 − 1/v0) w_prev_j + s_j)⁻¹`, the per-iteration cap on `Σ_jj`.
    pub sigma_jj_bound: f64,
}

pub fn sparsity_diagnostics(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    bounds: &TauBounds,
    j: usize,
    w_prev_j: f64,
) -> Result<SparsityDiagnostics> {
    let p = data.p();
    if p < 2 {
        return Err(Error::Domain("sparsity_diagnostics requires p >= 2".into()));
    }
    if j >= p {
        return Err(Error::Domain(format!(
            "column index {j} out of range (p = {p})"
        )));
    }
    if data.p() > data.n() {
        return Err(Error::Domain("sparsity_diagnostics requires p <= n".into()));
    }
    if !data.full_rank {
        return Err(Error::RankDeficient(
            "sparsity_diagnostics requires full column rank".into(),
        ));
    }
    if !(0.0..=1.0).contains(&w_prev_j) {
        return Err(Error::Domain(format!(
            "w_prev_j = {w_prev_j} outside [0, 1]"
        )));
    }

    let xj = data.x.column(j).to_owned();
    let mut others = Array2::<f64>::zeros((data.n(), p - 1));
    let mut col = 0;
    for k in 0..p {
        if k != j {
            others.column_mut(col).assign(&data.x.column(k));
            col += 1;
        }
    }
    let gram = others.t().dot(&others);
    let chol = Cholesky::new(&gram.view())
        .map_err(|_| Error::RankDeficient(format!("columns other than {j} are rank deficient")))?;
    let cross = others.t().dot(&xj); // X₋ⱼᵀ Xⱼ
    let proj = chol.solve_vec(&cross.view());
    let leverage = cross.dot(&proj); // XⱼᵀX₋ⱼ(X₋ⱼᵀX₋ⱼ)⁻¹X₋ⱼᵀXⱼ
    let s_j = bounds.tau_l * (xj.dot(&xj) - leverage);

    let oty = others.t().dot(&data.y);
    let y_energy = oty.dot(&chol.solve_vec(&oty.view())); // yᵀX₋ⱼ(X₋ⱼᵀX₋ⱼ)⁻¹X₋ⱼᵀy
    let c0 = leverage.max(0.0).sqrt() * y_energy.max(0.0).sqrt();
    let c_j = bounds.tau_r * (xj.dot(&data.y) + c0);

    let h_j = 1.0 / (1.0 / hyper.v0 + s_j);
    let m_j = hyper.lambda + (h_j * h_j * c_j * c_j + h_j) / (2.0 * hyper.v0);
    let sigma_jj_bound =
        1.0 / (1.0 / hyper.v0 + (1.0 / hyper.v1 - 1.0 / hyper.v0) * w_prev_j + s_j);
    Ok(SparsityDiagnostics {
        s_j,
        h_j,
        c_j,
        m_j,
        sigma_jj_bound,
    })
}

//! Exact posterior over inclusion vectors by full enumeration — the
//! ground-truth reference for the variational fits at desk scale.
//!
//! Two marginal likelihoods are supported. [`OracleModel::Collapsed`] uses
//! the closed form that arises when the coefficient prior is scaled by the
//! noise variance, so the whole marginal is analytic.
//! [`OracleModel::IndependentSlab`] keeps the coefficient prior fixed
//! (`β | γ ~ N(0, C_γ)` regardless of σ²), which leaves a one-dimensional
//! integral over the noise variance; that integral is done adaptively in
//! `u = ln σ²`.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{ln_gamma, Cholesky, Dataset, ResponseKind, SpikeSlabHyper};

/// Enumeration cap: `2^p` models, each a dense solve.
pub const MAX_ENUM_P: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleModel {
    /// Coefficient prior scaled by the noise variance; fully closed form.
    Collapsed,
    /// Coefficient prior independent of the noise variance; needs quadrature.
    IndependentSlab,
}

/// Controls for the adaptive quadrature over `u = ln σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Number of equal panels the range is pre-split into before refinement.
    pub initial_intervals: usize,
    pub max_depth: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            u_min: -40.0,
            u_max: 40.0,
            initial_intervals: 32,
            max_depth: 48,
        }
    }
}

/// Exact posterior over all `2^p` inclusion vectors.
///
/// Model `i` is the bit pattern of `i`: bit `j` set means `γ_j = 1`.
/// Log weights are defined up to one additive constant shared by every
/// model (prior and likelihood constants independent of `γ` are kept, but
/// proportionality constants dropped upstream cancel in `probs`).
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub p: usize,
    pub log_weights: Vec<f64>,
    pub probs: Vec<f64>,
    /// `P(γ_j = 1 | y)` for each coordinate.
    pub inclusion: Vec<f64>,
    pub map_index: usize,
}

impl ExactPosterior {
    /// Bit pattern of model `index` as a 0/1 vector.
    pub fn gamma_of(&self, index: usize) -> Vec<u8> {
        (0..self.p).map(|j| ((index >> j) & 1) as u8).collect()
    }

    pub fn map_gamma(&self) -> Vec<u8> {
        self.gamma_of(self.map_index)
    }

    /// `{j : inclusion_j > 0.5}` — the median-probability model.
    pub fn median_model(&self) -> Vec<usize> {
        self.inclusion
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.5)
            .map(|(j, _)| j)
            .collect()
    }
}

fn log_prior(hyper: &SpikeSlabHyper, active: u32, p: usize) -> f64 {
    active as f64 * hyper.rho.ln() + (p as f64 - active as f64) * (1.0 - hyper.rho).ln()
}

fn check_continuous(data: &Dataset) -> Result<()> {
    if data.y_kind != ResponseKind::Continuous {
        return Err(Error::Domain(
            "oracle marginals require a continuous response".into(),
        ));
    }
    Ok(())
}

/// Closed-form log weight of `γ` under the variance-scaled prior:
/// `ln π(γ) − ½ Σ ln c_j − ½ ln|XᵀX + C_γ⁻¹| − (A + n/2) ln(B + ½‖y‖² − ½ yᵀX(XᵀX + C_γ⁻¹)⁻¹Xᵀy)`
/// with `c_j = (1−γ_j) v0 + γ_j v1`. Constants shared by all `γ` are omitted.
pub fn log_marginal_collapsed(data: &Dataset, hyper: &SpikeSlabHyper, gamma: usize) -> Result<f64> {
    check_continuous(data)?;
    let p = data.p();
    let xtx = data.x.t().dot(&data.x);
    let xty = data.x.t().dot(&data.y);
    let yy = data.y.dot(&data.y);
    log_marginal_collapsed_with(&xtx, &xty, yy, data.n(), p, hyper, gamma)
}

fn log_marginal_collapsed_with(
    xtx: &Array2<f64>,
    xty: &Array1<f64>,
    yy: f64,
    n: usize,
    p: usize,
    hyper: &SpikeSlabHyper,
    gamma: usize,
) -> Result<f64> {
    let mut m = xtx.clone();
    let mut log_c = 0.0;
    let mut active = 0u32;
    for j in 0..p {
        let cj = if (gamma >> j) & 1 == 1 {
            active += 1;
            hyper.v1
        } else {
            hyper.v0
        };
        log_c += cj.ln();
        m[[j, j]] += 1.0 / cj;
    }
    let chol = Cholesky::new(&m.view())?;
    let quad = xty.dot(&chol.solve_vec(&xty.view()));
    let arg = hyper.b + 0.5 * yy - 0.5 * quad;
    if arg <= 0.0 {
        return Err(Error::NumericalDomain(format!(
            "collapsed marginal: log argument {arg} is not positive"
        )));
    }
    Ok(log_prior(hyper, active, p)
        - 0.5 * log_c
        - 0.5 * chol.log_det()
        - (hyper.a + n as f64 / 2.0) * arg.ln())
}

/// Which algebraic form evaluates the Gaussian marginal at each σ².
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovForm {
    /// Dense n×n covariance `σ²I + X C_γ Xᵀ`.
    Full,
    /// p×p form via the matrix-inversion and determinant lemmas.
    Reduced,
}

struct IndependentPieces {
    // Full form
    xcx: Option<Array2<f64>>,
    // Reduced form
    xtx: Option<Array2<f64>>,
    xty: Option<Array1<f64>>,
    yy: f64,
    c: Vec<f64>,
    n: usize,
    p: usize,
}

impl IndependentPieces {
    fn new(data: &Dataset, hyper: &SpikeSlabHyper, gamma: usize, form: CovForm) -> Self {
        let p = data.p();
        let c: Vec<f64> = (0..p)
            .map(|j| {
                if (gamma >> j) & 1 == 1 {
                    hyper.v1
                } else {
                    hyper.v0
                }
            })
            .collect();
        let yy = data.y.dot(&data.y);
        match form {
            CovForm::Full => {
                // X C Xᵀ assembled once per model
                let mut scaled = data.x.clone();
                for (j, cj) in c.iter().enumerate() {
                    scaled.column_mut(j).mapv_inplace(|v| v * cj);
                }
                let xcx = scaled.dot(&data.x.t());
                Self {
                    xcx: Some(xcx),
                    xtx: None,
                    xty: None,
                    yy,
                    c,
                    n: data.n(),
                    p,
                }
            }
            CovForm::Reduced => Self {
                xcx: None,
                xtx: Some(data.x.t().dot(&data.x)),
                xty: Some(data.x.t().dot(&data.y)),
                yy,
                c,
                n: data.n(),
                p,
            },
        }
    }

    /// `ln N(y; 0, σ²I + X C Xᵀ)` at `σ² = s2`.
    fn log_gaussian(&self, data: &Dataset, s2: f64) -> Result<f64> {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        if let Some(xcx) = &self.xcx {
            let mut v = xcx.clone();
            for i in 0..self.n {
                v[[i, i]] += s2;
            }
            let chol = Cholesky::new(&v.view())?;
            let quad = data.y.dot(&chol.solve_vec(&data.y.view()));
            Ok(-(self.n as f64) * half_ln_2pi - 0.5 * chol.log_det() - 0.5 * quad)
        } else {
            let xtx = self.xtx.as_ref().unwrap();
            let xty = self.xty.as_ref().unwrap();
            // G = σ² C⁻¹ + XᵀX
            let mut g = xtx.clone();
            let mut log_c = 0.0;
            for (j, cj) in self.c.iter().enumerate() {
                g[[j, j]] += s2 / cj;
                log_c += cj.ln();
            }
            let chol = Cholesky::new(&g.view())?;
            let quad_y = (self.yy - xty.dot(&chol.solve_vec(&xty.view()))) / s2;
            let log_det = (self.n as f64 - self.p as f64) * s2.ln() + chol.log_det() + log_c;
            Ok(-(self.n as f64) * half_ln_2pi - 0.5 * log_det - 0.5 * quad_y)
        }
    }
}

struct AdaptiveSimpson<'f> {
    f: &'f dyn Fn(f64) -> f64,
    max_depth: usize,
    /// Hard cap on integrand evaluations; the accuracy check decides
    /// afterwards whether the result is still acceptable.
    eval_budget: usize,
    evals: usize,
    err_estimate: f64,
    budget_exceeded: bool,
}

impl<'f> AdaptiveSimpson<'f> {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }

    fn eval(&mut self, u: f64) -> f64 {
        self.evals += 1;
        (self.f)(u)
    }

    fn run(&mut self, a: f64, b: f64, abs_tol: f64) -> f64 {
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (self.eval(a), self.eval(m), self.eval(b));
        let whole = Self::simpson(fa, fm, fb, b - a);
        self.recurse(a, b, fa, fm, fb, whole, abs_tol, 0)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let (flm, frm) = (self.eval(lm), self.eval(rm));
        let left = Self::simpson(fa, flm, fm, m - a);
        let right = Self::simpson(fm, frm, fb, b - m);
        let err = (left + right - whole) / 15.0;
        let out_of_budget = depth >= self.max_depth || self.evals >= self.eval_budget;
        if err.abs() <= tol || out_of_budget {
            if err.abs() > tol {
                self.budget_exceeded = true;
            }
            self.err_estimate += err.abs();
            return left + right + err;
        }
        self.recurse(a, m, fa, flm, fm, left, tol / 2.0, depth + 1)
            + self.recurse(m, b, fm, frm, fb, right, tol / 2.0, depth + 1)
    }
}

/// Log weight of `γ` under the variance-independent prior, by adaptive
/// quadrature of `∫ N(y; 0, σ²I + X C_γ Xᵀ)·IG(σ²; A, B) dσ²` in `ln σ²`,
/// times the model prior. The covariance form is picked by size
/// (`Full` when `n ≤ 4p`).
pub fn log_marginal_independent(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    gamma: usize,
    quad: &QuadratureOptions,
) -> Result<f64> {
    let form = if data.n() <= 4 * data.p() {
        CovForm::Full
    } else {
        CovForm::Reduced
    };
    log_marginal_independent_with(data, hyper, gamma, quad, form)
}

/// [`log_marginal_independent`] with the covariance form pinned (the two
/// forms are cross-checked in tests).
pub fn log_marginal_independent_with(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    gamma: usize,
    quad: &QuadratureOptions,
    form: CovForm,
) -> Result<f64> {
    check_continuous(data)?;
    if !(quad.rel_tol > 0.0) || quad.u_min >= quad.u_max || quad.initial_intervals == 0 {
        return Err(Error::Domain("invalid quadrature options".into()));
    }
    let pieces = IndependentPieces::new(data, hyper, gamma, form);
    // ln[N(y; 0, V(e^u)) · IG(e^u; A, B) · e^u]
    let ig_const = hyper.a * hyper.b.ln() - ln_gamma(hyper.a);
    let log_integrand = |u: f64| -> f64 {
        let s2 = u.exp();
        match pieces.log_gaussian(data, s2) {
            Ok(lg) => lg + ig_const - hyper.a * u - hyper.b * (-u).exp(),
            Err(_) => f64::NEG_INFINITY,
        }
    };

    // Locate the peak of the log-integrand. The sample-size scaling makes
    // the peak width shrink like n^{-1/2}, so a fixed coarse grid can miss
    // it badly; refine around the best base grid point until the shift is
    // trustworthy.
    let base_points = 128usize.max(quad.initial_intervals);
    let base_h = (quad.u_max - quad.u_min) / base_points as f64;
    let base: Vec<(f64, f64)> = (0..=base_points)
        .map(|i| {
            let u = quad.u_min + i as f64 * base_h;
            (u, log_integrand(u))
        })
        .collect();
    let mut peak = base
        .iter()
        .cloned()
        .fold((quad.u_min, f64::NEG_INFINITY), |acc, c| {
            if c.1 > acc.1 {
                c
            } else {
                acc
            }
        });
    if peak.1 == f64::NEG_INFINITY {
        return Err(Error::NumericalDomain(
            "independent-slab marginal: integrand vanished on the whole grid".into(),
        ));
    }
    let mut span = base_h;
    while span > 1e-6 {
        let local_h = span / 8.0;
        for i in 0..=16 {
            let u = peak.0 - span + i as f64 * local_h;
            let l = log_integrand(u);
            if l > peak.1 {
                peak = (u, l);
            }
        }
        span = local_h;
    }
    let shift = peak.1;

    // Clip the integration window where the shifted integrand still
    // contributes (within e^-60 of the peak on the base grid, padded), and
    // always keep one base panel around the refined peak itself.
    let keep: Vec<usize> = (0..base.len())
        .filter(|&i| base[i].1 >= shift - 60.0)
        .collect();
    let (mut u_lo, mut u_hi) = match (keep.first(), keep.last()) {
        (Some(&first), Some(&last)) => (
            base[first.saturating_sub(1)].0,
            base[(last + 1).min(base.len() - 1)].0,
        ),
        _ => (peak.0, peak.0),
    };
    u_lo = u_lo.min(peak.0 - base_h).max(quad.u_min);
    u_hi = u_hi.max(peak.0 + base_h).min(quad.u_max);

    // A trustworthy first integral estimate over the clipped window sets the
    // absolute tolerance for refinement.
    let f = |u: f64| (log_integrand(u) - shift).exp();
    let fine_points = 512usize;
    let fine_h = (u_hi - u_lo) / fine_points as f64;
    let mut coarse = 0.0;
    let mut prev = f(u_lo);
    for i in 1..=fine_points {
        let cur = f(u_lo + i as f64 * fine_h);
        coarse += 0.5 * (prev + cur) * fine_h;
        prev = cur;
    }
    if !(coarse > 0.0) {
        return Err(Error::NumericalDomain(
            "independent-slab marginal: nonpositive integral".into(),
        ));
    }

    let panels = 64usize;
    let abs_tol = quad.rel_tol * coarse / panels as f64;
    let panel_h = (u_hi - u_lo) / panels as f64;
    let mut engine = AdaptiveSimpson {
        f: &f,
        max_depth: quad.max_depth,
        eval_budget: 200_000,
        evals: 0,
        err_estimate: 0.0,
        budget_exceeded: false,
    };
    let mut total = 0.0;
    for i in 0..panels {
        let a = u_lo + i as f64 * panel_h;
        total += engine.run(a, a + panel_h, abs_tol);
    }
    if !(total > 0.0) {
        return Err(Error::NumericalDomain(
            "independent-slab marginal: nonpositive integral".into(),
        ));
    }
    let achieved = engine.err_estimate / total;
    if engine.budget_exceeded && achieved > quad.rel_tol {
        return Err(Error::Accuracy {
            achieved,
            target: quad.rel_tol,
        });
    }
    let active = (0..data.p())
        .map(|j| ((gamma >> j) & 1) as u32)
        .sum::<u32>();
    Ok(log_prior(hyper, active, data.p()) + shift + total.ln())
}

/// Enumerate all `2^p` models under the chosen marginal, normalize with a
/// max shift, and collect inclusion probabilities and the MAP model.
pub fn enumerate_posterior(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    model: OracleModel,
    quad: Option<&QuadratureOptions>,
) -> Result<ExactPosterior> {
    check_continuous(data)?;
    let p = data.p();
    if p > MAX_ENUM_P {
        return Err(Error::Budget { p, max: MAX_ENUM_P });
    }
    let total = 1usize << p;
    let log_weights: Vec<f64> = match model {
        OracleModel::Collapsed => {
            let xtx = data.x.t().dot(&data.x);
            let xty = data.x.t().dot(&data.y);
            let yy = data.y.dot(&data.y);
            (0..total)
                .into_par_iter()
                .map(|g| log_marginal_collapsed_with(&xtx, &xty, yy, data.n(), p, hyper, g))
                .collect::<Result<Vec<f64>>>()?
        }
        OracleModel::IndependentSlab => {
            let default_quad = QuadratureOptions::default();
            let q = quad.unwrap_or(&default_quad);
            (0..total)
                .into_par_iter()
                .map(|g| log_marginal_independent(data, hyper, g, q))
                .collect::<Result<Vec<f64>>>()?
        }
    };

    let max = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    let probs: Vec<f64> = unnorm.iter().map(|u| u / z).collect();
    let mut inclusion = vec![0.0f64; p];
    for (g, pr) in probs.iter().enumerate() {
        for (j, inc) in inclusion.iter_mut().enumerate() {
            if (g >> j) & 1 == 1 {
                *inc += pr;
            }
        }
    }
    // first maximum wins: deterministic under the fixed binary-counting order
    let mut map_index = 0;
    for (g, lw) in log_weights.iter().enumerate() {
        if *lw > log_weights[map_index] {
            map_index = g;
        }
    }
    Ok(ExactPosterior {
        p,
        log_weights,
        probs,
        inclusion,
        map_index,
    })
}

//! Bayes logistic regression with Pólya-Gamma latent scales.
//!
//! Only the PG mean is needed: `E[V] = (b/2c)·tanh(c/2)` for `V ~ PG(b, c)`,
//! with the analytic limit `b/4` at `c = 0`. The exponential-family tilt
//! multiplies the base density by `exp(−c²v/2)`, so the tilt that matches a
//! posterior second moment `m` is `c = √m`; a compatibility switch keeps the
//! un-rooted variant for comparison.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::fit::{FitOptions, FitReport};
use crate::linear::{assemble_precision, precision_diag, update_gamma};
use crate::math::{Cholesky, Dataset, ResponseKind, SpikeSlabHyper};

/// Mean of a Pólya-Gamma(b, c) variable.
pub fn pg_mean(b: f64, c: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!("pg_mean: b = {b} must be > 0")));
    }
    if !(c >= 0.0) {
        return Err(Error::Domain(format!("pg_mean: c = {c} must be >= 0")));
    }
    if c == 0.0 {
        Ok(b / 4.0)
    } else {
        Ok(b / (2.0 * c) * (c / 2.0).tanh())
    }
}

/// How the tilt parameter is derived from the linear-predictor second moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiltConvention {
    /// `c_i = √(x_iᵀΣx_i + (x_iᵀμ)²)` — consistent with the `exp(−c²v/2)` tilt.
    #[default]
    SqrtSecondMoment,
    /// `c_i` set to the second moment itself, as sometimes written.
    SecondMoment,
}

/// Per-iteration state exposed to observers.
#[derive(Debug, Clone)]
pub struct LogisticState {
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
    pub w: Array1<f64>,
    /// `E[v_i]`, in (0, 1/4] after the first update.
    pub v_mean: Array1<f64>,
    /// Tilt parameters, one per observation.
    pub c: Array1<f64>,
    pub t: usize,
}

/// Gaussian factor update: `Σ = (XᵀEX + D)⁻¹`, `μ = Σ Xᵀ(y − ½·1)`,
/// `E = diag(v_mean)`.
pub fn update_beta_logistic(
    data: &Dataset,
    v_mean: &Array1<f64>,
    d: &Array1<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    if data.y_kind != ResponseKind::Binary {
        return Err(Error::Domain(
            "update_beta_logistic requires a binary response".into(),
        ));
    }
    if v_mean.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "v_mean has {} entries, expected n = {}",
            v_mean.len(),
            data.n()
        )));
    }
    if let Some(i) = v_mean.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!(
            "v_mean[{i}] = {} must be > 0",
            v_mean[i]
        )));
    }
    let scaled = &data.x * &v_mean.view().insert_axis(Axis(1));
    let xtex = data.x.t().dot(&scaled);
    let m = assemble_precision(&xtex, 1.0, &d.view());
    let chol = Cholesky::new(&m.view())?;
    let y0 = data.y.mapv(|v| v - 0.5);
    let rhs = data.x.t().dot(&y0);
    let mu = chol.solve_vec(&rhs.view());
    let sigma = chol.inverse();
    Ok((mu, sigma))
}

/// Latent update with the default square-root tilt.
pub fn update_v(
    data: &Dataset,
    mu: &Array1<f64>,
    sigma: &Array2<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    update_v_with(data, mu, sigma, TiltConvention::default())
}

/// Latent update: second moment `m_i = x_iᵀΣx_i + (x_iᵀμ)²`, tilt per the
/// convention, and `v_mean_i = pg_mean(1, c_i)`.
pub fn update_v_with(
    data: &Dataset,
    mu: &Array1<f64>,
    sigma: &Array2<f64>,
    tilt: TiltConvention,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let xs = data.x.dot(sigma);
    let quad = (&xs * &data.x).sum_axis(Axis(1));
    let lin = data.x.dot(mu);
    let n = data.n();
    let mut c = Array1::<f64>::zeros(n);
    let mut v = Array1::<f64>::zeros(n);
    for i in 0..n {
        let m2 = quad[i] + lin[i] * lin[i];
        let ci = match tilt {
            TiltConvention::SqrtSecondMoment => m2.max(0.0).sqrt(),
            TiltConvention::SecondMoment => m2.max(0.0),
        };
        c[i] = ci;
        v[i] = pg_mean(1.0, ci)?;
    }
    Ok((c, v))
}

/// Fit the logistic model from `w⁽⁰⁾ = ½·1`, `v⁽⁰⁾ = 1ₙ`.
pub fn fit_logistic(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    opts: &FitOptions,
) -> Result<FitReport> {
    fit_logistic_observed(data, hyper, opts, TiltConvention::default(), |_| {})
}

/// [`fit_logistic`] with an explicit tilt convention and observer.
pub fn fit_logistic_observed(
    data: &Dataset,
    hyper: &SpikeSlabHyper,
    opts: &FitOptions,
    tilt: TiltConvention,
    mut observer: impl FnMut(&LogisticState),
) -> Result<FitReport> {
    opts.validate()?;
    if data.y_kind != ResponseKind::Binary {
        return Err(Error::Domain(
            "fit_logistic requires a binary response".into(),
        ));
    }
    let p = data.p();
    let mut w = Array1::<f64>::from_elem(p, 0.5);
    let mut v = Array1::<f64>::ones(data.n());
    let mut mu = Array1::<f64>::zeros(p);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=opts.max_iter {
        let d = precision_diag(&w.view(), hyper)?;
        let (mu_new, sigma) = update_beta_logistic(data, &v, &d)?;
        let (c, v_new) = update_v_with(data, &mu_new, &sigma, tilt)?;
        let w_new = update_gamma(&mu_new.view(), &sigma.diag(), hyper)?;

        let delta = max_abs_diff(&mu_new, &mu).max(max_abs_diff(&w_new, &w));
        mu = mu_new;
        v = v_new;
        w = w_new;
        iterations = t;
        if opts.track_trace {
            trace.push(delta);
        }
        observer(&LogisticState {
            mu: mu.clone(),
            sigma,
            w: w.clone(),
            v_mean: v.clone(),
            c,
            t,
        });
        if delta < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FitReport::new(mu, w, None, iterations, converged, trace))
}

fn max_abs_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::validate_dataset;
    use ndarray::{arr1, arr2, Array};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pg_mean_examples() {
        assert_eq!(pg_mean(1.0, 0.0).unwrap(), 0.25);
        let c = 1.7;
        assert!((pg_mean(2.0, c).unwrap() - 2.0 * pg_mean(1.0, c).unwrap()).abs() < 1e-15);
        assert!((pg_mean(1.0, 2.0).unwrap() - 1.0f64.tanh() / 4.0).abs() < 1e-15);
        assert!((pg_mean(1.0, 2.0).unwrap() - 0.190_398_538_988_941_16).abs() < 1e-14);
        assert!((pg_mean(1.0, 1e-8).unwrap() - 0.25).abs() <= 1e-9);
        assert!(pg_mean(0.0, 1.0).is_err());
        assert!(pg_mean(1.0, -0.1).is_err());
        // strictly decreasing in c
        let mut prev = pg_mean(1.0, 0.0).unwrap();
        for c in [0.1, 0.5, 1.0, 3.0, 10.0] {
            let v = pg_mean(1.0, c).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    fn logistic_data(n: usize, beta: &[f64], seed: u64) -> Dataset {
        let p = beta.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array::from_shape_fn((n, p), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let eta = x.dot(&arr1(beta));
        let y: Array1<f64> = eta
            .iter()
            .map(|e| {
                if rng.gen::<f64>() < crate::math::expit_raw(*e) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        validate_dataset(x, y, ResponseKind::Binary).unwrap()
    }

    #[test]
    fn beta_update_balanced_intercept_and_scalar() {
        let x = Array2::from_elem((4, 1), 1.0);
        let y = arr1(&[1.0, 0.0, 1.0, 0.0]);
        let data = validate_dataset(x, y, ResponseKind::Binary).unwrap();
        let (mu, _) =
            update_beta_logistic(&data, &Array1::from_elem(4, 0.25), &arr1(&[1.0])).unwrap();
        assert_eq!(mu[0], 0.0);

        let data = validate_dataset(arr2(&[[1.0]]), arr1(&[1.0]), ResponseKind::Binary).unwrap();
        let (mu, sigma) = update_beta_logistic(&data, &arr1(&[0.25]), &arr1(&[1.0])).unwrap();
        assert!((sigma[[0, 0]] - 0.8).abs() < 1e-15);
        assert!((mu[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn beta_update_residual_oracle() {
        let data = logistic_data(30, &[1.0, -1.0, 0.5], 19);
        let hyper = SpikeSlabHyper::default();
        let d = precision_diag(&arr1(&[0.5, 0.5, 0.5]).view(), &hyper).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let v: Array1<f64> = Array::from_shape_fn(30, |_| 0.05 + 0.2 * rng.gen::<f64>());
        let (mu, _) = update_beta_logistic(&data, &v, &d).unwrap();
        let scaled = &data.x * &v.view().insert_axis(ndarray::Axis(1));
        let m = assemble_precision(&data.x.t().dot(&scaled), 1.0, &d.view());
        let rhs = data.x.t().dot(&data.y.mapv(|v| v - 0.5));
        let lhs = m.dot(&mu);
        for j in 0..3 {
            assert!((lhs[j] - rhs[j]).abs() <= 1e-8 * (1.0 + rhs[j].abs()));
        }
    }

    #[test]
    fn update_v_degenerate_cases() {
        let x = arr2(&[[0.0, 0.0], [1.0, 2.0]]);
        let data = validate_dataset(x, arr1(&[0.0, 1.0]), ResponseKind::Binary).unwrap();
        // μ = 0, Σ → 0: c = 0, v = 1/4
        let (c, v) = update_v(&data, &arr1(&[0.0, 0.0]), &Array2::zeros((2, 2))).unwrap();
        assert_eq!(c[0], 0.0);
        assert_eq!(v[0], 0.25);
        // the zero row keeps c = 0 regardless of μ, Σ
        let (c, v) = update_v(&data, &arr1(&[2.0, -1.0]), &Array2::eye(2)).unwrap();
        assert_eq!(c[0], 0.0);
        assert_eq!(v[0], 0.25);
        assert!(c[1] > 0.0 && v[1] < 0.25);
    }

    #[test]
    fn update_v_monte_carlo_oracle() {
        let data = logistic_data(20, &[1.5, 0.0], 47);
        let hyper = SpikeSlabHyper::default();
        let d = precision_diag(&arr1(&[0.5, 0.5]).view(), &hyper).unwrap();
        let (mu, sigma) = update_beta_logistic(&data, &Array1::from_elem(20, 0.25), &d).unwrap();
        // sample β ~ N(μ, Σ) via a hand-rolled 2x2 factor of Σ
        let l = {
            let mut l = Array2::<f64>::zeros((2, 2));
            l[[0, 0]] = sigma[[0, 0]].sqrt();
            l[[1, 0]] = sigma[[1, 0]] / l[[0, 0]];
            l[[1, 1]] = (sigma[[1, 1]] - l[[1, 0]] * l[[1, 0]]).sqrt();
            l
        };
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let draws = 1_000_000usize;
        let rows = [0usize, 7, 13];
        let mut sums = [0.0f64; 3];
        let mut sums_sq = [0.0f64; 3];
        for _ in 0..draws {
            let z0: f64 = rng.sample(rand_distr::StandardNormal);
            let z1: f64 = rng.sample(rand_distr::StandardNormal);
            let b0 = mu[0] + l[[0, 0]] * z0;
            let b1 = mu[1] + l[[1, 0]] * z0 + l[[1, 1]] * z1;
            for (s, &i) in rows.iter().enumerate() {
                let t = data.x[[i, 0]] * b0 + data.x[[i, 1]] * b1;
                let sq = t * t;
                sums[s] += sq;
                sums_sq[s] += sq * sq;
            }
        }
        let (_, _) = update_v(&data, &mu, &sigma).unwrap();
        for (s, &i) in rows.iter().enumerate() {
            let mean = sums[s] / draws as f64;
            let var = sums_sq[s] / draws as f64 - mean * mean;
            let se = (var / draws as f64).sqrt();
            let xi = data.x.row(i);
            let m2 = xi.dot(&sigma.dot(&xi)) + xi.dot(&mu).powi(2);
            assert!(
                (m2 - mean).abs() <= 3.0 * se,
                "row {i}: analytic {m2} vs MC {mean} (se {se})"
            );
        }
    }

    #[test]
    fn fit_balanced_intercept_only() {
        let x = Array2::from_elem((40, 1), 1.0);
        let y: Array1<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let data = validate_dataset(x, y, ResponseKind::Binary).unwrap();
        let hyper = SpikeSlabHyper::default();
        let report = fit_logistic(&data, &hyper, &FitOptions::default()).unwrap();
        assert_eq!(report.mu[0], 0.0);
        assert!(report.tau.is_none());
    }

    #[test]
    fn fit_selects_true_signal() {
        let data = logistic_data(500, &[3.0, 0.0, 0.0], 90);
        let hyper = SpikeSlabHyper::default();
        let report = fit_logistic(&data, &hyper, &FitOptions::default()).unwrap();
        assert_eq!(report.selected, vec![0]);
        assert!(report.mu[0] > 0.0);
    }

    #[test]
    fn label_flip_negates_mu_exactly() {
        let data = logistic_data(80, &[2.0, -1.0], 91);
        let flipped = validate_dataset(
            data.x.clone(),
            data.y.mapv(|v| 1.0 - v),
            ResponseKind::Binary,
        )
        .unwrap();
        let hyper = SpikeSlabHyper::default();
        let a = fit_logistic(&data, &hyper, &FitOptions::default()).unwrap();
        let b = fit_logistic(&flipped, &hyper, &FitOptions::default()).unwrap();
        for j in 0..2 {
            assert_eq!(a.mu[j].to_bits(), (-b.mu[j]).to_bits());
            assert_eq!(a.w[j].to_bits(), b.w[j].to_bits());
        }
    }

    #[test]
    fn v_mean_bounds_hold_along_fit() {
        let data = logistic_data(60, &[1.0, 0.0], 92);
        let hyper = SpikeSlabHyper::default();
        fit_logistic_observed(
            &data,
            &hyper,
            &FitOptions::default(),
            TiltConvention::default(),
            |st| {
                for i in 0..st.v_mean.len() {
                    assert!(st.v_mean[i] > 0.0 && st.v_mean[i] <= 0.25);
                    assert!(st.c[i] >= 0.0);
                    if st.v_mean[i] == 0.25 {
                        assert_eq!(st.c[i], 0.0);
                    }
                }
            },
        )
        .unwrap();
    }

    #[test]
    fn larger_v_shrinks_sigma_in_psd_order() {
        let data = logistic_data(25, &[1.0, 0.5, -0.5], 93);
        let hyper = SpikeSlabHyper::default();
        let d = precision_diag(&arr1(&[0.5, 0.5, 0.5]).view(), &hyper).unwrap();
        let v_small = Array1::from_elem(25, 0.1);
        let v_large = Array1::from_elem(25, 0.22);
        let (_, sig_small) = update_beta_logistic(&data, &v_small, &d).unwrap();
        let (_, sig_large) = update_beta_logistic(&data, &v_large, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(94);
        for _ in 0..20 {
            let x: Array1<f64> =
                Array::from_shape_fn(3, |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let diff = x.dot(&sig_small.dot(&x)) - x.dot(&sig_large.dot(&x));
            assert!(diff >= -1e-12, "PSD ordering violated: {diff}");
        }
    }

    #[test]
    fn paper_tilt_convention_is_available() {
        let data = logistic_data(50, &[1.0], 95);
        let (mu, sigma) =
            update_beta_logistic(&data, &Array1::from_elem(50, 0.25), &arr1(&[1.0])).unwrap();
        let (c_sqrt, _) =
            update_v_with(&data, &mu, &sigma, TiltConvention::SqrtSecondMoment).unwrap();
        let (c_raw, _) = update_v_with(&data, &mu, &sigma, TiltConvention::SecondMoment).unwrap();
        for i in 0..50 {
            assert!((c_sqrt[i] * c_sqrt[i] - c_raw[i]).abs() <= 1e-12 * (1.0 + c_raw[i]));
        }
    }

    #[test]
    fn rejects_continuous_response() {
        let data = validate_dataset(
            arr2(&[[1.0], [1.0]]),
            arr1(&[0.3, 0.7]),
            ResponseKind::Continuous,
        )
        .unwrap();
        assert!(fit_logistic(&data, &SpikeSlabHyper::default(), &FitOptions::default()).is_err());
    }
}

//! Data generation with known truth and Monte-Carlo studies of the
//! estimation and selection trends.
//!
//! Design-matrix rows are drawn i.i.d. from the chosen distribution; the
//! noise stream is independent of the design stream (same seed, different
//! stream id), so swapping the response model never perturbs `X`.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::collapsed::fit_collapsed;
use crate::error::{Error, Result};
use crate::fit::{FitOptions, FitReport};
use crate::linear::fit_linear;
use crate::logistic::fit_logistic;
use crate::math::{expit_raw, validate_dataset, Dataset, ResponseKind, SpikeSlabHyper};
use crate::quantile::fit_quantile;

/// Distribution of the design rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XDist {
    StandardNormal,
    /// All pairs of coordinates share correlation `r ∈ [0, 1)`.
    Equicorrelated(f64),
}

/// What generates the response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    Linear,
    /// Additive noise whose `q`-quantile is zero, so `xᵀβ0` is the
    /// conditional `q`-quantile exactly.
    Quantile(f64),
    Logistic,
}

/// Ground truth for a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSpec {
    pub beta0: Array1<f64>,
    /// Noise scale; ignored by the logistic model.
    pub sigma0: f64,
    pub x_dist: XDist,
}

impl TruthSpec {
    pub fn new(beta0: Array1<f64>, sigma0: f64, x_dist: XDist) -> Result<Self> {
        if beta0.is_empty() {
            return Err(Error::Domain("beta0 must be nonempty".into()));
        }
        if let Some(j) = beta0.iter().position(|b| !b.is_finite()) {
            return Err(Error::NonFinite(format!("beta0[{j}]")));
        }
        if !(sigma0 > 0.0) {
            return Err(Error::Domain(format!("sigma0 = {sigma0} must be > 0")));
        }
        if let XDist::Equicorrelated(r) = x_dist {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Domain(format!("equicorrelation {r} outside [0, 1)")));
            }
        }
        Ok(Self {
            beta0,
            sigma0,
            x_dist,
        })
    }

    /// Indices of nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        self.beta0
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// Smallest nonzero coefficient magnitude, if any coefficient is nonzero.
    pub fn l0(&self) -> Option<f64> {
        self.beta0
            .iter()
            .filter(|b| **b != 0.0)
            .map(|b| b.abs())
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }
}

/// Quantile function of the standardized check-loss noise: zero mean at the
/// `q`-quantile by construction.
fn ald_quantile(u: f64, q: f64, sigma: f64) -> f64 {
    let u = u.clamp(1e-300, 1.0 - 1e-16);
    if u < q {
        sigma / (1.0 - q) * (u / q).ln()
    } else {
        -sigma / q * ((1.0 - u) / (1.0 - q)).ln()
    }
}

fn draw_design(truth: &TruthSpec, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let p = truth.beta0.len();
    let mut x = Array2::<f64>::zeros((n, p));
    match truth.x_dist {
        XDist::StandardNormal => {
            for i in 0..n {
                for j in 0..p {
                    x[[i, j]] = rng.sample(rand_distr::StandardNormal);
                }
            }
        }
        XDist::Equicorrelated(r) => {
            let shared = r.sqrt();
            let own = (1.0 - r).sqrt();
            for i in 0..n {
                let z0: f64 = rng.sample(rand_distr::StandardNormal);
                for j in 0..p {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    x[[i, j]] = shared * z0 + own * z;
                }
            }
        }
    }
    x
}

/// Draw a dataset with known truth, reproducibly from `seed`.
pub fn simulate(kind: ModelKind, truth: &TruthSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::Domain("n must be >= 1".into()));
    }
    if let ModelKind::Quantile(q) = kind {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile level {q} outside (0, 1)")));
        }
    }
    let mut rng_x = ChaCha8Rng::seed_from_u64(seed);
    rng_x.set_stream(0);
    let mut rng_noise = ChaCha8Rng::seed_from_u64(seed);
    rng_noise.set_stream(1);

    let x = draw_design(truth, n, &mut rng_x);
    let eta = x.dot(&truth.beta0);
    let (y, y_kind) = match kind {
        ModelKind::Linear => {
            let y = eta.mapv(|e| {
                e + truth.sigma0 * rng_noise.sample::<f64, _>(rand_distr::StandardNormal)
            });
            (y, ResponseKind::Continuous)
        }
        ModelKind::Quantile(q) => {
            let y = eta.mapv(|e| e + ald_quantile(rng_noise.gen::<f64>(), q, truth.sigma0));
            (y, ResponseKind::Continuous)
        }
        ModelKind::Logistic => {
            let y = eta.mapv(|e| {
                if rng_noise.gen::<f64>() < expit_raw(e) {
                    1.0
                } else {
                    0.0
                }
            });
            (y, ResponseKind::Binary)
        }
    };
    validate_dataset(x, y, y_kind)
}

/// Admissibility of the spike variance for a minimum signal `l0` and gap `δ`:
/// (i) `v0 < min(v1·e^{−2λ}, v1)` and
/// (ii) `l0²/v0 + ln v0 ≥ ln v1 + l0²/v1 − 2λ + 2δ`.
pub fn check_v0_admissible(hyper: &SpikeSlabHyper, l0: f64, delta: f64) -> bool {
    let cap = (hyper.v1 * (-2.0 * hyper.lambda).exp()).min(hyper.v1);
    let cond_i = hyper.v0 < cap;
    let lhs = l0 * l0 / hyper.v0 + hyper.v0.ln();
    let rhs = hyper.v1.ln() + l0 * l0 / hyper.v1 - 2.0 * hyper.lambda + 2.0 * delta;
    cond_i && lhs >= rhs
}

/// Which fitter a study runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    Linear,
    Collapsed,
    Quantile(f64),
    Logistic,
}

impl Algorithm {
    fn data_kind(&self) -> ModelKind {
        match self {
            Algorithm::Linear | Algorithm::Collapsed => ModelKind::Linear,
            Algorithm::Quantile(q) => ModelKind::Quantile(*q),
            Algorithm::Logistic => ModelKind::Logistic,
        }
    }

    pub fn run(
        &self,
        data: &Dataset,
        hyper: &SpikeSlabHyper,
        opts: &FitOptions,
    ) -> Result<FitReport> {
        match self {
            Algorithm::Linear => fit_linear(data, hyper, opts),
            Algorithm::Collapsed => fit_collapsed(data, hyper, opts),
            Algorithm::Quantile(q) => fit_quantile(data, *q, hyper, opts),
            Algorithm::Logistic => fit_logistic(data, hyper, opts),
        }
    }
}

/// One grid point of a study: sample size plus the spike/slab pair used there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub n: usize,
    pub v0: f64,
    pub v1: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub truth: TruthSpec,
    pub grid: Vec<GridCell>,
    pub reps: usize,
    pub base_seed: u64,
    /// Inverse-gamma shape/scale and prior inclusion shared across cells.
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub opts: FitOptions,
}

/// Per-cell aggregates over the successful replications.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub n: usize,
    pub v0: f64,
    pub v1: f64,
    pub reps: usize,
    pub failures: usize,
    /// Fraction of replications whose selected set equals the true support.
    pub exact_recovery_rate: f64,
    pub mean_linf_error: f64,
    /// Mean `|1/τ − σ0²|`; only the linear fitter estimates the noise variance.
    pub mean_var_error: Option<f64>,
    pub median_null_w: Option<f64>,
    pub median_signal_w: Option<f64>,
    /// More than 5% of replications failed.
    pub degraded: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub cells: Vec<CellReport>,
    pub base_seed: u64,
    /// Trend flags across cells in grid order.
    pub recovery_nondecreasing: bool,
    pub linf_error_decreasing: bool,
    pub var_error_decreasing: Option<bool>,
}

/// splitmix64 step, used to derive independent per-replication seeds.
fn mix_seed(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replication_seed(base: u64, cell: usize, rep: usize) -> u64 {
    mix_seed(mix_seed(base ^ (cell as u64).wrapping_mul(0x9E37)) ^ rep as u64)
}

struct RepOutcome {
    recovered: bool,
    linf: f64,
    var_err: Option<f64>,
    null_ws: Vec<f64>,
    signal_ws: Vec<f64>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

/// Run `reps` independent simulate-then-fit cycles per cell and aggregate.
///
/// Replications run in parallel; the reduction is by replication index, so
/// the report does not depend on scheduling.
pub fn consistency_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.reps < 1 {
        return Err(Error::Domain("reps must be >= 1".into()));
    }
    cfg.opts.validate()?;
    let support = cfg.truth.support();
    let p = cfg.truth.beta0.len();
    let is_signal: Vec<bool> = (0..p).map(|j| support.contains(&j)).collect();

    let mut cells = Vec::with_capacity(cfg.grid.len());
    for (cell_idx, cell) in cfg.grid.iter().enumerate() {
        let hyper = SpikeSlabHyper::new(cell.v0, cell.v1, cfg.a, cfg.b, cfg.rho)?;
        let outcomes: Vec<Result<RepOutcome>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let seed = replication_seed(cfg.base_seed, cell_idx, rep);
                let data = simulate(cfg.algorithm.data_kind(), &cfg.truth, cell.n, seed)?;
                let report = cfg.algorithm.run(&data, &hyper, &cfg.opts)?;
                let linf = report
                    .mu
                    .iter()
                    .zip(cfg.truth.beta0.iter())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                let var_err = match cfg.algorithm {
                    Algorithm::Linear => report
                        .tau
                        .map(|t| (1.0 / t - cfg.truth.sigma0 * cfg.truth.sigma0).abs()),
                    _ => None,
                };
                let mut null_ws = Vec::new();
                let mut signal_ws = Vec::new();
                for (wj, signal) in report.w.iter().zip(is_signal.iter()) {
                    if *signal {
                        signal_ws.push(*wj);
                    } else {
                        null_ws.push(*wj);
                    }
                }
                Ok(RepOutcome {
                    recovered: report.selected == support,
                    linf,
                    var_err,
                    null_ws,
                    signal_ws,
                })
            })
            .collect();

        let mut failures = 0usize;
        let mut recovered = 0usize;
        let mut linf_sum = 0.0;
        let mut var_sum = 0.0;
        let mut var_count = 0usize;
        let mut null_ws = Vec::new();
        let mut signal_ws = Vec::new();
        let mut ok = 0usize;
        for outcome in outcomes {
            match outcome {
                Ok(o) => {
                    ok += 1;
                    recovered += o.recovered as usize;
                    linf_sum += o.linf;
                    if let Some(v) = o.var_err {
                        var_sum += v;
                        var_count += 1;
                    }
                    null_ws.extend(o.null_ws);
                    signal_ws.extend(o.signal_ws);
                }
                Err(_) => failures += 1,
            }
        }
        if ok == 0 {
            return Err(Error::NumericalDomain(format!(
                "every replication failed in cell n = {}",
                cell.n
            )));
        }
        cells.push(CellReport {
            n: cell.n,
            v0: cell.v0,
            v1: cell.v1,
            reps: cfg.reps,
            failures,
            exact_recovery_rate: recovered as f64 / ok as f64,
            mean_linf_error: linf_sum / ok as f64,
            mean_var_error: (var_count > 0).then(|| var_sum / var_count as f64),
            median_null_w: median(&mut null_ws),
            median_signal_w: median(&mut signal_ws),
            degraded: failures as f64 > 0.05 * cfg.reps as f64,
        });
    }

    let recovery_nondecreasing = cells
        .windows(2)
        .all(|w| w[1].exact_recovery_rate >= w[0].exact_recovery_rate);
    let linf_error_decreasing = cells
        .windows(2)
        .all(|w| w[1].mean_linf_error < w[0].mean_linf_error);
    let var_error_decreasing = if cells.iter().all(|c| c.mean_var_error.is_some()) {
        Some(
            cells
                .windows(2)
                .all(|w| w[1].mean_var_error.unwrap() < w[0].mean_var_error.unwrap()),
        )
    } else {
        None
    };
    Ok(ExperimentReport {
        cells,
        base_seed: cfg.base_seed,
        recovery_nondecreasing,
        linf_error_decreasing,
        var_error_decreasing,
    })
}

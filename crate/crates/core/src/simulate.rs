//! Data generation and the replication engine for the two benchmark
//! experiments, plus the solution-path and penalty-tightness studies.
//!
//! Experiment 1 (`m > p`): design rows are i.i.d. multivariate normal with
//! covariance `Sigma_jk = rho^|j-k|`. Experiment 2 (`q < m <= p`): the design
//! is `X0 Sigma^{1/2}` with `X0 = X1 X2` a product of standard normal
//! factors, so the design has rank `q` below its row count. In both, the
//! coefficient matrix is `A = b B0 B1` with standard normal factors (rank
//! `r`), and the noise has independent normal entries.
//!
//! Each replication draws `(X, A, E)` fresh and fits four estimators: the
//! adaptively penalized rank selector (`RSC_adap`, penalty `2 S^2 (n + q)`),
//! the validation-tuned rank selector (`RSC_val`), the validation-tuned
//! nuclear-norm estimator (`NNP_val`) and its calibrated correction
//! (`NNPc_val`). Validation tuning picks the grid point minimizing squared
//! prediction error on an independently drawn validation set with the same
//! design law and the same coefficient matrix.
//!
//! Replications run in parallel over per-replication random streams and are
//! merged in replication order, so parallel and serial runs produce
//! identical summaries.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gsvd::metric_sqrt;
use crate::linalg::{default_rank_tol, design_summary, thin_svd};
use crate::matrix::DenseMatrix;
use crate::nnp::{calibrated_rank, NnpSolver, SolverOptions};
use crate::rng::RngSpec;
use crate::rsc::{adaptive_mu, noise_variance, select_rank, RscProblem};

/// Which benchmark experiment a configuration describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Exp1,
    Exp2,
}

/// Scenario parameters for one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Observations.
    pub m: usize,
    /// Predictors.
    pub p: usize,
    /// Responses.
    pub n: usize,
    /// Rank of the coefficient matrix.
    pub r: usize,
    /// Design rank; required for Exp2, implied (`= p`) for Exp1.
    #[serde(default)]
    pub q: Option<usize>,
    /// Design correlation, `Sigma_jk = rho^|j-k|`.
    pub rho: f64,
    /// Signal strength.
    pub b: f64,
    /// Noise standard deviation.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub seed: u64,
    /// Validation sets have `validation_multiplier * m` observations.
    #[serde(default = "default_validation_multiplier")]
    pub validation_multiplier: usize,
    /// Fraction trimmed from each tail when averaging MSEs.
    #[serde(default = "default_trim")]
    pub trim: f64,
    /// Number of points in the tuning grids.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Multiplier of the adaptive penalty `constant * S^2 * (n + q)`.
    #[serde(default = "default_penalty_constant")]
    pub penalty_constant: f64,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_replications() -> usize {
    20
}
fn default_validation_multiplier() -> usize {
    10
}
fn default_trim() -> f64 {
    0.4
}
fn default_grid_points() -> usize {
    50
}
fn default_penalty_constant() -> f64 {
    2.0
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 || self.p == 0 || self.n == 0 || self.r == 0 {
            return fail("m, p, n and r must be positive".into());
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return fail(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if !(self.b >= 0.0) {
            return fail(format!("b must be non-negative, got {}", self.b));
        }
        if !(self.sigma > 0.0) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.replications == 0 {
            return fail("replications must be positive".into());
        }
        if self.validation_multiplier == 0 {
            return fail("validation_multiplier must be positive".into());
        }
        if !(self.trim >= 0.0 && self.trim < 0.5) {
            return fail(format!("trim must lie in [0, 0.5), got {}", self.trim));
        }
        if self.grid_points < 2 {
            return fail("grid_points must be at least 2".into());
        }
        if !(self.penalty_constant > 0.0) {
            return fail("penalty_constant must be positive".into());
        }
        if self.r > self.n.min(self.p) {
            return fail(format!("r = {} exceeds min(n, p) = {}", self.r, self.n.min(self.p)));
        }
        match self.experiment {
            Experiment::Exp1 => {
                if self.m <= self.p {
                    return fail(format!("Exp1 requires m > p, got m = {}, p = {}", self.m, self.p));
                }
                if let Some(q) = self.q {
                    if q != self.p {
                        return fail(format!("Exp1 implies q = p = {}, got q = {q}", self.p));
                    }
                }
            }
            Experiment::Exp2 => {
                let q = match self.q {
                    Some(q) => q,
                    None => return fail("Exp2 requires q".into()),
                };
                if !(q < self.m && self.m <= self.p) {
                    return fail(format!(
                        "Exp2 requires q < m <= p, got q = {q}, m = {}, p = {}",
                        self.m, self.p
                    ));
                }
                if self.r > q {
                    return fail(format!("Exp2 requires r <= q, got r = {}, q = {q}", self.r));
                }
            }
        }
        Ok(())
    }

    /// The design rank the scenario is built to have.
    pub fn design_rank(&self) -> usize {
        match self.experiment {
            Experiment::Exp1 => self.p,
            Experiment::Exp2 => self.q.expect("validated"),
        }
    }
}

/// A grid of scenarios sharing everything but correlation and signal
/// strength; this is the shape of the benchmark tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub experiment: Experiment,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub r: usize,
    #[serde(default)]
    pub q: Option<usize>,
    pub rho: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_validation_multiplier")]
    pub validation_multiplier: usize,
    #[serde(default = "default_trim")]
    pub trim: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_penalty_constant")]
    pub penalty_constant: f64,
}

impl StudyConfig {
    /// Expands the grid into per-scenario configurations. Scenarios get
    /// distinct seeds derived from the base seed so their draws do not
    /// overlap stream-for-stream.
    pub fn scenarios(&self) -> Result<Vec<ExperimentConfig>> {
        if self.rho.is_empty() || self.b.is_empty() {
            return Err(Error::InvalidConfig("rho and b lists must be nonempty".into()));
        }
        let mut out = Vec::new();
        for (i, &b) in self.b.iter().enumerate() {
            for (j, &rho) in self.rho.iter().enumerate() {
                let config = ExperimentConfig {
                    experiment: self.experiment,
                    m: self.m,
                    p: self.p,
                    n: self.n,
                    r: self.r,
                    q: self.q,
                    rho,
                    b,
                    sigma: self.sigma,
                    replications: self.replications,
                    seed: self.seed.wrapping_add((i * self.rho.len() + j) as u64),
                    validation_multiplier: self.validation_multiplier,
                    trim: self.trim,
                    grid_points: self.grid_points,
                    penalty_constant: self.penalty_constant,
                };
                config.validate()?;
                out.push(config);
            }
        }
        Ok(out)
    }
}

/// The four estimators the replication engine compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    RscAdaptive,
    RscValidated,
    NnpValidated,
    NnpCalibratedValidated,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::RscAdaptive,
        Estimator::RscValidated,
        Estimator::NnpValidated,
        Estimator::NnpCalibratedValidated,
    ];

    /// Table label.
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::RscAdaptive => "RSC_adap",
            Estimator::RscValidated => "RSC_val",
            Estimator::NnpValidated => "NNP_val",
            Estimator::NnpCalibratedValidated => "NNPc_val",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Aggregated results of one estimator on one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub estimator: Estimator,
    /// Trimmed mean of `100 |XA - X B^|_F^2 / (mn)`.
    pub mse_xa: f64,
    /// Trimmed mean of `100 |A - B^|_F^2 / (pn)`.
    pub mse_a: f64,
    /// Median rank estimate.
    pub rank_median: f64,
    /// Percentage of replications whose rank estimate equals `r` exactly.
    pub rrp: f64,
    /// Mean signal-to-noise ratio `d_r(XA) / (sqrt(q) + sqrt(n))` over
    /// replications.
    pub snr: f64,
    /// Replications on which the estimator's solver did not converge; these
    /// are excluded from the aggregates above but never dropped silently.
    pub failures: usize,
    pub replications: usize,
}

/// Per-replication, per-estimator raw results.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub estimator: Estimator,
    pub rank: usize,
    pub mse_xa: f64,
    pub mse_a: f64,
    /// The tuning parameter the estimator used (`mu` or `tau`).
    pub tuning: f64,
    pub converged: bool,
}

/// Everything `run_experiment` produces for one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub config: ExperimentConfig,
    pub summaries: Vec<SummaryRow>,
    pub details: Vec<ReplicationRecord>,
}

// Per-replication stream layout.
const STREAMS_PER_REPLICATION: u64 = 8;
const STREAM_DESIGN: u64 = 0;
const STREAM_COEF: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_VAL_DESIGN: u64 = 3;
const STREAM_VAL_NOISE: u64 = 4;

fn replication_stream(seed: u64, replication: usize, offset: u64) -> ChaCha8Rng {
    RngSpec::new(seed, replication as u64 * STREAMS_PER_REPLICATION + offset).rng()
}

/// Standard normal matrix.
pub fn gen_noise(m: usize, n: usize, sigma: f64, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_fn(m, n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Symmetric square root of the `rho^|j-k|` covariance.
fn covariance_sqrt(p: usize, rho: f64) -> Result<DenseMatrix> {
    if rho == 0.0 {
        return Ok(DenseMatrix::identity(p, p));
    }
    let sigma = DenseMatrix::from_fn(p, p, |j, k| rho.powi((j as i32 - k as i32).abs()));
    metric_sqrt(&sigma)
}

/// Experiment-1 design: rows i.i.d. `MVN(0, Sigma)` with
/// `Sigma_jk = rho^|j-k|`, realized as `Z Sigma^{1/2}` for standard normal
/// `Z`.
pub fn gen_design_exp1(m: usize, p: usize, rho: f64, rng: &mut impl Rng) -> Result<DenseMatrix> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidConfig(format!("rho must lie in [0, 1), got {rho}")));
    }
    let z = gen_noise(m, p, 1.0, rng);
    if rho == 0.0 {
        return Ok(z);
    }
    Ok(z * covariance_sqrt(p, rho)?)
}

/// Experiment-2 design: `X0 Sigma^{1/2}` with `X0 = X1 X2`,
/// `X1` `m x q`, `X2` `q x p` standard normal, so `rank(X) = q` almost
/// surely. The rank is asserted numerically; a deficient draw (possible only
/// through numerical degeneracy) is logged and redrawn from the stream.
///
/// The experiment scenario itself requires `q < m <= p` (enforced by
/// [`ExperimentConfig::validate`]); the generator only needs
/// `q <= min(m, p)`, which lets validation sets with many more rows follow
/// the same design law.
pub fn gen_design_exp2(
    m: usize,
    p: usize,
    q: usize,
    rho: f64,
    rng: &mut impl Rng,
) -> Result<DenseMatrix> {
    if q > m.min(p) {
        return Err(Error::InvalidConfig(format!(
            "Exp2 design requires q <= min(m, p), got q = {q}, m = {m}, p = {p}"
        )));
    }
    let sqrt = covariance_sqrt(p, rho)?;
    for attempt in 0..16 {
        let x1 = gen_noise(m, q, 1.0, rng);
        let x2 = gen_noise(q, p, 1.0, rng);
        let x = x1 * x2 * &sqrt;
        let rank = thin_svd(&x)?.rank(default_rank_tol(m, p));
        if rank == q {
            return Ok(x);
        }
        log::warn!("Exp2 design draw {attempt} had rank {rank} < {q}; redrawing");
    }
    Err(Error::NumericalFailure(
        "could not draw a rank-q Exp2 design in 16 attempts".into(),
    ))
}

/// Coefficient matrix `A = b B0 B1` with `B0` `p x r`, `B1` `r x n`
/// standard normal; `rank(A) = r` almost surely for `b > 0`.
pub fn gen_coefficients(p: usize, n: usize, r: usize, b: f64, rng: &mut impl Rng) -> Result<DenseMatrix> {
    if r > p.min(n) {
        return Err(Error::InvalidConfig(format!(
            "coefficient rank {r} exceeds min(p, n) = {}",
            p.min(n)
        )));
    }
    let b0 = gen_noise(p, r, 1.0, rng);
    let b1 = gen_noise(r, n, 1.0, rng);
    Ok(b * b0 * b1)
}

/// The row distribution of a design. For Exp1 rows are `MVN(0, Sigma)`; for
/// Exp2 a row is `X2' z` scaled by `Sigma^{1/2}` with per-row standard
/// normal factors `z`, so the latent loading `X2 Sigma^{1/2}` is part of the
/// law and is shared between a training design and its validation sets.
enum DesignLaw {
    Exp1 { p: usize, sqrt_sigma: Option<DenseMatrix> },
    Exp2 { loading: DenseMatrix },
}

impl DesignLaw {
    /// Draws the law (for Exp2 this consumes the loading factors) and then a
    /// training design of `m` rows from it.
    fn draw(config: &ExperimentConfig, rng: &mut impl Rng) -> Result<(DenseMatrix, Self)> {
        match config.experiment {
            Experiment::Exp1 => {
                let sqrt_sigma = if config.rho == 0.0 {
                    None
                } else {
                    Some(covariance_sqrt(config.p, config.rho)?)
                };
                let law = DesignLaw::Exp1 { p: config.p, sqrt_sigma };
                let x = law.sample(config.m, rng)?;
                Ok((x, law))
            }
            Experiment::Exp2 => {
                let q = config.design_rank();
                let x2 = gen_noise(q, config.p, 1.0, rng);
                let loading = if config.rho == 0.0 {
                    x2
                } else {
                    x2 * covariance_sqrt(config.p, config.rho)?
                };
                let law = DesignLaw::Exp2 { loading };
                let x = law.sample(config.m, rng)?;
                Ok((x, law))
            }
        }
    }

    /// Samples `m` fresh rows from the law.
    fn sample(&self, m: usize, rng: &mut impl Rng) -> Result<DenseMatrix> {
        match self {
            DesignLaw::Exp1 { p, sqrt_sigma } => {
                let z = gen_noise(m, *p, 1.0, rng);
                Ok(match sqrt_sigma {
                    None => z,
                    Some(s) => z * s,
                })
            }
            DesignLaw::Exp2 { loading } => {
                let q = loading.nrows();
                let p = loading.ncols();
                for attempt in 0..16 {
                    let x1 = gen_noise(m, q, 1.0, rng);
                    let x = x1 * loading;
                    if thin_svd(&x)?.rank(default_rank_tol(m, p)) == q.min(m) {
                        return Ok(x);
                    }
                    log::warn!("Exp2 sample draw {attempt} was rank deficient; redrawing");
                }
                Err(Error::NumericalFailure(
                    "could not sample a full-factor-rank Exp2 design in 16 attempts".into(),
                ))
            }
        }
    }
}

/// Mean after removing `floor(fraction * len)` smallest and largest values.
pub fn trimmed_mean(values: &[f64], trim_fraction_per_tail: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&trim_fraction_per_tail) {
        return Err(Error::OutOfRange(format!(
            "trim fraction must lie in [0, 0.5), got {trim_fraction_per_tail}"
        )));
    }
    let cut = (trim_fraction_per_tail * values.len() as f64).floor() as usize;
    if values.len() <= 2 * cut {
        return Err(Error::EmptyAfterTrim {
            n: values.len(),
            fraction: trim_fraction_per_tail,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let kept = &sorted[cut..sorted.len() - cut];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// `d_r(XA) / (sqrt(q) + sqrt(n))`. `xa_singular` holds the nonincreasing
/// singular values of the signal; indices past the end count as zero.
pub fn snr(xa_singular: &[f64], r: usize, q: usize, n: usize) -> f64 {
    assert!(r >= 1, "rank must be at least 1");
    let d_r = xa_singular.get(r - 1).copied().unwrap_or(0.0);
    d_r / ((q as f64).sqrt() + (n as f64).sqrt())
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Log-spaced grid between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && points >= 2);
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (ln_lo + (ln_hi - ln_lo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Per-replication result for one estimator.
#[derive(Debug, Clone)]
struct EstimatorOutcome {
    rank: usize,
    mse_xa: f64,
    mse_a: f64,
    tuning: f64,
    converged: bool,
}

struct ReplicationOutcome {
    snr: f64,
    by_estimator: Vec<(Estimator, EstimatorOutcome)>,
}

fn squared_errors(
    config: &ExperimentConfig,
    xa: &DenseMatrix,
    a: &DenseMatrix,
    coefficients: &DenseMatrix,
    fitted_signal: &DenseMatrix,
) -> (f64, f64) {
    let mn = (config.m * config.n) as f64;
    let pn = (config.p * config.n) as f64;
    let mse_xa = 100.0 * (xa - fitted_signal).norm_squared() / mn;
    let mse_a = 100.0 * (a - coefficients).norm_squared() / pn;
    (mse_xa, mse_a)
}

fn run_replication(config: &ExperimentConfig, replication: usize) -> Result<ReplicationOutcome> {
    let n = config.n;
    let (x, law) = DesignLaw::draw(config, &mut replication_stream(config.seed, replication, STREAM_DESIGN))?;
    let a = gen_coefficients(
        config.p,
        n,
        config.r,
        config.b,
        &mut replication_stream(config.seed, replication, STREAM_COEF),
    )?;
    let e = gen_noise(
        config.m,
        n,
        config.sigma,
        &mut replication_stream(config.seed, replication, STREAM_NOISE),
    );
    let xa = &x * &a;
    let y = &xa + &e;

    let design = design_summary(&x, default_rank_tol(config.m, config.p))?;
    let q = design.rank_q;
    let snr_value = snr(&thin_svd(&xa)?.d, config.r, q, n);
    let problem = RscProblem::with_design(design, &x, &y)?;

    // Validation data: same design law, same coefficients, fresh noise.
    let m_val = config.validation_multiplier * config.m;
    let x_val = law.sample(m_val, &mut replication_stream(config.seed, replication, STREAM_VAL_DESIGN))?;
    let y_val = &x_val * &a
        + gen_noise(m_val, n, config.sigma, &mut replication_stream(config.seed, replication, STREAM_VAL_NOISE));
    let val_error = |coefficients: &DenseMatrix| (&y_val - &x_val * coefficients).norm_squared();

    let mut by_estimator = Vec::with_capacity(4);

    // RSC with the adaptive penalty.
    let s2 = noise_variance(problem.design(), &y)?;
    let mu_adapt = adaptive_mu(s2, n, q, config.penalty_constant).max(f64::MIN_POSITIVE);
    let adaptive = problem.fit(mu_adapt)?;
    {
        let fitted = &x * &adaptive.coefficients;
        let (mse_xa, mse_a) = squared_errors(config, &xa, &a, &adaptive.coefficients, &fitted);
        by_estimator.push((
            Estimator::RscAdaptive,
            EstimatorOutcome {
                rank: adaptive.selected_rank,
                mse_xa,
                mse_a,
                tuning: mu_adapt,
                converged: true,
            },
        ));
    }

    // Validation-tuned RSC: evaluate each rank reachable on the penalty grid.
    {
        let positives: Vec<f64> = problem.eigenvalues().iter().copied().filter(|&v| v > 0.0).collect();
        let (mut best_mu, mut best_k) = (f64::NAN, 0usize);
        let mut best_err = f64::INFINITY;
        if positives.is_empty() {
            best_mu = f64::MIN_POSITIVE;
        } else {
            let lo = positives.last().unwrap() / 2.0;
            let hi = positives[0] * 2.0;
            let mut seen: Vec<Option<f64>> = vec![None; problem.max_rank() + 1];
            for mu in log_grid(lo, hi, config.grid_points) {
                let k = select_rank(problem.eigenvalues(), mu).min(problem.max_rank());
                let err = match seen[k] {
                    Some(e) => e,
                    None => {
                        let e = val_error(&problem.restricted_or_zero(k)?.b_k);
                        seen[k] = Some(e);
                        e
                    }
                };
                if err < best_err {
                    best_err = err;
                    best_mu = mu;
                    best_k = k;
                }
            }
        }
        let fit = problem.restricted_or_zero(best_k)?;
        let (mse_xa, mse_a) = squared_errors(config, &xa, &a, &fit.b_k, &fit.fitted);
        by_estimator.push((
            Estimator::RscValidated,
            EstimatorOutcome {
                rank: best_k,
                mse_xa,
                mse_a,
                tuning: best_mu,
                converged: true,
            },
        ));
    }

    // Validation-tuned NNP and its calibrated correction, sharing one sweep
    // of the penalty grid with warm starts from large tau downward.
    {
        let solver = NnpSolver::new(&x, &y, SolverOptions::default())?;
        let tau_max = solver.tau_max()?.max(f64::MIN_POSITIVE);
        let mut taus = log_grid(tau_max * 1e-4, tau_max, config.grid_points);
        taus.reverse();

        struct GridPoint {
            tau: f64,
            raw_rank: usize,
            raw_err: f64,
            raw_mse: (f64, f64),
            calibrated_k: usize,
            cal_err: f64,
            cal_mse: (f64, f64),
        }
        let mut converged_points: Vec<GridPoint> = Vec::new();
        let mut warm: Option<DenseMatrix> = None;
        let mut cal_cache: Vec<Option<(f64, (f64, f64))>> = vec![None; problem.max_rank() + 1];
        for tau in taus {
            let fit = solver.solve(tau, warm.as_ref())?;
            warm = Some(fit.coefficients.clone());
            if !fit.converged {
                log::warn!(
                    "replication {replication}: NNP solve at tau = {tau:.4e} did not converge (kkt {:.3e})",
                    fit.kkt_residual
                );
                continue;
            }
            let raw_rank = thin_svd(&fit.coefficients)?.rank(default_rank_tol(config.p, n));
            let raw_err = val_error(&fit.coefficients);
            let fitted = &x * &fit.coefficients;
            let raw_mse = squared_errors(config, &xa, &a, &fit.coefficients, &fitted);
            let k = calibrated_rank(solver.gram(), &fit.coefficients, tau)?.min(problem.max_rank());
            let (cal_err, cal_mse) = match cal_cache[k] {
                Some(cached) => cached,
                None => {
                    let cal = problem.restricted_or_zero(k)?;
                    let entry = (val_error(&cal.b_k), squared_errors(config, &xa, &a, &cal.b_k, &cal.fitted));
                    cal_cache[k] = Some(entry);
                    entry
                }
            };
            converged_points.push(GridPoint {
                tau,
                raw_rank,
                raw_err,
                raw_mse,
                calibrated_k: k,
                cal_err,
                cal_mse,
            });
        }

        let nnp_best = converged_points
            .iter()
            .min_by(|a, b| a.raw_err.partial_cmp(&b.raw_err).unwrap());
        by_estimator.push((
            Estimator::NnpValidated,
            match nnp_best {
                Some(point) => EstimatorOutcome {
                    rank: point.raw_rank,
                    mse_xa: point.raw_mse.0,
                    mse_a: point.raw_mse.1,
                    tuning: point.tau,
                    converged: true,
                },
                None => EstimatorOutcome {
                    rank: 0,
                    mse_xa: f64::NAN,
                    mse_a: f64::NAN,
                    tuning: f64::NAN,
                    converged: false,
                },
            },
        ));

        let cal_best = converged_points
            .iter()
            .min_by(|a, b| a.cal_err.partial_cmp(&b.cal_err).unwrap());
        by_estimator.push((
            Estimator::NnpCalibratedValidated,
            match cal_best {
                Some(point) => EstimatorOutcome {
                    rank: point.calibrated_k,
                    mse_xa: point.cal_mse.0,
                    mse_a: point.cal_mse.1,
                    tuning: point.tau,
                    converged: true,
                },
                None => EstimatorOutcome {
                    rank: 0,
                    mse_xa: f64::NAN,
                    mse_a: f64::NAN,
                    tuning: f64::NAN,
                    converged: false,
                },
            },
        ));
    }

    Ok(ReplicationOutcome { snr: snr_value, by_estimator })
}

/// Runs every replication of one scenario and aggregates per-estimator
/// summaries. Replications are independent and run in parallel; results are
/// merged in replication order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ScenarioResult> {
    config.validate()?;
    let outcomes: Vec<ReplicationOutcome> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, rep))
        .collect::<Result<Vec<_>>>()?;

    let mut details = Vec::new();
    for (rep, outcome) in outcomes.iter().enumerate() {
        for (estimator, result) in &outcome.by_estimator {
            details.push(ReplicationRecord {
                replication: rep,
                estimator: *estimator,
                rank: result.rank,
                mse_xa: result.mse_xa,
                mse_a: result.mse_a,
                tuning: result.tuning,
                converged: result.converged,
            });
        }
    }

    let snr_mean = outcomes.iter().map(|o| o.snr).sum::<f64>() / outcomes.len() as f64;
    let mut summaries = Vec::new();
    for estimator in Estimator::ALL {
        let results: Vec<&EstimatorOutcome> = outcomes
            .iter()
            .flat_map(|o| o.by_estimator.iter())
            .filter(|(e, _)| *e == estimator)
            .map(|(_, r)| r)
            .collect();
        let converged: Vec<&&EstimatorOutcome> = results.iter().filter(|r| r.converged).collect();
        let failures = results.len() - converged.len();
        if converged.is_empty() {
            return Err(Error::NumericalFailure(format!(
                "estimator {estimator} failed to converge on every replication"
            )));
        }
        let mse_xa_values: Vec<f64> = converged.iter().map(|r| r.mse_xa).collect();
        let mse_a_values: Vec<f64> = converged.iter().map(|r| r.mse_a).collect();
        let mut ranks: Vec<f64> = converged.iter().map(|r| r.rank as f64).collect();
        let hits = converged.iter().filter(|r| r.rank == config.r).count();
        summaries.push(SummaryRow {
            estimator,
            mse_xa: trimmed_mean(&mse_xa_values, config.trim)?,
            mse_a: trimmed_mean(&mse_a_values, config.trim)?,
            rank_median: median(&mut ranks),
            rrp: 100.0 * hits as f64 / converged.len() as f64,
            snr: snr_mean,
            failures,
            replications: config.replications,
        });
    }

    Ok(ScenarioResult { config: config.clone(), summaries, details })
}

/// Runs every scenario of a study.
pub fn run_study(study: &StudyConfig) -> Result<Vec<ScenarioResult>> {
    study.scenarios()?.iter().map(run_experiment).collect()
}

/// Headered CSV with one row per scenario and estimator.
pub fn summary_csv(results: &[ScenarioResult]) -> String {
    let mut out = String::from(
        "experiment,m,p,n,r,q,rho,b,sigma,seed,estimator,mse_xa,mse_a,re,rrp,snr,failures,replications\n",
    );
    for result in results {
        let c = &result.config;
        let experiment = match c.experiment {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
        };
        for row in &result.summaries {
            out.push_str(&format!(
                "{experiment},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{},{},{:.4},{},{}\n",
                c.m,
                c.p,
                c.n,
                c.r,
                c.design_rank(),
                c.rho,
                c.b,
                c.sigma,
                c.seed,
                row.estimator,
                row.mse_xa,
                row.mse_a,
                row.rank_median,
                row.rrp,
                row.snr,
                row.failures,
                row.replications,
            ));
        }
    }
    out
}

/// Headered CSV with one row per replication and estimator.
pub fn details_csv(results: &[ScenarioResult]) -> String {
    let mut out = String::from("experiment,rho,b,seed,replication,estimator,rank,mse_xa,mse_a,tuning,converged\n");
    for result in results {
        let c = &result.config;
        let experiment = match c.experiment {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
        };
        for d in &result.details {
            out.push_str(&format!(
                "{experiment},{},{},{},{},{},{},{:.6},{:.6},{:.6e},{}\n",
                c.rho, c.b, c.seed, d.replication, d.estimator, d.rank, d.mse_xa, d.mse_a, d.tuning, d.converged,
            ));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Solution-path study (tuning-parameter sweeps for both estimator families).
// ---------------------------------------------------------------------------

/// One point of the rank-selection path.
#[derive(Debug, Clone, Serialize)]
pub struct RscPathPoint {
    pub mu: f64,
    pub selected_rank: usize,
    /// `100 |XA - X A^|_F^2 / (mn)`.
    pub mse_xa: f64,
    /// Per-entry squared prediction error on the validation set.
    pub validation_mse: f64,
}

/// One point of the nuclear-norm path.
#[derive(Debug, Clone, Serialize)]
pub struct NnpPathPoint {
    pub tau: f64,
    /// Numerical rank of the penalized estimate.
    pub rank: usize,
    /// Calibrated rank read off `M A~` at this penalty.
    pub calibrated_rank: usize,
    pub mse_xa: f64,
    pub validation_mse: f64,
    /// Calibrated counterpart (restricted fit at the calibrated rank).
    pub calibrated_mse_xa: f64,
    pub calibrated_validation_mse: f64,
    pub converged: bool,
}

/// Tuning sweeps of both estimators on one simulated instance.
#[derive(Debug, Clone, Serialize)]
pub struct PathStudy {
    pub rsc: Vec<RscPathPoint>,
    pub nnp: Vec<NnpPathPoint>,
    /// Index into `rsc` minimizing validation error.
    pub rsc_optimum: usize,
    /// Index into `nnp` minimizing validation error of the penalized
    /// estimate (converged points only).
    pub nnp_optimum: usize,
}

/// Sweeps both tuning parameters on a single instance drawn from the
/// scenario (replication stream 0).
pub fn path_study(config: &ExperimentConfig) -> Result<PathStudy> {
    config.validate()?;
    let n = config.n;
    let (x, law) = DesignLaw::draw(config, &mut replication_stream(config.seed, 0, STREAM_DESIGN))?;
    let a = gen_coefficients(config.p, n, config.r, config.b, &mut replication_stream(config.seed, 0, STREAM_COEF))?;
    let e = gen_noise(config.m, n, config.sigma, &mut replication_stream(config.seed, 0, STREAM_NOISE));
    let xa = &x * &a;
    let y = &xa + &e;
    let m_val = config.validation_multiplier * config.m;
    let x_val = law.sample(m_val, &mut replication_stream(config.seed, 0, STREAM_VAL_DESIGN))?;
    let y_val = &x_val * &a + gen_noise(m_val, n, config.sigma, &mut replication_stream(config.seed, 0, STREAM_VAL_NOISE));
    let val_scale = (m_val * n) as f64;
    let val_error = |coefficients: &DenseMatrix| (&y_val - &x_val * coefficients).norm_squared() / val_scale;

    let problem = RscProblem::new(&x, &y)?;

    let positives: Vec<f64> = problem.eigenvalues().iter().copied().filter(|&v| v > 0.0).collect();
    if positives.is_empty() {
        return Err(Error::NumericalFailure("instance has no signal: Y'PY = 0".into()));
    }
    let mu_grid = log_grid(positives.last().unwrap() / 2.0, positives[0] * 2.0, config.grid_points);
    let mut rsc_points = Vec::with_capacity(mu_grid.len());
    for &mu in &mu_grid {
        let k = select_rank(problem.eigenvalues(), mu).min(problem.max_rank());
        let fit = problem.restricted_or_zero(k)?;
        let (mse_xa, _) = squared_errors(config, &xa, &a, &fit.b_k, &fit.fitted);
        rsc_points.push(RscPathPoint {
            mu,
            selected_rank: k,
            mse_xa,
            validation_mse: val_error(&fit.b_k),
        });
    }
    let rsc_optimum = rsc_points
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.validation_mse.partial_cmp(&b.validation_mse).unwrap())
        .map(|(i, _)| i)
        .unwrap();

    let solver = NnpSolver::new(&x, &y, SolverOptions::default())?;
    let tau_max = solver.tau_max()?.max(f64::MIN_POSITIVE);
    let mut taus = log_grid(tau_max * 1e-4, tau_max, config.grid_points);
    taus.reverse();
    let mut nnp_points = Vec::with_capacity(taus.len());
    let mut warm: Option<DenseMatrix> = None;
    for tau in taus {
        let fit = solver.solve(tau, warm.as_ref())?;
        warm = Some(fit.coefficients.clone());
        let rank = thin_svd(&fit.coefficients)?.rank(default_rank_tol(config.p, n));
        let k = calibrated_rank(solver.gram(), &fit.coefficients, tau)?.min(problem.max_rank());
        let cal = problem.restricted_or_zero(k)?;
        let fitted = &x * &fit.coefficients;
        let (mse_xa, _) = squared_errors(config, &xa, &a, &fit.coefficients, &fitted);
        let (cal_mse_xa, _) = squared_errors(config, &xa, &a, &cal.b_k, &cal.fitted);
        nnp_points.push(NnpPathPoint {
            tau,
            rank,
            calibrated_rank: k,
            mse_xa,
            validation_mse: val_error(&fit.coefficients),
            calibrated_mse_xa: cal_mse_xa,
            calibrated_validation_mse: val_error(&cal.b_k),
            converged: fit.converged,
        });
    }
    // Paths read more naturally with tau increasing.
    nnp_points.reverse();
    let nnp_optimum = nnp_points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.converged)
        .min_by(|(_, a), (_, b)| a.validation_mse.partial_cmp(&b.validation_mse).unwrap())
        .map(|(i, _)| i)
        .ok_or_else(|| Error::NumericalFailure("no converged point on the nuclear-norm path".into()))?;

    Ok(PathStudy { rsc: rsc_points, nnp: nnp_points, rsc_optimum, nnp_optimum })
}

/// CSV for the rank-selection path.
pub fn rsc_path_csv(study: &PathStudy) -> String {
    let mut out = String::from("mu,selected_rank,mse_xa,validation_mse\n");
    for p in &study.rsc {
        out.push_str(&format!(
            "{:.8e},{},{:.6},{:.6}\n",
            p.mu, p.selected_rank, p.mse_xa, p.validation_mse
        ));
    }
    out
}

/// CSV for the nuclear-norm path.
pub fn nnp_path_csv(study: &PathStudy) -> String {
    let mut out = String::from(
        "tau,rank,calibrated_rank,mse_xa,validation_mse,calibrated_mse_xa,calibrated_validation_mse,converged\n",
    );
    for p in &study.nnp {
        out.push_str(&format!(
            "{:.8e},{},{},{:.6},{:.6},{:.6},{:.6},{}\n",
            p.tau,
            p.rank,
            p.calibrated_rank,
            p.mse_xa,
            p.validation_mse,
            p.calibrated_mse_xa,
            p.calibrated_validation_mse,
            p.converged
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Tightness study: the upper edge of the rank-recovering penalty interval
// against the squared smallest signal singular value.
// ---------------------------------------------------------------------------

/// Scenario for one tightness run; Experiment-1 style design.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TightnessScenario {
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub r: usize,
    pub b: f64,
    pub rho: f64,
    pub sigma: f64,
}

/// One run of the tightness study. `mu1 = d_r^2(XA)`; `mu_u` is the upper
/// endpoint of the penalty interval recovering the true rank, detected on
/// the search grid and reported exactly (it equals `lambda_r(Y'PY)`), or
/// absent when no grid point recovers the rank. The event indicators are the
/// lower/upper misselection bounds evaluated at the reference penalty
/// `2 sigma^2 (n + q)`; per run they nest: `p1 <= misselected <= p2`.
#[derive(Debug, Clone, Serialize)]
pub struct TightnessRun {
    pub scenario: TightnessScenario,
    pub mu1: f64,
    pub mu_u: Option<f64>,
    pub snr: f64,
    pub p1_event: bool,
    pub p2_event: bool,
    pub misselected: bool,
}

/// Default scenario sampler: varies signal strength, correlation, rank and
/// dimensions the way the benchmark experiments do.
pub fn default_tightness_sampler() -> impl FnMut(&mut ChaCha8Rng) -> TightnessScenario {
    |rng: &mut ChaCha8Rng| {
        let p = rng.random_range(8..=25usize);
        let m = rng.random_range((3 * p).max(40)..=(6 * p).max(60));
        let n = rng.random_range(8..=25usize);
        let r = rng.random_range(2..=n.min(p).min(12));
        let b = 0.15 + rng.random::<f64>() * 0.35;
        let rho = *[0.1, 0.5, 0.9].get(rng.random_range(0..3usize)).unwrap();
        TightnessScenario { m, p, n, r, b, rho, sigma: 1.0 }
    }
}

/// Runs the tightness study: for each run, draw `(X, A)` from the sampled
/// scenario (rescaling the signal so the signal-to-noise ratio exceeds one,
/// the regime under study), draw one response, and search the penalty grid
/// for the interval recovering the true rank.
///
/// `mu_grid` fixes one absolute grid for all runs; `None` builds a per-run
/// grid of `grid_points` log-spaced values spanning the positive spectrum of
/// `Y'PY`. A grid too coarse to land in the recovery interval yields an
/// absent `mu_u` for that run (reported, never dropped).
pub fn tightness_study(
    n_runs: usize,
    mut scenario_sampler: impl FnMut(&mut ChaCha8Rng) -> TightnessScenario,
    mu_grid: Option<&[f64]>,
    grid_points: usize,
    rng_spec: RngSpec,
) -> Result<Vec<TightnessRun>> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("tightness study needs at least one run".into()));
    }
    if grid_points < 2 {
        return Err(Error::InvalidConfig("grid_points must be at least 2".into()));
    }
    const MIN_SNR: f64 = 1.05;
    let mut runs = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let base = run as u64 * STREAMS_PER_REPLICATION;
        let scenario = scenario_sampler(&mut rng_spec.stream(base).rng());
        let x = gen_design_exp1(
            scenario.m,
            scenario.p,
            scenario.rho,
            &mut rng_spec.stream(base + 1).rng(),
        )?;
        let mut a = gen_coefficients(
            scenario.p,
            scenario.n,
            scenario.r,
            scenario.b,
            &mut rng_spec.stream(base + 2).rng(),
        )?;
        let design = design_summary(&x, default_rank_tol(scenario.m, scenario.p))?;
        let q = design.rank_q;

        let mut xa = &x * &a;
        let mut d_xa = thin_svd(&xa)?.d;
        let mut snr_value = snr(&d_xa, scenario.r, q, scenario.n);
        if scenario.sigma > 0.0 && snr_value < MIN_SNR {
            // The study premise is SNR above one; scale the signal up to the
            // floor (A is linear in b).
            let scale = MIN_SNR / snr_value;
            a *= scale;
            xa *= scale;
            for d in d_xa.iter_mut() {
                *d *= scale;
            }
            snr_value = MIN_SNR;
        }
        let mu1 = d_xa[scenario.r - 1].powi(2);

        let e = gen_noise(scenario.m, scenario.n, scenario.sigma, &mut rng_spec.stream(base + 3).rng());
        let y = &xa + &e;
        let problem = RscProblem::with_design(design.clone(), &x, &y)?;
        let lambda = problem.eigenvalues();

        let recovered = {
            let hits = |grid: &[f64]| {
                grid.iter()
                    .any(|&mu| mu > 0.0 && select_rank(lambda, mu) == scenario.r)
            };
            match mu_grid {
                Some(grid) => hits(grid),
                None => {
                    let positives: Vec<f64> = lambda.iter().copied().filter(|&v| v > 0.0).collect();
                    !positives.is_empty()
                        && hits(&log_grid(positives.last().unwrap() / 2.0, positives[0] * 2.0, grid_points))
                }
            }
        };
        // The recovery interval is (lambda_{r+1}, lambda_r]; once the grid
        // lands inside it, its exact supremum is lambda_r.
        let mu_u = if recovered { Some(lambda[scenario.r - 1]) } else { None };

        // Misselection-bound events at the reference penalty.
        let mu_check = (2.0 * scenario.sigma * scenario.sigma * (scenario.n + q) as f64).max(f64::MIN_POSITIVE);
        let root_mu = mu_check.sqrt();
        let d_pe = thin_svd(&(&design.projector * &e))?.d;
        let d1_pe = d_pe.first().copied().unwrap_or(0.0);
        let d_2r1_pe = d_pe.get(2 * scenario.r).copied().unwrap_or(0.0);
        let d_r_xa = d_xa[scenario.r - 1];
        let p1_event = root_mu <= d_2r1_pe || d1_pe < root_mu - d_r_xa;
        let p2_event = d1_pe >= root_mu.min(d_r_xa - root_mu);
        let misselected = select_rank(lambda, mu_check) != scenario.r;

        runs.push(TightnessRun {
            scenario,
            mu1,
            mu_u,
            snr: snr_value,
            p1_event,
            p2_event,
            misselected,
        });
    }
    Ok(runs)
}

/// CSV scatter of the tightness runs.
pub fn tightness_csv(runs: &[TightnessRun]) -> String {
    let mut out = String::from("m,p,n,r,b,rho,sigma,snr,mu1,mu_u,p1_event,p2_event,misselected\n");
    for run in runs {
        let s = &run.scenario;
        let mu_u = run.mu_u.map(|v| format!("{v:.8e}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.4},{:.8e},{},{},{},{}\n",
            s.m, s.p, s.n, s.r, s.b, s.rho, s.sigma, run.snr, run.mu1, mu_u, run.p1_event, run.p2_event, run.misselected
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_exp1() -> ExperimentConfig {
        ExperimentConfig {
            experiment: Experiment::Exp1,
            m: 30,
            p: 6,
            n: 6,
            r: 2,
            q: None,
            rho: 0.1,
            b: 0.5,
            sigma: 1.0,
            replications: 4,
            seed: 99,
            validation_multiplier: 3,
            trim: 0.0,
            grid_points: 12,
            penalty_constant: 2.0,
        }
    }

    #[test]
    fn config_validation_catches_shape_errors() {
        let mut c = tiny_exp1();
        c.m = 6;
        assert!(c.validate().is_err());
        let mut c = tiny_exp1();
        c.experiment = Experiment::Exp2;
        assert!(c.validate().is_err(), "Exp2 without q");
        c.q = Some(10);
        assert!(c.validate().is_err(), "q >= m");
        let mut c = tiny_exp1();
        c.r = 7;
        assert!(c.validate().is_err());
        let mut c = tiny_exp1();
        c.rho = 1.0;
        assert!(c.validate().is_err());
        assert!(tiny_exp1().validate().is_ok());
    }

    #[test]
    fn exp1_design_is_deterministic_per_stream() {
        let mut rng1 = RngSpec::new(7, 0).rng();
        let mut rng2 = RngSpec::new(7, 0).rng();
        let x1 = gen_design_exp1(5, 3, 0.5, &mut rng1).unwrap();
        let x2 = gen_design_exp1(5, 3, 0.5, &mut rng2).unwrap();
        assert_eq!(x1, x2);
    }

    #[test]
    fn exp1_zero_correlation_moments() {
        // Column variance near one at m = 2000.
        let mut rng = RngSpec::new(11, 0).rng();
        let x = gen_design_exp1(2000, 3, 0.0, &mut rng).unwrap();
        for j in 0..3 {
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / 2000.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 1999.0;
            assert!((0.9..1.1).contains(&var), "column {j} variance {var}");
        }
    }

    #[test]
    fn exp1_high_correlation_moments() {
        // Sample correlation of adjacent columns near rho at m = 5000.
        let mut rng = RngSpec::new(13, 0).rng();
        let x = gen_design_exp1(5000, 2, 0.9, &mut rng).unwrap();
        let (a, b) = (x.column(0), x.column(1));
        let mean_a = a.iter().sum::<f64>() / 5000.0;
        let mean_b = b.iter().sum::<f64>() / 5000.0;
        let mut cov = 0.0;
        let mut var_a = 0.0;
        let mut var_b = 0.0;
        for i in 0..5000 {
            cov += (a[i] - mean_a) * (b[i] - mean_b);
            var_a += (a[i] - mean_a).powi(2);
            var_b += (b[i] - mean_b).powi(2);
        }
        let corr = cov / (var_a.sqrt() * var_b.sqrt());
        assert!((0.87..0.93).contains(&corr), "correlation {corr}");
    }

    #[test]
    fn exp2_design_has_rank_q() {
        let mut rng = RngSpec::new(17, 0).rng();
        let x = gen_design_exp2(20, 100, 10, 0.5, &mut rng).unwrap();
        assert_eq!(x.shape(), (20, 100));
        let rank = thin_svd(&x).unwrap().rank(default_rank_tol(20, 100));
        assert_eq!(rank, 10);
        let summary = design_summary(&x, default_rank_tol(20, 100)).unwrap();
        assert_eq!(summary.rank_q, 10);
        // q = m - 1 boundary.
        let mut rng = RngSpec::new(17, 1).rng();
        let x = gen_design_exp2(6, 8, 5, 0.0, &mut rng).unwrap();
        assert_eq!(thin_svd(&x).unwrap().rank(default_rank_tol(6, 8)), 5);
    }

    #[test]
    fn coefficients_scale_linearly_in_b() {
        let a1 = gen_coefficients(5, 4, 2, 0.3, &mut RngSpec::new(3, 0).rng()).unwrap();
        let a2 = gen_coefficients(5, 4, 2, 0.6, &mut RngSpec::new(3, 0).rng()).unwrap();
        assert!((2.0 * &a1 - &a2).norm() <= 1e-12 * a2.norm());
        let zero = gen_coefficients(5, 4, 2, 0.0, &mut RngSpec::new(3, 0).rng()).unwrap();
        assert_eq!(zero, DenseMatrix::zeros(5, 4));
    }

    #[test]
    fn coefficients_have_rank_r() {
        let a = gen_coefficients(6, 5, 3, 1.0, &mut RngSpec::new(5, 0).rng()).unwrap();
        assert_eq!(thin_svd(&a).unwrap().rank(default_rank_tol(6, 5)), 3);
        // r = 1 gives proportional columns.
        let a = gen_coefficients(4, 3, 1, 1.0, &mut RngSpec::new(5, 1).rng()).unwrap();
        assert_eq!(thin_svd(&a).unwrap().rank(default_rank_tol(4, 3)), 1);
    }

    #[test]
    fn trimmed_mean_examples() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(trimmed_mean(&v, 0.2).unwrap(), 3.0);
        assert_eq!(trimmed_mean(&v, 0.0).unwrap(), 3.0);
        let constant = [2.5; 7];
        assert_eq!(trimmed_mean(&constant, 0.4).unwrap(), 2.5);
        // Single value survives any admissible fraction.
        assert_eq!(trimmed_mean(&[4.0], 0.4).unwrap(), 4.0);
        assert!(trimmed_mean(&[], 0.1).is_err());
        assert!(trimmed_mean(&v, 0.5).is_err());
    }

    #[test]
    fn snr_examples() {
        let q = 9;
        let n = 16;
        // d_r = sqrt(q) + sqrt(n) gives exactly one.
        assert!((snr(&[10.0, 7.0], 2, q, n) - 1.0).abs() <= 1e-12);
        assert_eq!(snr(&[10.0, 0.0], 2, q, n), 0.0);
        // Index past the end counts as zero.
        assert_eq!(snr(&[10.0], 2, q, n), 0.0);
    }

    #[test]
    fn median_midpoint_convention() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn study_expands_scenario_grid() {
        let study = StudyConfig {
            experiment: Experiment::Exp1,
            m: 30,
            p: 6,
            n: 6,
            r: 2,
            q: None,
            rho: vec![0.1, 0.5],
            b: vec![0.2, 0.4, 0.6],
            sigma: 1.0,
            replications: 2,
            seed: 5,
            validation_multiplier: 2,
            trim: 0.0,
            grid_points: 10,
            penalty_constant: 2.0,
        };
        let scenarios = study.scenarios().unwrap();
        assert_eq!(scenarios.len(), 6);
        let seeds: std::collections::BTreeSet<u64> = scenarios.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 6, "scenario seeds must be distinct");
    }

    #[test]
    fn run_experiment_is_reproducible() {
        let config = tiny_exp1();
        let first = run_experiment(&config).unwrap();
        let second = run_experiment(&config).unwrap();
        for (a, b) in first.summaries.iter().zip(second.summaries.iter()) {
            assert_eq!(a.estimator, b.estimator);
            assert_eq!(a.mse_xa.to_bits(), b.mse_xa.to_bits());
            assert_eq!(a.mse_a.to_bits(), b.mse_a.to_bits());
            assert_eq!(a.rank_median, b.rank_median);
            assert_eq!(a.rrp, b.rrp);
        }
        assert_eq!(first.details.len(), 4 * config.replications);
    }

    #[test]
    fn estimators_coincide_when_ranks_match() {
        // When the calibrated correction selects the same rank as RSC, both
        // return the same restricted fit.
        let config = tiny_exp1();
        let result = run_experiment(&config).unwrap();
        for rep in 0..config.replications {
            let by_est: std::collections::HashMap<_, _> = result
                .details
                .iter()
                .filter(|d| d.replication == rep)
                .map(|d| (d.estimator, d))
                .collect();
            let rsc = by_est[&Estimator::RscAdaptive];
            let cal = by_est[&Estimator::NnpCalibratedValidated];
            if rsc.rank == cal.rank {
                assert!(
                    (rsc.mse_xa - cal.mse_xa).abs() <= 1e-8 * rsc.mse_xa.max(1.0),
                    "rep {rep}: same rank, different fits"
                );
            }
        }
    }

    #[test]
    fn validated_rsc_does_not_lose_to_adaptive() {
        let config = ExperimentConfig { replications: 8, ..tiny_exp1() };
        let result = run_experiment(&config).unwrap();
        let row = |e: Estimator| result.summaries.iter().find(|s| s.estimator == e).unwrap().mse_xa;
        let adaptive = row(Estimator::RscAdaptive);
        let validated = row(Estimator::RscValidated);
        // The tuned optimum cannot be worse beyond Monte Carlo noise.
        assert!(validated <= adaptive * 1.25 + 0.5, "validated {validated} vs adaptive {adaptive}");
    }

    #[test]
    fn null_model_selects_rank_zero() {
        // Pure noise with the adaptive penalty: rank 0 in at least 90% of
        // replications.
        let config = ExperimentConfig { b: 0.0, replications: 10, ..tiny_exp1() };
        let result = run_experiment(&config).unwrap();
        let zeros = result
            .details
            .iter()
            .filter(|d| d.estimator == Estimator::RscAdaptive && d.rank == 0)
            .count();
        assert!(zeros >= 9, "only {zeros}/10 null replications selected rank 0");
    }

    #[test]
    fn summary_csv_shape() {
        let config = ExperimentConfig { replications: 2, ..tiny_exp1() };
        let result = run_experiment(&config).unwrap();
        let csv = summary_csv(std::slice::from_ref(&result));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 4);
        assert!(lines[0].starts_with("experiment,m,p,n,r,q,rho,b,sigma,seed,estimator"));
        assert!(lines[1].contains("RSC_adap"));
        let details = details_csv(std::slice::from_ref(&result));
        assert_eq!(details.lines().count(), 1 + 4 * 2);
    }

    #[test]
    fn single_replication_is_degenerate_but_valid() {
        let config = ExperimentConfig { replications: 1, trim: 0.4, ..tiny_exp1() };
        let result = run_experiment(&config).unwrap();
        assert!(result.summaries.iter().all(|s| s.mse_xa.is_finite()));
    }

    #[test]
    fn path_study_shapes_and_monotone_rank() {
        let config = tiny_exp1();
        let study = path_study(&config).unwrap();
        assert_eq!(study.rsc.len(), config.grid_points);
        assert_eq!(study.nnp.len(), config.grid_points);
        // Rank steps down as mu grows.
        assert!(study.rsc.windows(2).all(|w| w[0].selected_rank >= w[1].selected_rank));
        assert!(study.rsc_optimum < study.rsc.len());
        assert!(study.nnp_optimum < study.nnp.len());
        let csv = rsc_path_csv(&study);
        assert_eq!(csv.lines().count(), 1 + config.grid_points);
        let csv = nnp_path_csv(&study);
        assert_eq!(csv.lines().count(), 1 + config.grid_points);
    }

    #[test]
    fn tightness_noiseless_hits_signal_eigenvalue() {
        let sampler = |_: &mut ChaCha8Rng| TightnessScenario {
            m: 40,
            p: 8,
            n: 8,
            r: 3,
            b: 0.5,
            rho: 0.1,
            sigma: 0.0,
        };
        let runs = tightness_study(5, sampler, None, 40, RngSpec::new(21, 0)).unwrap();
        for run in &runs {
            let mu_u = run.mu_u.expect("noiseless run must recover the rank");
            assert!(
                (mu_u - run.mu1).abs() <= 1e-8 * run.mu1,
                "mu_u {mu_u} vs mu1 {}",
                run.mu1
            );
            assert!(!run.misselected);
        }
    }

    #[test]
    fn tightness_respects_grid_resolution() {
        // With noise the recovery interval is (lambda_{r+1}, lambda_r], well
        // inside the spectrum; a grid that skips it entirely cannot report
        // an upper endpoint.
        let sampler = |_: &mut ChaCha8Rng| TightnessScenario {
            m: 40,
            p: 8,
            n: 8,
            r: 3,
            b: 0.5,
            rho: 0.1,
            sigma: 1.0,
        };
        let runs = tightness_study(3, sampler, Some(&[1e-12, 1e30]), 2, RngSpec::new(23, 0)).unwrap();
        assert!(runs.iter().all(|r| r.mu_u.is_none()));
    }

    #[test]
    fn tightness_events_nest() {
        let runs = tightness_study(25, default_tightness_sampler(), None, 30, RngSpec::new(29, 0)).unwrap();
        for run in &runs {
            assert!(run.snr > 1.0);
            if run.p1_event {
                assert!(run.misselected, "lower-bound event without misselection");
            }
            if run.misselected {
                assert!(run.p2_event, "misselection outside the upper-bound event");
            }
        }
        let csv = tightness_csv(&runs);
        assert_eq!(csv.lines().count(), 26);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1.0, 100.0, 3);
        assert!((g[0] - 1.0).abs() <= 1e-12);
        assert!((g[1] - 10.0).abs() <= 1e-9);
        assert!((g[2] - 100.0).abs() <= 1e-9);
    }

    #[test]
    fn config_json_round_trip() {
        let config = tiny_exp1();
        let json = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.m, config.m);
        assert_eq!(back.seed, config.seed);
        // Defaults fill in missing fields.
        let minimal: ExperimentConfig = serde_json::from_str(
            r#"{"experiment":"exp1","m":30,"p":6,"n":6,"r":2,"rho":0.1,"b":0.5,"seed":1}"#,
        )
        .unwrap();
        assert_eq!(minimal.replications, 20);
        assert_eq!(minimal.sigma, 1.0);
        assert_eq!(minimal.validation_multiplier, 10);
        assert!((minimal.trim - 0.4).abs() < 1e-12);
        let _ = ChaCha8Rng::seed_from_u64(0);
    }
}

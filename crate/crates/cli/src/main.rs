//! `redrank`: fit reduced-rank regression estimators on CSV matrices, run
//! the benchmark simulation studies, sweep tuning-parameter paths, run the
//! penalty-tightness study, and verify the probabilistic bounds by Monte
//! Carlo.
//!
//! Exit codes: 0 on success, 2 on usage or input errors (malformed CSV,
//! mismatched dimensions, invalid configuration), 3 on numerical failures
//! (a report is still written when possible). Every randomized command
//! prints the resolved seed so runs can be replayed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use redrank_core::bounds::{
    mc_adaptive_penalty, mc_consistency, mc_oracle_nnp, mc_oracle_rsc, mc_projected_noise,
    mc_rank_calibration, mc_subgaussian_projected_noise, mc_tail_bounds, BoundCheckReport, MuRule,
    NoiseSpec, SubGaussianFamily,
};
use redrank_core::io::{read_matrix_csv, write_matrix_csv};
use redrank_core::linalg::{default_rank_tol, singular_values};
use redrank_core::nnp::{calibrated_rank, NnpSolver, SolverOptions};
use redrank_core::rng::RngSpec;
use redrank_core::rsc::{adaptive_mu, noise_variance, PenaltyConfig, RscProblem};
use redrank_core::simulate::{
    default_tightness_sampler, details_csv, nnp_path_csv, path_study, rsc_path_csv, run_study,
    summary_csv, tightness_csv, tightness_study, Experiment, ExperimentConfig, StudyConfig,
};
use redrank_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "redrank", version, about = "Reduced-rank multivariate regression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one estimator on CSV matrices and write coefficients plus a JSON report.
    Fit(FitArgs),
    /// Run a simulation study from a JSON config and write summary/detail CSVs.
    Simulate(SimulateArgs),
    /// Sweep both tuning parameters on one simulated instance and write path CSVs.
    Path(PathArgs),
    /// Run the penalty-tightness study and write the scatter CSV plus a JSON report.
    Tightness(TightnessArgs),
    /// Run Monte Carlo verification of the theoretical bounds.
    Bounds(BoundsArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Rank-penalized least squares at a fixed penalty (requires --mu).
    Rsc,
    /// Rank-penalized least squares with the data-adaptive penalty.
    RscAdaptive,
    /// Nuclear-norm penalized least squares (requires --tau).
    Nnp,
    /// Nuclear-norm fit followed by rank calibration and a restricted refit.
    NnpCalibrated,
}

#[derive(Args)]
struct FitArgs {
    /// Design matrix CSV (m x p, headerless).
    #[arg(long)]
    x: PathBuf,
    /// Response matrix CSV (m x n, headerless).
    #[arg(long)]
    y: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Rank penalty (squared-signal units).
    #[arg(long)]
    mu: Option<f64>,
    /// Nuclear-norm penalty.
    #[arg(long)]
    tau: Option<f64>,
    /// Multiplier of the adaptive penalty `constant * S^2 * (n + q)`.
    #[arg(long, default_value_t = 2.0)]
    constant: f64,
    /// Solver iteration cap (nuclear-norm methods).
    #[arg(long, default_value_t = 5000)]
    max_iterations: usize,
    /// Relative objective stall tolerance (nuclear-norm methods).
    #[arg(long, default_value_t = 1e-9)]
    rel_objective_tol: f64,
    /// KKT residual tolerance for declaring convergence.
    #[arg(long, default_value_t = 1e-4)]
    kkt_tol: f64,
    /// Output directory for coefficients.csv and report.json.
    #[arg(long, default_value = "redrank-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study configuration JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "redrank-out")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replication count.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the per-tail trim fraction.
    #[arg(long)]
    trim: Option<f64>,
    /// Override the validation-set size multiplier.
    #[arg(long)]
    validation_multiplier: Option<usize>,
    /// Override the tuning-grid size.
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Args)]
struct PathArgs {
    /// Scenario configuration JSON (single scenario).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "redrank-out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Args)]
struct TightnessArgs {
    /// Number of (X, A) pairs to construct.
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    grid_points: usize,
    #[arg(long, default_value = "redrank-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BoundCheck {
    /// Gaussian projected-noise mean and tail.
    ProjectedNoise,
    /// SubGaussian projected-noise exceedance and mean.
    SubgaussianNoise,
    /// Rank-selection consistency.
    Consistency,
    /// Oracle inequalities of the rank-penalized estimator.
    OracleRsc,
    /// Oracle inequality of the nuclear-norm estimator.
    OracleNnp,
    /// Estimated-variance penalty against the known-variance one.
    AdaptivePenalty,
    /// Second-moment and chi-square tail bounds.
    TailBounds,
    /// Calibrated rank recovery on constructed instances.
    RankCalibration,
    /// Everything above.
    All,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, value_enum)]
    check: BoundCheck,
    /// Trials per check (per-check defaults when omitted).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Scenario JSON for the checks that simulate a regression model;
    /// built-in benchmark shapes when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    xi: f64,
    /// Separation parameter for the estimated-variance penalty.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value = "redrank-out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Path(args) => cmd_path(&args),
        Command::Tightness(args) => cmd_tightness(&args),
        Command::Bounds(args) => cmd_bounds(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Usage and input problems exit with 2, numerical failures with 3.
fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::NumericalFailure(_) => 3,
        _ => 2,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CoreError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CoreError::InvalidConfig(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CoreError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CoreError::InvalidConfig(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn ensure_out_dir(dir: &Path) -> Result<(), CoreError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    method: &'static str,
    m: usize,
    p: usize,
    n: usize,
    design_rank: usize,
    selected_rank: Option<usize>,
    mu: Option<f64>,
    tau: Option<f64>,
    s2: Option<f64>,
    objective: f64,
    /// Eigenvalues of `Y'PY` (rank-penalized methods).
    #[serde(skip_serializing_if = "Option::is_none")]
    eigenvalues: Option<Vec<f64>>,
    /// Singular values of the fitted coefficient matrix.
    coefficient_singular_values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kkt_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
}

fn cmd_fit(args: &FitArgs) -> Result<u8, CoreError> {
    let x = read_matrix_csv(&args.x)?;
    let y = read_matrix_csv(&args.y)?;
    if x.nrows() != y.nrows() {
        return Err(CoreError::DimensionMismatch {
            context: "X and Y row counts differ",
            left_rows: x.nrows(),
            left_cols: x.ncols(),
            right_rows: y.nrows(),
            right_cols: y.ncols(),
        });
    }
    let (m, p) = x.shape();
    let n = y.ncols();
    ensure_out_dir(&args.out)?;

    let opts = SolverOptions {
        max_iterations: args.max_iterations,
        rel_objective_tol: args.rel_objective_tol,
        kkt_tol_factor: args.kkt_tol,
        step_size: None,
    };

    let mut exit = 0u8;
    let (coefficients, report) = match args.method {
        Method::Rsc | Method::RscAdaptive => {
            let problem = RscProblem::new(&x, &y)?;
            let q = problem.design().rank_q;
            let (mu, s2) = match args.method {
                Method::Rsc => {
                    let mu = args.mu.ok_or_else(|| {
                        CoreError::InvalidConfig("--method rsc requires --mu".into())
                    })?;
                    (mu, None)
                }
                _ => {
                    let s2 = noise_variance(problem.design(), &y)?;
                    let mu = adaptive_mu(s2, n, q, args.constant).max(f64::MIN_POSITIVE);
                    (mu, Some(s2))
                }
            };
            let fit = problem.fit(mu)?;
            let spectrum = singular_values(&fit.coefficients)?;
            let report = FitReport {
                method: if args.method == Method::Rsc { "rsc" } else { "rsc-adaptive" },
                m,
                p,
                n,
                design_rank: q,
                selected_rank: Some(fit.selected_rank),
                mu: Some(mu),
                tau: None,
                s2,
                objective: fit.objective,
                eigenvalues: Some(fit.eigenvalues.clone()),
                coefficient_singular_values: spectrum,
                kkt_residual: None,
                iterations: None,
                converged: None,
            };
            (fit.coefficients, report)
        }
        Method::Nnp => {
            let tau = args.tau.ok_or_else(|| {
                CoreError::InvalidConfig("--method nnp requires --tau".into())
            })?;
            if tau == 0.0 {
                eprintln!("warning: tau = 0 is degenerate; fitting unpenalized least squares");
            }
            let solver = NnpSolver::new(&x, &y, opts)?;
            let fit = solver.solve(tau, None)?;
            if !fit.converged {
                eprintln!(
                    "warning: solver did not converge (kkt residual {:.3e} after {} iterations)",
                    fit.kkt_residual, fit.iterations
                );
                exit = 3;
            }
            let spectrum = singular_values(&fit.coefficients)?;
            let design_spectrum = singular_values(&x)?;
            let rank_of = |d: &[f64], rows: usize, cols: usize| {
                let top = d.first().copied().unwrap_or(0.0);
                d.iter().filter(|&&v| v > default_rank_tol(rows, cols) * top).count()
            };
            let report = FitReport {
                method: "nnp",
                m,
                p,
                n,
                design_rank: rank_of(&design_spectrum, m, p),
                selected_rank: Some(rank_of(&spectrum, p, n)),
                mu: None,
                tau: Some(tau),
                s2: None,
                objective: fit.objective,
                eigenvalues: None,
                coefficient_singular_values: spectrum,
                kkt_residual: Some(fit.kkt_residual),
                iterations: Some(fit.iterations),
                converged: Some(fit.converged),
            };
            (fit.coefficients, report)
        }
        Method::NnpCalibrated => {
            let tau = args.tau.ok_or_else(|| {
                CoreError::InvalidConfig("--method nnp-calibrated requires --tau > 0".into())
            })?;
            let solver = NnpSolver::new(&x, &y, opts)?;
            let fit = solver.solve(tau, None)?;
            if !fit.converged {
                eprintln!(
                    "warning: solver did not converge (kkt residual {:.3e} after {} iterations)",
                    fit.kkt_residual, fit.iterations
                );
                exit = 3;
            }
            let problem = RscProblem::new(&x, &y)?;
            let k = calibrated_rank(solver.gram(), &fit.coefficients, tau)?.min(problem.max_rank());
            let refit = problem.restricted_or_zero(k)?;
            let spectrum = singular_values(&refit.b_k)?;
            let objective = (&y - &refit.fitted).norm_squared();
            let report = FitReport {
                method: "nnp-calibrated",
                m,
                p,
                n,
                design_rank: problem.design().rank_q,
                selected_rank: Some(k),
                mu: None,
                tau: Some(tau),
                s2: None,
                objective,
                eigenvalues: Some(problem.eigenvalues().to_vec()),
                coefficient_singular_values: spectrum,
                kkt_residual: Some(fit.kkt_residual),
                iterations: Some(fit.iterations),
                converged: Some(fit.converged),
            };
            (refit.b_k, report)
        }
    };

    write_matrix_csv(&args.out.join("coefficients.csv"), &coefficients)?;
    write_json(&args.out.join("report.json"), &report)?;
    println!(
        "wrote {} and {} (selected rank {})",
        args.out.join("coefficients.csv").display(),
        args.out.join("report.json").display(),
        report.selected_rank.unwrap_or(0)
    );
    Ok(exit)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, CoreError> {
    let mut study: StudyConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        study.seed = seed;
    }
    if let Some(reps) = args.reps {
        study.replications = reps;
    }
    if let Some(trim) = args.trim {
        study.trim = trim;
    }
    if let Some(v) = args.validation_multiplier {
        study.validation_multiplier = v;
    }
    if let Some(g) = args.grid_points {
        study.grid_points = g;
    }
    println!("resolved seed: {}", study.seed);
    ensure_out_dir(&args.out)?;
    write_json(&args.out.join("config.json"), &study)?;

    let results = run_study(&study)?;
    fs::write(args.out.join("summary.csv"), summary_csv(&results))?;
    fs::write(args.out.join("details.csv"), details_csv(&results))?;

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<5} {:>5} {:>5} {:<9} {:>9} {:>8} {:>6} {:>6} {:>6}",
        "exp", "b", "rho", "estimator", "mse_xa", "mse_a", "re", "rrp", "snr"
    );
    for result in &results {
        let c = &result.config;
        let exp = match c.experiment {
            Experiment::Exp1 => "exp1",
            Experiment::Exp2 => "exp2",
        };
        for row in &result.summaries {
            let _ = writeln!(
                table,
                "{:<5} {:>5} {:>5} {:<9} {:>9.2} {:>8.2} {:>6} {:>6} {:>6.2}",
                exp, c.b, c.rho, row.estimator.label(), row.mse_xa, row.mse_a, row.rank_median, row.rrp, row.snr
            );
        }
    }
    print!("{table}");
    println!(
        "wrote {} and {}",
        args.out.join("summary.csv").display(),
        args.out.join("details.csv").display()
    );
    Ok(0)
}

fn cmd_path(args: &PathArgs) -> Result<u8, CoreError> {
    let mut config: ExperimentConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(g) = args.grid_points {
        config.grid_points = g;
    }
    println!("resolved seed: {}", config.seed);
    ensure_out_dir(&args.out)?;
    let study = path_study(&config)?;
    fs::write(args.out.join("rsc_path.csv"), rsc_path_csv(&study))?;
    fs::write(args.out.join("nnp_path.csv"), nnp_path_csv(&study))?;
    let rsc_opt = &study.rsc[study.rsc_optimum];
    let nnp_opt = &study.nnp[study.nnp_optimum];
    println!(
        "rank-selection path: validation optimum at mu = {:.4e} with rank {}",
        rsc_opt.mu, rsc_opt.selected_rank
    );
    println!(
        "nuclear-norm path: validation optimum at tau = {:.4e} with rank {} (calibrated {})",
        nnp_opt.tau, nnp_opt.rank, nnp_opt.calibrated_rank
    );
    println!(
        "wrote {} and {}",
        args.out.join("rsc_path.csv").display(),
        args.out.join("nnp_path.csv").display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct TightnessReport {
    runs: usize,
    recovered: usize,
    median_ratio: Option<f64>,
    p1_frequency: f64,
    p2_frequency: f64,
    misselection_frequency: f64,
}

fn cmd_tightness(args: &TightnessArgs) -> Result<u8, CoreError> {
    println!("resolved seed: {}", args.seed);
    ensure_out_dir(&args.out)?;
    let runs = tightness_study(
        args.runs,
        default_tightness_sampler(),
        None,
        args.grid_points,
        RngSpec::new(args.seed, 0),
    )?;
    fs::write(args.out.join("tightness.csv"), tightness_csv(&runs))?;

    let mut ratios: Vec<f64> = runs.iter().filter_map(|r| r.mu_u.map(|u| u / r.mu1)).collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ratio = if ratios.is_empty() {
        None
    } else if ratios.len() % 2 == 1 {
        Some(ratios[ratios.len() / 2])
    } else {
        Some(0.5 * (ratios[ratios.len() / 2 - 1] + ratios[ratios.len() / 2]))
    };
    let freq = |f: fn(&redrank_core::simulate::TightnessRun) -> bool| {
        runs.iter().filter(|r| f(r)).count() as f64 / runs.len() as f64
    };
    let report = TightnessReport {
        runs: runs.len(),
        recovered: ratios.len(),
        median_ratio,
        p1_frequency: freq(|r| r.p1_event),
        p2_frequency: freq(|r| r.p2_event),
        misselection_frequency: freq(|r| r.misselected),
    };
    write_json(&args.out.join("tightness_report.json"), &report)?;
    println!(
        "{} runs, {} recovered the rank on the grid, median mu_u/mu1 = {}",
        report.runs,
        report.recovered,
        report.median_ratio.map(|r| format!("{r:.3}")).unwrap_or_else(|| "n/a".into())
    );
    println!(
        "misselection-bound frequencies at the reference penalty: lower {:.3} <= observed {:.3} <= upper {:.3}",
        report.p1_frequency, report.misselection_frequency, report.p2_frequency
    );
    println!(
        "wrote {} and {}",
        args.out.join("tightness.csv").display(),
        args.out.join("tightness_report.json").display()
    );
    Ok(0)
}

fn benchmark_exp1() -> ExperimentConfig {
    ExperimentConfig {
        experiment: Experiment::Exp1,
        m: 100,
        p: 25,
        n: 25,
        r: 10,
        q: None,
        rho: 0.1,
        b: 0.3,
        sigma: 1.0,
        replications: 20,
        seed: 0,
        validation_multiplier: 10,
        trim: 0.4,
        grid_points: 50,
        penalty_constant: 2.0,
    }
}

fn benchmark_exp2() -> ExperimentConfig {
    ExperimentConfig {
        experiment: Experiment::Exp2,
        m: 20,
        p: 100,
        n: 25,
        r: 5,
        q: Some(10),
        rho: 0.5,
        b: 0.3,
        sigma: 1.0,
        replications: 20,
        seed: 0,
        validation_multiplier: 10,
        trim: 0.4,
        grid_points: 50,
        penalty_constant: 2.0,
    }
}

fn cmd_bounds(args: &BoundsArgs) -> Result<u8, CoreError> {
    println!("resolved seed: {}", args.seed);
    ensure_out_dir(&args.out)?;
    let scenario: Option<ExperimentConfig> = match &args.config {
        Some(path) => Some(read_json(path)?),
        None => None,
    };
    let penalty = PenaltyConfig {
        theta: args.theta,
        xi: args.xi,
        delta: args.delta,
        constant: 2.0,
    };
    let checks: Vec<BoundCheck> = match args.check {
        BoundCheck::All => vec![
            BoundCheck::ProjectedNoise,
            BoundCheck::SubgaussianNoise,
            BoundCheck::Consistency,
            BoundCheck::OracleRsc,
            BoundCheck::OracleNnp,
            BoundCheck::AdaptivePenalty,
            BoundCheck::TailBounds,
            BoundCheck::RankCalibration,
        ],
        single => vec![single],
    };

    let mut all_reports: Vec<BoundCheckReport> = Vec::new();
    for check in checks {
        let trials = args.trials;
        let seed = args.seed;
        let mut reports = match check {
            BoundCheck::ProjectedNoise => mc_projected_noise(
                100,
                25,
                25,
                &NoiseSpec::Gaussian { sigma: 1.0 },
                trials.unwrap_or(1000),
                seed,
            )?,
            BoundCheck::SubgaussianNoise => mc_subgaussian_projected_noise(
                50,
                10,
                10,
                &NoiseSpec::SubGaussian { gamma: 2.0, family: SubGaussianFamily::RademacherScaled },
                trials.unwrap_or(1000),
                seed,
            )?,
            BoundCheck::Consistency => {
                let config = scenario.clone().unwrap_or_else(benchmark_exp2);
                vec![mc_consistency(
                    &config,
                    MuRule::Adaptive { constant: 2.0 },
                    trials.unwrap_or(100),
                    seed,
                )?]
            }
            BoundCheck::OracleRsc => {
                let config = scenario.clone().unwrap_or_else(benchmark_exp1);
                mc_oracle_rsc(&config, &PenaltyConfig { delta: 1.0, ..penalty }, trials.unwrap_or(200), seed)?
            }
            BoundCheck::OracleNnp => {
                let config = scenario.clone().unwrap_or_else(benchmark_exp1);
                mc_oracle_nnp(&config, args.theta, &SolverOptions::default(), trials.unwrap_or(100), seed)?
            }
            BoundCheck::AdaptivePenalty => {
                let config = scenario.clone().unwrap_or_else(benchmark_exp1);
                mc_adaptive_penalty(&config, &penalty, trials.unwrap_or(200), seed)?
            }
            BoundCheck::TailBounds => mc_tail_bounds(trials.unwrap_or(10_000), seed)?,
            BoundCheck::RankCalibration => vec![mc_rank_calibration(
                30,
                10,
                8,
                3,
                args.theta,
                &SolverOptions::default(),
                trials.unwrap_or(100),
                seed,
            )?],
            BoundCheck::All => unreachable!(),
        };
        for report in &reports {
            println!("{}", report.render());
        }
        all_reports.append(&mut reports);
    }
    write_json(&args.out.join("bound_reports.json"), &all_reports)?;
    let failures = all_reports.iter().filter(|r| !r.pass).count();
    println!(
        "{} checks, {} failed; wrote {}",
        all_reports.len(),
        failures,
        args.out.join("bound_reports.json").display()
    );
    Ok(0)
}

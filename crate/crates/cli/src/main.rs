//! `dfm`: simulate panels, fit dynamic factor models, evaluate fits and run
//! Monte Carlo experiments.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dfm_core::dgp::{draw_dgp, DgpConfig, Innovation};
use dfm_core::diagnostics::{self, AsvarEstimator, AsvarMode, ZAccumulator, BURN_IN};
use dfm_core::em::{em_fit, EmConfig, EmResult, LoglikCriterion};
use dfm_core::extensions::{ecm_fit, ridge_fit, RidgeConfig};
use dfm_core::io;
use dfm_core::montecarlo::{fmt_f64, run_grid, Experiment, REPORT_FILES, TABLE4_SMALL};
use dfm_core::panel::{ModelDims, Panel};
use dfm_core::pca::{pc_estimate_with, PcOptions};
use dfm_core::DfmError;
use log::info;
use nalgebra::{DMatrix, DVector};
use serde_json::json;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "dfm", version, about = "Dynamic factor models by EM and Kalman smoothing")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a panel from the simulation design.
    Simulate(SimulateArgs),
    /// Estimate a model by EM (PC starting values).
    Fit(FitArgs),
    /// Principal-component estimates only.
    Pc(PcArgs),
    /// Compare a fit against a simulated truth.
    Eval(EvalArgs),
    /// Run a Monte Carlo experiment file.
    Montecarlo(McArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace files in a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long = "T")]
    t: usize,
    #[arg(long, default_value_t = 4)]
    r: usize,
    #[arg(long, default_value_t = 4)]
    q: usize,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    #[arg(long, default_value = "gaussian")]
    innovation: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Replication stream of the seed.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum IdioCovArg {
    Diag,
    Ridge,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Marginal,
    Joint,
}

#[derive(Args, Debug)]
struct TransformArgs {
    /// Demean every series first.
    #[arg(long)]
    center: bool,
    /// Demean and scale every series to unit variance first.
    #[arg(long)]
    standardize: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Panel CSV, one row per period.
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    r: usize,
    #[arg(long)]
    q: usize,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Ridge on HH' inside the smoother.
    #[arg(long, default_value_t = 0.0)]
    vartheta_ks: f64,
    /// Eigenvalue shift in the H update (default 0.1 / T).
    #[arg(long)]
    vartheta_mstep: Option<f64>,
    #[arg(long, value_enum, default_value_t = IdioCovArg::Diag)]
    idio_cov: IdioCovArg,
    /// Ridge penalty for --idio-cov ridge (default n^2 / T).
    #[arg(long)]
    ridge_mu: Option<f64>,
    /// AR(1) idiosyncratic components with GLS loadings.
    #[arg(long)]
    idio_ar: bool,
    #[arg(long, value_enum, default_value_t = CriterionArg::Marginal)]
    criterion: CriterionArg,
    /// Do not stop on a log-likelihood decrease.
    #[arg(long)]
    allow_decrease: bool,
    #[command(flatten)]
    transform: TransformArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct PcArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    r: usize,
    #[arg(long)]
    q: usize,
    /// Skip demeaning inside the eigendecomposition.
    #[arg(long)]
    no_center: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    truth: PathBuf,
    /// Directory written by `fit` or `pc`.
    #[arg(long)]
    fit: PathBuf,
    /// Also write the results as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct McArgs {
    /// Experiment file (TOML).
    #[arg(long, conflicts_with = "bundled", required_unless_present = "bundled")]
    experiment: Option<PathBuf>,
    /// Name of a bundled experiment (table4_small).
    #[arg(long)]
    bundled: Option<String>,
    /// Override the number of replications.
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads.
    #[arg(long, env = "DFM_PARALLEL")]
    parallel: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Numerical(String),
}

impl From<DfmError> for Failure {
    fn from(e: DfmError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn flag_error(flag: &str, e: DfmError) -> Failure {
    Failure::Validation(format!("invalid {flag}: {e}"))
}

fn prepare_out(out: &OutArgs, files: &[&str]) -> Result<(), Failure> {
    if out.out.exists() {
        if !out.out.is_dir() {
            return Err(Failure::Validation(format!("--out {} is not a directory", out.out.display())));
        }
        let clash = files.iter().any(|f| out.out.join(f).exists());
        let non_empty = fs::read_dir(&out.out).map_err(DfmError::from)?.next().is_some();
        if (clash || non_empty) && !out.overwrite {
            return Err(Failure::Validation(format!(
                "--out {} is not empty; pass --overwrite to replace its contents",
                out.out.display()
            )));
        }
    }
    fs::create_dir_all(&out.out).map_err(DfmError::from)?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    let dims = ModelDims::new(a.n, a.t, a.r, a.q).map_err(|e| flag_error("--n/--T/--r/--q", e))?;
    let mut cfg = DgpConfig::new(dims, a.seed);
    cfg.innovation = a.innovation.parse::<Innovation>().map_err(|e| flag_error("--innovation", e))?;
    cfg.tau = a.tau;
    cfg.delta = a.delta;
    cfg.theta = a.theta;
    cfg.mu = a.mu;
    cfg.stream = a.stream;
    for (flag, probe) in [
        ("--mu", DgpConfig { mu: a.mu, ..DgpConfig::new(dims, 0) }),
        ("--theta", DgpConfig { theta: a.theta, ..DgpConfig::new(dims, 0) }),
        ("--tau", DgpConfig { tau: a.tau, ..DgpConfig::new(dims, 0) }),
        ("--delta", DgpConfig { delta: a.delta, ..DgpConfig::new(dims, 0) }),
    ] {
        probe.validate().map_err(|e| flag_error(flag, e))?;
    }
    let files = ["panel.csv", "factors.csv", "common.csv", "params.toml", "manifest.json"];
    prepare_out(&a.out, &files)?;
    let draw = draw_dgp(&cfg)?;
    let dir = &a.out.out;
    io::write_panel(&dir.join("panel.csv"), &draw.panel)?;
    io::write_time_matrix(&dir.join("factors.csv"), &io::series_names("f", a.r), draw.factors.values())?;
    io::write_time_matrix(&dir.join("common.csv"), &io::series_names("x", a.n), &draw.chi)?;
    io::write_params(&dir.join("params.toml"), &draw.params)?;
    let manifest = json!({
        "command": "simulate",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!("wrote {} x {} panel to {}", a.t, a.n, dir.display());
    Ok(ExitCode::SUCCESS)
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), Failure> {
    fs::write(path, serde_json::to_string_pretty(v).expect("serializable") + "\n").map_err(DfmError::from)?;
    Ok(())
}

/// Applies the requested transforms; returns the transformed panel, the means
/// and the scales needed to map fitted values back.
fn transform(panel: Panel, t: &TransformArgs) -> (Panel, DVector<f64>, DVector<f64>) {
    let n = panel.n();
    if !(t.center || t.standardize) {
        return (panel, DVector::zeros(n), DVector::from_element(n, 1.0));
    }
    let (centered, means) = panel.demeaned();
    if t.standardize {
        let (scaled, scales) = centered.standardized();
        (scaled, means, scales)
    } else {
        (centered, means, DVector::from_element(n, 1.0))
    }
}

fn back_transform(m: &DMatrix<f64>, means: &DVector<f64>, scales: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, t| m[(i, t)] * scales[i] + means[i])
}

fn write_fit_outputs(dir: &Path, fit: &EmResult, means: &DVector<f64>, scales: &DVector<f64>) -> Result<(), Failure> {
    let n = fit.params.n();
    let r = fit.params.r();
    io::write_params(&dir.join("params.toml"), &fit.params)?;
    io::write_time_matrix(&dir.join("factors.csv"), &io::series_names("f", r), fit.factors())?;
    let common = back_transform(&fit.common_component(), means, scales);
    io::write_time_matrix(&dir.join("common.csv"), &io::series_names("x", n), &common)?;
    let mut trace = String::from("iteration,loglik,criterion\n");
    for (k, (l, c)) in fit.loglik_trace.iter().zip(&fit.criterion_trace).enumerate() {
        trace.push_str(&format!("{k},{},{}\n", fmt_f64(*l), fmt_f64(*c)));
    }
    fs::write(dir.join("loglik.csv"), trace).map_err(DfmError::from)?;
    let mode = if fit.ar_state.is_some() {
        AsvarMode::GlsV
    } else if fit.ridge_mu.is_some() {
        AsvarMode::RidgeW
    } else {
        AsvarMode::DiagOls
    };
    match AsvarEstimator::new(fit, mode) {
        Ok(est) => {
            let t_len = fit.factors().ncols();
            let var = DMatrix::from_fn(n, t_len, |i, t| est.variance(i, t) * scales[i] * scales[i]);
            io::write_time_matrix(&dir.join("variance.csv"), &io::series_names("x", n), &var)?;
        }
        Err(e) => log::warn!("asymptotic variances not written: {e}"),
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> CmdResult {
    let raw = io::read_panel(&a.panel).map_err(|e| flag_error("--panel", e))?;
    let dims = ModelDims::new(raw.n(), raw.len(), a.r, a.q).map_err(|e| flag_error("--r/--q", e))?;
    let config = EmConfig {
        epsilon: a.epsilon,
        max_iter: a.max_iter,
        vartheta_mstep: a.vartheta_mstep,
        vartheta_ks: a.vartheta_ks,
        criterion: match a.criterion {
            CriterionArg::Marginal => LoglikCriterion::Marginal,
            CriterionArg::Joint => LoglikCriterion::Joint,
        },
        enforce_ascent: !a.allow_decrease,
    };
    config.validate().map_err(|e| flag_error("--epsilon/--max-iter/--vartheta-*", e))?;
    if a.idio_ar && a.idio_cov == IdioCovArg::Ridge {
        return Err(Failure::Validation("--idio-ar cannot be combined with --idio-cov ridge".into()));
    }
    let files = ["params.toml", "factors.csv", "common.csv", "loglik.csv", "variance.csv", "summary.json"];
    prepare_out(&a.out, &files)?;
    let (panel, means, scales) = transform(raw, &a.transform);
    let fit = if a.idio_ar {
        ecm_fit(&panel, &dims, &config, None)?
    } else if a.idio_cov == IdioCovArg::Ridge {
        let ridge = match a.ridge_mu {
            Some(mu) => RidgeConfig::fixed(mu),
            None => RidgeConfig::default(),
        };
        ridge.validate().map_err(|e| flag_error("--ridge-mu", e))?;
        ridge_fit(&panel, &dims, &config, &ridge, None)?
    } else {
        em_fit(&panel, &dims, &config, None)?
    };
    let dir = &a.out.out;
    write_fit_outputs(dir, &fit, &means, &scales)?;
    let summary = json!({
        "command": "fit",
        "version": env!("CARGO_PKG_VERSION"),
        "panel": a.panel.display().to_string(),
        "n": dims.n, "T": dims.t, "r": dims.r, "q": dims.q,
        "iterations": fit.iters,
        "converged": fit.converged,
        "final_loglik": fit.final_loglik(),
        "epsilon": a.epsilon,
        "max_iter": a.max_iter,
        "idio_cov": format!("{:?}", a.idio_cov).to_lowercase(),
        "idio_ar": a.idio_ar,
        "ridge_mu": fit.ridge_mu,
        "centered": a.transform.center || a.transform.standardize,
        "standardized": a.transform.standardize,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!("iterations: {}", fit.iters);
    println!("final loglik: {}", fmt_f64(fit.final_loglik()));
    println!("converged: {}", fit.converged);
    if fit.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("EM stopped at --max-iter {} without meeting --epsilon {}", a.max_iter, a.epsilon);
        Ok(ExitCode::from(EXIT_NOT_CONVERGED))
    }
}

fn cmd_pc(a: &PcArgs) -> CmdResult {
    let panel = io::read_panel(&a.panel).map_err(|e| flag_error("--panel", e))?;
    ModelDims::new(panel.n(), panel.len(), a.r, a.q).map_err(|e| flag_error("--r/--q", e))?;
    let files = ["loadings.csv", "factors.csv", "common.csv", "eigenvalues.csv", "params.toml"];
    prepare_out(&a.out, &files)?;
    let est = pc_estimate_with(&panel, a.r, a.q, PcOptions { center: !a.no_center })?;
    let dir = &a.out.out;
    io::write_time_matrix(&dir.join("loadings.csv"), &io::series_names("f", a.r), &est.loadings.transpose())?;
    io::write_time_matrix(&dir.join("factors.csv"), &io::series_names("f", a.r), &est.factors)?;
    let ones = DVector::from_element(panel.n(), 1.0);
    let common = back_transform(&est.common_component(), &est.means, &ones);
    io::write_time_matrix(&dir.join("common.csv"), &io::series_names("x", panel.n()), &common)?;
    let eig: Vec<f64> = est.eigvals.iter().cloned().collect();
    io::write_vector(&dir.join("eigenvalues.csv"), "eigenvalue", &eig)?;
    io::write_params(&dir.join("params.toml"), &est.to_params(1e-12)?)?;
    println!("leading eigenvalues: {}", eig.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(", "));
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    let read = |dir: &Path, file: &str, flag: &str| {
        io::read_time_matrix(&dir.join(file)).map_err(|e| flag_error(flag, e))
    };
    let chi_true = read(&a.truth, "common.csv", "--truth")?;
    let f_true = read(&a.truth, "factors.csv", "--truth")?;
    let chi_est = read(&a.fit, "common.csv", "--fit")?;
    let f_est = read(&a.fit, "factors.csv", "--fit")?;
    let l_true = io::read_params(&a.truth.join("params.toml")).map_err(|e| flag_error("--truth", e))?.loadings;
    let l_est = io::read_params(&a.fit.join("params.toml")).map_err(|e| flag_error("--fit", e))?.loadings;
    let mse = diagnostics::common_mse(&chi_true, &chi_est).map_err(|e| flag_error("--fit", e))?;
    let trf = diagnostics::trace_statistic(&f_true.transpose(), &f_est.transpose())?;
    let trl = diagnostics::trace_statistic(&l_true, &l_est)?;
    println!("MSE: {}", fmt_f64(mse));
    println!("TR_F: {}", fmt_f64(trf));
    println!("TR_L: {}", fmt_f64(trl));
    let mut out = json!({ "mse": mse, "tr_f": trf, "tr_l": trl });
    let var_path = a.fit.join("variance.csv");
    if var_path.exists() {
        let var = io::read_time_matrix(&var_path).map_err(|e| flag_error("--fit", e))?;
        if var.shape() != chi_true.shape() {
            return Err(Failure::Validation("--fit variance.csv does not match the panel shape".into()));
        }
        let z = DMatrix::from_fn(var.nrows(), var.ncols(), |i, t| {
            (chi_est[(i, t)] - chi_true[(i, t)]) / var[(i, t)].sqrt()
        });
        let mut acc = ZAccumulator::default();
        acc.push_matrix(&z, BURN_IN);
        let table = acc.table();
        for (alpha, c) in table.alphas.iter().zip(&table.coverage) {
            println!("C({:.0}%): {}", alpha * 100.0, fmt_f64(*c));
        }
        println!("Z mean {} std {} skewness {} kurtosis {}", fmt_f64(table.mean), fmt_f64(table.std), fmt_f64(table.skewness), fmt_f64(table.kurtosis));
        out["coverage"] = serde_json::to_value(&table).expect("serializable");
    }
    if let Some(path) = &a.json {
        write_json(path, &out)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_montecarlo(a: &McArgs) -> CmdResult {
    let mut exp = match (&a.experiment, a.bundled.as_deref()) {
        (Some(path), _) => Experiment::from_file(path).map_err(|e| flag_error("--experiment", e))?,
        (None, Some("table4_small")) => Experiment::from_toml(TABLE4_SMALL)?,
        (None, Some(other)) => {
            return Err(Failure::Validation(format!(
                "invalid --bundled: unknown experiment '{other}' (available: table4_small)"
            )))
        }
        (None, None) => return Err(Failure::Validation("one of --experiment or --bundled is required".into())),
    };
    if let Some(b) = a.replications {
        if b == 0 {
            return Err(Failure::Validation("invalid --replications: must be at least 1".into()));
        }
        exp.replications = b;
    }
    let parallel = a
        .parallel
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if parallel == 0 {
        return Err(Failure::Validation("invalid --parallel: must be at least 1".into()));
    }
    prepare_out(&a.out, &REPORT_FILES)?;
    info!("running {} cells x {} replications on {parallel} threads", exp.cells.len(), exp.replications);
    let report = run_grid(&exp, parallel)?;
    report.write(&a.out.out)?;
    println!(
        "{} cells, {} replications each, {:.1}s; report in {}",
        report.cells.len(),
        report.replications,
        report.seconds,
        a.out.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Pc(a) => cmd_pc(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Montecarlo(a) => cmd_montecarlo(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

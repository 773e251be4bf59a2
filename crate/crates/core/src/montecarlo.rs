//! Monte Carlo experiments: simulate, estimate by EM and PC, and aggregate
//! into tables of trace statistics, MSEs, coverage and filter MSE traces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{draw_dgp, DgpConfig, Innovation};
use crate::diagnostics::{self, AsvarMode, CoverageTable, Histogram, ZAccumulator, BURN_IN};
use crate::em::{em_fit, EmConfig};
use crate::error::{DfmError, Result};
use crate::kalman::{self, InitState};
use crate::panel::{IdioCov, ModelDims};
use crate::pca::{pc_estimate_with, PcOptions};

/// Largest tolerated fraction of failed replications in a cell.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    /// EM and PC on every draw.
    #[default]
    Estimation,
    /// Filter MSE traces at the true parameters, no estimation.
    SteadyState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub name: String,
    pub kind: CellKind,
    pub dgp: DgpConfig,
    pub em: EmConfig,
    pub coverage: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub replications: usize,
    pub histogram: (f64, f64, f64),
    pub cells: Vec<CellSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellToml {
    name: Option<String>,
    kind: Option<CellKind>,
    n: Option<usize>,
    #[serde(rename = "T")]
    t: Option<usize>,
    r: Option<usize>,
    q: Option<usize>,
    tau: Option<f64>,
    delta: Option<f64>,
    theta: Option<f64>,
    mu: Option<f64>,
    innovation: Option<Innovation>,
    seed: Option<u64>,
    epsilon: Option<f64>,
    max_iter: Option<usize>,
    vartheta_ks: Option<f64>,
    vartheta_mstep: Option<f64>,
    coverage: Option<bool>,
}

impl CellToml {
    fn or(self, d: &CellToml) -> CellToml {
        CellToml {
            name: self.name,
            kind: self.kind.or(d.kind),
            n: self.n.or(d.n),
            t: self.t.or(d.t),
            r: self.r.or(d.r),
            q: self.q.or(d.q),
            tau: self.tau.or(d.tau),
            delta: self.delta.or(d.delta),
            theta: self.theta.or(d.theta),
            mu: self.mu.or(d.mu),
            innovation: self.innovation.or(d.innovation),
            seed: self.seed,
            epsilon: self.epsilon.or(d.epsilon),
            max_iter: self.max_iter.or(d.max_iter),
            vartheta_ks: self.vartheta_ks.or(d.vartheta_ks),
            vartheta_mstep: self.vartheta_mstep.or(d.vartheta_mstep),
            coverage: self.coverage.or(d.coverage),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentToml {
    name: String,
    seed: u64,
    replications: usize,
    #[serde(default)]
    histogram: Option<HistogramToml>,
    #[serde(default)]
    defaults: CellToml,
    #[serde(default)]
    cells: Vec<CellToml>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistogramToml {
    lo: f64,
    hi: f64,
    width: f64,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the `k`-th `[[cells]]` header, for messages about a whole cell.
fn cell_line(text: &str, k: usize) -> usize {
    let mut seen = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim_start().starts_with("[[cells]]") {
            if seen == k {
                return i + 1;
            }
            seen += 1;
        }
    }
    1
}

/// FNV-1a, used to give each named cell its own seed.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Experiment {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: ExperimentToml = toml::from_str(text).map_err(|e| DfmError::Parse {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
            message: e.message().to_string(),
        })?;
        if raw.replications == 0 {
            return Err(DfmError::Parse {
                line: text.lines().position(|l| l.trim_start().starts_with("replications")).map_or(1, |p| p + 1),
                message: "replications must be at least 1".into(),
            });
        }
        let histogram = match raw.histogram {
            Some(h) => (h.lo, h.hi, h.width),
            None => (-5.0, 5.0, 0.1),
        };
        Histogram::new(histogram.0, histogram.1, histogram.2)?;
        let mut cells = Vec::with_capacity(raw.cells.len());
        let mut names = std::collections::BTreeSet::new();
        for (k, cell) in raw.cells.into_iter().enumerate() {
            let line = cell_line(text, k);
            let spec = build_cell(cell.or(&raw.defaults), raw.seed).map_err(|e| DfmError::Parse {
                line,
                message: e.to_string(),
            })?;
            if !names.insert(spec.name.clone()) {
                return Err(DfmError::Parse {
                    line,
                    message: format!("duplicate cell name '{}'", spec.name),
                });
            }
            cells.push(spec);
        }
        Ok(Self {
            name: raw.name,
            seed: raw.seed,
            replications: raw.replications,
            histogram,
            cells,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

fn build_cell(c: CellToml, base_seed: u64) -> Result<CellSpec> {
    let missing = |what: &str| DfmError::InvalidConfig(format!("cell is missing '{what}'"));
    let n = c.n.ok_or_else(|| missing("n"))?;
    let t = c.t.ok_or_else(|| missing("T"))?;
    let r = c.r.ok_or_else(|| missing("r"))?;
    let q = c.q.ok_or_else(|| missing("q"))?;
    let dims = ModelDims::new(n, t, r, q)?;
    let innovation = c.innovation.unwrap_or_default();
    let name = c.name.unwrap_or_else(|| {
        format!(
            "n{n}_T{t}_r{r}_q{q}_tau{}_delta{}_{}",
            c.tau.unwrap_or(0.0),
            c.delta.unwrap_or(0.0),
            innovation
        )
    });
    let mut dgp = DgpConfig::new(dims, c.seed.unwrap_or(base_seed ^ fnv1a(&name)));
    dgp.tau = c.tau.unwrap_or(dgp.tau);
    dgp.delta = c.delta.unwrap_or(dgp.delta);
    dgp.theta = c.theta.unwrap_or(dgp.theta);
    dgp.mu = c.mu.unwrap_or(dgp.mu);
    dgp.innovation = innovation;
    dgp.validate()?;
    let mut em = EmConfig::default();
    em.epsilon = c.epsilon.unwrap_or(em.epsilon);
    em.max_iter = c.max_iter.unwrap_or(em.max_iter);
    em.vartheta_ks = c.vartheta_ks.unwrap_or(em.vartheta_ks);
    em.vartheta_mstep = c.vartheta_mstep.or(em.vartheta_mstep);
    em.validate()?;
    Ok(CellSpec {
        name,
        kind: c.kind.unwrap_or_default(),
        dgp,
        em,
        coverage: c.coverage.unwrap_or(true),
    })
}

/// Per-replication results of an estimation cell.
#[derive(Debug, Clone)]
struct Replication {
    mse_em: f64,
    mse_pc: f64,
    trf_em: f64,
    trf_pc: f64,
    trl_em: f64,
    trl_pc: f64,
    iters: usize,
    converged: bool,
    z: Option<ZAccumulator>,
}

/// Averages of the filter and smoother MSE traces over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyStateRows {
    pub init: f64,
    pub pred: Vec<f64>,
    pub filt: Vec<f64>,
    pub smooth: Vec<f64>,
    pub filt_scaled: Vec<f64>,
    pub smooth_scaled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationSummary {
    pub mse_em: f64,
    pub mse_pc: f64,
    pub rel_mse: f64,
    pub trf_em: f64,
    pub trf_pc: f64,
    pub rel_trf: f64,
    pub trl_em: f64,
    pub trl_pc: f64,
    pub rel_trl: f64,
    pub mean_iters: f64,
    pub converged: usize,
    pub coverage: Option<CoverageTable>,
    #[serde(skip)]
    pub histogram: Option<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub name: String,
    pub kind: CellKind,
    pub dgp: DgpConfig,
    pub replications: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
    pub estimation: Option<EstimationSummary>,
    pub steady_state: Option<SteadyStateRows>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub experiment: String,
    pub seed: u64,
    pub replications: usize,
    pub parallelism: usize,
    pub cells: Vec<CellReport>,
    #[serde(skip)]
    pub seconds: f64,
}

fn replicate(cell: &CellSpec, b: usize, histogram: (f64, f64, f64)) -> Result<Replication> {
    let mut cfg = cell.dgp;
    cfg.stream = b as u64;
    let draw = draw_dgp(&cfg)?;
    let dims = cfg.dims;
    let pc = pc_estimate_with(&draw.panel, dims.r, dims.q, PcOptions { center: false })?;
    let chi_pc = pc.common_component();
    let pc_factors_t = pc.factors.transpose();
    let pc_loadings = pc.loadings.clone();
    let fit = em_fit(&draw.panel, &dims, &cell.em, Some(pc))?;
    let chi_em = fit.common_component();
    let f_true = draw.factors.values().transpose();
    let z = if cell.coverage {
        let mut acc = ZAccumulator::new(
            &diagnostics::COVERAGE_ALPHAS,
            Histogram::new(histogram.0, histogram.1, histogram.2)?,
        );
        acc.push_matrix(&diagnostics::z_scores(&fit, &draw.chi, AsvarMode::DiagOls)?, BURN_IN);
        Some(acc)
    } else {
        None
    };
    Ok(Replication {
        mse_em: diagnostics::common_mse(&draw.chi, &chi_em)?,
        mse_pc: diagnostics::common_mse(&draw.chi, &chi_pc)?,
        trf_em: diagnostics::trace_statistic(&f_true, &fit.factors().transpose())?,
        trf_pc: diagnostics::trace_statistic(&f_true, &pc_factors_t)?,
        trl_em: diagnostics::trace_statistic(&draw.params.loadings, &fit.params.loadings)?,
        trl_pc: diagnostics::trace_statistic(&draw.params.loadings, &pc_loadings)?,
        iters: fit.iters,
        converged: fit.converged,
        z,
    })
}

fn steady_state_replication(cell: &CellSpec, b: usize) -> Result<SteadyStateRows> {
    let mut cfg = cell.dgp;
    cfg.stream = b as u64;
    let draw = draw_dgp(&cfg)?;
    let mut params = draw.params.clone();
    params.idio_cov = IdioCov::Diagonal(draw.params.idio_cov.diagonal());
    params.idio_ar = DVector::zeros(params.n());
    let init = InitState::stationary(&params)?;
    let filter = kalman::kalman_filter(&draw.panel, &params, &init)?;
    let smoother = kalman::kalman_smoother(&filter, &draw.panel, &params)?;
    let q = cfg.dims.q;
    let report = kalman::steady_state_diagnostics(&filter, q);
    let smooth = kalman::smoothed_traces(&smoother, q);
    let n = cfg.dims.n as f64;
    Ok(SteadyStateRows {
        init: report.init_trace,
        pred: report.pred_trace,
        filt: report.filt_trace,
        smooth_scaled: smooth.iter().map(|v| v * n).collect(),
        smooth,
        filt_scaled: report.filt_trace_scaled,
    })
}

fn check_failures(cell: &CellSpec, replications: usize, failures: usize) -> Result<()> {
    if failures as f64 > MAX_FAILURE_FRACTION * replications as f64 {
        return Err(DfmError::CellAborted {
            cell: cell.name.clone(),
            failures,
            replications,
        });
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    s / c as f64
}

fn add_rows(acc: &mut Vec<f64>, v: &[f64]) {
    if acc.len() < v.len() {
        acc.resize(v.len(), 0.0);
    }
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Runs `B` replications of one cell. Results are reduced in replication
/// order, so the report does not depend on scheduling.
pub fn run_cell(cell: &CellSpec, replications: usize, histogram: (f64, f64, f64)) -> Result<CellReport> {
    let start = Instant::now();
    let mut report = CellReport {
        name: cell.name.clone(),
        kind: cell.kind,
        dgp: cell.dgp,
        replications,
        failures: 0,
        failure_messages: Vec::new(),
        estimation: None,
        steady_state: None,
        seconds: 0.0,
    };
    match cell.kind {
        CellKind::Estimation => {
            let outcomes: Vec<Result<Replication>> =
                (0..replications).into_par_iter().map(|b| replicate(cell, b, histogram)).collect();
            let mut ok = Vec::with_capacity(replications);
            for (b, o) in outcomes.into_iter().enumerate() {
                match o {
                    Ok(r) => ok.push(r),
                    Err(e) => {
                        warn!("cell {} replication {b} failed: {e}", cell.name);
                        report.failure_messages.push(format!("replication {b}: {e}"));
                    }
                }
            }
            report.failures = replications - ok.len();
            check_failures(cell, replications, report.failures)?;
            let mut z: Option<ZAccumulator> = None;
            for r in &ok {
                if let Some(acc) = &r.z {
                    match &mut z {
                        Some(total) => total.merge(acc),
                        None => z = Some(acc.clone()),
                    }
                }
            }
            let m = |f: fn(&Replication) -> f64| mean(ok.iter().map(f));
            let (mse_em, mse_pc) = (m(|r| r.mse_em), m(|r| r.mse_pc));
            let (trf_em, trf_pc) = (m(|r| r.trf_em), m(|r| r.trf_pc));
            let (trl_em, trl_pc) = (m(|r| r.trl_em), m(|r| r.trl_pc));
            report.estimation = Some(EstimationSummary {
                mse_em,
                mse_pc,
                rel_mse: diagnostics::relative_mse(mse_em, mse_pc),
                trf_em,
                trf_pc,
                rel_trf: trf_em / trf_pc,
                trl_em,
                trl_pc,
                rel_trl: trl_em / trl_pc,
                mean_iters: mean(ok.iter().map(|r| r.iters as f64)),
                converged: ok.iter().filter(|r| r.converged).count(),
                coverage: z.as_ref().map(|a| a.table()),
                histogram: z.map(|a| a.histogram),
            });
        }
        CellKind::SteadyState => {
            let outcomes: Vec<Result<SteadyStateRows>> =
                (0..replications).into_par_iter().map(|b| steady_state_replication(cell, b)).collect();
            let mut sum = SteadyStateRows {
                init: 0.0,
                pred: vec![],
                filt: vec![],
                smooth: vec![],
                filt_scaled: vec![],
                smooth_scaled: vec![],
            };
            let mut count = 0usize;
            for (b, o) in outcomes.into_iter().enumerate() {
                match o {
                    Ok(r) => {
                        count += 1;
                        sum.init += r.init;
                        add_rows(&mut sum.pred, &r.pred);
                        add_rows(&mut sum.filt, &r.filt);
                        add_rows(&mut sum.smooth, &r.smooth);
                        add_rows(&mut sum.filt_scaled, &r.filt_scaled);
                        add_rows(&mut sum.smooth_scaled, &r.smooth_scaled);
                    }
                    Err(e) => report.failure_messages.push(format!("replication {b}: {e}")),
                }
            }
            report.failures = replications - count;
            check_failures(cell, replications, report.failures)?;
            let c = count as f64;
            let scale = |v: Vec<f64>| v.into_iter().map(|x| x / c).collect::<Vec<_>>();
            report.steady_state = Some(SteadyStateRows {
                init: sum.init / c,
                pred: scale(sum.pred),
                filt: scale(sum.filt),
                smooth: scale(sum.smooth),
                filt_scaled: scale(sum.filt_scaled),
                smooth_scaled: scale(sum.smooth_scaled),
            });
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    info!("cell {} done in {:.2}s ({} failures)", cell.name, report.seconds, report.failures);
    Ok(report)
}

/// Runs every cell of the experiment on a pool of `parallelism` threads.
pub fn run_grid(exp: &Experiment, parallelism: usize) -> Result<McReport> {
    let threads = parallelism.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| DfmError::InvalidConfig(format!("cannot start {threads} worker threads: {e}")))?;
    let start = Instant::now();
    let cells = pool.install(|| {
        exp.cells
            .par_iter()
            .map(|c| run_cell(c, exp.replications, exp.histogram))
            .collect::<Vec<_>>()
    });
    Ok(McReport {
        experiment: exp.name.clone(),
        seed: exp.seed,
        replications: exp.replications,
        parallelism: threads,
        cells: cells.into_iter().collect::<Result<Vec<_>>>()?,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn cell_prefix(c: &CellReport) -> String {
    let d = &c.dgp;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        c.name,
        d.dims.n,
        d.dims.t,
        d.dims.r,
        d.dims.q,
        fmt_f64(d.tau),
        fmt_f64(d.delta),
        d.innovation,
        c.replications,
        c.failures
    )
}

const CELL_HEADER: &str = "cell,n,T,r,q,tau,delta,innovation,B,failures";

impl McReport {
    pub fn table2_csv(&self) -> String {
        let mut s = format!("{CELL_HEADER},statistic,t1,t2,t3,t4,t5\n");
        for c in &self.cells {
            if let Some(ss) = &c.steady_state {
                let rows: [(&str, Vec<f64>); 6] = [
                    ("tr(P_0|0)/q", vec![ss.init]),
                    ("tr(P_t|t-1)/q", ss.pred.clone()),
                    ("tr(P_t|t)/q", ss.filt.clone()),
                    ("tr(P_t|T)/q", ss.smooth.clone()),
                    ("tr(P_t|t)n/q", ss.filt_scaled.clone()),
                    ("tr(P_t|T)n/q", ss.smooth_scaled.clone()),
                ];
                for (label, vals) in rows {
                    let mut line = format!("{},{label}", cell_prefix(c));
                    for k in 0..kalman::STEADY_STATE_ROWS {
                        line.push(',');
                        if let Some(v) = vals.get(k) {
                            line.push_str(&fmt_f64(*v));
                        }
                    }
                    s.push_str(&line);
                    s.push('\n');
                }
            }
        }
        s
    }

    pub fn table3_csv(&self) -> String {
        let mut s = format!("{CELL_HEADER},TR_F_em,TR_F_pc,rel_TR_F,TR_L_em,TR_L_pc,rel_TR_L\n");
        for c in &self.cells {
            if let Some(e) = &c.estimation {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    cell_prefix(c),
                    fmt_f64(e.trf_em),
                    fmt_f64(e.trf_pc),
                    fmt_f64(e.rel_trf),
                    fmt_f64(e.trl_em),
                    fmt_f64(e.trl_pc),
                    fmt_f64(e.rel_trl)
                );
            }
        }
        s
    }

    pub fn table4_csv(&self) -> String {
        let mut s = format!("{CELL_HEADER},MSE_em,MSE_pc,rel_MSE,mean_iters,converged\n");
        for c in &self.cells {
            if let Some(e) = &c.estimation {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    cell_prefix(c),
                    fmt_f64(e.mse_em),
                    fmt_f64(e.mse_pc),
                    fmt_f64(e.rel_mse),
                    fmt_f64(e.mean_iters),
                    e.converged
                );
            }
        }
        s
    }

    pub fn table5_csv(&self) -> String {
        let alphas: Vec<String> = diagnostics::COVERAGE_ALPHAS
            .iter()
            .map(|a| format!("C{}", (a * 100.0).round() as i64))
            .collect();
        let mut s = format!("{CELL_HEADER},{},mean,std,skewness,kurtosis,count\n", alphas.join(","));
        for c in &self.cells {
            if let Some(cov) = c.estimation.as_ref().and_then(|e| e.coverage.as_ref()) {
                let cs: Vec<String> = cov.coverage.iter().map(|v| fmt_f64(*v)).collect();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    cell_prefix(c),
                    cs.join(","),
                    fmt_f64(cov.mean),
                    fmt_f64(cov.std),
                    fmt_f64(cov.skewness),
                    fmt_f64(cov.kurtosis),
                    cov.count
                );
            }
        }
        s
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("cell,lo,hi,count\n");
        for c in &self.cells {
            if let Some(h) = c.estimation.as_ref().and_then(|e| e.histogram.as_ref()) {
                let _ = writeln!(s, "{},-inf,{},{}", c.name, fmt_f64(h.lo), h.below);
                for (k, count) in h.counts.iter().enumerate() {
                    let (lo, hi) = h.bin_edges(k);
                    let _ = writeln!(s, "{},{},{},{}", c.name, fmt_f64(lo), fmt_f64(hi), count);
                }
                let _ = writeln!(s, "{},{},inf,{}", c.name, fmt_f64(h.hi()), h.above);
            }
        }
        s
    }

    pub fn manifest_json(&self) -> String {
        let cells: Vec<serde_json::Value> = self
            .cells
            .iter()
            .map(|c| {
                serde_json::json!({
                    "name": c.name,
                    "kind": c.kind,
                    "seed": c.dgp.seed,
                    "replications": c.replications,
                    "failures": c.failures,
                    "failure_messages": c.failure_messages,
                    "seconds": c.seconds,
                })
            })
            .collect();
        let v = serde_json::json!({
            "experiment": self.experiment,
            "library": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "replications": self.replications,
            "parallelism": self.parallelism,
            "seconds": self.seconds,
            "cells": cells,
        });
        serde_json::to_string_pretty(&v).expect("manifest is serializable")
    }

    /// Writes the table CSVs, `histogram.csv` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("table2.csv"), self.table2_csv())?;
        fs::write(dir.join("table3.csv"), self.table3_csv())?;
        fs::write(dir.join("table4.csv"), self.table4_csv())?;
        fs::write(dir.join("table5.csv"), self.table5_csv())?;
        fs::write(dir.join("histogram.csv"), self.histogram_csv())?;
        fs::write(dir.join("manifest.json"), self.manifest_json())?;
        Ok(())
    }
}

/// Names of the files `McReport::write` produces.
pub const REPORT_FILES: [&str; 6] = [
    "table2.csv",
    "table3.csv",
    "table4.csv",
    "table5.csv",
    "histogram.csv",
    "manifest.json",
];

/// The bundled `table4_small` experiment: the relative-MSE grid at `B = 25`.
pub const TABLE4_SMALL: &str = include_str!("../experiments/table4_small.toml");

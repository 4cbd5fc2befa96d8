//! Experiment drivers: consistency sweeps over an (n, seed, method) grid,
//! posterior-concentration measurements at enumerable sizes, and
//! moment-recovery accuracy as a function of the number of sampled graphs.
//!
//! Every run is a pure function of its configuration. Cells are independent
//! and run in parallel, but results are assembled in grid order, so output
//! bytes never depend on thread count. Wall-clock columns are only filled
//! when timing is explicitly requested; otherwise they are zero so that
//! repeated runs produce identical files.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assumptions::{check_assumptions, AssumptionReport};
use crate::error::{Result, SbmError};
use crate::exact::{
    check_cap, class_posterior_mass, exact_em_fit_capped, kl_product_table, marginal_loglik_capped,
    posterior_ratio_stat, posterior_table_capped, posterior_vertex_marginals, DEFAULT_ENUM_CAP,
};
use crate::graph::{sample_graph, LabeledGraph};
use crate::io;
use crate::moments::{
    moments_empirical, moments_from_graph, recover_from_moments, EmpiricalOptions,
    GraphMomentOptions, MomentOrientation, RecoveryOptions,
};
use crate::params::SbmParams;
use crate::symmetry::{label_error, param_distance};
use crate::util::{mix_seed, quantile};
use crate::variational::{vem_fit_detailed, RestartRun, VemOptions};

/// Fitting method for one sweep row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vem,
    ExactEm,
    Moments,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vem => "vem",
            Method::ExactEm => "exact-em",
            Method::Moments => "moments",
        }
    }
}

fn default_restarts() -> usize {
    10
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    500
}
fn default_enum_cap() -> u64 {
    DEFAULT_ENUM_CAP
}
fn default_orderings() -> usize {
    2000
}

/// Configuration of a consistency sweep. Unknown fields are rejected so that
/// a typo in a config file cannot silently fall back to a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Generating parameters; fits are scored against these.
    pub truth: SbmParams,
    /// Strictly increasing vertex counts.
    pub n_grid: Vec<usize>,
    /// Number of replicate seeds per n; seeds run 0..seeds.
    pub seeds: u64,
    /// Methods to fit per cell, in the order their rows appear.
    pub methods: Vec<Method>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// When false (default) wall_ms is reported as 0 and output is
    /// byte-reproducible; when true it holds the measured fit time.
    #[serde(default)]
    pub timing: bool,
    /// Largest q^n for which the enumerated posterior is consulted.
    #[serde(default = "default_enum_cap")]
    pub enum_cap: u64,
    /// Vertex orderings averaged when estimating moments from one graph.
    #[serde(default = "default_orderings")]
    pub moment_orderings: usize,
    /// Default CSV destination; a CLI flag may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        if self.n_grid.is_empty() {
            return Err(SbmError::InvalidParams("n_grid must not be empty".into()));
        }
        if self.n_grid[0] < 2 {
            return Err(SbmError::InvalidParams(
                "every n in n_grid must be at least 2".into(),
            ));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SbmError::InvalidParams(
                "n_grid must be strictly increasing".into(),
            ));
        }
        if self.seeds == 0 {
            return Err(SbmError::InvalidParams("seeds must be at least 1".into()));
        }
        let mut seen: Vec<Method> = Vec::new();
        for &m in &self.methods {
            if seen.contains(&m) {
                return Err(SbmError::InvalidParams(format!(
                    "method {} listed twice",
                    m.as_str()
                )));
            }
            seen.push(m);
        }
        if self.restarts == 0 {
            return Err(SbmError::InvalidParams("restarts must be at least 1".into()));
        }
        if self.tol <= 0.0 || self.tol.is_nan() {
            return Err(SbmError::InvalidBound(format!(
                "tol={} must be positive",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(SbmError::InvalidParams("max_iter must be at least 1".into()));
        }
        if self.moment_orderings == 0 {
            return Err(SbmError::InvalidParams(
                "moment_orderings must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One (n, seed, method) result. Metric fields are `None` when the quantity
/// is not defined for the method (e.g. `kl_gap` outside variational fits),
/// when the cell is too large to enumerate, or when the fit failed — in the
/// last case `flags` carries a single `error:<category>` entry.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n: usize,
    pub seed: u64,
    pub method: Method,
    pub err_pi: Option<f64>,
    pub err_alpha: Option<f64>,
    pub label_err: Option<f64>,
    pub objective: Option<f64>,
    pub kl_gap: Option<f64>,
    pub ratio_stat: Option<f64>,
    pub wall_ms: u64,
    pub flags: Vec<String>,
    /// Fitted or recovered parameters, kept for the fits sidecar.
    pub fitted: Option<SbmParams>,
}

impl SweepRow {
    fn error(n: usize, seed: u64, method: Method, err: &SbmError, wall_ms: u64) -> SweepRow {
        SweepRow {
            n,
            seed,
            method,
            err_pi: None,
            err_alpha: None,
            label_err: None,
            objective: None,
            kl_gap: None,
            ratio_stat: None,
            wall_ms,
            flags: vec![format!("error:{}", err.category())],
            fitted: None,
        }
    }

    /// True when the fit itself failed (as opposed to quality flags).
    pub fn is_error(&self) -> bool {
        self.flags.iter().any(|f| f.starts_with("error:"))
    }
}

fn trace_nondecreasing(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - slack)
}

fn elapsed_ms(cfg: &SweepConfig, start: Instant) -> u64 {
    if cfg.timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// Score a fitted parameter set against the truth and the true labels.
/// Returns (err_pi, err_alpha, label_err); labels are first carried into the
/// truth's class order by the best-matching permutation.
fn score_fit(
    truth: &SbmParams,
    fitted: &SbmParams,
    z_hat: Option<&[usize]>,
    z_star: &[usize],
) -> Result<(f64, f64, Option<f64>)> {
    let dist = param_distance(fitted, truth)?;
    let label_err = match z_hat {
        Some(z) => {
            let aligned = dist.best_perm.inverse().apply_to_labels(z);
            Some(label_error(&aligned, z_star, truth.pi())?)
        }
        None => None,
    };
    Ok((dist.err_pi, dist.err_alpha, label_err))
}

fn vem_row(
    cfg: &SweepConfig,
    graph: &LabeledGraph,
    z_star: &[usize],
    run: &std::result::Result<RestartRun, SbmError>,
    ratio_stat: Option<f64>,
    enumerable: bool,
    wall_ms: u64,
) -> SweepRow {
    let n = graph.n();
    let run = match run {
        Err(e) => return SweepRow::error(n, 0, Method::Vem, e, wall_ms),
        Ok(r) => r,
    };
    let mut flags = run.flags.clone();
    if !trace_nondecreasing(&run.trace, 1e-9) {
        flags.push("nonmonotone-trace".into());
    }
    let z_hat = run.tau.argmax_labels();
    let scored = score_fit(&cfg.truth, &run.params, Some(&z_hat), z_star);
    let (err_pi, err_alpha, label_err) = match scored {
        Err(e) => return SweepRow::error(n, 0, Method::Vem, &e, wall_ms),
        Ok(t) => t,
    };
    let kl_gap = if enumerable {
        marginal_loglik_capped(graph, &run.params, cfg.enum_cap)
            .ok()
            .map(|l2| l2 - run.objective())
            .filter(|g| g.is_finite())
    } else {
        None
    };
    SweepRow {
        n,
        seed: 0,
        method: Method::Vem,
        err_pi: Some(err_pi),
        err_alpha: Some(err_alpha),
        label_err,
        objective: Some(run.objective()),
        kl_gap,
        ratio_stat,
        wall_ms,
        flags,
        fitted: Some(run.params.clone()),
    }
}

fn exact_em_row(
    cfg: &SweepConfig,
    graph: &LabeledGraph,
    z_star: &[usize],
    init: &std::result::Result<RestartRun, SbmError>,
    ratio_stat: Option<f64>,
) -> SweepRow {
    let n = graph.n();
    let q = cfg.truth.q();
    if let Err(e) = check_cap(n, q, cfg.enum_cap) {
        return SweepRow::error(n, 0, Method::ExactEm, &e, 0);
    }
    let init = match init {
        Err(e) => return SweepRow::error(n, 0, Method::ExactEm, e, 0),
        Ok(r) => r,
    };
    let start = Instant::now();
    let fit = match exact_em_fit_capped(graph, &init.params, cfg.max_iter, cfg.tol, cfg.enum_cap) {
        Err(e) => return SweepRow::error(n, 0, Method::ExactEm, &e, elapsed_ms(cfg, start)),
        Ok(f) => f,
    };
    let wall_ms = elapsed_ms(cfg, start);
    let mut flags = fit.flags.clone();
    if !trace_nondecreasing(&fit.objective_trace, 1e-9) {
        flags.push("nonmonotone-trace".into());
    }
    // Labels: argmax of the vertex marginals under the fitted parameters.
    let z_hat = match posterior_table_capped(graph, &fit.params, cfg.enum_cap) {
        Err(e) => return SweepRow::error(n, 0, Method::ExactEm, &e, wall_ms),
        Ok(table) => {
            let marg = posterior_vertex_marginals(&table);
            (0..n)
                .map(|i| {
                    let row = &marg[i * q..(i + 1) * q];
                    (0..q)
                        .max_by(|&a, &b| row[a].partial_cmp(&row[b]).expect("finite marginals"))
                        .expect("q >= 1")
                })
                .collect::<Vec<_>>()
        }
    };
    let scored = score_fit(&cfg.truth, &fit.params, Some(&z_hat), z_star);
    let (err_pi, err_alpha, label_err) = match scored {
        Err(e) => return SweepRow::error(n, 0, Method::ExactEm, &e, wall_ms),
        Ok(t) => t,
    };
    SweepRow {
        n,
        seed: 0,
        method: Method::ExactEm,
        err_pi: Some(err_pi),
        err_alpha: Some(err_alpha),
        label_err,
        objective: Some(fit.objective()),
        kl_gap: None,
        ratio_stat,
        wall_ms,
        flags,
        fitted: Some(fit.params),
    }
}

fn moments_row(
    cfg: &SweepConfig,
    graph: &LabeledGraph,
    fit_seed: u64,
    ratio_stat: Option<f64>,
) -> SweepRow {
    let n = graph.n();
    let q = cfg.truth.q();
    let start = Instant::now();
    let opts = GraphMomentOptions {
        orderings: cfg.moment_orderings,
        seed: fit_seed,
        orientation: MomentOrientation::Row,
    };
    let recovered = moments_from_graph(graph, q, &opts)
        .and_then(|ms| recover_from_moments(&ms, &RecoveryOptions::default()));
    let wall_ms = elapsed_ms(cfg, start);
    let rec = match recovered {
        Err(e) => return SweepRow::error(n, 0, Method::Moments, &e, wall_ms),
        Ok(r) => r,
    };
    let scored = score_fit(&cfg.truth, &rec.params, None, &[]);
    let (err_pi, err_alpha, _) = match scored {
        Err(e) => return SweepRow::error(n, 0, Method::Moments, &e, wall_ms),
        Ok(t) => t,
    };
    SweepRow {
        n,
        seed: 0,
        method: Method::Moments,
        err_pi: Some(err_pi),
        err_alpha: Some(err_alpha),
        label_err: None,
        objective: None,
        kl_gap: None,
        ratio_stat,
        wall_ms,
        flags: rec.flags.clone(),
        fitted: Some(rec.params),
    }
}

fn run_cell(cfg: &SweepConfig, n: usize, seed: u64) -> Vec<SweepRow> {
    let truth = &cfg.truth;
    let q = truth.q();
    let graph_seed = mix_seed(&[cfg.master_seed, 1, n as u64, seed]);
    let fit_seed = mix_seed(&[cfg.master_seed, 2, n as u64, seed]);
    let graph = match sample_graph(truth, n, graph_seed) {
        Ok(g) => g,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| {
                    let mut row = SweepRow::error(n, seed, m, &e, 0);
                    row.seed = seed;
                    row
                })
                .collect()
        }
    };
    let z_star = graph
        .labels()
        .expect("sampled graphs carry labels")
        .to_vec();
    let enumerable = check_cap(n, q, cfg.enum_cap).is_ok();
    // The excess-mass ratio under the true parameters is a property of the
    // cell, shared by every method row.
    let ratio_stat = if enumerable {
        posterior_table_capped(&graph, truth, cfg.enum_cap)
            .and_then(|t| posterior_ratio_stat(&t, &z_star, truth.pi()))
            .ok()
            .map(|r| r.value)
    } else {
        None
    };

    // A single variational fit serves both the vem row and the exact EM
    // initialization, so both methods see the same starting point.
    let wants_em = cfg.methods.contains(&Method::ExactEm) && enumerable;
    let wants_vem = cfg.methods.contains(&Method::Vem);
    let vem = if wants_vem || wants_em {
        let opts = VemOptions {
            restarts: cfg.restarts,
            max_iter: cfg.max_iter,
            tol: cfg.tol,
            seed: fit_seed,
            ..VemOptions::default()
        };
        let start = Instant::now();
        let run = vem_fit_detailed(&graph, q, &opts).map(|o| o.best_run().clone());
        Some((run, elapsed_ms(cfg, start)))
    } else {
        None
    };

    cfg.methods
        .iter()
        .map(|&m| {
            let mut row = match m {
                Method::Vem => {
                    let (run, wall) = vem.as_ref().expect("vem fit was prepared");
                    vem_row(cfg, &graph, &z_star, run, ratio_stat, enumerable, *wall)
                }
                Method::ExactEm => match &vem {
                    Some((run, _)) => exact_em_row(cfg, &graph, &z_star, run, ratio_stat),
                    None => {
                        // Not enumerable: report the size error without fitting.
                        let err = check_cap(n, q, cfg.enum_cap)
                            .expect_err("cap check failed above");
                        SweepRow::error(n, seed, Method::ExactEm, &err, 0)
                    }
                },
                Method::Moments => moments_row(cfg, &graph, fit_seed, ratio_stat),
            };
            row.seed = seed;
            row
        })
        .collect()
}

/// Fit every configured method on every (n, seed) cell. Rows come back
/// sorted by n, then seed, then the configured method order; a failed fit
/// yields a flagged row rather than aborting the sweep.
pub fn run_consistency_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let cells: Vec<(usize, u64)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.seeds).map(move |s| (n, s)))
        .collect();
    let per_cell: Vec<Vec<SweepRow>> = cells
        .par_iter()
        .map(|&(n, s)| run_cell(cfg, n, s))
        .collect();
    Ok(per_cell.into_iter().flatten().collect())
}

pub const SWEEP_CSV_HEADER: &str =
    "n,seed,method,err_pi,err_alpha,label_err,objective,kl_gap,ratio_stat,wall_ms,flags";

fn opt_cell(v: Option<f64>) -> String {
    v.map(io::format_float).unwrap_or_default()
}

/// Render rows as CSV with a fixed header. Floats carry 17 significant
/// digits, absent values are empty cells, flags are joined with ';'.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.seed,
            r.method.as_str(),
            opt_cell(r.err_pi),
            opt_cell(r.err_alpha),
            opt_cell(r.label_err),
            opt_cell(r.objective),
            opt_cell(r.kl_gap),
            opt_cell(r.ratio_stat),
            r.wall_ms,
            r.flags.join(";"),
        ));
    }
    out
}

/// One entry of the fits sidecar written next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub n: usize,
    pub seed: u64,
    pub method: Method,
    /// Absent when the fit failed.
    pub params: Option<SbmParams>,
}

/// Full fitted parameters for every sweep row, so the CSV can stay flat
/// while the exact fits remain recoverable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitsSidecar {
    pub truth: SbmParams,
    pub fits: Vec<SidecarEntry>,
}

pub fn fits_sidecar(truth: &SbmParams, rows: &[SweepRow]) -> FitsSidecar {
    FitsSidecar {
        truth: truth.clone(),
        fits: rows
            .iter()
            .map(|r| SidecarEntry {
                n: r.n,
                seed: r.seed,
                method: r.method,
                params: r.fitted.clone(),
            })
            .collect(),
    }
}

/// Per-(n, method) medians over clean rows. Rows with any flag — quality
/// warnings as well as errors — are counted but excluded from medians.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryCell {
    pub n: usize,
    pub method: Method,
    pub cells: usize,
    pub flagged: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_err_pi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_err_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_label_err: Option<f64>,
}

fn median_of(values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(quantile(&values, 0.5))
    }
}

pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SummaryCell> {
    let mut keys: Vec<(usize, Method)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.n, r.method)) {
            keys.push((r.n, r.method));
        }
    }
    keys.into_iter()
        .map(|(n, method)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.n == n && r.method == method)
                .collect();
            let clean: Vec<&&SweepRow> = group.iter().filter(|r| r.flags.is_empty()).collect();
            let pick = |f: fn(&SweepRow) -> Option<f64>| {
                median_of(clean.iter().filter_map(|r| f(r)).collect())
            };
            SummaryCell {
                n,
                method,
                cells: group.len(),
                flagged: group.len() - clean.len(),
                median_err_pi: pick(|r| r.err_pi),
                median_err_alpha: pick(|r| r.err_alpha),
                median_label_err: pick(|r| r.label_err),
            }
        })
        .collect()
}

fn render_table(header: &[&str], body: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in body {
        for c in 0..cols {
            width[c] = width[c].max(row[c].len());
        }
    }
    let mut out = String::new();
    let emit = |out: &mut String, cells: &[String]| {
        for (c, cell) in cells.iter().enumerate() {
            if c > 0 {
                out.push_str("  ");
            }
            out.push_str(&" ".repeat(width[c] - cell.len()));
            out.push_str(cell);
        }
        out.push('\n');
    };
    let head: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    emit(&mut out, &head);
    for row in body {
        emit(&mut out, row);
    }
    out
}

fn short(v: Option<f64>) -> String {
    match v {
        None => "-".into(),
        Some(x) => format!("{x:.4}"),
    }
}

/// Human-oriented aligned table; the JSON digest keeps full precision.
pub fn summary_table(cells: &[SummaryCell]) -> String {
    let header = [
        "n",
        "method",
        "cells",
        "flagged",
        "med_err_pi",
        "med_err_alpha",
        "med_label_err",
    ];
    let body: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.n.to_string(),
                c.method.as_str().to_string(),
                c.cells.to_string(),
                c.flagged.to_string(),
                short(c.median_err_pi),
                short(c.median_err_alpha),
                short(c.median_label_err),
            ]
        })
        .collect();
    render_table(&header, &body)
}

pub fn summary_json(cells: &[SummaryCell]) -> Result<String> {
    io::to_json_string(&cells)
}

/// Knobs of the concentration experiment; the defaults match the sweep.
#[derive(Debug, Clone)]
pub struct ConcentrationOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub master_seed: u64,
    pub enum_cap: u64,
    /// Edge-probability margin passed to the assumption check.
    pub zeta: f64,
    /// Class-proportion margin passed to the assumption check.
    pub gamma: f64,
}

impl Default for ConcentrationOptions {
    fn default() -> Self {
        ConcentrationOptions {
            restarts: 10,
            max_iter: 500,
            tol: 1e-8,
            master_seed: 0,
            enum_cap: DEFAULT_ENUM_CAP,
            zeta: 0.05,
            gamma: 0.05,
        }
    }
}

/// Posterior concentration at the true parameters over replicate graphs.
/// `mass`, `ratio` and `kl` are per-seed; the quantile triples are
/// (p10, p50, p90).
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationSummary {
    pub n: usize,
    pub seeds: u64,
    /// Posterior mass of the symmetry class of the generating labels.
    pub mass: Vec<f64>,
    /// Off-class to in-class posterior mass ratio.
    pub ratio: Vec<f64>,
    /// KL from the best variational fit (over restarts, parameters
    /// estimated from the graph) to the posterior enumerated at the truth.
    pub kl: Vec<f64>,
    pub mass_quantiles: [f64; 3],
    pub ratio_quantiles: [f64; 3],
    pub kl_quantiles: [f64; 3],
    /// Fraction of seeds whose class mass exceeds 0.95.
    pub frac_mass_above_095: f64,
    /// Regularity report for the generating parameters, so runs on
    /// indistinguishable classes are visibly marked.
    pub assumptions: AssumptionReport,
}

fn quantile_triple(values: &[f64]) -> [f64; 3] {
    [
        quantile(values, 0.10),
        quantile(values, 0.50),
        quantile(values, 0.90),
    ]
}

/// Divergence of the fitted variational posterior from the exact one: full
/// VEM restarts (parameters estimated from the graph), scored against the
/// posterior enumerated at the truth, keeping the smallest divergence among
/// converged restarts (or among all, if none converged). Estimation error is
/// part of the statistic on purpose — it is what shrinks as `n` grows.
fn min_restart_kl(
    graph: &LabeledGraph,
    truth: &SbmParams,
    table: &crate::exact::PosteriorTable,
    opts: &ConcentrationOptions,
    fit_seed: u64,
) -> Result<f64> {
    let vem_opts = VemOptions {
        restarts: opts.restarts,
        max_iter: opts.max_iter,
        tol: opts.tol,
        seed: fit_seed,
        ..VemOptions::default()
    };
    let out = vem_fit_detailed(graph, truth.q(), &vem_opts)?;
    let mut best_converged = f64::INFINITY;
    let mut best_any = f64::INFINITY;
    for run in &out.runs {
        let kl = kl_product_table(&run.tau, table)?.nats;
        best_any = best_any.min(kl);
        if run.converged {
            best_converged = best_converged.min(kl);
        }
    }
    Ok(if best_converged.is_finite() {
        best_converged
    } else {
        best_any
    })
}

pub fn run_concentration_experiment(
    truth: &SbmParams,
    n: usize,
    seeds: u64,
    opts: &ConcentrationOptions,
) -> Result<ConcentrationSummary> {
    truth.validate()?;
    if n < 2 {
        return Err(SbmError::InvalidParams("n must be at least 2".into()));
    }
    if seeds == 0 {
        return Err(SbmError::InvalidParams("seeds must be at least 1".into()));
    }
    check_cap(n, truth.q(), opts.enum_cap)?;
    let assumptions = check_assumptions(truth, None, opts.zeta, opts.gamma, n)?;

    let per_seed: Vec<Result<(f64, f64, f64)>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let graph_seed = mix_seed(&[opts.master_seed, 3, n as u64, s]);
            let fit_seed = mix_seed(&[opts.master_seed, 4, n as u64, s]);
            let graph = sample_graph(truth, n, graph_seed)?;
            let z_star = graph.labels().expect("sampled graphs carry labels");
            let table = posterior_table_capped(&graph, truth, opts.enum_cap)?;
            let mass = class_posterior_mass(&table, z_star, truth.pi())?;
            let ratio = posterior_ratio_stat(&table, z_star, truth.pi())?.value;
            let kl = min_restart_kl(&graph, truth, &table, opts, fit_seed)?;
            Ok((mass, ratio, kl))
        })
        .collect();

    let mut mass = Vec::with_capacity(seeds as usize);
    let mut ratio = Vec::with_capacity(seeds as usize);
    let mut kl = Vec::with_capacity(seeds as usize);
    for r in per_seed {
        let (m, r_, k) = r?;
        mass.push(m);
        ratio.push(r_);
        kl.push(k);
    }
    let above = mass.iter().filter(|&&m| m > 0.95).count();
    Ok(ConcentrationSummary {
        n,
        seeds,
        mass_quantiles: quantile_triple(&mass),
        ratio_quantiles: quantile_triple(&ratio),
        kl_quantiles: quantile_triple(&kl),
        frac_mass_above_095: above as f64 / seeds as f64,
        mass,
        ratio,
        kl,
        assumptions,
    })
}

/// Aligned report of a concentration run.
pub fn concentration_table(summary: &ConcentrationSummary) -> String {
    let header = ["statistic", "p10", "p50", "p90"];
    let rowf = |name: &str, q: &[f64; 3]| {
        let mut row = vec![name.to_string()];
        row.extend(q.iter().map(|v| format!("{v:.4}")));
        row
    };
    let body = vec![
        rowf("class_mass", &summary.mass_quantiles),
        rowf("ratio_stat", &summary.ratio_quantiles),
        rowf("min_restart_kl", &summary.kl_quantiles),
    ];
    let mut out = render_table(&header, &body);
    out.push_str(&format!(
        "fraction with class mass > 0.95: {:.4}\n",
        summary.frac_mass_above_095
    ));
    if !summary.assumptions.all_ok() {
        for (name, detail) in &summary.assumptions.violations {
            out.push_str(&format!("assumption {name} violated: {detail}\n"));
        }
    }
    out
}

/// Knobs for the moment-recovery experiment.
#[derive(Debug, Clone)]
pub struct MomentExperimentOptions {
    pub master_seed: u64,
    pub recovery: RecoveryOptions,
    pub orientation: MomentOrientation,
}

impl Default for MomentExperimentOptions {
    fn default() -> Self {
        MomentExperimentOptions {
            master_seed: 0,
            recovery: RecoveryOptions::default(),
            orientation: MomentOrientation::Row,
        }
    }
}

/// Result of one (graph-count, seed) recovery attempt.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum MomentOutcome {
    Recovered {
        err_pi: f64,
        err_alpha: f64,
        flags: Vec<String>,
    },
    /// The identification gate fired (singular moment system or
    /// indistinguishable rates).
    Degenerate,
    Errored {
        category: String,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentCell {
    pub graphs: usize,
    pub seed: u64,
    pub outcome: MomentOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentGroupSummary {
    pub graphs: usize,
    pub recovered: usize,
    pub degenerate: usize,
    pub errored: usize,
    /// Median over recovered cells only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_err_pi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_err_alpha: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentExperimentSummary {
    pub n: usize,
    pub seeds: u64,
    pub cells: Vec<MomentCell>,
    pub groups: Vec<MomentGroupSummary>,
}

/// Estimate moments from `graphs` independent samples and run the
/// constructive recovery, for every graph count in `g_grid` and every seed.
/// Accuracy should improve with the graph count; degenerate truths should
/// trip the gate instead of returning garbage.
pub fn run_moment_experiment(
    truth: &SbmParams,
    g_grid: &[usize],
    n: usize,
    seeds: u64,
    opts: &MomentExperimentOptions,
) -> Result<MomentExperimentSummary> {
    truth.validate()?;
    if g_grid.is_empty() {
        return Err(SbmError::InvalidParams("g_grid must not be empty".into()));
    }
    if g_grid.contains(&0) {
        return Err(SbmError::InvalidParams(
            "graph counts must be at least 1".into(),
        ));
    }
    if seeds == 0 {
        return Err(SbmError::InvalidParams("seeds must be at least 1".into()));
    }
    let pairs: Vec<(usize, u64)> = g_grid
        .iter()
        .flat_map(|&g| (0..seeds).map(move |s| (g, s)))
        .collect();
    let cells: Vec<MomentCell> = pairs
        .par_iter()
        .map(|&(graphs, seed)| {
            let est_seed = mix_seed(&[opts.master_seed, 5, graphs as u64, seed]);
            let est = EmpiricalOptions {
                graphs,
                orderings: 1,
                seed: est_seed,
                orientation: opts.orientation,
            };
            let outcome = match moments_empirical(truth, n, &est)
                .and_then(|ms| recover_from_moments(&ms, &opts.recovery))
            {
                Ok(rec) => match param_distance(&rec.params, truth) {
                    Ok(dist) => MomentOutcome::Recovered {
                        err_pi: dist.err_pi,
                        err_alpha: dist.err_alpha,
                        flags: rec.flags.clone(),
                    },
                    Err(e) => MomentOutcome::Errored {
                        category: e.category().to_string(),
                    },
                },
                Err(e) if e.category() == "degenerate" => MomentOutcome::Degenerate,
                Err(e) => MomentOutcome::Errored {
                    category: e.category().to_string(),
                },
            };
            MomentCell {
                graphs,
                seed,
                outcome,
            }
        })
        .collect();

    let groups = g_grid
        .iter()
        .map(|&g| {
            let mine: Vec<&MomentCell> = cells.iter().filter(|c| c.graphs == g).collect();
            let mut err_pi = Vec::new();
            let mut err_alpha = Vec::new();
            let mut degenerate = 0;
            let mut errored = 0;
            for c in &mine {
                match &c.outcome {
                    MomentOutcome::Recovered {
                        err_pi: ep,
                        err_alpha: ea,
                        ..
                    } => {
                        err_pi.push(*ep);
                        err_alpha.push(*ea);
                    }
                    MomentOutcome::Degenerate => degenerate += 1,
                    MomentOutcome::Errored { .. } => errored += 1,
                }
            }
            MomentGroupSummary {
                graphs: g,
                recovered: err_pi.len(),
                degenerate,
                errored,
                median_err_pi: median_of(err_pi),
                median_err_alpha: median_of(err_alpha),
            }
        })
        .collect();

    Ok(MomentExperimentSummary {
        n,
        seeds,
        cells,
        groups,
    })
}

/// Aligned report of a moment-recovery run.
pub fn moment_table(summary: &MomentExperimentSummary) -> String {
    let header = [
        "graphs",
        "recovered",
        "degenerate",
        "errored",
        "med_err_pi",
        "med_err_alpha",
    ];
    let body: Vec<Vec<String>> = summary
        .groups
        .iter()
        .map(|g| {
            vec![
                g.graphs.to_string(),
                g.recovered.to_string(),
                g.degenerate.to_string(),
                g.errored.to_string(),
                short(g.median_err_pi),
                short(g.median_err_alpha),
            ]
        })
        .collect();
    render_table(&header, &body)
}

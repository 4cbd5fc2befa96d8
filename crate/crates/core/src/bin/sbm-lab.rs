//! Command-line front end: sampling, fitting, moment recovery, sweeps,
//! concentration runs, assumption checks, and fit scoring.
//!
//! Exit codes: 0 success, 2 usage or file problems, 3 validation failures,
//! 4 numeric degeneracies, 5 size limits. Failures print a single
//! `error: <category>: <message>` line on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sbm_lab::error::{Result, SbmError};
use sbm_lab::exact::exact_em_fit;
use sbm_lab::harness::{
    concentration_table, fits_sidecar, rows_to_csv, run_concentration_experiment,
    run_consistency_sweep, summarize_sweep, summary_json, summary_table, ConcentrationOptions,
    SweepConfig,
};
use sbm_lab::moments::{
    moments_analytic, moments_empirical, recover_from_moments, recover_q2_n4, EmpiricalOptions,
    MomentOrientation, RecoveryOptions,
};
use sbm_lab::variational::{vem_fit, VemOptions};
use sbm_lab::{check_assumptions, io, param_distance, sample_graph};

#[derive(Parser)]
#[command(
    name = "sbm-lab",
    version,
    about = "Directed stochastic block models: simulation, inference, and moment recovery"
)]
struct Cli {
    /// Worker threads for parallel cells (0 = one per core). Results do not
    /// depend on this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FitMethod {
    /// Variational EM with restarts.
    Vem,
    /// EM on the enumerated posterior, initialized from the best
    /// variational fit with the same settings.
    ExactEm,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw one labeled graph and write it to a graph file.
    Sample {
        /// Parameter JSON with fields q, alpha, pi.
        #[arg(long)]
        params: PathBuf,
        /// Number of vertices.
        #[arg(long)]
        n: usize,
        #[arg(long, env = "SBM_LAB_SEED", default_value_t = 0)]
        seed: u64,
        /// Output graph file (edges plus a labels line).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit parameters to a graph.
    Fit {
        #[arg(long)]
        graph: PathBuf,
        /// Number of classes to fit (the graph header's q is ignored).
        #[arg(long)]
        q: usize,
        #[arg(long, value_enum)]
        method: FitMethod,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        #[arg(long, env = "SBM_LAB_SEED", default_value_t = 0)]
        seed: u64,
        /// Output fit JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover parameters from moments and print the result as JSON.
    #[command(group(ArgGroup::new("source").required(true).args(["analytic", "empirical"])))]
    Recover {
        /// Parameters that define (analytic) or generate (empirical) the
        /// moments.
        #[arg(long)]
        params: PathBuf,
        /// Use exact moments computed from the parameters.
        #[arg(long)]
        analytic: bool,
        /// Estimate moments from freshly sampled graphs.
        #[arg(long)]
        empirical: bool,
        /// Number of graphs to sample (empirical only).
        #[arg(long, requires = "empirical")]
        graphs: Option<usize>,
        /// Vertices per sampled graph (empirical only).
        #[arg(long, requires = "empirical")]
        n: Option<usize>,
        #[arg(long, env = "SBM_LAB_SEED", default_value_t = 0)]
        seed: u64,
        /// Average estimators over this many vertex orderings per graph.
        #[arg(long, default_value_t = 1, requires = "empirical")]
        average_orderings: usize,
        /// Use the closed-form two-class path based on cycle statistics.
        #[arg(long)]
        q2n4: bool,
    },
    /// Run the consistency sweep described by a JSON config.
    ///
    /// Writes the CSV, a `<out>.fits.json` sidecar with every fitted
    /// parameter set, and a `<out>.summary.json` digest; prints an aligned
    /// summary table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; overrides output_path from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure posterior concentration at the true parameters.
    Concentrate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        n: usize,
        /// Number of replicate graphs.
        #[arg(long)]
        seeds: u64,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, env = "SBM_LAB_SEED", default_value_t = 0)]
        seed: u64,
        /// Optional JSON destination for the per-seed summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the regularity conditions; exits 3 when one fails.
    Check {
        #[arg(long)]
        params: PathBuf,
        /// Graph file whose labels line supplies realized labels.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Margin keeping edge probabilities away from 0 and 1.
        #[arg(long)]
        zeta: f64,
        /// Lower bound on class proportions (must be below 1/q).
        #[arg(long)]
        gamma: f64,
        /// Smallest n at which realized label proportions are enforced.
        #[arg(long, default_value_t = 0)]
        n0: usize,
    },
    /// Score a stored fit against true parameters.
    Eval {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn exit_code(err: &SbmError) -> u8 {
    match err.category() {
        "validation" => 3,
        "degenerate" => 4,
        "size-limit" => 5,
        _ => 2,
    }
}

fn sibling_file(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Sample {
            params,
            n,
            seed,
            out,
        } => {
            let params = io::read_params_file(&params)?;
            let graph = sample_graph(&params, n, seed)?;
            io::write_graph_file(&out, &graph, params.q())
        }
        Cmd::Fit {
            graph,
            q,
            method,
            restarts,
            tol,
            max_iter,
            seed,
            out,
        } => {
            let (graph, _header_q) = io::read_graph_file(&graph)?;
            let opts = VemOptions {
                restarts,
                max_iter,
                tol,
                seed,
                ..VemOptions::default()
            };
            let fit = match method {
                FitMethod::Vem => vem_fit(&graph, q, &opts)?,
                FitMethod::ExactEm => {
                    let start = vem_fit(&graph, q, &opts)?;
                    let mut em = exact_em_fit(&graph, &start.params, max_iter, tol)?;
                    em.restarts_used = restarts;
                    em
                }
            };
            std::fs::write(&out, io::fit_to_json(&fit)?)?;
            Ok(())
        }
        Cmd::Recover {
            params,
            analytic,
            empirical,
            graphs,
            n,
            seed,
            average_orderings,
            q2n4,
        } => {
            let params = io::read_params_file(&params)?;
            let moments = if analytic {
                moments_analytic(&params, MomentOrientation::Row)
            } else {
                debug_assert!(empirical);
                let (graphs, n) = match (graphs, n) {
                    (Some(g), Some(n)) => (g, n),
                    _ => {
                        return Err(SbmError::Parse(
                            "--empirical requires --graphs and --n".into(),
                        ))
                    }
                };
                let opts = EmpiricalOptions {
                    graphs,
                    orderings: average_orderings,
                    seed,
                    orientation: MomentOrientation::Row,
                };
                moments_empirical(&params, n, &opts)?
            };
            let recovery = RecoveryOptions::default();
            let result = if q2n4 {
                recover_q2_n4(&moments, &recovery)?
            } else {
                recover_from_moments(&moments, &recovery)?
            };
            print!("{}", io::to_json_string(&result)?);
            Ok(())
        }
        Cmd::Sweep { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg: SweepConfig = io::from_json_str(&text)?;
            let out = out
                .or_else(|| cfg.output_path.clone().map(PathBuf::from))
                .ok_or_else(|| {
                    SbmError::Parse(
                        "no CSV destination: pass --out or set output_path in the config".into(),
                    )
                })?;
            let rows = run_consistency_sweep(&cfg)?;
            std::fs::write(&out, rows_to_csv(&rows))?;
            io::write_json_file(&sibling_file(&out, ".fits.json"), &fits_sidecar(&cfg.truth, &rows))?;
            let cells = summarize_sweep(&rows);
            std::fs::write(sibling_file(&out, ".summary.json"), summary_json(&cells)?)?;
            print!("{}", summary_table(&cells));
            Ok(())
        }
        Cmd::Concentrate {
            params,
            n,
            seeds,
            restarts,
            seed,
            out,
        } => {
            let params = io::read_params_file(&params)?;
            let opts = ConcentrationOptions {
                restarts,
                master_seed: seed,
                ..ConcentrationOptions::default()
            };
            let summary = run_concentration_experiment(&params, n, seeds, &opts)?;
            if let Some(out) = out {
                io::write_json_file(&out, &summary)?;
            }
            print!("{}", concentration_table(&summary));
            Ok(())
        }
        Cmd::Check {
            params,
            labels,
            zeta,
            gamma,
            n0,
        } => {
            let params = io::read_params_file(&params)?;
            let labels = match labels {
                None => None,
                Some(path) => {
                    let (graph, _q) = io::read_graph_file(&path)?;
                    let z = graph.labels().ok_or_else(|| {
                        SbmError::InvalidParams(format!(
                            "{} carries no labels line",
                            path.display()
                        ))
                    })?;
                    Some(z.to_vec())
                }
            };
            let report = check_assumptions(&params, labels.as_deref(), zeta, gamma, n0)?;
            print!("{}", io::to_json_string(&report)?);
            if let Some((name, detail)) = report.violations.first() {
                return Err(SbmError::InvalidParams(format!(
                    "assumption {name} fails: {detail}"
                )));
            }
            Ok(())
        }
        Cmd::Eval { fit, truth } => {
            let record = io::fit_record_from_json(&std::fs::read_to_string(&fit)?)?;
            let fitted = record.params()?;
            let truth = io::read_params_file(&truth)?;
            let dist = param_distance(&fitted, &truth)?;
            #[derive(Serialize)]
            struct EvalOut {
                err_pi: f64,
                err_alpha: f64,
                /// 1-based images: truth class k matches fitted class
                /// best_perm[k-1].
                best_perm: Vec<usize>,
            }
            let q = truth.q();
            let out = EvalOut {
                err_pi: dist.err_pi,
                err_alpha: dist.err_alpha,
                best_perm: (0..q).map(|c| dist.best_perm.apply(c) + 1).collect(),
            };
            print!("{}", io::to_json_string(&out)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // num_threads(0) asks rayon for its default (one per core).
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}: {err}", err.category());
            ExitCode::from(exit_code(&err))
        }
    }
}

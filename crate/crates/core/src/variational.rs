//! Mean-field variational inference: the evidence lower bound (ELBO) over
//! product distributions on labels, its coordinate updates, and the full
//! variational EM driver with restarts.
//!
//! For interior edge probabilities the ELBO and the tau update use a
//! decomposed O(n^2 * q) path built on three accumulators (tau column sums,
//! X*tau and X^T*tau); when `pi` contains exact {0,1} entries both fall back
//! to a direct per-pair evaluation that honors the 0*log(0) = 0 convention.

use crate::error::{Result, SbmError};
use crate::exact::{log_pi_tables, PosteriorTable};
use crate::fit::FitResult;
use crate::graph::LabeledGraph;
use crate::params::SbmParams;
use crate::util::mix_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Entries of tau produced by the update are kept at or above this floor
/// (then renormalized) so logarithms stay finite inside the iteration.
pub const TAU_FLOOR: f64 = 1e-12;

/// Accepting a tau update may lower the ELBO by at most this much.
pub const ASCENT_SLACK: f64 = 1e-9;

const ROW_SUM_TOL: f64 = 1e-10;

/// Row-stochastic `n x q` matrix of vertex-level class responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TauMatrix {
    n: usize,
    q: usize,
    data: Vec<f64>, // row-major
}

impl TauMatrix {
    pub fn new(n: usize, q: usize, data: Vec<f64>) -> Result<Self> {
        if q == 0 {
            return Err(SbmError::InvalidParams("tau needs q >= 1".into()));
        }
        if data.len() != n * q {
            return Err(SbmError::InvalidParams(format!(
                "tau data length {} does not match {n}x{q}",
                data.len()
            )));
        }
        for i in 0..n {
            let row = &data[i * q..(i + 1) * q];
            if row.iter().any(|&t| !t.is_finite() || !(0.0..=1.0).contains(&t)) {
                return Err(SbmError::InvalidParams(format!(
                    "tau row {} has entries outside [0,1]",
                    i + 1
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(SbmError::InvalidParams(format!(
                    "tau row {} sums to {s}, not 1 within {ROW_SUM_TOL:e}",
                    i + 1
                )));
            }
        }
        Ok(TauMatrix { n, q, data })
    }

    pub fn uniform(n: usize, q: usize) -> Self {
        TauMatrix {
            n,
            q,
            data: vec![1.0 / q as f64; n * q],
        }
    }

    /// Exact point mass on a label vector (no floor applied).
    pub fn one_hot(labels: &[usize], q: usize) -> Result<Self> {
        let n = labels.len();
        let mut data = vec![0.0; n * q];
        for (i, &c) in labels.iter().enumerate() {
            if c >= q {
                return Err(SbmError::InvalidParams("label out of range".into()));
            }
            data[i * q + c] = 1.0;
        }
        Ok(TauMatrix { n, q, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.q + c]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.q..(i + 1) * self.q]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Most responsible class per vertex; ties go to the lower index.
    pub fn argmax_labels(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for c in 1..self.q {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    fn floor_renormalize(&mut self) {
        for i in 0..self.n {
            let row = &mut self.data[i * self.q..(i + 1) * self.q];
            let mut s = 0.0;
            for t in row.iter_mut() {
                if *t < TAU_FLOOR {
                    *t = TAU_FLOOR;
                }
                s += *t;
            }
            for t in row.iter_mut() {
                *t /= s;
            }
        }
    }
}

fn pi_is_interior(pi: &[Vec<f64>]) -> bool {
    pi.iter().flatten().all(|&p| p > 0.0 && p < 1.0)
}

/// coef * logval with the 0*log(0)=0 convention; -inf only when coef > 0.
fn mul_log(coef: f64, logval: f64) -> f64 {
    if coef == 0.0 {
        0.0
    } else if logval == f64::NEG_INFINITY {
        if coef > 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0 // negative coef here can only be accumulated rounding of a true zero
        }
    } else {
        coef * logval
    }
}

/// Column sums `T`, `A = X tau` and `B = X^T tau` (both n x q, row-major).
fn tau_products(graph: &LabeledGraph, tau: &TauMatrix) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = tau.n;
    let q = tau.q;
    let mut t = vec![0.0f64; q];
    for i in 0..n {
        for c in 0..q {
            t[c] += tau.data[i * q + c];
        }
    }
    let mut a = vec![0.0f64; n * q];
    let mut b = vec![0.0f64; n * q];
    for i in 0..n {
        let row_i = i * q;
        for (w_idx, &word) in graph.row_words(i).iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let j = w_idx * 64 + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let row_j = j * q;
                for c in 0..q {
                    a[row_i + c] += tau.data[row_j + c];
                    b[row_j + c] += tau.data[row_i + c];
                }
            }
        }
    }
    (t, a, b)
}

fn entropy_prior_term(tau: &TauMatrix, alpha: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..tau.n {
        for c in 0..tau.q {
            let t = tau.get(i, c);
            if t == 0.0 {
                continue;
            }
            let la = alpha[c].ln();
            if la == f64::NEG_INFINITY {
                return f64::INFINITY; // mass on a zero-prior class: ELBO is -inf
            }
            acc += t * (t.ln() - la);
        }
    }
    acc
}

fn elbo_direct(graph: &LabeledGraph, tau: &TauMatrix, params: &SbmParams) -> f64 {
    let n = tau.n;
    let q = tau.q;
    let (lp, l1p) = log_pi_tables(params.pi());
    let mut coupling = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let table = if graph.edge(i, j) { &lp } else { &l1p };
            for a in 0..q {
                let ti = tau.get(i, a);
                if ti == 0.0 {
                    continue;
                }
                for b in 0..q {
                    let w = ti * tau.get(j, b);
                    let term = mul_log(w, table[a][b]);
                    if term == f64::NEG_INFINITY {
                        return f64::NEG_INFINITY;
                    }
                    coupling += term;
                }
            }
        }
    }
    let ent = entropy_prior_term(tau, params.alpha());
    if ent == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    coupling - ent
}

fn elbo_fast(graph: &LabeledGraph, tau: &TauMatrix, params: &SbmParams) -> f64 {
    let q = tau.q;
    let n = tau.n;
    let (t, a, _b) = tau_products(graph, tau);
    let (lp, l1p) = log_pi_tables(params.pi());
    // E[c][d] = sum over edges of tau_ic tau_jd; C[c][d] = over all pairs.
    let mut e = vec![0.0f64; q * q];
    let mut gram = vec![0.0f64; q * q];
    for i in 0..n {
        for c in 0..q {
            let tic = tau.data[i * q + c];
            if tic == 0.0 {
                continue;
            }
            for d in 0..q {
                e[c * q + d] += tic * a[i * q + d];
                gram[c * q + d] += tic * tau.data[i * q + d];
            }
        }
    }
    let mut coupling = 0.0;
    for c in 0..q {
        for d in 0..q {
            let edges = e[c * q + d];
            let pairs = t[c] * t[d] - gram[c * q + d];
            coupling += edges * lp[c][d] + (pairs - edges) * l1p[c][d];
        }
    }
    let ent = entropy_prior_term(tau, params.alpha());
    if ent == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    coupling - ent
}

/// The variational objective
/// `J = sum_{i != j} sum_{c,d} b_ij(c,d) tau_ic tau_jd - sum_{i,c} tau_ic (ln tau_ic - ln alpha_c)`
/// with `b_ij(c,d)` the Bernoulli log-mass of edge `(i,j)` under `pi[c][d]`.
/// Equals the marginal log-likelihood minus `K(D_tau || posterior)`.
pub fn elbo(graph: &LabeledGraph, tau: &TauMatrix, params: &SbmParams) -> Result<f64> {
    if tau.n != graph.n() || tau.q != params.q() {
        return Err(SbmError::InvalidParams(
            "tau shape does not match graph/params".into(),
        ));
    }
    params.validate()?;
    if pi_is_interior(params.pi()) {
        Ok(elbo_fast(graph, tau, params))
    } else {
        Ok(elbo_direct(graph, tau, params))
    }
}

/// Fixed-point target rows: `tau_ic ∝ alpha_c exp(sum_{j != i} sum_d
/// tau_jd [b_ij(c,d) + b_ji(d,c)])`, floored and renormalized.
fn fixed_point_rows(
    graph: &LabeledGraph,
    tau: &TauMatrix,
    params: &SbmParams,
) -> Result<TauMatrix> {
    let n = tau.n;
    let q = tau.q;
    let (lp, l1p) = log_pi_tables(params.pi());
    let ln_alpha: Vec<f64> = params.alpha().iter().map(|&a| a.ln()).collect();
    let mut fields = vec![0.0f64; n * q];

    if pi_is_interior(params.pi()) {
        let (t, a, b) = tau_products(graph, tau);
        let mut w = vec![0.0f64; q * q];
        for c in 0..q {
            for d in 0..q {
                w[c * q + d] = lp[c][d] - l1p[c][d];
            }
        }
        for i in 0..n {
            for c in 0..q {
                let mut f = ln_alpha[c];
                for d in 0..q {
                    let others = t[d] - tau.data[i * q + d];
                    f += others * (l1p[c][d] + l1p[d][c]);
                    f += a[i * q + d] * w[c * q + d];
                    f += b[i * q + d] * w[d * q + c];
                }
                fields[i * q + c] = f;
            }
        }
    } else {
        // Boundary pi: evaluate pair by pair so that -inf terms are exact.
        for i in 0..n {
            for c in 0..q {
                let mut f = ln_alpha[c];
                'pairs: for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let out_t = if graph.edge(i, j) { &lp } else { &l1p };
                    let in_t = if graph.edge(j, i) { &lp } else { &l1p };
                    for d in 0..q {
                        let tjd = tau.data[j * q + d];
                        let term =
                            mul_log(tjd, out_t[c][d]) + mul_log(tjd, in_t[d][c]);
                        if term == f64::NEG_INFINITY {
                            f = f64::NEG_INFINITY;
                            break 'pairs;
                        }
                        f += term;
                    }
                }
                fields[i * q + c] = f;
            }
        }
    }

    let mut data = vec![0.0f64; n * q];
    for i in 0..n {
        let row = &fields[i * q..(i + 1) * q];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(SbmError::DegenerateModel(format!(
                "vertex {} has no admissible class under the current parameters",
                i + 1
            )));
        }
        let mut s = 0.0;
        for c in 0..q {
            let v = (row[c] - m).exp();
            data[i * q + c] = v;
            s += v;
        }
        for c in 0..q {
            data[i * q + c] /= s;
        }
    }
    let mut out = TauMatrix { n, q, data };
    out.floor_renormalize();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TauUpdate {
    pub tau: TauMatrix,
    /// ELBO at the returned tau (under the parameters passed in).
    pub objective: f64,
    /// Set when even maximal damping could not avoid an ELBO drop beyond the
    /// slack; the input tau is returned unchanged in that case.
    pub stalled: bool,
}

/// One (or `inner_iters`) damped fixed-point sweeps of tau. Each sweep
/// computes the target rows from the current tau, then blends
/// `new = (1 - lambda) * target + lambda * old`, raising `lambda` by
/// `(1 + lambda)/2` up to 8 times until the ELBO does not drop by more than
/// `ASCENT_SLACK`; if all attempts fail the sweep stalls.
pub fn update_tau(
    graph: &LabeledGraph,
    tau: &TauMatrix,
    params: &SbmParams,
    inner_iters: usize,
    damping: f64,
) -> Result<TauUpdate> {
    if !(0.0..1.0).contains(&damping) {
        return Err(SbmError::InvalidBound(format!(
            "damping={damping} must lie in [0, 1)"
        )));
    }
    let mut current = tau.clone();
    let mut j_cur = elbo(graph, &current, params)?;
    for _ in 0..inner_iters.max(1) {
        let target = fixed_point_rows(graph, &current, params)?;
        let mut lambda = damping;
        let mut accepted = false;
        for _attempt in 0..=8 {
            let blended = if lambda == 0.0 {
                target.clone()
            } else {
                let mut data = vec![0.0f64; current.n * current.q];
                for (k, v) in data.iter_mut().enumerate() {
                    *v = (1.0 - lambda) * target.data[k] + lambda * current.data[k];
                }
                TauMatrix {
                    n: current.n,
                    q: current.q,
                    data,
                }
            };
            let j_new = elbo(graph, &blended, params)?;
            if j_new >= j_cur - ASCENT_SLACK {
                current = blended;
                j_cur = j_new;
                accepted = true;
                break;
            }
            lambda = (1.0 + lambda) / 2.0;
        }
        if !accepted {
            return Ok(TauUpdate {
                tau: tau.clone(),
                objective: elbo(graph, tau, params)?,
                stalled: true,
            });
        }
    }
    Ok(TauUpdate {
        tau: current,
        objective: j_cur,
        stalled: false,
    })
}

#[derive(Debug, Clone)]
pub struct MStepResult {
    pub params: SbmParams,
    pub flags: Vec<String>,
}

/// Closed-form maximizer of the ELBO over `(alpha, pi)` at fixed tau:
/// `alpha` = column means of tau, `pi[c][d]` = tau-weighted edge frequency
/// among ordered pairs. A block pair with zero weight gets 0.5 and a flag.
pub fn m_step(graph: &LabeledGraph, tau: &TauMatrix) -> Result<MStepResult> {
    let n = tau.n;
    let q = tau.q;
    if n != graph.n() {
        return Err(SbmError::InvalidParams(
            "tau shape does not match graph".into(),
        ));
    }
    if n == 0 {
        return Err(SbmError::InvalidParams("m-step needs n >= 1".into()));
    }
    let (t, a, _b) = tau_products(graph, tau);
    let mut alpha: Vec<f64> = t.iter().map(|&s| s / n as f64).collect();
    let sa: f64 = alpha.iter().sum();
    for v in alpha.iter_mut() {
        *v /= sa;
    }
    let mut e = vec![0.0f64; q * q];
    let mut gram = vec![0.0f64; q * q];
    for i in 0..n {
        for c in 0..q {
            let tic = tau.data[i * q + c];
            if tic == 0.0 {
                continue;
            }
            for d in 0..q {
                e[c * q + d] += tic * a[i * q + d];
                gram[c * q + d] += tic * tau.data[i * q + d];
            }
        }
    }
    let mut flags = Vec::new();
    let mut pi = vec![vec![0.0f64; q]; q];
    for c in 0..q {
        for d in 0..q {
            let pairs = t[c] * t[d] - gram[c * q + d];
            if pairs <= 0.0 {
                let f = "empty-block".to_string();
                if !flags.contains(&f) {
                    flags.push(f);
                }
                pi[c][d] = 0.5;
            } else {
                pi[c][d] = (e[c * q + d] / pairs).clamp(0.0, 1.0);
            }
        }
    }
    Ok(MStepResult {
        params: SbmParams::new(alpha, pi)?,
        flags,
    })
}

#[derive(Debug, Clone)]
pub struct VemOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub inner_iters: usize,
    pub damping: f64,
    pub seed: u64,
}

impl Default for VemOptions {
    fn default() -> Self {
        VemOptions {
            restarts: 10,
            max_iter: 500,
            tol: 1e-8,
            inner_iters: 1,
            damping: 0.0,
            seed: 0,
        }
    }
}

/// One restart's full record, including the final responsibilities.
#[derive(Debug, Clone)]
pub struct RestartRun {
    pub tau: TauMatrix,
    pub params: SbmParams,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<String>,
}

impl RestartRun {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("restart trace is never empty")
    }
}

#[derive(Debug, Clone)]
pub struct VemOutcome {
    /// Index of the restart with the highest final ELBO (lowest index wins
    /// exact ties).
    pub best: usize,
    pub runs: Vec<RestartRun>,
}

impl VemOutcome {
    pub fn best_run(&self) -> &RestartRun {
        &self.runs[self.best]
    }
}

/// Initialization for restart 0: rank vertices by total degree and cut into
/// `q` quantile bins; each row puts 0.8 on its bin's class. Deterministic.
fn degree_quantile_init(graph: &LabeledGraph, q: usize) -> TauMatrix {
    let n = graph.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (graph.out_degree(i) + graph.in_degree(i), i));
    let mut data = vec![0.0f64; n * q];
    let off = if q > 1 { 0.2 / (q - 1) as f64 } else { 0.0 };
    for (pos, &i) in order.iter().enumerate() {
        let bin = pos * q / n.max(1);
        for c in 0..q {
            data[i * q + c] = if c == bin { if q > 1 { 0.8 } else { 1.0 } } else { off };
        }
    }
    TauMatrix { n, q, data }
}

/// Initialization for restarts >= 1: rows drawn from a flat Dirichlet via
/// normalized exponentials, seeded by (seed, restart index).
fn dirichlet_init(n: usize, q: usize, seed: u64, restart: usize) -> TauMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, restart as u64]));
    let mut data = vec![0.0f64; n * q];
    for i in 0..n {
        let mut s = 0.0;
        for c in 0..q {
            let u: f64 = rng.random();
            let e = -u.max(f64::MIN_POSITIVE).ln();
            data[i * q + c] = e;
            s += e;
        }
        for c in 0..q {
            data[i * q + c] /= s;
        }
    }
    TauMatrix { n, q, data }
}

fn run_restart(
    graph: &LabeledGraph,
    mut tau: TauMatrix,
    opts: &VemOptions,
) -> Result<RestartRun> {
    tau.floor_renormalize();
    let mut ms = m_step(graph, &tau)?;
    let mut params = ms.params;
    let mut flags = ms.flags;
    let mut j = elbo(graph, &tau, &params)?;
    let mut trace = vec![j];
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=opts.max_iter {
        let upd = update_tau(graph, &tau, &params, opts.inner_iters, opts.damping)?;
        if upd.stalled {
            let f = "stalled".to_string();
            if !flags.contains(&f) {
                flags.push(f);
            }
        }
        tau = upd.tau;
        ms = m_step(graph, &tau)?;
        params = ms.params;
        for f in ms.flags {
            if !flags.contains(&f) {
                flags.push(f);
            }
        }
        let j_new = elbo(graph, &tau, &params)?;
        trace.push(j_new);
        iterations = iter;
        if j_new - j < opts.tol {
            converged = true;
            break;
        }
        j = j_new;
    }
    Ok(RestartRun {
        tau,
        params,
        trace,
        iterations,
        converged,
        flags,
    })
}

/// Variational EM with restarts. Restart 0 uses the degree-quantile
/// heuristic, later restarts use random Dirichlet rows; all runs are
/// deterministic in (`opts.seed`, restart index). Returns every restart; the
/// best is the one with the highest final ELBO.
pub fn vem_fit_detailed(
    graph: &LabeledGraph,
    q: usize,
    opts: &VemOptions,
) -> Result<VemOutcome> {
    if graph.n() < 2 {
        return Err(SbmError::InvalidParams(
            "variational fit needs n >= 2".into(),
        ));
    }
    if q == 0 {
        return Err(SbmError::InvalidParams("q must be at least 1".into()));
    }
    if opts.restarts == 0 {
        return Err(SbmError::InvalidParams("restarts must be >= 1".into()));
    }
    let mut runs = Vec::with_capacity(opts.restarts);
    for r in 0..opts.restarts {
        let init = if r == 0 {
            degree_quantile_init(graph, q)
        } else {
            dirichlet_init(graph.n(), q, opts.seed, r)
        };
        runs.push(run_restart(graph, init, opts)?);
    }
    let mut best = 0;
    for r in 1..runs.len() {
        if runs[r].objective() > runs[best].objective() {
            best = r;
        }
    }
    Ok(VemOutcome { best, runs })
}

pub fn vem_fit(graph: &LabeledGraph, q: usize, opts: &VemOptions) -> Result<FitResult> {
    let outcome = vem_fit_detailed(graph, q, opts)?;
    let best = outcome.best_run();
    Ok(FitResult {
        params: best.params.clone(),
        objective_trace: best.trace.clone(),
        iterations: best.iterations,
        restarts_used: outcome.runs.len(),
        converged: best.converged,
        flags: best.flags.clone(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct TvPinsker {
    /// |D_tau(z*) - posterior(z*)|
    pub lhs: f64,
    /// sqrt(-log(posterior(z*)) / 2)
    pub rhs: f64,
    pub ok: bool,
}

/// Pointwise total-variation check: the product distribution's mass at
/// `z_star` can differ from the posterior's by at most
/// `sqrt(-log(posterior(z_star))/2)`. Holds whenever the product
/// distribution is at least as close to the posterior (in KL) as the point
/// mass at `z_star` is — e.g. for tau from an update converged from that
/// point mass.
pub fn tv_pinsker_check(
    tau: &TauMatrix,
    table: &PosteriorTable,
    z_star: &[usize],
) -> Result<TvPinsker> {
    if tau.n() != table.n() || tau.q() != table.q() {
        return Err(SbmError::InvalidParams(
            "tau shape does not match the posterior table".into(),
        ));
    }
    let lp = table.log_prob(z_star)?;
    let mut d = 1.0f64;
    for (i, &c) in z_star.iter().enumerate() {
        d *= tau.get(i, c);
    }
    let lhs = (d - lp.exp()).abs();
    let rhs = (-0.5 * lp).max(0.0).sqrt();
    Ok(TvPinsker {
        lhs,
        rhs,
        ok: lhs <= rhs + ASCENT_SLACK,
    })
}

//! Closed-form parameter identification from graph moments.
//!
//! The out-rate of class `k` is `r_k = sum_l pi[k][l] alpha[l]`. Two families
//! of observables determine the parameters when the rates are distinct:
//!
//! * `u_i = sum_k alpha_k r_k^i` — the probability that one vertex sends
//!   edges to `i` distinct other vertices, for `i = 0..2q-1`;
//! * `U[i][j] = sum_{k,l} r_k^i alpha_k pi[k][l] alpha_l r_l^j` — the
//!   probability of an edge `0 -> 1` together with `i` further edges out of
//!   vertex 0 and `j` further edges out of vertex 1, all endpoints distinct.
//!
//! `recover_from_moments` turns these into `(alpha, pi)`: the rates are the
//! roots of a polynomial with Hankel-minor coefficients, `alpha` comes from
//! diagonalizing the Hankel matrix against the rate Vandermonde, and `pi`
//! from inverting the same Vandermonde against `U`. When all rates coincide
//! the map is singular; for `q = 2` a separate route through the two- and
//! three-cycle probabilities (`c`, `d`) still identifies a symmetric `pi`
//! under equal class weights (`recover_q2_n4`).

use crate::error::{Result, SbmError};
use crate::graph::{sample_graph, sample_graph_partial, LabeledGraph};
use crate::params::SbmParams;
use crate::util::mix_seed;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest class count accepted by the recovery pipeline. The Hankel systems
/// grow ill-conditioned quickly; beyond this the determinant scales defeat
/// double precision.
pub const MAX_MOMENT_Q: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentSource {
    Analytic,
    Empirical,
}

/// Which side of the adjacency matrix the moments describe. `Row` uses
/// out-edges (rates `pi * alpha`), `Column` uses in-edges (rates
/// `pi^T * alpha`); recovery transposes its answer back for `Column`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentOrientation {
    Row,
    Column,
}

/// A bundle of moment values for one class count, with standard errors when
/// they came from simulation. `d` and `c` are the three- and two-cycle
/// probabilities, carried only for `q = 2` where the degenerate-rate route
/// needs them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentSet {
    pub q: usize,
    pub u: Vec<f64>,
    #[serde(rename = "U")]
    pub big_u: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c: Option<f64>,
    pub source: MomentSource,
    /// Graphs averaged for `Empirical`, orderings for single-graph
    /// estimates, 0 for `Analytic`.
    pub samples: usize,
    pub orientation: MomentOrientation,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub se_u: Option<Vec<f64>>,
    #[serde(rename = "se_U", skip_serializing_if = "Option::is_none", default)]
    pub se_big_u: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub se_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub se_c: Option<f64>,
}

impl MomentSet {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(SbmError::InvalidParams("moments need q >= 1".into()));
        }
        if self.u.len() != 2 * self.q {
            return Err(SbmError::InvalidParams(format!(
                "u has length {}, expected 2q = {}",
                self.u.len(),
                2 * self.q
            )));
        }
        if (self.u[0] - 1.0).abs() > 1e-9 {
            return Err(SbmError::InvalidParams(format!(
                "u[0] = {} but the zeroth moment is 1 by definition",
                self.u[0]
            )));
        }
        if self.big_u.len() != self.q || self.big_u.iter().any(|r| r.len() != self.q) {
            return Err(SbmError::InvalidParams(format!(
                "U must be a {0}x{0} matrix",
                self.q
            )));
        }
        if let Some(se) = &self.se_u {
            if se.len() != self.u.len() {
                return Err(SbmError::InvalidParams(
                    "se_u length does not match u".into(),
                ));
            }
        }
        if let Some(se) = &self.se_big_u {
            if se.len() != self.q || se.iter().any(|r| r.len() != self.q) {
                return Err(SbmError::InvalidParams(
                    "se_U shape does not match U".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Tolerances of the recovery pipeline.
#[derive(Debug, Clone)]
pub struct RecoveryOptions {
    /// Relative floor under which the Hankel determinant counts as singular.
    pub singularity_tol: f64,
    /// Multiplier on the propagated standard error of the Hankel determinant
    /// (empirical moments only); the larger of the two gates applies.
    pub se_gate: f64,
    /// Recovered probabilities may stray this far outside their range before
    /// clamping raises a flag.
    pub clamp_tol: f64,
    /// Maximum imaginary part tolerated in a polynomial root.
    pub root_imag_tol: f64,
    /// Roots may fall this far outside [0,1] before extraction fails.
    pub root_box_slack: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            singularity_tol: 1e-10,
            se_gate: 5.0,
            clamp_tol: 1e-6,
            root_imag_tol: 1e-8,
            root_box_slack: 1e-6,
        }
    }
}

/// Output of a recovery: parameters plus the rate vector (in the moment
/// orientation, ascending) and per-root residuals of the monic rate
/// polynomial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryResult {
    #[serde(flatten)]
    pub params: SbmParams,
    pub r: Vec<f64>,
    pub residuals: Vec<f64>,
    pub flags: Vec<String>,
}

// ---------------------------------------------------------------------------
// Analytic moments
// ---------------------------------------------------------------------------

/// Exact moments of the model. For `q = 2` the cycle probabilities are
/// included: `c = sum_{k,l} a_k a_l pi[k][l] pi[l][k]` and
/// `d = sum_{k,l,m} a_k a_l a_m pi[k][l] pi[l][m] pi[m][k]`.
pub fn moments_analytic(params: &SbmParams, orientation: MomentOrientation) -> MomentSet {
    let p = match orientation {
        MomentOrientation::Row => params.clone(),
        MomentOrientation::Column => params.transposed(),
    };
    let q = p.q();
    let alpha = p.alpha();
    let r = p.out_rates();
    let mut u = vec![0.0; 2 * q];
    for (i, ui) in u.iter_mut().enumerate() {
        *ui = (0..q).map(|k| alpha[k] * r[k].powi(i as i32)).sum();
    }
    let mut big_u = vec![vec![0.0; q]; q];
    for (i, row) in big_u.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in 0..q {
                for l in 0..q {
                    s += r[k].powi(i as i32)
                        * alpha[k]
                        * p.pi_at(k, l)
                        * alpha[l]
                        * r[l].powi(j as i32);
                }
            }
            *v = s;
        }
    }
    let (d, c) = if q == 2 {
        let mut d = 0.0;
        let mut c = 0.0;
        for k in 0..q {
            for l in 0..q {
                c += alpha[k] * alpha[l] * p.pi_at(k, l) * p.pi_at(l, k);
                for m in 0..q {
                    d += alpha[k]
                        * alpha[l]
                        * alpha[m]
                        * p.pi_at(k, l)
                        * p.pi_at(l, m)
                        * p.pi_at(m, k);
                }
            }
        }
        (Some(d), Some(c))
    } else {
        (None, None)
    };
    MomentSet {
        q,
        u,
        big_u,
        d,
        c,
        source: MomentSource::Analytic,
        samples: 0,
        orientation,
        se_u: None,
        se_big_u: None,
        se_d: None,
        se_c: None,
    }
}

// ---------------------------------------------------------------------------
// Empirical moments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EmpiricalOptions {
    /// Independent graphs to average over.
    pub graphs: usize,
    /// Vertex orderings evaluated per graph (1 = the sampled order only).
    pub orderings: usize,
    pub seed: u64,
    pub orientation: MomentOrientation,
}

impl Default for EmpiricalOptions {
    fn default() -> Self {
        EmpiricalOptions {
            graphs: 10_000,
            orderings: 1,
            seed: 0,
            orientation: MomentOrientation::Row,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GraphMomentOptions {
    /// Random vertex orderings averaged on the one observed graph.
    pub orderings: usize,
    pub seed: u64,
    pub orientation: MomentOrientation,
}

impl Default for GraphMomentOptions {
    fn default() -> Self {
        GraphMomentOptions {
            orderings: 2000,
            seed: 0,
            orientation: MomentOrientation::Row,
        }
    }
}

struct Layout {
    q: usize,
    cycles: bool,
}

impl Layout {
    fn new(q: usize) -> Layout {
        Layout { q, cycles: q == 2 }
    }

    fn len(&self) -> usize {
        (2 * self.q - 1) + self.q * self.q + if self.cycles { 2 } else { 0 }
    }

    fn idx_u(&self, i: usize) -> usize {
        debug_assert!((1..2 * self.q).contains(&i));
        i - 1
    }

    fn idx_big_u(&self, i: usize, j: usize) -> usize {
        (2 * self.q - 1) + i * self.q + j
    }

    fn idx_d(&self) -> usize {
        (2 * self.q - 1) + self.q * self.q
    }

    fn idx_c(&self) -> usize {
        self.idx_d() + 1
    }
}

/// Add the indicator pattern of one vertex ordering to `out`.
///
/// With `p` the ordering (position -> vertex): the `u_i` event is edges from
/// `p[0]` to `p[1..=i]`; the `U[i][j]` event is the edge `p[0] -> p[1]` plus
/// `i` edges `p[0] -> p[2..2+i]` and `j` edges `p[1] -> ` the last `j`
/// positions (disjoint because `n >= 2q`); the cycles run over `p[0..3]`.
fn add_ordering(graph: &LabeledGraph, p: &[usize], lay: &Layout, out: &mut [f64]) {
    let q = lay.q;
    let n = p.len();
    let v0 = p[0];
    let v1 = p[1];
    for i in 1..2 * q {
        if !graph.edge(v0, p[i]) {
            break;
        }
        out[lay.idx_u(i)] += 1.0;
    }
    if graph.edge(v0, v1) {
        let mut e0 = vec![true; q];
        for i in 1..q {
            e0[i] = e0[i - 1] && graph.edge(v0, p[1 + i]);
        }
        let mut e1 = vec![true; q];
        for j in 1..q {
            e1[j] = e1[j - 1] && graph.edge(v1, p[n - j]);
        }
        for i in 0..q {
            if !e0[i] {
                break;
            }
            for j in 0..q {
                if !e1[j] {
                    break;
                }
                out[lay.idx_big_u(i, j)] += 1.0;
            }
        }
    }
    if lay.cycles {
        let v2 = p[2];
        if graph.edge(v0, v1) && graph.edge(v1, v2) && graph.edge(v2, v0) {
            out[lay.idx_d()] += 1.0;
        }
        if graph.edge(v0, v1) && graph.edge(v1, v0) {
            out[lay.idx_c()] += 1.0;
        }
    }
}

/// Mean indicator vector of one graph over `orderings` vertex orderings
/// (the natural order first, then uniformly shuffled ones).
fn graph_mean(
    graph: &LabeledGraph,
    lay: &Layout,
    orderings: usize,
    order_seed: u64,
) -> Vec<f64> {
    let n = graph.n();
    let mut out = vec![0.0; lay.len()];
    let mut p: Vec<usize> = (0..n).collect();
    add_ordering(graph, &p, lay, &mut out);
    if orderings > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(order_seed);
        for _ in 1..orderings {
            p.shuffle(&mut rng);
            add_ordering(graph, &p, lay, &mut out);
        }
    }
    for v in out.iter_mut() {
        *v /= orderings as f64;
    }
    out
}

/// Adjacency entries read by the literal single-ordering estimator. Sampling
/// only these (bit-identical to the corresponding entries of a full draw)
/// makes large graph counts cheap.
fn literal_pairs(lay: &Layout, n: usize) -> Vec<(usize, usize)> {
    let q = lay.q;
    let mut pairs = Vec::new();
    for k in 1..2 * q {
        pairs.push((0, k));
    }
    pairs.push((0, 1));
    for i in 1..q {
        pairs.push((0, 1 + i));
    }
    for j in 1..q {
        pairs.push((1, n - j));
    }
    if lay.cycles {
        pairs.extend_from_slice(&[(0, 1), (1, 2), (2, 0), (1, 0)]);
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn check_budget(q: usize, n: usize) -> Result<()> {
    if q == 0 {
        return Err(SbmError::InvalidParams("moments need q >= 1".into()));
    }
    if n < 2 * q {
        return Err(SbmError::InvalidParams(format!(
            "moment estimation needs n >= 2q distinct vertices, got n={n}, q={q}"
        )));
    }
    Ok(())
}

fn assemble(
    q: usize,
    mean: Vec<f64>,
    se: Vec<f64>,
    source: MomentSource,
    samples: usize,
    orientation: MomentOrientation,
) -> MomentSet {
    let lay = Layout::new(q);
    let mut u = vec![1.0; 2 * q];
    let mut se_u = vec![0.0; 2 * q];
    for i in 1..2 * q {
        u[i] = mean[lay.idx_u(i)];
        se_u[i] = se[lay.idx_u(i)];
    }
    let mut big_u = vec![vec![0.0; q]; q];
    let mut se_big_u = vec![vec![0.0; q]; q];
    for i in 0..q {
        for j in 0..q {
            big_u[i][j] = mean[lay.idx_big_u(i, j)];
            se_big_u[i][j] = se[lay.idx_big_u(i, j)];
        }
    }
    let (d, se_d, c, se_c) = if lay.cycles {
        (
            Some(mean[lay.idx_d()]),
            Some(se[lay.idx_d()]),
            Some(mean[lay.idx_c()]),
            Some(se[lay.idx_c()]),
        )
    } else {
        (None, None, None, None)
    };
    MomentSet {
        q,
        u,
        big_u,
        d,
        c,
        source,
        samples,
        orientation,
        se_u: Some(se_u),
        se_big_u: Some(se_big_u),
        se_d,
        se_c,
    }
}

/// Monte-Carlo moments: sample `opts.graphs` independent graphs of size `n`
/// from `params` and average the defining indicator events. Standard errors
/// are per-entry binomial for a single ordering per graph, otherwise the
/// across-graph sample error of the per-graph means. Deterministic in
/// `opts.seed` and independent of thread count.
pub fn moments_empirical(
    params: &SbmParams,
    n: usize,
    opts: &EmpiricalOptions,
) -> Result<MomentSet> {
    params.validate()?;
    let q = params.q();
    check_budget(q, n)?;
    if opts.graphs == 0 {
        return Err(SbmError::InvalidParams(
            "empirical moments need at least one graph".into(),
        ));
    }
    if opts.orderings == 0 {
        return Err(SbmError::InvalidParams(
            "orderings must be >= 1".into(),
        ));
    }
    let lay = Layout::new(q);
    let len = lay.len();
    let g_total = opts.graphs;
    // Single ordering: draw only the adjacency entries the estimator reads.
    let pairs: Option<Vec<(usize, usize)>> = (opts.orderings == 1).then(|| {
        let p = literal_pairs(&lay, n);
        match opts.orientation {
            MomentOrientation::Row => p,
            MomentOrientation::Column => p.into_iter().map(|(a, b)| (b, a)).collect(),
        }
    });
    const CHUNK: usize = 1024;
    let n_chunks = g_total.div_ceil(CHUNK);
    // Fixed chunk boundaries + an in-order final fold keep the sums
    // bit-identical for any thread count.
    let partials: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lay = Layout::new(q);
            let mut sum = vec![0.0; len];
            let mut sumsq = vec![0.0; len];
            for g in ci * CHUNK..((ci + 1) * CHUNK).min(g_total) {
                let gs = mix_seed(&[opts.seed, 0xA, g as u64]);
                let mut graph = match &pairs {
                    Some(p) => sample_graph_partial(params, n, gs, p)?,
                    None => sample_graph(params, n, gs)?,
                };
                if opts.orientation == MomentOrientation::Column {
                    graph = graph.transposed();
                }
                let os = mix_seed(&[opts.seed, 0xB, g as u64]);
                let m = graph_mean(&graph, &lay, opts.orderings, os);
                for k in 0..len {
                    sum[k] += m[k];
                    sumsq[k] += m[k] * m[k];
                }
            }
            Ok((sum, sumsq))
        })
        .collect();
    let partials = partials?;
    let mut sum = vec![0.0; len];
    let mut sumsq = vec![0.0; len];
    for (s, s2) in partials {
        for k in 0..len {
            sum[k] += s[k];
            sumsq[k] += s2[k];
        }
    }
    let gf = g_total as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / gf).collect();
    let se: Vec<f64> = if opts.orderings == 1 {
        mean.iter()
            .map(|&p| (p * (1.0 - p) / gf).sqrt())
            .collect()
    } else {
        mean.iter()
            .zip(&sumsq)
            .map(|(&m, &s2)| ((s2 / gf - m * m).max(0.0) / gf).sqrt())
            .collect()
    };
    Ok(assemble(
        q,
        mean,
        se,
        MomentSource::Empirical,
        g_total,
        opts.orientation,
    ))
}

/// Moment estimates from a single observed graph, averaging the indicator
/// events over random vertex orderings. The reported standard errors use the
/// binomial formula in the number of orderings; they understate the true
/// uncertainty because all orderings reuse one graph.
pub fn moments_from_graph(
    graph: &LabeledGraph,
    q: usize,
    opts: &GraphMomentOptions,
) -> Result<MomentSet> {
    check_budget(q, graph.n())?;
    if opts.orderings == 0 {
        return Err(SbmError::InvalidParams("orderings must be >= 1".into()));
    }
    let lay = Layout::new(q);
    let oriented;
    let graph = if opts.orientation == MomentOrientation::Column {
        oriented = graph.transposed();
        &oriented
    } else {
        graph
    };
    let mut out = vec![0.0; lay.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[opts.seed, 0xC]));
    let mut p: Vec<usize> = (0..graph.n()).collect();
    for _ in 0..opts.orderings {
        p.shuffle(&mut rng);
        add_ordering(graph, &p, &lay, &mut out);
    }
    let kf = opts.orderings as f64;
    let mean: Vec<f64> = out.iter().map(|v| v / kf).collect();
    let se: Vec<f64> = mean.iter().map(|&p| (p * (1.0 - p) / kf).sqrt()).collect();
    Ok(assemble(
        q,
        mean,
        se,
        MomentSource::Empirical,
        opts.orderings,
        opts.orientation,
    ))
}

// ---------------------------------------------------------------------------
// Recovery
// ---------------------------------------------------------------------------

fn hankel(q: usize, u: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(q, q, |i, j| u[i + j])
}

/// Hadamard bound on the Hankel determinant: the product of column norms.
/// Serves as the scale against which singularity is judged.
fn hankel_scale(h: &DMatrix<f64>) -> f64 {
    let mut s = 1.0;
    for j in 0..h.ncols() {
        s *= h.column(j).norm().max(f64::MIN_POSITIVE);
    }
    s
}

/// First-order standard error of `det(H)` for a Hankel matrix built from
/// moment estimates with standard errors `se_u`: the derivative with respect
/// to `u_s` is the sum of cofactors on the antidiagonal `i + j = s` (and
/// `u_0` is exact).
fn hankel_det_se(h: &DMatrix<f64>, se_u: &[f64]) -> f64 {
    let q = h.nrows();
    let mut w = vec![0.0; 2 * q - 1];
    for i in 0..q {
        for j in 0..q {
            let minor = h.clone().remove_row(i).remove_column(j);
            let cof = if (i + j).is_multiple_of(2) { 1.0 } else { -1.0 }
                * if q == 1 { 1.0 } else { minor.determinant() };
            w[i + j] += cof;
        }
    }
    let mut var = 0.0;
    for (s, &ws) in w.iter().enumerate().skip(1) {
        var += ws * ws * se_u[s] * se_u[s];
    }
    var.sqrt()
}

// ---------------------------------------------------------------------------
// Double-double scalars
//
// The monic coefficients of the rate polynomial are ratios of Hankel minors,
// and the denominator shrinks like the product of squared rate gaps: near the
// admissible gap floor it sits many orders of magnitude below the matrix
// scale, so f64 elimination leaves too few correct coefficient digits and the
// root error gets amplified again through the polynomial's own conditioning.
// Carrying the determinants, the coefficient ratios, and the Newton polish in
// double-double (~32 significant digits) removes that loss. The Vandermonde
// algebra downstream is far better conditioned and stays in f64.
// ---------------------------------------------------------------------------

/// Unevaluated sum `hi + lo` of two doubles, `|lo|` at most an ulp of `hi`.
#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Renormalize assuming `|e|` does not exceed `|s|`.
fn quick_two_sum(s: f64, e: f64) -> Dd {
    let hi = s + e;
    Dd { hi, lo: e - (hi - s) }
}

impl Dd {
    fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }

    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    fn add(self, o: Dd) -> Dd {
        let (s1, s2) = two_sum(self.hi, o.hi);
        let (t1, t2) = two_sum(self.lo, o.lo);
        let d = quick_two_sum(s1, s2 + t1);
        quick_two_sum(d.hi, d.lo + t2)
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = f64::mul_add(self.hi, o.hi, -p);
        quick_two_sum(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::from(q1)));
        quick_two_sum(q1, r.value() / o.hi)
    }
}

fn dd_from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Vec<Vec<Dd>> {
    (0..rows)
        .map(|i| (0..cols).map(|j| Dd::from(f(i, j))).collect())
        .collect()
}

/// Determinant by elimination with partial pivoting, all in double-double.
fn det_dd(mut a: Vec<Vec<Dd>>) -> Dd {
    let n = a.len();
    let mut det = Dd::from(1.0);
    for c in 0..n {
        let pivot = (c..n)
            .max_by(|&i, &j| a[i][c].hi.abs().total_cmp(&a[j][c].hi.abs()))
            .unwrap();
        if a[pivot][c].hi == 0.0 {
            return Dd::from(0.0);
        }
        if pivot != c {
            a.swap(pivot, c);
            det = det.neg();
        }
        det = det.mul(a[c][c]);
        for i in c + 1..n {
            let f = a[i][c].div(a[c][c]);
            for j in c..n {
                a[i][j] = a[i][j].sub(f.mul(a[c][j]));
            }
        }
    }
    det
}

/// Evaluate the monic polynomial `x^q + sum m_k x^k` and its derivative.
fn horner_monic(m: &[Dd], x: f64) -> (Dd, Dd) {
    let x = Dd::from(x);
    let mut p = Dd::from(1.0);
    let mut dp = Dd::from(0.0);
    for &c in m.iter().rev() {
        dp = dp.mul(x).add(p);
        p = p.mul(x).add(c);
    }
    (p, dp)
}

fn degenerate_gate(d_q: f64, scale: f64, se: f64, opts: &RecoveryOptions) -> bool {
    d_q.abs() <= (opts.singularity_tol * scale).max(opts.se_gate * se)
}

/// Constructive identification of `(alpha, pi)` from a full moment set with
/// pairwise distinct rates. Errors:
///
/// * [`SbmError::DegenerateMoments`] when the rate polynomial degenerates
///   (coincident rates, vanishing class weights, or a singular Hankel system
///   within the tolerance gates);
/// * [`SbmError::RootExtraction`] when a rate root leaves the real interval
///   [0,1] beyond the slack;
/// * [`SbmError::SizeLimit`] for `q > 6`.
///
/// Recovered classes are ordered by ascending rate. Probabilities are always
/// clamped into range; excursions beyond `clamp_tol` add an
/// `alpha-out-of-range` / `pi-out-of-range` flag.
pub fn recover_from_moments(ms: &MomentSet, opts: &RecoveryOptions) -> Result<RecoveryResult> {
    ms.validate()?;
    let q = ms.q;
    if q > MAX_MOMENT_Q {
        return Err(SbmError::SizeLimit(format!(
            "moment recovery supports q <= {MAX_MOMENT_Q}, got {q}"
        )));
    }
    let h = hankel(q, &ms.u);
    let d_q_dd = if q == 1 {
        Dd::from(1.0)
    } else {
        det_dd(dd_from_fn(q, q, |i, j| ms.u[i + j]))
    };
    let d_q = d_q_dd.value();
    let scale = hankel_scale(&h);
    let se_dq = ms
        .se_u
        .as_ref()
        .map(|se| hankel_det_se(&h, se))
        .unwrap_or(0.0);
    if degenerate_gate(d_q, scale, se_dq, opts) {
        return Err(SbmError::DegenerateMoments(format!(
            "rate Hankel determinant {d_q:.3e} is singular at scale {scale:.3e}"
        )));
    }

    // Coefficients of the rate polynomial: minors of the (q+1) x q moment
    // matrix with one row struck out, alternating in sign; monic after
    // dividing by the Hankel determinant.
    let mut monic = vec![Dd::from(0.0); q];
    for (k, mk) in monic.iter_mut().enumerate() {
        let minor = dd_from_fn(q, q, |i, j| ms.u[i + usize::from(i >= k) + j]);
        let det = det_dd(minor);
        let det = if (k + q).is_multiple_of(2) { det } else { det.neg() };
        *mk = det.div(d_q_dd);
    }

    // Rates = eigenvalues of the companion matrix, polished by Newton.
    let comp = DMatrix::from_fn(q, q, |i, j| {
        if j == q - 1 {
            -monic[i].value()
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let eig = comp.complex_eigenvalues();
    let lo = -opts.root_box_slack;
    let hi = 1.0 + opts.root_box_slack;
    let mut r = Vec::with_capacity(q);
    for e in eig.iter() {
        if e.im.abs() > opts.root_imag_tol {
            return Err(SbmError::RootExtraction(format!(
                "rate root {:.6} + {:.3e}i is not real",
                e.re, e.im
            )));
        }
        let mut x = e.re;
        if !(lo..=hi).contains(&x) {
            return Err(SbmError::RootExtraction(format!(
                "rate root {x:.6} lies outside [0,1]"
            )));
        }
        // Companion eigenvalues are only seeds; a few Newton steps against
        // the double-double coefficients restore the digits the f64 rounding
        // of the companion entries discarded.
        for _ in 0..3 {
            let (p, dp) = horner_monic(&monic, x);
            if dp.value().abs() < 1e-300 {
                break;
            }
            let next = x - p.div(dp).value();
            if !(lo..=hi).contains(&next) || next == x {
                break;
            }
            x = next;
        }
        r.push(x.clamp(0.0, 1.0));
    }
    r.sort_by(f64::total_cmp);
    for w in r.windows(2) {
        if w[1] <= w[0] {
            return Err(SbmError::DegenerateMoments(format!(
                "recovered rates are not pairwise distinct near {:.6}",
                w[0]
            )));
        }
    }
    let residuals: Vec<f64> = r
        .iter()
        .map(|&x| horner_monic(&monic, x).0.value().abs())
        .collect();

    // alpha from H = V diag(alpha) V^T with V the rate Vandermonde.
    let v = DMatrix::from_fn(q, q, |i, k| r[k].powi(i as i32));
    let v_inv = v.clone().try_inverse().ok_or_else(|| {
        SbmError::DegenerateMoments("rate Vandermonde is singular".into())
    })?;
    let a_mat = &v_inv * &h * v_inv.transpose();
    let alpha_raw: Vec<f64> = (0..q).map(|k| a_mat[(k, k)]).collect();
    if alpha_raw.iter().any(|a| a.abs() < 1e-10) {
        return Err(SbmError::DegenerateMoments(
            "a recovered class weight vanishes".into(),
        ));
    }

    // pi from U = V diag(alpha) Pi diag(alpha) V^T.
    let u_mat = DMatrix::from_fn(q, q, |i, j| ms.big_u[i][j]);
    let mid = &v_inv * &u_mat * v_inv.transpose();
    let mut pi_raw = vec![vec![0.0; q]; q];
    for k in 0..q {
        for l in 0..q {
            pi_raw[k][l] = mid[(k, l)] / (alpha_raw[k] * alpha_raw[l]);
        }
    }

    let mut flags = Vec::new();
    let mut alpha = alpha_raw.clone();
    if clamp_unit(&mut alpha, opts.clamp_tol) {
        flags.push("alpha-out-of-range".to_string());
    }
    let s: f64 = alpha.iter().sum();
    if s <= 0.0 {
        return Err(SbmError::DegenerateMoments(
            "recovered class weights sum to zero".into(),
        ));
    }
    for a in alpha.iter_mut() {
        *a /= s;
    }
    let mut pi = pi_raw;
    let mut pi_flag = false;
    for row in pi.iter_mut() {
        pi_flag |= clamp_unit(row, opts.clamp_tol);
    }
    if pi_flag {
        flags.push("pi-out-of-range".to_string());
    }
    let mut params = SbmParams::new(alpha, pi)?;
    if ms.orientation == MomentOrientation::Column {
        params = params.transposed();
    }
    Ok(RecoveryResult {
        params,
        r,
        residuals,
        flags,
    })
}

/// Clamp every value into [0,1]; returns true when some value exceeded the
/// range by more than `tol`.
fn clamp_unit(values: &mut [f64], tol: f64) -> bool {
    let mut flagged = false;
    for v in values.iter_mut() {
        if *v < -tol || *v > 1.0 + tol {
            flagged = true;
        }
        *v = v.clamp(0.0, 1.0);
    }
    flagged
}

/// Two-class identification that stays solvable when both rates coincide.
///
/// With distinct rates this delegates to [`recover_from_moments`]. At equal
/// rates the first-order moments carry no class information; the class
/// weights are then taken as (1/2, 1/2) and a symmetric `pi` is built from
/// the edge probability `a = u_1` and the three-cycle probability `d`
/// through `e = cbrt(d - a^3)`, giving on-diagonal `a + e` and off-diagonal
/// `a - e`. The two-cycle probability `c` separates this case from fully
/// independent edges: `|c - a^2|` below the gate means the model has a
/// single effective class and weights cannot be identified
/// ([`SbmError::DegenerateModel`]). A `two-cycle-mismatch` flag marks
/// inconsistency between `c` and the reconstruction.
pub fn recover_q2_n4(ms: &MomentSet, opts: &RecoveryOptions) -> Result<RecoveryResult> {
    ms.validate()?;
    if ms.q != 2 {
        return Err(SbmError::InvalidParams(format!(
            "this route is specific to q = 2, got q = {}",
            ms.q
        )));
    }
    let d = ms.d.ok_or_else(|| {
        SbmError::InvalidParams("three-cycle moment d is required".into())
    })?;
    let h = hankel(2, &ms.u);
    let d_q = det_dd(dd_from_fn(2, 2, |i, j| ms.u[i + j])).value();
    let scale = hankel_scale(&h);
    let se_dq = ms
        .se_u
        .as_ref()
        .map(|se| hankel_det_se(&h, se))
        .unwrap_or(0.0);
    if !degenerate_gate(d_q, scale, se_dq, opts) {
        return recover_from_moments(ms, opts);
    }

    let a = ms.u[1];
    let c = ms.c.ok_or_else(|| {
        SbmError::InvalidParams(
            "two-cycle moment c is required on the equal-rate branch".into(),
        )
    })?;
    let se_u1 = ms.se_u.as_ref().map(|s| s[1]).unwrap_or(0.0);
    let se_c = ms.se_c.unwrap_or(0.0);
    let diff = c - a * a;
    let se_diff = (se_c * se_c + (2.0 * a * se_u1).powi(2)).sqrt();
    if diff.abs() <= (opts.singularity_tol).max(opts.se_gate * se_diff) {
        return Err(SbmError::DegenerateModel(
            "edges are independent of the classes; alpha cannot be identified".into(),
        ));
    }
    let e = (d - a * a * a).cbrt();
    let mut pi = vec![vec![a + e, a - e], vec![a - e, a + e]];
    let mut flags = Vec::new();
    let mut pi_flag = false;
    for row in pi.iter_mut() {
        pi_flag |= clamp_unit(row, opts.clamp_tol);
    }
    if pi_flag {
        flags.push("pi-out-of-range".to_string());
    }
    let se_d = ms.se_d.unwrap_or(0.0);
    let se_e = se_d / (3.0 * e * e).max(1e-12);
    let mismatch = (c - (a * a + e * e)).abs();
    let gate = opts
        .clamp_tol
        .max(opts.se_gate * (se_diff * se_diff + (2.0 * e * se_e).powi(2)).sqrt());
    if mismatch > gate {
        flags.push("two-cycle-mismatch".to_string());
    }
    let mut params = SbmParams::new(vec![0.5, 0.5], pi)?;
    if ms.orientation == MomentOrientation::Column {
        params = params.transposed();
    }
    Ok(RecoveryResult {
        params,
        r: vec![a, a],
        residuals: Vec::new(),
        flags,
    })
}

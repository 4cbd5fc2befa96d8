//! Exact (enumeration-based) likelihoods, posteriors and EM for small graphs.
//!
//! All of this enumerates the `q^n` label vectors, so every entry point
//! enforces the configurable cap `DEFAULT_ENUM_CAP`. Label vectors are
//! encoded as base-`q` integers with vertex 0 as the most significant digit,
//! which is also the lexicographic enumeration order.

use crate::error::{Result, SbmError};
use crate::fit::FitResult;
use crate::graph::LabeledGraph;
use crate::params::SbmParams;
use crate::symmetry::symmetry_group;
use crate::util::LogSumExp;
use crate::variational::TauMatrix;

pub const DEFAULT_ENUM_CAP: u64 = 1 << 24;

/// ln pi and ln(1-pi) lookup tables; entries may be -inf for {0,1} probabilities.
pub(crate) fn log_pi_tables(pi: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let lp = pi
        .iter()
        .map(|row| row.iter().map(|&p| p.ln()).collect())
        .collect();
    let l1p = pi
        .iter()
        .map(|row| row.iter().map(|&p| (1.0 - p).ln()).collect())
        .collect();
    (lp, l1p)
}

/// Complete-data log-likelihood of `(x, z)`: the sum over ordered pairs
/// `i != j` of the Bernoulli log-mass of the edge indicator under
/// `pi[z_i][z_j]`. Returns -inf when a {0,1} entry of `pi` contradicts the
/// data; the 0*log(0) = 0 convention is what makes consistent {0,1} entries
/// contribute zero.
pub fn complete_loglik(graph: &LabeledGraph, z: &[usize], pi: &[Vec<f64>]) -> Result<f64> {
    let n = graph.n();
    if z.len() != n {
        return Err(SbmError::InvalidParams(format!(
            "label vector length {} does not match n={}",
            z.len(),
            n
        )));
    }
    let q = pi.len();
    if z.iter().any(|&c| c >= q) {
        return Err(SbmError::InvalidParams("label out of range".into()));
    }
    let (lp, l1p) = log_pi_tables(pi);
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let t = if graph.edge(i, j) {
                lp[z[i]][z[j]]
            } else {
                l1p[z[i]][z[j]]
            };
            if t == f64::NEG_INFINITY {
                return Ok(f64::NEG_INFINITY);
            }
            total += t;
        }
    }
    Ok(total)
}

/// Log prior mass of a label vector: sum of `ln alpha[z_i]`.
pub fn prior_loglik(z: &[usize], alpha: &[f64]) -> Result<f64> {
    if z.iter().any(|&c| c >= alpha.len()) {
        return Err(SbmError::InvalidParams("label out of range".into()));
    }
    Ok(z.iter().map(|&c| alpha[c].ln()).sum())
}

pub(crate) fn check_cap(n: usize, q: usize, cap: u64) -> Result<usize> {
    let mut total: u128 = 1;
    for _ in 0..n {
        total *= q as u128;
        if total > cap as u128 {
            return Err(SbmError::SizeLimit(format!(
                "q^n = {q}^{n} exceeds the enumeration cap {cap}"
            )));
        }
    }
    Ok(total as usize)
}

/// Enumerate `complete_loglik + prior_loglik` for every label vector, in
/// encoding order. Work per vector is O(n) amortized: extending a prefix by
/// one vertex only adds that vertex's pair terms.
fn enumerate_log_joints(
    graph: &LabeledGraph,
    params: &SbmParams,
    cap: u64,
) -> Result<Vec<f64>> {
    let n = graph.n();
    let q = params.q();
    let len = check_cap(n, q, cap)?;
    let (lp, l1p) = log_pi_tables(params.pi());
    let ln_alpha: Vec<f64> = params.alpha().iter().map(|&a| a.ln()).collect();
    let mut out = Vec::with_capacity(len);
    let mut z = vec![0usize; n];

    // Explicit DFS over prefixes; acc[k] is the joint for the prefix z[..k].
    #[allow(clippy::too_many_arguments)]
    fn rec(
        k: usize,
        acc: f64,
        n: usize,
        q: usize,
        z: &mut [usize],
        graph: &LabeledGraph,
        lp: &[Vec<f64>],
        l1p: &[Vec<f64>],
        ln_alpha: &[f64],
        out: &mut Vec<f64>,
    ) {
        if k == n {
            out.push(acc);
            return;
        }
        for c in 0..q {
            let mut add = ln_alpha[c];
            for j in 0..k {
                let zj = z[j];
                add += if graph.edge(k, j) { lp[c][zj] } else { l1p[c][zj] };
                add += if graph.edge(j, k) { lp[zj][c] } else { l1p[zj][c] };
            }
            z[k] = c;
            rec(k + 1, acc + add, n, q, z, graph, lp, l1p, ln_alpha, out);
        }
    }
    rec(0, 0.0, n, q, &mut z, graph, &lp, &l1p, &ln_alpha, &mut out);
    Ok(out)
}

/// Marginal log-likelihood: logsumexp over all label vectors of the joint.
/// -inf is a legitimate value (data impossible under {0,1} entries of pi).
pub fn marginal_loglik(graph: &LabeledGraph, params: &SbmParams) -> Result<f64> {
    marginal_loglik_capped(graph, params, DEFAULT_ENUM_CAP)
}

pub fn marginal_loglik_capped(
    graph: &LabeledGraph,
    params: &SbmParams,
    cap: u64,
) -> Result<f64> {
    let joints = enumerate_log_joints(graph, params, cap)?;
    let mut acc = LogSumExp::new();
    for &v in &joints {
        acc.add(v);
    }
    Ok(acc.value())
}

/// Exact posterior over label vectors, stored as normalized log-probabilities
/// in encoding order, together with the marginal log-likelihood that
/// normalized them.
#[derive(Debug, Clone)]
pub struct PosteriorTable {
    n: usize,
    q: usize,
    log_probs: Vec<f64>,
    marginal: f64,
}

impl PosteriorTable {
    /// Build from unnormalized log-weights (length must be `q^n`). Errors if
    /// every weight is -inf.
    pub fn from_log_weights(n: usize, q: usize, weights: Vec<f64>) -> Result<Self> {
        let len = check_cap(n, q, DEFAULT_ENUM_CAP)?;
        if weights.len() != len {
            return Err(SbmError::InvalidParams(format!(
                "expected {len} weights, got {}",
                weights.len()
            )));
        }
        let mut acc = LogSumExp::new();
        for &w in &weights {
            acc.add(w);
        }
        let marginal = acc.value();
        if marginal == f64::NEG_INFINITY {
            return Err(SbmError::DegenerateModel(
                "all label vectors have zero probability".into(),
            ));
        }
        let log_probs = weights.into_iter().map(|w| w - marginal).collect();
        Ok(PosteriorTable {
            n,
            q,
            log_probs,
            marginal,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    /// Marginal log-likelihood of the data under the parameters the table was
    /// built with (the normalizer).
    pub fn marginal_loglik(&self) -> f64 {
        self.marginal
    }

    pub fn log_prob_code(&self, code: usize) -> f64 {
        self.log_probs[code]
    }

    pub fn prob_code(&self, code: usize) -> f64 {
        self.log_probs[code].exp()
    }

    pub fn log_prob(&self, z: &[usize]) -> Result<f64> {
        Ok(self.log_probs[self.encode(z)?])
    }

    pub fn prob(&self, z: &[usize]) -> Result<f64> {
        Ok(self.log_prob(z)?.exp())
    }

    pub fn encode(&self, z: &[usize]) -> Result<usize> {
        if z.len() != self.n {
            return Err(SbmError::InvalidParams(format!(
                "label vector length {} does not match n={}",
                z.len(),
                self.n
            )));
        }
        let mut code = 0usize;
        for &c in z {
            if c >= self.q {
                return Err(SbmError::InvalidParams("label out of range".into()));
            }
            code = code * self.q + c;
        }
        Ok(code)
    }

    pub fn decode(&self, code: usize) -> Vec<usize> {
        let mut z = vec![0usize; self.n];
        self.decode_into(code, &mut z);
        z
    }

    pub fn decode_into(&self, mut code: usize, z: &mut [usize]) {
        for i in (0..self.n).rev() {
            z[i] = code % self.q;
            code /= self.q;
        }
    }

    pub fn probs_sum(&self) -> f64 {
        self.log_probs.iter().map(|&l| l.exp()).sum()
    }
}

/// Exact posterior `P(Z = z | X)` under `params`, via full enumeration.
pub fn posterior_table(graph: &LabeledGraph, params: &SbmParams) -> Result<PosteriorTable> {
    posterior_table_capped(graph, params, DEFAULT_ENUM_CAP)
}

pub fn posterior_table_capped(
    graph: &LabeledGraph,
    params: &SbmParams,
    cap: u64,
) -> Result<PosteriorTable> {
    let joints = enumerate_log_joints(graph, params, cap)?;
    let mut acc = LogSumExp::new();
    for &v in &joints {
        acc.add(v);
    }
    let marginal = acc.value();
    if marginal == f64::NEG_INFINITY {
        return Err(SbmError::DegenerateModel(
            "data impossible under the given parameters: every label vector has zero posterior mass"
                .into(),
        ));
    }
    Ok(PosteriorTable {
        n: graph.n(),
        q: params.q(),
        log_probs: joints.into_iter().map(|v| v - marginal).collect(),
        marginal,
    })
}

/// Posterior mass of the equivalence class of `z` under the symmetry group of
/// `pi`: the sum of the posterior over all distinct relabelings of `z` by
/// group elements.
pub fn class_posterior_mass(
    table: &PosteriorTable,
    z: &[usize],
    pi: &[Vec<f64>],
) -> Result<f64> {
    let group = symmetry_group(pi)?;
    let mut codes: Vec<usize> = Vec::with_capacity(group.len());
    for sigma in &group {
        let code = table.encode(&sigma.apply_to_labels(z))?;
        if !codes.contains(&code) {
            codes.push(code);
        }
    }
    Ok(codes.iter().map(|&c| table.prob_code(c)).sum())
}

#[derive(Debug, Clone, Copy)]
pub struct RatioStat {
    pub value: f64,
    /// Set when the reference class carries zero posterior mass, in which
    /// case `value` is +inf.
    pub zero_mass: bool,
}

/// Total posterior mass of all equivalence classes other than that of
/// `z_star`, divided by the mass of the class of `z_star`. Classes are taken
/// under the symmetry group of `pi`; since classes partition the space this
/// equals `(1 - m) / m` with `m` the reference class mass.
pub fn posterior_ratio_stat(
    table: &PosteriorTable,
    z_star: &[usize],
    pi: &[Vec<f64>],
) -> Result<RatioStat> {
    let mass = class_posterior_mass(table, z_star, pi)?;
    if mass == 0.0 {
        return Ok(RatioStat {
            value: f64::INFINITY,
            zero_mass: true,
        });
    }
    Ok(RatioStat {
        value: ((1.0 - mass) / mass).max(0.0),
        zero_mass: false,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct KlResult {
    pub nats: f64,
    /// True when `d` puts mass where `p` has none (KL is then +inf).
    pub support_violation: bool,
}

/// KL divergence `K(d || p)` between two posteriors over the same label
/// space, with the 0*log(0) = 0 convention.
pub fn kl_table_table(d: &PosteriorTable, p: &PosteriorTable) -> Result<KlResult> {
    if d.n != p.n || d.q != p.q {
        return Err(SbmError::InvalidParams(
            "posterior tables have different shapes".into(),
        ));
    }
    let mut nats = 0.0;
    for code in 0..d.len() {
        let pd = d.prob_code(code);
        if pd == 0.0 {
            continue;
        }
        let lp = p.log_prob_code(code);
        if lp == f64::NEG_INFINITY {
            return Ok(KlResult {
                nats: f64::INFINITY,
                support_violation: true,
            });
        }
        nats += pd * (d.log_prob_code(code) - lp);
    }
    Ok(KlResult {
        nats: nats.max(0.0),
        support_violation: false,
    })
}

/// KL divergence `K(D_tau || p)` of the product (mean-field) distribution
/// with vertex marginals `tau` from the posterior `p`.
pub fn kl_product_table(tau: &TauMatrix, p: &PosteriorTable) -> Result<KlResult> {
    if tau.n() != p.n || tau.q() != p.q {
        return Err(SbmError::InvalidParams(
            "tau shape does not match the posterior table".into(),
        ));
    }
    let mut nats = 0.0;
    let mut z = vec![0usize; p.n];
    for code in 0..p.len() {
        p.decode_into(code, &mut z);
        let mut log_d = 0.0;
        for (i, &c) in z.iter().enumerate() {
            log_d += tau.get(i, c).ln();
        }
        let pd = log_d.exp();
        if pd == 0.0 {
            continue;
        }
        let lp = p.log_prob_code(code);
        if lp == f64::NEG_INFINITY {
            return Ok(KlResult {
                nats: f64::INFINITY,
                support_violation: true,
            });
        }
        nats += pd * (log_d - lp);
    }
    Ok(KlResult {
        nats: nats.max(0.0),
        support_violation: false,
    })
}

fn em_step(
    graph: &LabeledGraph,
    table: &PosteriorTable,
) -> (SbmParams, Vec<String>) {
    let n = table.n();
    let q = table.q();
    let mut marg = vec![0.0f64; n.max(1) * q];
    let mut num = vec![0.0f64; q * q];
    let mut den = vec![0.0f64; q * q];
    let mut z = vec![0usize; n];
    for code in 0..table.len() {
        let p = table.prob_code(code);
        if p == 0.0 {
            continue;
        }
        table.decode_into(code, &mut z);
        for (i, &zi) in z.iter().enumerate() {
            marg[i * q + zi] += p;
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let cell = z[i] * q + z[j];
                den[cell] += p;
                if graph.edge(i, j) {
                    num[cell] += p;
                }
            }
        }
    }
    // Posterior-mean class proportions; exact up to rounding, renormalized
    // defensively so the params validator's 1e-12 simplex check never trips.
    let mut alpha: Vec<f64> = (0..q)
        .map(|c| (0..n).map(|i| marg[i * q + c]).sum::<f64>() / n.max(1) as f64)
        .collect();
    if n == 0 {
        alpha = vec![1.0 / q as f64; q];
    }
    let s: f64 = alpha.iter().sum();
    for a in alpha.iter_mut() {
        *a /= s;
    }
    let mut flags = Vec::new();
    let pi: Vec<Vec<f64>> = (0..q)
        .map(|a| {
            (0..q)
                .map(|b| {
                    let d = den[a * q + b];
                    if d == 0.0 {
                        let f = "empty-block".to_string();
                        if !flags.contains(&f) {
                            flags.push(f);
                        }
                        0.5
                    } else {
                        (num[a * q + b] / d).clamp(0.0, 1.0)
                    }
                })
                .collect()
        })
        .collect();
    (
        SbmParams::new(alpha, pi).expect("EM step produces valid parameters"),
        flags,
    )
}

/// Exact EM on the enumerated posterior: the E-step is `posterior_table`, the
/// M-step sets `alpha` to posterior-mean class proportions and each `pi`
/// entry to the posterior-expected edge frequency of its block pair. The
/// trace holds the marginal log-likelihood starting at `init`; EM makes it
/// nondecreasing. Stops when a step gains less than `tol`.
pub fn exact_em_fit(
    graph: &LabeledGraph,
    init: &SbmParams,
    max_iter: usize,
    tol: f64,
) -> Result<FitResult> {
    exact_em_fit_capped(graph, init, max_iter, tol, DEFAULT_ENUM_CAP)
}

pub fn exact_em_fit_capped(
    graph: &LabeledGraph,
    init: &SbmParams,
    max_iter: usize,
    tol: f64,
    cap: u64,
) -> Result<FitResult> {
    init.validate()?;
    let mut params = init.clone();
    let mut table = posterior_table_capped(graph, &params, cap)?;
    let mut trace = vec![table.marginal_loglik()];
    let mut flags: Vec<String> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iter {
        let (new_params, step_flags) = em_step(graph, &table);
        let new_table = posterior_table_capped(graph, &new_params, cap)?;
        iterations += 1;
        trace.push(new_table.marginal_loglik());
        for f in step_flags {
            if !flags.contains(&f) {
                flags.push(f);
            }
        }
        params = new_params;
        table = new_table;
        let gain = trace[trace.len() - 1] - trace[trace.len() - 2];
        if gain < tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        params,
        objective_trace: trace,
        iterations,
        restarts_used: 1,
        converged,
        flags,
    })
}

/// Posterior vertex marginals `P(Z_i = c | X)` from an enumerated table,
/// row-major `n x q`.
pub fn posterior_vertex_marginals(table: &PosteriorTable) -> Vec<f64> {
    let n = table.n();
    let q = table.q();
    let mut marg = vec![0.0f64; n * q];
    let mut z = vec![0usize; n];
    for code in 0..table.len() {
        let p = table.prob_code(code);
        if p == 0.0 {
            continue;
        }
        table.decode_into(code, &mut z);
        for (i, &zi) in z.iter().enumerate() {
            marg[i * q + zi] += p;
        }
    }
    marg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sample_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_vertex_one_edge() -> LabeledGraph {
        let mut g = LabeledGraph::empty(2);
        g.set_edge(0, 1, true);
        g
    }

    #[test]
    fn complete_loglik_two_vertex_worked_case() {
        let g = two_vertex_one_edge();
        let pi = vec![vec![0.3, 0.5], vec![0.25, 0.6]];
        let got = complete_loglik(&g, &[0, 1], &pi).unwrap();
        let want = 0.5f64.ln() + (1.0 - 0.25f64).ln();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn impossible_edge_gives_neg_infinity() {
        let g = two_vertex_one_edge();
        let pi = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(
            complete_loglik(&g, &[0, 1], &pi).unwrap(),
            f64::NEG_INFINITY
        );
        // Consistent {0,1} entries contribute zero, not -inf.
        let pi = vec![vec![0.0, 1.0], vec![0.0, 0.0]];
        assert_eq!(complete_loglik(&g, &[0, 1], &pi).unwrap(), 0.0);
    }

    fn linear_scale_marginal(graph: &LabeledGraph, params: &SbmParams) -> f64 {
        // Oracle: direct probability-space enumeration, no log tricks.
        let n = graph.n();
        let q = params.q();
        let mut total = 0.0f64;
        let mut z = vec![0usize; n];
        let count = q.pow(n as u32);
        for code in 0..count {
            let mut c = code;
            for i in (0..n).rev() {
                z[i] = c % q;
                c /= q;
            }
            let mut prob = 1.0f64;
            for &zi in &z {
                prob *= params.alpha()[zi];
            }
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let p = params.pi_at(z[i], z[j]);
                    prob *= if graph.edge(i, j) { p } else { 1.0 - p };
                }
            }
            total += prob;
        }
        total.ln()
    }

    #[test]
    fn marginal_matches_linear_scale_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..30 {
            let n = 2 + (trial % 3);
            let a0: f64 = rng.random_range(0.2..0.8);
            let params = SbmParams::new(
                vec![a0, 1.0 - a0],
                vec![
                    vec![rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
                    vec![rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
                ],
            )
            .unwrap();
            let g = sample_graph(&params, n, trial as u64).unwrap();
            let got = marginal_loglik(&g, &params).unwrap();
            let want = linear_scale_marginal(&g, &params);
            assert!(
                (got - want).abs() < 1e-12,
                "trial {trial}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn marginal_two_vertex_no_edges_constant_half() {
        let params =
            SbmParams::new(vec![0.5, 0.5], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let g = LabeledGraph::empty(2);
        let got = marginal_loglik(&g, &params).unwrap();
        assert!((got - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn marginal_trivial_sizes() {
        let params =
            SbmParams::new(vec![0.5, 0.5], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(marginal_loglik(&LabeledGraph::empty(0), &params).unwrap(), 0.0);
        assert!(marginal_loglik(&LabeledGraph::empty(1), &params).unwrap().abs() < 1e-15);
    }

    #[test]
    fn size_limit_enforced() {
        let params =
            SbmParams::new(vec![0.5, 0.5], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let g = LabeledGraph::empty(30);
        assert!(matches!(
            marginal_loglik(&g, &params),
            Err(SbmError::SizeLimit(_))
        ));
    }

    #[test]
    fn posterior_uniform_under_constant_pi_uniform_alpha() {
        let params =
            SbmParams::new(vec![0.5, 0.5], vec![vec![0.4, 0.4], vec![0.4, 0.4]]).unwrap();
        let g = sample_graph(&params, 3, 1).unwrap();
        let t = posterior_table(&g, &params).unwrap();
        for code in 0..t.len() {
            assert!((t.prob_code(code) - 1.0 / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_is_bayes_consistent_per_vector() {
        let params =
            SbmParams::new(vec![0.3, 0.7], vec![vec![0.8, 0.2], vec![0.2, 0.6]]).unwrap();
        let g = sample_graph(&params, 5, 4).unwrap();
        let t = posterior_table(&g, &params).unwrap();
        let marginal = t.marginal_loglik();
        let mut z = vec![0usize; 5];
        for code in 0..t.len() {
            t.decode_into(code, &mut z);
            let joint = complete_loglik(&g, &z, params.pi()).unwrap()
                + prior_loglik(&z, params.alpha()).unwrap();
            let direct = (joint - marginal).exp();
            assert!((direct - t.prob_code(code)).abs() < 1e-12);
        }
        assert!((t.probs_sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_model_rejected() {
        // Single class, pi = 1, but an edge is missing: impossible data.
        let params = SbmParams::new(vec![1.0], vec![vec![1.0]]).unwrap();
        let g = two_vertex_one_edge(); // edge (1,0) absent
        assert!(matches!(
            posterior_table(&g, &params),
            Err(SbmError::DegenerateModel(_))
        ));
    }

    #[test]
    fn ratio_stat_uniform_table_trivial_group() {
        // Uniform posterior built under constant pi, but the group is taken
        // from a separate pi with no symmetry: 4 singleton classes, so the
        // statistic is (1 - 1/4) / (1/4) = 3.
        let cons =
            SbmParams::new(vec![0.5, 0.5], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let g = LabeledGraph::empty(2);
        let t = posterior_table(&g, &cons).unwrap();
        let asym_pi = vec![vec![0.8, 0.2], vec![0.2, 0.6]];
        let r = posterior_ratio_stat(&t, &[0, 0], &asym_pi).unwrap();
        assert!((r.value - 3.0).abs() < 1e-12);
        assert!(!r.zero_mass);
    }

    #[test]
    fn ratio_stat_flags_zero_mass() {
        let mut w = vec![f64::NEG_INFINITY; 4];
        w[0] = 0.0;
        w[3] = 0.0;
        let t = PosteriorTable::from_log_weights(2, 2, w).unwrap();
        let asym_pi = vec![vec![0.8, 0.2], vec![0.2, 0.6]];
        let r = posterior_ratio_stat(&t, &[0, 1], &asym_pi).unwrap();
        assert!(r.zero_mass);
        assert!(r.value.is_infinite());
    }

    #[test]
    fn class_mass_sums_group_orbit() {
        let params =
            SbmParams::new(vec![0.5, 0.5], vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let g = sample_graph(&params, 6, 2).unwrap();
        let t = posterior_table(&g, &params).unwrap();
        let z = g.labels().unwrap();
        let flip: Vec<usize> = z.iter().map(|&c| 1 - c).collect();
        let mass = class_posterior_mass(&t, z, params.pi()).unwrap();
        let direct = t.prob(z).unwrap() + t.prob(&flip).unwrap();
        assert!((mass - direct).abs() < 1e-14);
        // The orbit of z and the orbit of its flip are the same class.
        let mass_flip = class_posterior_mass(&t, &flip, params.pi()).unwrap();
        assert!((mass - mass_flip).abs() < 1e-14);
    }

    #[test]
    fn kl_self_is_zero_and_point_mass_matches_log_prob() {
        let params =
            SbmParams::new(vec![0.3, 0.7], vec![vec![0.8, 0.2], vec![0.2, 0.6]]).unwrap();
        let g = sample_graph(&params, 4, 8).unwrap();
        let t = posterior_table(&g, &params).unwrap();
        let self_kl = kl_table_table(&t, &t).unwrap();
        assert_eq!(self_kl.nats, 0.0);
        assert!(!self_kl.support_violation);

        let z = g.labels().unwrap();
        let delta = TauMatrix::one_hot(z, 2).unwrap();
        let kl = kl_product_table(&delta, &t).unwrap();
        assert!((kl.nats - (-t.log_prob(z).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn kl_flags_support_violation() {
        let mut w = vec![0.0f64; 4];
        w[2] = f64::NEG_INFINITY;
        let p = PosteriorTable::from_log_weights(2, 2, w).unwrap();
        let d = TauMatrix::uniform(2, 2);
        let kl = kl_product_table(&d, &p).unwrap();
        assert!(kl.support_violation);
        assert!(kl.nats.is_infinite());
    }

    #[test]
    fn em_trace_monotone_and_beats_truth() {
        let truth =
            SbmParams::new(vec![0.5, 0.5], vec![vec![0.85, 0.15], vec![0.15, 0.85]]).unwrap();
        let g = sample_graph(&truth, 9, 5).unwrap();
        let fit = exact_em_fit(&g, &truth, 200, 1e-10).unwrap();
        assert!(fit.trace_nondecreasing_within(1e-9), "{:?}", fit.objective_trace);
        assert!(fit.objective() >= marginal_loglik(&g, &truth).unwrap() - 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn em_converged_point_is_a_fixed_point() {
        let truth =
            SbmParams::new(vec![0.5, 0.5], vec![vec![0.85, 0.15], vec![0.15, 0.85]]).unwrap();
        let g = sample_graph(&truth, 8, 3).unwrap();
        let fit = exact_em_fit(&g, &truth, 300, 1e-11).unwrap();
        assert!(fit.converged);
        // Restarting from the converged parameters changes nothing: one
        // iteration, objective unchanged within tolerance.
        let again = exact_em_fit(&g, &fit.params, 300, 1e-11).unwrap();
        assert_eq!(again.iterations, 1);
        let delta = (again.objective() - fit.objective()).abs();
        assert!(delta < 1e-9, "objective moved by {delta}");
    }

    #[test]
    fn em_alpha_fixed_point_identity_at_convergence() {
        // At a converged point, alpha equals the posterior-mean class
        // proportions computed under the fitted parameters.
        let truth =
            SbmParams::new(vec![0.4, 0.6], vec![vec![0.9, 0.2], vec![0.2, 0.7]]).unwrap();
        let g = sample_graph(&truth, 8, 17).unwrap();
        let fit = exact_em_fit(&g, &truth, 500, 1e-12).unwrap();
        assert!(fit.converged);
        let t = posterior_table(&g, &fit.params).unwrap();
        let marg = posterior_vertex_marginals(&t);
        for c in 0..2 {
            let mean: f64 = (0..8).map(|i| marg[i * 2 + c]).sum::<f64>() / 8.0;
            assert!(
                (mean - fit.params.alpha()[c]).abs() < 1e-8,
                "class {c}: {mean} vs {}",
                fit.params.alpha()[c]
            );
        }
    }

    #[test]
    fn em_empty_block_flagged_on_single_vertex() {
        let init = SbmParams::new(vec![0.5, 0.5], vec![vec![0.5; 2]; 2]).unwrap();
        let g = LabeledGraph::empty(1);
        let fit = exact_em_fit(&g, &init, 5, 1e-8).unwrap();
        assert!(fit.flags.iter().any(|f| f == "empty-block"));
        assert_eq!(fit.params.pi_at(0, 0), 0.5);
    }

    #[test]
    fn encode_decode_roundtrip() {
        let params =
            SbmParams::new(vec![0.3, 0.3, 0.4], vec![vec![0.5; 3]; 3]).unwrap();
        let g = sample_graph(&params, 4, 0).unwrap();
        let t = posterior_table(&g, &params).unwrap();
        for code in [0usize, 1, 5, 80, 26, 53] {
            assert_eq!(t.encode(&t.decode(code)).unwrap(), code);
        }
    }
}

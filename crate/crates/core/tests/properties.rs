//! Randomized invariants: structural laws the model, the exact machinery,
//! and the serialization layer must satisfy on every input, not just on the
//! worked examples.

use proptest::prelude::*;

use sbm_lab::exact::{
    complete_loglik, marginal_loglik, posterior_table, posterior_vertex_marginals, prior_loglik,
};
use sbm_lab::graph::{sample_graph, sample_graph_partial};
use sbm_lab::io::{graph_from_text, graph_to_text, params_from_json, params_to_json};
use sbm_lab::params::SbmParams;
use sbm_lab::symmetry::{all_permutations, label_error, param_distance, Permutation};
use sbm_lab::util::{log_sum_exp, quantile, LogSumExp};
use sbm_lab::variational::{update_tau, TauMatrix};

fn alpha_strategy(q: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.1f64..1.0, q).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

fn pi_strategy(q: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.05f64..0.95, q), q)
}

fn params_q(q: usize) -> impl Strategy<Value = SbmParams> {
    (alpha_strategy(q), pi_strategy(q)).prop_map(|(a, p)| SbmParams::new(a, p).unwrap())
}

fn params_any() -> impl Strategy<Value = SbmParams> {
    (1usize..=3).prop_flat_map(params_q)
}

fn perm_strategy(q: usize) -> impl Strategy<Value = Permutation> {
    Just((0..q).collect::<Vec<usize>>())
        .prop_shuffle()
        .prop_map(|img| Permutation::new(img).unwrap())
}

/// Class `a` of `p` becomes class `s(a)` of the result.
fn permute_params(p: &SbmParams, s: &Permutation) -> SbmParams {
    let q = p.q();
    let mut alpha = vec![0.0; q];
    let mut pi = vec![vec![0.0; q]; q];
    for a in 0..q {
        alpha[s.apply(a)] = p.alpha()[a];
        for b in 0..q {
            pi[s.apply(a)][s.apply(b)] = p.pi_at(a, b);
        }
    }
    SbmParams::new(alpha, pi).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_sum_exp_respects_bounds_and_shifts(
        xs in prop::collection::vec(-30.0f64..30.0, 1..12),
        c in -40.0f64..40.0,
    ) {
        let lse = log_sum_exp(&xs);
        let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lse >= mx - 1e-12);
        prop_assert!(lse <= mx + (xs.len() as f64).ln() + 1e-12);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        prop_assert!((log_sum_exp(&shifted) - (lse + c)).abs() < 1e-9);
        let mut acc = LogSumExp::new();
        for &x in &xs {
            acc.add(x);
        }
        prop_assert!((acc.value() - lse).abs() < 1e-12);
    }

    #[test]
    fn quantiles_are_monotone_and_bracketed(
        xs in prop::collection::vec(-1e3f64..1e3, 1..40),
        p1 in 0.0f64..=1.0,
        p2 in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let qlo = quantile(&xs, lo);
        let qhi = quantile(&xs, hi);
        prop_assert!(qlo <= qhi + 1e-12);
        let mn = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(qlo >= mn - 1e-12);
        prop_assert!(qhi <= mx + 1e-12);
    }

    #[test]
    fn permutations_satisfy_the_group_laws(
        (s, t) in (1usize..=4).prop_flat_map(|q| (perm_strategy(q), perm_strategy(q))),
    ) {
        prop_assert!(s.compose(&s.inverse()).is_identity());
        prop_assert!(s.inverse().compose(&s).is_identity());
        let st = s.compose(&t);
        for x in 0..s.q() {
            prop_assert_eq!(st.apply(x), s.apply(t.apply(x)));
        }
        let twice = s.inverse().inverse();
        prop_assert_eq!(twice.image(), s.image());
    }

    #[test]
    fn relabeled_parameters_sit_at_distance_zero(
        (p, s) in (1usize..=3).prop_flat_map(|q| (params_q(q), perm_strategy(q))),
    ) {
        let ps = permute_params(&p, &s);
        let d = param_distance(&ps, &p).unwrap();
        prop_assert!(d.err_pi < 1e-12, "err_pi = {:.3e}", d.err_pi);
        prop_assert!(d.err_alpha < 1e-12, "err_alpha = {:.3e}", d.err_alpha);
        // The reported permutation must itself realize the alignment.
        for x in 0..p.q() {
            for y in 0..p.q() {
                let gap =
                    (ps.pi_at(d.best_perm.apply(x), d.best_perm.apply(y)) - p.pi_at(x, y)).abs();
                prop_assert!(gap < 1e-12);
            }
        }
    }

    #[test]
    fn param_distance_is_symmetric(
        (a, b) in (1usize..=3).prop_flat_map(|q| (params_q(q), params_q(q))),
    ) {
        let ab = param_distance(&a, &b).unwrap();
        let ba = param_distance(&b, &a).unwrap();
        prop_assert!((ab.err_pi - ba.err_pi).abs() < 1e-12);
        prop_assert!((ab.err_alpha - ba.err_alpha).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seed_deterministic_and_loop_free(
        p in params_any(),
        n in 1usize..10,
        seed in any::<u64>(),
    ) {
        let g1 = sample_graph(&p, n, seed).unwrap();
        let g2 = sample_graph(&p, n, seed).unwrap();
        prop_assert_eq!(g1.labels(), g2.labels());
        prop_assert_eq!(g1.edges(), g2.edges());
        for i in 0..n {
            prop_assert!(!g1.edge(i, i));
        }
        prop_assert!(g1.labels().unwrap().iter().all(|&z| z < p.q()));
        prop_assert_eq!(g1.edge_count(), g1.edges().len());
    }

    #[test]
    fn partial_sampling_matches_the_full_graph(
        p in params_any(),
        n in 2usize..10,
        seed in any::<u64>(),
        idx in prop::collection::vec((0usize..10, 0usize..10), 0..20),
    ) {
        let pairs: Vec<(usize, usize)> = idx
            .into_iter()
            .map(|(i, j)| (i % n, j % n))
            .filter(|&(i, j)| i != j)
            .collect();
        let full = sample_graph(&p, n, seed).unwrap();
        let part = sample_graph_partial(&p, n, seed, &pairs).unwrap();
        prop_assert_eq!(full.labels(), part.labels());
        for &(i, j) in &pairs {
            prop_assert_eq!(full.edge(i, j), part.edge(i, j));
        }
    }

    #[test]
    fn graph_text_round_trip_preserves_everything(
        p in params_any(),
        n in 1usize..12,
        seed in any::<u64>(),
    ) {
        let g = sample_graph(&p, n, seed).unwrap();
        let text = graph_to_text(&g, p.q());
        let (back, q_back) = graph_from_text(&text).unwrap();
        prop_assert_eq!(q_back, p.q());
        prop_assert_eq!(back.n(), g.n());
        prop_assert_eq!(back.labels(), g.labels());
        prop_assert_eq!(back.edges(), g.edges());
    }

    #[test]
    fn params_json_round_trip_is_bit_exact(p in params_any()) {
        let s = params_to_json(&p).unwrap();
        let back = params_from_json(&s).unwrap();
        prop_assert_eq!(back.alpha(), p.alpha());
        prop_assert_eq!(back.pi(), p.pi());
    }

    #[test]
    fn marginal_likelihood_ignores_class_relabeling(
        (p, s) in (2usize..=3).prop_flat_map(|q| (params_q(q), perm_strategy(q))),
        n in 1usize..5,
        seed in any::<u64>(),
    ) {
        let g = sample_graph(&p, n, seed).unwrap();
        let l1 = marginal_loglik(&g, &p).unwrap();
        let l2 = marginal_loglik(&g, &permute_params(&p, &s)).unwrap();
        prop_assert!((l1 - l2).abs() < 1e-9, "{l1} vs {l2}");
    }

    #[test]
    fn posterior_table_is_a_distribution_with_consistent_joints(
        p in params_any(),
        n in 1usize..5,
        seed in any::<u64>(),
        probe in any::<u64>(),
    ) {
        let g = sample_graph(&p, n, seed).unwrap();
        let table = posterior_table(&g, &p).unwrap();
        prop_assert!((table.probs_sum() - 1.0).abs() < 1e-9);
        let marg = posterior_vertex_marginals(&table);
        for i in 0..n {
            let s: f64 = marg[i * p.q()..(i + 1) * p.q()].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
        // Joint consistency at one probed configuration: prior + edge terms
        // must equal posterior + evidence.
        let z = table.decode((probe as usize) % table.len());
        let joint = prior_loglik(&z, p.alpha()).unwrap() + complete_loglik(&g, &z, p.pi()).unwrap();
        let via_table = table.log_prob(&z).unwrap() + table.marginal_loglik();
        prop_assert!((joint - via_table).abs() < 1e-9);
    }

    #[test]
    fn tau_updates_keep_rows_stochastic(
        p in params_any(),
        n in 2usize..10,
        seed in any::<u64>(),
    ) {
        let g = sample_graph(&p, n, seed).unwrap();
        let step = update_tau(&g, &TauMatrix::uniform(n, p.q()), &p, 1, 0.0).unwrap();
        for i in 0..n {
            let row = step.tau.row(i);
            prop_assert!(row.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn label_error_vanishes_on_the_symmetry_orbit(
        q in 2usize..=3,
        raw in prop::collection::vec(0usize..3, 1..20),
        which in any::<usize>(),
    ) {
        let labels: Vec<usize> = raw.into_iter().map(|z| z % q).collect();
        // Affiliation pi: every permutation is a symmetry.
        let pi: Vec<Vec<f64>> = (0..q)
            .map(|a| (0..q).map(|b| if a == b { 0.8 } else { 0.2 }).collect())
            .collect();
        let group = all_permutations(q).unwrap();
        let s = &group[which % group.len()];
        let moved = s.apply_to_labels(&labels);
        prop_assert_eq!(label_error(&moved, &labels, &pi).unwrap(), 0.0);
        // Against an asymmetric pi only self-agreement is guaranteed zero;
        // the error is still a fraction.
        let asym: Vec<Vec<f64>> = (0..q)
            .map(|a| (0..q).map(|b| 0.2 + 0.5 * (a * q + b) as f64 / (q * q) as f64).collect())
            .collect();
        prop_assert_eq!(label_error(&labels, &labels, &asym).unwrap(), 0.0);
        let err = label_error(&moved, &labels, &asym).unwrap();
        prop_assert!((0.0..=1.0).contains(&err));
    }
}

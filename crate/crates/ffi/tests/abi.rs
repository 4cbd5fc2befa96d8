//! Exercises the C ABI exactly as a foreign caller would: through raw
//! pointers and status codes, including the error paths.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use sbm_lab_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sbm_last_error()) }
        .to_str()
        .unwrap()
        .to_string()
}

fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { sbm_string_free(p) };
    s
}

/// Two classes, strong diagonal; rates differ so moment recovery works.
fn demo_params() -> *mut SbmParamsHandle {
    let alpha = [0.3, 0.7];
    let pi = [0.8, 0.2, 0.2, 0.6];
    let mut out = ptr::null_mut();
    let code = unsafe { sbm_params_new(alpha.as_ptr(), 2, pi.as_ptr(), &mut out) };
    assert_eq!(code, SBM_OK, "{}", last_error());
    out
}

#[test]
fn params_round_trip_through_json() {
    let p = demo_params();
    let mut json_out = ptr::null_mut();
    assert_eq!(unsafe { sbm_params_to_json(p, &mut json_out) }, SBM_OK);
    let json = take_string(json_out);
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed["alpha"][0].as_f64().unwrap(), 0.3);

    let cjson = CString::new(json).unwrap();
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_params_from_json(cjson.as_ptr(), &mut back) },
        SBM_OK
    );
    assert_eq!(unsafe { sbm_params_q(back) }, 2);

    let (mut err_pi, mut err_alpha) = (f64::NAN, f64::NAN);
    assert_eq!(
        unsafe { sbm_param_distance(p, back, &mut err_pi, &mut err_alpha) },
        SBM_OK
    );
    assert_eq!(err_pi, 0.0);
    assert_eq!(err_alpha, 0.0);

    unsafe {
        sbm_params_free(p);
        sbm_params_free(back);
    }
}

#[test]
fn sampled_graphs_match_the_core_library() {
    let p = demo_params();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { sbm_sample_graph(p, 8, 42, &mut g) }, SBM_OK);
    assert_eq!(unsafe { sbm_graph_vertex_count(g) }, 8);

    let core_params = sbm_lab::params::SbmParams::new(
        vec![0.3, 0.7],
        vec![vec![0.8, 0.2], vec![0.2, 0.6]],
    )
    .unwrap();
    let core_graph = sbm_lab::graph::sample_graph(&core_params, 8, 42).unwrap();

    let mut labels = [0usize; 8];
    assert_eq!(
        unsafe { sbm_graph_labels(g, labels.as_mut_ptr(), labels.len()) },
        SBM_OK
    );
    assert_eq!(&labels[..], core_graph.labels().unwrap());

    for i in 0..8 {
        for j in 0..8 {
            let expect = if i == j {
                0
            } else {
                i32::from(core_graph.edge(i, j))
            };
            assert_eq!(unsafe { sbm_graph_edge(g, i, j) }, expect);
        }
    }
    assert_eq!(unsafe { sbm_graph_edge(g, 8, 0) }, -1);
    assert!(last_error().contains("out of range"));

    unsafe {
        sbm_graph_free(g);
        sbm_params_free(p);
    }
}

#[test]
fn vem_then_exact_em_refines_the_objective() {
    let alpha = [0.5, 0.5];
    let pi = [0.9, 0.1, 0.1, 0.9];
    let mut truth = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_params_new(alpha.as_ptr(), 2, pi.as_ptr(), &mut truth) },
        SBM_OK
    );
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { sbm_sample_graph(truth, 10, 7, &mut g) }, SBM_OK);

    let mut vem = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_fit_vem(g, 2, 5, 200, 1e-7, 7, &mut vem) },
        SBM_OK,
        "{}",
        last_error()
    );
    let bound = unsafe { sbm_fit_objective(vem) };
    assert!(bound.is_finite());

    let mut fitted = ptr::null_mut();
    assert_eq!(unsafe { sbm_fit_params(vem, &mut fitted) }, SBM_OK);

    // The marginal likelihood at the VEM solution dominates its own lower
    // bound, and exact EM only raises it further.
    let mut em = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_fit_exact_em(g, fitted, 200, 1e-9, &mut em) },
        SBM_OK,
        "{}",
        last_error()
    );
    let loglik = unsafe { sbm_fit_objective(em) };
    assert!(loglik >= bound - 1e-9, "{loglik} < {bound}");

    let mut json_out = ptr::null_mut();
    assert_eq!(unsafe { sbm_fit_to_json(em, &mut json_out) }, SBM_OK);
    let record: serde_json::Value = serde_json::from_str(&take_string(json_out)).unwrap();
    assert!(record["converged"].is_boolean());
    assert_eq!(record["j_final"].as_f64().unwrap(), loglik);

    unsafe {
        sbm_fit_free(em);
        sbm_fit_free(vem);
        sbm_params_free(fitted);
        sbm_graph_free(g);
        sbm_params_free(truth);
    }
}

#[test]
fn assumption_check_reports_indistinguishable_classes() {
    let alpha = [0.5, 0.5];
    let flat = [0.5, 0.5, 0.5, 0.5];
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_params_new(alpha.as_ptr(), 2, flat.as_ptr(), &mut p) },
        SBM_OK
    );
    let mut report_out = ptr::null_mut();
    let code = unsafe { sbm_check_assumptions(p, 0.05, 0.05, 0, &mut report_out) };
    assert_eq!(code, SBM_ERR_VALIDATION);
    assert!(last_error().contains("A1"), "{}", last_error());
    let report: serde_json::Value = serde_json::from_str(&take_string(report_out)).unwrap();
    assert_eq!(report["a1_ok"], false);
    unsafe { sbm_params_free(p) };

    // A sound parameter set passes and still yields a report on request.
    let good = demo_params();
    let mut ok_report = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_check_assumptions(good, 0.05, 0.05, 0, &mut ok_report) },
        SBM_OK
    );
    assert!(take_string(ok_report).contains("\"a1_ok\": true"));
    unsafe { sbm_params_free(good) };
}

#[test]
fn analytic_recovery_round_trips_and_refuses_degenerate_input() {
    let truth = demo_params();
    let mut rec = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_recover_analytic(truth, &mut rec) },
        SBM_OK,
        "{}",
        last_error()
    );
    let (mut err_pi, mut err_alpha) = (f64::NAN, f64::NAN);
    assert_eq!(
        unsafe { sbm_param_distance(truth, rec, &mut err_pi, &mut err_alpha) },
        SBM_OK
    );
    assert!(err_pi < 1e-8, "err_pi = {err_pi:.3e}");
    assert!(err_alpha < 1e-8, "err_alpha = {err_alpha:.3e}");
    unsafe {
        sbm_params_free(rec);
        sbm_params_free(truth);
    }

    // Equal class weights on an affiliation matrix give coincident rates:
    // first-order moments cannot separate the classes.
    let alpha = [0.5, 0.5];
    let pi = [0.8, 0.2, 0.2, 0.8];
    let mut degen = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_params_new(alpha.as_ptr(), 2, pi.as_ptr(), &mut degen) },
        SBM_OK
    );
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_recover_analytic(degen, &mut out) },
        SBM_ERR_DEGENERATE
    );
    assert!(last_error().starts_with("degenerate:"), "{}", last_error());
    unsafe { sbm_params_free(degen) };
}

#[test]
fn error_codes_cover_usage_validation_and_size_limits() {
    // Usage: null pointers and malformed JSON.
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_params_from_json(ptr::null(), &mut out) },
        SBM_ERR_USAGE
    );
    let bad = CString::new("not json").unwrap();
    assert_eq!(
        unsafe { sbm_params_from_json(bad.as_ptr(), &mut out) },
        SBM_ERR_USAGE
    );
    assert!(last_error().starts_with("usage:"), "{}", last_error());

    // Validation: weights that do not sum to one.
    let alpha = [0.5, 0.6];
    let pi = [0.5, 0.5, 0.5, 0.5];
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_params_new(alpha.as_ptr(), 2, pi.as_ptr(), &mut p) },
        SBM_ERR_VALIDATION
    );
    assert!(last_error().contains("alpha"), "{}", last_error());

    // Size limit: exact EM on an unenumerable graph.
    let truth = demo_params();
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { sbm_sample_graph(truth, 30, 1, &mut g) }, SBM_OK);
    let mut em = ptr::null_mut();
    assert_eq!(
        unsafe { sbm_fit_exact_em(g, truth, 50, 1e-8, &mut em) },
        SBM_ERR_SIZE_LIMIT
    );
    assert!(last_error().starts_with("size-limit:"), "{}", last_error());
    unsafe {
        sbm_graph_free(g);
        sbm_params_free(truth);
    }
}

#[test]
fn frees_accept_null_and_fresh_threads_start_clean() {
    unsafe {
        sbm_params_free(ptr::null_mut());
        sbm_graph_free(ptr::null_mut());
        sbm_fit_free(ptr::null_mut());
        sbm_string_free(ptr::null_mut());
    }
    let from_new_thread = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(from_new_thread, "");
}

//! Checks of the standing regularity conditions on model parameters and,
//! optionally, on a realized label vector.

use crate::error::{Result, SbmError};
use crate::params::SbmParams;
use serde::Serialize;

/// Outcome of `check_assumptions`, with the constants that were tested.
/// `a4_ok` is `None` when no labels were supplied.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub a1_ok: bool,
    pub a2_ok: bool,
    pub a3_ok: bool,
    pub a4_ok: Option<bool>,
    pub zeta: f64,
    pub gamma: f64,
    pub n0: usize,
    /// (assumption, human-readable detail) for every failure found.
    pub violations: Vec<(String, String)>,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.a1_ok && self.a2_ok && self.a3_ok && self.a4_ok.unwrap_or(true)
    }
}

/// Validate the four standing conditions:
///
/// * A1 — class distinguishability: no two classes may have identical rows
///   *and* identical columns of `pi` (exact comparison);
/// * A2 — edge probabilities bounded away from 0 and 1: every `pi` entry is
///   exactly 0, exactly 1, or lies in `[zeta, 1 - zeta]`;
/// * A3 — class proportions bounded: every `alpha` entry lies in
///   `[gamma, 1 - gamma]`;
/// * A4 — realized proportions bounded: when labels are given and
///   `labels.len() >= n0`, each class holds at least a `gamma` fraction of
///   vertices. Below `n0` the condition is vacuous and reported as passing.
///
/// `n0` is a caller-chosen onset size for A4.
pub fn check_assumptions(
    params: &SbmParams,
    labels: Option<&[usize]>,
    zeta: f64,
    gamma: f64,
    n0: usize,
) -> Result<AssumptionReport> {
    params.validate()?;
    let q = params.q();
    if !(gamma > 0.0 && gamma < 1.0 / q as f64) {
        return Err(SbmError::InvalidBound(format!(
            "gamma={gamma} must satisfy 0 < gamma < 1/q = {}",
            1.0 / q as f64
        )));
    }
    if !(zeta > 0.0 && zeta <= 0.5) {
        return Err(SbmError::InvalidBound(format!(
            "zeta={zeta} must satisfy 0 < zeta <= 1/2"
        )));
    }

    let mut violations = Vec::new();
    let pi = params.pi();

    let mut a1_ok = true;
    for a in 0..q {
        for b in a + 1..q {
            let rows_equal = (0..q).all(|l| pi[a][l] == pi[b][l]);
            let cols_equal = (0..q).all(|l| pi[l][a] == pi[l][b]);
            if rows_equal && cols_equal {
                a1_ok = false;
                violations.push((
                    "A1".into(),
                    format!(
                        "classes {} and {} have identical rows and columns of pi",
                        a + 1,
                        b + 1
                    ),
                ));
            }
        }
    }

    let mut a2_ok = true;
    for a in 0..q {
        for b in 0..q {
            let p = pi[a][b];
            if p != 0.0 && p != 1.0 && !(zeta..=1.0 - zeta).contains(&p) {
                a2_ok = false;
                violations.push((
                    "A2".into(),
                    format!(
                        "pi[{}][{}]={p} outside [{zeta}, {}]",
                        a + 1,
                        b + 1,
                        1.0 - zeta
                    ),
                ));
            }
        }
    }

    let mut a3_ok = true;
    for (c, &a) in params.alpha().iter().enumerate() {
        if !(gamma..=1.0 - gamma).contains(&a) {
            a3_ok = false;
            violations.push((
                "A3".into(),
                format!("alpha[{}]={a} outside [{gamma}, {}]", c + 1, 1.0 - gamma),
            ));
        }
    }

    let a4_ok = labels.map(|z| {
        if z.iter().any(|&c| c >= q) {
            violations.push(("A4".into(), "label out of range".into()));
            return false;
        }
        if z.len() < n0 {
            return true; // condition only binds from n0 onward
        }
        let n = z.len().max(1);
        let mut ok = true;
        for c in 0..q {
            let frac = z.iter().filter(|&&x| x == c).count() as f64 / n as f64;
            if frac < gamma {
                ok = false;
                violations.push((
                    "A4".into(),
                    format!(
                        "class {} holds fraction {frac:.4} of {n} vertices, below gamma={gamma}",
                        c + 1
                    ),
                ));
            }
        }
        ok
    });

    Ok(AssumptionReport {
        a1_ok,
        a2_ok,
        a3_ok,
        a4_ok,
        zeta,
        gamma,
        n0,
        violations,
    })
}

//! Label-permutation symmetry: the invariance group of a connectivity matrix,
//! permutation-quotiented parameter distance, and label error.

use crate::error::{Result, SbmError};
use crate::params::SbmParams;

/// Upper bound on q for anything that enumerates all q! permutations.
pub const MAX_GROUP_Q: usize = 8;

pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-12;

/// A permutation of classes, stored as its image: `perm.image()[a]` is where
/// class `a` is sent. 0-based internally, displayed 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(q: usize) -> Self {
        Permutation((0..q).collect())
    }

    pub fn new(image: Vec<usize>) -> Result<Self> {
        let q = image.len();
        let mut seen = vec![false; q];
        for &x in &image {
            if x >= q || seen[x] {
                return Err(SbmError::InvalidParams(format!(
                    "not a permutation of 0..{q}: {image:?}"
                )));
            }
            seen[x] = true;
        }
        Ok(Permutation(image))
    }

    pub fn q(&self) -> usize {
        self.0.len()
    }

    pub fn image(&self) -> &[usize] {
        &self.0
    }

    pub fn apply(&self, class: usize) -> usize {
        self.0[class]
    }

    /// self after other: (self * other)(x) = self(other(x)).
    pub fn compose(&self, other: &Permutation) -> Permutation {
        assert_eq!(self.q(), other.q());
        Permutation(other.0.iter().map(|&x| self.0[x]).collect())
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (a, &b) in self.0.iter().enumerate() {
            inv[b] = a;
        }
        Permutation(inv)
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(a, &b)| a == b)
    }

    pub fn apply_to_labels(&self, labels: &[usize]) -> Vec<usize> {
        labels.iter().map(|&z| self.0[z]).collect()
    }

    /// 1-based image vector, e.g. `[2, 1]` for the swap on two classes.
    pub fn display_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|&x| x + 1).collect()
    }
}

/// All permutations of `0..q` in lexicographic order of their image vectors.
pub fn all_permutations(q: usize) -> Result<Vec<Permutation>> {
    if q > MAX_GROUP_Q {
        return Err(SbmError::SizeLimit(format!(
            "q={q} exceeds the permutation-enumeration limit {MAX_GROUP_Q}"
        )));
    }
    let mut out = Vec::new();
    let mut image: Vec<usize> = (0..q).collect();
    loop {
        out.push(Permutation(image.clone()));
        // next_permutation in lexicographic order
        let Some(i) = (0..q.saturating_sub(1)).rev().find(|&i| image[i] < image[i + 1]) else {
            break;
        };
        let j = (i + 1..q).rev().find(|&j| image[j] > image[i]).unwrap();
        image.swap(i, j);
        image[i + 1..].reverse();
    }
    Ok(out)
}

fn pi_invariant_under(pi: &[Vec<f64>], sigma: &Permutation, tol: f64) -> bool {
    let q = sigma.q();
    for a in 0..q {
        for b in 0..q {
            if (pi[sigma.apply(a)][sigma.apply(b)] - pi[a][b]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// The permutations leaving `pi` invariant entrywise within `tol`
/// (`DEFAULT_SYMMETRY_TOL` for the plain variant). Always contains the
/// identity and is closed under composition and inverse.
pub fn symmetry_group(pi: &[Vec<f64>]) -> Result<Vec<Permutation>> {
    symmetry_group_with_tol(pi, DEFAULT_SYMMETRY_TOL)
}

pub fn symmetry_group_with_tol(pi: &[Vec<f64>], tol: f64) -> Result<Vec<Permutation>> {
    let q = pi.len();
    if pi.iter().any(|row| row.len() != q) {
        return Err(SbmError::InvalidParams("pi is not square".into()));
    }
    Ok(all_permutations(q)?
        .into_iter()
        .filter(|s| pi_invariant_under(pi, s, tol))
        .collect())
}

/// Result of aligning two parameter sets over all class permutations.
#[derive(Debug, Clone)]
pub struct ParamDistance {
    /// sup-norm error on pi at the best permutation.
    pub err_pi: f64,
    /// sup-norm error on alpha at that same permutation.
    pub err_alpha: f64,
    /// The permutation applied to `a`'s classes that best matches `b`:
    /// class `c` of `b` corresponds to class `best_perm(c)` of `a`.
    pub best_perm: Permutation,
}

/// Minimize over all q! permutations `s` the value
/// `max_{a,b} |pi_a[s(a)][s(b)] - pi_b[a][b]|`; ties are broken by the
/// smaller alpha error, then by lexicographically smallest permutation.
pub fn param_distance(a: &SbmParams, b: &SbmParams) -> Result<ParamDistance> {
    if a.q() != b.q() {
        return Err(SbmError::InvalidParams(format!(
            "cannot compare q={} against q={}",
            a.q(),
            b.q()
        )));
    }
    let q = a.q();
    let mut best: Option<ParamDistance> = None;
    for sigma in all_permutations(q)? {
        let mut err_pi = 0.0f64;
        for x in 0..q {
            for y in 0..q {
                let d = (a.pi_at(sigma.apply(x), sigma.apply(y)) - b.pi_at(x, y)).abs();
                err_pi = err_pi.max(d);
            }
        }
        let mut err_alpha = 0.0f64;
        for x in 0..q {
            err_alpha = err_alpha.max((a.alpha()[sigma.apply(x)] - b.alpha()[x]).abs());
        }
        let better = match &best {
            None => true,
            Some(cur) => {
                err_pi < cur.err_pi || (err_pi == cur.err_pi && err_alpha < cur.err_alpha)
            }
        };
        if better {
            best = Some(ParamDistance {
                err_pi,
                err_alpha,
                best_perm: sigma,
            });
        }
    }
    Ok(best.expect("q >= 1 guarantees at least one permutation"))
}

/// Fraction of misclassified vertices after quotienting by the symmetry
/// group of `pi`: `min_s (1/n) #\{i : s(z[i]) != z_star[i]\}`.
pub fn label_error(z: &[usize], z_star: &[usize], pi: &[Vec<f64>]) -> Result<f64> {
    if z.len() != z_star.len() {
        return Err(SbmError::InvalidParams(format!(
            "label vectors have lengths {} and {}",
            z.len(),
            z_star.len()
        )));
    }
    let q = pi.len();
    if z.iter().chain(z_star.iter()).any(|&c| c >= q) {
        return Err(SbmError::InvalidParams(
            "label out of range for the given pi".into(),
        ));
    }
    if z.is_empty() {
        return Ok(0.0);
    }
    let group = symmetry_group(pi)?;
    let n = z.len();
    let mut best = f64::INFINITY;
    for sigma in &group {
        let mis = z
            .iter()
            .zip(z_star)
            .filter(|&(&zi, &si)| sigma.apply(zi) != si)
            .count();
        best = best.min(mis as f64 / n as f64);
    }
    Ok(best)
}

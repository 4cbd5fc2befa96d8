use crate::error::{Result, SbmError};
use serde::{Deserialize, Serialize};

/// Parameters of a directed binary stochastic block model: `q` classes,
/// class-membership probabilities `alpha` (length `q`, sums to one) and a
/// `q x q` matrix `pi` of edge probabilities, `pi[a][b]` being the probability
/// of a directed edge from a vertex of class `a` to a vertex of class `b`.
///
/// Classes are 0-based everywhere in the library; file formats and the CLI
/// print them 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    q: usize,
    alpha: Vec<f64>,
    pi: Vec<Vec<f64>>,
}

const SUM_TOL: f64 = 1e-12;

impl SbmParams {
    pub fn new(alpha: Vec<f64>, pi: Vec<Vec<f64>>) -> Result<Self> {
        let q = alpha.len();
        let p = SbmParams { q, alpha, pi };
        p.validate()?;
        Ok(p)
    }

    /// Check shapes, ranges and the simplex sum; used by constructors and
    /// after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(SbmError::InvalidParams("q must be at least 1".into()));
        }
        if self.alpha.len() != self.q {
            return Err(SbmError::InvalidParams(format!(
                "alpha has length {}, expected q={}",
                self.alpha.len(),
                self.q
            )));
        }
        for (i, &a) in self.alpha.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) || !a.is_finite() {
                return Err(SbmError::InvalidParams(format!(
                    "alpha[{}]={} outside [0,1]",
                    i + 1,
                    a
                )));
            }
        }
        let s: f64 = self.alpha.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(SbmError::InvalidParams(format!(
                "alpha sums to {s:.17e}, not 1 within {SUM_TOL:e}"
            )));
        }
        if self.pi.len() != self.q {
            return Err(SbmError::InvalidParams(format!(
                "pi has {} rows, expected {}",
                self.pi.len(),
                self.q
            )));
        }
        for (i, row) in self.pi.iter().enumerate() {
            if row.len() != self.q {
                return Err(SbmError::InvalidParams(format!(
                    "pi row {} has length {}, expected {}",
                    i + 1,
                    row.len(),
                    self.q
                )));
            }
            for (j, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    return Err(SbmError::InvalidParams(format!(
                        "pi[{}][{}]={} outside [0,1]",
                        i + 1,
                        j + 1,
                        p
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn pi(&self) -> &[Vec<f64>] {
        &self.pi
    }

    pub fn pi_at(&self, a: usize, b: usize) -> f64 {
        self.pi[a][b]
    }

    /// Parameters with `pi` transposed; alpha is unchanged. Column-oriented
    /// moment computations reuse the row-oriented code through this.
    pub fn transposed(&self) -> SbmParams {
        let mut pi = vec![vec![0.0; self.q]; self.q];
        for a in 0..self.q {
            for b in 0..self.q {
                pi[a][b] = self.pi[b][a];
            }
        }
        SbmParams {
            q: self.q,
            alpha: self.alpha.clone(),
            pi,
        }
    }

    /// Out-rates r = pi * alpha: `r[a]` is the probability of an edge from a
    /// class-`a` vertex to an independently drawn vertex.
    pub fn out_rates(&self) -> Vec<f64> {
        (0..self.q)
            .map(|a| (0..self.q).map(|b| self.pi[a][b] * self.alpha[b]).sum())
            .collect()
    }
}

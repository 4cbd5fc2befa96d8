use crate::params::SbmParams;

/// Output of an iterative fit (exact EM or variational EM). The objective is
/// the marginal log-likelihood for exact EM and the variational lower bound
/// for VEM; in both cases `objective_trace` is nondecreasing up to a 1e-9
/// numerical slack, one entry per evaluation starting at the initial point.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: SbmParams,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged: bool,
    /// Non-fatal events hit during fitting (e.g. "empty-block", "stalled").
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("fit trace is never empty")
    }

    pub fn trace_nondecreasing_within(&self, slack: f64) -> bool {
        self.objective_trace
            .windows(2)
            .all(|w| w[1] >= w[0] - slack)
    }
}

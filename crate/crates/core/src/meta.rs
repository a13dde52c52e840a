//! Support-union recovery from pooled auxiliary tasks.

use crate::error::Result;
use crate::estimate::{pooled_cov, PooledCov};
use crate::fantope::{solve_penalized_warm, SolveReport, SolverConfig, WarmStart};
use crate::genmodel::TaskData;

/// Penalty schedule `sqrt(ln(p+1) / (m·n))`.
pub fn default_rho(p: usize, m: usize, n: f64) -> f64 {
    (((p + 1) as f64).ln() / (m as f64 * n)).sqrt()
}

/// Rescaled sample size `T = m·n / ln(p+1)`.
pub fn rescaled_sample_size(p: usize, m: usize, n: f64) -> f64 {
    m as f64 * n / ((p + 1) as f64).ln()
}

/// Number of tasks giving rescaled size `t` with `n` samples each, at least 1.
pub fn tasks_for_rescaled_size(p: usize, n: usize, t: f64) -> usize {
    ((t * ((p + 1) as f64).ln() / n as f64).round() as usize).max(1)
}

#[derive(Debug, Clone)]
pub struct MetaResult {
    pub j_hat: Vec<usize>,
    pub report: SolveReport,
    pub rho_used: f64,
    /// `m·n / ln(p+1)` with the harmonic-mean `n` when task sizes differ.
    pub t: f64,
    pub pooled: PooledCov,
}

impl MetaResult {
    /// False when the penalty wiped out too much of the support to carry a rank-k solution.
    pub fn is_usable(&self, k: usize) -> bool {
        self.j_hat.len() >= k
    }
}

/// Pools the tasks, solves the penalized Fantope problem and reads off `Ĵ`.
///
/// `rho = None` uses [`default_rho`] with the harmonic mean of the task sizes;
/// `config.rho` is ignored in favour of the resolved value.
pub fn recover_support_union(
    tasks: &[TaskData],
    k: usize,
    rho: Option<f64>,
    config: &SolverConfig,
) -> Result<MetaResult> {
    recover_support_union_warm(tasks, k, rho, config, None)
}

pub fn recover_support_union_warm(
    tasks: &[TaskData],
    k: usize,
    rho: Option<f64>,
    config: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<MetaResult> {
    let pooled = pooled_cov(tasks)?;
    let p = pooled.s.dim();
    let n_eff = pooled.harmonic_n();
    let rho_used = rho.unwrap_or_else(|| default_rho(p, pooled.m, n_eff));
    let cfg = SolverConfig {
        rho: rho_used,
        ..config.clone()
    };
    let report = solve_penalized_warm(&pooled.s, k, &cfg, warm)?;
    Ok(MetaResult {
        j_hat: report.support.clone(),
        report,
        rho_used,
        t: rescaled_sample_size(p, pooled.m, n_eff),
        pooled,
    })
}

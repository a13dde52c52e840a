//! Fantope projection and the ℓ1-penalized Fantope solver.
//!
//! The Fantope `𝓕ᵏ = {M : 0 ⪯ M ⪯ I, Tr M = k}` is the convex hull of rank-k
//! orthogonal projectors. [`solve_penalized`] maximizes
//! `⟨S, H⟩ − ρ‖H‖₁,₁` over `𝓕ᵏ` with a two-block ADMM:
//!
//! ```text
//! H ← P_𝓕(Y − W + S/τ)
//! Y ← soft(H + W, ρ/τ)
//! W ← W + H − Y
//! ```
//!
//! `Y` carries the exact zeros produced by the soft-threshold and is the
//! default source for the recovered support.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matcore::{eig_sym_matrix, soft_threshold, NormKind, SymMat, TOL};

/// Where the support of the solution is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportSource {
    /// `{i : |diag(Y)_i| > eps}` on the sparse prox iterate.
    ProxIterate,
    /// `{i : |diag(H)_i| > eps}` on the Fantope iterate.
    Threshold,
}

impl fmt::Display for SupportSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SupportSource::ProxIterate => "prox_iterate",
            SupportSource::Threshold => "threshold",
        })
    }
}

impl FromStr for SupportSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prox_iterate" => Ok(SupportSource::ProxIterate),
            "threshold" => Ok(SupportSource::Threshold),
            other => Err(Error::Config(format!("unknown support source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rho: f64,
    /// Augmented-Lagrangian parameter.
    pub tau: f64,
    pub max_iter: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub support_source: SupportSource,
    pub support_eps: f64,
    /// Leave the diagonal out of the ℓ1 penalty (ablation only).
    pub exempt_diagonal: bool,
    /// Rebalance τ when one residual dominates the other by more than 10×.
    pub adaptive_tau: bool,
    /// Record the objective every this many iterations; 0 disables the trace.
    pub checkpoint_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 0.0,
            tau: 1.0,
            max_iter: 5000,
            primal_tol: 1e-6,
            dual_tol: 1e-6,
            support_source: SupportSource::ProxIterate,
            support_eps: 1e-8,
            exempt_diagonal: false,
            adaptive_tau: true,
            checkpoint_every: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_rho(rho: f64) -> Self {
        Self {
            rho,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be nonnegative, got {}", self.rho)));
        }
        positive("tau", self.tau)?;
        positive("primal_tol", self.primal_tol)?;
        positive("dual_tol", self.dual_tol)?;
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if !(self.support_eps >= 0.0) {
            return Err(Error::Config("support_eps must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Fantope-feasible iterate.
    pub h_hat: SymMat,
    /// Sparse prox iterate.
    pub y_hat: SymMat,
    /// Scaled dual variable at exit.
    pub w: DMatrix<f64>,
    pub support: Vec<usize>,
    /// `⟨S, Ĥ⟩ − ρ‖Ĥ‖₁,₁`.
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    /// τ at exit; differs from the configured value when τ is adapted.
    pub tau: f64,
    /// Objective at each checkpoint (see [`SolverConfig::checkpoint_every`]).
    pub objective_trace: Vec<f64>,
}

impl SolveReport {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            y: self.y_hat.matrix().clone(),
            w: self.w.clone(),
        }
    }
}

/// Initial `(Y, W)` for the splitting, e.g. from a solve with a nearby ρ.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub y: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

pub(crate) const TAU_UPDATE_EVERY: usize = 10;
pub(crate) const TAU_BALANCE: f64 = 10.0;
pub(crate) const TAU_STEP: f64 = 2.0;

/// Shift θ solving `Σ clamp(γ_i − θ, 0, 1) = k` by bisection.
///
/// The left side is nonincreasing in θ and may be flat; any θ on a plateau
/// gives the same clamped values.
pub fn fantope_shift(values: &[f64], k: usize) -> f64 {
    let target = k as f64;
    let f = |theta: f64| -> f64 { values.iter().map(|&g| (g - theta).clamp(0.0, 1.0)).sum() };
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (min - 1.0, max);
    if (f(lo) - target).abs() <= TOL.fantope_trace {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm - target).abs() <= TOL.fantope_trace {
            return mid;
        }
        if fm > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    // Exact finish: on the final bracket the active set is fixed, so f is
    // affine there and θ = (Σ_{free} γ_i + #{γ_i−θ ≥ 1} − k)/#free.
    let theta = 0.5 * (lo + hi);
    let mut ones = 0.0;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for &g in values {
        let c = g - theta;
        if c >= 1.0 {
            ones += 1.0;
        } else if c > 0.0 {
            free_sum += g;
            free += 1;
        }
    }
    if free > 0 {
        let exact = (free_sum + ones - target) / free as f64;
        if (f(exact) - target).abs() < (f(theta) - target).abs() {
            return exact;
        }
    }
    theta
}

/// Frobenius projection of a symmetric matrix onto `𝓕ᵏ`.
pub fn project_fantope(a: &SymMat, k: usize) -> Result<SymMat> {
    SymMat::from_computed(project_fantope_matrix(a.matrix(), k)?)
}

pub(crate) fn project_fantope_matrix(a: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    if k == 0 || k > p {
        return Err(Error::InvalidSpec(format!("Fantope rank k = {k} must lie in 1..={p}")));
    }
    let eig = eig_sym_matrix(a)?;
    let theta = fantope_shift(&eig.values, k);
    // rank-r reconstruction over the eigenvalues that survive the clamp
    let active: Vec<(usize, f64)> = eig
        .values
        .iter()
        .enumerate()
        .map(|(l, &g)| (l, (g - theta).clamp(0.0, 1.0)))
        .filter(|&(_, c)| c > 0.0)
        .collect();
    let r = active.len();
    let mut v = DMatrix::zeros(p, r);
    let mut vs = DMatrix::zeros(p, r);
    for (c, &(l, w)) in active.iter().enumerate() {
        v.set_column(c, &eig.vectors.column(l));
        vs.set_column(c, &(eig.vectors.column(l) * w));
    }
    let mut out = DMatrix::zeros(p, p);
    out.gemm(1.0, &vs, &v.transpose(), 0.0);
    Ok(crate::matcore::symmetrize(&out))
}

/// `max_{H ∈ 𝓕ᵏ} ⟨A, H⟩`, the sum of the `k` largest eigenvalues.
pub fn fantope_max(a: &SymMat, k: usize) -> Result<f64> {
    let eig = crate::matcore::eig_sym(a)?;
    Ok(eig.values.iter().take(k).sum())
}

/// `⟨S, H⟩ − ρ‖H‖₁,₁`.
pub fn objective(s: &SymMat, h: &SymMat, rho: f64) -> f64 {
    s.inner(h) - rho * h.norm(NormKind::OneOne)
}

/// Maximizes `⟨S, H⟩ − ρ‖H‖₁,₁` over `𝓕ᵏ` from a cold start.
pub fn solve_penalized(s: &SymMat, k: usize, config: &SolverConfig) -> Result<SolveReport> {
    solve_penalized_warm(s, k, config, None)
}

pub fn solve_penalized_warm(
    s: &SymMat,
    k: usize,
    config: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<SolveReport> {
    solve_inner(s, k, config, warm, None)
}

/// Same problem with the extra constraint that `H` vanishes outside `support × support`,
/// enforced by masking the full `p×p` iterates.
pub fn solve_penalized_masked(
    s: &SymMat,
    k: usize,
    config: &SolverConfig,
    support: &[usize],
) -> Result<SolveReport> {
    if support.len() < k {
        return Err(Error::InvalidSpec(format!(
            "mask of size {} cannot hold a rank-{k} Fantope element",
            support.len()
        )));
    }
    if let Some(&bad) = support.iter().find(|&&i| i >= s.dim()) {
        return Err(Error::InvalidIndex {
            index: bad,
            dim: s.dim(),
        });
    }
    solve_inner(s, k, config, None, Some(support))
}

fn masked_projection(a: &DMatrix<f64>, k: usize, support: &[usize]) -> Result<DMatrix<f64>> {
    let sub = DMatrix::from_fn(support.len(), support.len(), |r, c| a[(support[r], support[c])]);
    let proj = project_fantope_matrix(&sub, k)?;
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            out[(i, j)] = proj[(r, c)];
        }
    }
    Ok(out)
}

fn solve_inner(
    s: &SymMat,
    k: usize,
    config: &SolverConfig,
    warm: Option<&WarmStart>,
    mask: Option<&[usize]>,
) -> Result<SolveReport> {
    config.validate()?;
    let p = s.dim();
    if k == 0 || k > p {
        return Err(Error::InvalidSpec(format!("k = {k} must lie in 1..={p}")));
    }
    let mut tau = config.tau;
    let mut thresh = config.rho / tau;
    let mut s_scaled = s.matrix() / tau;

    let (mut y, mut w) = match warm {
        Some(ws) if ws.y.nrows() == p && ws.w.nrows() == p => (ws.y.clone(), ws.w.clone()),
        _ => (DMatrix::zeros(p, p), DMatrix::zeros(p, p)),
    };
    let in_mask: Option<Vec<bool>> = mask.map(|m| {
        let mut flags = vec![false; p];
        for &i in m {
            flags[i] = true;
        }
        flags
    });

    let mut h = DMatrix::zeros(p, p);
    let mut trace = Vec::new();
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=config.max_iter {
        iterations = it;
        let arg = &y - &w + &s_scaled;
        h = match mask {
            Some(m) => masked_projection(&arg, k, m)?,
            None => project_fantope_matrix(&arg, k)?,
        };

        let mut y_new = &h + &w;
        for j in 0..p {
            for i in 0..p {
                let keep = match &in_mask {
                    Some(flags) => flags[i] && flags[j],
                    None => true,
                };
                let v = y_new[(i, j)];
                y_new[(i, j)] = if !keep {
                    0.0
                } else if i == j && config.exempt_diagonal {
                    v
                } else {
                    soft_threshold(v, thresh)
                };
            }
        }
        dual = tau * (&y_new - &y).norm();
        y = y_new;
        w += &h - &y;
        primal = (&h - &y).norm();

        if !primal.is_finite() || !dual.is_finite() || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::SolverDiverged { iteration: it, tau });
        }
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 {
            trace.push(s.matrix().dot(&h) - config.rho * h.abs().sum());
        }
        let primal_rel = primal / (config.primal_tol * h.norm().max(1.0));
        let dual_rel = dual / (config.dual_tol * (tau * w.norm()).max(1.0));
        if primal_rel <= 1.0 && dual_rel <= 1.0 {
            converged = true;
            break;
        }
        if config.adaptive_tau && it % TAU_UPDATE_EVERY == 0 {
            let factor = if primal_rel > TAU_BALANCE * dual_rel {
                TAU_STEP
            } else if dual_rel > TAU_BALANCE * primal_rel {
                1.0 / TAU_STEP
            } else {
                1.0
            };
            if factor != 1.0 {
                // the unscaled dual τW is invariant
                tau *= factor;
                w /= factor;
                thresh = config.rho / tau;
                s_scaled = s.matrix() / tau;
            }
        }
    }

    let h_hat = SymMat::from_computed(h)?;
    let y_hat = SymMat::from_computed(y)?;
    let objective = objective(s, &h_hat, config.rho);
    let mut report = SolveReport {
        h_hat,
        y_hat,
        w,
        support: Vec::new(),
        objective,
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        converged,
        tau,
        objective_trace: trace,
    };
    report.support = extract_support(&report, config);
    Ok(report)
}

/// Indices of the nonzero diagonal of the chosen iterate, ascending.
pub fn extract_support(report: &SolveReport, config: &SolverConfig) -> Vec<usize> {
    match config.support_source {
        SupportSource::ProxIterate => report.y_hat.diag_support(config.support_eps),
        SupportSource::Threshold => report.h_hat.diag_support(config.support_eps),
    }
}

/// Optimality certificate built from the scaled dual `Z = τW/ρ` (τ at exit).
#[derive(Debug, Clone, Copy)]
pub struct KktCheck {
    /// `max |Z_ij|`; at most 1 at an exact solution.
    pub max_abs_z: f64,
    /// Largest `|Z_ij − sign(Y_ij)|` over the nonzeros of `Y`.
    pub sign_mismatch: f64,
    /// `max_{𝓕ᵏ}⟨S − ρZ, ·⟩ − ⟨S − ρZ, Ĥ⟩ ≥ 0`.
    pub slack: f64,
}

pub fn kkt_check(s: &SymMat, k: usize, report: &SolveReport, config: &SolverConfig) -> Result<KktCheck> {
    if config.rho <= 0.0 {
        return Err(Error::Config("KKT certificate needs rho > 0".into()));
    }
    let z = &report.w * (report.tau / config.rho);
    let y = report.y_hat.matrix();
    let max_abs_z = z.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut sign_mismatch = 0.0_f64;
    for (zij, yij) in z.iter().zip(y.iter()) {
        if *yij != 0.0 {
            sign_mismatch = sign_mismatch.max((zij - yij.signum()).abs());
        }
    }
    let tilted = SymMat::from_computed(s.matrix() - &z * config.rho)?;
    let best = fantope_max(&tilted, k)?;
    let slack = best - tilted.inner(&report.h_hat);
    Ok(KktCheck {
        max_abs_z,
        sign_mismatch,
        slack,
    })
}

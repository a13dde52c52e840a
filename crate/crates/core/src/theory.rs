//! Theoretical constants of the recovery guarantees, and a Monte-Carlo check of
//! the sample-covariance tail bound.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimate::sample_cov;
use crate::genmodel::{make_base_cov, make_task_cov, sample_task_data, EigenNoise, ModelSpec, SampleDistribution};
use crate::matcore::{eig_sym, norm, NormKind, SymMat};
use crate::rng::{stream, Purpose};

/// Perturbation constants of the task model: `‖R − I‖_{∞,1} ≤ C_R` and `λ₁(D) < L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConstants {
    pub c_r: f64,
    pub l: f64,
}

impl ModelConstants {
    /// Constants satisfied by the generator in `spec`.
    ///
    /// `R − I` has entries in `[0, 1/div]`, so `‖R − I‖_{∞,1} ≤ p/div`; `C_R` must
    /// also dominate `p·(p/div)²` for the second-moment condition.
    pub fn for_spec(spec: &ModelSpec) -> Self {
        let p = spec.p as f64;
        let c_r = if spec.noise.rotation {
            let a = p / spec.noise.rotation_divisor.unwrap_or(p * p);
            a.max(p * a * a)
        } else {
            0.0
        };
        let top = if spec.noise.zero_mean_d { 0.5 } else { 1.0 };
        let l = match spec.noise.eigen_noise {
            EigenNoise::None => 0.0,
            EigenNoise::Diagonal => top,
            EigenNoise::OffDiagonal => top * (p - 1.0),
        };
        Self { c_r, l }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub lambda_1: f64,
    /// `λ_k − λ_{k+1}`.
    pub lambda_diff: f64,
    /// `2(C_R+1)²(λ₁+L)`; `None` without model constants.
    pub lambda_dagger: Option<f64>,
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    /// `8|J|/λ_diff · ‖Σ_{J^c,J}‖₂,∞`; must be below 1.
    pub assumption4_lhs: f64,
    /// Upper end of the admissible ρ window.
    pub theorem1_upper: f64,
    pub c_n1: f64,
    pub c_n2: f64,
    pub c_n3: f64,
    /// `1 − assumption4_lhs`.
    pub alpha_novel: f64,
    /// `min_{j∈J} Π_jj`.
    pub min_pi_diag: f64,
}

impl TheoryReport {
    pub fn assumption4_holds(&self) -> bool {
        self.assumption4_lhs < 1.0
    }

    /// `(max{ρ₁, ρ₂}, ceiling)` when the constants are known.
    pub fn rho_window(&self) -> Option<(f64, f64)> {
        Some((self.rho1?.max(self.rho2?), self.theorem1_upper))
    }

    /// `key=value` lines; unavailable fields print as `NA`.
    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:?}"));
        [
            format!("lambda_1={:?}", self.lambda_1),
            format!("lambda_diff={:?}", self.lambda_diff),
            format!("lambda_dagger={}", opt(self.lambda_dagger)),
            format!("rho1={}", opt(self.rho1)),
            format!("rho2={}", opt(self.rho2)),
            format!("assumption4_lhs={:?}", self.assumption4_lhs),
            format!("theorem1_upper={:?}", self.theorem1_upper),
            format!("c_n1={:?}", self.c_n1),
            format!("c_n2={:?}", self.c_n2),
            format!("c_n3={:?}", self.c_n3),
            format!("alpha_novel={:?}", self.alpha_novel),
            format!("min_pi_diag={:?}", self.min_pi_diag),
        ]
        .join("\n")
            + "\n"
    }
}

/// Thresholds for covariance `sigma` with support `J`, subspace rank `k`,
/// sub-Gaussian parameter `sigma_param`, `m` tasks of `n` samples.
pub fn compute_thresholds(
    sigma: &SymMat,
    support: &[usize],
    k: usize,
    constants: Option<ModelConstants>,
    sigma_param: f64,
    m: usize,
    n: usize,
) -> Result<TheoryReport> {
    let p = sigma.dim();
    if k == 0 || k > p {
        return Err(Error::InvalidSpec(format!("k = {k} must lie in 1..={p}")));
    }
    if support.is_empty() {
        return Err(Error::InvalidSpec("empty support".into()));
    }
    if let Some(&bad) = support.iter().find(|&&i| i >= p) {
        return Err(Error::InvalidIndex { index: bad, dim: p });
    }
    let eig = eig_sym(sigma)?;
    let lambda_1 = eig.values[0];
    let lambda_diff = eig.values[k - 1] - eig.values.get(k).copied().unwrap_or(0.0);
    if !(lambda_diff > 0.0) {
        return Err(Error::AssumptionViolated(format!(
            "spectral gap λ_k − λ_(k+1) = {lambda_diff:e} is not positive"
        )));
    }
    let vk = eig.leading(k);
    let pi = &vk * vk.transpose();
    let min_pi_diag = support
        .iter()
        .map(|&j| pi[(j, j)])
        .fold(f64::INFINITY, f64::min);

    let complement: Vec<usize> = (0..p).filter(|i| !support.contains(i)).collect();
    let block_norm = if complement.is_empty() {
        0.0
    } else {
        let s = sigma.matrix();
        let block = DMatrix::from_fn(complement.len(), support.len(), |r, c| s[(complement[r], support[c])]);
        norm(&block, NormKind::TwoInf)?
    };
    let j = support.len() as f64;
    let assumption4_lhs = 8.0 * j / lambda_diff * block_norm;
    let theorem1_upper = (lambda_diff * min_pi_diag / (16.0 * j))
        .min(lambda_diff * lambda_diff / (4.0 * j * (lambda_diff + 8.0 * lambda_1)));

    let (m_f, n_f, p_f) = (m as f64, n as f64, p as f64);
    let lambda_dagger = constants.map(|c| 2.0 * (c.c_r + 1.0).powi(2) * (lambda_1 + c.l));
    let rho1 = constants.zip(lambda_dagger).map(|(c, ld)| {
        4.0 * ld * (p_f.ln() / m_f).sqrt() + c.c_r / p_f * lambda_1 + 2.0 * (c.c_r / p_f).sqrt() * lambda_1
    });
    let rho2 = lambda_dagger
        .map(|ld| 16.0 * (2.0 * sigma_param.powi(4) * ld * (p_f + 1.0).ln() / (n_f * m_f)).sqrt());

    Ok(TheoryReport {
        lambda_1,
        lambda_diff,
        lambda_dagger,
        rho1,
        rho2,
        assumption4_lhs,
        theorem1_upper,
        c_n1: 1.0 / (32.0 * lambda_1 * sigma_param * sigma_param),
        c_n2: 4.0 * j * (1.0 + 8.0 * lambda_1 / lambda_diff) / lambda_diff,
        c_n3: lambda_diff * min_pi_diag / (4.0 * j),
        alpha_novel: 1.0 - assumption4_lhs,
        min_pi_diag,
    })
}

/// `p(p+1)/2 · exp(−nmε² / (512σ⁴η))`.
pub fn tail_bound(p: usize, n: usize, m: usize, eps: f64, sigma: f64, eta: f64) -> f64 {
    let pairs = (p * (p + 1)) as f64 / 2.0;
    pairs * (-((n * m) as f64) * eps * eps / (512.0 * sigma.powi(4) * eta)).exp()
}

/// The `ε` at which [`tail_bound`] equals `bound`.
pub fn epsilon_for_bound(p: usize, n: usize, m: usize, bound: f64, sigma: f64, eta: f64) -> f64 {
    let pairs = (p * (p + 1)) as f64 / 2.0;
    (512.0 * sigma.powi(4) * eta * (pairs / bound).ln() / (n * m) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub epsilon: f64,
    pub freq: f64,
    pub bound: f64,
    /// Bound at least 1.
    pub vacuous: bool,
    /// `ε` outside `(0, 32ησ²)`.
    pub out_of_range: bool,
    pub reps: usize,
}

/// Task covariances of replication `rep`; task ids are offset so every
/// replication draws fresh perturbations around the same base covariance.
fn replication_covs(spec: &ModelSpec, m: usize, rep: usize) -> Result<Vec<SymMat>> {
    let gt = make_base_cov(spec)?;
    (0..m).map(|i| make_task_cov(&gt, spec, rep * m + i)).collect()
}

/// `max ‖Σ⁽ⁱ⁾‖_{∞,∞}` over all task covariances the check will draw.
pub fn empirical_eta(spec: &ModelSpec, m: usize, reps: usize) -> Result<f64> {
    let mut eta: f64 = 0.0;
    for rep in 0..reps {
        for c in replication_covs(spec, m, rep)? {
            eta = eta.max(c.norm(NormKind::InfInf));
        }
    }
    Ok(eta)
}

/// Sub-Gaussian parameter of Gaussian draws from the task covariances the check
/// will use: `sqrt(max_l Σ⁽ⁱ⁾_ll)`, so that `σ = 1` for unit-variance coordinates.
pub fn empirical_sigma(spec: &ModelSpec, m: usize, reps: usize) -> Result<f64> {
    if spec.distribution != SampleDistribution::Gaussian {
        return Err(Error::Config(format!(
            "no sub-Gaussian parameter is derived for {:?} draws; pass it explicitly",
            spec.distribution
        )));
    }
    let mut var: f64 = 0.0;
    for rep in 0..reps {
        for c in replication_covs(spec, m, rep)? {
            var = c.diagonal().into_iter().fold(var, f64::max);
        }
    }
    Ok(var.sqrt())
}

/// Empirical frequency of `‖(1/m)Σ(S⁽ⁱ⁾ − Σ⁽ⁱ⁾)‖_{∞,∞} ≥ ε` against the analytic bound.
pub fn tail_bound_check(
    spec: &ModelSpec,
    m: usize,
    n: usize,
    epsilons: &[f64],
    reps: usize,
    sigma: f64,
) -> Result<Vec<TailRow>> {
    if reps < 100 {
        return Err(Error::Config(format!("tail check needs at least 100 reps, got {reps}")));
    }
    if m == 0 || n == 0 {
        return Err(Error::Config("m and n must be positive".into()));
    }
    let eta = empirical_eta(spec, m, reps)?;
    let deviations = (0..reps)
        .map(|rep| deviation(spec, m, n, rep))
        .collect::<Result<Vec<f64>>>()?;
    Ok(tail_table(spec.p, m, n, epsilons, &deviations, sigma, eta))
}

/// `‖(1/m)Σ(S⁽ⁱ⁾ − Σ⁽ⁱ⁾)‖_{∞,∞}` for replication `rep`.
pub fn deviation(spec: &ModelSpec, m: usize, n: usize, rep: usize) -> Result<f64> {
    let p = spec.p;
    let mut acc = DMatrix::zeros(p, p);
    for (i, cov) in replication_covs(spec, m, rep)?.into_iter().enumerate() {
        let mut rng = stream(spec.seed, Purpose::Replication, &[rep as u64, i as u64]);
        let data = sample_task_data(&cov, n, spec, &mut rng, i)?;
        acc += sample_cov(&data)?.matrix() - cov.matrix();
    }
    acc /= m as f64;
    norm(&acc, NormKind::InfInf)
}

pub fn tail_table(
    p: usize,
    m: usize,
    n: usize,
    epsilons: &[f64],
    deviations: &[f64],
    sigma: f64,
    eta: f64,
) -> Vec<TailRow> {
    let reps = deviations.len();
    epsilons
        .iter()
        .map(|&eps| {
            let hits = deviations.iter().filter(|&&d| d >= eps).count();
            let bound = tail_bound(p, n, m, eps, sigma, eta);
            TailRow {
                epsilon: eps,
                freq: hits as f64 / reps as f64,
                bound,
                vacuous: bound >= 1.0,
                out_of_range: !(eps > 0.0 && eps < 32.0 * eta * sigma * sigma),
                reps,
            }
        })
        .collect()
}

//! Comparison methods: per-task sparse PCA with a union of supports, and a
//! joint multi-task solve coupled by an entrywise max across tasks.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimate::sample_cov;
use crate::fantope::{
    extract_support, objective, project_fantope_matrix, solve_penalized, SolveReport, SolverConfig,
    TAU_BALANCE, TAU_STEP, TAU_UPDATE_EVERY,
};
use crate::genmodel::TaskData;
use crate::matcore::{project_l1_ball, SymMat};

/// `sqrt(ln(p+1) / n)`, the single-task penalty.
pub fn independent_rho(p: usize, n: usize) -> f64 {
    (((p + 1) as f64).ln() / n as f64).sqrt()
}

/// Solves each task alone and returns the union of the supports, ascending.
///
/// `rho = None` uses [`independent_rho`] with each task's own `n`.
pub fn independent_union(tasks: &[TaskData], k: usize, rho: Option<f64>, config: &SolverConfig) -> Result<Vec<usize>> {
    Ok(independent_solves(tasks, k, rho, config)?.1)
}

/// Per-task reports together with the union.
pub fn independent_solves(
    tasks: &[TaskData],
    k: usize,
    rho: Option<f64>,
    config: &SolverConfig,
) -> Result<(Vec<SolveReport>, Vec<usize>)> {
    if tasks.is_empty() {
        return Err(Error::InvalidData("no tasks".into()));
    }
    let mut union = BTreeSet::new();
    let mut reports = Vec::with_capacity(tasks.len());
    for t in tasks {
        let cfg = SolverConfig {
            rho: rho.unwrap_or_else(|| independent_rho(t.p(), t.n())),
            ..config.clone()
        };
        let report = solve_penalized(&sample_cov(t)?, k, &cfg)?;
        union.extend(report.support.iter().copied());
        reports.push(report);
    }
    Ok((reports, union.into_iter().collect()))
}

/// Prox of `t·‖·‖∞` at `v`, via `v − Π_{‖·‖₁ ≤ t}(v)`.
pub fn prox_linf(v: &[f64], t: f64) -> Vec<f64> {
    if t <= 0.0 {
        return v.to_vec();
    }
    let proj = project_l1_ball(v, t);
    v.iter().zip(&proj).map(|(a, b)| a - b).collect()
}

#[derive(Debug, Clone)]
pub struct MultitaskResult {
    /// One report per task; `objective` there is the task's own `⟨S⁽ⁱ⁾,Ĥ⁽ⁱ⁾⟩ − ρ‖Ĥ⁽ⁱ⁾‖₁,₁`.
    pub reports: Vec<SolveReport>,
    pub union: Vec<usize>,
    /// `Σᵢ⟨S⁽ⁱ⁾,Ĥ⁽ⁱ⁾⟩ − ρ Σ_{j,l} maxᵢ |Ĥ⁽ⁱ⁾_{j,l}|`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rho_used: f64,
}

/// Penalty `sqrt(ln(p+1) / (m·n))` used by the joint solve.
pub fn multitask_rho(p: usize, m: usize, n: f64) -> f64 {
    (((p + 1) as f64).ln() / (m as f64 * n)).sqrt()
}

pub fn joint_objective(s: &[DMatrix<f64>], h: &[DMatrix<f64>], rho: f64) -> f64 {
    let fit: f64 = s.iter().zip(h).map(|(a, b)| a.dot(b)).sum();
    let (r, c) = h[0].shape();
    let mut pen = 0.0;
    for j in 0..c {
        for i in 0..r {
            pen += h.iter().fold(0.0_f64, |m, x| m.max(x[(i, j)].abs()));
        }
    }
    fit - rho * pen
}

/// Maximizes the multi-task objective with every `H⁽ⁱ⁾ ∈ 𝓕ᵏ`.
///
/// `rho = None` uses [`multitask_rho`] with the mean task size. Stopping uses the
/// largest per-task residuals.
pub fn multitask_solve(tasks: &[TaskData], k: usize, rho: Option<f64>, config: &SolverConfig) -> Result<MultitaskResult> {
    config.validate()?;
    let m = tasks.len();
    if m == 0 {
        return Err(Error::InvalidData("no tasks".into()));
    }
    let p = tasks[0].p();
    if tasks.iter().any(|t| t.p() != p) {
        return Err(Error::InvalidData("tasks disagree on dimension".into()));
    }
    if k == 0 || k > p {
        return Err(Error::InvalidSpec(format!("k = {k} must lie in 1..={p}")));
    }
    let n_mean = tasks.iter().map(|t| t.n() as f64).sum::<f64>() / m as f64;
    let rho = rho.unwrap_or_else(|| multitask_rho(p, m, n_mean));
    let covs = tasks.iter().map(sample_cov).collect::<Result<Vec<_>>>()?;
    let s: Vec<DMatrix<f64>> = covs.iter().map(|c| c.matrix().clone()).collect();

    let mut tau = config.tau;
    let mut h = vec![DMatrix::zeros(p, p); m];
    let mut y = vec![DMatrix::zeros(p, p); m];
    let mut w = vec![DMatrix::<f64>::zeros(p, p); m];
    let mut fiber = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);

    for it in 1..=config.max_iter {
        iterations = it;
        for i in 0..m {
            h[i] = project_fantope_matrix(&(&y[i] - &w[i] + &s[i] / tau), k)?;
        }
        let y_prev = y.clone();
        let thresh = rho / tau;
        for c in 0..p {
            for r in 0..p {
                for i in 0..m {
                    fiber[i] = h[i][(r, c)] + w[i][(r, c)];
                }
                let out = if r == c && config.exempt_diagonal {
                    fiber.clone()
                } else {
                    prox_linf(&fiber, thresh)
                };
                for i in 0..m {
                    y[i][(r, c)] = out[i];
                }
            }
        }
        let mut primal_rel: f64 = 0.0;
        let mut dual_rel: f64 = 0.0;
        primal = 0.0;
        dual = 0.0;
        for i in 0..m {
            w[i] += &h[i] - &y[i];
            let pr = (&h[i] - &y[i]).norm();
            let du = tau * (&y[i] - &y_prev[i]).norm();
            primal = primal.max(pr);
            dual = dual.max(du);
            primal_rel = primal_rel.max(pr / (config.primal_tol * h[i].norm().max(1.0)));
            dual_rel = dual_rel.max(du / (config.dual_tol * (tau * w[i].norm()).max(1.0)));
        }
        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::SolverDiverged { iteration: it, tau });
        }
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
                tau *= factor;
                for wi in w.iter_mut() {
                    *wi /= factor;
                }
            }
        }
    }

    let joint = joint_objective(&s, &h, rho);
    let task_cfg = SolverConfig {
        rho,
        ..config.clone()
    };
    let mut union = BTreeSet::new();
    let mut reports = Vec::with_capacity(m);
    for i in 0..m {
        let h_hat = SymMat::from_computed(h[i].clone())?;
        let y_hat = SymMat::from_computed(y[i].clone())?;
        let mut report = SolveReport {
            objective: objective(&covs[i], &h_hat, rho),
            h_hat,
            y_hat,
            w: w[i].clone(),
            support: Vec::new(),
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            converged,
            tau,
            objective_trace: Vec::new(),
        };
        report.support = extract_support(&report, &task_cfg);
        union.extend(report.support.iter().copied());
        reports.push(report);
    }
    Ok(MultitaskResult {
        reports,
        union: union.into_iter().collect(),
        objective: joint,
        iterations,
        converged,
        rho_used: rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::{generate_tasks, ModelSpec};
    use crate::meta::recover_support_union;
    use crate::rng::{stream, Purpose};
    use proptest::prelude::*;
    use rand::Rng;

    fn rows(p: usize, data: &[f64], id: usize) -> TaskData {
        TaskData::new(DMatrix::from_row_slice(data.len() / p, p, data), id).unwrap()
    }

    #[test]
    fn fiber_prox_example() {
        assert_eq!(prox_linf(&[2.0, 1.0], 1.0), vec![1.0, 1.0]);
        assert_eq!(prox_linf(&[0.3, -0.2], 1.0), vec![0.0, 0.0]);
        assert_eq!(prox_linf(&[0.3, -0.2], 0.0), vec![0.3, -0.2]);
    }

    proptest! {
        #[test]
        fn fiber_prox_moreau_identity(v in prop::collection::vec(-5.0f64..5.0, 1..6), rho in 0.01f64..3.0) {
            let prox = prox_linf(&v, rho);
            let scaled: Vec<f64> = v.iter().map(|x| x / rho).collect();
            let dual = project_l1_ball(&scaled, 1.0);
            for i in 0..v.len() {
                prop_assert!((prox[i] + rho * dual[i] - v[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fiber_prox_minimizes() {
        // ½‖x − v‖² + t‖x‖∞ is not smaller at random perturbations of the prox
        let mut rng = stream(11, Purpose::MatrixTest, &[]);
        let f = |x: &[f64], v: &[f64], t: f64| {
            let q: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            0.5 * q + t * x.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
        };
        for _ in 0..50 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let t = rng.random_range(0.1..4.0);
            let x = prox_linf(&v, t);
            let best = f(&x, &v, t);
            for _ in 0..100 {
                let y: Vec<f64> = x.iter().map(|a| a + rng.random_range(-0.05..0.05)).collect();
                assert!(f(&y, &v, t) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn single_task_matches_meta() {
        let t = rows(4, &[1.0, 0.5, 0.0, 0.0, 0.8, 0.9, 0.1, 0.0, 0.2, 0.1, 0.0, 1.0], 0);
        let cfg = SolverConfig {
            primal_tol: 1e-9,
            dual_tol: 1e-9,
            max_iter: 20_000,
            ..SolverConfig::default()
        };
        let ind = independent_union(std::slice::from_ref(&t), 1, None, &cfg).unwrap();
        let meta = recover_support_union(std::slice::from_ref(&t), 1, None, &cfg).unwrap();
        assert_eq!(ind, meta.j_hat);

        let rho = 0.1;
        let mt = multitask_solve(std::slice::from_ref(&t), 1, Some(rho), &cfg).unwrap();
        let single = solve_penalized(&sample_cov(&t).unwrap(), 1, &SolverConfig { rho, ..cfg }).unwrap();
        assert!(mt.converged && single.converged);
        assert!((mt.objective - single.objective).abs() < 1e-6);
        assert_eq!(mt.union, single.support);
    }

    #[test]
    fn identical_noiseless_tasks() {
        let x = [0.0, 0.6, 0.0, 0.8, 0.0];
        let tasks: Vec<TaskData> = (0..3).map(|i| rows(5, &x, i)).collect();
        let cfg = SolverConfig::default();
        let (reports, union) = independent_solves(&tasks, 1, Some(0.01), &cfg).unwrap();
        assert_eq!(union, vec![1, 3]);
        for r in reports {
            assert_eq!(r.support, vec![1, 3]);
        }
        assert_eq!(multitask_solve(&tasks, 1, Some(0.01), &cfg).unwrap().union, vec![1, 3]);
    }

    #[test]
    fn union_is_monotone() {
        let spec = ModelSpec::new(12, 2, 3, 4);
        let (_, tasks) = generate_tasks(&spec, 4, 3).unwrap();
        let cfg = SolverConfig::default();
        let mut prev: Vec<usize> = Vec::new();
        for m in 1..=tasks.len() {
            let u = independent_union(&tasks[..m], 2, None, &cfg).unwrap();
            assert!(prev.iter().all(|i| u.contains(i)));
            prev = u;
        }
    }

    #[test]
    fn empty_input_rejected() {
        let cfg = SolverConfig::default();
        assert!(independent_union(&[], 1, None, &cfg).is_err());
        assert!(multitask_solve(&[], 1, None, &cfg).is_err());
    }
}

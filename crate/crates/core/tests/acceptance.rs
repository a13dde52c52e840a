//! End-to-end acceptance checks, run sequentially with one PASS/FAIL line each.

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use meta_spca::estimate::submatrix;
use meta_spca::experiment::{emit_results, run_experiment, ExperimentGrid, ResultRow, Setting};
use meta_spca::fantope::{project_fantope, solve_penalized, SolverConfig};
use meta_spca::genmodel::{make_base_cov, ModelSpec, NoiseSpec};
use meta_spca::matcore::{eig_sym, SymMat};
use meta_spca::theory::{empirical_eta, empirical_sigma, epsilon_for_bound, tail_bound_check};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(failures: Vec<String>, summary: String) -> Outcome {
    if failures.is_empty() {
        Outcome { pass: true, detail: summary }
    } else {
        Outcome {
            pass: false,
            detail: format!("{summary}; {}", failures.join("; ")),
        }
    }
}

fn check_runtime(failures: &mut Vec<String>, elapsed: Duration, budget_s: u64) {
    if elapsed > Duration::from_secs(budget_s) {
        failures.push(format!("runtime {:.1}s over the {budget_s}s budget", elapsed.as_secs_f64()));
    }
}

fn random_sym(rng: &mut ChaCha20Rng, p: usize, scale: f64) -> SymMat {
    let g = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    SymMat::new((&g + g.transpose()) * 0.5).unwrap()
}

fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn tight_solver(rho: f64) -> SolverConfig {
    SolverConfig {
        primal_tol: 1e-10,
        dual_tol: 1e-10,
        max_iter: 200_000,
        ..SolverConfig::with_rho(rho)
    }
}

/// Projection feasibility, idempotence, nonexpansiveness and the ρ = 0 objective.
fn fantope_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let mut failures = Vec::new();
    let (mut worst_trace, mut worst_eig, mut worst_idem, mut worst_obj): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for case in 0..1000 {
        let p = rng.random_range(2..=8);
        let k = rng.random_range(1..=p);
        let scale = [0.1, 1.0, 10.0][case % 3];
        let a = random_sym(&mut rng, p, scale);
        let b = random_sym(&mut rng, p, scale);
        let pa = project_fantope(&a, k).unwrap();
        let pb = project_fantope(&b, k).unwrap();

        let eig = eig_sym(&pa).unwrap();
        let below = -eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let above = eig.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 1.0;
        worst_eig = worst_eig.max(below).max(above);
        worst_trace = worst_trace.max((pa.trace() - k as f64).abs());
        let again = project_fantope(&pa, k).unwrap();
        worst_idem = worst_idem.max(max_abs(&(again.matrix() - pa.matrix())));
        let lhs = (pa.matrix() - pb.matrix()).norm();
        let rhs = (a.matrix() - b.matrix()).norm();
        if lhs > rhs + 1e-9 {
            failures.push(format!("case {case}: expansion {lhs} > {rhs}"));
        }

        let top: f64 = eig_sym(&a).unwrap().values[..k].iter().sum();
        let report = solve_penalized(&a, k, &tight_solver(0.0)).unwrap();
        worst_obj = worst_obj.max((report.objective - top).abs());
    }
    if worst_eig > 1e-10 {
        failures.push(format!("eigenvalue outside [0,1] by {worst_eig:e}"));
    }
    if worst_trace > 1e-9 {
        failures.push(format!("trace off by {worst_trace:e}"));
    }
    if worst_idem > 1e-9 {
        failures.push(format!("idempotence off by {worst_idem:e}"));
    }
    if worst_obj > 1e-6 {
        failures.push(format!("rho=0 objective off by {worst_obj:e}"));
    }
    let elapsed = start.elapsed();
    check_runtime(&mut failures, elapsed, 60);
    outcome(
        failures,
        format!(
            "1000 pairs: eig slack {worst_eig:.1e}, trace {worst_trace:.1e}, idempotence {worst_idem:.1e}, \
             rho=0 objective {worst_obj:.1e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// `uᵀSu − ρ‖u‖₁²` at the sphere point `(θ, φ)`.
fn rank_one_value(s: &DMatrix<f64>, rho: f64, th: f64, ph: f64) -> f64 {
    let u = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
    let mut quad = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            quad += u[i] * s[(i, j)] * u[j];
        }
    }
    let l1: f64 = u.iter().map(|x| x.abs()).sum();
    quad - rho * l1 * l1
}

/// Brute-force maximum of the rank-one objective on a refined sphere grid.
fn sphere_oracle(s: &DMatrix<f64>, rho: f64) -> f64 {
    use std::f64::consts::PI;
    let (nt, np) = (600, 1200);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for a in 0..=nt {
        let th = PI * a as f64 / nt as f64;
        for b in 0..np {
            let ph = 2.0 * PI * b as f64 / np as f64;
            let v = rank_one_value(s, rho, th, ph);
            if v > best.0 {
                best = (v, th, ph);
            }
        }
    }
    let (mut dt, mut dp) = (PI / nt as f64, 2.0 * PI / np as f64);
    for _ in 0..6 {
        let (_, th0, ph0) = best;
        for a in -20..=20 {
            for b in -20..=20 {
                let th = th0 + dt * a as f64 / 10.0;
                let ph = ph0 + dp * b as f64 / 10.0;
                let v = rank_one_value(s, rho, th, ph);
                if v > best.0 {
                    best = (v, th, ph);
                }
            }
        }
        dt /= 10.0;
        dp /= 10.0;
    }
    best.0
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(202);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let x = DMatrix::<f64>::from_fn(3, 6, |_, _| rng.sample(StandardNormal));
        let v = DMatrix::<f64>::from_fn(3, 1, |_, _| rng.sample(StandardNormal)).normalize();
        let s = &x * x.transpose() / 6.0 + &v * v.transpose() * 3.0;
        let rho = rng.random_range(0.01..0.3);
        let report = solve_penalized(&SymMat::new(s.clone()).unwrap(), 1, &tight_solver(rho)).unwrap();
        let oracle = sphere_oracle(&s, rho);
        let gap = (report.objective - oracle).abs();
        worst = worst.max(gap);
        if gap > 1e-3 {
            failures.push(format!("case {case}: ADMM {} vs oracle {oracle}", report.objective));
        }
    }
    let elapsed = start.elapsed();
    check_runtime(&mut failures, elapsed, 60);
    outcome(
        failures,
        format!("20 instances, max |ADMM - oracle| {worst:.1e}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn restricted_exactness() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let (mut worst_val, mut worst_vec): (f64, f64) = (0.0, 0.0);
    for seed in 0..50u64 {
        let p = 10 + (seed as usize % 4) * 10;
        let k = 1 + seed as usize % 3;
        let spec = ModelSpec {
            noise: NoiseSpec::noiseless(),
            ..ModelSpec::new(p, k, k + 3, 5000 + seed).with_random_support()
        };
        let gt = make_base_cov(&spec).unwrap();
        let full = eig_sym(&gt.sigma).unwrap();
        let sub = eig_sym(&submatrix(&gt.sigma, &gt.support).unwrap()).unwrap();
        for l in 0..k {
            worst_val = worst_val.max((full.values[l] - sub.values[l]).abs());
        }
        // compare projectors so eigenvector signs do not matter
        let vk = sub.leading(k);
        let restricted = &vk * vk.transpose();
        let uk = full.leading(k);
        let projector = &uk * uk.transpose();
        let mut err: f64 = 0.0;
        for i in 0..p {
            for j in 0..p {
                let expected = match (gt.support.binary_search(&i), gt.support.binary_search(&j)) {
                    (Ok(a), Ok(b)) => restricted[(a, b)],
                    _ => 0.0,
                };
                err = err.max((projector[(i, j)] - expected).abs());
            }
        }
        worst_vec = worst_vec.max(err);
        if err > 1e-9 {
            failures.push(format!("seed {seed}: eigenvector mismatch {err:e}"));
        }
    }
    if worst_val > 1e-9 {
        failures.push(format!("eigenvalue mismatch {worst_val:e}"));
    }
    outcome(
        failures,
        format!(
            "50 models, eigenvalues {worst_val:.1e}, eigenvectors {worst_vec:.1e}, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

/// Mean of `recovered` per key.
fn rates<K: Ord + Copy>(rows: &[ResultRow], key: impl Fn(&ResultRow) -> K) -> BTreeMap<K, f64> {
    let mut acc: BTreeMap<K, (f64, f64)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(key(r)).or_default();
        e.0 += f64::from(r.recovered);
        e.1 += 1.0;
    }
    acc.into_iter().map(|(k, (s, c))| (k, s / c)).collect()
}

fn t_key(r: &ResultRow) -> (usize, u64) {
    (r.n, r.t.round() as u64)
}

/// Checks shared by the full and fast Gaussian runs.
fn gaussian_pattern(rows: &[ResultRow], failures: &mut Vec<String>) -> String {
    let by = rates(rows, t_key);
    let ns: Vec<usize> = {
        let mut v: Vec<usize> = by.keys().map(|k| k.0).collect();
        v.dedup();
        v
    };
    let ts: Vec<u64> = {
        let mut v: Vec<u64> = by.keys().map(|k| k.1).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let t_max = *ts.last().unwrap();
    for &n in &ns {
        let top = by[&(n, t_max)];
        if top < 0.95 {
            failures.push(format!("n={n}: P={top} at T={t_max}"));
        }
        for w in ts.windows(2) {
            let (a, b) = (by[&(n, w[0])], by[&(n, w[1])]);
            if b < a - 0.1 {
                failures.push(format!("n={n}: drop {a} -> {b} from T={} to T={}", w[0], w[1]));
            }
        }
    }
    for &t in &ts {
        let vals: Vec<f64> = ns.iter().map(|&n| by[&(n, t)]).collect();
        let spread = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread > 0.15 {
            failures.push(format!("T={t}: n-curves {vals:?} differ by {spread:.2}"));
        }
    }
    // grid points where even a single task exceeds the nominal T
    let mut shifted: Vec<String> = rows
        .iter()
        .filter_map(|r| {
            let log = ((r.p + 1) as f64).ln();
            let effective = (r.m * r.n) as f64 / log;
            ((r.t * log / r.n as f64).round() < 1.0)
                .then(|| format!("n={} T={} runs at m={} (T={effective:.2})", r.n, r.t, r.m))
        })
        .collect();
    shifted.sort();
    shifted.dedup();
    let mut text = ns
        .iter()
        .map(|&n| {
            let curve: Vec<String> = ts.iter().map(|&t| format!("{:.2}", by[&(n, t)])).collect();
            format!("n={n} [{}]", curve.join(" "))
        })
        .collect::<Vec<_>>()
        .join(", ");
    if !shifted.is_empty() {
        text.push_str(&format!(" ({})", shifted.join(", ")));
    }
    text
}

fn gaussian_grid() -> ExperimentGrid {
    let mut grid = ExperimentGrid::preset(Setting::Gaussian, false);
    grid.n_values = vec![3, 9];
    grid.t_values = vec![1.0, 5.0, 10.0, 15.0];
    grid.reps = 100;
    grid
}

fn gaussian_reproduction(rows: &[ResultRow], elapsed: Duration, fast: &(Vec<ResultRow>, Duration)) -> Outcome {
    let mut failures = Vec::new();
    let curves = gaussian_pattern(rows, &mut failures);
    check_runtime(&mut failures, elapsed, 30 * 60);
    let mut fast_failures = Vec::new();
    let fast_curves = gaussian_pattern(&fast.0, &mut fast_failures);
    failures.extend(fast_failures.into_iter().map(|f| format!("fast: {f}")));
    check_runtime(&mut failures, fast.1, 5 * 60);
    outcome(
        failures,
        format!(
            "p=50: {curves} in {:.0}s; fast p=30: {fast_curves} in {:.0}s",
            elapsed.as_secs_f64(),
            fast.1.as_secs_f64()
        ),
    )
}

fn novel_reproduction() -> Outcome {
    let start = Instant::now();
    let mut grid = ExperimentGrid::preset(Setting::Novel, false);
    grid.reps = 100;
    let rows = run_experiment(&grid, 0).unwrap();
    let elapsed = start.elapsed();
    let by = rates(&rows, |r| (grid.support_size - r.j_size, r.t.round() as u64));
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for (&(zeros, t), &rate) in &by {
        if t >= 20 {
            parts.push(format!("zeros={zeros} T={t}: {rate:.2}"));
            if rate < 0.95 {
                failures.push(format!("zeros={zeros} T={t}: {rate}"));
            }
        }
    }
    check_runtime(&mut failures, elapsed, 5 * 60);
    outcome(failures, format!("{} in {:.0}s", parts.join(", "), elapsed.as_secs_f64()))
}

fn comparison() -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    for setting in [Setting::ComparisonMeta, Setting::ComparisonIndependent, Setting::ComparisonMultitask] {
        let mut grid = ExperimentGrid::preset(setting, false);
        grid.m_values = vec![2, 6, 10, 14];
        grid.reps = 16;
        rows.extend(run_experiment(&grid, 0).unwrap());
    }
    let elapsed = start.elapsed();
    let by = rates(&rows, |r| (r.setting, r.m));
    let mut failures = Vec::new();
    let meta14 = by[&(Setting::ComparisonMeta, 14)];
    let ind14 = by[&(Setting::ComparisonIndependent, 14)];
    if meta14 < 0.9 {
        failures.push(format!("meta at m=14: {meta14}"));
    }
    if ind14 > 0.2 {
        failures.push(format!("independent at m=14: {ind14}"));
    }
    let mut curves = Vec::new();
    for m in [2, 6, 10, 14] {
        let (me, ind, mt) = (
            by[&(Setting::ComparisonMeta, m)],
            by[&(Setting::ComparisonIndependent, m)],
            by[&(Setting::ComparisonMultitask, m)],
        );
        curves.push(format!("m={m} {me:.2}/{ind:.2}/{mt:.2}"));
        if me < mt - 0.15 {
            failures.push(format!("m={m}: meta {me} below multitask {mt}"));
        }
    }
    check_runtime(&mut failures, elapsed, 15 * 60);
    outcome(
        failures,
        format!("meta/independent/multitask: {} in {:.0}s", curves.join(", "), elapsed.as_secs_f64()),
    )
}

fn tail_bound_criterion() -> Outcome {
    let start = Instant::now();
    let reps = 1000;
    let mut failures = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for p in 2..=5 {
        for (m, n) in [(10, 10), (10, 100)] {
            let spec = ModelSpec::new(p, 1, 1, 700 + p as u64);
            let eta = empirical_eta(&spec, m, reps).unwrap();
            let sigma = empirical_sigma(&spec, m, reps).unwrap();
            let eps: Vec<f64> = [0.25, 0.5]
                .iter()
                .map(|&b| epsilon_for_bound(p, n, m, b, sigma, eta))
                .collect();
            for row in tail_bound_check(&spec, m, n, &eps, reps, sigma).unwrap() {
                let slack = 3.0 * (row.bound * (1.0 - row.bound) / reps as f64).sqrt();
                worst = worst.max(row.freq - row.bound - slack);
                if row.out_of_range || row.freq > row.bound + slack {
                    failures.push(format!("p={p} nm={}: {row:?}", n * m));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    check_runtime(&mut failures, elapsed, 10 * 60);
    outcome(
        failures,
        format!(
            "16 cells x {reps} reps, max freq - (bound + 3 sigma) = {worst:.3}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn results_bytes(rows: &[ResultRow]) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    emit_results(rows, dir.path()).unwrap();
    fs::read(dir.path().join("results.csv")).unwrap()
}

fn determinism(single: &[ResultRow], eight: &[ResultRow]) -> Outcome {
    let (a, b) = (results_bytes(single), results_bytes(eight));
    let failures = if a == b {
        Vec::new()
    } else {
        vec!["results.csv differs between --threads 1 and --threads 8".to_string()]
    };
    outcome(failures, format!("{} bytes, {} rows", a.len(), single.len()))
}

fn error_trend(rows: &[ResultRow]) -> Outcome {
    let worst = |t: f64| {
        rows.iter()
            .filter(|r| r.recovered == 1 && r.t == t)
            .map(|r| r.err_inf / r.rho)
            .fold(f64::NAN, f64::max)
    };
    let (late, early) = (worst(15.0), worst(5.0));
    let failures = if late <= 2.0 * early {
        Vec::new()
    } else {
        vec![format!("T=15 ratio {late} exceeds twice the T=5 ratio {early}")]
    };
    outcome(failures, format!("max err/rho: T=5 {early:.3}, T=15 {late:.3}"))
}

fn main() -> ExitCode {
    let _ = env_logger::builder().is_test(true).try_init();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };

    report("1 fantope correctness", fantope_suite());
    report("2 sphere-grid oracle", oracle_equivalence());
    report("3 restricted eigenpairs", restricted_exactness());

    let start = Instant::now();
    let full = run_experiment(&gaussian_grid(), 0).unwrap();
    let full_elapsed = start.elapsed();
    let fast_grid = ExperimentGrid::preset(Setting::Gaussian, true);
    let start = Instant::now();
    let fast_single = run_experiment(&fast_grid, 1).unwrap();
    let fast_elapsed = start.elapsed();
    let fast_eight = run_experiment(&fast_grid, 8).unwrap();
    let fast = (fast_single, fast_elapsed);
    report("4 gaussian reproduction", gaussian_reproduction(&full, full_elapsed, &fast));
    report("5 novel task", novel_reproduction());
    report("6 method comparison", comparison());
    report("7 tail bound", tail_bound_criterion());
    report("8 determinism", determinism(&fast.0, &fast_eight));
    report("9 error trend", error_trend(&full));

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}

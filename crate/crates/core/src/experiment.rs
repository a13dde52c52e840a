//! Seeded replication grids, result rows, and their CSV / plot-data output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;

use crate::baselines::{independent_rho, independent_solves, multitask_rho, multitask_solve};
use crate::error::{Error, Result};
use crate::fantope::{SolverConfig, SupportSource};
use crate::genmodel::{
    generate_tasks, make_base_cov, random_support, sample_task_data, EigenNoise, GroundTruth, MixtureMode, ModelSpec,
    NoiseSpec, SampleDistribution,
};
use crate::matcore::{norm, NormKind, SymMat};
use crate::meta::{default_rho, recover_support_union, tasks_for_rescaled_size};
use crate::novel::{default_novel_rho, recover_novel_support, samples_for_novel_size};
use crate::rng::{derive_key, stream, Purpose};

/// Diagonal cutoff used to read supports off `Ĥ` in experiments.
pub const EXPERIMENT_SUPPORT_EPS: f64 = 4e-3;

/// Relative ADMM tolerance for experiment solves, well below the support threshold.
pub const EXPERIMENT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Setting {
    Gaussian,
    UniformMixture,
    ExponentialMixture,
    ComparisonMeta,
    ComparisonIndependent,
    ComparisonMultitask,
    Novel,
}

impl Setting {
    pub const ALL: [Setting; 7] = [
        Setting::Gaussian,
        Setting::UniformMixture,
        Setting::ExponentialMixture,
        Setting::ComparisonMeta,
        Setting::ComparisonIndependent,
        Setting::ComparisonMultitask,
        Setting::Novel,
    ];

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            Setting::ComparisonMeta | Setting::ComparisonIndependent | Setting::ComparisonMultitask
        )
    }

    fn distribution(self) -> SampleDistribution {
        match self {
            Setting::UniformMixture => SampleDistribution::UniformMixture,
            Setting::ExponentialMixture => SampleDistribution::ExponentialMixture,
            _ => SampleDistribution::Gaussian,
        }
    }

    /// Seed family: the three comparison methods share data.
    fn family(self) -> u64 {
        match self {
            Setting::Gaussian => 1,
            Setting::UniformMixture => 2,
            Setting::ExponentialMixture => 3,
            Setting::ComparisonMeta | Setting::ComparisonIndependent | Setting::ComparisonMultitask => 4,
            Setting::Novel => 5,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::Gaussian => "gaussian",
            Setting::UniformMixture => "uniform_mixture",
            Setting::ExponentialMixture => "exponential_mixture",
            Setting::ComparisonMeta => "comparison_meta",
            Setting::ComparisonIndependent => "comparison_independent",
            Setting::ComparisonMultitask => "comparison_multitask",
            Setting::Novel => "novel",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .iter()
            .copied()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown setting {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentGrid {
    pub setting: Setting,
    /// Swept for the union settings; the first entry is used elsewhere.
    pub p_values: Vec<usize>,
    pub k: usize,
    pub support_size: usize,
    pub spike: f64,
    pub noise: NoiseSpec,
    pub mixture_mode: MixtureMode,
    pub center_delta: bool,
    pub n_values: Vec<usize>,
    /// Rescaled sample sizes; `m·n/ln(p+1)` for union settings, `n/ln(|J|+1)` for `novel`.
    pub t_values: Vec<f64>,
    /// Task counts for the comparison settings.
    pub m_values: Vec<usize>,
    /// Zeros of the novel support inside the union.
    pub extra_zeros: Vec<usize>,
    pub novel_k: usize,
    /// Auxiliary-task design used to recover the union before a novel solve.
    pub aux_n: usize,
    pub aux_t: f64,
    pub reps: usize,
    pub base_seed: u64,
    pub solver: SolverConfig,
    /// Write measured wall time into `runtime_ms`; off keeps results byte-reproducible.
    pub record_timing: bool,
}

impl ExperimentGrid {
    pub fn experiment_solver() -> SolverConfig {
        SolverConfig {
            support_source: SupportSource::Threshold,
            support_eps: EXPERIMENT_SUPPORT_EPS,
            primal_tol: EXPERIMENT_TOL,
            dual_tol: EXPERIMENT_TOL,
            ..SolverConfig::default()
        }
    }

    /// Published design for `setting`; `fast` shrinks it to a quick check.
    pub fn preset(setting: Setting, fast: bool) -> Self {
        let mut g = Self {
            setting,
            p_values: vec![50],
            k: 5,
            support_size: 5,
            spike: 500.0,
            noise: NoiseSpec::default(),
            mixture_mode: MixtureMode::Mixture,
            center_delta: true,
            n_values: vec![3, 5, 7, 9],
            t_values: (1..=15).map(f64::from).collect(),
            m_values: vec![2, 3, 4, 6, 7, 8, 10, 11, 12, 14],
            extra_zeros: vec![2, 3, 4],
            novel_k: 1,
            aux_n: 3,
            aux_t: 15.0,
            reps: 100,
            base_seed: 0,
            solver: Self::experiment_solver(),
            record_timing: false,
        };
        match setting {
            Setting::Gaussian => {}
            Setting::UniformMixture => {
                g.p_values = vec![80];
                g.k = 6;
                g.support_size = 6;
            }
            Setting::ExponentialMixture => {
                g.p_values = vec![40, 45, 50, 55];
                g.n_values = vec![5];
                g.k = 6;
                g.support_size = 6;
            }
            Setting::ComparisonMeta | Setting::ComparisonIndependent | Setting::ComparisonMultitask => {
                g.n_values = vec![3];
                g.reps = 16;
            }
            Setting::Novel => {
                g.t_values = (10..=25).step_by(5).map(f64::from).collect();
            }
        }
        if fast {
            g.reps = g.reps.min(50);
            match setting {
                Setting::Novel => g.t_values = vec![10.0, 20.0],
                s if s.is_comparison() => g.m_values = vec![2, 6, 10, 14],
                _ => {
                    g.p_values = g.p_values.iter().map(|&p| p.min(30)).collect();
                    g.p_values.dedup();
                    if g.n_values.len() > 1 {
                        g.n_values = vec![3, 9];
                    }
                    g.t_values = vec![1.0, 5.0, 10.0, 15.0];
                }
            }
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.p_values.is_empty() || self.p_values.contains(&0) {
            return bad("p_values must be nonempty and positive");
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return bad("n_values must be nonempty and positive");
        }
        if self.k == 0 || self.support_size < self.k {
            return bad("need 1 <= k <= support_size");
        }
        if self.p_values.iter().any(|&p| p < self.support_size) {
            return bad("support_size exceeds p");
        }
        if self.setting.is_comparison() {
            if self.m_values.is_empty() || self.m_values.contains(&0) {
                return bad("m_values must be nonempty and positive");
            }
        } else if self.t_values.is_empty() || self.t_values.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return bad("t_values must be nonempty and positive");
        }
        if self.setting == Setting::Novel {
            if self.extra_zeros.is_empty() {
                return bad("extra_zeros must be nonempty");
            }
            for &z in &self.extra_zeros {
                if z == 0 || self.support_size < z + self.novel_k {
                    return bad("each extra_zeros value must leave at least novel_k support indices");
                }
            }
            if self.novel_k == 0 || self.aux_n == 0 || !(self.aux_t > 0.0) {
                return bad("novel_k, aux_n and aux_t must be positive");
            }
        }
        self.solver.validate()
    }

    /// Sets one `key=value` field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|x| num(key, x.trim())).collect()
        }
        match key {
            "setting" => self.setting = value.parse()?,
            "p" => self.p_values = vec![num(key, value)?],
            "p_values" => self.p_values = list(key, value)?,
            "k" => self.k = num(key, value)?,
            "support_size" | "J_size" => self.support_size = num(key, value)?,
            "spike" => self.spike = num(key, value)?,
            "rotation" => self.noise.rotation = num(key, value)?,
            "rotation_divisor" => self.noise.rotation_divisor = Some(num(key, value)?),
            "eigen_noise" => self.noise.eigen_noise = value.parse::<EigenNoise>()?,
            "zero_mean_d" => self.noise.zero_mean_d = num(key, value)?,
            "mixture_mode" => self.mixture_mode = value.parse()?,
            "center_delta" => self.center_delta = num(key, value)?,
            "n" => self.n_values = vec![num(key, value)?],
            "n_values" => self.n_values = list(key, value)?,
            "t_values" => self.t_values = list(key, value)?,
            "m_values" => self.m_values = list(key, value)?,
            "extra_zeros" => self.extra_zeros = list(key, value)?,
            "novel_k" => self.novel_k = num(key, value)?,
            "aux_n" => self.aux_n = num(key, value)?,
            "aux_t" => self.aux_t = num(key, value)?,
            "reps" => self.reps = num(key, value)?,
            "base_seed" | "seed" => self.base_seed = num(key, value)?,
            "record_timing" => self.record_timing = num(key, value)?,
            "tau" => self.solver.tau = num(key, value)?,
            "max_iter" => self.solver.max_iter = num(key, value)?,
            "primal_tol" => self.solver.primal_tol = num(key, value)?,
            "dual_tol" => self.solver.dual_tol = num(key, value)?,
            "support_source" => self.solver.support_source = value.parse()?,
            "support_eps" => self.solver.support_eps = num(key, value)?,
            "exempt_diagonal" => self.solver.exempt_diagonal = num(key, value)?,
            "adaptive_tau" => self.solver.adaptive_tau = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every pair of a parsed config in order.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Number of rows [`run_experiment`] will produce.
    pub fn row_count(&self) -> usize {
        let per_rep = match self.setting {
            Setting::Novel => self.extra_zeros.len() * self.t_values.len(),
            s if s.is_comparison() => self.m_values.len(),
            _ => self.p_values.len() * self.n_values.len() * self.t_values.len(),
        };
        per_rep * self.reps
    }

    fn model_spec(&self, p: usize, seed: u64) -> ModelSpec {
        ModelSpec {
            p,
            k: self.k,
            support: (0..self.support_size).collect(),
            spike: self.spike,
            noise: self.noise.clone(),
            distribution: self.setting.distribution(),
            mixture_mode: self.mixture_mode,
            center_delta: self.center_delta,
            seed,
        }
        .with_random_support()
    }
}

/// Splits `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    /// The pipeline returned an error; the row counts as not recovered.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub setting: Setting,
    pub p: usize,
    pub k: usize,
    pub j_size: usize,
    pub n: usize,
    pub m: usize,
    pub t: f64,
    pub rho: f64,
    pub rep_index: usize,
    /// Exact support match; for `novel`, no index outside the target support selected.
    pub recovered: u8,
    pub support_hamming: usize,
    pub err_inf: f64,
    pub iterations: usize,
    pub runtime_ms: u64,
    /// Not written to `results.csv`.
    pub status: RowStatus,
    /// Position of the grid point, for ordering.
    pub point: usize,
}

pub const RESULTS_HEADER: &str =
    "setting,p,k,J_size,n,m,T,rho,rep_index,recovered,support_hamming,err_inf,iterations,runtime_ms";

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:?},{:?},{},{},{},{:?},{},{}",
            self.setting,
            self.p,
            self.k,
            self.j_size,
            self.n,
            self.m,
            self.t,
            self.rho,
            self.rep_index,
            self.recovered,
            self.support_hamming,
            self.err_inf,
            self.iterations,
            self.runtime_ms
        )
    }

    pub fn failed(&self) -> bool {
        matches!(self.status, RowStatus::Failed(_))
    }
}

/// Parses `results.csv` content back into rows (status `Ok`, point 0).
pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::InvalidData("results header mismatch".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 14 {
                return Err(Error::InvalidData(format!("expected 14 fields in {l:?}")));
            }
            fn field<T: FromStr>(v: &str, line: &str) -> Result<T> {
                v.parse()
                    .map_err(|_| Error::InvalidData(format!("bad field {v:?} in {line:?}")))
            }
            Ok(ResultRow {
                setting: f[0].parse()?,
                p: field(f[1], l)?,
                k: field(f[2], l)?,
                j_size: field(f[3], l)?,
                n: field(f[4], l)?,
                m: field(f[5], l)?,
                t: field(f[6], l)?,
                rho: field(f[7], l)?,
                rep_index: field(f[8], l)?,
                recovered: field(f[9], l)?,
                support_hamming: field(f[10], l)?,
                err_inf: field(f[11], l)?,
                iterations: field(f[12], l)?,
                runtime_ms: field(f[13], l)?,
                status: RowStatus::Ok,
                point: 0,
            })
        })
        .collect()
}

/// Size of the symmetric difference of two ascending index sets.
pub fn hamming(a: &[usize], b: &[usize]) -> usize {
    let common = a.iter().filter(|i| b.binary_search(i).is_ok()).count();
    a.len() + b.len() - 2 * common
}

fn err_inf(h: &SymMat, pi: &SymMat) -> f64 {
    norm(&(h.matrix() - pi.matrix()), NormKind::InfInf).unwrap_or(f64::NAN)
}

/// Seed of replication `rep` at a grid point.
pub fn replication_seed(base_seed: u64, setting: Setting, point: &[u64], rep: usize) -> u64 {
    let mut ids = vec![setting.family()];
    ids.extend_from_slice(point);
    ids.push(rep as u64);
    derive_key(base_seed, Purpose::Replication, &ids)
}

/// One unit of work: a grid point and a replication (a whole replication for `novel`).
#[derive(Debug, Clone, Copy)]
struct Unit {
    point: usize,
    rep: usize,
}

#[derive(Debug, Clone, Copy)]
struct UnionPoint {
    p: usize,
    n: usize,
    t: f64,
}

fn union_points(grid: &ExperimentGrid) -> Vec<UnionPoint> {
    let mut pts = Vec::new();
    for &p in &grid.p_values {
        for &n in &grid.n_values {
            for &t in &grid.t_values {
                pts.push(UnionPoint { p, n, t });
            }
        }
    }
    pts
}

/// Runs every replication of the grid on `threads` workers (0 = all cores).
///
/// Rows come back sorted by grid point then replication, independent of `threads`.
pub fn run_experiment(grid: &ExperimentGrid, threads: usize) -> Result<Vec<ResultRow>> {
    grid.validate()?;
    let n_points = match grid.setting {
        Setting::Novel => 1,
        s if s.is_comparison() => grid.m_values.len(),
        _ => union_points(grid).len(),
    };
    let units: Vec<Unit> = (0..n_points)
        .flat_map(|point| (0..grid.reps).map(move |rep| Unit { point, rep }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut rows: Vec<ResultRow> = pool.install(|| {
        units
            .par_iter()
            .flat_map_iter(|u| run_unit(grid, *u))
            .collect()
    });
    rows.sort_by_key(|r| (r.point, r.rep_index));
    Ok(rows)
}

fn run_unit(grid: &ExperimentGrid, unit: Unit) -> Vec<ResultRow> {
    match grid.setting {
        Setting::Novel => run_novel_rep(grid, unit.rep),
        s if s.is_comparison() => vec![run_comparison(grid, unit)],
        _ => vec![run_union(grid, unit)],
    }
}

fn elapsed_ms(grid: &ExperimentGrid, start: Instant) -> u64 {
    if grid.record_timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

fn failure_row(mut row: ResultRow, err: Error) -> ResultRow {
    warn!("{} rep {}: {err}", row.setting, row.rep_index);
    row.recovered = 0;
    row.support_hamming = row.support_hamming.max(1);
    row.err_inf = f64::NAN;
    row.status = RowStatus::Failed(err.to_string());
    row
}

fn run_union(grid: &ExperimentGrid, unit: Unit) -> ResultRow {
    let pt = union_points(grid)[unit.point];
    let m = tasks_for_rescaled_size(pt.p, pt.n, pt.t);
    let mut row = ResultRow {
        setting: grid.setting,
        p: pt.p,
        k: grid.k,
        j_size: grid.support_size,
        n: pt.n,
        m,
        t: pt.t,
        rho: default_rho(pt.p, m, pt.n as f64),
        rep_index: unit.rep,
        recovered: 0,
        support_hamming: grid.support_size,
        err_inf: f64::NAN,
        iterations: 0,
        runtime_ms: 0,
        status: RowStatus::Ok,
        point: unit.point,
    };
    let start = Instant::now();
    let seed = replication_seed(
        grid.base_seed,
        grid.setting,
        &[pt.p as u64, pt.n as u64, pt.t.to_bits()],
        unit.rep,
    );
    let outcome = (|| {
        let spec = grid.model_spec(pt.p, seed);
        let (gt, tasks) = generate_tasks(&spec, m, pt.n)?;
        let res = recover_support_union(&tasks, grid.k, None, &grid.solver)?;
        Ok::<_, Error>((gt, res))
    })();
    match outcome {
        Ok((gt, res)) => {
            row.support_hamming = hamming(&res.j_hat, &gt.support);
            row.recovered = u8::from(row.support_hamming == 0);
            row.err_inf = err_inf(&res.report.h_hat, &gt.pi);
            row.iterations = res.report.iterations;
            row.runtime_ms = elapsed_ms(grid, start);
            row
        }
        Err(e) => failure_row(row, e),
    }
}

fn run_comparison(grid: &ExperimentGrid, unit: Unit) -> ResultRow {
    let p = grid.p_values[0];
    let n = grid.n_values[0];
    let m = grid.m_values[unit.point];
    let rho = match grid.setting {
        Setting::ComparisonIndependent => independent_rho(p, n),
        Setting::ComparisonMultitask => multitask_rho(p, m, n as f64),
        _ => default_rho(p, m, n as f64),
    };
    let mut row = ResultRow {
        setting: grid.setting,
        p,
        k: grid.k,
        j_size: grid.support_size,
        n,
        m,
        t: crate::meta::rescaled_sample_size(p, m, n as f64),
        rho,
        rep_index: unit.rep,
        recovered: 0,
        support_hamming: grid.support_size,
        err_inf: f64::NAN,
        iterations: 0,
        runtime_ms: 0,
        status: RowStatus::Ok,
        point: unit.point,
    };
    let start = Instant::now();
    let seed = replication_seed(grid.base_seed, grid.setting, &[p as u64, n as u64, m as u64], unit.rep);
    let outcome = (|| {
        let spec = grid.model_spec(p, seed);
        let (gt, tasks) = generate_tasks(&spec, m, n)?;
        let (support, err, iterations) = match grid.setting {
            Setting::ComparisonIndependent => {
                let (reports, union) = independent_solves(&tasks, grid.k, None, &grid.solver)?;
                (union, f64::NAN, reports.iter().map(|r| r.iterations).sum())
            }
            Setting::ComparisonMultitask => {
                let res = multitask_solve(&tasks, grid.k, None, &grid.solver)?;
                (res.union, f64::NAN, res.iterations)
            }
            _ => {
                let res = recover_support_union(&tasks, grid.k, None, &grid.solver)?;
                let e = err_inf(&res.report.h_hat, &gt.pi);
                (res.j_hat, e, res.report.iterations)
            }
        };
        Ok::<_, Error>((gt, support, err, iterations))
    })();
    match outcome {
        Ok((gt, support, err, iterations)) => {
            row.support_hamming = hamming(&support, &gt.support);
            row.recovered = u8::from(row.support_hamming == 0);
            row.err_inf = err;
            row.iterations = iterations;
            row.runtime_ms = elapsed_ms(grid, start);
            row
        }
        Err(e) => failure_row(row, e),
    }
}

/// Novel-task support drawn inside `gt.support`, leaving `zeros` of it out.
fn novel_support(gt: &GroundTruth, zeros: usize, seed: u64) -> Vec<usize> {
    let j = &gt.support;
    random_support(j.len(), j.len() - zeros, seed, &[])
        .into_iter()
        .map(|pos| j[pos])
        .collect()
}

/// Every index outside `target` was set to zero and something was selected.
pub fn zeros_identified(estimate: &[usize], target: &[usize]) -> bool {
    !estimate.is_empty() && estimate.iter().all(|i| target.contains(i))
}

fn run_novel_rep(grid: &ExperimentGrid, rep: usize) -> Vec<ResultRow> {
    let p = grid.p_values[0];
    let j = grid.support_size;
    let m = tasks_for_rescaled_size(p, grid.aux_n, grid.aux_t);
    let seed = replication_seed(grid.base_seed, grid.setting, &[p as u64], rep);
    let start = Instant::now();

    // the union is recovered once per replication and shared by every novel design
    let aux = (|| {
        let spec = grid.model_spec(p, seed);
        let (gt, tasks) = generate_tasks(&spec, m, grid.aux_n)?;
        let res = recover_support_union(&tasks, grid.k, None, &grid.solver)?;
        Ok::<_, Error>((gt, res.j_hat, res.report.iterations))
    })();
    let aux_ms = elapsed_ms(grid, start);

    let mut rows = Vec::new();
    for (zi, &zeros) in grid.extra_zeros.iter().enumerate() {
        for (ti, &t) in grid.t_values.iter().enumerate() {
            let n = samples_for_novel_size(j, t);
            let row = ResultRow {
                setting: Setting::Novel,
                p,
                k: grid.novel_k,
                j_size: j - zeros,
                n,
                m,
                t,
                rho: default_novel_rho(j, n),
                rep_index: rep,
                recovered: 0,
                support_hamming: j - zeros,
                err_inf: f64::NAN,
                iterations: 0,
                runtime_ms: 0,
                status: RowStatus::Ok,
                point: zi * grid.t_values.len() + ti,
            };
            let (gt, j_hat, aux_iters) = match &aux {
                Ok(a) => a,
                Err(e) => {
                    rows.push(failure_row(row, Error::InvalidData(format!("union recovery failed: {e}"))));
                    continue;
                }
            };
            let start = Instant::now();
            let sub_seed = derive_key(seed, Purpose::NovelCov, &[zeros as u64, t.to_bits()]);
            let outcome = (|| {
                let target = novel_support(gt, zeros, sub_seed);
                let spec = ModelSpec {
                    p,
                    k: grid.novel_k,
                    support: target.clone(),
                    spike: grid.spike,
                    noise: NoiseSpec::noiseless(),
                    distribution: grid.setting.distribution(),
                    mixture_mode: grid.mixture_mode,
                    center_delta: grid.center_delta,
                    seed: sub_seed,
                };
                let novel_gt = make_base_cov(&spec)?;
                let mut rng = stream(sub_seed, Purpose::NovelSamples, &[]);
                let data = sample_task_data(&novel_gt.sigma, n, &spec, &mut rng, 0)?;
                let res = recover_novel_support(&data, j_hat, grid.novel_k, None, &grid.solver)?;
                Ok::<_, Error>((target, novel_gt, res))
            })();
            rows.push(match outcome {
                Ok((target, novel_gt, res)) => {
                    let mut row = row;
                    row.rho = res.rho_used;
                    row.support_hamming = hamming(&res.j_novel, &target);
                    row.recovered = u8::from(zeros_identified(&res.j_novel, &target));
                    row.err_inf = err_inf(&res.embedded_h, &novel_gt.pi);
                    row.iterations = aux_iters + res.report.iterations;
                    row.runtime_ms = if grid.record_timing { aux_ms + elapsed_ms(grid, start) } else { 0 };
                    row
                }
                Err(e) => failure_row(row, e),
            });
        }
    }
    rows
}

/// Aggregate over the replications of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub setting: Setting,
    pub p: usize,
    pub k: usize,
    pub j_size: usize,
    pub n: usize,
    pub m: usize,
    pub t: f64,
    pub reps: usize,
    pub recovered_mean: f64,
    /// `P(1−P)/reps`, the binomial variance of the mean.
    pub paper_dispersion: f64,
    /// `sqrt(paper_dispersion)`.
    pub std_err: f64,
    pub ci95: f64,
    /// Mean over finite values; NaN when there are none.
    pub err_inf_mean: f64,
}

pub const SUMMARY_HEADER: &str =
    "setting,p,k,J_size,n,m,T,reps,recovered_mean,paper_dispersion,std_err,ci95,err_inf_mean";

impl SummaryRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:?},{},{:?},{:?},{:?},{:?},{:?}",
            self.setting,
            self.p,
            self.k,
            self.j_size,
            self.n,
            self.m,
            self.t,
            self.reps,
            self.recovered_mean,
            self.paper_dispersion,
            self.std_err,
            self.ci95,
            self.err_inf_mean
        )
    }
}

type GroupKey = (Setting, usize, usize, usize, usize, usize, u64);

fn group_key(r: &ResultRow) -> GroupKey {
    (r.setting, r.p, r.k, r.j_size, r.n, r.m, r.t.to_bits())
}

/// Groups rows by grid point; failed rows are left out, and groups left empty are skipped.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, (Vec<&ResultRow>, usize)> = BTreeMap::new();
    for r in rows {
        let entry = groups.entry(group_key(r)).or_default();
        if !r.failed() {
            entry.0.push(r);
        }
        entry.1 += 1;
    }
    let mut out = Vec::new();
    for (key, (members, total)) in groups {
        if members.is_empty() {
            warn!("grid point {key:?}: all {total} replications failed, group omitted");
            continue;
        }
        let first = members[0];
        let reps = members.len();
        let mean = members.iter().map(|r| f64::from(r.recovered)).sum::<f64>() / reps as f64;
        let disp = mean * (1.0 - mean) / reps as f64;
        let finite: Vec<f64> = members.iter().map(|r| r.err_inf).filter(|e| e.is_finite()).collect();
        let err_mean = if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        out.push(SummaryRow {
            setting: first.setting,
            p: first.p,
            k: first.k,
            j_size: first.j_size,
            n: first.n,
            m: first.m,
            t: first.t,
            reps,
            recovered_mean: mean,
            paper_dispersion: disp,
            std_err: disp.sqrt(),
            ci95: 1.96 * disp.sqrt(),
            err_inf_mean: err_mean,
        });
    }
    out
}

/// Curve name and x value of a summary row for the `.dat` files.
fn curve_of(s: &SummaryRow) -> (String, f64) {
    match s.setting {
        Setting::Novel => (format!("novel_J{}", s.j_size), s.t),
        st if st.is_comparison() => (st.to_string(), s.m as f64),
        st => (format!("{st}_p{}_n{}", s.p, s.n), s.t),
    }
}

/// Writes `results.csv`, `summary.csv`, one `.dat` per curve and `plot.gp`; returns the paths.
pub fn emit_results(rows: &[ResultRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::InvalidData("no result rows to write".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut results = String::from(RESULTS_HEADER);
    results.push('\n');
    for r in rows {
        results.push_str(&r.to_csv());
        results.push('\n');
    }
    let path = out_dir.join("results.csv");
    fs::write(&path, results)?;
    written.push(path);

    let summary = summarize(rows);
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for s in &summary {
        text.push_str(&s.to_csv());
        text.push('\n');
    }
    let path = out_dir.join("summary.csv");
    fs::write(&path, text)?;
    written.push(path);

    let mut curves: BTreeMap<String, Vec<(f64, &SummaryRow)>> = BTreeMap::new();
    for s in &summary {
        let (name, x) = curve_of(s);
        curves.entry(name).or_default().push((x, s));
    }
    let mut plot = String::from("# gnuplot script: gnuplot plot.gp\nset terminal pngcairo size 800,500\n");
    for (name, mut pts) in curves {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut dat = String::from("# x recovered_mean std_err err_inf_mean\n");
        for (x, s) in pts {
            dat.push_str(&format!("{x:?} {:?} {:?} {:?}\n", s.recovered_mean, s.std_err, s.err_inf_mean));
        }
        let path = out_dir.join(format!("{name}.dat"));
        fs::write(&path, dat)?;
        written.push(path);
        plot.push_str(&format!(
            "set output '{name}.png'\nset yrange [0:1.05]\nplot '{name}.dat' using 1:2:3 with yerrorlines title '{name}'\n"
        ));
    }
    let path = out_dir.join("plot.gp");
    fs::write(&path, plot)?;
    written.push(path);
    Ok(written)
}

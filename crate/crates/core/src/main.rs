use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use meta_spca::estimate::sample_cov;
use meta_spca::experiment::{emit_results, parse_config, run_experiment, ExperimentGrid, ResultRow, Setting};
use meta_spca::fantope::{solve_penalized, SolveReport, SolverConfig};
use meta_spca::genmodel::{generate_tasks, EigenNoise, ModelSpec, SampleDistribution, TaskData};
use meta_spca::matcore::{read_matrix_csv, read_sym_csv, write_matrix_csv, SymMat};
use meta_spca::meta::recover_support_union;
use meta_spca::novel::recover_novel_support;
use meta_spca::theory::{compute_thresholds, empirical_eta, empirical_sigma, epsilon_for_bound, tail_bound_check, ModelConstants};
use meta_spca::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "meta-spca", version, about = "Support-union recovery for sparse PCA across related tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Base seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for replication grids (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// key=value config file applied before command-line overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// prox_iterate or threshold.
    #[arg(long)]
    support_source: Option<String>,
    #[arg(long)]
    support_eps: Option<f64>,
}

impl SolverArgs {
    fn config(&self, base: SolverConfig) -> Result<SolverConfig> {
        let mut c = base;
        if let Some(t) = self.tau {
            c.tau = t;
        }
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        if let Some(t) = self.tol {
            c.primal_tol = t;
            c.dual_tol = t;
        }
        if let Some(s) = &self.support_source {
            c.support_source = s.parse()?;
        }
        if let Some(e) = self.support_eps {
            c.support_eps = e;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample auxiliary tasks from the generative model.
    Gen {
        #[arg(long, default_value_t = 50)]
        p: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        support_size: usize,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// gaussian, uniform_mixture or exponential_mixture.
        #[arg(long, default_value = "gaussian")]
        distribution: String,
        /// none, diagonal or off_diagonal.
        #[arg(long)]
        eigen_noise: Option<String>,
        /// Use J = {0, …, s−1} instead of a random support.
        #[arg(long)]
        fixed_support: bool,
    },
    /// Penalized Fantope solve on one covariance or one task.
    Solve {
        /// Symmetric covariance CSV.
        #[arg(long, conflicts_with = "task")]
        cov: Option<PathBuf>,
        /// Sample CSV (rows are observations).
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        rho: f64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Pool tasks and recover the support union.
    Meta {
        /// Task CSV files; `--task-dir` picks up every task_*.csv instead.
        #[arg(long, num_args = 1..)]
        tasks: Vec<PathBuf>,
        #[arg(long)]
        task_dir: Option<PathBuf>,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        rho: Option<f64>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Recover a new task's support inside a known union.
    Novel {
        #[arg(long)]
        task: PathBuf,
        /// File with 0-based indices separated by whitespace or commas.
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        rho: Option<f64>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Meta-learning against independent and multi-task baselines on one grid.
    Compare {
        #[arg(long)]
        fast: bool,
        #[arg(long)]
        reps: Option<usize>,
        /// Also record wall time per replication (results then differ run to run).
        #[arg(long)]
        timing: bool,
    },
    /// Run a replication grid and write results, summary and plot data.
    Experiment {
        #[arg(long, default_value = "gaussian")]
        setting: String,
        /// Reduced grid (p ≤ 30, at most 50 reps).
        #[arg(long)]
        fast: bool,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        timing: bool,
    },
    /// Monte-Carlo check of the sample-covariance tail bound plus threshold diagnostics.
    CheckBounds {
        #[arg(long, default_value_t = 3)]
        p: usize,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        /// Target bound values; ε is solved for each.
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5")]
        bounds: Vec<f64>,
        /// Explicit ε values, used instead of `--bounds`.
        #[arg(long, value_delimiter = ',')]
        epsilons: Vec<f64>,
        /// Sub-Gaussian parameter; defaults to the square root of the largest task variance.
        #[arg(long)]
        sigma: Option<f64>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 3,
        Error::SolverDiverged { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_config(global: &Global) -> Result<Vec<(String, String)>> {
    match &global.config {
        Some(path) => parse_config(&fs::read_to_string(path)?),
        None => Ok(Vec::new()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn join(idx: &[usize]) -> String {
    idx.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn read_support(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut idx = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::InvalidData(format!("bad support index {s:?}")))
        })
        .collect::<Result<Vec<usize>>>()?;
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

fn read_task(path: &Path, id: usize) -> Result<TaskData> {
    TaskData::new(read_matrix_csv(path)?, id)
}

fn report_summary(report: &SolveReport, support: &[usize], rho: f64, extra: &[(&str, String)]) -> String {
    let mut lines: Vec<String> = extra.iter().map(|(k, v)| format!("{k}={v}")).collect();
    lines.extend([
        format!("rho={rho:?}"),
        format!("support={}", join(support)),
        format!("objective={:?}", report.objective),
        format!("iterations={}", report.iterations),
        format!("converged={}", report.converged),
        format!("primal_residual={:?}", report.primal_residual),
        format!("dual_residual={:?}", report.dual_residual),
        format!("tau_final={:?}", report.tau),
    ]);
    lines.join("\n") + "\n"
}

fn write_solution(out: &Path, report: &SolveReport, support: &[usize], summary: &str) -> Result<()> {
    fs::create_dir_all(out)?;
    write_matrix_csv(out.join("H_hat.csv"), report.h_hat.matrix())?;
    write(&out.join("support.txt"), &(join(support) + "\n"))?;
    write(&out.join("summary.txt"), summary)?;
    print!("{summary}");
    Ok(())
}

fn grid_with(global: &Global, setting: Setting, fast: bool, reps: Option<usize>, timing: bool) -> Result<ExperimentGrid> {
    let mut grid = ExperimentGrid::preset(setting, fast);
    grid.base_seed = global.seed;
    grid.apply(&read_config(global)?)?;
    if let Some(r) = reps {
        grid.reps = r;
    }
    grid.record_timing |= timing;
    grid.validate()?;
    Ok(grid)
}

/// Exit status after a grid: 4 when any replication failed.
fn grid_status(rows: &[ResultRow]) -> u8 {
    let failed = rows.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        warn!("{failed} of {} replications failed", rows.len());
        4
    } else {
        0
    }
}

fn run(cli: Cli) -> Result<u8> {
    let g = &cli.global;
    match cli.command {
        Command::Gen {
            p,
            k,
            support_size,
            m,
            n,
            distribution,
            eigen_noise,
            fixed_support,
        } => {
            let mut spec = ModelSpec::new(p, k, support_size, g.seed);
            if !fixed_support {
                spec = spec.with_random_support();
            }
            spec.distribution = distribution.parse::<SampleDistribution>()?;
            if let Some(e) = eigen_noise {
                spec.noise.eigen_noise = e.parse::<EigenNoise>()?;
            }
            let (gt, tasks) = generate_tasks(&spec, m, n)?;
            fs::create_dir_all(&g.out)?;
            for t in &tasks {
                write_matrix_csv(g.out.join(format!("task_{}.csv", t.task_id)), &t.samples)?;
            }
            write_matrix_csv(g.out.join("truth.csv"), gt.sigma.matrix())?;
            write_matrix_csv(g.out.join("pi.csv"), gt.pi.matrix())?;
            write(&g.out.join("support.txt"), &(join(&gt.support) + "\n"))?;
            println!("wrote {m} tasks to {}", g.out.display());
            println!("support={}", join(&gt.support));
            Ok(0)
        }
        Command::Solve {
            cov,
            task,
            k,
            rho,
            solver,
        } => {
            let s: SymMat = match (cov, task) {
                (Some(c), _) => read_sym_csv(c)?,
                (None, Some(t)) => sample_cov(&read_task(&t, 0)?)?,
                (None, None) => return Err(Error::Config("solve needs --cov or --task".into())),
            };
            let cfg = solver.config(SolverConfig::with_rho(rho))?;
            let report = solve_penalized(&s, k, &cfg)?;
            let summary = report_summary(&report, &report.support, rho, &[("k", k.to_string())]);
            write_solution(&g.out, &report, &report.support, &summary)?;
            Ok(0)
        }
        Command::Meta {
            tasks,
            task_dir,
            k,
            rho,
            solver,
        } => {
            let mut paths = tasks;
            if let Some(dir) = task_dir {
                let mut found: Vec<(usize, PathBuf)> = fs::read_dir(&dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter_map(|p| {
                        let stem = p.file_stem()?.to_str()?;
                        let id = stem.strip_prefix("task_")?.parse().ok()?;
                        (p.extension()? == "csv").then_some((id, p))
                    })
                    .collect();
                found.sort();
                paths.extend(found.into_iter().map(|(_, p)| p));
            }
            if paths.is_empty() {
                return Err(Error::Config("meta needs --tasks or --task-dir".into()));
            }
            let data = paths
                .iter()
                .enumerate()
                .map(|(i, p)| read_task(p, i))
                .collect::<Result<Vec<_>>>()?;
            let cfg = solver.config(ExperimentGrid::experiment_solver())?;
            let res = recover_support_union(&data, k, rho, &cfg)?;
            let summary = report_summary(
                &res.report,
                &res.j_hat,
                res.rho_used,
                &[("k", k.to_string()), ("m", res.pooled.m.to_string()), ("T", format!("{:?}", res.t))],
            );
            write_solution(&g.out, &res.report, &res.j_hat, &summary)?;
            Ok(if res.report.converged { 0 } else { 4 })
        }
        Command::Novel {
            task,
            support,
            k,
            rho,
            solver,
        } => {
            let data = read_task(&task, 0)?;
            let union = read_support(&support)?;
            let cfg = solver.config(ExperimentGrid::experiment_solver())?;
            let res = recover_novel_support(&data, &union, k, rho, &cfg)?;
            let summary = report_summary(
                &res.report,
                &res.j_novel,
                res.rho_used,
                &[("k", k.to_string()), ("union", join(&union)), ("n", data.n().to_string())],
            );
            fs::create_dir_all(&g.out)?;
            write_matrix_csv(g.out.join("H_embedded.csv"), res.embedded_h.matrix())?;
            write_solution(&g.out, &res.report, &res.j_novel, &summary)?;
            Ok(if res.report.converged { 0 } else { 4 })
        }
        Command::Compare { fast, reps, timing } => {
            let mut rows = Vec::new();
            for setting in [
                Setting::ComparisonMeta,
                Setting::ComparisonIndependent,
                Setting::ComparisonMultitask,
            ] {
                let grid = grid_with(g, setting, fast, reps, timing)?;
                info!("running {setting}: {} rows", grid.row_count());
                rows.extend(run_experiment(&grid, g.threads)?);
            }
            emit_results(&rows, &g.out)?;
            print!("{}", fs::read_to_string(g.out.join("summary.csv"))?);
            Ok(grid_status(&rows))
        }
        Command::Experiment {
            setting,
            fast,
            reps,
            timing,
        } => {
            let grid = grid_with(g, setting.parse()?, fast, reps, timing)?;
            info!("running {}: {} rows", grid.setting, grid.row_count());
            let rows = run_experiment(&grid, g.threads)?;
            emit_results(&rows, &g.out)?;
            print!("{}", fs::read_to_string(g.out.join("summary.csv"))?);
            Ok(grid_status(&rows))
        }
        Command::CheckBounds {
            p,
            m,
            n,
            reps,
            bounds,
            epsilons,
            sigma,
        } => {
            let mut grid = ExperimentGrid::preset(Setting::Gaussian, false);
            grid.p_values = vec![p];
            grid.k = 1;
            grid.support_size = 1.min(p);
            grid.apply(&read_config(g)?)?;
            let spec = ModelSpec {
                p,
                k: grid.k,
                support: (0..grid.support_size).collect(),
                spike: grid.spike,
                noise: grid.noise.clone(),
                ..ModelSpec::new(p, grid.k, grid.support_size, g.seed)
            };
            spec.validate()?;
            let eta = empirical_eta(&spec, m, reps)?;
            let sigma = match sigma {
                Some(s) => s,
                None => empirical_sigma(&spec, m, reps)?,
            };
            let eps: Vec<f64> = if epsilons.is_empty() {
                bounds
                    .iter()
                    .map(|&b| epsilon_for_bound(p, n, m, b, sigma, eta))
                    .collect()
            } else {
                epsilons
            };
            let rows = tail_bound_check(&spec, m, n, &eps, reps, sigma)?;
            let mut csv = String::from("epsilon,freq,bound,vacuous_flag,out_of_range,reps\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{:?},{:?},{:?},{},{},{}\n",
                    r.epsilon,
                    r.freq,
                    r.bound,
                    u8::from(r.vacuous),
                    u8::from(r.out_of_range),
                    r.reps
                ));
            }
            fs::create_dir_all(&g.out)?;
            write(&g.out.join("tail_bound.csv"), &csv)?;
            let gt = meta_spca::genmodel::make_base_cov(&spec)?;
            let report = compute_thresholds(
                &gt.sigma,
                &gt.support,
                spec.k,
                Some(ModelConstants::for_spec(&spec)),
                sigma,
                m,
                n,
            )?;
            write(&g.out.join("theory.txt"), &report.to_key_values())?;
            print!("eta={eta:?}\nsigma={sigma:?}\n{csv}");
            Ok(0)
        }
    }
}

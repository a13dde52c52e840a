//! Per-task second-moment matrices and the pooled estimator.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::genmodel::TaskData;
use crate::matcore::SymMat;

/// Weighted average of per-task sample covariances.
#[derive(Debug, Clone)]
pub struct PooledCov {
    pub s: SymMat,
    pub m: usize,
    pub n_per_task: Vec<usize>,
    /// `T_i = n_i / Σ n_j`.
    pub weights: Vec<f64>,
}

impl PooledCov {
    /// Harmonic mean of the per-task sample counts.
    pub fn harmonic_n(&self) -> f64 {
        let m = self.n_per_task.len() as f64;
        m / self.n_per_task.iter().map(|&n| 1.0 / n as f64).sum::<f64>()
    }
}

fn second_moment(x: &DMatrix<f64>, center: bool) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut xs = x.clone();
    if center {
        for mut c in xs.column_iter_mut() {
            let mean = c.mean();
            c.add_scalar_mut(-mean);
        }
    }
    let mut out = xs.transpose() * &xs;
    out /= n;
    out
}

/// `(1/n) Σ x_j x_jᵀ`, no mean subtraction.
pub fn sample_cov(data: &TaskData) -> Result<SymMat> {
    sample_cov_with(data, false)
}

/// Sample covariance, optionally centered at the task mean.
pub fn sample_cov_with(data: &TaskData, center: bool) -> Result<SymMat> {
    if data.samples.nrows() == 0 || data.samples.ncols() == 0 {
        return Err(Error::InvalidData("empty task data".into()));
    }
    SymMat::from_computed(second_moment(&data.samples, center))
}

/// `S = Σ T_i S⁽ⁱ⁾` with weights proportional to the sample counts.
pub fn pooled_cov(tasks: &[TaskData]) -> Result<PooledCov> {
    pooled_cov_with(tasks, false)
}

pub fn pooled_cov_with(tasks: &[TaskData], center: bool) -> Result<PooledCov> {
    let first = tasks
        .first()
        .ok_or_else(|| Error::InvalidData("no tasks".into()))?;
    let p = first.p();
    if let Some(bad) = tasks.iter().find(|t| t.p() != p) {
        return Err(Error::InvalidData(format!(
            "task {} has dimension {} but task {} has {p}",
            bad.task_id,
            bad.p(),
            first.task_id
        )));
    }
    let n_per_task: Vec<usize> = tasks.iter().map(TaskData::n).collect();
    let total: usize = n_per_task.iter().sum();
    if total == 0 || n_per_task.contains(&0) {
        return Err(Error::InvalidData("task with no samples".into()));
    }
    let weights: Vec<f64> = n_per_task.iter().map(|&n| n as f64 / total as f64).collect();

    let mut s = DMatrix::zeros(p, p);
    for (t, w) in tasks.iter().zip(&weights) {
        s += second_moment(&t.samples, center) * *w;
    }
    Ok(PooledCov {
        s: SymMat::from_computed(s)?,
        m: tasks.len(),
        n_per_task,
        weights,
    })
}

/// Rows and columns of `a` restricted to `idx` (ascending order expected).
pub fn submatrix(a: &SymMat, idx: &[usize]) -> Result<SymMat> {
    if idx.is_empty() {
        return Err(Error::InvalidData("empty index set".into()));
    }
    let p = a.dim();
    if let Some(&bad) = idx.iter().find(|&&i| i >= p) {
        return Err(Error::InvalidIndex { index: bad, dim: p });
    }
    let m = a.matrix();
    SymMat::from_computed(DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])]))
}

/// Columns `idx` of a sample matrix.
pub fn select_columns(x: &DMatrix<f64>, idx: &[usize]) -> Result<DMatrix<f64>> {
    if let Some(&bad) = idx.iter().find(|&&i| i >= x.ncols()) {
        return Err(Error::InvalidIndex {
            index: bad,
            dim: x.ncols(),
        });
    }
    Ok(x.select_columns(idx))
}

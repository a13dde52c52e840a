//! Support recovery for a new task inside a known support union `J`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimate::{sample_cov, submatrix};
use crate::fantope::{solve_penalized, SolveReport, SolverConfig};
use crate::genmodel::TaskData;
use crate::matcore::SymMat;

/// Order-preserving correspondence between indices of `0..p` and positions in `J`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    union: Vec<usize>,
    restricted: Vec<Option<usize>>,
}

impl IndexMap {
    /// `union` must be strictly ascending and inside `0..p`.
    pub fn new(union: &[usize], p: usize) -> Result<Self> {
        if !union.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidSpec("support union must be strictly ascending".into()));
        }
        let mut restricted = vec![None; p];
        for (pos, &i) in union.iter().enumerate() {
            if i >= p {
                return Err(Error::InvalidIndex { index: i, dim: p });
            }
            restricted[i] = Some(pos);
        }
        Ok(Self {
            union: union.to_vec(),
            restricted,
        })
    }

    pub fn len(&self) -> usize {
        self.union.len()
    }

    pub fn is_empty(&self) -> bool {
        self.union.is_empty()
    }

    pub fn union(&self) -> &[usize] {
        &self.union
    }

    pub fn to_restricted(&self, original: usize) -> Option<usize> {
        self.restricted.get(original).copied().flatten()
    }

    pub fn to_original(&self, restricted: usize) -> Option<usize> {
        self.union.get(restricted).copied()
    }

    /// Zero-padded `p×p` matrix whose `J×J` block is `block`.
    pub fn embed(&self, block: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.restricted.len();
        let mut out = DMatrix::zeros(p, p);
        for (r, &i) in self.union.iter().enumerate() {
            for (c, &j) in self.union.iter().enumerate() {
                out[(i, j)] = block[(r, c)];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct NovelResult {
    /// Recovered support in original indices.
    pub j_novel: Vec<usize>,
    /// Solve on the `|J|×|J|` problem.
    pub report: SolveReport,
    /// `Ĥ` zero-padded back to `p×p`.
    pub embedded_h: SymMat,
    pub rho_used: f64,
}

/// Penalty `sqrt(ln(|J|+1) / n)`.
pub fn default_novel_rho(union_size: usize, n: usize) -> f64 {
    (((union_size + 1) as f64).ln() / n as f64).sqrt()
}

/// `T = n / ln(|J|+1)`.
pub fn novel_rescaled_size(union_size: usize, n: usize) -> f64 {
    n as f64 / ((union_size + 1) as f64).ln()
}

/// Sample count reaching rescaled size `t`, at least 1.
pub fn samples_for_novel_size(union_size: usize, t: f64) -> usize {
    ((t * ((union_size + 1) as f64).ln()).round() as usize).max(1)
}

/// Solves the penalized problem restricted to `union × union` and maps the support back.
pub fn recover_novel_support(
    data: &TaskData,
    union: &[usize],
    k: usize,
    rho: Option<f64>,
    config: &SolverConfig,
) -> Result<NovelResult> {
    if union.len() <= k {
        return Err(Error::InvalidSpec(format!(
            "support union of size {} leaves no room for sparsity at k = {k}",
            union.len()
        )));
    }
    let map = IndexMap::new(union, data.p())?;
    let s = sample_cov(data)?;
    let s_j = submatrix(&s, map.union())?;
    let rho_used = rho.unwrap_or_else(|| default_novel_rho(map.len(), data.n()));
    let cfg = SolverConfig {
        rho: rho_used,
        ..config.clone()
    };
    let report = solve_penalized(&s_j, k, &cfg)?;
    let j_novel = report
        .support
        .iter()
        .map(|&r| map.to_original(r).expect("restricted index inside union"))
        .collect();
    let embedded_h = SymMat::from_computed(map.embed(report.h_hat.matrix()))?;
    Ok(NovelResult {
        j_novel,
        report,
        embedded_h,
        rho_used,
    })
}

//! Synthetic ground truth, per-task covariances and task samples.
//!
//! Task covariances follow `Σ⁽ⁱ⁾ = R⁽ⁱ⁾ U (Λ + D⁽ⁱ⁾) Uᵀ R⁽ⁱ⁾ᵀ` where
//! `R⁽ⁱ⁾ = I + A⁽ⁱ⁾/p²` with `A⁽ⁱ⁾` i.i.d. Uniform(0,1) and `D⁽ⁱ⁾` a random
//! perturbation of the eigenvalue matrix. The leading `k` columns of `U` are
//! supported on `J`, so the PC matrix `Π = U_k U_kᵀ` has support `J`.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::matcore::{eig_sym, SymMat, TOL};
use crate::rng::{stream, Purpose, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleDistribution {
    Gaussian,
    /// Fair-coin mixture of `N(0, Σ)` and a Uniform(0,1)ᵖ vector.
    UniformMixture,
    /// Fair-coin mixture of `N(0, Σ)` and an Exponential(1)ᵖ vector.
    ExponentialMixture,
}

/// How the `0.5·N + 0.5·Δ` recipe is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureMode {
    /// Each sample is the Gaussian draw or Δ with probability 1/2.
    Mixture,
    /// Each sample is `0.5·g + 0.5·Δ`.
    Sum,
}

/// Layout of the eigenvalue perturbation `D⁽ⁱ⁾`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenNoise {
    None,
    /// Strict-lower entries drawn i.i.d. and mirrored, zero diagonal.
    OffDiagonal,
    /// Independent draws on the diagonal only.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Multiply by `R⁽ⁱ⁾ = I + A/divisor`; disabled means `R⁽ⁱ⁾ = I`.
    pub rotation: bool,
    /// Divisor for the rotation noise; `None` means `p²`.
    pub rotation_divisor: Option<f64>,
    pub eigen_noise: EigenNoise,
    /// Draw `D⁽ⁱ⁾` entries from Uniform(−0.5, 0.5) instead of Uniform(0, 1).
    pub zero_mean_d: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            rotation: true,
            rotation_divisor: None,
            eigen_noise: EigenNoise::Diagonal,
            zero_mean_d: false,
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            rotation: false,
            rotation_divisor: None,
            eigen_noise: EigenNoise::None,
            zero_mean_d: false,
        }
    }
}

/// Parameters of the generative model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub p: usize,
    pub k: usize,
    /// Support of the PC matrix, ascending, 0-based.
    pub support: Vec<usize>,
    /// Added to the first `k` eigenvalues.
    pub spike: f64,
    pub noise: NoiseSpec,
    pub distribution: SampleDistribution,
    pub mixture_mode: MixtureMode,
    /// Subtract the mean of Δ (1/2 or 1) so mixture samples stay mean zero.
    pub center_delta: bool,
    pub seed: u64,
}

impl ModelSpec {
    /// Model with defaults for everything but the shape, using `J = {0, …, s−1}`.
    pub fn new(p: usize, k: usize, support_size: usize, seed: u64) -> Self {
        Self {
            p,
            k,
            support: (0..support_size).collect(),
            spike: 500.0,
            noise: NoiseSpec::default(),
            distribution: SampleDistribution::Gaussian,
            mixture_mode: MixtureMode::Mixture,
            center_delta: true,
            seed,
        }
    }

    /// Replaces the support by a seeded uniformly random subset of the same size.
    pub fn with_random_support(mut self) -> Self {
        self.support = random_support(self.p, self.support.len(), self.seed, &[]);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.support.len();
        if self.k == 0 {
            return Err(Error::InvalidSpec("k must be positive".into()));
        }
        if s < self.k {
            return Err(Error::InvalidSpec(format!(
                "support size {s} must be at least k = {}",
                self.k
            )));
        }
        if s > self.p {
            return Err(Error::InvalidSpec(format!(
                "support size {s} exceeds p = {}",
                self.p
            )));
        }
        if !self.support.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidSpec("support must be strictly ascending".into()));
        }
        if let Some(&last) = self.support.last() {
            if last >= self.p {
                return Err(Error::InvalidIndex {
                    index: last,
                    dim: self.p,
                });
            }
        }
        if !(self.spike > 0.0 && self.spike.is_finite()) {
            return Err(Error::InvalidSpec("spike must be positive".into()));
        }
        Ok(())
    }
}

/// Uniformly random `size`-subset of `0..p`, ascending.
pub fn random_support(p: usize, size: usize, seed: u64, ids: &[u64]) -> Vec<usize> {
    let mut rng = stream(seed, Purpose::Support, ids);
    let mut idx = sample(&mut rng, p, size).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub sigma: SymMat,
    /// Full orthonormal eigenbasis; the first `k` columns span the PC subspace.
    pub u: DMatrix<f64>,
    /// Eigenvalues, descending.
    pub lambda: Vec<f64>,
    pub pi: SymMat,
    pub support: Vec<usize>,
    pub k: usize,
}

impl GroundTruth {
    pub fn lambda_diff(&self) -> f64 {
        self.lambda[self.k - 1] - self.lambda.get(self.k).copied().unwrap_or(0.0)
    }

    /// Leading `p×k` eigenvector block.
    pub fn u_k(&self) -> DMatrix<f64> {
        self.u.columns(0, self.k).into_owned()
    }
}

#[derive(Debug, Clone)]
pub struct TaskData {
    /// `n×p`, one observation per row.
    pub samples: DMatrix<f64>,
    pub true_cov: Option<SymMat>,
    pub task_id: usize,
}

impl TaskData {
    pub fn new(samples: DMatrix<f64>, task_id: usize) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::InvalidData("task has no samples".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidData("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            true_cov: None,
            task_id,
        })
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn p(&self) -> usize {
        self.samples.ncols()
    }
}

fn orthonormalize(mut z: DMatrix<f64>) -> DMatrix<f64> {
    // modified Gram-Schmidt with one re-orthogonalization pass
    let cols = z.ncols();
    for j in 0..cols {
        for _ in 0..2 {
            for i in 0..j {
                let proj = z.column(i).dot(&z.column(j));
                let qi = z.column(i).into_owned();
                z.column_mut(j).axpy(-proj, &qi, 1.0);
            }
        }
        let nrm = z.column(j).norm();
        z.column_mut(j).unscale_mut(nrm);
    }
    z
}

fn gaussian_matrix(rng: &mut StreamRng, r: usize, c: usize) -> DMatrix<f64> {
    // column-major fill keeps the draw order independent of nalgebra internals
    let mut m = DMatrix::zeros(r, c);
    for j in 0..c {
        for i in 0..r {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Σ, its eigenbasis and the PC matrix Π for `spec`.
pub fn make_base_cov(spec: &ModelSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let (p, k, s) = (spec.p, spec.k, spec.support.len());
    let mut rng = stream(spec.seed, Purpose::BaseCov, &[]);

    let q = orthonormalize(gaussian_matrix(&mut rng, s, k));
    let mut u = DMatrix::zeros(p, p);
    for (r, &row) in spec.support.iter().enumerate() {
        for c in 0..k {
            u[(row, c)] = q[(r, c)];
        }
    }
    if p > k {
        let mut z = DMatrix::zeros(p, p);
        z.columns_mut(0, k).copy_from(&u.columns(0, k));
        z.columns_mut(k, p - k)
            .copy_from(&gaussian_matrix(&mut rng, p, p - k));
        let full = orthonormalize(z);
        u.columns_mut(k, p - k).copy_from(&full.columns(k, p - k));
    }

    let mut lambda: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
    lambda.sort_by(|a, b| b.total_cmp(a));
    for l in lambda.iter_mut().take(k) {
        *l += spec.spike;
    }

    let sigma = SymMat::from_computed(scaled_outer(&u, &lambda))?;
    let uk = u.columns(0, k);
    let pi = SymMat::from_computed(uk * uk.transpose())?;
    Ok(GroundTruth {
        sigma,
        u,
        lambda,
        pi,
        support: spec.support.clone(),
        k,
    })
}

/// Ground truth from an explicit eigenbasis and spectrum (no randomness).
pub fn ground_truth_from_parts(u: DMatrix<f64>, lambda: Vec<f64>, k: usize) -> Result<GroundTruth> {
    let p = u.nrows();
    if u.ncols() != p || lambda.len() != p || k == 0 || k > p {
        return Err(Error::InvalidSpec("inconsistent eigenbasis / spectrum shapes".into()));
    }
    let sigma = SymMat::from_computed(scaled_outer(&u, &lambda))?;
    let uk = u.columns(0, k);
    let pi = SymMat::from_computed(uk * uk.transpose())?;
    let support = pi.diag_support(1e-12);
    Ok(GroundTruth {
        sigma,
        u,
        lambda,
        pi,
        support,
        k,
    })
}

/// `U diag(λ) Uᵀ`.
fn scaled_outer(u: &DMatrix<f64>, lambda: &[f64]) -> DMatrix<f64> {
    let mut scaled = u.clone();
    for (c, &l) in lambda.iter().enumerate() {
        scaled.column_mut(c).scale_mut(l);
    }
    scaled * u.transpose()
}

/// The rotation and eigenvalue perturbations for one task, exposed for diagnostics.
#[derive(Debug, Clone)]
pub struct TaskPerturbation {
    pub r: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

pub fn task_perturbation(p: usize, noise: &NoiseSpec, seed: u64, task_id: usize) -> TaskPerturbation {
    let mut rng = stream(seed, Purpose::TaskCov, &[task_id as u64]);
    let mut r = DMatrix::identity(p, p);
    if noise.rotation {
        let div = noise.rotation_divisor.unwrap_or((p * p) as f64);
        for j in 0..p {
            for i in 0..p {
                r[(i, j)] += rng.random::<f64>() / div;
            }
        }
    }
    let shift = if noise.zero_mean_d { 0.5 } else { 0.0 };
    let mut d = DMatrix::zeros(p, p);
    match noise.eigen_noise {
        EigenNoise::None => {}
        EigenNoise::OffDiagonal => {
            for j in 0..p {
                for i in (j + 1)..p {
                    let v = rng.random::<f64>() - shift;
                    d[(i, j)] = v;
                    d[(j, i)] = v;
                }
            }
        }
        EigenNoise::Diagonal => {
            for i in 0..p {
                d[(i, i)] = rng.random::<f64>() - shift;
            }
        }
    }
    TaskPerturbation { r, d }
}

/// Covariance `Σ⁽ⁱ⁾` of auxiliary task `task_id`.
pub fn make_task_cov(gt: &GroundTruth, spec: &ModelSpec, task_id: usize) -> Result<SymMat> {
    let pert = task_perturbation(spec.p, &spec.noise, spec.seed, task_id);
    let mut inner = pert.d;
    for (i, &l) in gt.lambda.iter().enumerate() {
        inner[(i, i)] += l;
    }
    let ru = &pert.r * &gt.u;
    let cov = &ru * inner * ru.transpose();
    SymMat::from_computed(cov)
}

/// Draws `n` rows from the task distribution with covariance `cov`.
///
/// Small negative eigenvalues (above −1e-8) are clipped to zero with a warning.
pub fn sample_task_data(
    cov: &SymMat,
    n: usize,
    spec: &ModelSpec,
    rng: &mut StreamRng,
    task_id: usize,
) -> Result<TaskData> {
    if n == 0 {
        return Err(Error::InvalidData("n must be positive".into()));
    }
    let root = psd_sqrt(cov)?;
    let p = cov.dim();
    let delta_mean = match spec.distribution {
        SampleDistribution::Gaussian => 0.0,
        SampleDistribution::UniformMixture => 0.5,
        SampleDistribution::ExponentialMixture => 1.0,
    };
    let center = if spec.center_delta { delta_mean } else { 0.0 };

    let mut samples = DMatrix::zeros(n, p);
    let mut z = nalgebra::DVector::zeros(p);
    for row in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let g = &root * &z;
        let x = match spec.distribution {
            SampleDistribution::Gaussian => g,
            dist => {
                let coin = rng.random::<bool>();
                let delta = nalgebra::DVector::from_fn(p, |_, _| {
                    let raw: f64 = match dist {
                        SampleDistribution::UniformMixture => rng.random::<f64>(),
                        _ => rng.sample(Exp1),
                    };
                    raw - center
                });
                match spec.mixture_mode {
                    MixtureMode::Mixture => {
                        if coin {
                            g
                        } else {
                            delta
                        }
                    }
                    MixtureMode::Sum => 0.5 * g + 0.5 * delta,
                }
            }
        };
        samples.set_row(row, &x.transpose());
    }
    Ok(TaskData {
        samples,
        true_cov: Some(cov.clone()),
        task_id,
    })
}

/// Symmetric square root of a PSD matrix.
pub fn psd_sqrt(cov: &SymMat) -> Result<DMatrix<f64>> {
    let eig = eig_sym(cov)?;
    let min = *eig.values.last().unwrap();
    if min < -TOL.psd {
        return Err(Error::InvalidCovariance { min_eigenvalue: min });
    }
    if min < 0.0 {
        warn!("clipping negative eigenvalue {min:e} to zero");
    }
    Ok(eig.reconstruct_with(|v| v.max(0.0).sqrt()))
}

/// Ground truth plus `m` sampled auxiliary tasks with `n` rows each.
pub fn generate_tasks(spec: &ModelSpec, m: usize, n: usize) -> Result<(GroundTruth, Vec<TaskData>)> {
    let gt = make_base_cov(spec)?;
    let tasks = (0..m)
        .map(|i| {
            let cov = make_task_cov(&gt, spec, i)?;
            let mut rng = stream(spec.seed, Purpose::Samples, &[i as u64]);
            sample_task_data(&cov, n, spec, &mut rng, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((gt, tasks))
}

macro_rules! impl_enum_str {
    ($ty:ty, $( $variant:path => $name:literal ),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self { $( $variant => $name, )+ };
                f.write_str(s)
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $( $name => Ok($variant), )+
                    other => Err(Error::Config(format!("unknown value {other:?}"))),
                }
            }
        }
    };
}

impl_enum_str!(SampleDistribution,
    SampleDistribution::Gaussian => "gaussian",
    SampleDistribution::UniformMixture => "uniform_mixture",
    SampleDistribution::ExponentialMixture => "exponential_mixture",
);
impl_enum_str!(MixtureMode, MixtureMode::Mixture => "mixture", MixtureMode::Sum => "sum");
impl_enum_str!(EigenNoise,
    EigenNoise::None => "none",
    EigenNoise::OffDiagonal => "off_diagonal",
    EigenNoise::Diagonal => "diagonal",
);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::NormKind;

    #[test]
    fn main_experiment_shape() {
        let spec = ModelSpec::new(50, 5, 5, 1).with_random_support();
        let gt = make_base_cov(&spec).unwrap();
        assert!(gt.lambda[4] >= 500.0);
        assert!(gt.lambda[5] <= 1.0);
        assert!(gt.lambda_diff() >= 499.0);
        assert!((gt.pi.trace() - 5.0).abs() < 1e-9);
        assert_eq!(gt.pi.diag_support(1e-6), spec.support);
        let ortho = (gt.u.transpose() * &gt.u - DMatrix::<f64>::identity(50, 50)).norm();
        assert!(ortho < 1e-9 * 50.0);
    }

    #[test]
    fn uniform_setting_shape() {
        let spec = ModelSpec::new(80, 6, 6, 9).with_random_support();
        let gt = make_base_cov(&spec).unwrap();
        assert_eq!(gt.pi.diag_support(1e-6), spec.support);
        assert!(gt.lambda_diff() > 0.0);
    }

    #[test]
    fn fixed_spectrum_embedding() {
        let spec = ModelSpec {
            support: vec![0, 1],
            spike: 2.0,
            ..ModelSpec::new(3, 1, 2, 4)
        };
        let gt = make_base_cov(&spec).unwrap();
        // replace the random spectrum by a fixed one on the same basis
        let fixed = ground_truth_from_parts(gt.u.clone(), vec![2.5, 0.3, 0.1], 1).unwrap();
        for i in 0..3 {
            assert!(fixed.pi.get(2, i).abs() < 1e-15);
            assert!(fixed.pi.get(i, 2).abs() < 1e-15);
        }
        assert_eq!(fixed.support, vec![0, 1]);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = ModelSpec::new(10, 3, 2, 0);
        assert!(matches!(make_base_cov(&spec), Err(Error::InvalidSpec(_))));
        spec.support = vec![0, 4, 11];
        assert!(make_base_cov(&spec).is_err());
        spec.support = vec![4, 0, 1];
        assert!(make_base_cov(&spec).is_err());
    }

    #[test]
    fn noiseless_task_equals_base() {
        let mut spec = ModelSpec::new(8, 2, 3, 5);
        spec.noise = NoiseSpec::noiseless();
        let gt = make_base_cov(&spec).unwrap();
        let cov = make_task_cov(&gt, &spec, 3).unwrap();
        assert!((cov.matrix() - gt.sigma.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn task_cov_is_deterministic_and_psd() {
        for seed in 0..5 {
            let spec = ModelSpec::new(50, 5, 5, seed).with_random_support();
            let gt = make_base_cov(&spec).unwrap();
            let a = make_task_cov(&gt, &spec, 2).unwrap();
            let b = make_task_cov(&gt, &spec, 2).unwrap();
            assert_eq!(a, b);
            let min = *eig_sym(&a).unwrap().values.last().unwrap();
            assert!(min >= -1e-8, "min eigenvalue {min}");
        }
    }

    #[test]
    fn task_cov_deviation_obeys_product_bound() {
        // ‖RMRᵀ − M‖∞ ≤ ‖R−I‖₁∞ (2 + ‖R−I‖₁∞) ‖M‖∞ with M = U(Λ+D)Uᵀ,
        // plus ‖UDUᵀ‖∞ for the eigenvalue perturbation itself
        let spec = ModelSpec::new(50, 5, 5, 8).with_random_support();
        let gt = make_base_cov(&spec).unwrap();
        for task in 0..3 {
            let pert = task_perturbation(50, &spec.noise, spec.seed, task);
            let mut inner = pert.d.clone();
            for (i, &l) in gt.lambda.iter().enumerate() {
                inner[(i, i)] += l;
            }
            let m = &gt.u * inner * gt.u.transpose();
            let e = &pert.r - DMatrix::<f64>::identity(50, 50);
            let ce = crate::matcore::norm(&e, NormKind::OneInf)
                .unwrap()
                .max(crate::matcore::norm(&e.transpose(), NormKind::OneInf).unwrap());
            let udu = &gt.u * &pert.d * gt.u.transpose();
            let bound = ce * (2.0 + ce) * crate::matcore::norm(&m, NormKind::InfInf).unwrap()
                + crate::matcore::norm(&udu, NormKind::InfInf).unwrap();
            let cov = make_task_cov(&gt, &spec, task).unwrap();
            let dev = (cov.matrix() - gt.sigma.matrix()).abs().max();
            assert!(dev <= bound + 1e-9, "dev {dev} bound {bound}");
        }
    }

    #[test]
    fn gaussian_law_of_large_numbers() {
        let spec = ModelSpec::new(2, 1, 1, 0);
        let cov = SymMat::identity(2);
        let mut rng = stream(42, Purpose::Samples, &[0]);
        let data = sample_task_data(&cov, 100_000, &spec, &mut rng, 0).unwrap();
        let s = data.samples.transpose() * &data.samples / 100_000.0;
        assert!((s - DMatrix::<f64>::identity(2, 2)).abs().max() < 0.05);
    }

    #[test]
    fn sampling_small_and_degenerate() {
        let spec = ModelSpec::new(3, 1, 1, 0);
        let cov = SymMat::identity(3);
        let a = sample_task_data(&cov, 3, &spec, &mut stream(1, Purpose::Samples, &[0]), 0).unwrap();
        let b = sample_task_data(&cov, 3, &spec, &mut stream(1, Purpose::Samples, &[0]), 0).unwrap();
        assert_eq!(a.samples.nrows(), 3);
        assert_eq!(a.samples, b.samples);

        let zero = SymMat::zeros(3);
        let z = sample_task_data(&zero, 4, &spec, &mut stream(1, Purpose::Samples, &[0]), 0).unwrap();
        assert!(z.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_psd_rejected() {
        let spec = ModelSpec::new(2, 1, 1, 0);
        let bad = SymMat::from_diagonal(&[1.0, -0.1]).unwrap();
        let err = sample_task_data(&bad, 2, &spec, &mut stream(1, Purpose::Samples, &[0]), 0);
        assert!(matches!(err, Err(Error::InvalidCovariance { .. })));
    }

    #[test]
    fn mixture_samples_are_centered() {
        for dist in [SampleDistribution::UniformMixture, SampleDistribution::ExponentialMixture] {
            let spec = ModelSpec {
                distribution: dist,
                ..ModelSpec::new(3, 1, 1, 0)
            };
            let cov = SymMat::identity(3);
            let mut rng = stream(3, Purpose::Samples, &[0]);
            let data = sample_task_data(&cov, 40_000, &spec, &mut rng, 0).unwrap();
            for c in 0..3 {
                let mean = data.samples.column(c).mean();
                assert!(mean.abs() < 0.03, "{dist}: mean {mean}");
            }
        }
    }

    #[test]
    fn enum_names_round_trip() {
        for d in ["gaussian", "uniform_mixture", "exponential_mixture"] {
            assert_eq!(d.parse::<SampleDistribution>().unwrap().to_string(), d);
        }
        assert!("laplace".parse::<SampleDistribution>().is_err());
    }
}

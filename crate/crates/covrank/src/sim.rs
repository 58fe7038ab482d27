//! Data generators for the simulation study: finite-rank Karhunen-Loeve
//! processes with trigonometric or orthonormalized-spline eigenfunctions,
//! skewed Gaussian-mixture scores, spiked spectra, infinite-rank Gaussian
//! processes, and homo-/heteroskedastic measurement noise.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sym_eigendecomposition, CovMatrix, Grid, SampleMatrix};
use crate::seedstream::{self, tag};

/// Number of nodes of the default composite-trapezoid rule used for
/// orthonormalization in `L^2[0, 1]`.
pub const DEFAULT_QUADRATURE_POINTS: usize = 2001;

/// Default Gram-matrix tolerance for orthonormalized bases.
pub const DEFAULT_GRAM_TOL: f64 = 1e-6;

/// A quadrature rule on `[0, 1]` defining the working inner product.
#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    /// Composite trapezoid rule with `points` equispaced nodes.
    pub fn trapezoid(points: usize) -> Self {
        assert!(points >= 2);
        let h = 1.0 / (points - 1) as f64;
        let nodes = (0..points).map(|i| i as f64 * h).collect();
        let mut weights = vec![h; points];
        weights[0] = 0.5 * h;
        weights[points - 1] = 0.5 * h;
        Self { nodes, weights }
    }

    pub fn default_rule() -> Self {
        Self::trapezoid(DEFAULT_QUADRATURE_POINTS)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g.iter()))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }
}

/// A single closed-form basis function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EigenFunction {
    /// The constant function `1`.
    Const,
    /// `sqrt(2) sin(2 k pi t)`.
    Sin { k: u32 },
    /// `sqrt(2) cos(2 k pi t)`.
    Cos { k: u32 },
    /// Polynomial with coefficients in increasing degree order.
    Poly { coeffs: Vec<f64> },
}

impl EigenFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Const => 1.0,
            Self::Sin { k } => std::f64::consts::SQRT_2 * (2.0 * *k as f64 * std::f64::consts::PI * t).sin(),
            Self::Cos { k } => std::f64::consts::SQRT_2 * (2.0 * *k as f64 * std::f64::consts::PI * t).cos(),
            Self::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
        }
    }
}

/// A raw (not yet orthonormal) function system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawBasis {
    Functions { functions: Vec<EigenFunction> },
    /// Clamped B-splines of the given degree with interior knots in `(0, 1)`.
    Bspline { degree: usize, knots: Vec<f64> },
}

impl RawBasis {
    /// Number of raw functions in the system.
    pub fn len(&self) -> usize {
        match self {
            Self::Functions { functions } => functions.len(),
            Self::Bspline { degree, knots } => knots.len() + degree + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Evaluate every raw function at `t`.
    pub fn eval_all(&self, t: f64) -> Vec<f64> {
        match self {
            Self::Functions { functions } => functions.iter().map(|f| f.eval(t)).collect(),
            Self::Bspline { degree, knots } => bspline_all(*degree, knots, t),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Functions { functions } => {
                if functions.is_empty() {
                    return Err(Error::Invalid("empty function basis".into()));
                }
            }
            Self::Bspline { degree, knots } => {
                if *degree < 1 {
                    return Err(Error::Invalid("B-spline degree must be at least 1".into()));
                }
                for (i, &k) in knots.iter().enumerate() {
                    if !(0.0 < k && k < 1.0) {
                        return Err(Error::Invalid(format!("interior knot {k} outside (0, 1)")));
                    }
                    if i > 0 && knots[i - 1] >= k {
                        return Err(Error::Invalid("interior knots must be strictly increasing".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Full clamped knot vector for `degree` and interior knots.
fn clamped_knots(degree: usize, interior: &[f64]) -> Vec<f64> {
    let mut knots = Vec::with_capacity(2 * (degree + 1) + interior.len());
    knots.extend(std::iter::repeat(0.0).take(degree + 1));
    knots.extend_from_slice(interior);
    knots.extend(std::iter::repeat(1.0).take(degree + 1));
    knots
}

/// Evaluate all B-spline basis functions at `x` (Cox-de Boor recursion).
fn bspline_all(degree: usize, interior: &[f64], x: f64) -> Vec<f64> {
    let knots = clamped_knots(degree, interior);
    let n_basis = knots.len() - degree - 1;
    let mut out = vec![0.0; n_basis];

    // knot span containing x, right-clamped so that x = 1 lands in the last span
    let last_span = n_basis - 1;
    let span = if x >= knots[n_basis] {
        last_span
    } else {
        let mut s = degree;
        while s < last_span && x >= knots[s + 1] {
            s += 1;
        }
        s
    };

    // triangular table for the nonzero functions N_(span-degree) .. N_span
    let mut vals = vec![0.0; degree + 1];
    vals[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { vals[r] / denom };
            vals[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        vals[j] = saved;
    }
    for (r, v) in vals.into_iter().enumerate() {
        out[span - degree + r] = v;
    }
    out
}

/// An orthonormal function basis, stored as coefficients over a raw system.
/// Orthonormality holds in `L^2[0, 1]` under the quadrature rule used to
/// build it, to within `gram_tol`.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    raw: RawBasis,
    /// Row `i` holds the raw-basis coefficients of orthonormal function `i`.
    coeffs: DMatrix<f64>,
    gram_tol: f64,
}

impl EigenBasis {
    /// Number of orthonormal functions.
    pub fn len(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keep only the first `r` functions.
    pub fn truncate(mut self, r: usize) -> Result<Self> {
        if r > self.len() {
            return Err(Error::Invalid(format!(
                "cannot keep {r} functions from a basis of {}",
                self.len()
            )));
        }
        self.coeffs = self.coeffs.rows(0, r).into_owned();
        Ok(self)
    }

    /// Evaluate all functions at one point.
    pub fn eval_point(&self, t: f64) -> Vec<f64> {
        let raw = self.raw.eval_all(t);
        (0..self.len())
            .map(|i| {
                raw.iter()
                    .enumerate()
                    .map(|(j, v)| self.coeffs[(i, j)] * v)
                    .sum()
            })
            .collect()
    }

    /// Evaluate on a grid: `L x r` matrix with column `m = phi_m(t_.)`.
    pub fn evaluate(&self, grid: &Grid) -> DMatrix<f64> {
        let l = grid.len();
        let r = self.len();
        let mut phi = DMatrix::zeros(l, r);
        for (i, &t) in grid.nodes().iter().enumerate() {
            for (m, v) in self.eval_point(t).into_iter().enumerate() {
                phi[(i, m)] = v;
            }
        }
        phi
    }

    /// Largest deviation of the quadrature Gram matrix from the identity.
    pub fn gram_error(&self, quad: &Quadrature) -> f64 {
        let vals: Vec<Vec<f64>> = quad
            .nodes()
            .iter()
            .map(|&t| self.eval_point(t))
            .collect();
        let r = self.len();
        let col = |m: usize| -> Vec<f64> { vals.iter().map(|v| v[m]).collect() };
        let cols: Vec<Vec<f64>> = (0..r).map(col).collect();
        let mut worst = 0.0f64;
        for i in 0..r {
            for j in 0..r {
                let g = quad.inner(&cols[i], &cols[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    pub fn gram_tol(&self) -> f64 {
        self.gram_tol
    }
}

/// Gram-Schmidt orthonormalization of a raw system under the quadrature
/// inner product, in index order.
pub fn orthonormalize_basis(raw: RawBasis, quad: &Quadrature) -> Result<EigenBasis> {
    raw.validate()?;
    let m = raw.len();
    let nq = quad.nodes.len();

    // column j = raw function j sampled on the quadrature nodes
    let mut vals = DMatrix::zeros(nq, m);
    for (row, &t) in quad.nodes.iter().enumerate() {
        for (j, v) in raw.eval_all(t).into_iter().enumerate() {
            vals[(row, j)] = v;
        }
    }

    let mut coeffs = DMatrix::<f64>::identity(m, m);
    for j in 0..m {
        let initial_norm = quad.inner(vals.column(j).as_slice(), vals.column(j).as_slice()).sqrt();
        // two Gram-Schmidt passes for numerical orthogonality
        for _ in 0..2 {
            for i in 0..j {
                let proj = quad.inner(vals.column(i).as_slice(), vals.column(j).as_slice());
                let vi = vals.column(i).into_owned();
                vals.column_mut(j).zip_apply(&vi, |v, w| *v -= proj * w);
                for col in 0..m {
                    let ci = coeffs[(i, col)];
                    coeffs[(j, col)] -= proj * ci;
                }
            }
        }
        let norm = quad.inner(vals.column(j).as_slice(), vals.column(j).as_slice()).sqrt();
        if norm <= 1e-8 * initial_norm.max(1e-300) {
            return Err(Error::Numerical(format!(
                "raw basis is numerically rank deficient at function {j}"
            )));
        }
        vals.column_mut(j).scale_mut(1.0 / norm);
        coeffs.row_mut(j).scale_mut(1.0 / norm);
    }

    let basis = EigenBasis {
        raw,
        coeffs,
        gram_tol: DEFAULT_GRAM_TOL,
    };
    let err = basis.gram_error(quad);
    if err > basis.gram_tol {
        return Err(Error::Numerical(format!(
            "orthonormalization failed: Gram error {err:e} exceeds {:e}",
            basis.gram_tol
        )));
    }
    Ok(basis)
}

/// Distribution of the principal-component scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDist {
    Gaussian,
    /// Mixture `N(2 sqrt(lam/3), lam/3)` w.p. `1/3`, else `N(-sqrt(lam/3), lam/3)`:
    /// zero mean, variance `lam`, skewed.
    SkewedMixture,
}

/// Measurement-noise specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Homoskedastic { sigma2: f64 },
    /// Block-averaged signal level divided by 1.5 over five equal blocks.
    Blocked,
    /// `sigma_j^2 = t_j`.
    GridLinear,
}

/// Covariance kernels for the infinite-rank models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// Standard Brownian motion, `k(s, t) = min(s, t)`.
    Brownian,
    /// Squared exponential `exp(-(s - t)^2 / lengthscale_sq)`.
    Rbf { lengthscale_sq: f64 },
}

impl KernelSpec {
    pub fn eval(&self, s: f64, t: f64) -> f64 {
        match self {
            Self::Brownian => s.min(t),
            Self::Rbf { lengthscale_sq } => (-(s - t) * (s - t) / lengthscale_sq).exp(),
        }
    }
}

/// Signal covariance: a finite Karhunen-Loeve system or a kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovModel {
    Finite {
        basis: RawBasis,
        /// Strictly positive eigenvalues; their count is the true rank and
        /// selects how many orthonormalized functions are kept.
        lambdas: Vec<f64>,
    },
    Kernel { kernel: KernelSpec },
}

/// A complete data-generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Mean function as polynomial coefficients in increasing degree order.
    pub mean: Vec<f64>,
    pub cov: CovModel,
    pub scores: ScoreDist,
    pub noise: NoiseSpec,
}

impl ModelSpec {
    /// Look up one of the named simulation models
    /// (`A1..A5`, `S1..S5`, `SF1..SF3`, `I1..I4`).
    pub fn named(name: &str) -> Result<Self> {
        let trig_a1 = RawBasis::Functions {
            functions: vec![
                EigenFunction::Const,
                EigenFunction::Sin { k: 1 },
                EigenFunction::Cos { k: 1 },
            ],
        };
        let trig_a5 = RawBasis::Functions {
            functions: vec![
                EigenFunction::Const,
                EigenFunction::Sin { k: 1 },
                EigenFunction::Cos { k: 1 },
                EigenFunction::Sin { k: 2 },
                EigenFunction::Cos { k: 2 },
                EigenFunction::Sin { k: 3 },
            ],
        };
        // mu(t) = 5 (t - 0.6)^2
        let mean_a1 = vec![1.8, -6.0, 5.0];
        // mu(t) = 12.5 (t - 0.5)^2 - 1.25
        let mean_a3 = vec![1.875, -12.5, 12.5];

        let spec = match name {
            "A1" => Self {
                name: name.into(),
                mean: mean_a1,
                cov: CovModel::Finite {
                    basis: trig_a1,
                    lambdas: vec![0.6, 0.3, 0.1],
                },
                scores: ScoreDist::Gaussian,
                noise: NoiseSpec::Homoskedastic { sigma2: 1.0 },
            },
            "A2" => Self {
                name: name.into(),
                mean: mean_a1,
                cov: CovModel::Finite {
                    basis: RawBasis::Functions {
                        functions: vec![
                            EigenFunction::Const,
                            EigenFunction::Sin { k: 1 },
                            EigenFunction::Cos { k: 2 },
                        ],
                    },
                    lambdas: vec![0.6, 0.3, 0.1],
                },
                scores: ScoreDist::SkewedMixture,
                noise: NoiseSpec::Homoskedastic { sigma2: 1.0 },
            },
            "A3" | "A4" => Self {
                name: name.into(),
                mean: mean_a3,
                cov: CovModel::Finite {
                    basis: RawBasis::Functions {
                        functions: vec![
                            EigenFunction::Const,
                            EigenFunction::Cos { k: 1 },
                            EigenFunction::Sin { k: 2 },
                        ],
                    },
                    lambdas: vec![4.0, 2.0, 1.0],
                },
                scores: if name == "A4" {
                    ScoreDist::SkewedMixture
                } else {
                    ScoreDist::Gaussian
                },
                noise: NoiseSpec::Homoskedastic { sigma2: 2.0 },
            },
            "A5" => Self {
                name: name.into(),
                mean: vec![0.0],
                cov: CovModel::Finite {
                    basis: trig_a5,
                    lambdas: vec![4.0, 3.5, 3.0, 2.5, 2.0, 1.5],
                },
                scores: ScoreDist::Gaussian,
                noise: NoiseSpec::Homoskedastic { sigma2: 3.0 },
            },
            "S1" | "S2" => Self {
                name: name.into(),
                mean: mean_a1,
                cov: CovModel::Finite {
                    basis: RawBasis::Bspline {
                        degree: 3,
                        knots: vec![0.3, 0.5, 0.7],
                    },
                    lambdas: vec![2.0, 1.7, 1.4, 1.1, 0.8, 0.5],
                },
                scores: if name == "S2" {
                    ScoreDist::SkewedMixture
                } else {
                    ScoreDist::Gaussian
                },
                noise: NoiseSpec::Homoskedastic { sigma2: 3.0 },
            },
            "S3" | "S4" => Self {
                name: name.into(),
                mean: mean_a1,
                cov: CovModel::Finite {
                    basis: RawBasis::Bspline {
                        degree: 2,
                        knots: vec![0.2, 0.6],
                    },
                    lambdas: vec![1.4, 1.1, 0.8, 0.5],
                },
                scores: if name == "S4" {
                    ScoreDist::SkewedMixture
                } else {
                    ScoreDist::Gaussian
                },
                noise: NoiseSpec::Homoskedastic { sigma2: 2.0 },
            },
            "S5" => Self {
                name: name.into(),
                mean: mean_a1,
                cov: CovModel::Finite {
                    basis: RawBasis::Bspline {
                        degree: 1,
                        knots: vec![0.2, 0.6],
                    },
                    lambdas: vec![1.1, 0.8, 0.5],
                },
                scores: ScoreDist::SkewedMixture,
                noise: NoiseSpec::Homoskedastic { sigma2: 1.0 },
            },
            "SF1" => Self {
                name: name.into(),
                mean: mean_a1,
                cov: CovModel::Finite {
                    basis: trig_a1,
                    lambdas: vec![4.0, 0.2, 0.1],
                },
                scores: ScoreDist::Gaussian,
                noise: NoiseSpec::Homoskedastic { sigma2: 1.0 },
            },
            "SF2" => Self {
                name: name.into(),
                mean: vec![0.0],
                cov: CovModel::Finite {
                    basis: trig_a5,
                    lambdas: vec![5.0, 4.0, 0.2, 0.2, 0.1, 0.1],
                },
                scores: ScoreDist::Gaussian,
                noise: NoiseSpec::Homoskedastic { sigma2: 1.0 },
            },
            "SF3" => Self {
                name: name.into(),
                mean: vec![0.0],
                cov: CovModel::Finite {
                    basis: trig_a5,
                    lambdas: vec![4.0, 3.5, 3.0, 0.3, 0.2, 0.1],
                },
                scores: ScoreDist::Gaussian,
                noise: NoiseSpec::Homoskedastic { sigma2: 3.0 },
            },
            "I1" | "I3" => Self {
                name: name.into(),
                mean: vec![0.0],
                cov: CovModel::Kernel {
                    kernel: KernelSpec::Brownian,
                },
                scores: ScoreDist::Gaussian,
                noise: if name == "I3" {
                    NoiseSpec::GridLinear
                } else {
                    NoiseSpec::Homoskedastic { sigma2: 1.0 }
                },
            },
            "I2" | "I4" => Self {
                name: name.into(),
                mean: vec![0.0],
                cov: CovModel::Kernel {
                    kernel: KernelSpec::Rbf { lengthscale_sq: 10.0 },
                },
                scores: ScoreDist::Gaussian,
                noise: if name == "I4" {
                    NoiseSpec::GridLinear
                } else {
                    NoiseSpec::Homoskedastic { sigma2: 1.0 }
                },
            },
            other => {
                return Err(Error::Invalid(format!(
                    "unknown model '{other}' (expected A1..A5, S1..S5, SF1..SF3, I1..I4)"
                )))
            }
        };
        Ok(spec)
    }

    /// Replace the noise specification (e.g. to rerun a named model with the
    /// block-averaged heteroskedastic profile).
    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    /// True rank of the signal covariance, `None` for kernel models.
    pub fn true_rank(&self) -> Option<usize> {
        match &self.cov {
            CovModel::Finite { lambdas, .. } => Some(lambdas.len()),
            CovModel::Kernel { .. } => None,
        }
    }

    fn mean_at(&self, t: f64) -> f64 {
        self.mean.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    fn validate(&self) -> Result<()> {
        if self.mean.is_empty() {
            return Err(Error::Invalid("mean polynomial needs at least one coefficient".into()));
        }
        if let CovModel::Finite { basis, lambdas } = &self.cov {
            basis.validate()?;
            if lambdas.is_empty() {
                return Err(Error::Invalid("finite-rank model needs at least one eigenvalue".into()));
            }
            if lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                return Err(Error::Invalid("eigenvalues must be strictly positive and finite".into()));
            }
            if lambdas.len() > basis.len() {
                return Err(Error::Invalid(format!(
                    "{} eigenvalues but the raw basis has only {} functions",
                    lambdas.len(),
                    basis.len()
                )));
            }
        }
        if let NoiseSpec::Homoskedastic { sigma2 } = self.noise {
            if !(sigma2 >= 0.0) || !sigma2.is_finite() {
                return Err(Error::Invalid("noise variance must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Everything the generator knows about the data it produced.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Population signal covariance evaluated on the grid.
    pub k_x: CovMatrix,
    /// True rank, `None` for infinite-rank kernels.
    pub rank: Option<usize>,
    /// Noise variances per grid node (the diagonal of `D`).
    pub noise_var: Vec<f64>,
    /// Mean function evaluated on the grid.
    pub mean: Vec<f64>,
    /// Latent signal paths (`n x L`).
    pub x: DMatrix<f64>,
    /// Measurement errors (`n x L`).
    pub eps: DMatrix<f64>,
}

/// The block-averaged heteroskedastic noise profile: five blocks of width
/// `L / 5`, each set to the block mean of the signal variance divided by 1.5.
pub fn heteroskedastic_profile(kernel_diag: &[f64]) -> Result<Vec<f64>> {
    let l = kernel_diag.len();
    if l % 5 != 0 {
        return Err(Error::Invalid(format!(
            "blocked noise profile needs a grid size divisible by 5, got {l}"
        )));
    }
    let u = l / 5;
    let mut out = vec![0.0; l];
    for p in 0..5 {
        let block = &kernel_diag[p * u..(p + 1) * u];
        let level = block.iter().sum::<f64>() / u as f64 / 1.5;
        out[p * u..(p + 1) * u].fill(level);
    }
    Ok(out)
}

fn draw_scores<R: Rng>(rng: &mut R, n: usize, lambdas: &[f64], dist: ScoreDist) -> DMatrix<f64> {
    let r = lambdas.len();
    let mut scores = DMatrix::zeros(n, r);
    for m in 0..r {
        let lam = lambdas[m];
        match dist {
            ScoreDist::Gaussian => {
                let sd = lam.sqrt();
                for i in 0..n {
                    scores[(i, m)] = sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            ScoreDist::SkewedMixture => {
                let sd = (lam / 3.0).sqrt();
                let mu_hi = 2.0 * sd;
                let mu_lo = -sd;
                for i in 0..n {
                    let hi = rng.random::<f64>() < 1.0 / 3.0;
                    let mu = if hi { mu_hi } else { mu_lo };
                    scores[(i, m)] = mu + sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    scores
}

/// Generate a dataset of `n` noisy curves on the regular interior grid of
/// size `grid_len`, together with the ground truth behind it.
pub fn generate_model(
    spec: &ModelSpec,
    n: usize,
    grid_len: usize,
    seed: u64,
) -> Result<(SampleMatrix, GroundTruth)> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::Invalid(format!("need at least 2 subjects, got {n}")));
    }
    let grid = Grid::regular(grid_len)?;
    let mut rng = seedstream::stream(seed, &[tag::SIM_DATA]);

    let mean: Vec<f64> = grid.nodes().iter().map(|&t| spec.mean_at(t)).collect();

    let (k_x, x_signal) = match &spec.cov {
        CovModel::Finite { basis, lambdas } => {
            let quad = Quadrature::default_rule();
            let ortho = orthonormalize_basis(basis.clone(), &quad)?.truncate(lambdas.len())?;
            let phi = ortho.evaluate(&grid);
            let scaled = DMatrix::from_fn(grid_len, lambdas.len(), |i, m| phi[(i, m)] * lambdas[m]);
            let k_x = CovMatrix::new(&scaled * phi.transpose())?;
            let scores = draw_scores(&mut rng, n, lambdas, spec.scores);
            let mut x = DMatrix::zeros(n, grid_len);
            x.gemm(1.0, &scores, &phi.transpose(), 0.0);
            (k_x, x)
        }
        CovModel::Kernel { kernel } => {
            let k_x = CovMatrix::new(DMatrix::from_fn(grid_len, grid_len, |i, j| {
                kernel.eval(grid.nodes()[i], grid.nodes()[j])
            }))?;
            // exact Gaussian sampling through the PSD square root
            let eig = sym_eigendecomposition(&k_x)?;
            let root = DMatrix::from_fn(grid_len, grid_len, |i, j| {
                eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()
            });
            let z = DMatrix::from_fn(n, grid_len, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut x = DMatrix::zeros(n, grid_len);
            x.gemm(1.0, &z, &root.transpose(), 0.0);
            (k_x, x)
        }
    };

    let noise_var = match &spec.noise {
        NoiseSpec::Homoskedastic { sigma2 } => vec![*sigma2; grid_len],
        NoiseSpec::Blocked => heteroskedastic_profile(k_x.diagonal().as_slice())?,
        NoiseSpec::GridLinear => grid.nodes().to_vec(),
    };
    let noise_sd: Vec<f64> = noise_var.iter().map(|v| v.sqrt()).collect();
    let eps = DMatrix::from_fn(n, grid_len, |_, j| noise_sd[j] * rng.sample::<f64, _>(StandardNormal));

    let mut w = DMatrix::zeros(n, grid_len);
    for i in 0..n {
        for j in 0..grid_len {
            w[(i, j)] = mean[j] + x_signal[(i, j)] + eps[(i, j)];
        }
    }

    let sample = SampleMatrix::new(w, grid)?;
    Ok((
        sample,
        GroundTruth {
            k_x,
            rank: spec.true_rank(),
            noise_var,
            mean,
            x: x_signal,
            eps,
        },
    ))
}

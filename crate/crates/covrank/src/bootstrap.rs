//! Model-conforming bootstrap calibration of the rank statistic.
//!
//! To test rank `q`, replicates are generated that conform to the rank-`q`
//! null even when the data do not: each observation is replaced by a
//! resampled best-linear-predictor proxy of its rank-`q` signal part plus a
//! Gaussian remainder whose covariance restores the estimated noise and
//! prediction-error structure. The statistic recomputed on each replicate
//! yields a right-tail p-value for the observed `T_q`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_rank, scree_sequence, FitOptions, ScreeSequence};
use crate::linalg::{empirical_covariance, sym_eigendecomposition, CovMatrix, SampleMatrix};
use crate::seedstream::{self, tag};

/// Scale factor in the noise-rank selection threshold
/// `epsilon * (log n / n) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MRuleScale {
    /// `scale = 1`: the threshold is an absolute misfit level. At practical
    /// sample sizes this selects `M = d`, which keeps the noise estimate
    /// clean of any signal tail and preserves power against
    /// high/infinite-rank alternatives.
    Unit,
    /// `scale = ||P_L o K_hat||_F^2`: the threshold is relative to the total
    /// off-diagonal mass. Scale-invariant, but a dominant leading eigenvalue
    /// inflates the threshold and can fold a small signal tail into the
    /// noise estimate.
    OffdiagNormSq,
}

/// Configuration of the bootstrap test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Number of bootstrap replicates `B`.
    pub replicates: usize,
    /// Constant in the noise-rank selection threshold, in `(0, 1]`.
    pub epsilon: f64,
    /// Scale convention for the noise-rank selection threshold.
    pub m_rule_scale: MRuleScale,
    /// Hypothesis boundary: the largest rank the stepwise procedure may test.
    pub d: usize,
    /// Average the estimated noise variances over the grid.
    pub homoskedastic: bool,
    /// Ridge coefficient for inverting the empirical covariance; the value
    /// actually added to the diagonal is `ridge * trace(K) / L`.
    pub ridge: f64,
    /// Center the empirical covariance (both for the data and for
    /// replicates). Disable only for data known to have mean zero.
    pub center: bool,
    /// Master seed for resampling, Gaussian draws, and replicate fits.
    pub seed: u64,
    /// Options for every rank-constrained fit performed by the test.
    pub fit: FitOptions,
}

impl BootstrapConfig {
    /// Defaults with the given hypothesis boundary `d`.
    pub fn new(d: usize) -> Self {
        Self {
            replicates: 500,
            epsilon: 1.0,
            m_rule_scale: MRuleScale::OffdiagNormSq,
            d,
            homoskedastic: false,
            ridge: 1e-10,
            center: true,
            seed: 0,
            fit: FitOptions::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.fit.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Invalid(format!(
                "epsilon must lie in (0, 1], got {}",
                self.epsilon
            )));
        }
        if self.d < 1 {
            return Err(Error::Invalid("hypothesis boundary d must be at least 1".into()));
        }
        if self.replicates < 1 {
            return Err(Error::Invalid("need at least one bootstrap replicate".into()));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::Invalid("ridge must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Estimated measurement-noise variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    /// Clipped per-node variances (the diagonal of `D_hat`).
    pub diag: Vec<f64>,
    /// The rank used for the reference fit in the estimate.
    pub m_used: usize,
    /// The common variance when the homoskedastic average was applied.
    pub homoskedastic_value: Option<f64>,
}

/// Data-driven choice of the noise-estimation rank `M`.
///
/// `statistics` must hold `T_q ..= T_d` (nonincreasing). The threshold is
/// `epsilon * (log n / n) * scale`; `m_n` is the smallest `m` with
/// `T_m <= threshold`, and `M = m_n` if `m_n < d`, otherwise `d`.
pub fn select_m(
    statistics: &[f64],
    q: usize,
    d: usize,
    epsilon: f64,
    n: usize,
    scale: f64,
) -> Result<usize> {
    if statistics.is_empty() {
        return Err(Error::Invalid("select_m needs a nonempty statistic list".into()));
    }
    if q < 1 || q > d {
        return Err(Error::Invalid(format!("need 1 <= q <= d, got q = {q}, d = {d}")));
    }
    if statistics.len() != d - q + 1 {
        return Err(Error::Dim(format!(
            "expected {} statistics for q = {q}..d = {d}, got {}",
            d - q + 1,
            statistics.len()
        )));
    }
    if n < 2 {
        return Err(Error::Invalid(format!("need n >= 2, got {n}")));
    }
    if !(scale > 0.0) {
        return Err(Error::Invalid(format!("scale must be positive, got {scale}")));
    }
    let threshold = epsilon * (n as f64).ln() / n as f64 * scale;
    let m_n = statistics
        .iter()
        .position(|&t| t <= threshold)
        .map(|idx| q + idx)
        .unwrap_or(d + 1);
    Ok(if m_n < d { m_n } else { d })
}

/// Estimate the noise variances from the gap between the observed diagonal
/// and the completed diagonal of the rank-`m` fit, clipping at zero. With
/// `homoskedastic`, every entry is replaced by the mean of the clipped
/// entries.
pub fn estimate_noise(
    k_hat: &CovMatrix,
    theta_m: &CovMatrix,
    m_used: usize,
    homoskedastic: bool,
) -> Result<NoiseEstimate> {
    if k_hat.dim() != theta_m.dim() {
        return Err(Error::Dim(format!(
            "noise estimate with {}x{} covariance and {}x{} fit",
            k_hat.dim(),
            k_hat.dim(),
            theta_m.dim(),
            theta_m.dim()
        )));
    }
    let mut diag: Vec<f64> = (0..k_hat.dim())
        .map(|j| (k_hat.entries()[(j, j)] - theta_m.entries()[(j, j)]).max(0.0))
        .collect();
    let homoskedastic_value = if homoskedastic {
        let mean = diag.iter().sum::<f64>() / diag.len() as f64;
        diag.fill(mean);
        Some(mean)
    } else {
        None
    };
    Ok(NoiseEstimate {
        diag,
        m_used,
        homoskedastic_value,
    })
}

/// Estimated best linear predictors of the signal given each observation:
/// rows `w_bar + Theta_q (K + ridge I)^(-1) (w_i - w_bar)`.
pub fn blup_proxies(
    w: &SampleMatrix,
    theta_q: &CovMatrix,
    k_hat: &CovMatrix,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    let l = w.grid_len();
    if theta_q.dim() != l || k_hat.dim() != l {
        return Err(Error::Dim(format!(
            "proxies for {l}-column data with {}x{} fit and {}x{} covariance",
            theta_q.dim(),
            theta_q.dim(),
            k_hat.dim(),
            k_hat.dim()
        )));
    }
    let solve = regularized_solver(k_hat, ridge)?;
    // K^(-1) Theta, using symmetry of both matrices
    let kinv_theta = solve(theta_q.entries());

    let mean = w.data().row_mean();
    let mut centered = w.data().clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut proxies = DMatrix::zeros(w.n(), l);
    proxies.gemm(1.0, &centered, &kinv_theta, 0.0);
    for mut row in proxies.row_iter_mut() {
        row += &mean;
    }
    Ok(proxies)
}

/// Covariance of the Gaussian remainder: `D_hat + Theta_q - Theta_q (K + ridge I)^(-1) Theta_q`,
/// eigenvalue-clipped to be positive semidefinite.
pub fn residual_cov(
    theta_q: &CovMatrix,
    k_hat: &CovMatrix,
    d_hat: &NoiseEstimate,
    ridge: f64,
) -> Result<CovMatrix> {
    let l = k_hat.dim();
    if theta_q.dim() != l || d_hat.diag.len() != l {
        return Err(Error::Dim(format!(
            "residual covariance with dims {}, {}, {}",
            theta_q.dim(),
            l,
            d_hat.diag.len()
        )));
    }
    let solve = regularized_solver(k_hat, ridge)?;
    let kinv_theta = solve(theta_q.entries());
    let mut resid = theta_q.entries().clone();
    resid.gemm(-1.0, theta_q.entries(), &kinv_theta, 1.0);
    for j in 0..l {
        resid[(j, j)] += d_hat.diag[j];
    }
    // numerical asymmetry from the solve is harmless; symmetrize and clip
    let resid = CovMatrix::new(0.5 * (&resid + resid.transpose()))?;
    let eig = sym_eigendecomposition(&resid)?;
    let clipped = DMatrix::from_fn(l, l, |i, j| {
        eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0)
    });
    CovMatrix::new(0.5 * (&clipped * eig.eigenvectors.transpose() + (&clipped * eig.eigenvectors.transpose()).transpose()))
}

/// Factory for `x -> (K + ridge I)^(-1) x` via Cholesky.
fn regularized_solver(
    k_hat: &CovMatrix,
    ridge: f64,
) -> Result<impl Fn(&DMatrix<f64>) -> DMatrix<f64>> {
    if !(ridge >= 0.0) {
        return Err(Error::Invalid("ridge must be nonnegative".into()));
    }
    let l = k_hat.dim();
    let mut reg = k_hat.entries().clone();
    for j in 0..l {
        reg[(j, j)] += ridge;
    }
    let chol = reg.cholesky().ok_or_else(|| {
        Error::Numerical(
            "regularized covariance is singular; the data are degenerate (try a larger ridge)".into(),
        )
    })?;
    Ok(move |x: &DMatrix<f64>| chol.solve(x))
}

/// Symmetric PSD square root via eigendecomposition with negative
/// eigenvalues clipped at zero.
fn psd_sqrt(m: &CovMatrix) -> Result<DMatrix<f64>> {
    let eig = sym_eigendecomposition(m)?;
    let l = m.dim();
    Ok(DMatrix::from_fn(l, l, |i, j| {
        eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()
    }))
}

fn replicate_raw<R: Rng>(proxies: &DMatrix<f64>, root: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let n = proxies.nrows();
    let l = proxies.ncols();
    // resample indices first, then the Gaussian block
    let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let z = DMatrix::from_fn(n, l, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut out = DMatrix::zeros(n, l);
    out.gemm(1.0, &z, &root.transpose(), 0.0);
    for (i, &pick) in picks.iter().enumerate() {
        for j in 0..l {
            out[(i, j)] += proxies[(pick, j)];
        }
    }
    out
}

/// One bootstrap replicate: rows resampled from the proxies plus centered
/// Gaussian noise with the given residual covariance.
pub fn bootstrap_replicate<R: Rng>(
    proxies: &DMatrix<f64>,
    residual: &CovMatrix,
    grid: &crate::linalg::Grid,
    rng: &mut R,
) -> Result<SampleMatrix> {
    if residual.dim() != proxies.ncols() {
        return Err(Error::Dim(format!(
            "residual covariance is {}x{} but proxies have {} columns",
            residual.dim(),
            residual.dim(),
            proxies.ncols()
        )));
    }
    let root = psd_sqrt(residual)?;
    SampleMatrix::new(replicate_raw(proxies, &root, rng), grid.clone())
}

/// Full outcome of one bootstrap test.
#[derive(Debug, Clone)]
pub struct BootstrapTest {
    /// Right-tail p-value with the add-one correction:
    /// `(1 + #{T*_b >= T_q}) / (B + 1)`.
    pub p_value: f64,
    /// Observed statistic `T_q`.
    pub statistic: f64,
    /// The `B` bootstrap statistics in replicate order.
    pub boot_statistics: Vec<f64>,
    /// Noise estimate used for the replicates.
    pub noise: NoiseEstimate,
    /// Non-fatal observations (e.g. `d` above the recommended bound).
    pub warnings: Vec<String>,
}

/// Bootstrap p-value for the rank-`q` hypothesis.
pub fn bootstrap_pvalue(w: &SampleMatrix, q: usize, cfg: &BootstrapConfig) -> Result<BootstrapTest> {
    cfg.validate()?;
    let k_hat = w.covariance(cfg.center)?;
    let scree = scree_sequence(&k_hat, cfg.d, &cfg.fit)?;
    bootstrap_pvalue_with_scree(w, q, cfg, &k_hat, &scree)
}

/// The same test reusing a precomputed covariance and scree sequence
/// (shared by the stepwise procedure across consecutive `q`).
pub fn bootstrap_pvalue_with_scree(
    w: &SampleMatrix,
    q: usize,
    cfg: &BootstrapConfig,
    k_hat: &CovMatrix,
    scree: &ScreeSequence,
) -> Result<BootstrapTest> {
    cfg.validate()?;
    let l = w.grid_len();
    let n = w.n();
    if q < 1 || q > cfg.d {
        return Err(Error::Invalid(format!("need 1 <= q <= d = {}, got q = {q}", cfg.d)));
    }
    if scree.fits.len() < cfg.d {
        return Err(Error::Dim(format!(
            "scree holds {} fits but d = {}",
            scree.fits.len(),
            cfg.d
        )));
    }
    let mut warnings = Vec::new();
    let recommended = (l - 1) / 2;
    if cfg.d > recommended {
        warnings.push(format!(
            "d = {} exceeds the recommended bound (L - 1) / 2 = {recommended}; identifiability may fail",
            cfg.d
        ));
    }

    let stats = scree.statistics();
    let scale = match cfg.m_rule_scale {
        MRuleScale::Unit => 1.0,
        MRuleScale::OffdiagNormSq => scree.t0,
    };
    let m_used = select_m(&stats[q - 1..cfg.d], q, cfg.d, cfg.epsilon, n, scale)?;
    let noise = estimate_noise(k_hat, &scree.fits[m_used - 1].theta, m_used, cfg.homoskedastic)?;

    let ridge_abs = cfg.ridge * k_hat.entries().trace() / l as f64;
    let theta_q = &scree.fits[q - 1].theta;
    let proxies = blup_proxies(w, theta_q, k_hat, ridge_abs)?;
    let residual = residual_cov(theta_q, k_hat, &noise, ridge_abs)?;
    let root = psd_sqrt(&residual)?;
    let statistic = scree.fits[q - 1].statistic;

    let boot_statistics: Vec<f64> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| -> Result<f64> {
            let mut rng =
                seedstream::stream(cfg.seed, &[tag::BOOT_REPLICATE, q as u64, b as u64]);
            let zeta = replicate_raw(&proxies, &root, &mut rng);
            let k_b = empirical_covariance(&zeta, cfg.center)?;
            let fit_opts = FitOptions {
                seed: seedstream::mix(cfg.seed, &[tag::BOOT_FIT, q as u64, b as u64]),
                ..cfg.fit
            };
            Ok(fit_rank(&k_b, q, &fit_opts)?.statistic)
        })
        .collect::<Result<Vec<f64>>>()?;

    let exceed = boot_statistics.iter().filter(|&&t| t >= statistic).count();
    let p_value = (1 + exceed) as f64 / (cfg.replicates + 1) as f64;
    Ok(BootstrapTest {
        p_value,
        statistic,
        boot_statistics,
        noise,
        warnings,
    })
}

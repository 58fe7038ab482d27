//! The masked-Frobenius low-rank objective, its analytic derivatives, and
//! the associated regularity diagnostics.
//!
//! For a symmetric `L x L` target `K` and a factor `C` of shape `L x q`, the
//! objective is
//!
//! ```text
//! psi(C) = sum_{i != j} (K_ij - (C C^T)_ij)^2
//! ```
//!
//! with gradient `-4 (P_L o (K - C C^T)) C` and Hessian (acting on column-major
//! `vec(R)`, `R` of shape `L x q`)
//!
//! ```text
//! -4 I_q (x) (P_L o (K - C C^T)) + 4 P_qL o ((C^T (x) C) M) + 4 (P_q o C^T C) (x) I_L
//! ```
//!
//! where `o` is the Hadamard product, `(x)` the Kronecker product, `P_m` the
//! off-diagonal mask of order `m`, and `M` the commutation matrix of order
//! `(L, q)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    commutation_matrix, masked_frobenius_sq, sym_eigendecomposition, zero_diagonal, CovMatrix,
};

/// An `L x q` factor `C`, representing the candidate `Theta = C C^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    entries: DMatrix<f64>,
}

impl LowRankFactor {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.ncols() < 1 {
            return Err(Error::Invalid("factor needs at least one column".into()));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("factor contains non-finite entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of columns, i.e. the rank bound `q`.
    pub fn rank_bound(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    /// The represented matrix `Theta = C C^T` (symmetric PSD by construction).
    pub fn theta(&self) -> CovMatrix {
        let mut theta = DMatrix::zeros(self.rows(), self.rows());
        theta.gemm(1.0, &self.entries, &self.entries.transpose(), 0.0);
        // The product form makes asymmetry pure floating-point noise.
        CovMatrix::new(theta).expect("C C^T is symmetric")
    }
}

fn check_dims(c: &DMatrix<f64>, k: &CovMatrix) -> Result<()> {
    if c.nrows() != k.dim() {
        return Err(Error::Dim(format!(
            "factor has {} rows but covariance is {}x{}",
            c.nrows(),
            k.dim(),
            k.dim()
        )));
    }
    Ok(())
}

/// Objective value `sum_{i != j} (K_ij - (C C^T)_ij)^2`.
pub fn psi(c: &LowRankFactor, k: &CovMatrix) -> Result<f64> {
    check_dims(c.entries(), k)?;
    masked_frobenius_sq(k.entries(), c.theta().entries())
}

/// Analytic gradient `-4 (P_L o (K - C C^T)) C`.
pub fn grad_psi(c: &LowRankFactor, k: &CovMatrix) -> Result<DMatrix<f64>> {
    check_dims(c.entries(), k)?;
    Ok(grad_psi_raw(c.entries(), k.entries()))
}

/// Gradient without the wrapper types; `k` must be symmetric `L x L`.
pub(crate) fn grad_psi_raw(c: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let mut residual = k.clone();
    residual.gemm(-1.0, c, &c.transpose(), 1.0);
    zero_diagonal(&mut residual);
    let mut grad = DMatrix::zeros(c.nrows(), c.ncols());
    grad.gemm(-4.0, &residual, c, 0.0);
    grad
}

/// Dense analytic Hessian of `psi` at `C`, of order `L q`, acting on
/// column-major `vec(R)`; consistent with finite differences of [`grad_psi`].
///
/// Entrywise, with row index `(a, b)` (node `a`, column `b`) and column
/// index `(c, d)`:
///
/// ```text
/// a == c:  4 ((C^T C)_bd - C_ab C_ad)
/// a != c:  4 C_ad C_cb - 4 [b == d] (P_L o (K - C C^T))_ac
/// ```
///
/// Note the rotation invariance `psi(C O) = psi(C)` makes this matrix
/// singular at every minimizer when `q >= 2` (the gauge directions `C W`,
/// `W` skew, carry zero curvature). The nonsingularity diagnostic therefore
/// uses [`hess_psi_masked`] instead.
pub fn hess_psi(c: &LowRankFactor, k: &CovMatrix) -> Result<DMatrix<f64>> {
    check_dims(c.entries(), k)?;
    let c = c.entries();
    let l = c.nrows();
    let q = c.ncols();

    let mut residual = k.entries().clone();
    residual.gemm(-1.0, c, &c.transpose(), 1.0);
    zero_diagonal(&mut residual);
    let gram = c.transpose() * c;

    let n = l * q;
    let mut hess = DMatrix::zeros(n, n);
    for d in 0..q {
        for cc in 0..l {
            let col = d * l + cc;
            for b in 0..q {
                for a in 0..l {
                    let row = b * l + a;
                    let v = if a == cc {
                        4.0 * (gram[(b, d)] - c[(a, b)] * c[(a, d)])
                    } else {
                        let mut v = 4.0 * c[(a, d)] * c[(cc, b)];
                        if b == d {
                            v -= 4.0 * residual[(a, cc)];
                        }
                        v
                    };
                    hess[(row, col)] = v;
                }
            }
        }
    }
    Ok(hess)
}

/// The masked-Kronecker curvature operator
///
/// ```text
/// -4 I_q (x) (P_L o (K - C C^T)) + 4 P_qL o ((C^T (x) C) M) + 4 (P_q o C^T C) (x) I_L
/// ```
///
/// It agrees with [`hess_psi`] on all index pairs with distinct nodes
/// (`a != c`) but replaces the same-node blocks, which removes the rotation
/// gauge degeneracy: at an aligned factor `H` of a rank-`q` matrix
/// (`H H^T` off-diagonal-exact, `H^T H` diagonal) it collapses to
/// `4 P_qL o ((H^T (x) H) M)` and is invertible whenever `H` has no zero
/// entries. This is the operator whose inverse appears in the limiting law
/// of the statistic, and the one probed by [`hessian_nonsingularity_check`].
pub fn hess_psi_masked(c: &LowRankFactor, k: &CovMatrix) -> Result<DMatrix<f64>> {
    check_dims(c.entries(), k)?;
    let c = c.entries();
    let l = c.nrows();
    let q = c.ncols();
    let n = l * q;

    // masked residual P_L o (K - C C^T)
    let mut residual = k.entries().clone();
    residual.gemm(-1.0, c, &c.transpose(), 1.0);
    zero_diagonal(&mut residual);

    // -4 I_q (x) (P_L o (K - C C^T)): block diagonal
    let mut hess = DMatrix::zeros(n, n);
    for b in 0..q {
        let off = b * l;
        for j in 0..l {
            for i in 0..l {
                hess[(off + i, off + j)] = -4.0 * residual[(i, j)];
            }
        }
    }

    // +4 P_qL o ((C^T (x) C) M)
    let m = commutation_matrix(l, q);
    let mut cross = c.transpose().kronecker(c) * m;
    zero_diagonal(&mut cross);
    hess += 4.0 * cross;

    // +4 (P_q o C^T C) (x) I_L
    let mut gram = c.transpose() * c;
    zero_diagonal(&mut gram);
    for bi in 0..q {
        for bj in 0..q {
            if bi == bj {
                continue;
            }
            let v = 4.0 * gram[(bi, bj)];
            for i in 0..l {
                hess[(bi * l + i, bj * l + i)] += v;
            }
        }
    }
    Ok(hess)
}

/// Outcome of the leading-eigenvector support diagnostic.
#[derive(Debug, Clone)]
pub struct EigenvectorSupportCheck {
    /// True when every entry of each of the `q` leading eigenvectors exceeds
    /// the tolerance in magnitude.
    pub ok: bool,
    /// Offending `(eigenvector index, entry index)` pairs.
    pub offending: Vec<(usize, usize)>,
}

/// Default magnitude tolerance for [`assumption_e_check`].
pub const EIGENVECTOR_SUPPORT_TOL: f64 = 1e-8;

/// Check that the `q` leading eigenvectors of `k` have no (near-)zero entries.
/// This is a sufficient condition for the non-singularity of the Hessian at a
/// spectral factor of `k`.
pub fn assumption_e_check(k: &CovMatrix, q: usize, tol: Option<f64>) -> Result<EigenvectorSupportCheck> {
    if q > k.dim() {
        return Err(Error::Invalid(format!("q = {q} exceeds dimension {}", k.dim())));
    }
    let tol = tol.unwrap_or(EIGENVECTOR_SUPPORT_TOL);
    let eig = sym_eigendecomposition(k)?;
    let mut offending = Vec::new();
    for m in 0..q {
        for i in 0..k.dim() {
            if eig.eigenvectors[(i, m)].abs() <= tol {
                offending.push((m, i));
            }
        }
    }
    Ok(EigenvectorSupportCheck {
        ok: offending.is_empty(),
        offending,
    })
}

/// Outcome of the Hessian non-singularity diagnostic.
#[derive(Debug, Clone, Copy)]
pub struct HessianCheck {
    pub ok: bool,
    pub smallest_singular_value: f64,
    pub largest_singular_value: f64,
}

/// Check that the curvature operator [`hess_psi_masked`] at `c` is
/// non-singular: its smallest singular value must exceed `tol` (default
/// `1e-8` times the largest).
pub fn hessian_nonsingularity_check(
    c: &LowRankFactor,
    k: &CovMatrix,
    tol: Option<f64>,
) -> Result<HessianCheck> {
    let hess = hess_psi_masked(c, k)?;
    let eig = hess
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("Hessian eigendecomposition did not converge".into()))?;
    let mut smallest = f64::INFINITY;
    let mut largest = 0.0f64;
    for &l in eig.eigenvalues.iter() {
        smallest = smallest.min(l.abs());
        largest = largest.max(l.abs());
    }
    let tol = tol.unwrap_or(1e-8 * largest);
    Ok(HessianCheck {
        ok: smallest > tol,
        smallest_singular_value: smallest,
        largest_singular_value: largest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::offdiag_mask;
    use nalgebra::DVector;
    use rand::Rng;

    fn random_factor(l: usize, q: usize, seed: u64) -> LowRankFactor {
        let mut rng = crate::seedstream::stream(seed, &[40]);
        LowRankFactor::new(DMatrix::from_fn(l, q, |_, _| rng.random::<f64>() * 2.0 - 1.0)).unwrap()
    }

    fn random_cov(l: usize, seed: u64) -> CovMatrix {
        let mut rng = crate::seedstream::stream(seed, &[41]);
        let a = DMatrix::from_fn(l, l, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        CovMatrix::new(&a * a.transpose()).unwrap()
    }

    #[test]
    fn psi_examples() {
        // exact off-diagonal factor gives zero
        let c = random_factor(5, 2, 1);
        let k = c.theta();
        assert!(psi(&c, &k).unwrap() < 1e-24);

        // zero factor gives the masked norm of K
        let k = random_cov(4, 2);
        let zero = LowRankFactor::new(DMatrix::zeros(4, 2)).unwrap();
        let expected = masked_frobenius_sq(k.entries(), &DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(psi(&zero, &k).unwrap(), expected);

        // K = [[1,2],[2,4]], C = (1,1)^T: 2 (2 - 1)^2 = 2
        let k = CovMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])).unwrap();
        let c = LowRankFactor::new(DMatrix::from_column_slice(2, 1, &[1.0, 1.0])).unwrap();
        assert_eq!(psi(&c, &k).unwrap(), 2.0);

        // dimension mismatch
        let c = random_factor(3, 1, 3);
        assert!(psi(&c, &k).is_err());
    }

    #[test]
    fn grad_vanishes_at_zero_and_at_exact_factor() {
        let k = random_cov(5, 4);
        let zero = LowRankFactor::new(DMatrix::zeros(5, 2)).unwrap();
        assert_eq!(grad_psi(&zero, &k).unwrap(), DMatrix::zeros(5, 2));

        let c = random_factor(6, 2, 5);
        let k = c.theta();
        assert!(grad_psi(&c, &k).unwrap().norm() < 1e-12);
    }

    fn fd_grad(c: &LowRankFactor, k: &CovMatrix, h: f64) -> DMatrix<f64> {
        let base = c.entries().clone();
        DMatrix::from_fn(base.nrows(), base.ncols(), |i, j| {
            let mut plus = base.clone();
            plus[(i, j)] += h;
            let mut minus = base.clone();
            minus[(i, j)] -= h;
            let fp = psi(&LowRankFactor::new(plus).unwrap(), k).unwrap();
            let fm = psi(&LowRankFactor::new(minus).unwrap(), k).unwrap();
            (fp - fm) / (2.0 * h)
        })
    }

    #[test]
    fn grad_matches_finite_differences() {
        for seed in 0..5u64 {
            let l = 6;
            let q = 2;
            let c = random_factor(l, q, 100 + seed);
            let k = random_cov(l, 200 + seed);
            let analytic = grad_psi(&c, &k).unwrap();
            let numeric = fd_grad(&c, &k, 1e-6);
            for i in 0..l {
                for j in 0..q {
                    let a = analytic[(i, j)];
                    let n = numeric[(i, j)];
                    if a.abs() > 1e-8 {
                        assert!(
                            ((a - n) / a).abs() <= 1e-5,
                            "entry ({i},{j}): analytic {a}, numeric {n}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn hessian_at_zero_factor() {
        // at C = 0 the analytic and masked forms coincide: -4 I_q (x) (P_L o K)
        let k = random_cov(4, 9);
        let zero = LowRankFactor::new(DMatrix::zeros(4, 2)).unwrap();
        let mut masked = k.entries().clone();
        zero_diagonal(&mut masked);
        let expected = DMatrix::identity(2, 2).kronecker(&(-4.0 * masked));
        assert!((hess_psi(&zero, &k).unwrap() - &expected).norm() < 1e-12);
        assert!((hess_psi_masked(&zero, &k).unwrap() - &expected).norm() < 1e-12);
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let l = 5;
        let q = 2;
        let c = random_factor(l, q, 33);
        let k = random_cov(l, 34);
        let hess = hess_psi(&c, &k).unwrap();
        assert!((&hess - hess.transpose()).norm() <= 1e-10 * hess.norm());
        let h = 1e-6;
        // Column of the Hessian indexed by the vec position of (i, j).
        for j in 0..q {
            for i in 0..l {
                let mut plus = c.entries().clone();
                plus[(i, j)] += h;
                let mut minus = c.entries().clone();
                minus[(i, j)] -= h;
                let gp = grad_psi(&LowRankFactor::new(plus).unwrap(), &k).unwrap();
                let gm = grad_psi(&LowRankFactor::new(minus).unwrap(), &k).unwrap();
                let fd = (gp - gm) / (2.0 * h);
                let col = j * l + i;
                for jb in 0..q {
                    for ib in 0..l {
                        let a = hess[(jb * l + ib, col)];
                        let n = fd[(ib, jb)];
                        if a.abs() > 1e-6 {
                            assert!(
                                ((a - n) / a).abs() <= 1e-4,
                                "hess[{},{}]: analytic {a}, numeric {n}",
                                jb * l + ib,
                                col
                            );
                        }
                    }
                }
            }
        }
    }

    /// Spectral factor `H = V Gamma^(1/2)` of a PSD matrix.
    fn aligned_factor(k: &CovMatrix, q: usize) -> LowRankFactor {
        let eig = sym_eigendecomposition(k).unwrap();
        let l = k.dim();
        let h = DMatrix::from_fn(l, q, |i, m| {
            eig.eigenvectors[(i, m)] * eig.eigenvalues[m].max(0.0).sqrt()
        });
        LowRankFactor::new(h).unwrap()
    }

    #[test]
    fn masked_hessian_reduces_at_aligned_factor() {
        // H H^T matches K off-diagonal and H^T H is diagonal, so the masked
        // operator collapses to 4 P_qL o ((H^T (x) H) M).
        let l = 6;
        let q = 2;
        let k = random_factor(l, q, 55).theta();
        let hf = aligned_factor(&k, q);
        let hess = hess_psi_masked(&hf, &k).unwrap();

        let m = commutation_matrix(l, q);
        let mut reduced = hf.entries().transpose().kronecker(hf.entries()) * m;
        zero_diagonal(&mut reduced);
        reduced *= 4.0;
        assert!((&hess - reduced).norm() <= 1e-8 * hess.norm());
    }

    #[test]
    fn analytic_and_masked_hessians_agree_off_same_node_pairs() {
        let l = 5;
        let q = 3;
        let c = random_factor(l, q, 61);
        let k = random_cov(l, 62);
        let full = hess_psi(&c, &k).unwrap();
        let masked = hess_psi_masked(&c, &k).unwrap();
        for row in 0..l * q {
            for col in 0..l * q {
                if row % l != col % l {
                    assert!(
                        (full[(row, col)] - masked[(row, col)]).abs() <= 1e-12,
                        "entry ({row},{col})"
                    );
                }
            }
        }
    }

    #[test]
    fn gauge_degeneracy_vs_masked_invertibility() {
        // At a minimizer with q >= 2 the analytic Hessian is singular along
        // the factor-rotation directions, while the masked operator stays
        // invertible for a full-support aligned factor.
        let l = 6;
        let q = 2;
        let k = random_factor(l, q, 63).theta();
        let hf = aligned_factor(&k, q);

        let full = hess_psi(&hf, &k).unwrap();
        let eig = full.clone().symmetric_eigen();
        let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(min_abs <= 1e-8 * max_abs, "expected gauge null direction, got {min_abs}");

        let check = hessian_nonsingularity_check(&hf, &k, None).unwrap();
        assert!(check.ok, "masked operator should be invertible here");
    }

    #[test]
    fn assumption_e_examples() {
        // rank-1 all-ones covariance: leading eigenvector has full support
        let ones = CovMatrix::new(DMatrix::from_element(3, 3, 3.0)).unwrap();
        assert!(assumption_e_check(&ones, 1, None).unwrap().ok);

        // diag(2, 1): leading eigenvector is axis-aligned
        let diag = CovMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 1.0]))).unwrap();
        let check = assumption_e_check(&diag, 1, None).unwrap();
        assert!(!check.ok);
        assert_eq!(check.offending, vec![(0, 1)]);
    }

    #[test]
    fn hessian_nonsingularity_examples() {
        // rank-1 K = c c^T with full-support c
        let c = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let k = CovMatrix::new(&c * c.transpose()).unwrap();
        let factor = LowRankFactor::new(DMatrix::from_column_slice(3, 1, c.as_slice())).unwrap();
        let check = hessian_nonsingularity_check(&factor, &k, None).unwrap();
        assert!(check.ok);

        // zero factor against the identity: Hessian vanishes entirely
        let k = CovMatrix::new(DMatrix::identity(4, 4)).unwrap();
        let zero = LowRankFactor::new(DMatrix::zeros(4, 2)).unwrap();
        let check = hessian_nonsingularity_check(&zero, &k, None).unwrap();
        assert!(!check.ok);
        assert_eq!(check.smallest_singular_value, 0.0);
    }

    #[test]
    fn psi_is_rotation_invariant() {
        let c = random_factor(6, 3, 77);
        let k = random_cov(6, 78);
        let theta: f64 = 0.4;
        // rotation in the first two factor columns
        let mut o = DMatrix::identity(3, 3);
        o[(0, 0)] = theta.cos();
        o[(0, 1)] = -theta.sin();
        o[(1, 0)] = theta.sin();
        o[(1, 1)] = theta.cos();
        let rotated = LowRankFactor::new(c.entries() * o).unwrap();
        let a = psi(&c, &k).unwrap();
        let b = psi(&rotated, &k).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn mask_dense_matches_manual_masking() {
        let k = random_cov(5, 91);
        let mask = offdiag_mask(5).dense();
        let masked_via_product = k.entries().component_mul(&mask);
        let mut masked_direct = k.entries().clone();
        zero_diagonal(&mut masked_direct);
        assert_eq!(masked_via_product, masked_direct);
    }
}

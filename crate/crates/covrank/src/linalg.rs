//! Dense symmetric linear-algebra primitives: grids, sample panels,
//! covariance matrices, off-diagonal masks, commutation matrices,
//! eigendecomposition with deterministic ordering, and Procrustes alignment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for accepting a matrix as symmetric on construction.
const SYMMETRY_RTOL: f64 = 1e-12;

/// An ordered grid of observation points inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    nodes: Vec<f64>,
}

impl Grid {
    /// Build a grid from strictly increasing nodes in `[0, 1]`.
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Invalid(format!(
                "grid needs at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        for (j, &t) in nodes.iter().enumerate() {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(Error::Invalid(format!("grid node {j} = {t} outside [0, 1]")));
            }
            if j > 0 && nodes[j - 1] >= t {
                return Err(Error::Invalid(format!(
                    "grid nodes must be strictly increasing (nodes {} and {})",
                    j - 1,
                    j
                )));
            }
        }
        Ok(Self { nodes })
    }

    /// The default equispaced interior grid `t_j = j / (L + 1)`.
    pub fn regular(len: usize) -> Result<Self> {
        let l = len as f64;
        Self::new((1..=len).map(|j| j as f64 / (l + 1.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
}

/// An `n x L` panel of noisy discrete observations, rows indexing subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: DMatrix<f64>,
    grid: Grid,
}

impl SampleMatrix {
    pub fn new(data: DMatrix<f64>, grid: Grid) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::Invalid(format!(
                "sample matrix needs at least 2 rows, got {}",
                data.nrows()
            )));
        }
        if data.ncols() != grid.len() {
            return Err(Error::Dim(format!(
                "sample matrix has {} columns but grid has {} nodes",
                data.ncols(),
                grid.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("sample matrix contains non-finite entries".into()));
        }
        Ok(Self { data, grid })
    }

    /// Number of subjects (rows).
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Number of grid nodes (columns).
    pub fn grid_len(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Empirical covariance of the rows; see [`empirical_covariance`].
    pub fn covariance(&self, center: bool) -> Result<CovMatrix> {
        empirical_covariance(&self.data, center)
    }
}

/// A symmetric `L x L` covariance matrix. Constructors symmetrize via
/// `(K + K^T) / 2` after checking the asymmetry is at floating-point level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovMatrix {
    entries: DMatrix<f64>,
}

impl CovMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::Dim(format!(
                "covariance matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("covariance matrix has non-finite entries".into()));
        }
        let mut max_abs = 0.0f64;
        let mut max_asym = 0.0f64;
        for i in 0..entries.nrows() {
            for j in i..entries.ncols() {
                max_abs = max_abs.max(entries[(i, j)].abs()).max(entries[(j, i)].abs());
                max_asym = max_asym.max((entries[(i, j)] - entries[(j, i)]).abs());
            }
        }
        if max_asym > SYMMETRY_RTOL * max_abs.max(1.0) {
            return Err(Error::Invalid(format!(
                "matrix is not symmetric: max |K_ij - K_ji| = {max_asym:e}"
            )));
        }
        let sym = 0.5 * (&entries + entries.transpose());
        Ok(Self { entries: sym })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    /// Diagonal as a vector.
    pub fn diagonal(&self) -> DVector<f64> {
        self.entries.diagonal()
    }
}

/// The off-diagonal projector `P_L`: zeros on the diagonal, ones elsewhere.
/// Stored implicitly; `dense()` materializes it when the actual matrix is
/// needed (e.g. for its determinant).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskMatrix {
    size: usize,
}

impl MaskMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Zero the diagonal of `m` in place (Hadamard product with the mask).
    pub fn apply(&self, m: &mut DMatrix<f64>) {
        debug_assert_eq!(m.nrows(), self.size);
        debug_assert_eq!(m.ncols(), self.size);
        for i in 0..self.size {
            m[(i, i)] = 0.0;
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.size, self.size, |i, j| if i == j { 0.0 } else { 1.0 })
    }
}

/// The off-diagonal mask of order `L`.
pub fn offdiag_mask(length: usize) -> MaskMatrix {
    assert!(length >= 1, "mask order must be positive");
    MaskMatrix { size: length }
}

/// Zero the diagonal of a square matrix in place.
pub(crate) fn zero_diagonal(m: &mut DMatrix<f64>) {
    let k = m.nrows().min(m.ncols());
    for i in 0..k {
        m[(i, i)] = 0.0;
    }
}

/// Squared Frobenius distance between `a` and `b` ignoring the diagonal:
/// `sum_{i != j} (a_ij - b_ij)^2`.
pub fn masked_frobenius_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::Dim(format!(
            "masked distance between {}x{} and {}x{} matrices",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a.nrows() != a.ncols() {
        return Err(Error::Dim(format!(
            "masked distance needs square matrices, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if i != j {
                let d = a[(i, j)] - b[(i, j)];
                acc += d * d;
            }
        }
    }
    Ok(acc)
}

/// The commutation matrix `M` of order `(rows, cols)`: the `rows*cols`
/// permutation with `M vec(R) = vec(R^T)` for every `rows x cols` matrix `R`
/// (column-major `vec`).
pub fn commutation_matrix(rows: usize, cols: usize) -> DMatrix<f64> {
    assert!(rows >= 1 && cols >= 1, "commutation matrix orders must be positive");
    let n = rows * cols;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..rows {
        for j in 0..cols {
            // vec(R) places R[i,j] at j*rows + i; vec(R^T) places it at i*cols + j.
            m[(i * cols + j, j * rows + i)] = 1.0;
        }
    }
    m
}

/// Eigendecomposition of a symmetric matrix with deterministic ordering:
/// eigenvalues descending (stable under ties), each eigenvector scaled so its
/// largest-magnitude entry (lowest index on ties) is positive.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors as columns, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
}

impl SymEigen {
    /// Reconstruct `V diag(lambda) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.eigenvectors.nrows(), self.eigenvalues.len(), |i, j| {
            self.eigenvectors[(i, j)] * self.eigenvalues[j]
        });
        &scaled * self.eigenvectors.transpose()
    }
}

/// Decompose a symmetric matrix as `V diag(lambda) V^T`.
pub fn sym_eigendecomposition(k: &CovMatrix) -> Result<SymEigen> {
    let dim = k.dim();
    let eig = k
        .entries()
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });

    let eigenvalues = DVector::from_iterator(dim, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        // Sign convention: largest-magnitude entry positive, first index wins ties.
        let mut pivot = 0;
        for i in 1..dim {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..dim {
            eigenvectors[(i, dst)] = sign * col[i];
        }
    }
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Align `c` to the reference factor `c0`: returns `c * U` where `U` is the
/// orthogonal matrix minimizing `||c O - c0||_F` (orthogonal Procrustes,
/// solved by the SVD of `c0^T c`).
pub fn procrustes_align(c: &DMatrix<f64>, c0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.shape() != c0.shape() {
        return Err(Error::Dim(format!(
            "procrustes alignment of {}x{} against {}x{}",
            c.nrows(),
            c.ncols(),
            c0.nrows(),
            c0.ncols()
        )));
    }
    let b = c0.transpose() * c;
    let svd = b
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD in Procrustes alignment did not converge".into()))?;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    // With c0^T c = U S V^T the minimizer of ||c O - c0||_F is O = V U^T.
    let rotation = v_t.transpose() * u.transpose();
    Ok(c * rotation)
}

/// Empirical covariance of the rows of `data`.
///
/// Uncentered: `(1/n) sum_i w_i w_i^T`. Centered: `(1/n) sum_i (w_i - w_bar)(w_i - w_bar)^T`.
pub fn empirical_covariance(data: &DMatrix<f64>, center: bool) -> Result<CovMatrix> {
    let n = data.nrows();
    let min_rows = if center { 2 } else { 1 };
    if n < min_rows {
        return Err(Error::Invalid(format!(
            "empirical covariance needs at least {min_rows} rows (center = {center}), got {n}"
        )));
    }
    let scale = 1.0 / n as f64;
    let mut k = DMatrix::zeros(data.ncols(), data.ncols());
    if center {
        let mean = data.row_mean();
        let mut centered = data.clone();
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        k.gemm_tr(scale, &centered, &centered, 0.0);
    } else {
        k.gemm_tr(scale, data, data, 0.0);
    }
    CovMatrix::new(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn mask_small_orders() {
        assert_eq!(offdiag_mask(2).dense(), mat(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let ones: f64 = offdiag_mask(3).dense().iter().sum();
        assert_eq!(ones, 6.0);
    }

    #[test]
    fn mask_determinant_identity() {
        // det(P_m) = (m - 1) (-1)^(m - 1)
        for m in 2..=8 {
            let det = offdiag_mask(m).dense().determinant();
            let expected = (m as f64 - 1.0) * (-1.0f64).powi(m as i32 - 1);
            assert_relative_eq!(det, expected, epsilon = 1e-9);
        }
        assert_relative_eq!(offdiag_mask(5).dense().determinant(), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn masked_distance_examples() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(2, 2, &[9.0, 1.0, 5.0, 9.0]);
        assert_eq!(masked_frobenius_sq(&a, &b).unwrap(), 5.0);
        assert_eq!(masked_frobenius_sq(&a, &a).unwrap(), 0.0);

        // differing only on the diagonal
        let mut c = a.clone();
        c[(0, 0)] = 100.0;
        assert_eq!(masked_frobenius_sq(&a, &c).unwrap(), 0.0);

        let wrong = DMatrix::<f64>::zeros(3, 3);
        assert!(masked_frobenius_sq(&a, &wrong).is_err());
    }

    fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_column_slice(m.as_slice())
    }

    #[test]
    fn commutation_trivial_and_2x2() {
        assert_eq!(commutation_matrix(1, 1), mat(1, 1, &[1.0]));
        // vec index order (1,3,2,4) for a 2x2 input
        let m = commutation_matrix(2, 2);
        let r = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let vt = &m * vec_of(&r);
        assert_eq!(vt, vec_of(&r.transpose()));
        let expected = mat(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        assert_eq!(m, expected);
    }

    #[test]
    fn commutation_reshapes_random_matrix() {
        let mut rng = crate::seedstream::stream(11, &[1]);
        let r = DMatrix::from_fn(4, 2, |_, _| rng.random::<f64>() - 0.5);
        let m = commutation_matrix(4, 2);
        assert_eq!(&m * vec_of(&r), vec_of(&r.transpose()));
        // permutation: exactly one 1 per row and column
        for i in 0..8 {
            assert_eq!(m.row(i).iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(m.column(i).iter().filter(|&&x| x == 1.0).count(), 1);
        }
    }

    #[test]
    fn commutation_inverse_pair() {
        for (l, q) in [(3, 2), (4, 3), (5, 1)] {
            let prod = commutation_matrix(l, q) * commutation_matrix(q, l);
            assert_eq!(prod, DMatrix::identity(l * q, l * q));
        }
    }

    #[test]
    fn eigendecomposition_examples() {
        let id = CovMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let eig = sym_eigendecomposition(&id).unwrap();
        assert_eq!(eig.eigenvalues.as_slice(), &[1.0, 1.0, 1.0]);

        let diag = CovMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(&[3.0, 1.0]))).unwrap();
        let eig = sym_eigendecomposition(&diag).unwrap();
        assert_relative_eq!(eig.eigenvalues[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(eig.eigenvalues[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(eig.eigenvectors[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        // sign convention: largest-magnitude entry positive
        assert!(eig.eigenvectors[(0, 0)] > 0.0);
        assert!(eig.eigenvectors[(1, 1)] > 0.0);

        // rank-1: c = (1, 2) gives eigenvalues (5, 0)
        let c = DVector::from_column_slice(&[1.0, 2.0]);
        let k = CovMatrix::new(&c * c.transpose()).unwrap();
        let eig = sym_eigendecomposition(&k).unwrap();
        assert_relative_eq!(eig.eigenvalues[0], 5.0, epsilon = 1e-10);
        assert_relative_eq!(eig.eigenvalues[1], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn eigendecomposition_reconstructs() {
        let mut rng = crate::seedstream::stream(5, &[2]);
        for _ in 0..5 {
            let a = DMatrix::from_fn(6, 6, |_, _| rng.random::<f64>() - 0.5);
            let k = CovMatrix::new(&a * a.transpose()).unwrap();
            let eig = sym_eigendecomposition(&k).unwrap();
            let rec = eig.reconstruct();
            let scale = k.entries().norm().max(1.0);
            assert!((rec - k.entries()).norm() / scale < 1e-10);
            let vtv = eig.eigenvectors.transpose() * &eig.eigenvectors;
            assert!((vtv - DMatrix::identity(6, 6)).norm() < 1e-10);
        }
    }

    #[test]
    fn procrustes_examples() {
        let mut rng = crate::seedstream::stream(17, &[3]);
        let c0 = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>() - 0.5);

        // identical factors map to themselves
        let aligned = procrustes_align(&c0, &c0).unwrap();
        assert!((aligned - &c0).norm() < 1e-12);

        // an exactly rotated factor aligns back to the reference
        let theta: f64 = 0.7;
        let rot = mat(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let c = &c0 * &rot;
        let aligned = procrustes_align(&c, &c0).unwrap();
        assert!((aligned - &c0).norm() < 1e-10);
    }

    #[test]
    fn procrustes_beats_random_search() {
        let mut rng = crate::seedstream::stream(23, &[4]);
        let c = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>() - 0.5);
        let c0 = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>() - 0.5);
        let aligned = procrustes_align(&c, &c0).unwrap();
        let achieved = (&aligned - &c0).norm();
        let mut best = f64::INFINITY;
        for _ in 0..10_000 {
            // random orthogonal 2x2: rotation or reflection
            let t = rng.random::<f64>() * std::f64::consts::TAU;
            let refl = rng.random::<bool>();
            let mut o = mat(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
            if refl {
                o.column_mut(0).scale_mut(-1.0);
            }
            best = best.min((&c * o - &c0).norm());
        }
        assert!(achieved <= best + 1e-8, "achieved {achieved}, random best {best}");
    }

    #[test]
    fn procrustes_idempotent() {
        let mut rng = crate::seedstream::stream(29, &[5]);
        let c = DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>() - 0.5);
        let c0 = DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>() - 0.5);
        let once = procrustes_align(&c, &c0).unwrap();
        let twice = procrustes_align(&once, &c0).unwrap();
        assert!((twice - &once).norm() <= 1e-10);
    }

    #[test]
    fn covariance_examples() {
        // single row, uncentered
        let w = mat(1, 2, &[1.0, 2.0]);
        let k = empirical_covariance(&w, false).unwrap();
        assert_eq!(k.entries(), &mat(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        assert!(empirical_covariance(&w, true).is_err());

        // identical rows, centered: zero matrix
        let w = mat(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let k = empirical_covariance(&w, true).unwrap();
        assert!(k.entries().iter().all(|&x| x.abs() < 1e-14));

        // two rows (1,0), (0,1) centered
        let w = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let k = empirical_covariance(&w, true).unwrap();
        let expected = mat(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((k.entries() - expected).norm() < 1e-14);
    }

    #[test]
    fn covariance_is_psd() {
        let mut rng = crate::seedstream::stream(31, &[6]);
        for _ in 0..5 {
            let w = DMatrix::from_fn(7, 5, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            for center in [false, true] {
                let k = empirical_covariance(&w, center).unwrap();
                let eig = sym_eigendecomposition(&k).unwrap();
                assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10));
            }
        }
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid::new(vec![0.0, 0.5, 1.0]).is_ok());
        assert!(Grid::new(vec![0.5]).is_err());
        assert!(Grid::new(vec![0.5, 0.5]).is_err());
        assert!(Grid::new(vec![0.2, 1.2]).is_err());
        let g = Grid::regular(25).unwrap();
        assert_eq!(g.len(), 25);
        assert_relative_eq!(g.nodes()[0], 1.0 / 26.0);
        assert_relative_eq!(g.nodes()[24], 25.0 / 26.0);
    }

    #[test]
    fn sample_matrix_invariants() {
        let grid = Grid::regular(3).unwrap();
        assert!(SampleMatrix::new(DMatrix::zeros(2, 3), grid.clone()).is_ok());
        assert!(SampleMatrix::new(DMatrix::zeros(1, 3), grid.clone()).is_err());
        assert!(SampleMatrix::new(DMatrix::zeros(2, 4), grid.clone()).is_err());
        let mut bad = DMatrix::zeros(2, 3);
        bad[(0, 0)] = f64::NAN;
        assert!(SampleMatrix::new(bad, grid).is_err());
    }

    #[test]
    fn cov_matrix_symmetrizes() {
        let m = mat(2, 2, &[1.0, 2.0 + 1e-14, 2.0, 1.0]);
        let k = CovMatrix::new(m).unwrap();
        assert_eq!(k.entries()[(0, 1)], k.entries()[(1, 0)]);

        let asym = mat(2, 2, &[1.0, 5.0, 2.0, 1.0]);
        assert!(CovMatrix::new(asym).is_err());
    }

    proptest! {
        #[test]
        fn masked_distance_symmetric_and_zero_on_self(
            vals in proptest::collection::vec(-100.0f64..100.0, 16)
        ) {
            let a = DMatrix::from_column_slice(4, 4, &vals[..16]);
            let mut rev = vals.clone();
            rev.reverse();
            let b = DMatrix::from_column_slice(4, 4, &rev[..16]);
            prop_assert_eq!(masked_frobenius_sq(&a, &a).unwrap(), 0.0);
            let ab = masked_frobenius_sq(&a, &b).unwrap();
            let ba = masked_frobenius_sq(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        }

        #[test]
        fn commutation_identity_property(l in 1usize..5, q in 1usize..5) {
            let prod = commutation_matrix(l, q) * commutation_matrix(q, l);
            prop_assert_eq!(prod, DMatrix::identity(l * q, l * q));
        }
    }
}

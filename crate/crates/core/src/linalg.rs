//! Small dense linear-algebra helpers for symmetric covariance matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().sum()
}

/// Symmetrizes and clips negative eigenvalues to zero.
///
/// A Cholesky attempt screens the common positive-definite case, which needs no
/// change; the eigendecomposition only runs when that fails.
pub fn condition_covariance(m: &mut DMatrix<f64>) {
    symmetrize(m);
    if m.nrows() == 0 || Cholesky::new(m.clone()).is_some() {
        return;
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    *m = rebuild(&eig.eigenvectors, &clipped);
    symmetrize(m);
}

fn rebuild(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (j, &l) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(l);
    }
    &scaled * vectors.transpose()
}

/// True when the smallest eigenvalue of the symmetric matrix is at least
/// `-tol · max(trace, 0)`. Checked through a jittered Cholesky.
pub fn is_psd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let n = m.nrows();
    if n == 0 {
        return true;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let jitter = rel_tol * trace(m).abs().max(f64::MIN_POSITIVE);
    let mut shifted = m.clone();
    symmetrize(&mut shifted);
    for i in 0..n {
        shifted[(i, i)] += jitter;
    }
    Cholesky::new(shifted).is_some()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues.min()
}

/// Solver for a symmetric PSD matrix whose eigenvalues are floored at a given
/// level before inversion.
pub enum SpdSolver {
    Cholesky(Cholesky<f64, Dyn>),
    Eigen {
        vectors: DMatrix<f64>,
        inv_values: DVector<f64>,
    },
    /// The matrix is exactly zero: its pseudo-inverse is zero.
    Zero(usize),
}

impl SpdSolver {
    /// Factorizes `m`, flooring eigenvalues at `floor`.
    ///
    /// Returns `None` when the matrix is non-finite or `floor` is not positive
    /// for a nonzero matrix.
    pub fn new(m: &DMatrix<f64>, floor: f64) -> Option<Self> {
        let n = m.nrows();
        if m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        if m.iter().all(|&v| v == 0.0) {
            return Some(SpdSolver::Zero(n));
        }
        if floor.is_nan() || floor <= 0.0 {
            return None;
        }
        if let Some(chol) = Cholesky::new(m.clone()) {
            let l = chol.l_dirty();
            if (0..n).all(|i| l[(i, i)] * l[(i, i)] >= floor) {
                return Some(SpdSolver::Cholesky(chol));
            }
        }
        let mut s = m.clone();
        symmetrize(&mut s);
        let eig = SymmetricEigen::new(s);
        let inv_values = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
        Some(SpdSolver::Eigen {
            vectors: eig.eigenvectors,
            inv_values,
        })
    }

    /// Replaces `b` by `M⁻¹ b`.
    pub fn solve_mut(&self, b: &mut DMatrix<f64>) {
        match self {
            SpdSolver::Cholesky(chol) => chol.solve_mut(b),
            SpdSolver::Eigen {
                vectors,
                inv_values,
            } => {
                let mut tmp = vectors.transpose() * &*b;
                for (i, &w) in inv_values.iter().enumerate() {
                    tmp.row_mut(i).scale_mut(w);
                }
                *b = vectors * tmp;
            }
            SpdSolver::Zero(_) => b.fill(0.0),
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        self.solve_mut(&mut m);
        DVector::from_column_slice(m.as_slice())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = match self {
            SpdSolver::Cholesky(c) => c.l_dirty().nrows(),
            SpdSolver::Eigen { vectors, .. } => vectors.nrows(),
            SpdSolver::Zero(n) => *n,
        };
        let mut id = DMatrix::identity(n, n);
        self.solve_mut(&mut id);
        id
    }
}

/// Log-determinant of a symmetric PSD matrix with eigenvalues floored at
/// `floor`. Cholesky is used when every pivot clears the floor.
pub fn floored_log_det(m: &DMatrix<f64>, floor: f64) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        let l = chol.l_dirty();
        if (0..n).all(|i| l[(i, i)] * l[(i, i)] >= floor) {
            return 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        }
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .map(|&l| l.max(floor).ln())
        .sum()
}

/// A factor `S` with `S Sᵀ = m` for a symmetric PSD matrix, tolerating
/// singular matrices (negative eigenvalues from round-off are clipped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = Cholesky::new(m.clone()) {
        return chol.unpack();
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let mut vectors = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        vectors.column_mut(j).scale_mut(l.max(0.0).sqrt());
    }
    vectors
}

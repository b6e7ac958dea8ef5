//! Small dense helpers shared across modules: symmetric packing, spectral
//! radius, matrix powers and rank.

use nalgebra::{DMatrix, DVector};

/// Length of the packed vector for a symmetric matrix of order `k`.
pub fn svec_len(k: usize) -> usize {
    k * (k + 1) / 2
}

/// Recover the matrix order from a packed length. Returns `None` when `len`
/// is not a triangular number.
pub fn svec_order(len: usize) -> Option<usize> {
    let k = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (svec_len(k) == len).then_some(k)
}

/// Packed index of entry `(i, j)` with `i >= j` (column-major lower triangle).
pub fn svec_index(k: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    // columns 0..j contribute k, k-1, ..., k-j+1 entries
    j * k - j * j.saturating_sub(1) / 2 + (i - j)
}

/// Symmetric vectorization with off-diagonals scaled by √2, so that
/// `svec(X)·svec(Y) = tr(XY)`.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let k = m.nrows();
    let mut v = DVector::zeros(svec_len(k));
    let mut idx = 0;
    for j in 0..k {
        for i in j..k {
            v[idx] = if i == j {
                m[(i, j)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)]) * std::f64::consts::SQRT_2
            };
            idx += 1;
        }
    }
    v
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64]) -> DMatrix<f64> {
    let k = svec_order(v.len()).expect("packed length is not triangular");
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for j in 0..k {
        for i in j..k {
            if i == j {
                m[(i, i)] = v[idx];
            } else {
                let x = v[idx] / std::f64::consts::SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            idx += 1;
        }
    }
    m
}

/// Coefficient that entry `(i, j)` of a symmetric matrix carries in its
/// packed vector (1 on the diagonal, √2 off it).
pub fn svec_scale(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        std::f64::consts::SQRT_2
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// `m^0, m^1, ..., m^count-1`.
pub fn powers(m: &DMatrix<f64>, count: usize) -> Vec<DMatrix<f64>> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(count);
    let mut cur = DMatrix::identity(n, n);
    for _ in 0..count {
        out.push(cur.clone());
        cur = m * &cur;
    }
    out
}

/// Numerical rank with singular-value threshold `rel_tol·σ_max`.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn mat_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Clamp the eigenvalues of a symmetric matrix from below.
pub fn eigen_floor(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    symmetrize(&(q * DMatrix::from_diagonal(&vals) * q.transpose()))
}

pub fn is_finite_matrix(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

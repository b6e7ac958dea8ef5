//! Cone blocks and the Nesterov–Todd scaling operations the interior-point
//! iteration needs on each of them.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{smat, svec, svec_len};

/// One block of the cone product. `Psd(k)` is the cone of k×k positive
/// semidefinite matrices in packed (√2-scaled) form, of dimension k(k+1)/2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Zero(usize),
    NonNeg(usize),
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::NonNeg(d) => d,
            Cone::Psd(k) => svec_len(k),
        }
    }

    /// Barrier degree; the zero cone does not contribute to complementarity.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Zero(_) => 0,
            Cone::NonNeg(d) => d,
            Cone::Psd(k) => k,
        }
    }

    /// Identity element `e` (zeros for the zero cone).
    pub(crate) fn identity(&self, out: &mut [f64]) {
        match *self {
            Cone::Zero(_) => out.fill(0.0),
            Cone::NonNeg(_) => out.fill(1.0),
            Cone::Psd(k) => {
                out.fill(0.0);
                let mut idx = 0;
                for j in 0..k {
                    out[idx] = 1.0;
                    idx += k - j;
                }
            }
        }
    }

    /// Smallest "eigenvalue" of `v` with respect to this cone. Infinite for
    /// the zero cone, which places no interior requirement on slack vectors.
    pub(crate) fn min_eig(&self, v: &[f64]) -> f64 {
        match *self {
            Cone::Zero(_) => f64::INFINITY,
            Cone::NonNeg(_) => v.iter().cloned().fold(f64::INFINITY, f64::min),
            Cone::Psd(_) => crate::linalg::min_eigenvalue(&smat(v)),
        }
    }

    /// Largest `α` with `v + α·dv` in the cone (may be infinite). `v` must be
    /// interior.
    pub(crate) fn max_step(&self, v: &[f64], dv: &[f64]) -> f64 {
        match *self {
            Cone::Zero(_) => f64::INFINITY,
            Cone::NonNeg(_) => v
                .iter()
                .zip(dv)
                .filter(|(_, &d)| d < 0.0)
                .map(|(&x, &d)| -x / d)
                .fold(f64::INFINITY, f64::min),
            Cone::Psd(_) => {
                let vm = smat(v);
                let Some(chol) = vm.cholesky() else {
                    return 0.0;
                };
                let l = chol.l();
                let dm = smat(dv);
                let Some(tmp) = l.solve_lower_triangular(&dm) else {
                    return 0.0;
                };
                let Some(m) = l.solve_lower_triangular(&tmp.transpose()) else {
                    return 0.0;
                };
                let lmin = crate::linalg::min_eigenvalue(&crate::linalg::symmetrize(&m));
                if lmin < 0.0 {
                    -1.0 / lmin
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Jordan product `x ∘ y`.
    pub(crate) fn circ(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match *self {
            Cone::Zero(_) => out.fill(0.0),
            Cone::NonNeg(_) => {
                for i in 0..out.len() {
                    out[i] = x[i] * y[i];
                }
            }
            Cone::Psd(_) => {
                let xm = smat(x);
                let ym = smat(y);
                let p = &xm * &ym;
                let sym = (&p + p.transpose()) * 0.5;
                out.copy_from_slice(svec(&sym).as_slice());
            }
        }
    }
}

/// Nesterov–Todd scaling `W` of one block, with `λ = W z = W⁻ᵀ s`.
#[derive(Clone, Debug)]
pub(crate) enum Scaling {
    Zero,
    NonNeg {
        /// `w_i = sqrt(s_i / z_i)`
        w: Vec<f64>,
        lambda: Vec<f64>,
    },
    Psd {
        r: DMatrix<f64>,
        rinv: DMatrix<f64>,
        /// eigenvalues of the scaled point, `R'ZR = R⁻¹SR⁻ᵀ = diag(λ)`
        lambda: Vec<f64>,
    },
}

impl Scaling {
    pub(crate) fn new(cone: &Cone, s: &[f64], z: &[f64]) -> Option<Scaling> {
        match *cone {
            Cone::Zero(_) => Some(Scaling::Zero),
            Cone::NonNeg(_) => {
                let mut w = Vec::with_capacity(s.len());
                let mut lambda = Vec::with_capacity(s.len());
                for (&si, &zi) in s.iter().zip(z) {
                    if !(si > 0.0 && zi > 0.0) {
                        return None;
                    }
                    w.push((si / zi).sqrt());
                    lambda.push((si * zi).sqrt());
                }
                Some(Scaling::NonNeg { w, lambda })
            }
            Cone::Psd(k) => {
                let ls = smat(s).cholesky()?.l();
                let lz = smat(z).cholesky()?.l();
                let svd = (lz.transpose() * &ls).svd(true, true);
                let v_t = svd.v_t?;
                let sig = svd.singular_values;
                if sig.iter().any(|&x| !(x > 0.0)) {
                    return None;
                }
                let inv_sqrt = DMatrix::from_diagonal(&sig.map(|x| 1.0 / x.sqrt()));
                let sqrt = DMatrix::from_diagonal(&sig.map(|x| x.sqrt()));
                let v = v_t.transpose();
                let r = &ls * &v * &inv_sqrt;
                // R⁻¹ = Λ^{1/2} Vᵀ L_s⁻¹
                let ls_inv = ls.clone().try_inverse()?;
                let rinv = &sqrt * &v_t * ls_inv;
                let lambda = (0..k).map(|i| sig[i]).collect();
                Some(Scaling::Psd { r, rinv, lambda })
            }
        }
    }

    /// Scaled point `λ` in packed form.
    pub(crate) fn lambda(&self, out: &mut [f64]) {
        match self {
            Scaling::Zero => out.fill(0.0),
            Scaling::NonNeg { lambda, .. } => out.copy_from_slice(lambda),
            Scaling::Psd { lambda, .. } => {
                let k = lambda.len();
                out.fill(0.0);
                let mut idx = 0;
                for (j, l) in lambda.iter().enumerate() {
                    out[idx] = *l;
                    idx += k - j;
                }
            }
        }
    }

    /// `W v`
    pub(crate) fn w(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Zero => out.fill(0.0),
            Scaling::NonNeg { w, .. } => {
                for i in 0..out.len() {
                    out[i] = v[i] * w[i];
                }
            }
            Scaling::Psd { r, .. } => {
                let m = r.transpose() * smat(v) * r;
                out.copy_from_slice(svec(&m).as_slice());
            }
        }
    }

    /// `W⁻ᵀ v`
    pub(crate) fn w_inv_t(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Zero => out.fill(0.0),
            Scaling::NonNeg { w, .. } => {
                for i in 0..out.len() {
                    out[i] = v[i] / w[i];
                }
            }
            Scaling::Psd { rinv, .. } => {
                let m = rinv * smat(v) * rinv.transpose();
                out.copy_from_slice(svec(&m).as_slice());
            }
        }
    }

    /// `Wᵀ v`
    pub(crate) fn w_t(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Zero => out.fill(0.0),
            Scaling::NonNeg { w, .. } => {
                for i in 0..out.len() {
                    out[i] = v[i] * w[i];
                }
            }
            Scaling::Psd { r, .. } => {
                let m = r * smat(v) * r.transpose();
                out.copy_from_slice(svec(&m).as_slice());
            }
        }
    }

    /// Solve `λ ∘ u = d` for `u`.
    pub(crate) fn lambda_inv_circ(&self, d: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Zero => out.fill(0.0),
            Scaling::NonNeg { lambda, .. } => {
                for i in 0..out.len() {
                    out[i] = d[i] / lambda[i];
                }
            }
            Scaling::Psd { lambda, .. } => {
                let k = lambda.len();
                let dm = smat(d);
                let mut u = DMatrix::zeros(k, k);
                for i in 0..k {
                    for j in 0..k {
                        u[(i, j)] = 2.0 * dm[(i, j)] / (lambda[i] + lambda[j]);
                    }
                }
                out.copy_from_slice(svec(&u).as_slice());
            }
        }
    }

    /// `H v = Wᵀ W v`
    pub(crate) fn h(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Zero => out.fill(0.0),
            Scaling::NonNeg { w, .. } => {
                for i in 0..out.len() {
                    out[i] = v[i] * w[i] * w[i];
                }
            }
            Scaling::Psd { r, .. } => {
                let g = r * r.transpose();
                let m = &g * smat(v) * &g;
                out.copy_from_slice(svec(&m).as_slice());
            }
        }
    }

    /// `H` for this block as a matrix.
    pub(crate) fn h_mat(&self, dim: usize) -> BlockMatrix {
        match self {
            Scaling::Zero => BlockMatrix::Zero,
            Scaling::NonNeg { w, .. } => BlockMatrix::Diag(w.iter().map(|x| x * x).collect()),
            Scaling::Psd { r, .. } => {
                let g = r * r.transpose();
                let mut m = DMatrix::zeros(dim, dim);
                let mut e = vec![0.0; dim];
                for c in 0..dim {
                    e.fill(0.0);
                    e[c] = 1.0;
                    let col = svec(&(&g * smat(&e) * &g));
                    m.set_column(c, &col);
                }
                BlockMatrix::Dense(crate::linalg::symmetrize(&m))
            }
        }
    }

    /// Dense `H⁻¹` for this block (diagonal blocks return a diagonal matrix).
    pub(crate) fn h_inv(&self, dim: usize) -> BlockMatrix {
        match self {
            Scaling::Zero => BlockMatrix::Zero,
            Scaling::NonNeg { w, .. } => BlockMatrix::Diag(w.iter().map(|x| 1.0 / (x * x)).collect()),
            Scaling::Psd { rinv, .. } => {
                let ginv = rinv.transpose() * rinv;
                let mut m = DMatrix::zeros(dim, dim);
                let mut e = vec![0.0; dim];
                for c in 0..dim {
                    e.fill(0.0);
                    e[c] = 1.0;
                    let col = svec(&(&ginv * smat(&e) * &ginv));
                    m.set_column(c, &col);
                }
                BlockMatrix::Dense(crate::linalg::symmetrize(&m))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum BlockMatrix {
    Zero,
    Diag(Vec<f64>),
    Dense(DMatrix<f64>),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::svec;

    fn pd(k: usize, seed: f64) -> DMatrix<f64> {
        let m = DMatrix::from_fn(k, k, |i, j| ((i * 7 + j * 3) as f64 * seed).sin());
        &m * m.transpose() + DMatrix::identity(k, k) * 0.5
    }

    #[test]
    fn nt_scaling_maps_both_points_to_lambda() {
        let cone = Cone::Psd(3);
        let s = svec(&pd(3, 0.7));
        let z = svec(&pd(3, 1.3));
        let sc = Scaling::new(&cone, s.as_slice(), z.as_slice()).unwrap();
        let mut wz = vec![0.0; 6];
        let mut ws = vec![0.0; 6];
        let mut lam = vec![0.0; 6];
        sc.w(z.as_slice(), &mut wz);
        sc.w_inv_t(s.as_slice(), &mut ws);
        sc.lambda(&mut lam);
        for i in 0..6 {
            assert!((wz[i] - lam[i]).abs() < 1e-10, "{wz:?} {lam:?}");
            assert!((ws[i] - lam[i]).abs() < 1e-10);
        }
        // λ∘λ = W⁻ᵀs ∘ Wz and the product is invariant: tr(SZ) = λ·λ
        let direct = s.dot(&z);
        let lam_sq: f64 = lam.iter().map(|x| x * x).sum();
        assert!((direct - lam_sq).abs() < 1e-9);
    }

    #[test]
    fn hinv_inverts_h() {
        let cone = Cone::Psd(2);
        let s = svec(&pd(2, 0.4));
        let z = svec(&pd(2, 2.1));
        let sc = Scaling::new(&cone, s.as_slice(), z.as_slice()).unwrap();
        let BlockMatrix::Dense(hinv) = sc.h_inv(3) else { panic!() };
        let v = [0.3, -1.2, 0.8];
        let mut hv = [0.0; 3];
        sc.h(&v, &mut hv);
        let back = &hinv * nalgebra::DVector::from_row_slice(&hv);
        for i in 0..3 {
            assert!((back[i] - v[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn psd_step_length_hits_boundary() {
        // I + α·(-I) reaches the boundary at α = 1
        let cone = Cone::Psd(2);
        let v = svec(&DMatrix::identity(2, 2));
        let dv = -v.clone();
        assert!((cone.max_step(v.as_slice(), dv.as_slice()) - 1.0).abs() < 1e-12);
        assert!(cone.max_step(v.as_slice(), v.as_slice()).is_infinite());
    }
}

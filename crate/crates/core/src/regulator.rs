//! Infinite-horizon LQR synthesis and the quadratic cost of a perturbation
//! sequence applied on top of the LQR law.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{mat_inf_norm, rank, spectral_radius, symmetrize};

const RANK_TOL: f64 = 1e-10;
const RICCATI_TOL: f64 = 1e-12;
const RICCATI_CAP: usize = 10_000;
const CERTIFY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegulatorError {
    #[error("invalid plant: {0}")]
    InvalidPlant(String),
    #[error("Riccati iteration did not converge")]
    NoConvergence,
    #[error("closed loop is not stable (spectral radius {0})")]
    Unstabilizable(f64),
}

/// `x⁺ = Ax + Bu + w` with stage cost `x'Qx + u'Ru`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl Plant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, RegulatorError> {
        let plant = Plant { a, b, q, r };
        plant.validate()?;
        Ok(plant)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<(), RegulatorError> {
        let bad = |s: &str| Err(RegulatorError::InvalidPlant(s.to_string()));
        let n = self.a.nrows();
        let m = self.b.ncols();
        if n == 0 || self.a.ncols() != n {
            return bad("A must be square and nonempty");
        }
        if self.b.nrows() != n || m == 0 {
            return bad("B must have as many rows as A");
        }
        if self.q.shape() != (n, n) || self.r.shape() != (m, m) {
            return bad("Q or R has the wrong shape");
        }
        let all = [&self.a, &self.b, &self.q, &self.r];
        if all.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return bad("non-finite entries");
        }
        if mat_inf_norm(&(&self.q - self.q.transpose())) > 1e-12 || mat_inf_norm(&(&self.r - self.r.transpose())) > 1e-12 {
            return bad("Q and R must be symmetric");
        }
        if self.r.clone().cholesky().is_none() {
            return bad("R must be positive definite");
        }
        let qmin = self.q.clone().symmetric_eigen().eigenvalues.min();
        if qmin < -1e-12 * (1.0 + mat_inf_norm(&self.q)) {
            return bad("Q must be positive semidefinite");
        }
        if !self.controllable() {
            return bad("(A, B) is not controllable");
        }
        if !self.detectable() {
            return bad("(A, Q^1/2) is not detectable");
        }
        Ok(())
    }

    pub fn controllable(&self) -> bool {
        let n = self.n();
        let m = self.m();
        let mut ctrb = DMatrix::zeros(n, n * m);
        let mut blk = self.b.clone();
        for i in 0..n {
            ctrb.columns_mut(i * m, m).copy_from(&blk);
            blk = &self.a * blk;
        }
        rank(&ctrb, RANK_TOL) == n
    }

    /// Every mode unobservable through `Q^{1/2}` is strictly stable.
    pub fn detectable(&self) -> bool {
        let n = self.n();
        let eig = symmetrize(&self.q).symmetric_eigen();
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let c = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
        let mut obs = DMatrix::zeros(n * n, n);
        let mut blk = c;
        for i in 0..n {
            obs.rows_mut(i * n, n).copy_from(&blk);
            blk = blk * &self.a;
        }
        let svd = obs.svd(false, true);
        let Some(v_t) = svd.v_t else { return false };
        let smax = svd.singular_values.max();
        // right singular vectors with negligible singular values span the
        // unobservable subspace
        let null: Vec<usize> = (0..n)
            .filter(|&i| smax == 0.0 || svd.singular_values[i] <= RANK_TOL * smax)
            .collect();
        if null.is_empty() {
            return true;
        }
        let v = v_t.select_rows(&null).transpose();
        let restricted = v.transpose() * &self.a * &v;
        spectral_radius(&restricted) < 1.0
    }
}

/// LQR law `u = Kx` with Riccati solution `P`, closed loop `Φ = A + BK`
/// and perturbation weight `Ψ̃ = R + B'PB`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regulator {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub psi_tilde: DMatrix<f64>,
}

pub fn riccati_residual(plant: &Plant, p: &DMatrix<f64>) -> f64 {
    let (a, b) = (&plant.a, &plant.b);
    let s = &plant.r + b.transpose() * p * b;
    let Some(s_inv) = s.try_inverse() else { return f64::INFINITY };
    let apb = a.transpose() * p * b;
    let res = a.transpose() * p * a - &apb * s_inv * apb.transpose() + &plant.q - p;
    mat_inf_norm(&res)
}

pub fn synthesize(plant: &Plant) -> Result<Regulator, RegulatorError> {
    plant.validate()?;
    let (a, b, q, r) = (&plant.a, &plant.b, &plant.q, &plant.r);
    let gain = |p: &DMatrix<f64>| -> Option<DMatrix<f64>> {
        let s = r + b.transpose() * p * b;
        let rhs = b.transpose() * p * a;
        s.cholesky().map(|c| -c.solve(&rhs))
    };
    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..RICCATI_CAP {
        let k = gain(&p).ok_or(RegulatorError::NoConvergence)?;
        // A'PA + A'PBK = A'P(A + BK)
        let next = symmetrize(&(a.transpose() * &p * (a + b * &k) + q));
        let change = mat_inf_norm(&(&next - &p));
        p = next;
        if !change.is_finite() {
            return Err(RegulatorError::NoConvergence);
        }
        if change <= RICCATI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(RegulatorError::NoConvergence);
    }
    let k = gain(&p).ok_or(RegulatorError::NoConvergence)?;
    let phi = a + b * &k;
    let rho = spectral_radius(&phi);
    if rho >= 1.0 {
        return Err(RegulatorError::Unstabilizable(rho));
    }
    let psi_tilde = symmetrize(&(r + b.transpose() * &p * b));
    let reg = Regulator { k, p, phi, psi_tilde };
    let scale = 1.0 + mat_inf_norm(&reg.p);
    if riccati_residual(plant, &reg.p) > CERTIFY_TOL * scale || reg.lyapunov_residual(plant) > CERTIFY_TOL * scale {
        return Err(RegulatorError::NoConvergence);
    }
    Ok(reg)
}

impl Regulator {
    /// `‖Φ'PΦ + Q + K'RK − P‖∞`
    pub fn lyapunov_residual(&self, plant: &Plant) -> f64 {
        let lhs = self.phi.transpose() * &self.p * &self.phi + &plant.q + self.k.transpose() * &plant.r * &self.k;
        mat_inf_norm(&(lhs - &self.p))
    }

    /// `Σ_l c_l' Ψ̃ c_l` over the stacked blocks of `c`.
    pub fn finite_horizon_cost(&self, c: &DVector<f64>) -> f64 {
        let m = self.psi_tilde.nrows();
        assert_eq!(c.len() % m, 0, "stacked vector length must be a multiple of the input dimension");
        (0..c.len() / m)
            .map(|l| {
                let cl = c.rows(l * m, m);
                cl.dot(&(&self.psi_tilde * cl))
            })
            .sum()
    }
}

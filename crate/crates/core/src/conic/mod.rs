//! Dense primal-dual interior-point solver for small conic programs.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ x'Px + q'x
//! subject to  Ax + s = b,   s ∈ K
//! ```
//!
//! where `K` is a product of zero, nonnegative-orthant and PSD cones. The
//! iteration runs on the homogeneous self-dual embedding with
//! Nesterov–Todd scaling and Mehrotra predictor-corrector steps, so
//! infeasible and unbounded problems terminate with a certificate instead
//! of diverging.

mod cones;
mod ipm;

pub use cones::Cone;
pub use ipm::solve;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicError {
    #[error("invalid cone program: {0}")]
    InvalidProgram(String),
}

/// Standard-form conic program. Immutable once validated.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConeProgram {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    cones: Vec<Cone>,
}

impl ConeProgram {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        cones: Vec<Cone>,
    ) -> Result<Self, ConicError> {
        let n = q.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(ConicError::InvalidProgram(format!(
                "P is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        if a.ncols() != n {
            return Err(ConicError::InvalidProgram(format!(
                "A has {} columns, expected {n}",
                a.ncols()
            )));
        }
        if a.nrows() != b.len() {
            return Err(ConicError::InvalidProgram(format!(
                "A has {} rows but b has length {}",
                a.nrows(),
                b.len()
            )));
        }
        let total: usize = cones.iter().map(Cone::dim).sum();
        if total != a.nrows() {
            return Err(ConicError::InvalidProgram(format!(
                "cone dimensions sum to {total}, A has {} rows",
                a.nrows()
            )));
        }
        let finite = p.iter().chain(q.iter()).chain(a.iter()).chain(b.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(ConicError::InvalidProgram("non-finite data".into()));
        }
        if (&p - p.transpose()).abs().max() > 1e-10 * (1.0 + p.abs().max()) {
            return Err(ConicError::InvalidProgram("P is not symmetric".into()));
        }
        if n > 0 && p.abs().max() > 0.0 {
            let shifted = &p + DMatrix::identity(n, n) * 1e-10;
            if shifted.cholesky().is_none() {
                return Err(ConicError::InvalidProgram("P is not positive semidefinite".into()));
            }
        }
        Ok(ConeProgram { p, q, a, b, cones })
    }

    /// Linear objective, no quadratic term.
    pub fn linear(
        q: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        cones: Vec<Cone>,
    ) -> Result<Self, ConicError> {
        let n = q.len();
        Self::new(DMatrix::zeros(n, n), q, a, b, cones)
    }

    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    /// Objective `½x'Px + q'x` at `x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Cone blocks with their starting row offsets.
    pub fn blocks(&self) -> impl Iterator<Item = (Cone, usize)> + '_ {
        self.cones.iter().scan(0usize, |off, c| {
            let start = *off;
            *off += c.dim();
            Some((*c, start))
        })
    }

    /// Smallest cone eigenvalue of `v` over all non-zero blocks; checks
    /// that a slack or dual vector lies in the cone up to tolerance.
    pub fn min_cone_eig(&self, v: &DVector<f64>) -> f64 {
        self.blocks()
            .map(|(c, off)| c.min_eig(&v.as_slice()[off..off + c.dim()]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
    Numerical,
}

#[derive(Clone, Debug)]
pub struct ConeSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    pub status: Status,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub tol_infeas: f64,
    pub max_iter: usize,
    pub static_reg: f64,
    pub refine_steps: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            tol_infeas: 1e-8,
            max_iter: 200,
            static_reg: 1e-9,
            refine_steps: 3,
        }
    }
}

impl Settings {
    /// Same settings with every convergence tolerance set to `tol`.
    pub fn with_tol(tol: f64) -> Self {
        Settings {
            tol_feas: tol,
            tol_gap: tol,
            tol_infeas: tol,
            ..Settings::default()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("solver stopped with status {0:?}")]
    Solver(Status),
    #[error(transparent)]
    Invalid(#[from] ConicError),
}

/// `min q'x s.t. Cx ≤ d`. Returns the optimal value and an optimizer.
pub fn solve_lp(
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    q: &DVector<f64>,
) -> Result<(f64, DVector<f64>), LpError> {
    solve_lp_with(c, d, q, &Settings::default())
}

pub fn solve_lp_with(
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    q: &DVector<f64>,
    settings: &Settings,
) -> Result<(f64, DVector<f64>), LpError> {
    let prog = lp_program(c, d, q)?;
    let sol = solve(&prog, settings);
    match sol.status {
        Status::Optimal => {
            let x = polish_vertex(c, d, q, &sol.x, &sol.y).unwrap_or(sol.x);
            Ok((q.dot(&x), x))
        }
        Status::PrimalInfeasible => Err(LpError::Infeasible),
        Status::DualInfeasible => Err(LpError::Unbounded),
        other => Err(LpError::Solver(other)),
    }
}

/// Snap an interior-point LP solution to the optimal vertex picked out by
/// its dual. Returns `None` when no nondegenerate vertex certifies.
fn polish_vertex(c: &DMatrix<f64>, d: &DVector<f64>, q: &DVector<f64>, x: &DVector<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let n = c.ncols();
    let slack = d - c * x;
    let mut order: Vec<usize> = (0..d.len()).filter(|&i| y[i] > slack[i]).collect();
    order.sort_by(|&a, &b| (y[b] - slack[b]).total_cmp(&(y[a] - slack[a])));
    let mut rows: Vec<usize> = Vec::with_capacity(n);
    for i in order {
        rows.push(i);
        if crate::linalg::rank(&c.select_rows(&rows), 1e-9) < rows.len() {
            rows.pop();
        }
        if rows.len() == n {
            break;
        }
    }
    if rows.len() < n {
        return None;
    }
    let ca = c.select_rows(&rows);
    let lu = ca.clone().lu();
    let xv = lu.solve(&DVector::from_iterator(n, rows.iter().map(|&i| d[i])))?;
    let ya = ca.transpose().lu().solve(&(-q))?;
    let scale = 1.0 + d.amax();
    let feasible = (c * &xv - d).iter().all(|&r| r <= 1e-12 * scale);
    let dual_ok = ya.iter().all(|&v| v >= -1e-10 * (1.0 + q.amax()));
    // primal and dual feasible: optimal by LP duality
    (feasible && dual_ok).then_some(xv)
}

/// The cone program equivalent to `min q'x s.t. Cx ≤ d`.
pub fn lp_program(c: &DMatrix<f64>, d: &DVector<f64>, q: &DVector<f64>) -> Result<ConeProgram, ConicError> {
    ConeProgram::linear(q.clone(), c.clone(), d.clone(), vec![Cone::NonNeg(c.nrows())])
}

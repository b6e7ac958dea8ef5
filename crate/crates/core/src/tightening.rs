//! Distributionally robust CVaR constraint tightening.
//!
//! For a state-constraint row `a` the back-off `η` is the worst-case
//! CVaR of `a'w` over all distributions that are mixtures of members of
//! moment sets `{P on W : E w = μ_j, E ww' ⪯ Σ_j + μ_j μ_j'}`. It is the
//! optimal value of a small SDP whose semi-infinite constraints over `W` are
//! replaced by LMIs through quadratic-program duality.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{self, Cone, ConeProgram, Settings, Status};
use crate::dpmm::MixtureEstimate;
use crate::linalg::{min_eigenvalue, svec, svec_index, svec_len, svec_scale};
use crate::polytope::{HPolytope, PolytopeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TighteningError {
    #[error("risk level {0} is outside (0, 1]")]
    InvalidRisk(f64),
    #[error("invalid ambiguity set: {0}")]
    InvalidAmbiguity(String),
    #[error("tightening SDP for row {row} stopped with status {status:?}")]
    SolverFailed { row: usize, status: Status },
    #[error("no distribution on the grid matches the moments")]
    InfeasibleMoments,
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

/// Support `W` together with a mixture of moment constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySet {
    w: HPolytope,
    mix: MixtureEstimate,
}

impl AmbiguitySet {
    pub fn new(w: HPolytope, mix: MixtureEstimate) -> Result<Self, TighteningError> {
        let bad = |s: String| Err(TighteningError::InvalidAmbiguity(s));
        let n = w.dim();
        if mix.m() == 0 || mix.mu.len() != mix.m() || mix.sigma.len() != mix.m() {
            return bad("mixture must have matching, nonempty gamma/mu/Sigma lists".into());
        }
        let total: f64 = mix.gamma.iter().sum();
        if mix.gamma.iter().any(|&g| !(g > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights must be positive and sum to one (sum {total})"));
        }
        for (j, (mu, s)) in mix.mu.iter().zip(&mix.sigma).enumerate() {
            if mu.len() != n || s.shape() != (n, n) {
                return bad(format!("component {j} has the wrong dimension"));
            }
            if mu.iter().chain(s.iter()).any(|v| !v.is_finite()) {
                return bad(format!("component {j} has non-finite moments"));
            }
            if (s - s.transpose()).amax() > 1e-10 * (1.0 + s.amax()) || min_eigenvalue(s) < -1e-12 {
                return bad(format!("covariance {j} is not symmetric positive semidefinite"));
            }
            if !w.contains(mu, 1e-9) {
                return bad(format!("mean {j} lies outside the support"));
            }
        }
        w.check_disturbance_support()?;
        Ok(AmbiguitySet { w, mix })
    }

    pub fn support(&self) -> &HPolytope {
        &self.w
    }

    pub fn mixture(&self) -> &MixtureEstimate {
        &self.mix
    }
}

/// Variable layout of the tightening SDP. Per component `j`, in order:
/// `t`, `ω` (n), `Ω` (packed), `φ¹` (rows of W), `φ²` (rows of W); then
/// the shared `β` and finally `η`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SdpLayout {
    pub n: usize,
    pub n_f: usize,
    pub m: usize,
}

impl SdpLayout {
    pub fn block(&self) -> usize {
        1 + self.n + svec_len(self.n) + 2 * self.n_f
    }

    pub fn t(&self, j: usize) -> usize {
        j * self.block()
    }

    pub fn omega(&self, j: usize) -> usize {
        self.t(j) + 1
    }

    pub fn big_omega(&self, j: usize) -> usize {
        self.omega(j) + self.n
    }

    pub fn phi1(&self, j: usize) -> usize {
        self.big_omega(j) + svec_len(self.n)
    }

    pub fn phi2(&self, j: usize) -> usize {
        self.phi1(j) + self.n_f
    }

    pub fn beta(&self) -> usize {
        self.m * self.block()
    }

    pub fn eta(&self) -> usize {
        self.beta() + 1
    }

    pub fn n_vars(&self) -> usize {
        self.eta() + 1
    }
}

/// Coefficients of one `(n+1)×(n+1)` LMI `[[Ω, ½(ω + E'φ + c)], [·, corner]]`
/// written as `s = b − A x` in packed form.
struct LmiRows {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

fn lmi_rows(
    lay: &SdpLayout,
    e: &DMatrix<f64>,
    f: &DVector<f64>,
    j: usize,
    phi: usize,
    offdiag_const: &DVector<f64>,
    corner_vars: &[usize],
) -> LmiRows {
    let n = lay.n;
    let k = n + 1;
    let dim = svec_len(k);
    let mut g = DMatrix::zeros(dim, lay.n_vars());
    let mut b = DVector::zeros(dim);
    // Ω block: packed entries coincide
    for c in 0..n {
        for r in c..n {
            g[(svec_index(k, r, c), lay.big_omega(j) + svec_index(n, r, c))] = 1.0;
        }
    }
    // last row, entries (n, a) = ½(ω_a + (E'φ)_a + const_a), scaled by √2
    let s = svec_scale(n, 0) * 0.5;
    for a in 0..n {
        let row = svec_index(k, n, a);
        g[(row, lay.omega(j) + a)] = s;
        for r in 0..lay.n_f {
            g[(row, phi + r)] = s * e[(r, a)];
        }
        b[row] = s * offdiag_const[a];
    }
    // corner: Σ corner_vars − f'φ
    let corner = svec_index(k, n, n);
    for &v in corner_vars {
        g[(corner, v)] += 1.0;
    }
    for r in 0..lay.n_f {
        g[(corner, phi + r)] = -f[r];
    }
    // s = G x + const  ⇒  A = −G, b = const
    LmiRows { a: -g, b }
}

/// The SDP whose optimal value is the tightening `η` for row `hrow`.
/// `beta_nonneg` adds the sign constraint `β ≥ 0`.
pub fn build_sdp(amb: &AmbiguitySet, hrow: &DVector<f64>, eps: f64, beta_nonneg: bool) -> Result<ConeProgram, TighteningError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(TighteningError::InvalidRisk(eps));
    }
    let w = &amb.w;
    let mix = &amb.mix;
    let n = w.dim();
    if hrow.len() != n {
        return Err(TighteningError::InvalidAmbiguity("constraint row has the wrong dimension".into()));
    }
    let lay = SdpLayout { n, n_f: w.n_rows(), m: mix.m() };
    let nv = lay.n_vars();
    let e = w.c();
    let f = w.d();
    let nn = svec_len(n);

    let mut blocks: Vec<(Cone, DMatrix<f64>, DVector<f64>)> = Vec::new();

    // ε β + Σ γ_j (t + μ'ω + (Σ + μμ')•Ω) ≤ 0
    let mut row = DMatrix::zeros(1, nv);
    row[(0, lay.beta())] = eps;
    for j in 0..lay.m {
        let g = mix.gamma[j];
        let mu = &mix.mu[j];
        row[(0, lay.t(j))] = g;
        for a in 0..n {
            row[(0, lay.omega(j) + a)] = g * mu[a];
        }
        let second = svec(&(&mix.sigma[j] + mu * mu.transpose()));
        for p in 0..nn {
            row[(0, lay.big_omega(j) + p)] = g * second[p];
        }
    }
    blocks.push((Cone::NonNeg(1), row, DVector::zeros(1)));

    let zero_off = DVector::zeros(n);
    let minus_h = -hrow;
    for j in 0..lay.m {
        let l1 = lmi_rows(&lay, e, f, j, lay.phi1(j), &zero_off, &[lay.t(j)]);
        blocks.push((Cone::Psd(n + 1), l1.a, l1.b));
        let l2 = lmi_rows(&lay, e, f, j, lay.phi2(j), &minus_h, &[lay.t(j), lay.beta(), lay.eta()]);
        blocks.push((Cone::Psd(n + 1), l2.a, l2.b));
        // Ω ⪰ 0
        let mut a = DMatrix::zeros(nn, nv);
        for p in 0..nn {
            a[(p, lay.big_omega(j) + p)] = -1.0;
        }
        blocks.push((Cone::Psd(n), a, DVector::zeros(nn)));
        for phi in [lay.phi1(j), lay.phi2(j)] {
            let mut a = DMatrix::zeros(lay.n_f, nv);
            for r in 0..lay.n_f {
                a[(r, phi + r)] = -1.0;
            }
            blocks.push((Cone::NonNeg(lay.n_f), a, DVector::zeros(lay.n_f)));
        }
    }
    if beta_nonneg {
        let mut a = DMatrix::zeros(1, nv);
        a[(0, lay.beta())] = -1.0;
        blocks.push((Cone::NonNeg(1), a, DVector::zeros(1)));
    }

    let rows: usize = blocks.iter().map(|(c, _, _)| c.dim()).sum();
    let mut a = DMatrix::zeros(rows, nv);
    let mut b = DVector::zeros(rows);
    let mut cones = Vec::with_capacity(blocks.len());
    let mut off = 0;
    for (c, ab, bb) in blocks {
        let d = c.dim();
        a.rows_mut(off, d).copy_from(&ab);
        b.rows_mut(off, d).copy_from(&bb);
        cones.push(c);
        off += d;
    }
    let mut q = DVector::zeros(nv);
    q[lay.eta()] = 1.0;
    ConeProgram::linear(q, a, b, cones).map_err(|e| TighteningError::InvalidAmbiguity(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TighteningResult {
    pub eta: DVector<f64>,
    pub status: Vec<Status>,
    /// Dual objective of each row's SDP (NaN when the solve failed).
    pub dual_objective: Vec<f64>,
    /// Rows whose value was replaced by the worst-case back-off.
    pub fallback: Vec<bool>,
}

/// `η0_i = max_{w∈W} H_i w`, valid for every distribution on `W`.
pub fn worst_case_eta(w: &HPolytope, h: &DMatrix<f64>) -> Result<DVector<f64>, TighteningError> {
    let mut out = DVector::zeros(h.nrows());
    for i in 0..h.nrows() {
        out[i] = w.support(&h.row(i).transpose())?;
    }
    Ok(out)
}

/// Solve one row; `Err` carries the solver status.
pub fn solve_row(amb: &AmbiguitySet, hrow: &DVector<f64>, eps: f64, beta_nonneg: bool, settings: &Settings) -> Result<(f64, f64), TighteningError> {
    let prog = build_sdp(amb, hrow, eps, beta_nonneg)?;
    let sol = conic::solve(&prog, settings);
    if sol.status != Status::Optimal {
        return Err(TighteningError::SolverFailed { row: 0, status: sol.status });
    }
    let dual = -prog.b().dot(&sol.y);
    Ok((sol.objective, dual))
}

/// Tightening for every row of `h`. Rows whose SDP fails fall back to the
/// worst-case value; negative optima are clamped to zero.
pub fn solve_eta(
    amb: &AmbiguitySet,
    h: &DMatrix<f64>,
    eps: &[f64],
    beta_nonneg: bool,
    settings: &Settings,
) -> Result<TighteningResult, TighteningError> {
    if eps.len() != h.nrows() {
        return Err(TighteningError::InvalidAmbiguity("one risk level per constraint row is required".into()));
    }
    let eta0 = worst_case_eta(&amb.w, h)?;
    let p = h.nrows();
    let mut res = TighteningResult {
        eta: DVector::zeros(p),
        status: Vec::with_capacity(p),
        dual_objective: Vec::with_capacity(p),
        fallback: Vec::with_capacity(p),
    };
    for i in 0..p {
        let hrow = h.row(i).transpose();
        match solve_row(amb, &hrow, eps[i], beta_nonneg, settings) {
            Ok((val, dual)) => {
                res.eta[i] = val.clamp(0.0, eta0[i].max(0.0));
                res.status.push(Status::Optimal);
                res.dual_objective.push(dual);
                res.fallback.push(false);
            }
            Err(TighteningError::SolverFailed { status, .. }) => {
                res.eta[i] = eta0[i].max(0.0);
                res.status.push(status);
                res.dual_objective.push(f64::NAN);
                res.fallback.push(true);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(res)
}

/// Brute-force worst-case CVaR of `hrow'w` with the support replaced by a
/// uniform grid of atoms (`grid_density` points per axis, boundary
/// included). Test-scale only: `n ≤ 2`.
///
/// For a threshold `c`, `S_j(c) = sup E(a'w − c)⁺` over grid distributions
/// with the moments of component `j`; the result is
/// `min_c c + (1/ε) Σ_j γ_j S_j(c)`, minimized by golden-section search.
pub fn wc_cvar_oracle(amb: &AmbiguitySet, hrow: &DVector<f64>, eps: f64, grid_density: usize) -> Result<f64, TighteningError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(TighteningError::InvalidRisk(eps));
    }
    let w = &amb.w;
    let n = w.dim();
    if n > 2 || n == 0 {
        return Err(TighteningError::InvalidAmbiguity("the grid oracle supports dimension 1 or 2".into()));
    }
    let atoms = grid_atoms(w, grid_density)?;
    let vals: Vec<f64> = atoms.iter().map(|x| hrow.dot(x)).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let objective = |c: f64| -> Result<f64, TighteningError> {
        let mut total = c;
        for j in 0..amb.mix.m() {
            let s = grid_expectation_dual(&atoms, &vals, &amb.mix.mu[j], &amb.mix.sigma[j], c)?;
            total += amb.mix.gamma[j] * s / eps;
        }
        Ok(total)
    };
    // optimal threshold lies in [lo, hi]: the objective is convex and
    // piecewise linear outside that range with slopes of the right sign
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - golden * (b - a);
    let mut x2 = a + golden * (b - a);
    let mut f1 = objective(x1)?;
    let mut f2 = objective(x2)?;
    while b - a > 1e-7 * (1.0 + hi - lo) {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - golden * (b - a);
            f1 = objective(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + golden * (b - a);
            f2 = objective(x2)?;
        }
    }
    let ends = objective(lo)?.min(objective(hi)?);
    Ok(f1.min(f2).min(ends))
}

fn grid_atoms(w: &HPolytope, density: usize) -> Result<Vec<DVector<f64>>, TighteningError> {
    let n = w.dim();
    let density = density.max(2);
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        hi[i] = w.support(&e)?;
        lo[i] = -w.support(&(-e))?;
    }
    let axis = |i: usize, k: usize| lo[i] + (hi[i] - lo[i]) * k as f64 / (density - 1) as f64;
    let mut out = Vec::new();
    if n == 1 {
        for k in 0..density {
            out.push(DVector::from_element(1, axis(0, k)));
        }
    } else {
        for k0 in 0..density {
            for k1 in 0..density {
                let x = DVector::from_row_slice(&[axis(0, k0), axis(1, k1)]);
                if w.contains(&x, 1e-12) {
                    out.push(x);
                }
            }
        }
    }
    Ok(out)
}

/// `max Σ p_g (v_g − c)⁺` over atom masses `p ≥ 0` with `Σp = 1`,
/// `Σ p_g x_g = μ`, `Σ p_g x_g x_g' ⪯ Σ + μμ'` (scalar case). Used to
/// cross-check the dual form.
#[cfg(test)]
fn grid_expectation_primal(atoms: &[DVector<f64>], vals: &[f64], mu: &DVector<f64>, sigma: &DMatrix<f64>, c: f64) -> Result<f64, TighteningError> {
    let g = atoms.len();
    let mut a = DMatrix::zeros(3 + g, g);
    let mut b = DVector::zeros(3 + g);
    for (k, x) in atoms.iter().enumerate() {
        a[(0, k)] = 1.0;
        a[(1, k)] = x[0];
        a[(2, k)] = x[0] * x[0];
        a[(3 + k, k)] = -1.0;
    }
    b[0] = 1.0;
    b[1] = mu[0];
    b[2] = sigma[(0, 0)] + mu[0] * mu[0];
    let q = DVector::from_iterator(g, vals.iter().map(|v| -(v - c).max(0.0)));
    let prog = ConeProgram::linear(q, a, b, vec![Cone::Zero(2), Cone::NonNeg(1 + g)])
        .map_err(|e| TighteningError::InvalidAmbiguity(e.to_string()))?;
    let sol = conic::solve(&prog, &Settings::default());
    match sol.status {
        Status::Optimal => Ok(-sol.objective),
        Status::PrimalInfeasible => Err(TighteningError::InfeasibleMoments),
        status => Err(TighteningError::SolverFailed { row: 0, status }),
    }
}

/// Same quantity as [`grid_expectation_primal`] through its dual, which has
/// few variables and one row per atom:
/// `min t + μ'ω + (Σ + μμ')•Ω` s.t. `t + x'ω + x'Ωx ≥ max(0, v − c)` at
/// every atom, `Ω ⪰ 0`.
fn grid_expectation_dual(atoms: &[DVector<f64>], vals: &[f64], mu: &DVector<f64>, sigma: &DMatrix<f64>, c: f64) -> Result<f64, TighteningError> {
    let n = mu.len();
    let nn = svec_len(n);
    let nv = 1 + n + nn;
    let g = atoms.len();
    let mut a = DMatrix::zeros(g + nn, nv);
    let mut b = DVector::zeros(g + nn);
    for (k, x) in atoms.iter().enumerate() {
        let xx = svec(&(x * x.transpose()));
        a[(k, 0)] = -1.0;
        for i in 0..n {
            a[(k, 1 + i)] = -x[i];
        }
        for p in 0..nn {
            a[(k, 1 + n + p)] = -xx[p];
        }
        b[k] = -(vals[k] - c).max(0.0);
    }
    for p in 0..nn {
        a[(g + p, 1 + n + p)] = -1.0;
    }
    let mut q = DVector::zeros(nv);
    q[0] = 1.0;
    for i in 0..n {
        q[1 + i] = mu[i];
    }
    let second = svec(&(sigma + mu * mu.transpose()));
    for p in 0..nn {
        q[1 + n + p] = second[p];
    }
    let prog = ConeProgram::linear(q, a, b, vec![Cone::NonNeg(g), Cone::Psd(n)])
        .map_err(|e| TighteningError::InvalidAmbiguity(e.to_string()))?;
    // the oracle is compared at 1e-3 scale; tall grid LPs stall near 1e-8
    let sol = conic::solve(&prog, &Settings { refine_steps: 15, ..Settings::with_tol(1e-7) });
    match sol.status {
        Status::Optimal => Ok(sol.objective),
        Status::DualInfeasible => Err(TighteningError::InfeasibleMoments),
        status => Err(TighteningError::SolverFailed { row: 0, status }),
    }
}

//! Finite-horizon optimal control problem over the perturbation sequence
//! `c`, candidate construction and the safe update of tightened sets.
//!
//! The nominal prediction is `z_{l+1} = A z_l + B v_l`, `v_l = K z_l + c_l`,
//! `z_0 = x`. Nominal states are tightened by the CVaR back-off `η` plus the
//! error tube, inputs by the input tube, and `z_N` must lie in a robust
//! positively invariant terminal set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{self, Cone, ConeProgram, Settings, Status};
use crate::dpmm::MixtureEstimate;
use crate::linalg::{inf_norm, powers};
use crate::polytope::{error_tube_offsets, input_tube_offsets, mrpi, HPolytope, PolytopeError};
use crate::regulator::{synthesize, Plant, Regulator, RegulatorError};
use crate::tightening::{solve_eta, worst_case_eta, AmbiguitySet, TighteningError, TighteningResult};

const OCP_MARGIN: f64 = 1e-10;

pub const DEFAULT_MRPI_ITER: usize = 200;
pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("terminal set is empty or could not be computed: {0}")]
    EmptyTerminalSet(String),
    #[error("tightened state or input set at step {0} is empty")]
    EmptyStageSet(usize),
    #[error("optimal control problem is infeasible at the measured state")]
    Infeasible,
    #[error("optimal control problem stopped with status {0:?}")]
    SolverFailed(Status),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Regulator(#[from] RegulatorError),
    #[error(transparent)]
    Tightening(#[from] TighteningError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalMode {
    /// Recompute the maximal RPI terminal set for every new tightening.
    OnlineMrpi,
    /// Use the terminal set of the worst-case tightening throughout.
    OfflineFallback,
}

impl TerminalMode {
    /// Online sets for small state dimension, the offline set otherwise.
    pub fn default_for(n: usize) -> Self {
        if n <= 2 {
            TerminalMode::OnlineMrpi
        } else {
            TerminalMode::OfflineFallback
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub plant: Plant,
    pub regulator: Regulator,
    pub horizon: usize,
    /// State constraints `Hx ≤ h`.
    pub x_set: HPolytope,
    /// One risk level per row of `H`.
    pub eps: Vec<f64>,
    /// Input constraints `Gu ≤ g`.
    pub u_set: HPolytope,
    /// Disturbance support `Ew ≤ f`.
    pub w_set: HPolytope,
    pub terminal_mode: TerminalMode,
    pub beta_nonneg: bool,
    pub mrpi_max_iter: usize,
    pub membership_tol: f64,
    pub solver: Settings,
}

impl MpcConfig {
    /// Synthesizes the LQR gain and checks every set and risk level.
    pub fn new(
        plant: Plant,
        horizon: usize,
        x_set: HPolytope,
        eps: Vec<f64>,
        u_set: HPolytope,
        w_set: HPolytope,
        terminal_mode: TerminalMode,
    ) -> Result<Self, MpcError> {
        let regulator = synthesize(&plant)?;
        let cfg = MpcConfig {
            plant,
            regulator,
            horizon,
            x_set,
            eps,
            u_set,
            w_set,
            terminal_mode,
            beta_nonneg: false,
            mrpi_max_iter: DEFAULT_MRPI_ITER,
            membership_tol: DEFAULT_MEMBERSHIP_TOL,
            solver: Settings::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |s: String| Err(MpcError::InvalidConfig(s));
        let n = self.plant.n();
        let m = self.plant.m();
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.x_set.dim() != n || self.w_set.dim() != n || self.u_set.dim() != m {
            return bad("state, input or disturbance set has the wrong dimension".into());
        }
        if self.eps.len() != self.x_set.n_rows() {
            return bad(format!("{} risk levels for {} state constraints", self.eps.len(), self.x_set.n_rows()));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return bad(format!("risk level {e} is outside (0, 1)"));
        }
        if self.x_set.d().iter().any(|&d| !(d > 0.0)) || self.u_set.d().iter().any(|&d| !(d > 0.0)) {
            return bad("state and input sets must contain the origin in their interior".into());
        }
        self.w_set.check_disturbance_support()?;
        if !(self.membership_tol >= 0.0) {
            return bad("membership tolerance must be nonnegative".into());
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.plant.n()
    }

    pub fn m(&self) -> usize {
        self.plant.m()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        self.x_set.c()
    }

    pub fn eta0(&self) -> Result<DVector<f64>, MpcError> {
        Ok(worst_case_eta(&self.w_set, self.h())?)
    }
}

/// Sets defining one instance of the optimal control problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightenedSets {
    pub eta: DVector<f64>,
    /// Error-tube offsets, row `l` for step `l = 0..=N`.
    pub zeta: DMatrix<f64>,
    /// Input-tube offsets, row `l` for step `l = 0..=N`.
    pub delta: DMatrix<f64>,
    /// `Z_1..Z_N`.
    pub z: Vec<HPolytope>,
    /// `V_0..V_{N-1}`.
    pub v: Vec<HPolytope>,
    pub zf: HPolytope,
    pub epoch: usize,
}

/// Controller data fixed for a whole closed loop: the configuration, the
/// worst-case back-off and the terminal set built from it, which is
/// invariant for every admissible tightening.
#[derive(Clone, Debug)]
pub struct Mpc {
    cfg: MpcConfig,
    eta0: DVector<f64>,
    fallback_zf: HPolytope,
    powers: Vec<DMatrix<f64>>,
}

impl Mpc {
    pub fn new(cfg: MpcConfig) -> Result<Self, MpcError> {
        cfg.validate()?;
        let eta0 = cfg.eta0()?;
        let powers = powers(&cfg.regulator.phi, cfg.horizon + 1);
        let mut mpc = Mpc { cfg, eta0: eta0.clone(), fallback_zf: HPolytope::symmetric_box(&[1.0])?, powers };
        let (zeta, delta) = mpc.offsets()?;
        mpc.fallback_zf = mpc.terminal_set(&eta0, &zeta, &delta)?;
        Ok(mpc)
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn eta0(&self) -> &DVector<f64> {
        &self.eta0
    }

    /// Terminal set for the worst-case tightening.
    pub fn fallback_terminal(&self) -> &HPolytope {
        &self.fallback_zf
    }

    fn offsets(&self) -> Result<(DMatrix<f64>, DMatrix<f64>), MpcError> {
        let cfg = &self.cfg;
        let reg = &cfg.regulator;
        let zeta = error_tube_offsets(&reg.phi, &cfg.w_set, cfg.h(), cfg.horizon)?;
        let delta = input_tube_offsets(&reg.phi, &reg.k, &cfg.w_set, cfg.u_set.c(), cfg.horizon)?;
        Ok((zeta, delta))
    }

    fn terminal_base(&self, eta: &DVector<f64>, zeta: &DMatrix<f64>, delta: &DMatrix<f64>) -> Result<HPolytope, MpcError> {
        let cfg = &self.cfg;
        let n_big = cfg.horizon;
        let off = eta + zeta.row(n_big).transpose();
        let zn = cfg.x_set.tighten_rows(&off)?;
        let gk = cfg.u_set.c() * &cfg.regulator.k;
        let inputs = HPolytope::new(gk, cfg.u_set.d() - delta.row(n_big).transpose())?;
        Ok(zn.intersect(&inputs)?)
    }

    fn terminal_set(&self, eta: &DVector<f64>, zeta: &DMatrix<f64>, delta: &DMatrix<f64>) -> Result<HPolytope, MpcError> {
        let base = self.terminal_base(eta, zeta, delta)?;
        let dmap = &self.powers[self.cfg.horizon];
        match mrpi(&self.cfg.regulator.phi, dmap, &self.cfg.w_set, &base, self.cfg.mrpi_max_iter) {
            Ok(set) => Ok(set),
            Err(e @ (PolytopeError::EmptyTerminalSet | PolytopeError::MaxIter(_) | PolytopeError::Empty)) => {
                Err(MpcError::EmptyTerminalSet(e.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Stage and terminal sets for the back-off `eta`.
    pub fn build_sets(&self, eta: &DVector<f64>, epoch: usize) -> Result<TightenedSets, MpcError> {
        let cfg = &self.cfg;
        let p = cfg.x_set.n_rows();
        if eta.len() != p {
            return Err(MpcError::InvalidConfig(format!("{} tightening values for {p} rows", eta.len())));
        }
        if eta.iter().zip(self.eta0.iter()).any(|(e, e0)| !(*e >= 0.0) || *e > e0 + 1e-9) {
            return Err(MpcError::InvalidConfig("tightening must lie between 0 and the worst-case value".into()));
        }
        let (zeta, delta) = self.offsets()?;
        let mut z = Vec::with_capacity(cfg.horizon);
        let mut v = Vec::with_capacity(cfg.horizon);
        for l in 1..=cfg.horizon {
            let set = cfg.x_set.tighten_rows(&(eta + zeta.row(l).transpose()))?;
            if set.is_empty()? {
                return Err(MpcError::EmptyStageSet(l));
            }
            z.push(set);
        }
        for l in 0..cfg.horizon {
            let set = cfg.u_set.tighten_rows(&delta.row(l).transpose())?;
            if set.is_empty()? {
                return Err(MpcError::EmptyStageSet(l));
            }
            v.push(set);
        }
        let zf = match cfg.terminal_mode {
            TerminalMode::OnlineMrpi => self.terminal_set(eta, &zeta, &delta)?,
            TerminalMode::OfflineFallback => self.fallback_zf.clone(),
        };
        Ok(TightenedSets { eta: eta.clone(), zeta, delta, z, v, zf, epoch })
    }

    /// Tightening for a learned mixture. Rows whose SDP fails take the
    /// worst-case value.
    pub fn tighten(&self, mix: &MixtureEstimate) -> Result<TighteningResult, MpcError> {
        let amb = AmbiguitySet::new(self.cfg.w_set.clone(), mix.clone())?;
        let res = solve_eta(&amb, self.cfg.h(), &self.cfg.eps, self.cfg.beta_nonneg, &self.cfg.solver)?;
        Ok(res)
    }

    /// Nominal trajectory and inputs generated by `c` from `x`.
    pub fn rollout(&self, x: &DVector<f64>, c: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let (a, b) = (&self.cfg.plant.a, &self.cfg.plant.b);
        let k = &self.cfg.regulator.k;
        let m = self.cfg.m();
        let mut z = vec![x.clone()];
        let mut v = Vec::with_capacity(self.cfg.horizon);
        for l in 0..self.cfg.horizon {
            let vl = k * &z[l] + c.rows(l * m, m);
            z.push(a * &z[l] + b * &vl);
            v.push(vl);
        }
        (z, v)
    }

    /// Affine maps `z_l = S_l x + T_l c` for `l = 0..=N`.
    fn prediction(&self) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let n = self.cfg.n();
        let m = self.cfg.m();
        let nn = self.cfg.horizon;
        let b = &self.cfg.plant.b;
        let mut s = Vec::with_capacity(nn + 1);
        let mut t = Vec::with_capacity(nn + 1);
        for l in 0..=nn {
            s.push(self.powers[l].clone());
            let mut tl = DMatrix::zeros(n, m * nn);
            for j in 0..l {
                tl.columns_mut(j * m, m).copy_from(&(&self.powers[l - 1 - j] * b));
            }
            t.push(tl);
        }
        (s, t)
    }

    /// Constraint rows `C c ≤ d` of the problem at state `x`.
    fn constraints(&self, sets: &TightenedSets, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let cfg = &self.cfg;
        let m = cfg.m();
        let nn = cfg.horizon;
        let k = &cfg.regulator.k;
        let (s, t) = self.prediction();
        let mut rows: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
        for l in 1..=nn {
            let set = &sets.z[l - 1];
            rows.push((set.c() * &t[l], set.d() - set.c() * (&s[l] * x)));
        }
        for l in 0..nn {
            let set = &sets.v[l];
            // v_l = K(S_l x + T_l c) + E_l c
            let mut map = k * &t[l];
            for i in 0..m {
                map[(i, l * m + i)] += 1.0;
            }
            rows.push((set.c() * map, set.d() - set.c() * (k * (&s[l] * x))));
        }
        rows.push((sets.zf.c() * &t[nn], sets.zf.d() - sets.zf.c() * (&s[nn] * x)));
        let total: usize = rows.iter().map(|(c, _)| c.nrows()).sum();
        let mut c = DMatrix::zeros(total, m * nn);
        let mut d = DVector::zeros(total);
        let mut off = 0;
        for (ci, di) in rows {
            let r = ci.nrows();
            c.rows_mut(off, r).copy_from(&ci);
            d.rows_mut(off, r).copy_from(&di);
            off += r;
        }
        (c, d)
    }

    fn weight(&self) -> DMatrix<f64> {
        let m = self.cfg.m();
        let nn = self.cfg.horizon;
        let mut w = DMatrix::zeros(m * nn, m * nn);
        for l in 0..nn {
            w.view_mut((l * m, l * m), (m, m)).copy_from(&self.cfg.regulator.psi_tilde);
        }
        w
    }

    /// Minimize `Σ c_l'Ψ̃c_l` over the tightened sets from state `x`.
    pub fn solve_ocp(&self, sets: &TightenedSets, x: &DVector<f64>) -> Result<MpcSolution, MpcError> {
        let (c_mat, mut d) = self.constraints(sets, x);
        // a small inward margin so the polished optimum satisfies every row
        // exactly after rounding
        d.apply(|v| *v -= OCP_MARGIN * (1.0 + v.abs()));
        let weight = self.weight();
        let nv = weight.nrows();
        let prog = ConeProgram::new(&weight * 2.0, DVector::zeros(nv), c_mat.clone(), d.clone(), vec![Cone::NonNeg(c_mat.nrows())])
            .map_err(|e| MpcError::InvalidConfig(e.to_string()))?;
        let sol = conic::solve(&prog, &self.cfg.solver);
        let c = match sol.status {
            Status::Optimal => polish(&weight, &c_mat, &d, &sol.x, &sol.y),
            Status::PrimalInfeasible => return Err(MpcError::Infeasible),
            status => return Err(MpcError::SolverFailed(status)),
        };
        let (z, v) = self.rollout(x, &c);
        let cost = self.cfg.regulator.finite_horizon_cost(&c);
        Ok(MpcSolution { c, z, v, cost, status: Status::Optimal })
    }

    /// Shift `prev`, append a zero block and roll out from `x_new`.
    pub fn candidate(&self, prev: &MpcSolution, x_new: &DVector<f64>) -> Candidate {
        let m = self.cfg.m();
        let len = prev.c.len();
        let mut c_tilde = DVector::zeros(len);
        c_tilde.rows_mut(0, len - m).copy_from(&prev.c.rows(m, len - m));
        let (z_tilde, v_tilde) = self.rollout(x_new, &c_tilde);
        Candidate { c_tilde, z_tilde, v_tilde }
    }

    /// Largest deviation from the shift identities
    /// `z̃_l = z*_{l+1} + Φ^l w` and `ṽ_l = v*_{l+1} + KΦ^l w` for
    /// `l = 0..N-1` (the input identity for `l ≤ N-2`).
    pub fn shift_residual(&self, prev: &MpcSolution, cand: &Candidate, w: &DVector<f64>) -> (f64, f64) {
        let nn = self.cfg.horizon;
        let k = &self.cfg.regulator.k;
        let mut state: f64 = 0.0;
        let mut input: f64 = 0.0;
        for l in 0..nn {
            let pw = &self.powers[l] * w;
            state = state.max(inf_norm(&(&cand.z_tilde[l] - &prev.z[l + 1] - &pw)));
            if l + 1 < nn {
                input = input.max(inf_norm(&(&cand.v_tilde[l] - &prev.v[l + 1] - k * &pw)));
            }
        }
        (state, input)
    }

    /// Accept `fresh` when the candidate satisfies its state and terminal
    /// constraints, otherwise keep `held`.
    pub fn safe_update(&self, cand: &Candidate, fresh: TightenedSets, held: TightenedSets) -> (bool, TightenedSets) {
        let ok = safe_to_update(cand, &fresh, self.cfg.membership_tol);
        if ok {
            (true, fresh)
        } else {
            (false, held)
        }
    }
}

/// Membership test behind the safe update: `z̃_l ∈ Z_l` for
/// `l = 1..N-1` and `z̃_N ∈ Z_f`.
pub fn safe_to_update(cand: &Candidate, fresh: &TightenedSets, tol: f64) -> bool {
    let nn = fresh.z.len();
    (1..nn).all(|l| fresh.z[l - 1].contains(&cand.z_tilde[l], tol)) && fresh.zf.contains(&cand.z_tilde[nn], tol)
}

/// Refine an interior-point solution of `min c'Wc s.t. Cc ≤ d` by solving
/// the KKT system on the identified active set. The refined point is kept
/// only if it is feasible, has nonnegative multipliers and does not
/// increase the cost.
fn polish(weight: &DMatrix<f64>, c_mat: &DMatrix<f64>, d: &DVector<f64>, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
    let nv = x.len();
    let slack = d - c_mat * x;
    let scale = 1.0 + inf_norm(d);
    let active: Vec<usize> = (0..d.len()).filter(|&i| y[i] > slack[i] && slack[i] < 1e-5 * scale).collect();
    let na = active.len();
    let mut kkt = DMatrix::zeros(nv + na, nv + na);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(&(weight * 2.0));
    let mut rhs = DVector::zeros(nv + na);
    for (j, &i) in active.iter().enumerate() {
        for c in 0..nv {
            kkt[(nv + j, c)] = c_mat[(i, c)];
            kkt[(c, nv + j)] = c_mat[(i, c)];
        }
        rhs[nv + j] = d[i];
    }
    let svd = kkt.svd(true, true);
    let Ok(sol) = svd.solve(&rhs, 1e-12 * svd.singular_values.max()) else { return x.clone() };
    let xp = sol.rows(0, nv).clone_owned();
    let mult = sol.rows(nv, na);
    let feasible = (c_mat * &xp - d).iter().all(|&r| r <= 1e-10 * scale);
    let dual_ok = mult.iter().all(|&l| l >= -1e-9);
    let cost = |v: &DVector<f64>| v.dot(&(weight * v));
    if feasible && dual_ok && cost(&xp) <= cost(x) + 1e-12 * (1.0 + cost(x)) {
        xp
    } else {
        x.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub c: DVector<f64>,
    /// `z_0..z_N`.
    pub z: Vec<DVector<f64>>,
    /// `v_0..v_{N-1}`.
    pub v: Vec<DVector<f64>>,
    pub cost: f64,
    pub status: Status,
}

impl MpcSolution {
    /// The applied input `u = v_0 = Kx + c_0`.
    pub fn control_input(&self) -> DVector<f64> {
        self.v[0].clone()
    }

    /// First perturbation block `c_0`.
    pub fn first_block(&self, m: usize) -> DVector<f64> {
        self.c.rows(0, m).clone_owned()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub c_tilde: DVector<f64>,
    /// `z̃_0..z̃_N`.
    pub z_tilde: Vec<DVector<f64>>,
    pub v_tilde: Vec<DVector<f64>>,
}

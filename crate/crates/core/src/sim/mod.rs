//! Closed-loop simulation: offline priming, then per step solve, apply,
//! measure, learn, tighten and safely update.

mod generator;
mod io;
mod metrics;

pub use generator::{global_moment_baseline, DisturbanceSpec, GaussianComponent, Sampler};
pub use io::{read_log_csv, read_samples_csv, write_log_csv, write_samples_csv, LogRow};
pub use metrics::{metrics, Summary};

use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpmm::{DpmmError, LearnerSettings, MixtureEstimate, NwPrior, Posterior};
use crate::mpc::{Candidate, Mpc, MpcConfig, MpcError, TightenedSets};
use crate::tightening::TighteningResult;

/// Environment variable capping the number of concurrent runs.
pub const THREADS_ENV: &str = "DRMPC_THREADS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("initial state is outside the feasible region")]
    InitialInfeasible,
    #[error("optimal control problem became infeasible at step {0}")]
    LostFeasibility(usize),
    #[error("rejection sampling found no point of the support")]
    UnsupportedSupport,
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Dpmm(#[from] DpmmError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerMode {
    /// Learn a mixture online and update the tightening through the safe
    /// update.
    OnlineLearning,
    /// Same loop with a single pooled mean/covariance instead of a mixture.
    GlobalMoment,
    /// Keep the tightening computed from historical data.
    NoLearning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub cfg: MpcConfig,
    pub x0: DVector<f64>,
    /// Generator for the offline samples; `online` is used when absent.
    pub historical: Option<DisturbanceSpec>,
    pub online: DisturbanceSpec,
    pub historical_samples: usize,
    pub t_s: usize,
    pub runs: usize,
    pub seed: u64,
    pub mode: ControllerMode,
    pub prior: NwPrior,
    pub learner: LearnerSettings,
    /// Disturbances are zero from this step on.
    pub quiet_after: Option<usize>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |s: &str| Err(SimError::InvalidScenario(s.to_string()));
        self.cfg.validate()?;
        let n = self.cfg.n();
        if self.t_s == 0 || self.runs == 0 {
            return bad("simulation horizon and run count must be positive");
        }
        if self.x0.len() != n || self.x0.iter().any(|v| !v.is_finite()) {
            return bad("initial state has the wrong dimension or is not finite");
        }
        self.online.validate(n)?;
        if let Some(h) = &self.historical {
            h.validate(n)?;
        }
        self.prior.validate()?;
        if self.prior.dim() != n {
            return bad("prior dimension differs from the state dimension");
        }
        if self.mode == ControllerMode::GlobalMoment && self.historical_samples < 2 {
            return bad("the pooled-moment controller needs at least two historical samples");
        }
        Ok(())
    }
}

/// Wall-clock seconds spent in each phase of a step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub learn: f64,
    pub tighten: f64,
    pub sets: f64,
    pub ocp: f64,
}

impl PhaseTimes {
    pub(crate) fn add(&mut self, o: &PhaseTimes) {
        self.learn += o.learn;
        self.tighten += o.tighten;
        self.sets += o.sets;
        self.ocp += o.ocp;
    }

    pub(crate) fn scale(&mut self, f: f64) {
        self.learn *= f;
        self.tighten *= f;
        self.sets *= f;
        self.ocp *= f;
    }
}

/// One closed-loop step. The final record (`k = T_s`) carries the state
/// and input used in the cost but no disturbance or update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: Option<DVector<f64>>,
    /// Back-off of the sets used at this step.
    pub eta: DVector<f64>,
    /// Outcome of the safe update after this step.
    pub flag: Option<bool>,
    /// Optimal cost `J_k`.
    pub cost: f64,
    /// `c_0'Ψ̃c_0` of the optimal solution.
    pub first_stage: f64,
    pub c0_norm: f64,
    /// Shift-identity residuals for the state and input candidates.
    pub shift: Option<(f64, f64)>,
    /// Largest entry of `Gu − g`.
    pub input_excess: f64,
    /// Rows fallen back to the worst-case tightening in this step's update.
    pub eta_fallbacks: usize,
    pub times: PhaseTimes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub scenario: String,
    pub run: usize,
    pub steps: Vec<StepRecord>,
    /// `Σ_{k=1}^{T_s} x_k'Qx_k + u_k'Ru_k`.
    pub j_cost: f64,
    /// `violations[k-1][i]`: `H_i x_k > h_i` for `k = 1..=T_s`.
    pub violations: Vec<Vec<bool>>,
    /// Largest gap between drawn and recovered disturbances.
    pub recovery_error: f64,
    /// Back-off of the learned mixture computed at every step, including
    /// updates the safe scheme rejected (`learned_eta[0]` is the offline
    /// value).
    pub learned_eta: Vec<DVector<f64>>,
}

enum Learner {
    Dpmm(Box<Posterior>),
    Pooled(Vec<DVector<f64>>),
}

impl Learner {
    fn mixture(&self, scn: &Scenario) -> Result<MixtureEstimate, SimError> {
        let w = &scn.cfg.w_set;
        match self {
            Learner::Dpmm(p) => Ok(p.extract(w)?),
            Learner::Pooled(s) => global_moment_baseline(s, w, scn.learner.covariance_floor),
        }
    }

    fn observe(&mut self, batch: &[DVector<f64>]) -> Result<(), SimError> {
        match self {
            Learner::Dpmm(p) => {
                p.observe(batch)?;
                p.compress();
            }
            Learner::Pooled(s) => s.extend_from_slice(batch),
        }
        Ok(())
    }
}

/// Per-run random stream derived from the scenario seed.
pub fn run_rng(seed: u64, run_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index as u64);
    rng
}

/// Execute one closed loop.
pub fn run_closed_loop(scn: &Scenario, run_index: usize) -> Result<RunLog, SimError> {
    scn.validate()?;
    let mpc = Mpc::new(scn.cfg.clone())?;
    run_with(&mpc, scn, run_index)
}

/// [`run_closed_loop`] with a prebuilt controller.
pub fn run_with(mpc: &Mpc, scn: &Scenario, run_index: usize) -> Result<RunLog, SimError> {
    let cfg = mpc.config();
    let plant = &cfg.plant;
    let n = cfg.n();
    let mut rng = run_rng(scn.seed, run_index);
    let online = Sampler::new(scn.online.clone(), cfg.w_set.clone())?;
    let historical = match &scn.historical {
        Some(h) => Sampler::new(h.clone(), cfg.w_set.clone())?,
        None => online.clone(),
    };

    // offline priming
    let t = Instant::now();
    let hist: Vec<DVector<f64>> = (0..scn.historical_samples)
        .map(|_| historical.sample(&mut rng))
        .collect::<Result<_, _>>()?;
    let mut learner = match scn.mode {
        ControllerMode::GlobalMoment => Learner::Pooled(Vec::new()),
        _ => Learner::Dpmm(Box::new(Posterior::with_settings(scn.prior.clone(), scn.learner)?)),
    };
    if !hist.is_empty() {
        learner.observe(&hist)?;
    }
    let mix = learner.mixture(scn)?;
    let learn_time = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let tight = mpc.tighten(&mix)?;
    let tighten_time = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let mut active = mpc.build_sets(&tight.eta, 0)?;
    let mut pending = PhaseTimes { learn: learn_time, tighten: tighten_time, sets: t.elapsed().as_secs_f64(), ocp: 0.0 };
    let mut pending_fallbacks = tight.fallback.iter().filter(|f| **f).count();
    let mut learned_eta = vec![tight.eta.clone()];

    let mut x = scn.x0.clone();
    let mut steps: Vec<StepRecord> = Vec::with_capacity(scn.t_s + 1);
    let mut recovery_error: f64 = 0.0;
    let psi = &cfg.regulator.psi_tilde;
    let m = cfg.m();
    for k in 0..=scn.t_s {
        let t = Instant::now();
        let sol = match mpc.solve_ocp(&active, &x) {
            Ok(s) => s,
            Err(MpcError::Infeasible) if k == 0 => return Err(SimError::InitialInfeasible),
            Err(MpcError::Infeasible) => return Err(SimError::LostFeasibility(k)),
            Err(e) => return Err(e.into()),
        };
        let mut times = pending;
        times.ocp = t.elapsed().as_secs_f64();
        let u = sol.control_input();
        let c0 = sol.first_block(m);
        let input_excess = (cfg.u_set.c() * &u - cfg.u_set.d()).max();
        let mut rec = StepRecord {
            k,
            x: x.clone(),
            u: u.clone(),
            w: None,
            eta: active.eta.clone(),
            flag: None,
            cost: sol.cost,
            first_stage: c0.dot(&(psi * &c0)),
            c0_norm: c0.norm(),
            shift: None,
            input_excess,
            eta_fallbacks: pending_fallbacks,
            times,
        };
        if k == scn.t_s {
            steps.push(rec);
            break;
        }

        let w = if scn.quiet_after.is_some_and(|q| k >= q) { DVector::zeros(n) } else { online.sample(&mut rng)? };
        let x_next = &plant.a * &x + &plant.b * &u + &w;
        let w_rec = &x_next - &plant.a * &x - &plant.b * &u;
        recovery_error = recovery_error.max((&w_rec - &w).amax());

        let cand = mpc.candidate(&sol, &x_next);
        rec.shift = Some(mpc.shift_residual(&sol, &cand, &w));
        pending = PhaseTimes::default();
        pending_fallbacks = 0;
        if scn.mode != ControllerMode::NoLearning {
            let t = Instant::now();
            learner.observe(std::slice::from_ref(&w_rec))?;
            let mix = learner.mixture(scn)?;
            pending.learn = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let tight = mpc.tighten(&mix)?;
            pending.tighten = t.elapsed().as_secs_f64();
            pending_fallbacks = tight.fallback.iter().filter(|f| **f).count();
            learned_eta.push(tight.eta.clone());
            let t = Instant::now();
            let (flag, next) = update(mpc, &tight, &cand, active, k + 1)?;
            pending.sets = t.elapsed().as_secs_f64();
            rec.flag = Some(flag);
            active = next;
        }
        rec.w = Some(w);
        steps.push(rec);
        x = x_next;
    }

    let q = &plant.q;
    let r = &plant.r;
    let j_cost = steps[1..].iter().map(|s| s.x.dot(&(q * &s.x)) + s.u.dot(&(r * &s.u))).sum();
    let h = cfg.x_set.c();
    let hb = cfg.x_set.d();
    let violations = steps[1..]
        .iter()
        .map(|s| {
            let hx = h * &s.x;
            (0..hx.len()).map(|i| hx[i] > hb[i]).collect()
        })
        .collect();
    Ok(RunLog { scenario: scn.name.clone(), run: run_index, steps, j_cost, violations, recovery_error, learned_eta })
}

/// Build the fresh sets and apply the safe update. A fresh tightening
/// whose sets cannot be built is treated like a rejected update.
fn update(
    mpc: &Mpc,
    tight: &TighteningResult,
    cand: &Candidate,
    held: TightenedSets,
    epoch: usize,
) -> Result<(bool, TightenedSets), SimError> {
    match mpc.build_sets(&tight.eta, epoch) {
        Ok(fresh) => Ok(mpc.safe_update(cand, fresh, held)),
        Err(MpcError::EmptyStageSet(_) | MpcError::EmptyTerminalSet(_)) => Ok((false, held)),
        Err(e) => Err(e.into()),
    }
}

/// Number of worker threads: `DRMPC_THREADS` if set to a positive
/// integer, otherwise rayon's default.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// All runs of a scenario, in run order, executed concurrently.
pub fn run_all(scn: &Scenario) -> Result<Vec<Result<RunLog, SimError>>, SimError> {
    scn.validate()?;
    let mpc = Mpc::new(scn.cfg.clone())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| SimError::Io(e.to_string()))?;
    Ok(pool.install(|| (0..scn.runs).into_par_iter().map(|i| run_with(&mpc, scn, i)).collect()))
}

/// Cost-decrease slack `J_{k+1} − J_k + c_0'Ψ̃c_0` for every step.
pub fn cost_decrease_excess(log: &RunLog) -> Vec<f64> {
    log.steps.windows(2).map(|p| p[1].cost - p[0].cost + p[0].first_stage).collect()
}

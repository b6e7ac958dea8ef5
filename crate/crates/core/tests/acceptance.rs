//! End-to-end acceptance gate. Every test prints one `criterion N:` line
//! before asserting, so `--nocapture` gives a readable report.

mod common;

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drmpc::config::{load_config, SimConfig};
use drmpc::conic::{solve, solve_lp, Cone, ConeProgram, Settings, Status};
use drmpc::linalg::powers;
use drmpc::mpc::Mpc;
use drmpc::polytope::{minimal_rpi_support, HPolytope};
use drmpc::regulator::synthesize;
use drmpc::sim::{cost_decrease_excess, metrics, run_all, run_closed_loop, ControllerMode, RunLog, Scenario, SimError};
use drmpc::tightening::{solve_eta, solve_row, wc_cvar_oracle, worst_case_eta};

fn load(name: &str) -> SimConfig {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    load_config(&path).unwrap()
}

fn with_mode(name: &str, mode: ControllerMode) -> Scenario {
    let mut scn = load(name).scenario;
    scn.mode = mode;
    scn
}

fn report(n: usize, ok: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

struct Batch {
    scn: Scenario,
    runs: Vec<Result<RunLog, SimError>>,
    seconds: f64,
}

impl Batch {
    fn new(scn: Scenario) -> Batch {
        let t = Instant::now();
        let runs = run_all(&scn).unwrap();
        Batch { scn, runs, seconds: t.elapsed().as_secs_f64() }
    }

    fn logs(&self) -> Vec<RunLog> {
        self.runs.iter().filter_map(|r| r.as_ref().ok().cloned()).collect()
    }
}

struct Runs {
    online_52: Batch,
    frozen_52: Batch,
    online_51: Batch,
    global_51: Batch,
    fallback_53: Batch,
}

impl Runs {
    fn all(&self) -> [&Batch; 5] {
        [&self.online_52, &self.frozen_52, &self.online_51, &self.global_51, &self.fallback_53]
    }
}

fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| Runs {
        online_52: Batch::new(with_mode("example_5_2.cfg", ControllerMode::OnlineLearning)),
        frozen_52: Batch::new(with_mode("example_5_2.cfg", ControllerMode::NoLearning)),
        online_51: Batch::new(with_mode("example_5_1.cfg", ControllerMode::OnlineLearning)),
        global_51: Batch::new(with_mode("example_5_1.cfg", ControllerMode::GlobalMoment)),
        fallback_53: Batch::new(load("example_5_3.cfg").scenario),
    })
}

#[test]
fn criterion_01_lqr_reproduction() {
    let plant = load("example_5_1.cfg").scenario.cfg.plant;
    let t = Instant::now();
    let reg = synthesize(&plant).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let k = DMatrix::from_row_slice(1, 2, &[-0.6609, -1.3261]);
    let phi = DMatrix::from_row_slice(2, 2, &[0.6696, 0.3370, -0.6609, -0.3261]);
    let dk = (&reg.k - k).amax();
    let dphi = (&reg.phi - phi).amax();
    report(1, dk <= 5e-4 && dphi <= 5e-4 && secs < 0.01, format!("|dK| {dk:.1e}, |dPhi| {dphi:.1e}, {:.2} ms", secs * 1e3));
}

#[test]
fn criterion_02_tightening_oracle() {
    let start = Instant::now();
    let settings = Settings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gap: f64 = 0.0;
    let mut dominated = true;
    for dim in [1, 2] {
        let count = if dim == 1 { 20 } else { 5 };
        for _ in 0..count {
            let amb = if dim == 1 { common::random_1d(&mut rng) } else { common::random_2d(&mut rng) };
            let hrow = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
            let e = rng.random_range(0.05..0.5);
            let (got, _) = solve_row(&amb, &hrow, e, false, &settings).unwrap();
            let grid = if dim == 1 { 241 } else { 61 };
            let oracle = wc_cvar_oracle(&amb, &hrow, e, grid).unwrap();
            gap = gap.max((got - oracle).abs());
            let eta0 = worst_case_eta(amb.support(), &DMatrix::from_row_slice(1, dim, hrow.as_slice())).unwrap();
            dominated &= got <= eta0[0] + 1e-6;
        }
    }
    let levels: Vec<f64> = (1..=10).map(|i| 0.05 * i as f64).collect();
    let mut monotone = true;
    for _ in 0..3 {
        let amb = common::random_2d(&mut rng);
        let h = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        let eta0 = worst_case_eta(amb.support(), &h).unwrap();
        let mut prev: Option<DVector<f64>> = None;
        for &e in &levels {
            let eta = solve_eta(&amb, &h, &[e, e], false, &settings).unwrap().eta;
            dominated &= (0..2).all(|i| eta[i] <= eta0[i] + 1e-6);
            if let Some(p) = &prev {
                monotone &= (0..2).all(|i| eta[i] <= p[i] + 1e-6);
            }
            prev = Some(eta);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        gap <= 2e-3 && dominated && monotone && secs < 60.0,
        format!("max gap {gap:.1e}, dominated {dominated}, monotone {monotone}, {secs:.1} s"),
    );
}

/// Least-squares slope of a series against its index.
fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = ys.iter().enumerate().map(|(i, y)| (i as f64 - mx) * (y - my)).sum();
    let den: f64 = (0..ys.len()).map(|i| (i as f64 - mx).powi(2)).sum();
    num / den
}

#[test]
fn criterion_03_changing_distribution() {
    let r = runs();
    let online = metrics(&r.online_52.logs(), &r.online_52.scn);
    let frozen = metrics(&r.frozen_52.logs(), &r.frozen_52.scn);
    let ol = online.violation_pct[0];
    let nl = frozen.violation_pct[0];
    let trace: Vec<f64> = online.mean_eta.iter().map(|e| e[0]).collect();
    let (first, last) = (trace[0], *trace.last().unwrap());
    let rate = online.flag_rate.unwrap_or(0.0);
    let secs = r.online_52.seconds + r.frozen_52.seconds;
    let checks = [
        r.online_52.scn.runs == 100 && r.online_52.scn.t_s == 20 && r.online_52.scn.cfg.horizon == 9,
        ol <= 12.0,
        nl >= 17.0,
        nl - ol >= 8.0,
        slope(&trace) > 0.0 && first <= 0.03 && (0.05..=0.15).contains(&last),
        rate >= 0.95,
        secs < 600.0,
    ];
    report(
        3,
        checks.iter().all(|c| *c),
        format!("violation online {ol:.2}% vs frozen {nl:.2}%, eta {first:.4} -> {last:.4}, flag rate {rate:.3}, {secs:.1} s"),
    );
}

#[test]
fn criterion_04_mixture_beats_pooled_moments() {
    let r = runs();
    let online = metrics(&r.online_51.logs(), &r.online_51.scn);
    let global = metrics(&r.global_51.logs(), &r.global_51.scn);
    let paired = online.runs == 100 && global.runs == 100 && r.online_51.scn.seed == r.global_51.scn.seed;
    let reduction = (global.mean_cost - online.mean_cost) / global.mean_cost;
    report(
        4,
        paired && (0.03..=0.20).contains(&reduction),
        format!("mean cost {:.3} vs {:.3}, reduction {:.2}%", online.mean_cost, global.mean_cost, 100.0 * reduction),
    );
}

#[test]
fn criterion_05_recursive_feasibility() {
    let r = runs();
    let mut loops = 0;
    let mut lost = 0;
    let mut other = Vec::new();
    for b in r.all() {
        for run in &b.runs {
            loops += 1;
            match run {
                Ok(_) => {}
                Err(SimError::LostFeasibility(_)) => lost += 1,
                Err(e) => other.push(format!("{}: {e}", b.scn.name)),
            }
        }
    }
    report(5, loops >= 300 && lost == 0 && other.is_empty(), format!("{loops} loops, {lost} lost feasibility, other errors {other:?}"));
}

fn unit_circle(count: usize) -> Vec<DVector<f64>> {
    (0..count)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / count as f64;
            DVector::from_row_slice(&[t.cos(), t.sin()])
        })
        .collect()
}

#[test]
fn criterion_06_convergence() {
    let r = runs();
    let mut excess = f64::NEG_INFINITY;
    for b in r.all() {
        for log in b.logs() {
            excess = cost_decrease_excess(&log).into_iter().fold(excess, f64::max);
        }
    }

    let mut quiet = load("example_5_1.cfg").scenario;
    quiet.quiet_after = Some(quiet.t_s);
    quiet.t_s += 40;
    let mut tail: f64 = 0.0;
    for run in 0..5 {
        let log = run_closed_loop(&quiet, run).unwrap();
        excess = cost_decrease_excess(&log).into_iter().fold(excess, f64::max);
        tail = tail.max(log.steps.last().unwrap().c0_norm);
    }

    let cfg = load("example_5_1.cfg");
    let dirs = unit_circle(16);
    let reg = &cfg.scenario.cfg.regulator;
    let bounds = minimal_rpi_support(&reg.phi, &cfg.scenario.cfg.w_set, &dirs, cfg.analysis.rpi_alpha).unwrap();
    let mut outside = f64::NEG_INFINITY;
    for log in r.online_51.logs().iter().chain(&r.global_51.logs()) {
        for s in log.steps.iter().filter(|s| s.k >= 15) {
            for (a, b) in dirs.iter().zip(&bounds) {
                outside = outside.max(a.dot(&s.x) - b);
            }
        }
    }
    report(
        6,
        excess <= 1e-7 && tail < 1e-6 && outside <= 0.05,
        format!("cost-decrease excess {excess:.1e}, noiseless |c0| {tail:.1e}, largest R-inf excursion {outside:.3}"),
    );
}

#[test]
fn criterion_07_shift_identities() {
    let r = runs();
    let mut worst: f64 = 0.0;
    let mut steps = 0;
    for b in r.all() {
        for log in b.logs() {
            for (ds, du) in log.steps.iter().filter_map(|s| s.shift) {
                worst = worst.max(ds).max(du);
                steps += 1;
            }
        }
    }
    report(7, steps > 0 && worst <= 1e-10, format!("{steps} steps, largest residual {worst:.1e}"));
}

/// Uniform point of a bounded polytope by box rejection.
fn uniform_point(p: &HPolytope, rng: &mut impl Rng) -> DVector<f64> {
    let n = p.dim();
    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            (-p.support(&(-&e)).unwrap(), p.support(&e).unwrap())
        })
        .collect();
    loop {
        let x = DVector::from_fn(n, |j, _| rng.random_range(bounds[j].0..=bounds[j].1));
        if p.contains(&x, 0.0) {
            return x;
        }
    }
}

/// Count of sampled `z ∈ Zf`, `w ∈ W` with `Φz + Φ^N w ∉ Zf`.
fn invariance_failures(mpc: &Mpc, zf: &HPolytope, rng: &mut impl Rng) -> usize {
    let cfg = mpc.config();
    let phi = &cfg.regulator.phi;
    let dmap = powers(phi, cfg.horizon + 1)[cfg.horizon].clone();
    let w_verts = common::vertices(cfg.w_set.c(), cfg.w_set.d());
    (0..10_000)
        .filter(|i| {
            let z = uniform_point(zf, rng);
            // alternate interior draws with vertices of W
            let w = if i % 2 == 0 { uniform_point(&cfg.w_set, rng) } else { w_verts[rng.random_range(0..w_verts.len())].clone() };
            !zf.contains(&(phi * z + &dmap * w), 1e-9)
        })
        .count()
}

#[test]
fn criterion_08_terminal_sets() {
    let r = runs();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mpc_51 = Mpc::new(r.online_51.scn.cfg.clone()).unwrap();
    let learned = r.online_51.logs()[0].steps.last().unwrap().eta.clone();
    let zf_51 = mpc_51.build_sets(&learned, 0).unwrap().zf;
    let mpc_53 = Mpc::new(r.fallback_53.scn.cfg.clone()).unwrap();
    let failures = invariance_failures(&mpc_51, &zf_51, &mut rng)
        + invariance_failures(&mpc_51, mpc_51.fallback_terminal(), &mut rng)
        + invariance_failures(&mpc_53, mpc_53.fallback_terminal(), &mut rng);

    let mut nonempty = true;
    for name in ["example_5_1.cfg", "example_5_2.cfg", "example_5_3.cfg"] {
        let mpc = Mpc::new(load(name).scenario.cfg).unwrap();
        nonempty &= !mpc.fallback_terminal().is_empty().unwrap();
    }

    let mut checked = 0;
    let mut excess = f64::NEG_INFINITY;
    for b in [&r.online_52, &r.frozen_52, &r.online_51, &r.global_51] {
        let mpc = Mpc::new(b.scn.cfg.clone()).unwrap();
        let fallback = mpc.fallback_terminal();
        let mut etas: Vec<Vec<f64>> = b
            .logs()
            .iter()
            .flat_map(|l| l.learned_eta.iter().chain(l.steps.iter().map(|s| &s.eta)).map(|e| e.as_slice().to_vec()).collect::<Vec<_>>())
            .collect();
        etas.sort_by(|x, y| x.partial_cmp(y).unwrap());
        etas.dedup();
        for eta in etas {
            let Ok(sets) = mpc.build_sets(&DVector::from_vec(eta), 0) else { continue };
            checked += 1;
            for i in 0..sets.zf.n_rows() {
                let row = sets.zf.c().row(i).transpose();
                excess = excess.max(fallback.support(&row).unwrap() - sets.zf.d()[i]);
            }
        }
    }
    report(
        8,
        failures == 0 && nonempty && checked > 0 && excess <= 1e-9,
        format!("{failures} invariance failures in 3x10^4 samples, fallbacks nonempty {nonempty}, {checked} online sets, containment excess {excess:.1e}"),
    );
}

#[test]
fn criterion_09_four_state_scale() {
    let b = &runs().fallback_53;
    let logs = b.logs();
    let complete = b.scn.t_s == 20 && b.scn.cfg.horizon == 6 && logs.len() == b.runs.len() && logs.iter().all(|l| l.steps.len() == 21);
    let ocp = logs.iter().flat_map(|l| l.steps.iter().map(|s| s.times.ocp)).fold(0.0, f64::max);
    let tighten = logs.iter().flat_map(|l| l.steps.iter().map(|s| s.times.tighten)).fold(0.0, f64::max);
    report(
        9,
        complete && ocp < 2.0 && tighten < 2.0,
        format!("{} runs complete, slowest OCP {:.1} ms, slowest tightening {:.1} ms", logs.len(), ocp * 1e3, tighten * 1e3),
    );
}

#[test]
fn criterion_10_solver_gate() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut gap: f64 = 0.0;
    for i in 0..100 {
        let (c, d) = if i % 2 == 0 { common::random_rows(&mut rng, 3, 6) } else { common::random_bounded(&mut rng, 2, 4) };
        let q = DVector::from_fn(c.ncols(), |_, _| rng.random_range(-1.0..1.0));
        let (val, _) = solve_lp(&c, &d, &q).unwrap();
        let oracle = common::vertices(&c, &d).iter().map(|v| q.dot(v)).fold(f64::INFINITY, f64::min);
        gap = gap.max((val - oracle).abs());
    }

    // min t s.t. [[t, 1], [1, t]] ⪰ 0 has optimum t = 1
    let s2 = std::f64::consts::SQRT_2;
    let a = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, -1.0]);
    let b = DVector::from_row_slice(&[0.0, s2, 0.0]);
    let prog = ConeProgram::linear(DVector::from_element(1, 1.0), a, b, vec![Cone::Psd(2)]).unwrap();
    let sol = solve(&prog, &Settings::default());
    let sdp = (sol.x[0] - 1.0).abs();
    report(
        10,
        gap <= 1e-7 && sol.status == Status::Optimal && sdp <= 1e-7,
        format!("largest LP gap {gap:.1e}, SDP error {sdp:.1e}"),
    );
}

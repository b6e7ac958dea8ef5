use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use drmpc::linalg::powers;
use drmpc::mpc::{safe_to_update, Mpc, MpcConfig, TerminalMode, TightenedSets};
use drmpc::polytope::HPolytope;
use drmpc::regulator::Plant;

fn double_integrator(mode: TerminalMode) -> Mpc {
    let plant = Plant::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
        DMatrix::identity(2, 2),
        DMatrix::from_element(1, 1, 0.01),
    )
    .unwrap();
    let x = HPolytope::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), DVector::from_element(1, 2.0)).unwrap();
    let cfg = MpcConfig::new(
        plant,
        9,
        x,
        vec![0.2],
        HPolytope::symmetric_box(&[5.0]).unwrap(),
        HPolytope::symmetric_box(&[0.6, 0.6]).unwrap(),
        mode,
    )
    .unwrap();
    Mpc::new(cfg).unwrap()
}

/// Constraint rows on the perturbations, assembled from the sets by
/// explicit forward simulation of the nominal dynamics.
fn stacked_constraints(mpc: &Mpc, sets: &TightenedSets, x: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let cfg = mpc.config();
    let nn = cfg.horizon;
    let phi = &cfg.regulator.phi;
    let k = &cfg.regulator.k;
    let b = &cfg.plant.b;
    // column j of the response: unit perturbation at step j
    let mut z_lin: Vec<DMatrix<f64>> = vec![DMatrix::zeros(2, nn)];
    let mut z_aff = vec![x.clone()];
    for l in 0..nn {
        let mut next = phi * &z_lin[l];
        next.column_mut(l).axpy(1.0, &b.column(0), 1.0);
        z_lin.push(next);
        z_aff.push(phi * &z_aff[l]);
    }
    let mut rows_c = Vec::new();
    let mut rows_d = Vec::new();
    let mut push = |set: &HPolytope, lin: DMatrix<f64>, aff: DVector<f64>| {
        for i in 0..set.n_rows() {
            let a = set.c().row(i);
            rows_c.push(a * &lin);
            rows_d.push(set.d()[i] - (a * &aff)[0]);
        }
    };
    for l in 1..=nn {
        push(&sets.z[l - 1], z_lin[l].clone(), z_aff[l].clone());
    }
    for l in 0..nn {
        let mut lin = k * &z_lin[l];
        lin[(0, l)] += 1.0;
        push(&sets.v[l], lin, k * &z_aff[l]);
    }
    push(&sets.zf, z_lin[nn].clone(), z_aff[nn].clone());
    let c = DMatrix::from_fn(rows_c.len(), nn, |i, j| rows_c[i][(0, j)]);
    (c, DVector::from_vec(rows_d))
}

/// Minimum of `Σ ψ c_l²` by enumerating active sets of up to three rows.
fn active_set_minimum(psi: f64, c: &DMatrix<f64>, d: &DVector<f64>) -> Option<f64> {
    let nv = c.ncols();
    let rows = c.nrows();
    let tol = 1e-9 * (1.0 + d.amax());
    let mut best: Option<f64> = None;
    let mut try_set = |set: &[usize]| {
        let na = set.len();
        let mut kkt = DMatrix::zeros(nv + na, nv + na);
        for i in 0..nv {
            kkt[(i, i)] = 2.0 * psi;
        }
        let mut rhs = DVector::zeros(nv + na);
        for (j, &r) in set.iter().enumerate() {
            for col in 0..nv {
                kkt[(nv + j, col)] = c[(r, col)];
                kkt[(col, nv + j)] = c[(r, col)];
            }
            rhs[nv + j] = d[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { return };
        if !sol.iter().all(|v| v.is_finite()) {
            return;
        }
        let cv = sol.rows(0, nv).clone_owned();
        let feasible = (c * &cv - d).iter().all(|&r| r <= tol);
        let dual_ok = sol.rows(nv, na).iter().all(|&l| l >= -1e-9);
        if feasible && dual_ok {
            let cost = psi * cv.norm_squared();
            best = Some(best.map_or(cost, |b: f64| b.min(cost)));
        }
    };
    try_set(&[]);
    for i in 0..rows {
        try_set(&[i]);
        for j in i + 1..rows {
            try_set(&[i, j]);
            for k in j + 1..rows {
                try_set(&[i, j, k]);
            }
        }
    }
    best
}

#[test]
fn lqr_feasible_states_need_no_perturbation() {
    let mpc = double_integrator(TerminalMode::OnlineMrpi);
    let sets = mpc.build_sets(&DVector::from_element(1, 0.3), 0).unwrap();
    for x in [[0.0, 0.0], [0.3, -0.2], [-0.5, 0.1]] {
        let x = DVector::from_row_slice(&x);
        let (_, d) = stacked_constraints(&mpc, &sets, &x);
        assert!(d.iter().all(|&v| v >= 0.0), "c = 0 must be feasible at {x}");
        let sol = mpc.solve_ocp(&sets, &x).unwrap();
        assert!(sol.c.amax() < 1e-8, "{}", sol.c);
        assert!(sol.cost < 1e-14);
    }
}

#[test]
fn optimal_cost_matches_active_set_enumeration() {
    let mpc = double_integrator(TerminalMode::OnlineMrpi);
    let psi = mpc.config().regulator.psi_tilde[(0, 0)];
    let mut checked = 0;
    for eta in [0.05, 0.3, 0.6] {
        let sets = mpc.build_sets(&DVector::from_element(1, eta), 0).unwrap();
        for x in [[-5.0, -2.0], [-3.0, 1.5], [2.0, 1.0], [-6.0, 0.0]] {
            let x = DVector::from_row_slice(&x);
            let (c, d) = stacked_constraints(&mpc, &sets, &x);
            let Some(oracle) = active_set_minimum(psi, &c, &d) else { continue };
            let sol = mpc.solve_ocp(&sets, &x).unwrap();
            assert!((sol.cost - oracle).abs() <= 1e-6 * (1.0 + oracle), "eta {eta} x {x}: {} vs {oracle}", sol.cost);
            checked += 1;
        }
    }
    assert!(checked >= 6, "only {checked} instances had at most three active rows");
}

#[test]
fn stacked_rows_agree_with_the_rollout() {
    let mpc = double_integrator(TerminalMode::OnlineMrpi);
    let sets = mpc.build_sets(&DVector::from_element(1, 0.2), 0).unwrap();
    let x = DVector::from_row_slice(&[-5.0, -2.0]);
    let sol = mpc.solve_ocp(&sets, &x).unwrap();
    let (c, d) = stacked_constraints(&mpc, &sets, &x);
    assert!((&c * &sol.c - &d).max() <= 0.0);
    let (z, v) = mpc.rollout(&x, &sol.c);
    assert_eq!(z, sol.z);
    assert_eq!(v, sol.v);
}

#[test]
fn safe_update_accepts_the_held_sets() {
    let mpc = double_integrator(TerminalMode::OnlineMrpi);
    let held = mpc.build_sets(&DVector::from_element(1, 0.2), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut x = DVector::from_row_slice(&[-5.0, -2.0]);
    for _ in 0..10 {
        let sol = mpc.solve_ocp(&held, &x).unwrap();
        let w = DVector::from_fn(2, |_, _| rng.random_range(-0.6..=0.6));
        let cfg = mpc.config();
        x = &cfg.plant.a * &x + &cfg.plant.b * sol.control_input() + w;
        let cand = mpc.candidate(&sol, &x);
        let (flag, _) = mpc.safe_update(&cand, held.clone(), held.clone());
        assert!(flag);
    }
}

#[test]
fn safe_update_rejects_the_worst_case_jump_and_accepts_no_tightening() {
    let mpc = double_integrator(TerminalMode::OnlineMrpi);
    let loose = mpc.build_sets(&DVector::zeros(1), 0).unwrap();
    let x = DVector::from_row_slice(&[-5.0, -2.0]);
    let sol = mpc.solve_ocp(&loose, &x).unwrap();
    let cfg = mpc.config();
    let x1 = &cfg.plant.a * &x + &cfg.plant.b * sol.control_input();
    let cand = mpc.candidate(&sol, &x1);
    // the trajectory rides the state constraint, so the worst-case back-off
    // cuts it off
    let worst = mpc.build_sets(mpc.eta0(), 1).unwrap();
    let (flag, kept) = mpc.safe_update(&cand, worst, loose.clone());
    assert!(!flag);
    assert_eq!(kept, loose);

    let tight = mpc.build_sets(&DVector::from_element(1, 0.4), 0).unwrap();
    let sol = mpc.solve_ocp(&tight, &x).unwrap();
    let x1 = &cfg.plant.a * &x + &cfg.plant.b * sol.control_input() + DVector::from_row_slice(&[0.6, -0.6]);
    let cand = mpc.candidate(&sol, &x1);
    assert!(safe_to_update(&cand, &tight, cfg.membership_tol));
    let (flag, next) = mpc.safe_update(&cand, loose.clone(), tight);
    assert!(flag);
    assert_eq!(next, loose);
}

#[test]
fn offline_terminal_set_is_inside_every_online_one() {
    let online = double_integrator(TerminalMode::OnlineMrpi);
    let fallback = online.fallback_terminal();
    for eta in [0.0, 0.1, 0.35, 0.6] {
        let zf = online.build_sets(&DVector::from_element(1, eta), 0).unwrap().zf;
        for i in 0..zf.n_rows() {
            let a = zf.c().row(i).transpose();
            assert!(fallback.support(&a).unwrap() <= zf.d()[i] + 1e-9);
        }
    }
    let offline = double_integrator(TerminalMode::OfflineFallback);
    let sets = offline.build_sets(&DVector::from_element(1, 0.1), 0).unwrap();
    assert_eq!(&sets.zf, offline.fallback_terminal());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// One closed-loop step: shift identities, feasibility of the shifted
    /// candidate and the cost decrease bound.
    #[test]
    fn one_step_invariants(seed in any::<u64>(), eta in 0.0f64..0.6) {
        let mpc = double_integrator(TerminalMode::OnlineMrpi);
        let cfg = mpc.config();
        let sets = mpc.build_sets(&DVector::from_element(1, eta), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DVector::from_row_slice(&[rng.random_range(-6.0..2.0), rng.random_range(-2.5..1.5)]);
        let Ok(sol) = mpc.solve_ocp(&sets, &x) else { return Ok(()) };
        let w = DVector::from_fn(2, |_, _| rng.random_range(-0.6..=0.6));
        let x1 = &cfg.plant.a * &x + &cfg.plant.b * sol.control_input() + &w;
        let cand = mpc.candidate(&sol, &x1);
        let (ds, du) = mpc.shift_residual(&sol, &cand, &w);
        prop_assert!(ds <= 1e-10 && du <= 1e-10);

        // z̃_l = z*_{l+1} + Φ^l w, recomputed here
        let pw = powers(&cfg.regulator.phi, cfg.horizon);
        for l in 0..cfg.horizon {
            let expect = &sol.z[l + 1] + &pw[l] * &w;
            prop_assert!((&cand.z_tilde[l] - expect).amax() <= 1e-10);
        }
        let (c, d) = stacked_constraints(&mpc, &sets, &x1);
        prop_assert!((&c * &cand.c_tilde - &d).max() <= 1e-9);

        let next = mpc.solve_ocp(&sets, &x1).unwrap();
        let c0 = sol.first_block(1);
        let decrease = next.cost - sol.cost + cfg.regulator.psi_tilde[(0, 0)] * c0[0] * c0[0];
        prop_assert!(decrease <= 1e-7, "excess {decrease}");
    }
}

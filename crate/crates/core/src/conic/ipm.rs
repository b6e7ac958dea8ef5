use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::cones::{Cone, BlockMatrix, Scaling};
use super::{ConeProgram, ConeSolution, Settings, Status};
use crate::linalg::inf_norm;

const STEP_FRACTION: f64 = 0.99;

struct Blocks {
    list: Vec<(Cone, usize)>,
    zero_rows: Vec<usize>,
    degree: usize,
}

impl Blocks {
    fn new(prog: &ConeProgram) -> Self {
        let list: Vec<(Cone, usize)> = prog.blocks().collect();
        let mut zero_rows = Vec::new();
        for &(c, off) in &list {
            if let Cone::Zero(d) = c {
                zero_rows.extend(off..off + d);
            }
        }
        let degree = list.iter().map(|(c, _)| c.degree()).sum();
        Blocks { list, zero_rows, degree }
    }
}

/// Above this many rows plus variables, or with many more rows than
/// variables, the KKT system is condensed onto the variables (normal
/// equations) instead of being factorized whole.
const FULL_KKT_LIMIT: usize = 800;
const TALL_RATIO: usize = 10;

enum Factor {
    /// LU of the whole regularized system `[P+δI A'; A −(H+δI)]`.
    Full(LU<f64, Dyn, Dyn>),
    /// LU of `P + A'H⁻¹A + δI` bordered by the zero-cone rows.
    Reduced { lu: LU<f64, Dyn, Dyn>, hinv: Vec<BlockMatrix> },
}

/// Factorized KKT system `[P A'; A −H] [dx; dz] = [rx; rz]`.
struct Kkt<'a> {
    prog: &'a ConeProgram,
    blocks: &'a Blocks,
    scalings: &'a [Scaling],
    factor: Factor,
    refine_steps: usize,
}

impl<'a> Kkt<'a> {
    fn factor(prog: &'a ConeProgram, blocks: &'a Blocks, scalings: &'a [Scaling], reg: f64, refine_steps: usize) -> Option<Self> {
        let n = prog.n_vars();
        let m = prog.n_rows();
        let factor = if n + m <= FULL_KKT_LIMIT && m <= TALL_RATIO * n.max(1) {
            Self::factor_full(prog, blocks, scalings, reg)?
        } else {
            Self::factor_reduced(prog, blocks, scalings, reg)?
        };
        Some(Kkt { prog, blocks, scalings, factor, refine_steps })
    }

    fn factor_full(prog: &ConeProgram, blocks: &Blocks, scalings: &[Scaling], reg: f64) -> Option<Factor> {
        let n = prog.n_vars();
        let m = prog.n_rows();
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(prog.p());
        k.view_mut((n, 0), (m, n)).copy_from(prog.a());
        k.view_mut((0, n), (n, m)).copy_from(&prog.a().transpose());
        for i in 0..n {
            k[(i, i)] += reg;
        }
        for ((cone, off), sc) in blocks.list.iter().zip(scalings) {
            let d = cone.dim();
            let base = n + off;
            match sc.h_mat(d) {
                BlockMatrix::Zero => {}
                BlockMatrix::Diag(diag) => {
                    for (i, h) in diag.iter().enumerate() {
                        k[(base + i, base + i)] = -h;
                    }
                }
                BlockMatrix::Dense(hm) => {
                    k.view_mut((base, base), (d, d)).copy_from(&(-hm));
                }
            }
        }
        for i in 0..m {
            k[(n + i, n + i)] -= reg;
        }
        let lu = k.lu();
        lu.is_invertible().then_some(Factor::Full(lu))
    }

    fn factor_reduced(prog: &ConeProgram, blocks: &Blocks, scalings: &[Scaling], reg: f64) -> Option<Factor> {
        let hinv: Vec<BlockMatrix> = blocks.list.iter().zip(scalings).map(|((c, _), s)| s.h_inv(c.dim())).collect();
        let n = prog.n_vars();
        let nz = blocks.zero_rows.len();
        let mut m = DMatrix::zeros(n + nz, n + nz);
        {
            let mut top = m.view_mut((0, 0), (n, n));
            top += prog.p();
            for ((cone, off), h) in blocks.list.iter().zip(&hinv) {
                let d = cone.dim();
                if d == 0 {
                    continue;
                }
                let ab = prog.a().rows(*off, d);
                match h {
                    BlockMatrix::Zero => {}
                    BlockMatrix::Diag(diag) => {
                        let mut scaled = ab.clone_owned();
                        for (i, hv) in diag.iter().enumerate() {
                            scaled.row_mut(i).scale_mut(*hv);
                        }
                        top += ab.transpose() * scaled;
                    }
                    BlockMatrix::Dense(hm) => {
                        top += ab.transpose() * (hm * ab);
                    }
                }
            }
            for i in 0..n {
                top[(i, i)] += reg;
            }
        }
        for (k, &row) in blocks.zero_rows.iter().enumerate() {
            for j in 0..n {
                let v = prog.a()[(row, j)];
                m[(n + k, j)] = v;
                m[(j, n + k)] = v;
            }
            m[(n + k, n + k)] = -reg;
        }
        let lu = m.lu();
        lu.is_invertible().then_some(Factor::Reduced { lu, hinv })
    }

    fn apply_block(&self, mats: &[BlockMatrix], v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for ((cone, off), h) in self.blocks.list.iter().zip(mats) {
            let d = cone.dim();
            match h {
                BlockMatrix::Zero => {}
                BlockMatrix::Diag(diag) => {
                    for i in 0..d {
                        out[off + i] = diag[i] * v[off + i];
                    }
                }
                BlockMatrix::Dense(hm) => {
                    let r = hm * v.rows(*off, d);
                    out.rows_mut(*off, d).copy_from(&r);
                }
            }
        }
        out
    }

    fn solve_once(&self, rx: &DVector<f64>, rz: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.prog.n_vars();
        match &self.factor {
            Factor::Full(lu) => {
                let mut rhs = DVector::zeros(n + rz.len());
                rhs.rows_mut(0, n).copy_from(rx);
                rhs.rows_mut(n, rz.len()).copy_from(rz);
                let sol = lu.solve(&rhs)?;
                Some((sol.rows(0, n).clone_owned(), sol.rows(n, rz.len()).clone_owned()))
            }
            Factor::Reduced { lu, hinv } => {
                let a = self.prog.a();
                let hrz = self.apply_block(hinv, rz);
                let nz = self.blocks.zero_rows.len();
                let mut rhs = DVector::zeros(n + nz);
                rhs.rows_mut(0, n).copy_from(&(rx + a.tr_mul(&hrz)));
                for (k, &row) in self.blocks.zero_rows.iter().enumerate() {
                    rhs[n + k] = rz[row];
                }
                let sol = lu.solve(&rhs)?;
                let dx = sol.rows(0, n).clone_owned();
                let mut dz = self.apply_block(hinv, &(a * &dx - rz));
                for (k, &row) in self.blocks.zero_rows.iter().enumerate() {
                    dz[row] = sol[n + k];
                }
                Some((dx, dz))
            }
        }
    }

    fn apply_h(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for ((cone, off), sc) in self.blocks.list.iter().zip(self.scalings) {
            let d = cone.dim();
            sc.h(&v.as_slice()[*off..off + d], &mut out.as_mut_slice()[*off..off + d]);
        }
        out
    }

    /// Solve with iterative refinement against the unregularized system.
    fn solve(&self, rx: &DVector<f64>, rz: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let (mut dx, mut dz) = self.solve_once(rx, rz)?;
        let a = self.prog.a();
        let p = self.prog.p();
        let scale = 1.0 + inf_norm(rx).max(inf_norm(rz));
        for _ in 0..self.refine_steps {
            let ex = rx - (p * &dx + a.tr_mul(&dz));
            let ez = rz - (a * &dx - self.apply_h(&dz));
            let err = inf_norm(&ex).max(inf_norm(&ez));
            if err <= 1e-14 * scale {
                break;
            }
            let (cx, cz) = self.solve_once(&ex, &ez)?;
            dx += cx;
            dz += cz;
        }
        if dx.iter().chain(dz.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        Some((dx, dz))
    }
}

struct Direction {
    dx: DVector<f64>,
    dz: DVector<f64>,
    ds: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

struct Iterate {
    x: DVector<f64>,
    z: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    kappa: f64,
}

/// Numerical breakdown near the solution still yields a usable point when
/// the best iterate seen is within a small factor of the requested
/// tolerances.
fn stalled(best: Option<(f64, ConeSolution)>, last: ConeSolution, settings: &Settings) -> ConeSolution {
    let mut last = match best {
        Some((_, b)) => b,
        None => last,
    };
    let loose = 100.0;
    last.status = if last.primal_residual <= loose * settings.tol_feas
        && last.dual_residual <= loose * settings.tol_feas
        && last.duality_gap <= loose * settings.tol_gap
    {
        Status::Optimal
    } else {
        Status::Numerical
    };
    last
}

fn for_blocks(blocks: &Blocks, mut f: impl FnMut(usize, Cone, std::ops::Range<usize>)) {
    for (i, &(c, off)) in blocks.list.iter().enumerate() {
        f(i, c, off..off + c.dim());
    }
}

fn shift_into_cone(blocks: &Blocks, v: &mut DVector<f64>) {
    let mut min_eig = f64::INFINITY;
    for_blocks(blocks, |_, c, r| min_eig = min_eig.min(c.min_eig(&v.as_slice()[r])));
    if !min_eig.is_finite() {
        return;
    }
    let nrm = inf_norm(v).max(1.0);
    if min_eig < 1e-8 * nrm {
        let shift = 1.0 - min_eig;
        let mut e = DVector::zeros(v.len());
        for_blocks(blocks, |_, c, r| c.identity(&mut e.as_mut_slice()[r]));
        *v += e * shift;
    }
}

fn max_step(blocks: &Blocks, it: &Iterate, d: &Direction) -> f64 {
    let mut alpha = f64::INFINITY;
    for_blocks(blocks, |_, c, r| {
        alpha = alpha
            .min(c.max_step(&it.s.as_slice()[r.clone()], &d.ds.as_slice()[r.clone()]))
            .min(c.max_step(&it.z.as_slice()[r.clone()], &d.dz.as_slice()[r]));
    });
    if d.dtau < 0.0 {
        alpha = alpha.min(-it.tau / d.dtau);
    }
    if d.dkappa < 0.0 {
        alpha = alpha.min(-it.kappa / d.dkappa);
    }
    alpha
}

/// Solve a cone program. Deterministic: identical inputs give bitwise
/// identical iterates.
pub fn solve(prog: &ConeProgram, settings: &Settings) -> ConeSolution {
    let n = prog.n_vars();
    let m = prog.n_rows();
    let blocks = Blocks::new(prog);
    let p = prog.p();
    let a = prog.a();
    let q = prog.q();
    let b = prog.b();

    let fail = |status: Status, iterations: usize| ConeSolution {
        x: DVector::zeros(n),
        y: DVector::zeros(m),
        s: DVector::zeros(m),
        status,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        duality_gap: f64::INFINITY,
        objective: f64::NAN,
        iterations,
    };

    // Initial point from the H = I system, shifted into the cone interior.
    let unit: Vec<Scaling> = blocks
        .list
        .iter()
        .map(|(c, _)| match c {
            Cone::Zero(_) => Scaling::Zero,
            Cone::NonNeg(d) => Scaling::NonNeg { w: vec![1.0; *d], lambda: vec![1.0; *d] },
            Cone::Psd(k) => Scaling::Psd {
                r: DMatrix::identity(*k, *k),
                rinv: DMatrix::identity(*k, *k),
                lambda: vec![1.0; *k],
            },
        })
        .collect();
    let Some(kkt0) = Kkt::factor(prog, &blocks, &unit, settings.static_reg, settings.refine_steps) else {
        return fail(Status::Numerical, 0);
    };
    let Some((x0, z0)) = kkt0.solve(&(-q), b) else {
        return fail(Status::Numerical, 0);
    };
    let mut s0 = -z0.clone();
    let mut zinit = z0;
    for &r in &blocks.zero_rows {
        s0[r] = 0.0;
    }
    shift_into_cone(&blocks, &mut s0);
    shift_into_cone(&blocks, &mut zinit);
    let mut it = Iterate { x: x0, z: zinit, s: s0, tau: 1.0, kappa: 1.0 };

    let bnorm = inf_norm(b).max(1.0);
    let qnorm = inf_norm(q).max(1.0);
    let nu = blocks.degree as f64;

    let mut last = fail(Status::MaxIter, 0);
    let mut best: Option<(f64, ConeSolution)> = None;
    let mut stalls = 0usize;
    for iter in 0..=settings.max_iter {
        let px = p * &it.x;
        let xpx = it.x.dot(&px);
        let atz = a.tr_mul(&it.z);
        let ax = a * &it.x;
        let r1 = &px + &atz + q * it.tau;
        let r2 = &ax + &it.s - b * it.tau;
        let r3 = it.kappa + q.dot(&it.x) + b.dot(&it.z) + xpx / it.tau;
        let mut sz = 0.0;
        for_blocks(&blocks, |_, c, r| {
            if !matches!(c, Cone::Zero(_)) {
                sz += it.s.rows(r.start, r.len()).dot(&it.z.rows(r.start, r.len()));
            }
        });
        let mu = (sz + it.tau * it.kappa) / (nu + 1.0);

        // normalized residuals
        let xh = &it.x / it.tau;
        let zh = &it.z / it.tau;
        let sh = &it.s / it.tau;
        let pres = inf_norm(&(&ax / it.tau + &sh - b)) / bnorm;
        let dres = inf_norm(&(&px / it.tau + &atz / it.tau + q)) / qnorm;
        let pobj = 0.5 * xpx / (it.tau * it.tau) + q.dot(&xh);
        let dobj = -0.5 * xpx / (it.tau * it.tau) - b.dot(&zh);
        let gap_abs = (pobj - dobj).abs();
        let gap_rel = gap_abs / pobj.abs().min(dobj.abs()).max(1.0);
        let gap = gap_abs.min(gap_rel);

        last = ConeSolution {
            x: xh.clone(),
            y: zh.clone(),
            s: sh.clone(),
            status: Status::MaxIter,
            primal_residual: pres,
            dual_residual: dres,
            duality_gap: gap,
            objective: pobj,
            iterations: iter,
        };
        if !(pres.is_finite() && dres.is_finite() && gap.is_finite()) {
            return stalled(best, last, settings);
        }
        if pres <= settings.tol_feas && dres <= settings.tol_feas && gap <= settings.tol_gap {
            last.status = Status::Optimal;
            return last;
        }
        let merit = (pres / settings.tol_feas).max(dres / settings.tol_feas).max(gap / settings.tol_gap);
        if best.as_ref().is_none_or(|(m, _)| merit < *m) {
            best = Some((merit, last.clone()));
        }
        // infeasibility certificates
        let bz = b.dot(&it.z);
        if bz < 0.0 && inf_norm(&atz) <= settings.tol_infeas * (-bz) {
            let scale = -bz;
            last.status = Status::PrimalInfeasible;
            last.x = DVector::zeros(n);
            last.y = &it.z / scale;
            last.s = DVector::zeros(m);
            return last;
        }
        let qx = q.dot(&it.x);
        if qx < 0.0 && inf_norm(&px) <= settings.tol_infeas * (-qx) && inf_norm(&(&ax + &it.s)) <= settings.tol_infeas * (-qx)
        {
            let scale = -qx;
            last.status = Status::DualInfeasible;
            last.x = &it.x / scale;
            last.y = DVector::zeros(m);
            last.s = &it.s / scale;
            return last;
        }
        if iter == settings.max_iter {
            break;
        }

        // scaling and factorization
        let mut scalings = Vec::with_capacity(blocks.list.len());
        for &(c, off) in &blocks.list {
            let r = off..off + c.dim();
            match Scaling::new(&c, &it.s.as_slice()[r.clone()], &it.z.as_slice()[r]) {
                Some(sc) => scalings.push(sc),
                None => {
                    return stalled(best, last, settings);
                }
            }
        }
        let Some(kkt) = Kkt::factor(prog, &blocks, &scalings, settings.static_reg, settings.refine_steps) else {
            return stalled(best, last, settings);
        };
        let Some((x2, z2)) = kkt.solve(&(-q), b) else {
            return stalled(best, last, settings);
        };

        let mut lambda = DVector::zeros(m);
        for_blocks(&blocks, |i, _, r| scalings[i].lambda(&mut lambda.as_mut_slice()[r]));
        let mut lam_sq = DVector::zeros(m);
        for_blocks(&blocks, |_, c, r| {
            let lr = &lambda.as_slice()[r.clone()];
            c.circ(lr, lr, &mut lam_sq.as_mut_slice()[r]);
        });

        let xi = &it.x / it.tau;
        let pxi = p * &xi;
        let xi_pxi = xi.dot(&pxi);
        let qhat = q + &pxi * 2.0;
        let denom = qhat.dot(&x2) + b.dot(&z2) - it.kappa / it.tau - xi_pxi;

        let newton = |dx_r: &DVector<f64>, dz_r: &DVector<f64>, dtau_r: f64, ds_r: &DVector<f64>, dkappa_r: f64| -> Option<Direction> {
            let mut t = DVector::zeros(m);
            for_blocks(&blocks, |i, _, r| {
                scalings[i].lambda_inv_circ(&ds_r.as_slice()[r.clone()], &mut t.as_mut_slice()[r]);
            });
            let mut wt = DVector::zeros(m);
            for_blocks(&blocks, |i, _, r| {
                scalings[i].w_t(&t.as_slice()[r.clone()], &mut wt.as_mut_slice()[r]);
            });
            let (x1, z1) = kkt.solve(&(-dx_r), &(&wt - dz_r))?;
            let num = -dtau_r + dkappa_r / it.tau - qhat.dot(&x1) - b.dot(&z1);
            let dtau = num / denom;
            let dx = x1 + &x2 * dtau;
            let dz = z1 + &z2 * dtau;
            let hdz = kkt.apply_h(&dz);
            let mut ds = -(wt + hdz);
            for &r in &blocks.zero_rows {
                ds[r] = 0.0;
            }
            let dkappa = -(dkappa_r + it.kappa * dtau) / it.tau;
            if !dtau.is_finite() || !dkappa.is_finite() {
                return None;
            }
            Some(Direction { dx, dz, ds, dtau, dkappa })
        };

        // predictor
        let Some(aff) = newton(&r1, &r2, r3, &lam_sq, it.tau * it.kappa) else {
            return stalled(best, last, settings);
        };
        let alpha_aff = max_step(&blocks, &it, &aff).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);

        // corrector with Mehrotra second-order term
        let mut ds_corr = lam_sq.clone();
        {
            let mut wis = DVector::zeros(m);
            let mut wz = DVector::zeros(m);
            for_blocks(&blocks, |i, _, r| {
                scalings[i].w_inv_t(&aff.ds.as_slice()[r.clone()], &mut wis.as_mut_slice()[r.clone()]);
                scalings[i].w(&aff.dz.as_slice()[r.clone()], &mut wz.as_mut_slice()[r]);
            });
            let mut e = DVector::zeros(m);
            let mut prod = DVector::zeros(m);
            for_blocks(&blocks, |_, c, r| {
                c.identity(&mut e.as_mut_slice()[r.clone()]);
                c.circ(&wis.as_slice()[r.clone()], &wz.as_slice()[r.clone()], &mut prod.as_mut_slice()[r]);
            });
            ds_corr += prod - e * (sigma * mu);
        }
        let dkappa_corr = it.tau * it.kappa + aff.dtau * aff.dkappa - sigma * mu;
        let f = 1.0 - sigma;
        let Some(dir) = newton(&(&r1 * f), &(&r2 * f), r3 * f, &ds_corr, dkappa_corr) else {
            return stalled(best, last, settings);
        };
        let alpha = (STEP_FRACTION * max_step(&blocks, &it, &dir)).min(1.0);
        if alpha < 1e-10 {
            stalls += 1;
            if stalls > 3 {
                return stalled(best, last, settings);
            }
        }
        it.x += &dir.dx * alpha;
        it.z += &dir.dz * alpha;
        it.s += &dir.ds * alpha;
        it.tau += dir.dtau * alpha;
        it.kappa += dir.dkappa * alpha;

        // renormalize the embedding to keep magnitudes tame
        let scale = it.tau + it.kappa;
        if scale > 1e6 || scale < 1e-6 {
            let inv = 1.0 / scale;
            it.x *= inv;
            it.z *= inv;
            it.s *= inv;
            it.tau *= inv;
            it.kappa *= inv;
        }
    }
    last.status = Status::MaxIter;
    last
}

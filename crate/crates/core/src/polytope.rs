//! Halfspace polytopes `{x : Cx ≤ d}` and the support-function algebra the
//! tube controller needs: row tightening, tube offsets, maximal robust
//! positively invariant sets and outer bounds on the minimal one.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{solve_lp, LpError};
use crate::linalg::powers;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("polytope must have at least one row")]
    NoRows,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite polytope data")]
    NonFinite,
    #[error("support function is unbounded")]
    Unbounded,
    #[error("polytope is empty")]
    Empty,
    #[error("terminal set is empty")]
    EmptyTerminalSet,
    #[error("no fixed point after {0} iterations")]
    MaxIter(usize),
    #[error("disturbance support must be bounded and contain the origin strictly")]
    InvalidSupport,
    #[error("LP failed: {0}")]
    Lp(LpError),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn lp_err(e: LpError) -> PolytopeError {
    match e {
        LpError::Unbounded => PolytopeError::Unbounded,
        LpError::Infeasible => PolytopeError::Empty,
        other => PolytopeError::Lp(other),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HPolytope {
    c: DMatrix<f64>,
    d: DVector<f64>,
}

impl HPolytope {
    pub fn new(c: DMatrix<f64>, d: DVector<f64>) -> Result<Self, PolytopeError> {
        if c.nrows() == 0 {
            return Err(PolytopeError::NoRows);
        }
        if c.nrows() != d.len() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "{} rows in C but {} entries in d",
                c.nrows(),
                d.len()
            )));
        }
        if c.iter().chain(d.iter()).any(|v| !v.is_finite()) {
            return Err(PolytopeError::NonFinite);
        }
        Ok(HPolytope { c, d })
    }

    /// Axis-aligned box `|x_i| ≤ r_i`, rows ordered `+e_1, -e_1, +e_2, ...`.
    pub fn symmetric_box(radii: &[f64]) -> Result<Self, PolytopeError> {
        let n = radii.len();
        let mut c = DMatrix::zeros(2 * n, n);
        let mut d = DVector::zeros(2 * n);
        for (i, &r) in radii.iter().enumerate() {
            c[(2 * i, i)] = 1.0;
            c[(2 * i + 1, i)] = -1.0;
            d[2 * i] = r;
            d[2 * i + 1] = r;
        }
        Self::new(c, d)
    }

    /// Same as [`HPolytope::new`] but additionally checks the conditions
    /// placed on a disturbance support: bounded and `0` strictly inside.
    pub fn disturbance_support(c: DMatrix<f64>, d: DVector<f64>) -> Result<Self, PolytopeError> {
        let p = Self::new(c, d)?;
        p.check_disturbance_support()?;
        Ok(p)
    }

    pub fn check_disturbance_support(&self) -> Result<(), PolytopeError> {
        if self.d.iter().any(|&v| v <= 0.0) {
            return Err(PolytopeError::InvalidSupport);
        }
        for i in 0..self.dim() {
            let mut e = DVector::zeros(self.dim());
            e[i] = 1.0;
            for sign in [1.0, -1.0] {
                match self.support(&(&e * sign)) {
                    Ok(_) => {}
                    Err(PolytopeError::Unbounded) => return Err(PolytopeError::InvalidSupport),
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(())
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.c.nrows()
    }

    /// `max_{x∈P} a'x`.
    pub fn support(&self, a: &DVector<f64>) -> Result<f64, PolytopeError> {
        if a.len() != self.dim() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "direction has length {}, polytope dimension {}",
                a.len(),
                self.dim()
            )));
        }
        if a.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        if let Some(v) = self.box_support(a) {
            return Ok(v);
        }
        let (val, _) = solve_lp(&self.c, &self.d, &(-a)).map_err(lp_err)?;
        Ok(-val)
    }

    /// Closed form for polytopes whose rows are exactly `±e_i` pairs.
    fn box_support(&self, a: &DVector<f64>) -> Option<f64> {
        let n = self.dim();
        let mut hi = vec![f64::INFINITY; n];
        let mut lo = vec![f64::NEG_INFINITY; n];
        for r in 0..self.n_rows() {
            let row = self.c.row(r);
            let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
            if nz.len() != 1 {
                return None;
            }
            let j = nz[0];
            let coef = row[j];
            let bound = self.d[r] / coef;
            if coef > 0.0 {
                hi[j] = hi[j].min(bound);
            } else {
                lo[j] = lo[j].max(bound);
            }
        }
        let mut total = 0.0;
        for j in 0..n {
            if lo[j] > hi[j] {
                return None;
            }
            let v = if a[j] > 0.0 {
                a[j] * hi[j]
            } else if a[j] < 0.0 {
                a[j] * lo[j]
            } else {
                0.0
            };
            if !v.is_finite() {
                return None;
            }
            total += v;
        }
        Some(total)
    }

    /// True iff `Cx ≤ d + tol` elementwise.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        let cx = &self.c * x;
        cx.iter().zip(self.d.iter()).all(|(l, r)| *l <= r + tol)
    }

    /// Same rows with right-hand side `d - offsets`.
    pub fn tighten_rows(&self, offsets: &DVector<f64>) -> Result<HPolytope, PolytopeError> {
        if offsets.len() != self.n_rows() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "{} offsets for {} rows",
                offsets.len(),
                self.n_rows()
            )));
        }
        HPolytope::new(self.c.clone(), &self.d - offsets)
    }

    /// Stack the rows of two polytopes in the same space.
    pub fn intersect(&self, other: &HPolytope) -> Result<HPolytope, PolytopeError> {
        if self.dim() != other.dim() {
            return Err(PolytopeError::DimensionMismatch("intersecting polytopes of different dimension".into()));
        }
        let mut c = DMatrix::zeros(self.n_rows() + other.n_rows(), self.dim());
        c.rows_mut(0, self.n_rows()).copy_from(&self.c);
        c.rows_mut(self.n_rows(), other.n_rows()).copy_from(&other.c);
        let d = DVector::from_iterator(
            self.n_rows() + other.n_rows(),
            self.d.iter().chain(other.d.iter()).cloned(),
        );
        HPolytope::new(c, d)
    }

    /// A point of the polytope, or `Empty`. Maximizes the uniform slack
    /// (bounded by 1) so the point is interior whenever possible.
    pub fn interior_point(&self) -> Result<(DVector<f64>, f64), PolytopeError> {
        let n = self.dim();
        let m = self.n_rows();
        let mut c = DMatrix::zeros(m + 1, n + 1);
        let mut d = DVector::zeros(m + 1);
        for i in 0..m {
            let norm = self.c.row(i).norm().max(1e-12);
            for j in 0..n {
                c[(i, j)] = self.c[(i, j)];
            }
            c[(i, n)] = norm;
            d[i] = self.d[i];
        }
        c[(m, n)] = 1.0;
        d[m] = 1.0;
        let mut q = DVector::zeros(n + 1);
        q[n] = -1.0;
        let (_, sol) = solve_lp(&c, &d, &q).map_err(lp_err)?;
        let slack = sol[n];
        if slack < -1e-9 {
            return Err(PolytopeError::Empty);
        }
        Ok((sol.rows(0, n).clone_owned(), slack))
    }

    pub fn is_empty(&self) -> Result<bool, PolytopeError> {
        match self.interior_point() {
            Ok(_) => Ok(false),
            Err(PolytopeError::Empty) => Ok(true),
            Err(e) => Err(e),
        }
    }

    /// Drop rows implied by the others (slack tolerance `tol`).
    pub fn remove_redundant(&self, tol: f64) -> Result<HPolytope, PolytopeError> {
        let mut keep: Vec<usize> = (0..self.n_rows()).collect();
        let mut i = 0;
        while i < keep.len() && keep.len() > 1 {
            let row = keep[i];
            let others: Vec<usize> = keep.iter().copied().filter(|&r| r != row).collect();
            if self.row_redundant(&others, row, tol)? {
                keep.remove(i);
            } else {
                i += 1;
            }
        }
        self.select_rows(&keep)
    }

    fn select_rows(&self, rows: &[usize]) -> Result<HPolytope, PolytopeError> {
        let c = self.c.select_rows(rows);
        let d = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.d[r]));
        HPolytope::new(c, d)
    }

    /// Is `row` implied by the rows in `others`? The row itself, relaxed by
    /// one unit, is kept in the LP so the maximization stays bounded.
    fn row_redundant(&self, others: &[usize], row: usize, tol: f64) -> Result<bool, PolytopeError> {
        let a = self.c.row(row).transpose();
        let mut rows = others.to_vec();
        rows.push(row);
        let mut c = self.c.select_rows(&rows);
        let mut d = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.d[r]));
        let last = rows.len() - 1;
        d[last] += 1.0;
        if c.nrows() == 0 {
            return Ok(false);
        }
        c.row_mut(last).copy_from(&a.transpose());
        match solve_lp(&c, &d, &(-&a)) {
            Ok((val, _)) => Ok(-val <= self.d[row] + tol),
            Err(LpError::Infeasible) => Ok(true),
            Err(e) => Err(lp_err(e)),
        }
    }

    /// Parse the text format: one row per line, `c1 c2 ... cn <= d`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, PolytopeError> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| PolytopeError::Parse { line: ln + 1, msg: msg.to_string() };
            let (lhs, r) = line.split_once("<=").ok_or_else(|| err("missing '<='"))?;
            let coeffs = lhs
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(&format!("bad number '{t}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            let r = r.trim().parse::<f64>().map_err(|_| err("bad right-hand side"))?;
            if let Some(first) = rows.first() {
                if first.len() != coeffs.len() {
                    return Err(err("row length differs from the first row"));
                }
            }
            if coeffs.is_empty() {
                return Err(err("row has no coefficients"));
            }
            rows.push(coeffs);
            rhs.push(r);
        }
        if rows.is_empty() {
            return Err(PolytopeError::NoRows);
        }
        let n = rows[0].len();
        let c = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        HPolytope::new(c, DVector::from_vec(rhs))
    }
}

impl fmt::Display for HPolytope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n_rows() {
            for j in 0..self.dim() {
                write!(f, "{:?} ", self.c[(i, j)])?;
            }
            writeln!(f, "<= {:?}", self.d[i])?;
        }
        Ok(())
    }
}

impl FromStr for HPolytope {
    type Err = PolytopeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HPolytope::parse(s)
    }
}

/// State tube offsets: row `l` (for `l = 0..=n`) holds
/// `Σ_{j=1}^{l-1} h_W((Φ^j)' H_i')`, the back-off needed for the nominal
/// state `l` steps ahead. Rows 0 and 1 are zero.
pub fn error_tube_offsets(
    phi: &DMatrix<f64>,
    w: &HPolytope,
    h: &DMatrix<f64>,
    horizon: usize,
) -> Result<DMatrix<f64>, PolytopeError> {
    check_square(phi, w.dim())?;
    if h.ncols() != w.dim() {
        return Err(PolytopeError::DimensionMismatch("H columns differ from state dimension".into()));
    }
    let p = h.nrows();
    let mut out = DMatrix::zeros(horizon + 1, p);
    let pw = powers(phi, horizon.max(1));
    for l in 2..=horizon {
        let j = l - 1;
        let m = h * &pw[j];
        for i in 0..p {
            let v = w.support(&m.row(i).transpose())?;
            out[(l, i)] = out[(l - 1, i)] + v;
        }
    }
    Ok(out)
}

/// Input tube offsets: row `l` (for `l = 0..=n`) holds
/// `Σ_{j=0}^{l-1} h_W((KΦ^j)' G_i')`. Row 0 is zero; row `n` tightens the
/// terminal input constraint.
pub fn input_tube_offsets(
    phi: &DMatrix<f64>,
    k: &DMatrix<f64>,
    w: &HPolytope,
    g: &DMatrix<f64>,
    horizon: usize,
) -> Result<DMatrix<f64>, PolytopeError> {
    check_square(phi, w.dim())?;
    if k.ncols() != w.dim() || g.ncols() != k.nrows() {
        return Err(PolytopeError::DimensionMismatch("K or G has the wrong shape".into()));
    }
    let q = g.nrows();
    let mut out = DMatrix::zeros(horizon + 1, q);
    let pw = powers(phi, horizon.max(1));
    for l in 1..=horizon {
        let m = g * k * &pw[l - 1];
        for i in 0..q {
            let v = w.support(&m.row(i).transpose())?;
            out[(l, i)] = out[(l - 1, i)] + v;
        }
    }
    Ok(out)
}

fn check_square(phi: &DMatrix<f64>, n: usize) -> Result<(), PolytopeError> {
    if phi.nrows() != n || phi.ncols() != n {
        return Err(PolytopeError::DimensionMismatch(format!(
            "Φ is {}x{}, expected {n}x{n}",
            phi.nrows(),
            phi.ncols()
        )));
    }
    Ok(())
}

/// Maximal robust positively invariant subset of `base` for
/// `z⁺ = Φz + D w`, `w ∈ W`.
///
/// Rows `F Φ^t z ≤ g − Σ_{j<t} h_W((F Φ^j D)')` are added for increasing
/// `t` until a whole batch is redundant.
pub fn mrpi(
    phi: &DMatrix<f64>,
    dmap: &DMatrix<f64>,
    w: &HPolytope,
    base: &HPolytope,
    max_iter: usize,
) -> Result<HPolytope, PolytopeError> {
    let n = base.dim();
    check_square(phi, n)?;
    if dmap.nrows() != n || dmap.ncols() != w.dim() {
        return Err(PolytopeError::DimensionMismatch("disturbance map has the wrong shape".into()));
    }
    let base = match base.remove_redundant(1e-9) {
        Ok(b) => b,
        Err(PolytopeError::Empty) => return Err(PolytopeError::EmptyTerminalSet),
        Err(e) => return Err(e),
    };
    if base.is_empty()? {
        return Err(PolytopeError::EmptyTerminalSet);
    }
    let f = base.c().clone();
    let g = base.d().clone();
    let rows = f.nrows();
    let mut cur = base.clone();
    let mut phi_t = DMatrix::identity(n, n);
    let mut offset = DVector::zeros(rows);
    for _ in 0..max_iter {
        // rows for the next power
        let fd = &f * &phi_t * dmap;
        for i in 0..rows {
            offset[i] += w.support(&fd.row(i).transpose())?;
        }
        phi_t = phi * &phi_t;
        let new_c = &f * &phi_t;
        let new_d = &g - &offset;
        let mut added = false;
        for i in 0..rows {
            let cand = HPolytope::new(
                new_c.rows(i, 1).clone_owned(),
                DVector::from_element(1, new_d[i]),
            )?;
            let trial = cur.intersect(&cand)?;
            let last = trial.n_rows() - 1;
            let others: Vec<usize> = (0..last).collect();
            if !trial.row_redundant(&others, last, 1e-9)? {
                cur = trial;
                added = true;
            }
        }
        if !added {
            return cur.remove_redundant(1e-9);
        }
        if cur.is_empty()? {
            return Err(PolytopeError::EmptyTerminalSet);
        }
    }
    Err(PolytopeError::MaxIter(max_iter))
}

/// Outer bounds on the support of the minimal RPI set `⊕ Φ^i W` along
/// each direction. `alpha` controls the truncation: the sum stops at the
/// first `s` with `Φ^s W ⊆ αW`.
pub fn minimal_rpi_support(
    phi: &DMatrix<f64>,
    w: &HPolytope,
    directions: &[DVector<f64>],
    alpha: f64,
) -> Result<Vec<f64>, PolytopeError> {
    const POWER_CAP: usize = 1000;
    let n = w.dim();
    check_square(phi, n)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PolytopeError::DimensionMismatch("alpha must lie in (0, 1)".into()));
    }
    let e = w.c();
    let mut phi_s = DMatrix::identity(n, n);
    let mut s = 0;
    loop {
        if s > POWER_CAP {
            return Err(PolytopeError::MaxIter(POWER_CAP));
        }
        let m = e * &phi_s;
        let mut contained = true;
        for i in 0..e.nrows() {
            if w.support(&m.row(i).transpose())? > alpha * w.d()[i] + 1e-15 {
                contained = false;
                break;
            }
        }
        if contained {
            break;
        }
        phi_s = phi * phi_s;
        s += 1;
    }
    let pw = powers(phi, s);
    directions
        .iter()
        .map(|a| {
            let mut total = 0.0;
            for p in &pw {
                total += w.support(&(p.transpose() * a))?;
            }
            Ok(total / (1.0 - alpha))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box06() -> HPolytope {
        HPolytope::symmetric_box(&[0.6, 0.6]).unwrap()
    }

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn box_support_values() {
        let w = box06();
        assert!((w.support(&dv(&[0.0, 1.0])).unwrap() - 0.6).abs() < 1e-12);
        assert!((w.support(&dv(&[1.0, 1.0])).unwrap() - 1.2).abs() < 1e-12);
        assert_eq!(w.support(&dv(&[0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn general_support_through_lp() {
        // triangle x ≥ 0, y ≥ 0, x + y ≤ 1
        let p = HPolytope::new(
            DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]),
            dv(&[0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert!((p.support(&dv(&[2.0, 1.0])).unwrap() - 2.0).abs() < 1e-7);
        assert!((p.support(&dv(&[-1.0, -1.0])).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn unbounded_support() {
        let p = HPolytope::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), dv(&[1.0])).unwrap();
        assert_eq!(p.support(&dv(&[0.0, 1.0])), Err(PolytopeError::Unbounded));
        assert!(p.check_disturbance_support().is_err());
    }

    #[test]
    fn membership() {
        let w = box06();
        assert!(w.contains(&dv(&[0.0, 0.0]), 0.0));
        assert!(!w.contains(&dv(&[0.0, 0.61]), 0.0));
    }

    #[test]
    fn tighten_rows_subtracts() {
        let p = HPolytope::new(DMatrix::from_row_slice(1, 1, &[1.0]), dv(&[2.0])).unwrap();
        let t = p.tighten_rows(&dv(&[0.6])).unwrap();
        assert!((t.d()[0] - 1.4).abs() < 1e-15);
        assert_eq!(p.tighten_rows(&dv(&[0.0])).unwrap(), p);
    }

    #[test]
    fn box_minus_box_matches_interval_arithmetic() {
        let x = HPolytope::symmetric_box(&[2.0, 3.0]).unwrap();
        let w = HPolytope::symmetric_box(&[0.5, 0.25]).unwrap();
        let off = DVector::from_iterator(4, (0..4).map(|i| w.support(&x.c().row(i).transpose()).unwrap()));
        let t = x.tighten_rows(&off).unwrap();
        assert_eq!(t, HPolytope::symmetric_box(&[1.5, 2.75]).unwrap());
    }

    #[test]
    fn zero_closed_loop_gives_zero_offsets() {
        let phi = DMatrix::zeros(2, 2);
        let h = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let z = error_tube_offsets(&phi, &box06(), &h, 5).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn worked_example_offsets() {
        let phi = DMatrix::from_row_slice(2, 2, &[0.6696, 0.3370, -0.6609, -0.3261]);
        let h = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let z = error_tube_offsets(&phi, &box06(), &h, 4).unwrap();
        assert_eq!(z[(0, 0)], 0.0);
        assert_eq!(z[(1, 0)], 0.0);
        assert!((z[(2, 0)] - 0.5922).abs() < 1e-12);
        let k = DMatrix::from_row_slice(1, 2, &[-0.6609, -1.3261]);
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let d = input_tube_offsets(&phi, &k, &box06(), &g, 3).unwrap();
        assert_eq!(d[(0, 0)], 0.0);
        assert!((d[(1, 0)] - 1.1922).abs() < 1e-12);
        assert!((d[(1, 1)] - 1.1922).abs() < 1e-12);
    }

    #[test]
    fn mrpi_scalar_base_already_invariant() {
        let phi = DMatrix::from_element(1, 1, 0.5);
        let dm = DMatrix::from_element(1, 1, 0.1);
        let w = HPolytope::symmetric_box(&[1.0]).unwrap();
        let base = HPolytope::symmetric_box(&[1.0]).unwrap();
        let om = mrpi(&phi, &dm, &w, &base, 50).unwrap();
        assert_eq!(om.n_rows(), 2);
        for s in [1.0, -1.0] {
            assert!((om.support(&dv(&[s])).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mrpi_of_dead_beat_is_base() {
        let phi = DMatrix::zeros(2, 2);
        let dm = DMatrix::zeros(2, 2);
        // redundant extra row x ≤ 5
        let base = box06()
            .intersect(&HPolytope::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), dv(&[5.0])).unwrap())
            .unwrap();
        let om = mrpi(&phi, &dm, &box06(), &base, 50).unwrap();
        assert_eq!(om.n_rows(), 4);
    }

    #[test]
    fn mrpi_reports_empty() {
        let phi = DMatrix::from_element(1, 1, 0.5);
        let dm = DMatrix::from_element(1, 1, 1.0);
        let w = HPolytope::symmetric_box(&[1.0]).unwrap();
        let base = HPolytope::symmetric_box(&[0.5]).unwrap();
        assert_eq!(mrpi(&phi, &dm, &w, &base, 50), Err(PolytopeError::EmptyTerminalSet));
    }

    #[test]
    fn minimal_rpi_scalar_geometric_series() {
        let phi = DMatrix::from_element(1, 1, 0.5);
        let w = HPolytope::symmetric_box(&[1.0]).unwrap();
        let b = minimal_rpi_support(&phi, &w, &[dv(&[1.0])], 0.05).unwrap()[0];
        assert!(b >= 2.0 - 1e-12 && b <= 2.0 / 0.95 + 1e-12, "{b}");
        let zero = minimal_rpi_support(&DMatrix::zeros(1, 1), &w, &[dv(&[1.0])], 0.05).unwrap()[0];
        assert!((zero - 1.0 / 0.95).abs() < 1e-12 || (zero - 1.0).abs() < 1e-12);
    }

    #[test]
    fn text_round_trip() {
        let p = HPolytope::new(
            DMatrix::from_row_slice(2, 2, &[0.1, -1.0 / 3.0, 2.0, 1e-17]),
            dv(&[0.6, std::f64::consts::PI]),
        )
        .unwrap();
        let back: HPolytope = p.to_string().parse().unwrap();
        assert_eq!(back, p);
        assert!(matches!(HPolytope::parse("1 2 <= x"), Err(PolytopeError::Parse { line: 1, .. })));
    }
}

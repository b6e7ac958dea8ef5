#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use drmpc::dpmm::MixtureEstimate;
use drmpc::polytope::HPolytope;
use drmpc::tightening::AmbiguitySet;

/// All vertices of `{x : Cx ≤ d}` by brute force over n-row subsets.
pub fn vertices(c: &DMatrix<f64>, d: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = c.ncols();
    let m = c.nrows();
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    if n > m {
        return out;
    }
    loop {
        let sub = c.select_rows(&idx);
        let rhs = DVector::from_iterator(n, idx.iter().map(|&i| d[i]));
        if sub.determinant().abs() > 1e-10 {
            if let Some(x) = sub.lu().solve(&rhs) {
                if (c * &x - d).iter().all(|&v| v <= 1e-9) {
                    out.push(x);
                }
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < m - n + i {
                idx[i] += 1;
                for j in i + 1..n {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Random bounded polytope: a random set of rows plus an enclosing box.
pub fn random_bounded(rng: &mut impl rand::Rng, n: usize, extra: usize) -> (DMatrix<f64>, DVector<f64>) {
    let m = 2 * n + extra;
    let mut c = DMatrix::zeros(m, n);
    let mut d = DVector::zeros(m);
    for i in 0..n {
        c[(2 * i, i)] = 1.0;
        c[(2 * i + 1, i)] = -1.0;
        d[2 * i] = rng.random_range(0.5..3.0);
        d[2 * i + 1] = rng.random_range(0.5..3.0);
    }
    for r in 2 * n..m {
        for j in 0..n {
            c[(r, j)] = rng.random_range(-1.0..1.0);
        }
        d[r] = rng.random_range(0.2..2.0);
    }
    (c, d)
}

/// Random polytope of exactly `rows` rows around the origin, bounded by
/// construction (rows are spread over all orthants).
pub fn random_rows(rng: &mut impl rand::Rng, n: usize, rows: usize) -> (DMatrix<f64>, DVector<f64>) {
    loop {
        let mut c = DMatrix::zeros(rows, n);
        for v in c.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let d = DVector::from_fn(rows, |_, _| rng.random_range(0.5..2.0));
        // bounded iff every coordinate direction has a finite max/min
        let verts = vertices(&c, &d);
        if verts.is_empty() {
            continue;
        }
        let bounded = (0..n).all(|j| {
            [1.0, -1.0].iter().all(|s| {
                let mut q = DVector::zeros(n);
                q[j] = -*s;
                drmpc::conic::solve_lp(&c, &d, &q).is_ok()
            })
        });
        if bounded {
            return (c, d);
        }
    }
}

/// Standard normal draw by inverse CDF.
pub fn std_normal(rng: &mut impl rand::Rng) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
    Normal::standard().inverse_cdf(u)
}

pub fn gaussian_cluster(rng: &mut impl rand::Rng, center: &[f64], sigma: f64, count: usize) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| DVector::from_iterator(center.len(), center.iter().map(|c| c + sigma * std_normal(rng))))
        .collect()
}

pub fn interval(lo: f64, hi: f64) -> HPolytope {
    HPolytope::new(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DVector::from_row_slice(&[hi, -lo])).unwrap()
}

/// Random 1-D ambiguity set on `[lo, hi]` with variances a distribution on
/// the interval can realize.
pub fn random_1d(rng: &mut impl Rng) -> AmbiguitySet {
    let lo = -rng.random_range(0.2..1.0);
    let hi = rng.random_range(0.2..1.0);
    let m = rng.random_range(1..=3);
    let mut gamma: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = gamma.iter().sum();
    gamma.iter_mut().for_each(|g| *g /= total);
    let mut mu = Vec::new();
    let mut sigma = Vec::new();
    for _ in 0..m {
        let c = rng.random_range(0.7 * lo..0.7 * hi);
        let cap = (hi - c) * (c - lo);
        mu.push(DVector::from_element(1, c));
        sigma.push(DMatrix::from_element(1, 1, rng.random_range(0.05..0.6) * cap));
    }
    AmbiguitySet::new(interval(lo, hi), MixtureEstimate { gamma, mu, sigma }).unwrap()
}

pub fn random_2d(rng: &mut impl Rng) -> AmbiguitySet {
    let r = [rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)];
    let w = HPolytope::symmetric_box(&r).unwrap();
    let m = rng.random_range(1..=2);
    let mut mu = Vec::new();
    let mut sigma = Vec::new();
    for _ in 0..m {
        let c = DVector::from_fn(2, |i, _| rng.random_range(-0.5 * r[i]..0.5 * r[i]));
        // diagonal variances below what the box allows, mild correlation
        let v: Vec<f64> = (0..2).map(|i| rng.random_range(0.05..0.3) * (r[i] - c[i].abs()).powi(2)).collect();
        let rho = rng.random_range(-0.5..0.5) * (v[0] * v[1]).sqrt();
        mu.push(c);
        sigma.push(DMatrix::from_row_slice(2, 2, &[v[0], rho, rho, v[1]]));
    }
    let gamma = vec![1.0 / m as f64; m];
    AmbiguitySet::new(w, MixtureEstimate { gamma, mu, sigma }).unwrap()
}

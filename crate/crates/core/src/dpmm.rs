//! Streaming variational inference for a truncated Dirichlet-process
//! mixture of Gaussians with Normal–Wishart components.
//!
//! New samples are assigned greedily using posterior predictive densities,
//! then coordinate-ascent sweeps refine all responsibilities. Samples whose
//! assignment is confident are folded into per-component clumps of
//! sufficient statistics, so memory grows with the number of clumps plus
//! the unresolved singlets, not with the sample count.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::linalg::{eigen_floor, symmetrize};
use crate::polytope::HPolytope;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpmmError {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("sample has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample contains non-finite values")]
    NonFiniteSample,
    #[error("mixture has no components")]
    EmptyMixture,
}

/// Normal–Wishart base measure and DP concentration. The Wishart scale
/// matrix is `psi0⁻¹`, so `E[Λ] = omega0 · psi0⁻¹`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NwPrior {
    pub theta0: DVector<f64>,
    pub lambda0: f64,
    pub omega0: f64,
    pub psi0: DMatrix<f64>,
    pub alpha: f64,
    pub kmax: usize,
}

impl NwPrior {
    /// Diffuse, origin-centred prior for `n`-dimensional data.
    pub fn default_for(n: usize) -> Self {
        NwPrior {
            theta0: DVector::zeros(n),
            lambda0: 0.01,
            omega0: n as f64 + 2.0,
            psi0: DMatrix::identity(n, n) * 0.01,
            alpha: 1.0,
            kmax: 20,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn validate(&self) -> Result<(), DpmmError> {
        let n = self.dim();
        let bad = |s: &str| Err(DpmmError::InvalidPrior(s.to_string()));
        if n == 0 {
            return bad("dimension must be positive");
        }
        if !(self.lambda0 > 0.0) || !(self.alpha > 0.0) {
            return bad("lambda0 and alpha must be positive");
        }
        if !(self.omega0 > n as f64 - 1.0) {
            return bad("omega0 must exceed n - 1");
        }
        if self.kmax == 0 {
            return bad("kmax must be at least 1");
        }
        if self.psi0.shape() != (n, n) || symmetrize(&self.psi0).cholesky().is_none() {
            return bad("psi0 must be an n x n positive definite matrix");
        }
        if self.theta0.iter().any(|v| !v.is_finite()) {
            return bad("theta0 must be finite");
        }
        Ok(())
    }
}

/// Tuning of the learner that is not part of the probabilistic model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerSettings {
    pub compress_threshold: f64,
    pub elbo_tol: f64,
    pub max_sweeps: usize,
    pub prune_weight: f64,
    pub covariance_floor: f64,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        LearnerSettings {
            compress_threshold: 0.95,
            elbo_tol: 1e-6,
            max_sweeps: 50,
            prune_weight: 1e-3,
            covariance_floor: 1e-8,
        }
    }
}

/// Sufficient statistics of a group of samples sharing one assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clump {
    pub count: usize,
    pub sum: DVector<f64>,
    pub sumsq: DMatrix<f64>,
}

impl Clump {
    fn singleton(x: &DVector<f64>) -> Self {
        Clump { count: 1, sum: x.clone(), sumsq: x * x.transpose() }
    }

    fn absorb(&mut self, x: &DVector<f64>) {
        self.count += 1;
        self.sum += x;
        self.sumsq += x * x.transpose();
    }
}

/// Normal–Wishart parameters of one component.
#[derive(Clone, Debug, PartialEq)]
pub struct NwParams {
    pub theta: DVector<f64>,
    pub lambda: f64,
    pub omega: f64,
    pub psi: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
struct Stats {
    count: f64,
    sum: DVector<f64>,
    sumsq: DMatrix<f64>,
}

impl Stats {
    fn zero(n: usize) -> Self {
        Stats { count: 0.0, sum: DVector::zeros(n), sumsq: DMatrix::zeros(n, n) }
    }

    fn add(&mut self, w: f64, count: f64, sum: &DVector<f64>, sumsq: &DMatrix<f64>) {
        self.count += w * count;
        self.sum.axpy(w, sum, 1.0);
        self.sumsq += sumsq * w;
    }
}

/// Per-component quantities reused across all units within a sweep.
struct Expectations {
    log_pi: Vec<f64>,
    log_det: Vec<f64>,
    /// `ω Ψ⁻¹`, the expected precision
    prec: Vec<DMatrix<f64>>,
    theta: Vec<DVector<f64>>,
    inv_lambda: Vec<f64>,
}

/// Variational posterior over the truncated mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    prior: NwPrior,
    settings: LearnerSettings,
    stats: Vec<Stats>,
    sticks: Vec<(f64, f64)>,
    clumps: Vec<Clump>,
    clump_resp: Vec<DVector<f64>>,
    singlets: Vec<DVector<f64>>,
    singlet_resp: Vec<DVector<f64>>,
    elbo: f64,
    sweeps: usize,
}

/// Learned moment description of a finite Gaussian mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureEstimate {
    pub gamma: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<DMatrix<f64>>,
}

impl MixtureEstimate {
    pub fn m(&self) -> usize {
        self.gamma.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.first().map_or(0, |m| m.len())
    }

    pub fn single(mu: DVector<f64>, sigma: DMatrix<f64>) -> Self {
        MixtureEstimate { gamma: vec![1.0], mu: vec![mu], sigma: vec![sigma] }
    }

    /// Overall mean and covariance of the mixture.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut mean = DVector::zeros(n);
        for (g, m) in self.gamma.iter().zip(&self.mu) {
            mean += m * *g;
        }
        let mut cov = DMatrix::zeros(n, n);
        for ((g, m), s) in self.gamma.iter().zip(&self.mu).zip(&self.sigma) {
            let d = m - &mean;
            cov += (s + &d * d.transpose()) * *g;
        }
        (mean, cov)
    }
}

fn logsumexp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

fn ln_multi_gamma(n: usize, x: f64) -> f64 {
    let nf = n as f64;
    nf * (nf - 1.0) / 4.0 * std::f64::consts::PI.ln() + (1..=n).map(|i| ln_gamma(x + (1.0 - i as f64) / 2.0)).sum::<f64>()
}

fn log_det_pd(m: &DMatrix<f64>) -> f64 {
    match symmetrize(m).cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
        None => f64::NEG_INFINITY,
    }
}

fn inverse_pd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = symmetrize(m);
    match s.clone().cholesky() {
        Some(c) => symmetrize(&c.inverse()),
        None => symmetrize(&eigen_floor(&s, 1e-12).try_inverse().expect("floored matrix is invertible")),
    }
}

impl Posterior {
    pub fn new(prior: NwPrior) -> Result<Self, DpmmError> {
        Self::with_settings(prior, LearnerSettings::default())
    }

    pub fn with_settings(prior: NwPrior, settings: LearnerSettings) -> Result<Self, DpmmError> {
        prior.validate()?;
        let n = prior.dim();
        let k = prior.kmax;
        Ok(Posterior {
            stats: vec![Stats::zero(n); k],
            sticks: vec![(1.0, prior.alpha); k],
            prior,
            settings,
            clumps: Vec::new(),
            clump_resp: Vec::new(),
            singlets: Vec::new(),
            singlet_resp: Vec::new(),
            elbo: f64::NEG_INFINITY,
            sweeps: 0,
        })
    }

    pub fn prior(&self) -> &NwPrior {
        &self.prior
    }

    pub fn clumps(&self) -> &[Clump] {
        &self.clumps
    }

    pub fn singlets(&self) -> &[DVector<f64>] {
        &self.singlets
    }

    pub fn sticks(&self) -> &[(f64, f64)] {
        &self.sticks
    }

    /// Evidence lower bound after the last sweep (−∞ before any data).
    pub fn elbo(&self) -> f64 {
        self.elbo
    }

    /// Coordinate-ascent sweeps used by the last `observe`.
    pub fn last_sweeps(&self) -> usize {
        self.sweeps
    }

    /// Total number of samples represented.
    pub fn sample_count(&self) -> usize {
        self.clumps.iter().map(|c| c.count).sum::<usize>() + self.singlets.len()
    }

    /// Expected number of samples assigned to each component.
    pub fn component_counts(&self) -> Vec<f64> {
        self.stats.iter().map(|s| s.count).collect()
    }

    /// Scalars held in memory for data summaries.
    pub fn stored_scalars(&self) -> usize {
        let n = self.prior.dim();
        self.clumps.len() * ((n * n + 3 * n) / 2 + 1) + self.singlets.len() * n
    }

    pub fn component(&self, k: usize) -> NwParams {
        self.params_from(&self.stats[k])
    }

    fn params_from(&self, s: &Stats) -> NwParams {
        let p = &self.prior;
        let lambda = p.lambda0 + s.count;
        let theta = (&p.theta0 * p.lambda0 + &s.sum) / lambda;
        let omega = p.omega0 + s.count;
        let psi = &p.psi0 + &s.sumsq + &p.theta0 * p.theta0.transpose() * p.lambda0 - &theta * theta.transpose() * lambda;
        NwParams { theta, lambda, omega, psi: symmetrize(&psi) }
    }

    fn expected_log_pi(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.sticks.len());
        let mut rest = 0.0;
        for &(a, b) in &self.sticks {
            let ab = digamma(a + b);
            out.push(digamma(a) - ab + rest);
            rest += digamma(b) - ab;
        }
        out
    }

    fn expectations(&self) -> Expectations {
        let n = self.prior.dim();
        let mut e = Expectations {
            log_pi: self.expected_log_pi(),
            log_det: Vec::new(),
            prec: Vec::new(),
            theta: Vec::new(),
            inv_lambda: Vec::new(),
        };
        for s in &self.stats {
            let p = self.params_from(s);
            let psi_inv = inverse_pd(&p.psi);
            let ld = (1..=n).map(|i| digamma((p.omega + 1.0 - i as f64) / 2.0)).sum::<f64>()
                + n as f64 * 2f64.ln()
                - log_det_pd(&p.psi);
            e.log_det.push(ld);
            e.prec.push(psi_inv * p.omega);
            e.theta.push(p.theta);
            e.inv_lambda.push(1.0 / p.lambda);
        }
        e
    }

    /// Unnormalized log responsibilities of a group of `count` samples with
    /// the given sums, all sharing one assignment.
    fn unit_logits(&self, e: &Expectations, count: f64, sum: &DVector<f64>, sumsq: &DMatrix<f64>) -> Vec<f64> {
        let n = self.prior.dim() as f64;
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        (0..self.stats.len())
            .map(|k| {
                let m = &e.prec[k];
                let th = &e.theta[k];
                // Σ (x−θ)'M(x−θ) over the group
                let quad = (m * sumsq).trace() - 2.0 * th.dot(&(m * sum)) + count * th.dot(&(m * th));
                count * e.log_pi[k] + 0.5 * count * (e.log_det[k] - n * ln2pi - n * e.inv_lambda[k]) - 0.5 * quad
            })
            .collect()
    }

    fn normalize(logits: Vec<f64>) -> DVector<f64> {
        let lse = logsumexp(&logits);
        DVector::from_iterator(logits.len(), logits.iter().map(|l| (l - lse).exp()))
    }

    /// Log posterior predictive density (multivariate Student-t).
    fn log_predictive(&self, s: &Stats, x: &DVector<f64>) -> f64 {
        let n = self.prior.dim() as f64;
        let p = self.params_from(s);
        let dof = p.omega - n + 1.0;
        let scale = p.lambda * dof / (1.0 + p.lambda);
        let psi_inv = inverse_pd(&p.psi);
        let d = x - &p.theta;
        let maha = scale * d.dot(&(psi_inv * &d));
        ln_gamma((dof + n) / 2.0) - ln_gamma(dof / 2.0) + 0.5 * (n * scale.ln() - log_det_pd(&p.psi))
            - 0.5 * n * (dof * std::f64::consts::PI).ln()
            - 0.5 * (dof + n) * (1.0 + maha / dof).ln()
    }

    /// Hard assignment of a new sample given current statistics: occupied
    /// components weighted by their counts, one fresh component by `alpha`.
    fn greedy_component(&self, x: &DVector<f64>) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        let mut fresh_seen = false;
        for (k, s) in self.stats.iter().enumerate() {
            let weight = if s.count > 0.5 {
                s.count.ln()
            } else if !fresh_seen {
                fresh_seen = true;
                self.prior.alpha.ln()
            } else {
                continue;
            };
            let score = weight + self.log_predictive(s, x);
            if score > best.0 {
                best = (score, k);
            }
        }
        best.1
    }

    fn check_sample(&self, x: &DVector<f64>) -> Result<(), DpmmError> {
        let n = self.prior.dim();
        if x.len() != n {
            return Err(DpmmError::DimensionMismatch { expected: n, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DpmmError::NonFiniteSample);
        }
        Ok(())
    }

    /// Incorporate a batch of samples. The samples are kept as singlets
    /// until `compress` folds them into clumps.
    pub fn observe(&mut self, batch: &[DVector<f64>]) -> Result<(), DpmmError> {
        for x in batch {
            self.check_sample(x)?;
        }
        if batch.is_empty() {
            return Ok(());
        }
        // Process in an order fixed by the sample values alone, so the result
        // does not depend on batch order. Hashing scatters the points, which
        // keeps the greedy pass from sweeping through a cluster edge-first.
        let mut batch: Vec<(u64, &DVector<f64>)> = batch.iter().map(|x| (sample_key(x), x)).collect();
        batch.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.iter().partial_cmp(b.1.iter()).expect("finite samples")));
        let batch = batch.into_iter().map(|(_, x)| x);
        let kmax = self.stats.len();
        for x in batch {
            let k = self.greedy_component(x);
            self.stats[k].add(1.0, 1.0, x, &(x * x.transpose()));
            let mut r = DVector::zeros(kmax);
            r[k] = 1.0;
            self.singlets.push(x.clone());
            self.singlet_resp.push(r);
        }
        self.m_step();
        let mut prev = self.compute_elbo();
        self.sweeps = 0;
        for sweep in 1..=self.settings.max_sweeps {
            self.e_step();
            self.m_step();
            let cur = self.compute_elbo();
            self.sweeps = sweep;
            let done = (cur - prev).abs() <= self.settings.elbo_tol;
            prev = cur;
            if done {
                break;
            }
        }
        self.elbo = prev;
        Ok(())
    }

    fn e_step(&mut self) {
        let e = self.expectations();
        let clump_resp = self
            .clumps
            .iter()
            .map(|c| Self::normalize(self.unit_logits(&e, c.count as f64, &c.sum, &c.sumsq)))
            .collect();
        let singlet_resp = self
            .singlets
            .iter()
            .map(|x| Self::normalize(self.unit_logits(&e, 1.0, x, &(x * x.transpose()))))
            .collect();
        self.clump_resp = clump_resp;
        self.singlet_resp = singlet_resp;
    }

    fn m_step(&mut self) {
        let n = self.prior.dim();
        let mut stats = vec![Stats::zero(n); self.stats.len()];
        for (c, r) in self.clumps.iter().zip(&self.clump_resp) {
            for (k, s) in stats.iter_mut().enumerate() {
                if r[k] > 0.0 {
                    s.add(r[k], c.count as f64, &c.sum, &c.sumsq);
                }
            }
        }
        for (x, r) in self.singlets.iter().zip(&self.singlet_resp) {
            let xx = x * x.transpose();
            for (k, s) in stats.iter_mut().enumerate() {
                if r[k] > 0.0 {
                    s.add(r[k], 1.0, x, &xx);
                }
            }
        }
        let counts: Vec<f64> = stats.iter().map(|s| s.count).collect();
        let mut tail: f64 = counts.iter().sum();
        for (k, stick) in self.sticks.iter_mut().enumerate() {
            tail -= counts[k];
            *stick = (1.0 + counts[k], self.prior.alpha + tail.max(0.0));
        }
        self.stats = stats;
    }

    fn compute_elbo(&self) -> f64 {
        let e = self.expectations();
        let p = &self.prior;
        let n = p.dim();
        let nf = n as f64;
        let mut total = 0.0;
        // expected log likelihood + assignment prior − assignment entropy
        let mut unit = |logits: Vec<f64>, r: &DVector<f64>| {
            for (k, l) in logits.iter().enumerate() {
                if r[k] > 0.0 {
                    total += r[k] * (l - r[k].ln());
                }
            }
        };
        for (c, r) in self.clumps.iter().zip(&self.clump_resp) {
            unit(self.unit_logits(&e, c.count as f64, &c.sum, &c.sumsq), r);
        }
        for (x, r) in self.singlets.iter().zip(&self.singlet_resp) {
            unit(self.unit_logits(&e, 1.0, x, &(x * x.transpose())), r);
        }
        // sticks: −KL(Beta(a,b) ‖ Beta(1,α))
        for &(a, b) in &self.sticks {
            let kl = ln_beta(1.0, p.alpha) - ln_beta(a, b)
                + (a - 1.0) * digamma(a)
                + (b - p.alpha) * digamma(b)
                + (1.0 + p.alpha - a - b) * digamma(a + b);
            total -= kl;
        }
        // components: −KL(NW_k ‖ NW_0)
        let ld_psi0 = log_det_pd(&p.psi0);
        for (k, s) in self.stats.iter().enumerate() {
            let q = self.params_from(s);
            let ld_psi = log_det_pd(&q.psi);
            let e_ld = e.log_det[k];
            let psi_inv = inverse_pd(&q.psi);
            let d = &q.theta - &p.theta0;
            // KL between the Gaussian parts, averaged over Λ
            let kl_mean = 0.5 * (nf * p.lambda0 / q.lambda - nf + p.lambda0 * q.omega * d.dot(&(&psi_inv * &d)) + nf * (q.lambda / p.lambda0).ln());
            // KL between Wisharts W(Ψ⁻¹, ω) and W(Ψ0⁻¹, ω0)
            let kl_wish = 0.5 * (q.omega - p.omega0) * e_ld - 0.5 * q.omega * nf
                + 0.5 * q.omega * (&p.psi0 * &psi_inv).trace()
                + 0.5 * q.omega * ld_psi - 0.5 * p.omega0 * ld_psi0
                + ln_multi_gamma(n, p.omega0 / 2.0) - ln_multi_gamma(n, q.omega / 2.0)
                - 0.5 * (q.omega - p.omega0) * nf * 2f64.ln();
            total -= kl_mean + kl_wish;
        }
        total
    }

    /// Fold singlets with a confident assignment into the clump of their
    /// dominant component.
    pub fn compress(&mut self) {
        let threshold = self.settings.compress_threshold;
        let mut owner: Vec<Option<usize>> = vec![None; self.stats.len()];
        for (i, r) in self.clump_resp.iter().enumerate() {
            let k = r.imax();
            if owner[k].is_none() {
                owner[k] = Some(i);
            }
        }
        let singlets = std::mem::take(&mut self.singlets);
        let resp = std::mem::take(&mut self.singlet_resp);
        for (x, r) in singlets.into_iter().zip(resp) {
            let k = r.imax();
            if r[k] < threshold {
                self.singlets.push(x);
                self.singlet_resp.push(r);
                continue;
            }
            match owner[k] {
                Some(i) => self.clumps[i].absorb(&x),
                None => {
                    owner[k] = Some(self.clumps.len());
                    self.clumps.push(Clump::singleton(&x));
                    self.clump_resp.push(r);
                }
            }
        }
    }

    /// Mixture moments for the ambiguity set. Means are pulled radially
    /// toward `theta0` until they lie strictly inside `w`.
    pub fn extract(&self, w: &HPolytope) -> Result<MixtureEstimate, DpmmError> {
        let kmax = self.stats.len();
        if kmax == 0 {
            return Err(DpmmError::EmptyMixture);
        }
        let n = self.prior.dim();
        // expected stick weights
        let mut weights = Vec::with_capacity(kmax);
        let mut rest = 1.0;
        for &(a, b) in &self.sticks {
            weights.push(rest * a / (a + b));
            rest *= b / (a + b);
        }
        let mut active: Vec<usize> = (0..kmax).filter(|&k| self.stats[k].count > 0.5).collect();
        if active.is_empty() {
            active.push(0);
        }
        let last = *active.last().expect("nonempty");
        weights[last] += rest;
        let total_active: f64 = active.iter().map(|&k| weights[k]).sum();
        let kept: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&k| weights[k] / total_active >= self.settings.prune_weight)
            .collect();
        let kept = if kept.is_empty() { vec![last] } else { kept };
        let norm: f64 = kept.iter().map(|&k| weights[k]).sum();
        let mut est = MixtureEstimate { gamma: Vec::new(), mu: Vec::new(), sigma: Vec::new() };
        for &k in &kept {
            let p = self.component(k);
            let sigma = if p.omega > n as f64 + 1.0 {
                &p.psi / (p.omega - n as f64 - 1.0)
            } else {
                &p.psi / p.omega
            };
            est.gamma.push(weights[k] / norm);
            est.mu.push(project_radially(w, &self.prior.theta0, &p.theta));
            est.sigma.push(eigen_floor(&sigma, self.settings.covariance_floor));
        }
        Ok(est)
    }
}

fn sample_key(x: &DVector<f64>) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in x.iter() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Shrink `x` toward `center` until it satisfies `Cx ≤ (1−1e-6)d`.
pub fn project_radially(w: &HPolytope, center: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let shrink = 1.0 - 1e-6;
    let dir = x - center;
    let cd = w.c() * &dir;
    let cc = w.c() * center;
    let mut t: f64 = 1.0;
    for i in 0..w.n_rows() {
        if cd[i] > 0.0 {
            let room = shrink * w.d()[i] - cc[i];
            t = t.min((room / cd[i]).max(0.0));
        }
    }
    center + dir * t
}

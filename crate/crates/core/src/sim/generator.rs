//! Disturbance generators: Gaussian mixtures truncated to the support.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::SimError;
use crate::dpmm::{project_radially, MixtureEstimate};
use crate::linalg::eigen_floor;
use crate::polytope::HPolytope;

const REJECTION_CAP: usize = 100_000;

/// One axis-aligned Gaussian component of a generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Per-dimension standard deviations.
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub components: Vec<GaussianComponent>,
}

impl DisturbanceSpec {
    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Self {
        DisturbanceSpec { components: vec![GaussianComponent { weight: 1.0, mean, std }] }
    }

    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        let bad = |s: String| Err(SimError::InvalidScenario(s));
        if self.components.is_empty() {
            return bad("a disturbance spec needs at least one component".into());
        }
        for (i, c) in self.components.iter().enumerate() {
            if c.mean.len() != n || c.std.len() != n {
                return bad(format!("component {i} has the wrong dimension"));
            }
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return bad(format!("component {i} needs a positive weight"));
            }
            if c.mean.iter().chain(&c.std).any(|v| !v.is_finite()) || c.std.iter().any(|&s| s < 0.0) {
                return bad(format!("component {i} has invalid moments"));
            }
        }
        Ok(())
    }
}

/// Draws from a [`DisturbanceSpec`] restricted to `W`. Box supports use
/// exact per-dimension inverse-CDF sampling; other polytopes fall back to
/// rejection.
#[derive(Clone, Debug)]
pub struct Sampler {
    spec: DisturbanceSpec,
    w: HPolytope,
    bounds: Option<(Vec<f64>, Vec<f64>)>,
    normal: Normal,
}

impl Sampler {
    pub fn new(spec: DisturbanceSpec, w: HPolytope) -> Result<Self, SimError> {
        spec.validate(w.dim())?;
        let bounds = box_bounds(&w)?;
        Ok(Sampler { spec, w, bounds, normal: Normal::standard() })
    }

    pub fn spec(&self) -> &DisturbanceSpec {
        &self.spec
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>, SimError> {
        let total: f64 = self.spec.components.iter().map(|c| c.weight).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut comp = self.spec.components.last().expect("validated nonempty");
        for c in &self.spec.components {
            if pick < c.weight {
                comp = c;
                break;
            }
            pick -= c.weight;
        }
        let n = self.w.dim();
        match &self.bounds {
            Some((lo, hi)) => Ok(DVector::from_iterator(
                n,
                (0..n).map(|i| self.truncated(rng, comp.mean[i], comp.std[i], lo[i], hi[i])),
            )),
            None => {
                for _ in 0..REJECTION_CAP {
                    let x = DVector::from_iterator(
                        n,
                        (0..n).map(|i| comp.mean[i] + comp.std[i] * self.truncated(rng, 0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY)),
                    );
                    if self.w.contains(&x, 0.0) {
                        return Ok(x);
                    }
                }
                Err(SimError::UnsupportedSupport)
            }
        }
    }

    fn truncated<R: Rng + ?Sized>(&self, rng: &mut R, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
        let u: f64 = rng.random();
        if std == 0.0 {
            return mean.clamp(lo, hi);
        }
        let mut a = (lo - mean) / std;
        let mut b = (hi - mean) / std;
        // work in the lower tail, where the CDF keeps its precision
        let flip = a > 0.0;
        if flip {
            (a, b) = (-b, -a);
        }
        let fa = self.normal.cdf(a);
        let fb = self.normal.cdf(b);
        let p = fa + u * (fb - fa);
        let mut z = if p <= 0.0 { a } else { self.normal.inverse_cdf(p) };
        if !z.is_finite() {
            z = if p <= 0.5 { a } else { b };
        }
        z = z.clamp(a, b);
        if flip {
            z = -z;
        }
        (mean + std * z).clamp(lo, hi)
    }
}

/// Per-axis bounds if every row of `W` constrains a single coordinate and
/// both sides of each axis are bounded.
fn box_bounds(w: &HPolytope) -> Result<Option<(Vec<f64>, Vec<f64>)>, SimError> {
    let n = w.dim();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    for r in 0..w.n_rows() {
        let row = w.c().row(r);
        let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
        if nz.len() != 1 {
            return Ok(None);
        }
        let j = nz[0];
        let bound = w.d()[r] / row[j];
        if row[j] > 0.0 {
            hi[j] = hi[j].min(bound);
        } else {
            lo[j] = lo[j].max(bound);
        }
    }
    if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
        return Ok(None);
    }
    Ok(Some((lo, hi)))
}

/// Single-component ambiguity parameters from the pooled sample mean and
/// covariance.
pub fn global_moment_baseline(samples: &[DVector<f64>], w: &HPolytope, floor: f64) -> Result<MixtureEstimate, SimError> {
    if samples.len() < 2 {
        return Err(SimError::TooFewSamples(samples.len()));
    }
    let n = w.dim();
    let count = samples.len() as f64;
    let mut mean = DVector::zeros(n);
    for s in samples {
        mean += s;
    }
    mean /= count;
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let d = s - &mean;
        cov += &d * d.transpose();
    }
    cov /= count - 1.0;
    let mu = project_radially(w, &DVector::zeros(n), &mean);
    Ok(MixtureEstimate::single(mu, eigen_floor(&cov, floor)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_component_is_constant() {
        let w = HPolytope::symmetric_box(&[0.6, 0.6]).unwrap();
        let s = Sampler::new(DisturbanceSpec::gaussian(vec![0.1, -0.2], vec![0.0, 0.0]), w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(s.sample(&mut rng).unwrap().as_slice(), &[0.1, -0.2]);
        }
    }

    #[test]
    fn far_tail_stays_in_support() {
        let w = HPolytope::symmetric_box(&[0.1]).unwrap();
        let s = Sampler::new(DisturbanceSpec::gaussian(vec![2.0], vec![0.05]), w.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = s.sample(&mut rng).unwrap();
            assert!(w.contains(&x, 0.0) && x[0] > 0.09);
        }
    }

    #[test]
    fn non_box_support_uses_rejection() {
        let w = HPolytope::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            DVector::from_row_slice(&[1.0, 0.5, 0.5]),
        )
        .unwrap();
        let s = Sampler::new(DisturbanceSpec::gaussian(vec![0.0, 0.0], vec![0.3, 0.3]), w.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert!(w.contains(&s.sample(&mut rng).unwrap(), 0.0));
        }
    }

    #[test]
    fn constant_samples_give_floored_covariance() {
        let w = HPolytope::symmetric_box(&[0.6, 0.6]).unwrap();
        let samples = vec![DVector::from_row_slice(&[0.1, 0.1]); 5];
        let mix = global_moment_baseline(&samples, &w, 1e-8).unwrap();
        assert_eq!(mix.m(), 1);
        assert!((mix.sigma[0][(0, 0)] - 1e-8).abs() < 1e-15);
        assert!(global_moment_baseline(&samples[..1], &w, 1e-8).is_err());
    }
}

mod common;

use drmpc::dpmm::{NwPrior, Posterior};
use drmpc::polytope::HPolytope;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample_mean(data: &[DVector<f64>]) -> DVector<f64> {
    data.iter().fold(DVector::zeros(data[0].len()), |acc, x| acc + x) / data.len() as f64
}

fn dominant(est: &drmpc::dpmm::MixtureEstimate, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..est.m()).collect();
    idx.sort_by(|&a, &b| est.gamma[b].partial_cmp(&est.gamma[a]).unwrap());
    idx.truncate(count);
    idx
}

#[test]
fn single_tight_cluster() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = common::gaussian_cluster(&mut rng, &[0.25, -0.15], 0.03, 200);
    let mut post = Posterior::new(NwPrior::default_for(2)).unwrap();
    post.observe(&data).unwrap();
    let est = post.extract(&HPolytope::symmetric_box(&[0.6, 0.6]).unwrap()).unwrap();
    let k = dominant(&est, 1)[0];
    assert!(est.gamma[k] > 0.9, "{:?}", est.gamma);
    assert!((&est.mu[k] - sample_mean(&data)).amax() < 0.05);
    assert!((&est.mu[k] - DVector::from_row_slice(&[0.25, -0.15])).amax() < 0.05);
}

#[test]
fn two_separated_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = common::gaussian_cluster(&mut rng, &[0.3, 0.3], 0.05, 200);
    let b = common::gaussian_cluster(&mut rng, &[-0.3, -0.3], 0.05, 200);
    let mut data = [a.clone(), b.clone()].concat();
    data.shuffle(&mut rng);
    let mut post = Posterior::new(NwPrior::default_for(2)).unwrap();
    post.observe(&data).unwrap();
    let est = post.extract(&HPolytope::symmetric_box(&[0.6, 0.6]).unwrap()).unwrap();
    let top = dominant(&est, 2);
    for &k in &top {
        assert!(est.gamma[k] > 0.4 && est.gamma[k] < 0.6, "{:?}", est.gamma);
        let target = if est.mu[k][0] > 0.0 { sample_mean(&a) } else { sample_mean(&b) };
        assert!((&est.mu[k] - target).amax() < 0.1);
    }
    assert!(est.mu[top[0]][0] * est.mu[top[1]][0] < 0.0);
    let total: f64 = est.gamma.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(est.gamma.iter().all(|&g| g > 0.0));
}

#[test]
fn streaming_with_compression_keeps_memory_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = HPolytope::symmetric_box(&[0.6, 0.6]).unwrap();
    let mut post = Posterior::new(NwPrior::default_for(2)).unwrap();
    let mut seen = 0;
    for step in 0..60 {
        let center = if step % 2 == 0 { [0.3, 0.3] } else { [-0.3, -0.3] };
        let batch = common::gaussian_cluster(&mut rng, &center, 0.05, 5);
        seen += batch.len();
        post.observe(&batch).unwrap();
        post.compress();
        assert_eq!(post.sample_count(), seen);
        let n = 2;
        assert_eq!(post.stored_scalars(), post.clumps().len() * ((n * n + 3 * n) / 2 + 1) + post.singlets().len() * n);
        assert!(post.clumps().len() <= post.prior().kmax);
        for c in post.clumps() {
            let scatter = &c.sumsq - &c.sum * c.sum.transpose() / c.count as f64;
            assert!(drmpc::linalg::min_eigenvalue(&scatter) >= -1e-9);
        }
        let est = post.extract(&w).unwrap();
        assert!(est.mu.iter().all(|m| w.contains(m, 0.0)));
    }
    assert!(post.singlets().len() < 30, "{}", post.singlets().len());
}

#[test]
fn permuting_a_batch_barely_changes_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = common::gaussian_cluster(&mut rng, &[0.3, 0.3], 0.04, 100);
    let b = common::gaussian_cluster(&mut rng, &[-0.3, -0.3], 0.04, 100);
    let data = [a, b].concat();
    let mut shuffled = data.clone();
    shuffled.shuffle(&mut rng);
    let w = HPolytope::symmetric_box(&[0.6, 0.6]).unwrap();
    let run = |d: &[DVector<f64>]| {
        let mut post = Posterior::new(NwPrior::default_for(2)).unwrap();
        post.observe(d).unwrap();
        let mut est = post.extract(&w).unwrap();
        // order components by their first mean coordinate
        let mut idx: Vec<usize> = (0..est.m()).collect();
        idx.sort_by(|&i, &j| est.mu[i][0].partial_cmp(&est.mu[j][0]).unwrap());
        est.gamma = idx.iter().map(|&i| est.gamma[i]).collect();
        est.mu = idx.iter().map(|&i| est.mu[i].clone()).collect();
        est.sigma = idx.iter().map(|&i| est.sigma[i].clone()).collect();
        est
    };
    let e1 = run(&data);
    let e2 = run(&shuffled);
    assert_eq!(e1.m(), e2.m());
    for k in 0..e1.m() {
        assert!((e1.gamma[k] - e2.gamma[k]).abs() < 1e-6);
        assert!((&e1.mu[k] - &e2.mu[k]).amax() < 1e-6);
        assert!((&e1.sigma[k] - &e2.sigma[k]).amax() < 1e-6);
    }
}

#[test]
fn mean_outside_support_is_pulled_inside() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = common::gaussian_cluster(&mut rng, &[0.9, 0.0], 0.01, 50);
    let mut post = Posterior::new(NwPrior::default_for(2)).unwrap();
    post.observe(&data).unwrap();
    let w = HPolytope::symmetric_box(&[0.6, 0.6]).unwrap();
    let est = post.extract(&w).unwrap();
    for m in &est.mu {
        assert!(w.contains(m, 0.0));
        assert!(m[0] < 0.6);
    }
}

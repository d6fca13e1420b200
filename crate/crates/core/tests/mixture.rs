mod common;

use gmm_imm::gmm::{em_step, gmm_fit, initialize, responsibilities, GmmConfig, GmmParams, InitMode, Point};
use gmm_imm::Execution;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn blobs(centers: &[Point], spread: f64, per: usize, seed: u64) -> Vec<Point> {
    let mut rng = common::rng(seed);
    let n = Normal::new(0.0, spread).unwrap();
    let mut out = Vec::new();
    for c in centers {
        for _ in 0..per {
            out.push([c[0] + n.sample(&mut rng), c[1] + n.sample(&mut rng), c[2] + n.sample(&mut rng)]);
        }
    }
    out
}

fn random_cloud(seed: u64) -> Vec<Point> {
    let mut rng = common::rng(seed);
    let k = rng.random_range(1..5);
    let centers: Vec<Point> = (0..k)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)])
        .collect();
    let spread = rng.random_range(0.005..0.2);
    let per = rng.random_range(20..80);
    blobs(&centers, spread, per, seed ^ 0x5eed)
}

fn assert_simplex(v: &[f64]) {
    assert!(v.iter().all(|w| w.is_finite() && *w >= 0.0));
    assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_never_decreases_likelihood(cloud_seed in any::<u64>(), seed in any::<u64>(), m in 1usize..7) {
        let cloud = random_cloud(cloud_seed);
        let cfg = GmmConfig { max_iter: 60, tol: 0.0, ..GmmConfig::new(m, seed) };
        let (params, trace) = gmm_fit(&cloud, &cfg).unwrap();
        prop_assert!(trace.worst_decrease() <= 1e-8, "decrease {}", trace.worst_decrease());
        assert_simplex(&params.weights);
        for s in cloud.iter().step_by(7) {
            assert_simplex(&responsibilities(&params, s));
        }
    }
}

#[test]
fn two_blobs_are_recovered() {
    let truth = [[0.6, -0.08, 0.08], [0.95, -0.01, 0.01]];
    let cloud = blobs(&truth, 0.01, 300, 4);
    for seed in 0..5 {
        let (p, trace) = gmm_fit(&cloud, &GmmConfig::new(2, seed)).unwrap();
        assert!(trace.converged);
        for t in &truth {
            let best = p
                .means
                .iter()
                .map(|m| m.iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.05, "seed {seed}: {best}");
        }
        approx::assert_abs_diff_eq!(p.weights[0], 0.5, epsilon = 0.02);
    }
}

#[test]
fn single_component_is_the_sample_moments() {
    let cloud = random_cloud(9);
    let (p, trace) = gmm_fit(&cloud, &GmmConfig::new(1, 0)).unwrap();
    assert_eq!(trace.iterations, 2);
    let n = cloud.len() as f64;
    for d in 0..3 {
        let mean = cloud.iter().map(|s| s[d]).sum::<f64>() / n;
        let var = cloud.iter().map(|s| (s[d] - mean).powi(2)).sum::<f64>() / n;
        assert!((p.means[0][d] - mean).abs() < 1e-12);
        assert!((p.variances[0][d] - var.max(1e-8)).abs() < 1e-12 * (1.0 + var));
    }
    assert_eq!(p.weights, vec![1.0]);
}

#[test]
fn em_step_is_equivariant_under_component_relabeling() {
    let cloud = blobs(&[[0.6, 0.0, 0.0], [0.9, 0.05, 0.0], [0.3, 0.0, 0.05]], 0.02, 60, 2);
    let p = initialize(&cloud, 3, InitMode::KMeansPlusPlus, &mut common::rng(1)).unwrap();
    let perm = [2, 0, 1];
    let q = GmmParams::new(
        perm.iter().map(|&i| p.weights[i]).collect(),
        perm.iter().map(|&i| p.means[i]).collect(),
        perm.iter().map(|&i| p.variances[i]).collect(),
    )
    .unwrap();
    let a = em_step(&p, &cloud, Execution::Sequential, &mut common::rng(0)).unwrap();
    let b = em_step(&q, &cloud, Execution::Sequential, &mut common::rng(0)).unwrap();
    assert!(a.rescued.is_empty() && b.rescued.is_empty());
    assert!((a.log_likelihood - b.log_likelihood).abs() <= 1e-9 * a.log_likelihood.abs());
    for (j, &i) in perm.iter().enumerate() {
        assert!((a.params.weights[i] - b.params.weights[j]).abs() < 1e-12);
        for d in 0..3 {
            assert!((a.params.means[i][d] - b.params.means[j][d]).abs() < 1e-12);
            assert!((a.params.variances[i][d] - b.params.variances[j][d]).abs() < 1e-12);
        }
    }
}

#[test]
fn fits_are_deterministic_and_strategy_independent() {
    let cloud = random_cloud(77);
    for init in [InitMode::KMeansPlusPlus, InitMode::Random] {
        let cfg = GmmConfig { init, max_iter: 100, ..GmmConfig::new(5, 3) };
        let seq = gmm_fit(&cloud, &GmmConfig { exec: Execution::Sequential, ..cfg }).unwrap();
        let par = gmm_fit(&cloud, &GmmConfig { exec: Execution::Parallel, ..cfg }).unwrap();
        let again = gmm_fit(&cloud, &GmmConfig { exec: Execution::Parallel, ..cfg }).unwrap();
        assert_eq!(seq.0, par.0);
        assert_eq!(par.0, again.0);
        assert_eq!(seq.1.log_likelihoods, par.1.log_likelihoods);
    }
}

#[test]
fn more_components_than_clusters_stay_valid() {
    let cloud = blobs(&[[0.5, 0.0, 0.0]], 0.01, 40, 6);
    let (p, trace) = gmm_fit(&cloud, &GmmConfig { max_iter: 200, ..GmmConfig::new(12, 2) }).unwrap();
    p.validate().unwrap();
    assert!(trace.worst_decrease() <= 1e-8);
    assert!(p.variances.iter().flatten().all(|v| *v >= 1e-8));
}

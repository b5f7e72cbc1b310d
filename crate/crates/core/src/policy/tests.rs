use ndarray::Array2;
use rand::Rng;

use super::*;
use crate::numerics::finite_diff::{central_gradient, max_relative_error};
use crate::numerics::rng::seeded;

fn random_policy(seed: u64, n: usize, m: usize) -> GaussianPolicy {
    let mut rng = seeded(seed);
    let mut p = GaussianPolicy::new(n, m, &[8, 8], &mut rng).unwrap();
    // undo the small output scaling so gradients are not tiny
    let mut params = p.params();
    for x in params.iter_mut() {
        *x += rng.random_range(-0.3..0.3);
    }
    p.set_params(&params).unwrap();
    p
}

fn zero_policy(n: usize, m: usize) -> GaussianPolicy {
    let net = Mlp::zeros(&[n, 4, m], Activation::Tanh, Activation::Identity).unwrap();
    GaussianPolicy::from_parts(net, vec![0.0; m]).unwrap()
}

#[test]
fn zero_net_gives_standard_normal() {
    let p = zero_policy(3, 2);
    let (mean, std) = p.action_distribution(&[0.5, 1.0, -2.0]).unwrap();
    assert_eq!(mean, vec![0.0, 0.0]);
    assert_eq!(std, vec![1.0, 1.0]);
}

#[test]
fn log_std_ln2_gives_std_two() {
    let mut p = random_policy(1, 2, 3);
    p.set_log_std(&[2f64.ln(); 3]).unwrap();
    let (_, std) = p.action_distribution(&[0.1, 0.2]).unwrap();
    for s in std {
        assert!((s - 2.0).abs() < 1e-15);
    }
}

#[test]
fn distribution_mean_is_net_output() {
    let p = random_policy(2, 3, 2);
    let s = [0.3, -0.1, 0.8];
    assert_eq!(p.action_distribution(&s).unwrap().0, p.mean_net().apply(&s).unwrap());
}

#[test]
fn initial_std_is_one() {
    let p = GaussianPolicy::new(3, 2, &[32, 32], &mut seeded(0)).unwrap();
    assert_eq!(p.std(), vec![1.0, 1.0]);
}

#[test]
fn reparametrized_noise_free_and_unit() {
    let p = random_policy(3, 2, 2);
    let s = [0.2, 0.4];
    assert_eq!(p.reparametrized_action(&s, &[0.0, 0.0]).unwrap(), p.mean_action(&s).unwrap());
    let z = zero_policy(2, 2);
    assert_eq!(z.reparametrized_action(&s, &[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
    assert!(z.reparametrized_action(&s, &[0.3]).is_err());
}

#[test]
fn reparametrized_gradient_matches_fd() {
    for seed in 0..10 {
        let p = random_policy(10 + seed, 3, 2);
        let s = [0.5, -0.3, 0.9];
        let zeta = [0.7, -1.1];
        let a = p.reparametrized_action(&s, &zeta).unwrap();
        let up: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
        let g = p.reparametrized_action_grad(&s, &zeta, &up).unwrap();
        let fd = central_gradient(
            |theta| {
                let mut q = p.clone();
                q.set_params(theta).unwrap();
                q.reparametrized_action(&s, &zeta).unwrap().iter().map(|x| x * x).sum()
            },
            &p.params(),
            1e-5,
        );
        assert!(max_relative_error(&g, &fd) < 1e-5);
    }
}

#[test]
fn log_prob_standard_normal_values() {
    let p = zero_policy(1, 1);
    let mode = p.log_prob(&[0.0], &[0.0]).unwrap();
    assert!((mode + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    assert!((mode + 0.9189).abs() < 1e-4);
    let one_sd = p.log_prob(&[0.0], &[1.0]).unwrap();
    assert!((one_sd - (mode - 0.5)).abs() < 1e-15);
}

#[test]
fn density_integrates_to_one() {
    let mut p = random_policy(4, 1, 1);
    p.set_log_std(&[0.4]).unwrap();
    let s = [0.25];
    let (mean, std) = p.action_distribution(&s).unwrap();
    let (lo, hi) = (mean[0] - 12.0 * std[0], mean[0] + 12.0 * std[0]);
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    // trapezoid rule
    let mut total = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        total += w * p.log_prob(&s, &[lo + i as f64 * h]).unwrap().exp();
    }
    assert!((total * h - 1.0).abs() < 1e-3);
}

#[test]
fn log_prob_gradient_matches_fd() {
    for seed in 0..10 {
        let p = random_policy(20 + seed, 3, 2);
        let s = [0.1, 0.7, -0.4];
        let a = [0.9, -0.2];
        let g = p.log_prob_grad(&s, &a).unwrap();
        let fd = central_gradient(
            |theta| {
                let mut q = p.clone();
                q.set_params(theta).unwrap();
                q.log_prob(&s, &a).unwrap()
            },
            &p.params(),
            1e-5,
        );
        assert!(max_relative_error(&g, &fd) < 1e-5);
    }
}

#[test]
fn kl_identical_is_exactly_zero() {
    let p = random_policy(5, 3, 2);
    let states = Array2::from_shape_fn((7, 3), |(i, j)| (i as f64 - 3.0) * 0.3 + j as f64 * 0.1);
    assert_eq!(GaussianPolicy::kl_mean(&p, &p, states.view()), 0.0);
}

#[test]
fn kl_std_one_to_two() {
    let old = zero_policy(1, 1);
    let mut new = zero_policy(1, 1);
    new.set_log_std(&[2f64.ln()]).unwrap();
    let states = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, -2.0]).unwrap();
    let kl = GaussianPolicy::kl_mean(&old, &new, states.view());
    let want = 2f64.ln() + 1.0 / 8.0 - 0.5;
    assert!((kl - want).abs() < 1e-15);
    assert!((kl - 0.3181).abs() < 1e-4);
}

#[test]
fn kl_nonnegative_for_random_pairs() {
    let mut rng = seeded(77);
    let states = Array2::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64 * 0.2 - 1.0);
    for k in 0..1000 {
        let mut a = random_policy(1000 + k, 2, 2);
        let mut b = random_policy(5000 + k, 2, 2);
        a.set_log_std(&[rng.random_range(-2.0..1.0), rng.random_range(-2.0..1.0)]).unwrap();
        b.set_log_std(&[rng.random_range(-2.0..1.0), rng.random_range(-2.0..1.0)]).unwrap();
        assert!(GaussianPolicy::kl_mean(&a, &b, states.view()) >= 0.0);
    }
}

#[test]
fn kl_gradient_matches_fd() {
    let old = random_policy(30, 2, 2);
    let new = random_policy(31, 2, 2);
    let states = Array2::from_shape_fn((4, 2), |(i, j)| i as f64 * 0.3 - j as f64 * 0.5);
    let g = GaussianPolicy::kl_mean_grad(&old, &new, states.view());
    let fd = central_gradient(
        |theta| {
            let mut q = new.clone();
            q.set_params(theta).unwrap();
            GaussianPolicy::kl_mean(&old, &q, states.view())
        },
        &new.params(),
        1e-5,
    );
    assert!(max_relative_error(&g, &fd) < 1e-5);
}

#[test]
fn fisher_vector_product_matches_kl_hessian_fd() {
    for seed in 0..5 {
        let p = random_policy(40 + seed, 3, 2);
        let states = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let mut rng = seeded(seed);
        let v: Vec<f64> = (0..p.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fv = p.fisher_vector_product(states.view(), &v);
        let h = 1e-5;
        let shifted = |sign: f64| {
            let mut q = p.clone();
            let theta: Vec<f64> = p.params().iter().zip(&v).map(|(t, d)| t + sign * h * d).collect();
            q.set_params(&theta).unwrap();
            GaussianPolicy::kl_mean_grad(&p, &q, states.view())
        };
        let (up, down) = (shifted(1.0), shifted(-1.0));
        let fd: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        assert!(max_relative_error(&fv, &fd) < 1e-4, "seed {seed}");
    }
}

#[test]
fn score_function_has_zero_mean() {
    let mut rng = seeded(123);
    let net = Mlp::new(&[1, 1], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
    let p = GaussianPolicy::from_parts(net, vec![-0.3]).unwrap();
    let s = [0.8];
    let n = 100_000;
    let k = p.num_params();
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    for _ in 0..n {
        let (a, _) = p.sample_action(&s, &mut rng).unwrap();
        let g = p.log_prob_grad(&s, &a).unwrap();
        for i in 0..k {
            sum[i] += g[i];
            sum_sq[i] += g[i] * g[i];
        }
    }
    for i in 0..k {
        let mean = sum[i] / n as f64;
        let var = sum_sq[i] / n as f64 - mean * mean;
        let stderr = (var / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * stderr, "param {i}: {mean} vs {stderr}");
    }
}

#[test]
fn params_roundtrip_and_layout() {
    let p = random_policy(50, 3, 2);
    let mut q = zero_policy(3, 2);
    assert!(q.set_params(&p.params()).is_err());
    let mut r = random_policy(51, 3, 2);
    r.set_params(&p.params()).unwrap();
    assert_eq!(r, p);
    let shapes = p.param_shapes();
    assert_eq!(shapes.last().unwrap().name, "log_std");
    assert_eq!(shapes.iter().map(|s| s.len()).sum::<usize>(), p.num_params());
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = random_policy(52, 3, 2);
    p.save(dir.path(), "policy").unwrap();
    assert_eq!(GaussianPolicy::load(dir.path(), "policy").unwrap(), p);
    assert!(GaussianPolicy::load(dir.path(), "missing").is_err());
}

use super::*;
use crate::dynamics::Normalizer;
use crate::numerics::rng::seeded;
use crate::numerics::{Activation, Mlp};

fn offset_model(n: usize, m: usize, offset: f64) -> DynamicsModel {
    let net = Mlp::zeros(&[n + m, 4, n], Activation::Relu, Activation::Identity).unwrap();
    let mut norm = Normalizer::identity(n, m);
    norm.output_mean = vec![offset; n];
    DynamicsModel::from_parts(net, norm, 0).unwrap()
}

fn random_model(n: usize, m: usize, seed: u64) -> DynamicsModel {
    let mut model = DynamicsModel::new(n, m, &[8], seed).unwrap();
    let mut rng = seeded(seed);
    let params: Vec<f64> = model.net().params().iter().map(|p| p + rng.random_range(-0.1..0.1)).collect();
    model.net_mut().set_params(&params).unwrap();
    model
}

fn pendulum_policy(seed: u64) -> GaussianPolicy {
    GaussianPolicy::new(3, 1, &[8, 8], &mut seeded(seed)).unwrap()
}

fn starts(n: usize) -> Vec<Vec<f64>> {
    let env = EnvSpec::from_id("pendulum").unwrap();
    env.sample_initial_states(n, &mut seeded(17))
}

#[test]
fn mode_names_roundtrip() {
    for name in SAMPLING_MODES {
        let mode: SamplingMode = name.parse().unwrap();
        assert_eq!(mode.to_string(), name);
    }
    assert_eq!("one_model:3".parse::<SamplingMode>().unwrap(), SamplingMode::OneModel(3));
    assert!("bogus".parse::<SamplingMode>().is_err());
}

#[test]
fn degenerate_exploration_is_noise_free_rollout() {
    let env = EnvSpec::from_id("pendulum").unwrap();
    let policy = pendulum_policy(1);
    let explore = ExplorationConfig {
        std_range: (0.0, 0.0),
        param_noise_scale: 0.0,
        timesteps_per_iteration: 400,
    };
    let episodes = collect_real_samples(&env, &policy, Some(&policy.params()), &explore, &mut seeded(5)).unwrap();
    let mut rng = seeded(5);
    for ep in &episodes {
        let mut s = env.sample_initial_state(&mut rng);
        for t in ep {
            let a = env.clip_action(&policy.mean_action(&s).unwrap());
            assert_eq!(t.s, s);
            assert_eq!(t.a, a);
            s = env.step(&s, &a).unwrap();
            assert_eq!(t.s_next, s);
        }
    }
}

#[test]
fn episode_count_and_determinism() {
    let env = EnvSpec::from_id("pendulum").unwrap();
    let policy = pendulum_policy(2);
    let explore = ExplorationConfig::default();
    let a = collect_real_samples(&env, &policy, None, &explore, &mut seeded(3)).unwrap();
    assert_eq!(a.len(), 15);
    assert!(a.iter().all(|e| e.len() == 200));
    let b = collect_real_samples(&env, &policy, None, &explore, &mut seeded(3)).unwrap();
    assert_eq!(a, b);
    // stored actions are the applied ones
    assert!(a.iter().flatten().all(|t| t.a[0].abs() <= env.action_bound()));
}

#[test]
fn parameter_noise_scales_with_policy_change() {
    let env = EnvSpec::from_id("pendulum").unwrap();
    let policy = pendulum_policy(4);
    let explore = ExplorationConfig {
        std_range: (0.0, 0.0),
        param_noise_scale: 1.0,
        timesteps_per_iteration: 200,
    };
    let same = collect_real_samples(&env, &policy, Some(&policy.params()), &explore, &mut seeded(1)).unwrap();
    let none = collect_real_samples(&env, &policy, None, &explore, &mut seeded(1)).unwrap();
    assert_eq!(same, none);
    let shifted: Vec<f64> = policy.params().iter().map(|p| p + 0.5).collect();
    let moved = collect_real_samples(&env, &policy, Some(&shifted), &explore, &mut seeded(1)).unwrap();
    assert_ne!(moved, none);
    assert!(collect_real_samples(&env, &policy, Some(&shifted[1..]), &explore, &mut seeded(1)).is_err());
}

#[test]
fn split_through_rollout_api() {
    let env = EnvSpec::from_id("pendulum").unwrap();
    let episodes = collect_real_samples(&env, &pendulum_policy(0), None, &ExplorationConfig::default(), &mut seeded(0)).unwrap();
    let mut d = Dataset::default();
    split_dataset(&mut d, episodes, &mut seeded(1)).unwrap();
    assert_eq!((d.train_episodes(), d.validation_episodes()), (10, 5));
    let mut small = Dataset::default();
    assert!(split_dataset(&mut small, vec![vec![]; 0], &mut seeded(1)).is_err());
}

#[test]
fn single_member_modes_coincide() {
    let env = EnvSpec::from_id("pendulum").unwrap();
    let members = vec![random_model(3, 1, 9)];
    let policy = pendulum_policy(3);
    let s0 = starts(20);
    let reference = simulate_fictitious(&env, &members, &policy, &s0, 30, SamplingMode::StepRand, false, &mut seeded(8)).unwrap();
    for name in SAMPLING_MODES {
        let mode: SamplingMode = name.parse().unwrap();
        let batch = simulate_fictitious(&env, &members, &policy, &s0, 30, mode, false, &mut seeded(8)).unwrap();
        assert_eq!(batch.states, reference.states, "{name}");
        assert_eq!(batch.actions, reference.actions, "{name}");
        assert_eq!(batch.rewards, reference.rewards, "{name}");
    }
}

#[test]
fn identical_members_coincide() {
    let env = EnvSpec::from_id("pendulum").unwrap();
    let member = random_model(3, 1, 12);
    let members = vec![member.clone(), member.clone(), member];
    let policy = pendulum_policy(5);
    let s0 = starts(10);
    let run = |mode| simulate_fictitious(&env, &members, &policy, &s0, 25, mode, false, &mut seeded(2)).unwrap();
    let a = run(SamplingMode::StepRand);
    let b = run(SamplingMode::ModelMean);
    let c = run(SamplingMode::ModelMed);
    assert_eq!(a.states, b.states);
    assert_eq!(a.states, c.states);
}

#[test]
fn constant_offset_member_statistics() {
    let env = EnvSpec::from_id("linear").unwrap();
    let members = vec![offset_model(2, 2, 1.0), offset_model(2, 2, 0.0), offset_model(2, 2, -1.0)];
    let policy = GaussianPolicy::new(2, 2, &[4], &mut seeded(0)).unwrap();
    let s0 = vec![vec![0.25, -0.5]; 4000];
    let delta = |mode| {
        let b = simulate_fictitious(&env, &members, &policy, &s0, 2, mode, false, &mut seeded(6)).unwrap();
        let mut out = Vec::new();
        for (i, s) in s0.iter().enumerate() {
            for j in 0..2 {
                out.push(b.states[1][[i, j]] - s[j]);
            }
        }
        out
    };
    assert!(delta(SamplingMode::ModelMean).iter().all(|d| *d == 0.0));
    assert!(delta(SamplingMode::ModelMed).iter().all(|d| *d == 0.0));
    let d = delta(SamplingMode::ModelMeanStd);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    // sample std of {+1, 0, -1} is exactly 1
    assert!(mean.abs() < 4.0 / n.sqrt(), "{mean}");
    assert!((sd - 1.0).abs() < 0.03, "{sd}");
}

#[test]
fn step_rand_member_choice_is_uniform() {
    let env = EnvSpec::from_id("linear").unwrap();
    let members: Vec<DynamicsModel> = (0..5).map(|k| offset_model(2, 2, 0.01 * k as f64)).collect();
    let policy = GaussianPolicy::new(2, 2, &[4], &mut seeded(0)).unwrap();
    let s0 = vec![vec![0.0, 0.0]; 200];
    let b = simulate_fictitious(&env, &members, &policy, &s0, 50, SamplingMode::StepRand, false, &mut seeded(4)).unwrap();
    let mut counts = [0usize; 5];
    for row in &b.model_indices {
        for k in row {
            counts[k.unwrap()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    assert_eq!(total, 10_000);
    let expected = total as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 4 degrees of freedom, p = 0.001
    assert!(chi2 < 18.47, "{chi2} {counts:?}");
}

#[test]
fn eps_rand_keeps_one_member_per_trajectory() {
    let env = EnvSpec::from_id("linear").unwrap();
    let members: Vec<DynamicsModel> = (0..4).map(|k| offset_model(2, 2, k as f64)).collect();
    let policy = GaussianPolicy::new(2, 2, &[4], &mut seeded(0)).unwrap();
    let s0 = vec![vec![0.0, 0.0]; 50];
    let b = simulate_fictitious(&env, &members, &policy, &s0, 10, SamplingMode::EpsRand, false, &mut seeded(1)).unwrap();
    for i in 0..50 {
        let k = b.model_indices[0][i];
        assert!(b.model_indices.iter().all(|row| row[i] == k));
    }
    let one = simulate_fictitious(&env, &members, &policy, &s0, 10, SamplingMode::OneModel(2), false, &mut seeded(1)).unwrap();
    assert!(one.model_indices.iter().flatten().all(|k| *k == Some(2)));
    assert!(simulate_fictitious(&env, &members, &policy, &s0, 10, SamplingMode::OneModel(4), false, &mut seeded(1)).is_err());
}

#[test]
fn rewards_use_known_function_on_clipped_actions() {
    let env = EnvSpec::from_id("pendulum").unwrap();
    let members = vec![random_model(3, 1, 1), random_model(3, 1, 2)];
    let mut policy = pendulum_policy(6);
    policy.set_log_std(&[2.0]).unwrap();
    let b = simulate_fictitious(&env, &members, &policy, &starts(8), 20, SamplingMode::StepRand, false, &mut seeded(3)).unwrap();
    let mut clipped_any = false;
    for t in 0..20 {
        for i in 0..8 {
            let a = b.actions[t].row(i).to_vec();
            clipped_any |= a[0].abs() > env.action_bound();
            let r = env.reward(&b.states[t].row(i).to_vec(), &env.clip_action(&a));
            assert_eq!(b.rewards[t][i], r);
            let mean = policy.mean_action(&b.states[t].row(i).to_vec()).unwrap();
            assert!((a[0] - mean[0] - policy.std()[0] * b.noise[t][[i, 0]]).abs() < 1e-12);
        }
    }
    assert!(clipped_any);
}

#[test]
fn non_finite_prediction_truncates() {
    let env = EnvSpec::from_id("linear").unwrap();
    let members = vec![offset_model(2, 2, 1e308)];
    let policy = GaussianPolicy::new(2, 2, &[4], &mut seeded(0)).unwrap();
    let b = simulate_fictitious(&env, &members, &policy, &[vec![0.0, 0.0]], 10, SamplingMode::OneModel(0), true, &mut seeded(0)).unwrap();
    // 0 -> 1e308 is finite, the next step overflows
    assert_eq!(b.lengths, vec![1]);
    assert!(b.returns()[0].is_finite());
}

#[test]
fn model_return_examples() {
    let mut env = EnvSpec::from_id("linear").unwrap();
    let policy = GaussianPolicy::new(2, 2, &[4], &mut seeded(0)).unwrap();
    let model = random_model(2, 2, 3);
    let s0: Vec<Vec<f64>> = env.sample_initial_states(10, &mut seeded(1));

    // horizon 1: mean of r(s0, a0) over the start states
    let est = estimate_model_return(&env, &model, &policy, &s0, 1, true, &mut seeded(2)).unwrap();
    let want = s0.iter().map(|s| env.reward(s, &policy.mean_action(s).unwrap())).sum::<f64>() / 10.0;
    assert!((est - want).abs() < 1e-12);

    // identity model, deterministic policy: scripted oracle
    let identity = offset_model(2, 2, 0.0);
    let est = estimate_model_return(&env, &identity, &policy, &s0, 7, true, &mut seeded(2)).unwrap();
    let mut total = 0.0;
    for s in &s0 {
        let a = env.clip_action(&policy.mean_action(s).unwrap());
        for _ in 0..7 {
            total += env.reward(s, &a);
        }
    }
    assert_eq!(est, total / 10.0);

    env.set_constant("state_cost", 0.0).unwrap();
    env.set_constant("action_cost", 0.0).unwrap();
    assert_eq!(estimate_model_return(&env, &model, &policy, &s0, 20, false, &mut seeded(2)).unwrap(), 0.0);
}

#[test]
fn member_returns_use_common_noise() {
    let env = EnvSpec::from_id("pendulum").unwrap();
    let m = random_model(3, 1, 4);
    let members = vec![m.clone(), m];
    let r = estimate_member_returns(&env, &members, &pendulum_policy(1), &starts(5), 20, false, 11).unwrap();
    assert_eq!(r[0], r[1]);
}

#[test]
fn real_rollout_matches_stepwise_replay() {
    let env = EnvSpec::from_id("pendulum").unwrap();
    let policy = GaussianPolicy::new(3, 1, &[8], &mut seeded(3)).unwrap();
    let batch = rollout_real(&env, &policy, 3, &mut seeded(4)).unwrap();
    assert_eq!(batch.total_steps(), 3 * env.horizon());
    for i in 0..3 {
        let mut s = batch.states[0].row(i).to_vec();
        let mut ret = 0.0;
        for t in 0..env.horizon() {
            assert_eq!(batch.states[t].row(i).to_vec(), s);
            let a = env.clip_action(&batch.actions[t].row(i).to_vec());
            ret += env.reward(&s, &a);
            s = env.step(&s, &a).unwrap();
        }
        assert_eq!(batch.returns()[i], ret);
    }
    assert!(rollout_real(&env, &policy, 0, &mut seeded(4)).is_err());
}

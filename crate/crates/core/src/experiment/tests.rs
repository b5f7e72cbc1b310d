use std::fs;

use super::*;
use crate::optim::OptimizerKind;
use crate::rollout::SamplingMode;
use crate::validation::ValidationMode;

fn tiny(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::parse_text(
        "env = pendulum
         env.horizon = 40
         models = 2
         timesteps_per_iteration = 160
         batch_timesteps = 200
         model_hidden = 16,16
         model_max_passes = 20
         model_patience = 10
         policy_hidden = 8
         validation_starts = 5
         max_inner_updates = 12
         eval_episodes = 3
         outer_iterations = 2",
    )
    .unwrap();
    cfg.seed = seed;
    cfg
}

#[test]
fn config_text_roundtrip() {
    let mut cfg = tiny(3);
    cfg.set("env.max_torque", "4.5").unwrap();
    cfg.set("sampling_mode", "one_model:1").unwrap();
    cfg.set("target_return", "-12.5").unwrap();
    let back = RunConfig::parse_text(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.sampling_mode, SamplingMode::OneModel(1));
    assert_eq!(back.build_env().unwrap().action_bound(), 4.5);
}

#[test]
fn config_rejects_bad_input() {
    let mut cfg = RunConfig::default();
    assert!(cfg.set("no_such_key", "1").is_err());
    assert!(cfg.set("models", "five").is_err());
    assert!(cfg.set("model_warm_start", "maybe").is_err());
    assert!(RunConfig::parse_text("models 5").is_err());
    assert!(RunConfig::parse_text("# only a comment\n\nmodels = 3 # trailing").is_ok());

    let mut cfg = tiny(0);
    cfg.exploration.timesteps_per_iteration = 150;
    assert!(cfg.validate().is_err(), "not a multiple of the horizon");
    let mut cfg = tiny(0);
    cfg.exploration.timesteps_per_iteration = 80;
    assert!(cfg.validate().is_err(), "fewer than 3 episodes");
    let mut cfg = tiny(0);
    cfg.optimizer.kind = OptimizerKind::Bptt;
    cfg.sampling_mode = SamplingMode::ModelMean;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny(0);
    cfg.sampling_mode = SamplingMode::OneModel(2);
    assert!(cfg.validate().is_err());
    let mut cfg = tiny(0);
    cfg.env = "nope".into();
    assert!(cfg.validate().is_err());
}

#[test]
fn vanilla_pins_single_model_and_bptt() {
    let mut cfg = tiny(0);
    cfg.algorithm = Algorithm::VanillaBptt;
    cfg.models = 5;
    let eff = cfg.effective();
    assert_eq!(eff.models, 1);
    assert_eq!(eff.sampling_mode, SamplingMode::OneModel(0));
    assert_eq!(eff.validation.mode, ValidationMode::OneModel);
    assert_eq!(eff.optimizer.kind, OptimizerKind::Bptt);

    let records = run_vanilla(&cfg).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records.iter().all(|r| r.eta.len() == 1 && r.model_losses.len() == 1));
}

#[test]
fn zero_budget_runs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(0);
    cfg.outer_iterations = 0;
    let out = run(&cfg, Some(dir.path())).unwrap();
    assert!(out.records.is_empty() && out.updates.is_empty());
    let csv = fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert_eq!(csv.trim(), RUN_COLUMNS.join(","));
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn metrpo_run_accounts_real_steps_and_replays_bitwise() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = tiny(11);
    let out = run(&cfg, Some(a.path())).unwrap();
    run(&cfg, Some(b.path())).unwrap();

    for (i, r) in out.records.iter().enumerate() {
        assert_eq!(r.iteration, i);
        assert_eq!(r.real_steps, (i + 1) * cfg.exploration.timesteps_per_iteration);
        assert_eq!(r.eta.len(), 2);
        assert!(r.inner_updates >= 1 && r.inner_updates <= cfg.max_inner_updates);
        assert_eq!(out.updates.iter().filter(|u| u.iteration == i).count(), r.inner_updates);
    }
    // one baseline evaluation per iteration plus one per check
    let per_iter: usize = out.records.iter().map(|r| 1 + r.inner_updates / cfg.validation.check_every).sum();
    assert_eq!(out.checks.len(), per_iter);
    assert!(out.checks.iter().all(|c| c.real.is_some()));

    for name in ["run.csv", "updates.csv", "validation.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, fs::read(b.path().join(name)).unwrap(), "{name} differs");
    }
    let rows = fs::read_to_string(a.path().join("run.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + out.records.len());
    let first = rows.lines().nth(1).unwrap();
    let fields: Vec<&str> = first.split(',').collect();
    assert_eq!(fields.len(), RUN_COLUMNS.len());
    assert_eq!(fields[2].parse::<f64>().unwrap(), out.records[0].real_return_mean);

    let log = fs::read_to_string(a.path().join("run.log")).unwrap();
    let (logged, hash) = read_log_header(&log).unwrap();
    assert_eq!(logged, cfg.effective());
    assert_eq!(hash.as_deref(), Some(CODE_HASH));

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "ok");
    assert_eq!(summary["iterations"], 2);

    let ckpt = a.path().join("checkpoints/final");
    let reloaded = crate::policy::GaussianPolicy::load(&ckpt, "policy").unwrap();
    assert_eq!(reloaded, out.policy);
    assert!(evaluate_checkpoint(&ckpt, 2, 0).unwrap().mean.is_finite());
}

#[test]
fn different_seeds_differ() {
    let a = run(&tiny(1), None).unwrap();
    let b = run(&tiny(2), None).unwrap();
    assert_ne!(a.records, b.records);
}

#[test]
fn fixed_update_modes_run_exact_counts() {
    let mut cfg = tiny(4);
    cfg.validation.mode = ValidationMode::NoEarly5;
    cfg.outer_iterations = 1;
    let out = run(&cfg, None).unwrap();
    assert_eq!(out.records[0].inner_updates, 5);
    // only the baseline evaluation
    assert_eq!(out.checks.len(), 1);
}

#[test]
fn inner_cap_bounds_updates() {
    let mut cfg = tiny(5);
    cfg.max_inner_updates = 3;
    cfg.outer_iterations = 1;
    let out = run(&cfg, None).unwrap();
    assert_eq!(out.records[0].inner_updates, 3);
}

#[test]
fn target_return_stops_early() {
    let mut cfg = tiny(6);
    cfg.outer_iterations = 3;
    cfg.target_return = Some(f64::NEG_INFINITY);
    let out = run(&cfg, None).unwrap();
    assert_eq!(out.records.len(), 1);
}

#[test]
fn other_optimizers_and_modes_run() {
    for (kind, mode) in [
        (OptimizerKind::Vpg, SamplingMode::ModelMeanStd),
        (OptimizerKind::Bptt, SamplingMode::EpsRand),
        (OptimizerKind::Trpo, SamplingMode::ModelMed),
    ] {
        let mut cfg = tiny(7);
        cfg.outer_iterations = 1;
        cfg.optimizer.kind = kind;
        cfg.sampling_mode = mode;
        cfg.validation.mode = ValidationMode::TrpoMean;
        let out = run(&cfg, None).unwrap();
        assert!(out.checks.iter().all(|c| c.batch_mean.is_some()), "{kind} {mode}");
    }
    let mut cfg = tiny(7);
    cfg.outer_iterations = 1;
    cfg.validation.mode = ValidationMode::Real;
    cfg.real_at_checks = false;
    assert!(run(&cfg, None).unwrap().checks.iter().all(|c| c.real.is_some()));
}

#[test]
fn model_free_counts_batches() {
    let mut cfg = tiny(8);
    cfg.algorithm = Algorithm::ModelFreeTrpo;
    cfg.outer_iterations = 3;
    let out = run(&cfg, None).unwrap();
    assert!(out.ensemble.is_none());
    for (i, r) in out.records.iter().enumerate() {
        assert_eq!(r.real_steps, (i + 1) * 160);
        assert!(r.eta.is_empty());
    }
    assert!(out.updates.iter().all(|u| u.stats.kl <= cfg.model_free_max_kl + 1e-12));
}

#[test]
fn final_return_uses_last_two() {
    let rec = |i: usize, v: f64| IterationRecord {
        iteration: i,
        real_steps: 10 * (i + 1),
        real_return_mean: v,
        real_return_stderr: 0.0,
        eta: vec![],
        model_losses: vec![],
        inner_updates: 0,
    };
    assert_eq!(final_return(&[]), None);
    assert_eq!(final_return(&[rec(0, 4.0)]), Some(4.0));
    assert_eq!(final_return(&[rec(0, 100.0), rec(1, 1.0), rec(2, 3.0)]), Some(2.0));
}

#[test]
fn divergence_scan() {
    let check = |iteration: usize, update: usize, eta: f64, real: f64| CheckRecord {
        iteration,
        update,
        ratio: None,
        passed: None,
        continue_flag: true,
        eta: vec![eta, eta],
        batch_mean: None,
        real: Some(real),
    };
    let checks = vec![
        check(0, 0, 1.0, 5.0),
        check(0, 5, 2.0, 6.0),
        check(0, 10, 3.0, 4.0), // flagged
        check(0, 15, 4.0, 3.0), // same iteration, counted once
        check(1, 0, 9.0, 9.0),  // pair across iterations is ignored
        check(1, 5, 8.0, 1.0),
        check(2, 0, 1.0, 1.0),
        check(2, 5, 1.5, 0.5), // flagged
    ];
    assert_eq!(divergent_iterations(&checks, 0.0), vec![0, 2]);
    // only iteration 0 moves by more than 0.75 in both directions
    assert_eq!(divergent_iterations(&checks, 0.75), vec![0]);
    assert!(divergent_iterations(&checks, 1.0).is_empty());
}

#[test]
fn swing_up_reference_brackets_threshold() {
    let cfg = RunConfig::default();
    let r = swing_up_reference(&cfg, 0.9).unwrap();
    assert!(r.reference_return > r.passive_return);
    assert!(r.threshold > r.passive_return && r.threshold < r.reference_return);
    let mut other = cfg.clone();
    other.env = "pointmass".into();
    assert!(swing_up_reference(&other, 0.9).is_err());
}

#[test]
fn ablation_records_failures_and_rejects_empty() {
    let mut base = tiny(0);
    base.outer_iterations = 1;
    assert!(run_ablation(&base, AblationAxis::Optimizer, &[], &[0], None).is_err());
    assert!(run_ablation(&base, AblationAxis::Optimizer, &["adam".into()], &[0], None).is_err());

    // bptt cannot run through the averaged model, so that cell fails
    base.sampling_mode = SamplingMode::ModelMean;
    let dir = tempfile::tempdir().unwrap();
    let values = vec!["trpo".to_string(), "bptt".to_string()];
    let table = run_ablation(&base, AblationAxis::Optimizer, &values, &[0, 1], Some(dir.path())).unwrap();
    assert_eq!(table.cells.len(), 4);
    assert!(table.cells.iter().filter(|c| c.value == "trpo").all(|c| c.outcome.is_ok()));
    assert!(table.cells.iter().filter(|c| c.value == "bptt").all(|c| c.outcome.is_err()));
    let summary = table.summary();
    assert_eq!(summary[0].3, 2);
    assert_eq!(summary[1].1, None);
    assert!(dir.path().join("optimizer=trpo/seed_1/run.csv").exists());
    let csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.contains("error:"));
}

#[test]
fn double_well_has_the_stated_critical_points() {
    // central differences of f against the closed-form derivative
    for i in 0..60 {
        let x = 0.1 * i as f64;
        let h = 1e-5;
        let fd = (double_well(x + h) - double_well(x - h)) / (2.0 * h);
        assert!((fd - double_well_grad(x)).abs() < 1e-6, "x = {x}");
    }
    for x in [GLOBAL_MIN, BASIN_BOUNDARY, LOCAL_MIN] {
        assert!(double_well_grad(x).abs() < 1e-12);
    }
    // 1.7 is the global minimum over a fine grid
    let best = (0..6001).map(|i| i as f64 * 1e-3).min_by(|a, b| double_well(*a).total_cmp(&double_well(*b))).unwrap();
    assert!((best - GLOBAL_MIN).abs() < 1e-3);
    assert!(double_well(LOCAL_MIN) > double_well(GLOBAL_MIN));
    assert!(in_global_basin(GLOBAL_MIN));
    assert!(in_global_basin(2.5));
    assert!(!in_global_basin(LOCAL_MIN));
}

#[test]
fn dense_fit_finds_the_global_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_bias_demo(&BiasDemoConfig::dense(0)).unwrap();
    assert!((report.argmin - GLOBAL_MIN).abs() < 0.1, "argmin {}", report.argmin);
    assert!(report.in_global_basin);
    let path = dir.path().join("curve.csv");
    write_bias_curve_csv(&path, &report).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1 + report.curve.len());
    assert!(run_bias_demo(&BiasDemoConfig {
        domain: (1.0, 1.0),
        ..BiasDemoConfig::default()
    })
    .is_err());
}

//! Training-loop properties and Monte Carlo oracles.

use acelab::advantage::ModulationKind;
use acelab::env::{Dataset, TaskSpec};
use acelab::metrics;
use acelab::policy::{Gradient, PolicyParams};
use acelab::seeding::{self, Purpose};
use acelab::theory;
use acelab::trainer::{
    apply_gradient, batch_loss_and_gradient, collect_group, k3, kl_estimate, surrogate_loss, train,
    Algorithm, OptimizerKind, TrainerConfig,
};

fn small_config(algorithm: Algorithm, steps: usize) -> TrainerConfig {
    TrainerConfig {
        algorithm,
        steps,
        checkpoint_every: 5,
        eval_samples: 32,
        eval_ks: vec![1, 4, 16],
        entropy_samples: 8,
        ..TrainerConfig::default()
    }
}

fn dataset() -> Dataset {
    Dataset::mod_sum(4, 4, 3, 4).unwrap()
}

#[test]
fn ace_with_zero_alpha_is_the_baseline() {
    let ds = dataset();
    for (ace, base) in [
        (Algorithm::AceGrpo, Algorithm::Grpo),
        (Algorithm::AceDapo, Algorithm::Dapo),
    ] {
        let a = train(
            &TrainerConfig {
                alpha: 0.0,
                ..small_config(ace, 20)
            },
            &ds,
            ds.uniform_policy().unwrap(),
        )
        .unwrap();
        let b = train(&small_config(base, 20), &ds, ds.uniform_policy().unwrap()).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
    }
}

#[test]
fn training_is_deterministic_and_schedule_independent() {
    let ds = dataset();
    let cfg = small_config(Algorithm::AceGrpo, 15);
    let a = train(&cfg, &ds, ds.uniform_policy().unwrap()).unwrap();
    let b = train(&cfg, &ds, ds.uniform_policy().unwrap()).unwrap();
    let c = train(
        &TrainerConfig {
            parallel: false,
            ..cfg.clone()
        },
        &ds,
        ds.uniform_policy().unwrap(),
    )
    .unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.params, c.params);
    assert_eq!(a.metrics, c.metrics);
    let d = train(
        &TrainerConfig { seed: 1, ..cfg },
        &ds,
        ds.uniform_policy().unwrap(),
    )
    .unwrap();
    assert_ne!(a.params, d.params);
}

#[test]
fn zero_steps_leave_the_policy_alone() {
    let ds = dataset();
    let start = ds.uniform_policy().unwrap();
    let out = train(&small_config(Algorithm::AceGrpo, 0), &ds, start.clone()).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(out.params, start);
    assert_eq!(out.reference, start);
}

#[test]
fn checkpoints_follow_the_schedule() {
    let ds = dataset();
    let out = train(
        &small_config(Algorithm::Grpo, 12),
        &ds,
        ds.uniform_policy().unwrap(),
    )
    .unwrap();
    let steps: Vec<usize> = out.metrics.iter().map(|m| m.step).collect();
    assert_eq!(steps, [5, 10, 12]);
    for m in &out.metrics {
        assert!((0.0..=1.0).contains(&m.oef));
        assert!(m.kl_to_ref >= 0.0);
        let p: Vec<f64> = m.pass_at_k.values().copied().collect();
        assert!(p.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    }
}

#[test]
fn start_of_step_invariants() {
    let mut rng = seeding::stream(5, Purpose::Instance, 0, 0);
    let task = TaskSpec::mod_sum(3, 0, 3, 3, 0).unwrap();
    let p = PolicyParams::random(3, 3, 1, 1.0, &mut rng).unwrap();
    for token_level in [true, false] {
        let cfg = TrainerConfig {
            token_level_loss: token_level,
            ..TrainerConfig::default()
        };
        let g = collect_group(&task, &p, &p, &p, &cfg, &mut rng).unwrap();
        assert_eq!(kl_estimate(&g), 0.0);
        let loss = surrogate_loss(&g, &p, &cfg).unwrap();
        assert!(loss.ratios.iter().flatten().all(|&r| r == 1.0));
        assert_eq!(loss.clip_fraction, 0.0);
        assert_eq!(loss.kl_term, 0.0);
        let adv = g.training_advantages(&cfg);
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        assert!((loss.surrogate + mean).abs() < 1e-12);
        assert_eq!(loss.total, loss.surrogate);
    }
}

#[test]
fn a_small_step_along_the_negative_gradient_lowers_the_loss() {
    let ds = dataset();
    let mut rng = seeding::stream(9, Purpose::Instance, 0, 0);
    let p = PolicyParams::random(4, 3, 4, 0.5, &mut rng).unwrap();
    let r = p.snapshot();
    let cfg = TrainerConfig::default();
    let groups: Vec<_> = ds
        .tasks()
        .iter()
        .map(|t| collect_group(t, &p, &r, &p, &cfg, &mut rng).unwrap())
        .filter(|g| !g.is_degenerate())
        .collect();
    assert!(!groups.is_empty());
    let (before, grad) = batch_loss_and_gradient(&groups, &p, &cfg).unwrap();
    let mut q = p.clone();
    apply_gradient(&mut q, &grad, 1e-3).unwrap();
    let (after, _) = batch_loss_and_gradient(&groups, &q, &cfg).unwrap();
    let total = |b: &[acelab::trainer::LossBreakdown]| b.iter().map(|x| x.total).sum::<f64>();
    assert!(total(&after) < total(&before));
}

#[test]
fn group_pass_rate_matches_exact_pass_rate() {
    let task = TaskSpec::mod_sum(5, 2, 3, 3, 0).unwrap();
    let mut rng = seeding::stream(2, Purpose::Instance, 0, 0);
    let p = PolicyParams::random(3, 3, 1, 1.0, &mut rng).unwrap();
    let q = task.exact_pass_rate(&p).unwrap();
    let cfg = TrainerConfig::default();
    let groups = 4000;
    let hits: f64 = (0..groups)
        .map(|_| {
            collect_group(&task, &p, &p, &p, &cfg, &mut rng)
                .unwrap()
                .stats
                .pass_rate
        })
        .sum();
    let n = (groups * cfg.group_size) as f64;
    let est = hits / groups as f64;
    let se = (q * (1.0 - q) / n).sqrt();
    assert!(
        (est - q).abs() <= 3.0 * se,
        "estimate {est} exact {q} se {se}"
    );
}

#[test]
fn k3_is_unbiased_for_sequence_kl() {
    let task = TaskSpec::mod_sum(3, 0, 3, 3, 0).unwrap();
    let mut rng = seeding::stream(4, Purpose::Instance, 0, 0);
    let p = PolicyParams::random(3, 3, 1, 1.0, &mut rng).unwrap();
    let r = PolicyParams::random(3, 3, 1, 1.0, &mut rng).unwrap();
    let mut exact_kl = 0.0;
    let mut expected_k3 = 0.0;
    for (tokens, prob, _) in task.enumerate_outcomes(&p).unwrap() {
        let lt = p.token_logprobs(0, &tokens).unwrap();
        let lr = r.token_logprobs(0, &tokens).unwrap();
        exact_kl += prob * (lt.iter().sum::<f64>() - lr.iter().sum::<f64>());
        expected_k3 += prob * lt.iter().zip(&lr).map(|(a, b)| k3(*a, *b)).sum::<f64>();
    }
    assert!(exact_kl > 0.0);
    assert!(
        (exact_kl - expected_k3).abs() < 1e-12,
        "{exact_kl} vs {expected_k3}"
    );
}

#[test]
fn sampled_extra_gradient_converges_to_exact() {
    let (p, r, t) = theory::random_instance(21, 0, 3, 2, 1.0).unwrap();
    let exact = theory::ace_extra_gradient(&p, &r, &t, 1.0).unwrap();
    let mut rng = seeding::stream(21, Purpose::Instance, 1, 0);
    let (mean, se) = theory::sampled_extra_gradient(&p, &r, &t, 1.0, 100_000, &mut rng).unwrap();
    for ((m, s), e) in mean.values().iter().zip(se.values()).zip(exact.values()) {
        if *s == 0.0 {
            assert!((m - e).abs() < 1e-12);
        } else {
            assert!((m - e).abs() <= 3.0 * s, "mc {m} exact {e} se {s}");
        }
    }
}

#[test]
fn dynamic_sampling_skips_degenerate_batches() {
    // A policy that always answers 0,0: every reward equals 1 for target 0.
    let ds = Dataset::new(vec![TaskSpec::mod_sum(2, 0, 2, 2, 0).unwrap()]).unwrap();
    let mut p = ds.uniform_policy().unwrap();
    for pos in 0..2 {
        for prev in 0..3 {
            p.row_mut(0, pos, prev)
                .unwrap()
                .copy_from_slice(&[60.0, -60.0]);
        }
    }
    let cfg = TrainerConfig {
        algorithm: Algorithm::Dapo,
        steps: 3,
        eval_samples: 32,
        eval_ks: vec![1],
        ..TrainerConfig::default()
    };
    let out = train(&cfg, &ds, p.clone()).unwrap();
    assert_eq!(out.skipped_steps, 3);
    assert_eq!(out.events.len(), 3);
    assert_eq!(out.params, p);
}

#[test]
fn relu_matches_baseline_while_no_error_is_overconfident() {
    // At the first step π_θ = π_ref, so every confidence is 0 and relu(0) = 0.
    let ds = dataset();
    let relu = TrainerConfig {
        modulation: ModulationKind::Relu,
        ..small_config(Algorithm::AceGrpo, 1)
    };
    let a = train(&relu, &ds, ds.uniform_policy().unwrap()).unwrap();
    let b = train(
        &small_config(Algorithm::Grpo, 1),
        &ds,
        ds.uniform_policy().unwrap(),
    )
    .unwrap();
    assert_eq!(a.params, b.params);
    let soft = train(
        &small_config(Algorithm::AceGrpo, 1),
        &ds,
        ds.uniform_policy().unwrap(),
    )
    .unwrap();
    assert_ne!(soft.params, b.params);
}

#[test]
fn optimizers_and_dapo_settings_run() {
    let ds = dataset();
    for optimizer in [OptimizerKind::Sgd, OptimizerKind::AdamW] {
        for algorithm in [Algorithm::Dapo, Algorithm::AceDapo] {
            let cfg = TrainerConfig {
                optimizer,
                learning_rate: if optimizer == OptimizerKind::Sgd {
                    5.0
                } else {
                    0.03
                },
                inner_epochs: 2,
                ..small_config(algorithm, 10)
            };
            assert_eq!(cfg.effective_clip_high(), 0.28);
            assert!(cfg.effective_dynamic_sampling());
            let out = train(&cfg, &ds, ds.uniform_policy().unwrap()).unwrap();
            assert_eq!(out.metrics.len(), 2);
            assert!(out.params.logits().iter().all(|x| x.is_finite()));
        }
    }
}

#[test]
fn learning_raises_reward() {
    let ds = Dataset::mod_sum(3, 3, 2, 3).unwrap();
    let cfg = TrainerConfig {
        steps: 150,
        checkpoint_every: 150,
        eval_samples: 64,
        eval_ks: vec![1],
        ..TrainerConfig::default()
    };
    let out = train(&cfg, &ds, ds.uniform_policy().unwrap()).unwrap();
    let reward = out.metrics.last().unwrap().mean_reward;
    assert!(reward > 0.6, "final reward {reward}");
    let exact: f64 = ds
        .tasks()
        .iter()
        .map(|t| t.exact_pass_rate(&out.params).unwrap())
        .sum::<f64>()
        / ds.len() as f64;
    assert!((exact - reward).abs() < 0.15);
    let _ = metrics::DEFAULT_KS;
    let _ = Gradient::zeros(out.params.shape());
}

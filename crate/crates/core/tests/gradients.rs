//! Analytic gradients against central finite differences.

use acelab::env::TaskSpec;
use acelab::policy::{Gradient, PolicyParams};
use acelab::seeding::{self, Purpose};
use acelab::theory::{self, finite_difference_gradient, relative_error};
use acelab::trainer::{
    collect_group, loss_and_gradient, surrogate_loss, Algorithm, RolloutGroup, TrainerConfig,
};
use rand::Rng;

const STEP: f64 = 1e-5;

#[test]
fn score_function_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let mut rng = seeding::stream(7, Purpose::Instance, i, 0);
        let v = rng.random_range(2..=4);
        let l = rng.random_range(1..=3);
        let c = rng.random_range(1..=2);
        let p = PolicyParams::random(v, l, c, 1.5, &mut rng).unwrap();
        let class = rng.random_range(0..c);
        let tokens: Vec<usize> = (0..l).map(|_| rng.random_range(0..v)).collect();
        let analytic = p.score_function(class, &tokens).unwrap();
        let fd =
            finite_difference_gradient(&p, STEP, |q| q.sequence_logprob(class, &tokens)).unwrap();
        worst = worst.max(relative_error(&analytic, &fd, 1e-12));
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn selective_regularizer_gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let (p, r, t) = theory::random_instance(3, i, 3, 2, 1.0).unwrap();
        let a = theory::exact_negative_advantage(&p, &t).unwrap();
        let analytic = theory::selective_regularizer_gradient(&p, &r, &t).unwrap();
        let fd = finite_difference_gradient(&p, STEP, |q| {
            theory::selective_regularizer_value_with(q, &r, &t, a)
        })
        .unwrap();
        worst = worst.max(relative_error(&analytic, &fd, 1e-12));
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

/// A scored group whose importance ratios differ from 1.
fn perturbed_group(seed: u64, config: &TrainerConfig) -> (PolicyParams, RolloutGroup) {
    let mut rng = seeding::stream(seed, Purpose::Instance, 0, 1);
    let task = TaskSpec::mod_sum(3, 1, 3, 3, 0).unwrap();
    let reference = PolicyParams::random(3, 3, 1, 1.0, &mut rng).unwrap();
    let old = PolicyParams::random(3, 3, 1, 1.0, &mut rng).unwrap();
    let mut params = old.clone();
    for x in params.logits_mut() {
        *x += 0.05 * rng.random_range(-1.0..1.0);
    }
    loop {
        // Rewards must vary or every advantage is zero.
        let group = collect_group(&task, &old, &reference, &old, config, &mut rng).unwrap();
        if !group.is_degenerate() {
            return (params, group);
        }
    }
}

fn near_clip_boundary(group: &RolloutGroup, params: &PolicyParams, config: &TrainerConfig) -> bool {
    let ratios = surrogate_loss(group, params, config).unwrap().ratios;
    let (lo, hi) = (1.0 - config.clip_low, 1.0 + config.effective_clip_high());
    ratios
        .iter()
        .flatten()
        .any(|r| (r - lo).abs() < 1e-3 || (r - hi).abs() < 1e-3)
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let mut checked = 0;
    for seed in 0..40u64 {
        for token_level in [true, false] {
            for algorithm in [Algorithm::Grpo, Algorithm::AceGrpo, Algorithm::AceDapo] {
                let config = TrainerConfig {
                    group_size: 6,
                    token_level_loss: token_level,
                    algorithm,
                    kl_coeff: 0.1,
                    clip_low: 0.03,
                    ..TrainerConfig::default()
                };
                let (params, group) = perturbed_group(seed, &config);
                if near_clip_boundary(&group, &params, &config) {
                    continue;
                }
                let mut grad = Gradient::zeros(params.shape());
                loss_and_gradient(&group, &params, &config, &mut grad, 1.0).unwrap();
                let fd = finite_difference_gradient(&params, STEP, |q| {
                    Ok(surrogate_loss(&group, q, &config)?.total)
                })
                .unwrap();
                let err = relative_error(&grad, &fd, 1e-10);
                assert!(
                    err <= 1e-5,
                    "seed {seed} token_level {token_level} {algorithm}: {err}"
                );
                checked += 1;
            }
        }
    }
    assert!(
        checked >= 100,
        "only {checked} instances away from the clip boundary"
    );
}

#[test]
fn clipping_is_exercised_by_the_gradient_check() {
    let config = TrainerConfig {
        group_size: 6,
        clip_low: 0.03,
        ..TrainerConfig::default()
    };
    let clipped = (0..40u64)
        .map(|s| {
            let (p, g) = perturbed_group(s, &config);
            surrogate_loss(&g, &p, &config).unwrap().clip_fraction
        })
        .filter(|&f| f > 0.0)
        .count();
    assert!(clipped > 0);
}

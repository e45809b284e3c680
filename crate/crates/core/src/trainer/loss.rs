//! Clipped surrogate loss, k3 KL estimate and their analytic gradient.
//!
//! Advantages and the confidence modulation inside them are constants here:
//! only the importance ratios and the KL estimate depend on θ.

use crate::error::{AceError, Result};
use crate::policy::{Gradient, PolicyParams};

use super::config::TrainerConfig;
use super::rollout::RolloutGroup;

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub surrogate: f64,
    pub kl_term: f64,
    /// `surrogate + β · kl_term`.
    pub total: f64,
    /// Importance ratios per rollout: one per token in token-level mode,
    /// a single sequence ratio otherwise.
    pub ratios: Vec<Vec<f64>>,
    pub clip_fraction: f64,
}

/// Outcome of one `min(ρA, clip(ρ)A)` term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippedTerm {
    pub value: f64,
    /// d value / d log ρ; zero when the clipped branch is selected.
    pub slope: f64,
    pub clipped: bool,
}

/// Evaluates the pessimistic clipped objective for one ratio.
pub fn clipped_term(ratio: f64, advantage: f64, clip_low: f64, clip_high: f64) -> ClippedTerm {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_low, 1.0 + clip_high) * advantage;
    if unclipped <= clipped {
        ClippedTerm {
            value: unclipped,
            slope: unclipped,
            clipped: false,
        }
    } else {
        ClippedTerm {
            value: clipped,
            slope: 0.0,
            clipped: true,
        }
    }
}

/// k3 estimator `e^Δ − 1 − Δ` with `Δ = log π_ref − log π_θ`; never negative.
pub fn k3(logp_theta: f64, logp_ref: f64) -> f64 {
    let delta = logp_ref - logp_theta;
    delta.exp_m1() - delta
}

/// Mean per-token k3 estimate from the log-probabilities recorded at collection.
pub fn kl_estimate(group: &RolloutGroup) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in &group.rollouts {
        for (lt, lr) in r.token_logp_theta.iter().zip(&r.token_logp_ref) {
            sum += k3(*lt, *lr);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Loss of one group with log π_θ recomputed from `params`.
pub fn surrogate_loss(
    group: &RolloutGroup,
    params: &PolicyParams,
    config: &TrainerConfig,
) -> Result<LossBreakdown> {
    evaluate(group, params, config, None)
}

/// Loss of one group; `grad += weight · ∇_θ loss`.
pub fn loss_and_gradient(
    group: &RolloutGroup,
    params: &PolicyParams,
    config: &TrainerConfig,
    grad: &mut Gradient,
    weight: f64,
) -> Result<LossBreakdown> {
    evaluate(group, params, config, Some((grad, weight)))
}

fn evaluate(
    group: &RolloutGroup,
    params: &PolicyParams,
    config: &TrainerConfig,
    mut grad: Option<(&mut Gradient, f64)>,
) -> Result<LossBreakdown> {
    let advantages = group.training_advantages(config);
    let g = group.rollouts.len();
    if g == 0 || advantages.len() != g {
        return Err(AceError::input(
            "group has no rollouts or mismatched advantages",
        ));
    }
    let (low, high) = (config.clip_low, config.effective_clip_high());
    let beta = config.kl_coeff;
    let class = group.task.prompt_class;
    let total_tokens: usize = group.rollouts.iter().map(|r| r.len()).sum();

    let mut surrogate = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0usize;
    let mut terms = 0usize;
    let mut ratios = Vec::with_capacity(g);

    for (rollout, &adv) in group.rollouts.iter().zip(advantages) {
        let lp_theta = params.token_logprobs(class, &rollout.tokens)?;
        let t_len = lp_theta.len();
        let mut token_weights = vec![0.0; t_len];

        if config.token_level_loss {
            let mut per_token = Vec::with_capacity(t_len);
            let mut objective = 0.0;
            for t in 0..t_len {
                let ratio = (lp_theta[t] - rollout.token_logp_old[t]).exp();
                let term = clipped_term(ratio, adv, low, high);
                objective += term.value;
                token_weights[t] = -term.slope / (g * t_len) as f64;
                clipped += usize::from(term.clipped);
                terms += 1;
                per_token.push(ratio);
            }
            surrogate -= objective / (g * t_len) as f64;
            ratios.push(per_token);
        } else {
            let lp_seq: f64 = lp_theta.iter().sum();
            let ratio = (lp_seq - rollout.logp_old).exp();
            let term = clipped_term(ratio, adv, low, high);
            surrogate -= term.value / g as f64;
            token_weights.fill(-term.slope / g as f64);
            clipped += usize::from(term.clipped);
            terms += 1;
            ratios.push(vec![ratio]);
        }

        for t in 0..t_len {
            let delta = rollout.token_logp_ref[t] - lp_theta[t];
            kl_sum += delta.exp_m1() - delta;
            // d k3 / dθ = (1 − e^Δ) ∇ log π_θ
            token_weights[t] += beta * (-delta.exp_m1()) / total_tokens as f64;
        }

        if let Some((grad, weight)) = grad.as_mut() {
            for w in &mut token_weights {
                *w *= *weight;
            }
            params.accumulate_token_scores(class, &rollout.tokens, &token_weights, grad)?;
        }
    }

    let kl_term = kl_sum / total_tokens as f64;
    Ok(LossBreakdown {
        surrogate,
        kl_term,
        total: surrogate + beta * kl_term,
        ratios,
        clip_fraction: clipped as f64 / terms as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pessimistic_min_on_negative_advantage() {
        let t = clipped_term(1.5, -1.0, 0.2, 0.2);
        assert_eq!(t.value, -1.5);
        assert!(!t.clipped);
        let t = clipped_term(1.5, 1.0, 0.2, 0.2);
        assert_eq!(t.value, 1.2);
        assert!(t.clipped);
        assert_eq!(t.slope, 0.0);
    }

    #[test]
    fn k3_zero_on_identical() {
        assert_eq!(k3(-1.3, -1.3), 0.0);
    }

    proptest! {
        #[test]
        fn k3_nonnegative(a in -20.0f64..0.0, b in -20.0f64..0.0) {
            prop_assert!(k3(a, b) >= 0.0);
        }

        #[test]
        fn clipped_never_exceeds_unclipped(
            ratio in 0.01f64..5.0, adv in -5.0f64..5.0, low in 0.01f64..0.9, extra in 0.0f64..0.5
        ) {
            let t = clipped_term(ratio, adv, low, low + extra);
            prop_assert!(t.value <= ratio * adv + 1e-15);
            if adv < 0.0 && ratio > 1.0 + low + extra {
                prop_assert_eq!(t.value, ratio * adv);
            }
        }
    }
}

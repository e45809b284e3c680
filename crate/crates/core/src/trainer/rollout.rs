use rand::Rng;

use crate::advantage::{confidence_score, group_stats, AdvantageVector, GroupStats, Rollout};
use crate::env::TaskSpec;
use crate::error::{AceError, Result};
use crate::policy::PolicyParams;

use super::config::TrainerConfig;

/// `G` scored rollouts of one prompt, with group statistics and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub task: TaskSpec,
    pub rollouts: Vec<Rollout>,
    pub stats: GroupStats,
    pub advantages: AdvantageVector,
    /// Indices with reward strictly above the group mean.
    pub positive_set: Vec<usize>,
    /// Indices with reward at or below the group mean.
    pub negative_set: Vec<usize>,
}

impl RolloutGroup {
    /// Builds a group from already-scored rollouts.
    pub fn from_rollouts(
        task: TaskSpec,
        rollouts: Vec<Rollout>,
        config: &TrainerConfig,
    ) -> Result<Self> {
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
        let stats = group_stats(&rewards)?;
        let advantages = AdvantageVector::compute(
            &rollouts,
            &stats,
            config.alpha,
            config.modulation,
            config.normalize_confidence,
        )?;
        let (positive_set, negative_set) =
            (0..rollouts.len()).partition(|&i| rewards[i] > stats.mean);
        Ok(Self {
            task,
            rollouts,
            stats,
            advantages,
            positive_set,
            negative_set,
        })
    }

    /// Advantages fed to the surrogate under the configured algorithm.
    pub fn training_advantages(&self, config: &TrainerConfig) -> &[f64] {
        if config.algorithm.uses_ace() {
            &self.advantages.ace
        } else {
            &self.advantages.grpo
        }
    }

    /// All rewards equal: zero advantage everywhere.
    pub fn is_degenerate(&self) -> bool {
        self.rollouts.windows(2).all(|w| w[0].reward == w[1].reward)
    }
}

/// Scores a token sequence under all three policies.
pub fn score_rollout(
    task: &TaskSpec,
    tokens: Vec<usize>,
    params: &PolicyParams,
    reference: &PolicyParams,
    old: &PolicyParams,
) -> Result<Rollout> {
    let class = task.prompt_class;
    let reward = f64::from(task.verify(&tokens)?.reward);
    let token_logp_theta = params.token_logprobs(class, &tokens)?;
    let token_logp_ref = reference.token_logprobs(class, &tokens)?;
    let token_logp_old = old.token_logprobs(class, &tokens)?;
    let logp_theta: f64 = token_logp_theta.iter().sum();
    let logp_ref: f64 = token_logp_ref.iter().sum();
    let logp_old: f64 = token_logp_old.iter().sum();
    let confidence = confidence_score(logp_theta, logp_ref, tokens.len(), false)?;
    let confidence_normalized = confidence_score(logp_theta, logp_ref, tokens.len(), true)?;
    Ok(Rollout {
        tokens,
        reward,
        logp_theta,
        logp_ref,
        logp_old,
        token_logp_theta,
        token_logp_ref,
        token_logp_old,
        confidence,
        confidence_normalized,
    })
}

/// Samples `config.group_size` rollouts of `task` from `params` and scores them.
pub fn collect_group<R: Rng + ?Sized>(
    task: &TaskSpec,
    params: &PolicyParams,
    reference: &PolicyParams,
    old: &PolicyParams,
    config: &TrainerConfig,
    rng: &mut R,
) -> Result<RolloutGroup> {
    if config.group_size < 2 {
        return Err(AceError::input(format!(
            "group size must be >= 2, got {}",
            config.group_size
        )));
    }
    let rollouts = (0..config.group_size)
        .map(|_| {
            let s = params.sample_sequence(task.prompt_class, task.length, rng)?;
            score_rollout(task, s.tokens, params, reference, old)
        })
        .collect::<Result<Vec<_>>>()?;
    RolloutGroup::from_rollouts(*task, rollouts, config)
}

/// Drops groups whose rewards are all equal.
pub fn dynamic_sampling_filter(groups: Vec<RolloutGroup>) -> Vec<RolloutGroup> {
    groups.into_iter().filter(|g| !g.is_degenerate()).collect()
}

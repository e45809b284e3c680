//! The RLVR training loop.
//!
//! Each outer step freezes π_old, collects one rollout group per task,
//! optionally drops zero-variance groups, and takes `inner_epochs` optimizer
//! steps on the mean group loss. π_ref is the policy as it stood before the
//! first step (after the optional pretraining phase). Metrics are recorded
//! every `checkpoint_every` steps and at the final step.

mod config;
mod loss;
mod optim;
mod rollout;

use rayon::prelude::*;

pub use config::{
    parse_usize_list, Algorithm, OptimizerKind, TrainerConfig, DAPO_CLIP_HIGH, TRAINER_KEYS,
};
pub use loss::{
    clipped_term, k3, kl_estimate, loss_and_gradient, surrogate_loss, ClippedTerm, LossBreakdown,
};
pub use optim::{apply_gradient, Optimizer};
pub use rollout::{collect_group, dynamic_sampling_filter, score_rollout, RolloutGroup};

use crate::env::Dataset;
use crate::error::{AceError, Result};
use crate::metrics::{self, MetricsRecord};
use crate::policy::{Gradient, PolicyParams, TokenDistribution};
use crate::seeding::{self, Purpose};

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub metrics: Vec<MetricsRecord>,
    /// Human-readable notes, e.g. steps skipped because every group was degenerate.
    pub events: Vec<String>,
    pub skipped_steps: usize,
}

/// Supervised steps pulling every logit row toward a random target
/// distribution, producing a non-uniform starting policy.
pub fn pretrain(
    params: &mut PolicyParams,
    steps: usize,
    learning_rate: f64,
    scale: f64,
    seed: u64,
) -> Result<()> {
    if steps == 0 {
        return Ok(());
    }
    let shape = params.shape();
    let mut rng = seeding::stream(seed, Purpose::Pretrain, 0, 0);
    let target = PolicyParams::random(
        shape.vocab_size,
        shape.max_len,
        shape.num_classes,
        scale,
        &mut rng,
    )?;
    let v = shape.vocab_size;
    let rows = shape.num_entries() / v;
    for _ in 0..steps {
        for r in 0..rows {
            let goal = TokenDistribution::from_logits(&target.logits()[r * v..(r + 1) * v]);
            let row = &mut params.logits_mut()[r * v..(r + 1) * v];
            let cur = TokenDistribution::from_logits(row);
            // cross-entropy gradient: probs − target
            for ((x, p), q) in row.iter_mut().zip(&cur.probs).zip(&goal.probs) {
                *x -= learning_rate * (p - q);
            }
        }
    }
    Ok(())
}

fn check_policy_covers(dataset: &Dataset, params: &PolicyParams) -> Result<()> {
    if params.vocab_size() != dataset.vocab_size()
        || params.max_len() < dataset.length()
        || params.num_classes() < dataset.num_classes()
    {
        return Err(AceError::input(format!(
            "policy (V={}, L={}, classes={}) does not cover dataset (V={}, L={}, classes={})",
            params.vocab_size(),
            params.max_len(),
            params.num_classes(),
            dataset.vocab_size(),
            dataset.length(),
            dataset.num_classes()
        )));
    }
    Ok(())
}

/// One gradient evaluation over a batch of groups: mean group loss and its gradient.
pub fn batch_loss_and_gradient(
    groups: &[RolloutGroup],
    params: &PolicyParams,
    config: &TrainerConfig,
) -> Result<(Vec<LossBreakdown>, Gradient)> {
    let mut grad = Gradient::zeros(params.shape());
    let weight = 1.0 / groups.len() as f64;
    let breakdowns = groups
        .iter()
        .map(|g| loss_and_gradient(g, params, config, &mut grad, weight))
        .collect::<Result<Vec<_>>>()?;
    Ok((breakdowns, grad))
}

/// Runs the full loop from `params`. Deterministic for a given config.
pub fn train(
    config: &TrainerConfig,
    dataset: &Dataset,
    params: PolicyParams,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_policy_covers(dataset, &params)?;
    let mut params = params;
    pretrain(
        &mut params,
        config.pretrain_steps,
        config.pretrain_lr,
        config.pretrain_scale,
        config.seed,
    )?;
    let reference = params.snapshot();
    let mut optimizer = Optimizer::from_config(config, params.logits().len());
    let ks = config.sorted_ks();
    let mut metrics = Vec::new();
    let mut events = Vec::new();
    let mut skipped_steps = 0;

    for step in 1..=config.steps {
        let old = params.snapshot();
        let collect = |(i, task): (usize, &crate::env::TaskSpec)| {
            let mut rng = seeding::stream(config.seed, Purpose::Rollout, step as u64, i as u64);
            collect_group(task, &params, &reference, &old, config, &mut rng)
        };
        let mut groups: Vec<RolloutGroup> = if config.parallel {
            dataset
                .tasks()
                .par_iter()
                .enumerate()
                .map(collect)
                .collect::<Result<_>>()?
        } else {
            dataset
                .tasks()
                .iter()
                .enumerate()
                .map(collect)
                .collect::<Result<_>>()?
        };
        if config.effective_dynamic_sampling() {
            groups = dynamic_sampling_filter(groups);
        }

        let mut clip_fraction = 0.0;
        if groups.is_empty() {
            skipped_steps += 1;
            events.push(format!(
                "step {step}: every group degenerate, update skipped"
            ));
        } else {
            for _ in 0..config.inner_epochs {
                let (breakdowns, grad) = batch_loss_and_gradient(&groups, &params, config)?;
                clip_fraction = breakdowns.iter().map(|b| b.clip_fraction).sum::<f64>()
                    / breakdowns.len() as f64;
                optimizer.step(&mut params, &grad)?;
            }
        }

        if step % config.checkpoint_every == 0 || step == config.steps {
            metrics.push(evaluate_checkpoint(
                step,
                &params,
                &reference,
                dataset,
                config,
                &ks,
                clip_fraction,
            )?);
        }
    }

    Ok(TrainOutcome {
        params,
        reference,
        metrics,
        events,
        skipped_steps,
    })
}

/// Draws `config.eval_samples` fresh answers per task and computes every
/// checkpoint metric from them.
pub fn evaluate_checkpoint(
    step: usize,
    params: &PolicyParams,
    reference: &PolicyParams,
    dataset: &Dataset,
    config: &TrainerConfig,
    ks: &[usize],
    clip_fraction: f64,
) -> Result<MetricsRecord> {
    let n = config.eval_samples;
    let mut pass_sums = vec![0.0; ks.len()];
    let mut incorrect_conf = Vec::new();
    let mut correct_seqs = Vec::with_capacity(dataset.len());
    let mut rewards = 0.0;
    let mut total = 0usize;
    let mut kl_sum = 0.0;
    let mut tokens = 0usize;

    for (i, task) in dataset.tasks().iter().enumerate() {
        let mut rng = seeding::stream(config.seed, Purpose::Checkpoint, step as u64, i as u64);
        let mut correct = Vec::new();
        for _ in 0..n {
            let s = params.sample_sequence(task.prompt_class, task.length, &mut rng)?;
            let lp_ref = reference.token_logprobs(task.prompt_class, &s.tokens)?;
            for (lt, lr) in s.per_token_logp.iter().zip(&lp_ref) {
                kl_sum += k3(*lt, *lr);
            }
            tokens += s.tokens.len();
            let c = s.logp_theta - lp_ref.iter().sum::<f64>();
            if task.verify(&s.tokens)?.is_correct() {
                rewards += 1.0;
                correct.push(s.tokens);
            } else if config.oef_normalized {
                incorrect_conf.push(c / task.length as f64);
            } else {
                incorrect_conf.push(c);
            }
            total += 1;
        }
        for (sum, &k) in pass_sums.iter_mut().zip(ks) {
            *sum += metrics::pass_at_k(n, correct.len(), k)?;
        }
        correct_seqs.push(correct);
    }

    let mut entropy_rng = seeding::stream(config.seed, Purpose::Entropy, step as u64, 0);
    let entropy =
        metrics::policy_entropy(params, dataset, config.entropy_samples, &mut entropy_rng)?;
    let m = dataset.len() as f64;
    Ok(MetricsRecord {
        step,
        mean_reward: rewards / total as f64,
        oef: metrics::oef(&incorrect_conf).fraction,
        mean_overconfidence: metrics::mean_overconfidence(&incorrect_conf),
        entropy,
        kl_to_ref: kl_sum / tokens as f64,
        clip_fraction,
        distinct_correct: metrics::distinct_correct(&correct_seqs),
        pass_at_k: ks.iter().zip(pass_sums).map(|(&k, s)| (k, s / m)).collect(),
    })
}

//! Group statistics, group-normalized advantages, confidence scores and the
//! confidence-modulated negative advantage.
//!
//! For a group of `G` rollouts of one prompt, the baseline advantage is
//! `(r_i − μ̂) / (σ̂ + ε)` with the population standard deviation. Incorrect
//! rollouts (`r_i = 0`) then have their advantage scaled by
//! `1 + α · m(c̄_i)`, where `c̄_i` is the length-normalized log-ratio between the
//! current and reference policy and `m` is softplus (default) or ReLU.
//! Correct rollouts keep the baseline advantage.

use std::fmt;
use std::str::FromStr;

use crate::error::{AceError, Result};

/// Stabilizer added to the group standard deviation.
pub const ADVANTAGE_EPS: f64 = 1e-8;

/// Above this argument softplus switches to `c + ln(1 + e^{−c})`.
const SOFTPLUS_BRANCH: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStats {
    pub mean: f64,
    pub std: f64,
    /// Fraction of rewards equal to 1; equals `mean` for binary rewards.
    pub pass_rate: f64,
    pub group_size: usize,
}

/// Population mean and standard deviation of a reward group.
pub fn group_stats(rewards: &[f64]) -> Result<GroupStats> {
    if rewards.is_empty() {
        return Err(AceError::input("reward group is empty"));
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let pass_rate = rewards.iter().filter(|&&r| r == 1.0).count() as f64 / g;
    Ok(GroupStats {
        mean,
        std: var.sqrt(),
        pass_rate,
        group_size: rewards.len(),
    })
}

/// `(r_i − μ̂) / (σ̂ + ε)`.
pub fn grpo_advantages(rewards: &[f64], stats: &GroupStats, eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(AceError::input(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    let denom = stats.std + eps;
    Ok(rewards.iter().map(|r| (r - stats.mean) / denom).collect())
}

/// Sequence log-ratio `log π_θ(y) − log π_ref(y)`, optionally divided by `T`.
pub fn confidence_score(
    logp_theta: f64,
    logp_ref: f64,
    length: usize,
    normalize: bool,
) -> Result<f64> {
    if length == 0 {
        return Err(AceError::input("sequence length must be >= 1"));
    }
    let c = logp_theta - logp_ref;
    Ok(if normalize { c / length as f64 } else { c })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationKind {
    #[default]
    Softplus,
    Relu,
}

impl fmt::Display for ModulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModulationKind::Softplus => "softplus",
            ModulationKind::Relu => "relu",
        })
    }
}

impl FromStr for ModulationKind {
    type Err = AceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(ModulationKind::Softplus),
            "relu" => Ok(ModulationKind::Relu),
            other => Err(AceError::input(format!(
                "unknown modulation `{other}` (expected softplus or relu)"
            ))),
        }
    }
}

/// `ln(1 + e^c)` without overflow.
pub fn softplus(c: f64) -> f64 {
    if c > SOFTPLUS_BRANCH {
        c + (-c).exp().ln_1p()
    } else {
        c.exp().ln_1p()
    }
}

/// Derivative of softplus.
pub fn sigmoid(c: f64) -> f64 {
    if c >= 0.0 {
        1.0 / (1.0 + (-c).exp())
    } else {
        let e = c.exp();
        e / (1.0 + e)
    }
}

pub fn modulate(c: f64, kind: ModulationKind) -> f64 {
    match kind {
        ModulationKind::Softplus => softplus(c),
        ModulationKind::Relu => c.max(0.0),
    }
}

/// Scales the advantage of every incorrect rollout (`reward == 0`) by
/// `1 + α · modulate(c̄)`; every other entry is returned unchanged.
pub fn ace_advantages(
    grpo: &[f64],
    rewards: &[f64],
    confidence: &[f64],
    alpha: f64,
    kind: ModulationKind,
) -> Result<Vec<f64>> {
    if grpo.len() != rewards.len() || grpo.len() != confidence.len() {
        return Err(AceError::input(format!(
            "length mismatch: {} advantages, {} rewards, {} confidence scores",
            grpo.len(),
            rewards.len(),
            confidence.len()
        )));
    }
    if !(alpha >= 0.0) {
        return Err(AceError::input(format!(
            "alpha must be non-negative, got {alpha}"
        )));
    }
    Ok(grpo
        .iter()
        .zip(rewards)
        .zip(confidence)
        .map(|((&a, &r), &c)| {
            if r == 0.0 {
                a * (1.0 + alpha * modulate(c, kind))
            } else {
                a
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Overconfident,
    Exploratory,
    SelfCorrecting,
}

/// Classifies an incorrect rollout by the sign of its confidence score.
pub fn regime_of(c: f64, tolerance: f64) -> Regime {
    if c > tolerance {
        Regime::Overconfident
    } else if c < -tolerance {
        Regime::SelfCorrecting
    } else {
        Regime::Exploratory
    }
}

/// One scored rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<usize>,
    pub reward: f64,
    pub logp_theta: f64,
    pub logp_ref: f64,
    pub logp_old: f64,
    pub token_logp_theta: Vec<f64>,
    pub token_logp_ref: Vec<f64>,
    pub token_logp_old: Vec<f64>,
    /// Raw log-ratio against the reference policy.
    pub confidence: f64,
    /// `confidence / length`.
    pub confidence_normalized: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_correct(&self) -> bool {
        self.reward == 1.0
    }
}

/// Baseline and modulated advantages of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub grpo: Vec<f64>,
    pub ace: Vec<f64>,
    pub alpha: f64,
    pub epsilon: f64,
    pub modulation_kind: ModulationKind,
}

impl AdvantageVector {
    /// `use_normalized` selects c̄ (training default) or raw c.
    pub fn compute(
        rollouts: &[Rollout],
        stats: &GroupStats,
        alpha: f64,
        kind: ModulationKind,
        use_normalized: bool,
    ) -> Result<Self> {
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
        let conf: Vec<f64> = rollouts
            .iter()
            .map(|r| {
                if use_normalized {
                    r.confidence_normalized
                } else {
                    r.confidence
                }
            })
            .collect();
        let grpo = grpo_advantages(&rewards, stats, ADVANTAGE_EPS)?;
        let ace = ace_advantages(&grpo, &rewards, &conf, alpha, kind)?;
        Ok(Self {
            grpo,
            ace,
            alpha,
            epsilon: ADVANTAGE_EPS,
            modulation_kind: kind,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stats_examples() {
        let s = group_stats(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.std, 0.5);
        assert_eq!(group_stats(&[0.3; 5]).unwrap().std, 0.0);
        let r = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let s = group_stats(&r).unwrap();
        assert_eq!(s.pass_rate, 0.375);
        assert!((s.std - (0.375f64 * 0.625).sqrt()).abs() < 1e-12);
        assert!((s.std - 0.4841).abs() < 1e-4);
        assert!(group_stats(&[]).is_err());
    }

    #[test]
    fn grpo_examples() {
        let r = [1.0, 0.0, 1.0, 0.0];
        let s = group_stats(&r).unwrap();
        let a = grpo_advantages(&r, &s, ADVANTAGE_EPS).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-7 && (a[1] + 1.0).abs() < 1e-7);

        let zeros = [0.0; 6];
        let s = group_stats(&zeros).unwrap();
        assert!(grpo_advantages(&zeros, &s, ADVANTAGE_EPS)
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
        assert!(grpo_advantages(&zeros, &s, 0.0).is_err());
    }

    #[test]
    fn binary_negative_advantage_formula() {
        let r = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let s = group_stats(&r).unwrap();
        let a = grpo_advantages(&r, &s, ADVANTAGE_EPS).unwrap();
        let p = s.pass_rate;
        let expect = -p / ((p * (1.0 - p)).sqrt() + ADVANTAGE_EPS);
        assert!((a[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence_score(-3.0, -3.0, 4, true).unwrap(), 0.0);
        assert_eq!(confidence_score(1.0, -3.0, 2, true).unwrap(), 2.0);
        assert_eq!(confidence_score(1.0, -3.0, 2, false).unwrap(), 4.0);
        assert!(confidence_score(1.0, 0.0, 0, false).is_err());
    }

    #[test]
    fn quoted_softplus_values() {
        assert!((softplus(0.0) - 0.69).abs() < 0.005);
        assert!((softplus(2.0) - 2.13).abs() < 0.005);
        assert!((softplus(-3.0) - 0.05).abs() < 0.005);
        assert_eq!(modulate(-3.0, ModulationKind::Relu), 0.0);
        assert_eq!(modulate(2.0, ModulationKind::Relu), 2.0);
    }

    #[test]
    fn softplus_branch_is_seamless() {
        for c in [29.9f64, 30.0, 30.0000001, 35.0, 700.0, 1e6] {
            let naive = c.exp().ln_1p();
            let v = softplus(c);
            assert!(v.is_finite());
            if naive.is_finite() {
                assert!((v - naive).abs() < 1e-13, "c={c}");
            }
        }
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn ace_examples() {
        let grpo = [-1.0, -1.0, -1.0, 0.7];
        let rewards = [0.0, 0.0, 0.0, 1.0];
        let conf = [2.0, 0.0, -3.0, 5.0];
        let a = ace_advantages(&grpo, &rewards, &conf, 1.0, ModulationKind::Softplus).unwrap();
        assert!((a[0] + 3.13).abs() < 0.005);
        assert!((a[1] + 1.69).abs() < 0.005);
        assert!((a[2] + 1.0486).abs() < 1e-4);
        assert_eq!(a[3], 0.7);
        let same = ace_advantages(&grpo, &rewards, &conf, 0.0, ModulationKind::Softplus).unwrap();
        assert_eq!(
            same.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            grpo.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(ace_advantages(&grpo, &rewards[..3], &conf, 1.0, ModulationKind::Relu).is_err());
        assert!(ace_advantages(&grpo, &rewards, &conf, -0.1, ModulationKind::Relu).is_err());
    }

    #[test]
    fn regimes() {
        assert_eq!(regime_of(2.0, 0.05), Regime::Overconfident);
        assert_eq!(regime_of(0.0, 0.0), Regime::Exploratory);
        assert_eq!(regime_of(0.03, 0.05), Regime::Exploratory);
        assert_eq!(regime_of(-3.0, 0.05), Regime::SelfCorrecting);
    }

    #[test]
    fn sigmoid_is_softplus_derivative() {
        let h = 1e-5;
        for i in -60..=60 {
            let c = i as f64 * 0.25;
            let fd = (softplus(c + h) - softplus(c - h)) / (2.0 * h);
            assert!((fd - sigmoid(c)).abs() < 1e-8, "c={c}");
        }
    }

    #[test]
    fn residual_ratio_band() {
        for i in 0..=20 {
            let c = 1.0 + 0.1 * i as f64;
            let ratio = sigmoid(c) / softplus(c);
            assert!((0.31..=0.56).contains(&ratio), "c={c} ratio={ratio}");
        }
    }

    proptest! {
        #[test]
        fn softplus_relu_gap(c in -50.0f64..50.0) {
            let gap = softplus(c) - c.max(0.0);
            prop_assert!(gap > 0.0 || c.abs() > 30.0);
            prop_assert!(gap <= 2f64.ln() + 1e-15);
        }

        #[test]
        fn softplus_modulation_strictly_monotone(
            c1 in -20.0f64..20.0, d in 1e-3f64..10.0, base in -5.0f64..-1e-3, alpha in 1e-3f64..5.0
        ) {
            let c2 = c1 + d;
            let a = ace_advantages(&[base, base], &[0.0, 0.0], &[c1, c2], alpha, ModulationKind::Softplus).unwrap();
            prop_assert!(a[0].abs() < a[1].abs());
            let r = ace_advantages(&[base, base], &[0.0, 0.0], &[c1, c2], alpha, ModulationKind::Relu).unwrap();
            prop_assert!(r[0].abs() <= r[1].abs());
        }

        #[test]
        fn ace_preserves_correct_and_amplifies_incorrect(
            rewards in prop::collection::vec(0u8..=1, 2..16),
            conf_seed in prop::collection::vec(-10.0f64..10.0, 16),
            alpha in 0.0f64..5.0,
            relu in any::<bool>(),
        ) {
            let kind = if relu { ModulationKind::Relu } else { ModulationKind::Softplus };
            let r: Vec<f64> = rewards.iter().map(|&x| x as f64).collect();
            let conf = &conf_seed[..r.len()];
            let s = group_stats(&r).unwrap();
            let g = grpo_advantages(&r, &s, ADVANTAGE_EPS).unwrap();
            let a = ace_advantages(&g, &r, conf, alpha, kind).unwrap();
            for i in 0..r.len() {
                if r[i] == 1.0 {
                    prop_assert_eq!(a[i], g[i]);
                } else {
                    prop_assert!(a[i].abs() >= g[i].abs());
                }
            }
            let a0 = ace_advantages(&g, &r, conf, 0.0, kind).unwrap();
            prop_assert_eq!(a0, g.clone());
            let centered: f64 = g.iter().map(|x| x * (s.std + ADVANTAGE_EPS)).sum();
            prop_assert!(centered.abs() < 1e-12);
        }
    }
}

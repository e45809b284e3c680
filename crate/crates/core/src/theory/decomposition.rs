//! Exact-expectation check of the selective-regularization decomposition.
//!
//! For one prompt with exact pass rate `p`, let `a = |Â⁻| = p / (√(p(1−p)) + ε)`
//! and `c(y) = log π_θ(y) − log π_ref(y)` (raw, not length-normalized). Over the
//! enumerated set of incorrect answers `Y⁻`:
//!
//! ```text
//! Δ∇      = Σ_{y∈Y⁻} π(y) · (A_ACE(y) − Â⁻) · ∇log π(y)          (ACE extra gradient)
//! R_sel   = a · Σ_{y∈Y⁻} π(y) · softplus(c(y))
//! ∇R_sel  = a · Σ_{y∈Y⁻} [softplus(c)·∇π(y) + π(y)·σ(c)·∇log π(y)]
//! ℰ       = a · Σ_{y∈Y⁻} π(y) · σ(c(y)) · ∇log π(y)
//! ```
//!
//! and the identity `Δ∇ = −α ∇R_sel + α ℰ` holds exactly.

use rand::Rng;
use serde::Serialize;

use crate::advantage::{ace_advantages, sigmoid, softplus, ModulationKind, ADVANTAGE_EPS};
use crate::env::TaskSpec;
use crate::error::{AceError, Result};
use crate::policy::{Gradient, PolicyParams};
use crate::seeding::{self, Purpose};

/// Max-norm tolerance for exact algebraic identities.
pub const IDENTITY_TOLERANCE: f64 = 1e-8;

/// Deliberate faults for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultInjection {
    #[default]
    None,
    /// Replace the residual ℰ by zero before checking the identity.
    DropResidual,
}

struct IncorrectOutcome {
    tokens: Vec<usize>,
    prob: f64,
    confidence: f64,
}

/// Binary-reward negative advantage magnitude `p / (√(p(1−p)) + ε)`.
pub fn negative_advantage_magnitude(pass_rate: f64) -> f64 {
    pass_rate / ((pass_rate * (1.0 - pass_rate)).sqrt() + ADVANTAGE_EPS)
}

fn check_shapes(params: &PolicyParams, reference: &PolicyParams) -> Result<()> {
    if params.shape() != reference.shape() {
        return Err(AceError::input("policy and reference shapes differ"));
    }
    Ok(())
}

/// Exact pass rate and `|Â⁻|`, refusing tasks with no correct or no incorrect answers.
pub fn exact_negative_advantage(params: &PolicyParams, task: &TaskSpec) -> Result<f64> {
    let correct = task.count_correct()?;
    let space = (task.vocab_size as u64).pow(task.length as u32);
    if correct == 0 || correct == space {
        return Err(AceError::Degenerate(format!(
            "task (M={}, t={}) has {correct} of {space} answers correct",
            task.modulus, task.target
        )));
    }
    let p = task.exact_pass_rate(params)?;
    if p <= 0.0 || p >= 1.0 {
        return Err(AceError::Degenerate(format!(
            "exact pass rate {p} is not interior"
        )));
    }
    Ok(negative_advantage_magnitude(p))
}

fn incorrect_outcomes(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
) -> Result<Vec<IncorrectOutcome>> {
    check_shapes(params, reference)?;
    task.enumerate_outcomes(params)?
        .into_iter()
        .filter(|(_, _, ok)| !ok)
        .map(|(tokens, prob, _)| {
            let confidence = params.sequence_logprob(task.prompt_class, &tokens)?
                - reference.sequence_logprob(task.prompt_class, &tokens)?;
            Ok(IncorrectOutcome {
                tokens,
                prob,
                confidence,
            })
        })
        .collect()
}

/// ACE's extra expected gradient over baseline GRPO, with softplus(c) detached.
/// Sign convention: gradient of the maximized objective.
pub fn ace_extra_gradient(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
    alpha: f64,
) -> Result<Gradient> {
    let a = exact_negative_advantage(params, task)?;
    let mut grad = Gradient::zeros(params.shape());
    for o in incorrect_outcomes(params, reference, task)? {
        let ace = ace_advantages(
            &[-a],
            &[0.0],
            &[o.confidence],
            alpha,
            ModulationKind::Softplus,
        )?[0];
        let extra = ace - (-a);
        params.accumulate_score(task.prompt_class, &o.tokens, o.prob * extra, &mut grad)?;
    }
    Ok(grad)
}

/// Monte Carlo estimate of [`ace_extra_gradient`] from `samples` on-policy
/// draws, with per-entry standard errors. `|Â⁻|` is still the exact value.
pub fn sampled_extra_gradient<R: Rng + ?Sized>(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
    alpha: f64,
    samples: usize,
    rng: &mut R,
) -> Result<(Gradient, Gradient)> {
    check_shapes(params, reference)?;
    if samples < 2 {
        return Err(AceError::input("need at least two samples"));
    }
    let a = exact_negative_advantage(params, task)?;
    let class = task.prompt_class;
    let mut sum = Gradient::zeros(params.shape());
    let mut sum_sq = Gradient::zeros(params.shape());
    for _ in 0..samples {
        let s = params.sample_sequence(class, task.length, rng)?;
        if task.verify(&s.tokens)?.is_correct() {
            continue;
        }
        let c = s.logp_theta - reference.sequence_logprob(class, &s.tokens)?;
        let ace = ace_advantages(&[-a], &[0.0], &[c], alpha, ModulationKind::Softplus)?[0];
        let mut x = Gradient::zeros(params.shape());
        params.accumulate_score(class, &s.tokens, ace + a, &mut x)?;
        sum.add_scaled(&x, 1.0)?;
        for (q, v) in sum_sq.values_mut().iter_mut().zip(x.values()) {
            *q += v * v;
        }
    }
    let n = samples as f64;
    sum.scale(1.0 / n);
    let mut se = Gradient::zeros(params.shape());
    for ((e, m), q) in se
        .values_mut()
        .iter_mut()
        .zip(sum.values())
        .zip(sum_sq.values())
    {
        let var = (q / n - m * m).max(0.0) * n / (n - 1.0);
        *e = (var / n).sqrt();
    }
    Ok((sum, se))
}

/// `R_sel` with `|Â⁻|` held at `magnitude`.
pub fn selective_regularizer_value_with(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
    magnitude: f64,
) -> Result<f64> {
    let sum: f64 = incorrect_outcomes(params, reference, task)?
        .iter()
        .map(|o| o.prob * softplus(o.confidence))
        .sum();
    Ok(magnitude * sum)
}

pub fn selective_regularizer_value(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
) -> Result<f64> {
    let a = exact_negative_advantage(params, task)?;
    selective_regularizer_value_with(params, reference, task, a)
}

/// Reverse-KL form restricted to overconfident errors: `a · Σ_{c>0} π(y) · c(y)`.
pub fn overconfident_kl_approximation(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
) -> Result<f64> {
    let a = exact_negative_advantage(params, task)?;
    let sum: f64 = incorrect_outcomes(params, reference, task)?
        .iter()
        .filter(|o| o.confidence > 0.0)
        .map(|o| o.prob * o.confidence)
        .sum();
    Ok(a * sum)
}

/// The two product-rule terms of `∇R_sel`: (softplus-weighted `∇π`, residual ℰ).
pub fn selective_regularizer_terms(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
) -> Result<(Gradient, Gradient)> {
    let a = exact_negative_advantage(params, task)?;
    let class = task.prompt_class;
    let mut term_one = Gradient::zeros(params.shape());
    let mut residual = Gradient::zeros(params.shape());
    for o in incorrect_outcomes(params, reference, task)? {
        // ∇π(y) = π(y) ∇log π(y)
        params.accumulate_score(
            class,
            &o.tokens,
            a * softplus(o.confidence) * o.prob,
            &mut term_one,
        )?;
        params.accumulate_score(
            class,
            &o.tokens,
            a * o.prob * sigmoid(o.confidence),
            &mut residual,
        )?;
    }
    Ok((term_one, residual))
}

/// Full analytic `∇R_sel`, with `|Â⁻|` treated as a per-prompt constant.
pub fn selective_regularizer_gradient(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
) -> Result<Gradient> {
    let (mut term_one, residual) = selective_regularizer_terms(params, reference, task)?;
    term_one.add_scaled(&residual, 1.0)?;
    Ok(term_one)
}

/// The residual ℰ: the through-`c` gradient that the detached modulation omits.
pub fn residual_gradient(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
) -> Result<Gradient> {
    Ok(selective_regularizer_terms(params, reference, task)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub alpha: f64,
    pub delta_grad: Gradient,
    pub reg_grad: Gradient,
    pub residual: Gradient,
    /// `‖Δ∇ + α∇R_sel − αℰ‖_∞`.
    pub identity_defect: f64,
    pub r_sel_value: f64,
}

/// Scalar summary for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionSummary {
    pub alpha: f64,
    pub identity_defect: f64,
    pub r_sel_value: f64,
    pub delta_grad_max_abs: f64,
    pub reg_grad_max_abs: f64,
    pub residual_max_abs: f64,
    pub residual_l2: f64,
}

impl DecompositionReport {
    pub fn passes(&self) -> bool {
        self.identity_defect <= IDENTITY_TOLERANCE
    }

    pub fn summary(&self) -> DecompositionSummary {
        DecompositionSummary {
            alpha: self.alpha,
            identity_defect: self.identity_defect,
            r_sel_value: self.r_sel_value,
            delta_grad_max_abs: self.delta_grad.max_abs(),
            reg_grad_max_abs: self.reg_grad.max_abs(),
            residual_max_abs: self.residual.max_abs(),
            residual_l2: self.residual.l2_norm(),
        }
    }
}

pub fn verify_decomposition(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
    alpha: f64,
) -> Result<DecompositionReport> {
    verify_decomposition_with_fault(params, reference, task, alpha, FaultInjection::None)
}

pub fn verify_decomposition_with_fault(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &TaskSpec,
    alpha: f64,
    fault: FaultInjection,
) -> Result<DecompositionReport> {
    let delta_grad = ace_extra_gradient(params, reference, task, alpha)?;
    let (term_one, mut residual) = selective_regularizer_terms(params, reference, task)?;
    let mut reg_grad = term_one;
    reg_grad.add_scaled(&residual, 1.0)?;
    if fault == FaultInjection::DropResidual {
        residual = Gradient::zeros(params.shape());
    }
    let mut check = delta_grad.clone();
    check.add_scaled(&reg_grad, alpha)?;
    check.add_scaled(&residual, -alpha)?;
    Ok(DecompositionReport {
        alpha,
        identity_defect: check.max_abs(),
        r_sel_value: selective_regularizer_value(params, reference, task)?,
        delta_grad,
        reg_grad,
        residual,
    })
}

/// A seeded random instance: independent non-uniform π_θ and π_ref over one
/// prompt class, and a mod_sum task with `M = V` and a random target.
pub fn random_instance(
    seed: u64,
    index: u64,
    vocab_size: usize,
    length: usize,
    logit_scale: f64,
) -> Result<(PolicyParams, PolicyParams, TaskSpec)> {
    let mut rng = seeding::stream(seed, Purpose::Instance, index, 0);
    let params = PolicyParams::random(vocab_size, length, 1, logit_scale, &mut rng)?;
    let reference = PolicyParams::random(vocab_size, length, 1, logit_scale, &mut rng)?;
    let target = rng.random_range(0..vocab_size);
    let task = TaskSpec::mod_sum(vocab_size, target, vocab_size, length, 0)?;
    Ok((params, reference, task))
}

/// Central finite-difference gradient of `f` with respect to every logit.
pub fn finite_difference_gradient(
    params: &PolicyParams,
    step: f64,
    mut f: impl FnMut(&PolicyParams) -> Result<f64>,
) -> Result<Gradient> {
    let mut grad = Gradient::zeros(params.shape());
    let mut probe = params.clone();
    for i in 0..params.logits().len() {
        let x = params.logits()[i];
        probe.logits_mut()[i] = x + step;
        let up = f(&probe)?;
        probe.logits_mut()[i] = x - step;
        let down = f(&probe)?;
        probe.logits_mut()[i] = x;
        grad.values_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// `‖a − b‖_∞ / max(‖b‖_∞, floor)`.
pub fn relative_error(analytic: &Gradient, numeric: &Gradient, floor: f64) -> f64 {
    analytic.max_abs_diff(numeric) / numeric.max_abs().max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::softplus;

    fn instance(i: u64) -> (PolicyParams, PolicyParams, TaskSpec) {
        random_instance(11, i, 3, 2, 1.0).unwrap()
    }

    #[test]
    fn alpha_zero_gives_zero_extra_gradient() {
        let (p, r, t) = instance(0);
        assert!(ace_extra_gradient(&p, &r, &t, 0.0).unwrap().is_zero());
        let rep = verify_decomposition(&p, &r, &t, 0.0).unwrap();
        assert_eq!(rep.identity_defect, 0.0);
    }

    #[test]
    fn identity_holds_and_fault_breaks_it() {
        for i in 0..20 {
            let (p, r, t) = instance(i);
            let rep = verify_decomposition(&p, &r, &t, 1.0).unwrap();
            assert!(rep.passes(), "defect {}", rep.identity_defect);
            let bad =
                verify_decomposition_with_fault(&p, &r, &t, 1.0, FaultInjection::DropResidual)
                    .unwrap();
            assert!(!bad.passes());
        }
    }

    #[test]
    fn extra_gradient_is_linear_in_alpha() {
        let (p, r, t) = instance(3);
        let g1 = ace_extra_gradient(&p, &r, &t, 0.7).unwrap();
        let g2 = ace_extra_gradient(&p, &r, &t, 1.4).unwrap();
        for (a, b) in g1.values().iter().zip(g2.values()) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn identical_policies_weight_errors_by_ln2() {
        let (p, _, t) = instance(5);
        let a = exact_negative_advantage(&p, &t).unwrap();
        let pass = t.exact_pass_rate(&p).unwrap();
        let v = selective_regularizer_value(&p, &p, &t).unwrap();
        assert!((v - a * 2f64.ln() * (1.0 - pass)).abs() < 1e-12);

        // Residual weight is σ(0) = 1/2, term I weight ln 2, on every error.
        let (term_one, residual) = selective_regularizer_terms(&p, &p, &t).unwrap();
        for (x, y) in term_one.values().iter().zip(residual.values()) {
            assert!((x * 0.5 - y * 2f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_is_sum_of_terms() {
        let (p, r, t) = instance(8);
        let (mut one, res) = selective_regularizer_terms(&p, &r, &t).unwrap();
        let full = selective_regularizer_gradient(&p, &r, &t).unwrap();
        one.add_scaled(&res, 1.0).unwrap();
        assert_eq!(one, full);
        assert_eq!(residual_gradient(&p, &r, &t).unwrap(), res);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (p, r, t) = instance(9);
        let a = exact_negative_advantage(&p, &t).unwrap();
        let fd = finite_difference_gradient(&p, 1e-5, |q| {
            selective_regularizer_value_with(q, &r, &t, a)
        })
        .unwrap();
        let analytic = selective_regularizer_gradient(&p, &r, &t).unwrap();
        assert!(relative_error(&analytic, &fd, 1e-12) < 1e-5);
    }

    #[test]
    fn degenerate_tasks_are_refused() {
        let p = PolicyParams::uniform(2, 1, 1).unwrap();
        // M = 2 with V = 2, L = 1 is fine; make every answer correct instead via M > max sum.
        let t = TaskSpec::mod_sum(2, 0, 2, 1, 0).unwrap();
        assert!(exact_negative_advantage(&p, &t).is_ok());
        let none_correct = TaskSpec::mod_sum(5, 4, 2, 1, 0).unwrap();
        assert!(matches!(
            ace_extra_gradient(&p, &p, &none_correct, 1.0),
            Err(AceError::Degenerate(_))
        ));
    }

    #[test]
    fn kl_approximation_close_when_confidence_is_large() {
        // π_ref puts little mass on the errors that π_θ favours, so every
        // incorrect answer has c > 3 and softplus(c) ≈ c.
        let t = TaskSpec::mod_sum(2, 0, 2, 2, 0).unwrap();
        let mut p = PolicyParams::uniform(2, 2, 1).unwrap();
        let mut r = PolicyParams::uniform(2, 2, 1).unwrap();
        // π_ref: errors ([0,1], [1,0]) are rare.
        r.row_mut(0, 0, 2).unwrap().copy_from_slice(&[0.0, 0.0]);
        r.row_mut(0, 1, 0).unwrap().copy_from_slice(&[6.0, -6.0]);
        r.row_mut(0, 1, 1).unwrap().copy_from_slice(&[-6.0, 6.0]);
        // π_θ: errors fairly likely.
        p.row_mut(0, 1, 0).unwrap().copy_from_slice(&[0.0, 0.5]);
        p.row_mut(0, 1, 1).unwrap().copy_from_slice(&[0.5, 0.0]);
        for tokens in [[0usize, 1], [1, 0]] {
            let c =
                p.sequence_logprob(0, &tokens).unwrap() - r.sequence_logprob(0, &tokens).unwrap();
            assert!(c > 3.0, "c = {c}");
            assert!(softplus(c) > c);
        }
        let full = selective_regularizer_value(&p, &r, &t).unwrap();
        let approx = overconfident_kl_approximation(&p, &r, &t).unwrap();
        assert!(
            (full - approx).abs() / full < 0.05,
            "full {full} approx {approx}"
        );
    }
}

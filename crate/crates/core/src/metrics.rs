//! Evaluation metrics: unbiased pass@k, overconfident-error diagnostics,
//! per-token policy entropy and distinct-correct coverage.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::Serialize;

use crate::env::Dataset;
use crate::error::{AceError, Result};
use crate::policy::PolicyParams;

/// Largest integer an f64 represents exactly.
const EXACT_F64_INT: u128 = 1 << 53;

/// Default pass@k grid.
pub const DEFAULT_KS: [usize; 6] = [1, 2, 4, 8, 16, 32];

/// Unbiased estimate of the probability that at least one of `k` draws
/// (without replacement) from `n` samples with `c` correct is correct:
/// `1 − C(n−c, k) / C(n, k)`.
///
/// When both binomials fit exactly in an f64 the ratio is formed from exact
/// integers, so the result is the correctly rounded rational. Otherwise the
/// product form `Π_{i<k} (n−c−i)/(n−i)` is used.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if c > n {
        return Err(AceError::input(format!(
            "correct count {c} exceeds sample count {n}"
        )));
    }
    if k == 0 || k > n {
        return Err(AceError::input(format!("k must lie in [1, {n}], got {k}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    if let (Some(total), Some(miss)) = (binomial_exact(n, k), binomial_exact(n - c, k)) {
        if total <= EXACT_F64_INT {
            return Ok(((total - miss) as f64 / total as f64).clamp(0.0, 1.0));
        }
    }
    let miss: f64 = (0..k)
        .map(|i| (n - c - i) as f64 / (n - i) as f64)
        .product();
    Ok((1.0 - miss).clamp(0.0, 1.0))
}

fn binomial_exact(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Samples `n` answers per task and averages pass@k over tasks.
pub fn pass_at_k_eval<R: Rng + ?Sized>(
    tasks: &Dataset,
    params: &PolicyParams,
    n: usize,
    ks: &[usize],
    temperature: f64,
    rng: &mut R,
) -> Result<BTreeMap<usize, f64>> {
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(AceError::input(format!("k = {bad} outside [1, n = {n}]")));
    }
    let mut sums: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    for task in tasks.tasks() {
        let mut correct = 0;
        for _ in 0..n {
            let s = params.sample_sequence_with_temperature(
                task.prompt_class,
                task.length,
                temperature,
                rng,
            )?;
            if task.verify(&s.tokens)?.is_correct() {
                correct += 1;
            }
        }
        for (&k, sum) in sums.iter_mut() {
            *sum += pass_at_k(n, correct, k)?;
        }
    }
    let m = tasks.len() as f64;
    Ok(sums.into_iter().map(|(k, s)| (k, s / m)).collect())
}

/// Overconfident error fraction among incorrect rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Oef {
    pub fraction: f64,
    /// Number of incorrect rollouts; zero means the fraction is a placeholder.
    pub num_errors: usize,
}

impl Oef {
    pub fn is_defined(&self) -> bool {
        self.num_errors > 0
    }
}

/// Share of incorrect-rollout confidence scores that are strictly positive.
pub fn oef(confidence_of_incorrect: &[f64]) -> Oef {
    let n = confidence_of_incorrect.len();
    if n == 0 {
        return Oef {
            fraction: 0.0,
            num_errors: 0,
        };
    }
    let over = confidence_of_incorrect.iter().filter(|&&c| c > 0.0).count();
    Oef {
        fraction: over as f64 / n as f64,
        num_errors: n,
    }
}

/// Mean of the strictly positive scores; `None` when there are none.
pub fn mean_overconfidence(confidence_of_incorrect: &[f64]) -> Option<f64> {
    let pos: Vec<f64> = confidence_of_incorrect
        .iter()
        .copied()
        .filter(|&c| c > 0.0)
        .collect();
    if pos.is_empty() {
        None
    } else {
        Some(pos.iter().sum::<f64>() / pos.len() as f64)
    }
}

/// Average, over sampled trajectories and positions, of the exact entropy of
/// the conditional distribution at each visited context.
pub fn policy_entropy<R: Rng + ?Sized>(
    params: &PolicyParams,
    tasks: &Dataset,
    samples_per_task: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples_per_task == 0 {
        return Err(AceError::input("samples_per_task must be >= 1"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for task in tasks.tasks() {
        for _ in 0..samples_per_task {
            let s = params.sample_sequence(task.prompt_class, task.length, rng)?;
            total += trajectory_entropy_sum(params, task.prompt_class, &s.tokens)?;
            count += s.tokens.len();
        }
    }
    Ok(total / count as f64)
}

/// Σ_t H(π(· | x, y_<t)) along one trajectory.
pub fn trajectory_entropy_sum(
    params: &PolicyParams,
    class: usize,
    tokens: &[usize],
) -> Result<f64> {
    let mut prev = params.shape().bos();
    let mut h = 0.0;
    for (pos, &tok) in tokens.iter().enumerate() {
        h += params.token_entropy(class, pos, prev)?;
        prev = tok;
    }
    Ok(h)
}

/// Number of unique correct sequences, summed over tasks.
pub fn distinct_correct(correct_per_task: &[Vec<Vec<usize>>]) -> usize {
    correct_per_task
        .iter()
        .map(|seqs| seqs.iter().collect::<HashSet<_>>().len())
        .sum()
}

/// Metrics at one training checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub mean_reward: f64,
    pub oef: f64,
    /// `None` when no incorrect rollout had a positive confidence score.
    pub mean_overconfidence: Option<f64>,
    pub entropy: f64,
    pub kl_to_ref: f64,
    pub clip_fraction: f64,
    pub distinct_correct: usize,
    pub pass_at_k: BTreeMap<usize, f64>,
}

/// Version tag written in the first line of every metrics CSV.
pub const METRICS_CSV_VERSION: &str = "# acelab-metrics v1";

/// Fixed leading columns; one `pass@k` column per k follows in ascending order.
pub const METRICS_CSV_COLUMNS: [&str; 8] = [
    "step",
    "mean_reward",
    "oef",
    "mean_overconfidence",
    "entropy",
    "kl",
    "clip_fraction",
    "distinct_correct",
];

/// Marker written for undefined conditional means.
pub const ABSENT: &str = "NA";

pub fn metrics_csv_header(ks: &[usize]) -> String {
    let mut cols: Vec<String> = METRICS_CSV_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend(ks.iter().map(|k| format!("pass@{k}")));
    format!("{METRICS_CSV_VERSION}\n{}\n", cols.join(","))
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let mut fields = vec![
            self.step.to_string(),
            self.mean_reward.to_string(),
            self.oef.to_string(),
            self.mean_overconfidence
                .map_or_else(|| ABSENT.to_string(), |v| v.to_string()),
            self.entropy.to_string(),
            self.kl_to_ref.to_string(),
            self.clip_fraction.to_string(),
            self.distinct_correct.to_string(),
        ];
        fields.extend(self.pass_at_k.values().map(|v| v.to_string()));
        fields.join(",") + "\n"
    }
}

pub fn metrics_csv(records: &[MetricsRecord], ks: &[usize]) -> String {
    let mut out = metrics_csv_header(ks);
    for r in records {
        out.push_str(&r.csv_row());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pass_at_k_examples() {
        assert!((pass_at_k(4, 2, 2).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        for k in 1..=6 {
            assert_eq!(pass_at_k(6, 0, k).unwrap(), 0.0);
            assert_eq!(pass_at_k(6, 6, k).unwrap(), 1.0);
        }
        assert_eq!(pass_at_k(32, 1, 32).unwrap(), 1.0);
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!(pass_at_k(3, 1, 4).is_err());
    }

    #[test]
    fn pass_at_1_is_fraction() {
        for n in 1..40 {
            for c in 0..=n {
                assert!((pass_at_k(n, c, 1).unwrap() - c as f64 / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn large_n_stays_finite_and_monotone() {
        let n = 10_000;
        let mut last = 0.0;
        for k in [1, 10, 100, 1000, 5000] {
            let v = pass_at_k(n, 3, k).unwrap();
            assert!(v.is_finite() && v >= last && v <= 1.0);
            last = v;
        }
    }

    #[test]
    fn oef_examples() {
        assert_eq!(oef(&[0.0, 0.0, 0.0]).fraction, 0.0);
        assert_eq!(oef(&[-1.0, 0.5, 2.0, -0.2]).fraction, 0.5);
        let empty = oef(&[]);
        assert_eq!(empty.fraction, 0.0);
        assert!(!empty.is_defined());
    }

    #[test]
    fn mean_overconfidence_examples() {
        assert_eq!(mean_overconfidence(&[0.5, 2.0, -1.0]), Some(1.25));
        assert_eq!(mean_overconfidence(&[-0.5, 0.0]), None);
        assert_eq!(mean_overconfidence(&[3.0]), Some(3.0));
    }

    #[test]
    fn entropy_of_uniform_policy() {
        let ds = Dataset::mod_sum(4, 3, 3, 2).unwrap();
        let p = ds.uniform_policy().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in [1, 7, 30] {
            let h = policy_entropy(&p, &ds, n, &mut rng).unwrap();
            assert!((h - 4f64.ln()).abs() < 1e-10);
        }
        assert!(policy_entropy(&p, &ds, 0, &mut rng).is_err());
    }

    #[test]
    fn entropy_of_near_deterministic_policy() {
        let ds = Dataset::mod_sum(3, 3, 2, 1).unwrap();
        let mut p = ds.uniform_policy().unwrap();
        for pos in 0..2 {
            for prev in 0..4 {
                p.row_mut(0, pos, prev).unwrap()[1] = 50.0;
            }
        }
        let h = policy_entropy(&p, &ds, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(h < 1e-18);
    }

    #[test]
    fn distinct_examples() {
        let dup = vec![vec![vec![1, 2], vec![1, 2], vec![1, 2]], vec![vec![0, 0]]];
        assert_eq!(distinct_correct(&dup), 2);
        assert_eq!(distinct_correct(&[vec![], vec![vec![1], vec![2]]]), 2);
    }

    #[test]
    fn eval_with_always_correct_policy() {
        let task = TaskSpec::mod_sum(3, 0, 3, 2, 0).unwrap();
        let ds = Dataset::new(vec![task]).unwrap();
        let mut p = ds.uniform_policy().unwrap();
        for pos in 0..2 {
            for prev in 0..4 {
                p.row_mut(0, pos, prev).unwrap()[0] = 1e6;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let res = pass_at_k_eval(&ds, &p, 8, &[1, 2, 4, 8], 1.0, &mut rng).unwrap();
        assert!(res.values().all(|&v| v == 1.0));
        assert!(pass_at_k_eval(&ds, &p, 4, &[8], 1.0, &mut rng).is_err());
    }

    #[test]
    fn csv_uses_absent_marker() {
        let rec = MetricsRecord {
            step: 25,
            mean_reward: 0.5,
            oef: 0.0,
            mean_overconfidence: None,
            entropy: 1.0,
            kl_to_ref: 0.0,
            clip_fraction: 0.0,
            distinct_correct: 3,
            pass_at_k: [(1, 0.5), (2, 0.75)].into_iter().collect(),
        };
        let csv = metrics_csv(&[rec], &[1, 2]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_CSV_VERSION);
        assert_eq!(
            lines[1],
            "step,mean_reward,oef,mean_overconfidence,entropy,kl,clip_fraction,distinct_correct,pass@1,pass@2"
        );
        assert_eq!(lines[2], "25,0.5,0,NA,1,0,0,3,0.5,0.75");
    }
}

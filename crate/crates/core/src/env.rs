//! Synthetic verifiable tasks.
//!
//! The only task family is `mod_sum`: a sequence of `L` tokens drawn from a
//! vocabulary of size `V` is correct iff the sum of its tokens is congruent to
//! the target modulo `M`. Verification is pure, and every oracle (number of
//! correct sequences, exact pass rate) is computed by brute-force enumeration.
//!
//! # Dataset file format
//!
//! Plain text, one task per line: `kind M t V L`, whitespace separated.
//! Blank lines and lines starting with `#` are ignored. Each task is assigned
//! the prompt class equal to its zero-based record index.
//!
//! ```text
//! # kind    M  t  V  L
//! mod_sum   5  3  5  4
//! mod_sum   5  0  5  4
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{AceError, Result};
use crate::policy::{sequence_space_size, PolicyParams, DEFAULT_ENUMERATION_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    ModSum,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::ModSum => f.write_str("mod_sum"),
        }
    }
}

impl FromStr for TaskKind {
    type Err = AceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mod_sum" => Ok(TaskKind::ModSum),
            other => Err(AceError::Format(format!("unknown task kind `{other}`"))),
        }
    }
}

/// One prompt: a verifiable target plus the shape of valid answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub modulus: usize,
    pub target: usize,
    pub vocab_size: usize,
    pub length: usize,
    pub prompt_class: usize,
}

/// Binary verifier outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerdictRecord {
    pub reward: u8,
}

impl VerdictRecord {
    pub fn is_correct(&self) -> bool {
        self.reward == 1
    }
}

impl TaskSpec {
    pub fn mod_sum(
        modulus: usize,
        target: usize,
        vocab_size: usize,
        length: usize,
        prompt_class: usize,
    ) -> Result<Self> {
        let task = Self {
            kind: TaskKind::ModSum,
            modulus,
            target,
            vocab_size,
            length,
            prompt_class,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modulus < 2 {
            return Err(AceError::input(format!(
                "modulus must be >= 2, got {}",
                self.modulus
            )));
        }
        if self.target >= self.modulus {
            return Err(AceError::input(format!(
                "target {} must be below modulus {}",
                self.target, self.modulus
            )));
        }
        if self.vocab_size < 2 {
            return Err(AceError::input(format!(
                "vocab_size must be >= 2, got {}",
                self.vocab_size
            )));
        }
        if self.length < 1 {
            return Err(AceError::input("length must be >= 1"));
        }
        Ok(())
    }

    /// Pure, stateless reward rule.
    pub fn verify(&self, tokens: &[usize]) -> Result<VerdictRecord> {
        if tokens.len() != self.length {
            return Err(AceError::input(format!(
                "expected {} tokens, got {}",
                self.length,
                tokens.len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(AceError::input(format!(
                "token {bad} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        Ok(VerdictRecord {
            reward: u8::from(self.is_correct_unchecked(tokens)),
        })
    }

    fn is_correct_unchecked(&self, tokens: &[usize]) -> bool {
        match self.kind {
            TaskKind::ModSum => {
                tokens
                    .iter()
                    .fold(0usize, |acc, &t| (acc + t) % self.modulus)
                    == self.target
            }
        }
    }

    fn check_enumerable(&self) -> Result<()> {
        let size = sequence_space_size(self.vocab_size, self.length);
        if size > DEFAULT_ENUMERATION_CAP as u128 {
            return Err(AceError::EnumerationCap {
                size,
                cap: DEFAULT_ENUMERATION_CAP,
            });
        }
        Ok(())
    }

    /// Brute-force count of rewarded sequences.
    pub fn count_correct(&self) -> Result<u64> {
        self.check_enumerable()?;
        let mut tokens = vec![0usize; self.length];
        let mut count = 0u64;
        loop {
            if self.is_correct_unchecked(&tokens) {
                count += 1;
            }
            // odometer increment
            let mut i = self.length;
            loop {
                if i == 0 {
                    return Ok(count);
                }
                i -= 1;
                tokens[i] += 1;
                if tokens[i] < self.vocab_size {
                    break;
                }
                tokens[i] = 0;
            }
        }
    }

    fn check_policy(&self, params: &PolicyParams) -> Result<()> {
        if params.vocab_size() != self.vocab_size {
            return Err(AceError::input(format!(
                "task vocabulary {} does not match policy vocabulary {}",
                self.vocab_size,
                params.vocab_size()
            )));
        }
        if params.max_len() < self.length {
            return Err(AceError::input(format!(
                "task length {} exceeds policy max_len {}",
                self.length,
                params.max_len()
            )));
        }
        Ok(())
    }

    /// Every answer sequence with its probability and verdict.
    pub fn enumerate_outcomes(
        &self,
        params: &PolicyParams,
    ) -> Result<Vec<(Vec<usize>, f64, bool)>> {
        self.check_policy(params)?;
        self.check_enumerable()?;
        Ok(params
            .enumerate_sequences(self.prompt_class, self.length)?
            .into_iter()
            .map(|(tokens, p)| {
                let ok = self.is_correct_unchecked(&tokens);
                (tokens, p, ok)
            })
            .collect())
    }

    /// Σ over correct sequences of π_θ(y | x).
    pub fn exact_pass_rate(&self, params: &PolicyParams) -> Result<f64> {
        let rate: f64 = self
            .enumerate_outcomes(params)?
            .iter()
            .filter(|(_, _, ok)| *ok)
            .map(|(_, p, _)| p)
            .sum();
        Ok(rate.clamp(0.0, 1.0))
    }
}

/// A list of tasks sharing one vocabulary and answer length.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    tasks: Vec<TaskSpec>,
}

impl Dataset {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| AceError::input("dataset must contain at least one task"))?;
        for (i, t) in tasks.iter().enumerate() {
            t.validate()?;
            if t.vocab_size != first.vocab_size || t.length != first.length {
                return Err(AceError::input(format!(
                    "task {i} has V={} L={}, expected V={} L={}",
                    t.vocab_size, t.length, first.vocab_size, first.length
                )));
            }
        }
        Ok(Self { tasks })
    }

    /// `n` mod_sum tasks with targets `i mod M` and prompt classes `0..n`.
    pub fn mod_sum(vocab_size: usize, modulus: usize, length: usize, n: usize) -> Result<Self> {
        let tasks = (0..n)
            .map(|i| TaskSpec::mod_sum(modulus, i % modulus, vocab_size, length, i))
            .collect::<Result<Vec<_>>>()?;
        Self::new(tasks)
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.tasks[0].vocab_size
    }

    pub fn length(&self) -> usize {
        self.tasks[0].length
    }

    pub fn num_classes(&self) -> usize {
        self.tasks
            .iter()
            .map(|t| t.prompt_class + 1)
            .max()
            .unwrap_or(0)
    }

    /// A uniform policy shaped to cover every task in the dataset.
    pub fn uniform_policy(&self) -> Result<PolicyParams> {
        PolicyParams::uniform(self.vocab_size(), self.length(), self.num_classes())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tasks = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(AceError::Format(format!(
                    "line {}: expected `kind M t V L`, got {} fields",
                    lineno + 1,
                    fields.len()
                )));
            }
            let kind: TaskKind = fields[0].parse()?;
            let num = |i: usize, name: &str| -> Result<usize> {
                fields[i].parse().map_err(|_| {
                    AceError::Format(format!("line {}: bad {name} `{}`", lineno + 1, fields[i]))
                })
            };
            let task = TaskSpec {
                kind,
                modulus: num(1, "M")?,
                target: num(2, "t")?,
                vocab_size: num(3, "V")?,
                length: num(4, "L")?,
                prompt_class: tasks.len(),
            };
            task.validate()
                .map_err(|e| AceError::Format(format!("line {}: {e}", lineno + 1)))?;
            tasks.push(task);
        }
        Self::new(tasks)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# kind M t V L\n");
        for t in &self.tasks {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                t.kind, t.modulus, t.target, t.vocab_size, t.length
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn verify_examples() {
        let t = TaskSpec::mod_sum(5, 3, 5, 3, 0).unwrap();
        assert_eq!(t.verify(&[1, 2, 0]).unwrap().reward, 1);
        assert_eq!(t.verify(&[0, 0, 0]).unwrap().reward, 0);
        let t0 = TaskSpec::mod_sum(5, 0, 5, 3, 0).unwrap();
        assert_eq!(t0.verify(&[0, 0, 0]).unwrap().reward, 1);
    }

    #[test]
    fn verify_rejects_bad_input() {
        let t = TaskSpec::mod_sum(5, 3, 5, 3, 0).unwrap();
        assert!(matches!(t.verify(&[1, 2]), Err(AceError::Input(_))));
        assert!(matches!(t.verify(&[1, 2, 5]), Err(AceError::Input(_))));
    }

    #[test]
    fn invalid_specs() {
        assert!(TaskSpec::mod_sum(1, 0, 3, 2, 0).is_err());
        assert!(TaskSpec::mod_sum(3, 3, 3, 2, 0).is_err());
        assert!(TaskSpec::mod_sum(3, 0, 1, 2, 0).is_err());
        assert!(TaskSpec::mod_sum(3, 0, 3, 0, 0).is_err());
    }

    #[test]
    fn count_examples() {
        for t in 0..4 {
            assert_eq!(
                TaskSpec::mod_sum(4, t, 4, 1, 0)
                    .unwrap()
                    .count_correct()
                    .unwrap(),
                1
            );
        }
        assert_eq!(
            TaskSpec::mod_sum(2, 0, 2, 2, 0)
                .unwrap()
                .count_correct()
                .unwrap(),
            2
        );
    }

    #[test]
    fn counts_partition_space() {
        for (v, m, l) in [(3, 4, 3), (5, 3, 2), (2, 7, 5)] {
            let total: u64 = (0..m)
                .map(|t| {
                    TaskSpec::mod_sum(m, t, v, l, 0)
                        .unwrap()
                        .count_correct()
                        .unwrap()
                })
                .sum();
            assert_eq!(total, (v as u64).pow(l as u32));
        }
    }

    #[test]
    fn uniform_fibers_when_vocab_equals_modulus() {
        for v in 2..=5usize {
            for l in 1..=6usize {
                for t in 0..v {
                    let task = TaskSpec::mod_sum(v, t, v, l, 0).unwrap();
                    assert_eq!(task.count_correct().unwrap(), (v as u64).pow(l as u32 - 1));
                }
            }
        }
    }

    #[test]
    fn count_refuses_huge_space() {
        let t = TaskSpec::mod_sum(5, 0, 10, 7, 0).unwrap();
        assert!(matches!(
            t.count_correct(),
            Err(AceError::EnumerationCap { .. })
        ));
    }

    #[test]
    fn uniform_pass_rate_is_fraction_correct() {
        let t = TaskSpec::mod_sum(4, 1, 3, 3, 0).unwrap();
        let p = PolicyParams::uniform(3, 3, 1).unwrap();
        let expect = t.count_correct().unwrap() as f64 / 27.0;
        assert!((t.exact_pass_rate(&p).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn deterministic_correct_policy_passes() {
        let t = TaskSpec::mod_sum(3, 0, 3, 2, 0).unwrap();
        let mut p = PolicyParams::uniform(3, 2, 1).unwrap();
        for pos in 0..2 {
            for prev in 0..4 {
                p.row_mut(0, pos, prev).unwrap()[0] = 1e6;
            }
        }
        assert!((t.exact_pass_rate(&p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mc_pass_rate_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p = PolicyParams::random(3, 3, 1, 1.0, &mut rng).unwrap();
        let t = TaskSpec::mod_sum(3, 2, 3, 3, 0).unwrap();
        let exact = t.exact_pass_rate(&p).unwrap();
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                let s = p.sample_sequence(0, 3, &mut rng).unwrap();
                t.verify(&s.tokens).unwrap().is_correct()
            })
            .count();
        let mc = hits as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!(
            (mc - exact).abs() < 3.0 * se,
            "mc {mc} exact {exact} se {se}"
        );
    }

    #[test]
    fn dataset_text_round_trip() {
        let ds = Dataset::mod_sum(5, 5, 4, 8).unwrap();
        assert_eq!(ds.len(), 8);
        assert_eq!(ds.tasks()[7].target, 2);
        assert_eq!(Dataset::parse(&ds.to_text()).unwrap(), ds);
    }

    #[test]
    fn dataset_parse_errors() {
        assert!(Dataset::parse("mod_sum 5 3 5").is_err());
        assert!(Dataset::parse("mod_prod 5 3 5 4").is_err());
        assert!(Dataset::parse("mod_sum 5 7 5 4").is_err());
        assert!(Dataset::parse("mod_sum 5 1 5 4\nmod_sum 5 1 4 4").is_err());
        assert!(Dataset::parse("# nothing\n").is_err());
    }
}

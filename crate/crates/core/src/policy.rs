//! Tabular autoregressive softmax policy.
//!
//! A policy holds one logit row per context cell `(prompt class, position,
//! previous token)`. The previous-token axis has `V + 1` entries; index `V`
//! is the begin-of-sequence marker used at position 0. Everything here is
//! exact: log-probabilities, score functions and the full sequence space are
//! available in closed form, which is what makes the exact-expectation checks
//! in [`crate::theory`] possible.
//!
//! # Checkpoint format
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"ACEPOL\0\x01"
//! 8       4     vocab_size V        (u32, little-endian)
//! 12      4     max_len L           (u32, little-endian)
//! 16      4     num_prompt_classes  (u32, little-endian)
//! 20      4     reserved, zero
//! 24      8·N   logits, f64 little-endian, N = classes·L·(V+1)·V,
//!               row-major over (class, position, prev_token, token)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{AceError, Result};

/// Largest sequence space `enumerate_sequences` will materialize.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

const CHECKPOINT_MAGIC: &[u8; 8] = b"ACEPOL\0\x01";

/// Dimensions shared by a logit table and its gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorShape {
    pub vocab_size: usize,
    pub max_len: usize,
    pub num_classes: usize,
}

impl TensorShape {
    pub fn new(vocab_size: usize, max_len: usize, num_classes: usize) -> Result<Self> {
        if vocab_size == 0 || max_len == 0 || num_classes == 0 {
            return Err(AceError::input(format!(
                "policy shape must be positive, got V={vocab_size} L={max_len} classes={num_classes}"
            )));
        }
        Ok(Self {
            vocab_size,
            max_len,
            num_classes,
        })
    }

    /// Number of previous-token slots (vocabulary plus the BOS marker).
    pub fn prev_slots(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn bos(&self) -> usize {
        self.vocab_size
    }

    pub fn num_entries(&self) -> usize {
        self.num_classes * self.max_len * self.prev_slots() * self.vocab_size
    }

    /// Offset of the first entry of a logit row.
    pub fn row_offset(&self, class: usize, position: usize, prev: usize) -> Result<usize> {
        check_index("prompt_class", class, self.num_classes)?;
        check_index("position", position, self.max_len)?;
        check_index("prev_token", prev, self.prev_slots())?;
        Ok(((class * self.max_len + position) * self.prev_slots() + prev) * self.vocab_size)
    }
}

fn check_index(what: &'static str, index: usize, limit: usize) -> Result<()> {
    if index >= limit {
        Err(AceError::Index { what, index, limit })
    } else {
        Ok(())
    }
}

/// Per-step conditional distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        Self { probs }
    }

    /// Softmax of `logits / temperature`.
    pub fn with_temperature(logits: &[f64], temperature: f64) -> Self {
        if temperature == 1.0 {
            return Self::from_logits(logits);
        }
        let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        Self::from_logits(&scaled)
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Inverse-CDF draw from a single uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (v, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = v;
            }
            acc += p;
            if u < acc {
                return v;
            }
        }
        last_positive
    }
}

/// Numerically stable `log softmax(logits)[index]`.
fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits[index] - lse
}

/// One sampled sequence with its per-token log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub tokens: Vec<usize>,
    pub logp_theta: f64,
    pub per_token_logp: Vec<f64>,
}

/// Gradient with respect to every logit entry; same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    shape: TensorShape,
    values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(shape: TensorShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.num_entries()],
        }
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, class: usize, position: usize, prev: usize) -> Result<&[f64]> {
        let off = self.shape.row_offset(class, position, prev)?;
        Ok(&self.values[off..off + self.shape.vocab_size])
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, other: &Gradient, weight: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(AceError::input("gradient shape mismatch"));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += weight * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Gradient) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Tabular autoregressive logit table (π_θ, and its frozen copies π_ref / π_old).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: TensorShape,
    logits: Vec<f64>,
}

impl PolicyParams {
    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(vocab_size: usize, max_len: usize, num_classes: usize) -> Result<Self> {
        let shape = TensorShape::new(vocab_size, max_len, num_classes)?;
        Ok(Self {
            shape,
            logits: vec![0.0; shape.num_entries()],
        })
    }

    pub fn from_logits(
        vocab_size: usize,
        max_len: usize,
        num_classes: usize,
        logits: Vec<f64>,
    ) -> Result<Self> {
        let shape = TensorShape::new(vocab_size, max_len, num_classes)?;
        if logits.len() != shape.num_entries() {
            return Err(AceError::input(format!(
                "expected {} logits, got {}",
                shape.num_entries(),
                logits.len()
            )));
        }
        if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
            return Err(AceError::input(format!("logit {i} is not finite")));
        }
        Ok(Self { shape, logits })
    }

    /// Logits drawn i.i.d. from N(0, scale²).
    pub fn random<R: Rng + ?Sized>(
        vocab_size: usize,
        max_len: usize,
        num_classes: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = TensorShape::new(vocab_size, max_len, num_classes)?;
        let normal = Normal::new(0.0, scale.abs())
            .map_err(|e| AceError::input(format!("bad logit scale: {e}")))?;
        let logits = (0..shape.num_entries())
            .map(|_| normal.sample(rng))
            .collect();
        Ok(Self { shape, logits })
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn vocab_size(&self) -> usize {
        self.shape.vocab_size
    }

    pub fn max_len(&self) -> usize {
        self.shape.max_len
    }

    pub fn num_classes(&self) -> usize {
        self.shape.num_classes
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Mutable access for optimizers. Callers must keep every entry finite.
    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, class: usize, position: usize, prev: usize) -> Result<&[f64]> {
        let off = self.shape.row_offset(class, position, prev)?;
        Ok(&self.logits[off..off + self.shape.vocab_size])
    }

    pub fn row_mut(&mut self, class: usize, position: usize, prev: usize) -> Result<&mut [f64]> {
        let off = self.shape.row_offset(class, position, prev)?;
        Ok(&mut self.logits[off..off + self.shape.vocab_size])
    }

    /// Deep copy, used to freeze π_ref and π_old.
    pub fn snapshot(&self) -> PolicyParams {
        self.clone()
    }

    pub fn conditional_distribution(
        &self,
        class: usize,
        position: usize,
        prev: usize,
    ) -> Result<TokenDistribution> {
        Ok(TokenDistribution::from_logits(
            self.row(class, position, prev)?,
        ))
    }

    pub fn token_entropy(&self, class: usize, position: usize, prev: usize) -> Result<f64> {
        Ok(self
            .conditional_distribution(class, position, prev)?
            .entropy())
    }

    fn check_tokens(&self, class: usize, tokens: &[usize]) -> Result<()> {
        check_index("prompt_class", class, self.shape.num_classes)?;
        if tokens.len() > self.shape.max_len {
            return Err(AceError::Index {
                what: "sequence length",
                index: tokens.len(),
                limit: self.shape.max_len + 1,
            });
        }
        for &t in tokens {
            check_index("token", t, self.shape.vocab_size)?;
        }
        Ok(())
    }

    /// Samples `length` tokens at temperature 1.
    pub fn sample_sequence<R: Rng + ?Sized>(
        &self,
        class: usize,
        length: usize,
        rng: &mut R,
    ) -> Result<SequenceSample> {
        self.sample_sequence_with_temperature(class, length, 1.0, rng)
    }

    /// Samples `length` tokens from the tempered conditionals. The recorded
    /// log-probabilities are those of the distributions actually sampled from.
    pub fn sample_sequence_with_temperature<R: Rng + ?Sized>(
        &self,
        class: usize,
        length: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Result<SequenceSample> {
        self.sample_inner(class, length, temperature, None, rng)
    }

    /// Samples until `stop_token` is emitted (inclusive) or `max_len` tokens.
    pub fn sample_until<R: Rng + ?Sized>(
        &self,
        class: usize,
        max_len: usize,
        stop_token: usize,
        rng: &mut R,
    ) -> Result<SequenceSample> {
        check_index("stop_token", stop_token, self.shape.vocab_size)?;
        self.sample_inner(class, max_len, 1.0, Some(stop_token), rng)
    }

    fn sample_inner<R: Rng + ?Sized>(
        &self,
        class: usize,
        length: usize,
        temperature: f64,
        stop_token: Option<usize>,
        rng: &mut R,
    ) -> Result<SequenceSample> {
        check_index("prompt_class", class, self.shape.num_classes)?;
        if length > self.shape.max_len {
            return Err(AceError::Index {
                what: "sequence length",
                index: length,
                limit: self.shape.max_len + 1,
            });
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(AceError::input(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut tokens = Vec::with_capacity(length);
        let mut per_token_logp = Vec::with_capacity(length);
        let mut prev = self.shape.bos();
        for position in 0..length {
            let row = self.row(class, position, prev)?;
            let dist = TokenDistribution::with_temperature(row, temperature);
            let tok = dist.sample(rng);
            let lp = if temperature == 1.0 {
                log_softmax_at(row, tok)
            } else {
                let scaled: Vec<f64> = row.iter().map(|l| l / temperature).collect();
                log_softmax_at(&scaled, tok)
            };
            tokens.push(tok);
            per_token_logp.push(lp);
            prev = tok;
            if stop_token == Some(tok) {
                break;
            }
        }
        let logp_theta = per_token_logp.iter().sum();
        Ok(SequenceSample {
            tokens,
            logp_theta,
            per_token_logp,
        })
    }

    /// Per-token log π(y_t | x, y_<t).
    pub fn token_logprobs(&self, class: usize, tokens: &[usize]) -> Result<Vec<f64>> {
        self.check_tokens(class, tokens)?;
        let mut prev = self.shape.bos();
        let mut out = Vec::with_capacity(tokens.len());
        for (position, &tok) in tokens.iter().enumerate() {
            out.push(log_softmax_at(self.row(class, position, prev)?, tok));
            prev = tok;
        }
        Ok(out)
    }

    pub fn sequence_logprob(&self, class: usize, tokens: &[usize]) -> Result<f64> {
        Ok(self.token_logprobs(class, tokens)?.iter().sum())
    }

    /// ∇_θ log π(tokens): `one_hot(chosen) − probs` on every visited row.
    pub fn score_function(&self, class: usize, tokens: &[usize]) -> Result<Gradient> {
        let mut grad = Gradient::zeros(self.shape);
        self.accumulate_score(class, tokens, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// `grad += weight · ∇_θ log π(tokens)` without allocating a dense tensor.
    pub fn accumulate_score(
        &self,
        class: usize,
        tokens: &[usize],
        weight: f64,
        grad: &mut Gradient,
    ) -> Result<()> {
        let token_weights = vec![weight; tokens.len()];
        self.accumulate_token_scores(class, tokens, &token_weights, grad)
    }

    /// `grad += Σ_t weights[t] · ∇_θ log π(y_t | x, y_<t)`.
    pub fn accumulate_token_scores(
        &self,
        class: usize,
        tokens: &[usize],
        weights: &[f64],
        grad: &mut Gradient,
    ) -> Result<()> {
        self.check_tokens(class, tokens)?;
        if grad.shape != self.shape {
            return Err(AceError::input("gradient shape mismatch"));
        }
        if weights.len() != tokens.len() {
            return Err(AceError::input("one weight per token required"));
        }
        let v = self.shape.vocab_size;
        let mut prev = self.shape.bos();
        for (position, (&tok, &w)) in tokens.iter().zip(weights).enumerate() {
            let off = self.shape.row_offset(class, position, prev)?;
            if w != 0.0 {
                let dist = TokenDistribution::from_logits(&self.logits[off..off + v]);
                let row = &mut grad.values[off..off + v];
                for (j, p) in dist.probs.iter().enumerate() {
                    row[j] -= w * p;
                }
                row[tok] += w;
            }
            prev = tok;
        }
        Ok(())
    }

    /// Every sequence of `length` tokens with its probability.
    pub fn enumerate_sequences(
        &self,
        class: usize,
        length: usize,
    ) -> Result<Vec<(Vec<usize>, f64)>> {
        self.enumerate_sequences_capped(class, length, DEFAULT_ENUMERATION_CAP)
    }

    pub fn enumerate_sequences_capped(
        &self,
        class: usize,
        length: usize,
        cap: u64,
    ) -> Result<Vec<(Vec<usize>, f64)>> {
        check_index("prompt_class", class, self.shape.num_classes)?;
        if length > self.shape.max_len {
            return Err(AceError::Index {
                what: "sequence length",
                index: length,
                limit: self.shape.max_len + 1,
            });
        }
        let size = sequence_space_size(self.shape.vocab_size, length);
        if size > cap as u128 {
            return Err(AceError::EnumerationCap { size, cap });
        }
        let mut out = Vec::with_capacity(size as usize);
        let mut prefix = Vec::with_capacity(length);
        self.enumerate_rec(class, length, &mut prefix, 0.0, &mut out)?;
        Ok(out)
    }

    fn enumerate_rec(
        &self,
        class: usize,
        length: usize,
        prefix: &mut Vec<usize>,
        logp: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) -> Result<()> {
        let position = prefix.len();
        if position == length {
            out.push((prefix.clone(), logp.exp()));
            return Ok(());
        }
        let prev = prefix.last().copied().unwrap_or(self.shape.bos());
        let row = self.row(class, position, prev)?;
        for tok in 0..self.shape.vocab_size {
            let lp = log_softmax_at(row, tok);
            prefix.push(tok);
            self.enumerate_rec(class, length, prefix, logp + lp, out)?;
            prefix.pop();
        }
        Ok(())
    }

    /// Writes the little-endian checkpoint described in the module docs.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for dim in [
            self.shape.vocab_size,
            self.shape.max_len,
            self.shape.num_classes,
            0,
        ] {
            let dim = u32::try_from(dim)
                .map_err(|_| AceError::Format(format!("dimension {dim} exceeds u32")))?;
            w.write_all(&dim.to_le_bytes())?;
        }
        for l in &self.logits {
            w.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(AceError::Format("bad checkpoint magic".into()));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            *d = u32::from_le_bytes(buf) as usize;
        }
        let shape = TensorShape::new(dims[0], dims[1], dims[2])
            .map_err(|e| AceError::Format(e.to_string()))?;
        let mut logits = Vec::with_capacity(shape.num_entries());
        let mut buf = [0u8; 8];
        for _ in 0..shape.num_entries() {
            r.read_exact(&mut buf).map_err(|_| {
                AceError::Format("checkpoint truncated before end of logit table".into())
            })?;
            logits.push(f64::from_le_bytes(buf));
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(AceError::Format("trailing bytes after logit table".into()));
        }
        Self::from_logits(shape.vocab_size, shape.max_len, shape.num_classes, logits)
            .map_err(|e| AceError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_checkpoint(std::io::BufReader::new(file))
    }
}

/// `V^length` without overflow.
pub fn sequence_space_size(vocab_size: usize, length: usize) -> u128 {
    (vocab_size as u128)
        .checked_pow(length as u32)
        .unwrap_or(u128::MAX)
}

//! C ABI over the acelab core library.
//!
//! Every function returns an [`AcelabStatus`]; results are written through
//! out-pointers. On failure a message is kept per thread and can be read with
//! [`acelab_last_error`]. Policies are opaque [`AcelabPolicy`] handles that the
//! caller owns and releases with [`acelab_policy_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use acelab::advantage::{
    ace_advantages, group_stats, grpo_advantages, modulate, ModulationKind, ADVANTAGE_EPS,
};
use acelab::env::TaskSpec;
use acelab::error::AceError;
use acelab::metrics::pass_at_k;
use acelab::policy::PolicyParams;
use acelab::seeding::{self, Purpose};
use acelab::theory::verify_decomposition;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcelabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IndexOutOfRange = 3,
    Degenerate = 4,
    Io = 5,
    Format = 6,
    EnumerationCap = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Values accepted by the `modulation` parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcelabModulation {
    Softplus = 0,
    Relu = 1,
}

/// Opaque tabular policy.
pub struct AcelabPolicy {
    inner: PolicyParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(AcelabStatus, String);

impl From<AceError> for Fail {
    fn from(err: AceError) -> Self {
        let status = match &err {
            AceError::Index { .. } => AcelabStatus::IndexOutOfRange,
            AceError::Input(_) | AceError::Config { .. } => AcelabStatus::InvalidArgument,
            AceError::EnumerationCap { .. } => AcelabStatus::EnumerationCap,
            AceError::Degenerate(_) => AcelabStatus::Degenerate,
            AceError::Format(_) => AcelabStatus::Format,
            AceError::Io(_) => AcelabStatus::Io,
        };
        Fail(status, err.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AcelabStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(AcelabStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AcelabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            AcelabStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AcelabStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn policy_ref<'a>(p: *const AcelabPolicy, what: &str) -> Result<&'a PolicyParams, Fail> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn modulation(kind: u32) -> Result<ModulationKind, Fail> {
    match kind {
        0 => Ok(ModulationKind::Softplus),
        1 => Ok(ModulationKind::Relu),
        other => Err(invalid(format!("unknown modulation kind {other}"))),
    }
}

fn tokens_of(raw: &[u32]) -> Vec<usize> {
    raw.iter().map(|&t| t as usize).collect()
}

fn emit(handle: PolicyParams, out: &mut *mut AcelabPolicy) {
    *out = Box::into_raw(Box::new(AcelabPolicy { inner: handle }));
}

/// Message for the most recent failure on this thread, or null after a
/// success. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn acelab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn acelab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a policy with all-zero logits.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn acelab_policy_new_uniform(
    vocab_size: usize,
    max_len: usize,
    num_classes: usize,
    out: *mut *mut AcelabPolicy,
) -> AcelabStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        emit(
            PolicyParams::uniform(vocab_size, max_len, num_classes)?,
            out,
        );
        Ok(())
    })
}

/// Creates a policy with logits drawn i.i.d. from N(0, scale²).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn acelab_policy_new_random(
    vocab_size: usize,
    max_len: usize,
    num_classes: usize,
    scale: f64,
    seed: u64,
    out: *mut *mut AcelabPolicy,
) -> AcelabStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut rng = seeding::stream(seed, Purpose::Instance, u64::MAX, 0);
        emit(
            PolicyParams::random(vocab_size, max_len, num_classes, scale, &mut rng)?,
            out,
        );
        Ok(())
    })
}

/// Creates a policy from `len` logits in row-major (class, position, previous token, token) order.
///
/// # Safety
/// `logits` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acelab_policy_from_logits(
    vocab_size: usize,
    max_len: usize,
    num_classes: usize,
    logits: *const f64,
    len: usize,
    out: *mut *mut AcelabPolicy,
) -> AcelabStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let values = slice(logits, len, "logits")?.to_vec();
        emit(
            PolicyParams::from_logits(vocab_size, max_len, num_classes, values)?,
            out,
        );
        Ok(())
    })
}

/// Releases a policy. Null is ignored.
///
/// # Safety
/// `policy` must be null or a handle returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn acelab_policy_free(policy: *mut AcelabPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acelab_policy_load(
    path: *const c_char,
    out: *mut *mut AcelabPolicy,
) -> AcelabStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let path = path_arg(path)?;
        emit(PolicyParams::load(&path)?, out);
        Ok(())
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `policy` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn acelab_policy_save(
    policy: *const AcelabPolicy,
    path: *const c_char,
) -> AcelabStatus {
    guard(|| {
        let p = policy_ref(policy, "policy")?;
        p.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Reports the vocabulary size, maximum length and number of prompt classes.
///
/// # Safety
/// `policy` must be a live handle; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn acelab_policy_shape(
    policy: *const AcelabPolicy,
    vocab_size: *mut usize,
    max_len: *mut usize,
    num_classes: *mut usize,
) -> AcelabStatus {
    guard(|| {
        let (v, l, c) = (
            out_ref(vocab_size, "vocab_size")?,
            out_ref(max_len, "max_len")?,
            out_ref(num_classes, "num_classes")?,
        );
        let p = policy_ref(policy, "policy")?;
        *v = p.vocab_size();
        *l = p.max_len();
        *c = p.num_classes();
        Ok(())
    })
}

/// Copies the logits into `buf`. `*len_out` receives the required length,
/// and `BUFFER_TOO_SMALL` is returned if `capacity` is less than that.
///
/// # Safety
/// `buf` must point to `capacity` writable doubles (may be null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn acelab_policy_logits(
    policy: *const AcelabPolicy,
    buf: *mut f64,
    capacity: usize,
    len_out: *mut usize,
) -> AcelabStatus {
    guard(|| {
        let p = policy_ref(policy, "policy")?;
        let logits = p.logits();
        *out_ref(len_out, "len_out")? = logits.len();
        if capacity < logits.len() {
            return Err(Fail(
                AcelabStatus::BufferTooSmall,
                format!("need {} doubles, got {capacity}", logits.len()),
            ));
        }
        slice_mut(buf, logits.len(), "buf")?.copy_from_slice(logits);
        Ok(())
    })
}

/// `log π(tokens | class)`.
///
/// # Safety
/// `tokens` must point to `len` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acelab_policy_sequence_logprob(
    policy: *const AcelabPolicy,
    class: usize,
    tokens: *const u32,
    len: usize,
    out: *mut f64,
) -> AcelabStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let p = policy_ref(policy, "policy")?;
        let toks = tokens_of(slice(tokens, len, "tokens")?);
        *out = p.sequence_logprob(class, &toks)?;
        Ok(())
    })
}

/// Probability that a sampled answer satisfies `(Σ tokens) mod modulus == target`,
/// by exhaustive enumeration over answers of `length` tokens.
///
/// # Safety
/// `policy` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acelab_policy_exact_pass_rate(
    policy: *const AcelabPolicy,
    modulus: usize,
    target: usize,
    length: usize,
    class: usize,
    out: *mut f64,
) -> AcelabStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let p = policy_ref(policy, "policy")?;
        let task = TaskSpec::mod_sum(modulus, target, p.vocab_size(), length, class)?;
        *out = task.exact_pass_rate(p)?;
        Ok(())
    })
}

/// Confidence modulation `softplus(c)` or `max(c, 0)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acelab_modulate(
    confidence: f64,
    modulation_kind: u32,
    out: *mut f64,
) -> AcelabStatus {
    guard(|| {
        *out_ref(out, "out")? = modulate(confidence, modulation(modulation_kind)?);
        Ok(())
    })
}

/// Group-normalized advantages `(r − mean) / (std + 1e-8)`.
///
/// # Safety
/// `rewards` and `out` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn acelab_grpo_advantages(
    rewards: *const f64,
    n: usize,
    out: *mut f64,
) -> AcelabStatus {
    guard(|| {
        let r = slice(rewards, n, "rewards")?;
        let stats = group_stats(r)?;
        let adv = grpo_advantages(r, &stats, ADVANTAGE_EPS)?;
        slice_mut(out, n, "out")?.copy_from_slice(&adv);
        Ok(())
    })
}

/// Confidence-scaled advantages: group-normalized, then each zero-reward entry
/// multiplied by `1 + alpha · modulation(confidence)`.
///
/// # Safety
/// `rewards`, `confidence` and `out` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn acelab_ace_advantages(
    rewards: *const f64,
    confidence: *const f64,
    n: usize,
    alpha: f64,
    modulation_kind: u32,
    out: *mut f64,
) -> AcelabStatus {
    guard(|| {
        let r = slice(rewards, n, "rewards")?;
        let c = slice(confidence, n, "confidence")?;
        let kind = modulation(modulation_kind)?;
        let stats = group_stats(r)?;
        let grpo = grpo_advantages(r, &stats, ADVANTAGE_EPS)?;
        let ace = ace_advantages(&grpo, r, c, alpha, kind)?;
        slice_mut(out, n, "out")?.copy_from_slice(&ace);
        Ok(())
    })
}

/// Unbiased pass@k from `c` correct answers out of `n`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acelab_pass_at_k(
    n: usize,
    c: usize,
    k: usize,
    out: *mut f64,
) -> AcelabStatus {
    guard(|| {
        *out_ref(out, "out")? = pass_at_k(n, c, k)?;
        Ok(())
    })
}

/// Verifies an answer to a mod_sum task; `*reward` is 1 if correct, else 0.
///
/// # Safety
/// `tokens` must point to `len` readable values; `reward` must be writable.
#[no_mangle]
pub unsafe extern "C" fn acelab_mod_sum_verify(
    modulus: usize,
    target: usize,
    vocab_size: usize,
    tokens: *const u32,
    len: usize,
    reward: *mut u8,
) -> AcelabStatus {
    guard(|| {
        let reward = out_ref(reward, "reward")?;
        let toks = tokens_of(slice(tokens, len, "tokens")?);
        let task = TaskSpec::mod_sum(modulus, target, vocab_size, len, 0)?;
        *reward = task.verify(&toks)?.reward;
        Ok(())
    })
}

/// Exact check of the selective-regularizer decomposition for one mod_sum
/// prompt. Writes the max-norm identity defect and the regularizer value.
///
/// # Safety
/// `policy` and `reference` must be live handles; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn acelab_verify_decomposition(
    policy: *const AcelabPolicy,
    reference: *const AcelabPolicy,
    modulus: usize,
    target: usize,
    length: usize,
    class: usize,
    alpha: f64,
    identity_defect: *mut f64,
    regularizer_value: *mut f64,
) -> AcelabStatus {
    guard(|| {
        let defect_out = out_ref(identity_defect, "identity_defect")?;
        let value_out = out_ref(regularizer_value, "regularizer_value")?;
        let p = policy_ref(policy, "policy")?;
        let r = policy_ref(reference, "reference")?;
        let task = TaskSpec::mod_sum(modulus, target, p.vocab_size(), length, class)?;
        let report = verify_decomposition(p, r, &task, alpha)?;
        *defect_out = report.identity_defect;
        *value_out = report.r_sel_value;
        Ok(())
    })
}

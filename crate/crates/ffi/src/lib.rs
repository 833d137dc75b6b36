//! C ABI over the token-reduction engine.
//!
//! Stacks and results are opaque heap handles. Every fallible call returns an
//! [`AsapStatus`]; on failure a message is available from
//! [`asap_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use asap_core::attnio::{read_stack, AttentionStack};
use asap_core::hybrid::{HybridConfig, RedundancyMetric};
use asap_core::pipeline::{
    run_pipeline, Anchor, FeatureLayer, Mode, PipelineConfig, PipelineOutput, ReduceConfig,
};
use asap_core::reduce::{BudgetPolicy, Provenance, TokenFate};
use asap_core::report::RunReport;
use asap_core::walk::WalkConfig;
use asap_core::Error;

/// Status codes. Values match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsapStatus {
    Ok = 0,
    ConfigError = 2,
    IoFailure = 3,
    MagicMismatch = 10,
    VersionUnsupported = 11,
    ShapeMismatch = 12,
    NotRowStochastic = 13,
    NegativeEntry = 14,
    EntryOutOfRange = 15,
    NonFinite = 16,
    MissingCls = 17,
    InvalidMeta = 18,
    LayerOutOfRange = 20,
    AlphaOutOfRange = 21,
    TauOutOfRange = 22,
    EmptyStack = 23,
    HistoryNotRetained = 24,
    SinkIsCls = 30,
    IndexOutOfRange = 31,
    DegeneratePhi = 32,
    LengthMismatch = 33,
    TooShort = 34,
    BadClusterCounts = 40,
    EmptyBackground = 41,
    MissingFeatures = 42,
    TargetExceedsInput = 43,
    InfeasibleMargin = 50,
    NullPointer = 90,
    InvalidUtf8 = 91,
    BufferTooSmall = 92,
    NoTokenSet = 93,
    Panic = 99,
}

impl From<&Error> for AsapStatus {
    fn from(e: &Error) -> Self {
        use AsapStatus as S;
        match e {
            Error::Config(_) => S::ConfigError,
            Error::Io(_) => S::IoFailure,
            Error::MagicMismatch { .. } => S::MagicMismatch,
            Error::VersionUnsupported(_) => S::VersionUnsupported,
            Error::ShapeMismatch(_) => S::ShapeMismatch,
            Error::NotRowStochastic { .. } => S::NotRowStochastic,
            Error::NegativeEntry { .. } => S::NegativeEntry,
            Error::EntryOutOfRange { .. } => S::EntryOutOfRange,
            Error::NonFinite(_) => S::NonFinite,
            Error::MissingCls => S::MissingCls,
            Error::InvalidMeta(_) => S::InvalidMeta,
            Error::LayerOutOfRange { .. } => S::LayerOutOfRange,
            Error::AlphaOutOfRange(_) => S::AlphaOutOfRange,
            Error::TauOutOfRange(_) => S::TauOutOfRange,
            Error::EmptyStack => S::EmptyStack,
            Error::HistoryNotRetained => S::HistoryNotRetained,
            Error::SinkIsCls => S::SinkIsCls,
            Error::IndexOutOfRange { .. } => S::IndexOutOfRange,
            Error::DegeneratePhi => S::DegeneratePhi,
            Error::LengthMismatch { .. } => S::LengthMismatch,
            Error::TooShort(_) => S::TooShort,
            Error::BadClusterCounts { .. } => S::BadClusterCounts,
            Error::EmptyBackground => S::EmptyBackground,
            Error::MissingFeatures { .. } => S::MissingFeatures,
            Error::TargetExceedsInput { .. } => S::TargetExceedsInput,
            Error::InfeasibleMargin { .. } => S::InfeasibleMargin,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsapMode {
    Pool = 0,
    Prune = 1,
    Hybrid = 2,
    ReportOnly = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsapMetric {
    Diffusion = 0,
    Cosine = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsapBudgetPolicy {
    Strict = 0,
    Literal = 1,
}

/// Fate of an original token in the reduced output.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsapFate {
    Keep = 0,
    Pool = 1,
    Drop = 2,
}

/// Run configuration. Start from `asap_config_default()`.
///
/// Zero means "unset" for `budget`, `removal_batch` and `max_layers`.
/// A negative `feature_layer` selects the trigger layer.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AsapConfig {
    pub mode: AsapMode,
    pub alpha: f64,
    pub tau: f64,
    pub k: usize,
    pub p: usize,
    pub budget: usize,
    pub removal_batch: usize,
    pub metric: AsapMetric,
    pub budget_policy: AsapBudgetPolicy,
    pub random_anchor: bool,
    pub anchor_seed: u64,
    pub early_stop: bool,
    pub max_layers: usize,
    pub feature_layer: i64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AsapSinkReport {
    pub t_star: usize,
    pub sink_index: usize,
    pub trigger_value: f64,
    pub detected: bool,
    /// Token the distances were measured from.
    pub anchor: usize,
}

/// Opaque attention stack.
pub struct AsapStack(AttentionStack);

/// Opaque pipeline result.
pub struct AsapResult {
    config: PipelineConfig,
    layers: usize,
    output: PipelineOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn fail(status: AsapStatus, msg: impl Into<String>) -> AsapStatus {
    set_last_error(msg);
    status
}

fn guard(body: impl FnOnce() -> AsapStatus) -> AsapStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(AsapStatus::Panic, "internal panic"),
    }
}

fn from_error(e: Error) -> AsapStatus {
    let status = AsapStatus::from(&e);
    fail(status, e.to_string())
}

impl AsapConfig {
    fn to_pipeline(self) -> PipelineConfig {
        let mode = match self.mode {
            AsapMode::Pool => Mode::Pool,
            AsapMode::Prune => Mode::Prune,
            AsapMode::Hybrid => Mode::Hybrid,
            AsapMode::ReportOnly => Mode::ReportOnly,
        };
        let budget = (self.budget > 0).then_some(self.budget);
        let hybrid = match (mode, budget) {
            (Mode::Hybrid, Some(target)) => Some(HybridConfig {
                target,
                removal_batch: (self.removal_batch > 0).then_some(self.removal_batch),
                metric: match self.metric {
                    AsapMetric::Diffusion => RedundancyMetric::Diffusion,
                    AsapMetric::Cosine => RedundancyMetric::Cosine,
                },
            }),
            _ => None,
        };
        PipelineConfig {
            mode,
            walk: WalkConfig {
                alpha: self.alpha,
                tau: self.tau,
                max_layers: (self.max_layers > 0).then_some(self.max_layers),
                early_stop: self.early_stop,
                retain_history: false,
            },
            reduce: ReduceConfig {
                k: self.k,
                p: self.p,
                budget: if mode == Mode::Hybrid { None } else { budget },
                budget_policy: match self.budget_policy {
                    AsapBudgetPolicy::Strict => BudgetPolicy::Strict,
                    AsapBudgetPolicy::Literal => BudgetPolicy::Literal,
                },
                feature_layer: if self.feature_layer < 0 {
                    FeatureLayer::Trigger
                } else {
                    FeatureLayer::Fixed(self.feature_layer as usize)
                },
            },
            hybrid,
            anchor: if self.random_anchor {
                Anchor::Random {
                    seed: self.anchor_seed,
                }
            } else {
                Anchor::Sink
            },
        }
    }
}

/// Defaults: pool mode, alpha 0.5, tau 7, K 6, p 1, sink anchor, early stop.
#[no_mangle]
pub extern "C" fn asap_config_default() -> AsapConfig {
    AsapConfig {
        mode: AsapMode::Pool,
        alpha: 0.5,
        tau: 7.0,
        k: 6,
        p: 1,
        budget: 0,
        removal_batch: 0,
        metric: AsapMetric::Diffusion,
        budget_policy: AsapBudgetPolicy::Strict,
        random_anchor: false,
        anchor_seed: 0,
        early_stop: true,
        max_layers: 0,
        feature_layer: -1,
    }
}

/// Reads an ATNB file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn asap_stack_read(
    path: *const c_char,
    out: *mut *mut AsapStack,
) -> AsapStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(AsapStatus::NullPointer, "null argument");
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => return fail(AsapStatus::InvalidUtf8, "path is not UTF-8"),
        };
        match read_stack(path) {
            Ok(stack) => {
                *out = Box::into_raw(Box::new(AsapStack(stack)));
                AsapStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Builds a stack from caller-owned buffers, which are copied.
///
/// `attn` holds `layers * heads * tokens * tokens` values. `features` may be
/// null (with `feature_dim` 0); otherwise it holds `layers * tokens * feature_dim`.
///
/// # Safety
/// Buffers must be valid for the stated lengths and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn asap_stack_from_buffers(
    layers: usize,
    heads: usize,
    tokens: usize,
    attn: *const f32,
    feature_dim: usize,
    features: *const f32,
    out: *mut *mut AsapStack,
) -> AsapStatus {
    guard(|| {
        if attn.is_null() || out.is_null() {
            return fail(AsapStatus::NullPointer, "null argument");
        }
        let attn_len = match layers
            .checked_mul(heads)
            .and_then(|v| v.checked_mul(tokens))
            .and_then(|v| v.checked_mul(tokens))
        {
            Some(v) => v,
            None => return fail(AsapStatus::ShapeMismatch, "attention size overflows"),
        };
        let attn = std::slice::from_raw_parts(attn, attn_len).to_vec();
        let feats = if features.is_null() || feature_dim == 0 {
            None
        } else {
            let len = match layers
                .checked_mul(tokens)
                .and_then(|v| v.checked_mul(feature_dim))
            {
                Some(v) => v,
                None => return fail(AsapStatus::ShapeMismatch, "feature size overflows"),
            };
            Some((
                feature_dim,
                std::slice::from_raw_parts(features, len).to_vec(),
            ))
        };
        match AttentionStack::new(layers, heads, tokens, attn, feats, Default::default()) {
            Ok(stack) => {
                *out = Box::into_raw(Box::new(AsapStack(stack)));
                AsapStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Token count N, or 0 for a null handle.
///
/// # Safety
/// `stack` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asap_stack_tokens(stack: *const AsapStack) -> usize {
    stack.as_ref().map_or(0, |s| s.0.tokens())
}

/// Layer count L, or 0 for a null handle.
///
/// # Safety
/// `stack` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asap_stack_layers(stack: *const AsapStack) -> usize {
    stack.as_ref().map_or(0, |s| s.0.layers())
}

/// # Safety
/// `stack` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asap_stack_free(stack: *mut AsapStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Runs the pipeline. A null `config` uses the defaults.
///
/// # Safety
/// `stack` must be a live handle, `config` null or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn asap_run(
    stack: *const AsapStack,
    config: *const AsapConfig,
    out: *mut *mut AsapResult,
) -> AsapStatus {
    guard(|| {
        let Some(stack) = stack.as_ref() else {
            return fail(AsapStatus::NullPointer, "null stack");
        };
        if out.is_null() {
            return fail(AsapStatus::NullPointer, "null output pointer");
        }
        let cfg = config
            .as_ref()
            .copied()
            .unwrap_or_else(|| asap_config_default())
            .to_pipeline();
        match run_pipeline(&stack.0, &cfg) {
            Ok(output) => {
                *out = Box::into_raw(Box::new(AsapResult {
                    config: cfg,
                    layers: stack.0.layers(),
                    output,
                }));
                AsapStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn asap_result_sink(
    result: *const AsapResult,
    out: *mut AsapSinkReport,
) -> AsapStatus {
    guard(|| {
        let (Some(r), false) = (result.as_ref(), out.is_null()) else {
            return fail(AsapStatus::NullPointer, "null argument");
        };
        let s = &r.output.sink;
        *out = AsapSinkReport {
            t_star: s.t_star,
            sink_index: s.sink_index,
            trigger_value: s.trigger_value,
            detected: s.detected,
            anchor: r.output.anchor,
        };
        AsapStatus::Ok
    })
}

unsafe fn copy_out<T: Copy>(
    values: &[T],
    buf: *mut T,
    cap: usize,
    out_len: *mut usize,
) -> AsapStatus {
    if !out_len.is_null() {
        *out_len = values.len();
    }
    // a null buffer with zero capacity is a size query
    if values.is_empty() || (buf.is_null() && cap == 0) {
        return AsapStatus::Ok;
    }
    if buf.is_null() {
        return fail(AsapStatus::NullPointer, "null buffer");
    }
    if cap < values.len() {
        return fail(
            AsapStatus::BufferTooSmall,
            format!("need {} slots, got {cap}", values.len()),
        );
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    AsapStatus::Ok
}

/// Surviving patch-token indices in output order. `out_len` always receives
/// the full count, so a call with `cap = 0` sizes the buffer.
///
/// # Safety
/// `result` must be live; `buf` must hold `cap` values; `out_len` may be null.
#[no_mangle]
pub unsafe extern "C" fn asap_result_survivors(
    result: *const AsapResult,
    buf: *mut usize,
    cap: usize,
    out_len: *mut usize,
) -> AsapStatus {
    guard(|| match result.as_ref() {
        Some(r) => copy_out(&r.output.survivors, buf, cap, out_len),
        None => fail(AsapStatus::NullPointer, "null result"),
    })
}

/// Per-token fate for all N original tokens.
///
/// # Safety
/// As for [`asap_result_survivors`].
#[no_mangle]
pub unsafe extern "C" fn asap_result_mask(
    result: *const AsapResult,
    buf: *mut AsapFate,
    cap: usize,
    out_len: *mut usize,
) -> AsapStatus {
    guard(|| match result.as_ref() {
        Some(r) => {
            let mask: Vec<AsapFate> = r
                .output
                .mask
                .iter()
                .map(|f| match f {
                    TokenFate::Keep => AsapFate::Keep,
                    TokenFate::Pool => AsapFate::Pool,
                    TokenFate::Drop => AsapFate::Drop,
                })
                .collect();
            copy_out(&mask, buf, cap, out_len)
        }
        None => fail(AsapStatus::NullPointer, "null result"),
    })
}

/// Length of the reduced token list (CLS and pooled included); 0 in report-only mode.
///
/// # Safety
/// `result` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn asap_result_token_count(result: *const AsapResult) -> usize {
    result
        .as_ref()
        .and_then(|r| r.output.reduced.as_ref())
        .map_or(0, |set| set.len())
}

/// Copies the feature vector of output token `i`. The original index is
/// written to `out_index` (-1 for the pooled token).
///
/// # Safety
/// `result` must be live; `buf` must hold `cap` values; pointers may be null
/// only where documented.
#[no_mangle]
pub unsafe extern "C" fn asap_result_token(
    result: *const AsapResult,
    i: usize,
    out_index: *mut i64,
    buf: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> AsapStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(AsapStatus::NullPointer, "null result");
        };
        let Some(set) = r.output.reduced.as_ref() else {
            return fail(
                AsapStatus::NoTokenSet,
                "report-only runs produce no token set",
            );
        };
        let Some(token) = set.tokens().get(i) else {
            return from_error(Error::IndexOutOfRange {
                index: i,
                n: set.len(),
            });
        };
        if !out_index.is_null() {
            *out_index = match token.provenance {
                Provenance::Cls => 0,
                Provenance::Survivor { index } => index as i64,
                Provenance::PooledBackground { .. } => -1,
            };
        }
        copy_out(&token.feature, buf, cap, out_len)
    })
}

/// Full JSON report. Free with [`asap_string_free`]. Null on failure.
///
/// # Safety
/// `result` must be live.
#[no_mangle]
pub unsafe extern "C" fn asap_result_report_json(result: *const AsapResult) -> *mut c_char {
    clear_last_error();
    let Some(r) = result.as_ref() else {
        set_last_error("null result");
        return ptr::null_mut();
    };
    let report = RunReport::new(&r.config, &r.output, r.layers, true);
    let mut buf = Vec::new();
    if let Err(e) = report.write_json(&mut buf) {
        set_last_error(e.to_string());
        return ptr::null_mut();
    }
    match CString::new(buf) {
        Ok(s) => s.into_raw(),
        Err(_) => {
            set_last_error("report contained a nul byte");
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asap_result_free(result: *mut AsapResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from this thread.
#[no_mangle]
pub extern "C" fn asap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn asap_status_name(status: AsapStatus) -> *const c_char {
    let name: &'static CStr = match status {
        AsapStatus::Ok => c"Ok",
        AsapStatus::ConfigError => c"ConfigError",
        AsapStatus::IoFailure => c"IoFailure",
        AsapStatus::MagicMismatch => c"MagicMismatch",
        AsapStatus::VersionUnsupported => c"VersionUnsupported",
        AsapStatus::ShapeMismatch => c"ShapeMismatch",
        AsapStatus::NotRowStochastic => c"NotRowStochastic",
        AsapStatus::NegativeEntry => c"NegativeEntry",
        AsapStatus::EntryOutOfRange => c"EntryOutOfRange",
        AsapStatus::NonFinite => c"NonFinite",
        AsapStatus::MissingCls => c"MissingCls",
        AsapStatus::InvalidMeta => c"InvalidMeta",
        AsapStatus::LayerOutOfRange => c"LayerOutOfRange",
        AsapStatus::AlphaOutOfRange => c"AlphaOutOfRange",
        AsapStatus::TauOutOfRange => c"TauOutOfRange",
        AsapStatus::EmptyStack => c"EmptyStack",
        AsapStatus::HistoryNotRetained => c"HistoryNotRetained",
        AsapStatus::SinkIsCls => c"SinkIsCls",
        AsapStatus::IndexOutOfRange => c"IndexOutOfRange",
        AsapStatus::DegeneratePhi => c"DegeneratePhi",
        AsapStatus::LengthMismatch => c"LengthMismatch",
        AsapStatus::TooShort => c"TooShort",
        AsapStatus::BadClusterCounts => c"BadClusterCounts",
        AsapStatus::EmptyBackground => c"EmptyBackground",
        AsapStatus::MissingFeatures => c"MissingFeatures",
        AsapStatus::TargetExceedsInput => c"TargetExceedsInput",
        AsapStatus::InfeasibleMargin => c"InfeasibleMargin",
        AsapStatus::NullPointer => c"NullPointer",
        AsapStatus::InvalidUtf8 => c"InvalidUtf8",
        AsapStatus::BufferTooSmall => c"BufferTooSmall",
        AsapStatus::NoTokenSet => c"NoTokenSet",
        AsapStatus::Panic => c"Panic",
    };
    name.as_ptr()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_values_follow_core_codes() {
        let cases = [
            Error::Config("x".into()),
            Error::MissingCls,
            Error::EmptyBackground,
            Error::InfeasibleMargin { n: 2, margin: 1.0 },
        ];
        for e in cases {
            assert_eq!(AsapStatus::from(&e) as i32, e.code());
            let name = unsafe { CStr::from_ptr(asap_status_name(AsapStatus::from(&e))) };
            assert_eq!(name.to_str().unwrap(), e.kind());
        }
    }

    #[test]
    fn default_config_maps_to_core_default() {
        assert_eq!(
            asap_config_default().to_pipeline(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn hybrid_budget_lands_in_hybrid_config() {
        let cfg = AsapConfig {
            mode: AsapMode::Hybrid,
            budget: 4,
            removal_batch: 2,
            ..asap_config_default()
        }
        .to_pipeline();
        assert_eq!(cfg.reduce.budget, None);
        let h = cfg.hybrid.unwrap();
        assert_eq!((h.target, h.removal_batch), (4, Some(2)));
    }
}

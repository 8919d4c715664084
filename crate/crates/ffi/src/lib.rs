//! C ABI over the deterministic cores: breaker and token-bucket state
//! machines, retry backoff, the load schedule, manifest planning and energy
//! windowing.
//!
//! Every function returns a [`SnapStatus`]; on failure the message is kept
//! per thread and read with [`snap_last_error`]. Strings returned through
//! out-parameters belong to the caller and are released with
//! [`snap_string_free`]. Handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use snappattern::clock::Timestamp;
use snappattern::manifest::{parse_manifests_in, plan_injection, render_plan_stream, PatternSelection};
use snappattern::metrics::{window_energy, EnergySample};
use snappattern::proxy::breaker::{Admission, CircuitBreaker, CircuitState, Outcome};
use snappattern::proxy::ratelimit::{ratelimit_admit, RateDecision, TokenBucket};
use snappattern::proxy::retry::retry_delay;
use snappattern::proxy::{CircuitBreakerPolicy, RetryPolicy};
use snappattern::workload::{concurrency_at, ProfileName, WorkloadProfile};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    NotFound = 5,
    BufferTooSmall = 6,
    /// Retry budget spent; no further delay.
    Exhausted = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapAdmission {
    Admit = 0,
    Probe = 1,
    Reject = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapCircuitState {
    Closed = 0,
    Open = 1,
    HalfOpen = 2,
}

/// Opaque circuit breaker.
pub struct SnapBreaker {
    inner: CircuitBreaker,
}

/// Opaque token bucket.
pub struct SnapBucket {
    inner: TokenBucket,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: SnapStatus, msg: impl Into<String>) -> SnapStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> SnapStatus) -> SnapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SnapStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, SnapStatus> {
    if p.is_null() {
        return Err(fail(SnapStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SnapStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

fn state_code(s: CircuitState) -> SnapCircuitState {
    match s {
        CircuitState::Closed { .. } => SnapCircuitState::Closed,
        CircuitState::Open { .. } => SnapCircuitState::Open,
        CircuitState::HalfOpen { .. } => SnapCircuitState::HalfOpen,
    }
}

/// Message for the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn snap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn snap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snap_breaker_new(
    failure_threshold: u32,
    open_duration_ms: u64,
    half_open_max_probes: u32,
    out: *mut *mut SnapBreaker,
) -> SnapStatus {
    guard(|| {
        if out.is_null() {
            return fail(SnapStatus::NullArgument, "out is null");
        }
        if failure_threshold == 0 || half_open_max_probes == 0 {
            return fail(SnapStatus::InvalidArgument, "threshold and probes must be positive");
        }
        let policy = CircuitBreakerPolicy {
            failure_threshold,
            open_duration_ms,
            half_open_max_probes,
            ..Default::default()
        };
        *out = Box::into_raw(Box::new(SnapBreaker {
            inner: CircuitBreaker::new(policy),
        }));
        SnapStatus::Ok
    })
}

/// # Safety
/// `b` must come from [`snap_breaker_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn snap_breaker_free(b: *mut SnapBreaker) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// # Safety
/// `b` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn snap_breaker_admit(b: *const SnapBreaker, now_ms: u64, out: *mut SnapAdmission) -> SnapStatus {
    guard(|| {
        let (Some(b), false) = (b.as_ref(), out.is_null()) else {
            return fail(SnapStatus::NullArgument, "null handle or out");
        };
        *out = match b.inner.admit(Timestamp::from_millis(now_ms)) {
            Admission::Admit => SnapAdmission::Admit,
            Admission::Probe => SnapAdmission::Probe,
            Admission::Reject => SnapAdmission::Reject,
        };
        SnapStatus::Ok
    })
}

/// Records a final request outcome and writes the resulting state.
///
/// # Safety
/// `b` must be a live handle; `out_state` may be null.
#[no_mangle]
pub unsafe extern "C" fn snap_breaker_record(
    b: *const SnapBreaker,
    success: bool,
    now_ms: u64,
    out_state: *mut SnapCircuitState,
) -> SnapStatus {
    guard(|| {
        let Some(b) = b.as_ref() else {
            return fail(SnapStatus::NullArgument, "null handle");
        };
        let outcome = if success { Outcome::Success } else { Outcome::Failure };
        let s = b.inner.record(outcome, Timestamp::from_millis(now_ms));
        if !out_state.is_null() {
            *out_state = state_code(s);
        }
        SnapStatus::Ok
    })
}

/// # Safety
/// `b` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn snap_breaker_state(b: *const SnapBreaker, out: *mut SnapCircuitState) -> SnapStatus {
    guard(|| {
        let (Some(b), false) = (b.as_ref(), out.is_null()) else {
            return fail(SnapStatus::NullArgument, "null handle or out");
        };
        *out = state_code(b.inner.state());
        SnapStatus::Ok
    })
}

/// A full bucket whose clock starts at `now_ms`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snap_bucket_new(
    capacity: u32,
    refill_per_second: f64,
    now_ms: u64,
    out: *mut *mut SnapBucket,
) -> SnapStatus {
    guard(|| {
        if out.is_null() {
            return fail(SnapStatus::NullArgument, "out is null");
        }
        if capacity == 0 || !(refill_per_second > 0.0) || !refill_per_second.is_finite() {
            return fail(SnapStatus::InvalidArgument, "capacity and refill rate must be positive");
        }
        *out = Box::into_raw(Box::new(SnapBucket {
            inner: TokenBucket::new(capacity, refill_per_second, Timestamp::from_millis(now_ms)),
        }));
        SnapStatus::Ok
    })
}

/// # Safety
/// `b` must come from [`snap_bucket_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn snap_bucket_free(b: *mut SnapBucket) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Takes one token if available. On rejection `retry_after_s` holds the
/// whole seconds until a token is back; on admission it is 0.
///
/// # Safety
/// `b` must be a live handle not used concurrently; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn snap_bucket_admit(
    b: *mut SnapBucket,
    now_ms: u64,
    admitted: *mut bool,
    retry_after_s: *mut u64,
) -> SnapStatus {
    guard(|| {
        let (Some(b), false, false) = (b.as_mut(), admitted.is_null(), retry_after_s.is_null()) else {
            return fail(SnapStatus::NullArgument, "null handle or output");
        };
        match ratelimit_admit(&mut b.inner, Timestamp::from_millis(now_ms)) {
            RateDecision::Admitted => {
                *admitted = true;
                *retry_after_s = 0;
            }
            RateDecision::Rejected { retry_after_s: s } => {
                *admitted = false;
                *retry_after_s = s;
            }
        }
        SnapStatus::Ok
    })
}

/// Backoff before retry number `attempt_index + 1`; `Exhausted` once
/// `attempt_index >= max_retries`.
///
/// # Safety
/// `out_ms` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snap_retry_delay_ms(
    max_retries: u32,
    backoff_base_ms: u64,
    backoff_multiplier: f64,
    attempt_index: u32,
    out_ms: *mut f64,
) -> SnapStatus {
    guard(|| {
        if out_ms.is_null() {
            return fail(SnapStatus::NullArgument, "out_ms is null");
        }
        if !(backoff_multiplier >= 1.0) {
            return fail(SnapStatus::InvalidArgument, "multiplier must be at least 1");
        }
        let policy = RetryPolicy {
            max_retries,
            backoff_base_ms,
            backoff_multiplier,
            ..Default::default()
        };
        match retry_delay(&policy, attempt_index) {
            Some(d) => {
                *out_ms = d.as_secs_f64() * 1000.0;
                SnapStatus::Ok
            }
            None => fail(SnapStatus::Exhausted, "retry budget spent"),
        }
    })
}

/// Active users at `t_s` seconds into a step-ramp run.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn snap_concurrency_at(
    step_users: u32,
    step_interval_s: u64,
    duration_s: u64,
    t_s: f64,
    out: *mut u32,
) -> SnapStatus {
    guard(|| {
        if out.is_null() {
            return fail(SnapStatus::NullArgument, "out is null");
        }
        if step_interval_s == 0 {
            return fail(SnapStatus::InvalidArgument, "step interval must be positive");
        }
        let profile = WorkloadProfile {
            name: ProfileName::Custom,
            step_users,
            step_interval_s,
            duration_s,
            targets: Vec::new(),
            request: Default::default(),
        };
        *out = concurrency_at(&profile, t_s);
        SnapStatus::Ok
    })
}

/// Renders the documents an injection applies. `selection_json` is a
/// pattern selection object, e.g. `{"pattern":"circuit_breaker",
/// "target_service":"filter-service"}`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable. The
/// string written to `out` is released with [`snap_string_free`].
#[no_mangle]
pub unsafe extern "C" fn snap_plan_injection(
    manifests_yaml: *const c_char,
    selection_json: *const c_char,
    out: *mut *mut c_char,
) -> SnapStatus {
    guard(|| {
        if out.is_null() {
            return fail(SnapStatus::NullArgument, "out is null");
        }
        let yaml = match str_arg(manifests_yaml, "manifests_yaml") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let sel = match str_arg(selection_json, "selection_json") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let selection: PatternSelection = match serde_json::from_str(sel) {
            Ok(s) => s,
            Err(e) => return fail(SnapStatus::Parse, format!("selection: {e}")),
        };
        let set = match parse_manifests_in(yaml, &selection.target_namespace) {
            Ok(s) => s,
            Err(e) => return fail(SnapStatus::Parse, e.to_string()),
        };
        let plan = match plan_injection(&set, &selection) {
            Ok(p) => p,
            Err(e @ snappattern::manifest::ManifestError::NotFound(_)) => {
                return fail(SnapStatus::NotFound, e.to_string())
            }
            Err(e) => return fail(SnapStatus::InvalidArgument, e.to_string()),
        };
        match CString::new(render_plan_stream(&plan)) {
            Ok(s) => {
                *out = s.into_raw();
                SnapStatus::Ok
            }
            Err(_) => fail(SnapStatus::InvalidArgument, "rendered text contains NUL"),
        }
    })
}

/// Per-window energy for one container's cumulative counter samples.
/// Writes up to `capacity` values and the required count to `out_count`;
/// returns `BufferTooSmall` when `capacity` is short.
///
/// # Safety
/// `timestamps_s` and `joules_total` must each hold `n` values; `out`
/// must hold `capacity` values (may be null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn snap_window_energy(
    timestamps_s: *const f64,
    joules_total: *const f64,
    n: usize,
    window_seconds: u64,
    out: *mut f64,
    capacity: usize,
    out_count: *mut usize,
) -> SnapStatus {
    guard(|| {
        if out_count.is_null() || (n > 0 && (timestamps_s.is_null() || joules_total.is_null())) {
            return fail(SnapStatus::NullArgument, "null input or out_count");
        }
        if window_seconds == 0 {
            return fail(SnapStatus::InvalidArgument, "window must be positive");
        }
        let (ts, js) = if n == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(timestamps_s, n), std::slice::from_raw_parts(joules_total, n))
        };
        if ts.windows(2).any(|w| !(w[0] < w[1])) {
            return fail(SnapStatus::InvalidArgument, "timestamps must be strictly increasing");
        }
        let samples: Vec<EnergySample> = ts
            .iter()
            .zip(js)
            .map(|(&t, &j)| EnergySample {
                timestamp_s: t,
                namespace: String::new(),
                pod: String::new(),
                container: String::new(),
                joules_total: j,
            })
            .collect();
        let windows = window_energy(&samples, window_seconds);
        *out_count = windows.len();
        if windows.len() > capacity {
            return fail(SnapStatus::BufferTooSmall, format!("need {} slots", windows.len()));
        }
        if !windows.is_empty() && out.is_null() {
            return fail(SnapStatus::NullArgument, "out is null");
        }
        for (i, w) in windows.iter().enumerate() {
            *out.add(i) = w.joules;
        }
        SnapStatus::Ok
    })
}

//! Circuit breaker state machine.
//!
//! The breaker sees one outcome per client request, after retries have been
//! exhausted or a success occurred. Transitions are pure functions; the
//! [`CircuitBreaker`] wrapper applies them atomically to shared state.

use parking_lot::Mutex;

use super::policy::CircuitBreakerPolicy;
use crate::clock::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CircuitState {
    Closed { consecutive_failures: u32 },
    Open { opened_at: Timestamp },
    HalfOpen { probes_in_flight: u32 },
}

impl CircuitState {
    pub const CLOSED: CircuitState = CircuitState::Closed {
        consecutive_failures: 0,
    };

    pub fn name(&self) -> &'static str {
        match self {
            CircuitState::Closed { .. } => "closed",
            CircuitState::Open { .. } => "open",
            CircuitState::HalfOpen { .. } => "half_open",
        }
    }
}

impl Default for CircuitState {
    fn default() -> Self {
        CircuitState::CLOSED
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Admit,
    Probe,
    Reject,
}

impl Admission {
    pub fn is_admitted(self) -> bool {
        !matches!(self, Admission::Reject)
    }
}

pub fn cb_transition(
    state: CircuitState,
    outcome: Outcome,
    now: Timestamp,
    policy: &CircuitBreakerPolicy,
) -> CircuitState {
    match (state, outcome) {
        (CircuitState::Closed { .. }, Outcome::Success) => CircuitState::CLOSED,
        (CircuitState::Closed { consecutive_failures }, Outcome::Failure) => {
            let failures = consecutive_failures + 1;
            if failures >= policy.failure_threshold {
                CircuitState::Open { opened_at: now }
            } else {
                CircuitState::Closed {
                    consecutive_failures: failures,
                }
            }
        }
        (open @ CircuitState::Open { .. }, _) => open,
        (CircuitState::HalfOpen { .. }, Outcome::Success) => CircuitState::CLOSED,
        (CircuitState::HalfOpen { .. }, Outcome::Failure) => CircuitState::Open { opened_at: now },
    }
}

/// Decides whether a request may reach the upstream and returns the state
/// after the decision (admitting a probe counts it as in flight).
pub fn cb_admit(
    state: CircuitState,
    now: Timestamp,
    policy: &CircuitBreakerPolicy,
) -> (Admission, CircuitState) {
    match state {
        CircuitState::Closed { .. } => (Admission::Admit, state),
        CircuitState::Open { opened_at } => {
            if now < opened_at + policy.open_duration() {
                (Admission::Reject, state)
            } else {
                (Admission::Probe, CircuitState::HalfOpen { probes_in_flight: 1 })
            }
        }
        CircuitState::HalfOpen { probes_in_flight } => {
            if probes_in_flight < policy.half_open_max_probes {
                (
                    Admission::Probe,
                    CircuitState::HalfOpen {
                        probes_in_flight: probes_in_flight + 1,
                    },
                )
            } else {
                (Admission::Reject, state)
            }
        }
    }
}

/// Shared breaker state; the lock is never held across an upstream call.
#[derive(Debug)]
pub struct CircuitBreaker {
    policy: CircuitBreakerPolicy,
    state: Mutex<CircuitState>,
}

impl CircuitBreaker {
    pub fn new(policy: CircuitBreakerPolicy) -> Self {
        CircuitBreaker {
            policy,
            state: Mutex::new(CircuitState::CLOSED),
        }
    }

    pub fn policy(&self) -> &CircuitBreakerPolicy {
        &self.policy
    }

    pub fn state(&self) -> CircuitState {
        *self.state.lock()
    }

    pub fn admit(&self, now: Timestamp) -> Admission {
        let mut state = self.state.lock();
        let (decision, next) = cb_admit(*state, now, &self.policy);
        *state = next;
        decision
    }

    pub fn record(&self, outcome: Outcome, now: Timestamp) -> CircuitState {
        let mut state = self.state.lock();
        *state = cb_transition(*state, outcome, now, &self.policy);
        *state
    }
}

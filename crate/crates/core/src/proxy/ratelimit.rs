//! Token-bucket rate limiting keyed by client.

use std::collections::HashMap;
use std::time::Duration;

use parking_lot::Mutex;

use super::policy::GatewayOffloadPolicy;
use crate::clock::Timestamp;

#[derive(Clone, Debug, PartialEq)]
pub struct TokenBucket {
    pub capacity: u32,
    pub tokens: f64,
    pub refill_rate_per_s: f64,
    pub last_refill: Timestamp,
}

impl TokenBucket {
    /// A full bucket.
    pub fn new(capacity: u32, refill_rate_per_s: f64, now: Timestamp) -> Self {
        TokenBucket {
            capacity,
            tokens: capacity as f64,
            refill_rate_per_s,
            last_refill: now,
        }
    }

    pub fn refill(&mut self, now: Timestamp) {
        let elapsed = now.since(self.last_refill).as_secs_f64();
        self.tokens = (self.tokens + self.refill_rate_per_s * elapsed).min(self.capacity as f64);
        if now > self.last_refill {
            self.last_refill = now;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateDecision {
    Admitted,
    /// Rejected; the client may retry after this many whole seconds.
    Rejected { retry_after_s: u64 },
}

impl RateDecision {
    pub fn is_admitted(self) -> bool {
        matches!(self, RateDecision::Admitted)
    }
}

/// Refills, then takes one token if available.
pub fn ratelimit_admit(bucket: &mut TokenBucket, now: Timestamp) -> RateDecision {
    bucket.refill(now);
    if bucket.tokens >= 1.0 {
        bucket.tokens -= 1.0;
        RateDecision::Admitted
    } else {
        let wait = (1.0 - bucket.tokens) / bucket.refill_rate_per_s;
        RateDecision::Rejected {
            retry_after_s: wait.ceil().max(1.0) as u64,
        }
    }
}

/// One bucket per client key, created full on first sight.
#[derive(Debug)]
pub struct KeyedLimiter {
    burst: u32,
    rate: f64,
    buckets: Mutex<HashMap<String, TokenBucket>>,
}

impl KeyedLimiter {
    pub fn new(policy: &GatewayOffloadPolicy) -> Self {
        KeyedLimiter {
            burst: policy.burst,
            rate: policy.rate_per_second,
            buckets: Mutex::new(HashMap::new()),
        }
    }

    pub fn admit(&self, client: &str, now: Timestamp) -> RateDecision {
        let mut buckets = self.buckets.lock();
        let bucket = buckets
            .entry(client.to_string())
            .or_insert_with(|| TokenBucket::new(self.burst, self.rate, now));
        ratelimit_admit(bucket, now)
    }

    pub fn tokens(&self, client: &str) -> Option<f64> {
        self.buckets.lock().get(client).map(|b| b.tokens)
    }

    /// Drops buckets that have been idle long enough to be full again.
    pub fn prune(&self, now: Timestamp) {
        let full_after = Duration::from_secs_f64(self.burst as f64 / self.rate);
        self.buckets
            .lock()
            .retain(|_, b| now.since(b.last_refill) < full_after);
    }
}

use std::time::Duration;

use super::policy::RetryPolicy;
use super::upstream::{Upstream, UpstreamError};
use super::{ProxyRequest, ProxyResponse};
use crate::clock::Clock;

/// Backoff before the next attempt, given how many attempts already failed
/// (0-based). `None` once the retry budget is spent.
pub fn retry_delay(policy: &RetryPolicy, attempt_index: u32) -> Option<Duration> {
    if attempt_index >= policy.max_retries {
        return None;
    }
    let ms = policy.backoff_base_ms as f64 * policy.backoff_multiplier.powi(attempt_index as i32);
    Some(Duration::try_from_secs_f64(ms / 1000.0).unwrap_or(Duration::MAX))
}

#[derive(Debug, Clone)]
pub struct RetryResult {
    /// Last response or transport error seen.
    pub outcome: Result<ProxyResponse, UpstreamError>,
    pub attempts: u32,
}

impl RetryResult {
    pub fn into_response(self) -> ProxyResponse {
        match self.outcome {
            Ok(resp) => resp,
            Err(err) => ProxyResponse::bad_gateway(&err.to_string()),
        }
    }
}

/// Sends `request` and retries on retryable statuses (and transport errors
/// when enabled) until a non-retryable result or the budget runs out.
pub async fn execute_with_retry(
    request: &ProxyRequest,
    policy: &RetryPolicy,
    upstream: &dyn Upstream,
    clock: &dyn Clock,
) -> RetryResult {
    let mut attempts = 0u32;
    loop {
        attempts += 1;
        let outcome = upstream.send(request.clone()).await;
        let retryable = match &outcome {
            Ok(resp) => policy.retryable_statuses.contains(&resp.status.as_u16()),
            Err(_) => policy.retry_on_transport_error,
        };
        if !retryable {
            return RetryResult { outcome, attempts };
        }
        match retry_delay(policy, attempts - 1) {
            Some(delay) => {
                tracing::debug!(attempt = attempts, ?delay, "retrying upstream request");
                clock.sleep(delay).await;
            }
            None => return RetryResult { outcome, attempts },
        }
    }
}

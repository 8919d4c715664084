//! Cache-aside for idempotent requests.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use bytes::Bytes;
use http::{HeaderMap, HeaderValue, Method, StatusCode};
use parking_lot::Mutex;

use super::collapse::InflightTable;
use super::policy::CacheAsidePolicy;
use super::upstream::Upstream;
use super::{ProxyRequest, ProxyResponse, X_CACHE};
use crate::clock::{Clock, Timestamp};

/// Builds the cache key
/// `METHOD|host|path|sorted query|vary values`, or `None` when the method
/// is not cacheable.
pub fn cache_key(
    request: &ProxyRequest,
    host: &str,
    cacheable_methods: impl IntoIterator<Item = impl AsRef<str>>,
    vary_headers: &[String],
) -> Option<String> {
    let method = request.method.as_str();
    if !cacheable_methods
        .into_iter()
        .any(|m| m.as_ref().eq_ignore_ascii_case(method))
    {
        return None;
    }
    Some(request_key(request, host, vary_headers))
}

/// Key over method, host, path, normalized query and vary header values.
pub fn request_key(request: &ProxyRequest, host: &str, vary_headers: &[String]) -> String {
    let mut pairs: Vec<(String, String)> = request
        .query()
        .map(|q| {
            url::form_urlencoded::parse(q.as_bytes())
                .map(|(k, v)| (k.into_owned(), v.into_owned()))
                .collect()
        })
        .unwrap_or_default();
    pairs.sort();
    let query = url::form_urlencoded::Serializer::new(String::new())
        .extend_pairs(pairs)
        .finish();
    let vary: Vec<&str> = vary_headers
        .iter()
        .map(|h| {
            request
                .headers
                .get(h.as_str())
                .and_then(|v| v.to_str().ok())
                .unwrap_or("")
        })
        .collect();
    format!(
        "{}|{}|{}|{}|{}",
        request.method,
        host,
        request.path(),
        query,
        vary.join("|")
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub key: String,
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
    pub stored_at: Timestamp,
    pub ttl: Duration,
}

impl CacheEntry {
    pub fn is_fresh(&self, now: Timestamp) -> bool {
        now.since(self.stored_at) < self.ttl
    }
}

#[derive(Debug, Default)]
struct LruInner {
    entries: HashMap<String, (CacheEntry, u64)>,
    order: BTreeMap<u64, String>,
    tick: u64,
}

/// Bounded store with least-recently-used eviction.
#[derive(Debug)]
pub struct CacheStore {
    capacity: usize,
    inner: Mutex<LruInner>,
}

impl CacheStore {
    pub fn new(capacity: usize) -> Self {
        CacheStore {
            capacity: capacity.max(1),
            inner: Mutex::new(LruInner::default()),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &str) -> bool {
        self.inner.lock().entries.contains_key(key)
    }

    /// Returns a fresh entry and marks it recently used; expired entries are
    /// dropped on the way.
    pub fn get_fresh(&self, key: &str, now: Timestamp) -> Option<CacheEntry> {
        let mut inner = self.inner.lock();
        let inner = &mut *inner;
        let (entry, tick) = inner.entries.get_mut(key)?;
        if !entry.is_fresh(now) {
            let old = *tick;
            inner.order.remove(&old);
            inner.entries.remove(key);
            return None;
        }
        inner.tick += 1;
        inner.order.remove(tick);
        *tick = inner.tick;
        inner.order.insert(inner.tick, key.to_string());
        Some(entry.clone())
    }

    /// Inserts or replaces; returns the keys evicted to stay within capacity.
    pub fn insert(&self, entry: CacheEntry) -> Vec<String> {
        let mut inner = self.inner.lock();
        inner.tick += 1;
        let tick = inner.tick;
        let key = entry.key.clone();
        if let Some((_, old)) = inner.entries.insert(key.clone(), (entry, tick)) {
            inner.order.remove(&old);
        }
        inner.order.insert(tick, key);
        let mut evicted = Vec::new();
        while inner.entries.len() > self.capacity {
            let Some((_, oldest)) = inner.order.pop_first() else {
                break;
            };
            inner.entries.remove(&oldest);
            evicted.push(oldest);
        }
        evicted
    }

    /// Keys from least to most recently used.
    pub fn keys_by_recency(&self) -> Vec<String> {
        self.inner.lock().order.values().cloned().collect()
    }
}

/// Cache-aside pattern state: the store plus a single-flight table so
/// concurrent misses on one key produce a single upstream fetch.
#[derive(Debug)]
pub struct CacheAside {
    policy: CacheAsidePolicy,
    store: CacheStore,
    fills: InflightTable,
}

impl CacheAside {
    pub fn new(policy: CacheAsidePolicy) -> Self {
        let store = CacheStore::new(policy.max_entries);
        CacheAside {
            policy,
            store,
            fills: InflightTable::new(),
        }
    }

    pub fn store(&self) -> &CacheStore {
        &self.store
    }

    pub fn policy(&self) -> &CacheAsidePolicy {
        &self.policy
    }

    pub async fn handle(
        &self,
        request: ProxyRequest,
        upstream: &dyn Upstream,
        clock: &dyn Clock,
    ) -> ProxyResponse {
        let Some(key) = cache_key(
            &request,
            upstream.host(),
            &self.policy.cacheable_methods,
            &self.policy.vary_headers,
        ) else {
            return match upstream.send(request).await {
                Ok(resp) => resp,
                Err(err) => ProxyResponse::bad_gateway(&err.to_string()),
            };
        };
        cache_get_or_fetch(key, request, &self.policy, &self.store, &self.fills, upstream, clock)
            .await
    }
}

/// Serves a fresh entry (`x-cache: HIT`) or fetches once and stores
/// 200 responses within the size bound (`x-cache: MISS`).
pub async fn cache_get_or_fetch(
    key: String,
    request: ProxyRequest,
    policy: &CacheAsidePolicy,
    store: &CacheStore,
    fills: &InflightTable,
    upstream: &dyn Upstream,
    clock: &dyn Clock,
) -> ProxyResponse {
    if let Some(entry) = store.get_fresh(&key, clock.now()) {
        return hit_response(entry);
    }
    let participation = fills
        .run(&key, usize::MAX, policy.ttl(), || async {
            // Another fill may have completed between the lookup and the
            // registration above.
            if let Some(entry) = store.get_fresh(&key, clock.now()) {
                return Ok(hit_response(entry));
            }
            let result = upstream.send(request.clone()).await;
            if let Ok(resp) = &result {
                if resp.status == StatusCode::OK && resp.body.len() <= policy.max_cacheable_body_bytes {
                    store.insert(CacheEntry {
                        key: key.clone(),
                        status: resp.status,
                        headers: allowlisted(&resp.headers, &policy.vary_headers),
                        body: resp.body.clone(),
                        stored_at: clock.now(),
                        ttl: policy.ttl(),
                    });
                }
            }
            result.map(|mut resp| {
                resp.headers.insert(X_CACHE, HeaderValue::from_static("MISS"));
                resp
            })
        })
        .await;
    match participation.into_result() {
        Ok(resp) => resp,
        Err(err) => ProxyResponse::bad_gateway(&err.to_string()),
    }
}

fn hit_response(entry: CacheEntry) -> ProxyResponse {
    let mut headers = entry.headers;
    headers.insert(X_CACHE, HeaderValue::from_static("HIT"));
    ProxyResponse {
        status: entry.status,
        headers,
        body: entry.body,
    }
}

fn allowlisted(headers: &HeaderMap, vary: &[String]) -> HeaderMap {
    let mut out = HeaderMap::new();
    for (name, value) in headers {
        if name == http::header::CONTENT_TYPE || vary.iter().any(|v| name.as_str().eq_ignore_ascii_case(v)) {
            out.append(name.clone(), value.clone());
        }
    }
    out
}

pub fn is_cacheable_method(method: &Method, policy: &CacheAsidePolicy) -> bool {
    policy
        .cacheable_methods
        .iter()
        .any(|m| m.eq_ignore_ascii_case(method.as_str()))
}

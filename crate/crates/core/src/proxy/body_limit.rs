//! Request body size enforcement.

use bytes::{Bytes, BytesMut};
use futures::{Stream, StreamExt};
use http::HeaderMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BodyError {
    #[error("request body exceeds {limit} bytes")]
    TooLarge { limit: u64, read: u64 },
    #[error("error reading request body: {0}")]
    Read(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyCheck {
    Pass,
    Reject,
}

/// Checks a declared `content-length` against the limit. Bodies without a
/// declared length pass here and are counted while streaming.
pub fn enforce_body_limit(headers: &HeaderMap, max_body_bytes: u64) -> BodyCheck {
    let declared = headers
        .get(http::header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    match declared {
        Some(len) if len > max_body_bytes => BodyCheck::Reject,
        _ => BodyCheck::Pass,
    }
}

/// Buffers a body stream, stopping as soon as more than `limit` bytes have
/// been read.
pub async fn collect_limited<S, E>(mut stream: S, limit: u64) -> Result<Bytes, BodyError>
where
    S: Stream<Item = Result<Bytes, E>> + Unpin,
    E: std::fmt::Display,
{
    let mut buf = BytesMut::new();
    let mut read: u64 = 0;
    while let Some(chunk) = stream.next().await {
        let chunk = chunk.map_err(|e| BodyError::Read(e.to_string()))?;
        read += chunk.len() as u64;
        if read > limit {
            return Err(BodyError::TooLarge { limit, read });
        }
        buf.extend_from_slice(&chunk);
    }
    Ok(buf.freeze())
}

#[cfg(test)]
mod tests {
    use super::*;
    use http::HeaderValue;

    fn with_length(n: u64) -> HeaderMap {
        let mut h = HeaderMap::new();
        h.insert(http::header::CONTENT_LENGTH, HeaderValue::from(n));
        h
    }

    #[test]
    fn declared_length_boundary_is_inclusive() {
        assert_eq!(enforce_body_limit(&with_length(1025), 1024), BodyCheck::Reject);
        assert_eq!(enforce_body_limit(&with_length(1024), 1024), BodyCheck::Pass);
        assert_eq!(enforce_body_limit(&HeaderMap::new(), 1024), BodyCheck::Pass);
    }

    #[tokio::test]
    async fn streaming_count_aborts_early() {
        let chunks = (0..2048).map(|_| Ok::<_, std::convert::Infallible>(Bytes::from_static(b"x")));
        let err = collect_limited(futures::stream::iter(chunks), 1024).await.unwrap_err();
        assert_eq!(err, BodyError::TooLarge { limit: 1024, read: 1025 });
    }

    #[tokio::test]
    async fn exact_limit_is_collected() {
        let chunks = vec![Ok::<_, std::convert::Infallible>(Bytes::from(vec![7u8; 1024]))];
        let body = collect_limited(futures::stream::iter(chunks), 1024).await.unwrap();
        assert_eq!(body.len(), 1024);
    }
}

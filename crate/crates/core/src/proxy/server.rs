//! HTTP front end of the pattern proxy.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{ConnectInfo, Request, State};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;

use super::body_limit::{collect_limited, enforce_body_limit, BodyCheck, BodyError};
use super::engine::{payload_too_large, ClientInfo, PatternEngine};
use super::{ProxyRequest, ProxyResponse};

pub fn router(engine: Arc<PatternEngine>) -> Router {
    Router::new().fallback(proxy_handler).with_state(engine)
}

async fn proxy_handler(
    State(engine): State<Arc<PatternEngine>>,
    request: Request,
) -> Response {
    let client = ClientInfo {
        addr: request
            .extensions()
            .get::<ConnectInfo<SocketAddr>>()
            .map(|c| c.0),
    };
    let limit = engine.max_body_bytes();
    let (parts, body) = request.into_parts();
    if enforce_body_limit(&parts.headers, limit) == BodyCheck::Reject {
        return into_response(payload_too_large(limit));
    }
    let body = match collect_limited(body.into_data_stream(), limit).await {
        Ok(body) => body,
        Err(BodyError::TooLarge { .. }) => return into_response(payload_too_large(limit)),
        Err(BodyError::Read(err)) => {
            return into_response(ProxyResponse::json(
                http::StatusCode::BAD_REQUEST,
                &serde_json::json!({ "error": "body_read", "message": err }),
            ))
        }
    };
    let request = ProxyRequest {
        method: parts.method,
        path_and_query: parts
            .uri
            .path_and_query()
            .map(|pq| pq.as_str().to_string())
            .unwrap_or_else(|| "/".to_string()),
        headers: parts.headers,
        body,
    };
    into_response(engine.handle(request, client).await)
}

fn into_response(resp: ProxyResponse) -> Response {
    let mut out = (resp.status, Body::from(resp.body)).into_response();
    out.headers_mut().extend(resp.headers);
    out
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    engine: Arc<PatternEngine>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(
        listener,
        router(engine).into_make_service_with_connect_info::<SocketAddr>(),
    )
    .with_graceful_shutdown(shutdown)
    .await
}


/// Binds `config.listen_address` and serves in the background.
pub async fn spawn(
    config: &super::ProxyRuntimeConfig,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(config.listen_address).await?;
    let addr = listener.local_addr()?;
    let engine = Arc::new(PatternEngine::from_config(config));
    let task = tokio::spawn(serve(listener, engine, std::future::pending()));
    Ok((addr, task))
}

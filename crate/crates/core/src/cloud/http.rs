//! HTTP/1.1 surface of the feed service.
//!
//! | method | path                         | auth          |
//! |--------|------------------------------|---------------|
//! | POST   | `/events`                    | `X-Sense-Key` |
//! | POST   | `/feeds`                     | `X-Sense-Key` |
//! | GET    | `/feeds`                     |               |
//! | GET    | `/feeds/{id}/events`         |               |
//! | GET    | `/feeds/{id}/latest`         |               |
//! | GET    | `/feeds/{id}/aggregate`      |               |
//! | POST   | `/rules`                     | `X-Sense-Key` |
//! | GET    | `/rules`                     |               |
//! | GET    | `/notifications`             |               |

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;

use super::{AggregateFn, CloudError, FeedService, Millis, RuleSpec, SeriesFormat, TimeRange};

pub const KEY_HEADER: &str = "X-Sense-Key";

pub type Clock = Arc<dyn Fn() -> Millis + Send + Sync>;

#[derive(Clone)]
struct AppState {
    service: Arc<FeedService>,
    clock: Clock,
}

impl IntoResponse for CloudError {
    fn into_response(self) -> Response {
        let status = match self {
            CloudError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            CloudError::NotFound(_) => StatusCode::NOT_FOUND,
            CloudError::BadRequest(_) => StatusCode::BAD_REQUEST,
            CloudError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        (status, Json(json!({"error": self.code(), "detail": self.detail()}))).into_response()
    }
}

pub fn router(service: Arc<FeedService>, clock: Clock) -> Router {
    Router::new()
        .route("/events", post(post_event))
        .route("/feeds", post(create_feed).get(list_feeds))
        .route("/feeds/{id}/events", get(feed_events))
        .route("/feeds/{id}/latest", get(feed_latest))
        .route("/feeds/{id}/aggregate", get(feed_aggregate))
        .route("/rules", post(create_rule).get(list_rules))
        .route("/notifications", get(list_notifications))
        .with_state(AppState { service, clock })
}

fn api_key(headers: &HeaderMap) -> &str {
    headers.get(KEY_HEADER).and_then(|v| v.to_str().ok()).unwrap_or("")
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, CloudError> {
    serde_json::from_slice(body).map_err(|e| CloudError::BadRequest(format!("invalid JSON body: {e}")))
}

#[derive(Deserialize)]
struct EventBody {
    feed_id: String,
    value: serde_json::Value,
}

async fn post_event(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, CloudError> {
    let key = api_key(&headers);
    let body: EventBody = parse_body(&body)?;
    let value = match body.value {
        serde_json::Value::String(s) => s,
        serde_json::Value::Number(n) => n.to_string(),
        other => return Err(CloudError::BadRequest(format!("value must be a decimal, got {other}"))),
    };
    let posted = st.service.post_event(key, &body.feed_id, &value, (st.clock)())?;
    Ok(Json(posted.entry).into_response())
}

#[derive(Deserialize)]
struct FeedBody {
    feed_id: String,
}

async fn create_feed(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, CloudError> {
    let body: FeedBody = parse_body(&body)?;
    st.service.create_feed(api_key(&headers), &body.feed_id)?;
    Ok((StatusCode::CREATED, Json(json!({"feed_id": body.feed_id}))).into_response())
}

async fn list_feeds(State(st): State<AppState>) -> Response {
    Json(st.service.feed_ids()).into_response()
}

fn query_time(q: &HashMap<String, String>, name: &str) -> Result<Option<Millis>, CloudError> {
    match q.get(name).map(String::as_str) {
        None | Some("") => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| CloudError::BadRequest(format!("{name}={v:?} is not a timestamp in seconds"))),
    }
}

async fn feed_events(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, CloudError> {
    let range = TimeRange::new(query_time(&q, "from")?, query_time(&q, "to")?)?;
    let format: SeriesFormat = q.get("format").map(String::as_str).unwrap_or("json").parse()?;
    let body = st.service.get_feed(&id, range, format)?;
    let content_type = match format {
        SeriesFormat::Json => "application/json",
        SeriesFormat::Csv => "text/csv; charset=utf-8",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

async fn feed_latest(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, CloudError> {
    match st.service.latest(&id)? {
        Some(entry) => Ok(Json(entry).into_response()),
        None => Err(CloudError::NotFound(format!("feed {id:?} has no entries"))),
    }
}

async fn feed_aggregate(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, CloudError> {
    let window: f64 = q
        .get("window")
        .ok_or_else(|| CloudError::BadRequest("window is required".into()))?
        .parse()
        .map_err(|_| CloudError::BadRequest("window must be a number of seconds".into()))?;
    let func: AggregateFn = q
        .get("fn")
        .ok_or_else(|| CloudError::BadRequest("fn is required".into()))?
        .parse()?;
    Ok(Json(st.service.aggregate(&id, window, func)?).into_response())
}

async fn create_rule(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, CloudError> {
    let spec: RuleSpec = parse_body(&body)?;
    let rule = st.service.add_rule(api_key(&headers), spec)?;
    Ok((StatusCode::CREATED, Json(rule)).into_response())
}

async fn list_rules(State(st): State<AppState>) -> Response {
    Json(st.service.rules()).into_response()
}

async fn list_notifications(State(st): State<AppState>) -> Response {
    Json(st.service.notifications()).into_response()
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<FeedService>,
    clock: Clock,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service, clock))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Binds `addr`, calls `ready` with the bound address, and serves on the
/// current thread until Ctrl-C.
pub fn serve_until_interrupt(
    service: Arc<FeedService>,
    clock: Clock,
    addr: SocketAddr,
    ready: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        ready(listener.local_addr()?);
        serve(listener, service, clock, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}

pub fn wall_clock() -> Clock {
    Arc::new(Millis::now_wall)
}

/// A server running on its own thread and runtime. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn start(service: Arc<FeedService>, clock: Clock, addr: SocketAddr) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("feed-service".into()).spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                serve(listener, service, clock, async {
                    let _ = stopped.await;
                })
                .await
            })
        })?;
        Ok(Self {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops the server and waits for its thread.
    pub fn stop(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.thread
            .take()
            .map(|t| {
                t.join()
                    .unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked")))
            })
            .unwrap_or(Ok(()))
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

//! HTTP/1.1 JSON API.
//!
//! | method | path | body / query |
//! |---|---|---|
//! | POST | `/events` | NDJSON records |
//! | GET | `/views` | |
//! | POST | `/views` | view descriptor |
//! | POST | `/query` | query request |
//! | GET | `/export/{view}` | `format`, `layer`, `radius`, `population`, `baseline` |
//! | GET | `/occupancy/{venue}` | `bin`, `confidence`, `seed`, `resamples`, `day_start`, `format` |
//! | GET | `/health` | |
//!
//! Engine calls run on the blocking pool so request handling never stalls
//! the async workers.

use std::collections::HashMap;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::mpsc;

use super::{prepare_export, write_export, ApiError, ExportFormat, ExportRequest, Layer};
use crate::batch::ViewDescriptor;
use crate::engine::{Engine, OccupancyQuery};
use crate::formats;
use crate::ingestion::{validate, RawRecord};
use crate::serving::QueryRequest;

const STREAM_CHUNK: usize = 64 * 1024;
const MAX_REPORTED_ERRORS: usize = 20;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type AppState = Arc<Engine>;

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/events", post(post_events))
        .route("/views", get(list_views).post(register_view))
        .route("/query", post(run_query))
        .route("/export/{view}", get(export_view))
        .route("/occupancy/{venue}", get(occupancy))
        .with_state(engine)
}

/// Serve `engine` on `listener` until `shutdown` resolves.
pub async fn serve(
    engine: Arc<Engine>,
    listener: TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    axum::serve(listener, router(engine)).with_graceful_shutdown(shutdown).await
}

async fn blocking<T: Send + 'static>(
    engine: &AppState,
    f: impl FnOnce(&Engine) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let engine = Arc::clone(engine);
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::new(500, "internal", e.to_string()))?
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, ApiError> {
    serde_json::from_str(body).map_err(|e| ApiError::new(400, "invalid_json", e.to_string()))
}

fn param<T: FromStr>(q: &HashMap<String, String>, key: &str, default: T) -> Result<T, ApiError>
where
    T::Err: std::fmt::Display,
{
    match q.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|e| ApiError::bad_param(key, format!("{v:?}: {e}"))),
    }
}

async fn health(State(engine): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "high_watermark": engine.high_watermark(),
    }))
}

#[derive(Debug, Serialize)]
struct RecordError {
    line: usize,
    field: String,
    message: String,
}

#[derive(Debug, Serialize)]
struct IngestReport {
    accepted: u64,
    rejected: u64,
    last_seq: Option<u64>,
    errors: Vec<RecordError>,
}

async fn post_events(State(engine): State<AppState>, body: String) -> Result<Json<IngestReport>, ApiError> {
    blocking(&engine, move |engine| {
        let mut report = IngestReport {
            accepted: 0,
            rejected: 0,
            last_seq: None,
            errors: Vec::new(),
        };
        let mut parsed_any = false;
        let mut lines = 0;
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            lines += 1;
            let outcome = RawRecord::parse(line)
                .inspect(|_| parsed_any = true)
                .and_then(|raw| validate(&raw))
                .map_err(|e| (e.field, e.message))
                .and_then(|ev| engine.ingest(ev).map_err(|e| ("event_id".to_string(), e.to_string())));
            match outcome {
                Ok(seq) => {
                    report.accepted += 1;
                    report.last_seq = Some(seq);
                }
                Err((field, message)) => {
                    report.rejected += 1;
                    if report.errors.len() < MAX_REPORTED_ERRORS {
                        report.errors.push(RecordError {
                            line: i + 1,
                            field,
                            message,
                        });
                    }
                }
            }
        }
        if lines == 0 {
            return Err(ApiError::new(400, "empty_body", "no records in body"));
        }
        if !parsed_any {
            return Err(ApiError::new(400, "unparseable_body", "no line of the body is a JSON object"));
        }
        Ok(Json(report))
    })
    .await
}

async fn list_views(State(engine): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "views": engine.views() }))
}

async fn register_view(State(engine): State<AppState>, body: String) -> Result<Response, ApiError> {
    let descriptor: ViewDescriptor = parse_json(&body)?;
    blocking(&engine, move |engine| {
        engine.register_view(descriptor.clone())?;
        Ok((StatusCode::CREATED, Json(descriptor)).into_response())
    })
    .await
}

async fn run_query(State(engine): State<AppState>, body: String) -> Result<Response, ApiError> {
    let req: QueryRequest = parse_json(&body)?;
    blocking(&engine, move |engine| Ok(Json(engine.query(&req)?).into_response())).await
}

/// Writer that forwards fixed-size chunks to an HTTP body stream.
struct ChannelWriter {
    tx: mpsc::Sender<Result<Bytes, io::Error>>,
    buf: Vec<u8>,
}

impl ChannelWriter {
    fn send(&mut self) -> io::Result<()> {
        if self.buf.is_empty() {
            return Ok(());
        }
        let chunk = Bytes::from(std::mem::take(&mut self.buf));
        self.tx
            .blocking_send(Ok(chunk))
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "client went away"))
    }
}

impl Write for ChannelWriter {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        self.buf.extend_from_slice(data);
        if self.buf.len() >= STREAM_CHUNK {
            self.send()?;
        }
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.send()
    }
}

fn export_request(view: String, q: &HashMap<String, String>) -> Result<ExportRequest, ApiError> {
    let format: ExportFormat = param(q, "format", ExportFormat::Asc)?;
    let mut req = ExportRequest::new(&view, format);
    req.layer = param(q, "layer", Layer::Raw)?;
    req.radius = param(q, "radius", req.radius)?;
    req.population = q
        .get("population")
        .map(|v| v.parse::<f64>().map_err(|e| ApiError::bad_param("population", format!("{v:?}: {e}"))))
        .transpose()?;
    req.baseline = q.get("baseline").cloned();
    Ok(req)
}

async fn export_view(
    State(engine): State<AppState>,
    Path(view): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let req = export_request(view, &q)?;
    let content_type = req.format.content_type();
    let prepared = {
        let req = req.clone();
        blocking(&engine, move |engine| prepare_export(engine, &req)).await?
    };
    let (tx, mut rx) = mpsc::channel::<Result<Bytes, io::Error>>(8);
    let worker = Arc::clone(&engine);
    tokio::task::spawn_blocking(move || {
        let mut out = ChannelWriter { tx: tx.clone(), buf: Vec::new() };
        let result = write_export(&worker, &prepared, &mut out).and_then(|_| Ok(out.flush()?));
        if let Err(e) = result {
            tracing::warn!(error = %e, "export aborted");
            let _ = tx.blocking_send(Err(io::Error::other(e.to_string())));
        }
    });
    let stream = futures::stream::poll_fn(move |cx| rx.poll_recv(cx));
    Ok(([(header::CONTENT_TYPE, content_type)], Body::from_stream(stream)).into_response())
}

async fn occupancy(
    State(engine): State<AppState>,
    Path(venue): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let mut oq = OccupancyQuery::new(&venue);
    oq.bin_width = param(&q, "bin", oq.bin_width)?;
    oq.confidence = param(&q, "confidence", oq.confidence)?;
    oq.seed = param(&q, "seed", oq.seed)?;
    oq.resamples = param(&q, "resamples", oq.resamples)?;
    oq.day_start = param(&q, "day_start", oq.day_start)?;
    let csv = match q.get("format").map(String::as_str) {
        None | Some("json") => false,
        Some("csv") => true,
        Some(other) => return Err(ApiError::bad_param("format", format!("unknown format {other:?}; expected json or csv"))),
    };
    let curve = blocking(&engine, move |engine| Ok(engine.occupancy(&oq)?)).await?;
    if csv {
        let mut buf = Vec::new();
        formats::write_occupancy_csv(&curve, &mut buf)?;
        Ok(([(header::CONTENT_TYPE, ExportFormat::Csv.content_type())], buf).into_response())
    } else {
        Ok(Json(curve).into_response())
    }
}

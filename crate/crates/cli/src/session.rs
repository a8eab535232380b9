//! Workbook-session facade: a small JSON API over one workbook file for the
//! browser grid. Every mutation runs under one lock, in arrival order, and
//! the file is rewritten after each one. `docs/session-api.md` lists the
//! request and response bodies.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use infoflow_core::protocol::{DirectoryEntry, ResponseMeta};
use infoflow_core::workbook::{
    AuditRecord, BindingState, CellAddress, CellView, CheckpointSummary, Mode, ParamSource, RefreshOutcome,
    ServiceGateway, Staleness, Workbook, WorkbookError,
};
use infoflow_core::{Timestamp, Value};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::workbook_file;

pub type Gateway = Arc<dyn ServiceGateway + Send + Sync>;

/// One open workbook plus the identity it acts under.
pub struct Session {
    pub path: PathBuf,
    pub workbook: Workbook,
    pub gateway: Gateway,
    pub user: String,
}

impl Session {
    fn save(&self) -> Result<(), ApiError> {
        workbook_file::save(&self.path, &self.workbook).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "persist", e))
    }
}

type Shared = Arc<Mutex<Session>>;

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.to_string(),
        }
    }
}

impl From<WorkbookError> for ApiError {
    fn from(e: WorkbookError) -> Self {
        let status = match &e {
            WorkbookError::UnknownBinding(_) | WorkbookError::UnknownCheckpoint(_) | WorkbookError::UnknownService(_) => {
                StatusCode::NOT_FOUND
            }
            WorkbookError::Server(_) => StatusCode::BAD_GATEWAY,
            WorkbookError::Format(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::CONFLICT,
        };
        let code = match &e {
            WorkbookError::Server(g) => g.code().to_string(),
            other => other.code().to_string(),
        };
        ApiError::new(status, &code, e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad-request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

/// Runs `f` on a blocking thread with the session locked.
async fn locked<T, F>(s: Shared, mutate: bool, f: F) -> Result<Json<T>, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let mut session = s.lock().unwrap_or_else(|e| e.into_inner());
        let out = f(&mut session);
        // Failed refreshes still change binding state, so save either way.
        if mutate {
            session.save()?;
        }
        out.map(Json)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
}

fn address(s: &str) -> Result<CellAddress, ApiError> {
    s.parse().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad-address", e))
}

async fn grid(State(s): State<Shared>) -> Result<Json<Vec<CellView>>, ApiError> {
    locked(s, false, |s| Ok(s.workbook.grid_view())).await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BindRequest {
    pub origin: CellAddress,
    pub service: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamSource>,
    #[serde(default = "read_only")]
    pub mode: Mode,
}

fn read_only() -> Mode {
    Mode::ReadOnly
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: u32,
}

async fn bind(State(s): State<Shared>, body: Result<Json<BindRequest>, JsonRejection>) -> Result<Json<Created>, ApiError> {
    let Json(req) = body?;
    locked(s, true, move |s| {
        let gw = s.gateway.clone();
        let id = s.workbook.bind(gw.as_ref(), req.origin, &req.service, req.params, req.mode)?;
        Ok(Created { id })
    })
    .await
}

async fn refresh(State(s): State<Shared>, Path(id): Path<u32>) -> Result<Json<RefreshOutcome>, ApiError> {
    locked(s, true, move |s| {
        let gw = s.gateway.clone();
        let user = s.user.clone();
        Ok(s.workbook.refresh(gw.as_ref(), id, &user, Timestamp::now())?)
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditRequest {
    pub address: CellAddress,
    pub value: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditResponse {
    pub outcome: infoflow_core::workbook::EditOutcome,
}

async fn edit(State(s): State<Shared>, body: Result<Json<EditRequest>, JsonRejection>) -> Result<Json<EditResponse>, ApiError> {
    let Json(req) = body?;
    locked(s, true, move |s| {
        let user = s.user.clone();
        let outcome = s.workbook.edit_cell(&req.address, req.value, &user, Timestamp::now())?;
        Ok(EditResponse { outcome })
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Applied {
    pub applied: usize,
}

async fn push(State(s): State<Shared>, Path(id): Path<u32>) -> Result<Json<Applied>, ApiError> {
    locked(s, true, move |s| {
        let gw = s.gateway.clone();
        let user = s.user.clone();
        let applied = s.workbook.push_updates(gw.as_ref(), id, &user, Timestamp::now())?;
        Ok(Applied { applied })
    })
    .await
}

async fn audit(State(s): State<Shared>, Path(a): Path<String>) -> Result<Json<Vec<AuditRecord>>, ApiError> {
    let a = address(&a)?;
    locked(s, false, move |s| Ok(s.workbook.audit_of(&a))).await
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CheckpointRequest {
    #[serde(default)]
    pub label: String,
}

async fn checkpoint(
    State(s): State<Shared>,
    body: Result<Json<CheckpointRequest>, JsonRejection>,
) -> Result<Json<Created>, ApiError> {
    let Json(req) = body?;
    locked(s, true, move |s| {
        Ok(Created {
            id: s.workbook.checkpoint(&req.label, Timestamp::now()),
        })
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Restored {
    pub changed: usize,
}

async fn restore(State(s): State<Shared>, Path(id): Path<u32>) -> Result<Json<Restored>, ApiError> {
    locked(s, true, move |s| {
        let user = s.user.clone();
        let changed = s.workbook.restore(id, &user, Timestamp::now())?;
        Ok(Restored { changed })
    })
    .await
}

/// A binding as listed to the UI, with its staleness at request time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BindingView {
    pub id: u32,
    pub origin: CellAddress,
    pub service: String,
    pub mode: Mode,
    pub params: BTreeMap<String, ParamSource>,
    pub columns: Vec<String>,
    pub rows: u32,
    #[serde(flatten)]
    pub state: BindingState,
    pub staleness: Staleness,
    pub last_refresh: Option<Timestamp>,
    pub meta: Option<ResponseMeta>,
}

pub fn binding_views(wb: &Workbook, now: Timestamp) -> Vec<BindingView> {
    wb.bindings()
        .values()
        .map(|b| BindingView {
            id: b.id,
            origin: b.origin.clone(),
            service: b.service.clone(),
            mode: b.mode,
            params: b.params.clone(),
            columns: b.schema.column_names().map(str::to_string).collect(),
            rows: b.rows,
            state: b.state.clone(),
            staleness: wb.staleness(b.id, now).unwrap_or(Staleness::Error),
            last_refresh: b.last_refresh,
            meta: b.meta.clone(),
        })
        .collect()
}

async fn bindings(State(s): State<Shared>) -> Result<Json<Vec<BindingView>>, ApiError> {
    locked(s, false, |s| Ok(binding_views(&s.workbook, Timestamp::now()))).await
}

async fn checkpoints(State(s): State<Shared>) -> Result<Json<Vec<CheckpointSummary>>, ApiError> {
    locked(s, false, |s| Ok(s.workbook.list_checkpoints())).await
}

async fn directory(State(s): State<Shared>) -> Result<Json<Vec<DirectoryEntry>>, ApiError> {
    let gw = s.lock().unwrap_or_else(|e| e.into_inner()).gateway.clone();
    tokio::task::spawn_blocking(move || gw.directory())
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e))?
        .map(Json)
        .map_err(|e| WorkbookError::Server(e).into())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such endpoint")
}

pub fn router(session: Session) -> Router {
    Router::new()
        .route("/wb/grid", get(grid))
        .route("/wb/bind", post(bind))
        .route("/wb/refresh/{id}", post(refresh))
        .route("/wb/cell", post(edit))
        .route("/wb/push/{id}", post(push))
        .route("/wb/audit/{address}", get(audit))
        .route("/wb/checkpoint", post(checkpoint))
        .route("/wb/restore/{id}", post(restore))
        .route("/wb/bindings", get(bindings))
        .route("/wb/checkpoints", get(checkpoints))
        .route("/wb/directory", get(directory))
        .fallback(not_found)
        .with_state(Arc::new(Mutex::new(session)))
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()
}

fn bind_listener(listen: &str) -> std::io::Result<std::net::TcpListener> {
    let l = std::net::TcpListener::bind(listen)?;
    l.set_nonblocking(true)?;
    Ok(l)
}

/// A facade running on a background thread; dropping it shuts it down.
pub struct RunningSession {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl RunningSession {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for RunningSession {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn spawn(session: Session, listen: &str) -> std::io::Result<RunningSession> {
    let listener = bind_listener(listen)?;
    let addr = listener.local_addr()?;
    let rt = runtime()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(session);
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("non-blocking listener");
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(RunningSession {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Serves in the foreground until the process is killed.
pub fn serve(session: Session, listen: &str, on_ready: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = bind_listener(listen)?;
    on_ready(listener.local_addr()?);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        axum::serve(listener, router(session)).await
    })
}

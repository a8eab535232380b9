//! HTTP server hosting an infoflow registry.
//!
//! Endpoints (all bodies `application/xml`):
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/directory` | services the caller may use |
//! | GET | `/services/{name}/schema` | keys, columns, update capability |
//! | POST | `/services/{name}/invoke` | `<service-request>` → `<service-response>` |
//! | POST | `/services/{name}/update` | `<update-request>` → `<update-response>` |
//! | POST | `/admin/reload` | re-read the registry directory |
//! | GET | `/admin/audit?since=N` | audit records after sequence N |
//!
//! Every request, including rejected ones, appends exactly one audit record.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use infoflow_core::connectors::UpdateRow;
use infoflow_core::protocol::{self, DirectoryEntry, InvocationAuditRecord, ReloadSummary, ServiceResponse, ServiceSchema};
use infoflow_core::{
    check_access, load_registry, resolve, ConnectorError, Connectors, Params, Principal, Registry, RegistryError,
    ResolveError, ServiceDefinition, Timestamp, Value,
};
use tokio::sync::oneshot;

mod audit;
mod config;

pub use audit::AuditLog;
pub use config::{ConfigError, PrincipalEntry, ServerConfig, CONFIG_ENV};

pub const ANONYMOUS: &str = "anonymous";

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> ServerError {
    let context = context.into();
    move |source| ServerError::Io { context, source }
}

/// Shared server state. The registry is swapped whole on reload; handlers
/// pin the version current when they start.
pub struct AppState {
    registry_dir: PathBuf,
    registry: RwLock<Arc<Registry>>,
    tokens: HashMap<String, Principal>,
    admin_group: String,
    secrets: HashMap<String, String>,
    audit: AuditLog,
    update_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl AppState {
    pub fn new(config: &ServerConfig) -> Result<Self, ServerError> {
        let registry = load_registry(&config.registry)?;
        let audit = AuditLog::open(&config.audit_log).map_err(io_err(format!("audit log {}", config.audit_log.display())))?;
        Ok(AppState {
            registry_dir: config.registry.clone(),
            registry: RwLock::new(Arc::new(registry)),
            tokens: config.tokens()?,
            admin_group: config.admin_group.clone(),
            secrets: config.secrets.clone(),
            audit,
            update_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn registry(&self) -> Arc<Registry> {
        self.registry.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    fn connectors(&self, reg: &Registry) -> Connectors {
        let c = Connectors::new().with_secrets(self.secrets.clone());
        match reg.base_dir() {
            Some(dir) => c.with_base_dir(dir),
            None => c,
        }
    }

    fn update_lock(&self, resource: &str) -> Arc<Mutex<()>> {
        let mut locks = self.update_locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(resource.to_string()).or_default().clone()
    }
}

/// A rejected request: HTTP status plus the wire error code and message.
#[derive(Debug)]
struct Failure {
    status: StatusCode,
    code: &'static str,
    message: String,
}

fn fail(status: StatusCode, code: &'static str, message: impl Into<String>) -> Failure {
    Failure {
        status,
        code,
        message: message.into(),
    }
}

fn bad_request(code: &'static str, message: impl Into<String>) -> Failure {
    fail(StatusCode::BAD_REQUEST, code, message)
}

fn internal(message: impl ToString) -> Failure {
    fail(StatusCode::INTERNAL_SERVER_ERROR, "internal", message.to_string())
}

/// What the audit record for the current request will say.
struct Audit {
    action: &'static str,
    user: String,
    service: Option<String>,
    params: BTreeMap<String, String>,
    rows: Option<u64>,
}

impl Audit {
    fn new(action: &'static str) -> Self {
        Audit {
            action,
            user: ANONYMOUS.to_string(),
            service: None,
            params: BTreeMap::new(),
            rows: None,
        }
    }
}

type Outcome = Result<Vec<u8>, Failure>;

fn xml(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, protocol::MEDIA_TYPE)], body).into_response()
}

fn error_body(code: &str, message: &str) -> Vec<u8> {
    let clean: String = message
        .chars()
        .map(|c| if c < ' ' && !matches!(c, '\t' | '\n' | '\r') { '\u{FFFD}' } else { c })
        .collect();
    protocol::encode_response(&ServiceResponse::error(code, clean))
        .unwrap_or_else(|_| protocol::encode_response(&ServiceResponse::error(code, "unprintable error")).expect("ascii"))
}

fn respond(st: &AppState, audit: Audit, outcome: Outcome) -> Response {
    let code = match &outcome {
        Ok(_) => "ok",
        Err(f) => f.code,
    };
    let record = InvocationAuditRecord {
        sequence: 0,
        timestamp: Timestamp::now(),
        user: audit.user,
        action: audit.action.to_string(),
        service: audit.service,
        params: audit.params,
        outcome: code.to_string(),
        rows: audit.rows,
    };
    if let Err(e) = st.audit.append(record) {
        return xml(
            StatusCode::INTERNAL_SERVER_ERROR,
            error_body("audit-unavailable", &format!("audit log write failed: {e}")),
        );
    }
    match outcome {
        Ok(body) => xml(StatusCode::OK, body),
        Err(f) => xml(f.status, error_body(f.code, &f.message)),
    }
}

fn authenticate(st: &AppState, headers: &HeaderMap, audit: &mut Audit) -> Result<Principal, Failure> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    let Some(token) = token else {
        return Err(fail(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"));
    };
    let p = st
        .tokens
        .get(token)
        .ok_or_else(|| fail(StatusCode::UNAUTHORIZED, "unauthorized", "unknown token"))?;
    audit.user = p.user_id.clone();
    Ok(p.clone())
}

fn require_admin(st: &AppState, p: &Principal) -> Result<(), Failure> {
    if p.in_group(&st.admin_group) {
        Ok(())
    } else {
        Err(fail(StatusCode::FORBIDDEN, "forbidden", "administrators only"))
    }
}

/// 404 for unknown names, 403 for services the principal may not see.
fn authorize<'r>(reg: &'r Registry, name: &str, p: &Principal) -> Result<&'r ServiceDefinition, Failure> {
    let def = reg
        .service(name)
        .ok_or_else(|| fail(StatusCode::NOT_FOUND, "not-found", format!("no service {name}")))?;
    if !check_access(&def.acl, p) {
        return Err(fail(StatusCode::FORBIDDEN, "forbidden", format!("not authorized for service {name}")));
    }
    Ok(def)
}

fn encode<E: ToString>(r: Result<Vec<u8>, E>) -> Outcome {
    r.map_err(|e| fail(StatusCode::INTERNAL_SERVER_ERROR, "encode-error", e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Failure> {
    tokio::task::spawn_blocking(f).await.map_err(internal)
}

async fn directory(State(st): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let mut audit = Audit::new("directory");
    let outcome = (|| {
        let p = authenticate(&st, &headers, &mut audit)?;
        let reg = st.registry();
        let entries: Vec<DirectoryEntry> = reg
            .services()
            .filter(|d| check_access(&d.acl, &p))
            .map(DirectoryEntry::from)
            .collect();
        audit.rows = Some(entries.len() as u64);
        encode(protocol::encode_directory(&entries))
    })();
    respond(&st, audit, outcome)
}

async fn schema(State(st): State<Arc<AppState>>, Path(name): Path<String>, headers: HeaderMap) -> Response {
    let mut audit = Audit::new("schema");
    audit.service = Some(name.clone());
    let outcome = (|| {
        let p = authenticate(&st, &headers, &mut audit)?;
        let reg = st.registry();
        let def = authorize(&reg, &name, &p)?;
        encode(protocol::encode_schema(&ServiceSchema::from(def)))
    })();
    respond(&st, audit, outcome)
}

fn resolve_failure(e: ResolveError) -> Failure {
    match e {
        ResolveError::MissingParam(_) => bad_request("missing-param", e.to_string()),
        ResolveError::UnknownParam(_) => bad_request("unknown-param", e.to_string()),
        ResolveError::BadParam { .. } => bad_request("bad-param", e.to_string()),
        ResolveError::AmbiguousEnrichment { .. } => fail(StatusCode::BAD_GATEWAY, "ambiguous-enrichment", e.to_string()),
        ResolveError::Source { ref resource, ref error } => {
            let code = match error {
                ConnectorError::SourceUnavailable { .. } => "source-unavailable",
                _ => "source-error",
            };
            fail(StatusCode::BAD_GATEWAY, code, format!("resource {resource}: {error}"))
        }
        ResolveError::Eval { .. } => fail(StatusCode::INTERNAL_SERVER_ERROR, "transform-error", e.to_string()),
        ResolveError::UnknownResource(_) | ResolveError::Schema(_) => internal(e),
    }
}

async fn invoke(State(st): State<Arc<AppState>>, Path(name): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let mut audit = Audit::new("invoke");
    audit.service = Some(name.clone());
    let outcome = async {
        let p = authenticate(&st, &headers, &mut audit)?;
        let req = protocol::decode_request(&body).map_err(|e| bad_request("bad-request", e.to_string()))?;
        if req.service != name {
            return Err(bad_request("bad-request", format!("request names service {} but path names {name}", req.service)));
        }
        if req.version != protocol::PROTOCOL_VERSION {
            return Err(bad_request("bad-request", format!("unsupported protocol version {}", req.version)));
        }
        for (k, v) in &req.params {
            if audit.params.insert(k.clone(), v.clone()).is_some() {
                return Err(bad_request("bad-request", format!("parameter {k} given twice")));
            }
        }
        let reg = st.registry();
        let def = authorize(&reg, &name, &p)?;
        let mut params = Params::new();
        for (k, v) in &req.params {
            let kp = def
                .key_param(k)
                .ok_or_else(|| bad_request("unknown-param", format!("unknown parameter: {k}")))?;
            let value = Value::decode(kp.ty, v).map_err(|_| bad_request("bad-param", format!("parameter {k}: expected {}", kp.ty)))?;
            params.insert(k.clone(), value);
        }
        let connectors = st.connectors(&reg);
        let reg2 = reg.clone();
        let name2 = name.clone();
        let result = blocking(move || {
            let def = reg2.service(&name2).expect("authorized above");
            resolve(def, &params, reg2.resources(), &connectors)
        })
        .await?
        .map_err(resolve_failure)?;
        audit.rows = Some(result.table.len() as u64);
        let def = reg.service(&name).expect("authorized above");
        encode(protocol::encode_response(&ServiceResponse::for_service(def, result.table)))
    }
    .await;
    respond(&st, audit, outcome)
}

fn update_rows(def: &ServiceDefinition, req: &protocol::UpdateRequest) -> Result<Vec<UpdateRow>, Failure> {
    let spec = def.update.as_ref().expect("checked by caller");
    let decode = |column: &str, v: &Option<String>| -> Result<Value, Failure> {
        match v {
            None => Ok(Value::Null),
            Some(text) => Value::decode(def.source_column_type(&spec.resource_id, column), text)
                .map_err(|e| bad_request("bad-request", format!("column {column}: {e}"))),
        }
    };
    let mut out = Vec::with_capacity(req.rows.len());
    for row in &req.rows {
        let mut r = UpdateRow::default();
        for (c, v) in &row.keys {
            if !spec.key_columns.contains(c) {
                return Err(bad_request("bad-request", format!("{c} is not a key column")));
            }
            if r.keys.insert(c.clone(), decode(c, v)?).is_some() {
                return Err(bad_request("bad-request", format!("key {c} given twice")));
            }
        }
        if r.keys.len() != spec.key_columns.len() {
            return Err(bad_request("bad-request", format!("every row must name key columns {}", spec.key_columns.join(","))));
        }
        if row.values.is_empty() {
            return Err(bad_request("bad-request", "update row sets no columns"));
        }
        for (c, v) in &row.values {
            if !spec.writable_columns.contains(c) {
                return Err(bad_request("column-not-writable", format!("column {c} is not writable")));
            }
            if r.values.insert(c.clone(), decode(c, v)?).is_some() {
                return Err(bad_request("bad-request", format!("column {c} set twice")));
            }
        }
        out.push(r);
    }
    Ok(out)
}

fn connector_failure(e: ConnectorError) -> Failure {
    match e {
        ConnectorError::NoSuchKey { .. } => fail(StatusCode::CONFLICT, "no-such-key", e.to_string()),
        ConnectorError::InvalidUpdate { .. } => bad_request("bad-request", e.to_string()),
        ConnectorError::UpdateUnsupported(_) => fail(StatusCode::METHOD_NOT_ALLOWED, "update-unsupported", e.to_string()),
        ConnectorError::SourceUnavailable { .. } => fail(StatusCode::BAD_GATEWAY, "source-unavailable", e.to_string()),
        _ => fail(StatusCode::BAD_GATEWAY, "source-error", e.to_string()),
    }
}

async fn update(State(st): State<Arc<AppState>>, Path(name): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let mut audit = Audit::new("update");
    audit.service = Some(name.clone());
    let outcome = async {
        let p = authenticate(&st, &headers, &mut audit)?;
        let req = protocol::decode_update_request(&body).map_err(|e| bad_request("bad-request", e.to_string()))?;
        if req.service != name {
            return Err(bad_request("bad-request", format!("request names service {} but path names {name}", req.service)));
        }
        let reg = st.registry();
        let def = authorize(&reg, &name, &p)?;
        let Some(spec) = &def.update else {
            return Err(fail(StatusCode::METHOD_NOT_ALLOWED, "update-unsupported", format!("service {name} accepts no updates")));
        };
        let rows = update_rows(def, &req)?;
        let res = reg
            .resource(&spec.resource_id)
            .cloned()
            .ok_or_else(|| internal(format!("unknown resource {}", spec.resource_id)))?;
        let spec = spec.clone();
        let connectors = st.connectors(&reg);
        let lock = st.update_lock(&res.id);
        let applied = blocking(move || {
            let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
            connectors.apply_update(&res, &spec, &rows)
        })
        .await?
        .map_err(connector_failure)?;
        audit.rows = Some(applied as u64);
        Ok(protocol::encode_update_response(applied))
    }
    .await;
    respond(&st, audit, outcome)
}

async fn reload(State(st): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let mut audit = Audit::new("reload");
    let outcome = async {
        let p = authenticate(&st, &headers, &mut audit)?;
        require_admin(&st, &p)?;
        let dir = st.registry_dir.clone();
        let fresh = blocking(move || load_registry(dir))
            .await?
            .map_err(|e| fail(StatusCode::CONFLICT, "validation-failed", e.to_string()))?;
        let summary = ReloadSummary {
            services: fresh.service_count(),
            resources: fresh.resources().len(),
        };
        *st.registry.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(fresh);
        audit.rows = Some(summary.services as u64);
        Ok(protocol::encode_reload_summary(&summary))
    }
    .await;
    respond(&st, audit, outcome)
}

async fn read_audit(State(st): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<HashMap<String, String>>) -> Response {
    let mut audit = Audit::new("audit");
    let outcome = (|| {
        let p = authenticate(&st, &headers, &mut audit)?;
        require_admin(&st, &p)?;
        let since = match q.get("since") {
            None => 0,
            Some(s) => s.parse::<u64>().map_err(|_| bad_request("bad-request", format!("bad since: {s}")))?,
        };
        audit.params.insert("since".into(), since.to_string());
        let records = st.audit.since(since);
        audit.rows = Some(records.len() as u64);
        encode(protocol::encode_audit_log(&records))
    })();
    respond(&st, audit, outcome)
}

async fn fallback(State(st): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let mut audit = Audit::new("unknown");
    let outcome = authenticate(&st, &headers, &mut audit).and_then(|_| Err(fail(StatusCode::NOT_FOUND, "not-found", "no such endpoint")));
    respond(&st, audit, outcome)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/directory", get(directory))
        .route("/services/{name}/schema", get(schema))
        .route("/services/{name}/invoke", post(invoke))
        .route("/services/{name}/update", post(update))
        .route("/admin/reload", post(reload))
        .route("/admin/audit", get(read_audit))
        .fallback(fallback)
        .with_state(state)
}

/// A server running on a background thread; dropping it shuts it down.
pub struct RunningServer {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, ServerError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io_err("tokio runtime"))
}

fn bind(listen: &str) -> Result<std::net::TcpListener, ServerError> {
    let l = std::net::TcpListener::bind(listen).map_err(io_err(format!("listen on {listen}")))?;
    l.set_nonblocking(true).map_err(io_err("listener"))?;
    Ok(l)
}

/// Starts serving on `config.listen` (port 0 picks a free port).
pub fn spawn(config: &ServerConfig) -> Result<RunningServer, ServerError> {
    let state = Arc::new(AppState::new(config)?);
    let listener = bind(&config.listen)?;
    let addr = listener.local_addr().map_err(io_err("listener"))?;
    let rt = runtime()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state.clone());
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
    Ok(RunningServer {
        addr,
        state,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Serves in the foreground until the process is killed. `on_ready` gets
/// the bound address.
pub fn run(config: &ServerConfig, on_ready: impl FnOnce(SocketAddr)) -> Result<(), ServerError> {
    let state = Arc::new(AppState::new(config)?);
    let listener = bind(&config.listen)?;
    on_ready(listener.local_addr().map_err(io_err("listener"))?);
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener).map_err(io_err("listener"))?;
        axum::serve(listener, router(state)).await.map_err(io_err("serve"))
    })
}

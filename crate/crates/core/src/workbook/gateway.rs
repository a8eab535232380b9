//! How a workbook reaches the server.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Duration;

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};

use crate::protocol::{
    self, DirectoryEntry, ResponseMeta, ServiceRequest, ServiceResponse, ServiceSchema, UpdateRequest, MEDIA_TYPE,
};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("server unreachable: {0}")]
    Unreachable(String),
    /// A well-formed error response; `status` is the HTTP status.
    #[error("{code}: {message}")]
    Server { status: u16, code: String, message: String },
    #[error("bad response: {0}")]
    Protocol(String),
}

impl GatewayError {
    pub fn code(&self) -> &str {
        match self {
            GatewayError::Unreachable(_) => "unreachable",
            GatewayError::Server { code, .. } => code,
            GatewayError::Protocol(_) => "protocol",
        }
    }
}

/// Server operations a workbook depends on, scoped to one principal.
pub trait ServiceGateway {
    fn directory(&self) -> Result<Vec<DirectoryEntry>, GatewayError>;
    fn schema(&self, service: &str) -> Result<ServiceSchema, GatewayError>;
    fn invoke(&self, request: &ServiceRequest) -> Result<(ResponseMeta, Table), GatewayError>;
    /// Returns the applied row count.
    fn update(&self, request: &UpdateRequest) -> Result<usize, GatewayError>;
}

/// Talks to an infoflow server over HTTP with a bearer token.
pub struct HttpGateway {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpGateway {
    pub fn new(base: impl Into<String>, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        HttpGateway {
            base: base.into().trim_end_matches('/').to_string(),
            token,
            agent,
        }
    }

    fn service_url(&self, service: &str, action: &str) -> String {
        format!("{}/services/{}/{action}", self.base, utf8_percent_encode(service, NON_ALPHANUMERIC))
    }

    fn auth(&self) -> Option<String> {
        self.token.as_ref().map(|t| format!("Bearer {t}"))
    }

    fn finish(&self, resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<(u16, Vec<u8>), GatewayError> {
        let mut resp = resp.map_err(|e| GatewayError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_vec()
            .map_err(|e| GatewayError::Unreachable(e.to_string()))?;
        Ok((status, body))
    }

    pub fn get(&self, url: &str) -> Result<(u16, Vec<u8>), GatewayError> {
        let mut req = self.agent.get(url).header("Accept", MEDIA_TYPE);
        if let Some(a) = self.auth() {
            req = req.header("Authorization", a);
        }
        self.finish(req.call())
    }

    pub fn post(&self, url: &str, body: &[u8]) -> Result<(u16, Vec<u8>), GatewayError> {
        let mut req = self
            .agent
            .post(url)
            .header("Accept", MEDIA_TYPE)
            .header("Content-Type", MEDIA_TYPE);
        if let Some(a) = self.auth() {
            req = req.header("Authorization", a);
        }
        self.finish(req.send(body))
    }

    /// Raw invoke: status and response bytes, for callers that print XML.
    pub fn invoke_raw(&self, request: &ServiceRequest) -> Result<(u16, Vec<u8>), GatewayError> {
        let body = protocol::encode_request(request).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        self.post(&self.service_url(&request.service, "invoke"), &body)
    }
}

/// Turns a non-2xx status into the server's error, or a generic one when the
/// body is not an error document.
pub fn check_status(status: u16, body: &[u8]) -> Result<(), GatewayError> {
    if (200..300).contains(&status) {
        return Ok(());
    }
    Err(match protocol::decode_response(body) {
        Ok(ServiceResponse::Error { code, message }) => GatewayError::Server { status, code, message },
        _ => GatewayError::Server {
            status,
            code: format!("http-{status}"),
            message: String::from_utf8_lossy(body).into_owned(),
        },
    })
}

fn protocol_err(e: impl ToString) -> GatewayError {
    GatewayError::Protocol(e.to_string())
}

impl ServiceGateway for HttpGateway {
    fn directory(&self) -> Result<Vec<DirectoryEntry>, GatewayError> {
        let (status, body) = self.get(&format!("{}/directory", self.base))?;
        check_status(status, &body)?;
        protocol::decode_directory(&body).map_err(protocol_err)
    }

    fn schema(&self, service: &str) -> Result<ServiceSchema, GatewayError> {
        let (status, body) = self.get(&self.service_url(service, "schema"))?;
        check_status(status, &body)?;
        protocol::decode_schema(&body).map_err(protocol_err)
    }

    fn invoke(&self, request: &ServiceRequest) -> Result<(ResponseMeta, Table), GatewayError> {
        let (status, body) = self.invoke_raw(request)?;
        check_status(status, &body)?;
        match protocol::decode_response(&body).map_err(protocol_err)? {
            ServiceResponse::Ok { meta, table } => Ok((meta, table)),
            ServiceResponse::Error { code, message } => Err(GatewayError::Server { status, code, message }),
        }
    }

    fn update(&self, request: &UpdateRequest) -> Result<usize, GatewayError> {
        let body = protocol::encode_update_request(request).map_err(protocol_err)?;
        let (status, body) = self.post(&self.service_url(&request.service, "update"), &body)?;
        check_status(status, &body)?;
        match protocol::decode_update_response(&body).map_err(protocol_err)? {
            Ok(n) => Ok(n),
            Err((code, message)) => Err(GatewayError::Server { status, code, message }),
        }
    }
}

#[derive(Default)]
struct MemoryState {
    services: BTreeMap<String, (ServiceSchema, ResponseMeta, Table)>,
    down: bool,
    update_error: Option<GatewayError>,
    requests: Vec<ServiceRequest>,
    updates: Vec<UpdateRequest>,
}

/// In-process gateway with canned results, for tests and benchmarks.
///
/// Every invoke of a service returns its current table regardless of
/// parameters; updates are recorded and answered with the row count.
#[derive(Default)]
pub struct MemoryGateway {
    state: Mutex<MemoryState>,
}

impl MemoryGateway {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MemoryState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn add_service(&self, schema: ServiceSchema, table: Table) {
        let meta = ResponseMeta {
            refresh_seconds: schema.refresh_seconds,
            update_service: schema.updatable().then(|| schema.name.clone()),
            hints: Vec::new(),
        };
        self.lock().services.insert(schema.name.clone(), (schema, meta, table));
    }

    pub fn set_table(&self, service: &str, table: Table) {
        if let Some(entry) = self.lock().services.get_mut(service) {
            entry.2 = table;
        }
    }

    /// While down every call fails as unreachable.
    pub fn set_down(&self, down: bool) {
        self.lock().down = down;
    }

    pub fn fail_updates(&self, error: Option<GatewayError>) {
        self.lock().update_error = error;
    }

    pub fn requests(&self) -> Vec<ServiceRequest> {
        self.lock().requests.clone()
    }

    pub fn updates(&self) -> Vec<UpdateRequest> {
        self.lock().updates.clone()
    }

    fn up(&self) -> Result<std::sync::MutexGuard<'_, MemoryState>, GatewayError> {
        let s = self.lock();
        if s.down {
            return Err(GatewayError::Unreachable("connection refused".into()));
        }
        Ok(s)
    }
}

fn not_found(service: &str) -> GatewayError {
    GatewayError::Server {
        status: 404,
        code: "not-found".into(),
        message: format!("no service {service}"),
    }
}

impl ServiceGateway for MemoryGateway {
    fn directory(&self) -> Result<Vec<DirectoryEntry>, GatewayError> {
        Ok(self
            .up()?
            .services
            .values()
            .map(|(s, ..)| DirectoryEntry {
                name: s.name.clone(),
                version: s.version,
                description: String::new(),
                keys: s.keys.clone(),
            })
            .collect())
    }

    fn schema(&self, service: &str) -> Result<ServiceSchema, GatewayError> {
        let s = self.up()?;
        s.services.get(service).map(|(s, ..)| s.clone()).ok_or_else(|| not_found(service))
    }

    fn invoke(&self, request: &ServiceRequest) -> Result<(ResponseMeta, Table), GatewayError> {
        let mut s = self.up()?;
        s.requests.push(request.clone());
        s.services
            .get(&request.service)
            .map(|(_, m, t)| (m.clone(), t.clone()))
            .ok_or_else(|| not_found(&request.service))
    }

    fn update(&self, request: &UpdateRequest) -> Result<usize, GatewayError> {
        let mut s = self.up()?;
        if let Some(e) = &s.update_error {
            return Err(e.clone());
        }
        s.updates.push(request.clone());
        Ok(request.rows.len())
    }
}

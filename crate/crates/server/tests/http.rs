use std::path::{Path, PathBuf};

use infoflow_core::protocol::{self, ServiceRequest, ServiceResponse, UpdateRequest, WireUpdateRow};
use infoflow_core::{Value, ValueType};
use infoflow_server::{spawn, RunningServer, ServerConfig};

const GOLDEN_OK: &str = r#"<service-response status="ok"><meta refresh-seconds="300" update-service="customer-info"/><columns><column name="name" type="text"/><column name="address" type="text"/><column name="phone" type="text"/><column name="credit_rating" type="text"/></columns><rows><row><cell>Acme Corp</cell><cell>1 Main St</cell><cell>555-0100</cell><cell>AA</cell></row></rows></service-response>"#;
const GOLDEN_FORBIDDEN: &str = r#"<service-response status="error"><error code="forbidden">not authorized for service customer-info</error></service-response>"#;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &target);
        } else if e.file_name() != "audit.log" {
            std::fs::copy(e.path(), target).unwrap();
        }
    }
}

struct Fixture {
    dir: tempfile::TempDir,
    server: RunningServer,
    agent: ureq::Agent,
}

fn start() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixtures(), dir.path());
    let cfg_path = dir.path().join("server.toml");
    let text = std::fs::read_to_string(&cfg_path).unwrap().replace("127.0.0.1:8080", "127.0.0.1:0");
    std::fs::write(&cfg_path, text).unwrap();
    let cfg = ServerConfig::load(&cfg_path).unwrap();
    let server = spawn(&cfg).unwrap();
    let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    Fixture { dir, server, agent }
}

impl Fixture {
    fn get(&self, path: &str, token: Option<&str>) -> (u16, String) {
        let mut req = self.agent.get(format!("{}{path}", self.server.url()));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.call().unwrap();
        (resp.status().as_u16(), resp.body_mut().read_to_string().unwrap())
    }

    fn post(&self, path: &str, token: Option<&str>, body: &[u8]) -> (u16, String) {
        let mut req = self.agent.post(format!("{}{path}", self.server.url()));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body).unwrap();
        (resp.status().as_u16(), resp.body_mut().read_to_string().unwrap())
    }

    fn invoke(&self, token: &str, service: &str, params: &[(&str, &str)]) -> (u16, String) {
        let mut r = ServiceRequest::new(service);
        for (k, v) in params {
            r = r.param(*k, *v);
        }
        self.post(&format!("/services/{service}/invoke"), Some(token), &protocol::encode_request(&r).unwrap())
    }

    fn directory(&self, token: &str) -> Vec<String> {
        let (status, body) = self.get("/directory", Some(token));
        assert_eq!(status, 200, "{body}");
        protocol::decode_directory(body.as_bytes()).unwrap().into_iter().map(|e| e.name).collect()
    }

    fn audit(&self) -> Vec<protocol::InvocationAuditRecord> {
        self.server.state().audit_log().since(0)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn error_code(body: &str) -> String {
    match protocol::decode_response(body.as_bytes()).unwrap() {
        ServiceResponse::Error { code, .. } => code,
        ok => panic!("expected error, got {ok:?}"),
    }
}

#[test]
fn directory_is_filtered_by_acl() {
    let f = start();
    assert_eq!(f.directory("alice-token"), ["customer-info"]);
    assert_eq!(f.directory("bob-token"), ["customer-contact"]);
    assert_eq!(f.directory("carol-token"), ["customer-contact"]);
    assert!(f.directory("dave-token").is_empty());
}

#[test]
fn authentication_failures_are_audited() {
    let f = start();
    assert_eq!(f.get("/directory", None).0, 401);
    let (status, body) = f.get("/directory", Some("nope"));
    assert_eq!(status, 401);
    assert_eq!(error_code(&body), "unauthorized");
    let log = f.audit();
    assert_eq!(log.len(), 2);
    assert!(log.iter().all(|r| r.outcome == "unauthorized" && r.user == "anonymous"));
}

#[test]
fn schema_endpoint() {
    let f = start();
    let (status, body) = f.get("/services/customer-info/schema", Some("alice-token"));
    assert_eq!(status, 200);
    let s = protocol::decode_schema(body.as_bytes()).unwrap();
    assert_eq!(s.keys.len(), 1);
    assert_eq!(s.columns.len(), 4);
    assert!(s.columns.iter().all(|c| c.ty == ValueType::Text));
    assert_eq!(s.refresh_seconds, 300);
    assert!(s.updatable());
    assert_eq!(f.get("/services/nope/schema", Some("alice-token")).0, 404);
    assert_eq!(f.get("/services/customer-info/schema", Some("bob-token")).0, 403);
}

#[test]
fn invoke_matches_golden_bytes() {
    let f = start();
    let (status, body) = f.invoke("alice-token", "customer-info", &[("customerID", "C001")]);
    assert_eq!(status, 200);
    assert_eq!(body, GOLDEN_OK);

    let (_, body) = f.invoke("alice-token", "customer-info", &[("customerID", "C002")]);
    let ServiceResponse::Ok { table, .. } = protocol::decode_response(body.as_bytes()).unwrap() else {
        panic!("{body}")
    };
    assert_eq!(table.rows()[0][3], Value::Null);
    assert_eq!(table.rows()[0][0], Value::text("Globex"));

    let (status, body) = f.invoke("bob-token", "customer-info", &[("customerID", "C001")]);
    assert_eq!((status, body.as_str()), (403, GOLDEN_FORBIDDEN));
    assert_eq!(f.audit().last().unwrap().outcome, "forbidden");

    let (status, body) = f.invoke("alice-token", "customer-info", &[]);
    assert_eq!((status, error_code(&body).as_str()), (400, "missing-param"));

    let (status, _) = f.post("/services/customer-info/invoke", Some("alice-token"), b"<nonsense");
    assert_eq!(status, 400);
    let wrong = protocol::encode_request(&ServiceRequest::new("customer-contact")).unwrap();
    assert_eq!(f.post("/services/customer-info/invoke", Some("alice-token"), &wrong).0, 400);
}

#[test]
fn transforms_are_evaluated() {
    let f = start();
    let (status, body) = f.invoke("carol-token", "customer-contact", &[("customerID", "C002")]);
    assert_eq!(status, 200, "{body}");
    let ServiceResponse::Ok { table, meta } = protocol::decode_response(body.as_bytes()).unwrap() else {
        panic!()
    };
    assert_eq!(table.rows(), &[vec![Value::text("Globex"), Value::text("Globex <555-0199>")]]);
    assert_eq!(meta.update_service, None);
    assert_eq!(meta.hints[0].format, "contact-line");
}

fn phone_update(service: &str, key: &str, column: &str) -> Vec<u8> {
    protocol::encode_update_request(&UpdateRequest {
        service: service.into(),
        rows: vec![WireUpdateRow {
            keys: vec![("customer_id".into(), Some(key.into()))],
            values: vec![(column.into(), Some("555-0111".into()))],
        }],
    })
    .unwrap()
}

#[test]
fn updates_write_through() {
    let f = start();
    let (status, body) = f.post("/services/customer-info/update", Some("alice-token"), &phone_update("customer-info", "C001", "phone"));
    assert_eq!(status, 200, "{body}");
    assert_eq!(protocol::decode_update_response(body.as_bytes()).unwrap(), Ok(1));
    assert!(std::fs::read_to_string(f.path("crm.csv")).unwrap().contains("C001,Acme Corp,1 Main St,555-0111"));
    let (_, body) = f.invoke("alice-token", "customer-info", &[("customerID", "C001")]);
    assert!(body.contains("<cell>555-0111</cell>"));
    assert_eq!(f.audit().iter().find(|r| r.action == "update").unwrap().rows, Some(1));
}

#[test]
fn update_rejections() {
    let f = start();
    let before = std::fs::read(f.path("crm.csv")).unwrap();
    let (status, body) = f.post("/services/customer-info/update", Some("alice-token"), &phone_update("customer-info", "C001", "name"));
    assert_eq!((status, error_code(&body).as_str()), (400, "column-not-writable"));
    let (status, body) = f.post("/services/customer-info/update", Some("alice-token"), &phone_update("customer-info", "C999", "phone"));
    assert_eq!((status, error_code(&body).as_str()), (409, "no-such-key"));
    let (status, _) = f.post("/services/customer-contact/update", Some("bob-token"), &phone_update("customer-contact", "C001", "phone"));
    assert_eq!(status, 405);
    let (status, _) = f.post("/services/customer-info/update", Some("bob-token"), &phone_update("customer-info", "C001", "phone"));
    assert_eq!(status, 403);
    assert_eq!(std::fs::read(f.path("crm.csv")).unwrap(), before);
}

#[test]
fn source_failure_is_502_with_resource() {
    let f = start();
    std::fs::remove_file(f.path("ratings.csv")).unwrap();
    let (status, body) = f.invoke("alice-token", "customer-info", &[("customerID", "C001")]);
    assert_eq!(status, 502);
    assert!(body.contains("ratings"), "{body}");
}

#[test]
fn reload_swaps_or_keeps() {
    let f = start();
    assert_eq!(f.post("/admin/reload", Some("alice-token"), b"").0, 403);

    std::fs::write(f.path("registry/broken.xml"), "<service name=\"broken\"").unwrap();
    let (status, body) = f.post("/admin/reload", Some("admin-token"), b"");
    assert_eq!((status, error_code(&body).as_str()), (409, "validation-failed"));
    assert_eq!(f.directory("alice-token"), ["customer-info"]);

    std::fs::remove_file(f.path("registry/broken.xml")).unwrap();
    let text = std::fs::read_to_string(f.path("registry/customer-contact.xml")).unwrap();
    std::fs::write(f.path("registry/customer-contact.xml"), text.replace("<group>sales</group>", "<group>finance</group>")).unwrap();
    let (status, body) = f.post("/admin/reload", Some("admin-token"), b"");
    assert_eq!(status, 200, "{body}");
    assert_eq!(
        protocol::decode_reload_summary(body.as_bytes()).unwrap(),
        protocol::ReloadSummary { services: 2, resources: 2 }
    );
    assert_eq!(f.directory("alice-token"), ["customer-contact", "customer-info"]);
}

#[test]
fn audit_log_reads() {
    let f = start();
    f.directory("alice-token");
    f.invoke("alice-token", "customer-info", &[("customerID", "C001")]);
    f.get("/services/customer-info/schema", Some("bob-token"));
    let (status, body) = f.get("/admin/audit?since=0", Some("admin-token"));
    assert_eq!(status, 200);
    let records = protocol::decode_audit_log(body.as_bytes()).unwrap();
    assert_eq!(records.iter().map(|r| r.sequence).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(records[1].params["customerID"], "C001");
    assert_eq!(records[2].outcome, "forbidden");

    let (_, body) = f.get("/admin/audit?since=4", Some("admin-token"));
    assert!(protocol::decode_audit_log(body.as_bytes()).unwrap().is_empty());
    assert_eq!(f.get("/admin/audit", Some("alice-token")).0, 403);

    // Earlier records stay byte-identical as the log grows.
    let disk = std::fs::read_to_string(f.path("audit.log")).unwrap();
    f.directory("bob-token");
    let grown = std::fs::read_to_string(f.path("audit.log")).unwrap();
    assert!(grown.starts_with(&disk));
    assert_eq!(grown.lines().count() as u64, f.server.state().audit_log().len());
}

//! XML documents exchanged between clients and the server.
//!
//! Encoders emit a canonical form: attributes in a fixed order, no XML
//! declaration, no whitespace between elements. Decoders accept the
//! canonical form plus insignificant whitespace between elements, and reject
//! unknown elements and attributes. `docs/protocol.md` lists every document.

use crate::connectors::UpdateRow;
use crate::model::{KeySource, ServiceDefinition};
use crate::table::{Column, Table};
use std::collections::BTreeMap;

use crate::value::{Timestamp, Value, ValueType};

pub(crate) mod xml;

use xml::{Elem, Writer};

pub const MEDIA_TYPE: &str = "application/xml";
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("decode error: {0}")]
pub struct DecodeError(pub String);

impl DecodeError {
    pub(crate) fn new(msg: impl Into<String>) -> Self {
        DecodeError(msg.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("character U+{:04X} cannot appear in XML", *.0 as u32)]
    IllegalChar(char),
}

fn ty(raw: &str) -> Result<ValueType, DecodeError> {
    raw.parse().map_err(|_| DecodeError::new(format!("unknown type {raw}")))
}

fn decode_value(ty: ValueType, text: &str) -> Result<Value, DecodeError> {
    Value::decode(ty, text).map_err(|e| DecodeError::new(e.to_string()))
}

// ---------------------------------------------------------------- request

/// `<service-request service="customer-info" version="1"><param name="customerID">C001</param></service-request>`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceRequest {
    pub service: String,
    pub version: u32,
    /// Parameter values in canonical text form, in order.
    pub params: Vec<(String, String)>,
}

impl ServiceRequest {
    pub fn new(service: impl Into<String>) -> Self {
        ServiceRequest {
            service: service.into(),
            version: PROTOCOL_VERSION,
            params: Vec::new(),
        }
    }

    pub fn param(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.params.push((name.into(), value.into()));
        self
    }
}

pub fn encode_request(r: &ServiceRequest) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::default();
    let version = r.version.to_string();
    w.open("service-request", &[("service", &r.service), ("version", &version)])?;
    for (name, value) in &r.params {
        w.leaf("param", &[("name", name)], value)?;
    }
    w.close("service-request");
    Ok(w.finish())
}

pub fn decode_request(bytes: &[u8]) -> Result<ServiceRequest, DecodeError> {
    let doc = xml::parse(bytes)?;
    let root = Elem::root(&doc, "service-request")?;
    root.attrs(&["service", "version"])?;
    let mut req = ServiceRequest {
        service: root.req("service")?.to_string(),
        version: root.number("version")?,
        params: Vec::new(),
    };
    for p in root.children()? {
        p.expect_name("param")?;
        p.attrs(&["name"])?;
        req.params.push((p.req("name")?.to_string(), p.text()?));
    }
    Ok(req)
}

// ---------------------------------------------------------------- response

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FormatHint {
    pub column: String,
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ResponseMeta {
    pub refresh_seconds: u32,
    pub update_service: Option<String>,
    pub hints: Vec<FormatHint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServiceResponse {
    Ok { meta: ResponseMeta, table: Table },
    Error { code: String, message: String },
}

impl ServiceResponse {
    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceResponse::Error {
            code: code.into(),
            message: message.into(),
        }
    }

    /// Successful response for `def` carrying `table`.
    pub fn for_service(def: &ServiceDefinition, table: Table) -> Self {
        ServiceResponse::Ok {
            meta: ResponseMeta {
                refresh_seconds: def.refresh_seconds,
                update_service: def.is_updatable().then(|| def.name.clone()),
                hints: def
                    .presentation
                    .iter()
                    .filter_map(|p| {
                        p.format.as_ref().map(|f| FormatHint {
                            column: p.element.clone(),
                            format: f.clone(),
                        })
                    })
                    .collect(),
            },
            table,
        }
    }
}

pub fn encode_response(r: &ServiceResponse) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::default();
    match r {
        ServiceResponse::Error { code, message } => {
            w.open("service-response", &[("status", "error")])?;
            w.leaf("error", &[("code", code)], message)?;
        }
        ServiceResponse::Ok { meta, table } => {
            w.open("service-response", &[("status", "ok")])?;
            write_meta(&mut w, meta)?;
            w.open("columns", &[])?;
            for c in table.columns() {
                w.empty("column", &[("name", &c.name), ("type", c.ty.as_str())])?;
            }
            w.close("columns");
            w.open("rows", &[])?;
            for row in table.rows() {
                w.open("row", &[])?;
                for cell in row {
                    if cell.is_null() {
                        w.empty("cell", &[("null", "true")])?;
                    } else {
                        w.leaf("cell", &[], &cell.encode())?;
                    }
                }
                w.close("row");
            }
            w.close("rows");
        }
    }
    w.close("service-response");
    Ok(w.finish())
}

pub fn decode_response(bytes: &[u8]) -> Result<ServiceResponse, DecodeError> {
    let doc = xml::parse(bytes)?;
    let root = Elem::root(&doc, "service-response")?;
    root.attrs(&["status"])?;
    let children = root.children()?;
    match root.req("status")? {
        "error" => {
            let [err] = children.as_slice() else {
                return Err(DecodeError::new("error response needs exactly one <error>"));
            };
            err.expect_name("error")?;
            err.attrs(&["code"])?;
            Ok(ServiceResponse::Error {
                code: err.req("code")?.to_string(),
                message: err.text()?,
            })
        }
        "ok" => {
            let [meta, columns, rows] = children.as_slice() else {
                return Err(DecodeError::new("ok response needs <meta>, <columns>, <rows>"));
            };
            let meta = decode_meta(meta)?;
            columns.expect_name("columns")?;
            columns.attrs(&[])?;
            let mut cols = Vec::new();
            for c in columns.children()? {
                c.expect_name("column")?;
                c.attrs(&["name", "type"])?;
                c.no_children()?;
                cols.push(Column::new(c.req("name")?, ty(c.req("type")?)?));
            }
            let mut table = Table::empty(cols).map_err(|e| DecodeError::new(e.to_string()))?;
            rows.expect_name("rows")?;
            rows.attrs(&[])?;
            for row in rows.children()? {
                row.expect_name("row")?;
                row.attrs(&[])?;
                let cells = row.children()?;
                if cells.len() != table.columns().len() {
                    return Err(DecodeError::new(format!(
                        "row has {} cells for {} columns",
                        cells.len(),
                        table.columns().len()
                    )));
                }
                let mut values = Vec::with_capacity(cells.len());
                for (cell, col) in cells.iter().zip(table.columns()) {
                    cell.expect_name("cell")?;
                    cell.attrs(&["null"])?;
                    if cell.flag("null")? {
                        cell.no_children()?;
                        values.push(Value::Null);
                    } else {
                        values.push(decode_value(col.ty, &cell.text()?)?);
                    }
                }
                table.push_row(values).map_err(|e| DecodeError::new(e.to_string()))?;
            }
            Ok(ServiceResponse::Ok { meta, table })
        }
        other => Err(DecodeError::new(format!("unknown status {other}"))),
    }
}

pub(crate) fn write_meta(w: &mut Writer, meta: &ResponseMeta) -> Result<(), EncodeError> {
    let refresh = meta.refresh_seconds.to_string();
    let mut attrs = vec![("refresh-seconds", refresh.as_str())];
    if let Some(u) = &meta.update_service {
        attrs.push(("update-service", u));
    }
    if meta.hints.is_empty() {
        w.empty("meta", &attrs)?;
    } else {
        w.open("meta", &attrs)?;
        for h in &meta.hints {
            w.empty("hint", &[("column", &h.column), ("format", &h.format)])?;
        }
        w.close("meta");
    }
    Ok(())
}

pub(crate) fn decode_meta(meta: &Elem) -> Result<ResponseMeta, DecodeError> {
    meta.expect_name("meta")?;
    meta.attrs(&["refresh-seconds", "update-service"])?;
    let mut hints = Vec::new();
    for h in meta.children()? {
        h.expect_name("hint")?;
        h.attrs(&["column", "format"])?;
        h.no_children()?;
        hints.push(FormatHint {
            column: h.req("column")?.to_string(),
            format: h.req("format")?.to_string(),
        });
    }
    Ok(ResponseMeta {
        refresh_seconds: meta.number("refresh-seconds")?,
        update_service: meta.opt("update-service").map(str::to_string),
        hints,
    })
}

// ---------------------------------------------------------------- updates

/// One row of an update request; `None` values are nulls.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WireUpdateRow {
    pub keys: Vec<(String, Option<String>)>,
    pub values: Vec<(String, Option<String>)>,
}

impl From<&UpdateRow> for WireUpdateRow {
    fn from(r: &UpdateRow) -> Self {
        let conv = |(k, v): (&String, &Value)| (k.clone(), (!v.is_null()).then(|| v.encode()));
        WireUpdateRow {
            keys: r.keys.iter().map(conv).collect(),
            values: r.values.iter().map(conv).collect(),
        }
    }
}

/// `<update-request service="s"><row><key column="k">v</key><set column="c">v</set></row></update-request>`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateRequest {
    pub service: String,
    pub rows: Vec<WireUpdateRow>,
}

fn write_field(w: &mut Writer, tag: &str, column: &str, value: &Option<String>) -> Result<(), EncodeError> {
    match value {
        Some(v) => w.leaf(tag, &[("column", column)], v)?,
        None => w.empty(tag, &[("column", column), ("null", "true")])?,
    };
    Ok(())
}

pub fn encode_update_request(r: &UpdateRequest) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::default();
    w.open("update-request", &[("service", &r.service)])?;
    for row in &r.rows {
        w.open("row", &[])?;
        for (c, v) in &row.keys {
            write_field(&mut w, "key", c, v)?;
        }
        for (c, v) in &row.values {
            write_field(&mut w, "set", c, v)?;
        }
        w.close("row");
    }
    w.close("update-request");
    Ok(w.finish())
}

pub fn decode_update_request(bytes: &[u8]) -> Result<UpdateRequest, DecodeError> {
    let doc = xml::parse(bytes)?;
    let root = Elem::root(&doc, "update-request")?;
    root.attrs(&["service"])?;
    let mut req = UpdateRequest {
        service: root.req("service")?.to_string(),
        rows: Vec::new(),
    };
    for row in root.children()? {
        row.expect_name("row")?;
        row.attrs(&[])?;
        let mut out = WireUpdateRow::default();
        for f in row.children()? {
            f.attrs(&["column", "null"])?;
            let value = if f.flag("null")? {
                f.no_children()?;
                None
            } else {
                Some(f.text()?)
            };
            let entry = (f.req("column")?.to_string(), value);
            match f.name() {
                "key" if out.values.is_empty() => out.keys.push(entry),
                "key" => return Err(DecodeError::new("<key> after <set>")),
                "set" => out.values.push(entry),
                other => return Err(DecodeError::new(format!("unknown element <{other}> in <row>"))),
            }
        }
        req.rows.push(out);
    }
    Ok(req)
}

/// `<update-response applied="1"/>`
pub fn encode_update_response(applied: usize) -> Vec<u8> {
    format!("<update-response applied=\"{applied}\"/>").into_bytes()
}

/// Accepts either an update response or an error service response.
pub fn decode_update_response(bytes: &[u8]) -> Result<Result<usize, (String, String)>, DecodeError> {
    let doc = xml::parse(bytes)?;
    let root = doc.root_element();
    if root.tag_name().name() == "service-response" {
        return match decode_response(bytes)? {
            ServiceResponse::Error { code, message } => Ok(Err((code, message))),
            ServiceResponse::Ok { .. } => Err(DecodeError::new("expected <update-response>")),
        };
    }
    let root = Elem::root(&doc, "update-response")?;
    root.attrs(&["applied"])?;
    root.no_children()?;
    Ok(Ok(root.number("applied")?))
}

// ---------------------------------------------------------------- directory

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct KeySummary {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DirectoryEntry {
    pub name: String,
    pub version: u32,
    pub description: String,
    pub keys: Vec<KeySummary>,
}

impl From<&ServiceDefinition> for DirectoryEntry {
    fn from(d: &ServiceDefinition) -> Self {
        DirectoryEntry {
            name: d.name.clone(),
            version: d.version,
            description: d.description.clone(),
            keys: key_summaries(d),
        }
    }
}

fn key_summaries(d: &ServiceDefinition) -> Vec<KeySummary> {
    d.key_params
        .iter()
        .map(|k| KeySummary {
            name: k.name.clone(),
            ty: k.ty,
            required: k.required,
        })
        .collect()
}

fn write_keys(w: &mut Writer, keys: &[KeySummary]) -> Result<(), EncodeError> {
    for k in keys {
        w.empty(
            "key",
            &[("name", &k.name), ("type", k.ty.as_str()), ("required", if k.required { "true" } else { "false" })],
        )?;
    }
    Ok(())
}

fn read_key(e: &Elem) -> Result<KeySummary, DecodeError> {
    e.attrs(&["name", "type", "required"])?;
    e.no_children()?;
    Ok(KeySummary {
        name: e.req("name")?.to_string(),
        ty: ty(e.req("type")?)?,
        required: e.flag("required")?,
    })
}

pub fn encode_directory(entries: &[DirectoryEntry]) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::default();
    w.open("directory", &[])?;
    for e in entries {
        let version = e.version.to_string();
        w.open("service", &[("name", &e.name), ("version", &version)])?;
        w.leaf("description", &[], &e.description)?;
        write_keys(&mut w, &e.keys)?;
        w.close("service");
    }
    w.close("directory");
    Ok(w.finish())
}

pub fn decode_directory(bytes: &[u8]) -> Result<Vec<DirectoryEntry>, DecodeError> {
    let doc = xml::parse(bytes)?;
    let root = Elem::root(&doc, "directory")?;
    root.attrs(&[])?;
    let mut out = Vec::new();
    for s in root.children()? {
        s.expect_name("service")?;
        s.attrs(&["name", "version"])?;
        let children = s.children()?;
        let Some((desc, keys)) = children.split_first() else {
            return Err(DecodeError::new("<service> needs <description>"));
        };
        desc.expect_name("description")?;
        desc.attrs(&[])?;
        out.push(DirectoryEntry {
            name: s.req("name")?.to_string(),
            version: s.number("version")?,
            description: desc.text()?,
            keys: keys
                .iter()
                .map(|k| {
                    k.expect_name("key")?;
                    read_key(k)
                })
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- schema

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SchemaColumn {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
    pub format: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct UpdateKey {
    pub column: String,
    pub source: KeySource,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WritableColumn {
    pub column: String,
    pub element: String,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct UpdateCapability {
    pub keys: Vec<UpdateKey>,
    pub writable: Vec<WritableColumn>,
}

/// Everything a client needs to bind and write back to a service.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ServiceSchema {
    pub name: String,
    pub version: u32,
    pub refresh_seconds: u32,
    pub keys: Vec<KeySummary>,
    pub columns: Vec<SchemaColumn>,
    pub update: Option<UpdateCapability>,
}

impl ServiceSchema {
    pub fn updatable(&self) -> bool {
        self.update.is_some()
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

impl From<&ServiceDefinition> for ServiceSchema {
    fn from(d: &ServiceDefinition) -> Self {
        let columns = d
            .output_columns()
            .into_iter()
            .zip(&d.presentation)
            .map(|(c, p)| SchemaColumn {
                name: c.name,
                ty: c.ty,
                format: p.format.clone(),
            })
            .collect();
        let update = d.update.as_ref().map(|_| UpdateCapability {
            keys: d
                .update_key_sources()
                .into_iter()
                .filter_map(|(column, s)| s.map(|source| UpdateKey { column, source }))
                .collect(),
            writable: d
                .update_writable_elements()
                .into_iter()
                .filter_map(|(column, e)| e.map(|element| WritableColumn { column, element }))
                .collect(),
        });
        ServiceSchema {
            name: d.name.clone(),
            version: d.version,
            refresh_seconds: d.refresh_seconds,
            keys: key_summaries(d),
            columns,
            update,
        }
    }
}

pub fn encode_schema(s: &ServiceSchema) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::default();
    write_schema(&mut w, s)?;
    Ok(w.finish())
}

pub(crate) fn write_schema(w: &mut Writer, s: &ServiceSchema) -> Result<(), EncodeError> {
    let version = s.version.to_string();
    let refresh = s.refresh_seconds.to_string();
    w.open(
        "service-schema",
        &[
            ("name", &s.name),
            ("version", &version),
            ("refresh-seconds", &refresh),
            ("updatable", if s.updatable() { "true" } else { "false" }),
        ],
    )?;
    write_keys(w, &s.keys)?;
    for c in &s.columns {
        let mut attrs = vec![("name", c.name.as_str()), ("type", c.ty.as_str())];
        if let Some(f) = &c.format {
            attrs.push(("format", f));
        }
        w.empty("column", &attrs)?;
    }
    if let Some(u) = &s.update {
        w.open("update", &[])?;
        for k in &u.keys {
            let (attr, name) = match &k.source {
                KeySource::Element(e) => ("element", e),
                KeySource::Param(p) => ("param", p),
            };
            w.empty("key", &[("column", &k.column), (attr, name)])?;
        }
        for c in &u.writable {
            w.empty("writable", &[("column", &c.column), ("element", &c.element)])?;
        }
        w.close("update");
    }
    w.close("service-schema");
    Ok(())
}

pub fn decode_schema(bytes: &[u8]) -> Result<ServiceSchema, DecodeError> {
    let doc = xml::parse(bytes)?;
    read_schema(&Elem::root(&doc, "service-schema")?)
}

pub(crate) fn read_schema(root: &Elem) -> Result<ServiceSchema, DecodeError> {
    root.expect_name("service-schema")?;
    root.attrs(&["name", "version", "refresh-seconds", "updatable"])?;
    let mut schema = ServiceSchema {
        name: root.req("name")?.to_string(),
        version: root.number("version")?,
        refresh_seconds: root.number("refresh-seconds")?,
        keys: Vec::new(),
        columns: Vec::new(),
        update: None,
    };
    for c in root.children()? {
        match c.name() {
            "key" if schema.columns.is_empty() => schema.keys.push(read_key(&c)?),
            "column" if schema.update.is_none() => {
                c.attrs(&["name", "type", "format"])?;
                c.no_children()?;
                schema.columns.push(SchemaColumn {
                    name: c.req("name")?.to_string(),
                    ty: ty(c.req("type")?)?,
                    format: c.opt("format").map(str::to_string),
                });
            }
            "update" if schema.update.is_none() => {
                c.attrs(&[])?;
                let mut cap = UpdateCapability {
                    keys: Vec::new(),
                    writable: Vec::new(),
                };
                for u in c.children()? {
                    u.no_children()?;
                    match u.name() {
                        "key" => {
                            u.attrs(&["column", "element", "param"])?;
                            let source = match (u.opt("element"), u.opt("param")) {
                                (Some(e), None) => KeySource::Element(e.to_string()),
                                (None, Some(p)) => KeySource::Param(p.to_string()),
                                _ => return Err(DecodeError::new("update <key> needs exactly one of element, param")),
                            };
                            cap.keys.push(UpdateKey {
                                column: u.req("column")?.to_string(),
                                source,
                            });
                        }
                        "writable" => {
                            u.attrs(&["column", "element"])?;
                            cap.writable.push(WritableColumn {
                                column: u.req("column")?.to_string(),
                                element: u.req("element")?.to_string(),
                            });
                        }
                        other => return Err(DecodeError::new(format!("unknown element <{other}> in <update>"))),
                    }
                }
                schema.update = Some(cap);
            }
            other => return Err(DecodeError::new(format!("unexpected <{other}> in <service-schema>"))),
        }
    }
    if root.flag("updatable")? != schema.updatable() {
        return Err(DecodeError::new("updatable flag disagrees with <update>"));
    }
    Ok(schema)
}

// ---------------------------------------------------------------- reload

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReloadSummary {
    pub services: usize,
    pub resources: usize,
}

pub fn encode_reload_summary(s: &ReloadSummary) -> Vec<u8> {
    format!("<reload-summary services=\"{}\" resources=\"{}\"/>", s.services, s.resources).into_bytes()
}

pub fn decode_reload_summary(bytes: &[u8]) -> Result<ReloadSummary, DecodeError> {
    let doc = xml::parse(bytes)?;
    let root = Elem::root(&doc, "reload-summary")?;
    root.attrs(&["services", "resources"])?;
    root.no_children()?;
    Ok(ReloadSummary {
        services: root.number("services")?,
        resources: root.number("resources")?,
    })
}

// ---------------------------------------------------------------- audit

/// One line of the server's invocation audit log.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct InvocationAuditRecord {
    pub sequence: u64,
    pub timestamp: Timestamp,
    pub user: String,
    pub action: String,
    pub service: Option<String>,
    /// Request parameters in canonical text form.
    pub params: BTreeMap<String, String>,
    /// `ok` or an error code.
    pub outcome: String,
    /// Rows returned or applied, when meaningful.
    pub rows: Option<u64>,
}

fn write_audit_record(w: &mut Writer, r: &InvocationAuditRecord) -> Result<(), EncodeError> {
    let seq = r.sequence.to_string();
    let ts = r.timestamp.to_string();
    let rows = r.rows.map(|n| n.to_string());
    let mut attrs = vec![("sequence", seq.as_str()), ("timestamp", &ts), ("user", &r.user), ("action", &r.action)];
    if let Some(s) = &r.service {
        attrs.push(("service", s));
    }
    attrs.push(("outcome", &r.outcome));
    if let Some(n) = &rows {
        attrs.push(("rows", n));
    }
    if r.params.is_empty() {
        w.empty("audit-record", &attrs)?;
    } else {
        w.open("audit-record", &attrs)?;
        for (k, v) in &r.params {
            w.empty("param", &[("name", k), ("value", v)])?;
        }
        w.close("audit-record");
    }
    Ok(())
}

fn read_audit_record(e: &Elem) -> Result<InvocationAuditRecord, DecodeError> {
    e.expect_name("audit-record")?;
    e.attrs(&["sequence", "timestamp", "user", "action", "service", "outcome", "rows"])?;
    let mut params = BTreeMap::new();
    for p in e.children()? {
        p.expect_name("param")?;
        p.attrs(&["name", "value"])?;
        p.no_children()?;
        if params.insert(p.req("name")?.to_string(), p.req("value")?.to_string()).is_some() {
            return Err(DecodeError::new("repeated audit param"));
        }
    }
    Ok(InvocationAuditRecord {
        sequence: e.number("sequence")?,
        timestamp: e.req("timestamp")?.parse().map_err(|_| DecodeError::new("bad audit timestamp"))?,
        user: e.req("user")?.to_string(),
        action: e.req("action")?.to_string(),
        service: e.opt("service").map(str::to_string),
        params,
        outcome: e.req("outcome")?.to_string(),
        rows: e.opt("rows").map(|_| e.number("rows")).transpose()?,
    })
}

/// A single line with no trailing newline; newlines in values are escaped.
pub fn encode_audit_record(r: &InvocationAuditRecord) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::default();
    write_audit_record(&mut w, r)?;
    Ok(w.finish())
}

pub fn decode_audit_record(bytes: &[u8]) -> Result<InvocationAuditRecord, DecodeError> {
    let doc = xml::parse(bytes)?;
    read_audit_record(&Elem::root(&doc, "audit-record")?)
}

/// `<audit-log>` holding records in sequence order.
pub fn encode_audit_log(records: &[InvocationAuditRecord]) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer::default();
    w.open("audit-log", &[])?;
    for r in records {
        write_audit_record(&mut w, r)?;
    }
    w.close("audit-log");
    Ok(w.finish())
}

pub fn decode_audit_log(bytes: &[u8]) -> Result<Vec<InvocationAuditRecord>, DecodeError> {
    let doc = xml::parse(bytes)?;
    let root = Elem::root(&doc, "audit-log")?;
    root.attrs(&[])?;
    root.children()?.iter().map(read_audit_record).collect()
}

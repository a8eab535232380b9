//! Uniform fetch and update access to back-end sources.
//!
//! Each resource kind has its own extraction rule shape:
//!
//! * `tabular-file`: projection plus `column == :param` equality filters over a
//!   CSV file with a header row.
//! * `relational`: an SQL template with named `:param` placeholders, run
//!   against an embedded database file. Parameters are always bound, never
//!   spliced into the text.
//! * `http-xml`: a URL template with `{param}` holes, a slash-separated row
//!   path and per-column child element paths.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use crate::model::{ResourceDescriptor, ResourceKind, UpdateSpec};
use crate::table::{Column, Table};
use crate::value::Value;

pub mod http;
pub mod relational;
pub mod tabular;

pub const USER_AGENT: &str = "infoflow-connector/1";

/// Parameter values keyed by parameter name.
pub type Params = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterTerm {
    pub column: String,
    pub param: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TabularRule {
    pub projection: Vec<Column>,
    /// Terms whose parameter is absent from the call are skipped.
    pub filter: Vec<FilterTerm>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationalRule {
    pub template: String,
    /// Expected result columns, in order.
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldPath {
    pub column: Column,
    /// Child element path relative to a row element.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRule {
    /// Absolute URL, or a path appended to the resource location.
    pub url_template: String,
    pub row_path: String,
    pub fields: Vec<FieldPath>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractionRule {
    Tabular(TabularRule),
    Relational(RelationalRule),
    HttpXml(HttpRule),
}

impl ExtractionRule {
    pub fn kind(&self) -> ResourceKind {
        match self {
            ExtractionRule::Tabular(_) => ResourceKind::TabularFile,
            ExtractionRule::Relational(_) => ResourceKind::Relational,
            ExtractionRule::HttpXml(_) => ResourceKind::HttpXml,
        }
    }

    /// Parameter names referenced by placeholders in the rule's templates.
    pub fn placeholders(&self) -> Vec<String> {
        match self {
            ExtractionRule::Tabular(r) => r.filter.iter().map(|f| f.param.clone()).collect(),
            ExtractionRule::Relational(r) => relational::placeholders(&r.template),
            ExtractionRule::HttpXml(r) => http::placeholders(&r.url_template),
        }
    }

    pub fn output_columns(&self) -> Vec<&Column> {
        match self {
            ExtractionRule::Tabular(r) => r.projection.iter().collect(),
            ExtractionRule::Relational(r) => r.columns.iter().collect(),
            ExtractionRule::HttpXml(r) => r.fields.iter().map(|f| &f.column).collect(),
        }
    }
}

/// One keyed overwrite.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateRow {
    pub keys: BTreeMap<String, Value>,
    pub values: BTreeMap<String, Value>,
}

impl UpdateRow {
    pub fn describe_key(&self) -> String {
        self.keys
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConnectorError {
    #[error("source unavailable: {resource}: {reason}")]
    SourceUnavailable {
        resource: String,
        reason: String,
        status: Option<u16>,
    },
    #[error("schema mismatch in {resource}: {detail}")]
    SchemaMismatch { resource: String, detail: String },
    #[error("missing parameter: {0}")]
    MissingParam(String),
    #[error("cannot decode {resource}: {detail}")]
    DecodeError { resource: String, detail: String },
    #[error("updates not supported by {0}")]
    UpdateUnsupported(String),
    #[error("no row in {resource} matches {key}")]
    NoSuchKey { resource: String, key: String },
    #[error("rule for {rule} used against {resource} resource")]
    KindMismatch { resource: ResourceKind, rule: ResourceKind },
    #[error("invalid update for {resource}: {detail}")]
    InvalidUpdate { resource: String, detail: String },
}

impl ConnectorError {
    pub(crate) fn unavailable(res: &ResourceDescriptor, reason: impl ToString) -> Self {
        ConnectorError::SourceUnavailable {
            resource: res.id.clone(),
            reason: reason.to_string(),
            status: None,
        }
    }

    pub(crate) fn schema(res: &ResourceDescriptor, detail: impl ToString) -> Self {
        ConnectorError::SchemaMismatch {
            resource: res.id.clone(),
            detail: detail.to_string(),
        }
    }

    pub(crate) fn decode(res: &ResourceDescriptor, detail: impl ToString) -> Self {
        ConnectorError::DecodeError {
            resource: res.id.clone(),
            detail: detail.to_string(),
        }
    }
}

/// Anything that can turn a resource plus rule into a table.
pub trait Source: Sync {
    fn fetch(&self, res: &ResourceDescriptor, rule: &ExtractionRule, params: &Params) -> Result<Table, ConnectorError>;
}

/// The stock connectors. Relative file locations resolve against `base_dir`.
#[derive(Debug, Clone, Default)]
pub struct Connectors {
    base_dir: Option<PathBuf>,
    secrets: HashMap<String, String>,
}

impl Connectors {
    pub fn new() -> Self {
        Connectors::default()
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn with_secrets(mut self, secrets: HashMap<String, String>) -> Self {
        self.secrets = secrets;
        self
    }

    pub(crate) fn path_of(&self, res: &ResourceDescriptor) -> PathBuf {
        let p = PathBuf::from(&res.location);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        }
    }

    pub(crate) fn secret_for(&self, res: &ResourceDescriptor) -> Result<Option<&str>, ConnectorError> {
        match &res.credentials_ref {
            None => Ok(None),
            Some(key) => self
                .secrets
                .get(key)
                .map(|s| Some(s.as_str()))
                .ok_or_else(|| ConnectorError::unavailable(res, format!("no secret named {key}"))),
        }
    }

    pub fn fetch_tabular(&self, res: &ResourceDescriptor, rule: &TabularRule, params: &Params) -> Result<Table, ConnectorError> {
        expect_kind(res, ResourceKind::TabularFile)?;
        tabular::fetch(&self.path_of(res), res, rule, params)
    }

    pub fn fetch_relational(&self, res: &ResourceDescriptor, rule: &RelationalRule, params: &Params) -> Result<Table, ConnectorError> {
        expect_kind(res, ResourceKind::Relational)?;
        relational::fetch(&self.path_of(res), res, rule, params)
    }

    pub fn fetch_http(&self, res: &ResourceDescriptor, rule: &HttpRule, params: &Params) -> Result<Table, ConnectorError> {
        expect_kind(res, ResourceKind::HttpXml)?;
        http::fetch(res, rule, params, self.secret_for(res)?)
    }

    /// Applies a batch of keyed overwrites. All-or-nothing: if any row
    /// matches nothing, the source is left untouched.
    pub fn apply_update(&self, res: &ResourceDescriptor, spec: &UpdateSpec, rows: &[UpdateRow]) -> Result<usize, ConnectorError> {
        if !res.writable || res.kind == ResourceKind::HttpXml {
            return Err(ConnectorError::UpdateUnsupported(res.id.clone()));
        }
        for row in rows {
            check_update_row(res, spec, row)?;
        }
        match res.kind {
            ResourceKind::TabularFile => tabular::apply_update(&self.path_of(res), res, rows),
            ResourceKind::Relational => {
                let table = spec.table.as_deref().ok_or_else(|| ConnectorError::InvalidUpdate {
                    resource: res.id.clone(),
                    detail: "relational update needs a target table".into(),
                })?;
                relational::apply_update(&self.path_of(res), res, table, rows)
            }
            ResourceKind::HttpXml => unreachable!(),
        }
    }
}

impl Source for Connectors {
    fn fetch(&self, res: &ResourceDescriptor, rule: &ExtractionRule, params: &Params) -> Result<Table, ConnectorError> {
        match rule {
            ExtractionRule::Tabular(r) => self.fetch_tabular(res, r, params),
            ExtractionRule::Relational(r) => self.fetch_relational(res, r, params),
            ExtractionRule::HttpXml(r) => self.fetch_http(res, r, params),
        }
    }
}

fn expect_kind(res: &ResourceDescriptor, kind: ResourceKind) -> Result<(), ConnectorError> {
    if res.kind == kind {
        Ok(())
    } else {
        Err(ConnectorError::KindMismatch {
            resource: res.kind,
            rule: kind,
        })
    }
}

fn check_update_row(res: &ResourceDescriptor, spec: &UpdateSpec, row: &UpdateRow) -> Result<(), ConnectorError> {
    let invalid = |detail: String| ConnectorError::InvalidUpdate {
        resource: res.id.clone(),
        detail,
    };
    if row.keys.is_empty() || row.values.is_empty() {
        return Err(invalid("update row needs key and new values".into()));
    }
    for k in row.keys.keys() {
        if row.values.contains_key(k) {
            return Err(invalid(format!("column {k} is both key and new value")));
        }
        if !spec.key_columns.contains(k) {
            return Err(invalid(format!("{k} is not a key column")));
        }
    }
    for c in row.values.keys() {
        if !spec.writable_columns.contains(c) {
            return Err(invalid(format!("column {c} is not writable")));
        }
    }
    Ok(())
}

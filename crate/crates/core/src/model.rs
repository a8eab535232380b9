//! Resources, service definitions, principals and access control.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assembly::expr::{self, Expr};
use crate::connectors::ExtractionRule;
use crate::table::Column;
use crate::value::ValueType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceKind {
    TabularFile,
    Relational,
    HttpXml,
}

impl ResourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::TabularFile => "tabular-file",
            ResourceKind::Relational => "relational",
            ResourceKind::HttpXml => "http-xml",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tabular-file" => Ok(ResourceKind::TabularFile),
            "relational" => Ok(ResourceKind::Relational),
            "http-xml" => Ok(ResourceKind::HttpXml),
            other => Err(format!("unknown resource kind: {other}")),
        }
    }
}

/// A back-end data source.
///
/// `location` is a file path for `tabular-file` and `relational` (an embedded
/// database file) resources, and a base URL for `http-xml` ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceDescriptor {
    pub id: String,
    pub kind: ResourceKind,
    pub location: String,
    pub credentials_ref: Option<String>,
    pub writable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyParam {
    pub name: String,
    pub ty: ValueType,
    pub required: bool,
}

/// Ties a service key parameter to the column that holds it in one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyBinding {
    pub param: String,
    pub column: String,
}

/// One output element sourced from a resource column.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementMapping {
    pub element: String,
    pub ty: ValueType,
    pub resource_id: String,
    pub source_column: String,
    pub key_bindings: Vec<KeyBinding>,
    /// Explicit rule for relational and http-xml sources. Tabular rules are
    /// derived from the key bindings and source columns.
    pub rule: Option<ExtractionRule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub element: String,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentationColumn {
    pub element: String,
    pub format: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateSpec {
    pub resource_id: String,
    /// Target table; only used for relational resources.
    pub table: Option<String>,
    pub key_columns: Vec<String>,
    pub writable_columns: Vec<String>,
}

/// Where the value for an update key column comes from on the client side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "from", content = "name")]
pub enum KeySource {
    /// A presented element whose cell holds the key.
    Element(String),
    /// The service key parameter bound to this column.
    Param(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessControlList {
    pub users: BTreeSet<String>,
    pub groups: BTreeSet<String>,
}

impl AccessControlList {
    pub fn with_users<I, S>(mut self, users: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.users.extend(users.into_iter().map(Into::into));
        self
    }

    pub fn with_groups<I, S>(mut self, groups: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.groups.extend(groups.into_iter().map(Into::into));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub user_id: String,
    pub groups: BTreeSet<String>,
}

impl Principal {
    pub fn new<I, S>(user_id: impl Into<String>, groups: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Principal {
            user_id: user_id.into(),
            groups: groups.into_iter().map(Into::into).collect(),
        }
    }

    pub fn in_group(&self, group: &str) -> bool {
        self.groups.contains(group)
    }
}

/// Default deny: an empty list admits nobody.
pub fn check_access(acl: &AccessControlList, p: &Principal) -> bool {
    acl.users.contains(&p.user_id) || !acl.groups.is_disjoint(&p.groups)
}

/// A named, versioned recipe for assembling one information entity.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceDefinition {
    pub name: String,
    pub version: u32,
    pub description: String,
    pub key_params: Vec<KeyParam>,
    pub anchor: String,
    pub mappings: Vec<ElementMapping>,
    pub transforms: Vec<Transform>,
    pub presentation: Vec<PresentationColumn>,
    pub refresh_seconds: u32,
    pub update: Option<UpdateSpec>,
    pub acl: AccessControlList,
}

impl ServiceDefinition {
    pub fn key_param(&self, name: &str) -> Option<&KeyParam> {
        self.key_params.iter().find(|k| k.name == name)
    }

    pub fn mapping(&self, element: &str) -> Option<&ElementMapping> {
        self.mappings.iter().find(|m| m.element == element)
    }

    pub fn mappings_for<'a>(&'a self, resource: &'a str) -> impl Iterator<Item = &'a ElementMapping> + 'a {
        self.mappings.iter().filter(move |m| m.resource_id == resource)
    }

    /// Non-anchor resources in order of first mention.
    pub fn enrichment_resources(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for m in &self.mappings {
            if m.resource_id != self.anchor && !out.contains(&m.resource_id.as_str()) {
                out.push(&m.resource_id);
            }
        }
        out
    }

    /// Types of every mapped element and transform output. Transform types
    /// are inferred; an ill-typed transform is reported as text here and
    /// flagged by validation.
    pub fn element_types(&self) -> HashMap<String, ValueType> {
        let mut types: HashMap<String, ValueType> =
            self.mappings.iter().map(|m| (m.element.clone(), m.ty)).collect();
        for t in &self.transforms {
            let ty = expr::infer_type(&t.expr, &types).unwrap_or(ValueType::Text);
            types.insert(t.element.clone(), ty);
        }
        types
    }

    /// Output columns in presentation order.
    pub fn output_columns(&self) -> Vec<Column> {
        let types = self.element_types();
        self.presentation
            .iter()
            .map(|p| Column::new(p.element.clone(), types.get(&p.element).copied().unwrap_or(ValueType::Text)))
            .collect()
    }

    pub fn is_updatable(&self) -> bool {
        self.update.is_some()
    }

    /// For each update key column, the presented element or key parameter
    /// that supplies its value.
    pub fn update_key_sources(&self) -> Vec<(String, Option<KeySource>)> {
        let Some(spec) = &self.update else {
            return Vec::new();
        };
        spec.key_columns
            .iter()
            .map(|col| (col.clone(), self.key_source(&spec.resource_id, col)))
            .collect()
    }

    fn key_source(&self, resource: &str, column: &str) -> Option<KeySource> {
        let presented = |e: &str| self.presentation.iter().any(|p| p.element == e);
        if let Some(m) = self
            .mappings_for(resource)
            .find(|m| m.source_column == column && presented(&m.element))
        {
            return Some(KeySource::Element(m.element.clone()));
        }
        self.mappings_for(resource)
            .flat_map(|m| &m.key_bindings)
            .find(|kb| kb.column == column)
            .map(|kb| KeySource::Param(kb.param.clone()))
    }

    /// For each writable column, the presented element that carries it.
    pub fn update_writable_elements(&self) -> Vec<(String, Option<String>)> {
        let Some(spec) = &self.update else {
            return Vec::new();
        };
        spec.writable_columns
            .iter()
            .map(|col| {
                let element = self
                    .mappings_for(&spec.resource_id)
                    .find(|m| &m.source_column == col && self.presentation.iter().any(|p| p.element == m.element))
                    .map(|m| m.element.clone());
                (col.clone(), element)
            })
            .collect()
    }

    /// Declared type of a source column on `resource`, taken from the element
    /// or key parameter bound to it. Unknown columns are text.
    pub fn source_column_type(&self, resource: &str, column: &str) -> ValueType {
        for m in self.mappings_for(resource) {
            if m.source_column == column {
                return m.ty;
            }
        }
        for m in self.mappings_for(resource) {
            for kb in &m.key_bindings {
                if kb.column == column {
                    if let Some(k) = self.key_param(&kb.param) {
                        return k.ty;
                    }
                }
            }
        }
        ValueType::Text
    }
}

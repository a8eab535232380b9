//! The service registry: XML resource and service documents in one
//! directory, validated as a whole.
//!
//! Every `*.xml` file in the directory is one document whose root element is
//! either `<resource>` or `<service>`. See `docs/registry-format.md` for the
//! grammar.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use roxmltree::{Document, Node};

use crate::assembly::expr::{infer_type, parse_expr};
use crate::connectors::{ExtractionRule, FieldPath, HttpRule, RelationalRule};
use crate::model::{
    AccessControlList, ElementMapping, KeyBinding, KeyParam, PresentationColumn, ResourceDescriptor, ResourceKind,
    ServiceDefinition, Transform, UpdateSpec,
};
use crate::table::Column;
use crate::value::ValueType;

/// One broken rule in a service definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Path of the offending field, e.g. `mappings[2].resource`.
    pub field: String,
    /// Rule and offending value, e.g. `unknown resource: erp`.
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.message, self.field)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{}:{line}: {message}", file.display())]
pub struct ParseError {
    pub file: PathBuf,
    pub line: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileViolations {
    pub file: PathBuf,
    pub violations: Vec<Violation>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("registry validation failed: {}", describe(.0))]
    Validation(Vec<FileViolations>),
}

fn describe(failures: &[FileViolations]) -> String {
    failures
        .iter()
        .flat_map(|f| f.violations.iter().map(move |v| format!("{}: {v}", f.file.display())))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Immutable set of resources and services.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    base_dir: Option<PathBuf>,
    resources: BTreeMap<String, ResourceDescriptor>,
    services: BTreeMap<String, ServiceDefinition>,
}

impl Registry {
    /// Builds a registry from in-memory parts, validating every service.
    pub fn from_parts(
        resources: Vec<ResourceDescriptor>,
        services: Vec<ServiceDefinition>,
    ) -> Result<Registry, RegistryError> {
        let docs = resources
            .into_iter()
            .map(|r| (PathBuf::from(format!("<resource {}>", r.id)), Doc::Resource(r)))
            .chain(
                services
                    .into_iter()
                    .map(|s| (PathBuf::from(format!("<service {}>", s.name)), Doc::Service(Box::new(s)))),
            )
            .collect();
        assemble(None, docs)
    }

    /// Directory relative resource locations resolve against.
    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn resources(&self) -> &BTreeMap<String, ResourceDescriptor> {
        &self.resources
    }

    pub fn resource(&self, id: &str) -> Option<&ResourceDescriptor> {
        self.resources.get(id)
    }

    pub fn service(&self, name: &str) -> Option<&ServiceDefinition> {
        self.services.get(name)
    }

    /// Services in name order.
    pub fn services(&self) -> impl Iterator<Item = &ServiceDefinition> {
        self.services.values()
    }

    pub fn service_count(&self) -> usize {
        self.services.len()
    }
}

enum Doc {
    Resource(ResourceDescriptor),
    Service(Box<ServiceDefinition>),
}

fn assemble(base_dir: Option<PathBuf>, docs: Vec<(PathBuf, Doc)>) -> Result<Registry, RegistryError> {
    let mut resources = BTreeMap::new();
    let mut failures: Vec<FileViolations> = Vec::new();
    let mut fail = |file: &Path, v: Violation| match failures.iter_mut().find(|f| f.file == file) {
        Some(f) => f.violations.push(v),
        None => failures.push(FileViolations {
            file: file.to_path_buf(),
            violations: vec![v],
        }),
    };
    let mut services: Vec<(PathBuf, ServiceDefinition)> = Vec::new();
    for (file, doc) in docs {
        match doc {
            Doc::Resource(r) => {
                if r.id.is_empty() {
                    fail(&file, Violation::new("id", "empty resource id"));
                } else if r.location.is_empty() {
                    fail(&file, Violation::new("location", format!("empty location: {}", r.id)));
                } else if resources.contains_key(&r.id) {
                    fail(&file, Violation::new("id", format!("duplicate resource: {}", r.id)));
                } else {
                    resources.insert(r.id.clone(), r);
                }
            }
            Doc::Service(s) => services.push((file, *s)),
        }
    }
    let mut by_name = BTreeMap::new();
    for (file, s) in services {
        for v in validate_service_definition(&s, &resources) {
            fail(&file, v);
        }
        if by_name.contains_key(&s.name) {
            fail(&file, Violation::new("name", format!("duplicate service: {}", s.name)));
        } else {
            by_name.insert(s.name.clone(), s);
        }
    }
    if !failures.is_empty() {
        return Err(RegistryError::Validation(failures));
    }
    Ok(Registry {
        base_dir,
        resources,
        services: by_name,
    })
}

/// Loads every XML document in `dir`. Fails as a whole if any document is
/// malformed or any service violates a rule.
pub fn load_registry(dir: impl AsRef<Path>) -> Result<Registry, RegistryError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RegistryError::Io { path, source }
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io(dir))?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "xml"));
    files.sort();
    let mut docs = Vec::with_capacity(files.len());
    for file in files {
        let text = fs::read_to_string(&file).map_err(io(&file))?;
        let doc = parse_document(&file, &text)?;
        docs.push((file, doc));
    }
    assemble(Some(dir.to_path_buf()), docs)
}

/// Parses one registry document.
pub fn parse_resource(file: &Path, text: &str) -> Result<ResourceDescriptor, ParseError> {
    match parse_document(file, text)? {
        Doc::Resource(r) => Ok(r),
        Doc::Service(_) => Err(ParseError {
            file: file.to_path_buf(),
            line: 1,
            message: "expected <resource>".into(),
        }),
    }
}

pub fn parse_service(file: &Path, text: &str) -> Result<ServiceDefinition, ParseError> {
    match parse_document(file, text)? {
        Doc::Service(s) => Ok(*s),
        Doc::Resource(_) => Err(ParseError {
            file: file.to_path_buf(),
            line: 1,
            message: "expected <service>".into(),
        }),
    }
}

struct Ctx<'a, 'i> {
    file: &'a Path,
    doc: &'a Document<'i>,
}

impl<'a, 'i> Ctx<'a, 'i> {
    fn err(&self, node: Node, message: impl Into<String>) -> ParseError {
        ParseError {
            file: self.file.to_path_buf(),
            line: self.doc.text_pos_at(node.range().start).row,
            message: message.into(),
        }
    }

    fn attrs(&self, node: Node, allowed: &[&str]) -> Result<(), ParseError> {
        for a in node.attributes() {
            if !allowed.contains(&a.name()) {
                return Err(self.err(node, format!("unknown attribute {} on <{}>", a.name(), node.tag_name().name())));
            }
        }
        Ok(())
    }

    fn req<'n>(&self, node: Node<'n, 'i>, name: &str) -> Result<&'n str, ParseError> {
        node.attribute(name)
            .ok_or_else(|| self.err(node, format!("<{}> needs attribute {name}", node.tag_name().name())))
    }

    fn boolean(&self, node: Node, name: &str, default: bool) -> Result<bool, ParseError> {
        match node.attribute(name) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => Err(self.err(node, format!("{name} must be true or false, got {other}"))),
        }
    }

    fn positive(&self, node: Node, name: &str) -> Result<u32, ParseError> {
        let raw = self.req(node, name)?;
        raw.parse::<u32>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| self.err(node, format!("{name} must be a positive integer, got {raw}")))
    }

    fn value_type(&self, node: Node, name: &str) -> Result<ValueType, ParseError> {
        match node.attribute(name) {
            None => Ok(ValueType::Text),
            Some(raw) => raw.parse().map_err(|_| self.err(node, format!("unknown type {raw}"))),
        }
    }

    fn elements<'n>(&self, node: Node<'n, 'i>) -> Result<Vec<Node<'n, 'i>>, ParseError> {
        let mut out = Vec::new();
        for c in node.children() {
            if c.is_element() {
                out.push(c);
            } else if c.is_text() && !c.text().unwrap_or("").trim().is_empty() {
                return Err(self.err(c, format!("unexpected text in <{}>", node.tag_name().name())));
            }
        }
        Ok(out)
    }

    fn text(&self, node: Node) -> Result<String, ParseError> {
        if node.children().any(|c| c.is_element()) {
            return Err(self.err(node, format!("<{}> must contain only text", node.tag_name().name())));
        }
        Ok(node.text().unwrap_or("").to_string())
    }
}

fn parse_document(file: &Path, text: &str) -> Result<Doc, ParseError> {
    let doc = Document::parse(text).map_err(|e| ParseError {
        file: file.to_path_buf(),
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let ctx = Ctx { file, doc: &doc };
    let root = doc.root_element();
    match root.tag_name().name() {
        "resource" => parse_resource_node(&ctx, root).map(Doc::Resource),
        "service" => parse_service_node(&ctx, root).map(|s| Doc::Service(Box::new(s))),
        other => Err(ctx.err(root, format!("unknown document type <{other}>"))),
    }
}

fn parse_resource_node(ctx: &Ctx, node: Node) -> Result<ResourceDescriptor, ParseError> {
    ctx.attrs(node, &["id", "kind", "location", "credentials-ref", "writable"])?;
    if let Some(child) = ctx.elements(node)?.first() {
        return Err(ctx.err(*child, "<resource> takes no children"));
    }
    let kind = ctx.req(node, "kind")?;
    Ok(ResourceDescriptor {
        id: ctx.req(node, "id")?.to_string(),
        kind: kind.parse().map_err(|e: String| ctx.err(node, e))?,
        location: ctx.req(node, "location")?.to_string(),
        credentials_ref: node.attribute("credentials-ref").map(str::to_string),
        writable: ctx.boolean(node, "writable", false)?,
    })
}

/// Section order inside `<service>`; children must not go backwards.
fn section(tag: &str) -> Option<u8> {
    Some(match tag {
        "description" => 0,
        "key" => 1,
        "element" => 2,
        "transform" => 3,
        "presentation" => 4,
        "update" => 5,
        "acl" => 6,
        _ => return None,
    })
}

fn parse_service_node(ctx: &Ctx, node: Node) -> Result<ServiceDefinition, ParseError> {
    ctx.attrs(node, &["name", "version", "refresh-seconds", "anchor"])?;
    let name = ctx.req(node, "name")?.to_string();
    let version = ctx.positive(node, "version")?;
    let refresh_seconds = ctx.positive(node, "refresh-seconds")?;
    let mut description = String::new();
    let mut key_params = Vec::new();
    let mut mappings = Vec::new();
    let mut transforms = Vec::new();
    let mut presentation: Option<Vec<PresentationColumn>> = None;
    let mut update = None;
    let mut acl = AccessControlList::default();
    // Rules carry column names only until every element type is known.
    let mut pending_rules: Vec<(usize, PendingRule)> = Vec::new();

    let mut last = 0u8;
    let mut seen_once: HashSet<&str> = HashSet::new();
    for child in ctx.elements(node)? {
        let tag = child.tag_name().name();
        let Some(order) = section(tag) else {
            return Err(ctx.err(child, format!("unknown element <{tag}> in <service>")));
        };
        if order < last {
            return Err(ctx.err(child, format!("<{tag}> out of order")));
        }
        last = order;
        if matches!(tag, "description" | "presentation" | "update" | "acl") && !seen_once.insert(tag) {
            return Err(ctx.err(child, format!("<{tag}> may appear once")));
        }
        match tag {
            "description" => {
                ctx.attrs(child, &[])?;
                description = ctx.text(child)?.trim().to_string();
            }
            "key" => {
                ctx.attrs(child, &["name", "type", "required"])?;
                key_params.push(KeyParam {
                    name: ctx.req(child, "name")?.to_string(),
                    ty: ctx.value_type(child, "type")?,
                    required: ctx.boolean(child, "required", true)?,
                });
            }
            "element" => {
                let (mapping, rule) = parse_element(ctx, child)?;
                if let Some(rule) = rule {
                    pending_rules.push((mappings.len(), rule));
                }
                mappings.push(mapping);
            }
            "transform" => {
                ctx.attrs(child, &["element"])?;
                let source = ctx.text(child)?;
                let expr = parse_expr(&source)
                    .map_err(|e| ctx.err(child, format!("transform {}: {e}", child.attribute("element").unwrap_or("?"))))?;
                transforms.push(Transform {
                    element: ctx.req(child, "element")?.to_string(),
                    expr,
                });
            }
            "presentation" => {
                ctx.attrs(child, &[])?;
                let mut cols = Vec::new();
                for c in ctx.elements(child)? {
                    if c.tag_name().name() != "column" {
                        return Err(ctx.err(c, "<presentation> holds only <column>"));
                    }
                    ctx.attrs(c, &["name", "format"])?;
                    cols.push(PresentationColumn {
                        element: ctx.req(c, "name")?.to_string(),
                        format: c.attribute("format").map(str::to_string),
                    });
                }
                presentation = Some(cols);
            }
            "update" => update = Some(parse_update(ctx, child)?),
            "acl" => {
                ctx.attrs(child, &[])?;
                for c in ctx.elements(child)? {
                    ctx.attrs(c, &[])?;
                    let who = ctx.text(c)?.trim().to_string();
                    match c.tag_name().name() {
                        "user" => acl.users.insert(who),
                        "group" => acl.groups.insert(who),
                        other => return Err(ctx.err(c, format!("unknown element <{other}> in <acl>"))),
                    };
                }
            }
            _ => unreachable!(),
        }
    }

    let presentation = presentation.unwrap_or_else(|| {
        mappings
            .iter()
            .map(|m: &ElementMapping| m.element.clone())
            .chain(transforms.iter().map(|t: &Transform| t.element.clone()))
            .map(|element| PresentationColumn { element, format: None })
            .collect()
    });
    let anchor = match node.attribute("anchor") {
        Some(a) => a.to_string(),
        None => mappings.first().map(|m| m.resource_id.clone()).unwrap_or_default(),
    };
    let mut def = ServiceDefinition {
        name,
        version,
        description,
        key_params,
        anchor,
        mappings,
        transforms,
        presentation,
        refresh_seconds,
        update,
        acl,
    };
    for (i, rule) in pending_rules {
        let resource = def.mappings[i].resource_id.clone();
        let rule = rule.typed(&def, &resource);
        def.mappings[i].rule = Some(rule);
    }
    Ok(def)
}

enum PendingRule {
    Sql { template: String, columns: Vec<String> },
    Http { url: String, row_path: String, fields: Vec<(String, String)> },
}

impl PendingRule {
    fn typed(self, def: &ServiceDefinition, resource: &str) -> ExtractionRule {
        let col = |name: String| {
            let ty = def.source_column_type(resource, &name);
            Column::new(name, ty)
        };
        match self {
            PendingRule::Sql { template, columns } => ExtractionRule::Relational(RelationalRule {
                template,
                columns: columns.into_iter().map(col).collect(),
            }),
            PendingRule::Http { url, row_path, fields } => ExtractionRule::HttpXml(HttpRule {
                url_template: url,
                row_path,
                fields: fields
                    .into_iter()
                    .map(|(column, path)| FieldPath { column: col(column), path })
                    .collect(),
            }),
        }
    }
}

fn parse_element(ctx: &Ctx, node: Node) -> Result<(ElementMapping, Option<PendingRule>), ParseError> {
    ctx.attrs(node, &["name", "resource", "source-column", "type"])?;
    let element = ctx.req(node, "name")?.to_string();
    let mut key_bindings = Vec::new();
    let mut rule = None;
    for c in ctx.elements(node)? {
        match c.tag_name().name() {
            "key-binding" => {
                if rule.is_some() {
                    return Err(ctx.err(c, "<key-binding> must precede the rule"));
                }
                ctx.attrs(c, &["param", "column"])?;
                key_bindings.push(KeyBinding {
                    param: ctx.req(c, "param")?.to_string(),
                    column: ctx.req(c, "column")?.to_string(),
                });
            }
            "sql" if rule.is_none() => {
                ctx.attrs(c, &["columns"])?;
                rule = Some(PendingRule::Sql {
                    template: ctx.text(c)?.trim().to_string(),
                    columns: split_list(ctx.req(c, "columns")?),
                });
            }
            "http" if rule.is_none() => {
                ctx.attrs(c, &["url", "row-path"])?;
                let mut fields = Vec::new();
                for f in ctx.elements(c)? {
                    if f.tag_name().name() != "field" {
                        return Err(ctx.err(f, "<http> holds only <field>"));
                    }
                    ctx.attrs(f, &["column", "path"])?;
                    let column = ctx.req(f, "column")?.to_string();
                    let path = f.attribute("path").unwrap_or(&column).to_string();
                    fields.push((column, path));
                }
                rule = Some(PendingRule::Http {
                    url: ctx.req(c, "url")?.to_string(),
                    row_path: ctx.req(c, "row-path")?.to_string(),
                    fields,
                });
            }
            "sql" | "http" => return Err(ctx.err(c, "an element carries at most one rule")),
            other => return Err(ctx.err(c, format!("unknown element <{other}> in <element>"))),
        }
    }
    let mapping = ElementMapping {
        element,
        ty: ctx.value_type(node, "type")?,
        resource_id: ctx.req(node, "resource")?.to_string(),
        source_column: ctx.req(node, "source-column")?.to_string(),
        key_bindings,
        rule: None,
    };
    Ok((mapping, rule))
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

fn parse_update(ctx: &Ctx, node: Node) -> Result<UpdateSpec, ParseError> {
    ctx.attrs(node, &["resource", "table"])?;
    let mut key_columns = Vec::new();
    let mut writable_columns = Vec::new();
    for c in ctx.elements(node)? {
        ctx.attrs(c, &["column"])?;
        let column = ctx.req(c, "column")?.to_string();
        match c.tag_name().name() {
            "key" if writable_columns.is_empty() => key_columns.push(column),
            "key" => return Err(ctx.err(c, "<key> must precede <writable>")),
            "writable" => writable_columns.push(column),
            other => return Err(ctx.err(c, format!("unknown element <{other}> in <update>"))),
        }
    }
    Ok(UpdateSpec {
        resource_id: ctx.req(node, "resource")?.to_string(),
        table: node.attribute("table").map(str::to_string),
        key_columns,
        writable_columns,
    })
}

/// Checks every structural rule of a service against the known resources.
/// Returns an empty list when the definition is sound.
pub fn validate_service_definition(
    def: &ServiceDefinition,
    resources: &BTreeMap<String, ResourceDescriptor>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |field: String, message: String| out.push(Violation::new(field, message));

    if def.name.is_empty() {
        v("name".into(), "empty service name".into());
    }
    if def.version == 0 {
        v("version".into(), "version must be positive".into());
    }
    if def.refresh_seconds == 0 {
        v("refresh-seconds".into(), "refresh-seconds must be positive".into());
    }

    let mut key_names = HashSet::new();
    for (i, k) in def.key_params.iter().enumerate() {
        if k.name.is_empty() {
            v(format!("keys[{i}].name"), "empty key name".into());
        } else if !key_names.insert(k.name.as_str()) {
            v(format!("keys[{i}].name"), format!("duplicate key: {}", k.name));
        }
        if k.ty == ValueType::Null {
            v(format!("keys[{i}].type"), format!("key {} cannot have type null", k.name));
        }
    }

    if def.mappings.is_empty() {
        v("mappings".into(), "service maps no elements".into());
    }
    let anchor = resources.get(&def.anchor);
    if def.anchor.is_empty() {
        v("anchor".into(), "no anchor resource".into());
    } else if anchor.is_none() {
        v("anchor".into(), format!("unknown resource: {}", def.anchor));
    } else if def.mappings_for(&def.anchor).next().is_none() {
        v("anchor".into(), format!("anchor {} has no mapped elements", def.anchor));
    }

    let mut elements: HashSet<&str> = HashSet::new();
    let mut unknown_reported: HashSet<&str> = HashSet::new();
    let mut anchor_params: HashSet<&str> = HashSet::new();
    for m in def.mappings_for(&def.anchor) {
        anchor_params.extend(m.key_bindings.iter().map(|kb| kb.param.as_str()));
    }
    for (i, m) in def.mappings.iter().enumerate() {
        if m.element.is_empty() {
            v(format!("mappings[{i}].name"), "empty element name".into());
        } else if !elements.insert(&m.element) {
            v(format!("mappings[{i}].name"), format!("duplicate element: {}", m.element));
        }
        if m.source_column.is_empty() {
            v(format!("mappings[{i}].source-column"), format!("empty source column: {}", m.element));
        }
        let Some(res) = resources.get(&m.resource_id) else {
            if m.resource_id != def.anchor && unknown_reported.insert(&m.resource_id) {
                v(format!("mappings[{i}].resource"), format!("unknown resource: {}", m.resource_id));
            }
            continue;
        };
        for (j, kb) in m.key_bindings.iter().enumerate() {
            if def.key_param(&kb.param).is_none() {
                v(format!("mappings[{i}].key-bindings[{j}]"), format!("unknown key param: {}", kb.param));
            }
            if m.resource_id != def.anchor && !anchor_params.contains(kb.param.as_str()) {
                v(
                    format!("mappings[{i}].key-bindings[{j}]"),
                    format!("enrichment key {} not bound by anchor {}", kb.param, def.anchor),
                );
            }
        }
        if m.resource_id != def.anchor && def.mappings_for(&m.resource_id).all(|x| x.key_bindings.is_empty()) {
            v(format!("mappings[{i}].key-bindings"), format!("enrichment {} has no key binding", m.resource_id));
        }
        if let Some(rule) = &m.rule {
            if rule.kind() != res.kind {
                v(
                    format!("mappings[{i}].rule"),
                    format!("{} rule on {} resource {}", rule.kind(), res.kind, res.id),
                );
            }
            for p in rule.placeholders() {
                if def.key_param(&p).is_none() {
                    v(format!("mappings[{i}].rule"), format!("unknown placeholder: {p}"));
                }
            }
            if let ExtractionRule::HttpXml(h) = rule {
                if h.row_path.split('/').all(str::is_empty) {
                    v(format!("mappings[{i}].rule"), "empty row path".into());
                }
            }
        }
    }

    // Per-resource rule checks.
    let mut checked: HashSet<&str> = HashSet::new();
    for m in &def.mappings {
        let Some(res) = resources.get(&m.resource_id) else { continue };
        if !checked.insert(&m.resource_id) {
            continue;
        }
        let rules: Vec<&ExtractionRule> = def.mappings_for(&res.id).filter_map(|m| m.rule.as_ref()).collect();
        match res.kind {
            ResourceKind::TabularFile => {
                if !rules.is_empty() {
                    v(format!("resource {}", res.id), format!("tabular-file resource {} takes no explicit rule", res.id));
                }
            }
            _ => {
                let Some(first) = rules.first() else {
                    v(format!("resource {}", res.id), format!("{} resource {} needs a rule", res.kind, res.id));
                    continue;
                };
                if rules.iter().any(|r| r != first) {
                    v(format!("resource {}", res.id), format!("conflicting rules for resource: {}", res.id));
                }
                let outputs: HashSet<&str> = first.output_columns().into_iter().map(|c| c.name.as_str()).collect();
                let needed = def
                    .mappings_for(&res.id)
                    .flat_map(|m| std::iter::once(m.source_column.as_str()).chain(m.key_bindings.iter().map(|k| k.column.as_str())));
                let mut missing: BTreeSet<&str> = BTreeSet::new();
                for col in needed {
                    let read = res.id == def.anchor || def.mappings_for(&res.id).any(|m| m.source_column == col);
                    if read && !outputs.contains(col) {
                        missing.insert(col);
                    }
                }
                for col in missing {
                    v(format!("resource {}", res.id), format!("rule for {} does not return column {col}", res.id));
                }
            }
        }
    }

    // Transforms may reference mapped elements and earlier transforms.
    let mut env: HashMap<String, ValueType> = def.mappings.iter().map(|m| (m.element.clone(), m.ty)).collect();
    for (i, t) in def.transforms.iter().enumerate() {
        if t.element.is_empty() {
            v(format!("transforms[{i}].element"), "empty transform element".into());
        } else if env.contains_key(&t.element) {
            v(format!("transforms[{i}].element"), format!("duplicate element: {}", t.element));
        }
        let mut ok = true;
        for r in t.expr.references() {
            if !env.contains_key(r) {
                ok = false;
                v(format!("transforms[{i}]"), format!("unknown element in transform {}: {r}", t.element));
            }
        }
        let ty = if ok {
            match infer_type(&t.expr, &env) {
                Ok(ty) => ty,
                Err(e) => {
                    v(format!("transforms[{i}]"), format!("transform {}: {e}", t.element));
                    ValueType::Text
                }
            }
        } else {
            ValueType::Text
        };
        env.entry(t.element.clone()).or_insert(ty);
    }

    if def.presentation.is_empty() {
        v("presentation".into(), "no presentation columns".into());
    }
    let mut presented = HashSet::new();
    for (i, p) in def.presentation.iter().enumerate() {
        if !env.contains_key(&p.element) {
            v(format!("presentation[{i}]"), format!("unknown presentation column: {}", p.element));
        } else if !presented.insert(p.element.as_str()) {
            v(format!("presentation[{i}]"), format!("duplicate presentation column: {}", p.element));
        }
    }

    if let Some(u) = &def.update {
        match resources.get(&u.resource_id) {
            None => v("update.resource".into(), format!("unknown resource: {}", u.resource_id)),
            Some(res) => {
                if !res.writable {
                    v("update.resource".into(), format!("update target not writable: {}", res.id));
                }
                if res.kind == ResourceKind::HttpXml {
                    v("update.resource".into(), format!("http-xml resource cannot be updated: {}", res.id));
                }
                if res.kind == ResourceKind::Relational && u.table.is_none() {
                    v("update.table".into(), format!("relational update needs a table: {}", res.id));
                }
            }
        }
        if u.key_columns.is_empty() {
            v("update.key".into(), "update needs at least one key column".into());
        }
        if u.writable_columns.is_empty() {
            v("update.writable".into(), "update needs at least one writable column".into());
        }
        for c in &u.key_columns {
            if u.writable_columns.contains(c) {
                v("update".into(), format!("column both key and writable: {c}"));
            }
        }
        for (col, source) in def.update_key_sources() {
            if source.is_none() {
                v("update.key".into(), format!("key column not derivable: {col}"));
            }
        }
        for (col, element) in def.update_writable_elements() {
            if element.is_none() {
                v("update.writable".into(), format!("writable column not presented: {col}"));
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CRM: &str =
        r#"<resource id="crm" kind="tabular-file" location="../crm.csv" writable="true"/>"#;
    pub(crate) const RATINGS: &str = r#"<resource id="ratings" kind="tabular-file" location="../ratings.csv"/>"#;
    pub(crate) const CUSTOMER_INFO: &str = r#"<service name="customer-info" version="1" refresh-seconds="300">
  <description>Customer name, address, phone and credit rating</description>
  <key name="customerID" type="text" required="true"/>
  <element name="name" resource="crm" source-column="name">
    <key-binding param="customerID" column="customer_id"/>
  </element>
  <element name="address" resource="crm" source-column="address">
    <key-binding param="customerID" column="customer_id"/>
  </element>
  <element name="phone" resource="crm" source-column="phone">
    <key-binding param="customerID" column="customer_id"/>
  </element>
  <element name="credit_rating" resource="ratings" source-column="credit_rating">
    <key-binding param="customerID" column="customer_id"/>
  </element>
  <update resource="crm">
    <key column="customer_id"/>
    <writable column="phone"/>
    <writable column="address"/>
  </update>
  <acl><group>finance</group></acl>
</service>"#;

    fn resources() -> BTreeMap<String, ResourceDescriptor> {
        [CRM, RATINGS]
            .iter()
            .map(|t| parse_resource(Path::new("r.xml"), t).unwrap())
            .map(|r| (r.id.clone(), r))
            .collect()
    }

    fn customer_info() -> ServiceDefinition {
        parse_service(Path::new("customer-info.xml"), CUSTOMER_INFO).unwrap()
    }

    #[test]
    fn customer_info_is_valid() {
        let def = customer_info();
        assert_eq!(def.anchor, "crm");
        assert_eq!(def.presentation.len(), 4);
        assert_eq!(def.enrichment_resources(), vec!["ratings"]);
        assert!(def.acl.groups.contains("finance"));
        assert_eq!(validate_service_definition(&def, &resources()), vec![]);
    }

    #[test]
    fn unknown_resource_reported_once() {
        let mut def = customer_info();
        def.mappings[3].resource_id = "erp".into();
        let vs = validate_service_definition(&def, &resources());
        assert_eq!(vs.len(), 1, "{vs:?}");
        assert_eq!(vs[0].message, "unknown resource: erp");
        assert_eq!(vs[0].field, "mappings[3].resource");
    }

    #[test]
    fn duplicate_element_reported() {
        let mut def = customer_info();
        def.mappings[0].element = "phone".into();
        def.presentation.remove(0);
        let vs = validate_service_definition(&def, &resources());
        assert_eq!(vs.len(), 1, "{vs:?}");
        assert_eq!(vs[0].message, "duplicate element: phone");
    }

    #[test]
    fn update_rules() {
        let mut res = resources();
        res.get_mut("crm").unwrap().writable = false;
        let vs = validate_service_definition(&customer_info(), &res);
        assert_eq!(vs[0].message, "update target not writable: crm");

        let mut def = customer_info();
        def.update.as_mut().unwrap().writable_columns.push("customer_id".into());
        let msgs: Vec<String> = validate_service_definition(&def, &resources()).into_iter().map(|v| v.message).collect();
        assert!(msgs.contains(&"column both key and writable: customer_id".to_string()), "{msgs:?}");
    }

    #[test]
    fn transform_rules() {
        let mut def = customer_info();
        def.transforms.push(Transform {
            element: "label".into(),
            expr: parse_expr("name & fax").unwrap(),
        });
        def.transforms.push(Transform {
            element: "bad".into(),
            expr: parse_expr("name + 1").unwrap(),
        });
        def.presentation.push(PresentationColumn {
            element: "missing".into(),
            format: None,
        });
        let msgs: Vec<String> = validate_service_definition(&def, &resources()).into_iter().map(|v| v.message).collect();
        assert!(msgs.contains(&"unknown element in transform label: fax".to_string()), "{msgs:?}");
        assert!(msgs.iter().any(|m| m.starts_with("transform bad:")), "{msgs:?}");
        assert!(msgs.contains(&"unknown presentation column: missing".to_string()), "{msgs:?}");
    }

    #[test]
    fn forward_transform_reference_rejected() {
        let mut def = customer_info();
        def.transforms.push(Transform {
            element: "a".into(),
            expr: parse_expr("b").unwrap(),
        });
        def.transforms.push(Transform {
            element: "b".into(),
            expr: parse_expr("name").unwrap(),
        });
        let msgs: Vec<String> = validate_service_definition(&def, &resources()).into_iter().map(|v| v.message).collect();
        assert_eq!(msgs, vec!["unknown element in transform a: b".to_string()]);
    }

    #[test]
    fn enrichment_key_must_come_from_anchor() {
        let mut def = customer_info();
        def.key_params.push(KeyParam {
            name: "region".into(),
            ty: ValueType::Text,
            required: false,
        });
        def.mappings[3].key_bindings[0].param = "region".into();
        let msgs: Vec<String> = validate_service_definition(&def, &resources()).into_iter().map(|v| v.message).collect();
        assert_eq!(msgs, vec!["enrichment key region not bound by anchor crm".to_string()]);
    }

    #[test]
    fn parse_errors_carry_line() {
        let err = parse_service(Path::new("s.xml"), "<service name=\"x\"\n version=\"1\" refresh-seconds=\"5\">\n<bogus/></service>")
            .unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("bogus"));
        let err = parse_service(Path::new("s.xml"), "<service>\n<key").unwrap_err();
        assert_eq!(err.file, Path::new("s.xml"));
        let err = parse_resource(Path::new("r.xml"), r#"<resource id="a" kind="ftp" location="x"/>"#).unwrap_err();
        assert!(err.message.contains("ftp"));
        let err = parse_resource(Path::new("r.xml"), r#"<resource id="a" kind="relational" location="x" colour="red"/>"#)
            .unwrap_err();
        assert!(err.message.contains("colour"));
    }

    #[test]
    fn sections_must_be_in_order() {
        let text = r#"<service name="x" version="1" refresh-seconds="5">
  <acl/>
  <key name="k"/>
</service>"#;
        assert!(parse_service(Path::new("s.xml"), text).unwrap_err().message.contains("out of order"));
    }

    #[test]
    fn explicit_rules_are_typed_from_elements() {
        let text = r#"<service name="x" version="1" refresh-seconds="5" anchor="db">
  <key name="id" type="number"/>
  <element name="total" type="number" resource="db" source-column="total">
    <key-binding param="id" column="id"/>
    <sql columns="id,total">SELECT id, total FROM t WHERE id = :id</sql>
  </element>
  <element name="score" resource="feed" source-column="score">
    <key-binding param="id" column="id"/>
    <http url="scores/{id}" row-path="scores/score"><field column="score"/></http>
  </element>
</service>"#;
        let def = parse_service(Path::new("s.xml"), text).unwrap();
        let Some(ExtractionRule::Relational(r)) = &def.mappings[0].rule else { panic!() };
        assert_eq!(r.columns, vec![Column::new("id", ValueType::Number), Column::new("total", ValueType::Number)]);
        let Some(ExtractionRule::HttpXml(h)) = &def.mappings[1].rule else { panic!() };
        assert_eq!(h.fields[0].path, "score");
        let resources: BTreeMap<String, ResourceDescriptor> = [
            ResourceDescriptor {
                id: "db".into(),
                kind: ResourceKind::Relational,
                location: "x.db".into(),
                credentials_ref: None,
                writable: false,
            },
            ResourceDescriptor {
                id: "feed".into(),
                kind: ResourceKind::HttpXml,
                location: "http://x".into(),
                credentials_ref: None,
                writable: false,
            },
        ]
        .into_iter()
        .map(|r| (r.id.clone(), r))
        .collect();
        assert_eq!(validate_service_definition(&def, &resources), vec![]);
    }
}

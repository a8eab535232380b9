//! Random multi-source service instances plus a nested-loop left-join oracle.
//!
//! An instance is an anchor CSV keyed by `k` (keys may repeat or be null)
//! and up to two enrichment sources, each CSV or SQLite, holding at most one
//! row per key. Every service element is a plain column mapping, presented
//! in a shuffled order.

use std::collections::BTreeMap;
use std::path::Path;

use infoflow_core::connectors::RelationalRule;
use infoflow_core::model::{ElementMapping, KeyBinding, KeyParam, PresentationColumn};
use infoflow_core::{
    AccessControlList, Column, ExtractionRule, Number, ResourceDescriptor, ResourceKind, ServiceDefinition, Value,
    ValueType,
};
use proptest::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Csv,
    Sqlite,
}

#[derive(Debug, Clone)]
pub struct AnchorRow {
    pub key: Option<String>,
    pub t: Option<String>,
    pub n: Option<i64>,
}

#[derive(Debug, Clone)]
pub struct Enrichment {
    pub backend: Backend,
    pub rows: BTreeMap<String, (Option<String>, Option<i64>)>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub anchor: Vec<AnchorRow>,
    pub enrichments: Vec<Enrichment>,
    pub presentation: Vec<String>,
}

fn key() -> impl Strategy<Value = String> {
    (0..20u8).prop_map(|i| format!("k{i}"))
}

fn text() -> impl Strategy<Value = Option<String>> {
    proptest::option::weighted(0.85, "[A-Za-z0-9 ,\"']{1,6}")
}

fn num() -> impl Strategy<Value = Option<i64>> {
    proptest::option::weighted(0.85, -1000i64..1000)
}

fn anchor_row() -> impl Strategy<Value = AnchorRow> {
    (proptest::option::weighted(0.9, key()), text(), num()).prop_map(|(key, t, n)| AnchorRow { key, t, n })
}

fn enrichment() -> impl Strategy<Value = Enrichment> {
    (
        prop_oneof![Just(Backend::Csv), Just(Backend::Sqlite)],
        prop::collection::btree_map(key(), (text(), num()), 0..15),
    )
        .prop_map(|(backend, rows)| Enrichment { backend, rows })
}

pub fn instance() -> impl Strategy<Value = Instance> {
    (
        prop::collection::vec(anchor_row(), 0..=100),
        prop::collection::vec(enrichment(), 0..=2),
    )
        .prop_flat_map(|(anchor, enrichments)| {
            let mut names: Vec<String> = vec!["ak".into(), "at".into(), "an".into()];
            for j in 0..enrichments.len() {
                names.push(format!("e{j}t"));
                names.push(format!("e{j}n"));
            }
            (Just(anchor), Just(enrichments), Just(names).prop_shuffle())
        })
        .prop_map(|(anchor, enrichments, presentation)| Instance {
            anchor,
            enrichments,
            presentation,
        })
}

fn text_value(s: &Option<String>) -> Value {
    s.as_deref().map_or(Value::Null, Value::text)
}

fn num_value(n: &Option<i64>) -> Value {
    n.map_or(Value::Null, |n| Value::Number(Number::from_i64(n).unwrap()))
}

fn kb() -> Vec<KeyBinding> {
    vec![KeyBinding {
        param: "k".into(),
        column: "k".into(),
    }]
}

fn mapping(element: &str, ty: ValueType, resource: &str, column: &str, rule: Option<ExtractionRule>) -> ElementMapping {
    ElementMapping {
        element: element.into(),
        ty,
        resource_id: resource.into(),
        source_column: column.into(),
        key_bindings: kb(),
        rule,
    }
}

fn write_csv(path: &Path, rows: impl Iterator<Item = [String; 3]>) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["k", "t", "n"]).unwrap();
    for r in rows {
        w.write_record(&r).unwrap();
    }
    w.flush().unwrap();
}

fn field(v: &Option<impl ToString>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

impl Instance {
    /// Writes the sources into `dir` and returns the service and its
    /// resources, with locations relative to `dir`.
    pub fn materialize(&self, dir: &Path) -> (ServiceDefinition, BTreeMap<String, ResourceDescriptor>) {
        let mut resources = BTreeMap::new();
        let mut add = |id: &str, kind: ResourceKind, location: &str| {
            resources.insert(
                id.to_string(),
                ResourceDescriptor {
                    id: id.into(),
                    kind,
                    location: location.into(),
                    credentials_ref: None,
                    writable: false,
                },
            );
        };
        write_csv(
            &dir.join("anchor.csv"),
            self.anchor.iter().map(|r| [field(&r.key), field(&r.t), field(&r.n)]),
        );
        add("anchor", ResourceKind::TabularFile, "anchor.csv");
        let mut mappings = vec![
            mapping("ak", ValueType::Text, "anchor", "k", None),
            mapping("at", ValueType::Text, "anchor", "t", None),
            mapping("an", ValueType::Number, "anchor", "n", None),
        ];
        for (j, e) in self.enrichments.iter().enumerate() {
            let id = format!("e{j}");
            let rule = match e.backend {
                Backend::Csv => {
                    let file = format!("{id}.csv");
                    write_csv(&dir.join(&file), e.rows.iter().map(|(k, (t, n))| [k.clone(), field(t), field(n)]));
                    add(&id, ResourceKind::TabularFile, &file);
                    None
                }
                Backend::Sqlite => {
                    let file = format!("{id}.db");
                    let conn = rusqlite::Connection::open(dir.join(&file)).unwrap();
                    conn.execute_batch("CREATE TABLE e (k TEXT PRIMARY KEY, t TEXT, n INTEGER)").unwrap();
                    for (k, (t, n)) in &e.rows {
                        conn.execute("INSERT INTO e VALUES (?1, ?2, ?3)", rusqlite::params![k, t, n]).unwrap();
                    }
                    add(&id, ResourceKind::Relational, &file);
                    Some(ExtractionRule::Relational(RelationalRule {
                        template: "SELECT t, n FROM e WHERE k = :k".into(),
                        columns: vec![Column::text("t"), Column::new("n", ValueType::Number)],
                    }))
                }
            };
            mappings.push(mapping(&format!("{id}t"), ValueType::Text, &id, "t", rule));
            mappings.push(mapping(&format!("{id}n"), ValueType::Number, &id, "n", None));
        }
        let def = ServiceDefinition {
            name: "joined".into(),
            version: 1,
            description: String::new(),
            key_params: vec![KeyParam {
                name: "k".into(),
                ty: ValueType::Text,
                required: false,
            }],
            anchor: "anchor".into(),
            mappings,
            transforms: Vec::new(),
            presentation: self
                .presentation
                .iter()
                .map(|e| PresentationColumn {
                    element: e.clone(),
                    format: None,
                })
                .collect(),
            refresh_seconds: 60,
            update: None,
            acl: AccessControlList::default().with_users(["u"]),
        };
        (def, resources)
    }

    /// Nested-loop left join of the anchor against every enrichment.
    pub fn oracle(&self) -> Vec<Vec<Value>> {
        let mut out = Vec::new();
        for a in &self.anchor {
            let mut row: BTreeMap<String, Value> = BTreeMap::new();
            row.insert("ak".into(), text_value(&a.key));
            row.insert("at".into(), text_value(&a.t));
            row.insert("an".into(), num_value(&a.n));
            for (j, e) in self.enrichments.iter().enumerate() {
                let mut hit = None;
                for (k, v) in &e.rows {
                    if a.key.as_ref() == Some(k) {
                        hit = Some(v);
                    }
                }
                let (t, n) = hit.map_or((Value::Null, Value::Null), |(t, n)| (text_value(t), num_value(n)));
                row.insert(format!("e{j}t"), t);
                row.insert(format!("e{j}n"), n);
            }
            out.push(self.presentation.iter().map(|p| row[p].clone()).collect());
        }
        out
    }
}

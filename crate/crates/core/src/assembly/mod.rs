//! Service resolution: fetch the anchor rows, enrich them by key from the
//! other sources, evaluate transforms and project to the presentation layout.

use std::collections::{BTreeMap, HashMap};
use std::thread;

use crate::connectors::{ConnectorError, ExtractionRule, FilterTerm, Params, Source, TabularRule};
use crate::model::{ResourceDescriptor, ResourceKind, ServiceDefinition};
use crate::table::{Column, Table};
use crate::value::{Value, ValueType};

pub mod expr;

pub use expr::{eval_expr, parse_expr, BinOp, EvalError, Expr};

/// The presentation table plus which resource each mapped element came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedResult {
    pub table: Table,
    pub provenance: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("missing parameter: {0}")]
    MissingParam(String),
    #[error("unknown parameter: {0}")]
    UnknownParam(String),
    #[error("parameter {name}: expected {expected}")]
    BadParam { name: String, expected: String },
    #[error("unknown resource: {0}")]
    UnknownResource(String),
    #[error("ambiguous enrichment from {resource} for key {key}")]
    AmbiguousEnrichment { resource: String, key: String },
    #[error("{error}")]
    Source { resource: String, error: ConnectorError },
    #[error("transform {element}: {error}")]
    Eval { element: String, error: EvalError },
    #[error("result does not fit schema: {0}")]
    Schema(String),
}

impl ResolveError {
    /// Resource id for failures that originate in a source.
    pub fn resource(&self) -> Option<&str> {
        match self {
            ResolveError::Source { resource, .. } | ResolveError::AmbiguousEnrichment { resource, .. } => Some(resource),
            ResolveError::UnknownResource(r) => Some(r),
            _ => None,
        }
    }
}

/// Derives the extraction rule used to read `resource` for `def`.
///
/// Tabular rules project every mapped source column plus the key-binding
/// columns and filter on the key bindings. Other kinds carry an explicit rule
/// on one of their mappings.
pub fn rule_for(def: &ServiceDefinition, resource: &ResourceDescriptor) -> Option<ExtractionRule> {
    match resource.kind {
        ResourceKind::TabularFile => {
            let mut projection: Vec<Column> = Vec::new();
            let mut filter: Vec<FilterTerm> = Vec::new();
            let add = |projection: &mut Vec<Column>, name: &str| {
                if !projection.iter().any(|c| c.name == name) {
                    projection.push(Column::new(name, def.source_column_type(&resource.id, name)));
                }
            };
            for m in def.mappings_for(&resource.id) {
                add(&mut projection, &m.source_column);
            }
            for m in def.mappings_for(&resource.id) {
                for kb in &m.key_bindings {
                    add(&mut projection, &kb.column);
                    if !filter.iter().any(|f| f.param == kb.param && f.column == kb.column) {
                        filter.push(FilterTerm {
                            column: kb.column.clone(),
                            param: kb.param.clone(),
                        });
                    }
                }
            }
            Some(ExtractionRule::Tabular(TabularRule { projection, filter }))
        }
        _ => def.mappings_for(&resource.id).find_map(|m| m.rule.clone()),
    }
}

/// (param, column) pairs binding `resource` to service keys, deduplicated.
fn key_bindings<'a>(def: &'a ServiceDefinition, resource: &'a str) -> Vec<(&'a str, &'a str)> {
    let mut out: Vec<(&str, &str)> = Vec::new();
    for m in def.mappings_for(resource) {
        for kb in &m.key_bindings {
            if !out.iter().any(|(p, _)| *p == kb.param) {
                out.push((&kb.param, &kb.column));
            }
        }
    }
    out
}

fn column_of(table: &Table, resource: &str, name: &str) -> Result<usize, ResolveError> {
    table
        .column_index(name)
        .ok_or_else(|| ResolveError::Schema(format!("{resource} returned no column {name}")))
}

/// Checks required parameters and types, dropping nothing.
pub fn check_params(def: &ServiceDefinition, params: &Params) -> Result<(), ResolveError> {
    for name in params.keys() {
        if def.key_param(name).is_none() {
            return Err(ResolveError::UnknownParam(name.clone()));
        }
    }
    for k in &def.key_params {
        match params.get(&k.name) {
            None | Some(Value::Null) if k.required => return Err(ResolveError::MissingParam(k.name.clone())),
            Some(v) if !v.fits(k.ty) => {
                return Err(ResolveError::BadParam {
                    name: k.name.clone(),
                    expected: k.ty.to_string(),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

type Lookup<'r> = &'r BTreeMap<String, ResourceDescriptor>;

struct Enrichment {
    resource: String,
    /// Fetched row per anchor row (None when no match or a null key).
    rows: Vec<Option<Vec<Value>>>,
    table_columns: Vec<Column>,
}

fn fetch(source: &dyn Source, res: &ResourceDescriptor, rule: &ExtractionRule, params: &Params) -> Result<Table, ResolveError> {
    source.fetch(res, rule, params).map_err(|error| ResolveError::Source {
        resource: res.id.clone(),
        error,
    })
}

/// One unfiltered read of a tabular source, indexed by its filter columns.
/// Saves rereading the file for every distinct key.
struct BulkIndex {
    table: Table,
    terms: Vec<(String, usize, ValueType)>,
    index: HashMap<Vec<Value>, Vec<usize>>,
}

impl BulkIndex {
    /// `None` when the unfiltered read fails; keyed fetches then decide
    /// the outcome, since they may never touch the offending rows.
    fn build(source: &dyn Source, res: &ResourceDescriptor, rule: &ExtractionRule, t: &TabularRule) -> Option<BulkIndex> {
        let table = source.fetch(res, rule, &Params::new()).ok()?;
        let terms = t
            .filter
            .iter()
            .map(|f| {
                let i = table.columns().iter().position(|c| c.name == f.column)?;
                Some((f.param.clone(), i, table.columns()[i].ty))
            })
            .collect::<Option<Vec<_>>>()?;
        let mut index: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
        for (r, row) in table.rows().iter().enumerate() {
            let key: Vec<Value> = terms.iter().map(|(_, i, _)| row[*i].clone()).collect();
            if !key.iter().any(Value::is_null) {
                index.entry(key).or_default().push(r);
            }
        }
        Some(BulkIndex { table, terms, index })
    }

    /// Matching row positions, or `None` if the keyed read could differ
    /// (a key whose type is not the column's type compares differently).
    fn lookup(&self, params: &Params) -> Option<&[usize]> {
        let mut key = Vec::with_capacity(self.terms.len());
        for (param, _, ty) in &self.terms {
            let v = params.get(param)?;
            if v.tag() != *ty {
                return None;
            }
            key.push(v.clone());
        }
        Some(self.index.get(&key).map_or(&[], Vec::as_slice))
    }
}

fn enrich(
    def: &ServiceDefinition,
    res: &ResourceDescriptor,
    anchor: &Table,
    anchor_keys: &HashMap<&str, usize>,
    source: &dyn Source,
) -> Result<Enrichment, ResolveError> {
    let rule = rule_for(def, res).ok_or_else(|| ResolveError::Schema(format!("no extraction rule for {}", res.id)))?;
    let bindings = key_bindings(def, &res.id);
    let mut cache: HashMap<Vec<Value>, Option<Vec<Value>>> = HashMap::new();
    let mut columns = Vec::new();
    let mut rows = Vec::with_capacity(anchor.len());
    // Built on the first non-null key, so an unused source is never read.
    let mut bulk: Option<Option<BulkIndex>> = None;
    for arow in anchor.rows() {
        let mut key = Vec::with_capacity(bindings.len());
        for (param, _) in &bindings {
            let idx = anchor_keys
                .get(param)
                .ok_or_else(|| ResolveError::Schema(format!("key {param} of {} not bound by the anchor", res.id)))?;
            key.push(arow[*idx].clone());
        }
        if key.iter().any(Value::is_null) {
            rows.push(None);
            continue;
        }
        if let Some(hit) = cache.get(&key) {
            rows.push(hit.clone());
            continue;
        }
        let params: Params = bindings
            .iter()
            .zip(&key)
            .map(|((p, _), v)| (p.to_string(), v.clone()))
            .collect();
        let bulk = bulk.get_or_insert_with(|| match &rule {
            ExtractionRule::Tabular(t) => BulkIndex::build(source, res, &rule, t),
            _ => None,
        });
        let matches: Vec<Vec<Value>> = match bulk.as_ref().and_then(|b| Some((b, b.lookup(&params)?))) {
            Some((b, found)) => {
                columns = b.table.columns().to_vec();
                found.iter().map(|&i| b.table.rows()[i].clone()).collect()
            }
            None => {
                let table = fetch(source, res, &rule, &params)?;
                columns = table.columns().to_vec();
                table.into_rows()
            }
        };
        if matches.len() > 1 {
            return Err(ResolveError::AmbiguousEnrichment {
                resource: res.id.clone(),
                key: key.iter().map(Value::encode).collect::<Vec<_>>().join(","),
            });
        }
        let hit = matches.into_iter().next();
        cache.insert(key, hit.clone());
        rows.push(hit);
    }
    Ok(Enrichment {
        resource: res.id.clone(),
        rows,
        table_columns: columns,
    })
}

/// Resolves one invocation of `def`.
///
/// Any source failure fails the whole call; there is no partial result.
/// Anchor row order is preserved. Enrichment sources must return at most one
/// row per key; a missing row leaves that source's elements null.
pub fn resolve(
    def: &ServiceDefinition,
    params: &Params,
    resources: Lookup<'_>,
    source: &dyn Source,
) -> Result<ResolvedResult, ResolveError> {
    check_params(def, params)?;
    let lookup = |id: &str| resources.get(id).ok_or_else(|| ResolveError::UnknownResource(id.to_string()));

    let anchor_res = lookup(&def.anchor)?;
    let anchor_rule =
        rule_for(def, anchor_res).ok_or_else(|| ResolveError::Schema(format!("no extraction rule for {}", def.anchor)))?;
    let supplied: Params = params.iter().filter(|(_, v)| !v.is_null()).map(|(k, v)| (k.clone(), v.clone())).collect();
    let anchor = fetch(source, anchor_res, &anchor_rule, &supplied)?;

    let mut anchor_keys: HashMap<&str, usize> = HashMap::new();
    for (param, column) in key_bindings(def, &def.anchor) {
        anchor_keys.insert(param, column_of(&anchor, &def.anchor, column)?);
    }

    let enrichment_ids = def.enrichment_resources();
    let enrichment_res = enrichment_ids.iter().map(|id| lookup(id)).collect::<Result<Vec<_>, _>>()?;
    let enrichments: Vec<Enrichment> = if enrichment_res.len() > 1 {
        thread::scope(|s| {
            let handles: Vec<_> = enrichment_res
                .iter()
                .map(|res| {
                    let anchor = &anchor;
                    let anchor_keys = &anchor_keys;
                    s.spawn(move || enrich(def, res, anchor, anchor_keys, source))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("enrichment thread panicked"))
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        enrichment_res
            .iter()
            .map(|res| enrich(def, res, &anchor, &anchor_keys, source))
            .collect::<Result<Vec<_>, _>>()?
    };

    // Column positions of each mapped element in its source table.
    enum Slot {
        Anchor(usize),
        Enrichment { which: usize, column: Option<usize> },
    }
    let mut slots: Vec<(&str, Slot)> = Vec::new();
    for m in &def.mappings {
        let slot = if m.resource_id == def.anchor {
            Slot::Anchor(column_of(&anchor, &def.anchor, &m.source_column)?)
        } else {
            let which = enrichment_ids.iter().position(|id| *id == m.resource_id).expect("listed");
            let e = &enrichments[which];
            let column = e.table_columns.iter().position(|c| c.name == m.source_column);
            if column.is_none() && !e.table_columns.is_empty() {
                return Err(ResolveError::Schema(format!("{} returned no column {}", e.resource, m.source_column)));
            }
            Slot::Enrichment { which, column }
        };
        slots.push((&m.element, slot));
    }

    let columns = def.output_columns();
    let mut table = Table::empty(columns).map_err(|e| ResolveError::Schema(e.to_string()))?;
    for (i, arow) in anchor.rows().iter().enumerate() {
        let mut values: HashMap<String, Value> = HashMap::with_capacity(slots.len() + def.transforms.len());
        for (element, slot) in &slots {
            let v = match slot {
                Slot::Anchor(c) => arow[*c].clone(),
                Slot::Enrichment { which, column } => match (&enrichments[*which].rows[i], column) {
                    (Some(row), Some(c)) => row[*c].clone(),
                    _ => Value::Null,
                },
            };
            values.insert(element.to_string(), v);
        }
        for t in &def.transforms {
            let v = eval_expr(&t.expr, &values).map_err(|error| ResolveError::Eval {
                element: t.element.clone(),
                error,
            })?;
            values.insert(t.element.clone(), v);
        }
        let out = def
            .presentation
            .iter()
            .map(|p| values.get(&p.element).cloned().unwrap_or(Value::Null))
            .collect();
        table.push_row(out).map_err(|e| ResolveError::Schema(e.to_string()))?;
    }

    let provenance = def
        .mappings
        .iter()
        .map(|m| (m.element.clone(), m.resource_id.clone()))
        .collect();
    Ok(ResolvedResult { table, provenance })
}

//! Workbook files: one XML document holding the grid, bindings, pending
//! edits, audit rings and checkpoints. `docs/workbook-format.md` describes it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{AuditRecord, Binding, BindingState, CellAddress, Checkpoint, ParamSource, Snapshot, Workbook, WorkbookError};
use crate::protocol::xml::{self, Elem, Writer};
use crate::protocol::{self, DecodeError, EncodeError};
use crate::value::{Timestamp, Value, ValueType};

pub const FORMAT_VERSION: u32 = 1;

impl From<EncodeError> for WorkbookError {
    fn from(e: EncodeError) -> Self {
        WorkbookError::Format(e.to_string())
    }
}

impl From<DecodeError> for WorkbookError {
    fn from(e: DecodeError) -> Self {
        WorkbookError::Format(e.0)
    }
}

fn bad(msg: impl Into<String>) -> DecodeError {
    DecodeError(msg.into())
}

fn write_value(w: &mut Writer, tag: &str, attrs: &[(&str, &str)], v: &Value) -> Result<(), EncodeError> {
    let mut all = attrs.to_vec();
    all.push(("type", v.tag().as_str()));
    if v.is_null() {
        w.empty(tag, &all)?;
    } else {
        w.leaf(tag, &all, &v.encode())?;
    }
    Ok(())
}

fn read_value(e: &Elem) -> Result<Value, DecodeError> {
    let ty: ValueType = e.req("type")?.parse().map_err(|_| bad("bad value type"))?;
    Value::decode(ty, &e.text()?).map_err(|err| bad(err.to_string()))
}

fn address(e: &Elem, attr: &str) -> Result<CellAddress, DecodeError> {
    e.req(attr)?.parse().map_err(|err: super::AddressError| bad(err.to_string()))
}

fn timestamp(e: &Elem, attr: &str) -> Result<Timestamp, DecodeError> {
    e.req(attr)?.parse().map_err(|_| bad(format!("bad timestamp in {attr}")))
}

fn write_snapshot(w: &mut Writer, s: &Snapshot) -> Result<(), EncodeError> {
    w.open("snapshot", &[])?;
    for (a, v) in &s.grid {
        write_value(w, "cell", &[("ref", &a.to_string())], v)?;
    }
    for b in s.bindings.values() {
        write_binding(w, b)?;
    }
    for a in &s.dirty {
        w.empty("dirty", &[("ref", &a.to_string())])?;
    }
    w.close("snapshot");
    Ok(())
}

fn write_binding(w: &mut Writer, b: &Binding) -> Result<(), EncodeError> {
    let id = b.id.to_string();
    let origin = b.origin.to_string();
    let rows = b.rows.to_string();
    let last = b.last_refresh.map(|t| t.to_string());
    let (state, error) = match &b.state {
        BindingState::NeverRefreshed => ("never-refreshed", None),
        BindingState::Fresh => ("fresh", None),
        BindingState::Error(m) => ("error", Some(m.as_str())),
    };
    let mut attrs = vec![
        ("id", id.as_str()),
        ("origin", origin.as_str()),
        ("service", b.service.as_str()),
        ("mode", b.mode.as_str()),
        ("rows", rows.as_str()),
        ("state", state),
    ];
    if let Some(m) = error {
        attrs.push(("error", m));
    }
    if let Some(t) = &last {
        attrs.push(("last-refresh", t));
    }
    w.open("binding", &attrs)?;
    for (name, src) in &b.params {
        match src {
            ParamSource::Literal(v) => write_value(w, "param", &[("name", name)], v)?,
            ParamSource::Cell(a) => {
                w.empty("param", &[("name", name), ("ref", &a.to_string())])?;
            }
        }
    }
    for (name, v) in &b.resolved {
        write_value(w, "resolved", &[("name", name)], v)?;
    }
    if let Some(meta) = &b.meta {
        protocol::write_meta(w, meta)?;
    }
    protocol::write_schema(w, &b.schema)?;
    w.close("binding");
    Ok(())
}

fn read_binding(e: &Elem) -> Result<Binding, DecodeError> {
    e.attrs(&["id", "origin", "service", "mode", "rows", "state", "error", "last-refresh"])?;
    let state = match (e.req("state")?, e.opt("error")) {
        ("never-refreshed", None) => BindingState::NeverRefreshed,
        ("fresh", None) => BindingState::Fresh,
        ("error", Some(m)) => BindingState::Error(m.to_string()),
        (s, _) => return Err(bad(format!("bad binding state {s}"))),
    };
    let mut params = BTreeMap::new();
    let mut resolved = BTreeMap::new();
    let mut meta = None;
    let mut schema = None;
    for c in e.children()? {
        match c.name() {
            "param" => {
                c.attrs(&["name", "ref", "type"])?;
                let src = match c.opt("ref") {
                    Some(_) => {
                        c.no_children()?;
                        ParamSource::Cell(address(&c, "ref")?)
                    }
                    None => ParamSource::Literal(read_value(&c)?),
                };
                params.insert(c.req("name")?.to_string(), src);
            }
            "resolved" => {
                c.attrs(&["name", "type"])?;
                resolved.insert(c.req("name")?.to_string(), read_value(&c)?);
            }
            "meta" if meta.is_none() && schema.is_none() => meta = Some(protocol::decode_meta(&c)?),
            "service-schema" if schema.is_none() => schema = Some(protocol::read_schema(&c)?),
            other => return Err(bad(format!("unexpected <{other}> in <binding>"))),
        }
    }
    Ok(Binding {
        id: e.number("id")?,
        origin: address(e, "origin")?,
        service: e.req("service")?.to_string(),
        params,
        mode: e.req("mode")?.parse().map_err(bad)?,
        schema: schema.ok_or_else(|| bad("<binding> needs <service-schema>"))?,
        rows: e.number("rows")?,
        last_refresh: e.opt("last-refresh").map(|_| timestamp(e, "last-refresh")).transpose()?,
        meta,
        state,
        resolved,
    })
}

fn read_snapshot(e: &Elem) -> Result<Snapshot, DecodeError> {
    e.expect_name("snapshot")?;
    e.attrs(&[])?;
    let mut s = Snapshot::default();
    for c in e.children()? {
        match c.name() {
            "cell" => {
                c.attrs(&["ref", "type"])?;
                let v = read_value(&c)?;
                if v.is_null() || s.grid.insert(address(&c, "ref")?, v).is_some() {
                    return Err(bad("null or repeated cell"));
                }
            }
            "binding" => {
                let b = read_binding(&c)?;
                if s.bindings.insert(b.id, b).is_some() {
                    return Err(bad("repeated binding id"));
                }
            }
            "dirty" => {
                c.attrs(&["ref"])?;
                c.no_children()?;
                s.dirty.insert(address(&c, "ref")?);
            }
            other => return Err(bad(format!("unexpected <{other}> in <snapshot>"))),
        }
    }
    Ok(s)
}

impl Workbook {
    pub fn to_xml(&self) -> Result<Vec<u8>, WorkbookError> {
        let mut w = Writer::default();
        let version = FORMAT_VERSION.to_string();
        let depth = self.audit_depth.to_string();
        let next_b = self.next_binding.to_string();
        let next_c = self.next_checkpoint.to_string();
        w.open(
            "workbook",
            &[
                ("format", &version),
                ("audit-depth", &depth),
                ("next-binding", &next_b),
                ("next-checkpoint", &next_c),
            ],
        )?;
        write_snapshot(&mut w, &self.current)?;
        w.open("audit", &[])?;
        for r in self.audit.values().flatten() {
            let attrs = [
                ("ref", r.address.to_string()),
                ("timestamp", r.timestamp.to_string()),
                ("user", r.user.clone()),
                ("origin", r.origin.as_str().to_string()),
            ];
            let attrs: Vec<(&str, &str)> = attrs.iter().map(|(k, v)| (*k, v.as_str())).collect();
            w.open("record", &attrs)?;
            write_value(&mut w, "previous", &[], &r.previous)?;
            write_value(&mut w, "new", &[], &r.new)?;
            w.close("record");
        }
        w.close("audit");
        for c in &self.checkpoints {
            let id = c.id.to_string();
            let ts = c.timestamp.to_string();
            w.open("checkpoint", &[("id", &id), ("label", &c.label), ("timestamp", &ts)])?;
            write_snapshot(&mut w, &c.snapshot)?;
            w.close("checkpoint");
        }
        w.close("workbook");
        Ok(w.finish())
    }

    pub fn from_xml(bytes: &[u8]) -> Result<Workbook, WorkbookError> {
        let doc = xml::parse(bytes)?;
        let root = Elem::root(&doc, "workbook")?;
        root.attrs(&["format", "audit-depth", "next-binding", "next-checkpoint"])?;
        let format: u32 = root.number("format")?;
        if format != FORMAT_VERSION {
            return Err(WorkbookError::Format(format!("unsupported format version {format}")));
        }
        let children = root.children()?;
        let [snapshot, audit, checkpoints @ ..] = children.as_slice() else {
            return Err(bad("<workbook> needs <snapshot> and <audit>").into());
        };
        let mut wb = Workbook::new(root.number("audit-depth")?);
        wb.current = read_snapshot(snapshot)?;
        wb.next_binding = root.number("next-binding")?;
        wb.next_checkpoint = root.number("next-checkpoint")?;

        audit.expect_name("audit")?;
        audit.attrs(&[])?;
        let mut rings: BTreeMap<CellAddress, VecDeque<AuditRecord>> = BTreeMap::new();
        for r in audit.children()? {
            r.expect_name("record")?;
            r.attrs(&["ref", "timestamp", "user", "origin"])?;
            let values = r.children()?;
            let [prev, new] = values.as_slice() else {
                return Err(bad("<record> needs <previous> and <new>").into());
            };
            prev.expect_name("previous")?;
            new.expect_name("new")?;
            let rec = AuditRecord {
                address: address(&r, "ref")?,
                previous: read_value(prev)?,
                new: read_value(new)?,
                timestamp: timestamp(&r, "timestamp")?,
                user: r.req("user")?.to_string(),
                origin: r.req("origin")?.parse().map_err(bad)?,
            };
            rings.entry(rec.address.clone()).or_default().push_back(rec);
        }
        wb.audit = rings;

        let mut seen = BTreeSet::new();
        for c in checkpoints {
            c.expect_name("checkpoint")?;
            c.attrs(&["id", "label", "timestamp"])?;
            let [snap] = c.children()?.try_into().map_err(|_| bad("<checkpoint> needs one <snapshot>"))?;
            let id: u32 = c.number("id")?;
            if !seen.insert(id) || id >= wb.next_checkpoint {
                return Err(bad(format!("bad checkpoint id {id}")).into());
            }
            wb.checkpoints.push(Checkpoint {
                id,
                label: c.req("label")?.to_string(),
                timestamp: timestamp(c, "timestamp")?,
                snapshot: read_snapshot(&snap)?,
            });
        }
        if wb.current.bindings.keys().any(|id| *id >= wb.next_binding) {
            return Err(bad("binding id beyond next-binding").into());
        }
        Ok(wb)
    }
}

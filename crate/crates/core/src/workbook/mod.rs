//! The spreadsheet-side engine: a cell grid whose blocks are bound to
//! services, with refresh, protection, per-cell audit rings, checkpoints and
//! write-back.
//!
//! Every mutating operation takes the acting user and the current time so
//! behaviour is deterministic under test. A workbook is a plain value; callers
//! that share one across threads serialize mutations themselves.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::KeySource;
use crate::protocol::{ResponseMeta, ServiceRequest, ServiceSchema, UpdateRequest, WireUpdateRow};
use crate::value::{Timestamp, Value, ValueType};

mod address;
mod gateway;
mod persist;

pub use address::{col_letters, AddressError, Block, CellAddress, DEFAULT_SHEET, MAX_COL};
pub use gateway::{check_status, GatewayError, HttpGateway, MemoryGateway, ServiceGateway};
pub use persist::FORMAT_VERSION;

pub const DEFAULT_AUDIT_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkbookError {
    #[error("unknown binding {0}")]
    UnknownBinding(u32),
    #[error("service {0} is not in the directory")]
    UnknownService(String),
    #[error("block at {origin} overlaps binding {other}")]
    Overlap { origin: CellAddress, other: u32 },
    #[error("block does not fit on the sheet: {0}")]
    OutOfGrid(String),
    #[error("{0}")]
    Mode(String),
    #[error("service {service} has no key parameter {param}")]
    UnknownParam { service: String, param: String },
    #[error("required parameter {0} not bound")]
    MissingParam(String),
    #[error("parameter {param} refers to empty cell {cell}")]
    BadParamRef { param: String, cell: CellAddress },
    #[error(transparent)]
    Server(#[from] GatewayError),
    #[error("cell {0} is protected")]
    ProtectedCell(CellAddress),
    #[error("column {column} at {address} is not writable")]
    ColumnNotWritable { address: CellAddress, column: String },
    #[error("cell {address} expects {expected}")]
    TypeMismatch { address: CellAddress, expected: ValueType },
    #[error("binding {0} has no pending edits")]
    NothingToPush(u32),
    #[error("binding {0} has unpushed edits; push or restore first")]
    PendingEdits(u32),
    #[error("unknown checkpoint {0}")]
    UnknownCheckpoint(u32),
    #[error("workbook file: {0}")]
    Format(String),
}

impl WorkbookError {
    /// Short stable identifier for machine-readable output.
    pub fn code(&self) -> &str {
        match self {
            WorkbookError::UnknownBinding(_) => "unknown-binding",
            WorkbookError::UnknownService(_) => "unknown-service",
            WorkbookError::Overlap { .. } => "overlap",
            WorkbookError::OutOfGrid(_) => "out-of-grid",
            WorkbookError::Mode(_) => "mode",
            WorkbookError::UnknownParam { .. } => "unknown-param",
            WorkbookError::MissingParam(_) => "missing-param",
            WorkbookError::BadParamRef { .. } => "bad-param-ref",
            WorkbookError::Server(_) => "server",
            WorkbookError::ProtectedCell(_) => "protected-cell",
            WorkbookError::ColumnNotWritable { .. } => "column-not-writable",
            WorkbookError::TypeMismatch { .. } => "type-mismatch",
            WorkbookError::NothingToPush(_) => "nothing-to-push",
            WorkbookError::PendingEdits(_) => "pending-edits",
            WorkbookError::UnknownCheckpoint(_) => "unknown-checkpoint",
            WorkbookError::Format(_) => "format",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ReadOnly,
    Writable,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ReadOnly => "read-only",
            Mode::Writable => "writable",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "read-only" => Ok(Mode::ReadOnly),
            "writable" => Ok(Mode::Writable),
            other => Err(format!("unknown mode {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamSource {
    Literal(Value),
    Cell(CellAddress),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "message", rename_all = "kebab-case")]
pub enum BindingState {
    NeverRefreshed,
    Fresh,
    Error(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Staleness {
    Fresh,
    Stale,
    NeverRefreshed,
    Error,
}

/// A block of cells tied to one service invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub id: u32,
    pub origin: CellAddress,
    pub service: String,
    pub params: BTreeMap<String, ParamSource>,
    pub mode: Mode,
    /// Schema fetched at bind time; fixes the block width and writability.
    pub schema: ServiceSchema,
    /// Data rows written by the last refresh.
    pub rows: u32,
    pub last_refresh: Option<Timestamp>,
    pub meta: Option<ResponseMeta>,
    pub state: BindingState,
    /// Parameter values used by the last successful refresh.
    pub resolved: BTreeMap<String, Value>,
}

impl Binding {
    /// Header row plus at least one data row.
    pub fn block(&self) -> Block {
        block_for(&self.origin, self.rows, self.schema.columns.len())
    }

    fn block_with_rows(&self, rows: u32) -> Block {
        block_for(&self.origin, rows, self.schema.columns.len())
    }

    fn writable_column(&self, element: &str) -> Option<&str> {
        let update = self.schema.update.as_ref()?;
        update
            .writable
            .iter()
            .find(|w| w.element == element)
            .map(|w| w.column.as_str())
    }
}

fn block_for(origin: &CellAddress, rows: u32, cols: usize) -> Block {
    Block {
        origin: origin.clone(),
        rows: 1 + rows.max(1),
        cols: cols.max(1) as u32,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Refresh,
    ManualEdit,
    Restore,
    PushConfirm,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Refresh => "refresh",
            Origin::ManualEdit => "manual-edit",
            Origin::Restore => "restore",
            Origin::PushConfirm => "push-confirm",
        }
    }
}

impl std::str::FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Origin::Refresh, Origin::ManualEdit, Origin::Restore, Origin::PushConfirm]
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown origin {s}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub address: CellAddress,
    pub previous: Value,
    pub new: Value,
    pub timestamp: Timestamp,
    pub user: String,
    pub origin: Origin,
}

/// Grid values, bindings and pending edits at one moment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Snapshot {
    pub grid: BTreeMap<CellAddress, Value>,
    pub bindings: BTreeMap<u32, Binding>,
    pub dirty: BTreeSet<CellAddress>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub id: u32,
    pub label: String,
    pub timestamp: Timestamp,
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub id: u32,
    pub label: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshOutcome {
    pub rows: u32,
    /// Cells whose value changed.
    pub changed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditOutcome {
    Changed,
    Unchanged,
}

/// One cell as shown to a grid UI.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellView {
    pub address: CellAddress,
    pub value: Value,
    pub binding: Option<u32>,
    pub header: bool,
    pub protected: bool,
    pub writable: bool,
    pub dirty: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workbook {
    pub(crate) audit_depth: usize,
    pub(crate) current: Snapshot,
    pub(crate) audit: BTreeMap<CellAddress, VecDeque<AuditRecord>>,
    pub(crate) checkpoints: Vec<Checkpoint>,
    pub(crate) next_binding: u32,
    pub(crate) next_checkpoint: u32,
}

impl Default for Workbook {
    fn default() -> Self {
        Workbook::new(DEFAULT_AUDIT_DEPTH)
    }
}

impl Workbook {
    /// `audit_depth` is the per-cell history length; zero is treated as one.
    pub fn new(audit_depth: usize) -> Self {
        Workbook {
            audit_depth: audit_depth.max(1),
            current: Snapshot::default(),
            audit: BTreeMap::new(),
            checkpoints: Vec::new(),
            next_binding: 1,
            next_checkpoint: 1,
        }
    }

    pub fn audit_depth(&self) -> usize {
        self.audit_depth
    }

    pub fn value(&self, a: &CellAddress) -> Value {
        self.current.grid.get(a).cloned().unwrap_or(Value::Null)
    }

    /// Non-empty cells.
    pub fn grid(&self) -> &BTreeMap<CellAddress, Value> {
        &self.current.grid
    }

    pub fn bindings(&self) -> &BTreeMap<u32, Binding> {
        &self.current.bindings
    }

    pub fn binding(&self, id: u32) -> Result<&Binding, WorkbookError> {
        self.current.bindings.get(&id).ok_or(WorkbookError::UnknownBinding(id))
    }

    pub fn dirty(&self) -> &BTreeSet<CellAddress> {
        &self.current.dirty
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.current
    }

    /// History of one cell, newest first.
    pub fn audit_of(&self, a: &CellAddress) -> Vec<AuditRecord> {
        self.audit.get(a).map(|r| r.iter().cloned().collect()).unwrap_or_default()
    }

    pub fn audited_cells(&self) -> impl Iterator<Item = &CellAddress> {
        self.audit.keys()
    }

    pub fn list_checkpoints(&self) -> Vec<CheckpointSummary> {
        self.checkpoints
            .iter()
            .map(|c| CheckpointSummary {
                id: c.id,
                label: c.label.clone(),
                timestamp: c.timestamp,
            })
            .collect()
    }

    pub fn checkpoint_snapshot(&self, id: u32) -> Option<&Snapshot> {
        self.checkpoints.iter().find(|c| c.id == id).map(|c| &c.snapshot)
    }

    /// The binding whose block contains `a`.
    pub fn binding_at(&self, a: &CellAddress) -> Option<&Binding> {
        self.current.bindings.values().find(|b| b.block().contains(a))
    }

    fn overlapping(&self, block: &Block, except: Option<u32>) -> Option<u32> {
        self.current
            .bindings
            .values()
            .filter(|b| Some(b.id) != except)
            .find(|b| b.block().overlaps(block))
            .map(|b| b.id)
    }

    fn set(&mut self, a: &CellAddress, new: Value, user: &str, now: Timestamp, origin: Origin) -> bool {
        let previous = self.value(a);
        if previous == new {
            return false;
        }
        if new.is_null() {
            self.current.grid.remove(a);
        } else {
            self.current.grid.insert(a.clone(), new.clone());
        }
        self.record(AuditRecord {
            address: a.clone(),
            previous,
            new,
            timestamp: now,
            user: user.to_string(),
            origin,
        });
        true
    }

    fn record(&mut self, r: AuditRecord) {
        let ring = self.audit.entry(r.address.clone()).or_default();
        ring.push_front(r);
        ring.truncate(self.audit_depth);
    }

    /// Links a block at `origin` to `service`. No data is fetched.
    pub fn bind(
        &mut self,
        gw: &dyn ServiceGateway,
        origin: CellAddress,
        service: &str,
        params: BTreeMap<String, ParamSource>,
        mode: Mode,
    ) -> Result<u32, WorkbookError> {
        if !gw.directory()?.iter().any(|e| e.name == service) {
            return Err(WorkbookError::UnknownService(service.to_string()));
        }
        let schema = gw.schema(service)?;
        if mode == Mode::Writable && !schema.updatable() {
            return Err(WorkbookError::Mode(format!("service {service} is not updatable")));
        }
        for name in params.keys() {
            if !schema.keys.iter().any(|k| &k.name == name) {
                return Err(WorkbookError::UnknownParam {
                    service: service.to_string(),
                    param: name.clone(),
                });
            }
        }
        if let Some(k) = schema.keys.iter().find(|k| k.required && !params.contains_key(&k.name)) {
            return Err(WorkbookError::MissingParam(k.name.clone()));
        }
        let binding = Binding {
            id: self.next_binding,
            origin,
            service: service.to_string(),
            params,
            mode,
            schema,
            rows: 0,
            last_refresh: None,
            meta: None,
            state: BindingState::NeverRefreshed,
            resolved: BTreeMap::new(),
        };
        let block = binding.block();
        block.check().map_err(|e| WorkbookError::OutOfGrid(e.to_string()))?;
        if let Some(other) = self.overlapping(&block, None) {
            return Err(WorkbookError::Overlap {
                origin: binding.origin,
                other,
            });
        }
        let id = binding.id;
        self.next_binding += 1;
        self.current.bindings.insert(id, binding);
        Ok(id)
    }

    fn resolve_params(&self, b: &Binding) -> Result<BTreeMap<String, Value>, WorkbookError> {
        b.params
            .iter()
            .map(|(name, src)| {
                let v = match src {
                    ParamSource::Literal(v) => v.clone(),
                    ParamSource::Cell(a) => {
                        let v = self.value(a);
                        if v.is_null() {
                            return Err(WorkbookError::BadParamRef {
                                param: name.clone(),
                                cell: a.clone(),
                            });
                        }
                        v
                    }
                };
                Ok((name.clone(), v))
            })
            .collect()
    }

    fn fail(&mut self, id: u32, err: WorkbookError) -> WorkbookError {
        if let Some(b) = self.current.bindings.get_mut(&id) {
            b.state = BindingState::Error(err.to_string());
        }
        err
    }

    /// Re-invokes the service and writes the result block.
    ///
    /// Only changed cells are written and audited. On any failure the grid is
    /// left exactly as it was.
    pub fn refresh(
        &mut self,
        gw: &dyn ServiceGateway,
        id: u32,
        user: &str,
        now: Timestamp,
    ) -> Result<RefreshOutcome, WorkbookError> {
        let b = self.binding(id)?.clone();
        let old_block = b.block();
        if self.current.dirty.iter().any(|a| old_block.contains(a)) {
            return Err(WorkbookError::PendingEdits(id));
        }
        let resolved = self.resolve_params(&b)?;
        let mut request = ServiceRequest::new(&b.service);
        for (k, v) in &resolved {
            if !v.is_null() {
                request = request.param(k, v.encode());
            }
        }
        let (meta, table) = match gw.invoke(&request) {
            Ok(r) => r,
            Err(e) => return Err(self.fail(id, e.into())),
        };
        let expected: Vec<&str> = b.schema.column_names().collect();
        let got: Vec<&str> = table.column_names().collect();
        if expected != got {
            let e = GatewayError::Protocol(format!("columns {got:?} differ from bound schema {expected:?}"));
            return Err(self.fail(id, e.into()));
        }
        let rows = u32::try_from(table.len()).map_err(|_| self.fail(id, WorkbookError::OutOfGrid("too many rows".into())))?;
        let new_block = b.block_with_rows(rows);
        if let Err(e) = new_block.check() {
            return Err(self.fail(id, WorkbookError::OutOfGrid(e.to_string())));
        }
        if let Some(other) = self.overlapping(&new_block, Some(id)) {
            return Err(self.fail(
                id,
                WorkbookError::Overlap {
                    origin: b.origin.clone(),
                    other,
                },
            ));
        }

        let mut writes: BTreeMap<CellAddress, Value> = old_block.cells().map(|a| (a, Value::Null)).collect();
        for (c, name) in expected.iter().enumerate() {
            writes.insert(b.origin.offset(0, c as u32).expect("checked"), Value::text(*name));
        }
        for (r, row) in table.rows().iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                writes.insert(b.origin.offset(1 + r as u32, c as u32).expect("checked"), v.clone());
            }
        }
        let mut changed = 0;
        for (a, v) in writes {
            if new_block.contains(&a) || old_block.contains(&a) {
                changed += usize::from(self.set(&a, v, user, now, Origin::Refresh));
            }
        }
        let slot = self.current.bindings.get_mut(&id).expect("present");
        slot.rows = rows;
        slot.last_refresh = Some(now);
        slot.meta = Some(meta);
        slot.state = BindingState::Fresh;
        slot.resolved = resolved;
        Ok(RefreshOutcome { rows, changed })
    }

    /// Manual edit. Cells in read-only blocks, headers and non-writable
    /// columns are refused.
    pub fn edit_cell(&mut self, a: &CellAddress, value: Value, user: &str, now: Timestamp) -> Result<EditOutcome, WorkbookError> {
        let mut dirty = false;
        if let Some(b) = self.binding_at(a) {
            if b.mode == Mode::ReadOnly || a.row == b.origin.row || a.row - b.origin.row > b.rows {
                return Err(WorkbookError::ProtectedCell(a.clone()));
            }
            let col = &b.schema.columns[(a.col - b.origin.col) as usize];
            if b.writable_column(&col.name).is_none() {
                return Err(WorkbookError::ColumnNotWritable {
                    address: a.clone(),
                    column: col.name.clone(),
                });
            }
            if !value.fits(col.ty) {
                return Err(WorkbookError::TypeMismatch {
                    address: a.clone(),
                    expected: col.ty,
                });
            }
            dirty = true;
        }
        if !self.set(a, value, user, now, Origin::ManualEdit) {
            return Ok(EditOutcome::Unchanged);
        }
        if dirty {
            self.current.dirty.insert(a.clone());
        }
        Ok(EditOutcome::Changed)
    }

    /// Sends the binding's pending edits to its update service. Returns the
    /// row count the server applied. Nothing changes locally on failure.
    pub fn push_updates(&mut self, gw: &dyn ServiceGateway, id: u32, user: &str, now: Timestamp) -> Result<usize, WorkbookError> {
        let b = self.binding(id)?;
        if b.mode != Mode::Writable {
            return Err(WorkbookError::Mode(format!("binding {id} is read-only")));
        }
        let block = b.block();
        let pending: Vec<CellAddress> = self.current.dirty.iter().filter(|a| block.contains(a)).cloned().collect();
        if pending.is_empty() {
            return Err(WorkbookError::NothingToPush(id));
        }
        let update = b.schema.update.as_ref().expect("writable bindings are updatable");
        let wire = |v: Value| (!v.is_null()).then(|| v.encode());

        let mut by_row: BTreeMap<u32, Vec<&CellAddress>> = BTreeMap::new();
        for a in &pending {
            by_row.entry(a.row).or_default().push(a);
        }
        let mut rows = Vec::new();
        for (row, cells) in &by_row {
            let mut out = WireUpdateRow::default();
            for k in &update.keys {
                let v = match &k.source {
                    KeySource::Param(p) => b.resolved.get(p).cloned().unwrap_or(Value::Null),
                    KeySource::Element(e) => {
                        let c = b.schema.columns.iter().position(|c| &c.name == e).expect("schema lists key element");
                        self.value(&CellAddress::new(b.origin.sheet.clone(), b.origin.col + c as u32, *row).expect("in block"))
                    }
                };
                out.keys.push((k.column.clone(), wire(v)));
            }
            for a in cells {
                let element = &b.schema.columns[(a.col - b.origin.col) as usize].name;
                let column = b.writable_column(element).expect("dirty cells are writable");
                out.values.push((column.to_string(), wire(self.value(a))));
            }
            rows.push(out);
        }
        let service = b
            .meta
            .as_ref()
            .and_then(|m| m.update_service.clone())
            .unwrap_or_else(|| b.service.clone());
        let applied = gw.update(&UpdateRequest { service, rows })?;
        for a in pending {
            self.current.dirty.remove(&a);
            let v = self.value(&a);
            self.record(AuditRecord {
                address: a,
                previous: v.clone(),
                new: v,
                timestamp: now,
                user: user.to_string(),
                origin: Origin::PushConfirm,
            });
        }
        Ok(applied)
    }

    pub fn checkpoint(&mut self, label: &str, now: Timestamp) -> u32 {
        let id = self.next_checkpoint;
        self.next_checkpoint += 1;
        self.checkpoints.push(Checkpoint {
            id,
            label: label.to_string(),
            timestamp: now,
            snapshot: self.current.clone(),
        });
        id
    }

    /// Returns the number of cells whose value changed. Audit history and the
    /// checkpoint list are kept.
    pub fn restore(&mut self, id: u32, user: &str, now: Timestamp) -> Result<usize, WorkbookError> {
        let snap = self.checkpoint_snapshot(id).ok_or(WorkbookError::UnknownCheckpoint(id))?.clone();
        let cells: BTreeSet<CellAddress> = self.current.grid.keys().chain(snap.grid.keys()).cloned().collect();
        let mut changed = 0;
        for a in cells {
            let v = snap.grid.get(&a).cloned().unwrap_or(Value::Null);
            changed += usize::from(self.set(&a, v, user, now, Origin::Restore));
        }
        self.current.bindings = snap.bindings;
        self.current.dirty = snap.dirty;
        Ok(changed)
    }

    pub fn staleness(&self, id: u32, now: Timestamp) -> Result<Staleness, WorkbookError> {
        let b = self.binding(id)?;
        Ok(match (&b.state, b.last_refresh, &b.meta) {
            (BindingState::Error(_), ..) => Staleness::Error,
            (BindingState::NeverRefreshed, ..) | (_, None, _) | (_, _, None) => Staleness::NeverRefreshed,
            (BindingState::Fresh, Some(at), Some(meta)) => {
                if now.seconds_since(at) > i64::from(meta.refresh_seconds) {
                    Staleness::Stale
                } else {
                    Staleness::Fresh
                }
            }
        })
    }

    /// Non-empty cells plus every cell of every bound block, in address order.
    pub fn grid_view(&self) -> Vec<CellView> {
        let mut cells: BTreeSet<CellAddress> = self.current.grid.keys().cloned().collect();
        for b in self.current.bindings.values() {
            cells.extend(b.block().cells());
        }
        cells
            .into_iter()
            .map(|a| {
                let binding = self.binding_at(&a);
                let header = binding.is_some_and(|b| a.row == b.origin.row);
                let writable = binding.is_some_and(|b| {
                    b.mode == Mode::Writable
                        && !header
                        && a.row - b.origin.row <= b.rows
                        && b.writable_column(&b.schema.columns[(a.col - b.origin.col) as usize].name).is_some()
                });
                CellView {
                    value: self.value(&a),
                    binding: binding.map(|b| b.id),
                    header,
                    protected: binding.is_some() && !writable,
                    writable,
                    dirty: self.current.dirty.contains(&a),
                    address: a,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;

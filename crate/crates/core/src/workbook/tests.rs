use super::*;
use crate::protocol::{KeySummary, SchemaColumn, UpdateCapability, UpdateKey, WritableColumn};
use crate::table::{Column, Table};
use proptest::prelude::*;

fn t(secs: i64) -> Timestamp {
    Timestamp::from_unix(secs).unwrap()
}

fn addr(s: &str) -> CellAddress {
    s.parse().unwrap()
}

fn schema(updatable: bool) -> ServiceSchema {
    ServiceSchema {
        name: "customer-info".into(),
        version: 1,
        refresh_seconds: 300,
        keys: vec![KeySummary {
            name: "customerID".into(),
            ty: ValueType::Text,
            required: true,
        }],
        columns: ["name", "address", "phone", "credit_rating"]
            .map(|n| SchemaColumn {
                name: n.into(),
                ty: ValueType::Text,
                format: None,
            })
            .to_vec(),
        update: updatable.then(|| UpdateCapability {
            keys: vec![UpdateKey {
                column: "customer_id".into(),
                source: KeySource::Param("customerID".into()),
            }],
            writable: ["phone", "address"]
                .map(|c| WritableColumn {
                    column: c.into(),
                    element: c.into(),
                })
                .to_vec(),
        }),
    }
}

fn row(phone: &str) -> Table {
    Table::new(
        ["name", "address", "phone", "credit_rating"].map(Column::text).to_vec(),
        vec![vec![
            Value::text("Acme Corp"),
            Value::text("1 Main St"),
            Value::text(phone),
            Value::text("AA"),
        ]],
    )
    .unwrap()
}

fn setup() -> (Workbook, MemoryGateway) {
    let gw = MemoryGateway::new();
    gw.add_service(schema(true), row("555-0100"));
    let mut wb = Workbook::default();
    wb.edit_cell(&addr("A2"), Value::text("C001"), "alice", t(0)).unwrap();
    (wb, gw)
}

fn by_ref() -> BTreeMap<String, ParamSource> {
    [("customerID".to_string(), ParamSource::Cell(addr("A2")))].into()
}

#[test]
fn bind_examples() {
    let (mut wb, gw) = setup();
    assert_eq!(wb.bind(&gw, addr("Sheet1!B2"), "customer-info", by_ref(), Mode::ReadOnly), Ok(1));
    assert_eq!(wb.binding(1).unwrap().state, BindingState::NeverRefreshed);
    assert!(gw.requests().is_empty());
    assert!(matches!(
        wb.bind(&gw, addr("C3"), "customer-info", by_ref(), Mode::ReadOnly),
        Err(WorkbookError::Overlap { other: 1, .. })
    ));
    assert!(matches!(
        wb.bind(&gw, addr("B9"), "nope", by_ref(), Mode::ReadOnly),
        Err(WorkbookError::UnknownService(_))
    ));
    let ro = MemoryGateway::new();
    ro.add_service(schema(false), row("x"));
    assert!(matches!(
        wb.bind(&ro, addr("B9"), "customer-info", by_ref(), Mode::Writable),
        Err(WorkbookError::Mode(_))
    ));
    assert!(matches!(
        wb.bind(&gw, addr("B9"), "customer-info", BTreeMap::new(), Mode::ReadOnly),
        Err(WorkbookError::MissingParam(_))
    ));
}

#[test]
fn refresh_writes_header_and_rows_and_audits_changes_only() {
    let (mut wb, gw) = setup();
    let id = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::ReadOnly).unwrap();
    let out = wb.refresh(&gw, id, "alice", t(10)).unwrap();
    assert_eq!(out, RefreshOutcome { rows: 1, changed: 8 });
    assert_eq!(wb.value(&addr("B2")), Value::text("name"));
    assert_eq!(wb.value(&addr("D3")), Value::text("555-0100"));
    assert_eq!(gw.requests()[0], ServiceRequest::new("customer-info").param("customerID", "C001"));

    let again = wb.refresh(&gw, id, "alice", t(20)).unwrap();
    assert_eq!(again.changed, 0);
    assert_eq!(wb.audit_of(&addr("D3")).len(), 1);

    gw.set_table("customer-info", row("555-0111"));
    wb.refresh(&gw, id, "alice", t(30)).unwrap();
    let head = &wb.audit_of(&addr("D3"))[0];
    assert_eq!((&head.previous, &head.new, head.origin), (&Value::text("555-0100"), &Value::text("555-0111"), Origin::Refresh));
}

#[test]
fn shrinking_result_clears_surplus_rows() {
    let (mut wb, gw) = setup();
    let two = Table::new(
        vec![Column::text("name"), Column::text("address"), Column::text("phone"), Column::text("credit_rating")],
        vec![vec![Value::text("a"); 4], vec![Value::text("b"); 4]],
    )
    .unwrap();
    gw.set_table("customer-info", two);
    let id = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::ReadOnly).unwrap();
    wb.refresh(&gw, id, "u", t(1)).unwrap();
    assert_eq!(wb.value(&addr("B4")), Value::text("b"));
    gw.set_table("customer-info", Table::empty(["name", "address", "phone", "credit_rating"].map(Column::text).to_vec()).unwrap());
    wb.refresh(&gw, id, "u", t(2)).unwrap();
    assert_eq!(wb.value(&addr("B3")), Value::Null);
    assert_eq!(wb.value(&addr("B4")), Value::Null);
    assert_eq!(wb.audit_of(&addr("B4"))[0].new, Value::Null);
    assert_eq!(wb.value(&addr("B2")), Value::text("name"));
}

#[test]
fn growth_into_another_binding_fails_without_writing() {
    let (mut wb, gw) = setup();
    let a = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::ReadOnly).unwrap();
    let b = wb.bind(&gw, addr("B4"), "customer-info", by_ref(), Mode::ReadOnly).unwrap();
    wb.refresh(&gw, b, "u", t(1)).unwrap();
    let two = Table::new(
        ["name", "address", "phone", "credit_rating"].map(Column::text).to_vec(),
        vec![vec![Value::text("a"); 4], vec![Value::text("b"); 4]],
    )
    .unwrap();
    gw.set_table("customer-info", two);
    let before = wb.grid().clone();
    assert!(matches!(wb.refresh(&gw, a, "u", t(2)), Err(WorkbookError::Overlap { other, .. }) if other == b));
    assert_eq!(wb.grid(), &before);
}

#[test]
fn refresh_while_down_leaves_grid_untouched() {
    let (mut wb, gw) = setup();
    let id = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::ReadOnly).unwrap();
    wb.refresh(&gw, id, "u", t(0)).unwrap();
    let before = wb.to_xml().unwrap();
    let grid = wb.grid().clone();
    gw.set_down(true);
    assert!(matches!(wb.refresh(&gw, id, "u", t(5)), Err(WorkbookError::Server(_))));
    assert_eq!(wb.grid(), &grid);
    assert!(matches!(wb.binding(id).unwrap().state, BindingState::Error(_)));
    assert_eq!(wb.staleness(id, t(5)), Ok(Staleness::Error));
    assert_ne!(wb.to_xml().unwrap(), before);
}

#[test]
fn empty_param_cell_is_bad_ref() {
    let (mut wb, gw) = setup();
    let params = [("customerID".to_string(), ParamSource::Cell(addr("A9")))].into();
    let id = wb.bind(&gw, addr("B2"), "customer-info", params, Mode::ReadOnly).unwrap();
    assert!(matches!(wb.refresh(&gw, id, "u", t(0)), Err(WorkbookError::BadParamRef { .. })));
}

#[test]
fn edit_examples() {
    let (mut wb, gw) = setup();
    let ro = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::ReadOnly).unwrap();
    wb.refresh(&gw, ro, "u", t(0)).unwrap();
    assert_eq!(
        wb.edit_cell(&addr("D3"), Value::text("x"), "u", t(1)),
        Err(WorkbookError::ProtectedCell(addr("D3")))
    );
    assert_eq!(wb.value(&addr("D3")), Value::text("555-0100"));

    let rw = wb.bind(&gw, addr("B10"), "customer-info", by_ref(), Mode::Writable).unwrap();
    wb.refresh(&gw, rw, "u", t(0)).unwrap();
    assert_eq!(wb.edit_cell(&addr("D11"), Value::text("555-0111"), "u", t(1)), Ok(EditOutcome::Changed));
    assert!(wb.dirty().contains(&addr("D11")));
    assert_eq!(wb.audit_of(&addr("D11"))[0].origin, Origin::ManualEdit);
    assert!(matches!(
        wb.edit_cell(&addr("B11"), Value::text("x"), "u", t(1)),
        Err(WorkbookError::ColumnNotWritable { .. })
    ));
    assert_eq!(
        wb.edit_cell(&addr("D10"), Value::text("x"), "u", t(1)),
        Err(WorkbookError::ProtectedCell(addr("D10")))
    );
    assert_eq!(wb.edit_cell(&addr("Z99"), Value::text("free"), "u", t(1)), Ok(EditOutcome::Changed));
    assert!(!wb.dirty().contains(&addr("Z99")));
    assert_eq!(wb.refresh(&gw, rw, "u", t(2)), Err(WorkbookError::PendingEdits(rw)));
}

#[test]
fn push_examples() {
    let (mut wb, gw) = setup();
    let id = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::Writable).unwrap();
    wb.refresh(&gw, id, "u", t(0)).unwrap();
    assert_eq!(wb.push_updates(&gw, id, "u", t(1)), Err(WorkbookError::NothingToPush(id)));
    wb.edit_cell(&addr("D3"), Value::text("555-0111"), "u", t(1)).unwrap();

    gw.fail_updates(Some(GatewayError::Server {
        status: 409,
        code: "no-such-key".into(),
        message: "no row C001".into(),
    }));
    assert!(matches!(wb.push_updates(&gw, id, "u", t(2)), Err(WorkbookError::Server(_))));
    assert!(wb.dirty().contains(&addr("D3")));

    gw.fail_updates(None);
    assert_eq!(wb.push_updates(&gw, id, "u", t(3)), Ok(1));
    assert!(wb.dirty().is_empty());
    let sent = &gw.updates()[0];
    assert_eq!(sent.service, "customer-info");
    assert_eq!(sent.rows[0].keys, vec![("customer_id".to_string(), Some("C001".to_string()))]);
    assert_eq!(sent.rows[0].values, vec![("phone".to_string(), Some("555-0111".to_string()))]);
    let head = &wb.audit_of(&addr("D3"))[0];
    assert_eq!(head.origin, Origin::PushConfirm);
    assert_eq!(head.previous, head.new);

    gw.set_table("customer-info", row("555-0111"));
    assert_eq!(wb.refresh(&gw, id, "u", t(4)).unwrap().changed, 0);
}

#[test]
fn checkpoint_examples() {
    let (mut wb, gw) = setup();
    let id = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::ReadOnly).unwrap();
    wb.refresh(&gw, id, "u", t(0)).unwrap();
    let c1 = wb.checkpoint("first", t(1));
    let snap = wb.snapshot().clone();
    wb.edit_cell(&addr("A2"), Value::text("C002"), "u", t(2)).unwrap();
    gw.set_table("customer-info", row("555-0111"));
    wb.refresh(&gw, id, "u", t(3)).unwrap();
    let c2 = wb.checkpoint("second", t(4));
    let later = wb.snapshot().clone();

    assert!(wb.restore(c1, "u", t(5)).unwrap() > 0);
    assert_eq!(wb.snapshot(), &snap);
    assert_eq!(wb.audit_of(&addr("D3"))[0].origin, Origin::Restore);
    wb.restore(c2, "u", t(6)).unwrap();
    assert_eq!(wb.snapshot(), &later);
    assert_eq!(wb.list_checkpoints().len(), 2);
    assert_eq!(wb.restore(999, "u", t(7)), Err(WorkbookError::UnknownCheckpoint(999)));
}

#[test]
fn staleness_examples() {
    let (mut wb, gw) = setup();
    let id = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::ReadOnly).unwrap();
    assert_eq!(wb.staleness(id, t(0)), Ok(Staleness::NeverRefreshed));
    wb.refresh(&gw, id, "u", t(0)).unwrap();
    assert_eq!(wb.staleness(id, t(200)), Ok(Staleness::Fresh));
    assert_eq!(wb.staleness(id, t(300)), Ok(Staleness::Fresh));
    assert_eq!(wb.staleness(id, t(301)), Ok(Staleness::Stale));
}

#[test]
fn audit_ring_keeps_newest_n() {
    let (mut wb, gw) = setup();
    let id = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::ReadOnly).unwrap();
    for k in 0..12 {
        gw.set_table("customer-info", row(&format!("555-{k:04}")));
        wb.refresh(&gw, id, "u", t(k)).unwrap();
    }
    let ring = wb.audit_of(&addr("D3"));
    assert_eq!(ring.len(), 10);
    assert_eq!(ring[0].new, Value::text("555-0011"));
    assert_eq!(ring[9].new, Value::text("555-0002"));
    for w in ring.windows(2) {
        assert_eq!(w[0].previous, w[1].new);
        assert!(w[0].timestamp >= w[1].timestamp);
    }
}

#[test]
fn grid_view_flags() {
    let (mut wb, gw) = setup();
    let id = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::Writable).unwrap();
    wb.refresh(&gw, id, "u", t(0)).unwrap();
    let view = wb.grid_view();
    let cell = |a: &str| view.iter().find(|c| c.address == addr(a)).unwrap().clone();
    assert!(cell("B2").header && cell("B2").protected);
    assert!(cell("D3").writable && !cell("D3").protected);
    assert!(cell("B3").protected);
    assert_eq!(cell("A2").binding, None);
}

#[test]
fn persistence_round_trip() {
    let (mut wb, gw) = setup();
    let id = wb.bind(&gw, addr("B2"), "customer-info", by_ref(), Mode::Writable).unwrap();
    wb.refresh(&gw, id, "alice", t(0)).unwrap();
    wb.checkpoint("cp <1>", t(1));
    wb.edit_cell(&addr("D3"), Value::text("555-0111"), "alice", t(2)).unwrap();
    let bytes = wb.to_xml().unwrap();
    let back = Workbook::from_xml(&bytes).unwrap();
    assert_eq!(back, wb);
    assert_eq!(back.to_xml().unwrap(), bytes);
    assert!(Workbook::from_xml(b"<workbook format=\"2\" audit-depth=\"1\" next-binding=\"1\" next-checkpoint=\"1\"/>").is_err());
}

// ---- properties over generated operation sequences

#[derive(Debug, Clone)]
enum Op {
    Bind(u32, u32, bool),
    Refresh(u32, u8),
    Edit(u32, u32, u8),
    Push(u32),
    Checkpoint,
    Restore(u32),
}

fn arb_op() -> impl Strategy<Value = Op> {
    prop_oneof![
        1 => (1u32..8, 1u32..12, any::<bool>()).prop_map(|(c, r, w)| Op::Bind(c, r, w)),
        3 => (1u32..4, 0u8..4).prop_map(|(b, v)| Op::Refresh(b, v)),
        4 => (1u32..10, 1u32..14, 0u8..4).prop_map(|(c, r, v)| Op::Edit(c, r, v)),
        1 => (1u32..4).prop_map(Op::Push),
        1 => Just(Op::Checkpoint),
        1 => (1u32..5).prop_map(Op::Restore),
    ]
}

fn phone_table(v: u8) -> Table {
    let rows = (0..(v % 3)).map(|i| {
        vec![
            Value::text(format!("n{i}")),
            Value::text("addr"),
            Value::text(format!("p{v}")),
            Value::Null,
        ]
    });
    Table::new(["name", "address", "phone", "credit_rating"].map(Column::text).to_vec(), rows.collect()).unwrap()
}

fn read_only_cells(wb: &Workbook) -> BTreeMap<CellAddress, Value> {
    wb.bindings()
        .values()
        .filter(|b| b.mode == Mode::ReadOnly)
        .flat_map(|b| b.block().cells().collect::<Vec<_>>())
        .map(|a| {
            let v = wb.value(&a);
            (a, v)
        })
        .collect()
}

/// Runs `ops`, returning the workbook; errors from individual ops are fine.
/// Panics if an operation other than refresh or restore changes a cell
/// inside a read-only block.
fn run(ops: &[Op], depth: usize) -> Workbook {
    let gw = MemoryGateway::new();
    gw.add_service(schema(true), phone_table(1));
    let mut wb = Workbook::new(depth);
    for (i, op) in ops.iter().enumerate() {
        let now = t(i as i64);
        let guarded = !matches!(op, Op::Refresh(..) | Op::Restore(_));
        let before = read_only_cells(&wb);
        let _ = match op {
            Op::Bind(c, r, w) => {
                let origin = CellAddress::new(DEFAULT_SHEET, *c, *r).unwrap();
                let p = [("customerID".to_string(), ParamSource::Literal(Value::text("C001")))].into();
                let mode = if *w { Mode::Writable } else { Mode::ReadOnly };
                wb.bind(&gw, origin, "customer-info", p, mode).map(|_| ())
            }
            Op::Refresh(b, v) => {
                gw.set_table("customer-info", phone_table(*v));
                wb.refresh(&gw, *b, "u", now).map(|_| ())
            }
            Op::Edit(c, r, v) => {
                let a = CellAddress::new(DEFAULT_SHEET, *c, *r).unwrap();
                let value = if *v == 0 { Value::Null } else { Value::text(format!("e{v}")) };
                wb.edit_cell(&a, value, "u", now).map(|_| ())
            }
            Op::Push(b) => wb.push_updates(&gw, *b, "u", now).map(|_| ()),
            Op::Checkpoint => {
                wb.checkpoint("cp", now);
                Ok(())
            }
            Op::Restore(id) => wb.restore(*id, "u", now).map(|_| ()),
        };
        if guarded {
            for (a, v) in &before {
                assert_eq!(&wb.value(a), v, "{op:?} changed protected cell {a}");
            }
        }
    }
    wb
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn protection_and_ring_invariants(ops in proptest::collection::vec(arb_op(), 0..40), depth in 1usize..6) {
        let wb = run(&ops, depth);
        for a in wb.audited_cells() {
            let ring = wb.audit_of(a);
            prop_assert!(ring.len() <= depth);
            // The newest record always describes the current value.
            prop_assert_eq!(&ring[0].new, &wb.value(a));
            for w in ring.windows(2) {
                prop_assert!(w[0].timestamp >= w[1].timestamp);
                prop_assert_eq!(&w[0].previous, &w[1].new);
            }
        }
        for a in wb.dirty() {
            let b = wb.binding_at(a);
            prop_assert!(b.is_some_and(|b| b.mode == Mode::Writable), "dirty cell {} outside a writable block", a);
        }
    }

    #[test]
    fn checkpoint_restore_round_trip(ops in proptest::collection::vec(arb_op(), 0..30), more in proptest::collection::vec(arb_op(), 0..15)) {
        let mut wb = run(&ops, 10);
        let snap = wb.snapshot().clone();
        let id = wb.checkpoint("x", t(1000));
        let after = run(&[ops.clone(), more].concat(), 10);
        // Replace state with a diverged one but keep the checkpoint list.
        let cps = wb.checkpoints.clone();
        wb = Workbook { checkpoints: cps, next_checkpoint: wb.next_checkpoint, ..after };
        wb.restore(id, "u", t(2000)).unwrap();
        prop_assert_eq!(wb.snapshot(), &snap);
        prop_assert!(wb.list_checkpoints().iter().any(|c| c.id == id));
    }

    #[test]
    fn persistence_is_lossless(ops in proptest::collection::vec(arb_op(), 0..30)) {
        let wb = run(&ops, 4);
        let bytes = wb.to_xml().unwrap();
        let back = Workbook::from_xml(&bytes).unwrap();
        prop_assert_eq!(&back, &wb);
    }

    #[test]
    fn refresh_is_idempotent(ops in proptest::collection::vec(arb_op(), 0..30), v in 0u8..4) {
        let gw = MemoryGateway::new();
        gw.add_service(schema(true), phone_table(v));
        let mut wb = run(&ops, 10);
        let ids: Vec<u32> = wb.bindings().keys().copied().collect();
        for id in ids {
            if wb.refresh(&gw, id, "u", t(5000)).is_ok() {
                let grid = wb.grid().clone();
                let audit = wb.audit.clone();
                prop_assert_eq!(wb.refresh(&gw, id, "u", t(5001)).unwrap().changed, 0);
                prop_assert_eq!(wb.grid(), &grid);
                prop_assert_eq!(&wb.audit, &audit);
            }
        }
    }
}

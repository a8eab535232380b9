use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use infoflow_bench::{meta, schema, text_table, write_registry};
use infoflow_core::protocol::{self, ServiceResponse};
use infoflow_core::workbook::{CellAddress, MemoryGateway, Mode, Workbook};
use infoflow_core::{load_registry, resolve, Connectors, Params, Timestamp};

const SIZES: [usize; 3] = [100, 1_000, 10_000];

fn bench_resolve(c: &mut Criterion) {
    let mut g = c.benchmark_group("resolve_csv");
    for rows in SIZES {
        let dir = tempfile::tempdir().unwrap();
        write_registry(dir.path(), rows).unwrap();
        let reg = load_registry(dir.path().join("registry")).unwrap();
        let def = reg.service("roster").unwrap();
        let connectors = Connectors::new().with_base_dir(reg.base_dir().unwrap());
        g.throughput(Throughput::Elements(rows as u64));
        g.bench_with_input(BenchmarkId::from_parameter(rows), &rows, |b, _| {
            b.iter(|| resolve(def, &Params::new(), reg.resources(), &connectors).unwrap())
        });
    }
    g.finish();
}

fn bench_codec(c: &mut Criterion) {
    let mut g = c.benchmark_group("protocol");
    for rows in SIZES {
        let resp = ServiceResponse::Ok {
            meta: meta(),
            table: text_table(rows, 5, 0),
        };
        let bytes = protocol::encode_response(&resp).unwrap();
        g.throughput(Throughput::Bytes(bytes.len() as u64));
        g.bench_with_input(BenchmarkId::new("encode", rows), &resp, |b, r| {
            b.iter(|| protocol::encode_response(r).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("decode", rows), &bytes, |b, x| {
            b.iter(|| protocol::decode_response(x).unwrap())
        });
    }
    g.finish();
}

fn bench_refresh(c: &mut Criterion) {
    let mut g = c.benchmark_group("workbook_refresh");
    for rows in [10, 100, 1_000] {
        let gw = MemoryGateway::new();
        gw.add_service(schema("grid", 5), text_table(rows, 5, 0));
        let mut wb = Workbook::default();
        let origin = CellAddress::new("Sheet1", 1, 1).unwrap();
        let id = wb.bind(&gw, origin, "grid", BTreeMap::new(), Mode::ReadOnly).unwrap();
        let tables = [text_table(rows, 5, 1), text_table(rows, 5, 2)];
        let mut tick = 0u32;
        g.throughput(Throughput::Elements((rows * 5) as u64));
        g.bench_function(BenchmarkId::from_parameter(rows), |b| {
            b.iter(|| {
                tick += 1;
                // Alternate contents so every cell changes and is audited.
                gw.set_table("grid", tables[(tick % 2) as usize].clone());
                wb.refresh(&gw, id, "bench", Timestamp::from_unix(i64::from(tick)).unwrap()).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench_resolve, bench_codec, bench_refresh);
criterion_main!(benches);

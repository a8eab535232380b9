//! Fixture builders shared by the benchmarks.

use std::fmt::Write as _;
use std::path::Path;

use infoflow_core::protocol::{ResponseMeta, ServiceSchema, SchemaColumn};
use infoflow_core::{Column, Table, Value, ValueType};

/// Writes a registry with a `customers` anchor of `rows` rows and a
/// `ratings` enrichment covering every other customer. The `roster`
/// service takes an optional `id` key, so an empty request returns all rows.
pub fn write_registry(dir: &Path, rows: usize) -> std::io::Result<()> {
    let mut customers = String::from("id,name,city\n");
    let mut ratings = String::from("id,rating\n");
    for i in 0..rows {
        writeln!(customers, "C{i:06},Customer {i},City {}", i % 97).unwrap();
        if i % 2 == 0 {
            writeln!(ratings, "C{i:06},{}", ["AA", "A", "B"][i % 3]).unwrap();
        }
    }
    std::fs::write(dir.join("customers.csv"), customers)?;
    std::fs::write(dir.join("ratings.csv"), ratings)?;
    let reg = dir.join("registry");
    std::fs::create_dir_all(&reg)?;
    std::fs::write(
        reg.join("customers.xml"),
        r#"<resource id="customers" kind="tabular-file" location="../customers.csv"/>"#,
    )?;
    std::fs::write(
        reg.join("ratings.xml"),
        r#"<resource id="ratings" kind="tabular-file" location="../ratings.csv"/>"#,
    )?;
    let element = |name: &str, resource: &str| {
        format!(
            r#"<element name="{name}" resource="{resource}" source-column="{name}"><key-binding param="id" column="id"/></element>"#
        )
    };
    std::fs::write(
        reg.join("roster.xml"),
        format!(
            r#"<service name="roster" version="1" refresh-seconds="60" anchor="customers">
  <key name="id" type="text" required="false"/>
  {}{}{}{}
  <transform element="label">name &amp; " (" &amp; city &amp; ")"</transform>
</service>
"#,
            element("id", "customers"),
            element("name", "customers"),
            element("city", "customers"),
            element("rating", "ratings"),
        ),
    )
}

/// A text table of `rows` x `cols` whose cells depend on `salt`.
pub fn text_table(rows: usize, cols: usize, salt: u32) -> Table {
    let columns = (0..cols).map(|c| Column::text(format!("c{c}"))).collect();
    let data = (0..rows)
        .map(|r| (0..cols).map(|c| Value::text(format!("r{r}c{c}s{salt} & <x>"))).collect())
        .collect();
    Table::new(columns, data).expect("rectangular")
}

pub fn meta() -> ResponseMeta {
    ResponseMeta {
        refresh_seconds: 60,
        update_service: None,
        hints: Vec::new(),
    }
}

pub fn schema(name: &str, cols: usize) -> ServiceSchema {
    ServiceSchema {
        name: name.into(),
        version: 1,
        refresh_seconds: 60,
        keys: Vec::new(),
        columns: (0..cols)
            .map(|c| SchemaColumn {
                name: format!("c{c}"),
                ty: ValueType::Text,
                format: None,
            })
            .collect(),
        update: None,
    }
}

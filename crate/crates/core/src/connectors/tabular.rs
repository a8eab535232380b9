//! CSV files: comma separated, double-quote quoting, UTF-8, header row first.
//! An empty field reads as null.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ConnectorError, Params, TabularRule, UpdateRow};
use crate::model::ResourceDescriptor;
use crate::table::Table;
use crate::value::Value;

struct CsvData {
    header: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl CsvData {
    fn index(&self, res: &ResourceDescriptor, column: &str) -> Result<usize, ConnectorError> {
        self.header
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| ConnectorError::schema(res, format!("column {column} not in header")))
    }
}

fn read(path: &Path, res: &ResourceDescriptor) -> Result<CsvData, ConnectorError> {
    let bytes = fs::read(path).map_err(|e| ConnectorError::unavailable(res, format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes.as_slice());
    let header = rdr
        .headers()
        .map_err(|e| ConnectorError::decode(res, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let records = rdr
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ConnectorError::decode(res, e))?;
    Ok(CsvData { header, records })
}

/// True if `field` holds exactly `key`, read with the key's type.
fn field_matches(field: &str, key: &Value) -> bool {
    if key.is_null() {
        return false;
    }
    Value::decode_field(key.tag(), field).is_ok_and(|v| &v == key)
}

pub(crate) fn fetch(path: &Path, res: &ResourceDescriptor, rule: &TabularRule, params: &Params) -> Result<Table, ConnectorError> {
    let data = read(path, res)?;
    let projection = rule
        .projection
        .iter()
        .map(|c| data.index(res, &c.name))
        .collect::<Result<Vec<_>, _>>()?;
    let mut filters = Vec::new();
    for term in &rule.filter {
        let idx = data.index(res, &term.column)?;
        if let Some(v) = params.get(&term.param) {
            filters.push((idx, v));
        }
    }
    let mut table = Table::empty(rule.projection.clone()).map_err(|e| ConnectorError::schema(res, e))?;
    for rec in &data.records {
        if !filters.iter().all(|(i, key)| field_matches(&rec[*i], key)) {
            continue;
        }
        let row = projection
            .iter()
            .zip(&rule.projection)
            .map(|(&i, col)| {
                Value::decode_field(col.ty, &rec[i]).map_err(|e| ConnectorError::schema(res, format!("column {}: {e}", col.name)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        table.push_row(row).map_err(|e| ConnectorError::schema(res, e))?;
    }
    Ok(table)
}

pub(crate) fn apply_update(path: &Path, res: &ResourceDescriptor, rows: &[UpdateRow]) -> Result<usize, ConnectorError> {
    let mut data = read(path, res)?;
    let mut changed = 0;
    for row in rows {
        let keys = row
            .keys
            .iter()
            .map(|(c, v)| Ok((data.index(res, c)?, v)))
            .collect::<Result<Vec<_>, ConnectorError>>()?;
        let sets = row
            .values
            .iter()
            .map(|(c, v)| Ok((data.index(res, c)?, v.encode())))
            .collect::<Result<Vec<_>, ConnectorError>>()?;
        let mut matched = 0;
        for rec in data.records.iter_mut() {
            if !keys.iter().all(|(i, key)| field_matches(&rec[*i], key)) {
                continue;
            }
            let mut fields: Vec<String> = rec.iter().map(str::to_string).collect();
            for (i, new) in &sets {
                fields[*i] = new.clone();
            }
            *rec = csv::StringRecord::from(fields);
            matched += 1;
        }
        if matched == 0 {
            return Err(ConnectorError::NoSuchKey {
                resource: res.id.clone(),
                key: row.describe_key(),
            });
        }
        changed += matched;
    }
    write_atomic(path, res, &data)?;
    Ok(changed)
}

fn write_atomic(path: &Path, res: &ResourceDescriptor, data: &CsvData) -> Result<(), ConnectorError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let io = |e: std::io::Error| ConnectorError::unavailable(res, e);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut w = csv::Writer::from_writer(&mut tmp);
        w.write_record(&data.header).map_err(|e| ConnectorError::unavailable(res, e))?;
        for rec in &data.records {
            w.write_record(rec).map_err(|e| ConnectorError::unavailable(res, e))?;
        }
        w.flush().map_err(io)?;
    }
    tmp.as_file_mut().flush().map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectors::{Connectors, FilterTerm};
    use crate::model::{ResourceKind, UpdateSpec};
    use crate::table::Column;

    const CRM: &str = "customer_id,name,address,phone\nC001,Acme Corp,1 Main St,555-0100\nC002,Globex,9 Elm Ave,555-0199\n";

    fn crm(dir: &tempfile::TempDir) -> ResourceDescriptor {
        let path = dir.path().join("crm.csv");
        fs::write(&path, CRM).unwrap();
        ResourceDescriptor {
            id: "crm".into(),
            kind: ResourceKind::TabularFile,
            location: path.to_string_lossy().into_owned(),
            credentials_ref: None,
            writable: true,
        }
    }

    fn rule(cols: &[&str]) -> TabularRule {
        TabularRule {
            projection: cols.iter().map(|c| Column::text(*c)).collect(),
            filter: vec![FilterTerm {
                column: "customer_id".into(),
                param: "customerID".into(),
            }],
        }
    }

    fn params(id: &str) -> Params {
        [("customerID".to_string(), Value::text(id))].into()
    }

    fn spec() -> UpdateSpec {
        UpdateSpec {
            resource_id: "crm".into(),
            table: None,
            key_columns: vec!["customer_id".into()],
            writable_columns: vec!["phone".into(), "address".into()],
        }
    }

    fn phone_update(id: &str, phone: &str) -> UpdateRow {
        UpdateRow {
            keys: [("customer_id".to_string(), Value::text(id))].into(),
            values: [("phone".to_string(), Value::text(phone))].into(),
        }
    }

    #[test]
    fn filter_and_projection() {
        let dir = tempfile::tempdir().unwrap();
        let res = crm(&dir);
        let c = Connectors::new();
        let t = c.fetch_tabular(&res, &rule(&["name", "address", "phone"]), &params("C001")).unwrap();
        assert_eq!(t.rows(), &[vec![Value::text("Acme Corp"), Value::text("1 Main St"), Value::text("555-0100")]]);
        let t = c.fetch_tabular(&res, &rule(&["name"]), &params("C999")).unwrap();
        assert!(t.is_empty());
        let t = c.fetch_tabular(&res, &rule(&["phone", "name"]), &params("C001")).unwrap();
        assert_eq!(t.rows(), &[vec![Value::text("555-0100"), Value::text("Acme Corp")]]);
    }

    #[test]
    fn absent_param_skips_filter() {
        let dir = tempfile::tempdir().unwrap();
        let res = crm(&dir);
        let t = Connectors::new().fetch_tabular(&res, &rule(&["customer_id"]), &Params::new()).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut res = crm(&dir);
        let c = Connectors::new();
        assert!(matches!(
            c.fetch_tabular(&res, &rule(&["fax"]), &params("C001")),
            Err(ConnectorError::SchemaMismatch { .. })
        ));
        res.location = dir.path().join("nope.csv").to_string_lossy().into_owned();
        assert!(matches!(
            c.fetch_tabular(&res, &rule(&["name"]), &params("C001")),
            Err(ConnectorError::SourceUnavailable { .. })
        ));
    }

    #[test]
    fn update_then_refetch() {
        let dir = tempfile::tempdir().unwrap();
        let res = crm(&dir);
        let c = Connectors::new();
        assert_eq!(c.apply_update(&res, &spec(), &[phone_update("C001", "555-0111")]).unwrap(), 1);
        let t = c.fetch_tabular(&res, &rule(&["phone"]), &params("C001")).unwrap();
        assert_eq!(t.rows()[0][0], Value::text("555-0111"));
        let t = c.fetch_tabular(&res, &rule(&["phone"]), &params("C002")).unwrap();
        assert_eq!(t.rows()[0][0], Value::text("555-0199"));
    }

    #[test]
    fn unknown_key_rejects_whole_batch() {
        let dir = tempfile::tempdir().unwrap();
        let res = crm(&dir);
        let before = fs::read(&res.location).unwrap();
        let err = Connectors::new()
            .apply_update(&res, &spec(), &[phone_update("C001", "1"), phone_update("C999", "2")])
            .unwrap_err();
        assert!(matches!(err, ConnectorError::NoSuchKey { .. }));
        assert_eq!(fs::read(&res.location).unwrap(), before);
    }

    #[test]
    fn update_requires_writable_columns() {
        let dir = tempfile::tempdir().unwrap();
        let res = crm(&dir);
        let mut row = phone_update("C001", "1");
        row.values.insert("name".into(), Value::text("x"));
        assert!(matches!(
            Connectors::new().apply_update(&res, &spec(), &[row]),
            Err(ConnectorError::InvalidUpdate { .. })
        ));
        let mut ro = res.clone();
        ro.writable = false;
        assert!(matches!(
            Connectors::new().apply_update(&ro, &spec(), &[phone_update("C001", "1")]),
            Err(ConnectorError::UpdateUnsupported(_))
        ));
    }
}

//! Embedded SQLite databases. Templates use `:name` placeholders which are
//! bound as literals through the driver.

use std::path::Path;
use std::str::FromStr;

use rusqlite::types::{Value as SqlValue, ValueRef};
use rusqlite::{Connection, OpenFlags};
use rust_decimal::Decimal;

use super::{ConnectorError, Params, RelationalRule, UpdateRow};
use crate::model::ResourceDescriptor;
use crate::table::{Column, Table};
use crate::value::{Number, Value, ValueType};

/// Placeholder names (without the leading colon) in order of first use.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    let mut quote: Option<u8> = None;
    while i < bytes.len() {
        let b = bytes[i];
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None if b == b'\'' || b == b'"' => quote = Some(b),
            None if b == b':' => {
                let start = i + 1;
                let mut end = start;
                while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                    end += 1;
                }
                if end > start {
                    let name = &template[start..end];
                    if !out.iter().any(|n| n == name) {
                        out.push(name.to_string());
                    }
                    i = end;
                    continue;
                }
            }
            None => {}
        }
        i += 1;
    }
    out
}

fn open(path: &Path, res: &ResourceDescriptor, flags: OpenFlags) -> Result<Connection, ConnectorError> {
    Connection::open_with_flags(path, flags | OpenFlags::SQLITE_OPEN_NO_MUTEX)
        .map_err(|e| ConnectorError::unavailable(res, format!("{}: {e}", path.display())))
}

fn to_sql(v: &Value) -> SqlValue {
    match v {
        Value::Null => SqlValue::Null,
        Value::Number(n) => {
            let d = n.as_decimal();
            match i64::try_from(d) {
                Ok(i) if d.fract().is_zero() => SqlValue::Integer(i),
                _ => SqlValue::Text(n.to_string()),
            }
        }
        other => SqlValue::Text(other.encode()),
    }
}

fn from_sql(v: ValueRef<'_>, col: &Column) -> Result<Value, String> {
    let bad = |what: &str| format!("column {}: cannot read {what} as {}", col.name, col.ty);
    match v {
        ValueRef::Null => Ok(Value::Null),
        ValueRef::Integer(i) => match col.ty {
            ValueType::Number => Number::from_i64(i).map(Value::Number).map_err(|e| e.to_string()),
            ValueType::Text => Ok(Value::Text(i.to_string())),
            ValueType::Boolean => Ok(Value::Boolean(i != 0)),
            _ => Err(bad("integer")),
        },
        ValueRef::Real(f) => match col.ty {
            ValueType::Number => Decimal::from_str(&f.to_string())
                .ok()
                .and_then(Number::rounded)
                .map(Value::Number)
                .ok_or_else(|| bad("real")),
            ValueType::Text => Ok(Value::Text(f.to_string())),
            _ => Err(bad("real")),
        },
        ValueRef::Text(bytes) => {
            let s = std::str::from_utf8(bytes).map_err(|_| bad("non-utf8 text"))?;
            Value::decode(col.ty, s).map_err(|e| format!("column {}: {e}", col.name))
        }
        ValueRef::Blob(_) => Err(bad("blob")),
    }
}

pub(crate) fn fetch(path: &Path, res: &ResourceDescriptor, rule: &RelationalRule, params: &Params) -> Result<Table, ConnectorError> {
    for name in placeholders(&rule.template) {
        if !params.contains_key(&name) {
            return Err(ConnectorError::MissingParam(name));
        }
    }
    let conn = open(path, res, OpenFlags::SQLITE_OPEN_READ_ONLY)?;
    let mut stmt = conn
        .prepare(&rule.template)
        .map_err(|e| ConnectorError::unavailable(res, format!("prepare: {e}")))?;
    for idx in 1..=stmt.parameter_count() {
        let Some(name) = stmt.parameter_name(idx) else {
            return Err(ConnectorError::schema(res, format!("positional parameter {idx} in template")));
        };
        let key = &name[1..];
        let value = params.get(key).ok_or_else(|| ConnectorError::MissingParam(key.to_string()))?;
        stmt.raw_bind_parameter(idx, to_sql(value))
            .map_err(|e| ConnectorError::unavailable(res, e))?;
    }
    let names: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
    let expected: Vec<&str> = rule.columns.iter().map(|c| c.name.as_str()).collect();
    if names != expected {
        return Err(ConnectorError::schema(
            res,
            format!("result columns {names:?}, expected {expected:?}"),
        ));
    }
    let mut table = Table::empty(rule.columns.clone()).map_err(|e| ConnectorError::schema(res, e))?;
    let mut rows = stmt.raw_query();
    while let Some(r) = rows.next().map_err(|e| ConnectorError::unavailable(res, e))? {
        let mut out = Vec::with_capacity(rule.columns.len());
        for (i, col) in rule.columns.iter().enumerate() {
            let v = r.get_ref(i).map_err(|e| ConnectorError::unavailable(res, e))?;
            out.push(from_sql(v, col).map_err(|e| ConnectorError::schema(res, e))?);
        }
        table.push_row(out).map_err(|e| ConnectorError::schema(res, e))?;
    }
    Ok(table)
}

fn quote_ident(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub(crate) fn apply_update(path: &Path, res: &ResourceDescriptor, table: &str, rows: &[UpdateRow]) -> Result<usize, ConnectorError> {
    let mut conn = open(path, res, OpenFlags::SQLITE_OPEN_READ_WRITE)?;
    let tx = conn.transaction().map_err(|e| ConnectorError::unavailable(res, e))?;
    let mut changed = 0;
    for row in rows {
        let sets: Vec<String> = row
            .values
            .keys()
            .enumerate()
            .map(|(i, c)| format!("{} = ?{}", quote_ident(c), i + 1))
            .collect();
        let offset = row.values.len();
        let wheres: Vec<String> = row
            .keys
            .keys()
            .enumerate()
            .map(|(i, c)| format!("{} = ?{}", quote_ident(c), offset + i + 1))
            .collect();
        let sql = format!(
            "UPDATE {} SET {} WHERE {}",
            quote_ident(table),
            sets.join(", "),
            wheres.join(" AND ")
        );
        let bound: Vec<SqlValue> = row.values.values().chain(row.keys.values()).map(to_sql).collect();
        let n = tx
            .execute(&sql, rusqlite::params_from_iter(bound))
            .map_err(|e| ConnectorError::unavailable(res, e))?;
        if n == 0 {
            // Dropping the transaction rolls it back.
            return Err(ConnectorError::NoSuchKey {
                resource: res.id.clone(),
                key: row.describe_key(),
            });
        }
        changed += n;
    }
    tx.commit().map_err(|e| ConnectorError::unavailable(res, e))?;
    Ok(changed)
}

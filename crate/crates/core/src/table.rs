use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::value::{Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("empty column name at position {0}")]
    EmptyColumnName(usize),
    #[error("duplicate column: {0}")]
    DuplicateColumn(String),
    #[error("row {row} has {found} cells, expected {expected}")]
    RowLength { row: usize, found: usize, expected: usize },
    #[error("row {row}, column {column}: {found} value in {declared} column")]
    CellType {
        row: usize,
        column: String,
        declared: ValueType,
        found: ValueType,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ValueType) -> Self {
        Column { name: name.into(), ty }
    }

    pub fn text(name: impl Into<String>) -> Self {
        Column::new(name, ValueType::Text)
    }
}

/// Ordered typed columns plus rows of values.
///
/// Invariants (checked by [`Table::new`] and [`Table::push_row`]): column
/// names are unique and nonempty, every row has one cell per column, and
/// each cell is either null or of its column's declared type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    columns: Vec<Column>,
    rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: Vec<Column>, rows: Vec<Vec<Value>>) -> Result<Self, TableError> {
        let mut table = Table::empty(columns)?;
        for row in rows {
            table.push_row(row)?;
        }
        Ok(table)
    }

    pub fn empty(columns: Vec<Column>) -> Result<Self, TableError> {
        let mut seen = HashSet::new();
        for (i, c) in columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(TableError::EmptyColumnName(i));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(TableError::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(Table {
            columns,
            rows: Vec::new(),
        })
    }

    pub fn push_row(&mut self, row: Vec<Value>) -> Result<(), TableError> {
        let index = self.rows.len();
        if row.len() != self.columns.len() {
            return Err(TableError::RowLength {
                row: index,
                found: row.len(),
                expected: self.columns.len(),
            });
        }
        for (cell, col) in row.iter().zip(&self.columns) {
            if !cell.fits(col.ty) {
                return Err(TableError::CellType {
                    row: index,
                    column: col.name.clone(),
                    declared: col.ty,
                    found: cell.tag(),
                });
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn into_rows(self) -> Vec<Vec<Value>> {
        self.rows
    }
}

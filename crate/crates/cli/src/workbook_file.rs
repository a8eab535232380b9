//! Loading and atomically saving workbook files.

use std::io::Write;
use std::path::Path;

use infoflow_core::workbook::Workbook;

use crate::error::CliError;

pub fn load(path: &Path) -> Result<Workbook, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::data("io", format!("{}: {e}", path.display())))?;
    Ok(Workbook::from_xml(&bytes)?)
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn save(path: &Path, wb: &Workbook) -> Result<(), CliError> {
    let bytes = wb.to_xml()?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::data("io", format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

//! Plain aligned text tables: a header, a rule of dashes, then the rows.
//! Columns are separated by two spaces; trailing blanks are trimmed.

use infoflow_core::{Table, Value};

pub fn text_table<S: AsRef<str>>(headers: &[S], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.as_ref().chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            s.push_str(c);
            s.extend(std::iter::repeat_n(' ', w - c.chars().count()));
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(&mut headers.iter().map(AsRef::as_ref));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut rule.iter().map(String::as_str));
    for row in rows {
        line(&mut row.iter().map(String::as_str));
    }
    out
}

/// Null renders as an empty cell.
pub fn cell(v: &Value) -> String {
    v.encode()
}

pub fn result_table(t: &Table) -> String {
    let headers: Vec<&str> = t.column_names().collect();
    let rows: Vec<Vec<String>> = t.rows().iter().map(|r| r.iter().map(cell).collect()).collect();
    text_table(&headers, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligns_and_trims() {
        let s = text_table(&["a", "long"], &[vec!["xyz".into(), "1".into()], vec!["é".into(), "".into()]]);
        assert_eq!(s, "a    long\n---  ----\nxyz  1\né\n");
    }

    #[test]
    fn empty_table_keeps_header() {
        assert_eq!(text_table(&["name"], &[]), "name\n----\n");
    }
}

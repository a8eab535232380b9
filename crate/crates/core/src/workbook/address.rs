use std::fmt;
use std::str::FromStr;

pub const DEFAULT_SHEET: &str = "Sheet1";
/// Column ZZ.
pub const MAX_COL: u32 = 26 * 27;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad cell address {0:?}")]
pub struct AddressError(pub String);

/// A cell in A1 notation, optionally qualified by sheet (`Sheet1!B2`).
///
/// Columns and rows are 1-based. Ordering is (sheet, row, column).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellAddress {
    pub sheet: String,
    pub row: u32,
    pub col: u32,
}

impl CellAddress {
    pub fn new(sheet: impl Into<String>, col: u32, row: u32) -> Result<Self, AddressError> {
        let sheet = sheet.into();
        if sheet.is_empty() || sheet.contains('!') || sheet.chars().any(char::is_control) {
            return Err(AddressError(sheet));
        }
        if col == 0 || col > MAX_COL || row == 0 {
            return Err(AddressError(format!("{sheet}!col {col} row {row}")));
        }
        Ok(CellAddress { sheet, row, col })
    }

    /// The cell `down` rows below and `right` columns right of this one.
    pub fn offset(&self, down: u32, right: u32) -> Result<Self, AddressError> {
        let row = self.row.checked_add(down).ok_or_else(|| AddressError(format!("{self}+{down} rows")))?;
        CellAddress::new(self.sheet.clone(), self.col + right, row)
    }

    pub fn col_letters(&self) -> String {
        col_letters(self.col)
    }
}

pub fn col_letters(col: u32) -> String {
    let mut n = col;
    let mut out = Vec::new();
    while n > 0 {
        let r = (n - 1) % 26;
        out.push(b'A' + r as u8);
        n = (n - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

impl Ord for CellAddress {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.sheet, self.row, self.col).cmp(&(&other.sheet, other.row, other.col))
    }
}

impl PartialOrd for CellAddress {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CellAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}!{}{}", self.sheet, col_letters(self.col), self.row)
    }
}

impl FromStr for CellAddress {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AddressError(s.to_string());
        let (sheet, cell) = match s.rsplit_once('!') {
            Some((sheet, cell)) => (sheet, cell),
            None => (DEFAULT_SHEET, s),
        };
        let split = cell.find(|c: char| !c.is_ascii_uppercase()).ok_or_else(bad)?;
        let (letters, digits) = cell.split_at(split);
        if letters.is_empty() || letters.len() > 2 || digits.is_empty() || digits.starts_with('0') {
            return Err(bad());
        }
        if !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let col = letters.bytes().fold(0u32, |acc, b| acc * 26 + u32::from(b - b'A' + 1));
        let row = digits.parse().map_err(|_| bad())?;
        CellAddress::new(sheet, col, row).map_err(|_| bad())
    }
}

impl serde::Serialize for CellAddress {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for CellAddress {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A rectangular block of cells on one sheet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub origin: CellAddress,
    pub rows: u32,
    pub cols: u32,
}

impl Block {
    pub fn contains(&self, a: &CellAddress) -> bool {
        a.sheet == self.origin.sheet
            && (self.origin.row..self.origin.row + self.rows).contains(&a.row)
            && (self.origin.col..self.origin.col + self.cols).contains(&a.col)
    }

    pub fn overlaps(&self, other: &Block) -> bool {
        self.origin.sheet == other.origin.sheet
            && self.origin.row < other.origin.row + other.rows
            && other.origin.row < self.origin.row + self.rows
            && self.origin.col < other.origin.col + other.cols
            && other.origin.col < self.origin.col + self.cols
    }

    /// Fails when the block runs past column ZZ.
    pub fn check(&self) -> Result<(), AddressError> {
        self.origin.offset(self.rows.saturating_sub(1), self.cols.saturating_sub(1)).map(|_| ())
    }

    /// Every cell of the block, row by row.
    pub fn cells(&self) -> impl Iterator<Item = CellAddress> + '_ {
        (0..self.rows).flat_map(move |r| {
            (0..self.cols).map(move |c| CellAddress {
                sheet: self.origin.sheet.clone(),
                row: self.origin.row + r,
                col: self.origin.col + c,
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn a1_notation() {
        let a: CellAddress = "B2".parse().unwrap();
        assert_eq!(a, CellAddress::new("Sheet1", 2, 2).unwrap());
        assert_eq!(a.to_string(), "Sheet1!B2");
        assert_eq!("Data!ZZ10".parse::<CellAddress>().unwrap().col, 702);
        assert_eq!("AA1".parse::<CellAddress>().unwrap().col, 27);
        for bad in ["", "1", "A", "A0", "AAA1", "a1", "A01", "!A1", "A1x", "A-1"] {
            assert!(bad.parse::<CellAddress>().is_err(), "{bad}");
        }
    }

    #[test]
    fn ordering_is_sheet_row_col() {
        let mut v: Vec<CellAddress> = ["B1", "A2", "A1", "X!A1"].iter().map(|s| s.parse().unwrap()).collect();
        v.sort();
        let s: Vec<String> = v.iter().map(ToString::to_string).collect();
        assert_eq!(s, ["Sheet1!A1", "Sheet1!B1", "Sheet1!A2", "X!A1"]);
    }

    #[test]
    fn block_geometry() {
        let b = Block {
            origin: "B2".parse().unwrap(),
            rows: 2,
            cols: 4,
        };
        assert!(b.contains(&"E3".parse().unwrap()));
        assert!(!b.contains(&"F3".parse().unwrap()));
        assert!(!b.contains(&"B4".parse().unwrap()));
        let c = Block {
            origin: "E3".parse().unwrap(),
            rows: 1,
            cols: 1,
        };
        assert!(b.overlaps(&c) && c.overlaps(&b));
        assert_eq!(b.cells().count(), 8);
        let wide = Block {
            origin: "ZY1".parse().unwrap(),
            rows: 1,
            cols: 3,
        };
        assert!(wide.check().is_err());
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(col in 1u32..=MAX_COL, row in 1u32..1_000_000, sheet in "[A-Za-z][A-Za-z0-9 ]{0,8}") {
            let a = CellAddress::new(sheet, col, row).unwrap();
            prop_assert_eq!(a.to_string().parse::<CellAddress>().unwrap(), a);
        }
    }
}

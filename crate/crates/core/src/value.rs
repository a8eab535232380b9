//! Scalar values carried between connectors, assembly, the wire protocol and
//! workbook cells.
//!
//! Every value has a canonical text form. `Value::decode(tag, &v.encode())`
//! always returns `v` again.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, TimeZone, Timelike, Utc};
use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Serialize};

/// Maximum number of significant decimal digits a [`Number`] may carry.
pub const MAX_SIGNIFICANT_DIGITS: u32 = 15;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValueError {
    #[error("invalid {tag} literal: {text:?}")]
    Invalid { tag: ValueType, text: String },
    #[error("number {0} exceeds {MAX_SIGNIFICANT_DIGITS} significant digits")]
    TooPrecise(String),
    #[error("unknown value type: {0:?}")]
    UnknownType(String),
}

/// The type tag of a [`Value`]. Also used as a declared column type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Text,
    Number,
    Boolean,
    Timestamp,
    Null,
}

impl ValueType {
    pub const ALL: [ValueType; 5] = [
        ValueType::Text,
        ValueType::Number,
        ValueType::Boolean,
        ValueType::Timestamp,
        ValueType::Null,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::Text => "text",
            ValueType::Number => "number",
            ValueType::Boolean => "boolean",
            ValueType::Timestamp => "timestamp",
            ValueType::Null => "null",
        }
    }
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ValueType {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ValueType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ValueError::UnknownType(s.to_string()))
    }
}

/// Exact decimal number with at most 15 significant digits, kept normalized
/// (no trailing fractional zeros, no negative zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Number(Decimal);

impl Number {
    pub const ZERO: Number = Number(Decimal::ZERO);

    /// Wraps a decimal, rejecting values that need more than 15 significant digits.
    pub fn new(d: Decimal) -> Result<Self, ValueError> {
        let d = d.normalize();
        if significant_digits(d) > MAX_SIGNIFICANT_DIGITS {
            return Err(ValueError::TooPrecise(d.to_string()));
        }
        Ok(Number(d))
    }

    /// Rounds (half-even) to 15 significant digits. `None` only on overflow.
    pub fn rounded(d: Decimal) -> Option<Self> {
        let d = if significant_digits(d.normalize()) > MAX_SIGNIFICANT_DIGITS {
            d.round_sf_with_strategy(MAX_SIGNIFICANT_DIGITS, RoundingStrategy::MidpointNearestEven)?
        } else {
            d
        };
        Some(Number(d.normalize()))
    }

    pub fn from_i64(n: i64) -> Result<Self, ValueError> {
        Number::new(Decimal::from(n))
    }

    pub fn as_decimal(&self) -> Decimal {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

fn significant_digits(d: Decimal) -> u32 {
    let mut m = d.mantissa().unsigned_abs();
    if m == 0 {
        return 1;
    }
    while m.is_multiple_of(10) {
        m /= 10;
    }
    let mut digits = 0;
    while m > 0 {
        m /= 10;
        digits += 1;
    }
    digits
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Number {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || ValueError::Invalid {
            tag: ValueType::Number,
            text: s.to_string(),
        };
        // Decimal's parser tolerates '_' separators and a bare '.'; we do not.
        let body = s.strip_prefix(['-', '+']).unwrap_or(s);
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if int.is_empty() || !digits_ok(int) || !digits_ok(frac) || (body.contains('.') && frac.is_empty()) {
            return Err(invalid());
        }
        let d = Decimal::from_str(s).map_err(|_| invalid())?;
        Number::new(d)
    }
}

/// A UTC instant with whole-second precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn now() -> Self {
        Timestamp::new(Utc::now())
    }

    /// Truncates sub-second precision.
    pub fn new(t: DateTime<Utc>) -> Self {
        Timestamp(t.with_nanosecond(0).unwrap_or(t))
    }

    pub fn from_unix(secs: i64) -> Option<Self> {
        Utc.timestamp_opt(secs, 0).single().map(Timestamp)
    }

    pub fn unix(&self) -> i64 {
        self.0.timestamp()
    }

    pub fn as_datetime(&self) -> DateTime<Utc> {
        self.0
    }

    /// Whole seconds from `earlier` to `self`.
    pub fn seconds_since(&self, earlier: Timestamp) -> i64 {
        self.unix() - earlier.unix()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(TIMESTAMP_FORMAT))
    }
}

impl FromStr for Timestamp {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
            .ok()
            .filter(|_| s.len() == 20)
            .map(|n| Timestamp(n.and_utc()))
            .ok_or_else(|| ValueError::Invalid {
                tag: ValueType::Timestamp,
                text: s.to_string(),
            })
    }
}

/// A tagged scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub enum Value {
    Text(String),
    Number(Number),
    Boolean(bool),
    Timestamp(Timestamp),
    #[default]
    Null,
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn tag(&self) -> ValueType {
        match self {
            Value::Text(_) => ValueType::Text,
            Value::Number(_) => ValueType::Number,
            Value::Boolean(_) => ValueType::Boolean,
            Value::Timestamp(_) => ValueType::Timestamp,
            Value::Null => ValueType::Null,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Canonical text form. Null encodes as the empty string.
    pub fn encode(&self) -> String {
        match self {
            Value::Text(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Boolean(b) => b.to_string(),
            Value::Timestamp(t) => t.to_string(),
            Value::Null => String::new(),
        }
    }

    pub fn decode(tag: ValueType, text: &str) -> Result<Value, ValueError> {
        match tag {
            ValueType::Text => Ok(Value::Text(text.to_string())),
            ValueType::Number => text.parse().map(Value::Number),
            ValueType::Boolean => match text {
                "true" => Ok(Value::Boolean(true)),
                "false" => Ok(Value::Boolean(false)),
                _ => Err(ValueError::Invalid {
                    tag,
                    text: text.to_string(),
                }),
            },
            ValueType::Timestamp => text.parse().map(Value::Timestamp),
            ValueType::Null if text.is_empty() => Ok(Value::Null),
            ValueType::Null => Err(ValueError::Invalid {
                tag,
                text: text.to_string(),
            }),
        }
    }

    /// Decodes a field from a source without a null marker: empty means null.
    pub fn decode_field(tag: ValueType, text: &str) -> Result<Value, ValueError> {
        if text.is_empty() {
            Ok(Value::Null)
        } else {
            Value::decode(tag, text)
        }
    }

    /// True if the value may be stored in a column declared as `ty`.
    pub fn fits(&self, ty: ValueType) -> bool {
        self.is_null() || self.tag() == ty
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Boolean(b)
    }
}

impl From<Number> for Value {
    fn from(n: Number) -> Self {
        Value::Number(n)
    }
}

impl From<Timestamp> for Value {
    fn from(t: Timestamp) -> Self {
        Value::Timestamp(t)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// JSON shape: `{"type":"text","value":"Acme"}`, `{"type":"null"}`.
#[derive(Serialize, Deserialize)]
struct TaggedValue {
    #[serde(rename = "type")]
    tag: ValueType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<String>,
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TaggedValue {
            tag: self.tag(),
            value: (!self.is_null()).then(|| self.encode()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let t = TaggedValue::deserialize(d)?;
        Value::decode(t.tag, t.value.as_deref().unwrap_or("")).map_err(serde::de::Error::custom)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

//! Proptest strategies for values, tables and protocol documents.

use proptest::prelude::*;
use rust_decimal::Decimal;

use crate::protocol::{FormatHint, ResponseMeta, ServiceRequest, ServiceResponse};
use crate::table::{Column, Table};
use crate::value::{Number, Timestamp, Value, ValueType};

/// Numbers across the full precision and scale range.
pub fn arb_number() -> impl Strategy<Value = Number> {
    (any::<i64>(), 0u32..20).prop_map(|(m, scale)| {
        let d = Decimal::new(m % 1_000_000_000_000_000, scale);
        Number::rounded(d).unwrap()
    })
}

pub fn arb_timestamp() -> impl Strategy<Value = Timestamp> {
    (0i64..253_402_300_799).prop_map(|s| Timestamp::from_unix(s).unwrap())
}

pub fn arb_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<String>().prop_map(Value::Text),
        arb_number().prop_map(Value::Number),
        any::<bool>().prop_map(Value::Boolean),
        arb_timestamp().prop_map(Value::Timestamp),
        Just(Value::Null),
    ]
}

/// Short strings heavy in markup, quoting and whitespace characters.
pub fn xml_string() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 <>&\"'\t\r\n\u{e9}\u{1F600}]{0,12}"
}

/// A value of type `ty`, or null one time in five.
pub fn arb_cell(ty: ValueType) -> BoxedStrategy<Value> {
    let v: BoxedStrategy<Value> = match ty {
        ValueType::Text => xml_string().prop_map(Value::Text).boxed(),
        ValueType::Number => arb_number().prop_map(Value::Number).boxed(),
        ValueType::Boolean => any::<bool>().prop_map(Value::Boolean).boxed(),
        ValueType::Timestamp => arb_timestamp().prop_map(Value::Timestamp).boxed(),
        ValueType::Null => Just(Value::Null).boxed(),
    };
    prop_oneof![4 => v, 1 => Just(Value::Null)].boxed()
}

pub fn arb_table() -> impl Strategy<Value = Table> {
    proptest::collection::vec(proptest::sample::select(ValueType::ALL.to_vec()), 0..5).prop_flat_map(|types| {
        let row = types.iter().map(|t| arb_cell(*t)).collect::<Vec<_>>();
        proptest::collection::vec(row, 0..6).prop_map(move |rows| {
            let cols = types.iter().enumerate().map(|(i, t)| Column::new(format!("c{i}"), *t)).collect();
            Table::new(cols, rows).unwrap()
        })
    })
}

pub fn arb_request() -> impl Strategy<Value = ServiceRequest> {
    (xml_string(), 1u32..5, proptest::collection::vec((xml_string(), xml_string()), 0..4))
        .prop_map(|(service, version, params)| ServiceRequest { service, version, params })
}

pub fn arb_meta() -> impl Strategy<Value = ResponseMeta> {
    (
        any::<u32>(),
        proptest::option::of(xml_string()),
        proptest::collection::vec((xml_string(), xml_string()), 0..3),
    )
        .prop_map(|(refresh_seconds, update_service, hints)| ResponseMeta {
            refresh_seconds,
            update_service,
            hints: hints.into_iter().map(|(column, format)| FormatHint { column, format }).collect(),
        })
}

/// Mostly successful responses, some errors.
pub fn arb_response() -> impl Strategy<Value = ServiceResponse> {
    prop_oneof![
        4 => (arb_meta(), arb_table()).prop_map(|(meta, table)| ServiceResponse::Ok { meta, table }),
        1 => (xml_string(), xml_string()).prop_map(|(code, message)| ServiceResponse::Error { code, message }),
    ]
}

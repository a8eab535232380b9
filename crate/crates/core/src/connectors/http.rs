//! Plain HTTP GET sources returning XML documents.

use std::sync::OnceLock;
use std::time::Duration;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use roxmltree::{Document, Node};

use super::{ConnectorError, HttpRule, Params, USER_AGENT};
use crate::model::ResourceDescriptor;
use crate::table::Table;
use crate::value::Value;

/// RFC 3986 unreserved characters stay literal.
const COMPONENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

fn agent() -> &'static ureq::Agent {
    static AGENT: OnceLock<ureq::Agent> = OnceLock::new();
    AGENT.get_or_init(|| {
        ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into()
    })
}

/// `{name}` holes in a URL template, in order of first use.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else { break };
        let name = &after[..close];
        if !name.is_empty() && !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
        rest = &after[close + 1..];
    }
    out
}

pub fn expand_url(base: &str, template: &str, params: &Params) -> Result<String, ConnectorError> {
    let mut url = String::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        url.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            url.push('{');
            rest = after;
            continue;
        };
        let name = &after[..close];
        let value = params.get(name).ok_or_else(|| ConnectorError::MissingParam(name.to_string()))?;
        url.extend(utf8_percent_encode(&value.encode(), COMPONENT));
        rest = &after[close + 1..];
    }
    url.push_str(rest);
    if url.starts_with("http://") || url.starts_with("https://") {
        Ok(url)
    } else {
        Ok(format!("{}/{}", base.trim_end_matches('/'), url.trim_start_matches('/')))
    }
}

pub(crate) fn fetch(res: &ResourceDescriptor, rule: &HttpRule, params: &Params, secret: Option<&str>) -> Result<Table, ConnectorError> {
    let url = expand_url(&res.location, &rule.url_template, params)?;
    let mut req = agent()
        .get(&url)
        .header("Accept", "application/xml")
        .header("User-Agent", USER_AGENT);
    if let Some(token) = secret {
        req = req.header("Authorization", format!("Bearer {token}"));
    }
    let mut resp = req.call().map_err(|e| ConnectorError::unavailable(res, e))?;
    let status = resp.status().as_u16();
    if status >= 400 {
        return Err(ConnectorError::SourceUnavailable {
            resource: res.id.clone(),
            reason: format!("HTTP status {status}"),
            status: Some(status),
        });
    }
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| ConnectorError::unavailable(res, e))?;
    extract(res, rule, &body)
}

fn children<'a, 'i>(node: Node<'a, 'i>, name: &'a str) -> impl Iterator<Item = Node<'a, 'i>> + 'a {
    node.children().filter(move |c| c.is_element() && c.tag_name().name() == name)
}

fn descend<'a, 'i>(node: Node<'a, 'i>, path: &str) -> Option<Node<'a, 'i>> {
    path.split('/')
        .filter(|s| !s.is_empty())
        .try_fold(node, |n, seg| n.children().find(|c| c.is_element() && c.tag_name().name() == seg))
}

/// Selects row elements along `rule.row_path` and reads each field path.
pub fn extract(res: &ResourceDescriptor, rule: &HttpRule, body: &str) -> Result<Table, ConnectorError> {
    let doc = Document::parse(body).map_err(|e| ConnectorError::decode(res, e))?;
    let segments: Vec<&str> = rule.row_path.split('/').filter(|s| !s.is_empty()).collect();
    let Some((first, rest)) = segments.split_first() else {
        return Err(ConnectorError::decode(res, "empty row path"));
    };
    let root = doc.root_element();
    if root.tag_name().name() != *first {
        return Err(ConnectorError::decode(
            res,
            format!("row path {} absent: root is <{}>", rule.row_path, root.tag_name().name()),
        ));
    }
    let mut level = vec![root];
    if let Some((last, middle)) = rest.split_last() {
        for seg in middle {
            level = level.into_iter().flat_map(|n| children(n, seg)).collect();
            if level.is_empty() {
                return Err(ConnectorError::decode(res, format!("row path {} absent", rule.row_path)));
            }
        }
        level = level.into_iter().flat_map(|n| children(n, last)).collect();
    }
    let columns = rule.fields.iter().map(|f| f.column.clone()).collect();
    let mut table = Table::empty(columns).map_err(|e| ConnectorError::schema(res, e))?;
    for row in level {
        let mut cells = Vec::with_capacity(rule.fields.len());
        for f in &rule.fields {
            let v = match descend(row, &f.path) {
                None => Value::Null,
                Some(n) => {
                    let text: String = n.descendants().filter(|d| d.is_text()).filter_map(|d| d.text()).collect();
                    Value::decode_field(f.column.ty, &text)
                        .map_err(|e| ConnectorError::decode(res, format!("field {}: {e}", f.column.name)))?
                }
            };
            cells.push(v);
        }
        table.push_row(cells).map_err(|e| ConnectorError::schema(res, e))?;
    }
    Ok(table)
}

//! Canonical XML writing and strict reading helpers.

use roxmltree::Node;

use super::{DecodeError, EncodeError};

fn legal(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r' | '\u{20}'..='\u{D7FF}' | '\u{E000}'..='\u{FFFD}' | '\u{10000}'..)
}

fn check(s: &str) -> Result<(), EncodeError> {
    match s.chars().find(|c| !legal(*c)) {
        Some(c) => Err(EncodeError::IllegalChar(c)),
        None => Ok(()),
    }
}

pub(crate) fn escape_text(out: &mut String, s: &str) -> Result<(), EncodeError> {
    check(s)?;
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    Ok(())
}

pub(crate) fn escape_attr(out: &mut String, s: &str) -> Result<(), EncodeError> {
    check(s)?;
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\t' => out.push_str("&#9;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    Ok(())
}

/// Builds a document with attributes in call order and no whitespace.
#[derive(Default)]
pub(crate) struct Writer {
    out: String,
}

impl Writer {
    fn start(&mut self, tag: &str, attrs: &[(&str, &str)]) -> Result<(), EncodeError> {
        self.out.push('<');
        self.out.push_str(tag);
        for (k, v) in attrs {
            self.out.push(' ');
            self.out.push_str(k);
            self.out.push_str("=\"");
            escape_attr(&mut self.out, v)?;
            self.out.push('"');
        }
        Ok(())
    }

    pub(crate) fn open(&mut self, tag: &str, attrs: &[(&str, &str)]) -> Result<&mut Self, EncodeError> {
        self.start(tag, attrs)?;
        self.out.push('>');
        Ok(self)
    }

    pub(crate) fn empty(&mut self, tag: &str, attrs: &[(&str, &str)]) -> Result<&mut Self, EncodeError> {
        self.start(tag, attrs)?;
        self.out.push_str("/>");
        Ok(self)
    }

    pub(crate) fn close(&mut self, tag: &str) -> &mut Self {
        self.out.push_str("</");
        self.out.push_str(tag);
        self.out.push('>');
        self
    }

    /// `<tag attrs>text</tag>`
    pub(crate) fn leaf(&mut self, tag: &str, attrs: &[(&str, &str)], text: &str) -> Result<&mut Self, EncodeError> {
        self.open(tag, attrs)?;
        escape_text(&mut self.out, text)?;
        Ok(self.close(tag))
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.out.into_bytes()
    }
}

pub(crate) fn parse(bytes: &[u8]) -> Result<roxmltree::Document<'_>, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DecodeError::new(format!("not UTF-8: {e}")))?;
    roxmltree::Document::parse(text).map_err(|e| DecodeError::new(format!("malformed XML: {e}")))
}

/// Strict view of one element.
#[derive(Clone, Copy)]
pub(crate) struct Elem<'a, 'i> {
    pub(crate) node: Node<'a, 'i>,
}

impl<'a, 'i: 'a> Elem<'a, 'i> {
    pub(crate) fn root(doc: &'a roxmltree::Document<'i>, name: &str) -> Result<Self, DecodeError> {
        let node = doc.root_element();
        let e = Elem { node };
        e.expect_name(name)?;
        Ok(e)
    }

    pub(crate) fn name(&self) -> &'a str {
        self.node.tag_name().name()
    }

    pub(crate) fn expect_name(&self, name: &str) -> Result<(), DecodeError> {
        if self.node.tag_name().namespace().is_some() || self.name() != name {
            return Err(DecodeError::new(format!("expected <{name}>, found <{}>", self.name())));
        }
        Ok(())
    }

    /// Rejects attributes outside `allowed`.
    pub(crate) fn attrs(&self, allowed: &[&str]) -> Result<(), DecodeError> {
        for a in self.node.attributes() {
            if a.namespace().is_some() || !allowed.contains(&a.name()) {
                return Err(DecodeError::new(format!("unknown attribute {} on <{}>", a.name(), self.name())));
            }
        }
        Ok(())
    }

    pub(crate) fn req(&self, name: &str) -> Result<&'a str, DecodeError> {
        self.node
            .attribute(name)
            .ok_or_else(|| DecodeError::new(format!("<{}> missing attribute {name}", self.name())))
    }

    pub(crate) fn opt(&self, name: &str) -> Option<&'a str> {
        self.node.attribute(name)
    }

    pub(crate) fn flag(&self, name: &str) -> Result<bool, DecodeError> {
        match self.node.attribute(name) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(other) => Err(DecodeError::new(format!("{name} must be true or false, got {other}"))),
        }
    }

    pub(crate) fn number<T: std::str::FromStr>(&self, name: &str) -> Result<T, DecodeError> {
        let raw = self.req(name)?;
        // Canonical integers only: no sign, no leading zeros.
        if raw.is_empty() || !raw.bytes().all(|b| b.is_ascii_digit()) || (raw.len() > 1 && raw.starts_with('0')) {
            return Err(DecodeError::new(format!("{name} must be an unsigned integer, got {raw:?}")));
        }
        raw.parse().map_err(|_| DecodeError::new(format!("{name} out of range: {raw}")))
    }

    /// Child elements; whitespace between them is ignored, other text is not.
    pub(crate) fn children(&self) -> Result<Vec<Elem<'a, 'i>>, DecodeError> {
        let mut out = Vec::new();
        for c in self.node.children() {
            if c.is_element() {
                out.push(Elem { node: c });
            } else if c.is_text() && !c.text().unwrap_or("").chars().all(|ch| matches!(ch, ' ' | '\t' | '\n')) {
                return Err(DecodeError::new(format!("unexpected text in <{}>", self.name())));
            }
        }
        Ok(out)
    }

    pub(crate) fn no_children(&self) -> Result<(), DecodeError> {
        if self.node.children().any(|c| c.is_element() || c.is_text()) {
            return Err(DecodeError::new(format!("<{}> must be empty", self.name())));
        }
        Ok(())
    }

    /// Text content of a leaf element, verbatim.
    pub(crate) fn text(&self) -> Result<String, DecodeError> {
        let mut s = String::new();
        for c in self.node.children() {
            if c.is_element() {
                return Err(DecodeError::new(format!("<{}> must contain only text", self.name())));
            }
            if let Some(t) = c.text() {
                s.push_str(t);
            }
        }
        Ok(s)
    }
}

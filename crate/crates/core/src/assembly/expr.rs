//! The transform expression language.
//!
//! ```text
//! concat   := additive ( '&' additive )*
//! additive := term ( ('+' | '-') term )*
//! term     := primary ( ('*' | '/') primary )*
//! primary  := number | '-' number | string | 'true' | 'false' | ident | '(' concat ')'
//! ```
//!
//! All binary operators are left-associative. Strings are double-quoted with
//! `\"` and `\\` escapes. Identifiers (`[A-Za-z_][A-Za-z0-9_]*`) name
//! service elements.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rust_decimal::Decimal;

use crate::value::{Number, Value, ValueType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Concat,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Concat => 1,
            BinOp::Add | BinOp::Sub => 2,
            BinOp::Mul | BinOp::Div => 3,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Concat => "&",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Literal(Value),
    Element(String),
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    pub fn element(name: impl Into<String>) -> Expr {
        Expr::Element(name.into())
    }

    pub fn number(n: i64) -> Expr {
        Expr::Literal(Value::Number(Number::from_i64(n).expect("i64 literal")))
    }

    pub fn text(s: impl Into<String>) -> Expr {
        Expr::Literal(Value::Text(s.into()))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            _ => u8::MAX,
        }
    }

    /// Element names referenced anywhere in the tree, sorted.
    pub fn references(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Literal(_) => {}
            Expr::Element(name) => {
                out.insert(name);
            }
            Expr::Binary { lhs, rhs, .. } => {
                lhs.collect_refs(out);
                rhs.collect_refs(out);
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(Value::Text(s)) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    if c == '"' || c == '\\' {
                        f.write_str("\\")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("\"")
            }
            Expr::Literal(v) => write!(f, "{v}"),
            Expr::Element(name) => f.write_str(name),
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                if lhs.precedence() < p {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rhs.precedence() <= p {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at {position}: expected {}, found {found}", expected.join(" or "))]
pub struct ParseError {
    /// Character offset into the source text.
    pub position: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(String),
    Str(String),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(_) => "string".into(),
            Tok::Ident(i) => format!("identifier {i}"),
            Tok::Op(c) => format!("'{c}'"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '+' | '-' | '*' | '/' | '&' => {
                out.push((start, Tok::Op(c)));
                i += 1;
            }
            '(' => {
                out.push((start, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((start, Tok::RParen));
                i += 1;
            }
            '"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => {
                            return Err(ParseError {
                                position: chars.len(),
                                expected: vec!["'\"'".into()],
                                found: "end of input".into(),
                            })
                        }
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => match chars.get(i + 1) {
                            Some(&e @ ('"' | '\\')) => {
                                s.push(e);
                                i += 2;
                            }
                            other => {
                                return Err(ParseError {
                                    position: i + 1,
                                    expected: vec!["'\"'".into(), "'\\'".into()],
                                    found: other.map_or("end of input".into(), |c| format!("'{c}'")),
                                })
                            }
                        },
                        Some(&c) => {
                            s.push(c);
                            i += 1;
                        }
                    }
                }
                out.push((start, Tok::Str(s)));
            }
            c if c.is_ascii_digit() => {
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if chars.get(i) == Some(&'.') {
                    i += 1;
                    let frac_start = i;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac_start {
                        return Err(ParseError {
                            position: i,
                            expected: vec!["digit".into()],
                            found: chars.get(i).map_or("end of input".into(), |c| format!("'{c}'")),
                        });
                    }
                }
                out.push((start, Tok::Number(chars[start..i].iter().collect())));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(chars[start..i].iter().collect())));
            }
            other => {
                return Err(ParseError {
                    position: start,
                    expected: vec!["expression".into()],
                    found: format!("'{other}'"),
                })
            }
        }
    }
    out.push((chars.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        ParseError {
            position: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        }
    }

    fn binary_level(
        &mut self,
        ops: &[(char, BinOp)],
        next: fn(&mut Self) -> Result<Expr, ParseError>,
    ) -> Result<Expr, ParseError> {
        let mut lhs = next(self)?;
        while let Tok::Op(c) = *self.peek() {
            let Some(&(_, op)) = ops.iter().find(|(sym, _)| *sym == c) else {
                break;
            };
            self.bump();
            let rhs = next(self)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn concat(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(&[('&', BinOp::Concat)], Self::additive)
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(&[('+', BinOp::Add), ('-', BinOp::Sub)], Self::term)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(&[('*', BinOp::Mul), ('/', BinOp::Div)], Self::primary)
    }

    fn number(&self, text: &str, negative: bool, at: usize) -> Result<Expr, ParseError> {
        let literal = if negative { format!("-{text}") } else { text.to_string() };
        literal
            .parse::<Number>()
            .map(|n| Expr::Literal(Value::Number(n)))
            .map_err(|_| ParseError {
                position: at,
                expected: vec!["number with at most 15 significant digits".into()],
                found: format!("number {literal}"),
            })
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                self.number(&n, false, at)
            }
            Tok::Op('-') => {
                self.bump();
                match self.peek().clone() {
                    Tok::Number(n) => {
                        self.bump();
                        self.number(&n, true, at)
                    }
                    _ => Err(self.error(&["number"])),
                }
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(Value::Text(s)))
            }
            Tok::Ident(id) => {
                self.bump();
                Ok(match id.as_str() {
                    "true" => Expr::Literal(Value::Boolean(true)),
                    "false" => Expr::Literal(Value::Boolean(false)),
                    _ => Expr::Element(id),
                })
            }
            Tok::LParen => {
                self.bump();
                let inner = self.concat()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.error(&["')'", "operator"]));
                }
                self.bump();
                Ok(inner)
            }
            _ => Err(self.error(&["number", "string", "identifier", "'('"])),
        }
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let e = p.concat()?;
    if *p.peek() != Tok::End {
        return Err(p.error(&["operator", "end of input"]));
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("missing element: {0}")]
    MissingElement(String),
    #[error("type mismatch: {left} {op} {right}")]
    TypeMismatch {
        op: &'static str,
        left: ValueType,
        right: ValueType,
    },
    #[error("division by zero")]
    DivisionByZero,
    #[error("numeric overflow")]
    Overflow,
}

/// Evaluates `e` over one row. If any referenced element is null the result
/// is null, regardless of the rest of the expression.
pub fn eval_expr(e: &Expr, row: &HashMap<String, Value>) -> Result<Value, EvalError> {
    let mut saw_null = false;
    for name in e.references() {
        match row.get(name) {
            None => return Err(EvalError::MissingElement(name.to_string())),
            Some(v) if v.is_null() => saw_null = true,
            Some(_) => {}
        }
    }
    if saw_null {
        return Ok(Value::Null);
    }
    eval_inner(e, row)
}

fn eval_inner(e: &Expr, row: &HashMap<String, Value>) -> Result<Value, EvalError> {
    match e {
        Expr::Literal(v) => Ok(v.clone()),
        Expr::Element(name) => row
            .get(name)
            .cloned()
            .ok_or_else(|| EvalError::MissingElement(name.clone())),
        Expr::Binary { op, lhs, rhs } => {
            let l = eval_inner(lhs, row)?;
            let r = eval_inner(rhs, row)?;
            apply(*op, l, r)
        }
    }
}

fn apply(op: BinOp, l: Value, r: Value) -> Result<Value, EvalError> {
    if l.is_null() || r.is_null() {
        return Ok(Value::Null);
    }
    if op == BinOp::Concat {
        let mut s = l.encode();
        s.push_str(&r.encode());
        return Ok(Value::Text(s));
    }
    let (Value::Number(a), Value::Number(b)) = (&l, &r) else {
        return Err(EvalError::TypeMismatch {
            op: op.symbol(),
            left: l.tag(),
            right: r.tag(),
        });
    };
    let (a, b): (Decimal, Decimal) = (a.as_decimal(), b.as_decimal());
    let result = match op {
        BinOp::Add => a.checked_add(b),
        BinOp::Sub => a.checked_sub(b),
        BinOp::Mul => a.checked_mul(b),
        BinOp::Div if b.is_zero() => return Err(EvalError::DivisionByZero),
        BinOp::Div => a.checked_div(b),
        BinOp::Concat => unreachable!(),
    };
    result
        .and_then(Number::rounded)
        .map(Value::Number)
        .ok_or(EvalError::Overflow)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TypeError {
    #[error("unknown element: {0}")]
    UnknownElement(String),
    #[error("operator {op} needs numbers, found {found}")]
    NotNumeric { op: &'static str, found: ValueType },
}

/// Static result type of `e` given element types.
pub fn infer_type(e: &Expr, env: &HashMap<String, ValueType>) -> Result<ValueType, TypeError> {
    match e {
        Expr::Literal(v) => Ok(v.tag()),
        Expr::Element(name) => env
            .get(name)
            .copied()
            .ok_or_else(|| TypeError::UnknownElement(name.clone())),
        Expr::Binary { op, lhs, rhs } => {
            let l = infer_type(lhs, env)?;
            let r = infer_type(rhs, env)?;
            if *op == BinOp::Concat {
                return Ok(ValueType::Text);
            }
            for t in [l, r] {
                if !matches!(t, ValueType::Number | ValueType::Null) {
                    return Err(TypeError::NotNumeric {
                        op: op.symbol(),
                        found: t,
                    });
                }
            }
            Ok(ValueType::Number)
        }
    }
}

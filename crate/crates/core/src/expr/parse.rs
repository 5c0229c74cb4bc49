//! Recursive-descent parser with precedence climbing.
//!
//! Grammar, loosest to tightest:
//!   expr   := term (('+' | '-') term)*
//!   term   := unary (('*' | '/') unary)*
//!   unary  := '-' unary | power
//!   power  := atom ('^' unary)?          -- right-associative
//!   atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//!
//! `^` binds tighter than unary minus (`-x^2` is `-(x^2)`), and its
//! exponent re-enters at the unary level so `x^-y` parses.

use super::{BinaryOp, Expr, UnaryOp, MAX_VARS};
use crate::error::{Error, Result};

/// Parse `text` against the ordered variable list `vars`.
pub fn parse(text: &str, vars: &[String]) -> Result<Expr> {
    if text.trim().is_empty() {
        return Err(Error::Precondition("expression text is empty".into()));
    }
    if vars.is_empty() {
        return Err(Error::Precondition("variable list is empty".into()));
    }
    if vars.len() > MAX_VARS {
        return Err(Error::Precondition(format!(
            "too many variables: {} > {}",
            vars.len(),
            MAX_VARS
        )));
    }
    for (i, a) in vars.iter().enumerate() {
        if !is_identifier(a) {
            return Err(Error::Precondition(format!("invalid variable name `{a}`")));
        }
        if vars[..i].contains(a) {
            return Err(Error::Precondition(format!("duplicate variable `{a}`")));
        }
    }
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        vars,
    };
    let e = p.expr()?;
    match p.peek() {
        (Tok::Eof, _) => Ok(e),
        (tok, off) => Err(Error::Syntax {
            offset: off,
            message: format!("unexpected {}", tok.describe()),
        }),
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number `{n}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            b'-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            b'*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            b'/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            b'^' => {
                out.push((Tok::Caret, i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let slice = &text[start..i];
                let value: f64 = slice.parse().map_err(|_| Error::Syntax {
                    offset: start,
                    message: format!("invalid numeric literal `{slice}`"),
                })?;
                out.push((Tok::Num(value), start));
            }
            c if (c as char).is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
            }
            c => {
                return Err(Error::Syntax {
                    offset: i,
                    message: format!("unexpected character `{}`", c as char),
                })
            }
        }
    }
    out.push((Tok::Eof, bytes.len()));
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [String],
}

const FUNCTIONS: &[(&str, UnaryOp)] = &[
    ("exp", UnaryOp::Exp),
    ("log", UnaryOp::Log),
    ("sin", UnaryOp::Sin),
    ("cos", UnaryOp::Cos),
    ("sqrt", UnaryOp::Sqrt),
    ("abs", UnaryOp::Abs),
];

impl Parser<'_> {
    fn peek(&self) -> (Tok, usize) {
        self.tokens[self.pos].clone()
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<()> {
        let (tok, off) = self.bump();
        if tok == want {
            Ok(())
        } else {
            Err(Error::Syntax {
                offset: off,
                message: format!("expected {}, found {}", want.describe(), tok.describe()),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().0 {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::binary(BinaryOp::Add, lhs, rhs);
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Expr::binary(BinaryOp::Sub, lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().0 {
                Tok::Star => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::binary(BinaryOp::Mul, lhs, rhs);
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Expr::binary(BinaryOp::Div, lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek().0 == Tok::Minus {
            self.bump();
            let inner = self.unary()?;
            // fold `-literal` into a negative constant so canonical
            // printing of negative constants round-trips
            if let Expr::Const(c) = inner {
                return Ok(Expr::Const(-c));
            }
            return Ok(Expr::unary(UnaryOp::Neg, inner));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek().0 == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let (tok, off) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.peek().0 == Tok::LParen {
                    let op = FUNCTIONS
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, op)| *op)
                        .ok_or_else(|| Error::UnknownIdentifier {
                            name: name.clone(),
                            offset: off,
                        })?;
                    self.bump(); // '('
                    let arg = self.expr()?;
                    self.expect(Tok::RParen)?;
                    Ok(Expr::unary(op, arg))
                } else {
                    // a declared variable shadows the builtin constant
                    match self.vars.iter().position(|v| *v == name) {
                        Some(index) => Ok(Expr::var(index, name)),
                        None if name == "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                        None => Err(Error::UnknownIdentifier {
                            name: name.clone(),
                            offset: off,
                        }),
                    }
                }
            }
            other => Err(Error::Syntax {
                offset: off,
                message: format!("expected expression, found {}", other.describe()),
            }),
        }
    }
}

//! Expression trees for real-valued functions of named variables.
//!
//! An [`Expr`] is built by [`parse`] against an ordered variable list and
//! evaluated by [`eval2`], which returns the exact value, gradient and
//! Hessian at a point. The canonical printed form is the only
//! serialization; `parse(print_canonical(e))` is structurally `e`.

mod eval;
mod parse;

pub use eval::{eval2, eval_grad, eval_value, Eval2, GradEval};
pub use parse::parse;

use crate::error::{Error, Result};

/// Hard cap on the number of variables; evaluation is dense in O(n^2) per node.
pub const MAX_VARS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

/// Abstract syntax tree of a real-valued expression.
///
/// Variables carry both their name and their index in the ordered
/// variable list of the enclosing context, so evaluation needs no
/// lookup table.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var { index: usize, name: String },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(index: usize, name: impl Into<String>) -> Expr {
        Expr::Var {
            index,
            name: name.into(),
        }
    }

    pub fn unary(op: UnaryOp, child: Expr) -> Expr {
        Expr::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary(op, Box::new(left), Box::new(right))
    }

    pub fn add(l: Expr, r: Expr) -> Expr {
        Expr::binary(BinaryOp::Add, l, r)
    }

    pub fn sub(l: Expr, r: Expr) -> Expr {
        Expr::binary(BinaryOp::Sub, l, r)
    }

    pub fn mul(l: Expr, r: Expr) -> Expr {
        Expr::binary(BinaryOp::Mul, l, r)
    }

    /// Largest variable index referenced, plus one. Zero for constant trees.
    pub fn min_dimension(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var { index, .. } => index + 1,
            Expr::Unary(_, c) => c.min_dimension(),
            Expr::Binary(_, l, r) => l.min_dimension().max(r.min_dimension()),
        }
    }

    /// Fully parenthesized canonical form. Parsing it back yields a
    /// structurally identical tree. Negative constants print bare
    /// (`-2.5`), and the parser folds a minus sign applied directly to a
    /// literal into the constant, so the round trip is exact.
    pub fn print_canonical(&self) -> String {
        let mut out = String::new();
        self.print_into(&mut out);
        out
    }

    fn print_into(&self, out: &mut String) {
        match self {
            Expr::Const(c) => {
                out.push_str(&format_constant(*c));
            }
            Expr::Var { name, .. } => out.push_str(name),
            Expr::Unary(UnaryOp::Neg, c) => {
                out.push_str("(-");
                c.print_into(out);
                out.push(')');
            }
            Expr::Unary(op, c) => {
                out.push_str(op.name());
                out.push('(');
                c.print_into(out);
                out.push(')');
            }
            Expr::Binary(op, l, r) => {
                out.push('(');
                // a bare negative literal as a `^` base would reparse as
                // -(base ^ exp) since `^` binds tighter than unary minus
                if *op == BinaryOp::Pow && matches!(**l, Expr::Const(c) if c.is_sign_negative()) {
                    out.push('(');
                    l.print_into(out);
                    out.push(')');
                } else {
                    l.print_into(out);
                }
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                r.print_into(out);
                out.push(')');
            }
        }
    }

    /// Replace variable `index` by the constant `value`, shifting the
    /// indices of later variables down by one.
    pub fn substitute_const(&self, index: usize, value: f64) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var { index: i, name } => {
                if *i == index {
                    Expr::Const(value)
                } else if *i > index {
                    Expr::var(i - 1, name.clone())
                } else {
                    Expr::var(*i, name.clone())
                }
            }
            Expr::Unary(op, c) => Expr::unary(*op, c.substitute_const(index, value)),
            Expr::Binary(op, l, r) => Expr::binary(
                *op,
                l.substitute_const(index, value),
                r.substitute_const(index, value),
            ),
        }
    }

    /// Substitute each variable `i` by `parts[i]`, forming the composition
    /// `self ∘ parts`.
    pub fn compose(&self, parts: &[Expr]) -> Result<Expr> {
        match self {
            Expr::Const(c) => Ok(Expr::Const(*c)),
            Expr::Var { index, .. } => parts.get(*index).cloned().ok_or(Error::Dimension {
                expected: index + 1,
                got: parts.len(),
            }),
            Expr::Unary(op, c) => Ok(Expr::unary(*op, c.compose(parts)?)),
            Expr::Binary(op, l, r) => {
                Ok(Expr::binary(*op, l.compose(parts)?, r.compose(parts)?))
            }
        }
    }
}

fn format_constant(c: f64) -> String {
    // f64 Display is shortest-round-trip, so reparsing recovers the bits.
    let s = format!("{}", c);
    debug_assert!(c.is_finite(), "non-finite constant in expression");
    s
}

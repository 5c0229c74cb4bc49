//! Evaluation with exact derivatives.
//!
//! Three entry points share one set of per-node chain rules:
//! [`eval_value`] (value only), [`eval_grad`] (value + gradient) and
//! [`eval2`] (value + gradient + dense Hessian). Second order is a
//! forward pass of (value, gradient, Hessian) triples per node, O(n^2)
//! per node with n capped at [`super::MAX_VARS`].

use nalgebra::{DMatrix, DVector};

use super::{BinaryOp, Expr, UnaryOp};
use crate::error::{Error, Result};

/// Result of a second-order evaluation.
#[derive(Debug, Clone)]
pub struct Eval2 {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Symmetric by construction: only symmetric updates are applied.
    pub hessian: DMatrix<f64>,
    /// Set when `abs` was evaluated at 0 anywhere in the tree; the
    /// convention there is subgradient 0 and second derivative 0.
    pub nondifferentiable: bool,
}

/// Result of a first-order evaluation.
#[derive(Debug, Clone)]
pub struct GradEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub nondifferentiable: bool,
}

pub fn eval_value(e: &Expr, point: &[f64]) -> Result<f64> {
    let v = match e {
        Expr::Const(c) => *c,
        Expr::Var { index, name } => {
            if *index >= point.len() {
                return Err(Error::Dimension {
                    expected: index + 1,
                    got: point.len(),
                });
            }
            let _ = name;
            point[*index]
        }
        Expr::Unary(op, c) => {
            let cv = eval_value(c, point)?;
            unary_value(*op, cv)?
        }
        Expr::Binary(op, l, r) => {
            let a = eval_value(l, point)?;
            let b = eval_value(r, point)?;
            binary_value(*op, a, b)?
        }
    };
    check_finite(v)?;
    Ok(v)
}

pub fn eval_grad(e: &Expr, point: &[f64]) -> Result<GradEval> {
    let n = point.len();
    let t = node_grad(e, point, n)?;
    Ok(GradEval {
        value: t.v,
        gradient: t.g,
        nondifferentiable: t.flag,
    })
}

pub fn eval2(e: &Expr, point: &[f64]) -> Result<Eval2> {
    let n = point.len();
    let t = node2(e, point, n)?;
    Ok(Eval2 {
        value: t.v,
        gradient: t.g,
        hessian: t.h,
        nondifferentiable: t.flag,
    })
}

/// H += c·g·gᵀ with mirrored writes. A BLAS `ger` computes (c·gᵢ)·gⱼ,
/// whose rounding differs between (i,j) and (j,i); computing c·(gᵢ·gⱼ)
/// once per pair keeps the Hessian bit-exactly symmetric.
fn sym_rank1(h: &mut DMatrix<f64>, c: f64, g: &DVector<f64>) {
    if c == 0.0 {
        return;
    }
    for i in 0..g.len() {
        for j in i..g.len() {
            let t = c * (g[i] * g[j]);
            h[(i, j)] += t;
            if j != i {
                h[(j, i)] += t;
            }
        }
    }
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain("overflow", "non-finite intermediate value"))
    }
}

// ---------------------------------------------------------------- values

fn unary_value(op: UnaryOp, v: f64) -> Result<f64> {
    Ok(match op {
        UnaryOp::Neg => -v,
        UnaryOp::Exp => v.exp(),
        UnaryOp::Log => {
            if v <= 0.0 {
                return Err(Error::domain("log", format!("argument {v} is not positive")));
            }
            v.ln()
        }
        UnaryOp::Sin => v.sin(),
        UnaryOp::Cos => v.cos(),
        UnaryOp::Sqrt => {
            if v < 0.0 {
                return Err(Error::domain("sqrt", format!("argument {v} is negative")));
            }
            v.sqrt()
        }
        UnaryOp::Abs => v.abs(),
    })
}

fn binary_value(op: BinaryOp, a: f64, b: f64) -> Result<f64> {
    Ok(match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => {
            if b == 0.0 {
                return Err(Error::domain("div", "division by zero"));
            }
            a / b
        }
        BinaryOp::Pow => pow_value(a, b)?,
    })
}

const INT_EXP_TOL: f64 = 1e-12;

fn as_integer_exponent(b: f64) -> Option<f64> {
    let k = b.round();
    if (b - k).abs() < INT_EXP_TOL && k.abs() < 9.0e15 {
        Some(k)
    } else {
        None
    }
}

/// a^k for integer k (given as a rounded f64), defined for any base.
/// 0^0 is taken as 1.
fn int_pow(a: f64, k: f64) -> Result<f64> {
    if k == 0.0 {
        return Ok(1.0);
    }
    if a == 0.0 {
        if k < 0.0 {
            return Err(Error::domain("pow", "zero base with negative exponent"));
        }
        return Ok(0.0);
    }
    let magnitude = a.abs().powf(k);
    let odd = (k as i64) % 2 != 0;
    Ok(if odd && a < 0.0 { -magnitude } else { magnitude })
}

fn pow_value(a: f64, b: f64) -> Result<f64> {
    if let Some(k) = as_integer_exponent(b) {
        return int_pow(a, k);
    }
    if a <= 0.0 {
        return Err(Error::domain(
            "pow",
            format!("non-integer exponent {b} requires a positive base, got {a}"),
        ));
    }
    Ok(a.powf(b))
}

// ------------------------------------------------------- derivative tables

/// (value, first derivative, second derivative, non-differentiable flag)
fn unary_derivs(op: UnaryOp, v: f64) -> Result<(f64, f64, f64, bool)> {
    Ok(match op {
        UnaryOp::Neg => (-v, -1.0, 0.0, false),
        UnaryOp::Exp => {
            let e = v.exp();
            (e, e, e, false)
        }
        UnaryOp::Log => {
            if v <= 0.0 {
                return Err(Error::domain("log", format!("argument {v} is not positive")));
            }
            (v.ln(), 1.0 / v, -1.0 / (v * v), false)
        }
        UnaryOp::Sin => (v.sin(), v.cos(), -v.sin(), false),
        UnaryOp::Cos => (v.cos(), -v.sin(), -v.cos(), false),
        UnaryOp::Sqrt => {
            if v < 0.0 {
                return Err(Error::domain("sqrt", format!("argument {v} is negative")));
            }
            if v == 0.0 {
                return Err(Error::domain("sqrt", "derivative is singular at 0"));
            }
            let s = v.sqrt();
            (s, 0.5 / s, -0.25 / (s * v), false)
        }
        UnaryOp::Abs => {
            if v == 0.0 {
                // kink: subgradient 0, curvature 0, flag raised
                (0.0, 0.0, 0.0, true)
            } else {
                (v.abs(), v.signum(), 0.0, false)
            }
        }
    })
}

/// Partial derivatives of a binary operation at (a, b).
struct BinaryDerivs {
    value: f64,
    fa: f64,
    fb: f64,
    faa: f64,
    fab: f64,
    fbb: f64,
}

fn binary_derivs(op: BinaryOp, a: f64, b: f64, b_is_constant: bool) -> Result<BinaryDerivs> {
    let d = match op {
        BinaryOp::Add => BinaryDerivs {
            value: a + b,
            fa: 1.0,
            fb: 1.0,
            faa: 0.0,
            fab: 0.0,
            fbb: 0.0,
        },
        BinaryOp::Sub => BinaryDerivs {
            value: a - b,
            fa: 1.0,
            fb: -1.0,
            faa: 0.0,
            fab: 0.0,
            fbb: 0.0,
        },
        BinaryOp::Mul => BinaryDerivs {
            value: a * b,
            fa: b,
            fb: a,
            faa: 0.0,
            fab: 1.0,
            fbb: 0.0,
        },
        BinaryOp::Div => {
            if b == 0.0 {
                return Err(Error::domain("div", "division by zero"));
            }
            let inv = 1.0 / b;
            BinaryDerivs {
                value: a * inv,
                fa: inv,
                fb: -a * inv * inv,
                faa: 0.0,
                fab: -inv * inv,
                fbb: 2.0 * a * inv * inv * inv,
            }
        }
        BinaryOp::Pow => {
            match as_integer_exponent(b) {
                // the integer power rule only applies when the exponent
                // does not vary with the base point
                Some(k) if b_is_constant => {
                    let value = int_pow(a, k)?;
                    let fa = if k == 0.0 { 0.0 } else { k * int_pow(a, k - 1.0)? };
                    let faa = if k == 0.0 || k == 1.0 {
                        0.0
                    } else {
                        k * (k - 1.0) * int_pow(a, k - 2.0)?
                    };
                    BinaryDerivs {
                        value,
                        fa,
                        fb: 0.0,
                        faa,
                        fab: 0.0,
                        fbb: 0.0,
                    }
                }
                _ => {
                    if a <= 0.0 {
                        return Err(Error::domain(
                            "pow",
                            format!("variable or non-integer exponent requires a positive base, got {a}"),
                        ));
                    }
                    let value = a.powf(b);
                    let ln_a = a.ln();
                    let a_bm1 = a.powf(b - 1.0);
                    BinaryDerivs {
                        value,
                        fa: b * a_bm1,
                        fb: value * ln_a,
                        faa: b * (b - 1.0) * a.powf(b - 2.0),
                        fab: a_bm1 * (b * ln_a + 1.0),
                        fbb: value * ln_a * ln_a,
                    }
                }
            }
        }
    };
    Ok(d)
}

// ------------------------------------------------------------ first order

struct TGrad {
    v: f64,
    g: DVector<f64>,
    flag: bool,
}

fn node_grad(e: &Expr, p: &[f64], n: usize) -> Result<TGrad> {
    let t = match e {
        Expr::Const(c) => TGrad {
            v: *c,
            g: DVector::zeros(n),
            flag: false,
        },
        Expr::Var { index, .. } => {
            if *index >= n {
                return Err(Error::Dimension {
                    expected: index + 1,
                    got: n,
                });
            }
            let mut g = DVector::zeros(n);
            g[*index] = 1.0;
            TGrad {
                v: p[*index],
                g,
                flag: false,
            }
        }
        Expr::Unary(op, c) => {
            let mut t = node_grad(c, p, n)?;
            let (v, d1, _d2, flag) = unary_derivs(*op, t.v)?;
            t.g *= d1;
            t.v = v;
            t.flag |= flag;
            t
        }
        Expr::Binary(op, l, r) => {
            let mut a = node_grad(l, p, n)?;
            let b = node_grad(r, p, n)?;
            let b_const = b.g.iter().all(|x| *x == 0.0);
            let d = binary_derivs(*op, a.v, b.v, b_const)?;
            a.g *= d.fa;
            a.g.axpy(d.fb, &b.g, 1.0);
            a.v = d.value;
            a.flag |= b.flag;
            a
        }
    };
    check_finite(t.v)?;
    Ok(t)
}

// ----------------------------------------------------------- second order

struct T2 {
    v: f64,
    g: DVector<f64>,
    h: DMatrix<f64>,
    flag: bool,
}

fn node2(e: &Expr, p: &[f64], n: usize) -> Result<T2> {
    let t = match e {
        Expr::Const(c) => T2 {
            v: *c,
            g: DVector::zeros(n),
            h: DMatrix::zeros(n, n),
            flag: false,
        },
        Expr::Var { index, .. } => {
            if *index >= n {
                return Err(Error::Dimension {
                    expected: index + 1,
                    got: n,
                });
            }
            let mut g = DVector::zeros(n);
            g[*index] = 1.0;
            T2 {
                v: p[*index],
                g,
                h: DMatrix::zeros(n, n),
                flag: false,
            }
        }
        Expr::Unary(op, c) => {
            let mut t = node2(c, p, n)?;
            let (v, d1, d2, flag) = unary_derivs(*op, t.v)?;
            // H <- d1 H + d2 g g^T, then g <- d1 g (rank-one first: it
            // needs the un-scaled gradient)
            t.h *= d1;
            sym_rank1(&mut t.h, d2, &t.g);
            t.g *= d1;
            t.v = v;
            t.flag |= flag;
            t
        }
        Expr::Binary(op, l, r) => {
            let mut a = node2(l, p, n)?;
            let b = node2(r, p, n)?;
            let b_const =
                b.g.iter().all(|x| *x == 0.0) && b.h.iter().all(|x| *x == 0.0);
            let d = binary_derivs(*op, a.v, b.v, b_const)?;
            // H <- fa Ha + fb Hb + faa ga ga^T + fab (ga gb^T + gb ga^T) + fbb gb gb^T
            a.h *= d.fa;
            a.h.zip_apply(&b.h, |x, y| *x += d.fb * y);
            sym_rank1(&mut a.h, d.faa, &a.g);
            // the cross term is mirrored explicitly too: independent
            // updates of (i,j) and (j,i) round in different order
            if d.fab != 0.0 {
                for i in 0..n {
                    for j in i..n {
                        let t = d.fab * (a.g[i] * b.g[j] + b.g[i] * a.g[j]);
                        a.h[(i, j)] += t;
                        if j != i {
                            a.h[(j, i)] += t;
                        }
                    }
                }
            }
            sym_rank1(&mut a.h, d.fbb, &b.g);
            a.g *= d.fa;
            a.g.axpy(d.fb, &b.g, 1.0);
            a.v = d.value;
            a.flag |= b.flag;
            a
        }
    };
    check_finite(t.v)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn vars(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn square_at_three() {
        let e = parse("x^2", &vars(&["x"])).unwrap();
        let r = eval2(&e, &[3.0]).unwrap();
        assert_eq!(r.value, 9.0);
        assert_eq!(r.gradient[0], 6.0);
        assert_eq!(r.hessian[(0, 0)], 2.0);
        assert!(!r.nondifferentiable);
    }

    #[test]
    fn sin_at_zero() {
        let e = parse("sin(x)", &vars(&["x"])).unwrap();
        let r = eval2(&e, &[0.0]).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.gradient[0], 1.0);
        assert_eq!(r.hessian[(0, 0)], 0.0);
    }

    #[test]
    fn log_at_zero_is_domain_error() {
        let e = parse("log(x)", &vars(&["x"])).unwrap();
        assert!(matches!(eval2(&e, &[0.0]), Err(Error::Domain { .. })));
    }

    #[test]
    fn abs_at_zero_sets_flag() {
        let e = parse("abs(x)", &vars(&["x"])).unwrap();
        let r = eval2(&e, &[0.0]).unwrap();
        assert!(r.nondifferentiable);
        assert_eq!(r.gradient[0], 0.0);
        assert_eq!(r.hessian[(0, 0)], 0.0);
        let r = eval2(&e, &[-2.0]).unwrap();
        assert!(!r.nondifferentiable);
        assert_eq!(r.gradient[0], -1.0);
    }

    #[test]
    fn integer_pow_allows_negative_base() {
        let e = parse("x^3", &vars(&["x"])).unwrap();
        let r = eval2(&e, &[-2.0]).unwrap();
        assert_eq!(r.value, -8.0);
        assert_eq!(r.gradient[0], 12.0);
        assert_eq!(r.hessian[(0, 0)], -12.0);
    }

    #[test]
    fn fractional_pow_requires_positive_base() {
        let e = parse("x^0.5", &vars(&["x"])).unwrap();
        assert!(eval2(&e, &[4.0]).is_ok());
        assert!(matches!(eval2(&e, &[-1.0]), Err(Error::Domain { .. })));
    }

    #[test]
    fn zero_to_negative_power_is_domain_error() {
        let e = parse("x^-2", &vars(&["x"])).unwrap();
        assert!(matches!(eval2(&e, &[0.0]), Err(Error::Domain { .. })));
    }

    #[test]
    fn division_by_zero() {
        let e = parse("x / y", &vars(&["x", "y"])).unwrap();
        assert!(matches!(eval2(&e, &[1.0, 0.0]), Err(Error::Domain { .. })));
        let r = eval2(&e, &[1.0, 2.0]).unwrap();
        assert_eq!(r.value, 0.5);
    }

    #[test]
    fn variable_exponent_uses_general_rule() {
        // d/dy x^y = x^y ln x
        let e = parse("x^y", &vars(&["x", "y"])).unwrap();
        let r = eval2(&e, &[2.0, 3.0]).unwrap();
        assert_eq!(r.value, 8.0);
        assert!((r.gradient[1] - 8.0 * 2.0_f64.ln()).abs() < 1e-12);
        assert!((r.gradient[0] - 12.0).abs() < 1e-12);
        // negative base with a *variable* exponent is rejected even at
        // integer exponent values
        assert!(matches!(
            eval2(&e, &[-2.0, 3.0]),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn hessian_cross_terms() {
        let e = parse("x*y + x^2*y", &vars(&["x", "y"])).unwrap();
        let r = eval2(&e, &[2.0, 3.0]).unwrap();
        // F = xy + x^2 y: Fxy = 1 + 2x = 5, Fxx = 2y = 6, Fyy = 0
        assert_eq!(r.hessian[(0, 1)], 5.0);
        assert_eq!(r.hessian[(1, 0)], 5.0);
        assert_eq!(r.hessian[(0, 0)], 6.0);
        assert_eq!(r.hessian[(1, 1)], 0.0);
    }

    #[test]
    fn value_only_matches_eval2() {
        let e = parse("exp(sin(x) + y/2) * sqrt(y)", &vars(&["x", "y"])).unwrap();
        let p = [0.7, 1.3];
        let v = eval_value(&e, &p).unwrap();
        let g = eval_grad(&e, &p).unwrap();
        let full = eval2(&e, &p).unwrap();
        assert_eq!(v, full.value);
        assert_eq!(g.value, full.value);
        assert_eq!(g.gradient, full.gradient);
    }
}

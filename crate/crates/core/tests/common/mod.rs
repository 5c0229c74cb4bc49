#![allow(dead_code)]

use errlab::{BinaryOp, Expr, Frame, UnaryOp};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const VAR_NAMES: [&str; 3] = ["x", "y", "z"];

/// |a − b| within tol scaled by the magnitudes involved.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs() + b.abs())
}

pub fn random_point(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random polynomial of total degree ≤ 4 in `nvars` ≤ 3 variables.
pub fn random_poly(rng: &mut impl Rng, nvars: usize) -> Expr {
    let terms = rng.random_range(1..=6);
    let mut acc: Option<Expr> = None;
    for _ in 0..terms {
        let c: f64 = rng.random_range(-2.0..2.0);
        let mut term = Expr::constant(c);
        let mut budget = 4usize;
        for v in 0..nvars {
            let e = rng.random_range(0..=budget);
            budget -= e;
            let factor = match e {
                0 => continue,
                1 => Expr::var(v, VAR_NAMES[v]),
                _ => Expr::binary(
                    BinaryOp::Pow,
                    Expr::var(v, VAR_NAMES[v]),
                    Expr::constant(e as f64),
                ),
            };
            term = Expr::mul(term, factor);
        }
        acc = Some(match acc {
            None => term,
            Some(a) => Expr::add(a, term),
        });
    }
    acc.unwrap()
}

/// Random smooth (entire) expression: polynomial atoms combined with
/// +, −, ·, sin, cos, and exp∘sin (bounded argument keeps magnitudes
/// tame everywhere).
pub fn random_smooth(rng: &mut impl Rng, nvars: usize, depth: usize) -> Expr {
    if depth == 0 {
        return if rng.random::<bool>() {
            let v = rng.random_range(0..nvars);
            Expr::var(v, VAR_NAMES[v])
        } else {
            Expr::constant(rng.random_range(-2.0..2.0))
        };
    }
    match rng.random_range(0..6) {
        0 => Expr::add(
            random_smooth(rng, nvars, depth - 1),
            random_smooth(rng, nvars, depth - 1),
        ),
        1 => Expr::sub(
            random_smooth(rng, nvars, depth - 1),
            random_smooth(rng, nvars, depth - 1),
        ),
        2 => Expr::mul(
            random_smooth(rng, nvars, depth - 1),
            random_smooth(rng, nvars, depth - 1),
        ),
        3 => Expr::unary(UnaryOp::Sin, random_smooth(rng, nvars, depth - 1)),
        4 => Expr::unary(UnaryOp::Cos, random_smooth(rng, nvars, depth - 1)),
        _ => Expr::unary(
            UnaryOp::Exp,
            Expr::unary(UnaryOp::Sin, random_smooth(rng, nvars, depth - 1)),
        ),
    }
}

/// Random frame with an exactly-PSD Γ = A·Aᵀ and a nonzero bias vector.
pub fn random_psd_frame(rng: &mut impl Rng, n: usize) -> Frame {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let gamma = &a * a.transpose();
    let point = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let bias = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    Frame::new(point, gamma, bias).unwrap()
}

/// Fix a consistent (index, name) pair for variable `v`.
pub fn var(v: usize) -> Expr {
    Expr::var(v, VAR_NAMES[v])
}

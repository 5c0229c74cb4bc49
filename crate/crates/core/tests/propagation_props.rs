//! Seeded random suites for the propagation engine: bilinearity,
//! symmetry, Cauchy–Schwarz, functional calculus, Leibniz, the carré
//! identity, transport composition, and coherence round trips.

mod common;

use common::{close, random_point, random_poly, random_psd_frame, random_smooth, var};
use errlab::{
    gamma, parse, propagate, pushforward, verify_carre_identity, BinaryOp, ErrorStructure, Expr,
    UnaryOp,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn vars2() -> Vec<String> {
    vec!["x".into(), "y".into()]
}

#[test]
fn gamma_bilinear_in_first_argument() {
    let mut rng = ChaCha12Rng::seed_from_u64(100);
    for _ in 0..200 {
        let f = random_psd_frame(&mut rng, 3);
        let ex = random_poly(&mut rng, 3);
        let ey = random_poly(&mut rng, 3);
        let ez = random_poly(&mut rng, 3);
        let a: f64 = rng.random_range(-3.0..3.0);
        let b: f64 = rng.random_range(-3.0..3.0);
        let combo = Expr::add(
            Expr::mul(Expr::constant(a), ex.clone()),
            Expr::mul(Expr::constant(b), ey.clone()),
        );
        let qx = propagate(&ex, &f).unwrap();
        let qy = propagate(&ey, &f).unwrap();
        let qz = propagate(&ez, &f).unwrap();
        let qc = propagate(&combo, &f).unwrap();
        let lhs = gamma(&qc, &qz, &f).unwrap();
        let rhs = a * gamma(&qx, &qz, &f).unwrap() + b * gamma(&qy, &qz, &f).unwrap();
        assert!(close(lhs, rhs, 1e-12), "lhs {lhs} rhs {rhs}");
    }
}

#[test]
fn gamma_symmetric_and_nonnegative() {
    let mut rng = ChaCha12Rng::seed_from_u64(101);
    for _ in 0..200 {
        let f = random_psd_frame(&mut rng, 3);
        let ex = random_poly(&mut rng, 3);
        let ey = random_poly(&mut rng, 3);
        let qx = propagate(&ex, &f).unwrap();
        let qy = propagate(&ey, &f).unwrap();
        let xy = gamma(&qx, &qy, &f).unwrap();
        let yx = gamma(&qy, &qx, &f).unwrap();
        assert_eq!(xy.to_bits(), yx.to_bits(), "symmetry must be exact");
        assert!(gamma(&qx, &qx, &f).unwrap() >= -1e-12);
    }
}

#[test]
fn gamma_cauchy_schwarz() {
    let mut rng = ChaCha12Rng::seed_from_u64(102);
    for _ in 0..200 {
        let f = random_psd_frame(&mut rng, 3);
        let ex = random_poly(&mut rng, 3);
        let ey = random_poly(&mut rng, 3);
        let qx = propagate(&ex, &f).unwrap();
        let qy = propagate(&ey, &f).unwrap();
        let xy = gamma(&qx, &qy, &f).unwrap();
        let xx = gamma(&qx, &qx, &f).unwrap();
        let yy = gamma(&qy, &qy, &f).unwrap();
        assert!(
            xy * xy <= xx.max(0.0) * yy.max(0.0) * (1.0 + 1e-10) + 1e-18,
            "xy² {} vs xx·yy {}",
            xy * xy,
            xx * yy
        );
    }
}

#[test]
fn functional_calculus_identity() {
    // Γ[F∘u, G∘v] = Σ_ij F′_i(u) G′_j(v) Γ[u_i, v_j]; the left side
    // propagates the composed expressions directly
    let mut rng = ChaCha12Rng::seed_from_u64(103);
    for case in 0..200 {
        let f = random_psd_frame(&mut rng, 2);
        let u: Vec<Expr> = (0..2).map(|_| random_smooth(&mut rng, 2, 2)).collect();
        let v: Vec<Expr> = (0..2).map(|_| random_smooth(&mut rng, 2, 2)).collect();
        let big_f = random_smooth(&mut rng, 2, 2);
        let big_g = random_smooth(&mut rng, 2, 2);

        let fu = big_f.compose(&u).unwrap();
        let gv = big_g.compose(&v).unwrap();
        let q_fu = propagate(&fu, &f).unwrap();
        let q_gv = propagate(&gv, &f).unwrap();
        let lhs = gamma(&q_fu, &q_gv, &f).unwrap();

        let qu: Vec<_> = u.iter().map(|e| propagate(e, &f).unwrap()).collect();
        let qv: Vec<_> = v.iter().map(|e| propagate(e, &f).unwrap()).collect();
        let u_point = [qu[0].value, qu[1].value];
        let v_point = [qv[0].value, qv[1].value];
        let df = errlab::expr::eval_grad(&big_f, &u_point).unwrap().gradient;
        let dg = errlab::expr::eval_grad(&big_g, &v_point).unwrap().gradient;
        let mut rhs = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                rhs += df[i] * dg[j] * gamma(&qu[i], &qv[j], &f).unwrap();
            }
        }
        assert!(close(lhs, rhs, 1e-9), "case {case}: lhs {lhs} rhs {rhs}");
    }
}

#[test]
fn leibniz_rule() {
    let mut rng = ChaCha12Rng::seed_from_u64(104);
    for _ in 0..200 {
        let f = random_psd_frame(&mut rng, 3);
        let ex = random_poly(&mut rng, 3);
        let ey = random_poly(&mut rng, 3);
        let ez = random_poly(&mut rng, 3);
        let qx = propagate(&ex, &f).unwrap();
        let qy = propagate(&ey, &f).unwrap();
        let qz = propagate(&ez, &f).unwrap();
        let product = Expr::mul(ex.clone(), ey.clone());
        let qp = propagate(&product, &f).unwrap();
        let lhs = gamma(&qp, &qz, &f).unwrap();
        let rhs = qx.value * gamma(&qy, &qz, &f).unwrap() + qy.value * gamma(&qx, &qz, &f).unwrap();
        assert!(close(lhs, rhs, 1e-9), "lhs {lhs} rhs {rhs}");
    }
}

#[test]
fn carre_identity_random_polynomials() {
    let mut rng = ChaCha12Rng::seed_from_u64(105);
    for case in 0..250 {
        let f = random_psd_frame(&mut rng, 3);
        let e = random_poly(&mut rng, 3);
        let q = propagate(&e, &f).unwrap();
        let g = gamma(&q, &q, &f).unwrap();
        let residual = verify_carre_identity(&e, &f).unwrap();
        assert!(
            residual.abs() < 1e-9 * (1.0 + g.abs()),
            "case {case}: residual {residual} gamma {g}"
        );
    }
}

/// Random invertible linear 2×2 map as expressions, with its inverse.
fn random_invertible_pair(rng: &mut impl Rng) -> (Vec<Expr>, Vec<Expr>) {
    loop {
        let m = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ];
        let det: f64 = m[0] * m[3] - m[1] * m[2];
        if det.abs() < 0.3 {
            continue;
        }
        let lin = |a: f64, b: f64| {
            Expr::add(
                Expr::mul(Expr::constant(a), var(0)),
                Expr::mul(Expr::constant(b), var(1)),
            )
        };
        let fwd = vec![lin(m[0], m[1]), lin(m[2], m[3])];
        let inv = vec![
            lin(m[3] / det, -m[1] / det),
            lin(-m[2] / det, m[0] / det),
        ];
        return (fwd, inv);
    }
}

/// Componentwise strictly monotone C² map and its inverse; both sides
/// stay within the open domains of their primitives on positive points.
fn random_monotone_pair(rng: &mut impl Rng) -> (Vec<Expr>, Vec<Expr>) {
    let mut fwd = Vec::new();
    let mut inv = Vec::new();
    for v in 0..2 {
        match rng.random_range(0..3) {
            0 => {
                let a: f64 = rng.random_range(0.5..2.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                fwd.push(Expr::add(
                    Expr::mul(Expr::constant(a), var(v)),
                    Expr::constant(b),
                ));
                inv.push(Expr::mul(
                    Expr::constant(1.0 / a),
                    Expr::sub(var(v), Expr::constant(b)),
                ));
            }
            1 => {
                fwd.push(Expr::unary(UnaryOp::Exp, var(v)));
                inv.push(Expr::unary(UnaryOp::Log, var(v)));
            }
            _ => {
                fwd.push(Expr::binary(BinaryOp::Pow, var(v), Expr::constant(3.0)));
                inv.push(Expr::binary(
                    BinaryOp::Pow,
                    var(v),
                    Expr::constant(1.0 / 3.0),
                ));
            }
        }
    }
    (fwd, inv)
}

#[test]
fn transport_composition_associative() {
    // pushforward(v, pushforward(u, f)) == pushforward(v∘u, f)
    let mut rng = ChaCha12Rng::seed_from_u64(106);
    for case in 0..120 {
        let f = random_psd_frame(&mut rng, 2);
        let (u, _) = random_invertible_pair(&mut rng);
        let v = if case % 2 == 0 {
            random_invertible_pair(&mut rng).0
        } else {
            // componentwise smooth strictly monotone on all of ℝ:
            // a·x + sin(x) with a > 1 (derivative a + cos ≥ a − 1 > 0)
            (0..2)
                .map(|k| {
                    let a: f64 = rng.random_range(1.2..3.0);
                    Expr::add(
                        Expr::mul(Expr::constant(a), var(k)),
                        Expr::unary(UnaryOp::Sin, var(k)),
                    )
                })
                .collect()
        };
        let staged_mid = pushforward(&u, &f).unwrap();
        let staged = pushforward(&v, &staged_mid.frame).unwrap();
        let composed: Vec<Expr> = v.iter().map(|e| e.compose(&u).unwrap()).collect();
        let direct = pushforward(&composed, &f).unwrap();
        for k in 0..2 {
            assert!(
                close(staged.frame.point[k], direct.frame.point[k], 1e-9),
                "case {case} point[{k}]"
            );
            assert!(
                close(staged.frame.bias[k], direct.frame.bias[k], 1e-9),
                "case {case} bias[{k}]: staged {} direct {}",
                staged.frame.bias[k],
                direct.frame.bias[k]
            );
            for l in 0..2 {
                assert!(
                    close(staged.frame.gamma[(k, l)], direct.frame.gamma[(k, l)], 1e-9),
                    "case {case} gamma[{k},{l}]: staged {} direct {}",
                    staged.frame.gamma[(k, l)],
                    direct.frame.gamma[(k, l)]
                );
            }
        }
    }
}

#[test]
fn coherence_round_trips_recover_base_frame() {
    let mut rng = ChaCha12Rng::seed_from_u64(107);
    let s = ErrorStructure::diag(&["x", "y"], &[1.0, 1.0]).unwrap();
    for case in 0..100 {
        let (fwd, inv, point) = if case % 2 == 0 {
            let (fwd, inv) = random_invertible_pair(&mut rng);
            (fwd, inv, random_point(&mut rng, 2, -1.0, 1.0))
        } else {
            // monotone bijections need positive points for the x³ ↔ x^(1/3) pair
            let (fwd, inv) = random_monotone_pair(&mut rng);
            (fwd, inv, random_point(&mut rng, 2, 0.5, 2.0))
        };
        let f = s.base_frame(&point).unwrap();
        let mid = pushforward(&fwd, &f).unwrap();
        let end = pushforward(&inv, &mid.frame).unwrap();
        for k in 0..2 {
            assert!(
                close(end.frame.point[k], f.point[k], 1e-9),
                "case {case} point[{k}]: {} vs {}",
                end.frame.point[k],
                f.point[k]
            );
            for l in 0..2 {
                assert!(
                    close(end.frame.gamma[(k, l)], f.gamma[(k, l)], 1e-9),
                    "case {case} gamma[{k},{l}]: {} vs {}",
                    end.frame.gamma[(k, l)],
                    f.gamma[(k, l)]
                );
            }
        }
    }
}

#[test]
fn shear_round_trip_exact_values() {
    // the CLI coherence demo contract: coherent engine recovers
    // diag(1,1) within 1e-12, naive engine reports 3.0 exactly
    let s = ErrorStructure::diag(&["x", "y"], &[1.0, 1.0]).unwrap();
    let f = s.base_frame(&[0.0, 0.0]).unwrap();
    let v = vars2();
    let fwd = [parse("x + y", &v).unwrap(), parse("y", &v).unwrap()];
    let back = [parse("x - y", &v).unwrap(), parse("y", &v).unwrap()];
    let end = pushforward(&back, &pushforward(&fwd, &f).unwrap().frame).unwrap();
    for k in 0..2 {
        for l in 0..2 {
            let want = if k == l { 1.0 } else { 0.0 };
            assert!((end.frame.gamma[(k, l)] - want).abs() < 1e-12);
        }
    }
    let stages = vec![fwd.to_vec(), back.to_vec()];
    let naive = errlab::propagate_naive(&stages, &s, &[0.0, 0.0]).unwrap();
    assert_eq!(naive[0], 3.0);
    assert_eq!(naive[1], 1.0);
}

//! The coherent propagation engine, and the deliberately incoherent
//! per-coordinate one kept for contrast.
//!
//! [`propagate`] pushes value, gradient and bias through an expression
//! over a [`Frame`]; [`gamma`] is the quadratic error form on the
//! resulting quantities; [`pushforward`] transports a whole frame
//! through a mapping stage so that composed stages give the same
//! answers as direct propagation. [`propagate_naive`] chains the
//! absolute-value first-order formula instead, which inflates errors
//! under round trips.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{eval2, eval_grad, Expr};
use crate::structure::{clip_psd, ErrorStructure, Frame};

/// An erroneous quantity relative to a frame: its value, its gradient
/// with respect to the frame coordinates, and its bias (the transported
/// L applied to it).
#[derive(Debug, Clone)]
pub struct Quantity {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub bias: f64,
    pub nondifferentiable: bool,
}

/// Propagate `e` through frame `f`.
///
/// The bias follows the exact second-order chain rule
/// `Σ_k ∂F/∂V_k · bias_k + ½ Σ_kl ∂²F/∂V_k∂V_l · Γ_kl`, which reduces
/// to L F on a base frame (zero bias, Γ = σ).
pub fn propagate(e: &Expr, f: &Frame) -> Result<Quantity> {
    let m = f.dim();
    if e.min_dimension() > m {
        return Err(Error::Dimension {
            expected: e.min_dimension(),
            got: m,
        });
    }
    let r = eval2(e, f.point.as_slice())?;
    let mut bias = r.gradient.dot(&f.bias);
    // ½ tr(H Γ); both symmetric
    let mut quad = 0.0;
    for k in 0..m {
        for l in 0..m {
            quad += r.hessian[(k, l)] * f.gamma[(k, l)];
        }
    }
    bias += 0.5 * quad;
    Ok(Quantity {
        value: r.value,
        gradient: r.gradient,
        bias,
        nondifferentiable: r.nondifferentiable,
    })
}

/// Quadratic covariance of errors between two quantities over the same
/// frame: `∇xᵀ Γ ∇y`. Symmetric in its arguments by the symmetric
/// evaluation order below.
pub fn gamma(x: &Quantity, y: &Quantity, f: &Frame) -> Result<f64> {
    let m = f.dim();
    if x.gradient.len() != m || y.gradient.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: x.gradient.len().max(y.gradient.len()),
        });
    }
    let mut acc = 0.0;
    for k in 0..m {
        for l in 0..m {
            // symmetrized product keeps gamma(x,y) == gamma(y,x) exact
            acc += f.gamma[(k, l)] * 0.5 * (x.gradient[k] * y.gradient[l] + y.gradient[k] * x.gradient[l]);
        }
    }
    Ok(acc)
}

/// Residual of the carré-du-champ identity `Γ[F] = L(F²) − 2·F·L F` at
/// the frame point. Should be at rounding level for smooth expressions;
/// the left and right sides go through different code paths (the
/// squared expression exercises the product chain rule).
pub fn verify_carre_identity(e: &Expr, f: &Frame) -> Result<f64> {
    let squared = Expr::mul(e.clone(), e.clone());
    let q = propagate(e, f)?;
    let q2 = propagate(&squared, f)?;
    let g = gamma(&q, &q, f)?;
    Ok(q2.bias - 2.0 * q.value * q.bias - g)
}

/// Result of transporting a frame through a mapping stage.
#[derive(Debug, Clone)]
pub struct Pushforward {
    pub frame: Frame,
    /// Total magnitude of negative eigenvalues floored to zero when the
    /// image Γ-matrix was rebuilt.
    pub psd_clip: f64,
    pub nondifferentiable: bool,
}

/// Transport `f` through the mapping `u = (maps[0], .., maps[m-1])`.
///
/// The image frame has point `u(point)`, Γ'_kl = Γ(u_k, u_l) and
/// bias'_k = bias(u_k). Intended for injective regular mappings;
/// injectivity is not checked.
pub fn pushforward(maps: &[Expr], f: &Frame) -> Result<Pushforward> {
    if maps.is_empty() {
        return Err(Error::Precondition("pushforward needs at least one map".into()));
    }
    let quantities = maps
        .iter()
        .map(|e| propagate(e, f))
        .collect::<Result<Vec<_>>>()?;
    let m = maps.len();
    let mut g = DMatrix::zeros(m, m);
    for k in 0..m {
        for l in k..m {
            let v = gamma(&quantities[k], &quantities[l], f)?;
            g[(k, l)] = v;
            g[(l, k)] = v;
        }
    }
    let (g, psd_clip) = clip_psd(g, None)?;
    let point = DVector::from_iterator(m, quantities.iter().map(|q| q.value));
    let bias = DVector::from_iterator(m, quantities.iter().map(|q| q.bias));
    Ok(Pushforward {
        frame: Frame { point, gamma: g, bias },
        psd_clip,
        nondifferentiable: quantities.iter().any(|q| q.nondifferentiable),
    })
}

/// Chain the incoherent first-order formula
/// `σ_U = Σ_i |∂F/∂V_i| σ_i` through composition stages.
///
/// Initial per-coordinate errors are the square roots of the diagonal
/// of σ(point); off-diagonal covariances are ignored because the
/// formula has no covariance terms. Returns the final per-coordinate
/// error vector (standard-deviation-like, nonnegative).
pub fn propagate_naive(
    stages: &[Vec<Expr>],
    s: &ErrorStructure,
    point: &[f64],
) -> Result<DVector<f64>> {
    let sigma0 = s.sigma_at(point)?;
    let mut errors = DVector::from_iterator(s.dim(), sigma0.diagonal().iter().map(|v| v.sqrt()));
    let mut current = DVector::from_row_slice(point);
    for (stage_idx, stage) in stages.iter().enumerate() {
        let mut next_point = DVector::zeros(stage.len());
        let mut next_errors = DVector::zeros(stage.len());
        for (k, e) in stage.iter().enumerate() {
            let r = eval_grad(e, current.as_slice()).map_err(|err| Error::AtStage {
                stage: stage_idx,
                point: current.as_slice().to_vec(),
                source: Box::new(err),
            })?;
            next_point[k] = r.value;
            next_errors[k] = r
                .gradient
                .iter()
                .zip(errors.iter())
                .map(|(j, s)| j.abs() * s)
                .sum::<f64>();
        }
        current = next_point;
        errors = next_errors;
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn vars(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn linear_function_has_zero_bias() {
        let s = ErrorStructure::diag(&["x", "y"], &[1.0, 1.0]).unwrap();
        let f = s.base_frame(&[0.3, -1.2]).unwrap();
        let e = parse("x + y", &vars(&["x", "y"])).unwrap();
        let q = propagate(&e, &f).unwrap();
        assert_eq!(q.gradient, DVector::from_row_slice(&[1.0, 1.0]));
        assert_eq!(q.bias, 0.0);
    }

    #[test]
    fn square_bias_is_half_sigma_fxx() {
        let s = ErrorStructure::diag(&["x"], &[1.0]).unwrap();
        let f = s.base_frame(&[1.0]).unwrap();
        let e = parse("x^2", &vars(&["x"])).unwrap();
        let q = propagate(&e, &f).unwrap();
        assert_eq!(q.value, 1.0);
        assert_eq!(q.gradient[0], 2.0);
        assert_eq!(q.bias, 1.0);
    }

    #[test]
    fn gamma_matches_gauss_formula() {
        // F = V1 + V2 with unit variances: gamma = 2
        let s = ErrorStructure::diag(&["x", "y"], &[1.0, 1.0]).unwrap();
        let f = s.base_frame(&[0.0, 0.0]).unwrap();
        let e = parse("x + y", &vars(&["x", "y"])).unwrap();
        let q = propagate(&e, &f).unwrap();
        assert_eq!(gamma(&q, &q, &f).unwrap(), 2.0);

        // F = V1 * V2 at (2,3) with diag(0.01, 0.04): 9*0.01 + 4*0.04
        let s = ErrorStructure::diag(&["x", "y"], &[0.01, 0.04]).unwrap();
        let f = s.base_frame(&[2.0, 3.0]).unwrap();
        let e = parse("x*y", &vars(&["x", "y"])).unwrap();
        let q = propagate(&e, &f).unwrap();
        assert!((gamma(&q, &q, &f).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn carre_identity_hand_case() {
        // e = x^2 on a unit base frame at x=1:
        // L(x^4) = 6, 2 F LF = 2, gamma = 4, residual 0
        let s = ErrorStructure::diag(&["x"], &[1.0]).unwrap();
        let f = s.base_frame(&[1.0]).unwrap();
        let e = parse("x^2", &vars(&["x"])).unwrap();
        let r = verify_carre_identity(&e, &f).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn carre_identity_constant() {
        let s = ErrorStructure::diag(&["x"], &[1.0]).unwrap();
        let f = s.base_frame(&[0.5]).unwrap();
        let e = parse("3.5 + x*0", &vars(&["x"])).unwrap();
        assert_eq!(verify_carre_identity(&e, &f).unwrap(), 0.0);
    }

    #[test]
    fn pushforward_identity_keeps_frame() {
        let s = ErrorStructure::diag(&["x", "y"], &[0.5, 2.0]).unwrap();
        let f = s.base_frame(&[1.0, 2.0]).unwrap();
        let maps = [
            parse("x", &vars(&["x", "y"])).unwrap(),
            parse("y", &vars(&["x", "y"])).unwrap(),
        ];
        let p = pushforward(&maps, &f).unwrap();
        assert_eq!(p.frame.point, f.point);
        assert_eq!(p.frame.gamma, f.gamma);
        assert_eq!(p.frame.bias, f.bias);
        assert_eq!(p.psd_clip, 0.0);
    }

    #[test]
    fn pushforward_shear_gives_jacobian_covariance() {
        // u = (x + y, y) on unit diag at (0,0): gamma' = [[2,1],[1,1]]
        let s = ErrorStructure::diag(&["x", "y"], &[1.0, 1.0]).unwrap();
        let f = s.base_frame(&[0.0, 0.0]).unwrap();
        let maps = [
            parse("x + y", &vars(&["x", "y"])).unwrap(),
            parse("y", &vars(&["x", "y"])).unwrap(),
        ];
        let p = pushforward(&maps, &f).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        assert_eq!(p.frame.gamma, expect);
        assert_eq!(p.frame.bias, DVector::zeros(2));
    }

    #[test]
    fn naive_chain_inflates_round_trip() {
        // shear then its inverse: first coordinate error 3 instead of 1
        let s = ErrorStructure::diag(&["x", "y"], &[1.0, 1.0]).unwrap();
        let v = vars(&["x", "y"]);
        let stages = vec![
            vec![parse("x + y", &v).unwrap(), parse("y", &v).unwrap()],
            vec![parse("x - y", &v).unwrap(), parse("y", &v).unwrap()],
        ];
        let errors = propagate_naive(&stages, &s, &[0.0, 0.0]).unwrap();
        assert_eq!(errors[0], 3.0);
        assert_eq!(errors[1], 1.0);
    }

    #[test]
    fn naive_single_linear_stage_matches_definition() {
        let s = ErrorStructure::diag(&["x", "y"], &[4.0, 9.0]).unwrap();
        let v = vars(&["x", "y"]);
        let stages = vec![vec![
            parse("2*x + y", &v).unwrap(),
            parse("0.5*y", &v).unwrap(),
        ]];
        let errors = propagate_naive(&stages, &s, &[1.0, 1.0]).unwrap();
        // |J| sigma with sigma = (2, 3)
        assert_eq!(errors[0], 2.0 * 2.0 + 1.0 * 3.0);
        assert_eq!(errors[1], 0.5 * 3.0);
    }

    #[test]
    fn coherent_round_trip_recovers_base() {
        let s = ErrorStructure::diag(&["x", "y"], &[1.0, 1.0]).unwrap();
        let f = s.base_frame(&[0.0, 0.0]).unwrap();
        let v = vars(&["x", "y"]);
        let forward = [parse("x + y", &v).unwrap(), parse("y", &v).unwrap()];
        let back = [parse("x - y", &v).unwrap(), parse("y", &v).unwrap()];
        let mid = pushforward(&forward, &f).unwrap();
        let end = pushforward(&back, &mid.frame).unwrap();
        for k in 0..2 {
            for l in 0..2 {
                let want = if k == l { 1.0 } else { 0.0 };
                assert!((end.frame.gamma[(k, l)] - want).abs() < 1e-12);
            }
        }
    }
}

//! Finite-dimensional error structures.
//!
//! An [`ErrorStructure`] is the desk-scale version of the term
//! (Ω, 𝒜, ℙ, 𝔻, Γ): an ordered list of coordinate names, a covariance
//! field σᵢⱼ evaluated pointwise, and a base law used for expectations
//! and sampling. A [`Frame`] is the evaluation context the propagation
//! engine works in: a base point, the Γ-matrix of the current
//! coordinates, and their bias vector.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{eval_value, parse, Expr, MAX_VARS};
use crate::rng::chunked_generate;

/// Eigenvalues above `-PSD_TOL` are treated as rounding noise and
/// clipped to zero; anything below is a genuine violation.
pub const PSD_TOL: f64 = 1e-10;

/// JSON description of a structure, the on-disk configuration format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureConfig {
    pub vars: Vec<String>,
    pub sigma: SigmaConfig,
    pub law: LawConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SigmaConfig {
    /// Constant diagonal: `values[i]` is the variance of coordinate i.
    Diag { values: Vec<f64> },
    /// Constant full matrix, given row by row.
    Full { matrix: Vec<Vec<f64>> },
    /// Expression-valued field: `upper[i][j]` is σ_{i,i+j} as an
    /// expression in the base variables; the lower triangle is mirrored.
    Exprs { upper: Vec<Vec<String>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LawConfig {
    /// Independent uniforms on per-coordinate intervals.
    Uniform { bounds: Vec<(f64, f64)> },
    /// Independent Gaussians, per-coordinate (mean, sd).
    Gauss { params: Vec<(f64, f64)> },
    /// Deterministic composite-midpoint grid on [lo, hi]; 1-d only.
    Grid { lo: f64, hi: f64, points: usize },
}

#[derive(Debug, Clone)]
enum CompiledSigma {
    Diag(DVector<f64>),
    Full(DMatrix<f64>),
    /// Upper triangle in row-major order: (i, j, expr) with j >= i.
    Exprs(Vec<(usize, usize, Expr)>),
}

#[derive(Debug, Clone)]
pub struct ErrorStructure {
    config: StructureConfig,
    sigma: CompiledSigma,
}

impl ErrorStructure {
    pub fn from_config(config: StructureConfig) -> Result<Self> {
        let n = config.vars.len();
        if n == 0 || n > MAX_VARS {
            return Err(Error::Precondition(format!(
                "dimension must be between 1 and {MAX_VARS}, got {n}"
            )));
        }
        for (i, name) in config.vars.iter().enumerate() {
            if config.vars[..i].contains(name) {
                return Err(Error::Precondition(format!("duplicate variable `{name}`")));
            }
        }
        let sigma = match &config.sigma {
            SigmaConfig::Diag { values } => {
                if values.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: values.len(),
                    });
                }
                if let Some(v) = values.iter().find(|v| **v < 0.0 || !v.is_finite()) {
                    return Err(Error::Precondition(format!(
                        "diagonal variance {v} is not a nonnegative real"
                    )));
                }
                CompiledSigma::Diag(DVector::from_row_slice(values))
            }
            SigmaConfig::Full { matrix } => {
                if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
                    return Err(Error::Dimension {
                        expected: n,
                        got: matrix.len(),
                    });
                }
                let m = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
                if m != m.transpose() {
                    return Err(Error::Precondition(
                        "full covariance matrix must be symmetric".into(),
                    ));
                }
                CompiledSigma::Full(m)
            }
            SigmaConfig::Exprs { upper } => {
                if upper.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: upper.len(),
                    });
                }
                let mut entries = Vec::new();
                for (i, row) in upper.iter().enumerate() {
                    if row.len() != n - i {
                        return Err(Error::Precondition(format!(
                            "expression row {i} must have {} entries, got {}",
                            n - i,
                            row.len()
                        )));
                    }
                    for (off, text) in row.iter().enumerate() {
                        entries.push((i, i + off, parse(text, &config.vars)?));
                    }
                }
                CompiledSigma::Exprs(entries)
            }
        };
        match &config.law {
            LawConfig::Uniform { bounds } => {
                if bounds.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: bounds.len(),
                    });
                }
                if bounds.iter().any(|(a, b)| !(a < b)) {
                    return Err(Error::Precondition(
                        "uniform bounds must satisfy a < b".into(),
                    ));
                }
            }
            LawConfig::Gauss { params } => {
                if params.len() != n {
                    return Err(Error::Dimension {
                        expected: n,
                        got: params.len(),
                    });
                }
                if params.iter().any(|(m, sd)| !m.is_finite() || *sd < 0.0) {
                    return Err(Error::Precondition(
                        "gaussian parameters must be finite with sd >= 0".into(),
                    ));
                }
            }
            LawConfig::Grid { lo, hi, points } => {
                if n != 1 {
                    return Err(Error::Precondition(format!(
                        "grid law requires dimension 1, structure has {n}"
                    )));
                }
                if !(lo < hi) || *points == 0 {
                    return Err(Error::Precondition(
                        "grid law requires lo < hi and points >= 1".into(),
                    ));
                }
            }
        }
        Ok(ErrorStructure { config, sigma })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: StructureConfig = serde_json::from_str(text)
            .map_err(|e| Error::Precondition(format!("invalid structure config: {e}")))?;
        Self::from_config(config)
    }

    /// Constant-diagonal structure with a Gaussian(0, 1) base law per
    /// coordinate; the common shorthand.
    pub fn diag(names: &[&str], variances: &[f64]) -> Result<Self> {
        Self::from_config(StructureConfig {
            vars: names.iter().map(|s| s.to_string()).collect(),
            sigma: SigmaConfig::Diag {
                values: variances.to_vec(),
            },
            law: LawConfig::Gauss {
                params: names.iter().map(|_| (0.0, 1.0)).collect(),
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.config.vars.len()
    }

    pub fn names(&self) -> &[String] {
        &self.config.vars
    }

    pub fn config(&self) -> &StructureConfig {
        &self.config
    }

    pub fn law(&self) -> &LawConfig {
        &self.config.law
    }

    /// Covariance matrix of the coordinate errors at `point`:
    /// symmetric, PSD after clipping rounding-level negative eigenvalues.
    pub fn sigma_at(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if point.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: point.len(),
            });
        }
        match &self.sigma {
            CompiledSigma::Diag(d) => Ok(DMatrix::from_diagonal(d)),
            CompiledSigma::Full(m) => {
                let (clipped, _) = clip_psd(m.clone(), Some(PSD_TOL))?;
                Ok(clipped)
            }
            CompiledSigma::Exprs(entries) => {
                let mut m = DMatrix::zeros(n, n);
                for (i, j, e) in entries {
                    let v = eval_value(e, point)?;
                    m[(*i, *j)] = v;
                    m[(*j, *i)] = v;
                }
                let (clipped, _) = clip_psd(m, Some(PSD_TOL))?;
                Ok(clipped)
            }
        }
    }

    /// Frame at `point` with Γ = σ(point) and zero bias: coordinates are
    /// linear, so L annihilates them.
    pub fn base_frame(&self, point: &[f64]) -> Result<Frame> {
        let gamma = self.sigma_at(point)?;
        Ok(Frame {
            point: DVector::from_row_slice(point),
            gamma,
            bias: DVector::zeros(self.dim()),
        })
    }

    /// Draw `count` points from the base law. Deterministic in
    /// (seed, count); chunked so the output is identical for any worker
    /// count. Grid laws do not sample.
    pub fn sample_base(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        let n = self.dim();
        match self.law().clone() {
            LawConfig::Uniform { bounds } => Ok(chunked_generate(count, seed, |rng, range| {
                range
                    .map(|_| {
                        DVector::from_iterator(
                            n,
                            bounds.iter().map(|(a, b)| a + (b - a) * rng.random::<f64>()),
                        )
                    })
                    .collect()
            })),
            LawConfig::Gauss { params } => Ok(chunked_generate(count, seed, |rng, range| {
                range
                    .map(|_| {
                        DVector::from_iterator(
                            n,
                            params.iter().map(|(mean, sd)| {
                                let z: f64 = StandardNormal.sample(rng);
                                mean + sd * z
                            }),
                        )
                    })
                    .collect()
            })),
            LawConfig::Grid { .. } => Err(Error::UnsupportedSampling),
        }
    }

    /// Midpoints of the composite quadrature grid, for the grid law.
    pub fn grid_points(&self) -> Result<Vec<f64>> {
        match self.law() {
            LawConfig::Grid { lo, hi, points } => {
                let h = (hi - lo) / *points as f64;
                Ok((0..*points).map(|i| lo + (i as f64 + 0.5) * h).collect())
            }
            _ => Err(Error::Precondition(
                "quadrature grid requested for a sampling law".into(),
            )),
        }
    }
}

/// Evaluation context carried through composition stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub point: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Frame {
    pub fn new(point: DVector<f64>, gamma: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        let m = point.len();
        if gamma.nrows() != m || gamma.ncols() != m {
            return Err(Error::Dimension {
                expected: m,
                got: gamma.nrows(),
            });
        }
        if bias.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: bias.len(),
            });
        }
        if point.iter().chain(gamma.iter()).chain(bias.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Precondition("frame entries must be finite".into()));
        }
        if gamma != gamma.transpose() {
            return Err(Error::Precondition("frame gamma must be symmetric".into()));
        }
        Ok(Frame { point, gamma, bias })
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }
}

/// Symmetrize `m`, then clip negative eigenvalues to zero.
///
/// With `tol = Some(t)`, an eigenvalue below `-t` is an error. Returns
/// the clipped matrix (exactly symmetric) and the magnitude clipped
/// away, i.e. the sum of |negative eigenvalues|.
pub fn clip_psd(m: DMatrix<f64>, tol: Option<f64>) -> Result<(DMatrix<f64>, f64)> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if let Some(t) = tol {
        if min < -t {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
    }
    if min >= 0.0 {
        return Ok((sym, 0.0));
    }
    let mut clipped_amount = 0.0;
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < 0.0 {
            clipped_amount += -*v;
            *v = 0.0;
        }
    }
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let sym = (&rebuilt + rebuilt.transpose()) * 0.5;
    Ok((sym, clipped_amount))
}

/// Symmetric PSD square root via eigendecomposition. Negative rounding
/// eigenvalues are floored at zero, so this works on clipped singular
/// matrices where a Cholesky factorization would fail.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| if v > 0.0 { v.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

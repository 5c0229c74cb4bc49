//! Error calculus with Dirichlet forms on finite-dimensional error
//! structures: symbolic expressions with second-order automatic
//! differentiation, carré du champ propagation and pushforward,
//! Monte-Carlo oracles, extension of the calculus by limits, and a
//! small laboratory for binary sequences.

pub mod error;
pub mod expr;
pub mod oracle;
pub mod propagate;
pub mod rng;
pub mod sequence;
pub mod structure;

pub use error::{Error, Result};
pub use expr::{eval2, eval_grad, eval_value, parse, BinaryOp, Eval2, Expr, UnaryOp, MAX_VARS};
pub use oracle::{
    decide_cauchy, dirichlet_energy, extend_by_limit, extend_from_increments, mc_bias, mc_gamma,
    CauchyDecision, LimitReport, OracleEstimate,
};
pub use propagate::{
    gamma, propagate, propagate_naive, pushforward, verify_carre_identity, Pushforward, Quantity,
};
pub use rng::{chunk_rng, chunked_generate, kahan_sum, with_workers, KahanSum, CHUNK_SIZE};
pub use sequence::{
    block_frequencies, champernowne_bits, lil_statistic, martingale_capital, martingale_ensemble,
    normality_report, prng_bits, select_subsequence, BettingStrategy, BitSequence, SelectionRule,
};
pub use structure::{clip_psd, psd_sqrt, ErrorStructure, Frame, LawConfig, SigmaConfig, StructureConfig};

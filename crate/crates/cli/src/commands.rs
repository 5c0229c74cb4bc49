//! Implementations of the errlab subcommands.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use errlab::sequence::{self, BettingStrategy, BitSequence, Provenance, SelectionRule};
use errlab::{
    dirichlet_energy, extend_from_increments, gamma, mc_bias, mc_gamma, propagate,
    propagate_naive, pushforward, ErrorStructure, Expr,
};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::report::Report;

pub enum CliError {
    Core(errlab::Error),
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => {
                if e.is_usage() {
                    2
                } else {
                    3
                }
            }
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<errlab::Error> for CliError {
    fn from(e: errlab::Error) -> Self {
        CliError::Core(e)
    }
}

type CmdResult = Result<Report, CliError>;

/// Shared context: global flags echoed into every report.
pub struct Ctx {
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Ctx {
    /// Run `f` under the configured worker count (if any). Results are
    /// worker-count independent by the chunked stream contract; the
    /// flag only controls parallelism.
    fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match self.workers {
            Some(n) => errlab::with_workers(n, f),
            None => f(),
        }
    }

    fn base_config(&self) -> Value {
        json!({ "seed": self.seed, "workers": self.workers })
    }
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        for (k, v) in e {
            b.insert(k, v);
        }
    }
    base
}

// ------------------------------------------------------------- structures

pub fn read_to_string_usage(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Resolve `--structure file` or the `--sigma diag:... --vars ...`
/// shorthand into a structure plus its echoed JSON config.
pub fn resolve_structure(
    structure: Option<&PathBuf>,
    sigma: Option<&str>,
    vars: Option<&str>,
) -> Result<(ErrorStructure, Value), CliError> {
    match (structure, sigma) {
        (Some(path), None) => {
            let text = read_to_string_usage(path)?;
            let s = ErrorStructure::from_json(&text)?;
            let echoed = serde_json::to_value(s.config()).expect("config serializes");
            Ok((s, echoed))
        }
        (None, Some(spec)) => {
            let values = spec.strip_prefix("diag:").ok_or_else(|| {
                CliError::Usage(format!(
                    "--sigma only supports the diag:a,b,... shorthand, got `{spec}`"
                ))
            })?;
            let variances = parse_reals(values)?;
            let names: Vec<&str> = vars
                .ok_or_else(|| CliError::Usage("--sigma requires --vars".into()))?
                .split(',')
                .map(str::trim)
                .collect();
            if names.len() != variances.len() {
                return Err(CliError::Usage(format!(
                    "--vars lists {} names but --sigma lists {} variances",
                    names.len(),
                    variances.len()
                )));
            }
            let s = ErrorStructure::diag(&names, &variances)?;
            let echoed = serde_json::to_value(s.config()).expect("config serializes");
            Ok((s, echoed))
        }
        (None, None) => Err(CliError::Usage(
            "either --structure or --sigma is required".into(),
        )),
        (Some(_), Some(_)) => Err(CliError::Usage(
            "--structure and --sigma are mutually exclusive".into(),
        )),
    }
}

pub fn parse_reals(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("invalid number `{}`", t.trim())))
        })
        .collect()
}

fn parse_expr(text: &str, s: &ErrorStructure) -> Result<Expr, CliError> {
    Ok(errlab::parse(text, s.names())?)
}

// --------------------------------------------------------------- commands

pub fn cmd_propagate(
    ctx: &Ctx,
    expr: &str,
    point_text: &str,
    structure: Option<&PathBuf>,
    sigma: Option<&str>,
    vars: Option<&str>,
) -> CmdResult {
    let (s, structure_echo) = resolve_structure(structure, sigma, vars)?;
    let e = parse_expr(expr, &s)?;
    let point = parse_reals(point_text)?;
    let frame = s.base_frame(&point)?;
    let q = propagate(&e, &frame)?;
    let g = gamma(&q, &q, &frame)?;
    let mut warnings = Vec::new();
    if q.nondifferentiable {
        warnings.push(
            "expression is non-differentiable at the evaluation point; subgradient 0 used"
                .to_string(),
        );
    }
    let config = merge(
        ctx.base_config(),
        json!({ "expr": expr, "point": point, "structure": structure_echo }),
    );
    let results = json!({
        "value": q.value,
        "gradient": q.gradient.as_slice(),
        "gamma": g,
        "sqrt_gamma": g.max(0.0).sqrt(),
        "bias": q.bias,
        "nondifferentiable": q.nondifferentiable,
    });
    Ok(Report::new("propagate", config, results, warnings))
}

/// Taylor-remainder constant in the oracle agreement bound
/// |mc − engine| ≤ 3·SE + C·ε·scale.
const AGREEMENT_C: f64 = 10.0;

pub fn cmd_oracle(
    ctx: &Ctx,
    expr: &str,
    point_text: &str,
    epsilon_gamma: f64,
    epsilon_bias: f64,
    samples: usize,
    structure: Option<&PathBuf>,
    sigma: Option<&str>,
    vars: Option<&str>,
) -> CmdResult {
    let (s, structure_echo) = resolve_structure(structure, sigma, vars)?;
    let e = parse_expr(expr, &s)?;
    let point = parse_reals(point_text)?;
    let frame = s.base_frame(&point)?;
    let q = propagate(&e, &frame)?;
    let engine_gamma = gamma(&q, &q, &frame)?;
    let (mc_g, mc_b) = ctx.with_pool(|| {
        let g = mc_gamma(&e, &s, &point, epsilon_gamma, samples, ctx.seed);
        let b = mc_bias(&e, &s, &point, epsilon_bias, samples, ctx.seed);
        (g, b)
    });
    let mc_g = mc_g?;
    let mc_b = mc_b?;

    let noise_floor = 1e-20 * (1.0 + q.value * q.value);
    let gamma_bound =
        3.0 * mc_g.std_error + AGREEMENT_C * epsilon_gamma * engine_gamma.abs() + noise_floor;
    let gamma_agrees = (mc_g.estimate - engine_gamma).abs() <= gamma_bound;
    let bias_scale = q.bias.abs().max(1.0);
    let bias_bound = 3.0 * mc_b.std_error + AGREEMENT_C * epsilon_bias * bias_scale;
    let bias_agrees = (mc_b.estimate - q.bias).abs() <= bias_bound;

    let mut warnings = Vec::new();
    if !gamma_agrees {
        warnings.push("mc_gamma disagrees with the engine beyond the bound".to_string());
    }
    if !bias_agrees {
        warnings.push("mc_bias disagrees with the engine beyond the bound".to_string());
    }
    if q.nondifferentiable {
        warnings.push("expression is non-differentiable at the evaluation point".to_string());
    }

    let config = merge(
        ctx.base_config(),
        json!({
            "expr": expr,
            "point": point,
            "structure": structure_echo,
            "epsilon_gamma": epsilon_gamma,
            "epsilon_bias": epsilon_bias,
            "samples": samples,
            "chunk_size": errlab::CHUNK_SIZE,
        }),
    );
    let results = json!({
        "engine": { "value": q.value, "gamma": engine_gamma, "bias": q.bias },
        "mc_gamma": mc_g,
        "mc_bias": mc_b,
        "gamma_agreement": { "agrees": gamma_agrees, "bound": gamma_bound,
                             "abs_difference": (mc_g.estimate - engine_gamma).abs() },
        "bias_agreement": { "agrees": bias_agrees, "bound": bias_bound,
                            "abs_difference": (mc_b.estimate - q.bias).abs() },
    });
    Ok(Report::new("oracle", config, results, warnings))
}

pub fn cmd_coherence_demo(ctx: &Ctx) -> CmdResult {
    let s = ErrorStructure::diag(&["x", "y"], &[1.0, 1.0])?;
    let names: Vec<String> = s.names().to_vec();
    let fwd = [
        errlab::parse("x + y", &names)?,
        errlab::parse("y", &names)?,
    ];
    let back = [
        errlab::parse("x - y", &names)?,
        errlab::parse("y", &names)?,
    ];
    let frame = s.base_frame(&[0.0, 0.0])?;
    let mid = pushforward(&fwd, &frame)?;
    let end = pushforward(&back, &mid.frame)?;
    let gamma_rows = |m: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    let max_dev = (0..2)
        .flat_map(|k| (0..2).map(move |l| (k, l)))
        .map(|(k, l)| {
            let want = if k == l { 1.0 } else { 0.0 };
            (end.frame.gamma[(k, l)] - want).abs()
        })
        .fold(0.0f64, f64::max);

    let stages = vec![fwd.to_vec(), back.to_vec()];
    let naive = propagate_naive(&stages, &s, &[0.0, 0.0])?;
    let naive_first_stage = propagate_naive(&stages[..1], &s, &[0.0, 0.0])?;

    let config = merge(ctx.base_config(), json!({}));
    let results = json!({
        "maps": { "forward": ["x + y", "y"], "backward": ["x - y", "y"] },
        "coherent": {
            "intermediate_gamma": gamma_rows(&mid.frame.gamma),
            "final_gamma": gamma_rows(&end.frame.gamma),
            "max_abs_deviation_from_identity": max_dev,
        },
        "naive": {
            "initial_errors": [1.0, 1.0],
            "after_forward": naive_first_stage.as_slice(),
            "after_round_trip": naive.as_slice(),
        },
    });
    Ok(Report::new("coherence-demo", config, results, Vec::new()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitSpec {
    #[serde(default)]
    exprs: Option<Vec<String>>,
    #[serde(default)]
    family: Option<FamilySpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilySpec {
    /// Summand expression in the structure variables plus `param`;
    /// F_N is the partial sum of terms param = 1..N.
    term: String,
    param: String,
    count: usize,
}

pub fn cmd_limit(ctx: &Ctx, spec_path: &Path, structure_path: &Path, count: usize) -> CmdResult {
    let spec_text = read_to_string_usage(spec_path)?;
    let spec: LimitSpec = serde_json::from_str(&spec_text)
        .map_err(|e| CliError::Usage(format!("invalid limit spec: {e}")))?;
    let structure_text = read_to_string_usage(structure_path)?;
    let s = ErrorStructure::from_json(&structure_text)?;
    let spec_echo: Value = serde_json::from_str(&spec_text).expect("parsed once already");

    let (first, increments) = match (&spec.exprs, &spec.family) {
        (Some(texts), None) => {
            if texts.len() < 4 {
                return Err(CliError::Usage(format!(
                    "limit passage needs at least 4 expressions, got {}",
                    texts.len()
                )));
            }
            let exprs: Vec<Expr> = texts
                .iter()
                .map(|t| parse_expr(t, &s))
                .collect::<Result<_, _>>()?;
            let increments = exprs
                .windows(2)
                .map(|w| Expr::sub(w[1].clone(), w[0].clone()))
                .collect();
            (exprs[0].clone(), increments)
        }
        (None, Some(family)) => {
            if family.count < 4 {
                return Err(CliError::Usage(format!(
                    "limit passage needs at least 4 terms, got {}",
                    family.count
                )));
            }
            let mut names: Vec<String> = s.names().to_vec();
            if names.contains(&family.param) {
                return Err(CliError::Usage(format!(
                    "family parameter `{}` collides with a structure variable",
                    family.param
                )));
            }
            names.push(family.param.clone());
            let term = errlab::parse(&family.term, &names)?;
            let param_index = names.len() - 1;
            let terms: Vec<Expr> = (1..=family.count)
                .map(|k| term.substitute_const(param_index, k as f64))
                .collect();
            (terms[0].clone(), terms[1..].to_vec())
        }
        _ => {
            return Err(CliError::Usage(
                "limit spec must contain exactly one of `exprs` or `family`".into(),
            ))
        }
    };

    let report = ctx.with_pool(|| extend_from_increments(&first, &increments, &s, count, ctx.seed))?;
    let energy_first = dirichlet_energy(&first, &s, count, ctx.seed)?;

    let structure_echo = serde_json::to_value(s.config()).expect("config serializes");
    let config = merge(
        ctx.base_config(),
        json!({ "spec": spec_echo, "structure": structure_echo, "count": count }),
    );
    let results = merge(
        serde_json::to_value(&report).expect("limit report serializes"),
        json!({ "energy_of_first_term": energy_first }),
    );
    Ok(Report::new("limit", config, results, Vec::new()))
}

// ------------------------------------------------------------- sequences

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SeqFormat {
    Ascii,
    Packed,
}

impl SeqFormat {
    fn as_str(self) -> &'static str {
        match self {
            SeqFormat::Ascii => "ascii",
            SeqFormat::Packed => "packed",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GenKind {
    Champernowne,
    Prng,
}

fn write_sequence(seq: &BitSequence, path: &Path, format: SeqFormat) -> Result<(), CliError> {
    let result = match format {
        SeqFormat::Ascii => fs::write(path, seq.to_ascii() + "\n"),
        SeqFormat::Packed => fs::write(path, seq.to_packed()),
    };
    result.map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_sequence(path: &Path, format: SeqFormat) -> Result<BitSequence, CliError> {
    let provenance = Provenance {
        generator: "file".into(),
        parameters: format!("path={}, format={}", path.display(), format.as_str()),
        seed: None,
    };
    let seq = match format {
        SeqFormat::Ascii => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
            BitSequence::from_ascii(&text, provenance)
        }
        SeqFormat::Packed => {
            let bytes = fs::read(path)
                .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
            BitSequence::from_packed(&bytes, provenance)
        }
    };
    // a malformed sequence file is a runtime data error, not bad usage
    seq.map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn cmd_sequence_generate(
    ctx: &Ctx,
    kind: GenKind,
    count: usize,
    out: &Path,
    format: SeqFormat,
) -> CmdResult {
    let seq = match kind {
        GenKind::Champernowne => sequence::champernowne_bits(count)?,
        GenKind::Prng => ctx.with_pool(|| sequence::prng_bits(count, ctx.seed))?,
    };
    write_sequence(&seq, out, format)?;
    let kind_name = match kind {
        GenKind::Champernowne => "champernowne",
        GenKind::Prng => "prng",
    };
    let config = merge(
        ctx.base_config(),
        json!({ "kind": kind_name, "count": count, "format": format.as_str(),
                "out": out.display().to_string() }),
    );
    let results = json!({
        "length": seq.len(),
        "mean": seq.mean(),
        "provenance": seq.provenance,
    });
    Ok(Report::new("sequence-generate", config, results, Vec::new()))
}

pub fn cmd_sequence_analyze(
    ctx: &Ctx,
    input: &Path,
    format: SeqFormat,
    kmax: usize,
    lil_n0: usize,
) -> CmdResult {
    let seq = read_sequence(input, format)?;
    let normality = sequence::normality_report(&seq, kmax)?;
    let lil = if seq.len() >= lil_n0 && lil_n0 >= 10 {
        Some(sequence::lil_statistic(&seq, lil_n0)?)
    } else {
        None
    };
    let mut warnings: Vec<String> = normality
        .rows
        .iter()
        .filter(|r| r.low_power)
        .map(|r| {
            format!(
                "block length {} has low power at sequence length {} (need {})",
                r.k,
                seq.len(),
                (1usize << r.k) * 10
            )
        })
        .collect();
    if lil.is_none() {
        warnings.push(format!(
            "lil statistic skipped: need len >= n0 >= 10 (len {}, n0 {lil_n0})",
            seq.len()
        ));
    }
    let config = merge(
        ctx.base_config(),
        json!({ "in": input.display().to_string(), "format": format.as_str(),
                "kmax": kmax, "lil_n0": lil_n0 }),
    );
    let results = json!({
        "length": seq.len(),
        "mean": seq.mean(),
        "normality": serde_json::to_value(&normality).expect("normality serializes"),
        "lil_statistic": lil,
        "chi_square_note": "approximate: sliding windows overlap",
    });
    Ok(Report::new("sequence-analyze", config, results, warnings))
}

pub fn cmd_sequence_select(
    ctx: &Ctx,
    input: &Path,
    format: SeqFormat,
    rule_path: &Path,
    out: Option<&PathBuf>,
) -> CmdResult {
    let rule_text = read_to_string_usage(rule_path)?;
    let rule = SelectionRule::from_json(&rule_text)?;
    let seq = read_sequence(input, format)?;
    let selected = sequence::select_subsequence(&seq, &rule)?;
    if let Some(path) = out {
        write_sequence(&selected, path, format)?;
    }
    let config = merge(
        ctx.base_config(),
        json!({ "in": input.display().to_string(), "format": format.as_str(),
                "rule": serde_json::from_str::<Value>(&rule_text).expect("validated above"),
                "out": out.map(|p| p.display().to_string()) }),
    );
    let m = selected.len();
    let results = json!({
        "input_length": seq.len(),
        "selected_length": m,
        "selected_mean": selected.mean(),
        "clt_bound": 4.0 / (2.0 * (m as f64).sqrt()),
    });
    Ok(Report::new("sequence-select", config, results, Vec::new()))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sequence_bet(
    ctx: &Ctx,
    input: Option<&PathBuf>,
    format: SeqFormat,
    strategy_path: &Path,
    initial: f64,
    ensemble: bool,
    sequences: usize,
    length: usize,
) -> CmdResult {
    let strategy_text = read_to_string_usage(strategy_path)?;
    let strategy = BettingStrategy::from_json(&strategy_text)?;
    let strategy_echo: Value = serde_json::from_str(&strategy_text).expect("validated above");

    if ensemble {
        let result = ctx.with_pool(|| {
            sequence::martingale_ensemble(&strategy, sequences, length, initial, ctx.seed)
        })?;
        let config = merge(
            ctx.base_config(),
            json!({ "strategy": strategy_echo, "initial": initial, "ensemble": true,
                    "sequences": sequences, "length": length }),
        );
        let results = serde_json::to_value(&result).expect("ensemble serializes");
        return Ok(Report::new("sequence-bet", config, results, Vec::new()));
    }

    let input = input.ok_or_else(|| {
        CliError::Usage("--in is required unless --ensemble is given".into())
    })?;
    let seq = read_sequence(input, format)?;
    let trajectory = sequence::martingale_capital(&seq, &strategy, initial)?;
    let final_capital = *trajectory.last().expect("trajectory nonempty");
    let min = trajectory.iter().copied().fold(f64::INFINITY, f64::min);
    let max = trajectory.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let config = merge(
        ctx.base_config(),
        json!({ "in": input.display().to_string(), "format": format.as_str(),
                "strategy": strategy_echo, "initial": initial, "ensemble": false }),
    );
    // full trajectories only for short runs; reports stay desk-sized
    let trajectory_echo = if trajectory.len() <= 1001 {
        Some(&trajectory[..])
    } else {
        None
    };
    let results = json!({
        "length": seq.len(),
        "initial_capital": initial,
        "final_capital": final_capital,
        "min_capital": min,
        "max_capital": max,
        "trajectory": trajectory_echo,
    });
    Ok(Report::new("sequence-bet", config, results, Vec::new()))
}

//! `errlab` — Gauss error propagation, Dirichlet-form error structures,
//! and the binary-sequence laboratory, as reproducible CLI experiments.
//!
//! Every command emits a `report-v1` JSON document on stdout. All
//! randomness flows from `--seed` (default 0, never wall-clock), so any
//! report can be reproduced bit-exactly from its echoed configuration,
//! regardless of `--workers`.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 runtime domain error.

mod commands;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{Ctx, GenKind, SeqFormat};

#[derive(Parser)]
#[command(name = "errlab", version, about = "Error calculus with Dirichlet forms")]
struct Cli {
    /// Master seed for all randomness.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for parallel sampling (default: all cores).
    /// Results never depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Print flattened CSV of the results section instead of JSON.
    #[arg(long, global = true)]
    csv: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StructureArgs {
    /// Structure config JSON file.
    #[arg(long)]
    structure: Option<PathBuf>,

    /// Constant-diagonal shorthand, e.g. `diag:0.01,0.04` (needs --vars).
    #[arg(long)]
    sigma: Option<String>,

    /// Comma-separated variable names for --sigma.
    #[arg(long)]
    vars: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate value, gradient, quadratic error Γ and bias through an expression.
    Propagate {
        /// Expression over the structure variables.
        #[arg(long)]
        expr: String,
        /// Evaluation point, comma-separated.
        #[arg(long)]
        point: String,
        #[command(flatten)]
        structure: StructureArgs,
    },
    /// Run the Monte Carlo Γ and bias oracles side by side with the engine.
    Oracle {
        #[arg(long)]
        expr: String,
        #[arg(long)]
        point: String,
        /// Perturbation scale for the Γ oracle.
        #[arg(long, default_value_t = errlab::oracle::DEFAULT_EPSILON_GAMMA)]
        epsilon_gamma: f64,
        /// Perturbation scale for the bias oracle.
        #[arg(long, default_value_t = errlab::oracle::DEFAULT_EPSILON_BIAS)]
        epsilon_bias: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[command(flatten)]
        structure: StructureArgs,
    },
    /// Built-in shear round trip: coherent engine vs the naive chain rule.
    CoherenceDemo,
    /// Limit passage: decide Cauchy-in-𝔻 for an expression sequence.
    Limit {
        /// JSON spec: {"exprs":[...]} or
        /// {"family":{"term":"sin(k*pi*x)/k^2","param":"k","count":200}}.
        #[arg(long)]
        spec: PathBuf,
        /// Structure config JSON file.
        #[arg(long)]
        structure: PathBuf,
        /// Monte Carlo base-point count for sampling laws (grid laws are
        /// deterministic and ignore this).
        #[arg(long, default_value_t = 10_000)]
        count: usize,
    },
    /// Binary-sequence laboratory.
    #[command(subcommand)]
    Sequence(SequenceCmd),
}

#[derive(Subcommand)]
enum SequenceCmd {
    /// Generate a sequence file.
    Generate {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "ascii")]
        format: SeqFormat,
    },
    /// Borel-normality block statistics and fluctuation diagnostics.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "ascii")]
        format: SeqFormat,
        /// Largest block length in the normality table.
        #[arg(long, default_value_t = 8)]
        kmax: usize,
        /// Burn-in for the law-of-the-iterated-logarithm statistic.
        #[arg(long, default_value_t = 10)]
        lil_n0: usize,
    },
    /// Apply a non-anticipative selection rule.
    Select {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "ascii")]
        format: SeqFormat,
        /// Selection rule JSON file.
        #[arg(long)]
        rule: PathBuf,
        /// Optional output file for the selected subsequence.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a betting strategy: single trajectory or fair-coin ensemble.
    Bet {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ascii")]
        format: SeqFormat,
        /// Betting strategy JSON file.
        #[arg(long)]
        strategy: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        initial: f64,
        /// Run the PRNG ensemble experiment instead of a single file.
        #[arg(long)]
        ensemble: bool,
        #[arg(long, default_value_t = 10_000)]
        sequences: usize,
        #[arg(long, default_value_t = 1_000)]
        length: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    let ctx = Ctx {
        seed: cli.seed,
        workers: cli.workers,
    };
    let result = match &cli.command {
        Command::Propagate {
            expr,
            point,
            structure,
        } => commands::cmd_propagate(
            &ctx,
            expr,
            point,
            structure.structure.as_ref(),
            structure.sigma.as_deref(),
            structure.vars.as_deref(),
        ),
        Command::Oracle {
            expr,
            point,
            epsilon_gamma,
            epsilon_bias,
            samples,
            structure,
        } => commands::cmd_oracle(
            &ctx,
            expr,
            point,
            *epsilon_gamma,
            *epsilon_bias,
            *samples,
            structure.structure.as_ref(),
            structure.sigma.as_deref(),
            structure.vars.as_deref(),
        ),
        Command::CoherenceDemo => commands::cmd_coherence_demo(&ctx),
        Command::Limit {
            spec,
            structure,
            count,
        } => commands::cmd_limit(&ctx, spec, structure, *count),
        Command::Sequence(sub) => match sub {
            SequenceCmd::Generate {
                kind,
                count,
                out,
                format,
            } => commands::cmd_sequence_generate(&ctx, *kind, *count, out, *format),
            SequenceCmd::Analyze {
                input,
                format,
                kmax,
                lil_n0,
            } => commands::cmd_sequence_analyze(&ctx, input, *format, *kmax, *lil_n0),
            SequenceCmd::Select {
                input,
                format,
                rule,
                out,
            } => commands::cmd_sequence_select(&ctx, input, *format, rule, out.as_ref()),
            SequenceCmd::Bet {
                input,
                format,
                strategy,
                initial,
                ensemble,
                sequences,
                length,
            } => commands::cmd_sequence_bet(
                &ctx,
                input.as_ref(),
                *format,
                strategy,
                *initial,
                *ensemble,
                *sequences,
                *length,
            ),
        },
    };
    match result {
        Ok(report) => print!("{}", report.render(cli.csv)),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

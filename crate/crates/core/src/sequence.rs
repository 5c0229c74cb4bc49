//! Desk-scale laboratory for binary sequences: Champernowne
//! generation, Borel-normality block statistics, non-anticipative
//! selection rules, and martingale betting tests.
//!
//! Selection rules and betting strategies are finite-state machines.
//! The machine decides (select/skip, or stake and prediction) from its
//! current state and only then consumes the bit, so non-anticipativity
//! holds by construction and rules serialize to plain JSON.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{chunk_rng, chunked_generate, kahan_sum, KahanSum};
use rand::Rng;
use rayon::prelude::*;

pub const MAX_BLOCK_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub parameters: String,
    pub seed: Option<u64>,
}

/// Finite binary string with a record of where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitSequence {
    pub bits: Vec<u8>,
    pub provenance: Provenance,
}

impl BitSequence {
    pub fn new(bits: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Precondition("bit sequence is empty".into()));
        }
        if bits.iter().any(|b| *b > 1) {
            return Err(Error::Precondition("bits must be 0 or 1".into()));
        }
        Ok(BitSequence { bits, provenance })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Fraction of ones.
    pub fn mean(&self) -> f64 {
        self.bits.iter().map(|b| *b as u64).sum::<u64>() as f64 / self.bits.len() as f64
    }

    pub fn to_ascii(&self) -> String {
        self.bits.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
    }

    /// Parse an ASCII '0'/'1' string; newlines are ignored.
    pub fn from_ascii(text: &str, provenance: Provenance) -> Result<Self> {
        let mut bits = Vec::with_capacity(text.len());
        for (i, c) in text.chars().enumerate() {
            match c {
                '0' => bits.push(0),
                '1' => bits.push(1),
                '\n' | '\r' => {}
                other => {
                    return Err(Error::Precondition(format!(
                        "invalid character `{other}` at position {i} in sequence file"
                    )))
                }
            }
        }
        Self::new(bits, provenance)
    }

    /// Pack into bytes, most significant bit first; the final byte is
    /// zero-padded.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, b) in self.bits.iter().enumerate() {
            out[i / 8] |= b << (7 - i % 8);
        }
        out
    }

    /// Unpack bytes; the length is 8 times the byte count (padding bits
    /// included).
    pub fn from_packed(bytes: &[u8], provenance: Provenance) -> Result<Self> {
        let mut bits = Vec::with_capacity(bytes.len() * 8);
        for byte in bytes {
            for shift in (0..8).rev() {
                bits.push((byte >> shift) & 1);
            }
        }
        Self::new(bits, provenance)
    }
}

/// First `count` bits of the concatenated dyadic representations of
/// 0, 1, 2, …: `0 1 10 11 100 101 110 111 …`. The sequence starts at
/// the integer 0 (the classical Champernowne constant starts at 1).
pub fn champernowne_bits(count: usize) -> Result<BitSequence> {
    if count == 0 {
        return Err(Error::Precondition("count must be at least 1".into()));
    }
    let mut bits = Vec::with_capacity(count);
    let mut n: u64 = 0;
    while bits.len() < count {
        if n == 0 {
            bits.push(0);
        } else {
            let width = 64 - n.leading_zeros();
            for shift in (0..width).rev() {
                if bits.len() == count {
                    break;
                }
                bits.push(((n >> shift) & 1) as u8);
            }
        }
        n += 1;
    }
    BitSequence::new(
        bits,
        Provenance {
            generator: "champernowne".into(),
            parameters: format!("count={count}, start=0"),
            seed: None,
        },
    )
}

/// Deterministic pseudo-random bits from the library's named generator
/// (ChaCha12, chunked streams).
pub fn prng_bits(count: usize, seed: u64) -> Result<BitSequence> {
    if count == 0 {
        return Err(Error::Precondition("count must be at least 1".into()));
    }
    let bits = chunked_generate(count, seed, |rng, range| {
        range.map(|_| rng.random::<bool>() as u8).collect()
    });
    BitSequence::new(
        bits,
        Provenance {
            generator: "chacha12".into(),
            parameters: format!("count={count}"),
            seed: Some(seed),
        },
    )
}

fn block_counts(seq: &BitSequence, k: usize) -> Result<Vec<u64>> {
    if k == 0 || k > MAX_BLOCK_LEN {
        return Err(Error::Precondition(format!(
            "block length must be in 1..={MAX_BLOCK_LEN}, got {k}"
        )));
    }
    if seq.len() < k {
        return Err(Error::Precondition(format!(
            "sequence of length {} is shorter than block length {k}",
            seq.len()
        )));
    }
    let mut counts = vec![0u64; 1 << k];
    let mask = (1usize << k) - 1;
    let mut window = 0usize;
    for (i, b) in seq.bits.iter().enumerate() {
        window = ((window << 1) | *b as usize) & mask;
        if i + 1 >= k {
            counts[window] += 1;
        }
    }
    Ok(counts)
}

/// Sliding-window frequency of every length-`k` block that occurs.
/// Keys are the block bits packed into an integer, most significant
/// bit first; frequencies sum to 1.
pub fn block_frequencies(seq: &BitSequence, k: usize) -> Result<std::collections::BTreeMap<u64, f64>> {
    let counts = block_counts(seq, k)?;
    let windows = (seq.len() - k + 1) as f64;
    Ok(counts
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0)
        .map(|(block, c)| (block as u64, *c as f64 / windows))
        .collect())
}

pub fn block_label(block: u64, k: usize) -> String {
    (0..k)
        .rev()
        .map(|shift| if (block >> shift) & 1 == 1 { '1' } else { '0' })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalityRow {
    pub k: usize,
    /// max over all 2^k blocks of |frequency − 2^{−k}| (absent blocks
    /// contribute 2^{−k}).
    pub max_abs_deviation: f64,
    /// Pearson statistic against the uniform block law; approximate,
    /// since sliding windows overlap.
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub low_power: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalityReport {
    pub length: usize,
    pub rows: Vec<NormalityRow>,
}

/// Finite-sample Borel-normality table for block lengths 1..=kmax.
pub fn normality_report(seq: &BitSequence, kmax: usize) -> Result<NormalityReport> {
    if kmax == 0 {
        return Err(Error::Precondition("kmax must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let counts = block_counts(seq, k)?;
        let windows = (seq.len() - k + 1) as f64;
        let target = (0.5f64).powi(k as i32);
        let expected = windows * target;
        let mut max_dev = 0.0f64;
        let mut chi = KahanSum::new();
        for c in &counts {
            let freq = *c as f64 / windows;
            max_dev = max_dev.max((freq - target).abs());
            let d = *c as f64 - expected;
            chi.add(d * d / expected);
        }
        rows.push(NormalityRow {
            k,
            max_abs_deviation: max_dev,
            chi_square: chi.value(),
            degrees_of_freedom: (1usize << k) - 1,
            low_power: seq.len() < (1usize << k) * 10,
        });
    }
    Ok(NormalityReport {
        length: seq.len(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Select,
    Skip,
}

/// Non-anticipative selection rule as a finite-state machine. The
/// decision attached to the current state applies to position n before
/// bit n is read; the machine then transitions on the bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRule {
    pub states: usize,
    pub initial: usize,
    /// `transitions[state] = [next_on_0, next_on_1]`
    pub transitions: Vec<[usize; 2]>,
    pub decisions: Vec<Decision>,
}

impl SelectionRule {
    pub fn validate(&self) -> Result<()> {
        validate_fsm(self.states, self.initial, &self.transitions, self.decisions.len())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rule: SelectionRule = serde_json::from_str(text)
            .map_err(|e| Error::Precondition(format!("invalid selection rule: {e}")))?;
        rule.validate()?;
        Ok(rule)
    }

    /// Rule that selects every position.
    pub fn select_all() -> Self {
        SelectionRule {
            states: 1,
            initial: 0,
            transitions: vec![[0, 0]],
            decisions: vec![Decision::Select],
        }
    }

    /// Uniformly random machine over `states` states.
    pub fn random(states: usize, rng: &mut impl Rng) -> Self {
        SelectionRule {
            states,
            initial: rng.random_range(0..states),
            transitions: (0..states)
                .map(|_| [rng.random_range(0..states), rng.random_range(0..states)])
                .collect(),
            decisions: (0..states)
                .map(|_| {
                    if rng.random::<bool>() {
                        Decision::Select
                    } else {
                        Decision::Skip
                    }
                })
                .collect(),
        }
    }
}

fn validate_fsm(states: usize, initial: usize, transitions: &[[usize; 2]], outputs: usize) -> Result<()> {
    if states == 0 {
        return Err(Error::Precondition("machine needs at least one state".into()));
    }
    if initial >= states {
        return Err(Error::Precondition(format!(
            "initial state {initial} out of range (states: {states})"
        )));
    }
    if transitions.len() != states || outputs != states {
        return Err(Error::Precondition(
            "transitions and per-state outputs must have one entry per state".into(),
        ));
    }
    for (s, t) in transitions.iter().enumerate() {
        if t[0] >= states || t[1] >= states {
            return Err(Error::Precondition(format!(
                "transition out of range in state {s}"
            )));
        }
    }
    Ok(())
}

/// Apply a selection rule; the output keeps the selected bits in order.
pub fn select_subsequence(seq: &BitSequence, rule: &SelectionRule) -> Result<BitSequence> {
    rule.validate()?;
    let mut out = Vec::new();
    let mut state = rule.initial;
    for b in &seq.bits {
        if rule.decisions[state] == Decision::Select {
            out.push(*b);
        }
        state = rule.transitions[state][*b as usize];
    }
    let provenance = Provenance {
        generator: "selection".into(),
        parameters: format!(
            "rule={}, source={}",
            serde_json::to_string(rule).expect("rule serializes"),
            seq.provenance.generator
        ),
        seed: seq.provenance.seed,
    };
    if out.is_empty() {
        // an empty selection is a legitimate outcome; keep a one-bit
        // sentinel out of the result by reporting it as an error instead
        return Err(Error::Precondition(
            "selection rule selected no positions".into(),
        ));
    }
    BitSequence::new(out, provenance)
}

/// Positions the rule selects, for callers that need the index set.
pub fn selected_positions(seq: &BitSequence, rule: &SelectionRule) -> Result<Vec<usize>> {
    rule.validate()?;
    let mut out = Vec::new();
    let mut state = rule.initial;
    for (i, b) in seq.bits.iter().enumerate() {
        if rule.decisions[state] == Decision::Select {
            out.push(i);
        }
        state = rule.transitions[state][*b as usize];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bet {
    /// Fraction of current capital staked, in [0, 1].
    pub stake: f64,
    /// Predicted next bit.
    pub predict: u8,
}

/// Betting strategy as a finite-state machine: the bet attached to the
/// current state is placed before the bit is revealed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BettingStrategy {
    pub states: usize,
    pub initial: usize,
    pub transitions: Vec<[usize; 2]>,
    pub bets: Vec<Bet>,
}

impl BettingStrategy {
    pub fn validate(&self) -> Result<()> {
        validate_fsm(self.states, self.initial, &self.transitions, self.bets.len())?;
        for (s, bet) in self.bets.iter().enumerate() {
            if !(0.0..=1.0).contains(&bet.stake) || !bet.stake.is_finite() {
                return Err(Error::Precondition(format!(
                    "stake in state {s} must lie in [0, 1], got {}",
                    bet.stake
                )));
            }
            if bet.predict > 1 {
                return Err(Error::Precondition(format!(
                    "prediction in state {s} must be 0 or 1"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let strat: BettingStrategy = serde_json::from_str(text)
            .map_err(|e| Error::Precondition(format!("invalid betting strategy: {e}")))?;
        strat.validate()?;
        Ok(strat)
    }

    pub fn random(states: usize, rng: &mut impl Rng) -> Self {
        BettingStrategy {
            states,
            initial: rng.random_range(0..states),
            transitions: (0..states)
                .map(|_| [rng.random_range(0..states), rng.random_range(0..states)])
                .collect(),
            bets: (0..states)
                .map(|_| Bet {
                    stake: rng.random::<f64>(),
                    predict: rng.random::<bool>() as u8,
                })
                .collect(),
        }
    }
}

/// Run a betting strategy over a sequence with fair even-odds payout:
/// a correct prediction wins the stake, a wrong one loses it. Returns
/// the capital trajectory including the initial capital, so the result
/// has `len + 1` entries. Capital can reach zero but never goes
/// negative.
pub fn martingale_capital(
    seq: &BitSequence,
    strategy: &BettingStrategy,
    initial: f64,
) -> Result<Vec<f64>> {
    strategy.validate()?;
    if !(initial > 0.0) || !initial.is_finite() {
        return Err(Error::Precondition(format!(
            "initial capital must be positive, got {initial}"
        )));
    }
    let mut capital = initial;
    let mut trajectory = Vec::with_capacity(seq.len() + 1);
    trajectory.push(capital);
    let mut state = strategy.initial;
    for b in &seq.bits {
        let bet = strategy.bets[state];
        let win = bet.predict == *b;
        let delta = bet.stake * capital;
        capital = if win { capital + delta } else { capital - delta };
        trajectory.push(capital);
        state = strategy.transitions[state][*b as usize];
    }
    Ok(trajectory)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleResult {
    pub sequences: usize,
    pub length: usize,
    pub seed: u64,
    pub initial: f64,
    pub mean_final_capital: f64,
    pub std_error: f64,
}

/// Run one strategy over an ensemble of PRNG sequences. Sequence `i`
/// draws from the stream with id `i` of the master seed, so the result
/// does not depend on the worker count.
pub fn martingale_ensemble(
    strategy: &BettingStrategy,
    sequences: usize,
    length: usize,
    initial: f64,
    seed: u64,
) -> Result<EnsembleResult> {
    strategy.validate()?;
    if sequences < 2 || length == 0 {
        return Err(Error::Precondition(
            "ensemble needs at least 2 sequences of positive length".into(),
        ));
    }
    let finals: Vec<f64> = (0..sequences)
        .into_par_iter()
        .map(|i| {
            let mut rng = chunk_rng(seed, i as u64);
            let mut capital = initial;
            let mut state = strategy.initial;
            for _ in 0..length {
                let b = rng.random::<bool>() as u8;
                let bet = strategy.bets[state];
                let delta = bet.stake * capital;
                capital = if bet.predict == b { capital + delta } else { capital - delta };
                state = strategy.transitions[state][b as usize];
            }
            capital
        })
        .collect();
    let n = finals.len() as f64;
    let mean = kahan_sum(finals.iter().copied()) / n;
    let var = kahan_sum(finals.iter().map(|v| {
        let d = v - mean;
        d * d
    })) / (n - 1.0);
    Ok(EnsembleResult {
        sequences,
        length,
        seed,
        initial,
        mean_final_capital: mean,
        std_error: (var / n).sqrt(),
    })
}

/// Law-of-the-iterated-logarithm style diagnostic:
/// max over n in [n0, len] of |2 S_n − n| / sqrt(2 n ln ln n).
pub fn lil_statistic(seq: &BitSequence, n0: usize) -> Result<f64> {
    if n0 < 10 || seq.len() < n0 {
        return Err(Error::Precondition(format!(
            "need len >= n0 >= 10, got len {} and n0 {n0}",
            seq.len()
        )));
    }
    let mut ones: u64 = seq.bits[..n0 - 1].iter().map(|b| *b as u64).sum();
    let mut stat = 0.0f64;
    for n in n0..=seq.len() {
        ones += seq.bits[n - 1] as u64;
        let nn = n as f64;
        let denom = (2.0 * nn * nn.ln().ln()).sqrt();
        stat = stat.max((2.0 * ones as f64 - nn).abs() / denom);
    }
    Ok(stat)
}

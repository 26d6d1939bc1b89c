//! Persistence of binary series, its Monte Carlo significance, and the
//! success-versus-market correlation.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::PersistenceError;
use crate::rng;
use crate::stats;

pub const MIN_TRIALS: usize = 1000;
pub const DEFAULT_TRIALS: usize = 100_000;
const BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinarySeries {
    pub bits: Vec<bool>,
    pub origin: String,
}

impl BinarySeries {
    pub fn new(bits: Vec<bool>, origin: impl Into<String>) -> Result<Self, PersistenceError> {
        if bits.len() < 2 {
            return Err(PersistenceError::TooShort { len: bits.len(), scale: 0 });
        }
        Ok(Self {
            bits,
            origin: origin.into(),
        })
    }

    pub fn from_bits(bits: &[u8], origin: impl Into<String>) -> Result<Self, PersistenceError> {
        Self::new(bits.iter().map(|&b| b != 0).collect(), origin)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Successive occurrences of each m-bit pattern: same continuation?
    #[default]
    Pattern,
    /// Neighbouring bits equal?
    Adjacent,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pattern" => Ok(Mode::Pattern),
            "adjacent" => Ok(Mode::Adjacent),
            other => Err(format!("unknown persistence mode {other:?} (expected pattern or adjacent)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Pattern => "pattern",
            Mode::Adjacent => "adjacent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceResult {
    pub p_measure: f64,
    pub scale: usize,
    pub mode: Mode,
    pub p_value: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Equal-continuation count and number of compared pairs.
fn tally(bits: &[bool], scale: usize, mode: Mode) -> (usize, usize) {
    match mode {
        Mode::Adjacent => {
            let same = bits.windows(2).filter(|w| w[0] == w[1]).count();
            (same, bits.len() - 1)
        }
        Mode::Pattern => {
            let mut same = 0;
            let mut pairs = 0;
            let mut record = |last: &mut Option<bool>, next: bool| {
                if let Some(prev) = *last {
                    pairs += 1;
                    if prev == next {
                        same += 1;
                    }
                }
                *last = Some(next);
            };
            if scale <= 16 {
                let mut last = vec![None; 1 << scale];
                let mask = (1usize << scale) - 1;
                let mut code = bits[..scale].iter().fold(0usize, |c, &b| (c << 1) | b as usize);
                for i in 0..bits.len() - scale {
                    let next = bits[i + scale];
                    record(&mut last[code], next);
                    code = ((code << 1) | next as usize) & mask;
                }
            } else {
                let mut last: HashMap<&[bool], Option<bool>> = HashMap::new();
                for i in 0..bits.len() - scale {
                    record(last.entry(&bits[i..i + scale]).or_default(), bits[i + scale]);
                }
            }
            (same, pairs)
        }
    }
}

fn measure(bits: &[bool], scale: usize, mode: Mode) -> Option<f64> {
    let (same, pairs) = tally(bits, scale, mode);
    (pairs > 0).then(|| same as f64 / pairs as f64)
}

/// Fraction of compared continuations that repeat: near 1 persistent,
/// 0.5 random, near 0 antipersistent.
pub fn persistence_measure(series: &BinarySeries, scale: usize, mode: Mode) -> Result<f64, PersistenceError> {
    if scale == 0 {
        return Err(PersistenceError::ZeroScale);
    }
    let needed = match mode {
        Mode::Pattern => scale + 2,
        Mode::Adjacent => 2,
    };
    if series.len() < needed {
        return Err(PersistenceError::TooShort { len: series.len(), scale });
    }
    measure(&series.bits, scale, mode).ok_or(PersistenceError::Undefined)
}

/// Two-sided Monte Carlo p-value of `observed` against uniform random
/// series of the same length, with the +1 correction. Random series on
/// which the measure is undefined are skipped.
pub fn mc_pvalue(observed: f64, length: usize, scale: usize, mode: Mode, trials: usize, seed: u64) -> Result<f64, PersistenceError> {
    if trials < MIN_TRIALS {
        return Err(PersistenceError::TooFewTrials(trials));
    }
    if scale == 0 {
        return Err(PersistenceError::ZeroScale);
    }
    if length < scale + 2 {
        return Err(PersistenceError::TooShort { len: length, scale });
    }
    let threshold = (observed - 0.5).abs() - 1e-12;
    let blocks = trials.div_ceil(BLOCK);
    let (extreme, valid) = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::task_stream(seed, b as u64);
            let n = BLOCK.min(trials - b * BLOCK);
            let mut bits = vec![false; length];
            let (mut extreme, mut valid) = (0usize, 0usize);
            for _ in 0..n {
                bits.iter_mut().for_each(|x| *x = rng.random());
                if let Some(p) = measure(&bits, scale, mode) {
                    valid += 1;
                    if (p - 0.5).abs() >= threshold {
                        extreme += 1;
                    }
                }
            }
            (extreme, valid)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((extreme + 1) as f64 / (valid + 1) as f64)
}

/// Measure plus p-value in one record.
pub fn analyze(series: &BinarySeries, scale: usize, mode: Mode, trials: usize, seed: u64) -> Result<PersistenceResult, PersistenceError> {
    let p_measure = persistence_measure(series, scale, mode)?;
    let p_value = mc_pvalue(p_measure, series.len(), scale, mode, trials, seed)?;
    Ok(PersistenceResult {
        p_measure,
        scale,
        mode,
        p_value,
        trials,
        seed,
    })
}

/// Squared Pearson correlation of 0/1 flags with the market means.
pub fn success_market_correlation(success_flags: &BinarySeries, market_means: &[f64]) -> Result<f64, PersistenceError> {
    if success_flags.len() != market_means.len() {
        return Err(PersistenceError::LengthMismatch(success_flags.len(), market_means.len()));
    }
    let flags: Vec<f64> = success_flags.bits.iter().map(|&b| f64::from(u8::from(b))).collect();
    if stats::variance(&flags) == 0.0 {
        return Err(PersistenceError::ZeroVariance("success flags"));
    }
    if !(stats::variance(market_means) > 0.0) {
        return Err(PersistenceError::ZeroVariance("market means"));
    }
    let r = stats::pearson(&flags, market_means).ok_or(PersistenceError::ZeroVariance("market means"))?;
    Ok(r * r)
}

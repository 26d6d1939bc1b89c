//! Synthetic markets with planted, lagged rank signals and phase flips, and
//! the weekly bin-churn Monte Carlo.

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{PredictorError, SimulationError};
use crate::market_data::{ChangeTable, DataQualityReport, EquityRecord, QuarterlyPanel};
use crate::predictors::Predictor;
use crate::quarter::QuarterLabel;
use crate::ranking::{positions, vl_bin_assign, zero_centered_rank};
use crate::rng;
use crate::stats;

/// Scale of quarterly returns and earnings changes.
const RETURN_SCALE: f64 = 0.1;
/// Persistence of latent quality.
const QUALITY_AR: f64 = 0.9;
const START_YEAR: i32 = 1992;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_equities: usize,
    pub n_quarters: usize,
    pub signal_strength: f64,
    pub signal_lag: usize,
    /// Quarter indices whose signal is sign-inverted.
    pub phase_flip_quarters: BTreeSet<usize>,
    /// Scales return noise, earnings noise and latent-quality innovations.
    pub noise_scale: f64,
    pub earnings_coupling: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_equities: 1452,
            n_quarters: 40,
            signal_strength: 0.5,
            signal_lag: 1,
            phase_flip_quarters: BTreeSet::new(),
            noise_scale: 1.0,
            earnings_coupling: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: String| Err(SimulationError::InvalidConfig(m));
        if self.n_equities < 200 {
            return bad(format!("n_equities {} < 200", self.n_equities));
        }
        if self.n_quarters < 12 {
            return bad(format!("n_quarters {} < 12", self.n_quarters));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return bad(format!("signal_strength {} outside [0, 1]", self.signal_strength));
        }
        if self.signal_lag == 0 {
            return bad("signal_lag must be at least 1".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise_scale {} must be finite and non-negative", self.noise_scale));
        }
        if !(0.0..=1.0).contains(&self.earnings_coupling) {
            return bad(format!("earnings_coupling {} outside [0, 1]", self.earnings_coupling));
        }
        if let Some(&q) = self.phase_flip_quarters.iter().next_back() {
            if q >= self.n_quarters {
                return bad(format!("phase flip quarter {q} beyond the panel"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub panel: QuarterlyPanel,
    /// Rows ordered by descending actual return, per quarter (empty at 0).
    pub truth: Vec<Vec<usize>>,
    pub config: SyntheticConfig,
}

fn t4_unit<R: Rng>(rng: &mut R) -> f64 {
    // df 4 has variance 2
    StudentT::new(4.0).expect("df > 0").sample(rng) / std::f64::consts::SQRT_2
}

fn zrank(q: &[f64]) -> Vec<f64> {
    let present: Vec<Option<f64>> = q.iter().map(|&x| Some(x)).collect();
    zero_centered_rank(&present).expect("nonempty")
}

/// Deterministic planted-signal market. Returns at quarter t are driven by
/// the quality ranks of quarter t − lag, sign-flipped on flip quarters;
/// earnings changes at t carry the quality ranks of t.
pub fn generate_market(config: &SyntheticConfig) -> Result<SyntheticMarket, SimulationError> {
    config.validate()?;
    let (n, nq) = (config.n_equities, config.n_quarters);
    let mut rng = rng::stream(config.seed);
    let innovation = config.noise_scale * (1.0 - QUALITY_AR * QUALITY_AR).sqrt();

    let mut quality: Vec<Vec<f64>> = Vec::with_capacity(nq);
    quality.push((0..n).map(|_| rng.sample(StandardNormal)).collect());
    for t in 1..nq {
        let prev = &quality[t - 1];
        let next = prev
            .iter()
            .map(|q| QUALITY_AR * q + innovation * rng.sample::<f64, _>(StandardNormal))
            .collect();
        quality.push(next);
    }
    let ranks: Vec<Vec<f64>> = quality.iter().map(|q| zrank(q)).collect();

    let mut prices = vec![vec![None; nq]; n];
    let mut earnings = vec![vec![None; nq]; n];
    for e in 0..n {
        prices[e][0] = Some(rng.random_range(10.0..100.0));
        earnings[e][0] = Some(rng.random_range(0.5..5.0));
    }
    let mut truth = vec![Vec::new(); nq];
    for t in 1..nq {
        let flip = if config.phase_flip_quarters.contains(&t) { -1.0 } else { 1.0 };
        let src = &ranks[t.saturating_sub(config.signal_lag)];
        let mut returns = vec![0.0; n];
        for e in 0..n {
            let noise = config.noise_scale * t4_unit(&mut rng);
            let r = (RETURN_SCALE * (config.signal_strength * flip * src[e] + noise)).max(-0.9);
            returns[e] = r;
            prices[e][t] = prices[e][t - 1].map(|p| p * (1.0 + r));
            let eps: f64 = rng.sample(StandardNormal);
            let c = (RETURN_SCALE * (config.earnings_coupling * ranks[t][e] + config.noise_scale * eps)).max(-0.9);
            earnings[e][t] = earnings[e][t - 1].map(|x| x * (1.0 + c));
        }
        let mut order: Vec<usize> = (0..n).collect();
        // ids sort like row indices
        order.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(a.cmp(&b)));
        truth[t] = order;
    }

    let records = (0..n)
        .map(|e| EquityRecord::new(format!("EQ{:04}", e + 1), prices[e].clone(), earnings[e].clone()))
        .collect();
    let start = QuarterLabel::new(START_YEAR, 1).expect("valid label");
    let quarters = (0..nq as i64).map(|k| start.offset(k)).collect();
    let panel = QuarterlyPanel::new(quarters, records, DataQualityReport::default())
        .map_err(|e| SimulationError::InvalidConfig(e.to_string()))?;
    Ok(SyntheticMarket {
        panel,
        truth,
        config: config.clone(),
    })
}

impl SyntheticMarket {
    /// `quarter,equity_id,true_position` with 1-based positions.
    pub fn write_truth_csv<W: Write>(&self, sink: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["quarter", "equity_id", "true_position"])?;
        for (t, order) in self.truth.iter().enumerate() {
            for (p, &row) in order.iter().enumerate() {
                w.write_record([
                    self.panel.quarters[t].to_string(),
                    self.panel.records[row].equity_id.clone(),
                    (p + 1).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Spearman correlation of the positions two orderings give each element.
pub fn recovery_score(predicted: &[usize], truth: &[usize]) -> Result<f64, SimulationError> {
    if predicted.len() != truth.len() {
        return Err(SimulationError::SizeMismatch(predicted.len(), truth.len()));
    }
    let mut a = predicted.to_vec();
    let mut b = truth.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    if a != b || a.windows(2).any(|w| w[0] == w[1]) {
        return Err(SimulationError::SetMismatch);
    }
    // relabel elements densely so positions() can index them
    let pos_p = positions(&predicted.iter().map(|x| a.binary_search(x).unwrap()).collect::<Vec<_>>());
    let pos_t = positions(&truth.iter().map(|x| a.binary_search(x).unwrap()).collect::<Vec<_>>());
    let xs: Vec<f64> = pos_p.iter().map(|&p| p as f64).collect();
    let ys: Vec<f64> = pos_t.iter().map(|&p| p as f64).collect();
    Ok(stats::pearson(&xs, &ys).unwrap_or(1.0))
}

/// Predicts each quarter with the true ordering (or its reverse).
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub truth: Vec<Vec<usize>>,
    pub inverted: bool,
}

impl Predictor for OraclePredictor {
    fn name(&self) -> String {
        if self.inverted {
            "inverted-oracle".into()
        } else {
            "oracle".into()
        }
    }

    fn first_index(&self) -> usize {
        1
    }

    fn predict(&mut self, _panel: &QuarterlyPanel, _changes: &ChangeTable, t: usize) -> Result<Vec<usize>, PredictorError> {
        let mut order = self.truth.get(t).filter(|o| !o.is_empty()).cloned().ok_or(PredictorError::EmptyUniverse)?;
        if self.inverted {
            order.reverse();
        }
        Ok(order)
    }
}

/// Distribution of weekly underlying score changes, in units of the mean
/// spacing between neighbouring base scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChangeSampler {
    /// Underlying scores never move.
    #[default]
    None,
    Gaussian { sd: f64 },
    StudentT { df: f64, scale: f64 },
}

impl ChangeSampler {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ChangeSampler::None => 0.0,
            ChangeSampler::Gaussian { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            ChangeSampler::StudentT { df, scale } => scale * StudentT::new(df).expect("df > 0").sample(rng),
        }
    }

    fn validate(&self) -> Result<(), SimulationError> {
        let ok = match *self {
            ChangeSampler::None => true,
            ChangeSampler::Gaussian { sd } => sd >= 0.0 && sd.is_finite(),
            ChangeSampler::StudentT { df, scale } => df > 0.0 && scale >= 0.0 && scale.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SimulationError::InvalidConfig(format!("bad change sampler {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnReport {
    /// Share of observed bin changes whose noise-free bin did not change.
    pub churn_fraction: f64,
    /// Share of observed bin changes spanning two or more bins.
    pub two_rank_jump_rate: f64,
    pub weeks: usize,
    pub noise_scale: f64,
    pub changes: usize,
    pub churn_changes: usize,
    /// Jumps of two or more bins leaving or entering each bin.
    pub jumps_by_bin: [usize; 5],
    pub bin_sizes: [usize; 5],
}

impl ChurnReport {
    /// Jumps touching each bin per member-week.
    pub fn jump_rate_per_capita(&self) -> [f64; 5] {
        let mut out = [0.0; 5];
        for b in 0..5 {
            let exposure = (self.bin_sizes[b] * self.weeks.saturating_sub(1)) as f64;
            out[b] = if exposure > 0.0 { self.jumps_by_bin[b] as f64 / exposure } else { 0.0 };
        }
        out
    }
}

fn bins_of(scores: &[f64]) -> Vec<u8> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    vl_bin_assign(&idx).expect("at least 14 equities").bins
}

/// Weekly re-binning of equities whose observed score is the underlying
/// score plus heavy-tailed noise of `noise_scale` spacings.
pub fn simulate_bin_churn(
    n_equities: usize,
    weeks: usize,
    change_sampler: ChangeSampler,
    noise_scale: f64,
    seed: u64,
) -> Result<ChurnReport, SimulationError> {
    if n_equities < 14 {
        return Err(SimulationError::TooFewEquities(n_equities));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(SimulationError::InvalidConfig(format!("noise_scale {noise_scale}")));
    }
    change_sampler.validate()?;
    // separate streams so a noise sweep reuses the same scores and draws
    let mut base_rng = rng::task_stream(seed, 0);
    let mut drift_rng = rng::task_stream(seed, 1);
    let mut noise_rng = rng::task_stream(seed, 2);

    let mut underlying: Vec<f64> = (0..n_equities).map(|_| base_rng.sample(StandardNormal)).collect();
    let (lo, hi) = underlying.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let spacing = (hi - lo) / (n_equities - 1) as f64;

    let observe = |u: &[f64], rng: &mut rng::StreamRng| -> Vec<f64> {
        u.iter().map(|&x| x + noise_scale * spacing * t4_unit(rng)).collect()
    };
    let mut prev_true = bins_of(&underlying);
    let mut prev_obs = bins_of(&observe(&underlying, &mut noise_rng));
    let bin_sizes = crate::ranking::vl_bin_counts(n_equities).expect("n >= 14");
    let (mut changes, mut churn, mut jumps) = (0usize, 0usize, 0usize);
    let mut jumps_by_bin = [0usize; 5];
    for _ in 1..weeks {
        for u in underlying.iter_mut() {
            *u += spacing * change_sampler.sample(&mut drift_rng);
        }
        let true_bins = bins_of(&underlying);
        let obs_bins = bins_of(&observe(&underlying, &mut noise_rng));
        for e in 0..n_equities {
            if obs_bins[e] != prev_obs[e] {
                changes += 1;
                if true_bins[e] == prev_true[e] {
                    churn += 1;
                }
                if obs_bins[e].abs_diff(prev_obs[e]) >= 2 {
                    jumps += 1;
                    jumps_by_bin[prev_obs[e] as usize - 1] += 1;
                    jumps_by_bin[obs_bins[e] as usize - 1] += 1;
                }
            }
        }
        prev_true = true_bins;
        prev_obs = obs_bins;
    }
    let frac = |k: usize| if changes == 0 { 0.0 } else { k as f64 / changes as f64 };
    Ok(ChurnReport {
        churn_fraction: frac(churn),
        two_rank_jump_rate: frac(jumps),
        weeks,
        noise_scale,
        changes,
        churn_changes: churn,
        jumps_by_bin,
        bin_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{mgl_predict_at, random_predict};

    fn small(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_equities: 300,
            n_quarters: 14,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_market(&small(3)).unwrap();
        let b = generate_market(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.panel, generate_market(&small(4)).unwrap().panel);
    }

    #[test]
    fn invalid_configs() {
        let mut c = small(0);
        c.n_equities = 199;
        assert!(generate_market(&c).is_err());
        let mut c = small(0);
        c.n_quarters = 11;
        assert!(c.validate().is_err());
        let mut c = small(0);
        c.signal_lag = 0;
        assert!(c.validate().is_err());
        let mut c = small(0);
        c.phase_flip_quarters.insert(14);
        assert!(c.validate().is_err());
    }

    #[test]
    fn noiseless_signal_repeats() {
        let c = SyntheticConfig {
            signal_strength: 1.0,
            noise_scale: 0.0,
            ..small(1)
        };
        let m = generate_market(&c).unwrap();
        let changes = ChangeTable::from_panel(&m.panel);
        for t in 2..c.n_quarters {
            let pred = mgl_predict_at(&m.panel, &changes, t, 1).unwrap();
            assert_eq!(recovery_score(&pred, &m.truth[t]).unwrap(), 1.0);
        }
    }

    #[test]
    fn pure_noise_has_no_recoverable_signal() {
        let mut total = 0.0;
        let mut count = 0;
        for seed in 0..20 {
            let c = SyntheticConfig {
                signal_strength: 0.0,
                ..small(seed)
            };
            let m = generate_market(&c).unwrap();
            let changes = ChangeTable::from_panel(&m.panel);
            for t in 2..c.n_quarters {
                let pred = mgl_predict_at(&m.panel, &changes, t, 1).unwrap();
                total += recovery_score(&pred, &m.truth[t]).unwrap();
                count += 1;
            }
        }
        assert!((total / count as f64).abs() < 0.02);
    }

    #[test]
    fn recovery_examples() {
        let truth: Vec<usize> = (0..40).collect();
        assert_eq!(recovery_score(&truth, &truth).unwrap(), 1.0);
        let rev: Vec<usize> = truth.iter().rev().copied().collect();
        assert!((recovery_score(&rev, &truth).unwrap() + 1.0).abs() < 1e-12);
        assert!(recovery_score(&truth[..39], &truth).is_err());
        let mut other = truth.clone();
        other[0] = 99;
        assert!(matches!(recovery_score(&other, &truth), Err(SimulationError::SetMismatch)));
        let sparse = [10, 30, 20];
        assert_eq!(recovery_score(&sparse, &sparse).unwrap(), 1.0);
        let mean: f64 = (0..10_000u64)
            .map(|s| recovery_score(&random_predict(&truth, s).unwrap(), &truth).unwrap())
            .sum::<f64>()
            / 10_000.0;
        assert!(mean.abs() < 0.02);
    }

    #[test]
    fn truth_csv_shape() {
        let m = generate_market(&small(0)).unwrap();
        let mut buf = Vec::new();
        m.write_truth_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 13 * 300);
        assert!(text.starts_with("quarter,equity_id,true_position\n1992Q2,"));
    }

    #[test]
    fn frozen_churn() {
        let r = simulate_bin_churn(1400, 20, ChangeSampler::None, 0.0, 1).unwrap();
        assert_eq!((r.changes, r.churn_fraction), (0, 0.0));
        let r = simulate_bin_churn(1400, 20, ChangeSampler::Gaussian { sd: 5.0 }, 0.0, 1).unwrap();
        assert!(r.changes > 0);
        assert_eq!(r.churn_fraction, 0.0);
        let r = simulate_bin_churn(1400, 20, ChangeSampler::None, 0.25, 1).unwrap();
        assert!(r.changes > 0);
        assert_eq!(r.churn_fraction, 1.0);
        assert!(simulate_bin_churn(13, 5, ChangeSampler::None, 0.1, 0).is_err());
    }

    #[test]
    fn churn_grows_with_noise() {
        let sampler = ChangeSampler::StudentT { df: 4.0, scale: 0.25 };
        let fracs: Vec<f64> = [0.1, 0.25, 0.5]
            .iter()
            .map(|&k| simulate_bin_churn(1400, 26, sampler, k, 5).unwrap().churn_fraction)
            .collect();
        assert!(fracs.windows(2).all(|w| w[0] <= w[1]), "{fracs:?}");
    }
}

//! Next-quarter orderings of the active universe: the network ensemble,
//! the lagged "Martingale" baseline and a random control.

pub mod ann;
pub mod features;
pub mod ga;

use rand::seq::SliceRandom;

pub use ann::{ann_predict, ann_train, AnnConfig, EnsembleModel};
pub use features::{build_feature_matrix, build_feature_matrix_at, FeatureMatrix, HistoryRule, N_FEATURES, N_LAGS};
pub use ga::{genetic_search, GaOutcome, GaSettings, SearchSpace};

use crate::error::PredictorError;
use crate::market_data::{ChangeTable, QuarterlyPanel};
use crate::quarter::QuarterLabel;
use crate::ranking::zero_centered_rank;
use crate::rng;

/// Produces an ordering (panel row indices, best first) of the equities
/// active in quarter `t`, using only data from quarters before `t`.
pub trait Predictor {
    fn name(&self) -> String;

    /// Earliest quarter index this predictor can handle.
    fn first_index(&self) -> usize;

    fn predict(&mut self, panel: &QuarterlyPanel, changes: &ChangeTable, t: usize) -> Result<Vec<usize>, PredictorError>;

    /// Per-quarter training record: chosen config and validation loss.
    fn training_history(&self) -> &[(QuarterLabel, AnnConfig, f64)] {
        &[]
    }
}

/// Orders the equities active in `target_quarter` by the actual price change
/// of quarter `target − lag`. Equities without that change sit just after
/// the zero-valued ranks.
pub fn mgl_predict(panel: &QuarterlyPanel, target_quarter: QuarterLabel, lag: usize) -> Result<Vec<usize>, PredictorError> {
    let t = panel.require_index(target_quarter)?;
    mgl_predict_at(panel, &ChangeTable::from_panel(panel), t, lag)
}

pub fn mgl_predict_at(panel: &QuarterlyPanel, changes: &ChangeTable, t: usize, lag: usize) -> Result<Vec<usize>, PredictorError> {
    if lag == 0 || t < lag + 1 {
        return Err(PredictorError::LagBeforeStart {
            target: panel.quarters.get(t).copied().unwrap_or(QuarterLabel::from_ordinal(0)),
            lag,
        });
    }
    let rows = panel.active_rows(t);
    if rows.is_empty() {
        return Err(PredictorError::EmptyUniverse);
    }
    let source = t - lag;
    let raw: Vec<Option<f64>> = rows.iter().map(|&r| changes.price[r][source]).collect();
    let values = zero_centered_rank(&raw).unwrap_or_else(|_| vec![0.0; rows.len()]);
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    let id = |i: usize| panel.records[rows[i]].equity_id.as_str();
    idx.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then_with(|| raw[a].is_none().cmp(&raw[b].is_none()))
            .then_with(|| id(a).cmp(id(b)))
    });
    Ok(idx.into_iter().map(|i| rows[i]).collect())
}

/// Uniform random permutation of `universe`.
pub fn random_predict<T: Clone>(universe: &[T], seed: u64) -> Result<Vec<T>, PredictorError> {
    if universe.is_empty() {
        return Err(PredictorError::EmptyUniverse);
    }
    let mut out = universe.to_vec();
    out.shuffle(&mut rng::stream(seed));
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MglPredictor {
    pub lag: usize,
}

impl Predictor for MglPredictor {
    fn name(&self) -> String {
        if self.lag == 1 {
            "mgl".into()
        } else {
            format!("mgl-lag-{}", self.lag)
        }
    }

    fn first_index(&self) -> usize {
        self.lag + 1
    }

    fn predict(&mut self, panel: &QuarterlyPanel, changes: &ChangeTable, t: usize) -> Result<Vec<usize>, PredictorError> {
        mgl_predict_at(panel, changes, t, self.lag)
    }
}

#[derive(Debug, Clone)]
pub struct RandomPredictor {
    pub seed: u64,
}

impl Predictor for RandomPredictor {
    fn name(&self) -> String {
        "random".into()
    }

    fn first_index(&self) -> usize {
        1
    }

    fn predict(&mut self, panel: &QuarterlyPanel, _changes: &ChangeTable, t: usize) -> Result<Vec<usize>, PredictorError> {
        random_predict(&panel.active_rows(t), rng::derive_seed(self.seed, t as u64))
    }
}

/// Ten feature matrices with targets for the quarters before `t`.
pub fn training_window(panel: &QuarterlyPanel, changes: &ChangeTable, t: usize) -> Result<Vec<FeatureMatrix>, PredictorError> {
    let first_usable = ann::TRAINING_QUARTERS + 1;
    if t < first_usable.max(features::HISTORY_QUARTERS) {
        let start = panel.quarters.first().copied().unwrap_or(QuarterLabel::from_ordinal(0));
        return Err(PredictorError::InsufficientHistory {
            target: start.offset(t as i64),
            first_usable: start.offset(first_usable.max(features::HISTORY_QUARTERS) as i64),
        });
    }
    (t - ann::TRAINING_QUARTERS..t)
        .map(|k| build_feature_matrix_at(panel, changes, k, HistoryRule::Partial))
        .collect()
}

/// Network ensemble, freshly trained for every target quarter on the ten
/// preceding quarters. An optional genetic search picks the configuration
/// per quarter.
#[derive(Debug, Clone)]
pub struct AnnPredictor {
    pub config: AnnConfig,
    pub search: Option<(SearchSpace, usize)>,
    /// Validation loss and chosen config per predicted quarter.
    pub history: Vec<(QuarterLabel, AnnConfig, f64)>,
}

impl AnnPredictor {
    pub fn new(config: AnnConfig) -> Self {
        Self {
            config,
            search: None,
            history: Vec::new(),
        }
    }
}

impl Predictor for AnnPredictor {
    fn name(&self) -> String {
        "ann".into()
    }

    fn first_index(&self) -> usize {
        features::HISTORY_QUARTERS.max(ann::TRAINING_QUARTERS + 1)
    }

    fn predict(&mut self, panel: &QuarterlyPanel, changes: &ChangeTable, t: usize) -> Result<Vec<usize>, PredictorError> {
        let window = training_window(panel, changes, t)?;
        let quarter_seed = rng::derive_seed(self.config.seed, t as u64);
        let mut config = AnnConfig {
            seed: quarter_seed,
            ..self.config.clone()
        };
        if let Some((space, budget)) = &self.search {
            let outcome = genetic_search(space, &GaSettings::default(), *budget, quarter_seed, |c| {
                ann_train(&window, c).map_or(f64::INFINITY, |m| m.validation_loss())
            })?;
            config = AnnConfig {
                seed: quarter_seed,
                ..outcome.best
            };
        }
        let model = ann_train(&window, &config)?;
        let features = build_feature_matrix_at(panel, changes, t, HistoryRule::Strict)?;
        self.history.push((panel.quarters[t], config, model.validation_loss()));
        ann_predict(&model, &features)
    }

    fn training_history(&self) -> &[(QuarterLabel, AnnConfig, f64)] {
        &self.history
    }
}

/// Genetic search for the configuration used to predict `target_quarter`;
/// fitness is the ensemble's validation loss on its training window.
pub fn ga_optimize(
    panel: &QuarterlyPanel,
    target_quarter: QuarterLabel,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<AnnConfig, PredictorError> {
    let changes = ChangeTable::from_panel(panel);
    let t = panel.require_index(target_quarter)?;
    let window = training_window(panel, &changes, t)?;
    let outcome = genetic_search(space, &GaSettings::default(), budget, seed, |c| {
        ann_train(&window, c).map_or(f64::INFINITY, |m| m.validation_loss())
    })?;
    Ok(outcome.best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{DataQualityReport, EquityRecord};

    fn panel_from_changes(changes: &[&[f64]]) -> QuarterlyPanel {
        // changes[e][k] is equity e's change into quarter k + 1
        let start: QuarterLabel = "2001Q1".parse().unwrap();
        let n_q = changes[0].len() + 1;
        let records = changes
            .iter()
            .enumerate()
            .map(|(e, ch)| {
                let mut p = 100.0;
                let mut prices = vec![Some(p)];
                for c in *ch {
                    p *= 1.0 + c;
                    prices.push(Some(p));
                }
                EquityRecord::new(((b'A' + e as u8) as char).to_string(), prices, vec![Some(1.0); n_q])
            })
            .collect();
        QuarterlyPanel::new(
            (0..n_q as i64).map(|t| start.offset(t)).collect(),
            records,
            DataQualityReport::default(),
        )
        .unwrap()
    }

    #[test]
    fn mgl_sorts_previous_quarter() {
        let p = panel_from_changes(&[&[0.05, 0.0], &[-0.02, 0.0], &[0.10, 0.0]]);
        assert_eq!(mgl_predict(&p, p.quarters[2], 1).unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn mgl_lag_two_uses_older_quarter() {
        let p = panel_from_changes(&[&[0.05, -0.3, 0.0], &[-0.02, 0.2, 0.0], &[0.10, 0.0, 0.0]]);
        assert_eq!(mgl_predict(&p, p.quarters[3], 2).unwrap(), vec![2, 0, 1]);
        assert_eq!(mgl_predict(&p, p.quarters[3], 1).unwrap(), vec![1, 2, 0]);
        assert!(matches!(
            mgl_predict(&p, p.quarters[2], 2),
            Err(PredictorError::LagBeforeStart { .. })
        ));
    }

    #[test]
    fn mgl_missing_changes_sit_after_zero_ranks() {
        let start: QuarterLabel = "2001Q1".parse().unwrap();
        let records = vec![
            EquityRecord::new("A", vec![Some(10.0), Some(11.0), Some(11.0)], vec![None; 3]),
            EquityRecord::new("B", vec![None, Some(5.0), Some(5.0)], vec![None; 3]),
            EquityRecord::new("C", vec![Some(10.0), Some(10.0), Some(10.0)], vec![None; 3]),
            EquityRecord::new("D", vec![Some(10.0), Some(9.0), Some(9.0)], vec![None; 3]),
        ];
        let p = QuarterlyPanel::new((0..3).map(|t| start.offset(t)).collect(), records, DataQualityReport::default()).unwrap();
        // A: +10% (rank 1), C: 0% (rank 0), B: missing (neutral 0), D: -10%
        assert_eq!(mgl_predict(&p, p.quarters[2], 1).unwrap(), vec![0, 2, 1, 3]);
    }

    #[test]
    fn random_is_deterministic_permutation() {
        let u: Vec<usize> = (0..50).collect();
        let a = random_predict(&u, 11).unwrap();
        assert_eq!(a, random_predict(&u, 11).unwrap());
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, u);
        assert_eq!(random_predict(&[7usize], 1).unwrap(), vec![7]);
        assert!(random_predict::<usize>(&[], 1).is_err());
    }

    #[test]
    fn random_null_spearman() {
        use crate::stats::spearman;
        let n = 50;
        let fixed: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let u: Vec<usize> = (0..n).collect();
        let total: f64 = (0..10_000u64)
            .map(|seed| {
                let perm = random_predict(&u, seed).unwrap();
                let pos: Vec<f64> = crate::ranking::positions(&perm).iter().map(|&p| p as f64).collect();
                spearman(&pos, &fixed).unwrap()
            })
            .sum();
        assert!((total / 10_000.0).abs() < 0.02);
    }
}

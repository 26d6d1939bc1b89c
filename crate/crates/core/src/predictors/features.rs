use serde::{Deserialize, Serialize};

use crate::error::PredictorError;
use crate::market_data::{ChangeTable, QuarterlyPanel};
use crate::quarter::QuarterLabel;
use crate::ranking::zero_centered_rank;

/// Quarterly changes per input family.
pub const N_LAGS: usize = 10;
/// Ten price-change ranks followed by ten earnings-change ranks.
pub const N_FEATURES: usize = 2 * N_LAGS;
/// Quarters of levels needed before the target (ten changes need eleven levels).
pub const HISTORY_QUARTERS: usize = N_LAGS + 1;

/// How much history a feature matrix requires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryRule {
    /// All ten lagged changes must be computable.
    Strict,
    /// Lags reaching before the panel start are neutral (rank 0). Used for
    /// the early quarters of a training window.
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub quarter: QuarterLabel,
    /// Panel row of each feature row.
    pub rows: Vec<usize>,
    pub ids: Vec<String>,
    /// Most recent lag first within each family.
    pub features: Vec<[f64; N_FEATURES]>,
    /// Actual fractional price change over the target quarter, when known.
    pub target: Vec<Option<f64>>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn id_refs(&self) -> Vec<&str> {
        self.ids.iter().map(String::as_str).collect()
    }
}

/// Feature matrix for `target_quarter` using only data from earlier quarters.
pub fn build_feature_matrix(panel: &QuarterlyPanel, target_quarter: QuarterLabel) -> Result<FeatureMatrix, PredictorError> {
    let changes = ChangeTable::from_panel(panel);
    let t = panel.require_index(target_quarter)?;
    build_feature_matrix_at(panel, &changes, t, HistoryRule::Strict)
}

pub fn build_feature_matrix_at(
    panel: &QuarterlyPanel,
    changes: &ChangeTable,
    t: usize,
    rule: HistoryRule,
) -> Result<FeatureMatrix, PredictorError> {
    let needed = match rule {
        HistoryRule::Strict => HISTORY_QUARTERS,
        HistoryRule::Partial => 1,
    };
    if t < needed {
        let first = panel.quarters.first().copied().unwrap_or(QuarterLabel::from_ordinal(0));
        return Err(PredictorError::InsufficientHistory {
            target: panel.quarters.get(t).copied().unwrap_or(first.offset(t as i64)),
            first_usable: first.offset(needed as i64),
        });
    }
    let rows = panel.active_rows(t);
    let mut features = vec![[0.0; N_FEATURES]; rows.len()];
    for lag in 1..=N_LAGS {
        // change ending at quarter t - lag, i.e. from t - lag - 1 to t - lag
        let Some(end) = t.checked_sub(lag) else { continue };
        for (family, table) in [&changes.price, &changes.earnings].into_iter().enumerate() {
            let column: Vec<Option<f64>> = rows.iter().map(|&r| table[r][end]).collect();
            let Ok(ranked) = zero_centered_rank(&column) else { continue };
            let col = family * N_LAGS + (lag - 1);
            for (row, v) in features.iter_mut().zip(ranked) {
                row[col] = v;
            }
        }
    }
    Ok(FeatureMatrix {
        quarter: panel.quarters[t],
        ids: rows.iter().map(|&r| panel.records[r].equity_id.clone()).collect(),
        target: rows.iter().map(|&r| changes.price[r][t]).collect(),
        rows,
        features,
    })
}

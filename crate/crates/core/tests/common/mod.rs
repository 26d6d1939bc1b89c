#![allow(dead_code)]

use rand::Rng;
use rankfolio::market_data::{ChangeTable, EquityRecord, QuarterlyPanel};
use rankfolio::predictors::Predictor;
use rankfolio::rng;

/// Copy of `panel` with every price and earnings value at quarters `>= t`
/// replaced by unrelated values. Prices stay positive so membership at `t`
/// is unchanged.
pub fn corrupt_from(panel: &QuarterlyPanel, t: usize, seed: u64) -> QuarterlyPanel {
    let mut r = rng::stream(seed);
    let records = panel
        .records
        .iter()
        .map(|rec| {
            let mut prices = rec.prices.clone();
            let mut earnings = rec.earnings.clone();
            for q in t..rec.len() {
                if prices[q].is_some() {
                    prices[q] = Some(r.random_range(0.5..500.0));
                }
                earnings[q] = match r.random_range(0..4) {
                    0 => None,
                    _ => Some(r.random_range(-50.0..50.0)),
                };
            }
            EquityRecord::new(rec.equity_id.clone(), prices, earnings)
        })
        .collect();
    QuarterlyPanel::new(panel.quarters.clone(), records, panel.quality.clone()).expect("corruption keeps the panel valid")
}

/// Predictions for quarter `t` from fresh predictors on the clean and the
/// corrupted panel.
pub fn predictions_pair(
    make: &dyn Fn() -> Box<dyn Predictor>,
    panel: &QuarterlyPanel,
    t: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let corrupted = corrupt_from(panel, t, seed);
    let clean = make().predict(panel, &ChangeTable::from_panel(panel), t).expect("clean prediction");
    let dirty = make()
        .predict(&corrupted, &ChangeTable::from_panel(&corrupted), t)
        .expect("corrupted prediction");
    (clean, dirty)
}

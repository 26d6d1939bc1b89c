//! Cumulative-decile long, short and hedged portfolios, quarterly
//! backtesting and return arithmetic.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, PortfolioError};
use crate::market_data::{ChangeTable, QuarterlyPanel};
use crate::predictors::Predictor;
use crate::quarter::QuarterLabel;
use crate::stats;

/// Portfolio sizes 10, 20, ..., 100.
pub const SIZES: [usize; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];
pub const MIN_UNIVERSE: usize = 200;
pub const DEFAULT_RF_ANNUAL: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Top,
    Bottom,
    Hedged,
}

impl Side {
    pub fn letter(self) -> char {
        match self {
            Side::Top => 'T',
            Side::Bottom => 'B',
            Side::Hedged => 'H',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub side: Side,
    pub size: usize,
}

impl PortfolioSpec {
    pub fn new(side: Side, size: usize) -> Result<Self, PortfolioError> {
        if size % 10 != 0 || !(10..=100).contains(&size) {
            return Err(PortfolioError::BadSize(size));
        }
        Ok(Self { side, size })
    }

    pub fn all() -> Vec<PortfolioSpec> {
        [Side::Top, Side::Bottom, Side::Hedged]
            .into_iter()
            .flat_map(|side| SIZES.iter().map(move |&size| PortfolioSpec { side, size }))
            .collect()
    }

    fn slot(self) -> usize {
        self.size / 10 - 1
    }

    pub fn label(self) -> String {
        format!("{}{}", self.side.letter(), self.size)
    }
}

impl std::fmt::Display for PortfolioSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// Membership of the ten top and ten bottom cumulative deciles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deciles<'a> {
    ordering: &'a [usize],
}

impl<'a> Deciles<'a> {
    pub fn top(&self, size: usize) -> &'a [usize] {
        &self.ordering[..size]
    }

    pub fn bottom(&self, size: usize) -> &'a [usize] {
        &self.ordering[self.ordering.len() - size..]
    }
}

pub fn build_cumulative_deciles(ordering: &[usize]) -> Result<Deciles<'_>, PortfolioError> {
    if ordering.len() < MIN_UNIVERSE {
        return Err(PortfolioError::UniverseTooSmall(ordering.len()));
    }
    Ok(Deciles { ordering })
}

/// Equal-weighted mean change of the members. Members without a change are
/// left out with a warning. The sum runs in row order so the result does not
/// depend on the order of `members`.
pub fn portfolio_quarter_return(members: &[usize], actual_changes: &[Option<f64>]) -> Result<f64, PortfolioError> {
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let mut sum = 0.0;
    let mut n = 0usize;
    for &m in &sorted {
        match actual_changes.get(m).copied().flatten() {
            Some(c) => {
                sum += c;
                n += 1;
            }
            None => warn!("member {m} has no actual change this quarter; excluded from the mean"),
        }
    }
    if n == 0 {
        return Err(PortfolioError::EmptyPortfolio);
    }
    Ok(sum / n as f64)
}

pub fn hedged_return(top_return: f64, bottom_return: f64) -> f64 {
    top_return - bottom_return
}

/// Product of `1 + r`; an empty sequence compounds to 1.
pub fn compound(returns: &[f64]) -> Result<f64, PortfolioError> {
    let mut m = 1.0;
    for &r in returns {
        if r < -1.0 {
            return Err(PortfolioError::ReturnBelowMinusOne(r));
        }
        m *= 1.0 + r;
    }
    Ok(m)
}

/// Geometric annual rate for a multiple earned over `quarters` quarters.
pub fn annualize(multiple: f64, quarters: usize) -> Result<f64, PortfolioError> {
    if !(multiple > 0.0) || quarters == 0 {
        return Err(PortfolioError::BadAnnualize { multiple, quarters });
    }
    Ok(multiple.powf(4.0 / quarters as f64) - 1.0)
}

pub fn excess_return(annual: f64, rf_annual: f64) -> f64 {
    annual - rf_annual
}

/// Returns of all thirty portfolios in one quarter, indexed by size slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterReturns {
    pub top: [f64; 10],
    pub bottom: [f64; 10],
    pub hedged: [f64; 10],
}

impl QuarterReturns {
    pub fn get(&self, spec: PortfolioSpec) -> f64 {
        match spec.side {
            Side::Top => self.top[spec.slot()],
            Side::Bottom => self.bottom[spec.slot()],
            Side::Hedged => self.hedged[spec.slot()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestLedger {
    pub predictor: String,
    pub quarters: Vec<QuarterLabel>,
    pub returns: Vec<QuarterReturns>,
    pub universe_mean: Vec<f64>,
    pub rf_annual: f64,
    /// Flat haircut per side per rebalance.
    pub cost_per_side: f64,
    /// Predicted ordering per quarter (panel rows, best first).
    pub orderings: Vec<Vec<usize>>,
    /// Actual change of each ordered equity, aligned with `orderings`.
    pub ranked_changes: Vec<Vec<Option<f64>>>,
}

impl BacktestLedger {
    pub fn len(&self) -> usize {
        self.quarters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quarters.is_empty()
    }

    pub fn series(&self, spec: PortfolioSpec) -> Vec<f64> {
        self.returns.iter().map(|q| q.get(spec)).collect()
    }

    pub fn compounded(&self, spec: PortfolioSpec) -> Result<f64, PortfolioError> {
        compound(&self.series(spec))
    }

    pub fn annualized(&self, spec: PortfolioSpec) -> Result<f64, PortfolioError> {
        annualize(self.compounded(spec)?, self.len())
    }

    pub fn annualized_excess(&self, spec: PortfolioSpec) -> Result<f64, PortfolioError> {
        Ok(excess_return(self.annualized(spec)?, self.rf_annual))
    }

    /// Writes `quarter,side,size,return,universe_mean` rows.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["quarter", "side", "size", "return", "universe_mean"])?;
        for (k, q) in self.quarters.iter().enumerate() {
            for spec in PortfolioSpec::all() {
                w.write_record([
                    q.to_string(),
                    spec.side.letter().to_string(),
                    spec.size.to_string(),
                    format!("{}", self.returns[k].get(spec)),
                    format!("{}", self.universe_mean[k]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Portfolio returns for one quarter given the ordering and actual changes
/// (indexed by panel row).
pub fn quarter_returns(ordering: &[usize], actual: &[Option<f64>], cost_per_side: f64) -> Result<QuarterReturns, PortfolioError> {
    let deciles = build_cumulative_deciles(ordering)?;
    let mut out = QuarterReturns {
        top: [0.0; 10],
        bottom: [0.0; 10],
        hedged: [0.0; 10],
    };
    for (slot, &size) in SIZES.iter().enumerate() {
        // a cost lowers the long leg and raises what the short leg gives back
        let t = portfolio_quarter_return(deciles.top(size), actual)? - cost_per_side;
        let b = portfolio_quarter_return(deciles.bottom(size), actual)? + cost_per_side;
        out.top[slot] = t;
        out.bottom[slot] = b;
        out.hedged[slot] = hedged_return(t, b);
    }
    Ok(out)
}

/// Runs `predictor` over the quarters `first..=last`, holding each quarter's
/// portfolios fixed for that quarter.
pub fn run_backtest(
    panel: &QuarterlyPanel,
    predictor: &mut dyn Predictor,
    first_quarter: QuarterLabel,
    last_quarter: QuarterLabel,
    rf_annual: f64,
    cost_per_side: f64,
) -> Result<BacktestLedger, Error> {
    let range_err = || PortfolioError::BadRange {
        first: first_quarter,
        last: last_quarter,
    };
    let first = panel.quarter_index(first_quarter).ok_or_else(range_err)?;
    let last = panel.quarter_index(last_quarter).ok_or_else(range_err)?;
    if first > last || first == 0 {
        return Err(range_err().into());
    }
    let changes = ChangeTable::from_panel(panel);
    let mut ledger = BacktestLedger {
        predictor: predictor.name(),
        quarters: Vec::new(),
        returns: Vec::new(),
        universe_mean: Vec::new(),
        rf_annual,
        cost_per_side,
        orderings: Vec::new(),
        ranked_changes: Vec::new(),
    };
    for t in first..=last {
        let quarter = panel.quarters[t];
        let wrap = |e: Error| PortfolioError::Quarter {
            quarter,
            source: Box::new(e),
        };
        let ordering = predictor.predict(panel, &changes, t).map_err(|e| wrap(e.into()))?;
        let actual: Vec<Option<f64>> = (0..panel.n_equities()).map(|r| changes.price[r][t]).collect();
        let returns = quarter_returns(&ordering, &actual, cost_per_side).map_err(|e| wrap(e.into()))?;
        let present: Vec<f64> = panel.active_rows(t).iter().filter_map(|&r| actual[r]).collect();
        ledger.universe_mean.push(stats::mean(&present));
        ledger.ranked_changes.push(ordering.iter().map(|&r| actual[r]).collect());
        ledger.orderings.push(ordering);
        ledger.returns.push(returns);
        ledger.quarters.push(quarter);
    }
    Ok(ledger)
}

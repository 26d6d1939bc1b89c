//! In-phase / out-of-phase segregation of quarters and pseudo-compounded
//! returns per phase.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, PhaseError};
use crate::portfolio::{annualize, BacktestLedger, PortfolioSpec, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    /// Hedged return strictly positive.
    Plus,
    Minus,
}

impl Phase {
    pub fn symbol(self) -> &'static str {
        match self {
            Phase::Plus => "+",
            Phase::Minus => "-",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseLabeling {
    pub labels: Vec<Phase>,
    pub criterion_portfolio: Option<PortfolioSpec>,
}

impl PhaseLabeling {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.labels.iter().filter(|&&l| l == phase).count()
    }
}

pub fn classify_quarters(hedged_returns: &[f64]) -> Result<PhaseLabeling, PhaseError> {
    if hedged_returns.is_empty() {
        return Err(PhaseError::Empty);
    }
    Ok(PhaseLabeling {
        labels: hedged_returns
            .iter()
            .map(|&r| if r > 0.0 { Phase::Plus } else { Phase::Minus })
            .collect(),
        criterion_portfolio: None,
    })
}

/// Labels each ledger quarter by the hedged portfolio of `size`.
pub fn label_ledger(ledger: &BacktestLedger, size: usize) -> Result<PhaseLabeling, Error> {
    let spec = PortfolioSpec::new(Side::Hedged, size)?;
    let mut labeling = classify_quarters(&ledger.series(spec))?;
    labeling.criterion_portfolio = Some(spec);
    Ok(labeling)
}

/// Products of `1 + r` over the plus and minus quarters of a row.
pub fn pseudo_compound(row: &[f64], labels: &PhaseLabeling) -> Result<(f64, f64), PhaseError> {
    if row.len() != labels.len() {
        return Err(PhaseError::LengthMismatch {
            row: row.len(),
            labels: labels.len(),
        });
    }
    let mut plus = 1.0;
    let mut minus = 1.0;
    for (&r, &l) in row.iter().zip(&labels.labels) {
        if r < -1.0 {
            return Err(PhaseError::ReturnBelowMinusOne(r));
        }
        match l {
            Phase::Plus => plus *= 1.0 + r,
            Phase::Minus => minus *= 1.0 + r,
        }
    }
    Ok((plus, minus))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub component: Side,
    pub phase: Phase,
    pub n: usize,
    /// `pseudo^(1/n) − 1`; `None` for an empty phase.
    pub geometric_mean: Option<f64>,
    pub arithmetic_mean: Option<f64>,
    pub pseudo_multiple: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTable {
    pub size: usize,
    pub n_plus: usize,
    pub n_minus: usize,
    /// T, B, H, each for plus then minus.
    pub cells: Vec<PhaseCell>,
    /// Compounded hedged multiple over all quarters.
    pub cumulative: f64,
    pub annualized: f64,
}

impl PhaseTable {
    pub fn cell(&self, component: Side, phase: Phase) -> &PhaseCell {
        self.cells
            .iter()
            .find(|c| c.component == component && c.phase == phase)
            .expect("every component and phase is present")
    }
}

pub fn phase_summary(ledger: &BacktestLedger, size: usize, labels: &PhaseLabeling) -> Result<PhaseTable, Error> {
    let mut cells = Vec::with_capacity(6);
    let mut cumulative = 1.0;
    for side in [Side::Top, Side::Bottom, Side::Hedged] {
        let spec = PortfolioSpec::new(side, size).map_err(|_| PhaseError::BadSize(size))?;
        let row = ledger.series(spec);
        let (plus, minus) = pseudo_compound(&row, labels)?;
        if side == Side::Hedged {
            cumulative = plus * minus;
        }
        for (phase, multiple) in [(Phase::Plus, plus), (Phase::Minus, minus)] {
            let members: Vec<f64> = row
                .iter()
                .zip(&labels.labels)
                .filter(|(_, &l)| l == phase)
                .map(|(&r, _)| r)
                .collect();
            let n = members.len();
            if n == 0 {
                warn!("no {} quarters for size {size}; phase means undefined", phase.symbol());
            }
            cells.push(PhaseCell {
                component: side,
                phase,
                n,
                geometric_mean: (n > 0).then(|| multiple.powf(1.0 / n as f64) - 1.0),
                arithmetic_mean: (n > 0).then(|| members.iter().sum::<f64>() / n as f64),
                pseudo_multiple: multiple,
            });
        }
    }
    let annualized = if cumulative > 0.0 {
        annualize(cumulative, labels.len())?
    } else {
        -1.0
    };
    Ok(PhaseTable {
        size,
        n_plus: labels.count(Phase::Plus),
        n_minus: labels.count(Phase::Minus),
        cells,
        cumulative,
        annualized,
    })
}

/// `component,phase,n,mean,pseudo_multiple,cumulative,annualized` rows for
/// each table; `mean` is geometric and empty for an empty phase.
pub fn write_phase_csv<W: Write>(tables: &[PhaseTable], sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["size", "component", "phase", "n", "mean", "pseudo_multiple", "cumulative", "annualized"])?;
    for t in tables {
        for c in &t.cells {
            w.write_record([
                t.size.to_string(),
                c.component.letter().to_string(),
                c.phase.symbol().to_string(),
                c.n.to_string(),
                c.geometric_mean.map(|m| m.to_string()).unwrap_or_default(),
                c.pseudo_multiple.to_string(),
                t.cumulative.to_string(),
                t.annualized.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankProfile {
    /// "T1".."Ts" then "Bs".."B1" (B1 is the last-ranked equity).
    pub rank: String,
    pub plus: f64,
    pub minus: f64,
}

/// Per-quarter returns of the top and bottom `s` rank positions. Rows run
/// top-1..top-s, then bottom-s..bottom-1. A missing change counts as 0.
pub fn rank_return_table(ledger: &BacktestLedger, s: usize) -> Result<Vec<Vec<f64>>, PhaseError> {
    if s == 0 || ledger.ranked_changes.iter().any(|r| r.len() < 2 * s) {
        return Err(PhaseError::BadSize(s));
    }
    let at = |q: &Vec<Option<f64>>, k: usize| q[k].unwrap_or(0.0);
    let mut rows: Vec<Vec<f64>> = (0..s).map(|k| ledger.ranked_changes.iter().map(|q| at(q, k)).collect()).collect();
    rows.extend((0..s).map(|k| ledger.ranked_changes.iter().map(|q| at(q, q.len() - s + k)).collect()));
    Ok(rows)
}

/// Pseudo-compounded plus/minus multiples per rank row (rows laid out as in
/// [`rank_return_table`]).
pub fn per_rank_phase_profile(rank_return_table: &[Vec<f64>], labels: &PhaseLabeling) -> Result<Vec<RankProfile>, PhaseError> {
    if rank_return_table.is_empty() || rank_return_table.len() % 2 != 0 {
        return Err(PhaseError::BadSize(rank_return_table.len()));
    }
    let s = rank_return_table.len() / 2;
    rank_return_table
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let (plus, minus) = pseudo_compound(row, labels)?;
            let rank = if i < s { format!("T{}", i + 1) } else { format!("B{}", 2 * s - i) };
            Ok(RankProfile { rank, plus, minus })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::portfolio::QuarterReturns;
    use proptest::prelude::*;

    fn ledger(h10: &[f64]) -> BacktestLedger {
        let q0: crate::quarter::QuarterLabel = "1995Q1".parse().unwrap();
        BacktestLedger {
            predictor: "test".into(),
            quarters: (0..h10.len() as i64).map(|k| q0.offset(k)).collect(),
            returns: h10
                .iter()
                .map(|&h| QuarterReturns {
                    top: [h / 2.0 + 0.01; 10],
                    bottom: [0.01 - h / 2.0; 10],
                    hedged: [h; 10],
                })
                .collect(),
            universe_mean: vec![0.01; h10.len()],
            rf_annual: 0.06,
            cost_per_side: 0.0,
            orderings: vec![],
            ranked_changes: h10.iter().map(|&h| vec![Some(h), Some(0.0), Some(-h)]).collect(),
        }
    }

    #[test]
    fn classify_examples() {
        let l = classify_quarters(&[0.03, -0.04, 0.007]).unwrap();
        assert_eq!(l.labels, vec![Phase::Plus, Phase::Minus, Phase::Plus]);
        assert_eq!(classify_quarters(&[0.0]).unwrap().labels, vec![Phase::Minus]);
        assert!(classify_quarters(&[]).is_err());
    }

    #[test]
    fn pseudo_examples() {
        let l = classify_quarters(&[1.0, 1.0]).unwrap();
        let (p, m) = pseudo_compound(&[0.1, 0.2], &l).unwrap();
        assert!((p - 1.32).abs() < 1e-15);
        assert_eq!(m, 1.0);
        assert!(pseudo_compound(&[0.1], &l).is_err());
        assert!(pseudo_compound(&[0.1, -1.2], &l).is_err());
        // the displayed 0.21 is 6.98 / 32.72 rounded to two decimals
        assert_eq!((6.98f64 / 32.72 * 100.0).round(), 21.0);
    }

    #[test]
    fn summary_consistency() {
        let h = [0.2, -0.1, 0.05, 0.0, 0.3, -0.25, 0.1];
        let led = ledger(&h);
        let labels = label_ledger(&led, 10).unwrap();
        assert_eq!((labels.count(Phase::Plus), labels.count(Phase::Minus)), (4, 3));
        let t = phase_summary(&led, 10, &labels).unwrap();
        assert_eq!((t.n_plus, t.n_minus), (4, 3));
        let total = crate::portfolio::compound(&h).unwrap();
        assert!((t.cumulative - total).abs() < 1e-12);
        for c in &t.cells {
            let g = c.geometric_mean.unwrap();
            assert!(((1.0 + g).powi(c.n as i32) - c.pseudo_multiple).abs() < 1e-9);
        }
        let mut buf = Vec::new();
        write_phase_csv(&[t], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }

    #[test]
    fn empty_phase_is_flagged() {
        let led = ledger(&[0.1, 0.2]);
        let labels = label_ledger(&led, 10).unwrap();
        let t = phase_summary(&led, 10, &labels).unwrap();
        for side in [Side::Top, Side::Bottom, Side::Hedged] {
            let c = t.cell(side, Phase::Minus);
            assert_eq!(c.pseudo_multiple, 1.0);
            assert!(c.geometric_mean.is_none() && c.arithmetic_mean.is_none());
        }
    }

    #[test]
    fn rank_profile_layout() {
        let led = ledger(&[0.1]);
        let table = rank_return_table(&led, 1).unwrap();
        assert_eq!(table, vec![vec![0.1], vec![-0.1]]);
        let labels = label_ledger(&led, 10).unwrap();
        let prof = per_rank_phase_profile(&table, &labels).unwrap();
        assert_eq!(prof[0].rank, "T1");
        assert_eq!(prof[1].rank, "B1");
        assert!((prof[0].plus - 1.1).abs() < 1e-15 && prof[0].minus == 1.0);
        assert!((prof[1].plus - 0.9).abs() < 1e-15);
        assert!(rank_return_table(&led, 2).is_err());
    }

    proptest! {
        #[test]
        fn partition_identity(row in prop::collection::vec(-0.9f64..1.5, 1..40), signs in prop::collection::vec(-1.0f64..1.0, 40)) {
            let labels = classify_quarters(&signs[..row.len()]).unwrap();
            let (p, m) = pseudo_compound(&row, &labels).unwrap();
            let total = crate::portfolio::compound(&row).unwrap();
            prop_assert!((p * m - total).abs() <= 1e-9 * total.abs().max(1.0));
        }

        #[test]
        fn zero_quarter_relabel_is_neutral(row in prop::collection::vec(-0.5f64..0.5, 2..20), k in 0usize..20) {
            let k = k % row.len();
            let mut row = row;
            row[k] = 0.0;
            let mut labels = classify_quarters(&row).unwrap();
            let before = pseudo_compound(&row, &labels).unwrap();
            labels.labels[k] = Phase::Plus;
            prop_assert_eq!(pseudo_compound(&row, &labels).unwrap(), before);
        }
    }
}

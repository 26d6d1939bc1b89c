//! Quarterly price/earnings panels: CSV ingestion, validation, percentage
//! changes and the earnings-dropout rule.
//!
//! CSV schema (UTF-8, header required):
//!
//! ```text
//! equity_id,quarter,price,earnings
//! ACME,1994Q3,12.50,0.41
//! ACME,1994Q4,13.10,
//! ```
//!
//! An empty `price` marks the equity inactive for that quarter, as does a
//! missing row. An empty `earnings` is a missing earnings report.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::MarketDataError;
use crate::quarter::QuarterLabel;
use crate::rng;
use crate::stats;

/// Earnings whose magnitude exceeds this multiple of the equity's median
/// absolute earnings are flagged as inconsistent.
pub const EARNINGS_OUTLIER_MULTIPLE: f64 = 100.0;

pub const DEFAULT_EXCLUSION_THRESHOLD: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityRecord {
    pub equity_id: String,
    pub prices: Vec<Option<f64>>,
    pub earnings: Vec<Option<f64>>,
    pub active: Vec<bool>,
}

impl EquityRecord {
    /// Builds a record whose active flags follow price presence.
    pub fn new(equity_id: impl Into<String>, prices: Vec<Option<f64>>, earnings: Vec<Option<f64>>) -> Self {
        let active = prices.iter().map(Option::is_some).collect();
        Self {
            equity_id: equity_id.into(),
            prices,
            earnings,
            active,
        }
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataQualityReport {
    pub excluded_ids: Vec<String>,
    pub discrepancy_rates: BTreeMap<String, f64>,
    pub dropout_seed: Option<u64>,
}

/// Immutable panel of aligned quarterly series. Share freely across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterlyPanel {
    pub quarters: Vec<QuarterLabel>,
    pub records: Vec<EquityRecord>,
    pub quality: DataQualityReport,
}

impl QuarterlyPanel {
    /// Checks the structural invariants: contiguous increasing quarters,
    /// conforming record lengths, positive prices, inactive means no price.
    pub fn new(
        quarters: Vec<QuarterLabel>,
        records: Vec<EquityRecord>,
        quality: DataQualityReport,
    ) -> Result<Self, MarketDataError> {
        for w in quarters.windows(2) {
            if w[1] != w[0].next() {
                return Err(MarketDataError::QuarterGap {
                    from: w[0],
                    to: w[1],
                    missing: w[0].next(),
                });
            }
        }
        let n = quarters.len();
        for r in &records {
            if r.prices.len() != n || r.earnings.len() != n || r.active.len() != n {
                return Err(MarketDataError::Validation {
                    equity_id: r.equity_id.clone(),
                    quarter: quarters.first().copied().unwrap_or(QuarterLabel::from_ordinal(0)),
                    message: format!("series length differs from the panel's {n} quarters"),
                });
            }
            for (t, (p, &a)) in r.prices.iter().zip(&r.active).enumerate() {
                match (p, a) {
                    (Some(p), _) if !(*p > 0.0 && p.is_finite()) => {
                        return Err(MarketDataError::Validation {
                            equity_id: r.equity_id.clone(),
                            quarter: quarters[t],
                            message: format!("non-positive price {p}"),
                        })
                    }
                    (Some(_), false) | (None, true) => {
                        return Err(MarketDataError::Validation {
                            equity_id: r.equity_id.clone(),
                            quarter: quarters[t],
                            message: "active flag disagrees with price presence".into(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            quarters,
            records,
            quality,
        })
    }

    pub fn n_quarters(&self) -> usize {
        self.quarters.len()
    }

    pub fn n_equities(&self) -> usize {
        self.records.len()
    }

    pub fn quarter_index(&self, label: QuarterLabel) -> Option<usize> {
        let first = self.quarters.first()?;
        let idx = label.ordinal() - first.ordinal();
        (0..self.quarters.len() as i64).contains(&idx).then_some(idx as usize)
    }

    pub fn require_index(&self, label: QuarterLabel) -> Result<usize, MarketDataError> {
        self.quarter_index(label)
            .ok_or(MarketDataError::UnknownQuarter(label))
    }

    /// Rows active in quarter `t`, in panel order.
    pub fn active_rows(&self, t: usize) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].active[t])
            .collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.equity_id.as_str()).collect()
    }
}

/// Per-row quarterly changes; entry `t` is the change from `t − 1` to `t`
/// (always missing at `t = 0`).
#[derive(Debug, Clone)]
pub struct ChangeTable {
    pub price: Vec<Vec<Option<f64>>>,
    pub earnings: Vec<Vec<Option<f64>>>,
}

impl ChangeTable {
    pub fn from_panel(panel: &QuarterlyPanel) -> Self {
        let shift = |series: &[Option<f64>]| {
            let mut out = Vec::with_capacity(series.len());
            if !series.is_empty() {
                out.push(None);
            }
            if series.len() >= 2 {
                out.extend(quarterly_pct_change(series).expect("length checked"));
            }
            out
        };
        Self {
            price: panel.records.iter().map(|r| shift(&r.prices)).collect(),
            earnings: panel.records.iter().map(|r| shift(&r.earnings)).collect(),
        }
    }
}

/// Fractional change between consecutive entries; missing endpoints and
/// zero bases yield missing output elements.
pub fn quarterly_pct_change(series: &[Option<f64>]) -> Result<Vec<Option<f64>>, MarketDataError> {
    if series.len() < 2 {
        return Err(MarketDataError::TooShort {
            needed: 2,
            got: series.len(),
        });
    }
    Ok(series
        .windows(2)
        .enumerate()
        .map(|(i, w)| match (w[0], w[1]) {
            (Some(base), Some(next)) => {
                if base == 0.0 {
                    warn!("zero base at position {i}; change left missing");
                    None
                } else {
                    Some(next / base - 1.0)
                }
            }
            _ => None,
        })
        .collect())
}

struct Row {
    line: u64,
    equity_id: String,
    quarter: QuarterLabel,
    price: Option<f64>,
    earnings: Option<f64>,
}

fn parse_decimal(field: &str, line: u64, name: &str) -> Result<Option<f64>, MarketDataError> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(MarketDataError::Parse {
            line,
            message: format!("{name} {field:?} is not a finite decimal"),
        }),
    }
}

fn read_rows<R: Read>(source: R) -> Result<Vec<Row>, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header_err = |message: String| MarketDataError::Parse { line: 1, message };
    let headers = reader
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .clone();
    let expected = ["equity_id", "quarter", "price", "earnings"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(header_err(format!(
            "header must be {:?}, got {:?}",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| MarketDataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 4 {
            return Err(MarketDataError::Parse {
                line,
                message: format!("expected 4 fields, found {}", record.len()),
            });
        }
        let equity_id = record[0].to_string();
        if equity_id.is_empty() {
            return Err(MarketDataError::Parse {
                line,
                message: "empty equity_id".into(),
            });
        }
        let quarter: QuarterLabel = record[1].parse().map_err(|e: MarketDataError| MarketDataError::Parse {
            line,
            message: e.to_string(),
        })?;
        rows.push(Row {
            line,
            equity_id,
            quarter,
            price: parse_decimal(&record[2], line, "price")?,
            earnings: parse_decimal(&record[3], line, "earnings")?,
        });
    }
    Ok(rows)
}

/// Fraction of present fields that fail the cross-column consistency rules.
pub fn discrepancy_rate(record: &EquityRecord) -> f64 {
    let present_prices: Vec<f64> = record.prices.iter().flatten().copied().collect();
    let present_earnings: Vec<f64> = record.earnings.iter().flatten().copied().collect();
    let fields = present_prices.len() + present_earnings.len();
    if fields == 0 {
        return 0.0;
    }
    let mut flagged = present_prices.iter().filter(|&&p| p <= 0.0).count();
    if !present_earnings.is_empty() {
        let abs: Vec<f64> = present_earnings.iter().map(|e| e.abs()).collect();
        let med = stats::median(&abs);
        if med > 0.0 {
            flagged += abs
                .iter()
                .filter(|&&e| e > EARNINGS_OUTLIER_MULTIPLE * med)
                .count();
        }
    }
    flagged as f64 / fields as f64
}

/// Reads a panel from CSV, excluding equities whose discrepancy rate exceeds
/// `exclusion_threshold`.
pub fn load_universe<R: Read>(source: R, exclusion_threshold: f64) -> Result<QuarterlyPanel, MarketDataError> {
    if !(0.0..=1.0).contains(&exclusion_threshold) {
        return Err(MarketDataError::FractionOutOfRange {
            name: "exclusion_threshold",
            value: exclusion_threshold,
        });
    }
    let rows = read_rows(source)?;
    if rows.is_empty() {
        return Ok(QuarterlyPanel {
            quarters: Vec::new(),
            records: Vec::new(),
            quality: DataQualityReport::default(),
        });
    }

    let present: BTreeSet<QuarterLabel> = rows.iter().map(|r| r.quarter).collect();
    let first = *present.first().expect("nonempty");
    let last = *present.last().expect("nonempty");
    let quarters: Vec<QuarterLabel> = (first.ordinal()..=last.ordinal())
        .map(QuarterLabel::from_ordinal)
        .collect();
    for w in present.iter().collect::<Vec<_>>().windows(2) {
        if w[1].ordinal() != w[0].ordinal() + 1 {
            return Err(MarketDataError::QuarterGap {
                from: *w[0],
                to: *w[1],
                missing: w[0].next(),
            });
        }
    }

    let n = quarters.len();
    let mut by_id: BTreeMap<String, (Vec<Option<f64>>, Vec<Option<f64>>, Vec<Option<u64>>)> = BTreeMap::new();
    for row in rows {
        let t = (row.quarter.ordinal() - first.ordinal()) as usize;
        let entry = by_id
            .entry(row.equity_id.clone())
            .or_insert_with(|| (vec![None; n], vec![None; n], vec![None; n]));
        if entry.2[t].is_some() {
            return Err(MarketDataError::Duplicate {
                line: row.line,
                equity_id: row.equity_id,
                quarter: row.quarter,
            });
        }
        entry.2[t] = Some(row.line);
        entry.0[t] = row.price;
        entry.1[t] = row.earnings;
    }

    let mut quality = DataQualityReport::default();
    let mut records = Vec::with_capacity(by_id.len());
    for (id, (prices, earnings, _)) in by_id {
        let record = EquityRecord::new(id.clone(), prices, earnings);
        let rate = discrepancy_rate(&record);
        quality.discrepancy_rates.insert(id.clone(), rate);
        if rate > exclusion_threshold {
            quality.excluded_ids.push(id);
            continue;
        }
        records.push(record);
    }
    QuarterlyPanel::new(quarters, records, quality)
}

/// Removes each present earnings value with probability `rate`, and always
/// removes the most recent earnings column. Prices are untouched.
pub fn apply_earnings_dropout(panel: &QuarterlyPanel, rate: f64, seed: u64) -> Result<QuarterlyPanel, MarketDataError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(MarketDataError::FractionOutOfRange { name: "rate", value: rate });
    }
    let mut out = panel.clone();
    let mut rng = rng::stream(seed);
    let last = out.n_quarters().checked_sub(1);
    for record in &mut out.records {
        for (t, e) in record.earnings.iter_mut().enumerate() {
            if e.is_none() {
                continue;
            }
            // one draw per present entry keeps the stream aligned across
            // panels that differ only in values
            let drop = rng.random::<f64>() < rate;
            if drop || Some(t) == last {
                *e = None;
            }
        }
    }
    out.quality.dropout_seed = Some(seed);
    Ok(out)
}

/// Writes a panel in the ingestion CSV schema. Inactive quarters without
/// earnings are omitted.
pub fn write_panel_csv<W: Write>(panel: &QuarterlyPanel, sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["equity_id", "quarter", "price", "earnings"])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in &panel.records {
        for (t, q) in panel.quarters.iter().enumerate() {
            if r.prices[t].is_none() && r.earnings[t].is_none() {
                continue;
            }
            w.write_record([
                r.equity_id.clone(),
                q.to_string(),
                fmt(r.prices[t]),
                fmt(r.earnings[t]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

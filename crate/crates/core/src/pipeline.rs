//! End-to-end runs: load, dropout, backtest, risk, decomposition,
//! persistence and phase analysis, plus report and figure-data output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decomposition::{success_weight_series, write_weights_csv, QuarterWeights};
use crate::error::{Error, PipelineError};
use crate::market_data::{apply_earnings_dropout, load_universe, QuarterlyPanel, DEFAULT_EXCLUSION_THRESHOLD};
use crate::persistence::{self, BinarySeries, Mode, PersistenceResult};
use crate::phase::{self, PhaseTable, RankProfile};
use crate::portfolio::{run_backtest, BacktestLedger, PortfolioSpec, Side, DEFAULT_RF_ANNUAL, SIZES};
use crate::predictors::{AnnConfig, AnnPredictor, MglPredictor, Predictor, RandomPredictor, SearchSpace};
use crate::quarter::QuarterLabel;
use crate::risk::{risk_report, RiskReport};
use crate::rng::derive_seed;

pub const REPORT_FILE: &str = "report.json";
/// Rank positions per side in the per-rank phase profile.
pub const PROFILE_RANKS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PredictorKind {
    Ann,
    Mgl { lag: usize },
    Random,
}

impl FromStr for PredictorKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ann" => Ok(PredictorKind::Ann),
            "mgl" => Ok(PredictorKind::Mgl { lag: 1 }),
            "random" => Ok(PredictorKind::Random),
            _ => s
                .strip_prefix("mgl-lag-")
                .and_then(|k| k.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .map(|lag| PredictorKind::Mgl { lag })
                .ok_or_else(|| PipelineError::UnknownPredictor(s.to_string())),
        }
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PredictorKind::Ann => f.write_str("ann"),
            PredictorKind::Mgl { lag: 1 } => f.write_str("mgl"),
            PredictorKind::Mgl { lag } => write!(f, "mgl-lag-{lag}"),
            PredictorKind::Random => f.write_str("random"),
        }
    }
}

impl From<PredictorKind> for String {
    fn from(k: PredictorKind) -> Self {
        k.to_string()
    }
}

impl TryFrom<String> for PredictorKind {
    type Error = PipelineError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub predictors: Vec<PredictorKind>,
    pub seed: u64,
    /// Defaults to the earliest quarter every predictor can handle.
    pub first_quarter: Option<QuarterLabel>,
    pub last_quarter: Option<QuarterLabel>,
    pub rf_annual: f64,
    pub dropout_rate: f64,
    pub cost_per_side: f64,
    pub exclusion_threshold: f64,
    pub output_dir: PathBuf,
    pub mc_trials: usize,
    pub persistence_scale: usize,
    pub persistence_mode: Mode,
    pub ann: AnnConfig,
    /// Fitness evaluations per quarter for the hyperparameter search; 0
    /// keeps `ann` fixed.
    pub ga_budget: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            predictors: vec![PredictorKind::Ann, PredictorKind::Mgl { lag: 1 }, PredictorKind::Random],
            seed: 0,
            first_quarter: None,
            last_quarter: None,
            rf_annual: DEFAULT_RF_ANNUAL,
            dropout_rate: 0.30,
            cost_per_side: 0.0,
            exclusion_threshold: DEFAULT_EXCLUSION_THRESHOLD,
            output_dir: PathBuf::from("out"),
            mc_trials: persistence::DEFAULT_TRIALS,
            persistence_scale: 1,
            persistence_mode: Mode::Pattern,
            ann: AnnConfig::default(),
            ga_budget: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.predictors.is_empty() {
            return bad("no predictors selected".into());
        }
        if !(self.rf_annual >= 0.0) {
            return bad(format!("rf_annual {} must be non-negative", self.rf_annual));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate {} outside [0, 1]", self.dropout_rate));
        }
        if !(self.cost_per_side >= 0.0) {
            return bad(format!("transaction cost {} must be non-negative", self.cost_per_side));
        }
        if self.mc_trials < persistence::MIN_TRIALS {
            return bad(format!("mc trials {} < {}", self.mc_trials, persistence::MIN_TRIALS));
        }
        if self.persistence_scale == 0 {
            return bad("persistence scale must be at least 1".into());
        }
        if self.ga_budget > 0 && self.ga_budget < 16 {
            return bad(format!("ga budget {} is below the population size 16", self.ga_budget));
        }
        self.ann.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    pub fn dropout_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    pub fn predictor_seed(&self, kind: PredictorKind) -> u64 {
        match kind {
            PredictorKind::Ann => derive_seed(self.seed, 2),
            PredictorKind::Random => derive_seed(self.seed, 3),
            PredictorKind::Mgl { .. } => 0,
        }
    }

    pub fn mc_seed(&self) -> u64 {
        derive_seed(self.seed, 4)
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        out.insert("run".into(), self.seed);
        out.insert("dropout".into(), self.dropout_seed());
        out.insert("ann".into(), self.predictor_seed(PredictorKind::Ann));
        out.insert("random".into(), self.predictor_seed(PredictorKind::Random));
        out.insert("monte_carlo".into(), self.mc_seed());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub n_equities: usize,
    pub panel_quarters: (QuarterLabel, QuarterLabel),
    pub excluded_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSummary {
    pub portfolio: String,
    pub cumulative: f64,
    pub annualized: f64,
    pub annualized_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub quarter: QuarterLabel,
    pub config: AnnConfig,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceSection {
    pub success: Option<PersistenceResult>,
    /// Squared correlation of success flags with the universe mean.
    pub market_r_squared: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorReport {
    pub predictor: String,
    pub summary: Vec<PortfolioSummary>,
    pub ledger: BacktestLedger,
    pub training: Vec<TrainingRecord>,
    pub risk: Option<RiskReport>,
    pub weights: Option<Vec<QuarterWeights>>,
    pub persistence: Option<PersistenceSection>,
    pub phase_tables: Option<Vec<PhaseTable>>,
    pub rank_profile: Option<Vec<RankProfile>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub provenance: Provenance,
    pub config: RunConfig,
    pub quarters: Vec<QuarterLabel>,
    pub predictors: Vec<PredictorReport>,
    /// Persistence of the up/down direction of the universe mean.
    pub market_persistence: Option<PersistenceResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Backtest,
    Analyze,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
        .into()
    }
}

pub fn read_panel(path: &Path, exclusion_threshold: f64) -> Result<QuarterlyPanel, Error> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(load_universe(BufReader::new(file), exclusion_threshold)?)
}

fn build_predictor(kind: PredictorKind, config: &RunConfig) -> Box<dyn Predictor> {
    match kind {
        PredictorKind::Ann => {
            let mut p = AnnPredictor::new(AnnConfig {
                seed: config.predictor_seed(kind),
                ..config.ann.clone()
            });
            if config.ga_budget > 0 {
                p.search = Some((SearchSpace::default(), config.ga_budget));
            }
            Box::new(p)
        }
        PredictorKind::Mgl { lag } => Box::new(MglPredictor { lag }),
        PredictorKind::Random => Box::new(RandomPredictor {
            seed: config.predictor_seed(kind),
        }),
    }
}

fn first_index(kind: PredictorKind) -> usize {
    match kind {
        PredictorKind::Ann => AnnPredictor::new(AnnConfig::default()).first_index(),
        PredictorKind::Mgl { lag } => lag + 1,
        PredictorKind::Random => 1,
    }
}

fn summarize(ledger: &BacktestLedger) -> Result<Vec<PortfolioSummary>, Error> {
    PortfolioSpec::all()
        .into_iter()
        .map(|spec| {
            let cumulative = ledger.compounded(spec)?;
            let annualized = if cumulative > 0.0 { ledger.annualized(spec)? } else { -1.0 };
            Ok(PortfolioSummary {
                portfolio: spec.label(),
                cumulative,
                annualized,
                annualized_excess: annualized - ledger.rf_annual,
            })
        })
        .collect()
}

fn analyze_ledger(report: &mut PredictorReport, config: &RunConfig) -> Result<(), Error> {
    let ledger = &report.ledger;
    report.risk = Some(risk_report(ledger)?);

    let weights = success_weight_series(&ledger.quarters, &ledger.ranked_changes)?;
    let (flags, market): (Vec<bool>, Vec<f64>) = weights
        .iter()
        .zip(&ledger.universe_mean)
        .filter_map(|(w, &m)| w.success().map(|s| (s, m)))
        .unzip();
    if flags.len() < weights.len() {
        warn!("{}: {} quarters without mixture weights left out of the success series", report.predictor, weights.len() - flags.len());
    }
    let mut section = PersistenceSection {
        success: None,
        market_r_squared: None,
    };
    if let Ok(series) = BinarySeries::new(flags, format!("{} success flags", report.predictor)) {
        match persistence::analyze(&series, config.persistence_scale, config.persistence_mode, config.mc_trials, config.mc_seed()) {
            Ok(r) => section.success = Some(r),
            Err(e) => warn!("{}: success persistence unavailable: {e}", report.predictor),
        }
        match persistence::success_market_correlation(&series, &market) {
            Ok(r2) => section.market_r_squared = Some(r2),
            Err(e) => warn!("{}: success/market correlation unavailable: {e}", report.predictor),
        }
    }
    report.weights = Some(weights);
    report.persistence = Some(section);

    let mut tables = Vec::with_capacity(SIZES.len());
    for &size in &SIZES {
        let labels = phase::label_ledger(ledger, size)?;
        tables.push(phase::phase_summary(ledger, size, &labels)?);
    }
    report.phase_tables = Some(tables);
    let labels = phase::label_ledger(ledger, PROFILE_RANKS)?;
    let table = phase::rank_return_table(ledger, PROFILE_RANKS)?;
    report.rank_profile = Some(phase::per_rank_phase_profile(&table, &labels)?);
    Ok(())
}

/// Runs the pipeline up to `stage` and returns the report; nothing is
/// written.
pub fn run_pipeline(config: &RunConfig, stage: Stage) -> Result<AnalysisReport, Error> {
    config.validate()?;
    let raw = read_panel(&config.input, config.exclusion_threshold)?;
    run_pipeline_on(config, &raw, stage)
}

pub fn run_pipeline_on(config: &RunConfig, raw: &QuarterlyPanel, stage: Stage) -> Result<AnalysisReport, Error> {
    config.validate()?;
    if raw.n_quarters() == 0 {
        return Err(PipelineError::InvalidConfig("input panel is empty".into()).into());
    }
    let panel = apply_earnings_dropout(raw, config.dropout_rate, config.dropout_seed())?;
    let earliest = config.predictors.iter().map(|&k| first_index(k)).max().expect("nonempty");
    let first = match config.first_quarter {
        Some(q) => q,
        None => *panel.quarters.get(earliest).ok_or_else(|| {
            PipelineError::InvalidConfig(format!(
                "panel has {} quarters; the selected predictors need more than {earliest}",
                panel.n_quarters()
            ))
        })?,
    };
    let last = config.last_quarter.unwrap_or(*panel.quarters.last().expect("nonempty"));

    let mut predictors = Vec::new();
    for &kind in &config.predictors {
        info!("backtesting {kind} over {first}..={last}");
        let mut predictor = build_predictor(kind, config);
        let ledger = run_backtest(&panel, predictor.as_mut(), first, last, config.rf_annual, config.cost_per_side)?;
        let training = match kind {
            PredictorKind::Ann => {
                // recover the per-quarter training history
                let ann = predictor_history(predictor.as_ref());
                ann.into_iter()
                    .map(|(quarter, config, validation_loss)| TrainingRecord {
                        quarter,
                        config,
                        validation_loss,
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        let mut report = PredictorReport {
            predictor: kind.to_string(),
            summary: summarize(&ledger)?,
            ledger,
            training,
            risk: None,
            weights: None,
            persistence: None,
            phase_tables: None,
            rank_profile: None,
        };
        if stage == Stage::Analyze {
            info!("analyzing {kind}");
            analyze_ledger(&mut report, config)?;
        }
        predictors.push(report);
    }

    let quarters = predictors[0].ledger.quarters.clone();
    let market_persistence = if stage == Stage::Analyze {
        let up: Vec<bool> = predictors[0].ledger.universe_mean.iter().map(|&m| m > 0.0).collect();
        BinarySeries::new(up, "universe direction")
            .ok()
            .and_then(|s| persistence::analyze(&s, config.persistence_scale, config.persistence_mode, config.mc_trials, config.mc_seed()).ok())
    } else {
        None
    };
    Ok(AnalysisReport {
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seeds: config.seeds(),
            n_equities: panel.n_equities(),
            panel_quarters: (panel.quarters[0], *panel.quarters.last().expect("nonempty")),
            excluded_ids: panel.quality.excluded_ids.clone(),
        },
        config: config.clone(),
        quarters,
        predictors,
        market_persistence,
    })
}

fn predictor_history(p: &dyn Predictor) -> Vec<(QuarterLabel, AnnConfig, f64)> {
    p.training_history().to_vec()
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<Vec<u8>, Error> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(PipelineError::from)?;
    Ok(buf)
}

pub fn report_to_json(report: &AnalysisReport) -> Result<String, Error> {
    Ok(serde_json::to_string_pretty(report).map_err(PipelineError::from)?)
}

pub fn read_report(path: &Path) -> Result<AnalysisReport, Error> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(serde_json::from_reader(BufReader::new(file)).map_err(PipelineError::from)?)
}

/// Writes the report, per-predictor CSVs and every figure the report can
/// supply. Returns the written paths.
pub fn write_outputs(report: &AnalysisReport, dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<(), Error> {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    put(REPORT_FILE.into(), report_to_json(report)?.into_bytes())?;
    for p in &report.predictors {
        put(format!("ledger_{}.csv", p.predictor), csv_bytes(|b| p.ledger.write_csv(b))?)?;
        if let Some(w) = &p.weights {
            put(format!("weights_{}.csv", p.predictor), csv_bytes(|b| write_weights_csv(w, b))?)?;
        }
        if let Some(t) = &p.phase_tables {
            put(format!("phase_{}.csv", p.predictor), csv_bytes(|b| phase::write_phase_csv(t, b))?)?;
        }
    }
    for figure in Figure::ALL {
        match emit_figure_data(report, figure, &FigureOptions::default()) {
            Ok(bytes) => put(format!("fig_{figure}.csv"), bytes)?,
            Err(Error::Pipeline(PipelineError::MissingSection { .. })) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Figure {
    CdReturns,
    WSuccess,
    PhaseProfile,
    Butterfly,
    Sharpe,
    Alpha,
}

impl Figure {
    pub const ALL: [Figure; 6] = [
        Figure::CdReturns,
        Figure::WSuccess,
        Figure::PhaseProfile,
        Figure::Butterfly,
        Figure::Sharpe,
        Figure::Alpha,
    ];
}

impl FromStr for Figure {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Figure::ALL
            .into_iter()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| PipelineError::UnknownFigure(s.to_string()))
    }
}

impl std::fmt::Display for Figure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Figure::CdReturns => "cd-returns",
            Figure::WSuccess => "w-success",
            Figure::PhaseProfile => "phase-profile",
            Figure::Butterfly => "butterfly",
            Figure::Sharpe => "sharpe",
            Figure::Alpha => "alpha",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FigureOptions {
    /// Butterfly predictor; defaults to the first in the report.
    pub predictor: Option<String>,
    /// Butterfly quarter; defaults to the last analysis quarter.
    pub quarter: Option<QuarterLabel>,
}

fn missing(section: &'static str) -> Error {
    PipelineError::MissingSection { section, stage: "analyze" }.into()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV data behind one figure.
pub fn emit_figure_data(report: &AnalysisReport, figure: Figure, options: &FigureOptions) -> Result<Vec<u8>, Error> {
    let preds = &report.predictors;
    let names: Vec<&str> = preds.iter().map(|p| p.predictor.as_str()).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut row = |cells: Vec<String>| w.write_record(&cells).map_err(PipelineError::from);
    match figure {
        Figure::CdReturns => {
            row(std::iter::once("cd".to_string()).chain(names.iter().map(|n| n.to_string())).collect())?;
            for &size in &SIZES {
                let spec = PortfolioSpec { side: Side::Hedged, size };
                let mut cells = vec![size.to_string()];
                for p in preds {
                    let v = p.ledger.annualized_excess(spec).ok();
                    cells.push(fmt_opt(v));
                }
                row(cells)?;
            }
        }
        Figure::WSuccess => {
            let weights: Vec<&Vec<QuarterWeights>> = preds.iter().map(|p| p.weights.as_ref().ok_or_else(|| missing("weights"))).collect::<Result<_, _>>()?;
            row(std::iter::once("quarter".to_string()).chain(names.iter().map(|n| n.to_string())).collect())?;
            for (k, q) in report.quarters.iter().enumerate() {
                let mut cells = vec![q.to_string()];
                for w in &weights {
                    cells.push(fmt_opt(w.get(k).and_then(|x| x.weights).map(|m| m.w_success)));
                }
                row(cells)?;
            }
        }
        Figure::PhaseProfile => {
            let profiles: Vec<&Vec<RankProfile>> = preds.iter().map(|p| p.rank_profile.as_ref().ok_or_else(|| missing("rank_profile"))).collect::<Result<_, _>>()?;
            let mut header = vec!["rank".to_string()];
            for n in &names {
                header.push(format!("{n}_plus"));
                header.push(format!("{n}_minus"));
            }
            row(header)?;
            for k in 0..profiles[0].len() {
                let mut cells = vec![profiles[0][k].rank.clone()];
                for p in &profiles {
                    cells.push(p[k].plus.to_string());
                    cells.push(p[k].minus.to_string());
                }
                row(cells)?;
            }
        }
        Figure::Butterfly => {
            let pred = match &options.predictor {
                Some(name) => preds
                    .iter()
                    .find(|p| &p.predictor == name)
                    .ok_or_else(|| PipelineError::UnknownPredictor(name.clone()))?,
                None => &preds[0],
            };
            let k = match options.quarter {
                Some(q) => pred
                    .ledger
                    .quarters
                    .iter()
                    .position(|&x| x == q)
                    .ok_or_else(|| PipelineError::InvalidConfig(format!("quarter {q} is not in the ledger")))?,
                None => pred.ledger.len() - 1,
            };
            row(vec!["predicted_position".into(), "actual_change".into()])?;
            for (p, c) in pred.ledger.ranked_changes[k].iter().enumerate() {
                row(vec![(p + 1).to_string(), fmt_opt(*c)])?;
            }
        }
        Figure::Sharpe => {
            let risks: Vec<&RiskReport> = preds.iter().map(|p| p.risk.as_ref().ok_or_else(|| missing("risk"))).collect::<Result<_, _>>()?;
            row(std::iter::once("cd".to_string()).chain(names.iter().map(|n| n.to_string())).chain(["universe".to_string()]).collect())?;
            for &size in &SIZES {
                let spec = PortfolioSpec { side: Side::Hedged, size };
                let mut cells = vec![size.to_string()];
                for r in &risks {
                    cells.push(fmt_opt(r.get(spec).and_then(|x| x.sharpe)));
                }
                cells.push(fmt_opt(risks[0].market_sharpe));
                row(cells)?;
            }
        }
        Figure::Alpha => {
            let risks: Vec<&RiskReport> = preds.iter().map(|p| p.risk.as_ref().ok_or_else(|| missing("risk"))).collect::<Result<_, _>>()?;
            let mut header = vec!["cd".to_string()];
            for n in &names {
                header.push(n.to_string());
                header.push(format!("{n}_fit"));
            }
            row(header)?;
            for &size in &SIZES {
                let spec = PortfolioSpec { side: Side::Hedged, size };
                let mut cells = vec![size.to_string()];
                for r in &risks {
                    cells.push(fmt_opt(r.get(spec).map(|x| x.alpha)));
                    cells.push(fmt_opt(r.power_fit.as_ref().map(|f| f.a * (size as f64).powf(f.b))));
                }
                row(cells)?;
            }
        }
    }
    w.into_inner().map_err(|e| PipelineError::Io {
        path: "<figure buffer>".into(),
        source: std::io::Error::other(e.to_string()),
    }.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictor_names() {
        assert_eq!("ann".parse::<PredictorKind>().unwrap(), PredictorKind::Ann);
        assert_eq!("mgl".parse::<PredictorKind>().unwrap(), PredictorKind::Mgl { lag: 1 });
        assert_eq!("mgl-lag-3".parse::<PredictorKind>().unwrap(), PredictorKind::Mgl { lag: 3 });
        assert_eq!(PredictorKind::Mgl { lag: 3 }.to_string(), "mgl-lag-3");
        for bad in ["svm", "mgl-lag-0", "mgl-lag-x", ""] {
            assert!(matches!(bad.parse::<PredictorKind>(), Err(PipelineError::UnknownPredictor(_))));
        }
    }

    #[test]
    fn figure_names_round_trip() {
        for f in Figure::ALL {
            assert_eq!(f.to_string().parse::<Figure>().unwrap(), f);
        }
        assert!("scatter".parse::<Figure>().is_err());
    }

    #[test]
    fn config_hash_is_stable() {
        let a = RunConfig::default();
        assert_eq!(a.hash(), RunConfig::default().hash());
        let b = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig { rf_annual: -0.01, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { predictors: vec![], ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { mc_trials: 10, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { ga_budget: 8, ..RunConfig::default() }.validate().is_err());
    }

    fn small_market() -> QuarterlyPanel {
        crate::simulation::generate_market(&crate::simulation::SyntheticConfig {
            n_equities: 240,
            n_quarters: 24,
            seed: 5,
            ..Default::default()
        })
        .unwrap()
        .panel
    }

    fn quick_config() -> RunConfig {
        RunConfig {
            predictors: vec![PredictorKind::Mgl { lag: 1 }, PredictorKind::Random],
            mc_trials: 2000,
            ..RunConfig::default()
        }
    }

    #[test]
    fn analyze_fills_every_section() {
        let report = run_pipeline_on(&quick_config(), &small_market(), Stage::Analyze).unwrap();
        assert_eq!(report.predictors.len(), 2);
        assert_eq!(report.quarters.len(), 22);
        for p in &report.predictors {
            assert_eq!(p.summary.len(), 30);
            assert!(p.risk.is_some() && p.weights.is_some() && p.persistence.is_some());
            assert_eq!(p.phase_tables.as_ref().unwrap().len(), SIZES.len());
            assert_eq!(p.rank_profile.as_ref().unwrap().len(), 2 * PROFILE_RANKS);
        }
        for f in Figure::ALL {
            assert!(emit_figure_data(&report, f, &FigureOptions::default()).is_ok(), "{f}");
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let panel = small_market();
        let a = report_to_json(&run_pipeline_on(&quick_config(), &panel, Stage::Analyze).unwrap()).unwrap();
        let b = report_to_json(&run_pipeline_on(&quick_config(), &panel, Stage::Analyze).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn backtest_report_lacks_analysis_sections() {
        let report = run_pipeline_on(&quick_config(), &small_market(), Stage::Backtest).unwrap();
        assert!(emit_figure_data(&report, Figure::CdReturns, &FigureOptions::default()).is_ok());
        let err = emit_figure_data(&report, Figure::WSuccess, &FigureOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Pipeline(PipelineError::MissingSection { stage: "analyze", .. })));
    }

    #[test]
    fn outputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_pipeline_on(&quick_config(), &small_market(), Stage::Analyze).unwrap();
        let written = write_outputs(&report, dir.path()).unwrap();
        assert!(written.iter().any(|p| p.ends_with("fig_alpha.csv")));
        let back = read_report(&dir.path().join(REPORT_FILE)).unwrap();
        assert_eq!(report_to_json(&back).unwrap(), report_to_json(&report).unwrap());
    }

    #[test]
    fn butterfly_options() {
        let report = run_pipeline_on(&quick_config(), &small_market(), Stage::Backtest).unwrap();
        let q = report.quarters[3];
        let opts = FigureOptions {
            predictor: Some("random".into()),
            quarter: Some(q),
        };
        let csv = String::from_utf8(emit_figure_data(&report, Figure::Butterfly, &opts).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 241);
        let bad = FigureOptions {
            predictor: Some("svm".into()),
            quarter: None,
        };
        assert!(emit_figure_data(&report, Figure::Butterfly, &bad).is_err());
    }
}

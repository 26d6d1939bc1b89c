use thiserror::Error;

use crate::quarter::QuarterLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error, qualified by the module that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("market-data: {0}")]
    MarketData(#[from] MarketDataError),
    #[error("ranking-core: {0}")]
    Ranking(#[from] RankingError),
    #[error("predictors: {0}")]
    Predictor(#[from] PredictorError),
    #[error("portfolio-engine: {0}")]
    Portfolio(#[from] PortfolioError),
    #[error("risk-metrics: {0}")]
    Risk(#[from] RiskError),
    #[error("decomposition: {0}")]
    Decomposition(#[from] DecompositionError),
    #[error("persistence: {0}")]
    Persistence(#[from] PersistenceError),
    #[error("phase-analysis: {0}")]
    Phase(#[from] PhaseError),
    #[error("simulation: {0}")]
    Simulation(#[from] SimulationError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: duplicate row for equity {equity_id} in quarter {quarter}")]
    Duplicate {
        line: u64,
        equity_id: String,
        quarter: QuarterLabel,
    },
    #[error("equity {equity_id}, quarter {quarter}: {message}")]
    Validation {
        equity_id: String,
        quarter: QuarterLabel,
        message: String,
    },
    #[error("quarter labels are not contiguous: {missing} missing between {from} and {to}")]
    QuarterGap {
        from: QuarterLabel,
        to: QuarterLabel,
        missing: QuarterLabel,
    },
    #[error("invalid quarter label {0:?} (expected YYYYQn)")]
    BadQuarter(String),
    #[error("{name} = {value} outside [0, 1]")]
    FractionOutOfRange { name: &'static str, value: f64 },
    #[error("unknown quarter {0}")]
    UnknownQuarter(QuarterLabel),
    #[error("input too short: need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("cross-section has no present values")]
    AllMissing,
    #[error("bin assignment needs at least 5 equities, got {0}")]
    TooFewForBins(usize),
    #[error("length mismatch: {0} scores but {1} ids")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("insufficient history for {target}: first usable quarter is {first_usable}")]
    InsufficientHistory {
        target: QuarterLabel,
        first_usable: QuarterLabel,
    },
    #[error("lag {lag} from {target} reaches before the panel start")]
    LagBeforeStart { target: QuarterLabel, lag: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training needs exactly {expected} quarters, got {got}")]
    TrainingWindow { expected: usize, got: usize },
    #[error("training quarter {0} has no targets")]
    MissingTargets(QuarterLabel),
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty universe")]
    EmptyUniverse,
    #[error("empty search space: {0}")]
    EmptySearchSpace(String),
    #[error("budget {budget} is smaller than the population size {population}")]
    BudgetTooSmall { budget: usize, population: usize },
    #[error("model document: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    MarketData(#[from] MarketDataError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("universe of {0} equities is smaller than the 200 needed for disjoint T100/B100")]
    UniverseTooSmall(usize),
    #[error("return {0} is below -1")]
    ReturnBelowMinusOne(f64),
    #[error("portfolio has no member with an actual change")]
    EmptyPortfolio,
    #[error("invalid portfolio size {0} (must be 10, 20, ..., 100)")]
    BadSize(usize),
    #[error("annualize needs a positive multiple and at least one quarter (multiple {multiple}, quarters {quarters})")]
    BadAnnualize { multiple: f64, quarters: usize },
    #[error("quarter {quarter}: {source}")]
    Quarter {
        quarter: QuarterLabel,
        #[source]
        source: Box<Error>,
    },
    #[error("quarter range {first}..={last} is empty or outside the panel")]
    BadRange {
        first: QuarterLabel,
        last: QuarterLabel,
    },
}

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("market variance is zero")]
    ZeroMarketVariance,
    #[error("strategy variance is zero")]
    ZeroVariance,
    #[error("only {0} positive alphas; a power-law fit needs at least 3")]
    TooFewPositive(usize),
}

#[derive(Debug, Error)]
pub enum DecompositionError {
    #[error("need at least 10 points, got {0}")]
    TooShort(usize),
    #[error("no convergence after {iterations} iterations (c0={c0}, c1={c1}, s={s}, gradient norm {gradient_norm:e})")]
    NoConvergence {
        iterations: usize,
        c0: f64,
        c1: f64,
        s: f64,
        gradient_norm: f64,
    },
    #[error("correct and incorrect curves coincide; mixture weight is undetermined")]
    Degenerate,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("series of length {len} is too short for scale {scale}")]
    TooShort { len: usize, scale: usize },
    #[error("no pattern recurs with a continuation; the measure is undefined")]
    Undefined,
    #[error("scale must be at least 1")]
    ZeroScale,
    #[error("at least 1000 trials required, got {0}")]
    TooFewTrials(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
}

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error("empty return series")]
    Empty,
    #[error("row length {row} differs from label count {labels}")]
    LengthMismatch { row: usize, labels: usize },
    #[error("return {0} is below -1")]
    ReturnBelowMinusOne(f64),
    #[error("invalid portfolio size {0}")]
    BadSize(usize),
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("orderings differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error("orderings cover different equity sets")]
    SetMismatch,
    #[error("churn simulation needs at least 14 equities, got {0}")]
    TooFewEquities(usize),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown predictor {0:?} (expected ann, mgl, mgl-lag-k or random)")]
    UnknownPredictor(String),
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("report has no {section} section; run the {stage} stage first")]
    MissingSection {
        section: &'static str,
        stage: &'static str,
    },
    #[error("unknown figure {0:?}")]
    UnknownFigure(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

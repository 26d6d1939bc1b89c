use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use rankfolio::decomposition as dec;
use rankfolio::persistence::{self, BinarySeries, Mode};
use rankfolio::pipeline::{self as pl, Figure, FigureOptions, PredictorKind, RunConfig, Stage};
use rankfolio::quarter::QuarterLabel;
use rankfolio::{portfolio, ranking, risk, simulation};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (json,))
}

fn mode(s: &str) -> PyResult<Mode> {
    s.parse().map_err(err)
}

#[pyfunction]
fn annualize(multiple: f64, quarters: usize) -> PyResult<f64> {
    portfolio::annualize(multiple, quarters).map_err(err)
}

#[pyfunction]
fn compound(returns: Vec<f64>) -> PyResult<f64> {
    portfolio::compound(&returns).map_err(err)
}

#[pyfunction]
fn hedged_return(top: f64, bottom: f64) -> f64 {
    portfolio::hedged_return(top, bottom)
}

#[pyfunction]
fn excess_return(annual: f64, rf_annual: f64) -> f64 {
    portfolio::excess_return(annual, rf_annual)
}

#[pyfunction]
fn zero_centered_rank(values: Vec<Option<f64>>) -> PyResult<Vec<f64>> {
    ranking::zero_centered_rank(&values).map_err(err)
}

#[pyfunction]
fn vl_bin_counts(n: usize) -> PyResult<[usize; 5]> {
    ranking::vl_bin_counts(n).map_err(err)
}

#[pyfunction]
fn beta(strategy: Vec<f64>, market: Vec<f64>) -> PyResult<f64> {
    risk::beta_of(&strategy, &market).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (strategy, market, rf_annual = 0.06))]
fn jensen_alpha(strategy: Vec<f64>, market: Vec<f64>, rf_annual: f64) -> PyResult<f64> {
    risk::jensen_alpha(&strategy, &market, rf_annual / 4.0).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (returns, rf_annual = 0.06))]
fn sharpe(returns: Vec<f64>, rf_annual: f64) -> PyResult<f64> {
    risk::sharpe(&returns, rf_annual).map_err(err)
}

/// Returns (a, b, r_squared) of `alpha = a·cd^b` over the ten hedged alphas.
#[pyfunction]
fn fit_power_law(alphas: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let f = risk::fit_power_law(&alphas).map_err(err)?;
    Ok((f.a, f.b, f.r_squared))
}

#[pyclass(frozen, skip_from_py_object, name = "ArcTanhFit")]
#[derive(Clone)]
struct PyArcTanhFit {
    inner: dec::ArcTanhFit,
}

#[pymethods]
impl PyArcTanhFit {
    #[getter]
    fn c0(&self) -> f64 {
        self.inner.c0
    }
    #[getter]
    fn c1(&self) -> f64 {
        self.inner.c1
    }
    #[getter]
    fn s(&self) -> f64 {
        self.inner.s
    }
    #[getter]
    fn r_squared(&self) -> f64 {
        self.inner.r_squared
    }
    fn value(&self, r: usize) -> f64 {
        self.inner.value(r)
    }
    fn curve(&self, n: usize) -> Vec<f64> {
        self.inner.curve(n)
    }
    fn __repr__(&self) -> String {
        let f = &self.inner;
        format!("ArcTanhFit(c0={}, c1={}, s={}, r_squared={})", f.c0, f.c1, f.s, f.r_squared)
    }
}

#[pyfunction]
fn fit_arctanh(ordered_changes: Vec<f64>) -> PyResult<PyArcTanhFit> {
    dec::fit_arctanh(&ordered_changes).map(|inner| PyArcTanhFit { inner }).map_err(err)
}

/// Returns (theta1, theta2, ci95, w_success).
#[pyfunction]
fn decompose_weights(actual: Vec<f64>, correct: &PyArcTanhFit, incorrect: &PyArcTanhFit) -> PyResult<(f64, f64, f64, f64)> {
    let w = dec::decompose_weights(&actual, &correct.inner, &incorrect.inner).map_err(err)?;
    Ok((w.theta1, w.theta2, w.ci95, w.w_success))
}

#[pyfunction]
#[pyo3(signature = (bits, scale = 1, mode = "pattern"))]
fn persistence_measure(bits: Vec<u8>, scale: usize, mode: &str) -> PyResult<f64> {
    let series = BinarySeries::from_bits(&bits, "python").map_err(err)?;
    persistence::persistence_measure(&series, scale, self::mode(mode)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (observed, length, scale = 1, mode = "pattern", trials = 100_000, seed = 0))]
fn mc_pvalue(py: Python<'_>, observed: f64, length: usize, scale: usize, mode: &str, trials: usize, seed: u64) -> PyResult<f64> {
    let mode = self::mode(mode)?;
    py.detach(|| persistence::mc_pvalue(observed, length, scale, mode, trials, seed)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (n_equities, weeks, noise_scale, drift = 0.0, seed = 0))]
fn simulate_bin_churn<'py>(py: Python<'py>, n_equities: usize, weeks: usize, noise_scale: f64, drift: f64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let sampler = if drift > 0.0 {
        simulation::ChangeSampler::Gaussian { sd: drift }
    } else {
        simulation::ChangeSampler::None
    };
    let report = py
        .detach(|| simulation::simulate_bin_churn(n_equities, weeks, sampler, noise_scale, seed))
        .map_err(err)?;
    to_py(py, &report)
}

#[pyclass(frozen, name = "SyntheticMarket")]
struct PySyntheticMarket {
    inner: simulation::SyntheticMarket,
}

#[pymethods]
impl PySyntheticMarket {
    #[getter]
    fn n_equities(&self) -> usize {
        self.inner.panel.n_equities()
    }
    #[getter]
    fn n_quarters(&self) -> usize {
        self.inner.panel.n_quarters()
    }
    #[getter]
    fn quarters(&self) -> Vec<String> {
        self.inner.panel.quarters.iter().map(|q| q.to_string()).collect()
    }
    /// Rows by descending realized return for quarter index `t`.
    fn truth(&self, t: usize) -> PyResult<Vec<usize>> {
        self.inner.truth.get(t).cloned().ok_or_else(|| err(format!("no quarter {t}")))
    }
    /// Writes `panel.csv` and `truth.csv` into `dir`.
    fn write(&self, dir: PathBuf) -> PyResult<()> {
        let mut panel = Vec::new();
        rankfolio::market_data::write_panel_csv(&self.inner.panel, &mut panel).map_err(err)?;
        pl::write_atomic(&dir.join("panel.csv"), &panel).map_err(err)?;
        let mut truth = Vec::new();
        self.inner.write_truth_csv(&mut truth).map_err(err)?;
        pl::write_atomic(&dir.join("truth.csv"), &truth).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (n_equities = 1452, n_quarters = 40, signal_strength = 0.5, signal_lag = 1, phase_flips = Vec::new(), noise_scale = 1.0, earnings_coupling = 1.0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn generate_market(
    n_equities: usize,
    n_quarters: usize,
    signal_strength: f64,
    signal_lag: usize,
    phase_flips: Vec<usize>,
    noise_scale: f64,
    earnings_coupling: f64,
    seed: u64,
) -> PyResult<PySyntheticMarket> {
    let config = simulation::SyntheticConfig {
        n_equities,
        n_quarters,
        signal_strength,
        signal_lag,
        phase_flip_quarters: phase_flips.into_iter().collect(),
        noise_scale,
        earnings_coupling,
        seed,
    };
    simulation::generate_market(&config).map(|inner| PySyntheticMarket { inner }).map_err(err)
}

#[pyclass(frozen, name = "AnalysisReport")]
struct PyReport {
    inner: pl::AnalysisReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn predictors(&self) -> Vec<String> {
        self.inner.predictors.iter().map(|p| p.predictor.clone()).collect()
    }
    #[getter]
    fn quarters(&self) -> Vec<String> {
        self.inner.quarters.iter().map(|q| q.to_string()).collect()
    }
    #[getter]
    fn config_hash(&self) -> String {
        self.inner.provenance.config_hash.clone()
    }
    /// (portfolio label, annualized excess return) pairs for one predictor.
    fn annualized_excess(&self, predictor: &str) -> PyResult<Vec<(String, f64)>> {
        let p = self
            .inner
            .predictors
            .iter()
            .find(|p| p.predictor == predictor)
            .ok_or_else(|| err(format!("no predictor {predictor:?} in report")))?;
        Ok(p.summary.iter().map(|s| (s.portfolio.clone(), s.annualized_excess)).collect())
    }
    #[pyo3(signature = (figure, predictor = None, quarter = None))]
    fn figure(&self, figure: &str, predictor: Option<String>, quarter: Option<&str>) -> PyResult<String> {
        let figure: Figure = figure.parse().map_err(err)?;
        let quarter = quarter.map(|q| q.parse::<QuarterLabel>()).transpose().map_err(err)?;
        let bytes = pl::emit_figure_data(&self.inner, figure, &FigureOptions { predictor, quarter }).map_err(err)?;
        String::from_utf8(bytes).map_err(err)
    }
    fn to_json(&self) -> PyResult<String> {
        pl::report_to_json(&self.inner).map_err(err)
    }
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
    /// Writes the report, ledgers and figure data into `dir`.
    fn write(&self, dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        pl::write_outputs(&self.inner, &dir).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (input, predictors = vec!["ann".to_string(), "mgl".to_string(), "random".to_string()], seed = 0, stage = "analyze", rf_annual = 0.06, dropout_rate = 0.30, cost_per_side = 0.0, mc_trials = 100_000))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline(
    py: Python<'_>,
    input: PathBuf,
    predictors: Vec<String>,
    seed: u64,
    stage: &str,
    rf_annual: f64,
    dropout_rate: f64,
    cost_per_side: f64,
    mc_trials: usize,
) -> PyResult<PyReport> {
    let predictors = predictors.iter().map(|p| p.parse::<PredictorKind>()).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let stage = match stage {
        "backtest" => Stage::Backtest,
        "analyze" => Stage::Analyze,
        other => return Err(err(format!("unknown stage {other:?} (expected backtest or analyze)"))),
    };
    let config = RunConfig {
        input,
        predictors,
        seed,
        rf_annual,
        dropout_rate,
        cost_per_side,
        mc_trials,
        ..RunConfig::default()
    };
    let inner = py.detach(|| pl::run_pipeline(&config, stage)).map_err(err)?;
    Ok(PyReport { inner })
}

#[pyfunction]
fn read_report(path: PathBuf) -> PyResult<PyReport> {
    pl::read_report(&path).map(|inner| PyReport { inner }).map_err(err)
}

#[pymodule]
#[pyo3(name = "rankfolio")]
fn rankfolio_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyArcTanhFit>()?;
    m.add_class::<PySyntheticMarket>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(annualize, m)?)?;
    m.add_function(wrap_pyfunction!(compound, m)?)?;
    m.add_function(wrap_pyfunction!(hedged_return, m)?)?;
    m.add_function(wrap_pyfunction!(excess_return, m)?)?;
    m.add_function(wrap_pyfunction!(zero_centered_rank, m)?)?;
    m.add_function(wrap_pyfunction!(vl_bin_counts, m)?)?;
    m.add_function(wrap_pyfunction!(beta, m)?)?;
    m.add_function(wrap_pyfunction!(jensen_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(sharpe, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power_law, m)?)?;
    m.add_function(wrap_pyfunction!(fit_arctanh, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_weights, m)?)?;
    m.add_function(wrap_pyfunction!(persistence_measure, m)?)?;
    m.add_function(wrap_pyfunction!(mc_pvalue, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_bin_churn, m)?)?;
    m.add_function(wrap_pyfunction!(generate_market, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(read_report, m)?)?;
    Ok(())
}

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use rankfolio::market_data::{write_panel_csv, DataQualityReport, DEFAULT_EXCLUSION_THRESHOLD};
use rankfolio::persistence::Mode;
use rankfolio::pipeline::{
    emit_figure_data, read_panel, read_report, run_pipeline, write_atomic, write_outputs, Figure, FigureOptions, PredictorKind,
    RunConfig, Stage,
};
use rankfolio::predictors::AnnConfig;
use rankfolio::quarter::QuarterLabel;
use rankfolio::rng::derive_seed;
use rankfolio::simulation::{generate_market, simulate_bin_churn, ChangeSampler, ChurnReport, SyntheticConfig};

#[derive(Parser)]
#[command(name = "rankfolio", version, about = "Equity rank prediction backtests and diagnostics")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a raw panel CSV and write the cleaned panel plus a quality report.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EXCLUSION_THRESHOLD)]
        exclusion_threshold: f64,
    },
    /// Generate a synthetic market with a planted ranking signal.
    Synth(SynthArgs),
    /// Run backtests only.
    Backtest(RunArgs),
    /// Run backtests and every downstream analysis.
    Analyze(RunArgs),
    /// Emit figure data from an existing report.
    Figures {
        #[arg(long)]
        report: PathBuf,
        /// One of cd-returns, w-success, phase-profile, butterfly, sharpe, alpha; all when omitted.
        #[arg(long)]
        figure: Option<Figure>,
        #[arg(long)]
        output_dir: PathBuf,
        /// Butterfly predictor.
        #[arg(long)]
        predictor: Option<String>,
        /// Butterfly quarter, e.g. 2001Q3.
        #[arg(long)]
        quarter: Option<QuarterLabel>,
    },
    /// Monte Carlo of five-bin churn under score noise.
    ChurnMc(ChurnArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 1452)]
    equities: usize,
    #[arg(long, default_value_t = 40)]
    quarters: usize,
    #[arg(long, default_value_t = 0.5)]
    signal: f64,
    #[arg(long, default_value_t = 1)]
    lag: usize,
    /// Quarter indices where the signal changes sign.
    #[arg(long, value_delimiter = ',')]
    flips: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    coupling: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output_dir: PathBuf,
    /// ann, mgl, mgl-lag-K or random; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', default_values_t = [PredictorKind::Ann, PredictorKind::Mgl { lag: 1 }, PredictorKind::Random])]
    predictor: Vec<PredictorKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    first_quarter: Option<QuarterLabel>,
    #[arg(long)]
    last_quarter: Option<QuarterLabel>,
    #[arg(long, default_value_t = 0.06)]
    rf_annual: f64,
    #[arg(long, default_value_t = 0.30)]
    dropout_rate: f64,
    /// Flat cost per side per rebalance, as a fraction.
    #[arg(long, default_value_t = 0.0)]
    cost: f64,
    #[arg(long, default_value_t = DEFAULT_EXCLUSION_THRESHOLD)]
    exclusion_threshold: f64,
    #[arg(long, default_value_t = rankfolio::persistence::DEFAULT_TRIALS)]
    mc_trials: usize,
    #[arg(long, default_value_t = 1)]
    persistence_scale: usize,
    #[arg(long, default_value_t = Mode::Pattern)]
    persistence_mode: Mode,
    #[arg(long)]
    hidden_units: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    init_count: Option<usize>,
    /// Per-quarter hyperparameter search budget; 0 disables the search.
    #[arg(long, default_value_t = 0)]
    ga_budget: usize,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        let d = AnnConfig::default();
        RunConfig {
            input: self.input.clone(),
            predictors: self.predictor.clone(),
            seed: self.seed,
            first_quarter: self.first_quarter,
            last_quarter: self.last_quarter,
            rf_annual: self.rf_annual,
            dropout_rate: self.dropout_rate,
            cost_per_side: self.cost,
            exclusion_threshold: self.exclusion_threshold,
            output_dir: self.output_dir.clone(),
            mc_trials: self.mc_trials,
            persistence_scale: self.persistence_scale,
            persistence_mode: self.persistence_mode,
            ann: AnnConfig {
                hidden_units: self.hidden_units.unwrap_or(d.hidden_units),
                learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
                epochs: self.epochs.unwrap_or(d.epochs),
                init_count: self.init_count.unwrap_or(d.init_count),
                ..d
            },
            ga_budget: self.ga_budget,
        }
    }
}

#[derive(Args)]
struct ChurnArgs {
    #[arg(long, default_value_t = 1452)]
    equities: usize,
    #[arg(long, default_value_t = 52)]
    weeks: usize,
    /// Observation noise levels, in mean neighbour spacings.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.25, 0.5, 1.0])]
    noise: Vec<f64>,
    /// Weekly drift of the underlying scores, in mean neighbour spacings.
    #[arg(long, default_value_t = 0.0)]
    drift: f64,
    /// Student-t drift with this many degrees of freedom instead of Gaussian.
    #[arg(long)]
    drift_df: Option<f64>,
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON output; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct ChurnPoint {
    noise_scale: f64,
    mean_churn_fraction: f64,
    mean_two_rank_jump_rate: f64,
    runs: Vec<(u64, ChurnReport)>,
}

#[derive(Serialize)]
struct ChurnOutput {
    equities: usize,
    weeks: usize,
    sampler: ChangeSampler,
    points: Vec<ChurnPoint>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    write_atomic(path, json.as_bytes())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Ingest {
            input,
            output_dir,
            exclusion_threshold,
        } => {
            let panel = read_panel(&input, exclusion_threshold)?;
            let mut buf = Vec::new();
            write_panel_csv(&panel, &mut buf).context("serializing panel")?;
            write_atomic(&output_dir.join("panel.csv"), &buf)?;
            let quality: &DataQualityReport = &panel.quality;
            write_json(&output_dir.join("quality.json"), quality)?;
            println!(
                "{} equities over {} quarters; {} excluded",
                panel.n_equities(),
                panel.n_quarters(),
                quality.excluded_ids.len()
            );
        }
        Command::Synth(a) => {
            let config = SyntheticConfig {
                n_equities: a.equities,
                n_quarters: a.quarters,
                signal_strength: a.signal,
                signal_lag: a.lag,
                phase_flip_quarters: a.flips.iter().copied().collect::<BTreeSet<_>>(),
                noise_scale: a.noise,
                earnings_coupling: a.coupling,
                seed: a.seed,
            };
            let market = generate_market(&config).map_err(rankfolio::error::Error::from)?;
            let mut panel = Vec::new();
            write_panel_csv(&market.panel, &mut panel).context("serializing panel")?;
            write_atomic(&a.output_dir.join("panel.csv"), &panel)?;
            let mut truth = Vec::new();
            market.write_truth_csv(&mut truth).context("serializing truth")?;
            write_atomic(&a.output_dir.join("truth.csv"), &truth)?;
            write_json(&a.output_dir.join("synth_config.json"), &config)?;
            println!("wrote {}", a.output_dir.display());
        }
        Command::Backtest(a) => run_stage(&a, Stage::Backtest)?,
        Command::Analyze(a) => run_stage(&a, Stage::Analyze)?,
        Command::Figures {
            report,
            figure,
            output_dir,
            predictor,
            quarter,
        } => {
            let report = read_report(&report)?;
            let options = FigureOptions { predictor, quarter };
            let figures = figure.map_or(Figure::ALL.to_vec(), |f| vec![f]);
            for f in figures {
                let bytes = emit_figure_data(&report, f, &options)?;
                let path = output_dir.join(format!("fig_{f}.csv"));
                write_atomic(&path, &bytes)?;
                println!("{}", path.display());
            }
        }
        Command::ChurnMc(a) => {
            let sampler = match (a.drift, a.drift_df) {
                (d, _) if d == 0.0 => ChangeSampler::None,
                (d, Some(df)) => ChangeSampler::StudentT { df, scale: d },
                (d, None) => ChangeSampler::Gaussian { sd: d },
            };
            let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| derive_seed(a.seed, i)).collect();
            let mut points = Vec::new();
            for &noise in &a.noise {
                let runs = seeds
                    .par_iter()
                    .map(|&s| simulate_bin_churn(a.equities, a.weeks, sampler, noise, s).map(|r| (s, r)))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(rankfolio::error::Error::from)?;
                let n = runs.len().max(1) as f64;
                points.push(ChurnPoint {
                    noise_scale: noise,
                    mean_churn_fraction: runs.iter().map(|(_, r)| r.churn_fraction).sum::<f64>() / n,
                    mean_two_rank_jump_rate: runs.iter().map(|(_, r)| r.two_rank_jump_rate).sum::<f64>() / n,
                    runs,
                });
            }
            let out = ChurnOutput {
                equities: a.equities,
                weeks: a.weeks,
                sampler,
                points,
            };
            match a.output {
                Some(path) => write_json(&path, &out)?,
                None => println!("{}", serde_json::to_string_pretty(&out)?),
            }
        }
    }
    Ok(())
}

fn run_stage(args: &RunArgs, stage: Stage) -> Result<()> {
    let config = args.config();
    let report = run_pipeline(&config, stage)?;
    let written = write_outputs(&report, &config.output_dir)?;
    info!("wrote {} files", written.len());
    for p in &report.predictors {
        if let Some(h100) = p.summary.iter().find(|s| s.portfolio == "H100") {
            println!("{:<10} H100 annualized excess {:+.4}", p.predictor, h100.annualized_excess);
        }
    }
    println!("report: {}", config.output_dir.join(rankfolio::pipeline::REPORT_FILE).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their source text
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

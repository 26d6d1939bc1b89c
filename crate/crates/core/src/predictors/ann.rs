//! Elman-style recurrent network ensemble.
//!
//! Each member is a single-hidden-layer network (tanh hidden, linear output)
//! whose input is the 20 rank features plus a per-equity context vector: the
//! equity's hidden activation from the previous quarter scaled by
//! `context_decay`. Members are trained by online backpropagation on squared
//! error with the context treated as a fixed input. Predictions are
//! aggregated by mean position across members.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{FeatureMatrix, N_FEATURES, N_LAGS};
use crate::error::PredictorError;
use crate::quarter::QuarterLabel;
use crate::ranking::{positions, rank_from_scores};
use crate::rng;
use crate::stats;

pub const TRAINING_QUARTERS: usize = N_LAGS;
pub const VALIDATION_QUARTERS: usize = 2;
pub const MODEL_FORMAT_VERSION: u32 = 1;

const PATIENCE: usize = 3;
const MIN_RELATIVE_IMPROVEMENT: f64 = 1e-4;
const WINSOR_LOW: f64 = 0.01;
const WINSOR_HIGH: f64 = 0.99;
const ERROR_CLIP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnConfig {
    pub hidden_units: usize,
    pub learning_rate: f64,
    /// Upper bound on training epochs; early stopping may use fewer.
    pub epochs: usize,
    pub context_decay: f64,
    /// Ensemble size.
    pub init_count: usize,
    pub seed: u64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        Self {
            hidden_units: 6,
            learning_rate: 5e-4,
            epochs: 30,
            context_decay: 0.5,
            init_count: 5,
            seed: 0,
        }
    }
}

impl AnnConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: String| Err(PredictorError::InvalidConfig(m));
        if !(2..=16).contains(&self.hidden_units) {
            return bad(format!("hidden_units {} outside [2, 16]", self.hidden_units));
        }
        if !(1e-4..=1e-1).contains(&self.learning_rate) {
            return bad(format!("learning_rate {} outside [1e-4, 1e-1]", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.context_decay) {
            return bad(format!("context_decay {} outside [0, 1]", self.context_decay));
        }
        if self.init_count == 0 {
            return bad("init_count must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// One network. `w_in` is row-major `(N_FEATURES + hidden) × hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub hidden_units: usize,
    pub w_in: Vec<f64>,
    pub b_hidden: Vec<f64>,
    /// `hidden × 1`
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl Network {
    fn random<R: Rng>(hidden: usize, rng: &mut R) -> Self {
        let fan_in = (N_FEATURES + hidden) as f64;
        let a = 1.0 / fan_in.sqrt();
        let b = 1.0 / (hidden as f64).sqrt();
        Self {
            hidden_units: hidden,
            w_in: (0..(N_FEATURES + hidden) * hidden)
                .map(|_| rng.random_range(-a..a))
                .collect(),
            b_hidden: vec![0.0; hidden],
            w_out: (0..hidden).map(|_| rng.random_range(-b..b)).collect(),
            b_out: 0.0,
        }
    }

    fn input_width(&self) -> usize {
        N_FEATURES + self.hidden_units
    }

    fn check_dims(&self) -> bool {
        let h = self.hidden_units;
        self.w_in.len() == (N_FEATURES + h) * h && self.b_hidden.len() == h && self.w_out.len() == h
    }

    /// Writes hidden activations into `hidden` and returns the output.
    fn forward(&self, x: &[f64; N_FEATURES], context: &[f64], hidden: &mut [f64]) -> f64 {
        let h = self.hidden_units;
        hidden.copy_from_slice(&self.b_hidden);
        for (i, &xi) in x.iter().chain(context).enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w_in[i * h..(i + 1) * h];
            for (acc, w) in hidden.iter_mut().zip(row) {
                *acc += xi * w;
            }
        }
        let mut y = self.b_out;
        for (a, w) in hidden.iter_mut().zip(&self.w_out) {
            *a = a.tanh();
            y += *a * w;
        }
        y
    }

    fn sgd_step(&mut self, x: &[f64; N_FEATURES], context: &[f64], hidden: &[f64], err: f64, lr: f64) {
        let h = self.hidden_units;
        let err = err.clamp(-ERROR_CLIP, ERROR_CLIP);
        let mut dz = vec![0.0; h];
        for j in 0..h {
            dz[j] = err * self.w_out[j] * (1.0 - hidden[j] * hidden[j]);
            self.w_out[j] -= lr * err * hidden[j];
        }
        self.b_out -= lr * err;
        for (i, &xi) in x.iter().chain(context).enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut self.w_in[i * h..(i + 1) * h];
            for (w, d) in row.iter_mut().zip(&dz) {
                *w -= lr * xi * d;
            }
        }
        for (b, d) in self.b_hidden.iter_mut().zip(&dz) {
            *b -= lr * d;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub network: Network,
    /// Hidden activation of each equity in the last training quarter.
    pub context: BTreeMap<String, Vec<f64>>,
    pub validation_loss: f64,
    pub epochs_trained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub format_version: u32,
    pub config: AnnConfig,
    pub members: Vec<EnsembleMember>,
    pub train_window: (QuarterLabel, QuarterLabel),
    pub validation_quarters: Vec<QuarterLabel>,
    /// Outputs are trained on standardized targets; these undo it.
    pub target_mean: f64,
    pub target_scale: f64,
    /// Every winsorized training target was equal; members output that constant.
    pub degenerate_targets: bool,
}

impl EnsembleModel {
    pub fn validation_loss(&self) -> f64 {
        stats::mean(&self.members.iter().map(|m| m.validation_loss).collect::<Vec<_>>())
    }

    pub fn to_json(&self) -> Result<String, PredictorError> {
        serde_json::to_string_pretty(self).map_err(|e| PredictorError::ModelFormat(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, PredictorError> {
        let model: Self = serde_json::from_str(text).map_err(|e| PredictorError::ModelFormat(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(PredictorError::ModelFormat(format!(
                "unsupported format version {}",
                model.format_version
            )));
        }
        model.config.validate()?;
        for m in &model.members {
            if !m.network.check_dims() || m.network.hidden_units != model.config.hidden_units {
                return Err(PredictorError::ModelFormat("weight array dimensions do not match the config".into()));
            }
        }
        Ok(model)
    }
}

fn winsorize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = stats::quantile_sorted(&sorted, WINSOR_LOW);
    let hi = stats::quantile_sorted(&sorted, WINSOR_HIGH);
    for v in values {
        *v = v.clamp(lo, hi);
    }
}

/// Per-quarter standardized targets and the scaling used.
struct PreparedTargets {
    per_quarter: Vec<Vec<Option<f64>>>,
    mean: f64,
    scale: f64,
    degenerate: bool,
}

fn prepare_targets(quarters: &[FeatureMatrix], is_train: &[bool]) -> PreparedTargets {
    let mut per_quarter: Vec<Vec<Option<f64>>> = Vec::with_capacity(quarters.len());
    for fm in quarters {
        let mut present: Vec<f64> = fm.target.iter().flatten().copied().collect();
        winsorize(&mut present);
        let mut it = present.into_iter();
        per_quarter.push(fm.target.iter().map(|t| t.map(|_| it.next().expect("same count"))).collect());
    }
    let pooled: Vec<f64> = per_quarter
        .iter()
        .zip(is_train)
        .filter(|(_, &tr)| tr)
        .flat_map(|(q, _)| q.iter().flatten().copied())
        .collect();
    let mean = stats::mean(&pooled);
    let sd = stats::population_std(&pooled);
    let degenerate = !(sd > 1e-12 * mean.abs().max(1.0));
    let scale = if degenerate { 1.0 } else { sd };
    for q in &mut per_quarter {
        for v in q.iter_mut().flatten() {
            *v = (*v - mean) / scale;
        }
    }
    PreparedTargets {
        per_quarter,
        mean,
        scale,
        degenerate,
    }
}

/// Random a-priori split of the training window: `true` marks a training quarter.
fn split_quarters(n: usize, seed: u64) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::task_stream(seed, u64::MAX));
    let mut is_train = vec![true; n];
    for &i in idx.iter().take(VALIDATION_QUARTERS.min(n.saturating_sub(1))) {
        is_train[i] = false;
    }
    is_train
}

/// Dense index for panel rows appearing anywhere in the window.
fn row_slots(quarters: &[FeatureMatrix]) -> usize {
    quarters
        .iter()
        .flat_map(|fm| fm.rows.iter().copied())
        .max()
        .map_or(0, |m| m + 1)
}

/// Runs the network over the window in time order. Training quarters get
/// online updates when `train` is set; returns the validation mean squared
/// error and the hidden state after the last quarter.
fn run_window<R: Rng>(
    net: &mut Network,
    quarters: &[FeatureMatrix],
    targets: &PreparedTargets,
    is_train: &[bool],
    decay: f64,
    lr: f64,
    mut train: Option<&mut R>,
) -> (f64, Vec<Option<Vec<f64>>>) {
    let h = net.hidden_units;
    let slots = row_slots(quarters);
    let mut prev: Vec<Option<Vec<f64>>> = vec![None; slots];
    let mut val_sse = 0.0;
    let mut val_n = 0usize;
    let mut hidden = vec![0.0; h];
    let mut context = vec![0.0; h];
    for (k, fm) in quarters.iter().enumerate() {
        let mut next: Vec<Option<Vec<f64>>> = vec![None; slots];
        let mut order: Vec<usize> = (0..fm.len()).collect();
        let updating = is_train[k] && train.is_some();
        if updating {
            if let Some(r) = train.as_deref_mut() {
                order.shuffle(r);
            }
        }
        for i in order {
            let row = fm.rows[i];
            match &prev[row] {
                Some(p) => context.iter_mut().zip(p).for_each(|(c, v)| *c = decay * v),
                None => context.fill(0.0),
            }
            let y = net.forward(&fm.features[i], &context, &mut hidden);
            next[row] = Some(hidden.clone());
            if let Some(t) = targets.per_quarter[k][i] {
                let err = y - t;
                if updating {
                    net.sgd_step(&fm.features[i], &context, &hidden, err, lr);
                } else if !is_train[k] {
                    val_sse += err * err;
                    val_n += 1;
                }
            }
        }
        prev = next;
    }
    let val = if val_n > 0 { val_sse / val_n as f64 } else { f64::NAN };
    (val, prev)
}

fn train_member(
    quarters: &[FeatureMatrix],
    targets: &PreparedTargets,
    is_train: &[bool],
    config: &AnnConfig,
    member: usize,
) -> EnsembleMember {
    let mut rng = rng::task_stream(config.seed, member as u64);
    let mut net = Network::random(config.hidden_units, &mut rng);
    let decay = config.context_decay;
    let lr = config.learning_rate;

    let mut epochs_trained = 0;
    let mut best: Option<(f64, Network, usize)> = None;
    if targets.degenerate {
        net.w_out.fill(0.0);
        net.b_out = 0.0;
    } else {
        let mut stale = 0;
        for epoch in 1..=config.epochs {
            run_window(&mut net, quarters, targets, is_train, decay, lr, Some(&mut rng));
            let (val, _) = run_window::<rng::StreamRng>(&mut net, quarters, targets, is_train, decay, lr, None);
            let val = if val.is_finite() { val } else { f64::INFINITY };
            match &best {
                Some((b, _, _)) if !(val < b * (1.0 - MIN_RELATIVE_IMPROVEMENT)) => {
                    stale += 1;
                    if stale >= PATIENCE {
                        break;
                    }
                }
                _ => {
                    best = Some((val, net.clone(), epoch));
                    stale = 0;
                }
            }
        }
    }
    let validation_loss = match best {
        Some((loss, best_net, epoch)) => {
            net = best_net;
            epochs_trained = epoch;
            loss
        }
        None => run_window::<rng::StreamRng>(&mut net, quarters, targets, is_train, decay, lr, None).0,
    };
    let (_, state) = run_window::<rng::StreamRng>(&mut net, quarters, targets, is_train, decay, lr, None);
    let last = quarters.last().expect("window is nonempty");
    let context = last
        .rows
        .iter()
        .zip(&last.ids)
        .filter_map(|(&r, id)| state[r].clone().map(|h| (id.clone(), h)))
        .collect();
    EnsembleMember {
        network: net,
        context,
        validation_loss,
        epochs_trained,
    }
}

/// Trains `config.init_count` members on ten consecutive quarters of features
/// with targets, in chronological order.
pub fn ann_train(training: &[FeatureMatrix], config: &AnnConfig) -> Result<EnsembleModel, PredictorError> {
    config.validate()?;
    if training.len() != TRAINING_QUARTERS {
        return Err(PredictorError::TrainingWindow {
            expected: TRAINING_QUARTERS,
            got: training.len(),
        });
    }
    for fm in training {
        if fm.target.iter().all(Option::is_none) {
            return Err(PredictorError::MissingTargets(fm.quarter));
        }
    }
    let is_train = split_quarters(training.len(), config.seed);
    let targets = prepare_targets(training, &is_train);
    let members: Vec<EnsembleMember> = (0..config.init_count)
        .into_par_iter()
        .map(|m| train_member(training, &targets, &is_train, config, m))
        .collect();
    Ok(EnsembleModel {
        format_version: MODEL_FORMAT_VERSION,
        config: config.clone(),
        members,
        train_window: (training[0].quarter, training[training.len() - 1].quarter),
        validation_quarters: training
            .iter()
            .zip(&is_train)
            .filter(|(_, &t)| !t)
            .map(|(fm, _)| fm.quarter)
            .collect(),
        target_mean: targets.mean,
        target_scale: targets.scale,
        degenerate_targets: targets.degenerate,
    })
}

/// Raw predicted fractional changes, one vector per member.
pub fn member_scores(model: &EnsembleModel, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>, PredictorError> {
    let mut out = Vec::with_capacity(model.members.len());
    for member in &model.members {
        let net = &member.network;
        if net.input_width() != N_FEATURES + model.config.hidden_units || !net.check_dims() {
            return Err(PredictorError::DimensionMismatch {
                expected: N_FEATURES + model.config.hidden_units,
                got: net.input_width(),
            });
        }
        let h = net.hidden_units;
        let mut hidden = vec![0.0; h];
        let mut context = vec![0.0; h];
        let scores = features
            .features
            .iter()
            .zip(&features.ids)
            .map(|(x, id)| {
                match member.context.get(id) {
                    Some(p) => context
                        .iter_mut()
                        .zip(p)
                        .for_each(|(c, v)| *c = model.config.context_decay * v),
                    None => context.fill(0.0),
                }
                model.target_mean + model.target_scale * net.forward(x, &context, &mut hidden)
            })
            .collect();
        out.push(scores);
    }
    Ok(out)
}

/// Aggregates member scores by mean position. Returns indices into the
/// cross-section, best first; ties go to the smaller id.
pub fn aggregate_by_position(member_scores: &[Vec<f64>], ids: &[&str]) -> Result<Vec<usize>, PredictorError> {
    let n = ids.len();
    let mut position_sum = vec![0u64; n];
    for scores in member_scores {
        let ordering = rank_from_scores(scores, ids)?;
        for (i, p) in positions(&ordering).into_iter().enumerate() {
            position_sum[i] += p as u64;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| position_sum[a].cmp(&position_sum[b]).then_with(|| ids[a].cmp(ids[b])));
    Ok(idx)
}

/// Predicted ordering of the feature rows, as panel row indices, best first.
pub fn ann_predict(model: &EnsembleModel, features: &FeatureMatrix) -> Result<Vec<usize>, PredictorError> {
    if let Some(x) = features.features.first() {
        if x.len() != N_FEATURES {
            return Err(PredictorError::DimensionMismatch {
                expected: N_FEATURES,
                got: x.len(),
            });
        }
    }
    let scores = member_scores(model, features)?;
    let order = aggregate_by_position(&scores, &features.id_refs())?;
    Ok(order.into_iter().map(|i| features.rows[i]).collect())
}

//! Generational genetic search over network hyperparameters.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ann::AnnConfig;
use crate::error::PredictorError;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub hidden_units: (usize, usize),
    /// Sampled log-uniformly.
    pub learning_rate: (f64, f64),
    pub epochs: (usize, usize),
    pub context_decay: (f64, f64),
    /// Not searched.
    pub init_count: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            hidden_units: (2, 12),
            learning_rate: (1e-4, 1e-2),
            epochs: (5, 40),
            context_decay: (0.0, 0.9),
            init_count: 3,
        }
    }
}

impl SearchSpace {
    pub fn single(config: &AnnConfig) -> Self {
        Self {
            hidden_units: (config.hidden_units, config.hidden_units),
            learning_rate: (config.learning_rate, config.learning_rate),
            epochs: (config.epochs, config.epochs),
            context_decay: (config.context_decay, config.context_decay),
            init_count: config.init_count,
        }
    }

    fn validate(&self) -> Result<(), PredictorError> {
        let empty = |m: &str| Err(PredictorError::EmptySearchSpace(m.to_string()));
        if self.hidden_units.0 > self.hidden_units.1 || self.hidden_units.1 < 2 || self.hidden_units.0 > 16 {
            return empty("hidden_units");
        }
        let (lo, hi) = self.learning_rate;
        if !(lo <= hi) || hi < 1e-4 || lo > 1e-1 {
            return empty("learning_rate");
        }
        if self.epochs.0 > self.epochs.1 || self.epochs.1 == 0 {
            return empty("epochs");
        }
        let (lo, hi) = self.context_decay;
        if !(lo <= hi) || hi < 0.0 || lo > 1.0 {
            return empty("context_decay");
        }
        if self.init_count == 0 {
            return empty("init_count");
        }
        Ok(())
    }

    /// Bounds intersected with the valid configuration ranges.
    fn clamped(&self) -> Self {
        Self {
            hidden_units: (self.hidden_units.0.max(2), self.hidden_units.1.min(16)),
            learning_rate: (self.learning_rate.0.max(1e-4), self.learning_rate.1.min(1e-1)),
            epochs: (self.epochs.0.max(1), self.epochs.1),
            context_decay: (self.context_decay.0.max(0.0), self.context_decay.1.min(1.0)),
            init_count: self.init_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaSettings {
    pub population: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: usize,
    pub generations: usize,
}

impl Default for GaSettings {
    fn default() -> Self {
        Self {
            population: 16,
            tournament_size: 3,
            crossover_rate: 0.5,
            mutation_rate: 0.1,
            elitism: 1,
            generations: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Genome {
    hidden_units: usize,
    learning_rate: f64,
    epochs: usize,
    context_decay: f64,
}

impl Genome {
    fn key(&self) -> (usize, u64, usize, u64) {
        (
            self.hidden_units,
            self.learning_rate.to_bits(),
            self.epochs,
            self.context_decay.to_bits(),
        )
    }

    fn to_config(self, space: &SearchSpace, seed: u64) -> AnnConfig {
        AnnConfig {
            hidden_units: self.hidden_units,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            context_decay: self.context_decay,
            init_count: space.init_count,
            seed,
        }
    }
}

fn resample<R: Rng>(space: &SearchSpace, g: &mut Genome, gene: usize, rng: &mut R) {
    match gene {
        0 => g.hidden_units = rng.random_range(space.hidden_units.0..=space.hidden_units.1),
        1 => {
            let (lo, hi) = (space.learning_rate.0.ln(), space.learning_rate.1.ln());
            g.learning_rate = if lo == hi { space.learning_rate.0 } else { rng.random_range(lo..=hi).exp() };
        }
        2 => g.epochs = rng.random_range(space.epochs.0..=space.epochs.1),
        _ => {
            let (lo, hi) = space.context_decay;
            g.context_decay = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        }
    }
}

fn random_genome<R: Rng>(space: &SearchSpace, rng: &mut R) -> Genome {
    let mut g = Genome {
        hidden_units: 0,
        learning_rate: 0.0,
        epochs: 0,
        context_decay: 0.0,
    };
    for gene in 0..4 {
        resample(space, &mut g, gene, rng);
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaOutcome {
    pub best: AnnConfig,
    pub best_fitness: f64,
    pub evaluations: usize,
    /// Every distinct configuration evaluated, in evaluation order.
    pub evaluated: Vec<(AnnConfig, f64)>,
}

/// Minimizes `fitness` over the search space. Identical genomes are
/// evaluated once; the number of fitness calls never exceeds `budget`.
pub fn genetic_search<F>(
    space: &SearchSpace,
    settings: &GaSettings,
    budget: usize,
    seed: u64,
    fitness: F,
) -> Result<GaOutcome, PredictorError>
where
    F: Fn(&AnnConfig) -> f64 + Sync,
{
    space.validate()?;
    let space = space.clamped();
    if budget < settings.population {
        return Err(PredictorError::BudgetTooSmall {
            budget,
            population: settings.population,
        });
    }
    let mut rng = rng::task_stream(seed, 0x6A);
    let model_seed = rng::derive_seed(seed, 0x6B);
    let mut cache: HashMap<(usize, u64, usize, u64), f64> = HashMap::new();
    let mut evaluated: Vec<(AnnConfig, f64)> = Vec::new();

    // Scores `genomes`, spending at most the remaining budget on new ones.
    // Unaffordable genomes are dropped.
    let score = |genomes: Vec<Genome>, cache: &mut HashMap<_, f64>, evaluated: &mut Vec<(AnnConfig, f64)>| {
        let mut fresh: Vec<Genome> = Vec::new();
        for g in &genomes {
            if !cache.contains_key(&g.key()) && !fresh.iter().any(|f| f.key() == g.key()) {
                fresh.push(*g);
            }
        }
        fresh.truncate(budget - evaluated.len());
        let results: Vec<f64> = fresh
            .par_iter()
            .map(|g| {
                let f = fitness(&g.to_config(&space, model_seed));
                if f.is_nan() {
                    f64::INFINITY
                } else {
                    f
                }
            })
            .collect();
        for (g, f) in fresh.iter().zip(results) {
            cache.insert(g.key(), f);
            evaluated.push((g.to_config(&space, model_seed), f));
        }
        genomes
            .into_iter()
            .filter_map(|g| cache.get(&g.key()).map(|&f| (g, f)))
            .collect::<Vec<(Genome, f64)>>()
    };

    let initial: Vec<Genome> = (0..settings.population).map(|_| random_genome(&space, &mut rng)).collect();
    let mut population = score(initial, &mut cache, &mut evaluated);

    for _ in 1..settings.generations {
        if evaluated.len() >= budget || population.is_empty() {
            break;
        }
        population.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut next: Vec<Genome> = population.iter().take(settings.elitism).map(|p| p.0).collect();
        let pick = |rng: &mut rng::StreamRng| {
            (0..settings.tournament_size)
                .map(|_| &population[rng.random_range(0..population.len())])
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("tournament is nonempty")
                .0
        };
        while next.len() < settings.population {
            let a = pick(&mut rng);
            let b = pick(&mut rng);
            let mut child = a;
            if rng.random::<f64>() < settings.crossover_rate {
                // uniform crossover: each gene from either parent
                if rng.random::<bool>() {
                    child.hidden_units = b.hidden_units;
                }
                if rng.random::<bool>() {
                    child.learning_rate = b.learning_rate;
                }
                if rng.random::<bool>() {
                    child.epochs = b.epochs;
                }
                if rng.random::<bool>() {
                    child.context_decay = b.context_decay;
                }
            }
            for gene in 0..4 {
                if rng.random::<f64>() < settings.mutation_rate {
                    resample(&space, &mut child, gene, &mut rng);
                }
            }
            next.push(child);
        }
        population = score(next, &mut cache, &mut evaluated);
    }

    let (best, best_fitness) = evaluated
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("at least one evaluation");
    Ok(GaOutcome {
        best,
        best_fitness,
        evaluations: evaluated.len(),
        evaluated,
    })
}

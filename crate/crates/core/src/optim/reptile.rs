use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::log::{EarlyStopping, EpisodeLog, EpisodeRecord, LogUnit};
use super::{check_fit_inputs, evaluate, inner_train, FitOutcome, ShuffleStream, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::ParameterSet;

/// `θ + α(θ′ − θ)`, elementwise.
///
/// `α = 0` returns `θ` and `α = 1` returns `θ′`, both bit for bit.
pub fn reptile_interpolate(
    theta: &ParameterSet,
    theta_prime: &ParameterSet,
    alpha: f64,
) -> Result<ParameterSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Validation(format!(
            "alpha = {alpha} must lie in [0, 1]"
        )));
    }
    theta.check_compatible(theta_prime, "reptile_interpolate")?;
    if alpha == 0.0 {
        return Ok(theta.clone());
    }
    if alpha == 1.0 {
        return Ok(theta_prime.clone());
    }
    theta.zip_map(theta_prime, "reptile_interpolate", |t, tp| {
        t + alpha * (tp - t)
    })
}

/// Single-task Reptile: each episode runs `k` epochs over the whole training
/// set from a fresh inner optimizer, then interpolates toward the result.
///
/// Validation accuracy is checked after every episode; the best checkpoint is
/// kept and the loop stops after `patience` episodes without strict
/// improvement or at `max_episodes`.
pub fn reptile_fit(
    model: &ModelConfig,
    init: &ParameterSet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    check_fit_inputs(model, init, train, val, config)?;
    let mut shuffle = ShuffleStream::new(config.seed);
    let mut theta = init.clone();
    let initial = evaluate(&theta, model, val)?;
    let mut log = EpisodeLog::new(LogUnit::Episode, initial);
    let mut stopper = EarlyStopping::new(initial, config.patience);
    let mut best = theta.clone();

    for episode in 1..=config.max_episodes {
        let inner = inner_train(&theta, model, train, config, &mut shuffle)?;
        theta = reptile_interpolate(&theta, &inner.params, config.alpha)?;
        let val_acc = evaluate(&theta, model, val)?;
        log.records.push(EpisodeRecord {
            index: episode,
            train_loss: inner.mean_loss,
            val_acc,
            grad_alignment: inner.grad_alignment,
        });
        let (improved, stop) = stopper.observe(val_acc);
        if improved {
            best = theta.clone();
            log.best_episode = episode;
        }
        if stop {
            log.stopped_early = true;
            break;
        }
    }
    Ok(FitOutcome {
        best_params: best,
        final_params: theta,
        log,
    })
}

/// One task of a multi-task distribution.
#[derive(Debug, Clone)]
pub struct Task {
    pub name: String,
    pub data: Dataset,
}

/// Draws tasks from a fixed categorical distribution, on its own seeded stream.
#[derive(Debug, Clone)]
pub struct TaskSampler {
    tasks: Vec<Task>,
    weights: Vec<f64>,
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl TaskSampler {
    /// Uniform distribution over `tasks`.
    pub fn uniform(tasks: Vec<Task>, seed: u64) -> Result<Self> {
        let n = tasks.len();
        Self::weighted(tasks, vec![1.0; n], seed)
    }

    /// Sampling probabilities proportional to `weights`.
    pub fn weighted(tasks: Vec<Task>, weights: Vec<f64>, seed: u64) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Contract(
                "task sampler needs at least one task".into(),
            ));
        }
        if weights.len() != tasks.len() {
            return Err(Error::Validation(format!(
                "{} weights for {} tasks",
                weights.len(),
                tasks.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| Error::Validation(format!("task weights: {e}")))?;
        Ok(TaskSampler {
            tasks,
            weights: weights.iter().map(|w| w / total).collect(),
            dist,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    /// Normalized sampling probabilities.
    pub fn probabilities(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample(&mut self) -> &Task {
        let i = self.dist.sample(&mut self.rng);
        &self.tasks[i]
    }
}

/// Original task-sampling Reptile step: draw `τ`, compute
/// `θ′ = U_τ^k(θ, D_τ)`, return `θ + α(θ′ − θ)`.
pub fn multitask_reptile_step(
    theta: &ParameterSet,
    model: &ModelConfig,
    sampler: &mut TaskSampler,
    config: &TrainConfig,
    shuffle: &mut ShuffleStream,
) -> Result<ParameterSet> {
    let task = sampler.sample();
    let inner = inner_train(theta, model, &task.data, config, shuffle)?;
    reptile_interpolate(theta, &inner.params, config.alpha)
}

//! Inner optimizers and the training loops built on them.
//!
//! Every fit shares one epoch routine: shuffle the training set with the
//! run's seeded stream, cut it into mini-batches, take one optimizer step per
//! batch. The loops differ only in what happens between epochs:
//!
//! * [`baseline_fit`]: nothing; validation after every epoch.
//! * [`reptile_fit`]: `k` epochs from a fresh inner optimizer give `θ′`, then
//!   `θ ← θ + α(θ′ − θ)`; validation after every episode.
//! * [`lookahead_fit`]: the same interpolation every `sync_period` mini-batch
//!   steps, with fast weights reset to the slow ones.

mod baseline;
mod log;
mod reptile;
mod step;

pub use baseline::{baseline_fit, lookahead_fit, DEFAULT_SYNC_PERIOD};
pub use log::{EpisodeLog, EpisodeRecord, LogUnit};
pub use reptile::{multitask_reptile_step, reptile_fit, reptile_interpolate, Task, TaskSampler};
pub use step::{adam_step, sgd_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelConfig, Utterance};
use crate::stats::{self, AlignmentTracker};
use crate::tensor::{GradientSet, ParameterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InnerOptimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for InnerOptimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(InnerOptimizer::Sgd),
            "adam" => Ok(InnerOptimizer::Adam),
            other => Err(Error::Validation(format!(
                "unknown inner optimizer `{other}` (expected sgd or adam)"
            ))),
        }
    }
}

impl std::fmt::Display for InnerOptimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InnerOptimizer::Sgd => "sgd",
            InnerOptimizer::Adam => "adam",
        })
    }
}

/// Hyperparameters shared by all fit loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Inner epochs per Reptile episode.
    pub k: usize,
    /// Interpolation step size, in [0, 1].
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Validation checks without strict improvement before stopping.
    pub patience: usize,
    /// Cap on episodes (Reptile) or epochs (baseline, Lookahead).
    pub max_episodes: usize,
    pub seed: u64,
    pub inner_optimizer: InnerOptimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 5,
            alpha: 0.1,
            lr: 0.001,
            batch_size: 8,
            patience: 10,
            max_episodes: 100,
            seed: 0,
            inner_optimizer: InnerOptimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Validation("train.k must be ≥ 1".into()));
        }
        // α = 0 is accepted so the null-interpolation case can be exercised.
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Validation(format!(
                "train.alpha = {} must lie in [0, 1]",
                self.alpha
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation(format!(
                "train.lr = {} must be ≥ 0",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("train.batch_size must be ≥ 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Validation("train.patience must be ≥ 1".into()));
        }
        if self.max_episodes == 0 {
            return Err(Error::Validation("train.max_episodes must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// The seeded generator that orders every epoch of one run.
#[derive(Debug, Clone)]
pub struct ShuffleStream {
    rng: ChaCha8Rng,
}

impl ShuffleStream {
    pub fn new(seed: u64) -> Self {
        ShuffleStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn epoch_order(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        order
    }
}

/// Inner optimizer together with whatever state it carries.
#[derive(Debug, Clone)]
pub(crate) enum InnerState {
    Sgd,
    Adam(AdamState),
}

impl InnerState {
    pub fn fresh(kind: InnerOptimizer, params: &ParameterSet) -> Self {
        match kind {
            InnerOptimizer::Sgd => InnerState::Sgd,
            InnerOptimizer::Adam => InnerState::Adam(AdamState::new(params)),
        }
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &GradientSet, lr: f64) -> Result<()> {
        match self {
            InnerState::Sgd => sgd_step(params, grads, lr),
            InnerState::Adam(state) => adam_step(params, grads, state, lr),
        }
    }
}

/// One pass over `data` in a freshly shuffled order, one optimizer step per
/// mini-batch. `after_step` sees the parameters and gradient of every step.
/// Returns the mean per-example training loss.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_epoch<F>(
    params: &mut ParameterSet,
    model: &ModelConfig,
    data: &Dataset,
    batch_size: usize,
    lr: f64,
    state: &mut InnerState,
    shuffle: &mut ShuffleStream,
    mut after_step: F,
) -> Result<f64>
where
    F: FnMut(&mut ParameterSet, &GradientSet) -> Result<()>,
{
    data.require_non_empty("training")?;
    let utterances = data.utterances();
    let order = shuffle.epoch_order(utterances.len());
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&Utterance> = chunk.iter().map(|&i| &utterances[i]).collect();
        let (loss, grads) = model::loss_and_gradients(params, model, &batch)?;
        state.step(params, &grads, lr)?;
        after_step(params, &grads)?;
        total += loss * batch.len() as f64;
    }
    Ok(total / utterances.len() as f64)
}

/// Result of `k` inner epochs: `θ′ = U^k(θ, D)`.
#[derive(Debug, Clone)]
pub struct InnerRun {
    pub params: ParameterSet,
    /// Mean training loss of the final epoch.
    pub mean_loss: f64,
    /// Mean pairwise cosine of all mini-batch gradients in the run.
    pub grad_alignment: Option<f64>,
    pub steps: usize,
}

/// Runs exactly `config.k` epochs from `params` with a fresh inner optimizer.
pub fn inner_train(
    params: &ParameterSet,
    model: &ModelConfig,
    data: &Dataset,
    config: &TrainConfig,
    shuffle: &mut ShuffleStream,
) -> Result<InnerRun> {
    config.validate()?;
    data.require_non_empty("training")?;
    let mut theta = params.clone();
    let mut state = InnerState::fresh(config.inner_optimizer, &theta);
    let mut tracker = AlignmentTracker::new();
    let mut steps = 0;
    let mut mean_loss = 0.0;
    for _ in 0..config.k {
        mean_loss = run_epoch(
            &mut theta,
            model,
            data,
            config.batch_size,
            config.lr,
            &mut state,
            shuffle,
            |_, g| {
                tracker.push(g);
                steps += 1;
                Ok(())
            },
        )?;
    }
    Ok(InnerRun {
        params: theta,
        mean_loss,
        grad_alignment: tracker.value(),
        steps,
    })
}

/// Classification accuracy of `params` on `data`.
pub fn evaluate(params: &ParameterSet, model: &ModelConfig, data: &Dataset) -> Result<f64> {
    data.require_non_empty("evaluation")?;
    let predictions = model::predict_all(params, model, data.utterances())?;
    stats::accuracy(&predictions, &data.labels())
}

/// What every fit returns.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Snapshot taken at the best validation accuracy.
    pub best_params: ParameterSet,
    /// Parameters when the loop ended.
    pub final_params: ParameterSet,
    pub log: EpisodeLog,
}

pub(crate) fn check_fit_inputs(
    model: &ModelConfig,
    init: &ParameterSet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<()> {
    config.validate()?;
    model.validate()?;
    model.zero_params().check_compatible(init, "fit")?;
    train.require_non_empty("training")?;
    val.require_non_empty("validation")?;
    for ds in [train, val] {
        if ds.input_dim() != model.input_dim || ds.num_intents() != model.num_intents {
            return Err(Error::Validation(format!(
                "dataset (input_dim {}, {} intents) does not fit model (input_dim {}, {} intents)",
                ds.input_dim(),
                ds.num_intents(),
                model.input_dim,
                model.num_intents
            )));
        }
    }
    Ok(())
}

use super::log::{EarlyStopping, EpisodeLog, EpisodeRecord, LogUnit};
use super::reptile::reptile_interpolate;
use super::{
    check_fit_inputs, evaluate, run_epoch, FitOutcome, InnerState, ShuffleStream, TrainConfig,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::stats::AlignmentTracker;
use crate::tensor::ParameterSet;

/// Mini-batch steps between Lookahead synchronizations.
pub const DEFAULT_SYNC_PERIOD: usize = 10;

/// Plain training: one persistent inner optimizer, validation after every
/// epoch, same early-stopping rule with patience counted in epochs.
pub fn baseline_fit(
    model: &ModelConfig,
    init: &ParameterSet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    epoch_loop(model, init, train, val, config, None)
}

/// Lookahead: fast weights follow the inner optimizer; every `sync_period`
/// mini-batch steps the slow weights move `α` of the way toward them and the
/// fast weights restart from the slow ones. Inner optimizer state persists
/// across syncs. Validation uses the slow weights after every epoch.
pub fn lookahead_fit(
    model: &ModelConfig,
    init: &ParameterSet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    sync_period: usize,
) -> Result<FitOutcome> {
    if sync_period == 0 {
        return Err(Error::Validation(
            "lookahead sync_period must be ≥ 1".into(),
        ));
    }
    epoch_loop(model, init, train, val, config, Some(sync_period))
}

fn epoch_loop(
    model: &ModelConfig,
    init: &ParameterSet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    sync_period: Option<usize>,
) -> Result<FitOutcome> {
    check_fit_inputs(model, init, train, val, config)?;
    let mut shuffle = ShuffleStream::new(config.seed);
    let mut state = InnerState::fresh(config.inner_optimizer, init);
    let mut fast = init.clone();
    let mut slow = init.clone();
    let mut steps = 0usize;

    let initial = evaluate(init, model, val)?;
    let mut log = EpisodeLog::new(LogUnit::Epoch, initial);
    let mut stopper = EarlyStopping::new(initial, config.patience);
    let mut best = init.clone();

    for epoch in 1..=config.max_episodes {
        let mut tracker = AlignmentTracker::new();
        let train_loss = run_epoch(
            &mut fast,
            model,
            train,
            config.batch_size,
            config.lr,
            &mut state,
            &mut shuffle,
            |params, grads| {
                tracker.push(grads);
                steps += 1;
                if let Some(period) = sync_period {
                    if steps.is_multiple_of(period) {
                        slow = reptile_interpolate(&slow, params, config.alpha)?;
                        params.clone_from(&slow);
                    }
                }
                Ok(())
            },
        )?;
        let current = if sync_period.is_some() { &slow } else { &fast };
        let val_acc = evaluate(current, model, val)?;
        log.records.push(EpisodeRecord {
            index: epoch,
            train_loss,
            val_acc,
            grad_alignment: tracker.value(),
        });
        let (improved, stop) = stopper.observe(val_acc);
        if improved {
            best = current.clone();
            log.best_episode = epoch;
        }
        if stop {
            log.stopped_early = true;
            break;
        }
    }
    let final_params = if sync_period.is_some() { slow } else { fast };
    Ok(FitOutcome {
        best_params: best,
        final_params,
        log,
    })
}

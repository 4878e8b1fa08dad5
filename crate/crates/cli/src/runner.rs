//! Single runs: fit one method for one seed, evaluate, write artifacts.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use reptile_core::data::{generate_dataset, split_by_speaker, Dataset};
use reptile_core::model::{init_params, write_params};
use reptile_core::optim::{baseline_fit, evaluate, lookahead_fit, reptile_fit, FitOutcome};
use reptile_core::stats::curve_smoothness;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::error::{CliError, CliResult};

/// Speaker-disjoint train/validation/test sets of one experiment.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Generates the benchmark and splits it by speaker.
    pub fn prepare(config: &ExperimentConfig) -> CliResult<Self> {
        let data = generate_dataset(&config.generator())?;
        let (train, val, test) = split_by_speaker(&data, &config.split_spec())?;
        Ok(Splits { train, val, test })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub best_val_acc: f64,
    pub test_acc: f64,
    /// Episodes (Reptile) or epochs (base, Lookahead) run.
    pub episodes: usize,
    pub wall_clock_secs: f64,
    /// Variance of successive validation-accuracy changes; absent for
    /// curves shorter than three points.
    pub val_smoothness: Option<f64>,
    /// Learning-curve CSV, when artifacts were written.
    pub curve_path: Option<PathBuf>,
}

/// One run's summary together with its full fit result.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    pub outcome: FitOutcome,
}

/// Fits `method` on `train` with early stopping on `val`.
pub fn fit(
    config: &ExperimentConfig,
    method: Method,
    seed: u64,
    train: &Dataset,
    val: &Dataset,
) -> CliResult<FitOutcome> {
    let model = config.model();
    let init = init_params(&model, seed)?;
    let train_config = config.train_config(seed)?;
    let outcome = match method {
        Method::Base => baseline_fit(&model, &init, train, val, &train_config)?,
        Method::Reptile => reptile_fit(&model, &init, train, val, &train_config)?,
        Method::Lookahead => lookahead_fit(
            &model,
            &init,
            train,
            val,
            &train_config,
            config.lookahead.sync_period,
        )?,
    };
    Ok(outcome)
}

/// Fits, evaluates the best checkpoint on `test`, and writes
/// `<method>_seed<seed>.{curve.csv,params.bin,summary.json}` under `out`.
pub fn run_one(
    config: &ExperimentConfig,
    method: Method,
    seed: u64,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    out: Option<&Path>,
) -> CliResult<RunResult> {
    let start = Instant::now();
    let outcome = fit(config, method, seed, train, val)?;
    let test_acc = evaluate(&outcome.best_params, &config.model(), test)?;
    let mut summary = RunSummary {
        method,
        seed,
        best_val_acc: outcome.log.best_val_acc(),
        test_acc,
        episodes: outcome.log.len(),
        wall_clock_secs: 0.0,
        val_smoothness: curve_smoothness(&outcome.log.val_curve()).ok(),
        curve_path: None,
    };
    if let Some(dir) = out {
        summary.curve_path = Some(write_artifacts(config, dir, &outcome, &summary)?);
    }
    summary.wall_clock_secs = start.elapsed().as_secs_f64();
    if let Some(dir) = out {
        write_json(
            &dir.join(format!("{}.summary.json", run_stem(method, seed))),
            &summary,
        )?;
    }
    Ok(RunResult { summary, outcome })
}

fn run_stem(method: Method, seed: u64) -> String {
    format!("{method}_seed{seed}")
}

fn write_artifacts(
    config: &ExperimentConfig,
    dir: &Path,
    outcome: &FitOutcome,
    summary: &RunSummary,
) -> CliResult<PathBuf> {
    create_dir(dir)?;
    let stem = run_stem(summary.method, summary.seed);
    let curve = dir.join(format!("{stem}.curve.csv"));
    outcome
        .log
        .write_csv(BufWriter::new(create_file(&curve)?))?;
    let params = dir.join(format!("{stem}.params.bin"));
    write_params(
        BufWriter::new(create_file(&params)?),
        &config.model(),
        &outcome.best_params,
    )?;
    Ok(curve)
}

/// Runs every `(method, seed)` pair in parallel; results come back in input
/// order regardless of scheduling.
pub fn run_many(
    config: &ExperimentConfig,
    jobs: &[(Method, u64)],
    splits: &Splits,
    out: Option<&Path>,
) -> CliResult<Vec<RunResult>> {
    jobs.par_iter()
        .map(|&(method, seed)| {
            run_one(
                config,
                method,
                seed,
                &splits.train,
                &splits.val,
                &splits.test,
                out,
            )
        })
        .collect()
}

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

pub(crate) fn create_file(path: &Path) -> CliResult<fs::File> {
    fs::File::create(path).map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

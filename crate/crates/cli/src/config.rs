//! Experiment configuration files.
//!
//! A config is TOML with namespaced keys, usually written flat:
//!
//! ```toml
//! method = "reptile"
//! runs = 10
//! train.alpha = 0.1
//! generator.num_speakers = 30
//! ```
//!
//! Every key is optional; omitted keys take the library defaults. Unknown
//! keys are rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use reptile_core::data::{GeneratorConfig, SplitSpec};
use reptile_core::optim::{InnerOptimizer, TrainConfig, DEFAULT_SYNC_PERIOD};
use reptile_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Base,
    Reptile,
    Lookahead,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Reptile => "reptile",
            Method::Lookahead => "lookahead",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.trim() {
            "base" => Ok(Method::Base),
            "reptile" => Ok(Method::Reptile),
            "lookahead" => Ok(Method::Lookahead),
            other => Err(CliError::Config(format!(
                "unknown method `{other}` (expected base, reptile or lookahead)"
            ))),
        }
    }
}

/// Parses a comma-separated method list such as `base,reptile`.
pub fn parse_methods(list: &str) -> CliResult<Vec<Method>> {
    let methods = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<CliResult<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(CliError::Config("method list is empty".into()));
    }
    Ok(methods)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub num_intents: usize,
    pub num_speakers: usize,
    pub utterances_per_speaker_per_intent: usize,
    pub input_dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub prototype_frames: usize,
    pub intent_separation: f64,
    pub speaker_shift_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        GeneratorSection {
            num_intents: g.num_intents,
            num_speakers: g.num_speakers,
            utterances_per_speaker_per_intent: g.utterances_per_speaker_per_intent,
            input_dim: g.input_dim,
            min_len: g.min_len,
            max_len: g.max_len,
            prototype_frames: g.prototype_frames,
            intent_separation: g.intent_separation,
            speaker_shift_scale: g.speaker_shift_scale,
            noise_scale: g.noise_scale,
            seed: g.seed,
        }
    }
}

/// Encoder and decoder sizes; input width and intent count come from the
/// generator section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub gru_layers: usize,
    pub hidden_dim: usize,
    pub decoder_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::toy(1, 2);
        ModelSection {
            gru_layers: m.gru_layers,
            hidden_dim: m.hidden_dim,
            decoder_hidden: m.decoder_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub k: usize,
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_episodes: usize,
    pub inner_optimizer: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            k: t.k,
            alpha: t.alpha,
            lr: t.lr,
            batch_size: t.batch_size,
            patience: t.patience,
            max_episodes: t.max_episodes,
            inner_optimizer: t.inner_optimizer.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let s = SplitSpec::default();
        SplitSection {
            train: s.train,
            val: s.val,
            test: s.test,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: usize,
    pub repeats: usize,
    /// Share of each fold's training speakers held out for early stopping.
    pub val_fraction: f64,
}

impl Default for CvSection {
    fn default() -> Self {
        CvSection {
            folds: 5,
            repeats: 3,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub fractions: Vec<f64>,
    /// Seed of the fixed speaker-removal order.
    pub seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            fractions: vec![1.0, 0.5, 0.25, 0.1],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LookaheadSection {
    pub sync_period: usize,
}

impl Default for LookaheadSection {
    fn default() -> Self {
        LookaheadSection {
            sync_period: DEFAULT_SYNC_PERIOD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Number of seeds per method in multi-run commands.
    pub runs: usize,
    /// First run seed; run `i` uses `seed + i` for initialization and shuffling.
    pub seed: u64,
    pub generator: GeneratorSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub split: SplitSection,
    pub cv: CvSection,
    pub sweep: SweepSection,
    pub lookahead: LookaheadSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Reptile,
            runs: 10,
            seed: 0,
            generator: GeneratorSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            split: SplitSection::default(),
            cv: CvSection::default(),
            sweep: SweepSection::default(),
            lookahead: LookaheadSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a config from TOML text.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let core = |e: reptile_core::Error| CliError::Config(e.to_string());
        if self.runs == 0 {
            return Err(CliError::Config("runs must be ≥ 1".into()));
        }
        self.generator().validate().map_err(core)?;
        self.model().validate().map_err(core)?;
        self.train_config(self.seed)?.validate().map_err(core)?;
        self.split_spec().validate().map_err(core)?;
        if self.cv.folds < 2 {
            return Err(CliError::Config("cv.folds must be ≥ 2".into()));
        }
        if self.cv.repeats == 0 {
            return Err(CliError::Config("cv.repeats must be ≥ 1".into()));
        }
        if !(self.cv.val_fraction > 0.0 && self.cv.val_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "cv.val_fraction = {} must lie in (0, 1)",
                self.cv.val_fraction
            )));
        }
        validate_fractions(&self.sweep.fractions)?;
        if self.lookahead.sync_period == 0 {
            return Err(CliError::Config("lookahead.sync_period must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn generator(&self) -> GeneratorConfig {
        let g = &self.generator;
        GeneratorConfig {
            num_intents: g.num_intents,
            num_speakers: g.num_speakers,
            utterances_per_speaker_per_intent: g.utterances_per_speaker_per_intent,
            input_dim: g.input_dim,
            min_len: g.min_len,
            max_len: g.max_len,
            prototype_frames: g.prototype_frames,
            intent_separation: g.intent_separation,
            speaker_shift_scale: g.speaker_shift_scale,
            noise_scale: g.noise_scale,
            seed: g.seed,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.generator.input_dim,
            gru_layers: self.model.gru_layers,
            hidden_dim: self.model.hidden_dim,
            decoder_hidden: self.model.decoder_hidden,
            num_intents: self.generator.num_intents,
        }
    }

    /// Training hyperparameters for one run seed.
    pub fn train_config(&self, seed: u64) -> CliResult<TrainConfig> {
        let t = &self.train;
        let inner_optimizer: InnerOptimizer =
            t.inner_optimizer
                .parse()
                .map_err(|e: reptile_core::Error| {
                    CliError::Config(format!("train.inner_optimizer: {e}"))
                })?;
        Ok(TrainConfig {
            k: t.k,
            alpha: t.alpha,
            lr: t.lr,
            batch_size: t.batch_size,
            patience: t.patience,
            max_episodes: t.max_episodes,
            seed,
            inner_optimizer,
        })
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.split.train,
            val: self.split.val,
            test: self.split.test,
            seed: self.split.seed,
        }
    }

    /// `seed, seed + 1, …` for `runs` runs.
    pub fn seeds(&self, runs: usize) -> Vec<u64> {
        (0..runs as u64).map(|i| self.seed + i).collect()
    }
}

pub fn validate_fractions(fractions: &[f64]) -> CliResult<()> {
    if fractions.is_empty() {
        return Err(CliError::Config("sweep.fractions is empty".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(CliError::Config(format!(
            "sweep fraction {f} must lie in (0, 1]"
        )));
    }
    if fractions.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Config(format!(
            "sweep.fractions must be strictly descending, got {fractions:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_keys_override_defaults() {
        let c = ExperimentConfig::from_toml(
            "method = \"base\"\ntrain.alpha = 0.3\ngenerator.num_speakers = 12\nsweep.fractions = [1.0, 0.5]\n",
        )
        .unwrap();
        assert_eq!(c.method, Method::Base);
        assert_eq!(c.train.alpha, 0.3);
        assert_eq!(c.generator.num_speakers, 12);
        assert_eq!(c.train.k, 5);
        assert_eq!(c.sweep.fractions, vec![1.0, 0.5]);
    }

    #[test]
    fn defaults_follow_library() {
        let c = ExperimentConfig::from_toml("").unwrap();
        let t = c.train_config(0).unwrap();
        assert_eq!(t, TrainConfig::default());
        assert_eq!(c.generator(), GeneratorConfig::default());
        assert_eq!(c.runs, 10);
    }

    #[test]
    fn errors_name_the_field() {
        let err = |text: &str| ExperimentConfig::from_toml(text).unwrap_err().to_string();
        assert!(err("train.alpha = 1.5").contains("train.alpha"));
        assert!(err("train.bogus = 1").contains("bogus"));
        assert!(err("method = \"maml\"").contains("maml"));
        assert!(err("train.inner_optimizer = \"rmsprop\"").contains("inner_optimizer"));
        assert!(err("generator.min_len = 20").contains("min_len"));
        assert!(err("runs = 0").contains("runs"));
        assert!(err("sweep.fractions = [0.5, 1.0]").contains("descending"));
        assert!(err("cv.folds = 1").contains("cv.folds"));
    }

    #[test]
    fn toml_roundtrip() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn method_lists() {
        assert_eq!(
            parse_methods("base,reptile").unwrap(),
            vec![Method::Base, Method::Reptile]
        );
        assert!(parse_methods("").is_err());
        assert!(parse_methods("base,sgd").is_err());
    }
}

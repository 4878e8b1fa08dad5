use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::{SpeakerId, Utterance};
use crate::tensor::Tensor;

/// Parameters of the synthetic speaker-variation benchmark.
///
/// Each intent owns a prototype: a short sequence of `prototype_frames`
/// keyframes whose entries are drawn with standard deviation
/// `intent_separation / sqrt(2 · input_dim)`, so two prototypes sit roughly
/// `intent_separation` apart. Each speaker owns a constant offset vector of
/// norm about `speaker_shift_scale`. An utterance is its intent's prototype
/// linearly warped to a random length, plus its speaker's offset, plus
/// i.i.d. Gaussian noise of scale `noise_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
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

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_intents: 6,
            num_speakers: 10,
            utterances_per_speaker_per_intent: 2,
            input_dim: 8,
            min_len: 6,
            max_len: 12,
            prototype_frames: 4,
            intent_separation: 3.0,
            speaker_shift_scale: 2.0,
            noise_scale: 0.5,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_intents", self.num_intents),
            ("num_speakers", self.num_speakers),
            (
                "utterances_per_speaker_per_intent",
                self.utterances_per_speaker_per_intent,
            ),
            ("input_dim", self.input_dim),
            ("min_len", self.min_len),
            ("max_len", self.max_len),
            ("prototype_frames", self.prototype_frames),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Validation(format!("generator.{name} must be ≥ 1")));
            }
        }
        if self.num_intents < 2 {
            return Err(Error::Validation(
                "generator.num_intents must be ≥ 2".into(),
            ));
        }
        if self.min_len > self.max_len {
            return Err(Error::Validation(format!(
                "generator.min_len ({}) exceeds generator.max_len ({})",
                self.min_len, self.max_len
            )));
        }
        if !(self.intent_separation > 0.0 && self.intent_separation.is_finite()) {
            return Err(Error::Validation(
                "generator.intent_separation must be positive and finite".into(),
            ));
        }
        for (name, v) in [
            ("speaker_shift_scale", self.speaker_shift_scale),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!(
                    "generator.{name} must be non-negative and finite"
                )));
            }
        }
        Ok(())
    }
}

/// Linearly resamples a `[P × d]` keyframe pattern to `len` frames.
pub fn warp_prototype(prototype: &Tensor, len: usize) -> Result<Tensor> {
    let (frames, dim) = prototype.dims2()?;
    if len == 0 {
        return Err(Error::EmptyInput("warp to zero frames".into()));
    }
    let mut out = Vec::with_capacity(len * dim);
    for t in 0..len {
        let pos = if len == 1 {
            0.0
        } else {
            t as f64 * (frames - 1) as f64 / (len - 1) as f64
        };
        let lo = (pos.floor() as usize).min(frames - 1);
        let hi = (lo + 1).min(frames - 1);
        let frac = pos - lo as f64;
        let a = prototype.row(lo)?;
        let b = prototype.row(hi)?;
        out.extend(a.iter().zip(b).map(|(&x, &y)| x + frac * (y - x)));
    }
    Tensor::matrix(len, dim, out)
}

/// Generates the benchmark and also returns the per-intent prototypes.
pub fn generate_with_prototypes(config: &GeneratorConfig) -> Result<(Dataset, Vec<Tensor>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.input_dim;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let proto_sd = config.intent_separation / (2.0 * d as f64).sqrt();
    let prototypes = (0..config.num_intents)
        .map(|_| {
            let data = (0..config.prototype_frames * d)
                .map(|_| proto_sd * std_normal.sample(&mut rng))
                .collect();
            Tensor::matrix(config.prototype_frames, d, data)
        })
        .collect::<Result<Vec<_>>>()?;

    let shift_sd = config.speaker_shift_scale / (d as f64).sqrt();
    let offsets: Vec<Vec<f64>> = (0..config.num_speakers)
        .map(|_| {
            (0..d)
                .map(|_| shift_sd * std_normal.sample(&mut rng))
                .collect()
        })
        .collect();

    let mut utterances = Vec::with_capacity(
        config.num_speakers * config.num_intents * config.utterances_per_speaker_per_intent,
    );
    for (s, offset) in offsets.iter().enumerate() {
        for (intent, proto) in prototypes.iter().enumerate() {
            for _ in 0..config.utterances_per_speaker_per_intent {
                let len = rng.random_range(config.min_len..=config.max_len);
                let mut features = warp_prototype(proto, len)?;
                for (i, v) in features.data_mut().iter_mut().enumerate() {
                    *v += offset[i % d] + config.noise_scale * std_normal.sample(&mut rng);
                }
                utterances.push(Utterance::new(features, intent, SpeakerId(s as u32))?);
            }
        }
    }
    Ok((Dataset::new(utterances, config.num_intents, d)?, prototypes))
}

pub fn generate_dataset(config: &GeneratorConfig) -> Result<Dataset> {
    generate_with_prototypes(config).map(|(ds, _)| ds)
}

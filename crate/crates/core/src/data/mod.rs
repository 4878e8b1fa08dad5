//! Labeled sequence datasets with speaker identities, a synthetic benchmark
//! generator, and speaker-disjoint splitting protocols.

mod generate;
mod io;
mod split;

use std::collections::{BTreeMap, BTreeSet};

pub use generate::{generate_dataset, generate_with_prototypes, warp_prototype, GeneratorConfig};
pub use io::{read_dataset, write_dataset};
pub use split::{holdout_speakers, kfold_by_speaker, size_sweep, split_by_speaker, SplitSpec};

use crate::error::{Error, Result};
use crate::model::{SpeakerId, Utterance};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    utterances: Vec<Utterance>,
    num_intents: usize,
    input_dim: usize,
    speakers: Vec<SpeakerId>,
}

impl Dataset {
    /// Checks labels and feature widths; the speaker roster is derived from
    /// the utterances.
    pub fn new(utterances: Vec<Utterance>, num_intents: usize, input_dim: usize) -> Result<Self> {
        if num_intents < 2 {
            return Err(Error::Validation(
                "a dataset needs at least 2 intents".into(),
            ));
        }
        for (i, u) in utterances.iter().enumerate() {
            if u.label() >= num_intents {
                return Err(Error::Validation(format!(
                    "utterance {i} has label {} but only {num_intents} intents exist",
                    u.label()
                )));
            }
            if u.input_dim() != input_dim {
                return Err(Error::Validation(format!(
                    "utterance {i} has feature width {}, dataset width is {input_dim}",
                    u.input_dim()
                )));
            }
        }
        let speakers: BTreeSet<SpeakerId> = utterances.iter().map(Utterance::speaker).collect();
        Ok(Dataset {
            utterances,
            num_intents,
            input_dim,
            speakers: speakers.into_iter().collect(),
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn num_intents(&self) -> usize {
        self.num_intents
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Sorted speaker roster.
    pub fn speakers(&self) -> &[SpeakerId] {
        &self.speakers
    }

    pub fn labels(&self) -> Vec<usize> {
        self.utterances.iter().map(Utterance::label).collect()
    }

    /// Utterance count per speaker.
    pub fn speaker_counts(&self) -> BTreeMap<SpeakerId, usize> {
        let mut counts = BTreeMap::new();
        for u in &self.utterances {
            *counts.entry(u.speaker()).or_insert(0) += 1;
        }
        counts
    }

    /// All utterances of the given speakers, in original order.
    pub fn with_speakers(&self, keep: &BTreeSet<SpeakerId>) -> Dataset {
        let utterances: Vec<Utterance> = self
            .utterances
            .iter()
            .filter(|u| keep.contains(&u.speaker()))
            .cloned()
            .collect();
        let speakers = self
            .speakers
            .iter()
            .copied()
            .filter(|s| keep.contains(s))
            .collect();
        Dataset {
            utterances,
            num_intents: self.num_intents,
            input_dim: self.input_dim,
            speakers,
        }
    }

    pub(crate) fn require_non_empty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyInput(format!(
                "{what} dataset has no utterances"
            )))
        } else {
            Ok(())
        }
    }
}

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Speaker label as it appears in the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SpeakerId(String);

impl SpeakerId {
    pub fn new(label: impl Into<String>) -> Result<Self, CorpusError> {
        let label = label.into();
        if label.is_empty() {
            return Err(CorpusError::InvalidSpeaker {
                label,
                reason: "empty label",
            });
        }
        if label
            .chars()
            .any(|c| c.is_whitespace() || c == '[' || c == ']')
        {
            return Err(CorpusError::InvalidSpeaker {
                label,
                reason: "labels may not contain whitespace or brackets",
            });
        }
        Ok(Self(label))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SpeakerId {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<SpeakerId> for String {
    fn from(value: SpeakerId) -> Self {
        value.0
    }
}

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: SpeakerId,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: SpeakerId, text: impl Into<String>) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyUtterance);
        }
        Ok(Self { speaker, text })
    }

    /// Lowercased whitespace tokens.
    pub fn words(&self) -> Vec<String> {
        tokenize(&self.text)
    }
}

/// The tokenizer used everywhere: lowercase, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Distinct speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<&SpeakerId> {
        let mut seen: Vec<&SpeakerId> = Vec::new();
        for u in &self.utterances {
            if !seen.contains(&&u.speaker) {
                seen.push(&u.speaker);
            }
        }
        seen
    }

    pub fn slot_map(&self) -> SlotMap {
        SlotMap::from_dialogue(self)
    }

    /// Utterance counts per speaker.
    pub fn speaker_counts(&self) -> HashMap<&SpeakerId, usize> {
        let mut counts = HashMap::new();
        for u in &self.utterances {
            *counts.entry(&u.speaker).or_insert(0) += 1;
        }
        counts
    }
}

/// Per-dialogue assignment of speakers to `[S{k}]` slots, by first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotMap {
    order: Vec<SpeakerId>,
}

impl SlotMap {
    pub fn from_dialogue(dialogue: &Dialogue) -> Self {
        Self {
            order: dialogue.speakers().into_iter().cloned().collect(),
        }
    }

    pub fn from_speakers<I: IntoIterator<Item = SpeakerId>>(speakers: I) -> Self {
        let mut map = Self::default();
        for s in speakers {
            map.assign(&s);
        }
        map
    }

    pub fn slot(&self, speaker: &SpeakerId) -> Option<usize> {
        self.order.iter().position(|s| s == speaker)
    }

    /// Returns the existing slot or assigns the next free one.
    pub fn assign(&mut self, speaker: &SpeakerId) -> usize {
        match self.slot(speaker) {
            Some(slot) => slot,
            None => {
                self.order.push(speaker.clone());
                self.order.len() - 1
            }
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

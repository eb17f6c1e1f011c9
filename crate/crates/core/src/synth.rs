//! Synthetic multi-party corpora with learnable speaker and context structure.
//!
//! Speaker `k` speaks `s{k}w{j}` filler words from a private sub-vocabulary.
//! Every utterance after the first opens with the topic token `t{j}` that
//! closed the previous utterance, then fillers, then a fresh topic token:
//!
//! ```text
//! spk0: s0w3 s0w1 t7
//! spk2: t7 s2w0 s2w5 s2w2 t4
//! spk1: t4 s1w9 t0
//! ```
//!
//! With probability `question_rate` an utterance ends with `what`, and the
//! next turn is a stock acknowledgement instead; the chain then resumes from
//! the questioned topic. An acknowledgement is long and nearly deterministic,
//! so its per-token likelihood stays high even after contexts that rule it
//! out, which is where likelihood alone misranks contextual negatives.
//!
//! A response therefore depends on the last context utterance (its topic) and
//! on which participant is replying (its vocabulary), which is what the two
//! kinds of negatives disturb.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, Dialogue, SpeakerId, Utterance};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dialogues: usize,
    /// Global speaker population; each dialogue draws 2..=`max_participants` of them.
    pub speakers: usize,
    pub seed: u64,
    pub max_participants: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    pub words_per_speaker: usize,
    pub topics: usize,
    pub min_fillers: usize,
    pub max_fillers: usize,
    /// Probability that an informative turn ends with [`QUESTION_WORD`].
    pub question_rate: f64,
}

/// Marks an utterance that the next turn acknowledges.
pub const QUESTION_WORD: &str = "what";

/// Acknowledgements shared by every speaker; one answers each question.
pub const ACKNOWLEDGEMENTS: [&str; 6] = [
    "ok thanks that really helps",
    "sure sounds good to me",
    "right got it makes sense",
    "yes agreed lets do that",
    "cool nice one thank you",
    "fine works for me too",
];

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dialogues: 200,
            speakers: 4,
            seed: 0,
            max_participants: 3,
            min_turns: 14,
            max_turns: 20,
            words_per_speaker: 16,
            topics: 16,
            min_fillers: 1,
            max_fillers: 3,
            question_rate: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Config(m.to_string()));
        if self.dialogues == 0 {
            return bad("dialogues must be at least 1");
        }
        if self.speakers < 2 || self.max_participants < 2 {
            return bad("multi-party dialogues need at least 2 speakers");
        }
        if self.min_turns < 2 || self.max_turns < self.min_turns {
            return bad("turn range must satisfy 2 <= min_turns <= max_turns");
        }
        if self.words_per_speaker == 0 || self.topics < 2 {
            return bad("need at least 1 word per speaker and 2 topics");
        }
        if !(0.0..=1.0).contains(&self.question_rate) {
            return bad("question_rate must be in [0, 1]");
        }
        if self.max_fillers < self.min_fillers {
            return bad("max_fillers must be at least min_fillers");
        }
        Ok(())
    }
}

pub fn speaker_label(k: usize) -> String {
    format!("spk{k}")
}

pub fn speaker_word(k: usize, j: usize) -> String {
    format!("s{k}w{j}")
}

pub fn topic_word(j: usize) -> String {
    format!("t{j}")
}

/// Generates the corpus; dialogue `i` depends only on `(config, i)`.
pub fn generate(config: &SynthConfig) -> Result<Vec<Dialogue>, CorpusError> {
    config.validate()?;
    let labels: Vec<SpeakerId> = (0..config.speakers)
        .map(|k| SpeakerId::new(speaker_label(k)))
        .collect::<Result<_, _>>()?;
    (0..config.dialogues)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(config.seed, &[i as u64]));
            let n_part = rng.random_range(2..=config.max_participants.min(config.speakers));
            let everyone: Vec<usize> = (0..config.speakers).collect();
            let participants: Vec<usize> = everyone.choose_multiple(&mut rng, n_part).copied().collect();
            let turns = rng.random_range(config.min_turns..=config.max_turns);
            let mut utterances = Vec::with_capacity(turns);
            let mut last_speaker: Option<usize> = None;
            let mut topic: Option<usize> = None;
            let mut asked = false;
            for _ in 0..turns {
                let speaker = loop {
                    let s = *participants.choose(&mut rng).expect("non-empty");
                    if last_speaker != Some(s) {
                        break s;
                    }
                };
                last_speaker = Some(speaker);
                let mut words = Vec::new();
                if asked {
                    words.push(ACKNOWLEDGEMENTS.choose(&mut rng).expect("non-empty").to_string());
                    asked = false;
                } else {
                    if let Some(t) = topic {
                        words.push(topic_word(t));
                    }
                    for _ in 0..rng.random_range(config.min_fillers..=config.max_fillers) {
                        words.push(speaker_word(speaker, rng.random_range(0..config.words_per_speaker)));
                    }
                    let next = loop {
                        let t = rng.random_range(0..config.topics);
                        if topic != Some(t) {
                            break t;
                        }
                    };
                    words.push(topic_word(next));
                    topic = Some(next);
                    asked = rng.random_bool(config.question_rate);
                    if asked {
                        words.push(QUESTION_WORD.to_string());
                    }
                }
                utterances.push(Utterance::new(labels[speaker].clone(), words.join(" "))?);
            }
            Ok(Dialogue {
                id: format!("synth-{i:05}"),
                utterances,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{validate_corpus, write_corpus, ParseOptions};
    use std::collections::{HashMap, HashSet};

    fn small() -> SynthConfig {
        SynthConfig {
            dialogues: 10,
            speakers: 3,
            seed: 5,
            ..SynthConfig::default()
        }
    }

    fn bytes(cfg: &SynthConfig) -> Vec<u8> {
        let mut out = Vec::new();
        write_corpus(&mut out, &generate(cfg).unwrap()).unwrap();
        out
    }

    #[test]
    fn deterministic_bytes() {
        assert_eq!(bytes(&small()), bytes(&small()));
        let other = SynthConfig { seed: 6, ..small() };
        assert_ne!(bytes(&small()), bytes(&other));
    }

    #[test]
    fn passes_strict_validation() {
        let report = validate_corpus(&bytes(&small())[..], ParseOptions::default()).unwrap();
        assert!(report.is_ok(), "{:?}", report.errors);
        assert!(report.warnings.is_empty());
        assert_eq!(report.dialogues.len(), 10);
    }

    #[test]
    fn sub_vocabularies_disjoint() {
        let mut owner: HashMap<String, String> = HashMap::new();
        for d in generate(&SynthConfig::default()).unwrap() {
            for u in &d.utterances {
                for w in u.words().into_iter().filter(|w| w.starts_with('s') && w.contains('w')) {
                    let prev = owner.entry(w.clone()).or_insert_with(|| u.speaker.to_string());
                    assert_eq!(prev, u.speaker.as_str(), "{w} used by two speakers");
                }
            }
        }
        let speakers: HashSet<_> = owner.values().collect();
        assert_eq!(speakers.len(), 4);
    }

    #[test]
    fn topics_chain_and_turns_alternate() {
        let mut acks = 0;
        for d in generate(&small()).unwrap() {
            let mut last_topic: Option<String> = None;
            let mut asked = false;
            for (i, u) in d.utterances.iter().enumerate() {
                if i > 0 {
                    assert_ne!(d.utterances[i - 1].speaker, u.speaker);
                }
                if asked {
                    assert!(ACKNOWLEDGEMENTS.contains(&u.text.as_str()), "{}", u.text);
                    acks += 1;
                    asked = false;
                    continue;
                }
                let mut words = u.words();
                asked = words.last().map(String::as_str) == Some(QUESTION_WORD);
                if asked {
                    words.pop();
                }
                if let Some(t) = &last_topic {
                    assert_eq!(words.first(), Some(t));
                }
                last_topic = words.last().cloned();
                assert!(last_topic.as_ref().is_some_and(|t| t.starts_with('t')));
            }
        }
        assert!(acks > 0);
    }

    #[test]
    fn rejects_single_speaker() {
        let cfg = SynthConfig { speakers: 1, ..small() };
        assert!(matches!(generate(&cfg), Err(CorpusError::Config(_))));
    }
}

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encode::{build_example, model_len};
use super::vocab::TokenId;
use super::{CorpusError, Dialogue, EncodedContext, Example, SlotMap, Vocabulary};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolOptions {
    pub min_context: usize,
    /// When set, leading context utterances are dropped until the teacher-forced
    /// sequence fits, and speaker-swap replacements are limited to ones that fit.
    pub max_seq_len: Option<usize>,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            min_context: 1,
            max_seq_len: None,
        }
    }
}

/// Where a triple's pieces came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dialogue_id: String,
    pub target_index: usize,
    pub neg_response_dialogue_id: String,
    pub neg_response_target_index: usize,
    /// Position of the swapped segment within the context.
    pub replaced_segment: usize,
    pub replacement_dialogue_id: String,
    pub replacement_utterance_index: usize,
}

/// A positive example bundled with one negative of each kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriple {
    pub context: EncodedContext,
    pub response: Vec<TokenId>,
    pub neg_response: Vec<TokenId>,
    pub neg_context: EncodedContext,
    pub provenance: Provenance,
    pub seed: u64,
}

/// Result of a speaker-inconsistent context draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeakerSwap {
    pub context: EncodedContext,
    pub replaced_segment: usize,
    pub source_dialogue: String,
    pub source_utterance: usize,
}

/// Dialogues plus the positive examples drawn from them; the sampling universe.
#[derive(Debug, Clone)]
pub struct ExamplePool {
    dialogues: Vec<Dialogue>,
    slot_maps: Vec<SlotMap>,
    by_id: HashMap<String, usize>,
    vocab: Vocabulary,
    examples: Vec<Example>,
    ranges: Vec<Range<usize>>,
    options: PoolOptions,
    skipped: usize,
    max_response_len: usize,
}

impl ExamplePool {
    pub fn new(
        dialogues: Vec<Dialogue>,
        vocab: &Vocabulary,
        options: PoolOptions,
    ) -> Result<Self, CorpusError> {
        let slot_maps: Vec<SlotMap> = dialogues.iter().map(Dialogue::slot_map).collect();
        let mut by_id = HashMap::new();
        for (i, d) in dialogues.iter().enumerate() {
            if by_id.insert(d.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    line: 0,
                    id: d.id.clone(),
                });
            }
        }
        let mut examples = Vec::new();
        let mut ranges = Vec::with_capacity(dialogues.len());
        let mut skipped = 0;
        for (d, slots) in dialogues.iter().zip(&slot_maps) {
            let begin = examples.len();
            for target in options.min_context.max(1)..d.len() {
                match fit_example(d, slots, vocab, target, options.max_seq_len)? {
                    Some(ex) => examples.push(ex),
                    None => {
                        skipped += 1;
                        log::warn!(
                            "dialogue {} target {target}: response does not fit the sequence limit, skipped",
                            d.id
                        );
                    }
                }
            }
            ranges.push(begin..examples.len());
        }
        Ok(Self {
            dialogues,
            slot_maps,
            by_id,
            vocab: vocab.clone(),
            max_response_len: examples.iter().map(|e| e.response.len()).max().unwrap_or(0),
            examples,
            ranges,
            options,
            skipped,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn dialogues(&self) -> &[Dialogue] {
        &self.dialogues
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn options(&self) -> PoolOptions {
        self.options
    }

    /// Examples dropped because they could not fit `max_seq_len`.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.by_id.get(id).map(|&i| &self.dialogues[i])
    }

    /// Response of a uniformly drawn example from any other dialogue. With a
    /// length limit, only responses that fit the positive's context are drawn.
    pub fn sample_negative_context_response(
        &self,
        positive: &Example,
        seed: u64,
    ) -> Result<&Example, CorpusError> {
        let own = self
            .by_id
            .get(&positive.dialogue_id)
            .map(|&i| self.ranges[i].clone())
            .unwrap_or(0..0);
        let eligible = self.examples.len() - own.len();
        if eligible == 0 {
            return Err(CorpusError::Sampling(format!(
                "no examples outside dialogue {} to draw a negative response from",
                positive.dialogue_id
            )));
        }
        let mut rng = seed::rng(seed);
        let budget = self
            .options
            .max_seq_len
            .map(|limit| limit + positive.response.len() - positive.model_len());
        match budget {
            Some(b) if self.max_response_len > b => {
                // Some responses would overflow this context: draw among those that fit.
                let fitting: Vec<usize> = (0..self.examples.len())
                    .filter(|i| !own.contains(i) && self.examples[*i].response.len() <= b)
                    .collect();
                if fitting.is_empty() {
                    return Err(CorpusError::Sampling(format!(
                        "no response from another dialogue fits the context of {} target {}",
                        positive.dialogue_id, positive.target_index
                    )));
                }
                Ok(&self.examples[fitting[rng.random_range(0..fitting.len())]])
            }
            _ => {
                let k = rng.random_range(0..eligible);
                let idx = if k < own.start { k } else { k + own.len() };
                Ok(&self.examples[idx])
            }
        }
    }

    /// Replaces one uniformly chosen context utterance with an utterance by a
    /// different speaker, preferring the same dialogue.
    pub fn sample_negative_speaker_context(
        &self,
        positive: &Example,
        seed: u64,
    ) -> Result<SpeakerSwap, CorpusError> {
        let d_idx = *self.by_id.get(&positive.dialogue_id).ok_or_else(|| {
            CorpusError::Sampling(format!("dialogue {} is not in the pool", positive.dialogue_id))
        })?;
        let dialogue = &self.dialogues[d_idx];
        let slots = &self.slot_maps[d_idx];
        let n = positive.context.utterance_count();
        if n == 0 {
            return Err(CorpusError::Sampling("context has no utterances to replace".into()));
        }
        let mut rng = seed::rng(seed);
        let replaced = rng.random_range(0..n);
        let abs = positive.context_start + replaced;
        let replaced_speaker = &dialogue.utterances[abs].speaker;
        let replaced_slot = positive.context.segments[replaced].slot;
        let seg = positive.context.segments[replaced];
        let budget = self
            .options
            .max_seq_len
            .map(|limit| limit.saturating_sub(positive.model_len() - (seg.end - seg.start)));
        let fits = |d: &Dialogue, j: usize| {
            budget.is_none_or(|b| 1 + self.vocab.encode_text(&d.utterances[j].text).len() <= b)
        };

        let local: Vec<usize> = (0..dialogue.len())
            .filter(|&j| {
                j != positive.target_index
                    && dialogue.utterances[j].speaker != *replaced_speaker
                    && fits(dialogue, j)
            })
            .collect();
        let (src_d, src_j) = if !local.is_empty() {
            (d_idx, local[rng.random_range(0..local.len())])
        } else {
            let pool: Vec<(usize, usize)> = self
                .dialogues
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != d_idx)
                .flat_map(|(i, d)| (0..d.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| {
                    let d = &self.dialogues[i];
                    d.utterances[j].speaker != *replaced_speaker && fits(d, j)
                })
                .collect();
            if pool.is_empty() {
                return Err(CorpusError::Sampling(format!(
                    "no utterance by a speaker other than {replaced_speaker} is available"
                )));
            }
            pool[rng.random_range(0..pool.len())]
        };

        let source = &self.dialogues[src_d].utterances[src_j];
        let new_slot = if src_d == d_idx {
            slots.slot(&source.speaker).expect("same-dialogue speaker has a slot")
        } else {
            // A speaker from another dialogue joins as a new participant.
            let mut extended = slots.clone();
            let slot = extended.assign(&source.speaker);
            if slot < self.vocab.speaker_slots() && slot != replaced_slot {
                slot
            } else {
                (0..self.vocab.speaker_slots())
                    .find(|&s| s != replaced_slot)
                    .ok_or_else(|| CorpusError::Sampling("only one speaker slot is configured".into()))?
            }
        };

        let utterances = &dialogue.utterances[positive.context_start..positive.target_index];
        let parts = utterances.iter().enumerate().map(|(i, u)| {
            if i == replaced {
                (new_slot, source.text.as_str())
            } else {
                (slots.slot(&u.speaker).expect("dialogue speaker has a slot"), u.text.as_str())
            }
        });
        let context = EncodedContext::from_segments(parts, &self.vocab)?
            .with_responder(positive.context.responder);
        Ok(SpeakerSwap {
            context,
            replaced_segment: replaced,
            source_dialogue: self.dialogues[src_d].id.clone(),
            source_utterance: src_j,
        })
    }

    /// Bundles `positive` with freshly drawn negatives of both kinds.
    pub fn make_triple(&self, positive: &Example, seed: u64) -> Result<TrainingTriple, CorpusError> {
        let neg = self.sample_negative_context_response(positive, seed::derive(seed, &[1]))?;
        let swap = self.sample_negative_speaker_context(positive, seed::derive(seed, &[2]))?;
        Ok(TrainingTriple {
            context: positive.context.clone(),
            response: positive.response.clone(),
            neg_response: neg.response.clone(),
            neg_context: swap.context,
            provenance: Provenance {
                dialogue_id: positive.dialogue_id.clone(),
                target_index: positive.target_index,
                neg_response_dialogue_id: neg.dialogue_id.clone(),
                neg_response_target_index: neg.target_index,
                replaced_segment: swap.replaced_segment,
                replacement_dialogue_id: swap.source_dialogue,
                replacement_utterance_index: swap.source_utterance,
            },
            seed,
        })
    }
}

fn fit_example(
    dialogue: &Dialogue,
    slots: &SlotMap,
    vocab: &Vocabulary,
    target: usize,
    max_seq_len: Option<usize>,
) -> Result<Option<Example>, CorpusError> {
    let Some(limit) = max_seq_len else {
        return build_example(dialogue, slots, vocab, target, 0).map(Some);
    };
    for start in 0..target {
        let ex = build_example(dialogue, slots, vocab, target, start)?;
        if model_len(&ex.context, ex.response.len()) <= limit {
            return Ok(Some(ex));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SpeakerId, Utterance};

    fn dialogue(id: &str, turns: &[(&str, &str)]) -> Dialogue {
        Dialogue {
            id: id.into(),
            utterances: turns
                .iter()
                .map(|(s, t)| Utterance::new(SpeakerId::new(*s).unwrap(), *t).unwrap())
                .collect(),
        }
    }

    fn pool_of(ds: Vec<Dialogue>, options: PoolOptions) -> ExamplePool {
        let v = Vocabulary::build(&ds, 1, 4).unwrap();
        ExamplePool::new(ds, &v, options).unwrap()
    }

    #[test]
    fn two_dialogue_pool_forces_other_dialogue() {
        let pool = pool_of(
            vec![
                dialogue("d1", &[("a", "one"), ("b", "two"), ("a", "three")]),
                dialogue("d2", &[("c", "four"), ("d", "five")]),
            ],
            PoolOptions::default(),
        );
        let pos = pool.examples()[0].clone();
        for s in 0..50 {
            let neg = pool.sample_negative_context_response(&pos, s).unwrap();
            assert_eq!(neg.dialogue_id, "d2");
        }
        let pos2 = pool.examples().last().unwrap().clone();
        assert_eq!(pos2.dialogue_id, "d2");
        for s in 0..50 {
            assert_eq!(pool.sample_negative_context_response(&pos2, s).unwrap().dialogue_id, "d1");
        }
    }

    #[test]
    fn single_dialogue_pool_cannot_sample_negative_response() {
        let pool = pool_of(
            vec![dialogue("d1", &[("a", "one"), ("b", "two"), ("a", "three")])],
            PoolOptions::default(),
        );
        let pos = pool.examples()[0].clone();
        assert!(matches!(
            pool.sample_negative_context_response(&pos, 0),
            Err(CorpusError::Sampling(_))
        ));
    }

    #[test]
    fn one_utterance_context_replaces_index_zero() {
        let pool = pool_of(
            vec![dialogue("d1", &[("a", "one"), ("b", "two"), ("c", "three")])],
            PoolOptions::default(),
        );
        let pos = pool.examples()[0].clone();
        assert_eq!(pos.context.utterance_count(), 1);
        for s in 0..20 {
            let swap = pool.sample_negative_speaker_context(&pos, s).unwrap();
            assert_eq!(swap.replaced_segment, 0);
            assert_eq!(swap.context.segment_hamming(&pos.context), Some(1));
            assert_ne!(swap.context.segments[0].slot, pos.context.segments[0].slot);
        }
    }

    #[test]
    fn falls_back_to_pool_when_dialogue_has_no_other_speaker() {
        // Only "a" speaks outside the target turn, so replacements must come from d2.
        let pool = pool_of(
            vec![
                dialogue("d1", &[("a", "one"), ("a", "two"), ("b", "three")]),
                dialogue("d2", &[("c", "four"), ("d", "five")]),
            ],
            PoolOptions {
                min_context: 2,
                max_seq_len: None,
            },
        );
        let pos = pool.examples()[0].clone();
        assert_eq!(pos.target_index, 2);
        let swap = pool.sample_negative_speaker_context(&pos, 3).unwrap();
        assert_eq!(swap.source_dialogue, "d2");
        let seg = swap.replaced_segment;
        assert_ne!(swap.context.segments[seg].slot, pos.context.segments[seg].slot);
        assert_eq!(swap.context.segment_hamming(&pos.context), Some(1));
    }

    #[test]
    fn no_eligible_replacement_is_sampling_error() {
        let pool = pool_of(
            vec![dialogue("d1", &[("a", "one"), ("a", "two"), ("b", "three")])],
            PoolOptions {
                min_context: 2,
                max_seq_len: None,
            },
        );
        let pos = pool.examples()[0].clone();
        assert!(matches!(
            pool.sample_negative_speaker_context(&pos, 0),
            Err(CorpusError::Sampling(_))
        ));
    }

    #[test]
    fn truncation_keeps_latest_utterances() {
        let ds = vec![dialogue(
            "d1",
            &[("a", "w w w w"), ("b", "x x x x"), ("a", "y y"), ("b", "z")],
        )];
        // target 3: BOS + [S] y y + prompt + "z" EOS - 1 = 6 tokens with one utterance.
        let pool = pool_of(
            ds,
            PoolOptions {
                min_context: 3,
                max_seq_len: Some(6),
            },
        );
        let ex = &pool.examples()[0];
        assert_eq!(ex.context_start, 2);
        assert_eq!(ex.model_len(), 6);
    }

    #[test]
    fn triple_is_deterministic() {
        let pool = pool_of(
            vec![
                dialogue("d1", &[("a", "one"), ("b", "two"), ("a", "three")]),
                dialogue("d2", &[("c", "four"), ("d", "five"), ("c", "six")]),
            ],
            PoolOptions::default(),
        );
        let pos = pool.examples()[1].clone();
        assert_eq!(pool.make_triple(&pos, 9).unwrap(), pool.make_triple(&pos, 9).unwrap());
    }

    #[test]
    fn negative_response_respects_length_limit() {
        let pool = pool_of(
            vec![
                dialogue("d1", &[("a", "p p p p p p"), ("b", "q")]),
                dialogue("d2", &[("c", "r"), ("d", "s s s s s s")]),
                dialogue("d3", &[("c", "t"), ("d", "u")]),
            ],
            PoolOptions {
                min_context: 1,
                max_seq_len: Some(10),
            },
        );
        // d1's example uses 10 tokens with a 2-token response; d2's 7-token response cannot fit.
        let pos = pool.examples()[0].clone();
        assert_eq!(pos.model_len(), 10);
        for seed in 0..50 {
            let neg = pool.sample_negative_context_response(&pos, seed).unwrap();
            assert_eq!(neg.dialogue_id, "d3");
            let t = pool.make_triple(&pos, seed).unwrap();
            assert!(pos.model_len() - pos.response.len() + t.neg_response.len() <= 10);
        }
    }
}

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, BOS, EOS};
use super::{CorpusError, Dialogue, SlotMap, Utterance, Vocabulary};

/// Half-open token range `[start, end)` holding one utterance, opened by its speaker token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub slot: usize,
}

/// A speaker-attributed context: `[S_a] w w w [S_b] w w ...`.
///
/// `responder` is the slot of whoever speaks next; it is appended as a
/// generation prompt by [`EncodedContext::model_prefix`] and is not part of
/// the tiled `token_ids`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedContext {
    pub token_ids: Vec<TokenId>,
    pub segments: Vec<Segment>,
    pub responder: Option<usize>,
}

impl EncodedContext {
    pub fn from_segments<'a, I>(parts: I, vocab: &Vocabulary) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (usize, &'a str)>,
    {
        let mut ctx = EncodedContext::default();
        for (slot, text) in parts {
            ctx.push_segment(slot, text, vocab)?;
        }
        Ok(ctx)
    }

    fn push_segment(&mut self, slot: usize, text: &str, vocab: &Vocabulary) -> Result<(), CorpusError> {
        let start = self.token_ids.len();
        self.token_ids.push(vocab.speaker_token(slot)?);
        self.token_ids.extend(vocab.encode_text(text));
        self.segments.push(Segment {
            start,
            end: self.token_ids.len(),
            slot,
        });
        Ok(())
    }

    pub fn with_responder(mut self, slot: Option<usize>) -> Self {
        self.responder = slot;
        self
    }

    pub fn utterance_count(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment_tokens(&self, index: usize) -> &[TokenId] {
        let seg = self.segments[index];
        &self.token_ids[seg.start..seg.end]
    }

    /// The model input preceding the response: `BOS ++ token_ids ++ [responder token]`.
    pub fn model_prefix(&self, vocab: &Vocabulary) -> Result<Vec<TokenId>, CorpusError> {
        let mut prefix = Vec::with_capacity(self.token_ids.len() + 2);
        prefix.push(BOS);
        prefix.extend_from_slice(&self.token_ids);
        if let Some(slot) = self.responder {
            prefix.push(vocab.speaker_token(slot)?);
        }
        Ok(prefix)
    }

    /// Number of differing segments, or `None` when the segment counts differ.
    pub fn segment_hamming(&self, other: &EncodedContext) -> Option<usize> {
        if self.segments.len() != other.segments.len() {
            return None;
        }
        Some(
            (0..self.segments.len())
                .filter(|&i| self.segment_tokens(i) != other.segment_tokens(i))
                .count(),
        )
    }

    /// Checks the tiling invariant: segments cover `token_ids` contiguously and
    /// each begins with exactly one speaker token.
    pub fn check_tiling(&self, vocab: &Vocabulary) -> bool {
        let mut pos = 0;
        for seg in &self.segments {
            if seg.start != pos || seg.end <= seg.start {
                return false;
            }
            if vocab.speaker_slot_of(self.token_ids[seg.start]) != Some(seg.slot) {
                return false;
            }
            if self.token_ids[seg.start + 1..seg.end]
                .iter()
                .any(|&t| vocab.speaker_slot_of(t).is_some())
            {
                return false;
            }
            pos = seg.end;
        }
        pos == self.token_ids.len()
    }
}

/// Encodes utterances as `[speaker token] ++ words` per utterance.
pub fn encode_context(
    prefix: &[Utterance],
    vocab: &Vocabulary,
    slots: &SlotMap,
) -> Result<EncodedContext, CorpusError> {
    let mut parts = Vec::with_capacity(prefix.len());
    for u in prefix {
        let slot = slots
            .slot(&u.speaker)
            .ok_or_else(|| CorpusError::MissingSlot(u.speaker.to_string()))?;
        parts.push((slot, u.text.as_str()));
    }
    EncodedContext::from_segments(parts, vocab)
}

/// One positive (context, response) pair with its position in the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub dialogue_id: String,
    pub target_index: usize,
    /// First utterance index included in the context (non-zero after truncation).
    pub context_start: usize,
    pub context: EncodedContext,
    /// Words of the target utterance followed by EOS; no speaker token.
    pub response: Vec<TokenId>,
}

impl Example {
    pub fn model_prefix(&self, vocab: &Vocabulary) -> Result<Vec<TokenId>, CorpusError> {
        self.context.model_prefix(vocab)
    }

    /// Tokens the model consumes when teacher forcing this example.
    pub fn model_len(&self) -> usize {
        model_len(&self.context, self.response.len())
    }
}

/// `BOS + context + prompt + response - 1`: the teacher-forced input length.
pub(crate) fn model_len(context: &EncodedContext, response_len: usize) -> usize {
    1 + context.token_ids.len() + usize::from(context.responder.is_some()) + response_len - 1
}

/// Builds one example per target index in `[min_context, n)`.
pub fn make_examples(
    dialogue: &Dialogue,
    vocab: &Vocabulary,
    min_context: usize,
) -> Result<Vec<Example>, CorpusError> {
    let slots = dialogue.slot_map();
    let min_context = min_context.max(1);
    let mut out = Vec::new();
    for target in min_context..dialogue.len() {
        out.push(build_example(dialogue, &slots, vocab, target, 0)?);
    }
    Ok(out)
}

pub(crate) fn build_example(
    dialogue: &Dialogue,
    slots: &SlotMap,
    vocab: &Vocabulary,
    target: usize,
    context_start: usize,
) -> Result<Example, CorpusError> {
    let target_utt = &dialogue.utterances[target];
    let responder = slots
        .slot(&target_utt.speaker)
        .ok_or_else(|| CorpusError::MissingSlot(target_utt.speaker.to_string()))?;
    let context = encode_context(&dialogue.utterances[context_start..target], vocab, slots)?
        .with_responder(Some(responder));
    let mut response = vocab.encode_text(&target_utt.text);
    response.push(EOS);
    Ok(Example {
        dialogue_id: dialogue.id.clone(),
        target_index: target,
        context_start,
        context,
        response,
    })
}

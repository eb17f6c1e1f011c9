use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::types::tokenize;
use super::{CorpusError, Dialogue};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const RESERVED: [(&str, &str); 4] = [("pad", "<pad>"), ("bos", "<bos>"), ("eos", "<eos>"), ("unk", "<unk>")];
const FIRST_SPEAKER: usize = RESERVED.len();

/// Token table: reserved control tokens, then `[S0]..[S{k-1}]`, then corpus words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    words: HashMap<String, TokenId>,
    speaker_slots: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    reserved: BTreeMap<String, TokenId>,
    speaker_slots: usize,
}

pub fn speaker_token_text(slot: usize) -> String {
    format!("[S{slot}]")
}

impl Vocabulary {
    /// Builds a vocabulary from word frequencies.
    ///
    /// Words are ordered by descending count, ties broken lexicographically.
    pub fn build(
        dialogues: &[Dialogue],
        min_count: usize,
        max_speaker_slots: usize,
    ) -> Result<Self, CorpusError> {
        if dialogues.is_empty() {
            return Err(CorpusError::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        if min_count == 0 || max_speaker_slots == 0 {
            return Err(CorpusError::Config(
                "min_count and max_speaker_slots must be positive".into(),
            ));
        }
        let needed = dialogues.iter().map(|d| d.speakers().len()).max().unwrap_or(0);
        if needed > max_speaker_slots {
            return Err(CorpusError::Config(format!(
                "a dialogue has {needed} speakers but only {max_speaker_slots} speaker slots are configured"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for d in dialogues {
            for u in &d.utterances {
                for w in tokenize(&u.text) {
                    *counts.entry(w).or_insert(0) += 1;
                }
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && !Self::is_reserved_text(w, max_speaker_slots))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_parts(kept.into_iter().map(|(w, _)| w), max_speaker_slots)
    }

    fn is_reserved_text(word: &str, slots: usize) -> bool {
        RESERVED.iter().any(|(_, t)| *t == word) || (0..slots).any(|s| speaker_token_text(s) == word)
    }

    fn from_parts<I: IntoIterator<Item = String>>(
        words: I,
        speaker_slots: usize,
    ) -> Result<Self, CorpusError> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|(_, t)| t.to_string()).collect();
        tokens.extend((0..speaker_slots).map(speaker_token_text));
        let mut index = HashMap::new();
        for w in words {
            if Self::is_reserved_text(&w, speaker_slots) {
                return Err(CorpusError::VocabFormat(format!("word {w:?} collides with a reserved token")));
            }
            let id = tokens.len() as TokenId;
            if index.insert(w.clone(), id).is_some() {
                return Err(CorpusError::VocabFormat(format!("duplicate word {w:?}")));
            }
            tokens.push(w);
        }
        Ok(Self {
            tokens,
            words: index,
            speaker_slots,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn speaker_slots(&self) -> usize {
        self.speaker_slots
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn speaker_token(&self, slot: usize) -> Result<TokenId, CorpusError> {
        if slot >= self.speaker_slots {
            return Err(CorpusError::Encoding(format!(
                "speaker slot {slot} exceeds the {} configured slots",
                self.speaker_slots
            )));
        }
        Ok((FIRST_SPEAKER + slot) as TokenId)
    }

    /// Slot index when `id` is a speaker token.
    pub fn speaker_slot_of(&self, id: TokenId) -> Option<usize> {
        let id = id as usize;
        (FIRST_SPEAKER..FIRST_SPEAKER + self.speaker_slots)
            .contains(&id)
            .then(|| id - FIRST_SPEAKER)
    }

    /// Id of a word token; unknown words map to UNK.
    pub fn word_id(&self, word: &str) -> TokenId {
        self.words.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    pub fn encode_text(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|w| self.word_id(w)).collect()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<invalid>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Decodes a generated response: stops at EOS and drops control tokens.
    pub fn decode_response(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id != PAD && id != BOS)
            .map(|&id| self.token(id).unwrap_or("<invalid>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            tokens: self.tokens.clone(),
            reserved: RESERVED
                .iter()
                .enumerate()
                .map(|(i, (name, _))| (name.to_string(), i as TokenId))
                .collect(),
            speaker_slots: self.speaker_slots,
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| CorpusError::VocabFormat(e.to_string()))?;
        for (i, (name, tok)) in RESERVED.iter().enumerate() {
            if file.reserved.get(*name) != Some(&(i as TokenId)) || file.tokens.get(i).map(String::as_str) != Some(*tok)
            {
                return Err(CorpusError::VocabFormat(format!("reserved token {name} must be {tok} at index {i}")));
            }
        }
        let head = FIRST_SPEAKER + file.speaker_slots;
        if file.tokens.len() < head {
            return Err(CorpusError::VocabFormat("token list shorter than reserved + speaker slots".into()));
        }
        for s in 0..file.speaker_slots {
            if file.tokens[FIRST_SPEAKER + s] != speaker_token_text(s) {
                return Err(CorpusError::VocabFormat(format!("expected speaker token {} at index {}", speaker_token_text(s), FIRST_SPEAKER + s)));
            }
        }
        Self::from_parts(file.tokens[head..].iter().cloned(), file.speaker_slots)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

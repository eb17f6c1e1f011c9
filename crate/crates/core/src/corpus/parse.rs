use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Dialogue, SpeakerId, Utterance};

#[derive(Debug, Deserialize, Serialize)]
struct RawTurn {
    speaker: String,
    text: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawDialogue {
    id: String,
    turns: Vec<RawTurn>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Downgrade single-speaker dialogues from errors to warnings.
    pub lenient: bool,
}

/// One problem found while reading a corpus, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

/// Everything `validate_corpus` learned about a stream.
#[derive(Debug, Default)]
pub struct ValidationReport {
    pub dialogues: Vec<Dialogue>,
    pub errors: Vec<(usize, CorpusError)>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn utterance_count(&self) -> usize {
        self.dialogues.iter().map(Dialogue::len).sum()
    }

    pub fn speaker_count(&self) -> usize {
        self.dialogues
            .iter()
            .flat_map(|d| d.utterances.iter().map(|u| &u.speaker))
            .collect::<HashSet<_>>()
            .len()
    }
}

/// Parses a JSON Lines corpus, stopping at the first error.
pub fn parse_corpus<R: BufRead>(
    reader: R,
    options: ParseOptions,
) -> Result<Vec<Dialogue>, CorpusError> {
    let report = validate_corpus(reader, options)?;
    match report.errors.into_iter().next() {
        Some((_, err)) => Err(err),
        None => Ok(report.dialogues),
    }
}

/// Reads every line, collecting all violations instead of stopping at the first.
///
/// Only I/O failures abort; per-line problems land in the report.
pub fn validate_corpus<R: BufRead>(
    reader: R,
    options: ParseOptions,
) -> Result<ValidationReport, CorpusError> {
    let mut report = ValidationReport::default();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
                report.errors.push((
                    line_no,
                    CorpusError::Json {
                        line: line_no,
                        message: "line is not valid UTF-8".into(),
                    },
                ));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, line_no, options, &mut report.warnings) {
            Ok(dialogue) => {
                if !ids.insert(dialogue.id.clone()) {
                    report.errors.push((
                        line_no,
                        CorpusError::DuplicateId {
                            line: line_no,
                            id: dialogue.id,
                        },
                    ));
                } else {
                    report.dialogues.push(dialogue);
                }
            }
            Err(e) => report.errors.push((line_no, e)),
        }
    }
    Ok(report)
}

fn parse_line(
    line: &str,
    line_no: usize,
    options: ParseOptions,
    warnings: &mut Vec<Violation>,
) -> Result<Dialogue, CorpusError> {
    let raw: RawDialogue = serde_json::from_str(line).map_err(|e| CorpusError::Json {
        line: line_no,
        message: e.to_string(),
    })?;
    let invalid = |message: String| CorpusError::Validation {
        line: line_no,
        dialogue_id: raw.id.clone(),
        message,
    };
    if raw.turns.len() < 2 {
        return Err(invalid(format!(
            "dialogue needs at least 2 turns, found {}",
            raw.turns.len()
        )));
    }
    let mut utterances = Vec::with_capacity(raw.turns.len());
    for (i, turn) in raw.turns.iter().enumerate() {
        let speaker = SpeakerId::new(turn.speaker.clone())
            .map_err(|e| invalid(format!("turn {i}: {e}")))?;
        let utt =
            Utterance::new(speaker, turn.text.clone()).map_err(|e| invalid(format!("turn {i}: {e}")))?;
        utterances.push(utt);
    }
    let dialogue = Dialogue {
        id: raw.id.clone(),
        utterances,
    };
    if dialogue.speakers().len() < 2 {
        let message = "only one distinct speaker; multi-party dialogues need at least 2".to_string();
        if options.lenient {
            warnings.push(Violation {
                line: line_no,
                message: format!("dialogue {}: {message}", dialogue.id),
            });
        } else {
            return Err(invalid(message));
        }
    }
    Ok(dialogue)
}

/// Serializes dialogues back to the JSON Lines corpus format.
pub fn write_corpus<W: std::io::Write>(
    mut writer: W,
    dialogues: &[Dialogue],
) -> Result<(), CorpusError> {
    for d in dialogues {
        let raw = RawDialogue {
            id: d.id.clone(),
            turns: d
                .utterances
                .iter()
                .map(|u| RawTurn {
                    speaker: u.speaker.as_str().to_string(),
                    text: u.text.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &raw).map_err(|e| CorpusError::Json {
            line: 0,
            message: e.to_string(),
        })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

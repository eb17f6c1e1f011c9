use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{bleu, distinct_n, rouge_l, MetricError};
use crate::corpus::{tokenize, Dialogue};

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub dialogue_id: String,
    pub target_index: usize,
    pub candidate: String,
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<Prediction>, MetricError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => MetricError::Json {
                line: i + 1,
                message: "invalid UTF-8".into(),
            },
            _ => MetricError::Io(e),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| MetricError::Json {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(predictions: &[Prediction], mut out: W) -> std::io::Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Frequent,
    Infrequent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextBucket {
    /// Fewer than 10 context utterances.
    Short,
    /// 10 to 20 inclusive.
    Medium,
    /// More than 20.
    Long,
}

impl ContextBucket {
    pub fn of(context_len: usize) -> Self {
        match context_len {
            0..=9 => Self::Short,
            10..=20 => Self::Medium,
            _ => Self::Long,
        }
    }
}

/// A scored candidate with its reference and stratification keys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPair {
    pub dialogue_id: String,
    pub target_index: usize,
    /// Utterances preceding the target.
    pub context_len: usize,
    pub role: Role,
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
}

/// Frequent means strictly more utterances than the dialogue's per-speaker mean.
pub fn speaker_role(dialogue: &Dialogue, target_index: usize) -> Result<Role, MetricError> {
    let utt = dialogue.utterances.get(target_index).ok_or_else(|| MetricError::Reference {
        dialogue_id: dialogue.id.clone(),
        target_index,
    })?;
    let counts = dialogue.speaker_counts();
    // count > n / k  ⇔  count · k > n, exact in integers
    let freq = counts[&utt.speaker] * counts.len() > dialogue.len();
    Ok(if freq { Role::Frequent } else { Role::Infrequent })
}

/// Joins predictions with their references in `corpus`.
pub fn eval_pairs(predictions: &[Prediction], corpus: &[Dialogue]) -> Result<Vec<EvalPair>, MetricError> {
    let by_id: HashMap<&str, &Dialogue> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut seen = HashSet::new();
    predictions
        .iter()
        .map(|p| {
            let missing = || MetricError::Reference {
                dialogue_id: p.dialogue_id.clone(),
                target_index: p.target_index,
            };
            let d = by_id.get(p.dialogue_id.as_str()).ok_or_else(missing)?;
            if p.target_index == 0 || p.target_index >= d.len() || !seen.insert((&p.dialogue_id, p.target_index)) {
                return Err(missing());
            }
            Ok(EvalPair {
                dialogue_id: p.dialogue_id.clone(),
                target_index: p.target_index,
                context_len: p.target_index,
                role: speaker_role(d, p.target_index)?,
                candidate: tokenize(&p.candidate),
                reference: tokenize(&d.utterances[p.target_index].text),
            })
        })
        .collect()
}

/// A labeled subset of evaluation pairs.
#[derive(Debug, Clone)]
pub struct Stratum<'a> {
    pub label: String,
    pub pairs: Vec<&'a EvalPair>,
}

/// Frequent / infrequent responders, with roles recomputed from `corpus`.
pub fn stratify_speaker_roles<'a>(
    corpus: &[Dialogue],
    pairs: &'a [EvalPair],
) -> Result<Vec<Stratum<'a>>, MetricError> {
    let by_id: HashMap<&str, &Dialogue> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let (mut frequent, mut infrequent) = (Vec::new(), Vec::new());
    for p in pairs {
        let d = by_id.get(p.dialogue_id.as_str()).ok_or_else(|| MetricError::Reference {
            dialogue_id: p.dialogue_id.clone(),
            target_index: p.target_index,
        })?;
        match speaker_role(d, p.target_index)? {
            Role::Frequent => frequent.push(p),
            Role::Infrequent => infrequent.push(p),
        }
    }
    Ok(vec![
        Stratum {
            label: "frequent".into(),
            pairs: frequent,
        },
        Stratum {
            label: "infrequent".into(),
            pairs: infrequent,
        },
    ])
}

pub fn stratify_context_length(pairs: &[EvalPair]) -> Vec<Stratum<'_>> {
    [ContextBucket::Short, ContextBucket::Medium, ContextBucket::Long]
        .into_iter()
        .map(|b| Stratum {
            label: format!("{b:?}").to_lowercase(),
            pairs: pairs.iter().filter(|p| ContextBucket::of(p.context_len) == b).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strata {
    #[default]
    None,
    Speaker,
    Context,
}

/// Metrics of one stratum; every metric is `None` when the stratum is empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub stratum: String,
    pub count: usize,
    pub bleu1: Option<f64>,
    pub bleu2: Option<f64>,
    pub bleu3: Option<f64>,
    pub rouge_l: Option<f64>,
    pub distinct1: Option<f64>,
    pub distinct2: Option<f64>,
}

impl MetricReport {
    pub fn values(&self) -> [Option<f64>; 6] {
        [self.bleu1, self.bleu2, self.bleu3, self.rouge_l, self.distinct1, self.distinct2]
    }
}

pub const REPORT_COLUMNS: [&str; 6] = ["B-1", "B-2", "B-3", "R-L", "D-1", "D-2"];

pub fn score_pairs(label: &str, pairs: &[&EvalPair]) -> Result<MetricReport, MetricError> {
    if pairs.is_empty() {
        return Ok(MetricReport {
            stratum: label.into(),
            count: 0,
            bleu1: None,
            bleu2: None,
            bleu3: None,
            rouge_l: None,
            distinct1: None,
            distinct2: None,
        });
    }
    let cands: Vec<Vec<&str>> = pairs.iter().map(|p| p.candidate.iter().map(String::as_str).collect()).collect();
    let refs: Vec<Vec<&str>> = pairs.iter().map(|p| p.reference.iter().map(String::as_str).collect()).collect();
    Ok(MetricReport {
        stratum: label.into(),
        count: pairs.len(),
        bleu1: Some(bleu(&cands, &refs, 1)?),
        bleu2: Some(bleu(&cands, &refs, 2)?),
        bleu3: Some(bleu(&cands, &refs, 3)?),
        rouge_l: Some(rouge_l(&cands, &refs)?),
        distinct1: Some(distinct_n(&cands, 1)),
        distinct2: Some(distinct_n(&cands, 2)),
    })
}

/// "overall" followed by one row per stratum of the chosen partition.
pub fn build_report(
    predictions: &[Prediction],
    corpus: &[Dialogue],
    strata: Strata,
) -> Result<Vec<MetricReport>, MetricError> {
    let pairs = eval_pairs(predictions, corpus)?;
    let all: Vec<&EvalPair> = pairs.iter().collect();
    let mut rows = vec![score_pairs("overall", &all)?];
    let parts = match strata {
        Strata::None => Vec::new(),
        Strata::Speaker => stratify_speaker_roles(corpus, &pairs)?,
        Strata::Context => stratify_context_length(&pairs),
    };
    for s in parts {
        rows.push(score_pairs(&s.label, &s.pairs)?);
    }
    Ok(rows)
}

pub fn write_report_csv<W: Write>(rows: &[MetricReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "stratum,count,{}", REPORT_COLUMNS.join(","))?;
    for r in rows {
        let vals: Vec<String> = r.values().iter().map(|v| v.map_or(String::new(), |x| format!("{x:.4}"))).collect();
        writeln!(out, "{},{},{}", r.stratum, r.count, vals.join(","))?;
    }
    Ok(())
}

pub const SMOOTHING_NOTE: &str = "BLEU: corpus-level cumulative, clipped counts, \
zero-match orders n>=2 smoothed to 1/(total+1), BP = exp(min(0, 1 - r/c)); \
ROUGE-L: mean LCS F1; Distinct-n: corpus-level";

/// Fixed-width table with a header line describing the metric variants.
pub fn format_table(rows: &[MetricReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {SMOOTHING_NOTE}");
    let _ = write!(s, "{:<12} {:>6}", "stratum", "count");
    for c in REPORT_COLUMNS {
        let _ = write!(s, " {c:>7}");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{:<12} {:>6}", r.stratum, r.count);
        for v in r.values() {
            match v {
                Some(x) => {
                    let _ = write!(s, " {x:>7.2}");
                }
                None => {
                    let _ = write!(s, " {:>7}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

use std::collections::{HashMap, HashSet};

use super::MetricError;

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

fn check_pairs<T>(candidates: &[T], references: &[T]) -> Result<(), MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricError::Undefined("empty corpus"));
    }
    Ok(())
}

/// Corpus-level cumulative BLEU-`max_n` on a 0-100 scale.
///
/// Modified (clipped) n-gram precisions are pooled over the corpus and
/// combined by a uniform geometric mean. An order n ≥ 2 with no matches at
/// all is smoothed to `1 / (total_n + 1)`; unigram precision is never
/// smoothed, so a corpus with no shared words scores 0. The brevity penalty
/// is `exp(min(0, 1 - r/c))` with `r` and `c` the total reference and
/// candidate lengths.
pub fn bleu<T: AsRef<str>>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
) -> Result<f64, MetricError> {
    check_pairs(candidates, references)?;
    if !(1..=3).contains(&max_n) {
        return Err(MetricError::Order(max_n));
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (cand, refr) in candidates.iter().zip(references) {
            let rc = ngram_counts(refr, n);
            for (gram, count) in ngram_counts(cand, n) {
                matched += count.min(rc.get(&gram).copied().unwrap_or(0));
                total += count;
            }
        }
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n >= 2 {
            1.0 / (total as f64 + 1.0)
        } else {
            return Ok(0.0);
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - r as f64 / c as f64).min(0.0).exp();
    Ok(100.0 * bp * (log_sum / max_n as f64).exp())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS F1 (β = 1) of one pair, in [0, 1].
pub fn rouge_l_pair<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean per-pair ROUGE-L F1, ×100.
pub fn rouge_l<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64, MetricError> {
    check_pairs(candidates, references)?;
    let sum: f64 = candidates.iter().zip(references).map(|(c, r)| rouge_l_pair(c, r)).sum();
    Ok(100.0 * sum / candidates.len() as f64)
}

/// Corpus-level distinct-n: unique n-grams over all n-grams, ×100.
pub fn distinct_n<T: AsRef<str>>(responses: &[Vec<T>], n: usize) -> f64 {
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for resp in responses {
        if resp.len() >= n {
            for w in resp.windows(n) {
                unique.insert(w.iter().map(AsRef::as_ref).collect::<Vec<_>>());
                total += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * unique.len() as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn corpus(items: &[&str]) -> Vec<Vec<String>> {
        items.iter().map(|s| toks(s)).collect()
    }

    #[test]
    fn perfect_overlap_is_100() {
        let c = corpus(&["the cat sat", "a b c d"]);
        for n in 1..=3 {
            assert!((bleu(&c, &c, n).unwrap() - 100.0).abs() < 1e-9);
        }
        assert_eq!(rouge_l(&c, &c).unwrap(), 100.0);
    }

    #[test]
    fn brevity_penalty_case() {
        let b = bleu(&corpus(&["the cat sat"]), &corpus(&["the cat sat on the mat"]), 1).unwrap();
        assert!((b - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
        assert_eq!(format!("{b:.2}"), "36.79");
    }

    #[test]
    fn no_shared_unigram_is_zero() {
        let (c, r) = (corpus(&["x y"]), corpus(&["a b"]));
        assert_eq!(bleu(&c, &r, 1).unwrap(), 0.0);
        assert_eq!(bleu(&c, &r, 3).unwrap(), 0.0);
    }

    #[test]
    fn higher_order_smoothing() {
        // p1 = 1/2, p2 has 0 of 1 matches → 1/(1+1); sqrt(1/4) = 1/2
        let b = bleu(&corpus(&["a b"]), &corpus(&["a c"]), 2).unwrap();
        assert!((b - 50.0).abs() < 1e-9);
    }

    #[test]
    fn clipping() {
        // "the the the" vs "the cat": clipped unigram matches 1 of 3; c=3 > r=2 so BP=1
        let b = bleu(&corpus(&["the the the"]), &corpus(&["the cat"]), 1).unwrap();
        assert!((b - 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn rouge_examples() {
        let b = rouge_l(&corpus(&["a b c d"]), &corpus(&["a c b d"])).unwrap();
        assert!((b - 75.0).abs() < 1e-12);
        assert_eq!(rouge_l(&corpus(&["x y"]), &corpus(&["a b"])).unwrap(), 0.0);
    }

    #[test]
    fn distinct_examples() {
        assert!((distinct_n(&corpus(&["a a a"]), 1) - 100.0 / 3.0).abs() < 1e-12);
        assert!((distinct_n(&corpus(&["z", "z", "z", "z"]), 1) - 25.0).abs() < 1e-12);
        assert_eq!(distinct_n(&corpus(&["a b c", "d e"]), 2), 100.0);
        assert_eq!(distinct_n(&corpus(&["a", "b"]), 2), 0.0);
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<String>> = Vec::new();
        assert!(matches!(bleu(&empty, &empty, 1), Err(MetricError::Undefined(_))));
        assert!(matches!(rouge_l(&empty, &empty), Err(MetricError::Undefined(_))));
        assert!(matches!(
            bleu(&corpus(&["a"]), &corpus(&["a", "b"]), 1),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(bleu(&corpus(&["a"]), &corpus(&["a"]), 4), Err(MetricError::Order(4))));
    }
}

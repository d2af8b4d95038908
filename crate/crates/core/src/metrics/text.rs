//! Text recognition metrics: Levenshtein edit distance, normalized edit
//! distance and word-level accuracy.
//!
//! Distances operate on Unicode code points, not bytes or grapheme clusters:
//! a Chinese character counts as one symbol, which is the granularity the
//! recognition benchmark intends.

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Unit-cost Levenshtein distance via dynamic programming.
pub fn edit_distance(p: &str, g: &str) -> usize {
    let a: Vec<char> = p.chars().collect();
    let b: Vec<char> = g.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let substitute = prev[j] + usize::from(ca != cb);
            let delete = prev[j + 1] + 1;
            let insert = curr[j] + 1;
            curr[j + 1] = substitute.min(delete).min(insert);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Normalized edit distance: `1 - ED(p, g) / max(|p|, |g|)`, in `[0, 1]`,
/// higher is better.
///
/// Two empty strings score 1.0 by convention: the formula's denominator is
/// zero there, and equal strings are a perfect match.
pub fn ned(p: &str, g: &str) -> f64 {
    let lp = p.chars().count();
    let lg = g.chars().count();
    let denom = lp.max(lg);
    if denom == 0 {
        return 1.0;
    }
    1.0 - edit_distance(p, g) as f64 / denom as f64
}

/// Canonical transcript form used before any string comparison: Unicode NFKC
/// (which folds full-width ASCII to half-width), lowercasing, and surrounding
/// whitespace stripped.
pub fn normalize_transcript(s: &str) -> String {
    let nfkc: String = s.nfkc().collect();
    nfkc.to_lowercase().trim().to_string()
}

/// Fraction of (prediction, ground truth) pairs that match exactly after
/// [`normalize_transcript`].
pub fn word_accuracy<P: AsRef<str>, G: AsRef<str>>(pairs: &[(P, G)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "word_accuracy requires at least one pair".to_string(),
        ));
    }
    let hits = pairs
        .iter()
        .filter(|(p, g)| normalize_transcript(p.as_ref()) == normalize_transcript(g.as_ref()))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

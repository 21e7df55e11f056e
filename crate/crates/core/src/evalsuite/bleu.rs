use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// In `[0, 100]`.
    pub bleu: f64,
    /// Clipped precision per order; `None` when the hypotheses hold no n-grams of that order.
    pub precisions: Vec<Option<f64>>,
    pub bp: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Lowercases, strips punctuation, splits on whitespace.
pub fn tokenize(s: &str) -> Vec<String> {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn ngram_counts<T: std::hash::Hash + Eq>(toks: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU with clipped counts and no smoothing.
///
/// Orders for which the hypotheses contain no n-grams at all are left out of the
/// geometric mean; an included order with zero matches gives 0.
pub fn bleu<T: std::hash::Hash + Eq>(hyps: &[Vec<T>], refs: &[Vec<T>], max_n: usize) -> Result<BleuReport> {
    if hyps.len() != refs.len() {
        return Err(Error::InvalidInput(format!("bleu: {} hypotheses vs {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() || max_n == 0 {
        return Err(Error::InvalidInput("bleu: need at least one pair and max_n >= 1".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    for (h, r) in hyps.iter().zip(refs) {
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    let hyp_len: usize = hyps.iter().map(Vec::len).sum();
    let ref_len: usize = refs.iter().map(Vec::len).sum();
    let precisions: Vec<Option<f64>> =
        matches.iter().zip(&totals).map(|(&m, &t)| (t > 0).then(|| m as f64 / t as f64)).collect();
    if hyp_len == 0 {
        return Ok(BleuReport { bleu: 0.0, precisions, bp: 0.0, hyp_len, ref_len });
    }
    let bp = if hyp_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    let included: Vec<f64> = precisions.iter().flatten().copied().collect();
    let bleu = if included.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        100.0 * bp * (included.iter().map(|p| p.ln()).sum::<f64>() / included.len() as f64).exp()
    };
    Ok(BleuReport { bleu, precisions, bp, hyp_len, ref_len })
}

/// [`bleu`] over raw strings, tokenized with [`tokenize`].
pub fn bleu_text(hyps: &[&str], refs: &[&str]) -> Result<BleuReport> {
    let h: Vec<Vec<String>> = hyps.iter().map(|s| tokenize(s)).collect();
    let r: Vec<Vec<String>> = refs.iter().map(|s| tokenize(s)).collect();
    bleu(&h, &r, 4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn worked_examples() {
        let r = bleu_text(&["the cat sat on a mat"], &["the cat sat on a mat"]).unwrap();
        assert!((r.bleu - 100.0).abs() < 1e-9);
        let r = bleu_text(&["the cat sat on the mat"], &["the cat sat on a mat"]).unwrap();
        assert_eq!(r.precisions, vec![Some(5.0 / 6.0), Some(3.0 / 5.0), Some(0.5), Some(1.0 / 3.0)]);
        assert!((r.bleu - 53.73).abs() < 0.01, "{}", r.bleu);
        let r = bleu_text(&["the cat sat"], &["the cat sat on a mat"]).unwrap();
        assert_eq!(r.precisions[3], None);
        assert!((r.bp - (-1f64).exp()).abs() < 1e-12);
        assert!((r.bleu - 36.79).abs() < 0.01, "{}", r.bleu);
    }

    #[test]
    fn tokenizer_normalises() {
        assert_eq!(tokenize("The Cat, sat!  on\ta MAT."), vec!["the", "cat", "sat", "on", "a", "mat"]);
    }

    #[test]
    fn errors_and_zero_match() {
        assert!(bleu_text(&["a"], &[]).is_err());
        assert_eq!(bleu_text(&["x y"], &["a b"]).unwrap().bleu, 0.0);
        assert_eq!(bleu_text(&[""], &["a b"]).unwrap().bleu, 0.0);
    }

    #[test]
    fn joint_shuffle_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| (0..rng.random_range(1..9)).map(|_| rng.random_range(0..5u8)).collect::<Vec<_>>();
        let hyps: Vec<Vec<u8>> = (0..12).map(|_| mk(&mut rng)).collect();
        let refs: Vec<Vec<u8>> = (0..12).map(|_| mk(&mut rng)).collect();
        let a = bleu(&hyps, &refs, 4).unwrap().bleu;
        let (mut h2, mut r2) = (hyps.clone(), refs.clone());
        h2.reverse();
        r2.reverse();
        assert_eq!(a, bleu(&h2, &r2, 4).unwrap().bleu);
    }
}

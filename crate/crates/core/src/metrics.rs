//! ROUGE-1/2/L, relative length, and bootstrap aggregation.
//!
//! Text is compared as lowercased whitespace-separated words with leading
//! and trailing non-alphanumeric characters removed; words that become empty
//! are dropped. Any 0/0 precision or recall is 0, and F1 is 0 when
//! `p + r = 0`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded;

pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub const ZERO: Prf = Prf {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    pub fn from_counts(overlap: usize, predicted: usize, gold: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(overlap, predicted);
        let r = ratio(overlap, gold);
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Prf {
            precision: p,
            recall: r,
            f1,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n(pred: &str, gold: &str, n: usize) -> Result<Prf> {
    if n == 0 {
        return Err(Error::input("n-gram order must be at least 1"));
    }
    let (p, g) = (metric_tokens(pred), metric_tokens(gold));
    let (pc, gc) = (ngram_counts(&p, n), ngram_counts(&g, n));
    let overlap = pc
        .iter()
        .map(|(gram, c)| (*c).min(gc.get(gram).copied().unwrap_or(0)))
        .sum();
    Ok(Prf::from_counts(
        overlap,
        pc.values().sum(),
        gc.values().sum(),
    ))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence precision, recall and F1 over words.
pub fn rouge_l(pred: &str, gold: &str) -> Prf {
    let (p, g) = (metric_tokens(pred), metric_tokens(gold));
    Prf::from_counts(lcs_len(&p, &g), p.len(), g.len())
}

/// `(Len-C, Len-W)`: predicted over gold length in characters and in words.
/// Characters are counted on the text with runs of whitespace collapsed to
/// single spaces and the ends trimmed, spaces included.
pub fn relative_length(pred: &str, gold: &str) -> Result<(f64, f64)> {
    let chars = |w: &[&str]| w.iter().map(|x| x.chars().count()).sum::<usize>() + w.len().saturating_sub(1);
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if g.is_empty() {
        return Err(Error::input("gold headline is empty"));
    }
    Ok((
        chars(&p) as f64 / chars(&g) as f64,
        p.len() as f64 / g.len() as f64,
    ))
}

pub const METRIC_NAMES: [&str; 11] = [
    "rouge1_p", "rouge1_r", "rouge1_f", "rouge2_p", "rouge2_r", "rouge2_f", "rougeL_p", "rougeL_r",
    "rougeL_f", "len_c", "len_w",
];

/// All metrics of one prediction, in [`METRIC_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleScores(pub [f64; 11]);

impl ExampleScores {
    pub fn compute(pred: &str, gold: &str) -> Result<Self> {
        let r1 = rouge_n(pred, gold, 1)?;
        let r2 = rouge_n(pred, gold, 2)?;
        let rl = rouge_l(pred, gold);
        let (lc, lw) = relative_length(pred, gold)?;
        Ok(ExampleScores([
            r1.precision,
            r1.recall,
            r1.f1,
            r2.precision,
            r2.recall,
            r2.f1,
            rl.precision,
            rl.recall,
            rl.f1,
            lc,
            lw,
        ]))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        METRIC_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricSummary {
    /// Plain mean over examples.
    pub point: f64,
    /// Mean of the resample means.
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreReport {
    pub samples: usize,
    pub resamples: usize,
    pub seed: u64,
    pub metrics: BTreeMap<String, MetricSummary>,
}

/// Percentile with linear interpolation between closest ranks; `sorted` must
/// be ascending and nonempty.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub const DEFAULT_RESAMPLES: usize = 1000;

/// Resamples examples with replacement `resamples` times and reports, per
/// metric, the mean of the resample means and their 2.5/97.5 percentiles.
pub fn bootstrap_aggregate(examples: &[ExampleScores], resamples: usize, seed: u64) -> Result<ScoreReport> {
    if examples.is_empty() {
        return Err(Error::input("no examples to aggregate"));
    }
    if resamples == 0 {
        return Err(Error::input("resamples must be at least 1"));
    }
    let n = examples.len();
    let k = METRIC_NAMES.len();
    let mut rng = seeded(seed);
    let mut means = vec![Vec::with_capacity(resamples); k];
    let mut sums = vec![0.0; k];
    for _ in 0..resamples {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for _ in 0..n {
            let e = &examples[rng.random_range(0..n)];
            for (s, v) in sums.iter_mut().zip(&e.0) {
                *s += v;
            }
        }
        for (m, s) in means.iter_mut().zip(&sums) {
            m.push(s / n as f64);
        }
    }
    let mut metrics = BTreeMap::new();
    for (i, name) in METRIC_NAMES.iter().enumerate() {
        let mut m = core::mem::take(&mut means[i]);
        m.sort_by(f64::total_cmp);
        metrics.insert(
            String::from(*name),
            MetricSummary {
                point: examples.iter().map(|e| e.0[i]).sum::<f64>() / n as f64,
                mean: m.iter().sum::<f64>() / resamples as f64,
                lo: percentile(&m, 0.025),
                hi: percentile(&m, 0.975),
            },
        );
    }
    Ok(ScoreReport {
        samples: n,
        resamples,
        seed,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Prf, p: f64, r: f64, f: f64) {
        assert!((a.precision - p).abs() < 1e-12, "{a:?}");
        assert!((a.recall - r).abs() < 1e-12, "{a:?}");
        assert!((a.f1 - f).abs() < 1e-12, "{a:?}");
    }

    #[test]
    fn worked_examples() {
        let (p, g) = ("raptors vs bucks", "raptors bucks game");
        close(rouge_n(p, g, 1).unwrap(), 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
        close(rouge_n(p, g, 2).unwrap(), 0.0, 0.0, 0.0);
        close(rouge_l(p, g), 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
        close(rouge_n(g, g, 2).unwrap(), 1.0, 1.0, 1.0);
        close(rouge_l("", g), 0.0, 0.0, 0.0);
        assert!(rouge_n(p, g, 0).is_err());
    }

    #[test]
    fn clipping_limits_repeats() {
        close(rouge_n("the the the", "the cat", 1).unwrap(), 1.0 / 3.0, 0.5, 0.4);
    }

    #[test]
    fn relative_lengths() {
        assert_eq!(relative_length("abcd efghi", "abcd efghi").unwrap(), (1.0, 1.0));
        assert_eq!(relative_length("", "a b").unwrap(), (0.0, 0.0));
        assert_eq!(relative_length("abcd efgh.", "abcd efgh. ijkl mnop").unwrap(), (0.5, 0.5));
        assert!(relative_length("a", "  ").is_err());
    }

    #[test]
    fn punctuation_and_case_are_ignored() {
        assert_eq!(metric_tokens("Raptors, beat -- BUCKS!"), ["raptors", "beat", "bucks"]);
    }

    #[test]
    fn identical_examples_have_zero_width() {
        let e = ExampleScores::compute("a b c", "a b d").unwrap();
        let r = bootstrap_aggregate(&[e; 7], 50, 3).unwrap();
        for m in r.metrics.values() {
            assert_eq!(m.lo, m.hi);
        }
        assert!(bootstrap_aggregate(&[], 10, 0).is_err());
        assert!(bootstrap_aggregate(&[e], 0, 0).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5), 3.0);
        assert!((percentile(&[0.0, 10.0], 0.025) - 0.25).abs() < 1e-12);
    }
}

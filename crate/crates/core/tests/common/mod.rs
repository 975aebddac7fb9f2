//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use nhnet_core::model::Nhnet;
use nhnet_core::rng::{seeded, truncated_normal};
use nhnet_core::tokenizer::{TokenSequence, EOS};
use nhnet_core::ParameterStore;

/// Lowercased whitespace words with non-alphanumeric edges removed.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let chars: Vec<char> = raw.chars().collect();
        let mut lo = 0;
        let mut hi = chars.len();
        while lo < hi && !chars[lo].is_alphanumeric() {
            lo += 1;
        }
        while hi > lo && !chars[hi - 1].is_alphanumeric() {
            hi -= 1;
        }
        let w: String = chars[lo..hi].iter().collect::<String>().to_lowercase();
        if !w.is_empty() {
            out.push(w);
        }
    }
    out
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn prf(overlap: usize, pred: usize, gold: usize) -> (f64, f64, f64) {
    let p = ratio(overlap, pred);
    let r = ratio(overlap, gold);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Clipped n-gram overlap by exhaustive scanning.
pub fn rouge_n(pred: &str, gold: &str, n: usize) -> (f64, f64, f64) {
    let grams = |w: &[String]| -> Vec<Vec<String>> {
        if w.len() < n {
            return Vec::new();
        }
        (0..=w.len() - n).map(|i| w[i..i + n].to_vec()).collect()
    };
    let pg = grams(&words(pred));
    let gg = grams(&words(gold));
    let mut overlap = 0;
    for (i, g) in pg.iter().enumerate() {
        if pg[..i].contains(g) {
            continue;
        }
        let in_pred = pg.iter().filter(|x| *x == g).count();
        let in_gold = gg.iter().filter(|x| *x == g).count();
        overlap += in_pred.min(in_gold);
    }
    prf(overlap, pg.len(), gg.len())
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|w| it.any(|h| h == *w))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn lcs_brute(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16, "brute-force LCS is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let pick: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if pick.len() > best && is_subsequence(&pick, b) {
            best = pick.len();
        }
    }
    best
}

pub fn rouge_l(pred: &str, gold: &str) -> (f64, f64, f64) {
    let (p, g) = (words(pred), words(gold));
    prf(lcs_brute(&p, &g), p.len(), g.len())
}

/// Whitespace-collapsed character count and word count.
fn lengths(text: &str) -> (usize, usize) {
    let mut chars = 0;
    let mut words = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_whitespace() {
            in_word = false;
        } else {
            if !in_word {
                if words > 0 {
                    chars += 1;
                }
                words += 1;
                in_word = true;
            }
            chars += 1;
        }
    }
    (chars, words)
}

pub fn relative_length(pred: &str, gold: &str) -> (f64, f64) {
    let (pc, pw) = lengths(pred);
    let (gc, gw) = lengths(gold);
    (pc as f64 / gc as f64, pw as f64 / gw as f64)
}

/// Twenty prediction/gold pairs covering repeats, punctuation, case, empty
/// predictions and reordering.
pub const METRIC_CASES: [(&str, &str); 20] = [
    ("raptors vs bucks", "raptors bucks game"),
    ("raptors bucks game", "raptors bucks game"),
    ("", "raptors win"),
    ("the the the", "the cat"),
    ("the cat sat on the mat", "the mat had a cat on it"),
    ("Raptors, beat BUCKS!", "raptors beat bucks"),
    ("a b c d e", "e d c b a"),
    ("a b a b a b", "b a b a"),
    ("apple releases new iphone", "new iphone released by apple"),
    ("storm hits coast", "coast braces for storm"),
    ("x", "x y z"),
    ("one two three four", "one"),
    ("--- ...", "anything here"),
    ("police arrest suspect in shooting", "suspect arrested after shooting, police say"),
    ("a a a a", "a a"),
    ("market falls as rates rise", "rates rise and market falls"),
    ("q w e r t y", "a s d f g h"),
    ("  spaced   out   words ", "spaced out words"),
    ("New York wins", "new york loses"),
    ("b c d b c", "b c b c d"),
];

/// Resets every parameter to a fresh normal draw with standard deviation
/// `std`, so that token distributions are far from uniform.
pub fn redraw(params: &mut ParameterStore, std: f64, seed: u64) {
    let mut rng = seeded(seed);
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v = truncated_normal(&mut rng, std);
        }
    }
}

/// Every sequence beam search can finish: ends at EOS, or reaches
/// `max_len` tokens with no earlier EOS.
pub fn finished_sequences(vocab: u32, max_len: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut open: Vec<Vec<u32>> = vec![Vec::new()];
    for len in 1..=max_len {
        let mut next = Vec::new();
        for prefix in &open {
            for tok in 0..vocab {
                let mut s = prefix.clone();
                s.push(tok);
                if tok == EOS || len == max_len {
                    out.push(s);
                } else {
                    next.push(s);
                }
            }
        }
        open = next;
    }
    out
}

/// Best finished sequence under `log p / len^alpha`, ties to the smaller ids.
pub fn exhaustive_best(model: &Nhnet, bodies: &[TokenSequence], max_len: usize, alpha: f64) -> (Vec<u32>, f64) {
    let vocab = model.config.model.vocab_size as u32;
    let mut best: Option<(Vec<u32>, f64)> = None;
    for seq in finished_sequences(vocab, max_len) {
        let lp = model.sequence_log_prob(bodies, &seq).unwrap();
        let score = lp / (seq.len() as f64).powf(alpha);
        let better = match &best {
            None => true,
            Some((ids, s)) => score > *s || (score == *s && seq < *ids),
        };
        if better {
            best = Some((seq, score));
        }
    }
    best.unwrap()
}

/// Representative-title winner recomputed from a score function: highest
/// `(1/n) Σ_{j≠i} f(i, j)`, lowest index on ties.
pub fn brute_force_winner(n: usize, f: impl Fn(usize, usize) -> f64) -> usize {
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            if j != i {
                s += f(i, j);
            }
        }
        scores.push(s / n as f64);
    }
    let mut best = 0;
    for i in 1..n {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

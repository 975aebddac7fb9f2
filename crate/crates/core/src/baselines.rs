//! Extractive headline baselines and truecasing.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::distant::{select_from_table, select_representative, Scorer};
use crate::error::Result;
use crate::metrics::metric_tokens;
use crate::model::Story;

/// Suffix table of the k-way longest common subsequence, indexed row-major
/// by one position per sequence.
struct LcsTable<'a> {
    seqs: Vec<&'a [String]>,
    strides: Vec<usize>,
    table: Vec<u16>,
}

impl<'a> LcsTable<'a> {
    fn new(seqs: Vec<&'a [String]>) -> Self {
        let dims: Vec<usize> = seqs.iter().map(|s| s.len() + 1).collect();
        let mut strides = vec![1; dims.len()];
        for i in (0..dims.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        let total: usize = dims.iter().product();
        let mut table = vec![0u16; total];
        let mut pos = vec![0usize; dims.len()];
        for idx in (0..total).rev() {
            let mut rem = idx;
            for (p, s) in pos.iter_mut().zip(&strides) {
                *p = rem / s;
                rem %= s;
            }
            if pos.iter().zip(&seqs).any(|(&p, s)| p == s.len()) {
                continue;
            }
            let w = &seqs[0][pos[0]];
            table[idx] = if seqs.iter().zip(&pos).all(|(s, &p)| &s[p] == w) {
                1 + table[idx + strides.iter().sum::<usize>()]
            } else {
                strides.iter().map(|s| table[idx + s]).max().unwrap_or(0)
            };
        }
        LcsTable { seqs, strides, table }
    }

    fn index(&self, pos: &[usize]) -> usize {
        pos.iter().zip(&self.strides).map(|(p, s)| p * s).sum()
    }

    fn len(&self) -> usize {
        self.table[0] as usize
    }

    /// The common subsequence of maximal length whose positions in the first
    /// sequence are lexicographically smallest.
    fn reconstruct(&self) -> Vec<String> {
        let mut pos = vec![0usize; self.seqs.len()];
        let mut remaining = self.len();
        let mut out = Vec::with_capacity(remaining);
        while remaining > 0 {
            let first = self.seqs[0];
            'scan: for i in pos[0]..first.len() {
                let w = &first[i];
                let mut next = Vec::with_capacity(pos.len());
                next.push(i + 1);
                for (s, &p) in self.seqs.iter().zip(&pos).skip(1) {
                    match s[p..].iter().position(|x| x == w) {
                        Some(off) => next.push(p + off + 1),
                        None => continue 'scan,
                    }
                }
                if 1 + self.table[self.index(&next)] as usize == remaining {
                    out.push(w.clone());
                    pos = next;
                    remaining -= 1;
                    break;
                }
            }
        }
        out
    }
}

/// Longest word subsequence shared by all titles; failing that, the longest
/// shared by any pair of titles (earliest pair on ties); failing that, the
/// empty string. Ties between subsequences go to the earliest positions in
/// the first title of the set. Words are compared as metric tokens.
pub fn lcs_baseline(titles: &[&str]) -> String {
    let tokens: Vec<Vec<String>> = titles.iter().map(|t| metric_tokens(t)).collect();
    if tokens.is_empty() {
        return String::new();
    }
    let all = LcsTable::new(tokens.iter().map(Vec::as_slice).collect());
    if all.len() > 0 {
        return all.reconstruct().join(" ");
    }
    let mut best: Option<LcsTable<'_>> = None;
    for a in 0..tokens.len() {
        for b in a + 1..tokens.len() {
            let t = LcsTable::new(vec![&tokens[a], &tokens[b]]);
            if t.len() > best.as_ref().map_or(0, LcsTable::len) {
                best = Some(t);
            }
        }
    }
    best.map(|t| t.reconstruct().join(" ")).unwrap_or_default()
}

/// Title of the most representative article under `scorer`.
pub fn rep_titles_baseline(story: &Story, scorer: &Scorer) -> Result<String> {
    let s = select_representative(story, scorer)?;
    Ok(s.winner().title.clone())
}

/// The same selection from a precomputed score table.
pub fn rep_titles_from_table(titles: &[&str], table: &[Vec<f64>]) -> Result<String> {
    Ok(select_from_table(titles, table)?.winner().title.clone())
}

fn split_edges(word: &str) -> (&str, &str, &str) {
    let core_start = word.find(|c: char| c.is_alphanumeric()).unwrap_or(word.len());
    let core_end = word
        .rfind(|c: char| c.is_alphanumeric())
        .map_or(core_start, |i| i + word[i..].chars().next().map_or(1, char::len_utf8));
    (&word[..core_start], &word[core_start..core_end], &word[core_end..])
}

/// The strictly most frequent surface form, if any.
fn majority<K: Clone>(forms: &BTreeMap<K, usize>) -> Option<K> {
    let max = *forms.values().max()?;
    let mut top = forms.iter().filter(|(_, &c)| c == max);
    let first = top.next()?;
    top.next().is_none().then(|| first.0.clone())
}

/// Restores capitalization of `headline` from cased word and bigram
/// frequencies in `texts`. Bigram majorities are applied first, left to
/// right; remaining words take their unigram majority. Ties and unseen words
/// keep their lowercase form.
pub fn truecase(headline: &str, texts: &[&str]) -> String {
    let mut unigrams: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut bigrams: BTreeMap<(String, String), BTreeMap<(String, String), usize>> = BTreeMap::new();
    for text in texts {
        let words: Vec<&str> = text
            .split_whitespace()
            .map(|w| split_edges(w).1)
            .filter(|w| !w.is_empty())
            .collect();
        for w in &words {
            *unigrams
                .entry(w.to_lowercase())
                .or_default()
                .entry((*w).into())
                .or_default() += 1;
        }
        for pair in words.windows(2) {
            *bigrams
                .entry((pair[0].to_lowercase(), pair[1].to_lowercase()))
                .or_default()
                .entry((pair[0].into(), pair[1].into()))
                .or_default() += 1;
        }
    }
    let words: Vec<(&str, String, &str)> = headline
        .split_whitespace()
        .map(|w| {
            let (pre, core, post) = split_edges(w);
            (pre, core.to_lowercase(), post)
        })
        .collect();
    let mut cased: Vec<Option<String>> = vec![None; words.len()];
    let mut i = 0;
    while i + 1 < words.len() {
        let key = (words[i].1.clone(), words[i + 1].1.clone());
        if let Some((a, b)) = bigrams.get(&key).and_then(majority) {
            cased[i] = Some(a);
            cased[i + 1] = Some(b);
            i += 2;
        } else {
            i += 1;
        }
    }
    words
        .iter()
        .zip(cased)
        .map(|((pre, core, post), c)| {
            let core = c
                .or_else(|| unigrams.get(core).and_then(majority))
                .unwrap_or_else(|| core.clone());
            alloc::format!("{pre}{core}{post}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_lcs() {
        assert_eq!(lcs_baseline(&["a b c d", "x b c y"]), "b c");
        assert_eq!(lcs_baseline(&["p q r", "p q r"]), "p q r");
        assert_eq!(lcs_baseline(&["a b", "c d", "e f"]), "");
        assert_eq!(lcs_baseline(&[]), "");
    }

    #[test]
    fn falls_back_to_best_pair() {
        assert_eq!(lcs_baseline(&["a b c", "x y", "b c z"]), "b c");
    }

    #[test]
    fn ties_prefer_earliest_in_first_title() {
        assert_eq!(lcs_baseline(&["a b", "b a"]), "a");
        assert_eq!(lcs_baseline(&["x a y b", "b a"]), "a");
    }

    #[test]
    fn three_way() {
        assert_eq!(lcs_baseline(&["w a x b c", "a b y c", "a q b c"]), "a b c");
    }

    #[test]
    fn truecase_majority() {
        let texts = ["Raptors win. Raptors Raptors", "Raptors raptors Raptors"];
        assert_eq!(truecase("raptors beat bucks", &texts), "Raptors beat bucks");
        assert_eq!(truecase("apple", &["Apple apple"]), "apple");
        assert_eq!(truecase("new york wins", &["New York is big", "new"]), "New York wins");
        assert_eq!(truecase("nba: raptors!", &["NBA Raptors"]), "NBA: Raptors!");
    }

    #[test]
    fn rep_titles_from_fixed_table() {
        let t = [vec![0.0, 0.8], vec![0.3, 0.0]];
        assert_eq!(rep_titles_from_table(&["first", "second"], &t).unwrap(), "first");
        assert_eq!(rep_titles_from_table(&["same", "same"], &[vec![0.5; 2], vec![0.5; 2]]).unwrap(), "same");
        assert!(rep_titles_from_table(&["only"], &[vec![0.5]]).is_err());
    }
}

//! WordPiece-style subword tokenizer.
//!
//! Vocabularies are learned with a frequency-ranked pair-merge procedure and
//! written in WordPiece convention: a piece that starts a word is stored
//! verbatim, a word-internal piece carries the `##` prefix.
//!
//! Construction:
//! 1. Lowercase the corpus and count whitespace-delimited words.
//! 2. Seed the vocabulary with the reserved tokens, then every character seen
//!    at least `min_frequency` times, in both its word-initial form (`c`) and
//!    its continuation form (`##c`), sorted.
//! 3. Repeatedly count adjacent piece pairs over all words (weighted by word
//!    frequency), merge the most frequent pair (ties go to the lexicographically
//!    smallest pair) and append the merged piece, until the target size is
//!    reached or no pair occurs `min_frequency` times.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

/// Reserved pieces, in id order.
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[BOS]", "[EOS]"];

/// Prefix marking a word-internal piece.
pub const CONTINUATION: &str = "##";

/// Dense id ↔ piece mapping. Reserved tokens occupy ids `0..4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<String>,
    index: BTreeMap<String, u32>,
}

/// A sequence of vocabulary ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn truncated(mut self, max: usize) -> Self {
        self.ids.truncate(max);
        self
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        TokenSequence { ids }
    }
}

impl Vocabulary {
    /// Builds a vocabulary from pieces in id order. The reserved tokens must
    /// come first, and every piece must be unique and whitespace-free.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < RESERVED.len()
            || pieces.iter().zip(RESERVED).any(|(p, r)| p != r)
        {
            return Err(Error::input("vocabulary must start with the reserved tokens"));
        }
        let mut index = BTreeMap::new();
        for (id, piece) in pieces.iter().enumerate() {
            if piece.is_empty() || piece.chars().any(char::is_whitespace) {
                return Err(Error::input(alloc::format!("invalid piece on line {}", id + 1)));
            }
            if index.insert(piece.clone(), id as u32).is_some() {
                return Err(Error::input(alloc::format!("duplicate piece `{piece}`")));
            }
        }
        Ok(Vocabulary { pieces, index })
    }

    /// Parses the one-piece-per-line text form.
    pub fn from_text(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        Vocabulary::from_pieces(body.split('\n').map(str::to_string).collect())
    }

    /// One piece per line, line number = id, newline-terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.index.contains_key(piece)
    }
}

fn merged_piece(left: &str, right: &str) -> String {
    let mut s = String::with_capacity(left.len() + right.len());
    s.push_str(left);
    s.push_str(right.strip_prefix(CONTINUATION).unwrap_or(right));
    s
}

/// Learns a vocabulary of at most `target_size` pieces from `corpus`.
pub fn build_vocab<'a, I>(corpus: I, target_size: usize, min_frequency: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut words: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        for w in text.to_lowercase().split_whitespace() {
            *words.entry(w.to_string()).or_default() += 1;
        }
    }
    if words.is_empty() {
        return Err(Error::input("cannot build a vocabulary from an empty corpus"));
    }
    let min_frequency = min_frequency.max(1);

    let mut char_counts: BTreeMap<char, usize> = BTreeMap::new();
    for (w, &n) in &words {
        for c in w.chars() {
            *char_counts.entry(c).or_default() += n;
        }
    }
    let alphabet: Vec<char> = char_counts
        .iter()
        .filter(|(_, &n)| n >= min_frequency)
        .map(|(&c, _)| c)
        .collect();
    let seed = RESERVED.len() + 2 * alphabet.len();
    if target_size < seed {
        return Err(Error::input(alloc::format!(
            "target size {target_size} is smaller than the {seed} reserved and character pieces"
        )));
    }

    let mut pieces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    pieces.extend(alphabet.iter().map(|c| c.to_string()));
    pieces.extend(alphabet.iter().map(|c| alloc::format!("{CONTINUATION}{c}")));
    let mut known: BTreeMap<String, ()> = pieces.iter().map(|p| (p.clone(), ())).collect();

    let mut segmented: Vec<(Vec<String>, usize)> = words
        .iter()
        .map(|(w, &n)| {
            let symbols = w
                .chars()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        c.to_string()
                    } else {
                        alloc::format!("{CONTINUATION}{c}")
                    }
                })
                .collect();
            (symbols, n)
        })
        .collect();

    while pieces.len() < target_size {
        let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (symbols, n) in &segmented {
            for w in symbols.windows(2) {
                if known.contains_key(&w[0]) && known.contains_key(&w[1]) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
                }
            }
        }
        let mut best: Option<((&str, &str), usize)> = None;
        for (pair, n) in pairs {
            if n >= min_frequency && best.is_none_or(|(_, b)| n > b) {
                best = Some((pair, n));
            }
        }
        let Some(((l, r), _)) = best else { break };
        let (l, r) = (l.to_string(), r.to_string());
        let merged = merged_piece(&l, &r);
        for (symbols, _) in segmented.iter_mut() {
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(core::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            *symbols = out;
        }
        if known.insert(merged.clone(), ()).is_none() {
            pieces.push(merged);
        }
    }
    Vocabulary::from_pieces(pieces)
}

fn encode_word(word: &str, vocab: &Vocabulary, out: &mut Vec<u32>, max_tokens: usize) {
    let bounds: Vec<usize> = word
        .char_indices()
        .map(|(i, _)| i)
        .chain(core::iter::once(word.len()))
        .collect();
    let mut start = 0;
    let mut candidate = String::new();
    while start + 1 < bounds.len() {
        if out.len() >= max_tokens {
            return;
        }
        let mut found = None;
        for end in (start + 1..bounds.len()).rev() {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.push_str(&word[bounds[start]..bounds[end]]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some((id, end));
                break;
            }
        }
        match found {
            Some((id, end)) => {
                out.push(id);
                start = end;
            }
            None => {
                out.push(UNK);
                return;
            }
        }
    }
}

/// Greedy longest-match encoding of lowercased whitespace-delimited words,
/// keeping the first `max_tokens` pieces. A word residue with no matching
/// piece becomes a single `[UNK]`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_tokens: usize) -> TokenSequence {
    let mut ids = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        if ids.len() >= max_tokens {
            break;
        }
        encode_word(word, vocab, &mut ids, max_tokens);
    }
    TokenSequence { ids }
}

/// Joins pieces back into lowercase words. Padding, BOS and EOS are dropped;
/// `[UNK]` is kept as a surface marker.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for &id in &seq.ids {
        let piece = vocab.piece(id).ok_or(Error::TokenOutOfRange {
            id,
            size: vocab.len(),
        })?;
        if matches!(id, PAD | BOS | EOS) {
            continue;
        }
        match piece.strip_prefix(CONTINUATION) {
            Some(rest) if id != UNK && !out.is_empty() => out.push_str(&rest.to_lowercase()),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                if id == UNK {
                    out.push_str(piece);
                } else {
                    out.push_str(&piece.to_lowercase());
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn merge_example() {
        let v = build_vocab(["aa aa ab"], 10, 1).unwrap();
        assert_eq!(
            v.pieces(),
            &["[PAD]", "[UNK]", "[BOS]", "[EOS]", "a", "b", "##a", "##b", "aa", "ab"]
        );
    }

    #[test]
    fn target_below_charset_is_rejected() {
        assert!(build_vocab(["abc"], 7, 1).is_err());
        assert!(build_vocab(["", "  "], 100, 1).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let text = "the raptors beat the bucks in game one";
        assert_eq!(build_vocab([text], 60, 1).unwrap(), build_vocab([text], 60, 1).unwrap());
    }

    #[test]
    fn tokenize_examples() {
        let v = build_vocab(["raptors bucks game"], 200, 1).unwrap();
        assert!(tokenize("", &v, 10).is_empty());
        let seq = tokenize("Raptors", &v, 10);
        assert_eq!(seq.ids, vec![v.id("raptors").unwrap()]);
        assert_eq!(detokenize(&seq, &v).unwrap(), "raptors");
    }

    #[test]
    fn unknown_residue_becomes_unk() {
        let v = build_vocab(["ab"], 20, 1).unwrap();
        let seq = tokenize("abz", &v, 10);
        assert_eq!(seq.ids, vec![v.id("ab").unwrap(), UNK]);
        assert_eq!(detokenize(&seq, &v).unwrap(), "ab [UNK]");
    }

    #[test]
    fn truncation_keeps_leading_pieces() {
        let v = build_vocab(["a b"], 20, 1).unwrap();
        let text = ["a"; 300].join(" ");
        let seq = tokenize(&text, &v, 200);
        assert_eq!(seq.len(), 200);
    }

    #[test]
    fn detokenize_strips_control_tokens() {
        let v = build_vocab(["ab cd"], 30, 1).unwrap();
        let mut ids = vec![BOS];
        ids.extend(tokenize("ab cd", &v, 10).ids);
        ids.push(EOS);
        ids.push(PAD);
        assert_eq!(detokenize(&TokenSequence::new(ids), &v).unwrap(), "ab cd");
        assert!(detokenize(&TokenSequence::new(vec![999]), &v).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let v = build_vocab(["hello world"], 40, 1).unwrap();
        let text = v.to_text();
        assert_eq!(text.lines().count(), v.len());
        assert_eq!(Vocabulary::from_text(&text).unwrap(), v);
        assert!(Vocabulary::from_text("a\nb\n").is_err());
    }
}

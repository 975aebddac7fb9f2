use nhnet_core::tokenizer::{build_vocab, detokenize, tokenize, Vocabulary, CONTINUATION, UNK};
use proptest::prelude::*;

const CORPUS: &str = "the raptors beat the bucks in game seven while the bucks \
                      lost the lead late and raptors fans celebrated the win";

fn vocab() -> Vocabulary {
    build_vocab([CORPUS], 80, 1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ids_are_valid_and_bounded(text in "[a-z ]{0,60}", max in 0usize..20) {
        let v = vocab();
        let seq = tokenize(&text, &v, max);
        prop_assert!(seq.len() <= max);
        prop_assert!(seq.ids.iter().all(|&id| (id as usize) < v.len()));
    }

    #[test]
    fn corpus_words_round_trip(picks in proptest::collection::vec(0usize..20, 1..8)) {
        let v = vocab();
        let words: Vec<&str> = CORPUS.split_whitespace().collect();
        let text: Vec<&str> = picks.iter().map(|&i| words[i % words.len()]).collect();
        let text = text.join("  ");
        let seq = tokenize(&text.to_uppercase(), &v, 1000);
        prop_assert!(!seq.ids.contains(&UNK));
        let expected = text.split_whitespace().collect::<Vec<_>>().join(" ");
        prop_assert_eq!(detokenize(&seq, &v).unwrap(), expected);
    }

    #[test]
    fn matching_is_greedy_longest(word in "[a-z]{1,12}") {
        let v = vocab();
        let seq = tokenize(&word, &v, 100);
        if seq.ids.contains(&UNK) {
            return Ok(());
        }
        let mut rest = word.as_str();
        for (k, &id) in seq.ids.iter().enumerate() {
            let piece = v.piece(id).unwrap();
            let bare = piece.strip_prefix(CONTINUATION).unwrap_or(piece);
            prop_assert_eq!(k > 0, piece.starts_with(CONTINUATION));
            prop_assert!(rest.starts_with(bare));
            for longer in bare.len() + 1..=rest.len() {
                let candidate = if k > 0 { format!("{CONTINUATION}{}", &rest[..longer]) } else { rest[..longer].to_string() };
                prop_assert!(!v.contains(&candidate), "{} skipped for {}", candidate, piece);
            }
            rest = &rest[bare.len()..];
        }
        prop_assert!(rest.is_empty());
    }
}

#[test]
fn vocabulary_file_round_trips() {
    let v = vocab();
    let text = v.to_text();
    assert_eq!(Vocabulary::from_text(&text).unwrap(), v);
    for (i, line) in text.lines().enumerate() {
        assert_eq!(v.id(line), Some(i as u32));
    }
}

mod common;

use nhnet_core::baselines::{rep_titles_baseline, rep_titles_from_table};
use nhnet_core::corpus::{synth_corpus, SynthConfig};
use nhnet_core::distant::{
    build_distant_dataset, label_story, select_from_table, select_representative, Scorer, ScorerConfig,
};
use nhnet_core::model::Story;
use nhnet_core::rng::{seeded, truncated_normal};
use nhnet_core::tokenizer::{build_vocab, Vocabulary};
use nhnet_core::transformer::ModelConfig;

fn stories(seed: u64) -> (Vec<Story>, Vocabulary) {
    let mut records = Vec::new();
    for size in 2..=6 {
        let cfg = SynthConfig {
            num_stories: 8,
            articles_per_story: size,
            body_words: 12,
            seed: seed + size as u64,
            ..SynthConfig::default()
        };
        records.extend(synth_corpus(&cfg).unwrap());
    }
    let text: Vec<String> = records
        .iter()
        .flat_map(|r| r.articles.iter().flat_map(|a| [a.title.clone(), a.body.clone()]))
        .collect();
    let vocab = build_vocab(text.iter().map(String::as_str), 300, 1).unwrap();
    let mut out: Vec<Story> = records.iter().map(|r| r.to_story(&vocab, 48)).collect();
    for (i, s) in out.iter_mut().enumerate() {
        s.story_id = format!("{}-{i}", s.story_id);
        if i % 7 == 0 {
            let first = s.articles[0].clone();
            s.articles.iter_mut().for_each(|a| *a = first.clone());
        } else if i % 5 == 0 {
            s.articles[1] = s.articles[0].clone();
        }
    }
    (out, vocab)
}

fn scorer(vocab: &Vocabulary, seed: u64) -> Scorer {
    let model = ModelConfig::desk_scale(vocab.len());
    let mut s = Scorer::new(ScorerConfig::new(model), vocab.clone(), seed).unwrap();
    let mut rng = seeded(seed);
    for (_, t) in s.params.iter_mut() {
        for v in t.data_mut() {
            *v = truncated_normal(&mut rng, 0.3);
        }
    }
    s
}

#[test]
fn winner_matches_brute_force() {
    let (stories, vocab) = stories(3);
    let scorer = scorer(&vocab, 8);
    assert_eq!(stories.len(), 40);
    for story in &stories {
        let sel = select_representative(story, &scorer).unwrap();
        let a = &story.articles;
        let want = common::brute_force_winner(a.len(), |i, j| scorer.score(&a[i].title, &a[j].body).unwrap());
        assert_eq!(sel.winner, want, "{}", story.story_id);
        assert_eq!(rep_titles_baseline(story, &scorer).unwrap(), a[want].title);
    }
}

#[test]
fn identical_articles_pick_the_first() {
    let (stories, vocab) = stories(4);
    let scorer = scorer(&vocab, 1);
    let story = &stories[0];
    assert!(story.articles.iter().all(|a| *a == story.articles[0]));
    assert_eq!(select_representative(story, &scorer).unwrap().winner, 0);
}

#[test]
fn winner_is_invariant_under_monotone_transforms() {
    let mut rng = seeded(2);
    for n in 2..=6 {
        let table: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| truncated_normal(&mut rng, 0.2) + 0.5).collect())
            .collect();
        let titles: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let titles: Vec<&str> = titles.iter().map(String::as_str).collect();
        let base = select_from_table(&titles, &table).unwrap().winner;
        let scaled: Vec<Vec<f64>> = table.iter().map(|r| r.iter().map(|v| 3.0 * v + 1.0).collect()).collect();
        assert_eq!(select_from_table(&titles, &scaled).unwrap().winner, base);
        assert_eq!(rep_titles_from_table(&titles, &table).unwrap(), titles[base]);
    }
}

#[test]
fn winner_follows_reordering() {
    let table = vec![
        vec![0.9, 0.2, 0.7],
        vec![0.1, 0.8, 0.9],
        vec![0.3, 0.3, 0.5],
    ];
    let titles = ["a", "b", "c"];
    assert_eq!(select_from_table(&titles, &table).unwrap().winner().title, "b");
    let perm = [2, 0, 1];
    let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| perm.iter().map(|&j| table[i][j]).collect()).collect();
    let titles_p: Vec<&str> = perm.iter().map(|&i| titles[i]).collect();
    assert_eq!(select_from_table(&titles_p, &permuted).unwrap().winner().title, "b");
}

#[test]
fn threshold_applies_to_inclusion_score() {
    let keep = select_from_table(&["Keep Me", "other"], &[vec![0.6, 0.6], vec![0.1, 0.1]]).unwrap();
    assert_eq!(label_story(&keep, "s", 0.5).unwrap().label, "keep me");
    let drop = select_from_table(&["Drop", "other"], &[vec![0.4, 0.4], vec![0.1, 0.1]]).unwrap();
    assert!(label_story(&drop, "s", 0.5).is_none());
}

#[test]
fn retention_is_monotone_in_threshold() {
    let (stories, vocab) = stories(6);
    let scorer = scorer(&vocab, 2);
    let mut last = f64::INFINITY;
    for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let (labels, stats) = build_distant_dataset(&stories, &scorer, t).unwrap();
        assert_eq!(stats.retained, labels.len());
        assert!(stats.retention <= last);
        last = stats.retention;
    }
    let (labels, stats) = build_distant_dataset(&[], &scorer, 0.5).unwrap();
    assert!(labels.is_empty());
    assert_eq!((stats.stories, stats.retained, stats.retention), (0, 0, 0.0));
    assert!(build_distant_dataset(&stories, &scorer, 1.0).is_err());
}

//! Story corpus records, the synthetic topic corpus, noise injection and
//! time-ordered splitting.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Article, Story};
use crate::rng::seeded;
use crate::tokenizer::{tokenize, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LabelSource {
    Human,
    Distant,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArticleRecord {
    pub id: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusRecord {
    pub story_id: String,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub timestamp: Option<i64>,
    pub articles: Vec<ArticleRecord>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub headline: Option<String>,
    pub label_source: LabelSource,
}

impl CorpusRecord {
    /// Articles nonempty, and a headline exactly when the label source is
    /// not `none`.
    pub fn validate(&self) -> Result<()> {
        if self.articles.is_empty() {
            return Err(Error::input(format!("story {} has no articles", self.story_id)));
        }
        if self.headline.is_some() != (self.label_source != LabelSource::None) {
            return Err(Error::input(format!(
                "story {}: headline must be present exactly when label_source is not none",
                self.story_id
            )));
        }
        Ok(())
    }

    pub fn to_story(&self, vocab: &Vocabulary, max_article_tokens: usize) -> Story {
        Story {
            story_id: self.story_id.clone(),
            articles: self
                .articles
                .iter()
                .map(|a| Article {
                    title: a.title.clone(),
                    body: tokenize(&a.body, vocab, max_article_tokens),
                })
                .collect(),
            headline: self.headline.clone(),
        }
    }

    pub fn titles(&self) -> Vec<&str> {
        self.articles.iter().map(|a| a.title.as_str()).collect()
    }
}

/// Rejects duplicate story ids and invalid records.
pub fn validate_corpus(records: &[CorpusRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert(r.story_id.as_str()) {
            return Err(Error::input(format!("duplicate story_id {}", r.story_id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthConfig {
    pub num_stories: usize,
    pub articles_per_story: usize,
    /// Words per topic.
    pub topic_vocab_size: usize,
    /// Distinct topics; stories cycle through them. Defaults to one topic
    /// per story.
    pub num_topics: Option<usize>,
    pub headline_words: usize,
    pub title_extra_words: usize,
    pub body_words: usize,
    /// Words shared by every topic.
    pub background_vocab_size: usize,
    /// Probability that a body word is drawn from the shared background.
    pub background_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_stories: 100,
            articles_per_story: 3,
            topic_vocab_size: 12,
            num_topics: None,
            headline_words: 3,
            title_extra_words: 2,
            body_words: 30,
            background_vocab_size: 30,
            background_rate: 0.15,
            seed: 0,
        }
    }
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// `count` distinct pseudo-words of two or three syllables.
fn pseudo_words<R: Rng>(count: usize, rng: &mut R) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(count);
    while words.len() < count {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| {
                let mut s = String::from(*ONSETS.choose(rng).expect("nonempty"));
                s.push_str(VOWELS.choose(rng).expect("nonempty"));
                s
            })
            .collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// A topic: its words, the first `headline_words` of which form the
/// canonical phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct Topic {
    pub words: Vec<String>,
    pub headline_words: usize,
}

impl Topic {
    pub fn phrase(&self) -> String {
        self.words[..self.headline_words].join(" ")
    }
}

/// Topic vocabularies with disjoint words, plus the shared background words.
pub fn synth_topics(cfg: &SynthConfig) -> Result<(Vec<Topic>, Vec<String>)> {
    if cfg.articles_per_story < 2 {
        return Err(Error::config("articles_per_story must be at least 2"));
    }
    if cfg.headline_words == 0 || cfg.headline_words > cfg.topic_vocab_size {
        return Err(Error::config("headline_words must lie in 1..=topic_vocab_size"));
    }
    if !(0.0..=1.0).contains(&cfg.background_rate) || (cfg.background_rate > 0.0 && cfg.background_vocab_size == 0) {
        return Err(Error::config("background words are drawn but none exist"));
    }
    let num_topics = cfg.num_topics.unwrap_or(cfg.num_stories).max(1);
    let mut rng = seeded(cfg.seed);
    let pool = pseudo_words(num_topics * cfg.topic_vocab_size + cfg.background_vocab_size, &mut rng);
    let (topic_pool, background) = pool.split_at(num_topics * cfg.topic_vocab_size);
    let topics = topic_pool
        .chunks(cfg.topic_vocab_size)
        .map(|c| Topic {
            words: c.to_vec(),
            headline_words: cfg.headline_words,
        })
        .collect();
    Ok((topics, background.to_vec()))
}

/// Synthetic labeled stories. Story `i` takes topic `i mod num_topics`; its
/// gold headline is the topic's canonical phrase. Titles keep the phrase
/// order with words occasionally dropped and a few other topic words
/// appended, capitalized at the start. Bodies mix topic words with shared
/// background words.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<CorpusRecord>> {
    let (topics, background) = synth_topics(cfg)?;
    let mut rng = seeded(cfg.seed ^ 0x5eed_c0de);
    let mut records = Vec::with_capacity(cfg.num_stories);
    for s in 0..cfg.num_stories {
        let topic = &topics[s % topics.len()];
        let story_id = format!("s{s:05}");
        let articles = (0..cfg.articles_per_story)
            .map(|a| {
                let mut title: Vec<&str> = topic.words[..topic.headline_words]
                    .iter()
                    .filter(|_| rng.random::<f64>() >= 0.25)
                    .map(String::as_str)
                    .collect();
                if title.is_empty() {
                    title.push(&topic.words[0]);
                }
                for _ in 0..cfg.title_extra_words {
                    title.push(topic.words.choose(&mut rng).expect("nonempty topic"));
                }
                let body: Vec<&str> = (0..cfg.body_words)
                    .map(|_| {
                        if rng.random::<f64>() < cfg.background_rate {
                            background.choose(&mut rng).expect("nonempty background").as_str()
                        } else {
                            topic.words.choose(&mut rng).expect("nonempty topic").as_str()
                        }
                    })
                    .collect();
                ArticleRecord {
                    id: format!("{story_id}-a{a}"),
                    title: capitalize(&title.join(" ")),
                    body: body.join(" "),
                }
            })
            .collect();
        records.push(CorpusRecord {
            story_id,
            timestamp: Some(s as i64),
            articles,
            headline: Some(topic.phrase()),
            label_source: LabelSource::Human,
        });
    }
    Ok(records)
}

/// Which article of a story was replaced, and where the replacement came from.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseEntry {
    pub story_id: String,
    pub replaced_index: usize,
    pub source_story_id: String,
}

/// Replaces one uniformly chosen article per story with a uniformly chosen
/// article of a uniformly chosen different story.
pub fn inject_noise(records: &[CorpusRecord], seed: u64) -> Result<(Vec<CorpusRecord>, Vec<NoiseEntry>)> {
    if records.len() < 2 {
        return Err(Error::input("noise injection needs at least two stories"));
    }
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(records.len());
    let mut manifest = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        r.validate()?;
        let replaced_index = rng.random_range(0..r.articles.len());
        let mut j = rng.random_range(0..records.len() - 1);
        if j >= i {
            j += 1;
        }
        let source = &records[j];
        let article = source
            .articles
            .choose(&mut rng)
            .ok_or_else(|| Error::input(format!("story {} has no articles", source.story_id)))?;
        let mut noisy = r.clone();
        noisy.articles[replaced_index] = article.clone();
        out.push(noisy);
        manifest.push(NoiseEntry {
            story_id: r.story_id.clone(),
            replaced_index,
            source_story_id: source.story_id.clone(),
        });
    }
    Ok((out, manifest))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<CorpusRecord>,
    pub validation: Vec<CorpusRecord>,
    pub test: Vec<CorpusRecord>,
}

/// Partitions records by ascending timestamp so that every validation key is
/// strictly greater than every training key, and every test key strictly
/// greater than every validation key. Boundaries sit at the rounded cumulative fractions;
/// a boundary that would fall inside a run of equal keys moves forward past
/// the run. A split with a positive fraction that ends up empty is an error.
pub fn split_by_key(records: &[CorpusRecord], spec: &SplitSpec) -> Result<Splits> {
    let fr = [spec.train, spec.validation, spec.test];
    if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("split fractions must be in [0, 1] and sum to 1"));
    }
    let mut keyed = Vec::with_capacity(records.len());
    for r in records {
        let key = r
            .timestamp
            .ok_or_else(|| Error::input(format!("story {} has no timestamp", r.story_id)))?;
        keyed.push((key, r));
    }
    keyed.sort_by_key(|(k, _)| *k);
    let n = keyed.len();
    let round = |f: f64| libm::round(f * n as f64) as usize;
    let advance = |mut b: usize| {
        while b > 0 && b < n && keyed[b].0 == keyed[b - 1].0 {
            b += 1;
        }
        b
    };
    let b1 = advance(round(spec.train).min(n));
    let b2 = advance(round(spec.train + spec.validation).min(n).max(b1));
    let parts = [&keyed[..b1], &keyed[b1..b2], &keyed[b2..]];
    for (name, (part, f)) in ["train", "validation", "test"].iter().zip(parts.iter().zip(fr)) {
        if part.is_empty() && f > 0.0 {
            return Err(Error::input(format!(
                "{name} split is empty; keys cannot be separated strictly"
            )));
        }
    }
    let collect = |p: &[(i64, &CorpusRecord)]| p.iter().map(|(_, r)| (*r).clone()).collect();
    Ok(Splits {
        train: collect(parts[0]),
        validation: collect(parts[1]),
        test: collect(parts[2]),
    })
}

/// Shuffled copy of `records` (used to check order-independence).
pub fn shuffled(records: &[CorpusRecord], seed: u64) -> Vec<CorpusRecord> {
    let mut out = records.to_vec();
    out.shuffle(&mut seeded(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_stories: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn synth_is_deterministic_and_valid() {
        let a = synth_corpus(&small()).unwrap();
        assert_eq!(a, synth_corpus(&small()).unwrap());
        validate_corpus(&a).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|r| r.articles.len() == 3));
    }

    #[test]
    fn headline_words_come_from_topic() {
        let cfg = small();
        let (topics, _) = synth_topics(&cfg).unwrap();
        for (i, r) in synth_corpus(&cfg).unwrap().iter().enumerate() {
            let t = &topics[i % topics.len()];
            for w in r.headline.as_ref().unwrap().split(' ') {
                assert!(t.words.iter().any(|x| x == w));
            }
        }
    }

    #[test]
    fn single_article_stories_rejected() {
        let cfg = SynthConfig {
            articles_per_story: 1,
            ..small()
        };
        assert!(synth_corpus(&cfg).is_err());
    }

    #[test]
    fn noise_replaces_exactly_one_article() {
        let clean = synth_corpus(&small()).unwrap();
        let (noisy, manifest) = inject_noise(&clean, 4).unwrap();
        for ((c, n), m) in clean.iter().zip(&noisy).zip(&manifest) {
            assert_ne!(m.source_story_id, c.story_id);
            let diff: Vec<usize> = (0..3).filter(|&i| c.articles[i] != n.articles[i]).collect();
            assert_eq!(diff, [m.replaced_index]);
        }
        assert!(inject_noise(&clean[..1], 0).is_err());
    }

    #[test]
    fn split_ten_records() {
        let recs = synth_corpus(&small()).unwrap();
        let s = split_by_key(&shuffled(&recs, 1), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s.test[0].story_id, "s00009");
    }

    #[test]
    fn equal_keys_cannot_split() {
        let mut recs = synth_corpus(&small()).unwrap();
        recs.iter_mut().for_each(|r| r.timestamp = Some(7));
        assert!(split_by_key(&recs, &SplitSpec::default()).is_err());
        recs[0].timestamp = None;
        assert!(split_by_key(&recs, &SplitSpec::default()).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut recs = synth_corpus(&small()).unwrap();
        recs[1].story_id = recs[0].story_id.clone();
        let e = validate_corpus(&recs).unwrap_err();
        assert!(alloc::format!("{e}").contains("s00000"));
    }
}

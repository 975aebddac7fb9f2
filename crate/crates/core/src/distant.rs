//! Distant supervision: a title/article matching scorer and the selection of
//! the most representative title of a story as its headline.
//!
//! For a story of `n` articles with score table `f[i][j] = f(title_i, body_j)`:
//!
//! * ranking score of title `i`: `(1/n) Σ_{j ≠ i} f[i][j]`, used to pick the
//!   winner (ties go to the lowest index);
//! * inclusion score of title `i`: `(1/n) Σ_j f[i][j]`, compared against the
//!   threshold to decide whether the story is kept.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{sigmoid, Reduction, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Article, Story};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{seeded, truncated_normal};
use crate::tensor::{ParameterStore, Tensor};
use crate::tokenizer::{tokenize, TokenSequence, Vocabulary, EOS};
use crate::transformer::{encode_sequence, init_params, Ctx, ModelConfig, INIT_STD};

pub const HEAD_W: &str = "scorer.head.w";
pub const HEAD_B: &str = "scorer.head.b";

const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScorerConfig {
    pub model: ModelConfig,
    pub max_title_tokens: usize,
    pub steps: usize,
    pub batch_size: usize,
    /// Random negative bodies per title.
    pub negative_ratio: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl ScorerConfig {
    pub fn new(model: ModelConfig) -> Self {
        ScorerConfig {
            model,
            max_title_tokens: 16,
            steps: 300,
            batch_size: 8,
            negative_ratio: 1,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Shared encoder applied to `title [EOS]` and `body [EOS]` separately. The
/// mean-pooled states `u` and `v` form the pair encoding `[u * v, (u - v)^2]`
/// read by a logistic head.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    pub config: ScorerConfig,
    pub params: ParameterStore,
    pub vocab: Vocabulary,
}

/// One training pair: indices of the title's article and the body's article.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScorerPair {
    pub title: usize,
    pub body: usize,
    pub positive: bool,
}

impl Scorer {
    /// Fresh encoder weights and a small random head.
    pub fn new(config: ScorerConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if vocab.len() != config.model.vocab_size {
            return Err(Error::config("scorer vocabulary size differs from its model config"));
        }
        let mut rng = seeded(seed);
        let mut params = init_params(&config.model, &mut rng)?;
        let decoder: Vec<String> = params
            .names()
            .filter(|n| n.starts_with("decoder."))
            .map(Into::into)
            .collect();
        for name in decoder {
            params.remove(&name);
        }
        let d = config.model.hidden_dim;
        let w = (0..2 * d).map(|_| truncated_normal(&mut rng, INIT_STD)).collect();
        params.insert(HEAD_W, Tensor::new(vec![2 * d, 1], w)?);
        params.insert(HEAD_B, Tensor::vector(vec![0.0]));
        Ok(Scorer {
            config,
            params,
            vocab,
        })
    }

    /// Token ids of `title [EOS]` and `body [EOS]`, each capped so that it
    /// fits the encoder.
    pub fn pair_ids(&self, title: &str, body: &TokenSequence) -> (Vec<u32>, Vec<u32>) {
        let c = &self.config.model;
        let cap = c.max_article_tokens.min(c.max_positions - 1);
        let mut t = tokenize(title, &self.vocab, self.config.max_title_tokens.min(cap)).ids;
        t.push(EOS);
        let mut b: Vec<u32> = body.ids.iter().copied().take(cap).collect();
        b.push(EOS);
        (t, b)
    }

    fn pooled<'t>(&self, ctx: &Ctx<'t, '_>, ids: &[u32]) -> Result<Var<'t>> {
        let d = self.config.model.hidden_dim;
        encode_sequence(ctx, ids, &self.config.model)?
            .sum_axis(0)?
            .scale(1.0 / ids.len() as f64)?
            .reshape(&[1, d])
    }

    fn logit<'t>(&self, ctx: &Ctx<'t, '_>, (title, body): &(Vec<u32>, Vec<u32>)) -> Result<Var<'t>> {
        let u = self.pooled(ctx, title)?;
        let v = self.pooled(ctx, body)?;
        let diff = u.sub(v)?;
        let features = Var::concat(&[u.mul(v)?, diff.mul(diff)?], 1)?;
        features.matmul(ctx.p(HEAD_W)?)?.reshape(&[1])?.add(ctx.p(HEAD_B)?)
    }

    /// Probability that `title` describes the article with `body`, in (0, 1).
    pub fn score(&self, title: &str, body: &TokenSequence) -> Result<f64> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let z = self.logit(&ctx, &self.pair_ids(title, body))?.item();
        Ok(sigmoid(z).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
    }

    /// `table[i][j] = score(title_i, body_j)`.
    pub fn score_table(&self, articles: &[Article]) -> Result<Vec<Vec<f64>>> {
        articles
            .iter()
            .map(|t| articles.iter().map(|a| self.score(&t.title, &a.body)).collect())
            .collect()
    }
}

/// Each article's own title/body pair as a positive, plus `negative_ratio`
/// pairs of its title with the body of a uniformly drawn other article.
pub fn scorer_pairs<R: Rng>(n: usize, negative_ratio: usize, rng: &mut R) -> Result<Vec<ScorerPair>> {
    if n < 2 {
        return Err(Error::input("scorer training needs at least two articles"));
    }
    let mut pairs = Vec::with_capacity(n * (1 + negative_ratio));
    for i in 0..n {
        pairs.push(ScorerPair {
            title: i,
            body: i,
            positive: true,
        });
        for _ in 0..negative_ratio {
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            pairs.push(ScorerPair {
                title: i,
                body: j,
                positive: false,
            });
        }
    }
    Ok(pairs)
}

/// Trained scorer with its per-step loss trace.
#[derive(Debug, Clone)]
pub struct TrainedScorer {
    pub scorer: Scorer,
    pub pairs: Vec<ScorerPair>,
    pub loss_trace: Vec<f64>,
}

/// Trains the matching scorer with binary cross-entropy on positive and
/// random negative pairs.
pub fn train_scorer(articles: &[Article], vocab: Vocabulary, config: ScorerConfig) -> Result<TrainedScorer> {
    let mut rng = seeded(config.seed);
    let pairs = scorer_pairs(articles.len(), config.negative_ratio, &mut rng)?;
    let mut scorer = Scorer::new(config, vocab, rng.random())?;
    let encoded: Vec<((Vec<u32>, Vec<u32>), f64)> = pairs
        .iter()
        .map(|p| {
            (
                scorer.pair_ids(&articles[p.title].title, &articles[p.body].body),
                if p.positive { 1.0 } else { 0.0 },
            )
        })
        .collect();
    let mut adam = Adam::new(config.adam);
    let batch_size = config.batch_size.clamp(1, encoded.len());
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut trace = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor >= order.len() {
                order = (0..encoded.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let tape = Tape::new();
        let loss = {
            let ctx = Ctx::new(&tape, &scorer.params);
            let logits = batch
                .iter()
                .map(|&i| scorer.logit(&ctx, &encoded[i].0))
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<f64> = batch.iter().map(|&i| encoded[i].1).collect();
            Var::concat(&logits, 0)?.bce_with_logits(&targets, Reduction::Mean)?
        };
        trace.push(loss.item());
        scorer.params.zero_grads();
        tape.backward_into(loss, &mut scorer.params)?;
        adam.step(&mut scorer.params);
    }
    Ok(TrainedScorer {
        scorer,
        pairs,
        loss_trace: trace,
    })
}

/// Scores of one candidate title.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoredTitle {
    pub index: usize,
    pub title: String,
    /// `(1/n) Σ_{j ≠ i} f(title_i, body_j)`.
    pub ranking_score: f64,
    /// `(1/n) Σ_j f(title_i, body_j)`.
    pub inclusion_score: f64,
    /// `f(title_i, body_j)` for every article `j`.
    pub breakdown: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Selection {
    pub candidates: Vec<ScoredTitle>,
    pub winner: usize,
}

impl Selection {
    pub fn winner(&self) -> &ScoredTitle {
        &self.candidates[self.winner]
    }
}

/// Picks the title with the highest ranking score from a square score
/// table. Ties go to the lowest index.
pub fn select_from_table(titles: &[&str], table: &[Vec<f64>]) -> Result<Selection> {
    let n = table.len();
    if n < 2 {
        return Err(Error::input("representative title selection needs at least two articles"));
    }
    if titles.len() != n || table.iter().any(|row| row.len() != n) {
        return Err(Error::input("score table must be square and match the titles"));
    }
    let candidates: Vec<ScoredTitle> = table
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let others: f64 = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| s).sum();
            ScoredTitle {
                index: i,
                title: titles[i].into(),
                ranking_score: others / n as f64,
                inclusion_score: row.iter().sum::<f64>() / n as f64,
                breakdown: row.clone(),
            }
        })
        .collect();
    let mut winner = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if c.ranking_score > candidates[winner].ranking_score {
            winner = i;
        }
    }
    Ok(Selection { candidates, winner })
}

pub fn select_representative(story: &Story, scorer: &Scorer) -> Result<Selection> {
    if story.articles.len() < 2 {
        return Err(Error::input(alloc::format!(
            "story {} has fewer than two articles",
            story.story_id
        )));
    }
    let table = scorer.score_table(&story.articles)?;
    let titles: Vec<&str> = story.articles.iter().map(|a| a.title.as_str()).collect();
    select_from_table(&titles, &table)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistantLabel {
    pub story_id: String,
    pub label: String,
    pub selection: Selection,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistantStats {
    pub stories: usize,
    pub retained: usize,
    pub retention: f64,
    /// Label length in words to number of retained labels.
    pub label_lengths: BTreeMap<usize, usize>,
}

impl DistantStats {
    pub fn from_labels<'a>(stories: usize, labels: impl IntoIterator<Item = &'a DistantLabel>) -> Self {
        let mut stats = DistantStats {
            stories,
            ..DistantStats::default()
        };
        for l in labels {
            stats.retained += 1;
            *stats
                .label_lengths
                .entry(l.label.split_whitespace().count())
                .or_default() += 1;
        }
        if stories > 0 {
            stats.retention = stats.retained as f64 / stories as f64;
        }
        stats
    }
}

/// Keeps the winner's title, lowercased, when its inclusion score exceeds
/// `threshold`. Stories with fewer than two articles are dropped.
pub fn label_story(selection: &Selection, story_id: &str, threshold: f64) -> Option<DistantLabel> {
    let w = selection.winner();
    (w.inclusion_score > threshold).then(|| DistantLabel {
        story_id: story_id.into(),
        label: w.title.to_lowercase(),
        selection: selection.clone(),
    })
}

pub fn build_distant_dataset(
    stories: &[Story],
    scorer: &Scorer,
    threshold: f64,
) -> Result<(Vec<DistantLabel>, DistantStats)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("threshold must lie in (0, 1)"));
    }
    let mut labels = Vec::new();
    for story in stories {
        if story.articles.len() < 2 {
            continue;
        }
        let selection = select_representative(story, scorer)?;
        if let Some(l) = label_story(&selection, &story.story_id, threshold) {
            labels.push(l);
        }
    }
    let stats = DistantStats::from_labels(stories.len(), &labels);
    Ok((labels, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::build_vocab;

    #[test]
    fn two_article_table() {
        let s = select_from_table(&["t1", "t2"], &[vec![0.9, 0.8], vec![0.3, 0.9]]).unwrap();
        assert_eq!(s.winner, 0);
        assert!((s.candidates[0].ranking_score - 0.4).abs() < 1e-15);
        assert!((s.candidates[0].inclusion_score - 0.85).abs() < 1e-15);
    }

    #[test]
    fn ties_pick_first() {
        let t = vec![vec![0.5; 3]; 3];
        assert_eq!(select_from_table(&["a", "b", "c"], &t).unwrap().winner, 0);
    }

    #[test]
    fn single_article_is_an_error() {
        assert!(select_from_table(&["a"], &[vec![0.5]]).is_err());
        assert!(select_from_table(&["a", "b"], &[vec![0.5], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn negatives_never_pair_with_self() {
        let mut rng = seeded(3);
        let pairs = scorer_pairs(5, 3, &mut rng).unwrap();
        assert_eq!(pairs.len(), 20);
        assert!(pairs.iter().all(|p| p.positive == (p.title == p.body)));
        assert!(scorer_pairs(1, 1, &mut rng).is_err());
    }

    #[test]
    fn untrained_scorer_is_in_open_unit_interval() {
        let vocab = build_vocab(["red fox runs", "blue bird sings"], 40, 1).unwrap();
        let mc = ModelConfig::desk_scale(vocab.len());
        let scorer = Scorer::new(ScorerConfig::new(mc), vocab.clone(), 1).unwrap();
        let body = tokenize("red fox", &vocab, 48);
        let s = scorer.score("blue bird", &body).unwrap();
        assert!(s > 0.0 && s < 1.0);
        assert_eq!(s, scorer.score("blue bird", &body).unwrap());
    }

    #[test]
    fn empty_stream_gives_zero_stats() {
        let vocab = build_vocab(["a b"], 10, 1).unwrap();
        let scorer = Scorer::new(ScorerConfig::new(ModelConfig::desk_scale(vocab.len())), vocab, 0).unwrap();
        let (labels, stats) = build_distant_dataset(&[], &scorer, 0.5).unwrap();
        assert!(labels.is_empty());
        assert_eq!(stats, DistantStats::default());
    }
}

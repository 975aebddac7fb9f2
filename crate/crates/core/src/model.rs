//! The multi-document headline model: a shared encoder-decoder runs over
//! every article, article-level attention fuses the per-article decoder
//! states into one story state, and the tied output embedding turns that
//! state into a token distribution.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;

use crate::attention::{article_weights, fuse, init_article_attention, AttentionVariant};
use crate::autodiff::{softmax_slice, Reduction, Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::{seeded, SeededRng};
use crate::tensor::{ParameterStore, Tensor};
use crate::tokenizer::{detokenize, tokenize, TokenSequence, Vocabulary, BOS, EOS};
use crate::transformer::{decode, encode, init_params, Ctx, ModelConfig};

/// When article weights are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum WeightMode {
    /// Recomputed at every decoding step from that step's decoder states.
    PerStep,
    /// Computed once per story from mean-pooled encoder states.
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NhnetConfig {
    pub model: ModelConfig,
    pub attention: AttentionVariant,
    pub scale_scores: bool,
    pub weight_mode: WeightMode,
}

impl NhnetConfig {
    pub fn new(model: ModelConfig, attention: AttentionVariant) -> Self {
        NhnetConfig {
            model,
            attention,
            scale_scores: true,
            weight_mode: WeightMode::PerStep,
        }
    }
}

/// One article as the model sees it: the title is kept for baselines and
/// labeling but never fed to the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Article {
    pub title: String,
    pub body: TokenSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Story {
    pub story_id: String,
    pub articles: Vec<Article>,
    pub headline: Option<String>,
}

impl Story {
    /// Tokenizes bodies (truncated to `max_article_tokens`).
    pub fn from_texts(
        story_id: impl Into<String>,
        articles: &[(&str, &str)],
        headline: Option<&str>,
        vocab: &Vocabulary,
        max_article_tokens: usize,
    ) -> Self {
        Story {
            story_id: story_id.into(),
            articles: articles
                .iter()
                .map(|(title, body)| Article {
                    title: (*title).into(),
                    body: tokenize(body, vocab, max_article_tokens),
                })
                .collect(),
            headline: headline.map(Into::into),
        }
    }

    pub fn bodies(&self) -> Vec<TokenSequence> {
        self.articles.iter().map(|a| a.body.clone()).collect()
    }

    /// Model input with the gold headline tokenized as the target.
    pub fn example(&self, vocab: &Vocabulary, max_headline_tokens: usize) -> Example {
        Example {
            bodies: self.bodies(),
            target: self
                .headline
                .as_deref()
                .map(|h| tokenize(h, vocab, max_headline_tokens)),
        }
    }
}

/// Tokenized model input. `target` excludes BOS and EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub bodies: Vec<TokenSequence>,
    pub target: Option<TokenSequence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nhnet {
    pub config: NhnetConfig,
    pub params: ParameterStore,
}

impl Nhnet {
    pub fn new(config: NhnetConfig, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let mut params = init_params(&config.model, &mut rng)?;
        init_article_attention(&mut params, config.attention, &config.model, &mut rng);
        Ok(Nhnet { config, params })
    }

    pub fn from_parts(config: NhnetConfig, params: ParameterStore) -> Self {
        Nhnet { config, params }
    }
}

/// Encoder states `[len, d_H]` of every article.
pub fn encode_articles<'t>(
    ctx: &Ctx<'t, '_>,
    bodies: &[TokenSequence],
    c: &ModelConfig,
) -> Result<Vec<Var<'t>>> {
    if bodies.is_empty() {
        return Err(Error::input("story has no articles"));
    }
    bodies.iter().map(|b| encode(ctx, &b.ids, c)).collect()
}

fn mean_pool<'t>(ctx: &Ctx<'t, '_>, states: Var<'t>, d: usize) -> Result<Var<'t>> {
    let m = states.shape()[0];
    if m == 0 {
        return Ok(ctx.tape.constant(&Tensor::zeros(&[1, d])));
    }
    states.sum_axis(0)?.scale(1.0 / m as f64)?.reshape(&[1, d])
}

/// Story state `H_A = Σ_a w_a H_a` for every prefix position, with the
/// article weights. Returns `([T, d_H], [T or 1, n])`.
pub fn group_hidden<'t>(
    ctx: &Ctx<'t, '_>,
    cfg: &NhnetConfig,
    encoded: &[Var<'t>],
    prefix: &[u32],
) -> Result<(Var<'t>, Var<'t>)> {
    if encoded.is_empty() {
        return Err(Error::input("story has no articles"));
    }
    let reprs = encoded
        .iter()
        .map(|e| decode(ctx, *e, prefix, &cfg.model))
        .collect::<Result<Vec<_>>>()?;
    let weights = match cfg.weight_mode {
        WeightMode::PerStep => article_weights(ctx, cfg.attention, &reprs, cfg.scale_scores)?,
        WeightMode::Static => {
            let pooled = encoded
                .iter()
                .map(|e| mean_pool(ctx, *e, cfg.model.hidden_dim))
                .collect::<Result<Vec<_>>>()?;
            article_weights(ctx, cfg.attention, &pooled, cfg.scale_scores)?
        }
    };
    Ok((fuse(&reprs, weights)?, weights))
}

/// Output logits `H · Mᵀ` over the vocabulary, `[T, V]`.
pub fn output_logits<'t>(ctx: &Ctx<'t, '_>, hidden: Var<'t>) -> Result<Var<'t>> {
    hidden.matmul_t(ctx.p("embed.tokens")?)
}

/// Softmax of `M h` for a single story state `h`.
pub fn next_token_distribution(hidden: &[f64], params: &ParameterStore) -> Result<Vec<f64>> {
    let m = params.get("embed.tokens")?;
    let (v, d) = (m.shape()[0], m.shape()[1]);
    if hidden.len() != d {
        return Err(Error::shape("next_token_distribution", &[hidden.len()], &[d]));
    }
    let logits: Vec<f64> = (0..v)
        .map(|y| m.row(y).iter().zip(hidden).map(|(a, b)| a * b).sum())
        .collect();
    Ok(softmax_slice(&logits))
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(row.iter().map(|r| libm::exp(r - max)).sum::<f64>());
    row.iter().map(|r| r - lse).collect()
}

/// Decoder input and shifted targets for teacher forcing.
fn teacher_forcing(target: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let mut input = Vec::with_capacity(target.len() + 1);
    input.push(BOS);
    input.extend_from_slice(target);
    let mut out = target.to_vec();
    out.push(EOS);
    (input, out)
}

/// Summed token cross-entropy of one example, and its token count.
fn example_loss<'t>(ctx: &Ctx<'t, '_>, cfg: &NhnetConfig, ex: &Example) -> Result<(Var<'t>, usize)> {
    let target = ex
        .target
        .as_ref()
        .ok_or_else(|| Error::input("story has no gold headline"))?;
    let (input, gold) = teacher_forcing(&target.ids);
    let encoded = encode_articles(ctx, &ex.bodies, &cfg.model)?;
    let (hidden, _) = group_hidden(ctx, cfg, &encoded, &input)?;
    let loss = output_logits(ctx, hidden)?.cross_entropy(&gold, Reduction::Sum)?;
    Ok((loss, gold.len()))
}

/// Mean token-level cross-entropy over a batch, BOS-prefixed inputs and
/// EOS-terminated targets.
pub fn training_loss<'t>(
    ctx: &Ctx<'t, '_>,
    cfg: &NhnetConfig,
    batch: &[Example],
) -> Result<Var<'t>> {
    if batch.is_empty() {
        return Err(Error::input("empty training batch"));
    }
    let mut total: Option<Var<'t>> = None;
    let mut tokens = 0;
    for ex in batch {
        let (loss, n) = example_loss(ctx, cfg, ex)?;
        tokens += n;
        total = Some(match total {
            None => loss,
            Some(acc) => acc.add(loss)?,
        });
    }
    total.expect("non-empty batch").scale(1.0 / tokens as f64)
}

impl Nhnet {
    /// Teacher-forced mean token loss, without gradients.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        Ok(training_loss(&ctx, &self.config, batch)?.item())
    }

    /// Encoder states of every article as plain tensors.
    pub fn encode_story(&self, bodies: &[TokenSequence]) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        Ok(encode_articles(&ctx, bodies, &self.config.model)?
            .into_iter()
            .map(|v| v.value())
            .collect())
    }

    /// Log-probabilities of every next token after `prefix` (which starts
    /// with BOS), with the article weights at the last position.
    pub fn step_log_probs(&self, encoded: &[Tensor], prefix: &[u32]) -> Result<(Vec<f64>, Vec<f64>)> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let enc: Vec<Var<'_>> = encoded.iter().map(|t| tape.constant(t)).collect();
        let (hidden, weights) = group_hidden(&ctx, &self.config, &enc, prefix)?;
        let t = prefix.len();
        let last = hidden.narrow(0, t - 1, 1)?;
        let logits = output_logits(&ctx, last)?.data();
        let w = weights.value();
        let row = if w.shape()[0] == 1 { 0 } else { t - 1 };
        Ok((log_softmax(&logits), w.row(row).to_vec()))
    }

    /// Story state at the last prefix position.
    pub fn group_state(&self, bodies: &[TokenSequence], prefix: &[u32]) -> Result<(Vec<f64>, Vec<f64>)> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let enc = encode_articles(&ctx, bodies, &self.config.model)?;
        let (hidden, weights) = group_hidden(&ctx, &self.config, &enc, prefix)?;
        let t = prefix.len();
        let w = weights.value();
        let row = if w.shape()[0] == 1 { 0 } else { t - 1 };
        Ok((hidden.value().row(t - 1).to_vec(), w.row(row).to_vec()))
    }

    /// Log-probability of a complete output sequence from one teacher-forced
    /// pass. `ids` is the generated sequence (EOS included if present).
    pub fn sequence_log_prob(&self, bodies: &[TokenSequence], ids: &[u32]) -> Result<f64> {
        if ids.is_empty() {
            return Ok(0.0);
        }
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let enc = encode_articles(&ctx, bodies, &self.config.model)?;
        let mut input = vec![BOS];
        input.extend_from_slice(&ids[..ids.len() - 1]);
        let (hidden, _) = group_hidden(&ctx, &self.config, &enc, &input)?;
        let logits = output_logits(&ctx, hidden)?.value();
        Ok(ids
            .iter()
            .enumerate()
            .map(|(i, &y)| log_softmax(logits.row(i))[y as usize])
            .sum())
    }

    /// Article weights `[steps][articles]` along a teacher-forced sequence.
    pub fn weights_along(&self, bodies: &[TokenSequence], ids: &[u32]) -> Result<Vec<Vec<f64>>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let enc = encode_articles(&ctx, bodies, &self.config.model)?;
        let mut input = vec![BOS];
        input.extend_from_slice(&ids[..ids.len().saturating_sub(1)]);
        let (_, weights) = group_hidden(&ctx, &self.config, &enc, &input)?;
        let w = weights.value();
        Ok((0..input.len())
            .map(|i| w.row(if w.shape()[0] == 1 { 0 } else { i }).to_vec())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GenerationConfig {
    pub beam_width: usize,
    pub max_headline_tokens: usize,
    /// Candidates are ranked by `log p / len^alpha`.
    pub length_alpha: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            beam_width: 4,
            max_headline_tokens: 16,
            length_alpha: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Generated ids, EOS included when the sequence ended on it.
    pub ids: Vec<u32>,
    pub log_prob: f64,
    /// Length-normalized score used for ranking.
    pub score: f64,
}

impl Candidate {
    /// Ids without the trailing EOS.
    pub fn content(&self) -> &[u32] {
        match self.ids.last() {
            Some(&EOS) => &self.ids[..self.ids.len() - 1],
            _ => &self.ids,
        }
    }

    pub fn text(&self, vocab: &Vocabulary) -> Result<String> {
        detokenize(&TokenSequence::new(self.content().to_vec()), vocab)
    }
}

fn normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    log_prob / libm::pow(len.max(1) as f64, alpha)
}

/// Orders by score descending, then by ids ascending.
fn rank(a: &(Vec<u32>, f64), b: &(Vec<u32>, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

/// Beam search. At every step each live hypothesis is extended by every
/// token; the `beam_width` best extensions by total log-probability survive,
/// and those ending in EOS or at the length limit are retired. Finished
/// sequences are returned best first by length-normalized score.
pub fn generate(model: &Nhnet, bodies: &[TokenSequence], gen: &GenerationConfig) -> Result<Vec<Candidate>> {
    if gen.beam_width == 0 || gen.max_headline_tokens == 0 {
        return Err(Error::config("beam width and max headline tokens must be positive"));
    }
    let limit = gen
        .max_headline_tokens
        .min(model.config.model.max_positions - 1);
    let encoded = model.encode_story(bodies)?;
    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
    for _ in 0..limit {
        let mut expansions = Vec::with_capacity(live.len() * model.config.model.vocab_size);
        for (ids, lp) in &live {
            let mut prefix = vec![BOS];
            prefix.extend_from_slice(ids);
            let (logp, _) = model.step_log_probs(&encoded, &prefix)?;
            for (tok, l) in logp.iter().enumerate() {
                let mut next = ids.clone();
                next.push(tok as u32);
                expansions.push((next, lp + l));
            }
        }
        expansions.sort_by(rank);
        expansions.truncate(gen.beam_width);
        live.clear();
        for (ids, lp) in expansions {
            if ids.last() == Some(&EOS) || ids.len() == limit {
                finished.push((ids, lp));
            } else {
                live.push((ids, lp));
            }
        }
        if live.is_empty() {
            break;
        }
    }
    let mut ranked: Vec<(Vec<u32>, f64)> = finished
        .iter()
        .map(|(ids, lp)| (ids.clone(), normalized(*lp, ids.len(), gen.length_alpha)))
        .collect();
    ranked.sort_by(rank);
    ranked.truncate(gen.beam_width);
    Ok(ranked
        .into_iter()
        .map(|(ids, score)| {
            let log_prob = finished
                .iter()
                .find(|(f, _)| *f == ids)
                .map(|(_, lp)| *lp)
                .expect("ranked ids come from finished");
            Candidate { ids, log_prob, score }
        })
        .collect())
}

/// Argmax rollout until EOS or the length limit.
pub fn greedy(model: &Nhnet, bodies: &[TokenSequence], max_headline_tokens: usize) -> Result<Candidate> {
    let limit = max_headline_tokens.min(model.config.model.max_positions - 1);
    let encoded = model.encode_story(bodies)?;
    let mut ids = Vec::new();
    let mut total = 0.0;
    while ids.len() < limit {
        let mut prefix = vec![BOS];
        prefix.extend_from_slice(&ids);
        let (logp, _) = model.step_log_probs(&encoded, &prefix)?;
        let (best, lp) = logp
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        ids.push(best as u32);
        total += lp;
        if best as u32 == EOS {
            break;
        }
    }
    Ok(Candidate {
        score: total,
        log_prob: total,
        ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Minibatch trainer. Batches walk a fresh seeded shuffle each epoch.
#[derive(Debug, Clone)]
pub struct Trainer {
    adam: Adam,
    rng: SeededRng,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    pub loss_trace: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Trainer {
            adam: Adam::new(cfg.adam),
            rng: seeded(cfg.seed),
            batch_size: cfg.batch_size.max(1),
            order: Vec::new(),
            cursor: 0,
            loss_trace: Vec::new(),
        }
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.batch_size);
        while batch.len() < self.batch_size.min(n) {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    /// One optimizer step. Returns the batch loss before the update.
    pub fn step(&mut self, model: &mut Nhnet, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::input("no training examples"));
        }
        let batch: Vec<Example> = self
            .next_batch(examples.len())
            .into_iter()
            .map(|i| examples[i].clone())
            .collect();
        let tape = Tape::new();
        let loss = {
            let ctx = Ctx::new(&tape, &model.params);
            training_loss(&ctx, &model.config, &batch)?
        };
        let value = loss.item();
        model.params.zero_grads();
        tape.backward_into(loss, &mut model.params)?;
        self.adam.step(&mut model.params);
        self.loss_trace.push(value);
        Ok(value)
    }
}

/// Trains for `cfg.steps` steps and returns the per-step loss trace.
pub fn train(model: &mut Nhnet, examples: &[Example], cfg: &TrainConfig) -> Result<Vec<f64>> {
    let mut trainer = Trainer::new(cfg);
    for _ in 0..cfg.steps {
        trainer.step(model, examples)?;
    }
    Ok(trainer.loss_trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: AttentionVariant) -> Nhnet {
        let mc = ModelConfig {
            max_positions: 12,
            max_article_tokens: 8,
            ..ModelConfig::desk_scale(9)
        };
        Nhnet::new(NhnetConfig::new(mc, variant), 5).unwrap()
    }

    fn bodies(raw: &[&[u32]]) -> Vec<TokenSequence> {
        raw.iter().map(|b| TokenSequence::new(b.to_vec())).collect()
    }

    #[test]
    fn empty_story_is_an_error() {
        let m = tiny(AttentionVariant::SelfVoting);
        assert!(generate(&m, &[], &GenerationConfig::default()).is_err());
        assert!(m.group_state(&[], &[BOS]).is_err());
    }

    #[test]
    fn uniform_two_articles_average() {
        let m = tiny(AttentionVariant::Uniform);
        let b = bodies(&[&[4, 5], &[6, 7, 8]]);
        let (h, w) = m.group_state(&b, &[BOS, 4]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let (h1, _) = m.group_state(&b[..1], &[BOS, 4]).unwrap();
        let (h2, _) = m.group_state(&b[1..], &[BOS, 4]).unwrap();
        for i in 0..h.len() {
            assert!((h[i] - (h1[i] + h2[i]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn distribution_is_normalized() {
        let m = tiny(AttentionVariant::Referee);
        let (h, _) = m.group_state(&bodies(&[&[4], &[5, 6]]), &[BOS]).unwrap();
        let p = next_token_distribution(&h, &m.params).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(next_token_distribution(&h[1..], &m.params).is_err());
    }

    #[test]
    fn loss_requires_labels() {
        let m = tiny(AttentionVariant::Uniform);
        let ex = Example {
            bodies: bodies(&[&[4]]),
            target: None,
        };
        assert!(m.loss(&[ex]).is_err());
    }

    #[test]
    fn beam_one_is_greedy() {
        let m = tiny(AttentionVariant::SelfVoting);
        let b = bodies(&[&[4, 5, 6], &[7, 8]]);
        let gen = GenerationConfig {
            beam_width: 1,
            max_headline_tokens: 5,
            ..GenerationConfig::default()
        };
        let beam = generate(&m, &b, &gen).unwrap();
        let g = greedy(&m, &b, 5).unwrap();
        assert_eq!(beam[0].ids, g.ids);
        assert!((beam[0].log_prob - g.log_prob).abs() < 1e-12);
    }

    #[test]
    fn trainer_is_deterministic() {
        let ex = Example {
            bodies: bodies(&[&[4, 5], &[6]]),
            target: Some(TokenSequence::new(vec![7, 8])),
        };
        let cfg = TrainConfig {
            steps: 3,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let mut a = tiny(AttentionVariant::SelfVoting);
        let mut b = a.clone();
        let ta = train(&mut a, std::slice::from_ref(&ex), &cfg).unwrap();
        let tb = train(&mut b, &[ex], &cfg).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.params, b.params);
    }
}

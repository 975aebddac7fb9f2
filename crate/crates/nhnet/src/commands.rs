//! Subcommand implementations. Each reads its inputs, delegates to the core
//! library and writes its artifacts plus `manifest.json` under `--out`.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use nhnet_core::attention::{extra_parameter_count, AttentionVariant};
use nhnet_core::baselines::{lcs_baseline, rep_titles_baseline, truecase};
use nhnet_core::corpus::{inject_noise, split_by_key, synth_corpus, CorpusRecord, LabelSource, SplitSpec, SynthConfig};
use nhnet_core::distant::{label_story, select_representative, train_scorer, Scorer, ScorerConfig, Selection};
use nhnet_core::distant::DistantStats;
use nhnet_core::gradcheck::{finite_difference_check, GradCheckOptions, GradCheckReport};
use nhnet_core::metrics::{bootstrap_aggregate, ExampleScores, METRIC_NAMES};
use nhnet_core::model::{generate, greedy, training_loss, Example, GenerationConfig, Nhnet, NhnetConfig, Story, Trainer, TrainConfig};
use nhnet_core::pretrain::{is_mlm_parameter, mlm_warmup, MlmConfig};
use nhnet_core::rng::seeded;
use nhnet_core::tokenizer::{build_vocab, tokenize, TokenSequence, Vocabulary, RESERVED};
use nhnet_core::transformer::{init_decoder_from_encoder, init_params_seeded, Ctx, ModelConfig};
use nhnet_core::ParameterStore;

use crate::checkpoint::Checkpoint;
use crate::cli::*;
use crate::error::{CliError, Result};
use crate::io::{read_corpus, read_jsonl, read_vocab};
use crate::records::{PredictedHeadline, Prediction};
use crate::run::Run;

pub const KIND_MODEL: &str = "nhnet";
pub const KIND_SCORER: &str = "scorer";
pub const KIND_ENCODER: &str = "encoder";

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildVocab(a) => build_vocab_cmd(&a),
        Command::Tokenize(a) => tokenize_cmd(&a),
        Command::SynthCorpus(a) => synth_corpus_cmd(&a),
        Command::InjectNoise(a) => inject_noise_cmd(&a),
        Command::Split(a) => split_cmd(&a),
        Command::TrainScorer(a) => train_scorer_cmd(&a),
        Command::DistantLabel(a) => distant_label_cmd(&a),
        Command::MlmWarmup(a) => mlm_warmup_cmd(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Generate(a) => generate_cmd(&a),
        Command::LcsBaseline(a) => lcs_baseline_cmd(&a),
        Command::RepTitles(a) => rep_titles_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Truecase(a) => truecase_cmd(&a),
        Command::GradCheck(a) => grad_check_cmd(&a),
        Command::ParamCount(a) => param_count_cmd(&a),
    }
}

/// Maps `f` over `items` on `jobs` threads, keeping input order.
pub fn par_map<T, U, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if jobs == 0 {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::usage(e.to_string()))?;
    pool.install(|| items.par_iter().map(f).collect())
}

#[derive(Serialize)]
struct LossTrace<'a> {
    loss: &'a [f64],
}

fn check_finite(trace: &[f64], what: &str) -> Result<()> {
    match trace.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(CliError::numeric(format!("{what} loss is not finite at step {i}"))),
        None => Ok(()),
    }
}

fn corpus_text(records: &[CorpusRecord]) -> Vec<&str> {
    let mut text = Vec::new();
    for r in records {
        for a in &r.articles {
            text.push(a.title.as_str());
            text.push(a.body.as_str());
        }
        if let Some(h) = &r.headline {
            text.push(h.as_str());
        }
    }
    text
}

fn stories(records: &[CorpusRecord], vocab: &Vocabulary, max_article_tokens: usize) -> Vec<Story> {
    records.iter().map(|r| r.to_story(vocab, max_article_tokens)).collect()
}

fn check_vocab(vocab: &Vocabulary, model: &ModelConfig) -> Result<()> {
    if vocab.len() != model.vocab_size {
        return Err(CliError::data(format!(
            "vocabulary has {} pieces but the checkpoint expects {}",
            vocab.len(),
            model.vocab_size
        )));
    }
    Ok(())
}

fn build_vocab_cmd(a: &BuildVocabArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "build-vocab", a, None)?;
    run.input(&a.corpus)?;
    let records = read_corpus(&a.corpus)?;
    let vocab = build_vocab(corpus_text(&records), a.size, a.min_freq)?;
    run.write("vocab.txt", vocab.to_text().as_bytes())?;
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct Tokenized<'a> {
    text: &'a str,
    ids: Vec<u32>,
    pieces: Vec<&'a str>,
}

fn tokenize_cmd(a: &TokenizeArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "tokenize", a, None)?;
    run.input(&a.vocab)?;
    run.input(&a.input)?;
    let vocab = read_vocab(&a.vocab)?;
    let bytes = crate::io::read_bytes(&a.input)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::data(format!("{}: {e}", a.input.display())))?;
    let rows: Vec<Tokenized> = text
        .lines()
        .map(|line| {
            let seq = tokenize(line, &vocab, a.max_tokens);
            let pieces = seq.ids.iter().map(|&id| vocab.piece(id).unwrap_or(RESERVED[1])).collect();
            Tokenized {
                text: line,
                ids: seq.ids,
                pieces,
            }
        })
        .collect();
    run.write_jsonl("tokens.jsonl", &rows)?;
    run.finish()?;
    Ok(())
}

fn synth_corpus_cmd(a: &SynthCorpusArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "synth-corpus", a, Some(a.seed))?;
    let cfg = SynthConfig {
        num_stories: a.stories,
        articles_per_story: a.articles,
        topic_vocab_size: a.topic_vocab,
        num_topics: a.topics,
        body_words: a.body_words,
        background_rate: a.background_rate,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let records = synth_corpus(&cfg).map_err(|e| CliError::usage(e.to_string()))?;
    run.write_jsonl("corpus.jsonl", &records)?;
    run.finish()?;
    Ok(())
}

fn inject_noise_cmd(a: &InjectNoiseArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "inject-noise", a, Some(a.seed))?;
    run.input(&a.corpus)?;
    let records = read_corpus(&a.corpus)?;
    let (noisy, manifest) = inject_noise(&records, a.seed)?;
    run.write_jsonl("corpus.jsonl", &noisy)?;
    run.write_jsonl("noise.jsonl", &manifest)?;
    run.finish()?;
    Ok(())
}

fn split_cmd(a: &SplitArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "split", a, None)?;
    run.input(&a.corpus)?;
    let records = read_corpus(&a.corpus)?;
    let spec = SplitSpec {
        train: a.train,
        validation: a.validation,
        test: a.test,
    };
    let s = split_by_key(&records, &spec)?;
    run.write_jsonl("train.jsonl", &s.train)?;
    run.write_jsonl("validation.jsonl", &s.validation)?;
    run.write_jsonl("test.jsonl", &s.test)?;
    run.finish()?;
    Ok(())
}

fn train_scorer_cmd(a: &TrainScorerArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "train-scorer", a, Some(a.seed))?;
    run.input(&a.corpus)?;
    run.input(&a.vocab)?;
    let vocab = read_vocab(&a.vocab)?;
    let model = a.model.resolve(vocab.len())?;
    let records = read_corpus(&a.corpus)?;
    let articles: Vec<_> = stories(&records, &vocab, model.max_article_tokens)
        .into_iter()
        .flat_map(|s| s.articles)
        .collect();
    let config = ScorerConfig {
        model,
        max_title_tokens: a.max_title_tokens,
        steps: a.steps,
        batch_size: a.batch_size,
        negative_ratio: a.negative_ratio,
        seed: a.seed,
        adam: a.adam.resolve()?,
    };
    let trained = train_scorer(&articles, vocab, config)?;
    check_finite(&trained.loss_trace, "scorer")?;
    let ckpt = scorer_checkpoint(&trained.scorer)?;
    run.write("scorer.ckpt", &ckpt.to_bytes()?)?;
    run.write_json("loss.json", &LossTrace { loss: &trained.loss_trace })?;
    run.finish()?;
    Ok(())
}

pub fn scorer_checkpoint(scorer: &Scorer) -> Result<Checkpoint> {
    let config = serde_json::to_value(scorer.config).map_err(|e| CliError::data(e.to_string()))?;
    Ok(Checkpoint::new(KIND_SCORER, scorer.config.model, config, scorer.params.clone()))
}

pub fn load_scorer(ckpt: &Checkpoint, vocab: Vocabulary) -> Result<Scorer> {
    let config: ScorerConfig = ckpt.config_as(KIND_SCORER)?;
    check_vocab(&vocab, &config.model)?;
    Ok(Scorer {
        config,
        params: ckpt.params.clone(),
        vocab,
    })
}

pub fn model_checkpoint(model: &Nhnet) -> Result<Checkpoint> {
    let config = serde_json::to_value(model.config).map_err(|e| CliError::data(e.to_string()))?;
    Ok(Checkpoint::new(KIND_MODEL, model.config.model, config, model.params.clone()))
}

pub fn load_model(ckpt: &Checkpoint) -> Result<Nhnet> {
    let config: NhnetConfig = ckpt.config_as(KIND_MODEL)?;
    Ok(Nhnet::from_parts(config, ckpt.params.clone()))
}

#[derive(Serialize)]
struct StoryLabel<'a> {
    story_id: &'a str,
    retained: bool,
    selection: Option<&'a Selection>,
}

#[derive(Serialize)]
struct DistantSidecar<'a> {
    threshold: f64,
    stats: &'a DistantStats,
    stories: Vec<StoryLabel<'a>>,
}

fn distant_label_cmd(a: &DistantLabelArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "distant-label", a, None)?;
    for p in [&a.corpus, &a.vocab, &a.scorer] {
        run.input(p)?;
    }
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(CliError::usage("threshold must lie in (0, 1)"));
    }
    let vocab = read_vocab(&a.vocab)?;
    let scorer = load_scorer(&Checkpoint::load(&a.scorer)?, vocab)?;
    let records = read_corpus(&a.corpus)?;
    let stories = stories(&records, &scorer.vocab, scorer.config.model.max_article_tokens);
    let selections = par_map(a.jobs, &stories, |s| {
        if s.articles.len() < 2 {
            Ok(None)
        } else {
            select_representative(s, &scorer).map(Some).map_err(CliError::from)
        }
    })?;
    let mut labeled = Vec::new();
    let mut labels = Vec::new();
    let mut per_story = Vec::new();
    for ((record, story), sel) in records.iter().zip(&stories).zip(&selections) {
        let label = sel.as_ref().and_then(|s| label_story(s, &story.story_id, a.threshold));
        if let Some(l) = &label {
            labeled.push(CorpusRecord {
                headline: Some(l.label.clone()),
                label_source: LabelSource::Distant,
                ..record.clone()
            });
        }
        per_story.push((record.story_id.as_str(), label.is_some(), sel.as_ref()));
        labels.extend(label);
    }
    let stats = DistantStats::from_labels(stories.len(), &labels);
    let sidecar = DistantSidecar {
        threshold: a.threshold,
        stats: &stats,
        stories: per_story
            .into_iter()
            .map(|(story_id, retained, selection)| StoryLabel {
                story_id,
                retained,
                selection,
            })
            .collect(),
    };
    run.write_jsonl("corpus.jsonl", &labeled)?;
    run.write_json("stats.json", &sidecar)?;
    run.finish()?;
    Ok(())
}

fn mlm_warmup_cmd(a: &MlmWarmupArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "mlm-warmup", a, Some(a.seed))?;
    run.input(&a.corpus)?;
    run.input(&a.vocab)?;
    let vocab = read_vocab(&a.vocab)?;
    let model = a.model.resolve(vocab.len())?;
    let records = read_corpus(&a.corpus)?;
    let corpus: Vec<TokenSequence> = records
        .iter()
        .flat_map(|r| r.articles.iter())
        .map(|art| tokenize(&art.body, &vocab, model.max_article_tokens))
        .filter(|s| !s.is_empty())
        .collect();
    if corpus.is_empty() {
        return Err(CliError::data("corpus has no article text"));
    }
    let cfg = MlmConfig {
        steps: a.steps,
        mask_rate: a.mask_rate,
        batch_size: a.batch_size,
        seed: a.seed,
        adam: a.adam.resolve()?,
    };
    let mut params = init_params_seeded(&model, a.seed)?;
    let trace = mlm_warmup(&corpus, &mut params, &model, &cfg)?;
    check_finite(&trace, "masked-LM")?;
    let mut encoder = ParameterStore::new();
    for (name, t) in params.iter() {
        if is_mlm_parameter(name) {
            encoder.insert(name, t.clone());
        }
    }
    let config = serde_json::to_value(cfg).map_err(|e| CliError::data(e.to_string()))?;
    let ckpt = Checkpoint::new(KIND_ENCODER, model, config, encoder);
    run.write("encoder.ckpt", &ckpt.to_bytes()?)?;
    run.write_json("loss.json", &LossTrace { loss: &trace })?;
    run.finish()?;
    Ok(())
}

/// Copies every checkpoint tensor into `model`. Encoder checkpoints then
/// seed the decoder from the encoder.
pub fn init_from_checkpoint(model: &mut Nhnet, ckpt: &Checkpoint) -> Result<()> {
    if ckpt.model != model.config.model {
        return Err(CliError::data("checkpoint model config differs from the requested one"));
    }
    if ckpt.kind != KIND_ENCODER && ckpt.kind != KIND_MODEL {
        return Err(CliError::data(format!("cannot initialize from a {} checkpoint", ckpt.kind)));
    }
    for (name, t) in ckpt.params.iter() {
        let slot = model
            .params
            .get_mut(name)
            .map_err(|_| CliError::data(format!("checkpoint parameter {name} is not part of the model")))?;
        if slot.shape() != t.shape() {
            return Err(CliError::data(format!("checkpoint parameter {name} has shape {:?}", t.shape())));
        }
        slot.data_mut().copy_from_slice(t.data());
    }
    if ckpt.kind == KIND_ENCODER {
        init_decoder_from_encoder(&mut model.params, &model.config.model)?;
    }
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "train", a, Some(a.seed))?;
    run.input(&a.corpus)?;
    run.input(&a.vocab)?;
    let vocab = read_vocab(&a.vocab)?;
    let config = NhnetConfig {
        model: a.model.resolve(vocab.len())?,
        attention: a.attention.into(),
        scale_scores: !a.unscaled_scores,
        weight_mode: a.weight_mode.into(),
    };
    let mut model = Nhnet::new(config, a.seed)?;
    match (a.init, &a.checkpoint) {
        (Init::Scratch, None) => {}
        (Init::Scratch, Some(_)) => return Err(CliError::usage("--checkpoint requires --init from-checkpoint")),
        (Init::FromCheckpoint, None) => return Err(CliError::usage("--init from-checkpoint requires --checkpoint")),
        (Init::FromCheckpoint, Some(path)) => {
            run.input(path)?;
            init_from_checkpoint(&mut model, &Checkpoint::load(path)?)?;
        }
    }
    let records = read_corpus(&a.corpus)?;
    let examples: Vec<Example> = stories(&records, &vocab, config.model.max_article_tokens)
        .iter()
        .filter(|s| s.headline.is_some())
        .map(|s| s.example(&vocab, a.max_headline_tokens))
        .collect();
    if examples.is_empty() {
        return Err(CliError::data("corpus has no labeled stories"));
    }
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        seed: a.seed,
        adam: a.adam.resolve()?,
    };
    let mut trainer = Trainer::new(&cfg);
    for step in 0..cfg.steps {
        let loss = trainer.step(&mut model, &examples)?;
        if !loss.is_finite() {
            return Err(CliError::numeric(format!("training loss is not finite at step {step}")));
        }
    }
    run.write("model.ckpt", &model_checkpoint(&model)?.to_bytes()?)?;
    run.write_json("loss.json", &LossTrace { loss: &trainer.loss_trace })?;
    run.finish()?;
    Ok(())
}

/// Decodes one story. Greedy decoding yields a single candidate.
pub fn predict(
    model: &Nhnet,
    vocab: &Vocabulary,
    story: &Story,
    beam: Option<usize>,
    max_headline_tokens: usize,
    alpha: f64,
) -> Result<Prediction> {
    let bodies = story.bodies();
    let candidates = match beam {
        None => vec![greedy(model, &bodies, max_headline_tokens)?],
        Some(beam_width) => generate(
            model,
            &bodies,
            &GenerationConfig {
                beam_width,
                max_headline_tokens,
                length_alpha: alpha,
                seed: 0,
            },
        )?,
    };
    let weights = match candidates.first() {
        Some(best) => Some(model.weights_along(&bodies, &best.ids)?),
        None => None,
    };
    let candidates = candidates
        .iter()
        .map(|c| {
            Ok(PredictedHeadline {
                text: c.text(vocab)?,
                logprob: Some(c.log_prob),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Prediction {
        story_id: story.story_id.clone(),
        candidates,
        attention_weights: weights,
    })
}

fn generate_cmd(a: &GenerateArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "generate", a, None)?;
    for p in [&a.model, &a.vocab, &a.corpus] {
        run.input(p)?;
    }
    let beam = if a.greedy { None } else { Some(a.beam.unwrap_or(4)) };
    if beam == Some(0) || a.max_headline_tokens == 0 {
        return Err(CliError::usage("beam width and max headline tokens must be positive"));
    }
    let model = load_model(&Checkpoint::load(&a.model)?)?;
    let vocab = read_vocab(&a.vocab)?;
    check_vocab(&vocab, &model.config.model)?;
    let records = read_corpus(&a.corpus)?;
    let stories = stories(&records, &vocab, model.config.model.max_article_tokens);
    let preds = par_map(a.jobs, &stories, |s| {
        predict(&model, &vocab, s, beam, a.max_headline_tokens, a.alpha)
    })?;
    run.write_jsonl("predictions.jsonl", &preds)?;
    run.finish()?;
    Ok(())
}

fn lcs_baseline_cmd(a: &LcsBaselineArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "lcs-baseline", a, None)?;
    run.input(&a.corpus)?;
    let preds: Vec<Prediction> = read_corpus(&a.corpus)?
        .iter()
        .map(|r| Prediction::single(r.story_id.clone(), lcs_baseline(&r.titles())))
        .collect();
    run.write_jsonl("predictions.jsonl", &preds)?;
    run.finish()?;
    Ok(())
}

fn rep_titles_cmd(a: &RepTitlesArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "rep-titles", a, None)?;
    for p in [&a.corpus, &a.vocab, &a.scorer] {
        run.input(p)?;
    }
    let vocab = read_vocab(&a.vocab)?;
    let scorer = load_scorer(&Checkpoint::load(&a.scorer)?, vocab)?;
    let records = read_corpus(&a.corpus)?;
    let stories = stories(&records, &scorer.vocab, scorer.config.model.max_article_tokens);
    let preds = par_map(a.jobs, &stories, |s| {
        let title = if s.articles.len() < 2 {
            s.articles[0].title.clone()
        } else {
            rep_titles_baseline(s, &scorer)?
        };
        Ok(Prediction::single(s.story_id.clone(), title))
    })?;
    run.write_jsonl("predictions.jsonl", &preds)?;
    run.finish()?;
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "evaluate", a, Some(a.seed))?;
    run.input(&a.predictions)?;
    run.input(&a.gold)?;
    let preds: Vec<Prediction> = read_jsonl(&a.predictions)?;
    let mut by_id = BTreeMap::new();
    for p in &preds {
        if by_id.insert(p.story_id.as_str(), p).is_some() {
            return Err(CliError::data(format!("duplicate prediction for story {}", p.story_id)));
        }
    }
    let gold = read_corpus(&a.gold)?;
    let pairs: Vec<(&str, &str, &str)> = gold
        .iter()
        .filter_map(|r| r.headline.as_deref().map(|h| (r.story_id.as_str(), h)))
        .map(|(id, h)| {
            let p = by_id
                .get(id)
                .ok_or_else(|| CliError::data(format!("no prediction for story {id}")))?;
            let best = p
                .best()
                .ok_or_else(|| CliError::data(format!("prediction for story {id} has no candidates")))?;
            Ok((id, best, h))
        })
        .collect::<Result<_>>()?;
    if pairs.is_empty() {
        return Err(CliError::data("gold corpus has no headlines"));
    }
    let scores = par_map(a.jobs, &pairs, |(_, pred, gold)| {
        ExampleScores::compute(pred, gold).map_err(CliError::from)
    })?;
    let report = bootstrap_aggregate(&scores, a.bootstrap, a.seed)?;
    run.write_json("report.json", &report)?;
    if a.per_example {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["story_id"];
        header.extend(METRIC_NAMES);
        w.write_record(&header).map_err(|e| CliError::data(e.to_string()))?;
        for ((id, _, _), s) in pairs.iter().zip(&scores) {
            let mut row = vec![id.to_string()];
            row.extend(s.0.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| CliError::data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
        run.write("per_example.csv", &bytes)?;
    }
    run.finish()?;
    Ok(())
}

fn truecase_cmd(a: &TruecaseArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "truecase", a, None)?;
    run.input(&a.predictions)?;
    run.input(&a.corpus)?;
    let records = read_corpus(&a.corpus)?;
    let by_id: BTreeMap<&str, &CorpusRecord> = records.iter().map(|r| (r.story_id.as_str(), r)).collect();
    let mut preds: Vec<Prediction> = read_jsonl(&a.predictions)?;
    for p in &mut preds {
        let r = by_id
            .get(p.story_id.as_str())
            .ok_or_else(|| CliError::data(format!("story {} is not in the corpus", p.story_id)))?;
        let texts: Vec<&str> = r
            .articles
            .iter()
            .flat_map(|art| [art.title.as_str(), art.body.as_str()])
            .collect();
        for c in &mut p.candidates {
            c.text = truecase(&c.text, &texts);
        }
    }
    run.write_jsonl("predictions.jsonl", &preds)?;
    run.finish()?;
    Ok(())
}

/// A random example of `articles` bodies plus a target, drawn from the
/// non-reserved ids.
pub fn random_example(vocab_size: usize, articles: usize, body: usize, target: usize, seed: u64) -> Example {
    let mut rng = seeded(seed);
    let reserved = RESERVED.len() as u32;
    let mut draw = |n: usize| TokenSequence::new((0..n).map(|_| rng.random_range(reserved..vocab_size as u32)).collect());
    Example {
        bodies: (0..articles).map(|_| draw(body)).collect(),
        target: Some(draw(target)),
    }
}

#[derive(Serialize)]
struct VariantCheck<'a> {
    attention: &'static str,
    passed: bool,
    entries_checked: usize,
    max_rel_err: f64,
    report: &'a GradCheckReport,
}

fn grad_check_cmd(a: &GradCheckArgs) -> Result<()> {
    let mut run = Run::new(&a.out, "grad-check", a, Some(a.seed))?;
    if a.vocab_size <= RESERVED.len() || a.articles == 0 || a.body_tokens == 0 {
        return Err(CliError::usage("grad-check needs a vocabulary beyond the reserved tokens and nonempty articles"));
    }
    let model = a.model.resolve(a.vocab_size)?;
    let variants: Vec<AttentionVariant> = match a.attention {
        Some(v) => vec![v.into()],
        None => AttentionVariant::ALL.to_vec(),
    };
    let batch = vec![random_example(a.vocab_size, a.articles, a.body_tokens, a.target_tokens, a.seed)];
    let options = GradCheckOptions {
        tolerance: a.tolerance,
        max_entries_per_param: a.entries,
        ..GradCheckOptions::default()
    };
    let mut reports = Vec::new();
    for v in variants {
        let config = NhnetConfig::new(model, v);
        let m = Nhnet::new(config, a.seed)?;
        let report = finite_difference_check(
            |tape, store| training_loss(&Ctx::new(tape, store), &config, &batch),
            &m.params,
            options,
        )?;
        reports.push((v, report));
    }
    let rows: Vec<VariantCheck> = reports
        .iter()
        .map(|(v, r)| VariantCheck {
            attention: v.name(),
            passed: r.passed(),
            entries_checked: r.entries_checked(),
            max_rel_err: r.max_rel_err(),
            report: r,
        })
        .collect();
    for r in &rows {
        println!(
            "{}: {} entries, max relative error {:.3e}, {}",
            r.attention,
            r.entries_checked,
            r.max_rel_err,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    run.write_json("gradcheck.json", &rows)?;
    run.finish()?;
    match rows.iter().find(|r| !r.passed) {
        Some(r) => Err(CliError::numeric(format!(
            "{} gradients exceed tolerance: max relative error {:.3e}",
            r.attention, r.max_rel_err
        ))),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct ParamCounts {
    attention: &'static str,
    extra_parameters: usize,
    block_parameters: usize,
    total_parameters: usize,
}

fn param_count_cmd(a: &ParamCountArgs) -> Result<()> {
    let model = a.model.resolve(a.vocab_size)?;
    let variant: AttentionVariant = a.attention.into();
    let extra = extra_parameter_count(variant, &model);
    let block = model.block_param_count();
    let counts = ParamCounts {
        attention: variant.name(),
        extra_parameters: extra,
        block_parameters: block,
        total_parameters: block + extra,
    };
    println!("{extra} extra parameters for {} attention", variant.name());
    println!("{block} block parameters, {} total", block + extra);
    if let Some(out) = &a.out {
        let mut run = Run::new(out, "param-count", a, None)?;
        run.write_json("param_count.json", &counts)?;
        run.finish()?;
    }
    Ok(())
}

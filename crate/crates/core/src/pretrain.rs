//! Masked-language-model warmup of the encoder and token embeddings.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Reduction, Tape};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::seeded;
use crate::tensor::ParameterStore;
use crate::tokenizer::{TokenSequence, UNK};
use crate::transformer::{encode_sequence, Ctx, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlmConfig {
    pub steps: usize,
    pub mask_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            steps: 500,
            mask_rate: 0.15,
            batch_size: 8,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// True for the parameters the warmup trains.
pub fn is_mlm_parameter(name: &str) -> bool {
    name.starts_with("encoder.") || name.starts_with("embed.")
}

/// Masks a random subset of positions (at least one) with UNK.
fn mask<R: Rng>(ids: &[u32], rate: f64, rng: &mut R) -> (Vec<u32>, Vec<usize>) {
    let mut positions: Vec<usize> = (0..ids.len()).filter(|_| rng.random::<f64>() < rate).collect();
    if positions.is_empty() {
        positions.push(rng.random_range(0..ids.len()));
    }
    let mut masked = ids.to_vec();
    for &p in &positions {
        masked[p] = UNK;
    }
    (masked, positions)
}

/// Trains encoder and embedding parameters to recover masked tokens and
/// returns the per-step loss trace. Other parameters are left untouched.
pub fn mlm_warmup(
    corpus: &[TokenSequence],
    params: &mut ParameterStore,
    config: &ModelConfig,
    mlm: &MlmConfig,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&mlm.mask_rate) {
        return Err(Error::config("mask rate must lie in [0, 1]"));
    }
    let sentences: Vec<Vec<u32>> = corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.ids.iter().copied().take(config.max_positions).collect())
        .collect();
    if sentences.is_empty() {
        return Err(Error::input("masked-LM corpus has no nonempty sentences"));
    }
    let mut rng = seeded(mlm.seed);
    let mut adam = Adam::new(mlm.adam);
    let mut trace = Vec::with_capacity(mlm.steps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let batch_size = mlm.batch_size.clamp(1, sentences.len());
    for _ in 0..mlm.steps {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor >= order.len() {
                order = (0..sentences.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let tape = Tape::new();
        let loss = {
            let ctx = Ctx::new(&tape, params);
            let mut total = None;
            let mut count = 0;
            for &i in &batch {
                let ids = &sentences[i];
                let (masked, positions) = mask(ids, mlm.mask_rate, &mut rng);
                let states = encode_sequence(&ctx, &masked, config)?;
                let picked: Vec<u32> = positions.iter().map(|&p| p as u32).collect();
                let gold: Vec<u32> = positions.iter().map(|&p| ids[p]).collect();
                let logits = states
                    .embedding(&picked)?
                    .matmul_t(ctx.p("embed.tokens")?)?;
                let l = logits.cross_entropy(&gold, Reduction::Sum)?;
                count += gold.len();
                total = Some(match total {
                    None => l,
                    Some(acc) => l.add(acc)?,
                });
            }
            total.expect("nonempty batch").scale(1.0 / count as f64)?
        };
        trace.push(loss.item());
        params.zero_grads();
        tape.backward_into(loss, params)?;
        let frozen: Vec<_> = params
            .names()
            .filter(|n| !is_mlm_parameter(n))
            .map(Into::into)
            .collect::<Vec<alloc::string::String>>();
        for name in &frozen {
            params.get_mut(name)?.zero_grad();
        }
        adam.step(params);
    }
    Ok(trace)
}

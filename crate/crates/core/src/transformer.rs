//! Single-document Transformer encoder-decoder.
//!
//! Pre-layer-norm blocks with learned positional embeddings. Token embeddings
//! are shared by the encoder, the decoder and the output projection.
//!
//! Parameter layout (`d` = hidden, `p` = heads * value dim, `f` = ffn dim):
//!
//! | name                                   | shape    |
//! |----------------------------------------|----------|
//! | `embed.tokens`                         | `[V, d]` |
//! | `encoder.positions`, `decoder.positions` | `[P, d]` |
//! | `*.{self_attn,cross_attn}.{q,k,v}_w`   | `[d, p]` |
//! | `*.{self_attn,cross_attn}.{q,k,v}_b`   | `[p]`    |
//! | `*.{self_attn,cross_attn}.o_w` / `o_b` | `[p, d]` / `[d]` |
//! | `*.ln*.gain` / `*.ln*.bias`            | `[d]`    |
//! | `*.ffn.w1` / `b1` / `w2` / `b2`        | `[d, f]` / `[f]` / `[f, d]` / `[d]` |
//!
//! Encoder layers hold `self_attn`, `ln1` (before attention), `ln2` (before
//! the ffn) and `ffn`. Decoder layers hold `self_attn`/`ln1`, `cross_attn`/
//! `ln2` and `ffn`/`ln3`. Both stacks end with `final_ln`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{seeded, truncated_normal, SeededRng};
use crate::tensor::{ParameterStore, Tensor};
use crate::tokenizer::BOS;

pub const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub value_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub max_article_tokens: usize,
    pub activation: Activation,
}

impl ModelConfig {
    /// 12 layers, 16 heads, 768 hidden, 48 value dims, 200 tokens per article.
    pub fn paper_scale(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 12,
            num_heads: 16,
            hidden_dim: 768,
            value_dim: 48,
            ffn_dim: 4 * 768,
            vocab_size,
            max_positions: 512,
            max_article_tokens: 200,
            activation: Activation::Relu,
        }
    }

    /// 2 layers, 2 heads, 32 hidden, 16 value dims.
    pub fn desk_scale(vocab_size: usize) -> Self {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            hidden_dim: 32,
            value_dim: 16,
            ffn_dim: 4 * 32,
            vocab_size,
            max_positions: 64,
            max_article_tokens: 48,
            activation: Activation::Gelu,
        }
    }

    /// Width of the concatenated multi-head projection, `h * d_v`.
    pub fn projection_dim(&self) -> usize {
        self.num_heads * self.value_dim
    }

    /// All sizes positive, and the concatenated head projection no wider than
    /// the hidden state.
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_dim", self.hidden_dim),
            ("value_dim", self.value_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("max_article_tokens", self.max_article_tokens),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.projection_dim() > self.hidden_dim {
            return Err(Error::config(format!(
                "heads * value_dim = {} exceeds hidden_dim = {}",
                self.projection_dim(),
                self.hidden_dim
            )));
        }
        if self.max_article_tokens > self.max_positions {
            return Err(Error::config("max_article_tokens exceeds max_positions"));
        }
        Ok(())
    }

    /// Closed-form parameter count of the encoder-decoder block:
    ///
    /// ```text
    /// attn  = 4·d·p + 3·p + d        ln  = 2·d        ffn = 2·d·f + f + d
    /// enc   = attn + ffn + 2·ln      dec = 2·attn + ffn + 3·ln
    /// total = V·d + 2·P·d + L·(enc + dec) + 2·ln
    /// ```
    pub fn block_param_count(&self) -> usize {
        let (d, p, f) = (self.hidden_dim, self.projection_dim(), self.ffn_dim);
        let attn = 4 * d * p + 3 * p + d;
        let ln = 2 * d;
        let ffn = 2 * d * f + f + d;
        let enc = attn + ffn + 2 * ln;
        let dec = 2 * attn + ffn + 3 * ln;
        self.vocab_size * d + 2 * self.max_positions * d + self.num_layers * (enc + dec) + 2 * ln
    }
}

/// Parameter lookup bound to one tape.
#[derive(Clone, Copy)]
pub struct Ctx<'t, 's> {
    pub tape: &'t Tape,
    pub store: &'s ParameterStore,
}

impl<'t, 's> Ctx<'t, 's> {
    pub fn new(tape: &'t Tape, store: &'s ParameterStore) -> Self {
        Ctx { tape, store }
    }

    pub fn p(&self, name: &str) -> Result<Var<'t>> {
        self.tape.param(self.store, name)
    }
}

fn normal(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| truncated_normal(rng, INIT_STD)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn insert_attention(store: &mut ParameterStore, rng: &mut SeededRng, prefix: &str, c: &ModelConfig) {
    let (d, p) = (c.hidden_dim, c.projection_dim());
    for n in ["q", "k", "v"] {
        store.insert(format!("{prefix}.{n}_w"), normal(rng, &[d, p]));
        store.insert(format!("{prefix}.{n}_b"), Tensor::zeros(&[p]));
    }
    store.insert(format!("{prefix}.o_w"), normal(rng, &[p, d]));
    store.insert(format!("{prefix}.o_b"), Tensor::zeros(&[d]));
}

fn insert_ln(store: &mut ParameterStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.gain"), Tensor::full(&[d], 1.0));
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[d]));
}

fn insert_ffn(store: &mut ParameterStore, rng: &mut SeededRng, prefix: &str, c: &ModelConfig) {
    let (d, f) = (c.hidden_dim, c.ffn_dim);
    store.insert(format!("{prefix}.w1"), normal(rng, &[d, f]));
    store.insert(format!("{prefix}.b1"), Tensor::zeros(&[f]));
    store.insert(format!("{prefix}.w2"), normal(rng, &[f, d]));
    store.insert(format!("{prefix}.b2"), Tensor::zeros(&[d]));
}

/// Fresh encoder-decoder parameters: truncated-normal weights (std 0.02),
/// zero biases, unit layer-norm gains.
pub fn init_params(config: &ModelConfig, rng: &mut SeededRng) -> Result<ParameterStore> {
    config.validate()?;
    let d = config.hidden_dim;
    let mut s = ParameterStore::new();
    s.insert("embed.tokens", normal(rng, &[config.vocab_size, d]));
    s.insert("encoder.positions", normal(rng, &[config.max_positions, d]));
    for l in 0..config.num_layers {
        let pre = format!("encoder.layer{l}");
        insert_attention(&mut s, rng, &format!("{pre}.self_attn"), config);
        insert_ln(&mut s, &format!("{pre}.ln1"), d);
        insert_ln(&mut s, &format!("{pre}.ln2"), d);
        insert_ffn(&mut s, rng, &format!("{pre}.ffn"), config);
    }
    insert_ln(&mut s, "encoder.final_ln", d);
    s.insert("decoder.positions", normal(rng, &[config.max_positions, d]));
    for l in 0..config.num_layers {
        let pre = format!("decoder.layer{l}");
        insert_attention(&mut s, rng, &format!("{pre}.self_attn"), config);
        insert_attention(&mut s, rng, &format!("{pre}.cross_attn"), config);
        insert_ln(&mut s, &format!("{pre}.ln1"), d);
        insert_ln(&mut s, &format!("{pre}.ln2"), d);
        insert_ln(&mut s, &format!("{pre}.ln3"), d);
        insert_ffn(&mut s, rng, &format!("{pre}.ffn"), config);
    }
    insert_ln(&mut s, "decoder.final_ln", d);
    Ok(s)
}

/// Convenience wrapper seeding a fresh generator.
pub fn init_params_seeded(config: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    init_params(config, &mut seeded(seed))
}

fn layer_norm<'t>(ctx: &Ctx<'t, '_>, x: Var<'t>, prefix: &str) -> Result<Var<'t>> {
    x.layer_norm(LN_EPS)?
        .mul_row(ctx.p(&format!("{prefix}.gain"))?)?
        .add_row(ctx.p(&format!("{prefix}.bias"))?)
}

fn linear<'t>(ctx: &Ctx<'t, '_>, x: Var<'t>, w: &str, b: &str) -> Result<Var<'t>> {
    x.affine(ctx.p(w)?, ctx.p(b)?)
}

fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = MASKED;
        }
    }
    Tensor::new(vec![n, n], data).expect("square mask")
}

/// Multi-head attention of `queries` over `memory`. An empty memory
/// contributes nothing.
fn attention<'t>(
    ctx: &Ctx<'t, '_>,
    prefix: &str,
    queries: Var<'t>,
    memory: Var<'t>,
    causal: bool,
    c: &ModelConfig,
) -> Result<Var<'t>> {
    let n = queries.shape()[0];
    let m = memory.shape()[0];
    if m == 0 {
        return Ok(ctx.tape.constant(&Tensor::zeros(&[n, c.hidden_dim])));
    }
    let q = linear(ctx, queries, &format!("{prefix}.q_w"), &format!("{prefix}.q_b"))?;
    let k = linear(ctx, memory, &format!("{prefix}.k_w"), &format!("{prefix}.k_b"))?;
    let v = linear(ctx, memory, &format!("{prefix}.v_w"), &format!("{prefix}.v_b"))?;
    let dv = c.value_dim;
    let scale = 1.0 / libm::sqrt(dv as f64);
    let mask = causal.then(|| ctx.tape.constant(&causal_mask(n)));
    let mut heads = Vec::with_capacity(c.num_heads);
    for h in 0..c.num_heads {
        let qh = q.narrow(1, h * dv, dv)?;
        let kh = k.narrow(1, h * dv, dv)?;
        let vh = v.narrow(1, h * dv, dv)?;
        let mut scores = qh.matmul_t(kh)?.scale(scale)?;
        if let Some(mask) = mask {
            scores = scores.add(mask)?;
        }
        heads.push(scores.softmax(1)?.matmul(vh)?);
    }
    let joined = Var::concat(&heads, 1)?;
    linear(ctx, joined, &format!("{prefix}.o_w"), &format!("{prefix}.o_b"))
}

fn ffn<'t>(ctx: &Ctx<'t, '_>, prefix: &str, x: Var<'t>, c: &ModelConfig) -> Result<Var<'t>> {
    let h = linear(ctx, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
    let h = match c.activation {
        Activation::Relu => h.relu(),
        Activation::Gelu => h.gelu(),
    };
    linear(ctx, h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
}

fn embed<'t>(ctx: &Ctx<'t, '_>, ids: &[u32], positions: &str, c: &ModelConfig) -> Result<Var<'t>> {
    if ids.len() > c.max_positions {
        return Err(Error::input(format!(
            "sequence of {} tokens exceeds {} positions",
            ids.len(),
            c.max_positions
        )));
    }
    let tok = ctx.p("embed.tokens")?.embedding(ids)?;
    let pos = ctx.p(positions)?.narrow(0, 0, ids.len())?;
    tok.add(pos)
}

/// Runs the encoder over any sequence that fits the position table.
pub fn encode_sequence<'t>(ctx: &Ctx<'t, '_>, ids: &[u32], c: &ModelConfig) -> Result<Var<'t>> {
    if ids.is_empty() {
        return Ok(ctx.tape.constant(&Tensor::zeros(&[0, c.hidden_dim])));
    }
    let mut x = embed(ctx, ids, "encoder.positions", c)?;
    for l in 0..c.num_layers {
        let pre = format!("encoder.layer{l}");
        let h = layer_norm(ctx, x, &format!("{pre}.ln1"))?;
        x = x.add(attention(ctx, &format!("{pre}.self_attn"), h, h, false, c)?)?;
        let h = layer_norm(ctx, x, &format!("{pre}.ln2"))?;
        x = x.add(ffn(ctx, &format!("{pre}.ffn"), h, c)?)?;
    }
    layer_norm(ctx, x, "encoder.final_ln")
}

/// Encodes one article body into per-token hidden states `[len, d_H]`.
pub fn encode<'t>(ctx: &Ctx<'t, '_>, article: &[u32], c: &ModelConfig) -> Result<Var<'t>> {
    if article.len() > c.max_article_tokens {
        return Err(Error::input(format!(
            "article of {} tokens exceeds max_article_tokens = {}",
            article.len(),
            c.max_article_tokens
        )));
    }
    encode_sequence(ctx, article, c)
}

/// Decoder hidden states `[len(prefix), d_H]` for every prefix position,
/// under a causal mask. The prefix must start with BOS.
pub fn decode<'t>(
    ctx: &Ctx<'t, '_>,
    encoder_states: Var<'t>,
    prefix: &[u32],
    c: &ModelConfig,
) -> Result<Var<'t>> {
    match prefix.first() {
        None => return Err(Error::input("decoder prefix is empty")),
        Some(&t) if t != BOS => return Err(Error::input("decoder prefix must start with BOS")),
        _ => {}
    }
    let mut x = embed(ctx, prefix, "decoder.positions", c)?;
    for l in 0..c.num_layers {
        let pre = format!("decoder.layer{l}");
        let h = layer_norm(ctx, x, &format!("{pre}.ln1"))?;
        x = x.add(attention(ctx, &format!("{pre}.self_attn"), h, h, true, c)?)?;
        let h = layer_norm(ctx, x, &format!("{pre}.ln2"))?;
        x = x.add(attention(ctx, &format!("{pre}.cross_attn"), h, encoder_states, false, c)?)?;
        let h = layer_norm(ctx, x, &format!("{pre}.ln3"))?;
        x = x.add(ffn(ctx, &format!("{pre}.ffn"), h, c)?)?;
    }
    layer_norm(ctx, x, "decoder.final_ln")
}

/// Final-layer decoder hidden vector at the last prefix position, `[d_H]`.
pub fn decode_step<'t>(
    ctx: &Ctx<'t, '_>,
    encoder_states: Var<'t>,
    prefix: &[u32],
    c: &ModelConfig,
) -> Result<Var<'t>> {
    let states = decode(ctx, encoder_states, prefix, c)?;
    states
        .narrow(0, prefix.len() - 1, 1)?
        .reshape(&[c.hidden_dim])
}

/// Decoder parameters that have an encoder counterpart, as (decoder, encoder)
/// name pairs. Cross attention and its layer norm have none.
pub fn decoder_encoder_pairs(c: &ModelConfig) -> Vec<(String, String)> {
    let mut pairs = vec![(String::from("decoder.positions"), String::from("encoder.positions"))];
    let attn = ["q_w", "q_b", "k_w", "k_b", "v_w", "v_b", "o_w", "o_b"];
    let ffn = ["w1", "b1", "w2", "b2"];
    for l in 0..c.num_layers {
        let (d, e) = (format!("decoder.layer{l}"), format!("encoder.layer{l}"));
        for n in attn {
            pairs.push((format!("{d}.self_attn.{n}"), format!("{e}.self_attn.{n}")));
        }
        for n in ffn {
            pairs.push((format!("{d}.ffn.{n}"), format!("{e}.ffn.{n}")));
        }
        for n in ["gain", "bias"] {
            pairs.push((format!("{d}.ln1.{n}"), format!("{e}.ln1.{n}")));
            pairs.push((format!("{d}.ln3.{n}"), format!("{e}.ln2.{n}")));
        }
    }
    for n in ["gain", "bias"] {
        pairs.push((format!("decoder.final_ln.{n}"), format!("encoder.final_ln.{n}")));
    }
    pairs
}

/// Copies every decoder parameter that has an encoder counterpart from the
/// encoder, bitwise. Cross attention keeps its current values.
pub fn init_decoder_from_encoder(store: &mut ParameterStore, c: &ModelConfig) -> Result<()> {
    let pairs = decoder_encoder_pairs(c);
    for (dec, enc) in &pairs {
        let (src, dst) = (store.get(enc)?, store.get(dec)?);
        if src.shape() != dst.shape() {
            return Err(Error::config(format!(
                "{enc} {:?} does not match {dec} {:?}",
                src.shape(),
                dst.shape()
            )));
        }
    }
    if store.contains(&format!("encoder.layer{}.self_attn.q_w", c.num_layers)) {
        return Err(Error::config("store has more encoder layers than the config"));
    }
    for (dec, enc) in pairs {
        let data = store.get(&enc)?.data().to_vec();
        store.get_mut(&dec)?.data_mut().copy_from_slice(&data);
    }
    Ok(())
}

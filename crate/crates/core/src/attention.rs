//! Article-level attention: turns per-article hidden vectors into one weight
//! per article.
//!
//! * uniform: every article gets `1 / n`.
//! * referee: `w_a = softmax_a(q_r · K_a)` with `K_a = W_K H_a` and a learned
//!   query `q_r`.
//! * self-voting: `w_a = softmax_a(Σ_{a' ≠ a} Q_{a'} · K_a)` with
//!   `Q_a = W_Q H_a`, `K_a = W_K H_a`. Each other article votes for `a`;
//!   an article never votes for itself.
//!
//! `W_Q` and `W_K` map `d_H` to a single concatenated `h * d_v` space and the
//! votes use the full-width dot product, so every article gets one scalar
//! weight. With `scale_scores`, each dot product is divided by
//! `sqrt(h * d_v)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::{truncated_normal, SeededRng};
use crate::tensor::{ParameterStore, Tensor};
use crate::transformer::{Ctx, ModelConfig, INIT_STD};

pub const REFEREE_QUERY: &str = "article_attn.referee_query";
pub const QUERY_PROJ: &str = "article_attn.query_w";
pub const KEY_PROJ: &str = "article_attn.key_w";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AttentionVariant {
    Uniform,
    Referee,
    SelfVoting,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 3] = [
        AttentionVariant::Uniform,
        AttentionVariant::Referee,
        AttentionVariant::SelfVoting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::Uniform => "uniform",
            AttentionVariant::Referee => "referee",
            AttentionVariant::SelfVoting => "self_voting",
        }
    }
}

impl fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(AttentionVariant::Uniform),
            "referee" => Ok(AttentionVariant::Referee),
            "self_voting" | "self-voting" => Ok(AttentionVariant::SelfVoting),
            other => Err(Error::config(format!("unknown attention variant `{other}`"))),
        }
    }
}

/// Per-article weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(pub Vec<f64>);

impl AttentionWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Number of parameters the variant adds on top of the encoder-decoder.
pub fn extra_parameter_count(variant: AttentionVariant, c: &ModelConfig) -> usize {
    let (d, p) = (c.hidden_dim, c.projection_dim());
    match variant {
        AttentionVariant::Uniform => 0,
        AttentionVariant::Referee => d * p + p,
        AttentionVariant::SelfVoting => 2 * d * p,
    }
}

fn normal(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| truncated_normal(rng, INIT_STD)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Adds the variant's parameters to `store`.
pub fn init_article_attention(
    store: &mut ParameterStore,
    variant: AttentionVariant,
    c: &ModelConfig,
    rng: &mut SeededRng,
) {
    let (d, p) = (c.hidden_dim, c.projection_dim());
    match variant {
        AttentionVariant::Uniform => {}
        AttentionVariant::Referee => {
            store.insert(KEY_PROJ, normal(rng, &[p, d]));
            store.insert(REFEREE_QUERY, normal(rng, &[p]));
        }
        AttentionVariant::SelfVoting => {
            store.insert(QUERY_PROJ, normal(rng, &[p, d]));
            store.insert(KEY_PROJ, normal(rng, &[p, d]));
        }
    }
}

fn project<'t>(h: Var<'t>, w: Var<'t>) -> Result<Var<'t>> {
    h.matmul_t(w)
}

/// Raw (pre-softmax) scores `[T, n]` for articles given as `[T, d]` matrices.
pub fn article_scores<'t>(
    ctx: &Ctx<'t, '_>,
    variant: AttentionVariant,
    reprs: &[Var<'t>],
    scale_scores: bool,
) -> Result<Var<'t>> {
    let first = reprs
        .first()
        .ok_or_else(|| Error::input("article attention over zero articles"))?;
    let shape = first.shape();
    if shape.len() != 2 {
        return Err(Error::shape("article_attention", &shape, &[0, 0]));
    }
    if let Some(bad) = reprs.iter().find(|r| r.shape() != shape) {
        return Err(Error::shape("article_attention", &shape, &bad.shape()));
    }
    let (steps, n) = (shape[0], reprs.len());
    let scale = |v: Var<'t>, p: usize| -> Result<Var<'t>> {
        if scale_scores {
            v.scale(1.0 / libm::sqrt(p as f64))
        } else {
            Ok(v)
        }
    };
    match variant {
        AttentionVariant::Uniform => Ok(ctx.tape.constant(&Tensor::zeros(&[steps, n]))),
        AttentionVariant::Referee => {
            let w = ctx.p(KEY_PROJ)?;
            let q = ctx.p(REFEREE_QUERY)?;
            let p = q.shape()[0];
            let q = q.reshape(&[p, 1])?;
            let cols = reprs
                .iter()
                .map(|h| scale(project(*h, w)?.matmul(q)?, p))
                .collect::<Result<Vec<_>>>()?;
            Var::concat(&cols, 1)
        }
        AttentionVariant::SelfVoting => {
            let wq = ctx.p(QUERY_PROJ)?;
            let wk = ctx.p(KEY_PROJ)?;
            let p = wq.shape()[0];
            let qs = reprs.iter().map(|h| project(*h, wq)).collect::<Result<Vec<_>>>()?;
            let ks = reprs.iter().map(|h| project(*h, wk)).collect::<Result<Vec<_>>>()?;
            let mut cols = Vec::with_capacity(n);
            for (a, key) in ks.iter().enumerate() {
                let mut votes: Option<Var<'t>> = None;
                for (other, q) in qs.iter().enumerate() {
                    if other == a {
                        continue;
                    }
                    votes = Some(match votes {
                        None => *q,
                        Some(acc) => acc.add(*q)?,
                    });
                }
                let col = match votes {
                    None => ctx.tape.constant(&Tensor::zeros(&[steps, 1])),
                    Some(v) => v.mul(*key)?.sum_axis(1)?.reshape(&[steps, 1])?,
                };
                cols.push(scale(col, p)?);
            }
            Var::concat(&cols, 1)
        }
    }
}

/// Article weights `[T, n]`, each row on the simplex.
pub fn article_weights<'t>(
    ctx: &Ctx<'t, '_>,
    variant: AttentionVariant,
    reprs: &[Var<'t>],
    scale_scores: bool,
) -> Result<Var<'t>> {
    if variant == AttentionVariant::Uniform {
        let first = reprs
            .first()
            .ok_or_else(|| Error::input("article attention over zero articles"))?;
        let steps = first.shape()[0];
        let n = reprs.len();
        return Ok(ctx.tape.constant(&Tensor::full(&[steps, n], 1.0 / n as f64)));
    }
    article_scores(ctx, variant, reprs, scale_scores)?.softmax(1)
}

/// Weighted sum `Σ_a w_a H_a` of `[T, d]` article states. `weights` is either
/// `[T, n]` (one weighting per step) or `[1, n]` (one weighting for all steps).
pub fn fuse<'t>(reprs: &[Var<'t>], weights: Var<'t>) -> Result<Var<'t>> {
    let ws = weights.shape();
    let steps = reprs.first().map(|r| r.shape()[0]).unwrap_or(0);
    if ws.len() != 2 || ws[1] != reprs.len() || (ws[0] != steps && ws[0] != 1) {
        return Err(Error::shape("fuse", &ws, &[steps, reprs.len()]));
    }
    let per_step = ws[0] == steps;
    let mut total: Option<Var<'t>> = None;
    for (a, h) in reprs.iter().enumerate() {
        let col = weights.narrow(1, a, 1)?;
        let term = if per_step {
            h.scale_rows(col)?
        } else {
            h.mul(col.reshape(&[])?)?
        };
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    total.ok_or_else(|| Error::input("fuse over zero articles"))
}

/// Standalone parameters for computing weights outside a model.
#[derive(Debug, Clone, PartialEq)]
pub enum ArticleAttention {
    Uniform,
    Referee { query: Vec<f64>, key_proj: Tensor },
    SelfVoting { query_proj: Tensor, key_proj: Tensor },
}

impl ArticleAttention {
    pub fn variant(&self) -> AttentionVariant {
        match self {
            ArticleAttention::Uniform => AttentionVariant::Uniform,
            ArticleAttention::Referee { .. } => AttentionVariant::Referee,
            ArticleAttention::SelfVoting { .. } => AttentionVariant::SelfVoting,
        }
    }

    /// Extracts the variant's parameters from a model store.
    pub fn from_store(variant: AttentionVariant, store: &ParameterStore) -> Result<Self> {
        Ok(match variant {
            AttentionVariant::Uniform => ArticleAttention::Uniform,
            AttentionVariant::Referee => ArticleAttention::Referee {
                query: store.get(REFEREE_QUERY)?.data().to_vec(),
                key_proj: store.get(KEY_PROJ)?.clone(),
            },
            AttentionVariant::SelfVoting => ArticleAttention::SelfVoting {
                query_proj: store.get(QUERY_PROJ)?.clone(),
                key_proj: store.get(KEY_PROJ)?.clone(),
            },
        })
    }

    fn store(&self) -> ParameterStore {
        let mut s = ParameterStore::new();
        match self {
            ArticleAttention::Uniform => {}
            ArticleAttention::Referee { query, key_proj } => {
                s.insert(REFEREE_QUERY, Tensor::vector(query.clone()));
                s.insert(KEY_PROJ, key_proj.clone());
            }
            ArticleAttention::SelfVoting {
                query_proj,
                key_proj,
            } => {
                s.insert(QUERY_PROJ, query_proj.clone());
                s.insert(KEY_PROJ, key_proj.clone());
            }
        }
        s
    }

    /// Weights for one representation vector per article.
    pub fn weights(&self, reprs: &[Vec<f64>], scale_scores: bool) -> Result<AttentionWeights> {
        if reprs.is_empty() {
            return Err(Error::input("article attention over zero articles"));
        }
        let d = reprs[0].len();
        let expected = match self {
            ArticleAttention::Uniform => d,
            ArticleAttention::Referee { key_proj, .. }
            | ArticleAttention::SelfVoting { key_proj, .. } => key_proj.shape()[1],
        };
        if let Some(bad) = reprs.iter().find(|r| r.len() != expected) {
            return Err(Error::shape("article_attention", &[expected], &[bad.len()]));
        }
        if let ArticleAttention::Referee { query, key_proj } = self {
            if query.len() != key_proj.shape()[0] {
                return Err(Error::shape("referee", &[query.len()], key_proj.shape()));
            }
        }
        let store = self.store();
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let vars = reprs
            .iter()
            .map(|r| tape.constant(&Tensor::new(vec![1, d], r.clone()).expect("row")))
            .collect::<Vec<_>>();
        let w = article_weights(&ctx, self.variant(), &vars, scale_scores)?;
        Ok(AttentionWeights(w.data()))
    }
}

pub fn uniform_weights(story_size: usize) -> Result<AttentionWeights> {
    if story_size == 0 {
        return Err(Error::input("story has no articles"));
    }
    Ok(AttentionWeights(vec![1.0 / story_size as f64; story_size]))
}

pub fn referee_weights(
    reprs: &[Vec<f64>],
    query: &[f64],
    key_proj: &Tensor,
    scale_scores: bool,
) -> Result<AttentionWeights> {
    ArticleAttention::Referee {
        query: query.to_vec(),
        key_proj: key_proj.clone(),
    }
    .weights(reprs, scale_scores)
}

pub fn self_voting_weights(
    reprs: &[Vec<f64>],
    query_proj: &Tensor,
    key_proj: &Tensor,
    scale_scores: bool,
) -> Result<AttentionWeights> {
    ArticleAttention::SelfVoting {
        query_proj: query_proj.clone(),
        key_proj: key_proj.clone(),
    }
    .weights(reprs, scale_scores)
}

/// Parameter names added by a variant.
pub fn parameter_names(variant: AttentionVariant) -> Vec<String> {
    match variant {
        AttentionVariant::Uniform => Vec::new(),
        AttentionVariant::Referee => vec![KEY_PROJ.into(), REFEREE_QUERY.into()],
        AttentionVariant::SelfVoting => vec![QUERY_PROJ.into(), KEY_PROJ.into()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_weights(1).unwrap().0, vec![1.0]);
        assert_eq!(uniform_weights(3).unwrap().0, vec![1.0 / 3.0; 3]);
        let w = uniform_weights(5).unwrap().0;
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(uniform_weights(0).is_err());
    }

    #[test]
    fn referee_worked_example() {
        let ln2 = libm::log(2.0);
        let w = referee_weights(&[vec![ln2, 0.0], vec![0.0, 0.0]], &[1.0, 0.0], &eye(2), false)
            .unwrap()
            .0;
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && (w[1] - 1.0 / 3.0).abs() < 1e-12, "{w:?}");
    }

    #[test]
    fn referee_single_and_identical() {
        let k = eye(2);
        assert_eq!(referee_weights(&[vec![0.3, 0.1]], &[1.0, 2.0], &k, true).unwrap().0, vec![1.0]);
        let w = referee_weights(&vec![vec![0.3, 0.1]; 4], &[1.0, 2.0], &k, true).unwrap().0;
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn self_voting_worked_example() {
        let reprs = [vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let w = self_voting_weights(&reprs, &eye(2), &eye(2), false).unwrap().0;
        let e = libm::exp(1.0);
        let want = [e / (2.0 * e + 1.0), e / (2.0 * e + 1.0), 1.0 / (2.0 * e + 1.0)];
        for (g, x) in w.iter().zip(want) {
            assert!((g - x).abs() < 1e-12, "{w:?}");
        }
    }

    #[test]
    fn self_voting_degenerate_cases() {
        assert_eq!(self_voting_weights(&[vec![5.0, -1.0]], &eye(2), &eye(2), true).unwrap().0, vec![1.0]);
        let w = self_voting_weights(&vec![vec![0.2, 0.7]; 3], &eye(2), &eye(2), true).unwrap().0;
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(self_voting_weights(&[vec![1.0, 0.0], vec![1.0]], &eye(2), &eye(2), true).is_err());
        assert!(self_voting_weights(&[vec![1.0, 0.0, 0.0]], &eye(2), &eye(2), true).is_err());
        assert!(referee_weights(&[vec![1.0, 0.0]], &[1.0], &eye(2), true).is_err());
    }

    #[test]
    fn extra_counts() {
        let c = ModelConfig::desk_scale(100);
        assert_eq!(extra_parameter_count(AttentionVariant::Uniform, &c), 0);
        assert_eq!(extra_parameter_count(AttentionVariant::SelfVoting, &c), 2048);
        assert_eq!(extra_parameter_count(AttentionVariant::Referee, &c), 1056);
    }

    #[test]
    fn variant_names_parse() {
        for v in AttentionVariant::ALL {
            assert_eq!(v.name().parse::<AttentionVariant>().unwrap(), v);
        }
        assert!("median".parse::<AttentionVariant>().is_err());
    }
}

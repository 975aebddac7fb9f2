use nhnet_core::attention::{
    extra_parameter_count, uniform_weights, ArticleAttention, AttentionVariant,
};
use nhnet_core::model::{Nhnet, NhnetConfig};
use nhnet_core::rng::{seeded, truncated_normal, SeededRng};
use nhnet_core::transformer::ModelConfig;
use nhnet_core::Tensor;
use proptest::prelude::*;

const VARIANTS: [AttentionVariant; 3] = [
    AttentionVariant::Uniform,
    AttentionVariant::Referee,
    AttentionVariant::SelfVoting,
];

fn matrix(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| truncated_normal(rng, std)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn attention(variant: AttentionVariant, p: usize, d: usize, rng: &mut SeededRng) -> ArticleAttention {
    match variant {
        AttentionVariant::Uniform => ArticleAttention::Uniform,
        AttentionVariant::Referee => ArticleAttention::Referee {
            query: (0..p).map(|_| truncated_normal(rng, 1.0)).collect(),
            key_proj: matrix(rng, p, d, 1.0),
        },
        AttentionVariant::SelfVoting => ArticleAttention::SelfVoting {
            query_proj: matrix(rng, p, d, 1.0),
            key_proj: matrix(rng, p, d, 1.0),
        },
    }
}

fn reprs(rng: &mut SeededRng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| truncated_normal(rng, 2.0)).collect()).collect()
}

#[test]
fn weights_lie_on_the_simplex() {
    let mut rng = seeded(11);
    let (p, d) = (6, 8);
    for story in 0..300 {
        let n = 1 + story % 6;
        let h = reprs(&mut rng, n, d);
        for v in VARIANTS {
            let att = attention(v, p, d, &mut rng);
            for scale in [true, false] {
                let w = att.weights(&h, scale).unwrap();
                assert_eq!(w.len(), n);
                assert!(w.as_slice().iter().all(|x| *x >= 0.0), "{v} {w:?}");
                let total: f64 = w.as_slice().iter().sum();
                assert!((total - 1.0).abs() <= 1e-9, "{v} sums to {total}");
                if n == 1 {
                    assert_eq!(w.as_slice(), &[1.0]);
                }
            }
        }
    }
}

#[test]
fn zero_articles_is_an_error() {
    let mut rng = seeded(1);
    for v in VARIANTS {
        assert!(attention(v, 4, 4, &mut rng).weights(&[], true).is_err());
    }
    assert!(uniform_weights(0).is_err());
}

#[test]
fn identical_articles_get_equal_weight() {
    let mut rng = seeded(5);
    let row: Vec<f64> = (0..8).map(|_| truncated_normal(&mut rng, 1.0)).collect();
    for v in VARIANTS {
        let w = attention(v, 6, 8, &mut rng).weights(&vec![row.clone(); 4], true).unwrap();
        for x in w.as_slice() {
            assert!((x - 0.25).abs() < 1e-12, "{v} {w:?}");
        }
    }
}

#[test]
fn self_voting_adds_two_projections() {
    for (h, dv, d) in [(2, 16, 32), (4, 8, 48), (1, 12, 12)] {
        let c = ModelConfig {
            num_heads: h,
            value_dim: dv,
            hidden_dim: d,
            ffn_dim: 4 * d,
            ..ModelConfig::desk_scale(40)
        };
        let base = Nhnet::new(NhnetConfig::new(c, AttentionVariant::Uniform), 0).unwrap();
        let voting = Nhnet::new(NhnetConfig::new(c, AttentionVariant::SelfVoting), 0).unwrap();
        let extra = voting.params.param_count() - base.params.param_count();
        assert_eq!(extra, 2 * d * h * dv);
        assert_eq!(extra, extra_parameter_count(AttentionVariant::SelfVoting, &c));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_follow_article_permutations(seed in 0u64..1000, n in 1usize..7, rot in 0usize..6) {
        let mut rng = seeded(seed);
        let h = reprs(&mut rng, n, 5);
        let rot = rot % n;
        let mut shifted = h.clone();
        shifted.rotate_left(rot);
        for v in VARIANTS {
            let att = attention(v, 4, 5, &mut rng);
            let w = att.weights(&h, true).unwrap();
            let ws = att.weights(&shifted, true).unwrap();
            for i in 0..n {
                prop_assert!((ws.as_slice()[i] - w.as_slice()[(i + rot) % n]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_are_finite_for_large_inputs(seed in 0u64..1000, n in 1usize..7, scale in 1.0f64..50.0) {
        let mut rng = seeded(seed);
        let h: Vec<Vec<f64>> = reprs(&mut rng, n, 5)
            .into_iter()
            .map(|r| r.into_iter().map(|x| x * scale).collect())
            .collect();
        for v in VARIANTS {
            let w = attention(v, 4, 5, &mut rng).weights(&h, false).unwrap();
            let total: f64 = w.as_slice().iter().sum();
            prop_assert!(w.as_slice().iter().all(|x| x.is_finite() && *x >= 0.0));
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }
}

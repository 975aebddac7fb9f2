use nhnet_core::attention::AttentionVariant;
use nhnet_core::gradcheck::{finite_difference_check, GradCheckOptions};
use nhnet_core::model::{training_loss, Example, Nhnet, NhnetConfig, WeightMode};
use nhnet_core::tokenizer::TokenSequence;
use nhnet_core::transformer::{Ctx, ModelConfig};
use nhnet_core::{ParameterStore, Reduction, Tensor};

fn example() -> Vec<Example> {
    vec![Example {
        bodies: vec![TokenSequence::new(vec![4, 5, 6]), TokenSequence::new(vec![7, 8])],
        target: Some(TokenSequence::new(vec![9, 4])),
    }]
}

fn sampled() -> GradCheckOptions {
    GradCheckOptions {
        max_entries_per_param: Some(5),
        ..GradCheckOptions::default()
    }
}

fn check(config: NhnetConfig, seed: u64) {
    let model = Nhnet::new(config, seed).unwrap();
    let batch = example();
    let report = finite_difference_check(
        |tape, store| training_loss(&Ctx::new(tape, store), &config, &batch),
        &model.params,
        sampled(),
    )
    .unwrap();
    assert_eq!(report.params.len(), model.params.len());
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
}

#[test]
fn every_variant_passes_sampled_check() {
    for v in [AttentionVariant::Uniform, AttentionVariant::Referee, AttentionVariant::SelfVoting] {
        check(NhnetConfig::new(ModelConfig::desk_scale(12), v), 3);
    }
}

#[test]
fn static_weights_and_unscaled_scores_pass() {
    for v in [AttentionVariant::Referee, AttentionVariant::SelfVoting] {
        let config = NhnetConfig {
            weight_mode: WeightMode::Static,
            scale_scores: false,
            ..NhnetConfig::new(ModelConfig::desk_scale(12), v)
        };
        check(config, 5);
    }
}

#[test]
fn elementwise_ops_pass_full_check() {
    let mut store = ParameterStore::new();
    store.insert("x", Tensor::new(vec![2, 3], vec![0.4, -0.7, 1.3, 0.2, -1.1, 0.9]).unwrap());
    store.insert("w", Tensor::new(vec![3, 3], (0..9).map(|i| 0.1 * i as f64 - 0.35).collect()).unwrap());
    store.insert("g", Tensor::vector(vec![1.2, 0.8, -0.5]));
    let report = finite_difference_check(
        |tape, s| {
            let x = tape.param(s, "x")?;
            let h = x.matmul(tape.param(s, "w")?)?.gelu();
            let h = h.layer_norm(1e-5)?.mul_row(tape.param(s, "g")?)?;
            let p = h.softmax(1)?;
            let ce = h.cross_entropy(&[2, 0], Reduction::Mean)?;
            Ok(p.mul(p)?.sum().add(ce)?)
        },
        &store,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.entries_checked(), 6 + 9 + 3);
}

use nhnet_core::attention::AttentionVariant;
use nhnet_core::model::{train, Example, Nhnet, NhnetConfig, TrainConfig};
use nhnet_core::pretrain::{mlm_warmup, MlmConfig};
use nhnet_core::tokenizer::{TokenSequence, BOS};
use nhnet_core::transformer::{
    decode, decode_step, decoder_encoder_pairs, encode, init_decoder_from_encoder, init_params_seeded, Ctx,
    ModelConfig,
};
use nhnet_core::Tape;

fn story() -> Example {
    Example {
        bodies: vec![
            TokenSequence::new(vec![4, 5, 6, 7]),
            TokenSequence::new(vec![5, 6, 8]),
            TokenSequence::new(vec![9, 4, 5]),
        ],
        target: Some(TokenSequence::new(vec![5, 6, 10])),
    }
}

#[test]
fn loss_falls_on_a_repeated_story() {
    let mut m = Nhnet::new(NhnetConfig::new(ModelConfig::desk_scale(12), AttentionVariant::SelfVoting), 1).unwrap();
    let cfg = TrainConfig {
        steps: 200,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let trace = train(&mut m, &[story()], &cfg).unwrap();
    assert!(trace[199] < 0.5 * trace[0], "{} -> {}", trace[0], trace[199]);
}

#[test]
fn zero_output_matrix_gives_log_vocab_loss() {
    let mut m = Nhnet::new(NhnetConfig::new(ModelConfig::desk_scale(12), AttentionVariant::Referee), 2).unwrap();
    m.params.get_mut("embed.tokens").unwrap().data_mut().fill(0.0);
    let loss = m.loss(&[story()]).unwrap();
    assert!((loss - (12f64).ln()).abs() < 1e-12);
}

#[test]
fn masked_lm_warmup_learns_and_repeats() {
    let c = ModelConfig::desk_scale(16);
    let corpus: Vec<TokenSequence> = (0..100u32)
        .map(|i| TokenSequence::new((0..6).map(|k| 4 + (i + k) % 12).collect()))
        .collect();
    let cfg = MlmConfig {
        steps: 500,
        ..MlmConfig::default()
    };
    let mut a = init_params_seeded(&c, 3).unwrap();
    let mut b = a.clone();
    let trace = mlm_warmup(&corpus, &mut a, &c, &cfg).unwrap();
    let head: f64 = trace[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = trace[480..].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "{head} -> {tail}");
    assert_eq!(trace, mlm_warmup(&corpus, &mut b, &c, &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn decoder_transfer_copies_and_is_idempotent() {
    let c = ModelConfig::desk_scale(12);
    let mut p = init_params_seeded(&c, 4).unwrap();
    init_decoder_from_encoder(&mut p, &c).unwrap();
    for (dec, enc) in decoder_encoder_pairs(&c) {
        assert_eq!(p.get(&dec).unwrap().data(), p.get(&enc).unwrap().data(), "{dec}");
    }
    let cross = p.get("decoder.layer0.cross_attn.q_w").unwrap().data().to_vec();
    for (name, t) in p.iter() {
        if name.starts_with("encoder.") && t.numel() == cross.len() {
            assert_ne!(t.data(), &cross[..], "{name}");
        }
    }
    let once = p.clone();
    init_decoder_from_encoder(&mut p, &c).unwrap();
    assert_eq!(p, once);
    let bigger = ModelConfig { num_layers: 3, ..c };
    assert!(init_decoder_from_encoder(&mut p, &bigger).is_err());
}

#[test]
fn decoder_is_causal_and_reads_the_encoder() {
    let c = ModelConfig::desk_scale(12);
    let p = init_params_seeded(&c, 6).unwrap();
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &p);
    let enc = encode(&ctx, &[4, 5, 6], &c).unwrap();
    let other = encode(&ctx, &[7, 8, 9], &c).unwrap();
    let prefix = [BOS, 4, 7, 9];
    let full = decode(&ctx, enc, &prefix, &c).unwrap().value();
    for i in 1..=prefix.len() {
        let step = decode_step(&ctx, enc, &prefix[..i], &c).unwrap().data();
        assert_eq!(step, full.row(i - 1));
    }
    let a = decode_step(&ctx, enc, &prefix, &c).unwrap().data();
    let b = decode_step(&ctx, other, &prefix, &c).unwrap().data();
    assert_ne!(a, b);
    assert_eq!(a.len(), c.hidden_dim);
}

mod common;

use common::METRIC_CASES;
use nhnet_core::metrics::{
    bootstrap_aggregate, relative_length, rouge_l, rouge_n, ExampleScores, Prf, METRIC_NAMES,
};

fn same(got: Prf, want: (f64, f64, f64), what: &str) {
    assert!((got.precision - want.0).abs() <= 1e-12, "{what}: {got:?} vs {want:?}");
    assert!((got.recall - want.1).abs() <= 1e-12, "{what}: {got:?} vs {want:?}");
    assert!((got.f1 - want.2).abs() <= 1e-12, "{what}: {got:?} vs {want:?}");
}

#[test]
fn rouge_matches_brute_force_oracle() {
    for (pred, gold) in METRIC_CASES {
        for n in 1..=2 {
            same(rouge_n(pred, gold, n).unwrap(), common::rouge_n(pred, gold, n), &format!("R{n} {pred:?}"));
        }
        same(rouge_l(pred, gold), common::rouge_l(pred, gold), &format!("RL {pred:?}"));
        let (c, w) = relative_length(pred, gold).unwrap();
        let (oc, ow) = common::relative_length(pred, gold);
        assert!((c - oc).abs() <= 1e-12 && (w - ow).abs() <= 1e-12, "{pred:?}");
    }
}

#[test]
fn hand_computed_values() {
    let third = 1.0 / 3.0;
    same(rouge_n("the the the", "the cat", 1).unwrap(), (third, 0.5, 0.4), "clipped");
    same(rouge_n("a b a b a b", "b a b a", 2).unwrap(), (0.6, 1.0, 0.75), "bigram clip");
    same(rouge_l("a b c d e", "e d c b a"), (0.2, 0.2, 0.2), "reversed");
    same(rouge_l("b c d b c", "b c b c d"), (0.8, 0.8, 0.8), "interleaved");
    same(rouge_n("--- ...", "anything here", 1).unwrap(), (0.0, 0.0, 0.0), "punctuation only");
    assert_eq!(relative_length("x", "x y z").unwrap(), (1.0 / 5.0, third));
    assert_eq!(relative_length("  spaced   out   words ", "spaced out words").unwrap(), (1.0, 1.0));
}

#[test]
fn f1_is_consistent_and_bounded() {
    for (pred, gold) in METRIC_CASES {
        for m in [rouge_n(pred, gold, 1).unwrap(), rouge_n(pred, gold, 2).unwrap(), rouge_l(pred, gold)] {
            for v in [m.precision, m.recall, m.f1] {
                assert!((0.0..=1.0).contains(&v));
            }
            let f = if m.precision + m.recall > 0.0 {
                2.0 * m.precision * m.recall / (m.precision + m.recall)
            } else {
                0.0
            };
            assert!((m.f1 - f).abs() <= 1e-12);
        }
    }
}

#[test]
fn identical_scores_give_zero_width_intervals() {
    let e = ExampleScores::compute("storm hits coast", "coast braces for storm").unwrap();
    let report = bootstrap_aggregate(&vec![e; 25], 200, 4).unwrap();
    assert_eq!(report.metrics.len(), METRIC_NAMES.len());
    for (name, m) in &report.metrics {
        assert_eq!(m.lo, m.hi, "{name}");
        assert!((m.mean - m.point).abs() < 1e-12, "{name}");
    }
}

#[test]
fn bootstrap_mean_approaches_plain_mean() {
    let hit = ExampleScores::compute("a", "a").unwrap();
    let miss = ExampleScores::compute("b", "a").unwrap();
    let examples: Vec<ExampleScores> = (0..100).map(|i| if i % 2 == 0 { hit } else { miss }).collect();
    let report = bootstrap_aggregate(&examples, 10_000, 7).unwrap();
    let r1 = &report.metrics["rouge1_f"];
    assert_eq!(r1.point, 0.5);
    assert!((r1.mean - 0.5).abs() < 0.02);
    assert!(r1.lo < 0.5 && r1.hi > 0.5);
}

#[test]
fn single_resample_mean_is_that_resample() {
    let examples: Vec<ExampleScores> = ["a b", "a c", "d"]
        .iter()
        .map(|p| ExampleScores::compute(p, "a b").unwrap())
        .collect();
    let report = bootstrap_aggregate(&examples, 1, 3).unwrap();
    for m in report.metrics.values() {
        assert_eq!(m.lo, m.mean);
        assert_eq!(m.hi, m.mean);
    }
    assert_eq!(report, bootstrap_aggregate(&examples, 1, 3).unwrap());
}

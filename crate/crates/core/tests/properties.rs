//! Property tests for metrics, corpus handling and the optimizer.

use hedge_core::corpus::{
    split_train_dev, tokenize_spans, truncate_pad, CleanConfig, Label, Sentence, DEFAULT_NOISE,
};
use hedge_core::metrics::{confusion, mean_std, precision_recall_f1, MetricsReport};
use hedge_core::params::{Gradients, ParamStore};
use hedge_core::training::{class_weights, sgd_step, weighted_bce};
use hedge_core::Tensor;
use proptest::prelude::*;

fn labels(flags: &[bool]) -> Vec<Label> {
    flags
        .iter()
        .map(|&u| if u { Label::Uncertain } else { Label::Certain })
        .collect()
}

proptest! {
    #[test]
    fn f1_matches_closed_form(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let (pred, gold): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let m = MetricsReport::evaluate(&labels(&pred), &labels(&gold)).unwrap();
        let tp = pred.iter().zip(&gold).filter(|(p, g)| **p && **g).count() as f64;
        let fp = pred.iter().zip(&gold).filter(|(p, g)| **p && !**g).count() as f64;
        let fn_ = pred.iter().zip(&gold).filter(|(p, g)| !**p && **g).count() as f64;
        let want = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        prop_assert!((m.f1 - want).abs() < 1e-12);
        prop_assert!((m.f1_x100 - 100.0 * want).abs() < 1e-9);
        prop_assert_eq!(m.confusion().total(), pred.len() as u64);
        prop_assert!((0.0..=1.0).contains(&m.precision) && (0.0..=1.0).contains(&m.recall));
    }

    #[test]
    fn perfect_prediction_scores_one(gold in prop::collection::vec(any::<bool>(), 1..100)) {
        prop_assume!(gold.iter().any(|&g| g));
        let g = labels(&gold);
        prop_assert_eq!(MetricsReport::evaluate(&g, &g).unwrap().f1, 1.0);
    }

    #[test]
    fn mean_std_matches_two_pass(values in prop::collection::vec(-100.0f64..100.0, 2..30)) {
        let (m, s) = mean_std(&values).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!((m - mean).abs() < 1e-9);
        prop_assert!((s - var.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn tokens_never_contain_whitespace_or_pure_noise(text in "[ a-zA-Z0-9.,'<>/*#_-]{0,60}") {
        let cfg = CleanConfig::default();
        for span in tokenize_spans(&text, &cfg) {
            prop_assert!(!span.text.is_empty());
            prop_assert!(!span.text.chars().any(char::is_whitespace));
            prop_assert!(!span.text.chars().all(|c| DEFAULT_NOISE.contains(c)));
            prop_assert_eq!(span.text.clone(), text[span.start..span.end].to_lowercase());
        }
    }

    #[test]
    fn split_is_a_partition(n in 2usize..300, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let sents: Vec<Sentence> = (0..n)
            .map(|i| Sentence::new(format!("s{i}"), vec!["w".into()], Label::Certain))
            .collect();
        let (train, dev) = split_train_dev(sents, ratio, seed).unwrap();
        prop_assert_eq!(dev.len(), (ratio * n as f64).round() as usize);
        prop_assert_eq!(train.len() + dev.len(), n);
        let mut ids: Vec<usize> = train.iter().chain(&dev).map(|s| s.id[1..].parse().unwrap()).collect();
        for part in [&train, &dev] {
            let order: Vec<usize> = part.iter().map(|s| s.id[1..].parse().unwrap()).collect();
            prop_assert!(order.windows(2).all(|w| w[0] < w[1]));
        }
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn truncate_pad_shape(ids in prop::collection::vec(2usize..50, 0..100), max_len in 1usize..70) {
        let (out, mask) = truncate_pad(&ids, max_len);
        prop_assert_eq!(out.len(), max_len);
        prop_assert_eq!(mask.len(), max_len);
        let live = ids.len().min(max_len);
        prop_assert!(mask[..live].iter().all(|&m| m) && mask[live..].iter().all(|&m| !m));
        prop_assert_eq!(&out[..live], &ids[..live]);
        prop_assert!(out[live..].iter().all(|&i| i == 0));
    }

    #[test]
    fn class_weights_balance_the_classes(nc in 1usize..10_000, nu in 1usize..10_000) {
        let (w0, w1) = class_weights(nc, nu).unwrap();
        let n = (nc + nu) as f64;
        prop_assert!((w0 * nc as f64 - n / 2.0).abs() < 1e-6);
        prop_assert!((w1 * nu as f64 - n / 2.0).abs() < 1e-6);
    }
}

#[test]
fn confusion_rejects_bad_input() {
    assert!(confusion(&[], &[]).is_err());
    assert!(confusion(&[Label::Certain], &[]).is_err());
}

#[test]
fn zero_predictions_give_zero_f1() {
    assert_eq!(precision_recall_f1(0, 0, 5), (0.0, 0.0, 0.0));
    assert_eq!(precision_recall_f1(0, 3, 0).2, 0.0);
}

#[test]
fn two_seed_mean_and_std() {
    let (m, s) = mean_std(&[68.25, 67.69]).unwrap();
    assert_eq!(format!("{m:.2}"), "67.97");
    assert!((s - 0.395_979_797).abs() < 1e-6);
}

#[test]
fn weighted_bce_hand_values() {
    let w = class_weights(3, 1).unwrap();
    assert_eq!(w, (4.0 / 6.0, 2.0));
    assert!((weighted_bce(0.8, 1.0, w) - (-2.0 * 0.8f64.ln())).abs() < 1e-15);
    assert!((weighted_bce(0.8, 0.0, w) - (-(4.0 / 6.0) * 0.2f64.ln())).abs() < 1e-15);
    // Clamped away from log(0).
    assert!(weighted_bce(0.0, 1.0, (1.0, 1.0)).is_finite());
}

#[test]
fn sgd_updates_and_keeps_pad_row() {
    let mut store = ParamStore::new();
    let table = store
        .add(
            "table",
            Tensor::new(vec![3, 2], vec![0.0; 6]).unwrap(),
            true,
        )
        .unwrap();
    let w = store
        .add("w", Tensor::vector(vec![1.0, -1.0]), false)
        .unwrap();
    let grads = Gradients::from_slots(vec![Some(vec![1.0; 6]), Some(vec![0.5, -0.5])]);
    sgd_step(&mut store, &grads, 0.1).unwrap();
    assert_eq!(store.get(table).data(), &[0.0, 0.0, -0.1, -0.1, -0.1, -0.1]);
    assert_eq!(store.get(w).data(), &[0.95, -0.95]);

    let bad = Gradients::from_slots(vec![None, Some(vec![f64::NAN, 0.0])]);
    assert!(sgd_step(&mut store, &bad, 0.1).is_err());
    assert_eq!(store.get(w).data(), &[0.95, -0.95]);
}

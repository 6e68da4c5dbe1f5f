use super::*;
use crate::corpus::{build_vocabs, generate_synthetic, Split, SynthConfig, TokenEntry};
use crate::embeddings::ContextSpec;
use crate::model::ModelConfig;

fn tiny() -> ModelConfig {
    ModelConfig {
        d_char: 8,
        d_enc: 8,
        d_dec: 12,
        d_att: 8,
        ..ModelConfig::default()
    }
}

fn synth(n: usize, seed: u64) -> Corpus {
    generate_synthetic(SynthConfig { n_sentences: n, seed }).unwrap().corpus
}

fn model_for(corpus: &Corpus, cfg: ModelConfig, seed: u64) -> CatsModel<f32> {
    let (chars, labels) = build_vocabs(corpus).unwrap();
    CatsModel::new(cfg, chars, labels, ContextSpec::Zeros { dim: 4 }, seed).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs: Some(epochs),
        batch_size: 16,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn five_examples_in_batches_of_two() {
    let b = make_batches(5, 2, 3, 1).unwrap();
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [2, 2, 1]);
    let mut all: Vec<usize> = b.concat();
    all.sort_unstable();
    assert_eq!(all, [0, 1, 2, 3, 4]);
}

#[test]
fn batch_order_depends_only_on_seed_and_epoch() {
    assert_eq!(make_batches(50, 8, 3, 2).unwrap(), make_batches(50, 8, 3, 2).unwrap());
    assert_ne!(make_batches(50, 8, 3, 2).unwrap(), make_batches(50, 8, 3, 3).unwrap());
    assert_ne!(make_batches(50, 8, 3, 2).unwrap(), make_batches(50, 8, 4, 2).unwrap());
    assert!(make_batches(0, 8, 3, 2).is_err());
}

#[test]
fn padding_adds_nothing_to_the_loss() {
    let corpus = synth(4, 2);
    let m = model_for(&corpus, tiny(), 1).cast::<f64>();
    let ex = examples(&m, &corpus).unwrap();
    let long = ex.iter().max_by_key(|e| e.target.len()).unwrap().clone();
    let short = ex.iter().min_by_key(|e| e.target.len()).unwrap().clone();
    assert!(long.target.len() > short.target.len());
    let mut g = Graph::new();
    let alone = m.batch_loss(&mut g, std::slice::from_ref(&short), 1.0).unwrap();
    let alone_sum = g.value(alone.seg).data()[0] * alone.positions as f64;
    let mut g2 = Graph::new();
    let both = m.batch_loss(&mut g2, &[short.clone(), long.clone()], 1.0).unwrap();
    let mut g3 = Graph::new();
    let other = m.batch_loss(&mut g3, std::slice::from_ref(&long), 1.0).unwrap();
    let other_sum = g3.value(other.seg).data()[0] * other.positions as f64;
    let both_sum = g2.value(both.seg).data()[0] * both.positions as f64;
    assert!((both_sum - alone_sum - other_sum).abs() < 1e-9);
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let corpus = synth(6, 1);
    let m = model_for(&corpus, tiny(), 1);
    let (out, report) = train(m.clone(), &corpus, &corpus, &quick(0)).unwrap();
    assert_eq!(out, m);
    assert!(report.rows.is_empty());
    assert_eq!(report.best_epoch, 0);
}

#[test]
fn training_lowers_the_loss_and_keeps_the_best_model() {
    let corpus = synth(30, 5);
    let m = model_for(&corpus, tiny(), 2);
    let (best, report) = train(m, &corpus, &corpus, &quick(6)).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert!(report.rows[5].train_loss < report.rows[0].train_loss);
    let max = report.rows.iter().map(|r| r.dev_seg_f1).fold(report.baseline, f64::max);
    assert_eq!(report.best_metric, max);
    let (seg, _) = dev_scores(&best, &corpus, 1).unwrap();
    assert_eq!(seg, report.best_metric);
    let tsv = report.to_tsv();
    assert!(tsv.starts_with("epoch\ttrain_loss"));
    assert_eq!(tsv.lines().filter(|l| !l.starts_with('#')).count(), 7);
}

#[test]
fn same_seed_gives_identical_parameters() {
    let corpus = synth(12, 4);
    let run = || train(model_for(&corpus, tiny(), 3), &corpus, &corpus, &quick(2)).unwrap().0;
    let (a, b) = (run(), run());
    assert_eq!(a.to_checkpoint_bytes(""), b.to_checkpoint_bytes(""));
}

#[test]
fn joint_loss_decomposes_at_every_step() {
    let corpus = synth(12, 6);
    let cfg = ModelConfig { joint: true, ..tiny() };
    let m = model_for(&corpus, cfg, 1);
    let (_, report) = train(m, &corpus, &corpus, &quick(2)).unwrap();
    assert_eq!(report.metric, DevMetric::LabeledF1);
    assert!(!report.steps.is_empty());
    for s in &report.steps {
        let tag = s.tag.unwrap();
        assert!((s.loss - (0.2 * s.seg + 0.8 * tag)).abs() < 1e-6, "{s:?}");
    }
    assert!(report.rows.iter().all(|r| r.dev_labeled_f1.is_some()));
}

#[test]
fn joint_needs_lambda_inside_the_unit_interval() {
    let corpus = synth(3, 6);
    let m = model_for(&corpus, ModelConfig { joint: true, ..tiny() }, 1);
    for lambda in [0.0, 1.0, 1.5] {
        let cfg = TrainConfig { lambda, ..quick(1) };
        assert!(matches!(train(m.clone(), &corpus, &corpus, &cfg), Err(Error::Config(_))));
    }
    let plain = model_for(&corpus, tiny(), 1);
    let cfg = TrainConfig {
        dev_metric: Some(DevMetric::LabeledF1),
        ..quick(1)
    };
    assert!(train(plain, &corpus, &corpus, &cfg).is_err());
}

#[test]
fn nan_weights_abort_with_position() {
    let corpus = synth(3, 6);
    let mut m = model_for(&corpus, tiny(), 1);
    let id = m.params().find("out.b").unwrap();
    m.params_mut().get_mut(id).value.data_mut()[0] = f32::NAN;
    match train(m, &corpus, &corpus, &quick(1)) {
        Err(Error::Diverged { epoch, batch, lr, .. }) => {
            assert_eq!((epoch, batch), (0, 0));
            assert_eq!(lr, 5e-3);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn nan_loss_is_reported_by_the_step() {
    let corpus = synth(3, 6);
    let mut m = model_for(&corpus, tiny(), 1);
    let id = m.params().find("out.b").unwrap();
    m.params_mut().get_mut(id).value.data_mut()[0] = f32::NAN;
    let ex = examples(&m, &corpus).unwrap();
    let mut adam = AdamState::new(AdamConfig::default());
    let err = train_step(&mut m, &mut adam, &ex[..2], 1.0, 5.0, &mut rand::rngs::mock::StepRng::new(0, 1)).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
}

#[test]
fn patience_stops_early() {
    let corpus = Corpus::new(
        vec![Sentence::new("s", vec![TokenEntry::unsegmented("ab")])],
        Split::Train,
    );
    let m = model_for(&corpus, tiny(), 1);
    let cfg = TrainConfig {
        patience: Some(1),
        ..quick(30)
    };
    let (_, report) = train(m, &corpus, &corpus, &cfg).unwrap();
    assert!(report.rows.len() < 30);
}

#[test]
fn lambda_search_handles_singletons_and_bad_grids() {
    let corpus = synth(6, 8);
    let cfg = ModelConfig { joint: true, ..tiny() };
    let init = || Ok(model_for(&corpus, cfg.clone(), 1));
    let one = tune_lambda(&[0.2], init, &corpus, &corpus, &quick(1)).unwrap();
    assert_eq!(one.best, 0.2);
    assert_eq!(one.scores.len(), 1);
    assert!(tune_lambda(&[], init, &corpus, &corpus, &quick(1)).is_err());
    assert!(tune_lambda(&[0.0, 0.5], init, &corpus, &corpus, &quick(1)).is_err());
}

#[test]
fn lambda_ties_go_to_the_smaller_value() {
    let corpus = synth(6, 8);
    let cfg = ModelConfig { joint: true, ..tiny() };
    let init = || Ok(model_for(&corpus, cfg.clone(), 1));
    // With zero epochs every λ reports the same untouched score.
    let out = tune_lambda(&[0.8, 0.3], init, &corpus, &corpus, &quick(0)).unwrap();
    assert_eq!(out.best, 0.3);
    assert_eq!(out.scores.iter().map(|s| s.0).collect::<Vec<_>>(), [0.3, 0.8]);
}

//! Mini-batch training with teacher forcing, Adam, and best-on-dev model
//! selection.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::evaluation::{labeled_seg_f1, seg_prf};
use crate::model::{CatsModel, Example};
use crate::numeric::{AdamConfig, AdamState, Graph, Scalar};

/// Corpora at least this large get the shorter default schedule.
pub const LARGE_CORPUS: usize = 5000;

/// Default number of epochs for a training set of `sentences` sentences.
pub fn default_epochs(sentences: usize) -> usize {
    if sentences < LARGE_CORPUS {
        40
    } else {
        20
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DevMetric {
    SegF1,
    LabeledF1,
}

impl FromStr for DevMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seg_f1" => Ok(DevMetric::SegF1),
            "labeled_f1" => Ok(DevMetric::LabeledF1),
            other => Err(Error::Config(format!("unknown dev metric {other:?}"))),
        }
    }
}

impl fmt::Display for DevMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DevMetric::SegF1 => "seg_f1",
            DevMetric::LabeledF1 => "labeled_f1",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// `None` picks [`default_epochs`] from the training set size.
    pub epochs: Option<usize>,
    /// Weight of the segmentation loss in the joint objective.
    pub lambda: f64,
    pub seed: u64,
    /// `None` uses labeled F1 for joint models and segment F1 otherwise.
    pub dev_metric: Option<DevMetric>,
    /// Stop after this many epochs without a dev improvement.
    pub patience: Option<usize>,
    /// Global gradient-norm clipping threshold.
    pub clip: f64,
    /// Worker threads for decoding the dev set.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: None,
            lambda: 0.2,
            seed: 1,
            dev_metric: None,
            patience: None,
            clip: 5.0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, joint: bool) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if joint && !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        if self.clip.is_nan() || self.clip <= 0.0 {
            return Err(Error::Config("clip must be positive".into()));
        }
        Ok(())
    }
}

/// Loss values of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub seg: f64,
    pub tag: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_seg: f64,
    pub train_tag: Option<f64>,
    pub dev_seg_f1: f64,
    pub dev_labeled_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub metric: DevMetric,
    pub rows: Vec<EpochRow>,
    pub steps: Vec<StepLog>,
    /// Dev metric of the untrained model.
    pub baseline: f64,
    /// 0 when no epoch beat the untrained model.
    pub best_epoch: usize,
    pub best_metric: f64,
    pub seconds: f64,
}

impl TrainReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\ttrain_seg\ttrain_tag\tdev_seg_f1\tdev_labeled_f1\tseconds\n");
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{}\t{:.6}\t{}\t{:.2}",
                r.epoch,
                r.train_loss,
                r.train_seg,
                opt(r.train_tag),
                r.dev_seg_f1,
                opt(r.dev_labeled_f1),
                r.seconds
            );
        }
        let _ = writeln!(out, "# dev_metric\t{}", self.metric);
        let _ = writeln!(out, "# baseline\t{:.6}", self.baseline);
        let _ = writeln!(out, "# best_epoch\t{}", self.best_epoch);
        let _ = writeln!(out, "# best_metric\t{:.6}", self.best_metric);
        let _ = writeln!(out, "# seconds\t{:.2}", self.seconds);
        out
    }
}

/// Splits `n` example indices into batches after a shuffle that depends
/// only on `(seed, epoch)`.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::invalid("no training examples"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    idx.shuffle(&mut rng);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Every token of `corpus` as a training example.
pub fn examples<'c, F: Scalar>(model: &CatsModel<F>, corpus: &'c Corpus) -> Result<Vec<Example<'c>>> {
    let mut out = Vec::with_capacity(corpus.num_tokens());
    for s in &corpus.sentences {
        for i in 0..s.tokens.len() {
            out.push(model.example(s, i)?);
        }
    }
    Ok(out)
}

/// Dev scores `(seg F1, labeled F1)`; the second only for joint models.
pub fn dev_scores<F: Scalar + Send + Sync>(model: &CatsModel<F>, dev: &Corpus, threads: usize) -> Result<(f64, Option<f64>)> {
    let pred = model.predict_corpus(dev, None, threads)?;
    let seg = seg_prf(&pred.corpus, dev)?.f1;
    let labeled = if model.config().joint {
        Some(labeled_seg_f1(&pred.corpus, dev)?.f1)
    } else {
        None
    };
    Ok((seg, labeled))
}

fn pick(metric: DevMetric, scores: (f64, Option<f64>)) -> Result<f64> {
    match metric {
        DevMetric::SegF1 => Ok(scores.0),
        DevMetric::LabeledF1 => scores
            .1
            .ok_or_else(|| Error::Config("labeled_f1 selection needs a joint model".into())),
    }
}

/// One optimizer step on `batch`; returns its loss values. `rng` draws the
/// dropout masks.
pub fn train_step<F: Scalar>(
    model: &mut CatsModel<F>,
    adam: &mut AdamState<F>,
    batch: &[Example<'_>],
    lambda: f64,
    clip: f64,
    rng: &mut dyn RngCore,
) -> Result<(f64, f64, Option<f64>)> {
    let (vals, grads) = {
        let mut g = Graph::new();
        let out = model.batch_loss_train(&mut g, batch, lambda, rng)?;
        let val = |v| g.value(v).data()[0].to_f64_lossless();
        let vals = (val(out.loss), val(out.seg), out.tag.map(val));
        if !vals.0.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        g.backward(out.loss)?;
        (vals, g.into_param_grads())
    };
    let params = model.params_mut();
    params.zero_grads();
    params.accumulate(grads);
    params.clip_grad_norm(F::lit(clip));
    adam.step(params)?;
    Ok(vals)
}

/// Trains `model` on `train`, scoring `dev` after every epoch, and returns
/// the parameters that scored best on dev (the untrained model counts as
/// epoch 0).
pub fn train<F: Scalar + Send + Sync>(
    mut model: CatsModel<F>,
    train: &Corpus,
    dev: &Corpus,
    cfg: &TrainConfig,
) -> Result<(CatsModel<F>, TrainReport)> {
    let joint = model.config().joint;
    cfg.validate(joint)?;
    let metric = cfg
        .dev_metric
        .unwrap_or(if joint { DevMetric::LabeledF1 } else { DevMetric::SegF1 });
    if metric == DevMetric::LabeledF1 && !joint {
        return Err(Error::Config("labeled_f1 selection needs a joint model".into()));
    }
    let epochs = cfg.epochs.unwrap_or_else(|| default_epochs(train.len()));
    let lambda = if joint { cfg.lambda } else { 1.0 };
    let start = Instant::now();
    let mut report = TrainReport {
        metric,
        rows: Vec::new(),
        steps: Vec::new(),
        baseline: 0.0,
        best_epoch: 0,
        best_metric: 0.0,
        seconds: 0.0,
    };
    if epochs == 0 {
        return Ok((model, report));
    }
    let examples = examples(&model, train)?;
    let diverged = |epoch: usize, batch: usize| {
        move |e: Error| match e {
            Error::NonFinite(what) => Error::Diverged {
                epoch,
                batch,
                lr: cfg.learning_rate,
                msg: format!("non-finite value in {what}"),
            },
            other => other,
        }
    };
    report.baseline = pick(metric, dev_scores(&model, dev, cfg.threads).map_err(diverged(0, 0))?)?;
    report.best_metric = report.baseline;
    info!("dev {metric} before training: {:.4}", report.baseline);
    let mut best = model.params().clone();
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut stale = 0;
    // Batch shuffles use streams 0..=epochs; dropout masks get the last one.
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    drop_rng.set_stream(u64::MAX);

    for epoch in 1..=epochs {
        let t0 = Instant::now();
        let batches = make_batches(examples.len(), cfg.batch_size, cfg.seed, epoch)?;
        let (mut sum_l, mut sum_s, mut sum_t) = (0.0, 0.0, 0.0);
        for (bi, idx) in batches.iter().enumerate() {
            let batch: Vec<Example<'_>> = idx.iter().map(|&i| examples[i].clone()).collect();
            let (l, s, t) = train_step(&mut model, &mut adam, &batch, lambda, cfg.clip, &mut drop_rng).map_err(diverged(epoch, bi))?;
            debug!("epoch {epoch} batch {bi}: L={l:.6} L_seg={s:.6} L_tag={}", t.map_or("-".into(), |t| format!("{t:.6}")));
            sum_l += l;
            sum_s += s;
            sum_t += t.unwrap_or(0.0);
            report.steps.push(StepLog {
                epoch,
                batch: bi,
                loss: l,
                seg: s,
                tag: t,
            });
        }
        let nb = batches.len() as f64;
        let scores = dev_scores(&model, dev, cfg.threads).map_err(diverged(epoch, batches.len()))?;
        let value = pick(metric, scores)?;
        let row = EpochRow {
            epoch,
            train_loss: sum_l / nb,
            train_seg: sum_s / nb,
            train_tag: joint.then_some(sum_t / nb),
            dev_seg_f1: scores.0,
            dev_labeled_f1: scores.1,
            seconds: t0.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}/{epochs}: loss {:.4}, dev seg F1 {:.4}{} ({:.1}s)",
            row.train_loss,
            row.dev_seg_f1,
            row.dev_labeled_f1.map_or(String::new(), |x| format!(", labeled F1 {x:.4}")),
            row.seconds
        );
        report.rows.push(row);
        if value > report.best_metric {
            report.best_metric = value;
            report.best_epoch = epoch;
            best = model.params().clone();
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                info!("no dev improvement for {stale} epochs; stopping");
                break;
            }
        }
    }
    model.params_mut().copy_values_from(&best)?;
    report.seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}

/// Result of a λ grid search.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSearch {
    pub best: f64,
    /// `(λ, best dev metric)` for every grid value, in ascending λ.
    pub scores: Vec<(f64, f64)>,
}

/// Trains one model per λ, each from `init()`, and picks the λ with the best
/// dev metric; ties go to the smaller λ.
pub fn tune_lambda<F, I>(grid: &[f64], init: I, train_set: &Corpus, dev: &Corpus, cfg: &TrainConfig) -> Result<LambdaSearch>
where
    F: Scalar + Send + Sync,
    I: Fn() -> Result<CatsModel<F>>,
{
    if grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    if let Some(bad) = grid.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::Config(format!("lambda {bad} outside (0, 1)")));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut scores = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for lambda in sorted {
        let run = TrainConfig {
            lambda,
            ..cfg.clone()
        };
        let (_, report) = train(init()?, train_set, dev, &run)?;
        info!("lambda {lambda}: dev {} {:.4}", report.metric, report.best_metric);
        scores.push((lambda, report.best_metric));
        if best.is_none_or(|(_, m)| report.best_metric > m) {
            best = Some((lambda, report.best_metric));
        }
    }
    Ok(LambdaSearch {
        best: best.expect("non-empty grid").0,
        scores,
    })
}

/// `(tokens reproduced exactly, tokens)` of greedy decoding over `corpus`.
pub fn exact_match_tokens<F: Scalar + Send + Sync>(model: &CatsModel<F>, corpus: &Corpus, threads: usize) -> Result<(usize, usize)> {
    let pred = model.predict_corpus(corpus, None, threads)?;
    let mut hit = 0;
    for (p, g) in pred.corpus.sentences.iter().zip(&corpus.sentences) {
        hit += count_exact(p, g);
    }
    Ok((hit, corpus.num_tokens()))
}

fn count_exact(p: &Sentence, g: &Sentence) -> usize {
    p.tokens
        .iter()
        .zip(&g.tokens)
        .filter(|(a, b)| a.segments == b.segments)
        .count()
}

#[cfg(test)]
mod tests;

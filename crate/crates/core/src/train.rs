//! Mini-batch training with Adam, evaluation and confusion matrices.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_fixed_length, SampleMode, SkeletonSequence};
use crate::error::{Error, Result};
use crate::model::{fuse_predictions, loss, predict, AgcLstmNetwork, LossTerms, LossWeights, Prediction};
use crate::numerics::{adam_step, step_decay_lr, AdamState, GradBuffer, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub frames: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossWeights,
    pub center: bool,
    pub stop_at_train_accuracy: Option<f64>,
    pub seed: u64,
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Per-sample mean of each loss term over the epoch's batches.
    pub loss: LossTerms,
    /// Accuracy of the online (training-mode) predictions.
    pub running_accuracy: f64,
    /// Eval-mode accuracy on the training split after the epoch.
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
    /// Mean over samples, layers and steps of the summed attention of a
    /// step; 0 for variants without attention.
    pub attention_mass: f64,
}

/// Root-centering (optional) followed by fixed-length sampling.
pub fn prepare(
    seq: &SkeletonSequence,
    root: usize,
    frames: usize,
    center: bool,
    mode: SampleMode,
    rng: &mut ChaCha8Rng,
) -> Result<SkeletonSequence> {
    let mut s = sample_fixed_length(seq, frames, mode, rng)?;
    if center {
        s.center_on(root);
    }
    Ok(s)
}

/// Eval-mode versions of every sequence.
pub fn prepare_eval(seqs: &[SkeletonSequence], root: usize, frames: usize, center: bool) -> Result<Vec<SkeletonSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    seqs.iter()
        .map(|s| prepare(s, root, frames, center, SampleMode::Eval, &mut rng))
        .collect()
}

fn check_labels(net: &AgcLstmNetwork, seqs: &[SkeletonSequence]) -> Result<()> {
    let classes = net.config().classes;
    match seqs.iter().find(|s| s.label >= classes) {
        Some(s) => Err(Error::Data(format!(
            "sample `{}` has label {} but the network has {classes} classes",
            s.source, s.label
        ))),
        None => Ok(()),
    }
}

/// Trains `net` in place, calling `on_epoch` after every epoch.
///
/// Randomness (shuffling, clip offsets, dropout) comes from one generator
/// seeded with `opts.seed`, so identical inputs give identical metrics.
pub fn train(
    net: &mut AgcLstmNetwork,
    train_set: &[SkeletonSequence],
    eval_set: Option<&[SkeletonSequence]>,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::config("train.batch_size", "must be at least 1"));
    }
    check_labels(net, train_set)?;
    let root = net.graph_root();
    let train_eval = prepare_eval(train_set, root, opts.frames, opts.center)?;
    let eval_prepared = match eval_set {
        Some(e) => {
            check_labels(net, e)?;
            Some(prepare_eval(e, root, opts.frames, opts.center)?)
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = AdamState::default();
    adam.init(net.params());
    let use_dropout = net.config().dropout > 0.0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        let lr = step_decay_lr(opts.learning_rate, opts.lr_decay, opts.lr_decay_every, epoch);
        order.shuffle(&mut rng);
        let mut sums = LossTerms::default();
        let mut correct = 0usize;
        for (batch_id, batch) in order.chunks(opts.batch_size).enumerate() {
            let mut grads = GradBuffer::new(net.params());
            for &i in batch {
                let seq = prepare(&train_set[i], root, opts.frames, opts.center, SampleMode::Train, &mut rng)?;
                let mut tape = Tape::new(net.params());
                let out = net.forward(&mut tape, &seq, use_dropout.then_some(&mut rng))?;
                let lv = loss(&mut tape, &out, seq.label, opts.loss)?;
                let terms = lv.values(&tape);
                if !terms.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {} in epoch {}, batch {batch_id}, sample `{}` (global {}, local {}, balance {}, sparsity {})",
                        terms.total,
                        epoch + 1,
                        train_set[i].source,
                        terms.global_xent,
                        terms.local_xent,
                        terms.balance,
                        terms.sparsity
                    )));
                }
                if predict(&tape, &out)?.class == seq.label {
                    correct += 1;
                }
                add_terms(&mut sums, &terms, 1.0);
                tape.backward(lv.total, &mut grads)?;
            }
            if !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in epoch {}, batch {batch_id}",
                    epoch + 1
                )));
            }
            let params = net.params_mut();
            params.zero_grads();
            params.accumulate(&grads)?;
            let inv = 1.0 / batch.len() as f64;
            for p in params.iter_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= inv);
            }
            adam_step(params, &mut adam, lr)?;
        }

        let n = train_set.len() as f64;
        let mut mean = LossTerms::default();
        add_terms(&mut mean, &sums, 1.0 / n);
        let train_eval_result = evaluate(net, &train_eval)?;
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            learning_rate: lr,
            loss: mean,
            running_accuracy: correct as f64 / n,
            train_accuracy: train_eval_result.accuracy,
            eval_accuracy: match &eval_prepared {
                Some(e) => Some(evaluate(net, e)?.accuracy),
                None => None,
            },
            attention_mass: train_eval_result.attention_mass,
        };
        on_epoch(&metrics);
        let done = opts
            .stop_at_train_accuracy
            .is_some_and(|target| metrics.train_accuracy >= target);
        history.push(metrics);
        if done {
            break;
        }
    }
    Ok(history)
}

fn add_terms(acc: &mut LossTerms, t: &LossTerms, w: f64) {
    acc.total += w * t.total;
    acc.global_xent += w * t.global_xent;
    acc.local_xent += w * t.local_xent;
    acc.balance += w * t.balance;
    acc.sparsity += w * t.sparsity;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub attention_mass: f64,
}

fn summarize(predictions: Vec<Prediction>, labels: &[usize], classes: usize, attention_mass: f64) -> Evaluation {
    let mut confusion = vec![vec![0; classes]; classes];
    let mut correct = 0;
    for (p, &y) in predictions.iter().zip(labels) {
        confusion[y][p.class] += 1;
        if p.class == y {
            correct += 1;
        }
    }
    Evaluation {
        accuracy: if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 },
        predictions,
        confusion,
        attention_mass,
    }
}

/// Eval-mode predictions on already prepared sequences.
pub fn evaluate(net: &AgcLstmNetwork, seqs: &[SkeletonSequence]) -> Result<Evaluation> {
    check_labels(net, seqs)?;
    let mut predictions = Vec::with_capacity(seqs.len());
    let (mut mass, mut steps) = (0.0, 0usize);
    for s in seqs {
        let mut tape = Tape::new(net.params());
        let out = net.forward(&mut tape, s, None)?;
        for &a in out.alphas.iter().flatten() {
            mass += tape.value(a).sum();
            steps += 1;
        }
        predictions.push(predict(&tape, &out)?);
    }
    let labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
    let mass = if steps == 0 { 0.0 } else { mass / steps as f64 };
    Ok(summarize(predictions, &labels, net.config().classes, mass))
}

/// Joint and part streams fused per sample.
pub fn evaluate_hybrid(joint: &AgcLstmNetwork, part: &AgcLstmNetwork, seqs: &[SkeletonSequence]) -> Result<Evaluation> {
    if joint.config().classes != part.config().classes {
        return Err(Error::Data(format!(
            "class counts differ: joint stream {} vs part stream {}",
            joint.config().classes,
            part.config().classes
        )));
    }
    let a = evaluate(joint, seqs)?;
    let b = evaluate(part, seqs)?;
    let fused = a
        .predictions
        .iter()
        .zip(&b.predictions)
        .map(|(x, y)| fuse_predictions(x, y))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
    Ok(summarize(fused, &labels, joint.config().classes, a.attention_mass))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(class: usize) -> Prediction {
        Prediction {
            class,
            probabilities: vec![],
        }
    }

    #[test]
    fn confusion_counts() {
        let e = summarize(vec![pred(0), pred(1), pred(1), pred(2)], &[0, 1, 2, 2], 3, 0.0);
        assert_eq!(e.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 1, 1]]);
        assert_eq!(e.accuracy, 0.75);
        let rows: Vec<usize> = e.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(rows, vec![1, 1, 2]);
    }
}

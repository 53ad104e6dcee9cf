use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{lr_schedule, HarnessError, Result, TrainConfig};
use crate::autodiff::{Mode, Session, Sgd, Tensor};
use crate::degrade::{apply, DegradationSpec};
use crate::model::{
    batch_tensor, predictions, total_loss, ActivationState, ModelError, RagcnModel,
};
use crate::preprocess::{preprocess, PreprocessedSequence};
use crate::rng::{derive_seed, seeded, stream};
use crate::skeleton::Dataset;

const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean total loss over the epoch's batches.
    pub loss: f64,
    /// Fused top-1 accuracy on the training batches, in percent.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RagcnModel<f32>,
    pub log: Vec<EpochLog>,
}

fn prepare(ds: &Dataset) -> Result<Vec<PreprocessedSequence>> {
    ds.check().map_err(HarnessError::Data)?;
    ds.samples
        .iter()
        .map(|s| Ok(preprocess(&s.sequence, &ds.graph)?))
        .collect()
}

fn model_error(e: ModelError) -> HarnessError {
    match e {
        ModelError::CheckpointMismatch(m) => HarnessError::CheckpointMismatch(m),
        ModelError::Config(m) => HarnessError::Config(m),
        other => HarnessError::Model(other),
    }
}

fn train_loop(
    model: &mut RagcnModel<f32>,
    cfg: &TrainConfig,
    train: &Dataset,
    epoch_offset: usize,
) -> Result<Vec<EpochLog>> {
    let inputs = prepare(train)?;
    let labels: Vec<usize> = train.samples.iter().map(|s| s.label).collect();
    if inputs.is_empty() {
        return Err(HarnessError::Data("training set is empty".into()));
    }
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.lr = lr_schedule(epoch + epoch_offset, cfg);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut seeded(
            derive_seed(cfg.seed, epoch as u64),
            stream::SHUFFLE,
        ));
        let (mut loss_sum, mut batches, mut correct) = (0.0, 0usize, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&PreprocessedSequence> = chunk.iter().map(|&i| &inputs[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x: Tensor<f32> = batch_tensor(&refs)?;
            let step_seed = derive_seed(cfg.seed, ((epoch as u64) << 32) | b as u64);
            let mut sess = Session::new(Mode::Train, step_seed);
            let out = model.forward(&mut sess, &x, Some(&y))?;
            let loss = total_loss(&mut sess, out.fused, &out.stream_logits, &y)?;
            let value = sess.tape.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(HarnessError::NumericalFailure(format!(
                    "loss {value} at epoch {epoch}, batch {b}"
                )));
            }
            correct += predictions(sess.tape.value(out.fused))
                .iter()
                .zip(&y)
                .filter(|(p, l)| p == l)
                .count();
            let grads = sess
                .backward(loss, &model.store)
                .map_err(ModelError::from)?;
            if !grads.all_finite() {
                return Err(HarnessError::NumericalFailure(format!(
                    "non-finite gradient at epoch {epoch}, batch {b}"
                )));
            }
            sess.commit_running_stats(&mut model.store);
            opt.step(&mut model.store, &grads)
                .map_err(ModelError::from)?;
            loss_sum += value;
            batches += 1;
        }
        log.push(EpochLog {
            epoch,
            lr: opt.lr,
            loss: loss_sum / batches as f64,
            train_accuracy: 100.0 * correct as f64 / inputs.len() as f64,
        });
    }
    if !model.store.all_finite() {
        return Err(HarnessError::NumericalFailure(
            "non-finite parameters".into(),
        ));
    }
    Ok(log)
}

/// Trains a one-stream model on clean data.
pub fn pretrain_baseline(cfg: &TrainConfig, train: &Dataset) -> Result<TrainOutcome> {
    if cfg.degradation.as_ref().is_some_and(|d| !d.is_none()) {
        return Err(HarnessError::ProtocolViolation);
    }
    cfg.validate()?;
    let mut model = RagcnModel::new(
        cfg.model(1, train.num_classes),
        train.graph.clone(),
        cfg.seed,
    )
    .map_err(model_error)?;
    let log = train_loop(&mut model, cfg, train, 0)?;
    Ok(TrainOutcome { model, log })
}

/// Builds a `cfg.streams`-stream model whose streams all start from the
/// baseline's stream, then trains it jointly on clean data.
pub fn finetune_multistream(
    cfg: &TrainConfig,
    baseline: &RagcnModel<f32>,
    train: &Dataset,
) -> Result<TrainOutcome> {
    if cfg.degradation.as_ref().is_some_and(|d| !d.is_none()) {
        return Err(HarnessError::ProtocolViolation);
    }
    cfg.validate()?;
    if cfg.streams < 2 {
        return Err(HarnessError::Config(
            "finetuning needs at least two streams".into(),
        ));
    }
    if baseline.graph != train.graph {
        return Err(HarnessError::CheckpointMismatch(
            "baseline and dataset graphs differ".into(),
        ));
    }
    let mut model = RagcnModel::from_baseline(
        baseline,
        cfg.model(cfg.streams, train.num_classes),
        derive_seed(cfg.seed, 1),
    )
    .map_err(model_error)?;
    let offset = if cfg.restart_schedule { 0 } else { cfg.epochs };
    let log = train_loop(&mut model, cfg, train, offset)?;
    Ok(TrainOutcome { model, log })
}

fn degraded_inputs(
    model: &RagcnModel<f32>,
    ds: &Dataset,
    spec: &DegradationSpec,
) -> Result<Vec<PreprocessedSequence>> {
    ds.check().map_err(HarnessError::Data)?;
    if ds.graph != model.graph {
        return Err(HarnessError::CheckpointMismatch(
            "model and dataset graphs differ".into(),
        ));
    }
    if ds.num_classes != model.config.num_classes {
        return Err(HarnessError::CheckpointMismatch(format!(
            "model has {} classes, dataset {}",
            model.config.num_classes, ds.num_classes
        )));
    }
    spec.validate()?;
    ds.samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let x = apply(&spec.for_sample(i), &s.sequence)?;
            Ok(preprocess(&x, &ds.graph)?)
        })
        .collect()
}

/// Degrades, preprocesses and classifies every sample in a fixed order.
/// Returns top-1 accuracy in percent, predictions and activation records.
pub fn evaluate_with_states(
    model: &RagcnModel<f32>,
    ds: &Dataset,
    spec: &DegradationSpec,
) -> Result<(f64, Vec<usize>, Vec<ActivationState>)> {
    let inputs = degraded_inputs(model, ds, spec)?;
    let mut preds = Vec::with_capacity(inputs.len());
    let mut states = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        let refs: Vec<&PreprocessedSequence> = chunk.iter().collect();
        let x: Tensor<f32> = batch_tensor(&refs)?;
        let mut sess = Session::new(Mode::Eval, 0);
        let out = model.forward(&mut sess, &x, None)?;
        let fused = sess.tape.value(out.fused);
        if !fused.is_finite() {
            return Err(HarnessError::NumericalFailure("non-finite logits".into()));
        }
        preds.extend(predictions(fused));
        states.extend(out.activations);
    }
    let correct = preds
        .iter()
        .zip(&ds.samples)
        .filter(|(p, s)| **p == s.label)
        .count();
    let acc = if preds.is_empty() {
        0.0
    } else {
        100.0 * correct as f64 / preds.len() as f64
    };
    Ok((acc, preds, states))
}

pub fn evaluate(model: &RagcnModel<f32>, ds: &Dataset, spec: &DegradationSpec) -> Result<f64> {
    evaluate_with_states(model, ds, spec).map(|r| r.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamActivation {
    pub stream: usize,
    pub class: usize,
    /// `(frame, joint)` cells this stream activated among those it saw.
    pub activated: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleActivations {
    pub sample_id: String,
    pub label: usize,
    pub predicted: usize,
    pub streams: Vec<StreamActivation>,
    pub first_stream_cells: usize,
    pub union_cells: usize,
}

/// Activated cells of every stream for every sample.
pub fn dump_activations(
    model: &RagcnModel<f32>,
    ds: &Dataset,
    spec: &DegradationSpec,
) -> Result<Vec<SampleActivations>> {
    let (_, preds, states) = evaluate_with_states(model, ds, spec)?;
    Ok(ds
        .samples
        .iter()
        .zip(preds)
        .zip(states)
        .map(|((s, predicted), st)| SampleActivations {
            sample_id: s.sample_id.clone(),
            label: s.label,
            predicted,
            streams: (0..st.maps.len())
                .map(|k| StreamActivation {
                    stream: k,
                    class: st.classes[k],
                    activated: st.activated(k).cells(),
                })
                .collect(),
            first_stream_cells: st.activated(0).count(),
            union_cells: st.union_activated().count(),
        })
        .collect())
}

pub fn write_epoch_csv<W: Write>(out: W, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in log {
        w.serialize(row)
            .map_err(|e| HarnessError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

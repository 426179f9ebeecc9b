use super::DefenseError;
use crate::data::{batch_iter, Dataset, RngStreams};
use crate::models::{build_initialized, NetworkModel, Role};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::{argmax_rows, AdamConfig, AdamState, GradRequest, Mode, Network, NnError};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    pub test_accuracy: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Fraction of `data` the classifier labels correctly (eval mode).
pub fn accuracy(c: &Network, data: &Dataset, batch_size: usize) -> Result<f64, DefenseError> {
    let labels = data.labels().ok_or_else(|| DefenseError::Config("accuracy needs labels".into()))?;
    let mut correct = 0usize;
    let n = data.len();
    for start in (0..n).step_by(batch_size.max(1)) {
        let idx: Vec<usize> = (start..(start + batch_size).min(n)).collect();
        let pred = argmax_rows(&c.forward(&data.images().select_rows(&idx), Mode::Eval)?);
        correct += idx.iter().zip(pred).filter(|&(&i, p)| labels[i] as usize == p).count();
    }
    Ok(correct as f64 / n as f64)
}

/// Trains the classifier with cross-entropy and Adam, then reports its
/// accuracy on `test`.
pub fn pretrain_classifier(
    train: &Dataset,
    test: &Dataset,
    epochs: usize,
    lr: f32,
    batch_size: usize,
    streams: &RngStreams,
) -> Result<(NetworkModel, PretrainReport), DefenseError> {
    let labels = train
        .labels()
        .ok_or_else(|| DefenseError::Config("classifier pretraining needs labels".into()))?;
    let mut model = build_initialized(Role::Classifier, &mut streams.derive("init/classifier", 0));
    let mut opt = AdamState::new(model.params(), AdamConfig::with_lr(lr));
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = streams.derive("shuffle/classifier", epoch as u64);
        let (mut total, mut count) = (0.0, 0usize);
        for (step, batch) in batch_iter(train, batch_size, &mut rng)?.enumerate() {
            let y: Vec<u8> = batch.indices.iter().map(|&i| labels[i]).collect();
            let (logits, tape) = model.forward_train(&batch.images)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(DefenseError::Divergence {
                    stage: "classifier pretraining",
                    epoch,
                    step,
                    detail: format!("loss {loss}"),
                });
            }
            let grads = model.backward(&tape, &grad, GradRequest::PARAMS)?.grads;
            opt.step(model.params_mut(), &grads).map_err(|e| match e {
                NnError::NonFiniteGradient(p) => DefenseError::Divergence {
                    stage: "classifier pretraining",
                    epoch,
                    step,
                    detail: format!("non-finite gradient for {p}"),
                },
                e => e.into(),
            })?;
            total += loss * y.len() as f64;
            count += y.len();
        }
        epoch_losses.push(total / count as f64);
    }
    let test_accuracy = accuracy(&model, test, 1000)?;
    Ok((model, PretrainReport { test_accuracy, epoch_losses }))
}

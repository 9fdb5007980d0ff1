//! Early-stopped SGD training loop.
//!
//! Batches are processed in fixed sub-chunks whose gradients are reduced in
//! index order, so runs are bitwise identical whether chunks execute
//! sequentially or on a rayon pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::network::{
    backward, forward_cached, predict, topk, LayerParams, NetworkSpec, NetworkState,
};
use crate::nncore::optim::{lr_schedule, sgd_step, TrainConfig};
use crate::nncore::rng::derive_rng;
use crate::nncore::tensor::{Scalar, Tensor};

/// Fixed sub-batch width. Chunk boundaries never depend on the number of
/// worker threads, which keeps the gradient reduction order stable.
const CHUNK: usize = 16;

/// A labeled set of stacked inputs: images of shape (N, C, H, W) paired
/// with one class index per sample.
#[derive(Clone, Debug)]
pub struct SampleSet<T = f32> {
    images: Tensor<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> SampleSet<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::dimension(
                "input",
                format!("sample set expects (N,C,H,W), got {:?}", images.shape()),
            ));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::dimension(
                "labels",
                format!(
                    "{} images but {} labels",
                    images.shape()[0],
                    labels.len()
                ),
            ));
        }
        Ok(SampleSet { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copy the rows at `indices` into a fresh (n, C, H, W) batch.
    fn gather(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let row = self.images.row_len();
        let mut data = Vec::with_capacity(indices.len() * row);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.images.row(i));
            labels.push(self.labels[i]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        (
            Tensor::new(&shape, data).expect("gather preserves row shape"),
            labels,
        )
    }
}

/// Per-epoch training record.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// Full history of one training run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_epoch: usize,
    pub stop_reason: StopReason,
}

/// Early-stopping bookkeeping: remembers the best validation accuracy and
/// how long ago it was seen.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    epochs_since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            epochs_since_best: 0,
        }
    }

    /// Feed one epoch's validation accuracy. Improvement means strictly
    /// better than the best seen so far.
    pub fn observe(&mut self, epoch: usize, val_accuracy: f64) -> StopDecision {
        match self.best {
            Some(best) if val_accuracy <= best => {
                self.epochs_since_best += 1;
                if self.epochs_since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some(val_accuracy);
                self.best_epoch = epoch;
                self.epochs_since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_accuracy(&self) -> f64 {
        self.best.unwrap_or(0.0)
    }
}

struct ChunkResult<T: Scalar> {
    loss_sum: T,
    correct: usize,
    grads: Vec<Option<LayerParams<T>>>,
}

/// Forward + backward over one batch, chunked. Gradients and loss sums are
/// reduced in chunk-index order.
fn batch_gradients<T: Scalar>(
    state: &NetworkState<T>,
    spec: &NetworkSpec,
    set: &SampleSet<T>,
    batch_indices: &[usize],
) -> Result<ChunkResult<T>> {
    let divisor = batch_indices.len();
    let chunks: Vec<&[usize]> = batch_indices.chunks(CHUNK).collect();
    let results: Vec<Result<ChunkResult<T>>> = chunks
        .par_iter()
        .map(|chunk| {
            let (images, labels) = set.gather(chunk);
            let cache = forward_cached(state, spec, &images)?;
            let (loss_sum, grads) = backward(state, spec, &cache, &labels, divisor)?;
            let mut correct = 0;
            for (i, &label) in labels.iter().enumerate() {
                if best_class(cache.probs.row(i)) == label {
                    correct += 1;
                }
            }
            Ok(ChunkResult {
                loss_sum,
                correct,
                grads,
            })
        })
        .collect();

    let mut total_loss = T::ZERO;
    let mut total_correct = 0;
    let mut acc: Option<Vec<Option<LayerParams<T>>>> = None;
    for result in results {
        let r = result?;
        total_loss += r.loss_sum;
        total_correct += r.correct;
        match acc.as_mut() {
            None => acc = Some(r.grads),
            Some(acc) => {
                for (slot, add) in acc.iter_mut().zip(r.grads) {
                    if let (Some(slot), Some(add)) = (slot.as_mut(), add) {
                        for (a, &b) in slot.weights.data_mut().iter_mut().zip(add.weights.data())
                        {
                            *a += b;
                        }
                        for (a, &b) in slot.bias.data_mut().iter_mut().zip(add.bias.data()) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
    Ok(ChunkResult {
        loss_sum: total_loss,
        correct: total_correct,
        grads: acc.expect("non-empty batch"),
    })
}

fn best_class<T: Scalar>(probs: &[T]) -> usize {
    topk(probs, 1)[0].0
}

/// Fraction of samples whose top class matches the label.
pub fn evaluate_accuracy<T: Scalar>(
    state: &NetworkState<T>,
    spec: &NetworkSpec,
    set: &SampleSet<T>,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Usage("cannot evaluate an empty sample set".into()));
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    let counts: Vec<Result<usize>> = indices
        .chunks(CHUNK)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|chunk| {
            let (images, labels) = set.gather(chunk);
            let probs = predict(state, spec, &images)?;
            Ok(labels
                .iter()
                .enumerate()
                .filter(|(i, &l)| best_class(probs.row(*i)) == l)
                .count())
        })
        .collect();
    let mut correct = 0;
    for c in counts {
        correct += c?;
    }
    Ok(correct as f64 / set.len() as f64)
}

/// Train a network from scratch, returning the parameter snapshot with the
/// best validation accuracy and the per-epoch log.
///
/// Stops when validation accuracy has not improved for `patience` epochs
/// or when `max_epochs` is reached. Deterministic for a fixed seed.
pub fn train<T: Scalar>(
    spec: &NetworkSpec,
    train_set: &SampleSet<T>,
    val_set: &SampleSet<T>,
    cfg: &TrainConfig,
) -> Result<(NetworkState<T>, TrainLog)> {
    cfg.validate()?;
    spec.propagate_shapes()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Usage("train and validation sets must be non-empty".into()));
    }
    for &l in train_set.labels().iter().chain(val_set.labels()) {
        if l >= spec.n_classes {
            return Err(Error::Usage(format!(
                "label {l} out of range for {} classes",
                spec.n_classes
            )));
        }
    }

    let mut state = NetworkState::<T>::init(spec, cfg.seed)?;
    let mut best_state = state.clone();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut stopped_epoch = cfg.max_epochs.saturating_sub(1);

    let n = train_set.len();
    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = derive_rng(cfg.seed, &[0x5E, epoch as u64]);
        shuffle(&mut order, &mut rng);

        let mut loss_sum = T::ZERO;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let result =
                batch_gradients(&state, spec, train_set, batch).map_err(|e| match e {
                    // exploding weights surface as non-finite logits
                    Error::Numeric(message) => Error::Training { epoch, message },
                    other => other,
                })?;
            let batch_mean = result.loss_sum.to_f64() / batch.len() as f64;
            if !batch_mean.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("loss became non-finite ({batch_mean})"),
                });
            }
            loss_sum += result.loss_sum;
            correct += result.correct;
            sgd_step(&mut state, &result.grads, lr, cfg.momentum, cfg.weight_decay)?;
        }

        let train_loss = loss_sum.to_f64() / n as f64;
        let train_accuracy = correct as f64 / n as f64;
        let val_accuracy = evaluate_accuracy(&state, spec, val_set).map_err(|e| match e {
            Error::Numeric(message) => Error::Training { epoch, message },
            other => other,
        })?;
        epochs.push(EpochLog {
            epoch,
            lr,
            train_loss,
            train_accuracy,
            val_accuracy,
        });
        match stopper.observe(epoch, val_accuracy) {
            StopDecision::Improved => {
                best_state = state.clone();
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stop_reason = StopReason::Patience;
                stopped_epoch = epoch;
                break;
            }
        }
        stopped_epoch = epoch;
    }

    Ok((
        best_state,
        TrainLog {
            epochs,
            best_epoch: stopper.best_epoch(),
            best_val_accuracy: stopper.best_accuracy(),
            stopped_epoch,
            stop_reason,
        },
    ))
}

/// Fisher-Yates with our deterministic rng.
fn shuffle(order: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

//! Losses, the Adam optimizer, batch preparation and the epoch loop.

use alloc::format;
use alloc::vec::Vec;

use crate::data::augment::{resize_bilinear, rotation_pretext_sample};
use crate::data::{batch_tensor, AugmentPolicy, DatasetStats, Image, ImageSample};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{argmax, PredictionRecord};
use crate::model::{model_forward, ForwardCtx, HgtNet, ParamSet};
use crate::rng::{stream_id_for, RngStream};
use crate::tensor::Tensor;

/// Child tag of a sample's epoch stream that draws its pretext rotation.
pub const TAG_PRETEXT: u64 = 0x70;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            max_epochs: 20,
            patience: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        Ok(())
    }
}

pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    logits.cross_entropy(labels)
}

/// `CE(class) + lambda · CE(rotation)`; exactly the class term when `lambda == 0`.
pub fn combined_loss(
    class_logits: &Tensor,
    labels: &[usize],
    rot_logits: &Tensor,
    rot_labels: &[usize],
    lambda: f64,
) -> Result<Tensor> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("rotation loss weight must be non-negative, got {lambda}")));
    }
    let ce = cross_entropy(class_logits, labels)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    ce.add(&cross_entropy(rot_logits, rot_labels)?.scale(lambda))
}

/// First and second moment estimates, laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: ParamSet,
    pub v: ParamSet,
}

impl Moments {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update at step `t ≥ 1`.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, moments: &mut Moments, t: u64, cfg: &TrainConfig) -> Result<()> {
    if t == 0 {
        return Err(Error::Contract("Adam steps are counted from 1".into()));
    }
    if !params.same_layout(grads) || !params.same_layout(&moments.m) || !params.same_layout(&moments.v) {
        return Err(Error::Contract("parameters, gradients and moments differ in layout".into()));
    }
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - math::pow(b1, t as f64);
    let c2 = 1.0 - math::pow(b2, t as f64);
    let m_all = moments.m.iter_mut();
    let v_all = moments.v.iter_mut();
    for ((((_, p), (_, g)), (_, m)), (_, v)) in params.iter_mut().zip(grads.iter()).zip(m_all).zip(v_all) {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] -= cfg.learning_rate * m_hat / (math::sqrt(v_hat) + cfg.adam_eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stop once the minimum test loss has gone `patience` consecutive epochs
/// without a strict improvement.
pub fn early_stopping_check(history: &[f64], patience: usize) -> Result<StopDecision> {
    if patience == 0 {
        return Err(Error::Config("patience must be at least 1".into()));
    }
    let mut tracker = StopTracker::new();
    for &loss in history {
        tracker.observe(loss);
    }
    Ok(if tracker.bad_epochs >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    })
}

/// Index of the first minimal loss, the epoch whose weights are kept.
pub fn best_epoch(history: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &l) in history.iter().enumerate() {
        if best.map_or(!l.is_nan(), |b| l < history[b]) {
            best = Some(i);
        }
    }
    best
}

/// Running form of [`early_stopping_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopTracker {
    pub best_loss: f64,
    /// Epochs since the last strict improvement.
    pub bad_epochs: usize,
}

impl Default for StopTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl StopTracker {
    pub fn new() -> Self {
        Self {
            best_loss: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Record one epoch; true when it strictly improved on the best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.bad_epochs >= patience
    }
}

/// Consecutive `[start, end)` ranges of at most `batch` items; the last one
/// may be short.
pub fn batch_ranges(n: usize, batch: usize) -> Vec<core::ops::Range<usize>> {
    (0..n).step_by(batch.max(1)).map(|s| s..(s + batch).min(n)).collect()
}

/// Network input for one step. With pretext rows, `x` holds the augmented
/// originals followed by one rotated copy of each.
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub rot_labels: Vec<usize>,
}

pub fn prepare_batch(
    samples: &[&ImageSample],
    policy: &AugmentPolicy,
    stats: &DatasetStats,
    seed: u64,
    epoch: u64,
    with_pretext: bool,
) -> Result<Batch> {
    let mut views: Vec<Image> = Vec::with_capacity(samples.len() * 2);
    let mut rotated = Vec::new();
    let mut rot_labels = Vec::new();
    for s in samples {
        let stream = s.stream(seed, epoch);
        let view = policy.apply(&s.image, &stream)?;
        if with_pretext {
            let (img, label) = rotation_pretext_sample(&view, &mut stream.derive(TAG_PRETEXT))?;
            rotated.push(img);
            rot_labels.push(label as usize);
        }
        views.push(view);
    }
    views.extend(rotated);
    let refs: Vec<&Image> = views.iter().collect();
    Ok(Batch {
        x: batch_tensor(&refs, stats)?,
        labels: samples.iter().map(|s| s.label).collect(),
        rot_labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub class_loss: f64,
    pub loss: f64,
    pub correct: usize,
    pub size: usize,
}

/// Forward in training mode, backward, one Adam update.
pub fn train_step(
    model: &mut HgtNet,
    moments: &mut Moments,
    step: &mut u64,
    batch: &Batch,
    cfg: &TrainConfig,
    dropout: RngStream,
) -> Result<StepStats> {
    let b = batch.labels.len();
    let bound = model.params.bind(true);
    let out = model_forward(&model.cfg, &bound, &batch.x, &mut ForwardCtx::train(dropout))?;
    let class = if out.class_logits.shape()[0] > b {
        out.class_logits.narrow0(0, b)?
    } else {
        out.class_logits.clone()
    };
    let ce = cross_entropy(&class, &batch.labels)?;
    let loss = if batch.rot_labels.is_empty() {
        ce.clone()
    } else {
        let rot = out.rot_logits.narrow0(b, batch.rot_labels.len())?;
        combined_loss(&class, &batch.labels, &rot, &batch.rot_labels, model.cfg.rotation_loss_weight)?
    };
    loss.backward()?;
    *step += 1;
    adam_step(&mut model.params, &bound.grads(), moments, *step, cfg)?;
    let k = class.shape()[1];
    let correct = class
        .data()
        .chunks(k)
        .zip(&batch.labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(StepStats {
        class_loss: ce.item(),
        loss: loss.item(),
        correct,
        size: b,
    })
}

/// Eval-mode predictions after resize + normalize only, with each sample's
/// cross-entropy computed from its logits.
pub fn predict(
    model: &HgtNet,
    samples: &[&ImageSample],
    stats: &DatasetStats,
    batch_size: usize,
) -> Result<(Vec<PredictionRecord>, Vec<f64>)> {
    let s = model.cfg.image_size;
    let mut records = Vec::with_capacity(samples.len());
    let mut losses = Vec::with_capacity(samples.len());
    for r in batch_ranges(samples.len(), batch_size) {
        let chunk = &samples[r];
        let imgs = chunk
            .iter()
            .map(|x| resize_bilinear(&x.image, s, s))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Image> = imgs.iter().collect();
        let logits = model.forward_eval(&batch_tensor(&refs, stats)?)?.class_logits;
        let k = logits.shape()[1];
        for (row, sample) in logits.data().chunks(k).zip(chunk) {
            if sample.label >= k {
                return Err(Error::Contract(format!(
                    "sample `{}` has label {} but the model has {k} classes",
                    sample.id, sample.label
                )));
            }
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| math::exp(v - m)).sum();
            losses.push(m + math::ln(z) - row[sample.label]);
            records.push(PredictionRecord {
                sample_id: sample.id.clone(),
                true_label: sample.label,
                scores: row.iter().map(|v| math::exp(v - m) / z).collect(),
            });
        }
    }
    Ok((records, losses))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub records: Vec<PredictionRecord>,
}

impl Evaluation {
    /// Mean loss and argmax accuracy over per-sample results.
    pub fn from_parts(records: Vec<PredictionRecord>, losses: &[f64]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Dataset("evaluation set is empty".into()));
        }
        let n = records.len() as f64;
        let correct = records.iter().filter(|r| r.predicted() == r.true_label).count();
        Ok(Self {
            loss: losses.iter().sum::<f64>() / n,
            accuracy: correct as f64 / n,
            records,
        })
    }
}

pub fn evaluate(model: &HgtNet, samples: &[&ImageSample], stats: &DatasetStats, batch_size: usize) -> Result<Evaluation> {
    let (records, losses) = predict(model, samples, stats, batch_size)?;
    Evaluation::from_parts(records, &losses)
}

/// Everything needed to continue training bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: HgtNet,
    pub config: TrainConfig,
    pub policy: AugmentPolicy,
    pub stats: DatasetStats,
    pub moments: Moments,
    /// Adam steps taken.
    pub step: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub tracker: StopTracker,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub record: EpochRecord,
    pub improved: bool,
    pub stop: bool,
    pub evaluation: Evaluation,
}

impl Trainer {
    pub fn new(model: HgtNet, config: TrainConfig, policy: AugmentPolicy, stats: DatasetStats) -> Result<Self> {
        model.cfg.validate()?;
        config.validate()?;
        policy.validate()?;
        let moments = Moments::zeros_like(&model.params);
        Ok(Self {
            model,
            config,
            policy,
            stats,
            moments,
            step: 0,
            epoch: 0,
            tracker: StopTracker::new(),
            history: Vec::new(),
        })
    }

    /// One pass over `train` in seeded shuffled order; returns the mean
    /// classification loss and accuracy on the augmented views.
    pub fn train_epoch(&mut self, train: &[&ImageSample]) -> Result<(f64, f64)> {
        if train.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        let seed = self.config.seed;
        let mut order: Vec<usize> = (0..train.len()).collect();
        RngStream::new(seed, stream_id_for("shuffle")).derive(self.epoch).shuffle(&mut order);
        let dropout = RngStream::new(seed, stream_id_for("dropout")).derive(self.epoch);
        let with_pretext = self.model.cfg.rotation_loss_weight > 0.0;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, r) in batch_ranges(order.len(), self.config.batch_size).into_iter().enumerate() {
            let samples: Vec<&ImageSample> = order[r].iter().map(|&i| train[i]).collect();
            let batch = prepare_batch(&samples, &self.policy, &self.stats, seed, self.epoch, with_pretext)?;
            let st = train_step(
                &mut self.model,
                &mut self.moments,
                &mut self.step,
                &batch,
                &self.config,
                dropout.derive(bi as u64),
            )?;
            loss_sum += st.class_loss * st.size as f64;
            correct += st.correct;
        }
        let n = train.len() as f64;
        Ok((loss_sum / n, correct as f64 / n))
    }

    /// Train one epoch, evaluate on `test` with `eval`, update early stopping.
    pub fn run_epoch_with<E>(&mut self, train: &[&ImageSample], test: &[&ImageSample], eval: E) -> Result<EpochOutcome>
    where
        E: Fn(&HgtNet, &[&ImageSample], &DatasetStats) -> Result<Evaluation>,
    {
        if test.is_empty() {
            return Err(Error::Dataset("test split is empty".into()));
        }
        let (train_loss, train_acc) = self.train_epoch(train)?;
        let evaluation = eval(&self.model, test, &self.stats)?;
        self.epoch += 1;
        let record = EpochRecord {
            epoch: self.epoch as usize,
            train_loss,
            train_acc,
            test_loss: evaluation.loss,
            test_acc: evaluation.accuracy,
        };
        let improved = self.tracker.observe(record.test_loss);
        self.history.push(record);
        Ok(EpochOutcome {
            record,
            improved,
            stop: self.tracker.should_stop(self.config.patience),
            evaluation,
        })
    }

    pub fn run_epoch(&mut self, train: &[&ImageSample], test: &[&ImageSample]) -> Result<EpochOutcome> {
        let bs = self.config.batch_size;
        self.run_epoch_with(train, test, |m, s, st| evaluate(m, s, st, bs))
    }
}

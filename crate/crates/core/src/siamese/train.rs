use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::softmax2;
use super::model::{LabeledPair, SiameseModel, Weights};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Adam learning rate.
    pub eta: f64,
    /// Decoupled weight-decay factor.
    pub gamma: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop once the epoch-mean cross-entropy falls below this.
    pub loss_threshold: f64,
    /// Stop once the epoch training-error rate falls below this.
    pub error_threshold: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            gamma: 0.0005,
            batch_size: 16,
            max_epochs: 50,
            loss_threshold: 1e-5,
            error_threshold: 1e-4,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadTrainConfig(m.into()));
        if !(self.eta > 0.0) {
            return bad("eta must be positive");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub error_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LossThreshold,
    ErrorThreshold,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub pairs: usize,
    pub epochs: Vec<EpochStats>,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn final_stats(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    /// Emits `epoch,loss,error_rate` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.epochs {
            out.serialize(e)?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Adam<T> {
    m: Weights<T>,
    v: Weights<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(w: &Weights<T>) -> Self {
        Self {
            m: w.zeros_like(),
            v: w.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut SiameseModel<T>, grads: &Weights<T>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let c1 = T::of(1.0 - cfg.beta1.powi(self.step));
        let c2 = T::of(1.0 - cfg.beta2.powi(self.step));
        let (eta, eps) = (T::of(cfg.eta), T::of(cfg.adam_eps));
        let decay = T::of(cfg.eta * cfg.gamma);
        let flags: Vec<bool> = model.layout().iter().map(|s| s.decay).collect();
        let tensors = model
            .weights
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(flags);
        for ((((w, g), m), v), decays) in tensors {
            for i in 0..w.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let step = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                let shrink = if decays { decay * w[i] } else { T::zero() };
                w[i] -= shrink + eta * step;
            }
        }
    }
}

struct SampleOutcome<T> {
    grads: Weights<T>,
    loss: f64,
    correct: bool,
}

/// Mini-batch Adam training with decoupled weight decay.
///
/// Pairs are reshuffled every epoch from one seeded stream. Per-sample
/// gradients within a batch may be computed in parallel but are summed in
/// batch order, so results do not depend on the thread count.
pub fn train<T: Scalar>(
    mut model: SiameseModel<T>,
    pairs: &[LabeledPair<'_, T>],
    cfg: &TrainConfig,
) -> Result<(SiameseModel<T>, TrainReport)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::BadTrainConfig("no training pairs".into()));
    }
    let positives = pairs.iter().filter(|p| p.label != 0).count();
    if positives == 0 {
        return Err(Error::DegeneratePairs(0));
    }
    if positives == pairs.len() {
        return Err(Error::DegeneratePairs(1));
    }
    let parts = pairs
        .iter()
        .map(|p| Ok((model.split_checked(p.a)?, model.split_checked(p.b)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.weights);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut errors = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let outcomes: Vec<SampleOutcome<T>> = batch
                .par_iter()
                .map(|&i| {
                    let mut grads = model.weights.zeros_like();
                    let (a, b) = &parts[i];
                    let label = pairs[i].label;
                    let (logits, l) = model.pair_gradient(a, b, label, &mut grads);
                    let predicted_same = softmax2(logits)[1] > T::of(0.5);
                    SampleOutcome {
                        grads,
                        loss: l.f64(),
                        correct: predicted_same == (label != 0),
                    }
                })
                .collect();
            let mut grads = model.weights.zeros_like();
            for o in &outcomes {
                grads.add_assign(&o.grads);
                loss_sum += o.loss;
                errors += usize::from(!o.correct);
            }
            grads.scale(T::of(1.0 / batch.len() as f64));
            adam.update(&mut model, &grads, cfg);
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / pairs.len() as f64,
            error_rate: errors as f64 / pairs.len() as f64,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} error rate {:.4}",
            stats.loss,
            stats.error_rate
        );
        epochs.push(stats);
        if stats.loss < cfg.loss_threshold {
            stop_reason = StopReason::LossThreshold;
            break;
        }
        if stats.error_rate < cfg.error_threshold {
            stop_reason = StopReason::ErrorThreshold;
            break;
        }
    }
    let report = TrainReport {
        config: *cfg,
        pairs: pairs.len(),
        epochs,
        stop_reason,
    };
    model.training = Some(report.clone());
    Ok((model, report))
}

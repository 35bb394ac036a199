//! Saliency-guided, quantization-aware training.
//!
//! Each step ranks input features by the gradient of the true-class
//! log-probability, replaces the `k` least salient features of every image
//! with uniform noise, and minimizes `CE(f(X), y) + λ·KL(f(X) ‖ f(X̃))` with
//! plain SGD. Conv-weight gradients pass through the straight-through
//! estimator and the PACT clip levels are trained alongside the weights.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset, Source, PIXELS};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, BitConfig, CnnModel};
use crate::rng;
use crate::tensor::{Element, Tape, Tensor};

/// Class whose log-probability is differentiated for saliency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyTarget {
    #[default]
    True,
    Predicted,
}

/// Key used to rank features before masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    #[default]
    Absolute,
    Signed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Cross-entropy plus the masked-input KL term.
    #[default]
    Sgt,
    /// Cross-entropy only; no saliency pass.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgtConfig {
    /// Features masked per image.
    pub k: usize,
    /// KL weight.
    pub lambda: f64,
    /// Learning rate.
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub bits: BitConfig,
    #[serde(default)]
    pub target: SaliencyTarget,
    #[serde(default)]
    pub rank: RankMode,
    #[serde(default)]
    pub mode: TrainMode,
}

/// Images per forward pass during evaluation. Every accuracy figure is
/// computed over this fixed partition.
pub const EVAL_BATCH: usize = 500;

impl SgtConfig {
    pub fn defaults_for(source: Source, bits: BitConfig) -> Self {
        let (batch_size, lr, epochs) = match source {
            Source::Mnist => (256, 0.2, 10),
            Source::Fashion => (128, 0.1, 20),
        };
        Self {
            k: PIXELS / 2,
            lambda: 1.0,
            lr,
            batch_size,
            epochs,
            seed: 0,
            bits,
            target: SaliencyTarget::True,
            rank: RankMode::Absolute,
            mode: TrainMode::Sgt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k > PIXELS {
            return Err(Error::Config(format!("k = {} exceeds {PIXELS} features", self.k)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// `ce + λ·kl`; exactly `ce` when `λ = 0`.
pub fn combined_loss(ce: f64, kl: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        ce
    } else {
        ce + lambda * kl
    }
}

/// Gradient of `Σ_i log_softmax(f(X))[i, t_i]` with respect to `X`, where
/// `t_i` is the label or the predicted class. The model is borrowed
/// immutably, so parameters and their gradient slots are untouched.
pub fn input_saliency<T: Element>(
    model: &CnnModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    target: SaliencyTarget,
) -> Result<Tensor<T>> {
    let mut tape = Tape::with_conv_algo(model.conv_algo);
    let p = model.bind(&mut tape, false);
    let xv = tape.leaf(x.clone(), true);
    let logits = model.forward(&mut tape, &p, xv)?;
    let targets = match target {
        SaliencyTarget::True => labels.to_vec(),
        SaliencyTarget::Predicted => argmax_rows(tape.value(logits)),
    };
    let lp = tape.log_softmax(logits)?;
    let score = tape.pick_sum(lp, &targets)?;
    let mut grads = tape.backward(score)?;
    Ok(grads.take(xv).unwrap_or_else(|| Tensor::zeros(x.shape())))
}

/// Feature indices of one image sorted by ascending rank key; ties keep
/// ascending index order.
pub fn rank_ascending<T: Element>(saliency: &[T], rank: RankMode) -> Vec<usize> {
    let key = |v: T| match rank {
        RankMode::Absolute => v.abs(),
        RankMode::Signed => v,
    };
    let mut order: Vec<usize> = (0..saliency.len()).collect();
    order.sort_by(|&a, &b| key(saliency[a]).partial_cmp(&key(saliency[b])).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Replaces the `k` lowest-ranked features of every image with independent
/// uniform `[0, 1)` draws, consumed in rank order image by image.
pub fn mask_bottom_k<T: Element, R: Rng + ?Sized>(
    x: &Tensor<T>,
    saliency: &Tensor<T>,
    k: usize,
    rank: RankMode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if x.shape() != saliency.shape() {
        return Err(Error::Input(format!(
            "saliency shape {:?} differs from input shape {:?}",
            saliency.shape(),
            x.shape()
        )));
    }
    let n = x.shape().first().copied().unwrap_or(0);
    let features = if n == 0 { 0 } else { x.len() / n };
    if k > features {
        return Err(Error::Input(format!("cannot mask {k} of {features} features")));
    }
    let mut out = x.clone();
    if k == 0 {
        return Ok(out);
    }
    for (row, sal) in out.data_mut().chunks_exact_mut(features).zip(saliency.data().chunks_exact(features)) {
        for &i in &rank_ascending(sal, rank)[..k] {
            row[i] = T::from_f64(rng.gen::<f64>()).unwrap();
        }
    }
    Ok(out)
}

/// Loss values of one step, measured before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub ce: f64,
    pub kl: f64,
    pub combined: f64,
    /// Correct predictions on the unmasked batch.
    pub correct: usize,
}

/// Position of a step, for diagnostics.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepIndex {
    pub epoch: usize,
    pub batch: usize,
}

/// One saliency-guided update: saliency, masking, combined loss, backward,
/// SGD on every parameter (clip levels included).
pub fn sgt_step<T: Element, R: Rng + ?Sized>(
    model: &mut CnnModel<T>,
    x: &Tensor<T>,
    y: &[usize],
    cfg: &SgtConfig,
    mask_rng: &mut R,
    at: StepIndex,
) -> Result<StepLosses> {
    let masked = match cfg.mode {
        TrainMode::Sgt => {
            let saliency = input_saliency(model, x, y, cfg.target)?;
            Some(mask_bottom_k(x, &saliency, cfg.k, cfg.rank, mask_rng)?)
        }
        TrainMode::Plain => None,
    };

    let mut tape = Tape::with_conv_algo(model.conv_algo);
    let p = model.bind(&mut tape, true);
    let xv = tape.leaf(x.clone(), false);
    let logits = model.forward(&mut tape, &p, xv)?;
    let correct = argmax_rows(tape.value(logits)).iter().zip(y).filter(|(a, b)| a == b).count();
    let lp = tape.log_softmax(logits)?;
    let ce = tape.cross_entropy(lp, y)?;

    let (loss, kl_value) = match masked {
        Some(masked) => {
            let xt = tape.leaf(masked, false);
            let logits_t = model.forward(&mut tape, &p, xt)?;
            let lq = tape.log_softmax(logits_t)?;
            let kl = tape.kl_divergence(lp, lq)?;
            let kl_value = tape.value(kl).item().to_f64().unwrap();
            if cfg.lambda == 0.0 {
                (ce, kl_value)
            } else {
                let weighted = tape.scale(kl, T::from_f64(cfg.lambda).unwrap());
                (tape.add(ce, weighted)?, kl_value)
            }
        }
        None => (ce, 0.0),
    };

    let ce_value = tape.value(ce).item().to_f64().unwrap();
    let combined = tape.value(loss).item().to_f64().unwrap();
    if !(ce_value.is_finite() && kl_value.is_finite() && combined.is_finite()) {
        return Err(Error::NonFiniteLoss {
            epoch: at.epoch,
            batch: at.batch,
            ce: ce_value,
            kl: kl_value,
            combined,
        });
    }

    let grads = tape.backward(loss)?;
    model.zero_grad();
    model.accumulate_grads(&grads, &p)?;
    model.sgd_step(T::from_f64(cfg.lr).unwrap());
    model.zero_grad();

    Ok(StepLosses {
        ce: ce_value,
        kl: kl_value,
        combined,
        correct,
    })
}

/// Fraction of correctly classified samples, over the fixed evaluation
/// partition. Chunks run in parallel; the integer count is order-free.
pub fn evaluate<T: Element>(model: &CnnModel<T>, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let ranges: Vec<_> = dataset.chunks(EVAL_BATCH).collect();
    let counts = ranges
        .into_par_iter()
        .map(|r| {
            let idx: Vec<usize> = r.collect();
            let (x, y) = dataset.gather(&idx);
            let pred = model.predict(&x.cast::<T>())?;
            Ok(pred.iter().zip(&y).filter(|(a, b)| a == b).count())
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(counts.iter().sum::<usize>() as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub ce_loss: f64,
    pub kl_loss: f64,
    pub combined_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,ce_loss,kl_loss,combined_loss,train_acc,test_acc,seconds";

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// CSV with 6-decimal fixed point. With `zero_seconds` the wall-time
    /// column is written as zero so reruns are byte-identical.
    pub fn to_csv(&self, zero_seconds: bool) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            let seconds = if zero_seconds { 0.0 } else { r.seconds };
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.ce_loss, r.kl_loss, r.combined_loss, r.train_acc, r.test_acc, seconds
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(Error::Input("history CSV header mismatch".into()));
        }
        let records = lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                let bad = || Error::Input(format!("malformed history row {line:?}"));
                if f.len() != 7 {
                    return Err(bad());
                }
                let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
                Ok(EpochRecord {
                    epoch: f[0].parse().map_err(|_| bad())?,
                    ce_loss: num(1)?,
                    kl_loss: num(2)?,
                    combined_loss: num(3)?,
                    train_acc: num(4)?,
                    test_acc: num(5)?,
                    seconds: num(6)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }
}

/// Runs `cfg.epochs` shuffled sweeps of [`sgt_step`], evaluating on
/// `test_set` after each epoch. `on_epoch` sees every record as it is made.
pub fn train<T: Element>(
    model: &mut CnnModel<T>,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &SgtConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut mask_rng = rng::stream(cfg.seed, rng::MASK);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (mut ce, mut kl, mut combined, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for (batch, (x, y)) in batches(train_set, cfg.batch_size, cfg.seed, epoch as u64).enumerate() {
            let at = StepIndex {
                epoch: epoch + 1,
                batch,
            };
            let s = sgt_step(model, &x.cast::<T>(), &y, cfg, &mut mask_rng, at)?;
            let n = y.len() as f64;
            ce += s.ce * n;
            kl += s.kl * n;
            combined += s.combined * n;
            correct += s.correct;
        }
        let n = train_set.len() as f64;
        let test_acc = if test_set.is_empty() { 0.0 } else { evaluate(model, test_set)? };
        let record = EpochRecord {
            epoch: epoch + 1,
            ce_loss: ce / n,
            kl_loss: kl / n,
            combined_loss: combined / n,
            train_acc: correct as f64 / n,
            test_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.records.push(record);
    }
    Ok(history)
}

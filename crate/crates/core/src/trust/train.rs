//! Supervised training of the scorer with Adam on binary cross-entropy.
//!
//! Training runs in `f32`. Every random choice (initialization, subsampling,
//! batch order) comes from the `"training-init"` stream of `seed`, so a
//! given trace set and config always produce the same model.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::scorer::{valid_rows, Scorer, ScorerConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FEATURE_DIM};
use crate::metrics::Confusion;
use crate::sim::RngStreams;

/// Labeled sequences grouped by the run that produced them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TraceSet {
    pub sequences: Vec<FeatureSequence>,
    /// Ground truth: compromised with its attack active at the sequence's
    /// last interval.
    pub compromised: Vec<bool>,
    pub run_ids: Vec<u64>,
}

impl TraceSet {
    pub fn push(&mut self, seq: FeatureSequence, compromised: bool, run: u64) {
        self.sequences.push(seq);
        self.compromised.push(compromised);
        self.run_ids.push(run);
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn extend(&mut self, other: TraceSet) {
        self.sequences.extend(other.sequences);
        self.compromised.extend(other.compromised);
        self.run_ids.extend(other.run_ids);
    }

    pub fn runs(&self) -> BTreeSet<u64> {
        self.run_ids.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub scorer: ScorerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Fraction of runs (by id) held out for validation.
    pub val_fraction: f64,
    /// Cap on training sequences per class; 0 keeps everything.
    pub max_per_class: usize,
    /// Cap on validation sequences; 0 keeps everything.
    pub max_val: usize,
    /// Score below which a sequence is classified compromised.
    pub threshold: f64,
    /// Shift the head bias so scores reflect the class balance of the
    /// training runs rather than the balanced subsample.
    pub prior_correction: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scorer: ScorerConfig::default(),
            epochs: 4,
            batch_size: 32,
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            val_fraction: 0.2,
            max_per_class: 2000,
            max_val: 4000,
            threshold: 0.5,
            prior_correction: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.scorer.validate()?;
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch_size and lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_precision: Option<f64>,
    pub val_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_val: usize,
    pub train_runs: Vec<u64>,
    pub val_runs: Vec<u64>,
    pub epochs: Vec<EpochStats>,
    pub param_count: usize,
    /// Logit offset added to the head bias by prior correction.
    pub prior_shift: f64,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Adam state over a flat parameter vector.
struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.lr,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        self.t += 1;
        let (b1, b2) = (self.b1 as f32, self.b2 as f32);
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        let step = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= step * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

/// Mean and standard deviation of every feature over the valid rows of the
/// given sequences. Constant features get unit scale.
pub fn input_normalization(seqs: &[&FeatureSequence]) -> (Vec<f64>, Vec<f64>) {
    let mut sum = [0.0; FEATURE_DIM];
    let mut sq = [0.0; FEATURE_DIM];
    let mut n = 0usize;
    for s in seqs {
        for v in s.valid() {
            for j in 0..FEATURE_DIM {
                sum[j] += v.0[j];
                sq[j] += v.0[j] * v.0[j];
            }
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let scale = (0..FEATURE_DIM)
        .map(|j| {
            let var = (sq[j] / n - mean[j] * mean[j]).max(0.0);
            if var.sqrt() > 1e-9 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn evaluate(
    model: &Scorer<f32>,
    rows: &[Array2<f64>],
    idx: &[usize],
    targets: &[f32],
    threshold: f64,
) -> Result<(f64, Confusion)> {
    let mut loss = 0.0;
    let mut conf = Confusion::default();
    for chunk in idx.chunks(64) {
        let views: Vec<_> = chunk.iter().map(|&i| rows[i].view()).collect();
        let b = model.batch(&views)?;
        let y: Vec<f32> = chunk.iter().map(|&i| targets[i]).collect();
        loss += model.loss(&b, &y) as f64 * chunk.len() as f64;
        for (&i, s) in chunk.iter().zip(model.predict(&b)) {
            conf.record(s < threshold, targets[i] < 0.5);
        }
    }
    Ok((loss / idx.len().max(1) as f64, conf))
}

/// Copy of `model` with `shift` added to the output logit.
fn with_bias_shift(model: &Scorer<f32>, shift: f64) -> Scorer<f32> {
    let mut m = model.clone();
    if shift != 0.0 {
        let layout = m.layout();
        let at = layout.range(layout.tensor_count() - 1).start;
        m.params_mut()[at] += shift as f32;
    }
    m
}

/// Trains a fresh scorer on `traces`.
pub fn train(traces: &TraceSet, cfg: &TrainConfig) -> Result<(Scorer<f32>, TrainReport)> {
    cfg.validate()?;
    let n = traces.len();
    if traces.compromised.len() != n || traces.run_ids.len() != n {
        return Err(Error::InvalidArgument("trace set columns differ in length".into()));
    }
    let usable: Vec<usize> = (0..n).filter(|&i| traces.sequences[i].valid_len > 0).collect();
    let positives = usable.iter().filter(|&&i| traces.compromised[i]).count();
    if positives == 0 || positives == usable.len() {
        return Err(Error::SingleClass);
    }

    let runs: Vec<u64> = traces.runs().into_iter().collect();
    let n_val_runs = if runs.len() >= 2 {
        ((cfg.val_fraction * runs.len() as f64).round() as usize).clamp(1, runs.len() - 1)
    } else {
        0
    };
    let val_runs: BTreeSet<u64> = runs[runs.len() - n_val_runs..].iter().copied().collect();
    let (mut val_idx, train_all): (Vec<usize>, Vec<usize>) = usable
        .iter()
        .partition(|&&i| val_runs.contains(&traces.run_ids[i]));
    if cfg.val_fraction > 0.0 && n_val_runs > 0 {
        let has_both = |idx: &[usize]| {
            let p = idx.iter().filter(|&&i| traces.compromised[i]).count();
            p > 0 && p < idx.len()
        };
        if !has_both(&train_all) {
            return Err(Error::SingleClass);
        }
    }

    let mut rng = RngStreams::new(cfg.seed).stream("training-init");
    let mut model = Scorer::<f32>::init(cfg.scorer, &mut rng)?;

    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        train_all.iter().partition(|&&i| traces.compromised[i]);
    let natural_odds = neg.len() as f64 / pos.len().max(1) as f64;
    if cfg.max_per_class > 0 {
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        pos.truncate(cfg.max_per_class);
        neg.truncate(cfg.max_per_class);
    }
    let balanced_odds = neg.len() as f64 / pos.len().max(1) as f64;
    let prior_shift = if cfg.prior_correction && !pos.is_empty() {
        natural_odds.ln() - balanced_odds.ln()
    } else {
        0.0
    };
    let mut train_idx: Vec<usize> = pos.into_iter().chain(neg).collect();
    train_idx.sort_unstable();
    if cfg.max_val > 0 && val_idx.len() > cfg.max_val {
        val_idx.shuffle(&mut rng);
        val_idx.truncate(cfg.max_val);
        val_idx.sort_unstable();
    }

    let train_seqs: Vec<&FeatureSequence> = train_idx.iter().map(|&i| &traces.sequences[i]).collect();
    let (shift, scale) = input_normalization(&train_seqs);
    model.set_norm(
        shift.iter().map(|&x| x as f32).collect(),
        scale.iter().map(|&x| x as f32).collect(),
    )?;

    let rows: Vec<Array2<f64>> = traces
        .sequences
        .iter()
        .map(|s| {
            if s.valid_len > 0 {
                valid_rows(s)
            } else {
                Array2::zeros((0, FEATURE_DIM))
            }
        })
        .collect();
    let targets: Vec<f32> = traces
        .compromised
        .iter()
        .map(|&c| if c { 0.0 } else { 1.0 })
        .collect();

    let mut adam = Adam::new(model.param_count(), cfg);
    let mut grad = vec![0.0f32; model.param_count()];
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let views: Vec<_> = chunk.iter().map(|&i| rows[i].view()).collect();
            let b = model.batch(&views)?;
            let y: Vec<f32> = chunk.iter().map(|&i| targets[i]).collect();
            grad.fill(0.0);
            let loss = model.loss_and_grad(&b, &y, &mut grad) as f64;
            let gnorm = grad.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
            if !loss.is_finite() || !gnorm.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            if cfg.clip_norm > 0.0 && gnorm > cfg.clip_norm {
                let k = (cfg.clip_norm / gnorm) as f32;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            adam.step(model.params_mut(), &grad);
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / order.len().max(1) as f64;
        let mut stats = EpochStats {
            epoch,
            train_loss,
            val_loss: None,
            val_accuracy: None,
            val_precision: None,
            val_recall: None,
        };
        if !val_idx.is_empty() {
            let shifted = with_bias_shift(&model, prior_shift);
            let (vl, conf) = evaluate(&shifted, &rows, &val_idx, &targets, cfg.threshold)?;
            stats.val_loss = Some(vl);
            stats.val_accuracy = conf.accuracy();
            stats.val_precision = Some(conf.precision());
            stats.val_recall = Some(conf.recall());
        }
        eprintln!(
            "epoch {epoch}: train_loss={:.5} val_acc={:?} val_prec={:?} val_rec={:?}",
            stats.train_loss, stats.val_accuracy, stats.val_precision, stats.val_recall
        );
        epochs.push(stats);
    }

    let model = with_bias_shift(&model, prior_shift);
    let report = TrainReport {
        prior_shift,
        n_train: train_idx.len(),
        n_val: val_idx.len(),
        train_runs: runs[..runs.len() - n_val_runs].to_vec(),
        val_runs: val_runs.into_iter().collect(),
        epochs,
        param_count: model.param_count(),
    };
    Ok((model, report))
}

//! Two-stage synchronizer: a coarse network picks the time-dimension offset,
//! the window is cyclically shifted back by that many blocks, and a fine
//! network picks the delay-dimension offset. A one-stage network over the
//! whole offset range is provided for comparison.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{record_seed, Dataset};
use crate::error::{Error, Result};
use crate::nn::{
    build_sync_model, softmax, softmax_cross_entropy, AdamW, AdamWConfig, Head, ModelMeta, Module,
    Network, Tensor,
};
use crate::sync::{argmax, StageScores, SyncEstimate};

/// Windows per forward pass during evaluation.
pub const EVAL_BATCH: usize = 256;

/// Per-epoch learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate towards zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let t = (epoch - 1) as f64 / epochs as f64;
                0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamWConfig::default(),
            schedule: LrSchedule::Constant,
            batch_size: 256,
            epochs: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Short recipe for the toy frame: batch 64, 30 epochs, a higher rate
    /// with stronger decay, and cosine annealing.
    pub fn toy() -> Self {
        TrainConfig {
            optimizer: AdamWConfig {
                lr: 1e-2,
                weight_decay: 0.1,
                ..AdamWConfig::default()
            },
            schedule: LrSchedule::Cosine,
            batch_size: 64,
            epochs: 30,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch size and epochs must be positive".into(),
            ));
        }
        let o = &self.optimizer;
        let ok = o.lr > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0
            && o.weight_decay >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }

    fn stage_seed(&self, head: Head) -> u64 {
        record_seed(self.seed, head.code() as u8, 0)
    }

    pub fn meta(&self, m: usize, n: usize, head: Head) -> ModelMeta {
        ModelMeta {
            m,
            n,
            head,
            seed: self.seed,
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            epochs: self.epochs,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone)]
pub struct StageResult {
    /// Weights of the epoch with the highest test accuracy.
    pub best: Network<f32>,
    pub last: Network<f32>,
    pub best_epoch: usize,
    pub best_test_accuracy: f64,
    pub log: Vec<EpochLog>,
}

/// Labelled windows, each optionally rolled by a per-sample shift.
#[derive(Debug, Clone)]
pub struct Samples<'a> {
    mn: usize,
    windows: Vec<&'a [f32]>,
    shifts: Vec<usize>,
    labels: Vec<usize>,
}

impl<'a> Samples<'a> {
    pub fn new(mn: usize, windows: Vec<&'a [f32]>, labels: Vec<usize>) -> Result<Self> {
        if windows.len() != labels.len() {
            return Err(Error::shape(
                format!("{} labels", windows.len()),
                labels.len(),
            ));
        }
        if let Some(w) = windows.iter().find(|w| w.len() != 2 * mn) {
            return Err(Error::shape(2 * mn, w.len()));
        }
        let shifts = vec![0; windows.len()];
        Ok(Samples {
            mn,
            windows,
            shifts,
            labels,
        })
    }

    pub fn with_shifts(mut self, shifts: Vec<usize>) -> Result<Self> {
        if shifts.len() != self.windows.len() {
            return Err(Error::shape(self.windows.len(), shifts.len()));
        }
        self.shifts = shifts;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn batch(&self, idx: &[usize]) -> Result<Tensor<f32>> {
        let width = 2 * self.mn;
        let mut data = vec![0f32; idx.len() * width];
        for (dst, &i) in data.chunks_mut(width).zip(idx) {
            compensate_into(self.windows[i], self.shifts[i], self.mn, dst);
        }
        Tensor::from_vec(&[idx.len(), 2, self.mn], data)
    }
}

fn compensate_into(window: &[f32], shift: usize, mn: usize, out: &mut [f32]) {
    let s = shift % mn;
    for (half, dst) in window.chunks(mn).zip(out.chunks_mut(mn)) {
        dst[s..].copy_from_slice(&half[..mn - s]);
        dst[..s].copy_from_slice(&half[mn - s..]);
    }
}

/// Cyclic roll of a planar window: `out[k] = w[(k - shift) mod MN]` on both
/// the real and imaginary halves.
pub fn compensate(window: &[f32], shift: usize) -> Result<Vec<f32>> {
    if window.len() % 2 != 0 || window.is_empty() {
        return Err(Error::shape("even-length planar window", window.len()));
    }
    let mn = window.len() / 2;
    let mut out = vec![0f32; window.len()];
    compensate_into(window, shift, mn, &mut out);
    Ok(out)
}

/// Evaluation-mode logits for every sample.
pub fn logits_of(net: &Network<f32>, samples: &Samples) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    let all: Vec<usize> = (0..samples.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let y = net.infer(&samples.batch(chunk)?)?;
        let (_, k) = y.dims2()?;
        out.extend(y.data().chunks(k).map(|r| r.to_vec()));
    }
    Ok(out)
}

pub fn predict_classes(net: &Network<f32>, samples: &Samples) -> Result<Vec<usize>> {
    Ok(logits_of(net, samples)?.iter().map(|l| argmax(l)).collect())
}

fn accuracy_of(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

/// Mini-batch AdamW on softmax cross-entropy with a seeded shuffle per epoch.
pub fn train_stage(
    head: Head,
    m: usize,
    n: usize,
    train: &Samples,
    test: &Samples,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<StageResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let classes = head.classes(m, n);
    if let Some(&bad) = train
        .labels
        .iter()
        .chain(&test.labels)
        .find(|&&y| y >= classes)
    {
        return Err(Error::Training(format!(
            "label {bad} outside [0, {classes})"
        )));
    }
    let seed = cfg.stage_seed(head);
    let mut net = Network::<f32>::new(build_sync_model(m, n, head)?, seed)?;
    let mut opt = AdamW::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(Network<f32>, usize, f64)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        opt.config.lr = cfg.optimizer.lr * cfg.schedule.factor(epoch, cfg.epochs);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let x = train.batch(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            net.zero_grad();
            let logits = net.forward(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "{} loss diverged in epoch {epoch}",
                    head.name()
                )));
            }
            loss_sum += loss as f64 * idx.len() as f64;
            let k = classes;
            correct += logits
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            net.backward(&grad)?;
            opt.step(&mut net);
        }
        let test_accuracy = if test.is_empty() {
            0.0
        } else {
            accuracy_of(&predict_classes(&net, test)?, &test.labels)
        };
        let entry = EpochLog {
            stage: head.name().to_string(),
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            test_accuracy,
            elapsed_ms: start.elapsed().as_millis() as u64,
        };
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|b| test_accuracy > b.2) {
            best = Some((net.clone(), epoch, test_accuracy));
        }
    }
    let (best, best_epoch, best_test_accuracy) = best.expect("at least one epoch");
    Ok(StageResult {
        best,
        last: net,
        best_epoch,
        best_test_accuracy,
        log,
    })
}

fn windows<'a>(ds: &'a Dataset, idx: &[usize]) -> Vec<&'a [f32]> {
    idx.iter()
        .map(|&i| ds.records[i].window.as_slice())
        .collect()
}

fn labelled<'a>(ds: &'a Dataset, idx: &[usize], head: Head) -> Result<Samples<'a>> {
    let labels = idx
        .iter()
        .map(|&i| {
            let r = &ds.records[i];
            match head {
                Head::Coarse => r.theta_t as usize,
                Head::Fine => r.theta_d as usize,
                Head::OneStage => r.theta_wrapped as usize,
            }
        })
        .collect();
    Samples::new(ds.mn(), windows(ds, idx), labels)
}

/// Block shifts `M * theta_t_hat` that undo the coarse offset.
fn coarse_shifts(coarse: &Network<f32>, ds: &Dataset, idx: &[usize]) -> Result<Vec<usize>> {
    let plain = labelled(ds, idx, Head::Coarse)?;
    Ok(predict_classes(coarse, &plain)?
        .into_iter()
        .map(|t| t * ds.m)
        .collect())
}

pub fn train_coarse(
    ds: &Dataset,
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<StageResult> {
    let tr = labelled(ds, train, Head::Coarse)?;
    let te = labelled(ds, test, Head::Coarse)?;
    train_stage(Head::Coarse, ds.m, ds.n, &tr, &te, cfg, on_epoch)
}

/// Trains the fine stage on windows compensated by the coarse network's
/// own predictions, so it sees the same inputs it will see at inference.
pub fn train_fine(
    ds: &Dataset,
    train: &[usize],
    test: &[usize],
    coarse: &Network<f32>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<StageResult> {
    let tr = labelled(ds, train, Head::Fine)?.with_shifts(coarse_shifts(coarse, ds, train)?)?;
    let te = labelled(ds, test, Head::Fine)?.with_shifts(coarse_shifts(coarse, ds, test)?)?;
    train_stage(Head::Fine, ds.m, ds.n, &tr, &te, cfg, on_epoch)
}

/// Fine stage trained and evaluated with ground-truth coarse compensation.
/// Serves as an upper bound for [`train_fine`].
pub fn train_fine_oracle(
    ds: &Dataset,
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<StageResult> {
    let true_shifts = |idx: &[usize]| -> Vec<usize> {
        idx.iter()
            .map(|&i| ds.records[i].theta_t as usize * ds.m)
            .collect()
    };
    let tr = labelled(ds, train, Head::Fine)?.with_shifts(true_shifts(train))?;
    let te = labelled(ds, test, Head::Fine)?.with_shifts(true_shifts(test))?;
    train_stage(Head::Fine, ds.m, ds.n, &tr, &te, cfg, on_epoch)
}

pub fn train_one_stage(
    ds: &Dataset,
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<StageResult> {
    let tr = labelled(ds, train, Head::OneStage)?;
    let te = labelled(ds, test, Head::OneStage)?;
    train_stage(Head::OneStage, ds.m, ds.n, &tr, &te, cfg, on_epoch)
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub coarse: StageResult,
    pub fine: StageResult,
}

impl TwoStageResult {
    pub fn model(&self, m: usize) -> Result<TwoStageModel> {
        TwoStageModel::new(self.coarse.best.clone(), self.fine.best.clone(), m)
    }
}

pub fn train_two_stage(
    ds: &Dataset,
    train: &[usize],
    test: &[usize],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TwoStageResult> {
    let coarse = train_coarse(ds, train, test, cfg, on_epoch)?;
    let fine = train_fine(ds, train, test, &coarse.best, cfg, on_epoch)?;
    Ok(TwoStageResult { coarse, fine })
}

fn check_head(net: &Network<f32>, head: Head, m: usize) -> Result<usize> {
    let spec = net.spec();
    let mn = spec.in_len;
    if m == 0 || mn % m != 0 || build_sync_model(m, mn / m, head)? != *spec {
        return Err(Error::Config(format!(
            "network is not a {} model for M = {m}",
            head.name()
        )));
    }
    Ok(mn / m)
}

/// Trained coarse and fine networks used together.
#[derive(Debug, Clone)]
pub struct TwoStageModel {
    pub coarse: Network<f32>,
    pub fine: Network<f32>,
    m: usize,
    n: usize,
}

impl TwoStageModel {
    pub fn new(coarse: Network<f32>, fine: Network<f32>, m: usize) -> Result<Self> {
        let n = check_head(&coarse, Head::Coarse, m)?;
        if check_head(&fine, Head::Fine, m)? != n {
            return Err(Error::Config(
                "coarse and fine models disagree on M x N".into(),
            ));
        }
        Ok(TwoStageModel { coarse, fine, m, n })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn param_count(&self) -> u64 {
        self.coarse.param_count() + self.fine.param_count()
    }

    /// Estimates for planar `2 * MN` windows. Read-only, so safe to share.
    pub fn predict(&self, windows: &[&[f32]]) -> Result<Vec<SyncEstimate>> {
        let mn = self.m * self.n;
        let plain = Samples::new(mn, windows.to_vec(), vec![0; windows.len()])?;
        let coarse = logits_of(&self.coarse, &plain)?;
        let t_hat: Vec<usize> = coarse.iter().map(|l| argmax(l)).collect();
        let shifted = plain.with_shifts(t_hat.iter().map(|t| t * self.m).collect())?;
        let fine = logits_of(&self.fine, &shifted)?;
        let mut out = Vec::with_capacity(windows.len());
        for ((c, f), t) in coarse.into_iter().zip(fine).zip(t_hat) {
            let mut est = SyncEstimate::from_parts(t, argmax(&f), self.m);
            est.scores = Some(StageScores {
                coarse: probabilities(c)?,
                fine: probabilities(f)?,
            });
            out.push(est);
        }
        Ok(out)
    }
}

fn probabilities(logits: Vec<f32>) -> Result<Vec<f32>> {
    let k = logits.len();
    Ok(softmax(&Tensor::from_vec(&[1, k], logits)?)?.into_data())
}

/// Single network classifying the full offset.
#[derive(Debug, Clone)]
pub struct OneStageModel {
    pub net: Network<f32>,
    m: usize,
}

impl OneStageModel {
    pub fn new(net: Network<f32>, m: usize) -> Result<Self> {
        check_head(&net, Head::OneStage, m)?;
        Ok(OneStageModel { net, m })
    }

    pub fn param_count(&self) -> u64 {
        self.net.param_count()
    }

    pub fn predict(&self, windows: &[&[f32]]) -> Result<Vec<SyncEstimate>> {
        let mn = self.net.spec().in_len;
        let plain = Samples::new(mn, windows.to_vec(), vec![0; windows.len()])?;
        Ok(logits_of(&self.net, &plain)?
            .iter()
            .map(|l| SyncEstimate::from_offset(argmax(l), self.m))
            .collect())
    }
}

//! Epoch loop with a background batch producer.

use std::io::Write;
use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    augment, lr_schedule, scale_augment_schedule, train_step, Batch, OptimizerState, PatchPair,
    TrainConfig,
};
use crate::error::{config_err, Error, Result};
use crate::models::{Model, ModelKind};

/// Batches buffered ahead of the optimiser.
const QUEUE_DEPTH: usize = 4;

enum Message {
    Batch(Result<Batch>),
    EpochDone,
}

/// Background thread that shuffles, augments and stacks batches.
///
/// CRNet-A batches are drawn from one shuffled list holding every scale.
/// CRNet-B batches each come from a single scale chosen uniformly per
/// batch, cycling through that scale's reshuffled pairs. An epoch holds
/// `⌈pairs / batch⌉` batches either way.
pub struct BatchSource {
    rx: Receiver<Message>,
    handle: Option<JoinHandle<()>>,
}

impl BatchSource {
    pub fn spawn(pairs: Arc<Vec<PatchPair>>, cfg: &TrainConfig, kind: ModelKind) -> Result<Self> {
        if pairs.is_empty() {
            return Err(config_err!("no training pairs"));
        }
        let (tx, rx) = sync_channel(QUEUE_DEPTH);
        let batch_size = cfg.batch_size;
        let epochs = cfg.epochs;
        let do_augment = cfg.augment;
        let seed = cfg.seed;
        let handle = thread::spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba7c_4e5d);
            let per_epoch = pairs.len().div_ceil(batch_size);
            let mut by_scale: Vec<(usize, Vec<usize>, usize)> = Vec::new();
            for (i, p) in pairs.iter().enumerate() {
                match by_scale.iter_mut().find(|(s, _, _)| *s == p.scale) {
                    Some((_, idx, _)) => idx.push(i),
                    None => by_scale.push((p.scale, vec![i], usize::MAX)),
                }
            }
            by_scale.sort_by_key(|(s, _, _)| *s);
            let scales: Vec<usize> = by_scale.iter().map(|(s, _, _)| *s).collect();
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            for _ in 0..epochs {
                if kind == ModelKind::CrnetA {
                    order.shuffle(&mut rng);
                }
                for b in 0..per_epoch {
                    let picked: Vec<usize> = match kind {
                        ModelKind::CrnetA => {
                            order[b * batch_size..((b + 1) * batch_size).min(order.len())].to_vec()
                        }
                        ModelKind::CrnetB => {
                            let scale =
                                scale_augment_schedule(&scales, &mut rng).expect("scales nonempty");
                            let (_, idx, cursor) =
                                by_scale.iter_mut().find(|(s, _, _)| *s == scale).unwrap();
                            let mut out = Vec::with_capacity(batch_size);
                            while out.len() < batch_size.min(idx.len()) {
                                if *cursor >= idx.len() {
                                    idx.shuffle(&mut rng);
                                    *cursor = 0;
                                }
                                out.push(idx[*cursor]);
                                *cursor += 1;
                            }
                            out
                        }
                    };
                    let owned: Vec<PatchPair> = picked
                        .iter()
                        .map(|&i| {
                            if do_augment {
                                augment(&pairs[i], &mut rng)
                            } else {
                                pairs[i].clone()
                            }
                        })
                        .collect();
                    let refs: Vec<&PatchPair> = owned.iter().collect();
                    let batch = Batch::from_pairs(&refs, kind == ModelKind::CrnetB);
                    if tx.send(Message::Batch(batch)).is_err() {
                        return;
                    }
                }
                if tx.send(Message::EpochDone).is_err() {
                    return;
                }
            }
        });
        Ok(BatchSource {
            rx,
            handle: Some(handle),
        })
    }

    fn next(&self) -> Option<Message> {
        self.rx.recv().ok()
    }
}

impl Drop for BatchSource {
    fn drop(&mut self) {
        // Unblock a producer waiting on a full queue, then reap it.
        while self.rx.try_recv().is_ok() {}
        let (_tx, rx) = sync_channel(0);
        drop(std::mem::replace(&mut self.rx, rx));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    /// 1-based update count.
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    /// Mean loss of every completed (or the final partial) epoch.
    pub epoch_means: Vec<f64>,
    pub steps: usize,
}

/// Passed to the per-epoch callback.
pub struct EpochEnd<'a> {
    pub epoch: usize,
    pub mean_loss: f64,
    pub model: &'a Model,
    pub optimizer: &'a OptimizerState,
    /// True when `checkpoint_every` divides the epoch count or training is
    /// about to stop.
    pub checkpoint_due: bool,
    pub last: bool,
}

/// Train `model` on `pairs` for `cfg.epochs` epochs or `cfg.max_steps`
/// updates, whichever comes first. `on_epoch` runs after every epoch and
/// after the final (possibly partial) one.
pub fn train(
    model: &mut Model,
    pairs: Vec<PatchPair>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(EpochEnd<'_>) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if let Some(p) = pairs.iter().find(|p| !model.config.supports_scale(p.scale)) {
        return Err(config_err!("model does not support scale {}", p.scale));
    }
    let source = BatchSource::spawn(Arc::new(pairs), cfg, model.kind())?;
    let mut opt = OptimizerState::new(cfg.optimizer);
    let mut report = TrainReport {
        trace: Vec::new(),
        epoch_means: Vec::new(),
        steps: 0,
    };
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let mut epoch = 0;
    let mut sum = 0.0;
    let mut count = 0usize;
    while epoch < cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let msg = source
            .next()
            .ok_or_else(|| Error::Usage("batch producer stopped early".into()))?;
        let stop_after = match msg {
            Message::Batch(batch) => {
                let stats = train_step(model, &batch?, &mut opt, cfg, lr).map_err(|e| match e {
                    Error::Divergence(m) => Error::Divergence(format!(
                        "step {}, epoch {epoch}, lr {lr}: {m}",
                        report.steps + 1
                    )),
                    other => other,
                })?;
                report.steps += 1;
                report.trace.push(TraceRow {
                    step: report.steps,
                    epoch,
                    lr,
                    loss: stats.loss,
                });
                sum += stats.loss;
                count += 1;
                if report.steps < max_steps {
                    continue;
                }
                true
            }
            Message::EpochDone => false,
        };
        let last = stop_after || epoch + 1 == cfg.epochs;
        let mean = sum / count.max(1) as f64;
        report.epoch_means.push(mean);
        let due = last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0);
        on_epoch(EpochEnd {
            epoch,
            mean_loss: mean,
            model,
            optimizer: &opt,
            checkpoint_due: due,
            last,
        })?;
        if stop_after {
            break;
        }
        sum = 0.0;
        count = 0;
        epoch += 1;
    }
    Ok(report)
}

/// `step,epoch,lr,loss` rows with a header.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,epoch,lr,loss")?;
    for r in trace {
        writeln!(out, "{},{},{},{}", r.step, r.epoch, r.lr, r.loss)?;
    }
    out.flush()?;
    Ok(())
}

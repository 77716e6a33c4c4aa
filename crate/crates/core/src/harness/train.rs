use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{OptimizerConfig, OptimizerKind, TrainConfig};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::params::rng_for;
use crate::predictor::{argmax, Model};
use crate::synth::Clip;
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 0x5348;
const CLIP_STREAM: u64 = 0x434c;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Accuracy of the last-step logits seen during the epoch (dropout on).
    pub train_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
}

/// Learning rate in effect during 0-based `epoch`.
pub fn lr_at(opt: &OptimizerConfig, epoch: usize) -> f64 {
    let decays = opt.decay_epochs.iter().filter(|&&e| e <= epoch).count();
    opt.lr * opt.decay_rate.powi(decays as i32)
}

struct ClipResult {
    loss: f64,
    correct: bool,
    grads: Vec<Tensor>,
}

fn run_clip(model: &Model, clip: &Clip, seed: u64, epoch: usize, index: usize) -> Result<ClipResult> {
    let mut rng = rng_for(seed, &[CLIP_STREAM, epoch as u64, index as u64]);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let fwd = model.clip_forward(&mut tape, &bound, &clip.video, Some(&mut rng))?;
    let loss = tape.value(fwd.loss).item().expect("scalar loss");
    let last = *fwd.logits.last().expect("at least one step");
    let correct = argmax(tape.value(last).data()) == clip.video.label;
    let mut grads = tape.backward(fwd.loss)?.into_params();
    let grads = model
        .params
        .names()
        .map(|n| grads.remove(n).expect("every parameter has a gradient"))
        .collect();
    Ok(ClipResult { loss, correct, grads })
}

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-parameter optimizer state, indexed like `model.params`.
struct Optimizer {
    kind: OptimizerKind,
    momentum: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
}

impl Optimizer {
    fn new(cfg: &OptimizerConfig, model: &Model) -> Self {
        let zeros = || model.params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            kind: cfg.kind,
            momentum: cfg.momentum,
            first: zeros(),
            second: match cfg.kind {
                OptimizerKind::Sgd => Vec::new(),
                OptimizerKind::Adam => zeros(),
            },
            steps: 0,
        }
    }

    fn begin_step(&mut self) {
        self.steps = self.steps.saturating_add(1);
    }

    /// Applies the summed batch gradient `g` (times `scale`) to parameter `p`.
    fn update(&mut self, p: usize, lr: f64, g: &[f64], scale: f64, w: &mut [f64]) {
        if lr == 0.0 {
            return;
        }
        let mu = self.momentum;
        let v = &mut self.first[p];
        match self.kind {
            OptimizerKind::Sgd => {
                for ((vi, gi), wi) in v.iter_mut().zip(g).zip(w) {
                    *vi = mu * *vi + gi * scale;
                    *wi -= lr * *vi;
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - mu.powi(self.steps);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
                for (((mi, si), gi), wi) in v.iter_mut().zip(&mut self.second[p]).zip(g).zip(w) {
                    let gi = gi * scale;
                    *mi = mu * *mi + (1.0 - mu) * gi;
                    *si = ADAM_BETA2 * *si + (1.0 - ADAM_BETA2) * gi * gi;
                    *wi -= lr * (*mi / c1) / ((*si / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Minimises the per-step-averaged cross-entropy with SGD or Adam.
///
/// Clip gradients within a batch are computed in parallel and summed in
/// batch order, so results do not depend on the thread count.
pub fn train(cfg: &TrainConfig, clips: &[Clip], mut on_epoch: impl FnMut(&EpochStats)) -> Result<TrainOutcome> {
    cfg.check_runnable()?;
    if clips.is_empty() {
        return Err(Error::Input("no training clips".into()));
    }
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = Optimizer::new(&cfg.optimizer, &model);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(&cfg.optimizer, epoch);
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);

        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<ClipResult> = batch
                .par_iter()
                .map(|&i| run_clip(&model, &clips[i], cfg.seed, epoch, i))
                .collect::<Result<_>>()?;
            for (r, &i) in results.iter().zip(batch) {
                if !r.loss.is_finite() || r.grads.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        clip: clips[i].video.id.clone(),
                        loss: r.loss,
                    });
                }
            }
            let scale = 1.0 / batch.len() as f64;
            opt.begin_step();
            for (p, (_, param)) in model.params.iter_mut().enumerate() {
                let mut g = vec![0.0; param.len()];
                for r in &results {
                    for (a, b) in g.iter_mut().zip(r.grads[p].data()) {
                        *a += b;
                    }
                }
                opt.update(p, lr, &g, scale, param.data_mut());
            }
            loss_sum += results.iter().map(|r| r.loss).sum::<f64>();
            correct += results.iter().filter(|r| r.correct).count();
        }

        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / clips.len() as f64,
            lr,
            train_acc: correct as f64 / clips.len() as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_schedule() {
        let opt = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 5e-4,
            momentum: 0.9,
            decay_rate: 0.1,
            decay_epochs: vec![60, 100],
        };
        assert_eq!(lr_at(&opt, 0), 5e-4);
        assert_eq!(lr_at(&opt, 59), 5e-4);
        assert!((lr_at(&opt, 60) - 5e-5).abs() < 1e-20);
        assert!((lr_at(&opt, 99) - 5e-5).abs() < 1e-20);
        assert!((lr_at(&opt, 100) - 5e-6).abs() < 1e-21);
    }
}

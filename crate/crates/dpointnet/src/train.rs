//! Toy training loop: gradient descent of the detector on synthetic scenes.

use serde::{Deserialize, Serialize};

use crate::cloud::{sample_n_points, SyntheticScene};
use crate::error::{Error, Result};
use crate::heads::{assign_targets, ClsLoss, Detector, LossReport};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    /// Passes over the scene set; steps = epochs * num_scenes.
    pub epochs: usize,
    pub num_scenes: usize,
    /// Input cloud is resampled to this many points before each forward.
    pub num_points: usize,
    pub lr: f64,
    pub aux_heads: bool,
    /// 1-based tap of the inference head; defaults to the last layer.
    pub head_tap: Option<usize>,
    /// 1-based taps of auxiliary heads; default is the two below the top.
    pub aux_taps: Option<Vec<usize>>,
    pub cls_loss: ClsLoss,
    pub smooth_l1_beta: f64,
    /// Scenes held out of training for the sweep proxy metric.
    pub holdout_scenes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 4,
            num_scenes: 50,
            num_points: 16384,
            lr: 0.01,
            aux_heads: true,
            head_tap: None,
            aux_taps: None,
            cls_loss: ClsLoss::default(),
            smooth_l1_beta: 1.0,
            holdout_scenes: 8,
        }
    }
}

impl TrainConfig {
    /// Desk-scale counterpart of the full-size defaults.
    pub fn toy() -> Self {
        TrainConfig { num_points: 2048, lr: 1e-3, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.num_scenes == 0 {
            return Err(Error::Config("training needs at least one epoch and one scene".into()));
        }
        if self.lr <= 0.0 || self.smooth_l1_beta <= 0.0 {
            return Err(Error::Config("learning rate and smooth-L1 beta must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with the usual bias-corrected moment estimates.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, param_sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Apply one update from accumulated gradients, replacing each
    /// parameter tensor with a fresh leaf (clearing its gradient).
    pub fn step(&mut self, params: Vec<&mut Tensor>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Config("optimizer state does not match parameter count".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, slot) in params.into_iter().enumerate() {
            let grad = match slot.grad() {
                Some(g) => g,
                None => continue, // parameter unused this step
            };
            let mut data = slot.data().to_vec();
            for (j, g) in grad.iter().enumerate() {
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
                let mh = self.m[i][j] / bc1;
                let vh = self.v[i][j] / bc2;
                data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            *slot = Tensor::param(slot.shape(), data)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub scene: usize,
    pub report: LossReport,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps: Vec<StepRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl TrainOutcome {
    pub fn converged(&self) -> bool {
        self.final_loss < self.initial_loss
    }
}

/// Diagnostic payload written when a step produces a non-finite loss.
#[derive(Debug, Serialize)]
pub struct NanDump {
    pub step: usize,
    pub scene: usize,
    pub message: String,
}

/// Cycle scenes, one optimization step per scene visit. Deterministic under
/// a fixed seed: resampling of scene i at step s uses its own sub-stream.
pub fn train(
    detector: &mut Detector,
    scenes: &[SyntheticScene],
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Empty("no training scenes".into()));
    }
    let total_steps = tcfg.epochs * scenes.len();
    let mut optimizer = {
        let sizes: Vec<usize> = detector.params_mut().iter().map(|t| t.numel()).collect();
        Adam::new(tcfg.lr, &sizes)
    };
    let mut steps = Vec::with_capacity(total_steps);
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    for step in 0..total_steps {
        let scene_idx = step % scenes.len();
        let scene = &scenes[scene_idx];
        let cloud = if scene.cloud.len() > tcfg.num_points {
            sample_n_points(
                &scene.cloud,
                tcfg.num_points,
                &mut rng::indexed(seed, "train_resample", step as u64),
            )?
        } else {
            scene.cloud.clone()
        };
        let fwd = detector.backbone_forward(&cloud, seed)?;
        let targets = assign_targets(scene, &fwd.sg.seeds);
        let (loss, report) = detector.losses(&fwd.taps, &targets, tcfg.cls_loss, tcfg.smooth_l1_beta)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {step} on scene {scene_idx}"
            )));
        }
        if step == 0 {
            initial_loss = report.total;
        }
        final_loss = report.total;
        loss.backward()?;
        optimizer.step(detector.params_mut())?;
        steps.push(StepRecord { step, scene: scene_idx, report });
    }
    Ok(TrainOutcome { steps, initial_loss, final_loss })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Foreground/background accuracy of the inference head at p > 0.5.
    pub fg_accuracy: f64,
    /// Mean |predicted - target| over residual channels of positive seeds.
    pub mean_reg_error: f64,
    pub num_seeds: usize,
    pub num_positive: usize,
}

/// Held-out proxy metric for sweeps: classification accuracy plus mean
/// regression error of the inference head.
pub fn evaluate(detector: &Detector, scenes: &[SyntheticScene], seed: u64) -> Result<EvalMetrics> {
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut reg_err = 0.0;
    let mut reg_count = 0usize;
    let mut num_positive = 0usize;
    for scene in scenes {
        let (fwd, logits, residuals) = detector.forward_inference(&scene.cloud, seed)?;
        let targets = assign_targets(scene, &fwd.sg.seeds);
        for (i, &label) in targets.labels.iter().enumerate() {
            let p = 1.0 / (1.0 + (-logits.data()[i]).exp());
            let predicted = if p > 0.5 { 1.0 } else { 0.0 };
            if predicted == label {
                correct += 1;
            }
            total += 1;
            if label == 1.0 {
                num_positive += 1;
                for c in 0..crate::heads::NUM_RESIDUALS {
                    let pred = residuals.data()[i * crate::heads::NUM_RESIDUALS + c];
                    reg_err += (pred - targets.residuals[i][c]).abs();
                    reg_count += 1;
                }
            }
        }
    }
    Ok(EvalMetrics {
        fg_accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        mean_reg_error: if reg_count > 0 { reg_err / reg_count as f64 } else { 0.0 },
        num_seeds: total,
        num_positive,
    })
}

//! Per-seed detection heads and the training loss suite.
//!
//! Every head has the same structure: a shared trunk MLP on a tap, a
//! classification branch producing foreground logits, and a regression
//! branch producing 7 box residuals (x, y, z, l, h, w, yaw). The head on
//! the last tap is the inference head; heads on earlier taps are
//! auxiliaries that only contribute loss terms during training, so
//! detaching them cannot change inference output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{Box3, SyntheticScene};
use crate::error::{Error, Result};
use crate::operator::{forward, DpnConfig, DpnForward, DpnParams};
use crate::rng;
use crate::sampling::SeedSet;
use crate::tensor::{LinearLayer, Mlp, Tensor};

pub const NUM_RESIDUALS: usize = 7;

/// Numerical floor applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

// ── losses ───────────────────────────────────────────────────────────

/// Focal loss, mean over all entries. `alpha` of `None` weighs both
/// classes equally (the gamma=0, alpha-less form is plain BCE).
pub fn focal_loss(logits: &Tensor, labels: &[f64], alpha: Option<f64>, gamma: f64) -> Result<Tensor> {
    if logits.numel() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logits vs {} labels",
            logits.numel(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Config("labels must be 0 or 1".into()));
    }
    let shape = logits.shape().to_vec();
    let y = Tensor::leaf(&shape, labels.to_vec())?;
    // p_t = p*y + (1-p)*(1-y) = p*(2y-1) + (1-y)
    let p = logits.sigmoid()?;
    let two_y_minus_one = y.mul_scalar(2.0)?.add_scalar(-1.0)?;
    let one_minus_y = y.mul_scalar(-1.0)?.add_scalar(1.0)?;
    let pt = p.mul(&two_y_minus_one)?.add(&one_minus_y)?;
    let log_pt = pt.clamp_min(PROB_FLOOR)?.ln()?;
    let focus = pt.mul_scalar(-1.0)?.add_scalar(1.0)?.pow_const(gamma)?;
    let weighted = match alpha {
        Some(a) => {
            let alpha_t: Vec<f64> = labels.iter().map(|&y| if y == 1.0 { a } else { 1.0 - a }).collect();
            let at = Tensor::leaf(&shape, alpha_t)?;
            focus.mul(&log_pt)?.mul(&at)?
        }
        None => focus.mul(&log_pt)?,
    };
    weighted.mul_scalar(-1.0)?.mean()
}

/// Sigmoid binary cross entropy, mean over all entries.
pub fn bce_loss(logits: &Tensor, labels: &[f64]) -> Result<Tensor> {
    focal_loss(logits, labels, None, 0.0)
}

/// Smooth-L1 over the residual channels: elementwise 0.5 d^2/beta below
/// beta, |d| - 0.5 beta above; summed over channels and averaged over
/// positive seeds. With no positives the term is defined as zero.
pub fn smooth_l1_loss(
    pred: &Tensor,
    targets: &[[f64; NUM_RESIDUALS]],
    positive: &[f64],
    beta: f64,
) -> Result<Tensor> {
    let (m, c) = (pred.rows()?, pred.cols()?);
    if c != NUM_RESIDUALS {
        return Err(Error::Shape(format!("expected {NUM_RESIDUALS} residual channels, got {c}")));
    }
    if targets.len() != m || positive.len() != m {
        return Err(Error::Shape(format!(
            "{m} predictions vs {} targets / {} mask entries",
            targets.len(),
            positive.len()
        )));
    }
    let num_positive = positive.iter().filter(|&&p| p == 1.0).count();
    if num_positive == 0 {
        return Ok(Tensor::scalar(0.0));
    }
    let flat_targets: Vec<f64> = targets.iter().flatten().copied().collect();
    let target = Tensor::leaf(&[m, NUM_RESIDUALS], flat_targets)?;
    let mask_rows: Vec<f64> = positive
        .iter()
        .flat_map(|&p| std::iter::repeat(p).take(NUM_RESIDUALS))
        .collect();
    let mask = Tensor::leaf(&[m, NUM_RESIDUALS], mask_rows)?;
    pred.sub(&target)?
        .huber(beta)?
        .mul(&mask)?
        .sum()?
        .mul_scalar(1.0 / num_positive as f64)
}

/// Which classification loss a head uses.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ClsLoss {
    Focal { alpha: f64, gamma: f64 },
    Bce,
}

impl Default for ClsLoss {
    fn default() -> Self {
        ClsLoss::Focal { alpha: 0.25, gamma: 2.0 }
    }
}

impl ClsLoss {
    pub fn apply(&self, logits: &Tensor, labels: &[f64]) -> Result<Tensor> {
        match *self {
            ClsLoss::Focal { alpha, gamma } => focal_loss(logits, labels, Some(alpha), gamma),
            ClsLoss::Bce => bce_loss(logits, labels),
        }
    }
}

/// Decomposed loss values for one head.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HeadLoss {
    pub classification: f64,
    pub regression: f64,
    pub total: f64,
}

/// Per-head decomposition plus the plain (unweighted) aggregate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossReport {
    pub main: HeadLoss,
    pub aux: Vec<HeadLoss>,
    pub total: f64,
}

/// Unweighted sum of main and auxiliary head losses.
pub fn total_loss(main: &HeadLoss, aux: &[HeadLoss]) -> f64 {
    main.total + aux.iter().map(|h| h.total).sum::<f64>()
}

// ── target assignment ────────────────────────────────────────────────

/// Fixed mean-size prior for the synthetic car class (l, h, w meters).
pub const ANCHOR_SIZE: [f64; 3] = [3.9, 1.56, 1.6];

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r -= std::f64::consts::TAU;
    }
    r
}

#[derive(Clone, Debug)]
pub struct TargetSet {
    /// 1.0 for seeds inside a ground-truth box, else 0.0.
    pub labels: Vec<f64>,
    /// (dx, dy, dz, log l/h/w ratios vs the anchor, wrapped yaw); zero for
    /// background seeds, which the regression loss masks out.
    pub residuals: Vec<[f64; NUM_RESIDUALS]>,
    pub num_positive: usize,
}

fn residuals_for(seed: [f64; 3], b: &Box3, anchor: [f64; 3]) -> [f64; NUM_RESIDUALS] {
    [
        b.center[0] - seed[0],
        b.center[1] - seed[1],
        b.center[2] - seed[2],
        (b.size[0] / anchor[0]).ln(),
        (b.size[1] / anchor[1]).ln(),
        (b.size[2] / anchor[2]).ln(),
        wrap_angle(b.yaw),
    ]
}

/// A seed is foreground iff it lies inside a ground-truth box; ambiguous
/// seeds take the box with the nearest center.
pub fn assign_targets(scene: &SyntheticScene, seeds: &SeedSet) -> TargetSet {
    let mut labels = Vec::with_capacity(seeds.len());
    let mut residuals = Vec::with_capacity(seeds.len());
    let mut num_positive = 0;
    for &p in &seeds.xyz {
        let mut best: Option<(f64, &Box3)> = None;
        for b in &scene.boxes {
            if b.contains(p) {
                let d2 = (b.center[0] - p[0]).powi(2)
                    + (b.center[1] - p[1]).powi(2)
                    + (b.center[2] - p[2]).powi(2);
                if best.map_or(true, |(bd, _)| d2 < bd) {
                    best = Some((d2, b));
                }
            }
        }
        match best {
            Some((_, b)) => {
                labels.push(1.0);
                residuals.push(residuals_for(p, b, ANCHOR_SIZE));
                num_positive += 1;
            }
            None => {
                labels.push(0.0);
                residuals.push([0.0; NUM_RESIDUALS]);
            }
        }
    }
    TargetSet { labels, residuals, num_positive }
}

// ── heads ────────────────────────────────────────────────────────────

/// Shared head structure: trunk hidden widths and class count. Heads on
/// different taps differ only in their input width.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HeadConfig {
    pub trunk_widths: Vec<usize>,
    pub num_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { trunk_widths: vec![32], num_classes: 1 }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_widths.is_empty() || self.trunk_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("head trunk widths must be nonempty and positive".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("head needs at least one class".into()));
        }
        Ok(())
    }
}

/// Trunk MLP plus classification and regression branches. ReLU on trunk
/// layers, identity on the branch outputs.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub trunk: Mlp,
    pub cls: LinearLayer,
    pub reg: LinearLayer,
}

impl HeadParams {
    pub fn init(tap_width: usize, cfg: &HeadConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut widths = vec![tap_width];
        widths.extend_from_slice(&cfg.trunk_widths);
        let trunk = Mlp::init(&widths, false, rng)?; // all ReLU
        let hidden = *widths.last().unwrap();
        let cls = LinearLayer::init(hidden, cfg.num_classes, false, rng);
        let reg = LinearLayer::init(hidden, NUM_RESIDUALS, false, rng);
        Ok(HeadParams { trunk, cls, reg })
    }

    /// tap (MxC) -> (logits MxNumClasses, residuals Mx7).
    pub fn forward(&self, tap: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.trunk.forward(tap)?;
        Ok((self.cls.apply(&h)?, self.reg.apply(&h)?))
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk.layers.iter().enumerate() {
            out.push((format!("{prefix}/trunk{i}/weight"), &l.weight));
            out.push((format!("{prefix}/trunk{i}/bias"), &l.bias));
        }
        out.push((format!("{prefix}/cls/weight"), &self.cls.weight));
        out.push((format!("{prefix}/cls/bias"), &self.cls.bias));
        out.push((format!("{prefix}/reg/weight"), &self.reg.weight));
        out.push((format!("{prefix}/reg/bias"), &self.reg.bias));
        out
    }
}

/// Backbone plus inference head plus optional train-only auxiliary heads.
#[derive(Clone, Debug)]
pub struct Detector {
    pub cfg: DpnConfig,
    pub head_cfg: HeadConfig,
    pub backbone: DpnParams,
    /// 1-based tap the inference head reads.
    pub head_tap: usize,
    pub main_head: HeadParams,
    /// (1-based tap, params) for training-only heads.
    pub aux_heads: Vec<(usize, HeadParams)>,
}

/// Default auxiliary placement: the two taps directly below the inference
/// head (one for two-layer stacks, none for a single layer).
pub fn default_aux_taps(num_layers: usize, head_tap: usize) -> Vec<usize> {
    (head_tap.saturating_sub(2)..head_tap)
        .filter(|&t| t >= 1 && t <= num_layers)
        .collect()
}

impl Detector {
    /// Parameter draws come from per-tap named streams, so attaching or
    /// detaching auxiliary heads never shifts backbone or main-head init.
    pub fn init(
        cfg: DpnConfig,
        head_cfg: HeadConfig,
        feat_dim: usize,
        head_tap: usize,
        aux_taps: &[usize],
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if head_tap == 0 || head_tap > cfg.num_fa_layers {
            return Err(Error::Config(format!(
                "head tap {head_tap} out of range for {} layers",
                cfg.num_fa_layers
            )));
        }
        for &t in aux_taps {
            if t == 0 || t > cfg.num_fa_layers || t == head_tap {
                return Err(Error::Config(format!("auxiliary tap {t} invalid")));
            }
        }
        let backbone = DpnParams::init(&cfg, feat_dim, &mut rng::named(seed, "backbone"))?;
        let main_head = HeadParams::init(
            cfg.mlp_widths[head_tap - 1],
            &head_cfg,
            &mut rng::named(seed, &format!("head/tap{head_tap}")),
        )?;
        let mut aux_heads = Vec::new();
        for &t in aux_taps {
            aux_heads.push((
                t,
                HeadParams::init(
                    cfg.mlp_widths[t - 1],
                    &head_cfg,
                    &mut rng::named(seed, &format!("head/tap{t}")),
                )?,
            ));
        }
        Ok(Detector { cfg, head_cfg, backbone, head_tap, main_head, aux_heads })
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.backbone.named_params();
        out.extend(self.main_head.named_params(&format!("head/tap{}", self.head_tap)));
        for (t, h) in &self.aux_heads {
            out.extend(h.named_params(&format!("head/tap{t}")));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        fn push_head<'a>(h: &'a mut HeadParams, out: &mut Vec<&'a mut Tensor>) {
            for l in &mut h.trunk.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
            out.push(&mut h.cls.weight);
            out.push(&mut h.cls.bias);
            out.push(&mut h.reg.weight);
            out.push(&mut h.reg.bias);
        }
        let mut out = Vec::new();
        for l in &mut self.backbone.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        push_head(&mut self.main_head, &mut out);
        for (_, h) in &mut self.aux_heads {
            push_head(h, &mut out);
        }
        out
    }

    pub fn backbone_forward(&self, cloud: &crate::cloud::PointCloud, seed: u64) -> Result<DpnForward> {
        forward(cloud, &self.cfg, &self.backbone, seed)
    }

    /// Inference: only the head on `head_tap` runs; auxiliaries are never
    /// touched on this path.
    pub fn forward_inference(
        &self,
        cloud: &crate::cloud::PointCloud,
        seed: u64,
    ) -> Result<(DpnForward, Tensor, Tensor)> {
        let fwd = self.backbone_forward(cloud, seed)?;
        let (logits, residuals) = self.main_head.forward(&fwd.taps[self.head_tap - 1])?;
        Ok((fwd, logits, residuals))
    }

    /// Training losses for one scene's taps: main head plus every
    /// auxiliary, combined by plain sum.
    pub fn losses(
        &self,
        taps: &[Tensor],
        targets: &TargetSet,
        cls: ClsLoss,
        smooth_l1_beta: f64,
    ) -> Result<(Tensor, LossReport)> {
        let head_terms = |head: &HeadParams, tap: &Tensor| -> Result<(Tensor, HeadLoss)> {
            let (logits, residuals) = head.forward(tap)?;
            let c = cls.apply(&logits, &targets.labels)?;
            let r = smooth_l1_loss(&residuals, &targets.residuals, &targets.labels, smooth_l1_beta)?;
            let tot = c.add(&r)?;
            let values = HeadLoss {
                classification: c.item()?,
                regression: r.item()?,
                total: tot.item()?,
            };
            Ok((tot, values))
        };
        let (mut loss, main) = head_terms(&self.main_head, &taps[self.head_tap - 1])?;
        let mut aux = Vec::new();
        for (t, h) in &self.aux_heads {
            let (l, values) = head_terms(h, &taps[t - 1])?;
            loss = loss.add(&l)?;
            aux.push(values);
        }
        let report = LossReport { total: total_loss(&main, &aux), main, aux };
        Ok((loss, report))
    }
}

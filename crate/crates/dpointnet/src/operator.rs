//! The density-oriented operator: one sampling-and-grouping pass feeding a
//! stack of fusion layers, plus the scale-oriented per-level baseline it is
//! benchmarked against.
//!
//! Structure of a forward pass:
//!   1. `sg_layer` runs farthest point sampling once and ball query once,
//!      then splits each seed's K neighbor slots into L contiguous groups.
//!   2. L fusion layers run, one per group. Layer l transforms the group it
//!      consumes, max-pools it per seed into that layer's "tap" (the per-seed
//!      feature a detection head can read), and fuses the tap into the
//!      not-yet-consumed groups according to the configured scheme.
//!
//! Every neighbor any layer fuses comes from the single ball query, so all
//! of them lie within the one configured radius (fixed receptive field),
//! and the tap at layer l draws on the slots of groups 0..=l — point
//! density grows layer by layer while the radius stays put.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng;
use crate::sampling::{ball_query, farthest_point_sampling, NeighborList, SeedSet};
use crate::tensor::{LinearLayer, Tensor};

/// How a layer's pooled feature is fused into the groups that follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Pooled feature joins the next group as an extra row; every remaining
    /// group is re-transformed by each layer's MLP.
    Append,
    /// Later groups carry raw relative coordinates only; the pooled feature
    /// is concatenated channelwise onto the next group's coordinates.
    CoordConcat,
    /// Pooled feature is concatenated channelwise onto every remaining
    /// group; the consuming layer's MLP squeezes the widened rows back down.
    FeatConcat,
}

impl Scheme {
    pub fn all() -> [Scheme; 3] {
        [Scheme::Append, Scheme::CoordConcat, Scheme::FeatConcat]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Append => "append",
            Scheme::CoordConcat => "coordconcat",
            Scheme::FeatConcat => "featconcat",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "append" => Ok(Scheme::Append),
            "coordconcat" => Ok(Scheme::CoordConcat),
            "featconcat" => Ok(Scheme::FeatConcat),
            other => Err(Error::Config(format!(
                "unknown scheme '{other}' (expected append|coordconcat|featconcat)"
            ))),
        }
    }
}

/// Operator configuration. One radius field serves every layer: a fixed
/// receptive field is enforced by construction, not by convention.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DpnConfig {
    pub num_seeds: usize,
    pub radius_m: f64,
    pub k_neighbors: usize,
    pub num_fa_layers: usize,
    pub scheme: Scheme,
    /// Per-layer slot counts; must sum to `k_neighbors`.
    pub group_sizes: Vec<usize>,
    /// Per-layer output channel widths.
    pub mlp_widths: Vec<usize>,
    pub rng_seed: u64,
    /// Pick the farthest-point start at random instead of index 0.
    #[serde(default)]
    pub fps_random_start: bool,
}

/// Contiguous equal split of `k` slots into `l` groups, remainder to the
/// earliest groups.
pub fn equal_group_sizes(k: usize, l: usize) -> Vec<usize> {
    let base = k / l;
    let rem = k % l;
    (0..l).map(|i| base + usize::from(i < rem)).collect()
}

impl Default for DpnConfig {
    /// Full-scale reference setup: 4096 seeds, 3.0 m radius, 24 neighbors
    /// split across 4 layers.
    fn default() -> Self {
        DpnConfig {
            num_seeds: 4096,
            radius_m: 3.0,
            k_neighbors: 24,
            num_fa_layers: 4,
            scheme: Scheme::FeatConcat,
            group_sizes: equal_group_sizes(24, 4),
            mlp_widths: vec![32, 64, 128, 256],
            rng_seed: 7,
            fps_random_start: false,
        }
    }
}

impl DpnConfig {
    /// Desk-scale setup for fast experiments and tests.
    pub fn toy() -> Self {
        DpnConfig {
            num_seeds: 128,
            radius_m: 3.0,
            k_neighbors: 12,
            num_fa_layers: 3,
            scheme: Scheme::FeatConcat,
            group_sizes: equal_group_sizes(12, 3),
            mlp_widths: vec![16, 24, 32],
            rng_seed: 7,
            fps_random_start: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_seeds == 0 {
            return Err(Error::Config("num_seeds must be at least 1".into()));
        }
        if self.radius_m <= 0.0 {
            return Err(Error::Config(format!("radius_m must be positive, got {}", self.radius_m)));
        }
        if self.k_neighbors == 0 || self.num_fa_layers == 0 {
            return Err(Error::Config("k_neighbors and num_fa_layers must be at least 1".into()));
        }
        if self.group_sizes.len() != self.num_fa_layers {
            return Err(Error::Config(format!(
                "{} group sizes for {} layers",
                self.group_sizes.len(),
                self.num_fa_layers
            )));
        }
        if self.group_sizes.iter().any(|&g| g == 0) {
            return Err(Error::Config("every group needs at least one slot".into()));
        }
        let sum: usize = self.group_sizes.iter().sum();
        if sum != self.k_neighbors {
            return Err(Error::Config(format!(
                "group sizes sum to {sum}, but k_neighbors is {}",
                self.k_neighbors
            )));
        }
        if self.mlp_widths.len() != self.num_fa_layers {
            return Err(Error::Config(format!(
                "{} mlp widths for {} layers",
                self.mlp_widths.len(),
                self.num_fa_layers
            )));
        }
        if self.mlp_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("mlp widths must be positive".into()));
        }
        Ok(())
    }

    /// Input width of each layer's MLP given the raw per-point feature
    /// count (rows start as [relative xyz ++ input features]).
    pub fn layer_input_widths(&self, feat_dim: usize) -> Vec<usize> {
        let w0 = 3 + feat_dim;
        (0..self.num_fa_layers)
            .map(|l| match self.scheme {
                Scheme::Append => {
                    if l == 0 {
                        w0
                    } else {
                        self.mlp_widths[l - 1]
                    }
                }
                Scheme::CoordConcat => {
                    if l == 0 {
                        w0
                    } else {
                        3 + self.mlp_widths[l - 1]
                    }
                }
                Scheme::FeatConcat => w0 + self.mlp_widths[..l].iter().sum::<usize>(),
            })
            .collect()
    }
}

/// Trainable state of the operator: one affine+ReLU layer per fusion layer.
#[derive(Clone, Debug)]
pub struct DpnParams {
    pub layers: Vec<LinearLayer>,
}

impl DpnParams {
    pub fn init(cfg: &DpnConfig, feat_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let ins = cfg.layer_input_widths(feat_dim);
        let layers = ins
            .iter()
            .zip(&cfg.mlp_widths)
            .map(|(&c_in, &c_out)| LinearLayer::init(c_in, c_out, true, rng))
            .collect();
        Ok(DpnParams { layers })
    }

    pub fn validate_against(&self, cfg: &DpnConfig, feat_dim: usize) -> Result<()> {
        let ins = cfg.layer_input_widths(feat_dim);
        if self.layers.len() != cfg.num_fa_layers {
            return Err(Error::Config(format!(
                "{} parameter layers for {} fusion layers",
                self.layers.len(),
                cfg.num_fa_layers
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.c_in() != ins[l] || layer.c_out() != cfg.mlp_widths[l] {
                return Err(Error::Config(format!(
                    "layer {l} maps {}->{}, config needs {}->{}",
                    layer.c_in(),
                    layer.c_out(),
                    ins[l],
                    cfg.mlp_widths[l]
                )));
            }
        }
        Ok(())
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("backbone/layer{i}/weight"), &l.weight));
            out.push((format!("backbone/layer{i}/bias"), &l.bias));
        }
        out
    }
}

// ── sampling and grouping ────────────────────────────────────────────

/// Output of the single sampling pass: seeds, the full K-slot neighbor
/// table, per-slot relative coordinates and raw features, and the slot
/// partition that the fusion layers will consume group by group.
#[derive(Clone, Debug)]
pub struct SgResult {
    pub seeds: SeedSet,
    pub neighbors: NeighborList,
    pub group_sizes: Vec<usize>,
    /// Seed-major: slot j of seed s is at s * k + j.
    pub rel_xyz: Vec<[f64; 3]>,
    pub feats: Vec<f64>,
    pub feat_dim: usize,
}

impl SgResult {
    pub fn num_seeds(&self) -> usize {
        self.seeds.len()
    }

    pub fn k(&self) -> usize {
        self.neighbors.k
    }

    /// Slot range of group `g` within each seed's K slots.
    pub fn group_slots(&self, g: usize) -> std::ops::Range<usize> {
        let start: usize = self.group_sizes[..g].iter().sum();
        start..start + self.group_sizes[g]
    }

    /// Largest seed-to-neighbor distance over every slot of every group.
    /// All fused points come from the one ball query, so this bounds the
    /// receptive field of every layer at once.
    pub fn max_neighbor_distance(&self) -> f64 {
        self.rel_xyz
            .iter()
            .map(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Distinct source points feeding the tap of each layer, per seed:
    /// the union of slots of groups 0..=l. With no duplicated slots this
    /// equals the cumulative group sizes.
    pub fn distinct_fused_counts(&self) -> Vec<Vec<usize>> {
        let m = self.num_seeds();
        let l = self.group_sizes.len();
        let mut out = vec![vec![0usize; m]; l];
        for s in 0..m {
            let mut seen = std::collections::HashSet::new();
            for g in 0..l {
                for j in self.group_slots(g) {
                    seen.insert(self.neighbors.neighbors(s)[j]);
                }
                out[g][s] = seen.len();
            }
        }
        out
    }

    /// Rows [relative xyz ++ input features] for group `g`, seed-major.
    /// With `coords_only` the feature channels are dropped.
    pub fn group_rows(&self, g: usize, coords_only: bool) -> Vec<f64> {
        let slots = self.group_slots(g);
        let width = if coords_only { 3 } else { 3 + self.feat_dim };
        let mut rows = Vec::with_capacity(self.num_seeds() * slots.len() * width);
        for s in 0..self.num_seeds() {
            for j in slots.clone() {
                let flat = s * self.k() + j;
                rows.extend_from_slice(&self.rel_xyz[flat]);
                if !coords_only {
                    let base = flat * self.feat_dim;
                    rows.extend_from_slice(&self.feats[base..base + self.feat_dim]);
                }
            }
        }
        rows
    }
}

/// Farthest point sampling step of the SG layer.
pub fn sample_seeds(cloud: &PointCloud, cfg: &DpnConfig, rng_seed: u64) -> Result<SeedSet> {
    if cloud.is_empty() {
        return Err(Error::Empty("cannot sample seeds from an empty cloud".into()));
    }
    if cfg.num_seeds > cloud.len() {
        return Err(Error::Config(format!(
            "{} seeds requested from a {}-point cloud",
            cfg.num_seeds,
            cloud.len()
        )));
    }
    let start = if cfg.fps_random_start {
        rng::named(rng_seed, "fps_start").gen_range(0..cloud.len())
    } else {
        0
    };
    farthest_point_sampling(cloud, cfg.num_seeds, start)
}

/// Grouping step: split each seed's neighbor slots into the configured
/// contiguous groups and cache relative coordinates and raw features.
pub fn partition_groups(
    cloud: &PointCloud,
    seeds: SeedSet,
    neighbors: NeighborList,
    cfg: &DpnConfig,
) -> Result<SgResult> {
    let m = seeds.len();
    let k = neighbors.k;
    let mut rel_xyz = Vec::with_capacity(m * k);
    let mut feats = Vec::with_capacity(m * k * cloud.feat_dim);
    for s in 0..m {
        let seed_xyz = seeds.xyz[s];
        for &p in neighbors.neighbors(s) {
            let q = cloud.xyz[p];
            rel_xyz.push([q[0] - seed_xyz[0], q[1] - seed_xyz[1], q[2] - seed_xyz[2]]);
            feats.extend_from_slice(cloud.feature_row(p));
        }
    }
    Ok(SgResult {
        seeds,
        neighbors,
        group_sizes: cfg.group_sizes.clone(),
        rel_xyz,
        feats,
        feat_dim: cloud.feat_dim,
    })
}

/// The full sampling-and-grouping layer: exactly one farthest-point-sampling
/// call and one ball-query call, whatever the number of fusion layers.
pub fn sg_layer(cloud: &PointCloud, cfg: &DpnConfig, rng_seed: u64) -> Result<SgResult> {
    cfg.validate()?;
    cloud.validate()?;
    let seeds = sample_seeds(cloud, cfg, rng_seed)?;
    let neighbors = ball_query(cloud, &seeds, cfg.radius_m, cfg.k_neighbors, rng_seed)?;
    partition_groups(cloud, seeds, neighbors, cfg)
}

// ── fusion layers ────────────────────────────────────────────────────

/// Check-suite fault injection: when the DPN_MUTATION env var is set the
/// fusion taps are deliberately perturbed, which the oracle-equivalence
/// suite must catch.
fn mutation_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| std::env::var("DPN_MUTATION").map(|v| !v.is_empty()).unwrap_or(false))
}

fn maybe_mutate(tap: Tensor) -> Result<Tensor> {
    if mutation_enabled() {
        tap.add_scalar(1e-3)
    } else {
        Ok(tap)
    }
}

/// One group of neighbor rows for all seeds, seed-major.
#[derive(Clone, Debug)]
pub struct GroupTensor {
    pub rows_per_seed: usize,
    pub values: Tensor,
}

/// State threaded through the fusion layers: the group about to be
/// consumed (`groups[0]`), the not-yet-consumed groups behind it, and the
/// per-layer taps exposed to detection heads.
#[derive(Debug)]
pub struct FaState {
    pub layer_index: usize,
    pub num_seeds: usize,
    pub groups: Vec<GroupTensor>,
    pub taps: Vec<Tensor>,
}

impl FaState {
    /// Build the initial state from a sampling pass. Later groups carry
    /// coordinates only under `CoordConcat`; otherwise rows start as
    /// [relative xyz ++ input features].
    pub fn from_sg(sg: &SgResult, scheme: Scheme) -> Result<FaState> {
        let m = sg.num_seeds();
        let mut groups = Vec::with_capacity(sg.group_sizes.len());
        for g in 0..sg.group_sizes.len() {
            let coords_only = scheme == Scheme::CoordConcat && g > 0;
            let width = if coords_only { 3 } else { 3 + sg.feat_dim };
            let rows = sg.group_rows(g, coords_only);
            let values = Tensor::leaf(&[m * sg.group_sizes[g], width], rows)?;
            groups.push(GroupTensor { rows_per_seed: sg.group_sizes[g], values });
        }
        Ok(FaState { layer_index: 0, num_seeds: m, groups, taps: Vec::new() })
    }

    fn take_first(&mut self) -> Result<GroupTensor> {
        if self.groups.is_empty() {
            return Err(Error::Empty("no remaining groups to consume".into()));
        }
        Ok(self.groups.remove(0))
    }

    fn finish_layer(&mut self, tap: Tensor) {
        self.taps.push(tap);
        self.layer_index += 1;
    }
}

/// Transform the group being consumed and pool it into this layer's tap.
fn transform_and_pool(first: &GroupTensor, layer: &LinearLayer) -> Result<Tensor> {
    let transformed = layer.apply(&first.values)?;
    let tap = transformed.max_pool_blocks(first.rows_per_seed)?;
    maybe_mutate(tap)
}

/// Fusion by appending: the tap joins the next group as one extra row, and
/// every remaining group is re-transformed by this layer's MLP.
pub fn fa_layer_append(mut state: FaState, layer: &LinearLayer) -> Result<FaState> {
    let first = state.take_first()?;
    let tap = transform_and_pool(&first, layer)?;
    for g in &mut state.groups {
        g.values = layer.apply(&g.values)?;
    }
    if let Some(next) = state.groups.first_mut() {
        next.values = next.values.append_block_rows(&tap, next.rows_per_seed)?;
        next.rows_per_seed += 1;
    }
    state.finish_layer(tap);
    Ok(state)
}

/// Fusion by coordinate concatenation: the tap is broadcast onto the next
/// group's relative coordinates; groups further back stay raw coordinates.
pub fn fa_layer_coordconcat(mut state: FaState, layer: &LinearLayer) -> Result<FaState> {
    let first = state.take_first()?;
    let tap = transform_and_pool(&first, layer)?;
    if let Some(next) = state.groups.first_mut() {
        let tiled = tap.repeat_rows_blockwise(next.rows_per_seed)?;
        next.values = next.values.concat_cols(&tiled)?;
    }
    state.finish_layer(tap);
    Ok(state)
}

/// Fusion by feature concatenation: the tap is broadcast onto every row of
/// every remaining group; the consuming layer's MLP acts as the squeeze
/// that brings the widened rows back down.
pub fn fa_layer_featconcat(mut state: FaState, layer: &LinearLayer) -> Result<FaState> {
    let first = state.take_first()?;
    let tap = transform_and_pool(&first, layer)?;
    for g in &mut state.groups {
        let tiled = tap.repeat_rows_blockwise(g.rows_per_seed)?;
        g.values = g.values.concat_cols(&tiled)?;
    }
    state.finish_layer(tap);
    Ok(state)
}

pub fn fa_layer(state: FaState, layer: &LinearLayer, scheme: Scheme) -> Result<FaState> {
    match scheme {
        Scheme::Append => fa_layer_append(state, layer),
        Scheme::CoordConcat => fa_layer_coordconcat(state, layer),
        Scheme::FeatConcat => fa_layer_featconcat(state, layer),
    }
}

/// Run the configured fusion stack over a sampling result.
pub fn fa_forward(sg: &SgResult, cfg: &DpnConfig, params: &DpnParams) -> Result<Vec<Tensor>> {
    params.validate_against(cfg, sg.feat_dim)?;
    let mut state = FaState::from_sg(sg, cfg.scheme)?;
    for layer in &params.layers {
        state = fa_layer(state, layer, cfg.scheme)?;
    }
    Ok(state.taps)
}

/// Wall-clock micros per phase of one forward pass.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub sampling_us: f64,
    pub grouping_us: f64,
    pub compute_us: f64,
}

/// Full operator forward: one sampling pass, L fusion layers, L taps.
/// The last tap is the primary feature; earlier taps feed auxiliary heads.
#[derive(Debug)]
pub struct DpnForward {
    pub sg: SgResult,
    pub taps: Vec<Tensor>,
    pub phases: PhaseTimes,
}

pub fn forward(
    cloud: &PointCloud,
    cfg: &DpnConfig,
    params: &DpnParams,
    rng_seed: u64,
) -> Result<DpnForward> {
    cfg.validate()?;
    cloud.validate()?;
    let t0 = Instant::now();
    let seeds = sample_seeds(cloud, cfg, rng_seed)?;
    let neighbors = ball_query(cloud, &seeds, cfg.radius_m, cfg.k_neighbors, rng_seed)?;
    let t1 = Instant::now();
    let sg = partition_groups(cloud, seeds, neighbors, cfg)?;
    let t2 = Instant::now();
    let taps = fa_forward(&sg, cfg, params)?;
    let t3 = Instant::now();
    Ok(DpnForward {
        sg,
        taps,
        phases: PhaseTimes {
            sampling_us: t1.duration_since(t0).as_secs_f64() * 1e6,
            grouping_us: t2.duration_since(t1).as_secs_f64() * 1e6,
            compute_us: t3.duration_since(t2).as_secs_f64() * 1e6,
        },
    })
}

// ── scale-oriented baseline ──────────────────────────────────────────

/// One level of the per-layer-sampling comparator.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SaLevelConfig {
    pub num_seeds: usize,
    pub radius_m: f64,
    pub k_neighbors: usize,
    pub mlp_width: usize,
}

/// Scale-oriented stack: every level runs its own sampling pass, seed
/// counts shrink and radii grow level by level.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SaConfig {
    pub levels: Vec<SaLevelConfig>,
}

impl SaConfig {
    /// Baseline matched to an operator config: same level count, same K,
    /// same top-level seed count, radii growing around the fixed radius.
    pub fn comparable_to(cfg: &DpnConfig) -> SaConfig {
        let l = cfg.num_fa_layers;
        let levels = (0..l)
            .map(|i| SaLevelConfig {
                num_seeds: (cfg.num_seeds / 4usize.pow(i as u32)).max(1),
                radius_m: cfg.radius_m * 2.0 * (i + 1) as f64 / (l + 1) as f64,
                k_neighbors: cfg.k_neighbors,
                mlp_width: cfg.mlp_widths[i],
            })
            .collect();
        SaConfig { levels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("baseline needs at least one level".into()));
        }
        for pair in self.levels.windows(2) {
            if pair[1].num_seeds >= pair[0].num_seeds {
                return Err(Error::Config("baseline seed counts must strictly decrease".into()));
            }
            if pair[1].radius_m <= pair[0].radius_m {
                return Err(Error::Config(
                    "baseline radii must strictly increase (growing receptive field)".into(),
                ));
            }
        }
        if self.levels.iter().any(|l| l.k_neighbors == 0 || l.mlp_width == 0 || l.radius_m <= 0.0) {
            return Err(Error::Config("baseline level fields must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SaParams {
    pub layers: Vec<LinearLayer>,
}

impl SaParams {
    pub fn init(cfg: &SaConfig, feat_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut c_in = 3 + feat_dim;
        let layers = cfg
            .levels
            .iter()
            .map(|lvl| {
                let layer = LinearLayer::init(c_in, lvl.mlp_width, true, rng);
                c_in = 3 + lvl.mlp_width;
                layer
            })
            .collect();
        Ok(SaParams { layers })
    }
}

#[derive(Debug)]
pub struct SaForward {
    /// Per-level pooled features, one row per surviving seed.
    pub level_features: Vec<Tensor>,
    pub phases: PhaseTimes,
}

/// The per-level-sampling baseline: each level performs its own farthest
/// point sampling and ball query before pooling, so the counters record
/// L calls of each for an L-level stack.
pub fn baseline_sa_stack(
    cloud: &PointCloud,
    cfg: &SaConfig,
    params: &SaParams,
    rng_seed: u64,
) -> Result<SaForward> {
    cfg.validate()?;
    cloud.validate()?;
    if params.layers.len() != cfg.levels.len() {
        return Err(Error::Config("baseline params do not match level count".into()));
    }
    let mut current = cloud.clone();
    let mut features = Vec::new();
    let mut phases = PhaseTimes::default();
    for (li, (lvl, layer)) in cfg.levels.iter().zip(&params.layers).enumerate() {
        if lvl.num_seeds > current.len() {
            return Err(Error::Config(format!(
                "level {li} wants {} seeds from {} points",
                lvl.num_seeds,
                current.len()
            )));
        }
        let t0 = Instant::now();
        let seeds = farthest_point_sampling(&current, lvl.num_seeds, 0)?;
        let neighbors = ball_query(&current, &seeds, lvl.radius_m, lvl.k_neighbors, rng_seed + li as u64)?;
        let t1 = Instant::now();
        // Gather rows [relative xyz ++ neighbor features].
        let m = seeds.len();
        let width = 3 + current.feat_dim;
        let mut rows = Vec::with_capacity(m * lvl.k_neighbors * width);
        for s in 0..m {
            let sx = seeds.xyz[s];
            for &p in neighbors.neighbors(s) {
                let q = current.xyz[p];
                rows.push(q[0] - sx[0]);
                rows.push(q[1] - sx[1]);
                rows.push(q[2] - sx[2]);
                rows.extend_from_slice(current.feature_row(p));
            }
        }
        let group = Tensor::leaf(&[m * lvl.k_neighbors, width], rows)?;
        let t2 = Instant::now();
        let pooled = layer.apply(&group)?.max_pool_blocks(lvl.k_neighbors)?;
        let t3 = Instant::now();
        phases.sampling_us += t1.duration_since(t0).as_secs_f64() * 1e6;
        phases.grouping_us += t2.duration_since(t1).as_secs_f64() * 1e6;
        phases.compute_us += t3.duration_since(t2).as_secs_f64() * 1e6;
        current = PointCloud::with_features(
            seeds.xyz.clone(),
            pooled.data().to_vec(),
            pooled.cols()?,
        )?;
        features.push(pooled);
    }
    Ok(SaForward { level_features: features, phases })
}

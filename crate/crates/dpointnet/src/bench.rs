//! Instrumented comparison of the single-pass operator against the
//! per-level-sampling baseline, plus the ablation sweep driver.
//!
//! Timing policy: the benchmarked region runs on one thread; every number
//! reported is a median with inter-quartile range over at least five
//! repetitions, never a single run. Call counters and memory estimates are
//! deterministic; wall times are not and are excluded from reproducibility
//! guarantees.

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::heads::HeadConfig;
use crate::operator::{
    baseline_sa_stack, equal_group_sizes, forward, DpnConfig, DpnParams, SaConfig, SaParams, Scheme,
};
use crate::rng;
use crate::train::{evaluate, train, EvalMetrics, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_REPETITIONS: usize = 5;

/// Median and dispersion of a sample, in microseconds.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub iqr: f64,
    pub min: f64,
    pub max: f64,
}

pub fn stats(samples: &[f64]) -> Stats {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |f: f64| -> f64 {
        let pos = f * (xs.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if lo == hi {
            xs[lo]
        } else {
            xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
        }
    };
    Stats { median: q(0.5), iqr: q(0.75) - q(0.25), min: xs[0], max: xs[xs.len() - 1] }
}

/// One stack's measurements over a workload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRecord {
    pub label: String,
    pub config: serde_json::Value,
    pub fps_calls: u64,
    pub ball_query_calls: u64,
    pub sampling_us: Stats,
    pub grouping_us: Stats,
    pub compute_us: Stats,
    pub peak_memory_bytes: u64,
    pub repetitions: usize,
    pub warmup: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchPair {
    pub schema_version: u32,
    pub num_clouds: usize,
    pub points_per_cloud: usize,
    pub dpn: BenchRecord,
    pub sa: BenchRecord,
    /// Baseline sampling median over operator sampling median.
    pub sampling_speedup: f64,
}

/// Analytic high-water estimate of forward-pass allocations in bytes:
/// group rows, transformed rows, taps, and matching gradient buffers. A
/// deterministic cost model rather than an RSS probe, so it is monotone
/// and reproducible.
pub fn estimate_dpn_peak_bytes(cfg: &DpnConfig, feat_dim: usize) -> u64 {
    let m = cfg.num_seeds as u64;
    let ins = cfg.layer_input_widths(feat_dim);
    let mut doubles = 0u64;
    // Sampling/grouping storage: neighbor table, relative coords, features.
    let k = cfg.k_neighbors as u64;
    doubles += m * k * (3 + feat_dim as u64 + 1);
    for (l, (&c_in, &c_out)) in ins.iter().zip(&cfg.mlp_widths).enumerate() {
        let rows = m * cfg.group_sizes[l] as u64;
        doubles += rows * c_in as u64; // widened input rows
        doubles += rows * c_out as u64; // transformed rows
        doubles += m * c_out as u64; // tap
    }
    // Gradient buffers double the live set during backward.
    doubles * 2 * 8
}

pub fn estimate_sa_peak_bytes(cfg: &SaConfig, feat_dim: usize) -> u64 {
    let mut doubles = 0u64;
    let mut c_in = 3 + feat_dim as u64;
    for lvl in &cfg.levels {
        let rows = (lvl.num_seeds * lvl.k_neighbors) as u64;
        doubles += rows * c_in;
        doubles += rows * lvl.mlp_width as u64;
        doubles += (lvl.num_seeds * lvl.mlp_width) as u64;
        c_in = 3 + lvl.mlp_width as u64;
    }
    doubles * 2 * 8
}

/// Run both stacks over the same clouds. Warm-up passes are excluded;
/// sampling-call counters are measured once per stack and verified to be
/// (1, 1) per forward for the operator and (levels, levels) for the
/// baseline.
pub fn run_bench(
    clouds: &[PointCloud],
    cfg: &DpnConfig,
    sa_cfg: &SaConfig,
    reps: usize,
    seed: u64,
) -> Result<BenchPair> {
    if clouds.is_empty() {
        return Err(Error::Empty("benchmark needs at least one cloud".into()));
    }
    if reps < MIN_REPETITIONS {
        return Err(Error::Config(format!(
            "at least {MIN_REPETITIONS} repetitions required, got {reps}"
        )));
    }
    cfg.validate()?;
    sa_cfg.validate()?;
    let feat_dim = clouds[0].feat_dim;
    let params = DpnParams::init(cfg, feat_dim, &mut rng::named(seed, "bench_dpn"))?;
    let sa_params = SaParams::init(sa_cfg, feat_dim, &mut rng::named(seed, "bench_sa"))?;
    let warmup = 2;

    // Counter contract, measured outside the timed region.
    crate::sampling::reset_counters();
    forward(&clouds[0], cfg, &params, seed)?;
    let dpn_counts = crate::sampling::counters();
    if dpn_counts != (1, 1) {
        return Err(Error::Numeric(format!(
            "operator made {dpn_counts:?} sampling calls, expected (1, 1)"
        )));
    }
    crate::sampling::reset_counters();
    baseline_sa_stack(&clouds[0], sa_cfg, &sa_params, seed)?;
    let sa_counts = crate::sampling::counters();
    let levels = sa_cfg.levels.len() as u64;
    if sa_counts != (levels, levels) {
        return Err(Error::Numeric(format!(
            "baseline made {sa_counts:?} sampling calls, expected ({levels}, {levels})"
        )));
    }
    crate::sampling::reset_counters();

    let mut dpn_sampling = Vec::new();
    let mut dpn_grouping = Vec::new();
    let mut dpn_compute = Vec::new();
    let mut sa_sampling = Vec::new();
    let mut sa_grouping = Vec::new();
    let mut sa_compute = Vec::new();
    for rep in 0..warmup + reps {
        let (mut s, mut g, mut c) = (0.0, 0.0, 0.0);
        for cloud in clouds {
            let fwd = forward(cloud, cfg, &params, seed)?;
            s += fwd.phases.sampling_us;
            g += fwd.phases.grouping_us;
            c += fwd.phases.compute_us;
        }
        if rep >= warmup {
            dpn_sampling.push(s);
            dpn_grouping.push(g);
            dpn_compute.push(c);
        }
        let (mut s, mut g, mut c) = (0.0, 0.0, 0.0);
        for cloud in clouds {
            let fwd = baseline_sa_stack(cloud, sa_cfg, &sa_params, seed)?;
            s += fwd.phases.sampling_us;
            g += fwd.phases.grouping_us;
            c += fwd.phases.compute_us;
        }
        if rep >= warmup {
            sa_sampling.push(s);
            sa_grouping.push(g);
            sa_compute.push(c);
        }
    }

    let dpn = BenchRecord {
        label: "density-oriented (single sampling pass)".into(),
        config: serde_json::to_value(cfg)?,
        fps_calls: dpn_counts.0,
        ball_query_calls: dpn_counts.1,
        sampling_us: stats(&dpn_sampling),
        grouping_us: stats(&dpn_grouping),
        compute_us: stats(&dpn_compute),
        peak_memory_bytes: estimate_dpn_peak_bytes(cfg, feat_dim),
        repetitions: reps,
        warmup,
    };
    let sa = BenchRecord {
        label: "scale-oriented (per-level sampling)".into(),
        config: serde_json::to_value(sa_cfg)?,
        fps_calls: sa_counts.0,
        ball_query_calls: sa_counts.1,
        sampling_us: stats(&sa_sampling),
        grouping_us: stats(&sa_grouping),
        compute_us: stats(&sa_compute),
        peak_memory_bytes: estimate_sa_peak_bytes(sa_cfg, feat_dim),
        repetitions: reps,
        warmup,
    };
    let sampling_speedup = sa.sampling_us.median / dpn.sampling_us.median;
    Ok(BenchPair {
        schema_version: SCHEMA_VERSION,
        num_clouds: clouds.len(),
        points_per_cloud: clouds[0].len(),
        dpn,
        sa,
        sampling_speedup,
    })
}

// ── ablation sweeps ──────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Scheme,
    HeadLayer,
    Radius,
    KPoints,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scheme" => Ok(SweepAxis::Scheme),
            "head-layer" | "head_layer" => Ok(SweepAxis::HeadLayer),
            "radius" => Ok(SweepAxis::Radius),
            "k" | "k-points" | "k_points" => Ok(SweepAxis::KPoints),
            other => Err(Error::Config(format!(
                "unknown sweep axis '{other}' (expected scheme|head-layer|radius|k)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Scheme => "scheme",
            SweepAxis::HeadLayer => "head_layer",
            SweepAxis::Radius => "radius",
            SweepAxis::KPoints => "k_points",
        }
    }

    /// Default grid per axis; radius and K mirror the standard ablations.
    pub fn default_values(&self, cfg: &DpnConfig) -> Vec<String> {
        match self {
            SweepAxis::Radius => ["1.0", "2.0", "3.0", "4.0", "5.0"].map(String::from).to_vec(),
            SweepAxis::KPoints => ["16", "24", "32"].map(String::from).to_vec(),
            SweepAxis::Scheme => Scheme::all().iter().map(|s| s.name().to_string()).collect(),
            SweepAxis::HeadLayer => (1..=cfg.num_fa_layers).map(|l| l.to_string()).collect(),
        }
    }
}

/// One sweep row: configuration echo, toy-task metrics, bench figures.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub schema_version: u32,
    pub axis: String,
    pub value: String,
    pub scheme: String,
    pub radius_m: f64,
    pub k_neighbors: usize,
    pub head_tap: usize,
    pub num_seeds: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub converged: bool,
    pub fg_accuracy: f64,
    pub mean_reg_error: f64,
    pub peak_memory_bytes: u64,
    pub fps_calls: u64,
    pub ball_query_calls: u64,
    pub sampling_us_median: f64,
}

/// Apply one axis value to a base config, returning the varied operator
/// config and the inference tap.
fn apply_axis(axis: SweepAxis, value: &str, base: &DpnConfig, head_tap: usize) -> Result<(DpnConfig, usize)> {
    let mut cfg = base.clone();
    let mut tap = head_tap;
    match axis {
        SweepAxis::Radius => {
            cfg.radius_m = value
                .parse()
                .map_err(|_| Error::Config(format!("bad radius '{value}'")))?;
        }
        SweepAxis::KPoints => {
            cfg.k_neighbors = value
                .parse()
                .map_err(|_| Error::Config(format!("bad k '{value}'")))?;
            cfg.group_sizes = equal_group_sizes(cfg.k_neighbors, cfg.num_fa_layers);
        }
        SweepAxis::Scheme => cfg.scheme = value.parse()?,
        SweepAxis::HeadLayer => {
            tap = value
                .parse()
                .map_err(|_| Error::Config(format!("bad head layer '{value}'")))?;
        }
    }
    cfg.validate()?;
    Ok((cfg, tap))
}

/// Train-and-measure one configuration per axis value. Non-converging runs
/// are flagged in their row, never dropped. Points run sequentially so the
/// embedded timing figures stay single-threaded.
pub fn sweep(
    axis: SweepAxis,
    values: &[String],
    base: &DpnConfig,
    tcfg: &TrainConfig,
    head_cfg: &HeadConfig,
    scene_spec: &crate::cloud::SceneSpec,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Empty("sweep needs at least one axis value".into()));
    }
    let scenes = crate::cloud::generate_scenes(scene_spec, tcfg.num_scenes + tcfg.holdout_scenes, seed)?;
    let (train_scenes, holdout) = scenes.split_at(tcfg.num_scenes);
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let default_tap = tcfg.head_tap.unwrap_or(base.num_fa_layers);
        let (cfg, tap) = apply_axis(axis, value, base, default_tap)?;
        let aux_taps = if tcfg.aux_heads {
            tcfg.aux_taps
                .clone()
                .unwrap_or_else(|| crate::heads::default_aux_taps(cfg.num_fa_layers, tap))
        } else {
            Vec::new()
        };
        let mut detector = crate::heads::Detector::init(cfg.clone(), head_cfg.clone(), 1, tap, &aux_taps, seed)?;
        let outcome = train(&mut detector, train_scenes, tcfg, seed)?;
        let metrics: EvalMetrics = evaluate(&detector, holdout, seed)?;

        crate::sampling::reset_counters();
        let sample_cloud = if train_scenes[0].cloud.len() > tcfg.num_points {
            crate::cloud::sample_n_points(
                &train_scenes[0].cloud,
                tcfg.num_points,
                &mut rng::named(seed, "sweep_bench"),
            )?
        } else {
            train_scenes[0].cloud.clone()
        };
        let mut sampling_times = Vec::new();
        for _ in 0..MIN_REPETITIONS {
            let fwd = forward(&sample_cloud, &cfg, &detector.backbone, seed)?;
            sampling_times.push(fwd.phases.sampling_us);
        }
        let (fps_calls, bq_calls) = crate::sampling::counters();
        crate::sampling::reset_counters();

        rows.push(SweepPoint {
            schema_version: SCHEMA_VERSION,
            axis: axis.name().into(),
            value: value.clone(),
            scheme: cfg.scheme.name().into(),
            radius_m: cfg.radius_m,
            k_neighbors: cfg.k_neighbors,
            head_tap: tap,
            num_seeds: cfg.num_seeds,
            steps: outcome.steps.len(),
            initial_loss: outcome.initial_loss,
            final_loss: outcome.final_loss,
            converged: outcome.converged(),
            fg_accuracy: metrics.fg_accuracy,
            mean_reg_error: metrics.mean_reg_error,
            peak_memory_bytes: estimate_dpn_peak_bytes(&cfg, 1),
            fps_calls: fps_calls / MIN_REPETITIONS as u64,
            ball_query_calls: bq_calls / MIN_REPETITIONS as u64,
            sampling_us_median: stats(&sampling_times).median,
        });
    }
    Ok(rows)
}

/// RFC 4180 CSV via the csv crate, one row per sweep point.
pub fn write_sweep_csv(rows: &[SweepPoint], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_median_and_iqr() {
        let s = stats(&[1.0, 2.0, 3.0, 4.0, 100.0]);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 100.0);
        assert_eq!(s.iqr, 2.0);
    }

    #[test]
    fn memory_estimate_monotone_in_k_and_seeds() {
        let base = DpnConfig::toy();
        let mut more_k = base.clone();
        more_k.k_neighbors = 24;
        more_k.group_sizes = equal_group_sizes(24, 3);
        assert!(estimate_dpn_peak_bytes(&more_k, 1) > estimate_dpn_peak_bytes(&base, 1));
        let mut more_seeds = base.clone();
        more_seeds.num_seeds = 512;
        assert!(estimate_dpn_peak_bytes(&more_seeds, 1) > estimate_dpn_peak_bytes(&base, 1));
    }

    #[test]
    fn bench_rejects_too_few_reps() {
        let cfg = DpnConfig::toy();
        let sa = SaConfig::comparable_to(&cfg);
        let cloud = crate::cloud::PointCloud::new(vec![[0.0; 3]; 256]);
        assert!(run_bench(&[cloud], &cfg, &sa, 2, 0).is_err());
    }

    #[test]
    fn axis_grids_have_expected_shapes() {
        let cfg = DpnConfig::default();
        assert_eq!(SweepAxis::Radius.default_values(&cfg), vec!["1.0", "2.0", "3.0", "4.0", "5.0"]);
        assert_eq!(SweepAxis::KPoints.default_values(&cfg), vec!["16", "24", "32"]);
        assert_eq!(SweepAxis::Scheme.default_values(&cfg).len(), 3);
        assert_eq!(SweepAxis::HeadLayer.default_values(&cfg).len(), 4);
    }
}

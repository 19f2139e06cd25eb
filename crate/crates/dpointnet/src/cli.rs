//! Command-line interface: `check`, `train`, `bench`, `sweep`, `gen`.
//!
//! Configuration precedence is flags > config file > preset defaults. All
//! randomness flows from the single manifest seed through named
//! sub-streams. Exit codes: 0 success, 2 usage, 3 invalid configuration,
//! 4 check-suite failure, 5 runtime fault.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{run_bench, sweep, write_sweep_csv, SweepAxis};
use crate::check::{run_all, CheckOptions};
use crate::cloud::{generate_scenes, sample_n_points, SceneFile, SceneSpec, SyntheticScene};
use crate::error::{Error, Result};
use crate::heads::{default_aux_taps, Detector, HeadConfig};
use crate::manifest::RunManifest;
use crate::operator::{equal_group_sizes, DpnConfig, SaConfig};
use crate::rng;
use crate::train::{train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;
pub const EXIT_RUNTIME: i32 = 5;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BenchConfig {
    pub repetitions: usize,
    pub num_clouds: usize,
    pub num_points: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { repetitions: 20, num_clouds: 2, num_points: 16384 }
    }
}

/// Full resolved run configuration; the operator fields sit at the top
/// level of the file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    #[serde(flatten)]
    pub dpn: DpnConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub scene: SceneSpec,
    /// Scale-oriented baseline; derived from the operator config when
    /// absent.
    #[serde(default)]
    pub sa: Option<SaConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dpn: DpnConfig::default(),
            train: TrainConfig::default(),
            bench: BenchConfig::default(),
            scene: SceneSpec::default(),
            sa: None,
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: small operator, small clouds, faster learning
    /// rate; the reference preset keeps the full-scale defaults.
    pub fn toy() -> Self {
        RunConfig {
            dpn: DpnConfig::toy(),
            train: TrainConfig::toy(),
            bench: BenchConfig { num_points: 4096, ..BenchConfig::default() },
            scene: SceneSpec::default(),
            sa: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dpn.validate()?;
        self.train.validate()?;
        self.scene.validate()?;
        if let Some(sa) = &self.sa {
            sa.validate()?;
        }
        if self.bench.num_clouds == 0 || self.bench.num_points == 0 {
            return Err(Error::Config("bench needs at least one cloud and one point".into()));
        }
        Ok(())
    }

    pub fn sa_config(&self) -> SaConfig {
        self.sa.clone().unwrap_or_else(|| SaConfig::comparable_to(&self.dpn))
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "dpointnet",
    version,
    about = "Density-oriented point-cloud operator: checks, toy training, benchmarks, sweeps, scene generation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Configuration file (.json or .toml); missing fields use defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root RNG seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for manifests and artifacts.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Base defaults: "reference" (full-scale) or "toy" (desk-scale).
    #[arg(long, value_parser = ["reference", "toy"])]
    pub preset: Option<String>,
    /// Fusion scheme override.
    #[arg(long, value_parser = ["append", "coordconcat", "featconcat"])]
    pub scheme: Option<String>,
    /// Fusion layer count override (regroups slots, resizes widths).
    #[arg(long)]
    pub layers: Option<usize>,
    /// Ball-query radius in meters.
    #[arg(long = "radius-m")]
    pub radius_m: Option<f64>,
    /// Neighbors per seed (slots are re-split equally over the layers).
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed count of the sampling pass.
    #[arg(long)]
    pub seeds: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Run the oracle, gradient, and design-principle suites.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// Reduced trial count for a quick smoke run.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Train the toy detector and write a checkpoint plus loss curve.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Passes over the scene set.
        #[arg(long)]
        epochs: Option<usize>,
        /// Attach train-only auxiliary heads.
        #[arg(long = "aux-heads", value_parser = ["on", "off"])]
        aux_heads: Option<String>,
        /// Generate synthetic scenes instead of reading a directory.
        #[arg(long)]
        synthetic: bool,
        /// Directory of scene JSON files.
        #[arg(long = "scenes-dir")]
        scenes_dir: Option<PathBuf>,
    },
    /// Compare single-pass and per-level sampling stacks.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Timed repetitions (at least 5).
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Ablation sweep over one axis, emitting a CSV table.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Axis: scheme | head-layer | radius | k.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (defaults to the standard grid).
        #[arg(long)]
        values: Option<String>,
    },
    /// Generate synthetic scenes to JSON files.
    Gen {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of scenes.
        #[arg(long, default_value_t = 10)]
        scenes: usize,
    },
}

/// Recursively overlay `patch` onto `base` (objects merge, everything else
/// replaces).
fn merge_json(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let base = match common.preset.as_deref() {
        Some("toy") => RunConfig::toy(),
        _ => RunConfig::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)?;
        let patch: serde_json::Value = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => {
                let parsed: toml::Value = toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                serde_json::to_value(parsed)?
            }
            _ => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        merge_json(&mut value, patch);
    }
    let mut cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;

    // Flag overrides, most specific last.
    if let Some(seed) = common.seed {
        cfg.dpn.rng_seed = seed;
    }
    if let Some(s) = &common.scheme {
        cfg.dpn.scheme = s.parse()?;
    }
    if let Some(seeds) = common.seeds {
        cfg.dpn.num_seeds = seeds;
    }
    if let Some(r) = common.radius_m {
        cfg.dpn.radius_m = r;
    }
    if let Some(k) = common.k {
        cfg.dpn.k_neighbors = k;
        cfg.dpn.group_sizes = equal_group_sizes(k, cfg.dpn.num_fa_layers);
    }
    if let Some(layers) = common.layers {
        cfg.dpn.num_fa_layers = layers;
        cfg.dpn.group_sizes = equal_group_sizes(cfg.dpn.k_neighbors, layers);
        let mut widths = cfg.dpn.mlp_widths.clone();
        while widths.len() < layers {
            widths.push(widths.last().map_or(16, |w| w * 2));
        }
        widths.truncate(layers);
        cfg.dpn.mlp_widths = widths;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn limit_threads() {
    if let Ok(v) = std::env::var("DPN_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
}

/// Parse argv and dispatch; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    limit_threads();
    match cli.cmd {
        Cmd::Check { common, trials } => cmd_check(&common, trials),
        Cmd::Train { common, epochs, aux_heads, synthetic, scenes_dir } => {
            cmd_train(&common, epochs, aux_heads.as_deref(), synthetic, scenes_dir.as_deref())
        }
        Cmd::Bench { common, reps } => cmd_bench(&common, reps),
        Cmd::Sweep { common, axis, values } => cmd_sweep(&common, &axis, values.as_deref()),
        Cmd::Gen { common, scenes } => cmd_gen(&common, scenes),
    }
}

fn validation_or(cfg: Result<RunConfig>) -> std::result::Result<RunConfig, i32> {
    cfg.map_err(|e| {
        eprintln!("error: {e}");
        EXIT_VALIDATION
    })
}

fn runtime(e: Error) -> i32 {
    eprintln!("error: {e}");
    EXIT_RUNTIME
}

pub fn cmd_check(common: &CommonArgs, trials: Option<usize>) -> i32 {
    let cfg = match validation_or(load_config(common)) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let opts = match trials {
        Some(t) => CheckOptions::quick(t),
        None => CheckOptions { seed: cfg.dpn.rng_seed, ..CheckOptions::default() },
    };
    let results = run_all(&cfg.dpn, &opts);
    for r in &results {
        println!("[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} suites passed", results.len());
    let mut manifest = RunManifest::start("check", cfg.dpn.rng_seed, json_or_null(&cfg));
    let out = common.out_dir.join("check.json");
    let write = || -> Result<()> {
        std::fs::create_dir_all(&common.out_dir)?;
        std::fs::write(&out, serde_json::to_string_pretty(&results)?)?;
        Ok(())
    };
    if let Err(e) = write() {
        return runtime(e);
    }
    manifest.record_output(&out);
    if let Err(e) = manifest.finish(&common.out_dir) {
        return runtime(e);
    }
    if passed == results.len() {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

fn json_or_null<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn load_scene_dir(dir: &Path) -> Result<Vec<SyntheticScene>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Empty(format!("no scene .json files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let file: SceneFile = serde_json::from_str(&std::fs::read_to_string(p)?)?;
            Ok(file.scene)
        })
        .collect()
}

pub fn cmd_train(
    common: &CommonArgs,
    epochs: Option<usize>,
    aux_heads: Option<&str>,
    synthetic: bool,
    scenes_dir: Option<&Path>,
) -> i32 {
    let mut cfg = match validation_or(load_config(common)) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(a) = aux_heads {
        cfg.train.aux_heads = a == "on";
    }
    if !synthetic && scenes_dir.is_none() {
        eprintln!("error: train needs --synthetic or --scenes-dir");
        return EXIT_VALIDATION;
    }
    if cfg.train.epochs == 0 {
        // Epochs 0 is a dry run: write manifest and initial checkpoint only.
    } else if let Err(e) = cfg.train.validate() {
        eprintln!("error: {e}");
        return EXIT_VALIDATION;
    }
    let seed = cfg.dpn.rng_seed;
    let mut manifest = RunManifest::start("train", seed, json_or_null(&cfg));

    let body = |manifest: &mut RunManifest| -> Result<i32> {
        let scenes = match scenes_dir {
            Some(dir) => load_scene_dir(dir)?,
            None => generate_scenes(&cfg.scene, cfg.train.num_scenes, seed)?,
        };
        let head_tap = cfg.train.head_tap.unwrap_or(cfg.dpn.num_fa_layers);
        let aux_taps = if cfg.train.aux_heads {
            cfg.train
                .aux_taps
                .clone()
                .unwrap_or_else(|| default_aux_taps(cfg.dpn.num_fa_layers, head_tap))
        } else {
            Vec::new()
        };
        let mut detector =
            Detector::init(cfg.dpn.clone(), HeadConfig::default(), 1, head_tap, &aux_taps, seed)?;
        std::fs::create_dir_all(&common.out_dir)?;

        let mut rows: Vec<(usize, usize, f64, f64, f64, f64, f64)> = Vec::new();
        if cfg.train.epochs > 0 {
            match train(&mut detector, &scenes, &cfg.train, seed) {
                Ok(outcome) => {
                    for s in &outcome.steps {
                        let aux_total: f64 = s.report.aux.iter().map(|a| a.total).sum();
                        rows.push((
                            s.step,
                            s.scene,
                            s.report.main.classification,
                            s.report.main.regression,
                            s.report.main.total,
                            aux_total,
                            s.report.total,
                        ));
                    }
                    println!(
                        "trained {} steps: loss {:.6} -> {:.6}",
                        outcome.steps.len(),
                        outcome.initial_loss,
                        outcome.final_loss
                    );
                }
                Err(Error::Numeric(msg)) => {
                    // Non-finite loss: dump diagnostics and abort.
                    let dump = common.out_dir.join("nan_dump.json");
                    std::fs::write(
                        &dump,
                        serde_json::to_string_pretty(&serde_json::json!({
                            "message": msg,
                            "config": json_or_null(&cfg),
                        }))?,
                    )?;
                    manifest.record_output(&dump);
                    eprintln!("error: {msg} (diagnostics in {})", dump.display());
                    return Ok(EXIT_RUNTIME);
                }
                Err(e) => return Err(e),
            }
        }

        let losses_path = common.out_dir.join("losses.csv");
        let mut w = csv::Writer::from_path(&losses_path)?;
        w.write_record(["step", "scene", "cls", "reg", "main_total", "aux_total", "total"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for (step, scene, cls, reg, main, aux, total) in &rows {
            w.write_record([
                step.to_string(),
                scene.to_string(),
                cls.to_string(),
                reg.to_string(),
                main.to_string(),
                aux.to_string(),
                total.to_string(),
            ])
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        manifest.record_output(&losses_path);

        let named: Vec<(String, &crate::tensor::Tensor)> = detector
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t))
            .collect();
        crate::checkpoint::save(&common.out_dir, "ckpt", &named)?;
        manifest.record_output(&common.out_dir.join("ckpt.json"));
        manifest.record_output(&common.out_dir.join("ckpt.bin"));
        Ok(EXIT_OK)
    };

    match body(&mut manifest) {
        Ok(code) => {
            if manifest.finish(&common.out_dir).is_err() {
                return EXIT_RUNTIME;
            }
            code
        }
        Err(e) => runtime(e),
    }
}

pub fn cmd_bench(common: &CommonArgs, reps: Option<usize>) -> i32 {
    let mut cfg = match validation_or(load_config(common)) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(r) = reps {
        cfg.bench.repetitions = r;
    }
    let seed = cfg.dpn.rng_seed;
    let mut manifest = RunManifest::start("bench", seed, json_or_null(&cfg));
    let body = |manifest: &mut RunManifest| -> Result<()> {
        // Workload: synthetic clutter clouds resampled to the exact size.
        let spec = SceneSpec {
            noise_floor: cfg.bench.num_points,
            num_objects: 8,
            ..cfg.scene.clone()
        };
        let scenes = generate_scenes(&spec, cfg.bench.num_clouds, seed)?;
        let clouds = scenes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                sample_n_points(
                    &s.cloud,
                    cfg.bench.num_points,
                    &mut rng::indexed(seed, "bench_sample", i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let pair = run_bench(&clouds, &cfg.dpn, &cfg.sa_config(), cfg.bench.repetitions, seed)?;
        println!(
            "sampling medians: single-pass {:.0} us vs per-level {:.0} us (speedup x{:.2})",
            pair.dpn.sampling_us.median, pair.sa.sampling_us.median, pair.sampling_speedup
        );
        println!(
            "sampling calls: ({}, {}) vs ({}, {})",
            pair.dpn.fps_calls, pair.dpn.ball_query_calls, pair.sa.fps_calls, pair.sa.ball_query_calls
        );
        std::fs::create_dir_all(&common.out_dir)?;
        let out = common.out_dir.join("bench.json");
        std::fs::write(&out, serde_json::to_string_pretty(&pair)?)?;
        manifest.record_output(&out);
        Ok(())
    };
    match body(&mut manifest) {
        Ok(()) => match manifest.finish(&common.out_dir) {
            Ok(_) => EXIT_OK,
            Err(e) => runtime(e),
        },
        Err(e) => runtime(e),
    }
}

pub fn cmd_sweep(common: &CommonArgs, axis: &str, values: Option<&str>) -> i32 {
    let cfg = match validation_or(load_config(common)) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let axis: SweepAxis = match axis.parse() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let values: Vec<String> = match values {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => axis.default_values(&cfg.dpn),
    };
    let seed = cfg.dpn.rng_seed;
    let mut manifest = RunManifest::start("sweep", seed, json_or_null(&cfg));
    let body = |manifest: &mut RunManifest| -> Result<()> {
        let rows = sweep(
            axis,
            &values,
            &cfg.dpn,
            &cfg.train,
            &HeadConfig::default(),
            &cfg.scene,
            seed,
        )?;
        std::fs::create_dir_all(&common.out_dir)?;
        let out = common.out_dir.join("sweep.csv");
        write_sweep_csv(&rows, &out)?;
        for row in &rows {
            println!(
                "{}={}: loss {:.4} -> {:.4} (converged {}), acc {:.3}, mem {} B",
                row.axis,
                row.value,
                row.initial_loss,
                row.final_loss,
                row.converged,
                row.fg_accuracy,
                row.peak_memory_bytes
            );
        }
        manifest.record_output(&out);
        Ok(())
    };
    match body(&mut manifest) {
        Ok(()) => match manifest.finish(&common.out_dir) {
            Ok(_) => EXIT_OK,
            Err(e) => runtime(e),
        },
        Err(e) => runtime(e),
    }
}

pub fn cmd_gen(common: &CommonArgs, scenes: usize) -> i32 {
    let cfg = match validation_or(load_config(common)) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let seed = cfg.dpn.rng_seed;
    let mut manifest = RunManifest::start("gen", seed, json_or_null(&cfg));
    let body = |manifest: &mut RunManifest| -> Result<()> {
        let generated = generate_scenes(&cfg.scene, scenes, seed)?;
        std::fs::create_dir_all(&common.out_dir)?;
        for (i, scene) in generated.into_iter().enumerate() {
            let file = SceneFile {
                spec: cfg.scene.clone(),
                seed,
                scene_index: i as u64,
                scene,
            };
            let path = common.out_dir.join(format!("scene_{i:03}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&file)?)?;
            manifest.record_output(&path);
        }
        println!("wrote {scenes} scenes to {}", common.out_dir.display());
        Ok(())
    };
    match body(&mut manifest) {
        Ok(()) => match manifest.finish(&common.out_dir) {
            Ok(_) => EXIT_OK,
            Err(e) => runtime(e),
        },
        Err(e) => runtime(e),
    }
}

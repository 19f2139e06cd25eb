//! Property and oracle suites.
//!
//! Each suite returns a pass/fail plus a one-line detail. `cmd check` runs
//! them all against a configuration; the acceptance tests run them at their
//! full trial counts. Gradient suites sample inputs away from the kinks of
//! ReLU, max pooling, and the smooth-L1 elbow (margins probed through the
//! loop oracle, never through the code under test), because central
//! differences are only meaningful where the function is differentiable;
//! the kink branches themselves are pinned by exact-value tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cloud::{generate_scene, PointCloud, SceneSpec};
use crate::error::{Error, Result};
use crate::gradcheck::{central_diff_check, DEFAULT_STEP};
use crate::heads::{
    assign_targets, bce_loss, default_aux_taps, focal_loss, smooth_l1_loss, Detector,
    HeadConfig,
};
use crate::operator::{
    baseline_sa_stack, equal_group_sizes, fa_forward, forward, sg_layer, DpnConfig, DpnParams,
    SaConfig, SaParams, Scheme, SgResult,
};
use crate::oracle::{self, LoopLayer};
use crate::rng;
use crate::sampling::{self, ball_query, farthest_point_sampling, NeighborList, SeedSet};
use crate::tensor::{LinearLayer, Tensor};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    /// Random clouds for the sampling oracles.
    pub sampling_trials: usize,
    /// Random tiny instances per fusion scheme.
    pub fa_trials: usize,
    /// Random trials per differentiable op.
    pub grad_trials: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { sampling_trials: 1000, fa_trials: 100, grad_trials: 100, seed: 0xD9 }
    }
}

impl CheckOptions {
    /// Reduced trial counts for quick smoke runs.
    pub fn quick(trials: usize) -> Self {
        CheckOptions {
            sampling_trials: trials,
            fa_trials: trials.min(25),
            grad_trials: trials.min(25),
            ..CheckOptions::default()
        }
    }
}

fn suite(name: &str, body: impl FnOnce() -> Result<String>) -> SuiteResult {
    match body() {
        Ok(detail) => SuiteResult { name: name.into(), passed: true, detail },
        Err(e) => SuiteResult { name: name.into(), passed: false, detail: e.to_string() },
    }
}

fn fail(msg: String) -> Error {
    Error::Numeric(msg)
}

fn random_cloud(n: usize, spread: f64, rng: &mut ChaCha8Rng) -> PointCloud {
    let xyz = (0..n)
        .map(|_| {
            [
                rng.gen_range(-spread..spread),
                rng.gen_range(-spread..spread),
                rng.gen_range(-spread..spread),
            ]
        })
        .collect();
    let feats = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    PointCloud::with_features(xyz, feats, 1).expect("aligned features")
}

/// Shrunken variant of a config that keeps its layer count and scheme but
/// caps the compute, for suites where only structure matters.
fn shrunk(cfg: &DpnConfig) -> DpnConfig {
    let k = cfg.k_neighbors.min(4 * cfg.num_fa_layers);
    DpnConfig {
        num_seeds: cfg.num_seeds.min(32),
        k_neighbors: k,
        group_sizes: equal_group_sizes(k, cfg.num_fa_layers),
        mlp_widths: cfg.mlp_widths.iter().map(|&w| w.min(12)).collect(),
        ..cfg.clone()
    }
}

// ── oracle equivalence: sampling ─────────────────────────────────────

pub fn check_fps_oracle(trials: usize, seed: u64) -> Result<String> {
    let mut r = rng::named(seed, "fps_oracle");
    for t in 0..trials {
        let n = 2 + r.gen_range(0..63);
        let cloud = random_cloud(n, 5.0, &mut r);
        // Full-length run: since selection is greedy and incremental, the
        // m-seed output is a prefix of the n-seed output, so one full match
        // covers every m. A random shorter m is checked explicitly as well.
        let got = farthest_point_sampling(&cloud, n, 0)?;
        let want = oracle::fps_greedy(&cloud.xyz, n, 0);
        if got.indices != want {
            return Err(fail(format!("trial {t}: full sequence diverged from the greedy oracle")));
        }
        let m = 1 + r.gen_range(0..n);
        let short = farthest_point_sampling(&cloud, m, 0)?;
        if short.indices != want[..m] {
            return Err(fail(format!("trial {t}: m={m} is not a prefix of the greedy order")));
        }
    }
    Ok(format!("{trials} random clouds (n <= 64), all m via prefix property"))
}

pub fn check_ball_query_oracle(trials: usize, seed: u64) -> Result<String> {
    let mut r = rng::named(seed, "bq_oracle");
    for t in 0..trials {
        let n = 2 + r.gen_range(0..63);
        let cloud = random_cloud(n, 4.0, &mut r);
        let m = 1 + r.gen_range(0..n.min(8));
        let seeds = farthest_point_sampling(&cloud, m, 0)?;
        let k = 1 + r.gen_range(0..8);
        let radius = r.gen_range(0.5..6.0);
        let nbrs = ball_query(&cloud, &seeds, radius, k, seed ^ t as u64)?;
        for si in 0..m {
            let want = oracle::in_radius_ascending(&cloud.xyz, seeds.xyz[si], radius, k);
            let mut got: Vec<usize> = nbrs.neighbors(si).to_vec();
            got.sort_unstable();
            got.dedup();
            let mut want_sorted = want;
            want_sorted.sort_unstable();
            if got != want_sorted {
                return Err(fail(format!("trial {t} seed {si}: distinct neighbor sets differ")));
            }
            // Soundness: nothing outside the radius.
            for &p in nbrs.neighbors(si) {
                let d = dist(cloud.xyz[p], seeds.xyz[si]);
                if d > radius + 1e-9 {
                    return Err(fail(format!("trial {t}: neighbor at {d} exceeds radius {radius}")));
                }
            }
        }
    }
    Ok(format!("{trials} random clouds, distinct sets match the radius scan"))
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

// ── oracle equivalence: fusion schemes ───────────────────────────────

fn loop_layers(params: &DpnParams) -> Vec<LoopLayer> {
    params
        .layers
        .iter()
        .map(|l| {
            let (c_in, c_out) = (l.c_in(), l.c_out());
            let w = (0..c_in)
                .map(|i| l.weight.data()[i * c_out..(i + 1) * c_out].to_vec())
                .collect();
            LoopLayer { w, b: l.bias.data().to_vec(), relu: l.relu }
        })
        .collect()
}

/// Raw per-seed group rows in oracle form.
fn oracle_groups(sg: &SgResult, scheme: Scheme, seed_idx: usize) -> Vec<Vec<Vec<f64>>> {
    (0..sg.group_sizes.len())
        .map(|g| {
            let coords_only = scheme == Scheme::CoordConcat && g > 0;
            sg.group_slots(g)
                .map(|j| {
                    let flat = seed_idx * sg.k() + j;
                    let mut row = sg.rel_xyz[flat].to_vec();
                    if !coords_only {
                        let base = flat * sg.feat_dim;
                        row.extend_from_slice(&sg.feats[base..base + sg.feat_dim]);
                    }
                    row
                })
                .collect()
        })
        .collect()
}

/// Random tiny instance: seeds <= 4, k <= 8, widths <= 4.
fn tiny_instance(r: &mut ChaCha8Rng) -> Result<(PointCloud, DpnConfig)> {
    let layers = 1 + r.gen_range(0..3);
    let k = layers.max(1 + r.gen_range(0..8));
    let cfg = DpnConfig {
        num_seeds: 1 + r.gen_range(0..4),
        radius_m: r.gen_range(1.5..4.0),
        k_neighbors: k,
        num_fa_layers: layers,
        scheme: Scheme::FeatConcat,
        group_sizes: equal_group_sizes(k, layers),
        mlp_widths: (0..layers).map(|_| 1 + r.gen_range(0..4)).collect(),
        rng_seed: r.gen(),
        fps_random_start: false,
    };
    let cloud = random_cloud(8 + r.gen_range(0..24), 2.0, r);
    Ok((cloud, cfg))
}

pub fn check_fa_oracle(trials: usize, seed: u64) -> Result<String> {
    let mut worst: f64 = 0.0;
    for scheme in Scheme::all() {
        let mut r = rng::named(seed, &format!("fa_oracle/{}", scheme.name()));
        for t in 0..trials {
            let (cloud, mut cfg) = tiny_instance(&mut r)?;
            cfg.scheme = scheme;
            let params = DpnParams::init(&cfg, cloud.feat_dim, &mut r)?;
            let sg = sg_layer(&cloud, &cfg, cfg.rng_seed)?;
            let taps = fa_forward(&sg, &cfg, &params)?;
            let layers = loop_layers(&params);
            for s in 0..sg.num_seeds() {
                let groups = oracle_groups(&sg, scheme, s);
                let want = oracle::fa_taps_one_seed(scheme, &groups, &layers);
                for (l, tap) in taps.iter().enumerate() {
                    let c = tap.cols()?;
                    for ch in 0..c {
                        let got = tap.data()[s * c + ch];
                        let err = (got - want[l][ch]).abs();
                        if err > 1e-12 {
                            return Err(fail(format!(
                                "{} trial {t}: tap {l} seed {s} ch {ch} differs by {err:e}",
                                scheme.name()
                            )));
                        }
                        worst = worst.max(err);
                    }
                }
            }
        }
    }
    Ok(format!("3 schemes x {trials} tiny instances, max |impl - oracle| = {worst:e}"))
}

// ── gradients ────────────────────────────────────────────────────────

fn rand_vec(n: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// Gradient check for a one-input op: loss = sum(op(x)).
fn grad_check_unary(
    op: impl Fn(&Tensor) -> Result<Tensor>,
    data: Vec<f64>,
    shape: &[usize],
) -> Result<f64> {
    let x = Tensor::param(shape, data.clone())?;
    let loss = op(&x)?.sum()?;
    loss.backward()?;
    let g = x.grad().ok_or_else(|| fail("no gradient reached the input".into()))?;
    let report = central_diff_check(
        |vals| op(&Tensor::leaf(shape, vals[0].clone())?)?.sum()?.item(),
        &[data],
        &[g],
        DEFAULT_STEP,
    )?;
    Ok(report.max_err)
}

fn grad_check_binary(
    op: impl Fn(&Tensor, &Tensor) -> Result<Tensor>,
    a: Vec<f64>,
    sa: &[usize],
    b: Vec<f64>,
    sb: &[usize],
) -> Result<f64> {
    let ta = Tensor::param(sa, a.clone())?;
    let tb = Tensor::param(sb, b.clone())?;
    let loss = op(&ta, &tb)?.sum()?;
    loss.backward()?;
    let ga = ta.grad().ok_or_else(|| fail("no gradient on first input".into()))?;
    let gb = tb.grad().ok_or_else(|| fail("no gradient on second input".into()))?;
    let report = central_diff_check(
        |vals| {
            op(&Tensor::leaf(sa, vals[0].clone())?, &Tensor::leaf(sb, vals[1].clone())?)?
                .sum()?
                .item()
        },
        &[a, b],
        &[ga, gb],
        DEFAULT_STEP,
    )?;
    Ok(report.max_err)
}

pub fn check_op_gradients(trials: usize, seed: u64) -> Result<String> {
    let tol = 1e-6;
    let mut worst: f64 = 0.0;
    let mut bump = |name: &str, err: f64| -> Result<()> {
        if err >= tol {
            return Err(fail(format!("{name}: max rel err {err:e} >= {tol:e}")));
        }
        worst = worst.max(err);
        Ok(())
    };
    let mut r = rng::named(seed, "op_grads");
    for _ in 0..trials {
        let rows = 1 + r.gen_range(0..4);
        let cols = 1 + r.gen_range(0..4);
        let shape = [rows, cols];
        let n = rows * cols;

        // Affine, identity activation: smooth everywhere.
        let c_out = 1 + r.gen_range(0..4);
        let w = rand_vec(cols * c_out, -1.0, 1.0, &mut r);
        let b = rand_vec(c_out, -0.5, 0.5, &mut r);
        {
            let x = rand_vec(n, -2.0, 2.0, &mut r);
            let xt = Tensor::param(&shape, x.clone())?;
            let wt = Tensor::param(&[cols, c_out], w.clone())?;
            let bt = Tensor::param(&[1, c_out], b.clone())?;
            let layer = LinearLayer::new(wt.clone(), bt.clone(), false)?;
            let loss = layer.apply(&xt)?.sum()?;
            loss.backward()?;
            let report = central_diff_check(
                |vals| {
                    let layer = LinearLayer::new(
                        Tensor::leaf(&[cols, c_out], vals[1].clone())?,
                        Tensor::leaf(&[1, c_out], vals[2].clone())?,
                        false,
                    )?;
                    layer.apply(&Tensor::leaf(&shape, vals[0].clone())?)?.sum()?.item()
                },
                &[x, w.clone(), b.clone()],
                &[xt.grad().unwrap(), wt.grad().unwrap(), bt.grad().unwrap()],
                DEFAULT_STEP,
            )?;
            bump("linear-identity", report.max_err)?;
        }

        // Affine with ReLU: keep every pre-activation away from zero.
        {
            let mut x;
            loop {
                x = rand_vec(n, -2.0, 2.0, &mut r);
                let margin_ok = (0..rows).all(|row| {
                    (0..c_out).all(|c| {
                        let pre: f64 = b[c]
                            + (0..cols).map(|i| x[row * cols + i] * w[i * c_out + c]).sum::<f64>();
                        pre.abs() > 1e-3
                    })
                });
                if margin_ok {
                    break;
                }
            }
            let xt = Tensor::param(&shape, x.clone())?;
            let layer = LinearLayer::new(
                Tensor::leaf(&[cols, c_out], w.clone())?,
                Tensor::leaf(&[1, c_out], b.clone())?,
                true,
            )?;
            let loss = layer.apply(&xt)?.sum()?;
            loss.backward()?;
            let report = central_diff_check(
                |vals| {
                    let layer = LinearLayer::new(
                        Tensor::leaf(&[cols, c_out], w.clone())?,
                        Tensor::leaf(&[1, c_out], b.clone())?,
                        true,
                    )?;
                    layer.apply(&Tensor::leaf(&shape, vals[0].clone())?)?.sum()?.item()
                },
                &[x],
                &[xt.grad().unwrap()],
                DEFAULT_STEP,
            )?;
            bump("linear-relu", report.max_err)?;
        }

        // Max pool over blocks: resample until winner margins are clear.
        {
            let blocks = 1 + r.gen_range(0..3);
            let per = 1 + r.gen_range(0..4);
            let pool_shape = [blocks * per, cols];
            let mut x;
            loop {
                x = rand_vec(blocks * per * cols, -2.0, 2.0, &mut r);
                let mut ok = true;
                for blk in 0..blocks {
                    for c in 0..cols {
                        let mut vals: Vec<f64> =
                            (0..per).map(|row| x[(blk * per + row) * cols + c]).collect();
                        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        if per > 1 && vals[0] - vals[1] < 1e-3 {
                            ok = false;
                        }
                    }
                }
                if ok {
                    break;
                }
            }
            bump(
                "max-pool",
                grad_check_unary(|t| t.max_pool_blocks(per), x, &pool_shape)?,
            )?;
        }

        // Structure ops are linear in their inputs; any data works.
        bump(
            "concat-cols",
            grad_check_binary(
                |a, b| a.concat_cols(b),
                rand_vec(n, -2.0, 2.0, &mut r),
                &shape,
                rand_vec(rows * 2, -2.0, 2.0, &mut r),
                &[rows, 2],
            )?,
        )?;
        bump(
            "append-block-rows",
            grad_check_binary(
                |a, b| a.append_block_rows(b, rows),
                rand_vec(n, -2.0, 2.0, &mut r),
                &shape,
                rand_vec(cols, -2.0, 2.0, &mut r),
                &[1, cols],
            )?,
        )?;
        bump(
            "repeat-rows",
            grad_check_unary(|t| t.repeat_rows_blockwise(3), rand_vec(n, -2.0, 2.0, &mut r), &shape)?,
        )?;
        bump(
            "add",
            grad_check_binary(
                |a, b| a.add(b),
                rand_vec(n, -2.0, 2.0, &mut r),
                &shape,
                rand_vec(n, -2.0, 2.0, &mut r),
                &shape,
            )?,
        )?;
        bump(
            "sub",
            grad_check_binary(
                |a, b| a.sub(b),
                rand_vec(n, -2.0, 2.0, &mut r),
                &shape,
                rand_vec(n, -2.0, 2.0, &mut r),
                &shape,
            )?,
        )?;
        bump(
            "mul",
            grad_check_binary(
                |a, b| a.mul(b),
                rand_vec(n, -2.0, 2.0, &mut r),
                &shape,
                rand_vec(n, -2.0, 2.0, &mut r),
                &shape,
            )?,
        )?;
        bump(
            "add-scalar",
            grad_check_unary(|t| t.add_scalar(0.7), rand_vec(n, -2.0, 2.0, &mut r), &shape)?,
        )?;
        bump(
            "mul-scalar",
            grad_check_unary(|t| t.mul_scalar(-1.3), rand_vec(n, -2.0, 2.0, &mut r), &shape)?,
        )?;
        bump(
            "sigmoid",
            grad_check_unary(|t| t.sigmoid(), rand_vec(n, -3.0, 3.0, &mut r), &shape)?,
        )?;
        bump("ln", grad_check_unary(|t| t.ln(), rand_vec(n, 0.2, 3.0, &mut r), &shape)?)?;
        bump(
            "pow-const",
            grad_check_unary(|t| t.pow_const(2.0), rand_vec(n, 0.1, 2.0, &mut r), &shape)?,
        )?;
        // Clamp: keep inputs clear of the threshold on both sides.
        {
            let x: Vec<f64> = (0..n)
                .map(|_| {
                    if r.gen_bool(0.5) {
                        r.gen_range(0.51..2.0)
                    } else {
                        r.gen_range(-2.0..0.49)
                    }
                })
                .collect();
            bump("clamp-min", grad_check_unary(|t| t.clamp_min(0.5), x, &shape)?)?;
        }
        // Huber: away from the |x| = beta elbow.
        {
            let x: Vec<f64> = (0..n)
                .map(|_| {
                    let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let mag = if r.gen_bool(0.5) { r.gen_range(0.0..0.99) } else { r.gen_range(1.01..3.0) };
                    sign * mag
                })
                .collect();
            bump("huber", grad_check_unary(|t| t.huber(1.0), x, &shape)?)?;
        }
        bump("sum", grad_check_unary(|t| t.sum(), rand_vec(n, -2.0, 2.0, &mut r), &shape)?)?;
        bump("mean", grad_check_unary(|t| t.mean(), rand_vec(n, -2.0, 2.0, &mut r), &shape)?)?;
    }
    Ok(format!("{trials} trials per op, max rel err {worst:e} < 1e-6"))
}

/// Smooth-regime parameters for end-to-end checks: bounded weights and a
/// positive bias keep every ReLU active with a wide margin.
fn smooth_layer(c_in: usize, c_out: usize, r: &mut ChaCha8Rng) -> LinearLayer {
    let w = rand_vec(c_in * c_out, -0.08, 0.08, r);
    let b = rand_vec(c_out, 1.5, 2.5, r);
    LinearLayer {
        weight: Tensor::param(&[c_in, c_out], w).unwrap(),
        bias: Tensor::param(&[1, c_out], b).unwrap(),
        relu: true,
    }
}

/// End-to-end gradient of the full differentiable path (fusion stack, head,
/// focal + smooth-L1 loss) with respect to every parameter.
pub fn check_end_to_end_gradients(seed: u64) -> Result<String> {
    let tol = 1e-4;
    let mut worst: f64 = 0.0;
    for scheme in Scheme::all() {
        let mut r = rng::named(seed, &format!("e2e/{}", scheme.name()));
        let cfg = DpnConfig {
            num_seeds: 8,
            radius_m: 3.0,
            k_neighbors: 6,
            num_fa_layers: 3,
            scheme,
            group_sizes: vec![2, 2, 2],
            mlp_widths: vec![3, 4, 5],
            rng_seed: 11,
            fps_random_start: false,
        };
        let ins = cfg.layer_input_widths(1);

        // Fixed sampling result and targets; only parameters move.
        let scene = generate_scene(
            &SceneSpec { noise_floor: 24, num_objects: 2, ..SceneSpec::default() },
            &mut rng::named(seed, "e2e_scene"),
        )?;
        let sg = sg_layer(&scene.cloud, &cfg, cfg.rng_seed)?;
        let targets = assign_targets(&scene, &sg.seeds);

        // Reject instances whose pooled maxima could flip under the
        // finite-difference step (probed via the loop oracle).
        let (params, trunk, cls, reg) = loop {
            let backbone = DpnParams {
                layers: ins
                    .iter()
                    .zip(&cfg.mlp_widths)
                    .map(|(&i, &o)| smooth_layer(i, o, &mut r))
                    .collect(),
            };
            let gap = (0..sg.num_seeds())
                .map(|s| {
                    oracle::fa_min_pool_gap(
                        scheme,
                        &oracle_groups(&sg, scheme, s),
                        &loop_layers(&backbone),
                    )
                })
                .fold(f64::INFINITY, f64::min);
            if gap > 1e-3 {
                let trunk = smooth_layer(5, 4, &mut r);
                let cls = LinearLayer {
                    weight: Tensor::param(&[4, 1], rand_vec(4, -0.2, 0.2, &mut r))?,
                    bias: Tensor::param(&[1, 1], vec![0.0])?,
                    relu: false,
                };
                let reg = LinearLayer {
                    weight: Tensor::param(&[4, 7], rand_vec(28, -0.2, 0.2, &mut r))?,
                    bias: Tensor::param(&[1, 7], rand_vec(7, -0.1, 0.1, &mut r))?,
                    relu: false,
                };
                break (backbone, trunk, cls, reg);
            }
        };

        let run = |layers: &[LinearLayer], trunk: &LinearLayer, cls: &LinearLayer, reg: &LinearLayer| -> Result<Tensor> {
            let params = DpnParams { layers: layers.to_vec() };
            let taps = fa_forward(&sg, &cfg, &params)?;
            let h = trunk.apply(&taps[cfg.num_fa_layers - 1])?;
            let logits = cls.apply(&h)?;
            let residuals = reg.apply(&h)?;
            let c = focal_loss(&logits, &targets.labels, Some(0.25), 2.0)?;
            let s = smooth_l1_loss(&residuals, &targets.residuals, &targets.labels, 1.0)?;
            c.add(&s)
        };

        let loss = run(&params.layers, &trunk, &cls, &reg)?;
        loss.backward()?;

        let mut all: Vec<(&Tensor, Vec<usize>)> = Vec::new();
        for l in params.layers.iter().chain([&trunk, &cls, &reg]) {
            all.push((&l.weight, l.weight.shape().to_vec()));
            all.push((&l.bias, l.bias.shape().to_vec()));
        }
        let inputs: Vec<Vec<f64>> = all.iter().map(|(t, _)| t.data().to_vec()).collect();
        let grads: Vec<Vec<f64>> = all
            .iter()
            .map(|(t, _)| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect();
        let relus: Vec<bool> = params
            .layers
            .iter()
            .chain([&trunk, &cls, &reg])
            .map(|l| l.relu)
            .collect();
        let shapes: Vec<(Vec<usize>, Vec<usize>)> = params
            .layers
            .iter()
            .chain([&trunk, &cls, &reg])
            .map(|l| (l.weight.shape().to_vec(), l.bias.shape().to_vec()))
            .collect();
        let eval_loss = |vals: &[Vec<f64>]| -> Result<f64> {
            let mut layers = Vec::new();
            for (i, ((ws, bs), relu)) in shapes.iter().zip(&relus).enumerate() {
                layers.push(LinearLayer {
                    weight: Tensor::leaf(ws, vals[2 * i].clone())?,
                    bias: Tensor::leaf(bs, vals[2 * i + 1].clone())?,
                    relu: *relu,
                });
            }
            let backbone = layers[..cfg.num_fa_layers].to_vec();
            let trunk = layers[cfg.num_fa_layers].clone();
            let cls = layers[cfg.num_fa_layers + 1].clone();
            let reg = layers[cfg.num_fa_layers + 2].clone();
            run(&backbone, &trunk, &cls, &reg)?.item()
        };
        let report = central_diff_check(eval_loss, &inputs, &grads, DEFAULT_STEP)?;
        if report.max_err >= tol {
            return Err(fail(format!(
                "{}: end-to-end max rel err {:e} >= {tol:e}",
                scheme.name(),
                report.max_err
            )));
        }
        worst = worst.max(report.max_err);
    }
    Ok(format!("3 schemes, full stack + head + loss, max rel err {worst:e} < 1e-4"))
}

// ── losses ───────────────────────────────────────────────────────────

pub fn check_loss_values() -> Result<String> {
    let tol = 1e-9;
    // focal(logit 0, label 1, alpha 0.25, gamma 2) = 0.25 * 0.25 * ln 2.
    let logits = Tensor::leaf(&[1, 1], vec![0.0])?;
    let focal = focal_loss(&logits, &[1.0], Some(0.25), 2.0)?.item()?;
    let want = 0.25 * 0.25 * std::f64::consts::LN_2;
    if (focal - want).abs() > tol {
        return Err(fail(format!("focal at logit 0: {focal} vs {want}")));
    }
    // Saturated positive: contribution vanishes.
    let sat = focal_loss(&Tensor::leaf(&[1, 1], vec![40.0])?, &[1.0], Some(0.25), 2.0)?.item()?;
    if sat.abs() > tol {
        return Err(fail(format!("focal at p_t ~ 1 should vanish, got {sat}")));
    }
    // bce(logit 0, label 1) = ln 2; saturation to 0.
    let bce = bce_loss(&logits, &[1.0])?.item()?;
    if (bce - std::f64::consts::LN_2).abs() > tol {
        return Err(fail(format!("bce at logit 0: {bce}")));
    }
    let bce_sat = bce_loss(&Tensor::leaf(&[1, 1], vec![40.0])?, &[1.0])?.item()?;
    if bce_sat.abs() > tol {
        return Err(fail(format!("bce saturation: {bce_sat}")));
    }
    // Smooth-L1 closed forms per element (beta 1): d=0 -> 0, 0.5 -> 0.125,
    // 2 -> 1.5.
    for (d, want) in [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5)] {
        let mut row = [0.0; 7];
        row[0] = d;
        let pred = Tensor::leaf(&[1, 7], row.to_vec())?;
        let got = smooth_l1_loss(&pred, &[[0.0; 7]], &[1.0], 1.0)?.item()?;
        if (got - want).abs() > tol {
            return Err(fail(format!("smooth-L1 at d={d}: {got} vs {want}")));
        }
    }
    // No positives: regression term is exactly zero, not NaN.
    let pred = Tensor::leaf(&[1, 7], vec![1.0; 7])?;
    let zero = smooth_l1_loss(&pred, &[[0.0; 7]], &[0.0], 1.0)?.item()?;
    if zero != 0.0 {
        return Err(fail(format!("empty-positive regression term: {zero}")));
    }
    Ok("focal / bce / smooth-L1 closed-form values within 1e-9".into())
}

pub fn check_bce_focal_identity(trials: usize, seed: u64) -> Result<String> {
    let mut r = rng::named(seed, "bce_focal");
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let n = 1 + r.gen_range(0..16);
        let logits = rand_vec(n, -4.0, 4.0, &mut r);
        let labels: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let lt = Tensor::leaf(&[n, 1], logits)?;
        let a = focal_loss(&lt, &labels, None, 0.0)?.item()?;
        let b = bce_loss(&lt, &labels)?.item()?;
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-30);
        if rel > 1e-10 {
            return Err(fail(format!("trial {t}: focal(gamma 0) vs bce rel err {rel:e}")));
        }
        worst = worst.max(rel);
    }
    Ok(format!("{trials} random inputs, rel err <= {worst:e}"))
}

pub fn check_loss_gradients(trials: usize, seed: u64) -> Result<String> {
    let tol = 1e-6;
    let mut r = rng::named(seed, "loss_grads");
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = 1 + r.gen_range(0..8);
        let labels: Vec<f64> = (0..n).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        for build in [
            |l: &Tensor, y: &[f64]| focal_loss(l, y, Some(0.25), 2.0),
            |l: &Tensor, y: &[f64]| bce_loss(l, y),
        ] {
            let logits = rand_vec(n, -3.0, 3.0, &mut r);
            let lt = Tensor::param(&[n, 1], logits.clone())?;
            let loss = build(&lt, &labels)?;
            loss.backward()?;
            let report = central_diff_check(
                |vals| build(&Tensor::leaf(&[n, 1], vals[0].clone())?, &labels)?.item(),
                &[logits],
                &[lt.grad().unwrap()],
                DEFAULT_STEP,
            )?;
            if report.max_err >= tol {
                return Err(fail(format!("classification loss grad err {:e}", report.max_err)));
            }
            worst = worst.max(report.max_err);
        }
        // Smooth-L1 w.r.t. predictions, sampled away from the elbow.
        let m = 1 + r.gen_range(0..4);
        let mut labels_reg: Vec<f64> = (0..m).map(|_| if r.gen_bool(0.7) { 1.0 } else { 0.0 }).collect();
        labels_reg[0] = 1.0;
        let targets: Vec<[f64; 7]> = (0..m)
            .map(|_| std::array::from_fn(|_| r.gen_range(-0.5..0.5)))
            .collect();
        let mut pred = Vec::with_capacity(m * 7);
        for i in 0..m {
            for c in 0..7 {
                loop {
                    let v: f64 = r.gen_range(-2.0..2.0);
                    if ((v - targets[i][c]).abs() - 1.0).abs() > 1e-3 {
                        pred.push(v);
                        break;
                    }
                }
            }
        }
        let pt = Tensor::param(&[m, 7], pred.clone())?;
        let loss = smooth_l1_loss(&pt, &targets, &labels_reg, 1.0)?;
        loss.backward()?;
        let report = central_diff_check(
            |vals| {
                smooth_l1_loss(&Tensor::leaf(&[m, 7], vals[0].clone())?, &targets, &labels_reg, 1.0)?
                    .item()
            },
            &[pred],
            &[pt.grad().unwrap()],
            DEFAULT_STEP,
        )?;
        if report.max_err >= tol {
            return Err(fail(format!("smooth-L1 grad err {:e}", report.max_err)));
        }
        worst = worst.max(report.max_err);
    }
    Ok(format!("{trials} trials per loss, max rel err {worst:e} < 1e-6"))
}

// ── design principles and structure ──────────────────────────────────

pub fn check_principle_fixed_radius(cfg: &DpnConfig, seed: u64) -> Result<String> {
    let scene = generate_scene(&SceneSpec::default(), &mut rng::named(seed, "p1_scene"))?;
    let mut cfg = shrunk(cfg);
    cfg.num_seeds = cfg.num_seeds.min(scene.cloud.len());
    let sg = sg_layer(&scene.cloud, &cfg, seed)?;
    let max_d = sg.max_neighbor_distance();
    if max_d > cfg.radius_m + 1e-9 {
        return Err(fail(format!(
            "a fused point sits {max_d} m from its seed, radius is {} m",
            cfg.radius_m
        )));
    }
    Ok(format!(
        "all fused points across {} layers within the single {} m radius (max {:.3} m); \
         one radius field serves every layer",
        cfg.num_fa_layers, cfg.radius_m, max_d
    ))
}

pub fn check_principle_growing_density(cfg: &DpnConfig, seed: u64) -> Result<String> {
    // Dense cluster so every seed has at least K distinct in-radius points.
    let mut r = rng::named(seed, "p2_cloud");
    let cloud = random_cloud(cfg.k_neighbors.max(64) * 4, 1.0, &mut r);
    let mut cfg = cfg.clone();
    cfg.num_seeds = cfg.num_seeds.min(16);
    cfg.radius_m = 10.0; // everything in range; density growth is structural
    let sg = sg_layer(&cloud, &cfg, seed)?;
    let counts = sg.distinct_fused_counts();
    let mut cumulative = 0;
    for (l, per_seed) in counts.iter().enumerate() {
        cumulative += sg.group_sizes[l];
        for (s, &c) in per_seed.iter().enumerate() {
            if c != cumulative {
                return Err(fail(format!(
                    "tap {l} seed {s} fuses {c} distinct points, expected {cumulative}"
                )));
            }
        }
        if l > 0 && cumulative <= counts[l - 1][0] {
            return Err(fail("fused point count failed to grow".into()));
        }
    }
    let seq: Vec<usize> = cfg
        .group_sizes
        .iter()
        .scan(0, |acc, g| {
            *acc += g;
            Some(*acc)
        })
        .collect();
    Ok(format!("distinct fused points per tap = {seq:?}, strictly increasing"))
}

pub fn check_single_sampling(cfg: &DpnConfig, seed: u64) -> Result<String> {
    let cfg = shrunk(cfg);
    let mut r = rng::named(seed, "counter_cloud");
    let cloud = random_cloud(cfg.num_seeds * 4, 3.0, &mut r);
    let params = DpnParams::init(&cfg, 1, &mut r)?;
    sampling::reset_counters();
    forward(&cloud, &cfg, &params, seed)?;
    let dpn = sampling::counters();
    if dpn != (1, 1) {
        return Err(fail(format!("operator made {dpn:?} sampling calls, expected (1, 1)")));
    }
    let sa_cfg = SaConfig::comparable_to(&cfg);
    let sa_params = SaParams::init(&sa_cfg, 1, &mut r)?;
    sampling::reset_counters();
    baseline_sa_stack(&cloud, &sa_cfg, &sa_params, seed)?;
    let sa = sampling::counters();
    let l = sa_cfg.levels.len() as u64;
    sampling::reset_counters();
    if sa != (l, l) {
        return Err(fail(format!("baseline made {sa:?} sampling calls, expected ({l}, {l})")));
    }
    Ok(format!("operator (1, 1) vs baseline ({l}, {l}) sampling calls for {l} layers"))
}

pub fn check_seed_count_and_widths(cfg: &DpnConfig, seed: u64) -> Result<String> {
    let cfg = shrunk(cfg);
    let mut r = rng::named(seed, "width_cloud");
    let cloud = random_cloud(cfg.num_seeds * 4, 3.0, &mut r);
    let params = DpnParams::init(&cfg, 1, &mut r)?;
    let fwd = forward(&cloud, &cfg, &params, seed)?;
    if fwd.taps.len() != cfg.num_fa_layers {
        return Err(fail(format!("{} taps for {} layers", fwd.taps.len(), cfg.num_fa_layers)));
    }
    for (l, tap) in fwd.taps.iter().enumerate() {
        if tap.rows()? != cfg.num_seeds {
            return Err(fail(format!("tap {l} covers {} of {} seeds", tap.rows()?, cfg.num_seeds)));
        }
        if tap.cols()? != cfg.mlp_widths[l] {
            return Err(fail(format!("tap {l} width {} != configured {}", tap.cols()?, cfg.mlp_widths[l])));
        }
    }
    Ok(format!("every tap covers all {} seeds at its configured width", cfg.num_seeds))
}

/// Rebuild a sampling result with the slots of one group shuffled per seed.
fn permute_group(sg: &SgResult, group: usize, r: &mut ChaCha8Rng) -> Result<SgResult> {
    let k = sg.k();
    let mut indices = sg.neighbors.flat_indices().to_vec();
    let mut dups = sg.neighbors.flat_duplicates().to_vec();
    let mut rel = sg.rel_xyz.clone();
    let mut feats = sg.feats.clone();
    let slots: Vec<usize> = sg.group_slots(group).collect();
    for s in 0..sg.num_seeds() {
        let mut order = slots.clone();
        for i in (1..order.len()).rev() {
            order.swap(i, r.gen_range(0..=i));
        }
        let base = s * k;
        let orig_idx: Vec<usize> = slots.iter().map(|&j| indices[base + j]).collect();
        let orig_dup: Vec<bool> = slots.iter().map(|&j| dups[base + j]).collect();
        let orig_rel: Vec<[f64; 3]> = slots.iter().map(|&j| rel[base + j]).collect();
        let orig_feat: Vec<Vec<f64>> = slots
            .iter()
            .map(|&j| feats[(base + j) * sg.feat_dim..(base + j + 1) * sg.feat_dim].to_vec())
            .collect();
        for (pos, &dst) in slots.iter().enumerate() {
            let src = slots.iter().position(|&x| x == order[pos]).unwrap();
            indices[base + dst] = orig_idx[src];
            dups[base + dst] = orig_dup[src];
            rel[base + dst] = orig_rel[src];
            feats[(base + dst) * sg.feat_dim..(base + dst + 1) * sg.feat_dim]
                .copy_from_slice(&orig_feat[src]);
        }
    }
    Ok(SgResult {
        seeds: SeedSet { indices: sg.seeds.indices.clone(), xyz: sg.seeds.xyz.clone() },
        neighbors: NeighborList::from_parts(k, indices, dups)?,
        group_sizes: sg.group_sizes.clone(),
        rel_xyz: rel,
        feats,
        feat_dim: sg.feat_dim,
    })
}

pub fn check_permutation_invariance(cfg: &DpnConfig, seed: u64) -> Result<String> {
    let cfg = shrunk(cfg);
    let mut r = rng::named(seed, "perm");
    let cloud = random_cloud(cfg.num_seeds * 4, 3.0, &mut r);
    let params = DpnParams::init(&cfg, 1, &mut r)?;
    let sg = sg_layer(&cloud, &cfg, seed)?;
    let base = fa_forward(&sg, &cfg, &params)?;
    for g in 0..cfg.num_fa_layers {
        let permuted = permute_group(&sg, g, &mut r)?;
        let taps = fa_forward(&permuted, &cfg, &params)?;
        for (l, (a, b)) in base.iter().zip(&taps).enumerate() {
            if a.data() != b.data() {
                return Err(fail(format!("permuting group {g} changed tap {l}")));
            }
        }
    }
    Ok("shuffling points within any one group leaves every tap bit-identical".into())
}

pub fn check_scheme_equivalence_single_layer(seed: u64) -> Result<String> {
    let mut r = rng::named(seed, "l1_equiv");
    let cfg = DpnConfig {
        num_seeds: 6,
        radius_m: 3.0,
        k_neighbors: 8,
        num_fa_layers: 1,
        scheme: Scheme::Append,
        group_sizes: vec![8],
        mlp_widths: vec![9],
        rng_seed: 3,
        fps_random_start: false,
    };
    let cloud = random_cloud(48, 2.0, &mut r);
    let params = DpnParams::init(&cfg, 1, &mut r)?;
    let sg = sg_layer(&cloud, &cfg, 3)?;
    let mut outputs = Vec::new();
    for scheme in Scheme::all() {
        let mut c = cfg.clone();
        c.scheme = scheme;
        let taps = fa_forward(&sg, &c, &params)?;
        outputs.push(taps[0].data().to_vec());
    }
    if outputs[0] != outputs[1] || outputs[1] != outputs[2] {
        return Err(fail("single-layer taps differ across schemes".into()));
    }
    Ok("all three schemes reduce to pool(mlp(group)) at one layer, bit-identical".into())
}

pub fn check_aux_head_neutrality(seed: u64) -> Result<String> {
    let cfg = DpnConfig {
        num_seeds: 16,
        k_neighbors: 8,
        num_fa_layers: 3,
        group_sizes: equal_group_sizes(8, 3),
        mlp_widths: vec![8, 10, 12],
        ..DpnConfig::toy()
    };
    let scene = generate_scene(&SceneSpec::default(), &mut rng::named(seed, "aux_scene"))?;
    let head_cfg = HeadConfig::default();
    let aux = default_aux_taps(cfg.num_fa_layers, cfg.num_fa_layers);
    let with_aux = Detector::init(cfg.clone(), head_cfg.clone(), 1, cfg.num_fa_layers, &aux, seed)?;
    let without = Detector::init(cfg.clone(), head_cfg, 1, cfg.num_fa_layers, &[], seed)?;
    let (_, la, ra) = with_aux.forward_inference(&scene.cloud, seed)?;
    let (_, lb, rb) = without.forward_inference(&scene.cloud, seed)?;
    if la.data() != lb.data() || ra.data() != rb.data() {
        return Err(fail("detaching auxiliary heads changed inference output".into()));
    }
    Ok(format!(
        "top-head outputs bit-identical with {} auxiliary heads attached or detached",
        aux.len()
    ))
}

pub fn check_determinism(cfg: &DpnConfig, seed: u64) -> Result<String> {
    let cfg = shrunk(cfg);
    let mut r = rng::named(seed, "determinism");
    let cloud = random_cloud(cfg.num_seeds * 4, 3.0, &mut r);
    let params = DpnParams::init(&cfg, 1, &mut r)?;
    let a = forward(&cloud, &cfg, &params, seed)?;
    let b = forward(&cloud, &cfg, &params, seed)?;
    for (l, (x, y)) in a.taps.iter().zip(&b.taps).enumerate() {
        if x.data() != y.data() {
            return Err(fail(format!("tap {l} differs between identical runs")));
        }
    }
    Ok("repeated forward passes under one seed are bit-identical".into())
}

pub fn check_config_validation(cfg: &DpnConfig) -> Result<String> {
    cfg.validate()?;
    let mut bad = cfg.clone();
    bad.group_sizes = vec![cfg.k_neighbors + 1; cfg.num_fa_layers];
    if bad.validate().is_ok() {
        return Err(fail("a group partition that does not sum to k was accepted".into()));
    }
    let mut bad = cfg.clone();
    bad.mlp_widths.push(1);
    if bad.validate().is_ok() {
        return Err(fail("a width list longer than the layer count was accepted".into()));
    }
    Ok("config valid; malformed partitions and width lists rejected".into())
}

/// Run every suite against a configuration.
pub fn run_all(cfg: &DpnConfig, opts: &CheckOptions) -> Vec<SuiteResult> {
    let s = opts.seed;
    vec![
        suite("config-validation", || check_config_validation(cfg)),
        suite("fps-oracle-equivalence", || check_fps_oracle(opts.sampling_trials, s)),
        suite("ball-query-oracle-equivalence", || check_ball_query_oracle(opts.sampling_trials, s)),
        suite("fusion-scheme-oracle-equivalence", || check_fa_oracle(opts.fa_trials, s)),
        suite("per-op-gradients", || check_op_gradients(opts.grad_trials, s)),
        suite("end-to-end-gradients", || check_end_to_end_gradients(s)),
        suite("loss-unit-values", || check_loss_values()),
        suite("bce-focal-identity", || check_bce_focal_identity(opts.grad_trials, s)),
        suite("loss-gradients", || check_loss_gradients(opts.grad_trials.min(25), s)),
        suite("fixed-radius-receptive-field", || check_principle_fixed_radius(cfg, s)),
        suite("growing-density", || check_principle_growing_density(cfg, s)),
        suite("single-sampling-pass", || check_single_sampling(cfg, s)),
        suite("seed-count-and-tap-widths", || check_seed_count_and_widths(cfg, s)),
        suite("group-permutation-invariance", || check_permutation_invariance(cfg, s)),
        suite("single-layer-scheme-equivalence", || check_scheme_equivalence_single_layer(s)),
        suite("aux-head-neutrality", || check_aux_head_neutrality(s)),
        suite("determinism", || check_determinism(cfg, s)),
    ]
}

//! Point-cloud data model, KITTI-style binary ingestion, and a synthetic
//! LiDAR-like scene generator with distance-dependent density.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Boundary slack for box membership: points generated on a face must not
/// fall outside after a rotate/un-rotate round trip.
const BOX_EPS: f64 = 1e-9;

/// N points with xyz in meters and optional per-point attribute channels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointCloud {
    pub xyz: Vec<[f64; 3]>,
    /// Row-major N x feat_dim block; empty when feat_dim == 0.
    pub features: Vec<f64>,
    pub feat_dim: usize,
}

impl PointCloud {
    pub fn new(xyz: Vec<[f64; 3]>) -> Self {
        PointCloud { xyz, features: Vec::new(), feat_dim: 0 }
    }

    pub fn with_features(xyz: Vec<[f64; 3]>, features: Vec<f64>, feat_dim: usize) -> Result<Self> {
        if features.len() != xyz.len() * feat_dim {
            return Err(Error::Shape(format!(
                "{} feature values do not tile {} points by {feat_dim}",
                features.len(),
                xyz.len()
            )));
        }
        Ok(PointCloud { xyz, features, feat_dim })
    }

    pub fn len(&self) -> usize {
        self.xyz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xyz.is_empty()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feat_dim..(i + 1) * self.feat_dim]
    }

    pub fn validate(&self) -> Result<()> {
        if self.xyz.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("cloud contains non-finite coordinates".into()));
        }
        if self.features.len() != self.len() * self.feat_dim {
            return Err(Error::Shape("features not row-aligned with xyz".into()));
        }
        Ok(())
    }

    /// Shift every point by `delta` (features untouched).
    pub fn translated(&self, delta: [f64; 3]) -> PointCloud {
        let xyz = self
            .xyz
            .iter()
            .map(|p| [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]])
            .collect();
        PointCloud { xyz, features: self.features.clone(), feat_dim: self.feat_dim }
    }
}

// ── KITTI-style .bin ─────────────────────────────────────────────────

const RECORD_BYTES: usize = 16; // four little-endian f32: x, y, z, intensity

/// Parse little-endian (x, y, z, intensity) f32 records. Intensity lands in
/// the single feature channel.
pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_kitti_bytes(&bytes)
}

pub fn parse_kitti_bytes(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of 16-byte point records",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut xyz = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(RECORD_BYTES) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        xyz.push([f(0), f(1), f(2)]);
        intensity.push(f(3));
    }
    PointCloud::with_features(xyz, intensity, 1)
}

/// Inverse of `read_kitti_bin`; byte-identical round trip for well-formed
/// files. Clouds without a feature channel write zero intensity.
pub fn write_kitti_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    out.write_all(&kitti_bytes(cloud)?)?;
    Ok(())
}

pub fn kitti_bytes(cloud: &PointCloud) -> Result<Vec<u8>> {
    if cloud.feat_dim > 1 {
        return Err(Error::Format(format!(
            "kitti records hold one intensity channel, cloud has {}",
            cloud.feat_dim
        )));
    }
    let mut bytes = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for (i, p) in cloud.xyz.iter().enumerate() {
        let intensity = if cloud.feat_dim == 1 { cloud.features[i] } else { 0.0 };
        for v in [p[0], p[1], p[2], intensity] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(bytes)
}

/// Fixed-size resample: without replacement when the cloud is large enough,
/// with replacement otherwise.
pub fn sample_n_points(cloud: &PointCloud, n: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::Empty("cannot sample from an empty cloud".into()));
    }
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let picks: Vec<usize> = if cloud.len() >= n {
        // Partial Fisher-Yates over an index array.
        let mut idx: Vec<usize> = (0..cloud.len()).collect();
        for i in 0..n {
            let j = rng.gen_range(i..idx.len());
            idx.swap(i, j);
        }
        idx.truncate(n);
        idx
    } else {
        (0..n).map(|_| rng.gen_range(0..cloud.len())).collect()
    };
    let xyz = picks.iter().map(|&i| cloud.xyz[i]).collect();
    let mut features = Vec::with_capacity(n * cloud.feat_dim);
    for &i in &picks {
        features.extend_from_slice(cloud.feature_row(i));
    }
    PointCloud::with_features(xyz, features, cloud.feat_dim)
}

// ── boxes and scenes ─────────────────────────────────────────────────

/// Oriented 3D box: size is (length, height, width); yaw rotates about +z.
/// At yaw 0, length runs along x, width along y, height along z.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Box3 {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
    pub class_id: u32,
}

impl Box3 {
    /// Membership in the yaw-aligned frame; faces count as inside.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let (s, c) = self.yaw.sin_cos();
        let lx = c * d[0] + s * d[1];
        let ly = -s * d[0] + c * d[1];
        lx.abs() <= self.size[0] / 2.0 + BOX_EPS
            && ly.abs() <= self.size[2] / 2.0 + BOX_EPS
            && d[2].abs() <= self.size[1] / 2.0 + BOX_EPS
    }

    fn to_world(&self, local: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * local[0] - s * local[1],
            self.center[1] + s * local[0] + c * local[1],
            self.center[2] + local[2],
        ]
    }

    /// Uniform point on the box surface (faces weighted by area).
    fn sample_surface(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let (l, h, w) = (self.size[0], self.size[1], self.size[2]);
        let areas = [l * w, l * w, l * h, l * h, w * h, w * h]; // top,bottom,2x side,2x end
        let total: f64 = areas.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        let mut face = 0;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let u = rng.gen_range(-0.5..0.5);
        let v = rng.gen_range(-0.5..0.5);
        let local = match face {
            0 => [u * l, v * w, h / 2.0],
            1 => [u * l, v * w, -h / 2.0],
            2 => [u * l, w / 2.0, v * h],
            3 => [u * l, -w / 2.0, v * h],
            4 => [l / 2.0, u * w, v * h],
            _ => [-l / 2.0, u * w, v * h],
        };
        self.to_world(local)
    }
}

/// Generator parameters, echoed verbatim into every scene file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    pub range_min_m: f64,
    pub range_max_m: f64,
    pub num_objects: usize,
    /// Points-per-object law: n(r) = points_at_10m * (10 / r)^2, clamped
    /// below by `min_points_per_object`.
    pub points_at_10m: usize,
    pub min_points_per_object: usize,
    /// Unlabeled ground clutter points added uniformly over the area.
    pub noise_floor: usize,
    /// Mean (length, height, width) of generated boxes, jittered +-10%.
    pub box_size_mean: [f64; 3],
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            range_min_m: 6.0,
            range_max_m: 40.0,
            num_objects: 4,
            points_at_10m: 600,
            min_points_per_object: 20,
            noise_floor: 800,
            box_size_mean: [3.9, 1.56, 1.6],
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_min_m > 0.0 && self.range_max_m > self.range_min_m) {
            return Err(Error::Config("scene ranges must satisfy 0 < min < max".into()));
        }
        if self.box_size_mean.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("box sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn points_for_range(&self, r: f64) -> usize {
        let n = self.points_at_10m as f64 * (10.0 / r).powi(2);
        (n.round() as usize).max(self.min_points_per_object)
    }
}

/// A generated cloud with ground-truth boxes and per-point membership:
/// `labels[i] = Some(b)` means point i was emitted on the surface of box b.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub boxes: Vec<Box3>,
    pub labels: Vec<Option<usize>>,
}

/// On-disk scene document; the spec echo makes reruns reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneFile {
    pub spec: SceneSpec,
    pub seed: u64,
    pub scene_index: u64,
    pub scene: SyntheticScene,
}

/// Place objects at sampled ranges with point counts following the
/// inverse-square law, surface-sample their boxes, then add ground clutter.
pub fn generate_scene(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut xyz = Vec::new();
    let mut intensity = Vec::new();
    let mut labels = Vec::new();
    let mut boxes = Vec::new();

    for b in 0..spec.num_objects {
        let r = rng.gen_range(spec.range_min_m..spec.range_max_m);
        let azimuth = rng.gen_range(-std::f64::consts::FRAC_PI_3..std::f64::consts::FRAC_PI_3);
        let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(0.9..1.1);
        let size = [
            spec.box_size_mean[0] * jitter(rng),
            spec.box_size_mean[1] * jitter(rng),
            spec.box_size_mean[2] * jitter(rng),
        ];
        let bx = Box3 {
            center: [r * azimuth.cos(), r * azimuth.sin(), size[1] / 2.0],
            size,
            yaw: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            class_id: 0,
        };
        let count = spec.points_for_range(r);
        for _ in 0..count {
            xyz.push(bx.sample_surface(rng));
            intensity.push(rng.gen_range(0.0..1.0));
            labels.push(Some(b));
        }
        boxes.push(bx);
    }

    for _ in 0..spec.noise_floor {
        let r = rng.gen_range(1.0..spec.range_max_m * 1.2);
        let azimuth = rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
        xyz.push([r * azimuth.cos(), r * azimuth.sin(), rng.gen_range(-0.2..0.2)]);
        intensity.push(rng.gen_range(0.0..1.0));
        labels.push(None);
    }

    let cloud = PointCloud::with_features(xyz, intensity, 1)?;
    if cloud.is_empty() {
        return Err(Error::Empty("scene spec generated zero points".into()));
    }
    Ok(SyntheticScene { cloud, boxes, labels })
}

/// Deterministic batch generation; scene i always comes from sub-stream i,
/// so the result is the same serial or parallel. DPN_THREADS (via the
/// caller's rayon pool) caps the worker count.
pub fn generate_scenes(spec: &SceneSpec, count: usize, seed: u64) -> Result<Vec<SyntheticScene>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_scene(spec, &mut rng::indexed(seed, "scene", i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        rng::named(seed, "test")
    }

    #[test]
    fn kitti_single_record() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = parse_kitti_bytes(&bytes).unwrap();
        assert_eq!(cloud.len(), 1);
        assert_eq!(cloud.xyz[0], [1.0, 2.0, 3.0]);
        assert_eq!(cloud.feature_row(0), &[0.5]);
    }

    #[test]
    fn kitti_empty_file_is_empty_cloud() {
        let cloud = parse_kitti_bytes(&[]).unwrap();
        assert_eq!(cloud.len(), 0);
    }

    #[test]
    fn kitti_misaligned_file_rejected() {
        let err = parse_kitti_bytes(&[0u8; 17]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn kitti_roundtrip_byte_identical() {
        let mut bytes = Vec::new();
        let mut r = rng(3);
        for _ in 0..64 {
            bytes.extend_from_slice(&(r.gen_range(-50.0f32..50.0)).to_le_bytes());
        }
        let cloud = parse_kitti_bytes(&bytes).unwrap();
        assert_eq!(kitti_bytes(&cloud).unwrap(), bytes);
    }

    #[test]
    fn sample_exact_size_is_permutation() {
        let cloud = PointCloud::new((0..5).map(|i| [i as f64, 0.0, 0.0]).collect());
        let got = sample_n_points(&cloud, 5, &mut rng(1)).unwrap();
        let mut xs: Vec<i64> = got.xyz.iter().map(|p| p[0] as i64).collect();
        xs.sort_unstable();
        assert_eq!(xs, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn sample_small_cloud_uses_replacement() {
        let cloud = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let got = sample_n_points(&cloud, 4, &mut rng(2)).unwrap();
        assert_eq!(got.len(), 4);
        assert!(got.xyz.iter().all(|p| p[0] == 0.0 || p[0] == 1.0));
    }

    #[test]
    fn sample_is_deterministic() {
        let cloud = PointCloud::new((0..100).map(|i| [i as f64, 0.0, 0.0]).collect());
        let a = sample_n_points(&cloud, 10, &mut rng(7)).unwrap();
        let b = sample_n_points(&cloud, 10, &mut rng(7)).unwrap();
        assert_eq!(a.xyz, b.xyz);
    }

    #[test]
    fn sample_empty_cloud_errors() {
        let cloud = PointCloud::new(vec![]);
        assert!(sample_n_points(&cloud, 1, &mut rng(0)).is_err());
    }

    #[test]
    fn box_membership_respects_yaw() {
        let bx = Box3 {
            center: [10.0, 0.0, 1.0],
            size: [4.0, 2.0, 2.0],
            yaw: std::f64::consts::FRAC_PI_2,
            class_id: 0,
        };
        // Length now runs along y.
        assert!(bx.contains([10.0, 1.9, 1.0]));
        assert!(!bx.contains([11.9, 0.0, 1.0]));
    }

    #[test]
    fn scene_with_no_objects_is_pure_clutter() {
        let spec = SceneSpec { num_objects: 0, noise_floor: 100, ..SceneSpec::default() };
        let scene = generate_scene(&spec, &mut rng(5)).unwrap();
        assert_eq!(scene.cloud.len(), 100);
        assert!(scene.boxes.is_empty());
        assert!(scene.labels.iter().all(|l| l.is_none()));
    }

    #[test]
    fn labeled_points_lie_inside_their_boxes() {
        let scene = generate_scene(&SceneSpec::default(), &mut rng(11)).unwrap();
        for (i, label) in scene.labels.iter().enumerate() {
            if let Some(b) = label {
                assert!(
                    scene.boxes[*b].contains(scene.cloud.xyz[i]),
                    "point {i} escaped box {b}"
                );
            }
        }
    }

    #[test]
    fn near_object_has_inverse_square_point_count() {
        // Two identical objects at 10 m and 40 m: expect ~16x the points.
        let spec = SceneSpec::default();
        assert_eq!(spec.points_for_range(10.0), 600);
        assert_eq!(spec.points_for_range(40.0), 38); // 600/16 rounded
        let ratio = spec.points_for_range(10.0) as f64 / spec.points_for_range(40.0) as f64;
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn degenerate_box_size_rejected() {
        let spec = SceneSpec { box_size_mean: [0.0, 1.0, 1.0], ..SceneSpec::default() };
        assert!(generate_scene(&spec, &mut rng(0)).is_err());
    }

    #[test]
    fn batch_generation_matches_serial_streams() {
        let spec = SceneSpec::default();
        let batch = generate_scenes(&spec, 3, 9).unwrap();
        for (i, scene) in batch.iter().enumerate() {
            let solo = generate_scene(&spec, &mut rng::indexed(9, "scene", i as u64)).unwrap();
            assert_eq!(scene.cloud.xyz, solo.cloud.xyz);
        }
    }

    #[test]
    fn density_law_regresses_against_inverse_square() {
        // Per-object counts across many scenes vs 1/r^2: R^2 above 0.9.
        let spec = SceneSpec::default();
        let mut xs = Vec::new(); // 1/r^2
        let mut ys = Vec::new(); // observed count
        for s in 0..100 {
            let scene = generate_scene(&spec, &mut rng::indexed(13, "density", s)).unwrap();
            for (b, bx) in scene.boxes.iter().enumerate() {
                let r = (bx.center[0].powi(2) + bx.center[1].powi(2)).sqrt();
                let n = scene.labels.iter().filter(|l| **l == Some(b)).count();
                xs.push(1.0 / (r * r));
                ys.push(n as f64);
            }
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let r2 = sxy * sxy / (sxx * syy);
        assert!(r2 > 0.9, "R^2 = {r2}");
    }
}

//! Farthest point sampling and fixed-radius ball query.
//!
//! Both are brute force by design: they are the reference implementations
//! that everything else is validated against, and at the scales this crate
//! targets they are fast enough. Every invocation bumps a thread-local
//! counter so single-pass-vs-per-layer sampling claims can be asserted and
//! benchmarked rather than assumed.

use std::cell::Cell;

use rand::Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng;

thread_local! {
    static FPS_CALLS: Cell<u64> = const { Cell::new(0) };
    static BALL_QUERY_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of (fps_calls, ball_query_calls) on this thread.
pub fn counters() -> (u64, u64) {
    (FPS_CALLS.with(Cell::get), BALL_QUERY_CALLS.with(Cell::get))
}

pub fn reset_counters() {
    FPS_CALLS.with(|c| c.set(0));
    BALL_QUERY_CALLS.with(|c| c.set(0));
}

#[inline]
fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Seeds chosen by farthest point sampling, with cached coordinates.
#[derive(Clone, Debug)]
pub struct SeedSet {
    pub indices: Vec<usize>,
    pub xyz: Vec<[f64; 3]>,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Greedy max-min selection: the next seed maximizes its minimum distance
/// to the seeds already chosen; ties break to the lowest index. O(N*m)
/// with an incremental min-distance array.
pub fn farthest_point_sampling(cloud: &PointCloud, m: usize, start_index: usize) -> Result<SeedSet> {
    FPS_CALLS.with(|c| c.set(c.get() + 1));
    let n = cloud.len();
    if m == 0 || m > n {
        return Err(Error::Config(format!("cannot pick {m} seeds from {n} points")));
    }
    if start_index >= n {
        return Err(Error::Config(format!("start index {start_index} out of range for {n} points")));
    }
    let mut indices = Vec::with_capacity(m);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start_index;
    indices.push(current);
    for _ in 1..m {
        let cur_xyz = cloud.xyz[current];
        let mut best = 0;
        let mut best_d2 = f64::NEG_INFINITY;
        for i in 0..n {
            let d = dist2(cloud.xyz[i], cur_xyz);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d2 {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        current = best;
        indices.push(current);
    }
    let xyz = indices.iter().map(|&i| cloud.xyz[i]).collect();
    Ok(SeedSet { indices, xyz })
}

/// Fixed-length neighbor table: exactly `k` source indices per seed, with a
/// flag per slot marking entries that were duplicated to fill the quota.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    pub k: usize,
    indices: Vec<usize>,
    duplicated: Vec<bool>,
}

impl NeighborList {
    /// Assemble a table from flat slot data (used by tests that permute or
    /// hand-build neighbor layouts).
    pub fn from_parts(k: usize, indices: Vec<usize>, duplicated: Vec<bool>) -> Result<Self> {
        if k == 0 || indices.len() % k != 0 || indices.len() != duplicated.len() {
            return Err(Error::Shape("neighbor table data does not tile k slots per seed".into()));
        }
        Ok(NeighborList { k, indices, duplicated })
    }

    pub fn num_seeds(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn neighbors(&self, seed: usize) -> &[usize] {
        &self.indices[seed * self.k..(seed + 1) * self.k]
    }

    pub fn duplicate_flags(&self, seed: usize) -> &[bool] {
        &self.duplicated[seed * self.k..(seed + 1) * self.k]
    }

    pub fn flat_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn flat_duplicates(&self) -> &[bool] {
        &self.duplicated
    }
}

/// Collect each seed's in-radius points (<= radius, ascending source index).
/// Short lists are topped up by uniform resampling from the found set; a
/// seed with no in-radius points fills all slots with itself. Slot draws
/// for seed i come from counter-based sub-stream i, so results do not
/// depend on evaluation order.
pub fn ball_query(
    cloud: &PointCloud,
    seeds: &SeedSet,
    radius_m: f64,
    k: usize,
    seed_rng: u64,
) -> Result<NeighborList> {
    BALL_QUERY_CALLS.with(|c| c.set(c.get() + 1));
    if radius_m <= 0.0 {
        return Err(Error::Config(format!("ball query radius must be positive, got {radius_m}")));
    }
    if k == 0 {
        return Err(Error::Config("ball query needs k >= 1".into()));
    }
    let n = cloud.len();
    if let Some(&bad) = seeds.indices.iter().find(|&&i| i >= n) {
        return Err(Error::Config(format!("seed index {bad} out of range for {n} points")));
    }
    let r2 = radius_m * radius_m;
    let mut indices = Vec::with_capacity(seeds.len() * k);
    let mut duplicated = Vec::with_capacity(seeds.len() * k);
    for (si, &seed_idx) in seeds.indices.iter().enumerate() {
        let s = seeds.xyz[si];
        let mut found = Vec::new();
        for (i, &p) in cloud.xyz.iter().enumerate() {
            if dist2(p, s) <= r2 {
                found.push(i);
                if found.len() == k {
                    break;
                }
            }
        }
        if found.is_empty() {
            // Can only happen for seeds not drawn from the cloud itself.
            found.push(seed_idx);
        }
        let real = found.len();
        indices.extend_from_slice(&found);
        duplicated.extend(std::iter::repeat(false).take(real));
        if real < k {
            let mut draws = rng::indexed(seed_rng, "ball_query", si as u64);
            for _ in real..k {
                indices.push(found[draws.gen_range(0..real)]);
                duplicated.push(true);
            }
        }
    }
    Ok(NeighborList { k, indices, duplicated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::Rng;

    fn cloud_of(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec())
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = rng::named(seed, "sampling-test");
        PointCloud::new(
            (0..n)
                .map(|_| [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)])
                .collect(),
        )
    }

    #[test]
    fn fps_picks_farthest_point() {
        let cloud = cloud_of(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let seeds = farthest_point_sampling(&cloud, 2, 0).unwrap();
        assert_eq!(seeds.indices, vec![0, 2]);
    }

    #[test]
    fn fps_full_selection_covers_all_indices() {
        let cloud = random_cloud(16, 1);
        let seeds = farthest_point_sampling(&cloud, 16, 0).unwrap();
        let mut sorted = seeds.indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn fps_rejects_oversized_request() {
        let cloud = random_cloud(4, 2);
        assert!(farthest_point_sampling(&cloud, 5, 0).is_err());
    }

    #[test]
    fn fps_matches_bruteforce_oracle() {
        for trial in 0..200 {
            let n = 2 + (trial % 63);
            let cloud = random_cloud(n, 100 + trial as u64);
            let m = 1 + (trial * 7) % n;
            let got = farthest_point_sampling(&cloud, m, 0).unwrap();
            let want = oracle::fps_greedy(&cloud.xyz, m, 0);
            assert_eq!(got.indices, want, "trial {trial} n {n} m {m}");
        }
    }

    #[test]
    fn fps_maxmin_property_holds() {
        for trial in 0..50 {
            let n = 4 + (trial % 61);
            let cloud = random_cloud(n, 500 + trial as u64);
            let m = 1 + (trial * 3) % n;
            let seeds = farthest_point_sampling(&cloud, m, 0).unwrap();
            // At each step, the chosen point's min-distance to the prefix
            // must be >= that of every other point.
            for step in 1..m {
                let prefix = &seeds.indices[..step];
                let min_to = |p: usize| {
                    prefix
                        .iter()
                        .map(|&s| dist2(cloud.xyz[p], cloud.xyz[s]))
                        .fold(f64::INFINITY, f64::min)
                };
                let chosen = min_to(seeds.indices[step]);
                for p in 0..n {
                    if !seeds.indices[..=step].contains(&p) {
                        assert!(min_to(p) <= chosen + 1e-15, "step {step} point {p}");
                    }
                }
            }
        }
    }

    #[test]
    fn ball_query_returns_only_in_radius_points() {
        let cloud = cloud_of(&[[0.0; 3], [0.5, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let seeds = SeedSet { indices: vec![0], xyz: vec![[0.0; 3]] };
        let nbrs = ball_query(&cloud, &seeds, 1.0, 1, 0).unwrap();
        assert_eq!(nbrs.neighbors(0), &[0]); // ascending index order: seed itself first
        let nbrs = ball_query(&cloud, &seeds, 1.0, 2, 0).unwrap();
        assert_eq!(nbrs.neighbors(0), &[0, 1]);
    }

    #[test]
    fn ball_query_fallback_duplicates_from_found_set() {
        let cloud = cloud_of(&[[0.0; 3], [0.5, 0.0, 0.0], [9.0, 0.0, 0.0]]);
        let seeds = SeedSet { indices: vec![0], xyz: vec![[0.0; 3]] };
        let nbrs = ball_query(&cloud, &seeds, 1.0, 5, 0).unwrap();
        assert_eq!(nbrs.neighbors(0).len(), 5);
        assert!(nbrs.neighbors(0).iter().all(|&i| i == 0 || i == 1));
        let dup_count = nbrs.duplicate_flags(0).iter().filter(|&&d| d).count();
        assert_eq!(dup_count, 3);
    }

    #[test]
    fn ball_query_isolated_seed_fills_with_itself() {
        // A detached seed position (not from the cloud) with nothing in radius.
        let cloud = cloud_of(&[[10.0, 0.0, 0.0], [11.0, 0.0, 0.0]]);
        let seeds = SeedSet { indices: vec![0], xyz: vec![[-10.0, 0.0, 0.0]] };
        let nbrs = ball_query(&cloud, &seeds, 1.0, 3, 0).unwrap();
        assert_eq!(nbrs.neighbors(0), &[0, 0, 0]);
        assert_eq!(nbrs.duplicate_flags(0), &[false, true, true]);
    }

    #[test]
    fn ball_query_matches_bruteforce_radius_oracle() {
        for trial in 0..200u64 {
            let n = 2 + (trial as usize % 63);
            let cloud = random_cloud(n, 900 + trial);
            let m = 1 + (trial as usize % n.min(8));
            let seeds = farthest_point_sampling(&cloud, m, 0).unwrap();
            let k = 1 + (trial as usize % 8);
            let radius = 1.0 + (trial % 5) as f64;
            let nbrs = ball_query(&cloud, &seeds, radius, k, trial).unwrap();
            for (si, &_sidx) in seeds.indices.iter().enumerate() {
                let want = oracle::in_radius_ascending(&cloud.xyz, seeds.xyz[si], radius, k);
                let mut got: Vec<usize> = nbrs.neighbors(si).to_vec();
                got.sort_unstable();
                got.dedup();
                let mut want_sorted = want.clone();
                want_sorted.sort_unstable();
                assert_eq!(got, want_sorted, "trial {trial} seed {si}");
            }
        }
    }

    #[test]
    fn ball_query_soundness_and_determinism() {
        let cloud = random_cloud(64, 77);
        let seeds = farthest_point_sampling(&cloud, 9, 0).unwrap();
        let a = ball_query(&cloud, &seeds, 2.5, 6, 42).unwrap();
        let b = ball_query(&cloud, &seeds, 2.5, 6, 42).unwrap();
        assert_eq!(a, b);
        for si in 0..seeds.len() {
            for &p in a.neighbors(si) {
                let d = dist2(cloud.xyz[p], seeds.xyz[si]).sqrt();
                assert!(d <= 2.5 + 1e-9);
            }
        }
    }

    #[test]
    fn returned_structures_are_translation_invariant() {
        let cloud = random_cloud(48, 31);
        let moved = cloud.translated([100.0, -40.0, 7.0]);
        let a = farthest_point_sampling(&cloud, 10, 0).unwrap();
        let b = farthest_point_sampling(&moved, 10, 0).unwrap();
        assert_eq!(a.indices, b.indices);
        let na = ball_query(&cloud, &a, 2.0, 5, 3).unwrap();
        let sb = SeedSet { indices: b.indices.clone(), xyz: b.indices.iter().map(|&i| moved.xyz[i]).collect() };
        let nb = ball_query(&moved, &sb, 2.0, 5, 3).unwrap();
        assert_eq!(na, nb);
    }

    #[test]
    fn counters_track_invocations() {
        reset_counters();
        let cloud = random_cloud(32, 5);
        let seeds = farthest_point_sampling(&cloud, 4, 0).unwrap();
        let _ = ball_query(&cloud, &seeds, 2.0, 4, 0).unwrap();
        let _ = ball_query(&cloud, &seeds, 2.0, 4, 0).unwrap();
        assert_eq!(counters(), (1, 2));
        reset_counters();
        assert_eq!(counters(), (0, 0));
    }
}

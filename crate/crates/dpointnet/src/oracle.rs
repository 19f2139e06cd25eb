//! Independent reference implementations.
//!
//! Everything here is deliberately naive: full recomputation, per-seed
//! explicit loops, plain `Vec<f64>` rows, no tape and no shared kernels.
//! The fast paths in `sampling` and `operator` are validated against these
//! in unit tests, in the check suite, and in the acceptance suite.

use crate::operator::Scheme;

fn d2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy farthest point sampling that rescans every pairwise distance at
/// every step. Ties break to the lowest index.
pub fn fps_greedy(points: &[[f64; 3]], m: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < m {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..points.len() {
            if chosen.contains(&i) {
                continue;
            }
            let mind = chosen
                .iter()
                .map(|&s| d2(points[i], points[s]))
                .fold(f64::INFINITY, f64::min);
            if mind > best_d {
                best_d = mind;
                best = i;
            }
        }
        chosen.push(best);
    }
    chosen
}

/// All indices within `radius` of `center` in ascending order, truncated
/// to the first `k`.
pub fn in_radius_ascending(points: &[[f64; 3]], center: [f64; 3], radius: f64, k: usize) -> Vec<usize> {
    let r2 = radius * radius;
    (0..points.len())
        .filter(|&i| d2(points[i], center) <= r2)
        .take(k)
        .collect()
}

/// One affine layer in plain lists: out[c] = b[c] + sum_i x[i] * w[i][c].
#[derive(Clone, Debug)]
pub struct LoopLayer {
    pub w: Vec<Vec<f64>>, // [c_in][c_out]
    pub b: Vec<f64>,
    pub relu: bool,
}

impl LoopLayer {
    fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        let c_out = self.b.len();
        let mut out = self.b.clone();
        for (i, &x) in row.iter().enumerate() {
            for c in 0..c_out {
                out[c] += x * self.w[i][c];
            }
        }
        if self.relu {
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        out
    }
}

fn colwise_max(rows: &[Vec<f64>]) -> Vec<f64> {
    let c = rows[0].len();
    let mut out = vec![f64::NEG_INFINITY; c];
    for row in rows {
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            if v > *o {
                *o = v;
            }
        }
    }
    out
}

/// Smallest gap between the winner and the runner-up across every pooled
/// channel of the whole stack. Finite-difference trials use this to reject
/// instances where a max could flip under perturbation. Single-row pools
/// have no runner-up and do not constrain the gap.
pub fn fa_min_pool_gap(scheme: Scheme, groups: &[Vec<Vec<f64>>], layers: &[LoopLayer]) -> f64 {
    let mut min_gap = f64::INFINITY;
    let mut observe = |rows: &[Vec<f64>]| {
        if rows.len() < 2 {
            return;
        }
        for c in 0..rows[0].len() {
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for row in rows {
                let v = row[c];
                if v > best {
                    second = best;
                    best = v;
                } else if v > second {
                    second = v;
                }
            }
            if best - second < min_gap {
                min_gap = best - second;
            }
        }
    };
    // Re-run the stack, probing each pooled row set.
    match scheme {
        Scheme::Append => {
            let mut state: Vec<Vec<Vec<f64>>> = groups.to_vec();
            for layer in layers {
                let first = state.remove(0);
                let transformed: Vec<Vec<f64>> = first.iter().map(|r| layer.apply_row(r)).collect();
                observe(&transformed);
                let tap = colwise_max(&transformed);
                for g in &mut state {
                    *g = g.iter().map(|r| layer.apply_row(r)).collect();
                }
                if let Some(next) = state.first_mut() {
                    next.push(tap);
                }
            }
        }
        Scheme::CoordConcat | Scheme::FeatConcat => {
            let mut taps: Vec<Vec<f64>> = Vec::new();
            for (g, layer) in groups.iter().zip(layers) {
                let rows: Vec<Vec<f64>> = g
                    .iter()
                    .map(|r| {
                        let mut row = r.clone();
                        match scheme {
                            Scheme::CoordConcat => {
                                if let Some(t) = taps.last() {
                                    row.extend_from_slice(t);
                                }
                            }
                            _ => {
                                for t in &taps {
                                    row.extend_from_slice(t);
                                }
                            }
                        }
                        row
                    })
                    .collect();
                let transformed: Vec<Vec<f64>> = rows.iter().map(|r| layer.apply_row(r)).collect();
                observe(&transformed);
                taps.push(colwise_max(&transformed));
            }
        }
    }
    min_gap
}

/// Straight-line evaluation of the fusion-layer stack for a single seed.
///
/// `groups[g]` holds the raw rows of group g. For `CoordConcat` the rows of
/// groups past the first must already be coordinate-only. Returns one tap
/// per layer: the pooled feature of the group consumed at that layer, after
/// its transform, carrying the fused information of all earlier groups.
pub fn fa_taps_one_seed(
    scheme: Scheme,
    groups: &[Vec<Vec<f64>>],
    layers: &[LoopLayer],
) -> Vec<Vec<f64>> {
    assert_eq!(groups.len(), layers.len(), "one layer consumes one group");
    let mut taps: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    match scheme {
        Scheme::Append => {
            let mut state: Vec<Vec<Vec<f64>>> = groups.to_vec();
            for layer in layers {
                let first = state.remove(0);
                let transformed: Vec<Vec<f64>> = first.iter().map(|r| layer.apply_row(r)).collect();
                let tap = colwise_max(&transformed);
                for g in &mut state {
                    *g = g.iter().map(|r| layer.apply_row(r)).collect();
                }
                if let Some(next) = state.first_mut() {
                    next.push(tap.clone());
                }
                taps.push(tap);
            }
        }
        Scheme::CoordConcat => {
            let mut carry: Option<Vec<f64>> = None;
            for (g, layer) in groups.iter().zip(layers) {
                let rows: Vec<Vec<f64>> = g
                    .iter()
                    .map(|r| {
                        let mut row = r.clone();
                        if let Some(c) = &carry {
                            row.extend_from_slice(c);
                        }
                        row
                    })
                    .collect();
                let transformed: Vec<Vec<f64>> = rows.iter().map(|r| layer.apply_row(r)).collect();
                let tap = colwise_max(&transformed);
                carry = Some(tap.clone());
                taps.push(tap);
            }
        }
        Scheme::FeatConcat => {
            // Every remaining group receives every earlier tap, so the
            // group consumed at layer l carries taps 0..l in order.
            for (g, layer) in groups.iter().zip(layers) {
                let rows: Vec<Vec<f64>> = g
                    .iter()
                    .map(|r| {
                        let mut row = r.clone();
                        for t in &taps {
                            row.extend_from_slice(t);
                        }
                        row
                    })
                    .collect();
                let transformed: Vec<Vec<f64>> = rows.iter().map(|r| layer.apply_row(r)).collect();
                taps.push(colwise_max(&transformed));
            }
        }
    }
    taps
}

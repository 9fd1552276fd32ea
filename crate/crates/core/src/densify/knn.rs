//! Nearest-neighbor distances on a uniform hash grid.

use std::collections::HashMap;

use crate::geometry::Vec3;

type Cell = [i64; 3];

/// Mean Euclidean distance from each point to its `k` nearest other points.
/// Points with no neighbors get `None`.
pub fn mean_neighbor_distance(points: &[Vec3], k: usize) -> Vec<Option<f64>> {
    let n = points.len();
    if n < 2 || k == 0 {
        return vec![None; n];
    }
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = hi - lo;
    let volume: f64 = extent.iter().map(|e| e.max(1e-9)).product();
    // Aim for a handful of points per occupied cell.
    let cell = (4.0 * volume / n as f64).cbrt().max(extent.max() / 1024.0).max(1e-9);
    let key = |p: &Vec3| -> Cell { [0, 1, 2].map(|a| ((p[a] - lo[a]) / cell).floor() as i64) };
    let mut grid: HashMap<Cell, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let max_ring = (extent.max() / cell).ceil() as i64 + 1;
    let k = k.min(n - 1);

    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = key(p);
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            for ring in 0..=max_ring {
                let shell = (2 * ring + 1).pow(3) - (2 * ring - 1).max(0).pow(3);
                if shell as usize > grid.len() {
                    // Sparse neighborhood: scanning everything is cheaper than the shell.
                    best.clear();
                    for (j, q) in points.iter().enumerate() {
                        if j != i {
                            best.push((q - p).norm());
                        }
                    }
                    best.sort_by(f64::total_cmp);
                    best.truncate(k);
                    break;
                }
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        for dz in -ring..=ring {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                                continue;
                            }
                            let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else { continue };
                            for &j in ids {
                                if j == i {
                                    continue;
                                }
                                let d = (points[j] - p).norm();
                                if best.len() < k || d < best[k - 1] {
                                    let pos = best.partition_point(|&b| b <= d);
                                    best.insert(pos, d);
                                    best.truncate(k);
                                }
                            }
                        }
                    }
                }
                // Anything outside this ring is at least `ring * cell` away.
                if best.len() == k && best[k - 1] <= ring as f64 * cell {
                    break;
                }
            }
            Some(best.iter().sum::<f64>() / best.len() as f64)
        })
        .collect()
}

//! Multi-resolution hash-grid encoding over the unit cube.

use crate::geometry::Vec3;

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Debug, PartialEq)]
pub struct HashGrid {
    pub levels: usize,
    pub table_size: usize,
    pub features: usize,
    resolutions: Vec<u32>,
    dense: Vec<bool>,
}

/// Corner indices and trilinear weights of one lookup, kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct GridLookup {
    /// Parameter offset of feature 0 for each (level, corner).
    pub index: Vec<u32>,
    pub weight: Vec<f64>,
    pub frac: Vec<[f64; 3]>,
}

impl HashGrid {
    pub fn new(levels: usize, log2_table_size: u32, features: usize, base_resolution: f64, max_resolution: f64) -> Self {
        assert!(levels >= 1 && features >= 1);
        let table_size = 1usize << log2_table_size;
        let growth = if levels > 1 {
            ((max_resolution / base_resolution).ln() / (levels - 1) as f64).exp()
        } else {
            1.0
        };
        let resolutions: Vec<u32> = (0..levels)
            .map(|l| ((base_resolution * growth.powi(l as i32) + 1e-6).floor() as u32).max(1))
            .collect();
        let dense = resolutions
            .iter()
            .map(|&n| (n as u64 + 1).pow(3) <= table_size as u64)
            .collect();
        Self {
            levels,
            table_size,
            features,
            resolutions,
            dense,
        }
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn param_count(&self) -> usize {
        self.levels * self.table_size * self.features
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features
    }

    fn entry(&self, level: usize, c: [u32; 3]) -> usize {
        let n = self.resolutions[level] + 1;
        let slot = if self.dense[level] {
            (c[0] + c[1] * n + c[2] * n * n) as usize
        } else {
            let h = c[0].wrapping_mul(PRIMES[0]) ^ c[1].wrapping_mul(PRIMES[1]) ^ c[2].wrapping_mul(PRIMES[2]);
            h as usize % self.table_size
        };
        (level * self.table_size + slot) * self.features
    }

    /// Interpolated features at `u` in `[0, 1]^3`, written to `out` (`levels * features`).
    pub fn encode(&self, params: &[f64], u: &Vec3, out: &mut [f64], lookup: &mut GridLookup) {
        lookup.index.clear();
        lookup.weight.clear();
        lookup.frac.clear();
        out.iter_mut().for_each(|v| *v = 0.0);
        for level in 0..self.levels {
            let n = self.resolutions[level];
            let mut cell = [0u32; 3];
            let mut frac = [0.0; 3];
            for a in 0..3 {
                let s = u[a].clamp(0.0, 1.0) * n as f64;
                let c = (s.floor() as u32).min(n - 1);
                cell[a] = c;
                frac[a] = s - c as f64;
            }
            lookup.frac.push(frac);
            for corner in 0..8u32 {
                let mut w = 1.0;
                let mut c = cell;
                for a in 0..3 {
                    if corner >> a & 1 == 1 {
                        c[a] += 1;
                        w *= frac[a];
                    } else {
                        w *= 1.0 - frac[a];
                    }
                }
                let idx = self.entry(level, c);
                for f in 0..self.features {
                    out[level * self.features + f] += w * params[idx + f];
                }
                lookup.index.push(idx as u32);
                lookup.weight.push(w);
            }
        }
    }

    /// Appends `(parameter index, gradient)` pairs for an upstream gradient on the encoding.
    pub fn backward(&self, lookup: &GridLookup, d_out: &[f64], grads: &mut Vec<(u32, f64)>) {
        for level in 0..self.levels {
            let g = &d_out[level * self.features..(level + 1) * self.features];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            for corner in 0..8 {
                let k = level * 8 + corner;
                let w = lookup.weight[k];
                for (f, gf) in g.iter().enumerate() {
                    grads.push((lookup.index[k] + f as u32, w * gf));
                }
            }
        }
    }

    /// Gradient of `d_out · encode(u)` with respect to `u`.
    pub fn spatial_gradient(&self, params: &[f64], lookup: &GridLookup, d_out: &[f64]) -> Vec3 {
        let mut du = Vec3::zeros();
        for level in 0..self.levels {
            let n = self.resolutions[level] as f64;
            let frac = lookup.frac[level];
            for corner in 0..8 {
                let k = level * 8 + corner;
                let idx = lookup.index[k] as usize;
                let value: f64 = (0..self.features)
                    .map(|f| d_out[level * self.features + f] * params[idx + f])
                    .sum();
                if value == 0.0 {
                    continue;
                }
                for a in 0..3 {
                    let mut dw = n;
                    for b in 0..3 {
                        let upper = corner >> b & 1 == 1;
                        dw *= match (a == b, upper) {
                            (true, true) => 1.0,
                            (true, false) => -1.0,
                            (false, true) => frac[b],
                            (false, false) => 1.0 - frac[b],
                        };
                    }
                    du[a] += dw * value;
                }
            }
        }
        du
    }
}

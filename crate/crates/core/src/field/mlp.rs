//! Small fully connected networks with ReLU hidden layers and a linear output.
//!
//! Weights live in a shared flat parameter vector: per layer, a row-major
//! `out x in` matrix followed by `out` biases.

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    /// Offset of the first weight in the flat parameter vector.
    pub offset: usize,
}

/// Per-layer activations from the last forward pass; `acts[0]` is the input.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    pub acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, offset: usize) -> Self {
        assert!(sizes.len() >= 2);
        Self { sizes, offset }
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Offset of layer `k`'s weight matrix; its biases follow immediately.
    pub fn layer_offset(&self, k: usize) -> usize {
        self.offset + self.sizes.windows(2).take(k).map(|w| w[0] * w[1] + w[1]).sum::<usize>()
    }

    pub fn new_cache(&self) -> MlpCache {
        MlpCache {
            acts: self.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: Vec::with_capacity(*self.sizes.iter().max().unwrap()),
            delta_prev: Vec::with_capacity(*self.sizes.iter().max().unwrap()),
        }
    }

    /// He-uniform hidden layers; the output layer is zero unless `random_output`.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng, random_output: bool) {
        for k in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let off = self.layer_offset(k);
            let last = k + 1 == self.layer_count();
            let bound = (6.0 / n_in as f64).sqrt();
            for w in &mut params[off..off + n_in * n_out] {
                *w = if last && !random_output {
                    0.0
                } else if last {
                    rng.random_range(-bound..bound) * 0.5
                } else {
                    rng.random_range(-bound..bound)
                };
            }
            params[off + n_in * n_out..off + n_in * n_out + n_out].fill(0.0);
        }
    }

    /// Runs the network on `cache.acts[0]`; the result is `cache.acts.last()`.
    pub fn forward(&self, params: &[f64], cache: &mut MlpCache) {
        for k in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let off = self.layer_offset(k);
            let w = &params[off..off + n_in * n_out];
            let b = &params[off + n_in * n_out..off + n_in * n_out + n_out];
            let relu = k + 1 < self.layer_count();
            let (prev, rest) = cache.acts.split_at_mut(k + 1);
            let input = &prev[k];
            let output = &mut rest[0];
            for (o, out) in output.iter_mut().enumerate() {
                let s = b[o] + dot(&w[o * n_in..(o + 1) * n_in], input);
                *out = if relu { s.max(0.0) } else { s };
            }
        }
    }

    pub fn output<'a>(&self, cache: &'a MlpCache) -> &'a [f64] {
        cache.acts.last().unwrap()
    }

    /// Accumulates parameter gradients into `grad` (indexed from `grad_base`)
    /// and writes the input gradient into `d_input` when given.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &mut MlpCache,
        d_output: &[f64],
        grad: &mut [f64],
        grad_base: usize,
        d_input: Option<&mut [f64]>,
    ) {
        let MlpCache { acts, delta, delta_prev } = cache;
        delta.clear();
        delta.extend_from_slice(d_output);
        for k in (0..self.layer_count()).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let off = self.layer_offset(k);
            if k + 1 < self.layer_count() {
                for (d, a) in delta.iter_mut().zip(&acts[k + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &acts[k];
            let g = &mut grad[off - grad_base..off - grad_base + n_in * n_out + n_out];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut g[o * n_in..(o + 1) * n_in];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
                g[n_in * n_out + o] += d;
            }
            if k == 0 && d_input.is_none() {
                break;
            }
            let w = &params[off..off + n_in * n_out];
            delta_prev.clear();
            delta_prev.resize(n_in, 0.0);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (dp, wi) in delta_prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *dp += d * wi;
                }
            }
            std::mem::swap(delta, delta_prev);
        }
        if let Some(d_input) = d_input {
            d_input.copy_from_slice(delta);
        }
    }
}

/// Dot product with eight independent partial sums, so the adds pipeline and vectorize.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let full = n / 8 * 8;
    let mut i = 0;
    while i < full {
        let (x, y) = (&a[i..i + 8], &b[i..i + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
        i += 8;
    }
    let mut tail = 0.0;
    for k in full..n {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output_layer_gives_zero_output() {
        let mlp = Mlp::new(vec![4, 8, 3], 0);
        let mut params = vec![0.0; mlp.param_count()];
        mlp.init(&mut params, &mut ChaCha8Rng::seed_from_u64(1), false);
        let mut cache = mlp.new_cache();
        cache.acts[0].copy_from_slice(&[0.3, -0.2, 0.9, 0.1]);
        mlp.forward(&params, &mut cache);
        assert_eq!(mlp.output(&cache), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mlp = Mlp::new(vec![5, 7, 6, 2], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = vec![0.0; 3 + mlp.param_count()];
        mlp.init(&mut params, &mut rng, true);
        for b in 0..mlp.layer_count() {
            let off = mlp.layer_offset(b) + mlp.sizes[b] * mlp.sizes[b + 1];
            for v in &mut params[off..off + mlp.sizes[b + 1]] {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        let input: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d_out = [0.7, -1.3];
        let loss = |p: &[f64], x: &[f64]| {
            let mut c = mlp.new_cache();
            c.acts[0].copy_from_slice(x);
            mlp.forward(p, &mut c);
            mlp.output(&c).iter().zip(&d_out).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut cache = mlp.new_cache();
        cache.acts[0].copy_from_slice(&input);
        mlp.forward(&params, &mut cache);
        let mut grad = vec![0.0; mlp.param_count()];
        let mut d_in = vec![0.0; 5];
        mlp.backward(&params, &mut cache, &d_out, &mut grad, 3, Some(&mut d_in));
        let h = 1e-6;
        for i in 0..mlp.param_count() {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp[3 + i] += h;
            pm[3 + i] -= h;
            let fd = (loss(&pp, &input) - loss(&pm, &input)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "param {i}: {fd} vs {}", grad[i]);
        }
        for i in 0..5 {
            let mut xp = input.clone();
            let mut xm = input.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&params, &xp) - loss(&params, &xm)) / (2.0 * h);
            assert!((fd - d_in[i]).abs() < 1e-6);
        }
    }
}

//! The radiance field: hash-grid encoding, density and color networks, ray
//! quadrature, and the view-dependent splat colors derived from it.

pub mod checkpoint;
pub mod colors;
pub mod hashgrid;
pub mod mlp;
pub mod render;
pub mod sh;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{contract, contract_jacobian, logit, sigmoid, softplus, SceneFrame, Vec3};
use hashgrid::{GridLookup, HashGrid};
use mlp::{Mlp, MlpCache};
use sh::{sh_basis, SH_DIM};

/// Width of the geometry feature passed from the density network to the color network.
pub const GEO_FEATURES: usize = 15;

/// How splat colors are formed from the field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorMode {
    /// `sigmoid(base logit + field logits)`.
    #[default]
    Residual,
    /// `sigmoid(field logits)`; the per-splat base color is ignored.
    FieldOnly,
}

impl fmt::Display for ColorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorMode::Residual => "residual",
            ColorMode::FieldOnly => "field-only",
        })
    }
}

impl FromStr for ColorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "residual" => Ok(ColorMode::Residual),
            "field-only" => Ok(ColorMode::FieldOnly),
            other => Err(format!("unknown color mode '{other}' (expected residual or field-only)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub levels: usize,
    pub log2_table_size: u32,
    pub features_per_level: usize,
    pub base_resolution: f64,
    pub max_resolution: f64,
    pub density_hidden: usize,
    pub color_hidden: usize,
    pub color_hidden_layers: usize,
    /// Added to the raw density before the softplus.
    pub density_bias: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            log2_table_size: 19,
            features_per_level: 2,
            base_resolution: 16.0,
            max_resolution: 2048.0,
            density_hidden: 64,
            color_hidden: 64,
            color_hidden_layers: 2,
            density_bias: -1.0,
        }
    }
}

/// Anything that can be volume rendered.
pub trait RadianceField: Sync {
    fn density(&self, x: &Vec3) -> f64;

    fn color(&self, x: &Vec3, d: &Vec3) -> Vec3;

    fn sample(&self, x: &Vec3, d: &Vec3) -> (f64, Vec3) {
        (self.density(x), self.color(x, d))
    }

    /// Base-color logits that make a new splat at `x` seen along `d` take the field's color.
    fn base_logit_for(&self, x: &Vec3, d: &Vec3) -> Vec3 {
        self.color(x, d).map(logit)
    }
}

/// Constant density and color everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantField {
    pub sigma: f64,
    pub rgb: Vec3,
}

impl ConstantField {
    pub fn empty() -> Self {
        Self {
            sigma: 0.0,
            rgb: Vec3::zeros(),
        }
    }
}

impl RadianceField for ConstantField {
    fn density(&self, _: &Vec3) -> f64 {
        self.sigma
    }

    fn color(&self, _: &Vec3, _: &Vec3) -> Vec3 {
        self.rgb
    }
}

/// Density `sigma` inside an axis-aligned box, zero outside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxField {
    pub min: Vec3,
    pub max: Vec3,
    pub sigma: f64,
    pub rgb: Vec3,
}

impl BoxField {
    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.max[a])
    }

    /// Euclidean distance from `x` to the box (zero inside).
    pub fn distance(&self, x: &Vec3) -> f64 {
        let d = Vec3::from_fn(|a, _| (self.min[a] - x[a]).max(0.0).max(x[a] - self.max[a]));
        d.norm()
    }
}

impl RadianceField for BoxField {
    fn density(&self, x: &Vec3) -> f64 {
        if self.contains(x) {
            self.sigma
        } else {
            0.0
        }
    }

    fn color(&self, _: &Vec3, _: &Vec3) -> Vec3 {
        self.rgb
    }
}

/// Density `sigma` where `start <= normal · x < start + thickness`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlabField {
    pub normal: Vec3,
    pub start: f64,
    pub thickness: f64,
    pub sigma: f64,
    pub rgb: Vec3,
}

impl RadianceField for SlabField {
    fn density(&self, x: &Vec3) -> f64 {
        let s = self.normal.dot(x);
        if s >= self.start && s < self.start + self.thickness {
            self.sigma
        } else {
            0.0
        }
    }

    fn color(&self, _: &Vec3, _: &Vec3) -> Vec3 {
        self.rgb
    }
}

/// Trainable field parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    pub config: FieldConfig,
    pub frame: SceneFrame,
    pub color_mode: ColorMode,
    /// Grid tables, then density network, then color network.
    pub weights: Vec<f64>,
    grid: HashGrid,
    density_net: Mlp,
    color_net: Mlp,
}

/// Scratch space and intermediates for one field evaluation.
#[derive(Clone, Debug)]
pub struct SampleCache {
    lookup: GridLookup,
    x_norm: Vec3,
    density: MlpCache,
    color: MlpCache,
    pre_activation: f64,
    has_color: bool,
    d_density_out: Vec<f64>,
    d_color_in: Vec<f64>,
    d_enc: Vec<f64>,
}

impl SampleCache {
    /// Whether the last evaluation ran the color network.
    pub fn has_color(&self) -> bool {
        self.has_color
    }
}

/// Field output at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    /// Color-network logits; zero when no direction was given.
    pub logits: Vec3,
}

impl FieldSample {
    pub fn rgb(&self) -> Vec3 {
        self.logits.map(sigmoid)
    }
}

/// Sparse grid gradient plus dense network gradient for one batch of work.
#[derive(Clone, Debug, Default)]
pub struct FieldGrad {
    pub grid: Vec<(u32, f64)>,
    pub nets: Vec<f64>,
}

impl FieldGrad {
    /// Adds this gradient into a dense buffer laid out like `FieldParams::weights`.
    pub fn add_to(&self, dense: &mut [f64], grid_len: usize) {
        for &(i, g) in &self.grid {
            dense[i as usize] += g;
        }
        for (d, g) in dense[grid_len..].iter_mut().zip(&self.nets) {
            *d += g;
        }
    }
}

/// Gradients flowing out of a field evaluation into its inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputGrad {
    pub position: Vec3,
    pub sh: [f64; SH_DIM],
}

impl FieldParams {
    /// Fresh parameters: tiny grid values, He-initialized hidden layers and
    /// zero output layers, so density is `softplus(bias)` and color logits are zero.
    pub fn new(config: FieldConfig, frame: SceneFrame, color_mode: ColorMode, seed: u64) -> Self {
        let mut field = Self::zeros(config, frame, color_mode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid_len = field.grid.param_count();
        for w in &mut field.weights[..grid_len] {
            *w = rng.random_range(-1e-4..1e-4);
        }
        field.density_net.init(&mut field.weights, &mut rng, false);
        field.color_net.init(&mut field.weights, &mut rng, false);
        field
    }

    /// Parameters with every block random, for exercising gradients.
    pub fn random(config: FieldConfig, frame: SceneFrame, color_mode: ColorMode, seed: u64) -> Self {
        let mut field = Self::zeros(config, frame, color_mode);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid_len = field.grid.param_count();
        for w in &mut field.weights[..grid_len] {
            *w = rng.random_range(-1.0..1.0);
        }
        field.density_net.init(&mut field.weights, &mut rng, true);
        field.color_net.init(&mut field.weights, &mut rng, true);
        for net in [&field.density_net, &field.color_net] {
            for k in 0..net.layer_count() {
                let off = net.layer_offset(k) + net.sizes[k] * net.sizes[k + 1];
                for b in &mut field.weights[off..off + net.sizes[k + 1]] {
                    *b = rng.random_range(-0.2..0.2);
                }
            }
        }
        field
    }

    pub fn zeros(config: FieldConfig, frame: SceneFrame, color_mode: ColorMode) -> Self {
        let grid = HashGrid::new(
            config.levels,
            config.log2_table_size,
            config.features_per_level,
            config.base_resolution,
            config.max_resolution,
        );
        let grid_len = grid.param_count();
        let density_net = Mlp::new(vec![grid.output_dim(), config.density_hidden, 1 + GEO_FEATURES], grid_len);
        let mut color_sizes = vec![GEO_FEATURES + SH_DIM];
        color_sizes.extend(std::iter::repeat_n(config.color_hidden, config.color_hidden_layers));
        color_sizes.push(3);
        let color_net = Mlp::new(color_sizes, grid_len + density_net.param_count());
        let total = grid_len + density_net.param_count() + color_net.param_count();
        Self {
            config,
            frame,
            color_mode,
            weights: vec![0.0; total],
            grid,
            density_net,
            color_net,
        }
    }

    pub fn grid(&self) -> &HashGrid {
        &self.grid
    }

    pub fn density_net(&self) -> &Mlp {
        &self.density_net
    }

    pub fn color_net(&self) -> &Mlp {
        &self.color_net
    }

    pub fn grid_len(&self) -> usize {
        self.grid.param_count()
    }

    pub fn net_len(&self) -> usize {
        self.weights.len() - self.grid_len()
    }

    pub fn new_grad(&self) -> FieldGrad {
        FieldGrad {
            grid: Vec::new(),
            nets: vec![0.0; self.net_len()],
        }
    }

    pub fn new_cache(&self) -> SampleCache {
        SampleCache {
            lookup: GridLookup::default(),
            x_norm: Vec3::zeros(),
            density: self.density_net.new_cache(),
            color: self.color_net.new_cache(),
            pre_activation: 0.0,
            has_color: false,
            d_density_out: vec![0.0; 1 + GEO_FEATURES],
            d_color_in: vec![0.0; GEO_FEATURES + SH_DIM],
            d_enc: vec![0.0; self.grid.output_dim()],
        }
    }

    /// Grid coordinates in `[0, 1]^3` of a world position.
    pub fn grid_coords(&self, x: &Vec3) -> Vec3 {
        (contract(&self.frame.normalize(x)) + Vec3::repeat(2.0)) / 4.0
    }

    /// Evaluates density, and color logits when `dir` is given.
    pub fn eval(&self, x: &Vec3, dir: Option<&Vec3>, cache: &mut SampleCache) -> FieldSample {
        cache.x_norm = self.frame.normalize(x);
        let u = (contract(&cache.x_norm) + Vec3::repeat(2.0)) / 4.0;
        self.grid.encode(&self.weights, &u, &mut cache.density.acts[0], &mut cache.lookup);
        self.density_net.forward(&self.weights, &mut cache.density);
        let out = self.density_net.output(&cache.density);
        cache.pre_activation = out[0] + self.config.density_bias;
        let sigma = softplus(cache.pre_activation);
        cache.has_color = false;
        let logits = dir.map_or(Vec3::zeros(), |d| self.eval_color(d, cache));
        FieldSample { sigma, logits }
    }

    /// Color logits for direction `d` at the point of the last `eval` on `cache`.
    pub fn eval_color(&self, d: &Vec3, cache: &mut SampleCache) -> Vec3 {
        let out = self.density_net.output(&cache.density);
        let input = &mut cache.color.acts[0];
        input[..GEO_FEATURES].copy_from_slice(&out[1..]);
        input[GEO_FEATURES..].copy_from_slice(&sh_basis(d));
        self.color_net.forward(&self.weights, &mut cache.color);
        cache.has_color = true;
        Vec3::from_column_slice(self.color_net.output(&cache.color))
    }

    /// Backpropagates `d_sigma` and `d_logits` through the last `eval` on `cache`.
    /// Input gradients are computed only when `want_input` is set.
    pub fn backward(
        &self,
        cache: &mut SampleCache,
        d_sigma: f64,
        d_logits: Option<&Vec3>,
        grad: &mut FieldGrad,
        want_input: bool,
    ) -> Option<InputGrad> {
        let base = self.grid_len();
        cache.d_density_out.fill(0.0);
        cache.d_density_out[0] = d_sigma * sigmoid(cache.pre_activation);
        let mut sh_grad = [0.0; SH_DIM];
        if let Some(dl) = d_logits {
            assert!(cache.has_color, "color gradient without a color evaluation");
            self.color_net.backward(
                &self.weights,
                &mut cache.color,
                dl.as_slice(),
                &mut grad.nets,
                base,
                Some(&mut cache.d_color_in),
            );
            cache.d_density_out[1..].copy_from_slice(&cache.d_color_in[..GEO_FEATURES]);
            sh_grad.copy_from_slice(&cache.d_color_in[GEO_FEATURES..]);
        }
        if cache.d_density_out.iter().all(|&g| g == 0.0) {
            return want_input.then(|| InputGrad {
                position: Vec3::zeros(),
                sh: sh_grad,
            });
        }
        self.density_net.backward(
            &self.weights,
            &mut cache.density,
            &cache.d_density_out,
            &mut grad.nets,
            base,
            Some(&mut cache.d_enc),
        );
        self.grid.backward(&cache.lookup, &cache.d_enc, &mut grad.grid);
        want_input.then(|| {
            let du = self.grid.spatial_gradient(&self.weights, &cache.lookup, &cache.d_enc);
            let dx_norm = contract_jacobian(&cache.x_norm).transpose() * (du / 4.0);
            InputGrad {
                position: dx_norm / self.frame.radius,
                sh: sh_grad,
            }
        })
    }

    pub fn query_density(&self, x: &Vec3) -> f64 {
        self.eval(x, None, &mut self.new_cache()).sigma
    }

    pub fn query_color(&self, x: &Vec3, d: &Vec3) -> Vec3 {
        self.eval(x, Some(d), &mut self.new_cache()).rgb()
    }

    /// Color-network logits at `(x, d)`.
    pub fn color_logits(&self, x: &Vec3, d: &Vec3) -> Vec3 {
        self.eval(x, Some(d), &mut self.new_cache()).logits
    }

    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

impl RadianceField for FieldParams {
    fn density(&self, x: &Vec3) -> f64 {
        self.query_density(x)
    }

    fn color(&self, x: &Vec3, d: &Vec3) -> Vec3 {
        self.query_color(x, d)
    }

    fn sample(&self, x: &Vec3, d: &Vec3) -> (f64, Vec3) {
        let s = self.eval(x, Some(d), &mut self.new_cache());
        (s.sigma, s.rgb())
    }

    fn base_logit_for(&self, x: &Vec3, d: &Vec3) -> Vec3 {
        match self.color_mode {
            // sigmoid(0 + logits) already equals the field color.
            ColorMode::Residual => Vec3::zeros(),
            ColorMode::FieldOnly => self.query_color(x, d).map(logit),
        }
    }
}

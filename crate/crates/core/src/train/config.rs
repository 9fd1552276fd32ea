use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::densify::DensifyConfig;
use crate::field::{ColorMode, FieldConfig};
use crate::warp::WarpConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Position rate at the first and last iteration, log-linearly interpolated,
    /// in units of the scene radius.
    pub position_init: f64,
    pub position_final: f64,
    pub base_color: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
    pub field: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            base_color: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
            field: 1e-2,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            position_init: 0.0,
            position_final: 0.0,
            base_color: 0.0,
            opacity: 0.0,
            scale: 0.0,
            rotation: 0.0,
            field: 0.0,
        }
    }

    /// Position rate at `iteration` of a run of `total` iterations.
    pub fn position_at(&self, iteration: usize, total: usize) -> f64 {
        if self.position_init <= 0.0 || self.position_final <= 0.0 {
            return self.position_init.max(0.0);
        }
        let t = if total == 0 { 0.0 } else { (iteration as f64 / total as f64).clamp(0.0, 1.0) };
        (self.position_init.ln() * (1.0 - t) + self.position_final.ln() * t).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Field-only iterations before splats start training.
    pub warmup: usize,
    /// SSIM weight inside the splat loss.
    pub lambda: f64,
    /// Weight of the field ray loss.
    pub lambda1: f64,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub rays_per_batch: usize,
    /// Quadrature samples per training ray.
    pub ray_samples: usize,
    /// Ray marching stops once transmittance drops below this (0 disables).
    pub ray_transmittance_min: f64,
    /// Training samples with a smaller blending weight skip the color network.
    pub ray_color_weight_min: f64,
    pub seed: u64,
    pub background: [f64; 3],
    /// Reductions always run in a fixed order; the flag is kept for the record.
    pub deterministic: bool,
    pub color_mode: ColorMode,
    pub harvest: bool,
    pub warp: bool,
    /// Random splats placed along training rays before the first iteration.
    pub initial_random_splats: usize,
    pub initial_opacity: f64,
    pub checkpoint_interval: usize,
    pub field: FieldConfig,
    pub densify: DensifyConfig,
    pub warping: WarpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            warmup: 3000,
            lambda: 0.2,
            lambda1: 0.1,
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            rays_per_batch: 4096,
            ray_samples: 64,
            ray_transmittance_min: 1e-4,
            ray_color_weight_min: 1e-4,
            seed: 0,
            background: [1.0; 3],
            deterministic: false,
            color_mode: ColorMode::Residual,
            harvest: true,
            warp: true,
            initial_random_splats: 100,
            initial_opacity: 0.1,
            checkpoint_interval: 5000,
            field: FieldConfig::default(),
            densify: DensifyConfig::default(),
            warping: WarpConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Scaled-down schedule for the 64x64 toy scene: 5000 iterations, a
    /// smaller field and ray batch.
    pub fn toy() -> Self {
        Self {
            iterations: 5000,
            warmup: 300,
            rays_per_batch: 128,
            ray_samples: 32,
            field: FieldConfig {
                levels: 8,
                log2_table_size: 11,
                features_per_level: 2,
                base_resolution: 16.0,
                max_resolution: 512.0,
                density_hidden: 32,
                color_hidden: 16,
                color_hidden_layers: 2,
                density_bias: -1.0,
            },
            densify: DensifyConfig {
                harvest_iterations: vec![500, 1500, 2500],
                densify_from: 500,
                densify_until: 3500,
                opacity_reset_interval: 1500,
                harvest_stride: 2,
                harvest_samples: 64,
                max_splats: 6000,
                grad_threshold: 5e-4,
                ..DensifyConfig::default()
            },
            warping: WarpConfig {
                refresh_interval: 500,
                every: 2,
                samples: 64,
                ..WarpConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.lambda1 >= 0.0) {
            return Err(format!("lambda1 must be non-negative, got {}", self.lambda1));
        }
        if self.rays_per_batch == 0 || self.ray_samples < 2 {
            return Err("need at least one ray and two samples per ray".into());
        }
        if self.harvest {
            self.densify.validate(self.warmup)?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, String> {
        toml::to_string(self).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_rate_decays_log_linearly() {
        let lr = LearningRates::default();
        assert_eq!(lr.position_at(0, 100), 1.6e-4);
        assert!((lr.position_at(100, 100) - 1.6e-6).abs() < 1e-18);
        assert!((lr.position_at(50, 100) - 1.6e-5).abs() < 1e-15);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig::toy();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
        let partial: TrainConfig = toml::from_str("iterations = 7\n[densify]\ntau = 2.0\n").unwrap();
        assert_eq!(partial.iterations, 7);
        assert_eq!(partial.densify.tau, 2.0);
        assert!(toml::from_str::<TrainConfig>("bogus = 1").is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::toy().validate().is_ok());
        let cfg = TrainConfig {
            lambda: 1.5,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            warmup: 6000,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}

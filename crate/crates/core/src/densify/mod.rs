//! Splat creation and removal: harvesting points from the field's expected
//! depth, and the clone / split / prune loop driven by screen-space gradients.

pub mod knn;

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::render::{render_ray, Jitter, Ray, RayMarch};
use crate::field::RadianceField;
use crate::geometry::{contract, logit, quat_to_matrix, Camera, SceneFrame, Splat, Vec3};
use crate::raster::SplatGradients;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    /// Minimum field density at a harvested point.
    pub tau: f64,
    pub eps_alpha: f64,
    /// Mean view-space positional gradient that triggers clone or split.
    pub grad_threshold: f64,
    pub densify_interval: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub harvest_iterations: Vec<usize>,
    pub opacity_reset_interval: usize,
    pub max_splats: usize,
    /// Harvested points must satisfy `|contract(x)| <= scene_bound` in the normalized frame.
    pub scene_bound: f64,
    /// One ray per `stride x stride` pixel block.
    pub harvest_stride: u32,
    pub harvest_samples: usize,
    /// Rays whose final transmittance is at or above this did not hit anything.
    pub hit_transmittance: f64,
    /// Voxels per axis of the deduplication grid over the contracted domain.
    pub dedup_resolution: u32,
    pub split_factor: f64,
    /// Splats larger than this fraction of the scene radius are split rather than cloned.
    pub percent_dense: f64,
    pub new_opacity: f64,
    pub neighbors: usize,
    /// Once past the first opacity reset, splats whose largest scale exceeds
    /// this fraction of the scene radius are pruned.
    pub max_world_scale: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            eps_alpha: 0.005,
            grad_threshold: 2e-4,
            densify_interval: 100,
            densify_from: 500,
            densify_until: 15_000,
            harvest_iterations: vec![5000, 15_000, 25_000],
            opacity_reset_interval: 3000,
            max_splats: 1_000_000,
            scene_bound: 1.9,
            harvest_stride: 4,
            harvest_samples: 64,
            hit_transmittance: 0.5,
            dedup_resolution: 256,
            split_factor: 1.6,
            percent_dense: 0.01,
            new_opacity: 0.1,
            neighbors: 3,
            max_world_scale: 0.1,
        }
    }
}

impl DensifyConfig {
    /// Harvests scheduled past the end of a run simply never fire; they must
    /// come after the field warm-up.
    pub fn validate(&self, warmup: usize) -> Result<(), String> {
        if !(self.tau > 0.0) {
            return Err("tau must be positive".into());
        }
        if !(self.eps_alpha > 0.0 && self.eps_alpha < 1.0) {
            return Err("eps_alpha must lie in (0, 1)".into());
        }
        if self.harvest_iterations.windows(2).any(|w| w[1] <= w[0]) {
            return Err("harvest iterations must be strictly increasing".into());
        }
        if self.harvest_iterations.first().is_some_and(|&h| h <= warmup) {
            return Err("the first harvest must come after the warm-up".into());
        }
        if self.densify_interval == 0 || self.harvest_stride == 0 || self.max_splats == 0 {
            return Err("intervals, stride and max_splats must be positive".into());
        }
        Ok(())
    }

    /// Clone/split/prune runs after this (1-based) iteration.
    pub fn densify_due(&self, iteration: usize) -> bool {
        iteration > self.densify_from && iteration <= self.densify_until && iteration.is_multiple_of(self.densify_interval)
    }

    pub fn opacity_reset_due(&self, iteration: usize) -> bool {
        self.opacity_reset_interval > 0
            && iteration <= self.densify_until
            && iteration.is_multiple_of(self.opacity_reset_interval)
    }

    pub fn harvest_due(&self, iteration: usize) -> bool {
        self.harvest_iterations.contains(&iteration)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CameraHarvest {
    pub camera_id: String,
    pub rays: usize,
    pub passing: usize,
    pub added: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HarvestReport {
    pub rays_cast: usize,
    /// Rays whose final transmittance fell below the hit gate.
    pub hits: usize,
    /// Hit rays whose expected-depth point has density at least `tau`.
    pub passing: usize,
    /// Passing points inside the scene bound.
    pub in_bounds: usize,
    /// Points left after voxel deduplication.
    pub unique: usize,
    pub added: usize,
    /// The splat budget forced a random subset.
    pub capped: bool,
    pub per_camera: Vec<CameraHarvest>,
}

/// Requested rays, one per pixel block at a random position inside the block.
pub fn harvest_rays(cameras: &[Camera], stride: u32, rng: &mut impl Rng) -> Vec<(usize, Ray)> {
    let mut rays = Vec::new();
    for (c, cam) in cameras.iter().enumerate() {
        for by in (0..cam.height).step_by(stride as usize) {
            for bx in (0..cam.width).step_by(stride as usize) {
                let x = bx + rng.random_range(0..stride.min(cam.width - bx));
                let y = by + rng.random_range(0..stride.min(cam.height - by));
                rays.push((c, Ray::through_pixel(cam, x, y)));
            }
        }
    }
    rays
}

/// Harvests new splats from expected-depth points of `rays` (tagged by camera index).
/// At most `budget` splats are returned.
pub fn harvest_from_rays<F: RadianceField + ?Sized>(
    field: &F,
    cameras: &[Camera],
    rays: &[(usize, Ray)],
    frame: &SceneFrame,
    config: &DensifyConfig,
    budget: usize,
    rng: &mut impl Rng,
) -> (Vec<Splat>, HarvestReport) {
    let march = RayMarch {
        samples: config.harvest_samples,
        jitter: Jitter::Seeded(rng.random()),
        transmittance_min: 0.0,
        color_weight_min: 0.0,
    };
    struct Candidate {
        camera: usize,
        point: Vec3,
        direction: Vec3,
        hit: bool,
        passing: bool,
        in_bounds: bool,
    }
    let candidates: Vec<Candidate> = rays
        .par_iter()
        .enumerate()
        .map(|(i, (camera, ray))| {
            let r = render_ray(field, ray, &march, i as u64);
            let point = ray.at(r.depth);
            let hit = r.transmittance < config.hit_transmittance;
            let passing = hit && field.density(&point) >= config.tau;
            let in_bounds = passing && contract(&frame.normalize(&point)).norm() <= config.scene_bound;
            Candidate {
                camera: *camera,
                point,
                direction: ray.direction,
                hit,
                passing,
                in_bounds,
            }
        })
        .collect();

    let mut report = HarvestReport {
        rays_cast: rays.len(),
        per_camera: cameras
            .iter()
            .map(|c| CameraHarvest {
                camera_id: c.camera_id.clone(),
                ..Default::default()
            })
            .collect(),
        ..Default::default()
    };
    let res = config.dedup_resolution as f64;
    let mut occupied = HashSet::new();
    let mut accepted: Vec<&Candidate> = Vec::new();
    for c in &candidates {
        report.per_camera[c.camera].rays += 1;
        report.hits += c.hit as usize;
        report.passing += c.passing as usize;
        report.per_camera[c.camera].passing += c.passing as usize;
        if !c.in_bounds {
            continue;
        }
        report.in_bounds += 1;
        let u = (contract(&frame.normalize(&c.point)) + Vec3::repeat(2.0)) / 4.0;
        let voxel = [0, 1, 2].map(|a| ((u[a] * res).floor() as i64).clamp(0, res as i64 - 1));
        if occupied.insert(voxel) {
            accepted.push(c);
        }
    }
    report.unique = accepted.len();
    if accepted.len() > budget {
        report.capped = true;
        let mut keep = sample(rng, accepted.len(), budget).into_vec();
        keep.sort_unstable();
        accepted = keep.into_iter().map(|i| accepted[i]).collect();
    }
    let points: Vec<Vec3> = accepted.iter().map(|c| c.point).collect();
    let log_scales = neighbor_log_scales(&points, config.neighbors, frame);
    let splats = accepted
        .iter()
        .zip(log_scales)
        .map(|(c, ls)| {
            report.per_camera[c.camera].added += 1;
            Splat {
                position: c.point,
                log_scale: Vec3::repeat(ls),
                rotation: [1.0, 0.0, 0.0, 0.0],
                opacity_logit: logit(config.new_opacity),
                base_color: field.base_logit_for(&c.point, &c.direction),
            }
        })
        .collect::<Vec<_>>();
    report.added = splats.len();
    (splats, report)
}

/// Casts a stratified subsample of pixel rays from every camera and turns
/// their expected-depth points into new splats.
pub fn harvest_points<F: RadianceField + ?Sized>(
    field: &F,
    cameras: &[Camera],
    frame: &SceneFrame,
    config: &DensifyConfig,
    budget: usize,
    rng: &mut impl Rng,
) -> (Vec<Splat>, HarvestReport) {
    let rays = harvest_rays(cameras, config.harvest_stride, rng);
    harvest_from_rays(field, cameras, &rays, frame, config, budget, rng)
}

/// `log` of the mean distance to the nearest neighbors, with a small
/// scene-relative fallback for isolated points.
pub fn neighbor_log_scales(points: &[Vec3], k: usize, frame: &SceneFrame) -> Vec<f64> {
    let fallback = 0.01 * frame.radius;
    knn::mean_neighbor_distance(points, k)
        .into_iter()
        .map(|d| d.unwrap_or(fallback).max(1e-7).ln())
        .collect()
}

/// `count` splats uniformly distributed in the cube enclosing the scene frame,
/// with random colors.
pub fn random_splats(count: usize, frame: &SceneFrame, opacity: f64, rng: &mut impl Rng) -> Vec<Splat> {
    let points: Vec<Vec3> = (0..count)
        .map(|_| frame.denormalize(&Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))))
        .collect();
    let scales = neighbor_log_scales(&points, 3, frame);
    points
        .into_iter()
        .zip(scales)
        .map(|(p, ls)| Splat {
            position: p,
            log_scale: Vec3::repeat(ls),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            base_color: Vec3::from_fn(|_, _| logit(rng.random_range(0.05..0.95))),
        })
        .collect()
}

/// Gray isotropic splats at fixed points, sized by their neighbor spacing.
pub fn splats_from_points(points: &[Vec3], frame: &SceneFrame, opacity: f64, neighbors: usize) -> Vec<Splat> {
    let scales = neighbor_log_scales(points, neighbors, frame);
    points
        .iter()
        .zip(scales)
        .map(|(p, ls)| Splat {
            position: *p,
            log_scale: Vec3::repeat(ls),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            base_color: Vec3::zeros(),
        })
        .collect()
}

/// Gradient statistics accumulated between densification passes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub hits: Vec<u32>,
    /// Sum of world-space position gradients, used to orient clones.
    pub position_grad: Vec<Vec3>,
}

impl DensifyStats {
    pub fn new(count: usize) -> Self {
        Self {
            grad_sum: vec![0.0; count],
            hits: vec![0; count],
            position_grad: vec![Vec3::zeros(); count],
        }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn record(&mut self, grads: &SplatGradients) {
        assert_eq!(grads.len(), self.len());
        for i in 0..self.len() {
            if grads.visible[i] {
                self.grad_sum[i] += grads.view_grad_norm[i];
                self.hits[i] += 1;
                self.position_grad[i] += grads.position[i];
            }
        }
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.hits[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.hits[i] as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EditLog {
    pub iteration: usize,
    pub before: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub after: usize,
    /// Candidates skipped because of the splat budget.
    pub over_budget: usize,
}

/// Two children drawn from the parent Gaussian, each shrunk by `factor`.
pub fn split_children(parent: &Splat, factor: f64, rng: &mut impl Rng) -> [Splat; 2] {
    let rot = quat_to_matrix(&parent.rotation);
    let scales = parent.scales();
    let child = |rng: &mut dyn rand::RngCore| {
        let z = Vec3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        Splat {
            position: parent.position + rot * scales.component_mul(&z),
            log_scale: parent.log_scale - Vec3::repeat(factor.ln()),
            ..parent.clone()
        }
    };
    [child(rng), child(rng)]
}

/// Clones small high-gradient splats, splits large ones, then prunes
/// transparent or oversized splats. Returns the edit log and, for each output
/// splat, the index it came from (`None` for newly created splats).
pub fn adaptive_density_control(
    splats: &mut Vec<Splat>,
    stats: &DensifyStats,
    config: &DensifyConfig,
    scene_extent: f64,
    iteration: usize,
    rng: &mut impl Rng,
) -> (EditLog, Vec<Option<usize>>) {
    assert_eq!(splats.len(), stats.len());
    let mut log = EditLog {
        iteration,
        before: splats.len(),
        ..Default::default()
    };
    let mut candidates: Vec<usize> = (0..splats.len())
        .filter(|&i| stats.hits[i] > 0 && stats.mean_grad(i) >= config.grad_threshold)
        .collect();
    // Strongest gradients first so a tight budget keeps the most useful edits.
    candidates.sort_by(|&a, &b| stats.mean_grad(b).total_cmp(&stats.mean_grad(a)).then(a.cmp(&b)));

    let mut count = splats.len();
    let mut split = vec![false; splats.len()];
    let mut new_splats = Vec::new();
    for &i in &candidates {
        if count + 1 > config.max_splats {
            log.over_budget += 1;
            continue;
        }
        count += 1;
        let s = &splats[i];
        if s.max_scale() <= config.percent_dense * scene_extent {
            let g = stats.position_grad[i];
            let offset = if g.norm() > 0.0 { -g.normalize() * (0.5 * s.max_scale()) } else { Vec3::zeros() };
            new_splats.push(Splat {
                position: s.position + offset,
                ..s.clone()
            });
            log.cloned += 1;
        } else {
            split[i] = true;
            new_splats.extend(split_children(s, config.split_factor, rng));
            log.split += 1;
        }
    }

    let prune_large = iteration > config.opacity_reset_interval;
    let keep = |s: &Splat| {
        s.opacity() >= config.eps_alpha && !(prune_large && s.max_scale() > config.max_world_scale * scene_extent)
    };
    let mut out = Vec::with_capacity(count);
    let mut origin = Vec::with_capacity(count);
    for (i, s) in splats.iter().enumerate() {
        if split[i] {
            continue;
        }
        if keep(s) {
            out.push(s.clone());
            origin.push(Some(i));
        } else {
            log.pruned += 1;
        }
    }
    for s in new_splats {
        if keep(&s) {
            out.push(s);
            origin.push(None);
        } else {
            log.pruned += 1;
        }
    }
    log.after = out.len();
    *splats = out;
    (log, origin)
}

/// Removes splats below the opacity threshold; returns origins as in
/// [`adaptive_density_control`].
pub fn prune(splats: &mut Vec<Splat>, eps_alpha: f64) -> Vec<Option<usize>> {
    let mut origin = Vec::with_capacity(splats.len());
    let mut out = Vec::with_capacity(splats.len());
    for (i, s) in splats.drain(..).enumerate() {
        if s.opacity() >= eps_alpha {
            out.push(s);
            origin.push(Some(i));
        }
    }
    *splats = out;
    origin
}

/// Clamps every opacity to at most `max_opacity`.
pub fn reset_opacity(splats: &mut [Splat], max_opacity: f64) {
    let cap = logit(max_opacity);
    for s in splats {
        s.opacity_logit = s.opacity_logit.min(cap);
    }
}

/// Seeded generator for densifier randomness.
pub fn densify_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

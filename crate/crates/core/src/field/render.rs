//! Stratified ray quadrature for color, expected depth and transmittance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{FieldGrad, FieldParams, RadianceField, SampleCache};
use crate::geometry::{sigmoid, Camera, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction; `near` and `far` are distances along it.
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Ray through the center of pixel `(i, j)`.
    pub fn through_pixel(camera: &Camera, i: u32, j: u32) -> Self {
        Self {
            origin: camera.center(),
            direction: camera.ray_direction(i as f64 + 0.5, j as f64 + 0.5),
            near: camera.near,
            far: camera.far,
        }
    }
}

/// Where each sample sits inside its bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Jitter {
    Midpoint,
    /// Uniform offsets from a per-ray stream of this seed.
    Seeded(u64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayMarch {
    pub samples: usize,
    pub jitter: Jitter,
    /// Marching stops once transmittance drops below this (0 disables).
    pub transmittance_min: f64,
    /// In the training loss, samples with a smaller blending weight skip the
    /// color network and count as black (0 evaluates every sample).
    pub color_weight_min: f64,
}

impl Default for RayMarch {
    fn default() -> Self {
        Self {
            samples: 64,
            jitter: Jitter::Midpoint,
            transmittance_min: 0.0,
            color_weight_min: 0.0,
        }
    }
}

impl RayMarch {
    pub fn with_samples(samples: usize) -> Self {
        Self {
            samples,
            ..Self::default()
        }
    }

    /// Sample distances and the common bin width for `ray`; `stream` selects
    /// the jitter sequence.
    pub fn sample_points(&self, ray: &Ray, stream: u64) -> (Vec<f64>, f64) {
        assert!(self.samples >= 2, "at least two samples per ray");
        let delta = (ray.far - ray.near) / self.samples as f64;
        let points = match self.jitter {
            Jitter::Midpoint => (0..self.samples).map(|k| ray.near + (k as f64 + 0.5) * delta).collect(),
            Jitter::Seeded(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                (0..self.samples)
                    .map(|k| ray.near + (k as f64 + rng.random::<f64>()) * delta)
                    .collect()
            }
        };
        (points, delta)
    }
}

/// Per-sample quadrature terms of one ray.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    pub distance: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub color: Vec<Vec3>,
    pub weight: Vec<f64>,
    /// Transmittance in front of each sample.
    pub transmittance: Vec<f64>,
    pub final_transmittance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayResult {
    /// Accumulated color before the background is added.
    pub color: Vec3,
    /// `sum w_k u_k`, not normalized by accumulated opacity.
    pub depth: f64,
    pub transmittance: f64,
}

impl RaySamples {
    pub fn result(&self) -> RayResult {
        let mut color = Vec3::zeros();
        let mut depth = 0.0;
        for k in 0..self.weight.len() {
            color += self.color[k] * self.weight[k];
            depth += self.weight[k] * self.distance[k];
        }
        RayResult {
            color,
            depth,
            transmittance: self.final_transmittance,
        }
    }
}

pub fn march_ray<F: RadianceField + ?Sized>(field: &F, ray: &Ray, march: &RayMarch, stream: u64) -> RaySamples {
    let (points, delta) = march.sample_points(ray, stream);
    let mut out = RaySamples::default();
    let mut t = 1.0;
    for u in points {
        let (sigma, color) = field.sample(&ray.at(u), &ray.direction);
        let alpha = 1.0 - (-sigma * delta).exp();
        out.distance.push(u);
        out.delta.push(delta);
        out.sigma.push(sigma);
        out.color.push(color);
        out.weight.push(t * alpha);
        out.transmittance.push(t);
        t *= 1.0 - alpha;
        if t < march.transmittance_min {
            break;
        }
    }
    out.final_transmittance = t;
    out
}

pub fn render_ray<F: RadianceField + ?Sized>(field: &F, ray: &Ray, march: &RayMarch, stream: u64) -> RayResult {
    march_ray(field, ray, march, stream).result()
}

/// Field render at a camera, possibly subsampled.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldImage {
    pub width: u32,
    pub height: u32,
    /// Interleaved RGB with the background composited.
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub transmittance: Vec<f64>,
}

/// Renders every `stride`-th pixel center of `camera`; the result has size
/// `ceil(W/stride) x ceil(H/stride)`.
pub fn render_field_image<F: RadianceField + ?Sized>(
    field: &F,
    camera: &Camera,
    stride: u32,
    march: &RayMarch,
    background: &Vec3,
) -> FieldImage {
    let cam = camera.subsampled(stride);
    let (w, h) = (cam.width, cam.height);
    let results: Vec<RayResult> = (0..w * h)
        .into_par_iter()
        .map(|p| render_ray(field, &Ray::through_pixel(&cam, p % w, p / w), march, p as u64))
        .collect();
    let mut img = FieldImage {
        width: w,
        height: h,
        color: Vec::with_capacity(3 * results.len()),
        depth: Vec::with_capacity(results.len()),
        transmittance: Vec::with_capacity(results.len()),
    };
    for r in results {
        let c = r.color + background * r.transmittance;
        img.color.extend_from_slice(c.as_slice());
        img.depth.push(r.depth);
        img.transmittance.push(r.transmittance);
    }
    img
}

/// Rays handled by one work unit in the batched field loss.
const RAY_CHUNK: usize = 32;

struct RayScratch {
    caches: Vec<SampleCache>,
    sigma: Vec<f64>,
    color: Vec<Vec3>,
    weight: Vec<f64>,
    trans: Vec<f64>,
}

/// `sum over rays |C(r) + T(r) bg - target|^2` and its gradient, accumulated
/// into a dense buffer shaped like `field.weights`. Ray `i` uses jitter
/// stream `i`, and chunks are reduced in order so the result is reproducible.
pub fn field_loss_and_grad(
    field: &FieldParams,
    rays: &[Ray],
    targets: &[Vec3],
    march: &RayMarch,
    background: &Vec3,
    grad: &mut [f64],
) -> f64 {
    assert_eq!(rays.len(), targets.len());
    assert_eq!(grad.len(), field.weights.len());
    let chunks: Vec<(f64, FieldGrad)> = rays
        .par_chunks(RAY_CHUNK)
        .zip(targets.par_chunks(RAY_CHUNK))
        .enumerate()
        .map(|(c, (rays, targets))| {
            let mut g = field.new_grad();
            let mut scratch = RayScratch {
                caches: (0..march.samples).map(|_| field.new_cache()).collect(),
                sigma: Vec::new(),
                color: Vec::new(),
                weight: Vec::new(),
                trans: Vec::new(),
            };
            let mut loss = 0.0;
            for (k, (ray, target)) in rays.iter().zip(targets).enumerate() {
                let stream = (c * RAY_CHUNK + k) as u64;
                loss += ray_loss_backward(field, ray, target, march, background, stream, &mut scratch, &mut g);
            }
            (loss, g)
        })
        .collect();
    let grid_len = field.grid_len();
    let mut loss = 0.0;
    for (l, g) in &chunks {
        loss += l;
        g.add_to(grad, grid_len);
    }
    loss
}

#[allow(clippy::too_many_arguments)]
fn ray_loss_backward(
    field: &FieldParams,
    ray: &Ray,
    target: &Vec3,
    march: &RayMarch,
    background: &Vec3,
    stream: u64,
    s: &mut RayScratch,
    grad: &mut FieldGrad,
) -> f64 {
    let (points, delta) = march.sample_points(ray, stream);
    s.sigma.clear();
    s.color.clear();
    s.weight.clear();
    s.trans.clear();
    let mut t = 1.0;
    for (k, &u) in points.iter().enumerate() {
        let sigma = field.eval(&ray.at(u), None, &mut s.caches[k]).sigma;
        let alpha = 1.0 - (-sigma * delta).exp();
        s.sigma.push(sigma);
        s.weight.push(t * alpha);
        s.trans.push(t);
        t *= 1.0 - alpha;
        if t < march.transmittance_min {
            break;
        }
    }
    let mut color = Vec3::zeros();
    for k in 0..s.weight.len() {
        let c = if s.weight[k] >= march.color_weight_min {
            field.eval_color(&ray.direction, &mut s.caches[k]).map(sigmoid)
        } else {
            Vec3::zeros()
        };
        color += c * s.weight[k];
        s.color.push(c);
    }
    let residual = color + background * t - target;
    let d_color = residual * 2.0;

    // Walk back to front, carrying R_k = sum_{j>k} w_j c_j + T_final bg.
    let mut behind = background * t;
    for k in (0..s.weight.len()).rev() {
        let c = s.color[k];
        let t_after = s.trans[k] * (-s.sigma[k] * delta).exp();
        let d_tau = d_color.dot(&(c * t_after - behind));
        behind += c * s.weight[k];
        let d_logits = s.caches[k]
            .has_color()
            .then(|| (d_color * s.weight[k]).component_mul(&c.map(|v| v * (1.0 - v))));
        field.backward(&mut s.caches[k], d_tau * delta, d_logits.as_ref(), grad, false);
    }
    residual.norm_squared()
}

/// Composited field colors for a batch of rays (no gradient).
pub fn render_rays(field: &FieldParams, rays: &[Ray], march: &RayMarch, background: &Vec3) -> Vec<Vec3> {
    rays.par_iter()
        .enumerate()
        .map(|(i, ray)| {
            let mut cache = field.new_cache();
            let (points, delta) = march.sample_points(ray, i as u64);
            let mut t = 1.0;
            let mut color = Vec3::zeros();
            for u in points {
                let s = field.eval(&ray.at(u), Some(&ray.direction), &mut cache);
                let alpha = 1.0 - (-s.sigma * delta).exp();
                color += s.logits.map(sigmoid) * (t * alpha);
                t *= 1.0 - alpha;
                if t < march.transmittance_min {
                    break;
                }
            }
            color + background * t
        })
        .collect()
}

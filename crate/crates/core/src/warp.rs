//! Virtual supervision views: cameras rotated in place, with targets and
//! confidence masks rendered from the field.

use nalgebra::{Matrix3, Rotation3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::render::{render_field_image, RayMarch};
use crate::field::RadianceField;
use crate::geometry::{Camera, Intrinsics, Vec2, Vec3};
use crate::io::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpConfig {
    pub max_angle_deg: f64,
    /// Iterations between pool regenerations.
    pub refresh_interval: usize,
    /// A virtual view is used every this many iterations.
    pub every: usize,
    /// Loss weight relative to a real view.
    pub weight: f64,
    /// Pixel stride of virtual renders.
    pub stride: u32,
    /// Pixels with field transmittance below this are supervised.
    pub mask_transmittance: f64,
    /// Views whose mask covers less than this fraction are rejected.
    pub min_coverage: f64,
    pub samples: usize,
    /// Resampling attempts per source camera before giving up.
    pub attempts: usize,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            max_angle_deg: 10.0,
            refresh_interval: 500,
            every: 1,
            weight: 0.5,
            stride: 1,
            mask_transmittance: 0.5,
            min_coverage: 0.05,
            samples: 64,
            attempts: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VirtualView {
    /// Perturbed camera, already at the render stride.
    pub camera: Camera,
    pub target: Image,
    /// 1 where the target is trusted, 0 elsewhere.
    pub mask: Vec<f64>,
    pub source_camera_id: String,
    pub iteration_created: usize,
}

impl VirtualView {
    pub fn coverage(&self) -> f64 {
        self.mask.iter().sum::<f64>() / self.mask.len().max(1) as f64
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WarpError {
    #[error("point is behind the warped camera (depth {0})")]
    BehindCamera(f64),
    #[error("field covers only {coverage:.3} of the virtual view")]
    Rejected { coverage: f64 },
}

/// Rotation by `angles_deg` about the x, then y, then z axis: `Rz Ry Rx`.
pub fn rotation_from_angles(angles_deg: [f64; 3]) -> Matrix3<f64> {
    let [x, y, z] = angles_deg.map(f64::to_radians);
    (Rotation3::from_axis_angle(&Vec3::z_axis(), z)
        * Rotation3::from_axis_angle(&Vec3::y_axis(), y)
        * Rotation3::from_axis_angle(&Vec3::x_axis(), x))
    .into_inner()
}

/// Rotates the camera about its own center by `angles_deg` about its local axes.
pub fn rotate_in_place(camera: &Camera, angles_deg: [f64; 3]) -> Camera {
    let center = camera.center();
    let rotation = rotation_from_angles(angles_deg).transpose() * camera.rotation;
    Camera {
        rotation,
        translation: -(rotation * center),
        ..camera.clone()
    }
}

/// Independent uniform angles in `[-max, max]` degrees per local axis.
pub fn sample_angles(rng: &mut impl Rng, max_angle_deg: f64) -> [f64; 3] {
    assert!(max_angle_deg > 0.0);
    [0; 3].map(|_| rng.random_range(-max_angle_deg..=max_angle_deg))
}

pub fn perturb_pose(camera: &Camera, rng: &mut impl Rng, max_angle_deg: f64) -> Camera {
    rotate_in_place(camera, sample_angles(rng, max_angle_deg))
}

/// Pixel of camera-space point `p` after the rigid motion `(r, t)`: `K (R p + T)`, dehomogenized.
pub fn warp_point(p: &Vec3, k: &Intrinsics, r: &Matrix3<f64>, t: &Vec3) -> Result<Vec2, WarpError> {
    let q = r * p + t;
    if !(q.z > 0.0) {
        return Err(WarpError::BehindCamera(q.z));
    }
    Ok(Vec2::new(k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy))
}

/// Renders the field at `camera` rotated by `angles_deg`.
pub fn virtual_view_at<F: RadianceField + ?Sized>(
    field: &F,
    camera: &Camera,
    angles_deg: [f64; 3],
    config: &WarpConfig,
    march: &RayMarch,
    background: &Vec3,
    iteration: usize,
) -> Result<VirtualView, WarpError> {
    let perturbed = rotate_in_place(camera, angles_deg);
    let img = render_field_image(field, &perturbed, config.stride, march, background);
    let mask: Vec<f64> = img
        .transmittance
        .iter()
        .map(|&t| if t < config.mask_transmittance { 1.0 } else { 0.0 })
        .collect();
    let view = VirtualView {
        camera: perturbed.subsampled(config.stride),
        target: Image::from_data(img.width, img.height, img.color),
        mask,
        source_camera_id: camera.camera_id.clone(),
        iteration_created: iteration,
    };
    let coverage = view.coverage();
    if coverage < config.min_coverage {
        return Err(WarpError::Rejected { coverage });
    }
    Ok(view)
}

pub fn make_virtual_view<F: RadianceField + ?Sized>(
    field: &F,
    camera: &Camera,
    rng: &mut impl Rng,
    config: &WarpConfig,
    march: &RayMarch,
    background: &Vec3,
    iteration: usize,
) -> Result<VirtualView, WarpError> {
    let angles = sample_angles(rng, config.max_angle_deg);
    virtual_view_at(field, camera, angles, config, march, background, iteration)
}

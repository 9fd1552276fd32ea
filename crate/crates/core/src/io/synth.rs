//! Procedural scenes rendered by a small analytic ray tracer.
//!
//! The tracer intersects boxes, spheres and a finite ground patch directly and
//! shades them with one directional light (Lambertian plus an optional Phong
//! lobe, no shadows). It shares no code with the splat or field renderers,
//! which is what makes its images usable as ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::image::Image;
use super::manifest::{write_manifest, Dataset, Frame, ManifestError};
use crate::geometry::{Camera, GeometryError, Intrinsics, Vec3};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Camera(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checker {
    pub color: [f64; 3],
    /// Cell edge length in meters.
    pub cell: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: [f64; 3],
    #[serde(default)]
    pub checker: Option<Checker>,
    /// Weight of the Phong highlight; zero for purely diffuse surfaces.
    #[serde(default)]
    pub specular: f64,
    #[serde(default = "default_shininess")]
    pub shininess: f64,
}

fn default_shininess() -> f64 {
    32.0
}

impl Material {
    pub fn diffuse(albedo: [f64; 3]) -> Self {
        Self {
            albedo,
            checker: None,
            specular: 0.0,
            shininess: default_shininess(),
        }
    }

    fn albedo_at(&self, p: &Vec3) -> Vec3 {
        match &self.checker {
            Some(c) => {
                let parity = (p / c.cell).map(f64::floor).iter().sum::<f64>().rem_euclid(2.0);
                if parity < 0.5 {
                    Vec3::from(self.albedo)
                } else {
                    Vec3::from(c.color)
                }
            }
            None => Vec3::from(self.albedo),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Square patch of the plane `z = height`.
    Ground { height: f64, half_extent: f64, material: Material },
    /// Box rotated by `yaw_deg` about the vertical axis.
    Box {
        center: [f64; 3],
        half_size: [f64; 3],
        #[serde(default)]
        yaw_deg: f64,
        material: Material,
    },
    Sphere { center: [f64; 3], radius: f64, material: Material },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    /// Direction from surfaces toward the light.
    pub direction: [f64; 3],
    pub intensity: f64,
    pub ambient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// One camera moving along a horizontal arc around `target`.
    Orbit { radius: f64, height: f64, arc_deg: f64, target: [f64; 3] },
    /// A rig of cameras yawed by fixed offsets, moving along the arc together.
    Rig {
        radius: f64,
        height: f64,
        arc_deg: f64,
        target: [f64; 3],
        yaw_offsets_deg: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub frames: usize,
    /// Jittered samples per pixel along each axis.
    pub supersample: u32,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    pub light: Light,
    pub primitives: Vec<Primitive>,
    pub trajectory: Trajectory,
}

impl SyntheticSceneSpec {
    /// Small three-object scene seen by a three-camera rig along a half orbit.
    pub fn toy(seed: u64) -> Self {
        Self {
            seed,
            width: 64,
            height: 64,
            focal: 64.0,
            frames: 60,
            supersample: 3,
            near: 1.0,
            far: 8.0,
            background: [1.0, 1.0, 1.0],
            light: Light {
                direction: [0.4, -0.5, 0.77],
                intensity: 0.75,
                ambient: 0.3,
            },
            primitives: vec![
                Primitive::Ground {
                    height: 0.0,
                    half_extent: 2.5,
                    material: Material {
                        checker: Some(Checker {
                            color: [0.35, 0.45, 0.3],
                            cell: 0.5,
                        }),
                        ..Material::diffuse([0.6, 0.65, 0.55])
                    },
                },
                Primitive::Box {
                    center: [0.45, -0.35, 0.35],
                    half_size: [0.35, 0.35, 0.35],
                    yaw_deg: 25.0,
                    material: Material {
                        checker: Some(Checker {
                            color: [0.55, 0.1, 0.08],
                            cell: 0.25,
                        }),
                        ..Material::diffuse([0.9, 0.25, 0.15])
                    },
                },
                Primitive::Sphere {
                    center: [-0.5, 0.45, 0.45],
                    radius: 0.45,
                    material: Material {
                        specular: 0.35,
                        shininess: 24.0,
                        ..Material::diffuse([0.2, 0.35, 0.85])
                    },
                },
            ],
            trajectory: Trajectory::Rig {
                radius: 4.0,
                height: 1.3,
                arc_deg: 180.0,
                target: [0.0, 0.0, 0.3],
                yaw_offsets_deg: vec![-18.0, 0.0, 18.0],
            },
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
            width: self.width,
            height: self.height,
        }
    }

    /// Cameras in frame order.
    pub fn cameras(&self) -> Result<Vec<Camera>, SynthError> {
        let (radius, height, arc, target, offsets, ids): (f64, f64, f64, [f64; 3], Vec<f64>, Vec<String>) =
            match &self.trajectory {
                Trajectory::Orbit {
                    radius,
                    height,
                    arc_deg,
                    target,
                } => (*radius, *height, *arc_deg, *target, vec![0.0], vec!["orbit".into()]),
                Trajectory::Rig {
                    radius,
                    height,
                    arc_deg,
                    target,
                    yaw_offsets_deg,
                } => (
                    *radius,
                    *height,
                    *arc_deg,
                    *target,
                    yaw_offsets_deg.clone(),
                    (0..yaw_offsets_deg.len()).map(|k| format!("rig{k}")).collect(),
                ),
            };
        if offsets.is_empty() || !self.frames.is_multiple_of(offsets.len()) {
            return Err(SynthError::Spec(format!(
                "{} frames cannot be split evenly across {} rig cameras",
                self.frames,
                offsets.len()
            )));
        }
        let steps = self.frames / offsets.len();
        let target = Vec3::from(target);
        let mut cams = Vec::with_capacity(self.frames);
        for s in 0..steps {
            let t = if steps > 1 { s as f64 / (steps - 1) as f64 } else { 0.5 };
            let theta = (-arc / 2.0 + arc * t).to_radians();
            let eye = Vec3::new(radius * theta.cos(), radius * theta.sin(), height);
            for (off, id) in offsets.iter().zip(&ids) {
                let yaw = Rotation3::from_axis_angle(&Vec3::z_axis(), off.to_radians());
                let look = eye + yaw * (target - eye);
                cams.push(Camera::look_at(self.intrinsics(), eye, look, Vec3::z(), self.near, self.far, id.clone())?);
            }
        }
        Ok(cams)
    }
}

struct Hit {
    t: f64,
    normal: Vec3,
    /// Coordinates the checker texture is evaluated in.
    texture_point: Vec3,
}

fn intersect_box(o: &Vec3, d: &Vec3, center: &Vec3, half: &Vec3, yaw: &Matrix3<f64>) -> Option<(f64, Vec3, Vec3)> {
    let lo = yaw.transpose() * (o - center);
    let ld = yaw.transpose() * d;
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0;
    for a in 0..3 {
        if ld[a].abs() < 1e-15 {
            if lo[a].abs() > half[a] {
                return None;
            }
            continue;
        }
        let t1 = (-half[a] - lo[a]) / ld[a];
        let t2 = (half[a] - lo[a]) / ld[a];
        let (t1, t2) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if t1 > t_near {
            t_near = t1;
            axis = a;
        }
        t_far = t_far.min(t2);
    }
    if t_near > t_far || t_near <= 1e-9 {
        return None;
    }
    let mut n = Vec3::zeros();
    n[axis] = -ld[axis].signum();
    Some((t_near, yaw * n, lo + ld * t_near + half))
}

fn intersect(p: &Primitive, o: &Vec3, d: &Vec3) -> Option<Hit> {
    match p {
        Primitive::Ground { height, half_extent, .. } => {
            if d.z.abs() < 1e-15 {
                return None;
            }
            let t = (height - o.z) / d.z;
            let x = o + d * t;
            (t > 1e-9 && x.x.abs() <= *half_extent && x.y.abs() <= *half_extent).then(|| Hit {
                t,
                normal: Vec3::z() * -d.z.signum(),
                texture_point: Vec3::new(x.x, x.y, 0.0) + Vec3::repeat(1e3),
            })
        }
        Primitive::Box {
            center,
            half_size,
            yaw_deg,
            ..
        } => {
            let yaw = Rotation3::from_axis_angle(&Vec3::z_axis(), yaw_deg.to_radians()).into_inner();
            intersect_box(o, d, &Vec3::from(*center), &Vec3::from(*half_size), &yaw).map(|(t, normal, local)| Hit {
                t,
                normal,
                texture_point: local,
            })
        }
        Primitive::Sphere { center, radius, .. } => {
            let c = Vec3::from(*center);
            let oc = o - c;
            let b = oc.dot(d);
            let disc = b * b - (oc.norm_squared() - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let t = if -b - sq > 1e-9 { -b - sq } else { -b + sq };
            (t > 1e-9).then(|| {
                let x = o + d * t;
                Hit {
                    t,
                    normal: (x - c) / *radius,
                    texture_point: x - c + Vec3::repeat(1e3),
                }
            })
        }
    }
}

fn material(p: &Primitive) -> &Material {
    match p {
        Primitive::Ground { material, .. } | Primitive::Box { material, .. } | Primitive::Sphere { material, .. } => {
            material
        }
    }
}

/// Radiance along a ray with unit direction `d`.
pub fn trace(spec: &SyntheticSceneSpec, o: &Vec3, d: &Vec3) -> Vec3 {
    let nearest = spec
        .primitives
        .iter()
        .filter_map(|p| intersect(p, o, d).map(|h| (h, p)))
        .min_by(|a, b| a.0.t.total_cmp(&b.0.t));
    let Some((hit, prim)) = nearest else {
        return Vec3::from(spec.background);
    };
    let m = material(prim);
    let l = Vec3::from(spec.light.direction).normalize();
    let mut n = hit.normal;
    if n.dot(d) > 0.0 {
        n = -n;
    }
    let diffuse = n.dot(&l).max(0.0);
    let mut c = m.albedo_at(&hit.texture_point) * (spec.light.ambient + spec.light.intensity * diffuse);
    if m.specular > 0.0 && diffuse > 0.0 {
        let r = n * (2.0 * n.dot(&l)) - l;
        c += Vec3::repeat(m.specular * spec.light.intensity * r.dot(&-d).max(0.0).powf(m.shininess));
    }
    c.map(|v| v.clamp(0.0, 1.0))
}

/// Ground-truth image at `camera`; `stream` selects the supersampling jitter.
pub fn render_oracle(spec: &SyntheticSceneSpec, camera: &Camera, stream: u64) -> Image {
    let (w, h) = (camera.width, camera.height);
    let ss = spec.supersample.max(1);
    let origin = camera.center();
    let rows: Vec<Vec<Vec3>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(stream.wrapping_mul(1 << 20).wrapping_add(y as u64));
            (0..w)
                .map(|x| {
                    let mut acc = Vec3::zeros();
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let u = x as f64 + (sx as f64 + rng.random::<f64>()) / ss as f64;
                            let v = y as f64 + (sy as f64 + rng.random::<f64>()) / ss as f64;
                            acc += trace(spec, &origin, &camera.ray_direction(u, v));
                        }
                    }
                    acc / (ss * ss) as f64
                })
                .collect()
        })
        .collect();
    let mut img = Image::new(w, h);
    for (y, row) in rows.iter().enumerate() {
        for (x, c) in row.iter().enumerate() {
            img.set(x as u32, y as u32, c);
        }
    }
    img
}

pub struct SyntheticScene {
    pub spec: SyntheticSceneSpec,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
}

pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<SyntheticScene, SynthError> {
    let cameras = spec.cameras()?;
    let images = cameras
        .iter()
        .enumerate()
        .map(|(i, c)| render_oracle(spec, c, i as u64))
        .collect();
    Ok(SyntheticScene {
        spec: spec.clone(),
        cameras,
        images,
    })
}

/// Writes `images/NNNN.png`, `manifest.jsonl` and `scene.toml` under `out`
/// and returns the manifest path.
pub fn write_synthetic(scene: &SyntheticScene, out: &Path) -> Result<PathBuf, SynthError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    let image_dir = out.join("images");
    fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;
    let mut frames = Vec::with_capacity(scene.images.len());
    for (i, (img, cam)) in scene.images.iter().zip(&scene.cameras).enumerate() {
        let path = image_dir.join(format!("{i:04}.png"));
        img.save_png(&path)?;
        frames.push(Frame {
            index: i,
            image: path,
            camera: cam.clone(),
        });
    }
    let manifest = out.join("manifest.jsonl");
    write_manifest(&Dataset::from_frames(frames), &manifest)?;
    let spec_path = out.join("scene.toml");
    let text = toml::to_string(&scene.spec).map_err(|e| SynthError::Spec(e.to_string()))?;
    fs::write(&spec_path, text).map_err(io_err(&spec_path))?;
    Ok(manifest)
}

pub fn load_spec(path: &Path) -> Result<SyntheticSceneSpec, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| SynthError::Spec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(spec: &mut SyntheticSceneSpec) {
        spec.width = 24;
        spec.height = 24;
        spec.focal = 24.0;
        spec.frames = 6;
        spec.supersample = 2;
    }

    #[test]
    fn same_seed_gives_identical_images() {
        let mut spec = SyntheticSceneSpec::toy(3);
        tiny(&mut spec);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.cameras.len(), 6);
    }

    #[test]
    fn no_primitives_gives_background() {
        let mut spec = SyntheticSceneSpec::toy(1);
        tiny(&mut spec);
        spec.primitives.clear();
        spec.background = [0.2, 0.3, 0.4];
        let scene = generate_synthetic(&spec).unwrap();
        for img in &scene.images {
            for p in img.data.chunks(3) {
                assert_eq!(p, &[0.2, 0.3, 0.4]);
            }
        }
    }

    #[test]
    fn red_box_on_axis_fills_center_pixel() {
        let mut spec = SyntheticSceneSpec::toy(1);
        spec.primitives = vec![Primitive::Box {
            center: [0.0, 0.0, 0.0],
            half_size: [0.5, 0.5, 0.5],
            yaw_deg: 0.0,
            material: Material::diffuse([1.0, 0.0, 0.0]),
        }];
        spec.light.direction = [1.0, 0.0, 0.0];
        let cam = Camera::look_at(spec.intrinsics(), Vec3::new(4.0, 0.0, 0.0), Vec3::zeros(), Vec3::z(), 0.5, 10.0, "f")
            .unwrap();
        let img = render_oracle(&spec, &cam, 0);
        let c = img.get(32, 32);
        assert!(c.x > 0.9 && c.y == 0.0 && c.z == 0.0, "{c:?}");
        assert_eq!(img.get(0, 0), Vec3::repeat(1.0));
    }

    #[test]
    fn toy_rig_frames_and_ids() {
        let spec = SyntheticSceneSpec::toy(0);
        let cams = spec.cameras().unwrap();
        assert_eq!(cams.len(), 60);
        assert_eq!(cams[0].camera_id, "rig0");
        assert_eq!(cams[4].camera_id, "rig1");
        // Rig members share a center.
        assert!((cams[3].center() - cams[5].center()).norm() < 1e-12);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = SyntheticSceneSpec::toy(9);
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<SyntheticSceneSpec>(&text).unwrap(), spec);
    }
}

//! Splat and camera types, covariance construction, EWA projection and the
//! unbounded-scene contraction, each with its reverse-mode derivative.
//!
//! Conventions: quaternions are `(w, x, y, z)`, extrinsics map world to
//! camera, camera `+z` looks forward and `+y` points down the image, pixel
//! `(i, j)` covers `[i, i+1) x [j, j+1)` so its center sits at `(i+0.5, j+0.5)`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Low-pass dilation added to the diagonal of every projected covariance, in px².
pub const LOW_PASS_PX2: f64 = 0.3;
/// Projected means further than this factor outside the image are culled.
pub const FRUSTUM_GUARD: f64 = 1.3;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (Frobenius error {0:.3e})")]
    NotOrthonormal(f64),
    #[error("invalid clip range: near {near}, far {far}")]
    ClipRange { near: f64, far: f64 },
    #[error("invalid intrinsics: {0}")]
    Intrinsics(&'static str),
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// One anisotropic 3D Gaussian.
///
/// `base_color` holds the degree-0 color as per-channel logits; the rendered
/// color is `sigmoid(base_color + field residual)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat {
    pub position: Vec3,
    pub log_scale: Vec3,
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub base_color: Vec3,
}

impl Splat {
    pub fn isotropic(position: Vec3, scale: f64, opacity: f64, color: Vec3) -> Self {
        Self {
            position,
            log_scale: Vec3::repeat(scale.ln()),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            base_color: color.map(logit),
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scales(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale.max().exp()
    }

    pub fn base_rgb(&self) -> Vec3 {
        self.base_color.map(sigmoid)
    }

    pub fn normalize_rotation(&mut self) {
        let n = quat_norm(&self.rotation);
        if n > 0.0 && n.is_finite() {
            self.rotation.iter_mut().for_each(|c| *c /= n);
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
    }
}

/// Position and radius used to normalize world coordinates before contraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Default for SceneFrame {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            radius: 1.0,
        }
    }
}

impl SceneFrame {
    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn normalize(&self, x: &Vec3) -> Vec3 {
        (x - self.center()) / self.radius
    }

    pub fn denormalize(&self, x: &Vec3) -> Vec3 {
        x * self.radius + self.center()
    }
}

/// Pinhole camera with world-to-camera extrinsics.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub near: f64,
    pub far: f64,
    pub camera_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

impl Camera {
    pub fn new(
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vec3,
        near: f64,
        far: f64,
        camera_id: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx: intrinsics.fx,
            fy: intrinsics.fy,
            cx: intrinsics.cx,
            cy: intrinsics.cy,
            width: intrinsics.width,
            height: intrinsics.height,
            rotation,
            translation,
            near,
            far,
            camera_id: camera_id.into(),
        };
        cam.validate(1e-6)?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(
        intrinsics: Intrinsics,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        near: f64,
        far: f64,
        camera_id: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(intrinsics, rotation, translation, near, far, camera_id)
    }

    pub fn validate(&self, tol: f64) -> Result<(), GeometryError> {
        let err = orthonormality_error(&self.rotation);
        if !(err <= tol) {
            return Err(GeometryError::NotOrthonormal(err));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(GeometryError::ClipRange {
                near: self.near,
                far: self.far,
            });
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::Intrinsics("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::Intrinsics("image size must be non-zero"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space direction of the optical axis.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn project(&self, p_cam: &Vec3) -> Vec2 {
        Vec2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    /// Unit world-space direction through continuous image coordinates `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        let d_cam = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation.transpose() * d_cam).normalize()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera whose pixel `(i, j)` center coincides with pixel `(i*stride, j*stride)`
    /// center of `self`; the image size becomes `ceil(W/stride) x ceil(H/stride)`.
    pub fn subsampled(&self, stride: u32) -> Camera {
        assert!(stride >= 1);
        if stride == 1 {
            return self.clone();
        }
        let s = stride as f64;
        let shift = 0.5 - 0.5 / s;
        Camera {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: self.cx / s + shift,
            cy: self.cy / s + shift,
            width: self.width.div_ceil(stride),
            height: self.height.div_ceil(stride),
            ..self.clone()
        }
    }
}

pub fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Rotation matrix of the normalized quaternion `q / |q|`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let n = quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back through [`quat_to_matrix`], including the normalization.
pub fn quat_to_matrix_vjp(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let n = quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let dhat = [dw, dx, dy, dz];
    let qhat = [w, x, y, z];
    let dot: f64 = (0..4).map(|i| qhat[i] * dhat[i]).sum();
    std::array::from_fn(|i| (dhat[i] - qhat[i] * dot) / n)
}

/// Symmetric 3x3 covariance stored as `(xx, xy, xz, yy, yz, zz)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance3(pub [f64; 6]);

impl Covariance3 {
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let [xx, xy, xz, yy, yz, zz] = self.0;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self([m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]])
    }
}

/// `R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn build_covariance(log_scale: &Vec3, rotation: &[f64; 4]) -> Covariance3 {
    let r = quat_to_matrix(rotation);
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    Covariance3::from_matrix(&(m * m.transpose()))
}

/// Pulls a symmetric gradient `dL/dΣ` back to `(dL/dlog_scale, dL/drotation)`.
pub fn build_covariance_vjp(
    log_scale: &Vec3,
    rotation: &[f64; 4],
    grad_cov: &Matrix3<f64>,
) -> (Vec3, [f64; 4]) {
    let r = quat_to_matrix(rotation);
    let d = log_scale.map(|s| (2.0 * s).exp());
    let g = 0.5 * (grad_cov + grad_cov.transpose());
    let rgr = r.transpose() * g * r;
    let d_log_scale = Vec3::from_fn(|i, _| 2.0 * d[i] * rgr[(i, i)]);
    let d_r = 2.0 * g * r * Matrix3::from_diagonal(&d);
    (d_log_scale, quat_to_matrix_vjp(rotation, &d_r))
}

/// Screen-space footprint of one splat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatProjection {
    pub mean2d: Vec2,
    /// Inverse of the regularized 2x2 covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Regularized 2x2 covariance `(xx, xy, yy)`, px².
    pub cov2d: [f64; 3],
    pub depth: f64,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CullReason {
    Depth,
    Frustum,
    Degenerate,
}

pub type Projected = Result<SplatProjection, CullReason>;

fn perspective_jacobian(camera: &Camera, p: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * p.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * p.y * iz * iz,
    )
}

pub fn project_splat(splat: &Splat, camera: &Camera) -> Projected {
    let p = camera.world_to_camera(&splat.position);
    if !(p.z > camera.near && p.z < camera.far) {
        return Err(CullReason::Depth);
    }
    let mean2d = camera.project(&p);
    let w = camera.width as f64;
    let h = camera.height as f64;
    let inside = mean2d.x >= camera.cx - FRUSTUM_GUARD * camera.cx
        && mean2d.x <= camera.cx + FRUSTUM_GUARD * (w - camera.cx)
        && mean2d.y >= camera.cy - FRUSTUM_GUARD * camera.cy
        && mean2d.y <= camera.cy + FRUSTUM_GUARD * (h - camera.cy);
    if !inside {
        return Err(CullReason::Frustum);
    }
    let sigma = build_covariance(&splat.log_scale, &splat.rotation).to_matrix();
    let t = perspective_jacobian(camera, &p) * camera.rotation;
    let cov = t * sigma * t.transpose();
    let (a, b, c) = (cov[(0, 0)] + LOW_PASS_PX2, cov[(0, 1)], cov[(1, 1)] + LOW_PASS_PX2);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return Err(CullReason::Degenerate);
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    Ok(SplatProjection {
        mean2d,
        conic: [c / det, -b / det, a / det],
        cov2d: [a, b, c],
        depth: p.z,
        radius: 3.0 * lambda_max.sqrt(),
    })
}

/// Gradient of a scalar with respect to a projection's differentiable outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProjectionGrad {
    pub mean2d: Vec2,
    /// Gradients of `(a, b, c)`; `b` is the single off-diagonal parameter.
    pub conic: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryGrad {
    pub position: Vec3,
    pub log_scale: Vec3,
    pub rotation: [f64; 4],
}

/// Reverse-mode derivative of [`project_splat`] for a visible splat.
pub fn project_splat_vjp(splat: &Splat, camera: &Camera, grad: &ProjectionGrad) -> GeometryGrad {
    let p = camera.world_to_camera(&splat.position);
    let iz = 1.0 / p.z;
    let sigma = build_covariance(&splat.log_scale, &splat.rotation).to_matrix();
    let j = perspective_jacobian(camera, &p);
    let t = j * camera.rotation;
    let cov = t * sigma * t.transpose();
    let cov = Matrix2::new(cov[(0, 0)] + LOW_PASS_PX2, cov[(0, 1)], cov[(1, 0)], cov[(1, 1)] + LOW_PASS_PX2);
    let conic = cov.try_inverse().unwrap_or_else(Matrix2::zeros);

    let [ga, gb, gc] = grad.conic;
    let g_conic = Matrix2::new(ga, 0.5 * gb, 0.5 * gb, gc);
    let g_cov = -(conic * g_conic * conic);
    let g_sigma = t.transpose() * g_cov * t;
    let g_t = 2.0 * g_cov * t * sigma;
    let g_j = g_t * camera.rotation.transpose();

    let (fx, fy) = (camera.fx, camera.fy);
    let mut g_p = Vec3::zeros();
    g_p.x += g_j[(0, 2)] * (-fx * iz * iz);
    g_p.y += g_j[(1, 2)] * (-fy * iz * iz);
    g_p.z += g_j[(0, 0)] * (-fx * iz * iz)
        + g_j[(0, 2)] * (2.0 * fx * p.x * iz * iz * iz)
        + g_j[(1, 1)] * (-fy * iz * iz)
        + g_j[(1, 2)] * (2.0 * fy * p.y * iz * iz * iz);
    g_p.x += grad.mean2d.x * fx * iz;
    g_p.y += grad.mean2d.y * fy * iz;
    g_p.z += -grad.mean2d.x * fx * p.x * iz * iz - grad.mean2d.y * fy * p.y * iz * iz;

    let (log_scale, rotation) = build_covariance_vjp(&splat.log_scale, &splat.rotation, &g_sigma);
    GeometryGrad {
        position: camera.rotation.transpose() * g_p,
        log_scale,
        rotation,
    }
}

/// Maps all of space into the open ball of radius 2; identity on the unit ball.
pub fn contract(x: &Vec3) -> Vec3 {
    let n = x.norm();
    if n <= 1.0 {
        *x
    } else {
        x * ((2.0 - 1.0 / n) / n)
    }
}

/// Jacobian `d contract(x) / dx`.
pub fn contract_jacobian(x: &Vec3) -> Matrix3<f64> {
    let n = x.norm();
    if n <= 1.0 {
        return Matrix3::identity();
    }
    // f(x) = g(n) x with g(n) = 2/n - 1/n²; df = g I + g'(n) x xᵀ / n
    let g = 2.0 / n - 1.0 / (n * n);
    let dg = -2.0 / (n * n) + 2.0 / (n * n * n);
    Matrix3::identity() * g + x * x.transpose() * (dg / n)
}

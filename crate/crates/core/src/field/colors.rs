//! View-dependent splat colors from the field's color network.

use rayon::prelude::*;

use super::sh::sh_basis_jacobian;
use super::{ColorMode, FieldGrad, FieldParams};
use crate::geometry::{sigmoid, Camera, Splat, Vec3};
use crate::raster::SplatGradients;

const SPLAT_CHUNK: usize = 64;

/// Unit direction from the camera center to `x`, or the optical axis when they coincide.
/// The second value is the distance, zero in the degenerate case.
pub fn view_direction(camera: &Camera, x: &Vec3) -> (Vec3, f64) {
    let v = x - camera.center();
    let n = v.norm();
    if n > 1e-12 {
        (v / n, n)
    } else {
        (camera.forward(), 0.0)
    }
}

fn combine(mode: ColorMode, base: &Vec3, logits: &Vec3) -> Vec3 {
    match mode {
        ColorMode::Residual => (base + logits).map(sigmoid),
        ColorMode::FieldOnly => logits.map(sigmoid),
    }
}

/// Colors of `splats` seen from `camera`. Splats with `active[i] == false` get
/// their base color without a field query.
pub fn splat_colors(field: &FieldParams, splats: &[Splat], camera: &Camera, active: Option<&[bool]>) -> Vec<Vec3> {
    splats
        .par_chunks(SPLAT_CHUNK)
        .enumerate()
        .flat_map_iter(|(c, chunk)| {
            let mut cache = field.new_cache();
            chunk
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let i = c * SPLAT_CHUNK + k;
                    if active.is_some_and(|a| !a[i]) {
                        return s.base_rgb();
                    }
                    let (d, _) = view_direction(camera, &s.position);
                    let logits = field.eval(&s.position, Some(&d), &mut cache).logits;
                    combine(field.color_mode, &s.base_color, &logits)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Backpropagates `grads.color` into splat base colors and positions (added to
/// `grads`) and into the field (added to the dense `field_grad`).
pub fn splat_colors_backward(
    field: &FieldParams,
    splats: &[Splat],
    camera: &Camera,
    grads: &mut SplatGradients,
    field_grad: &mut [f64],
) {
    assert_eq!(splats.len(), grads.len());
    let d_colors = &grads.color;
    let chunks: Vec<(FieldGrad, Vec<(usize, Vec3, Vec3)>)> = splats
        .par_chunks(SPLAT_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut cache = field.new_cache();
            let mut fg = field.new_grad();
            let mut out = Vec::new();
            for (k, s) in chunk.iter().enumerate() {
                let i = c * SPLAT_CHUNK + k;
                let g = d_colors[i];
                if g == Vec3::zeros() {
                    continue;
                }
                let (d, dist) = view_direction(camera, &s.position);
                let logits = field.eval(&s.position, Some(&d), &mut cache).logits;
                let rgb = combine(field.color_mode, &s.base_color, &logits);
                let d_z = g.component_mul(&rgb.map(|v| v * (1.0 - v)));
                let d_base = match field.color_mode {
                    ColorMode::Residual => d_z,
                    ColorMode::FieldOnly => Vec3::zeros(),
                };
                let input = field.backward(&mut cache, 0.0, Some(&d_z), &mut fg, true).unwrap();
                let mut d_pos = input.position;
                if dist > 0.0 {
                    let jac = sh_basis_jacobian(&d);
                    let mut d_dir = Vec3::zeros();
                    for (row, gk) in jac.iter().zip(&input.sh) {
                        d_dir += Vec3::from(*row) * *gk;
                    }
                    d_pos += (d_dir - d * d.dot(&d_dir)) / dist;
                }
                out.push((i, d_base, d_pos));
            }
            (fg, out)
        })
        .collect();
    let grid_len = field.grid_len();
    for (fg, per_splat) in chunks {
        fg.add_to(field_grad, grid_len);
        for (i, d_base, d_pos) in per_splat {
            grads.base_color[i] += d_base;
            grads.position[i] += d_pos;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::tests::small_config;
    use crate::geometry::{Intrinsics, SceneFrame};
    use nalgebra::Matrix3;

    fn camera() -> Camera {
        let intr = Intrinsics {
            fx: 30.0,
            fy: 30.0,
            cx: 16.0,
            cy: 16.0,
            width: 32,
            height: 32,
        };
        Camera::new(intr, Matrix3::identity(), Vec3::new(0.0, 0.0, 2.0), 0.1, 20.0, "c").unwrap()
    }

    #[test]
    fn zero_residual_reproduces_base_color() {
        let field = FieldParams::new(small_config(), SceneFrame::default(), ColorMode::Residual, 1);
        let splats = vec![Splat::isotropic(Vec3::new(0.1, 0.2, 0.3), 0.1, 0.5, Vec3::new(0.9, 0.2, 0.4))];
        let colors = splat_colors(&field, &splats, &camera(), None);
        assert!((colors[0] - Vec3::new(0.9, 0.2, 0.4)).norm() < 1e-12);
    }

    #[test]
    fn splat_at_camera_center_uses_optical_axis() {
        let cam = camera();
        let (d, dist) = view_direction(&cam, &cam.center());
        assert_eq!(d, cam.forward());
        assert_eq!(dist, 0.0);
        let field = FieldParams::random(small_config(), SceneFrame::default(), ColorMode::Residual, 3);
        let splats = vec![Splat::isotropic(cam.center(), 0.1, 0.5, Vec3::repeat(0.5))];
        let c = splat_colors(&field, &splats, &cam, None)[0];
        assert!(c.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for mode in [ColorMode::Residual, ColorMode::FieldOnly] {
            let field = FieldParams::random(small_config(), SceneFrame::default(), mode, 6);
            let cam = camera();
            let splats = vec![
                Splat::isotropic(Vec3::new(0.1, 0.2, 0.3), 0.1, 0.5, Vec3::new(0.9, 0.2, 0.4)),
                Splat::isotropic(Vec3::new(-0.4, 0.05, 0.6), 0.1, 0.5, Vec3::new(0.3, 0.6, 0.5)),
            ];
            let w = [Vec3::new(0.4, -0.9, 0.3), Vec3::new(-0.2, 0.5, 0.8)];
            let loss = |f: &FieldParams, s: &[Splat]| {
                splat_colors(f, s, &cam, None).iter().zip(&w).map(|(c, w)| c.dot(w)).sum::<f64>()
            };
            let mut grads = SplatGradients::zeros(2);
            grads.color = w.to_vec();
            let mut fgrad = vec![0.0; field.weights.len()];
            splat_colors_backward(&field, &splats, &cam, &mut grads, &mut fgrad);
            let h = 1e-6;
            let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()) + 1e-9;
            for i in 0..2 {
                for a in 0..3 {
                    let mut sp = splats.clone();
                    let mut sm = splats.clone();
                    sp[i].position[a] += h;
                    sm[i].position[a] -= h;
                    let fd = (loss(&field, &sp) - loss(&field, &sm)) / (2.0 * h);
                    assert!(close(fd, grads.position[i][a]), "{mode} pos {i}{a}: {fd} vs {}", grads.position[i][a]);
                    let mut sp = splats.clone();
                    let mut sm = splats.clone();
                    sp[i].base_color[a] += h;
                    sm[i].base_color[a] -= h;
                    let fd = (loss(&field, &sp) - loss(&field, &sm)) / (2.0 * h);
                    assert!(close(fd, grads.base_color[i][a]), "{mode} base {i}{a}");
                }
            }
            for k in (0..field.weights.len()).step_by(5) {
                let mut fp = field.clone();
                let mut fm = field.clone();
                fp.weights[k] += h;
                fm.weights[k] -= h;
                let fd = (loss(&fp, &splats) - loss(&fm, &splats)) / (2.0 * h);
                assert!(close(fd, fgrad[k]), "{mode} weight {k}: {fd} vs {}", fgrad[k]);
            }
        }
    }

    #[test]
    fn colors_ignore_density_output_row() {
        let field = FieldParams::random(small_config(), SceneFrame::default(), ColorMode::Residual, 2);
        let cam = camera();
        let splats = vec![Splat::isotropic(Vec3::new(0.1, 0.0, 0.2), 0.1, 0.5, Vec3::repeat(0.4))];
        let mut grads = SplatGradients::zeros(1);
        grads.color = vec![Vec3::new(1.0, -1.0, 0.5)];
        let mut fgrad = vec![0.0; field.weights.len()];
        splat_colors_backward(&field, &splats, &cam, &mut grads, &mut fgrad);
        let net = field.density_net();
        let off = net.layer_offset(net.layer_count() - 1);
        let n_in = net.sizes[net.layer_count() - 1];
        let n_out = net.output_dim();
        assert!(fgrad[off..off + n_in].iter().all(|&g| g == 0.0));
        assert_eq!(fgrad[off + n_in * n_out], 0.0);
        assert!(fgrad[off + n_in..off + 2 * n_in].iter().any(|&g| g != 0.0));
    }
}

use nalgebra::Matrix3;
use proptest::prelude::*;

use splatfield::field::checkpoint::{read_field, write_field};
use splatfield::field::colors::splat_colors;
use splatfield::field::render::{march_ray, Ray, RayMarch};
use splatfield::field::{ColorMode, FieldConfig, FieldParams, SlabField};
use splatfield::geometry::{build_covariance, contract, project_splat, Camera, Intrinsics, SceneFrame, Splat, Vec3};
use splatfield::raster::{render, RasterConfig};

fn camera(size: u32) -> Camera {
    let f = size as f64;
    let intr = Intrinsics {
        fx: f,
        fy: f,
        cx: f / 2.0,
        cy: f / 2.0,
        width: size,
        height: size,
    };
    Camera::new(intr, Matrix3::identity(), Vec3::new(0.0, 0.0, 3.0), 0.1, 20.0, "test").unwrap()
}

fn splat_strategy() -> impl Strategy<Value = Splat> {
    (
        prop::array::uniform3(-1.0..1.0f64),
        prop::array::uniform3(-3.0..-0.5f64),
        prop::array::uniform4(-1.0..1.0f64),
        -4.0..6.0f64,
        prop::array::uniform3(-2.0..2.0f64),
    )
        .prop_filter("non-zero rotation", |(_, _, q, _, _)| q.iter().map(|c| c * c).sum::<f64>() > 1e-3)
        .prop_map(|(p, s, q, o, c)| Splat {
            position: Vec3::from(p),
            log_scale: Vec3::from(s),
            rotation: q,
            opacity_logit: o,
            base_color: Vec3::from(c),
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coverage_and_background_identity(splats in prop::collection::vec(splat_strategy(), 0..24), bg in prop::array::uniform3(0.0..1.0f64)) {
        let cam = camera(32);
        let colors: Vec<Vec3> = splats.iter().map(|s| s.base_rgb()).collect();
        let bg = Vec3::from(bg);
        let r = render(&splats, colors.clone(), &cam, &bg, &RasterConfig::default());
        let black = render(&splats, colors, &cam, &Vec3::zeros(), &RasterConfig::default());
        for p in 0..r.output.accum_alpha.len() {
            let a = r.output.accum_alpha[p];
            prop_assert!((0.0..=1.0).contains(&a));
            for c in 0..3 {
                let expected = black.output.image[3 * p + c] + (1.0 - a) * bg[c];
                prop_assert!((r.output.image[3 * p + c] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_is_positive_semidefinite(s in prop::array::uniform3(-6.0..3.0f64), q in prop::array::uniform4(-1.0..1.0f64)) {
        prop_assume!(q.iter().map(|c| c * c).sum::<f64>() > 1e-6);
        let sigma = build_covariance(&Vec3::from(s), &q).to_matrix();
        let eig = sigma.symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|&e| e >= -1e-9));
    }

    #[test]
    fn projected_splats_are_in_front_with_definite_footprint(s in splat_strategy()) {
        if let Ok(p) = project_splat(&s, &camera(64)) {
            prop_assert!(p.depth > 0.0);
            let [a, b, c] = p.cov2d;
            prop_assert!(a > 0.0 && a * c - b * b > 0.0);
        }
    }

    #[test]
    fn contraction_stays_inside_radius_two(v in prop::array::uniform3(-1e6..1e6f64)) {
        let x = Vec3::from(v);
        let y = contract(&x);
        prop_assert!(y.norm() < 2.0);
        if x.norm() <= 1.0 {
            prop_assert_eq!(y, x);
        }
    }
}

#[test]
fn slab_transmittance_and_depth() {
    // Density 3 on [1, 2] along the ray: T(far) = e^-3, depth is the mean of
    // the exponential restricted to the slab.
    let slab = SlabField {
        normal: Vec3::x(),
        start: 1.0,
        thickness: 1.0,
        sigma: 3.0,
        rgb: Vec3::new(0.2, 0.4, 0.6),
    };
    let ray = Ray {
        origin: Vec3::zeros(),
        direction: Vec3::x(),
        near: 0.0,
        far: 3.0,
    };
    let s = march_ray(&slab, &ray, &RayMarch::with_samples(3000), 0);
    let r = s.result();
    assert!((r.transmittance - (-3.0f64).exp()).abs() < 1e-9);
    let e3 = (-3.0f64).exp();
    let depth = (1.0 + 1.0 / 3.0) - e3 * (2.0 + 1.0 / 3.0);
    assert!((r.depth - depth).abs() < 1e-4, "{} vs {depth}", r.depth);
    assert!(s.transmittance.windows(2).all(|w| w[1] <= w[0]));
    assert!(s.weight.iter().sum::<f64>() <= 1.0);
}

#[test]
fn field_checkpoint_round_trip_preserves_colors() {
    let cfg = FieldConfig {
        levels: 4,
        log2_table_size: 10,
        density_hidden: 16,
        color_hidden: 16,
        ..FieldConfig::default()
    };
    let field = FieldParams::random(cfg, SceneFrame::default(), ColorMode::Residual, 5);
    let mut bytes = Vec::new();
    write_field(&field, &mut bytes).unwrap();
    let loaded = read_field(&bytes[..]).unwrap();
    let mut again = Vec::new();
    write_field(&loaded, &mut again).unwrap();
    assert_eq!(bytes, again);

    let cam = camera(16);
    let splats: Vec<Splat> = (0..10)
        .map(|i| Splat::isotropic(Vec3::new(0.1 * i as f64 - 0.5, 0.05, 0.2), 0.1, 0.5, Vec3::new(0.3, 0.5, 0.7)))
        .collect();
    let a = splat_colors(&field, &splats, &cam, None);
    let b = splat_colors(&loaded, &splats, &cam, None);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).norm() < 1e-5);
        assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

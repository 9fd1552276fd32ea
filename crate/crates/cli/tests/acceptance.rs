//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Criterion numbers given as arguments select a subset. The end-to-end criteria train on the toy scene
//! through the `splatfield` binary and take a while on few cores.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatfield::densify::{harvest_from_rays, DensifyConfig};
use splatfield::field::colors::{splat_colors, splat_colors_backward};
use splatfield::field::render::{march_ray, Ray, RayMarch};
use splatfield::field::{BoxField, ColorMode, ConstantField, FieldConfig, FieldParams};
use splatfield::geometry::{contract, Camera, Intrinsics, SceneFrame, Splat, Vec3};
use splatfield::io::splatfile::{load_splats, sh3_file_size, splat_file_size};
use splatfield::raster::{backward, blend_pixel, project_all, render_projected, BlendInputs, RasterConfig};

type Outcome = Result<String, String>;

fn main() -> ExitCode {
    let criteria: Vec<(&str, fn(&mut Shared) -> Outcome)> = vec![
        ("gradient correctness", gradient_correctness),
        ("compositing invariants", compositing_invariants),
        ("volume-rendering oracle", volume_rendering),
        ("contraction suite", contraction_suite),
        ("end-to-end without initial points", end_to_end),
        ("ablation ordering", ablation_ordering),
        ("storage reduction", storage_reduction),
        ("harvest correctness", harvest_correctness),
        ("determinism", determinism),
    ];
    // Criterion numbers on the command line restrict the run to those.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut shared = Shared::new();
    let mut failed = 0;
    let mut ran = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(n + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = check(&mut shared);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {} ({name}): {msg} [{secs:.1}s]", n + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {msg} [{secs:.1}s]", n + 1);
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Training runs shared between the end-to-end criteria.
struct Shared {
    work: PathBuf,
    data: Option<Result<PathBuf, String>>,
    runs: Vec<(String, Result<RunResult, String>)>,
}

#[derive(Clone, Debug)]
struct RunResult {
    dir: PathBuf,
    psnr: f64,
    ssim: f64,
}

impl Shared {
    fn new() -> Self {
        let work = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        let _ = fs::remove_dir_all(&work);
        fs::create_dir_all(&work).expect("create acceptance work dir");
        Self {
            work,
            data: None,
            runs: Vec::new(),
        }
    }

    fn toy_data(&mut self) -> Result<PathBuf, String> {
        if self.data.is_none() {
            let out = self.work.join("toy");
            let r = splatfield_cmd(&["synth", "--toy", "--seed", "0", "--out", path_str(&out)])
                .map(|_| out.join("manifest.jsonl"));
            self.data = Some(r);
        }
        self.data.clone().unwrap()
    }

    /// Trains the toy scene with `extra` flags once and caches the held-out metrics.
    fn toy_run(&mut self, name: &str, extra: &[&str]) -> Result<RunResult, String> {
        if let Some((_, r)) = self.runs.iter().find(|(n, _)| n == name) {
            return r.clone();
        }
        let data = self.toy_data()?;
        let dir = self.work.join(name);
        let mut args = vec!["train", "--toy", "--data", path_str(&data), "--out", path_str(&dir)];
        args.extend_from_slice(extra);
        let r = splatfield_cmd(&args).and_then(|_| {
            let text = fs::read_to_string(dir.join("metrics.json")).map_err(|e| e.to_string())?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            Ok(RunResult {
                psnr: v["mean_psnr"].as_f64().ok_or("metrics without mean_psnr")?,
                ssim: v["mean_ssim"].as_f64().ok_or("metrics without mean_ssim")?,
                dir: dir.clone(),
            })
        });
        self.runs.push((name.to_string(), r.clone()));
        r
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn splatfield_cmd(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_splatfield"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "splatfield {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn grad_camera() -> Camera {
    let intr = Intrinsics {
        fx: 36.0,
        fy: 36.0,
        cx: 16.0,
        cy: 16.0,
        width: 32,
        height: 32,
    };
    Camera::new(intr, Matrix3::identity(), Vec3::new(0.0, 0.0, 2.5), 0.1, 20.0, "grad").unwrap()
}

fn random_splat(rng: &mut impl Rng, spread: f64) -> Splat {
    let q = [0; 4].map(|_| rng.random_range(-1.0..1.0));
    Splat {
        position: Vec3::new(
            rng.random_range(-spread..spread),
            rng.random_range(-spread..spread),
            rng.random_range(-0.6..0.6),
        ),
        log_scale: Vec3::from_fn(|_, _| rng.random_range(-2.6..-1.4)),
        rotation: q,
        opacity_logit: rng.random_range(-1.5..2.0),
        base_color: Vec3::from_fn(|_, _| rng.random_range(-1.5..1.5)),
    }
}

struct GradScene {
    splats: Vec<Splat>,
    field: FieldParams,
    camera: Camera,
    background: Vec3,
    target: Vec<f64>,
}

impl GradScene {
    fn image(&self, splats: &[Splat], field: &FieldParams) -> Vec<f64> {
        let projections = project_all(splats, &self.camera);
        let active: Vec<bool> = projections.iter().map(Result::is_ok).collect();
        let colors = splat_colors(field, splats, &self.camera, Some(&active));
        render_projected(splats, projections, colors, &self.camera, &self.background, &RasterConfig::default())
            .output
            .image
    }

    /// Central difference of the squared-error loss. Pixel differences are
    /// formed first so the large loss value never cancels.
    fn central_difference(&self, h: f64, perturb: impl Fn(f64, &mut Vec<Splat>, &mut FieldParams)) -> f64 {
        let eval = |s: f64| {
            let mut splats = self.splats.clone();
            let mut field = self.field.clone();
            perturb(s, &mut splats, &mut field);
            self.image(&splats, &field)
        };
        let plus = eval(h);
        let minus = eval(-h);
        let mut sum = 0.0;
        for ((p, m), t) in plus.iter().zip(&minus).zip(&self.target) {
            sum += (p - m) * (p + m - 2.0 * t);
        }
        sum / (2.0 * h)
    }
}

fn grad_field_config() -> FieldConfig {
    FieldConfig {
        levels: 3,
        log2_table_size: 8,
        features_per_level: 2,
        base_resolution: 4.0,
        max_resolution: 16.0,
        density_hidden: 8,
        color_hidden: 8,
        color_hidden_layers: 1,
        density_bias: -1.0,
    }
}

fn grads_agree(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-8f64.max(1e-3 * analytic.abs().max(numeric.abs()))
}

/// A central difference whose stencil straddles a kink (ReLU, grid cell edge,
/// alpha cutoff) is retried at other step sizes before counting as a mismatch.
const FD_STEPS: [f64; 3] = [1e-6, 1e-5, 1e-7];

fn gradient_correctness(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0usize;
    for scene_index in 0..20 {
        let count = rng.random_range(1..=8);
        let splats: Vec<Splat> = (0..count).map(|_| random_splat(&mut rng, 0.5)).collect();
        let mode = if scene_index % 4 == 3 { ColorMode::FieldOnly } else { ColorMode::Residual };
        let scene = GradScene {
            splats,
            field: FieldParams::random(grad_field_config(), SceneFrame::default(), mode, scene_index),
            camera: grad_camera(),
            background: Vec3::from_fn(|_, _| rng.random()),
            target: (0..32 * 32 * 3).map(|_| rng.random()).collect(),
        };

        let projections = project_all(&scene.splats, &scene.camera);
        let active: Vec<bool> = projections.iter().map(Result::is_ok).collect();
        let colors = splat_colors(&scene.field, &scene.splats, &scene.camera, Some(&active));
        let config = RasterConfig::default();
        let rendered = render_projected(&scene.splats, projections, colors, &scene.camera, &scene.background, &config);
        let d_image: Vec<f64> = rendered
            .output
            .image
            .iter()
            .zip(&scene.target)
            .map(|(r, t)| 2.0 * (r - t))
            .collect();
        let mut grads = backward(&rendered, &scene.splats, &scene.camera, &d_image, &config);
        let mut field_grad = vec![0.0; scene.field.weights.len()];
        splat_colors_backward(&scene.field, &scene.splats, &scene.camera, &mut grads, &mut field_grad);

        let mut check = |analytic: f64, what: &dyn Fn() -> String, perturb: &dyn Fn(f64, &mut Vec<Splat>, &mut FieldParams)| {
            checked += 1;
            let mut last = 0.0;
            for h in FD_STEPS {
                last = scene.central_difference(h, perturb);
                if grads_agree(analytic, last) {
                    return Ok(());
                }
            }
            Err(format!("scene {scene_index} {}: analytic {analytic:e} vs numeric {last:e}", what()))
        };

        for i in 0..scene.splats.len() {
            for a in 0..3 {
                check(grads.position[i][a], &|| format!("splat {i} position[{a}]"), &|s, sp, _| {
                    sp[i].position[a] += s
                })?;
                check(grads.log_scale[i][a], &|| format!("splat {i} log_scale[{a}]"), &|s, sp, _| {
                    sp[i].log_scale[a] += s
                })?;
                check(grads.base_color[i][a], &|| format!("splat {i} base_color[{a}]"), &|s, sp, _| {
                    sp[i].base_color[a] += s
                })?;
            }
            for a in 0..4 {
                check(grads.rotation[i][a], &|| format!("splat {i} rotation[{a}]"), &|s, sp, _| {
                    sp[i].rotation[a] += s
                })?;
            }
            check(grads.opacity_logit[i], &|| format!("splat {i} opacity"), &|s, sp, _| sp[i].opacity_logit += s)?;
        }
        for w in 0..scene.field.weights.len() {
            check(field_grad[w], &|| format!("field weight {w}"), &|s, _, f| f.weights[w] += s)?;
        }
    }
    Ok(format!("{checked} parameters over 20 scenes within rel 1e-3 / abs 1e-8"))
}

fn compositing_invariants(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let intr = Intrinsics {
        fx: 60.0,
        fy: 60.0,
        cx: 32.0,
        cy: 32.0,
        width: 64,
        height: 64,
    };
    let camera = Camera::new(intr, Matrix3::identity(), Vec3::new(0.0, 0.0, 3.0), 0.1, 20.0, "c").unwrap();
    let config = RasterConfig::default();
    let background = Vec3::new(0.2, 0.5, 0.8);
    let mut pixels = 0usize;
    let mut max_sum = 0.0f64;
    let mut max_gap = 0.0f64;
    for scene in 0..100 {
        let count = rng.random_range(20..120);
        let splats: Vec<Splat> = (0..count)
            .map(|_| {
                let mut s = random_splat(&mut rng, 1.0);
                s.log_scale.add_scalar_mut(0.8);
                s.opacity_logit = rng.random_range(-3.0..6.0);
                s
            })
            .collect();
        let colors: Vec<Vec3> = (0..count).map(|_| Vec3::from_fn(|_, _| rng.random())).collect();
        let projections = project_all(&splats, &camera);
        let rendered = render_projected(&splats, projections, colors.clone(), &camera, &background, &config);
        let inputs = BlendInputs {
            projections: &rendered.projections,
            opacities: &rendered.opacities,
            colors: &rendered.colors,
        };
        for _ in 0..1000 {
            let x = rng.random_range(0..64u32);
            let y = rng.random_range(0..64u32);
            let list = rendered.state.bins.tile_at(x / config.tile_size, y / config.tile_size);
            let mut sum = 0.0;
            blend_pixel(&inputs, list, x as f64 + 0.5, y as f64 + 0.5, &config, |_, w| sum += w);
            let alpha = rendered.output.accum_alpha[(y * 64 + x) as usize];
            max_sum = max_sum.max(sum);
            max_gap = max_gap.max((sum - alpha).abs());
            pixels += 1;
        }

        let mut order: Vec<usize> = (0..count).collect();
        for i in (1..count).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<Splat> = order.iter().map(|&i| splats[i].clone()).collect();
        let shuffled_colors: Vec<Vec3> = order.iter().map(|&i| colors[i]).collect();
        let again = render_projected(
            &shuffled,
            project_all(&shuffled, &camera),
            shuffled_colors,
            &camera,
            &background,
            &config,
        );
        let same = rendered.output.image.iter().zip(&again.output.image).all(|(a, b)| a.to_bits() == b.to_bits())
            && rendered
                .output
                .accum_alpha
                .iter()
                .zip(&again.output.accum_alpha)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(format!("scene {scene}: render changed under a permutation of the splats"));
        }
    }
    if max_sum > 1.0 + 1e-6 {
        return Err(format!("weight sum reached {max_sum}"));
    }
    if max_gap > 1e-6 {
        return Err(format!("accum_alpha differs from the weight sum by {max_gap:e}"));
    }
    Ok(format!(
        "{pixels} pixels, max weight sum {max_sum:.9}, max |sum - accum_alpha| {max_gap:.1e}, 100 permutations bit-exact"
    ))
}

fn volume_rendering(_: &mut Shared) -> Outcome {
    let field = ConstantField {
        sigma: 2.0,
        rgb: Vec3::new(0.3, 0.6, 0.9),
    };
    let ray = Ray {
        origin: Vec3::zeros(),
        direction: Vec3::x(),
        near: 0.0,
        far: 4.0,
    };
    let s = march_ray(&field, &ray, &RayMarch::with_samples(256), 0);
    let delta = 4.0 / 256.0;
    let mut worst = 0.0f64;
    for (k, t) in s.transmittance.iter().enumerate() {
        let u = k as f64 * delta;
        worst = worst.max((t - (-2.0 * u).exp()).abs());
    }
    worst = worst.max((s.final_transmittance - (-8.0f64).exp()).abs());
    if worst > 1e-3 {
        return Err(format!("transmittance off by {worst:e} at 256 samples"));
    }

    // Expected depth over [0, 4]; the untruncated limit is 1/sigma = 0.5.
    let exact = 0.5 - 4.5 * (-8.0f64).exp();
    let counts = [16usize, 32, 64, 128, 256, 512, 1024];
    let depths: Vec<f64> = counts
        .iter()
        .map(|&n| march_ray(&field, &ray, &RayMarch::with_samples(n), 0).result().depth)
        .collect();
    let errors: Vec<f64> = depths.iter().map(|d| (d - exact).abs()).collect();
    let orders: Vec<f64> = errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect();
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    let last = *depths.last().unwrap();
    if (last - 0.5).abs() > 1e-2 {
        return Err(format!("expected depth {last} at 1024 samples"));
    }
    if min_order < 1.0 {
        return Err(format!("convergence order {min_order:.2} (errors {errors:?})"));
    }
    Ok(format!(
        "transmittance max error {worst:.1e}; depth {last:.6} at 1024 samples, observed order >= {min_order:.2}"
    ))
}

fn random_direction(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn contraction_suite(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100_000 {
        let x = random_direction(&mut rng) * rng.random_range(0.0..=1.0);
        if contract(&x) != x {
            return Err(format!("contract moved {x:?} inside the unit ball"));
        }
    }
    let mut max_norm = 0.0f64;
    for _ in 0..1_000_000 {
        let r = 10f64.powf(rng.random_range(-3.0..=6.0));
        let y = contract(&(random_direction(&mut rng) * r));
        let n = y.norm();
        if !(n < 2.0) {
            return Err(format!("output norm {n} for input norm {r}"));
        }
        max_norm = max_norm.max(n);
    }
    for i in 0..100_000 {
        let x = random_direction(&mut rng) * 10f64.powf(rng.random_range(-3.0..=6.0));
        // Half the pairs are near neighbours so distinctness is actually exercised.
        let y = if i % 2 == 0 {
            random_direction(&mut rng) * 10f64.powf(rng.random_range(-3.0..=6.0))
        } else {
            x + random_direction(&mut rng) * (x.norm() * 1e-7).min(1e-4)
        };
        if x != y && contract(&x) == contract(&y) {
            return Err(format!("{x:?} and {y:?} contract to the same point"));
        }
    }
    let v = contract(&Vec3::new(3.0, 0.0, 0.0));
    if v != Vec3::new(5.0 / 3.0, 0.0, 0.0) {
        return Err(format!("(3, 0, 0) maps to {v:?}"));
    }
    Ok(format!("identity on 1e5 ball points, max norm {max_norm:.12} over 1e6 inputs, 1e5 pairs distinct, (3,0,0) -> (5/3,0,0)"))
}

fn end_to_end(shared: &mut Shared) -> Outcome {
    let full = shared.toy_run("full", &[])?;
    let bare = shared.toy_run("no-harvest", &["--no-harvest"])?;
    let summary = format!(
        "full PSNR {:.2} dB SSIM {:.4}; no-harvest PSNR {:.2} dB",
        full.psnr, full.ssim, bare.psnr
    );
    if full.psnr < 25.0 || full.ssim < 0.80 {
        return Err(format!("{summary} (need PSNR >= 25, SSIM >= 0.80)"));
    }
    if full.psnr - bare.psnr < 3.0 {
        return Err(format!("{summary} (need a 3 dB gap)"));
    }
    Ok(summary)
}

fn ablation_ordering(shared: &mut Shared) -> Outcome {
    let full = shared.toy_run("full", &[])?;
    let no_warp = shared.toy_run("no-warp", &["--no-warp"])?;
    let bare = shared.toy_run("no-harvest", &["--no-harvest"])?;
    let summary = format!(
        "PSNR full {:.2} / no-warp {:.2} / no-harvest {:.2} dB",
        full.psnr, no_warp.psnr, bare.psnr
    );
    if full.psnr - no_warp.psnr >= 0.3 && no_warp.psnr - bare.psnr >= 0.3 {
        Ok(summary)
    } else {
        Err(format!("{summary} (need margins >= 0.3 dB)"))
    }
}

fn storage_reduction(shared: &mut Shared) -> Outcome {
    let per_splat = (splat_file_size(1001) - splat_file_size(1000)) / 4;
    let reference = (sh3_file_size(1001) - sh3_file_size(1000)) / 4;
    if per_splat != 14 || reference != 59 {
        return Err(format!("{per_splat} vs {reference} floats per splat"));
    }
    let full = shared.toy_run("full", &[])?;
    let splat_path = full.dir.join("splats.hogs");
    let field_path = full.dir.join("field.hogf");
    let count = load_splats(&splat_path).map_err(|e| e.to_string())?.len();
    let size = |p: &Path| fs::metadata(p).map(|m| m.len()).map_err(|e| format!("{}: {e}", p.display()));
    let total = size(&splat_path)? + size(&field_path)?;
    let baseline = sh3_file_size(count);
    let share = total as f64 / baseline as f64;
    let summary = format!(
        "14 vs 59 floats ({:.2}x); toy artifact {total} bytes = {:.1}% of the SH3 file for {count} splats",
        59.0 / 14.0,
        100.0 * share
    );
    if share <= 0.40 {
        Ok(summary)
    } else {
        Err(format!("{summary} (limit 40%)"))
    }
}

fn harvest_cameras() -> Vec<Camera> {
    let intr = Intrinsics {
        fx: 40.0,
        fy: 40.0,
        cx: 24.0,
        cy: 24.0,
        width: 48,
        height: 48,
    };
    (0..6)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / 6.0;
            let eye = Vec3::new(3.0 * a.cos(), 0.8, 3.0 * a.sin());
            Camera::look_at(intr, eye, Vec3::zeros(), Vec3::y(), 0.1, 8.0, format!("cam{i}")).unwrap()
        })
        .collect()
}

fn harvest_correctness(_: &mut Shared) -> Outcome {
    let cameras = harvest_cameras();
    let frame = SceneFrame::default();
    let config = DensifyConfig {
        harvest_samples: 128,
        dedup_resolution: 4096,
        ..DensifyConfig::default()
    };
    let boxed = BoxField {
        min: Vec3::new(-0.4, -0.3, -0.5),
        max: Vec3::new(0.5, 0.35, 0.2),
        sigma: 40.0,
        rgb: Vec3::new(0.8, 0.3, 0.1),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rays: Vec<(usize, Ray)> = cameras
        .iter()
        .enumerate()
        .flat_map(|(c, cam)| {
            (0..cam.height).flat_map(move |y| (0..cam.width).map(move |x| (c, Ray::through_pixel(cam, x, y))))
        })
        .collect();
    let (splats, report) = harvest_from_rays(&boxed, &cameras, &rays, &frame, &config, usize::MAX, &mut rng);
    if splats.is_empty() {
        return Err("nothing harvested from the box".into());
    }
    let interval = rays
        .iter()
        .map(|(_, r)| (r.far - r.near) / config.harvest_samples as f64)
        .fold(0.0, f64::max);
    let outside = splats.iter().filter(|s| boxed.distance(&s.position) > interval).count();
    if outside > 0 {
        return Err(format!("{outside} of {} points outside the dilated box", splats.len()));
    }
    let (empty, _) = harvest_from_rays(&ConstantField::empty(), &cameras, &rays, &frame, &config, usize::MAX, &mut rng);
    if !empty.is_empty() {
        return Err(format!("{} points harvested from the empty field", empty.len()));
    }
    Ok(format!(
        "{} of {} rays harvested, all inside the box dilated by {interval:.4}; empty field gave none",
        splats.len(),
        report.rays_cast
    ))
}

fn determinism(shared: &mut Shared) -> Outcome {
    let data = shared.toy_data()?;
    let mut outputs = Vec::new();
    for run in ["det-a", "det-b"] {
        let dir = shared.work.join(run);
        splatfield_cmd(&[
            "train",
            "--toy",
            "--data",
            path_str(&data),
            "--out",
            path_str(&dir),
            "--iters",
            "1000",
            "--deterministic",
            "--seed",
            "7",
        ])?;
        let read = |name: &str| fs::read(dir.join(name)).map_err(|e| format!("{run}/{name}: {e}"));
        outputs.push((read("splats.hogs")?, read("loss.jsonl")?));
    }
    let lines = String::from_utf8_lossy(&outputs[0].1).lines().count();
    if outputs[0].0 != outputs[1].0 {
        return Err("splat files differ".into());
    }
    if outputs[0].1 != outputs[1].1 {
        return Err("loss streams differ".into());
    }
    Ok(format!(
        "splat files ({} bytes) and loss streams ({lines} records) bit-identical",
        outputs[0].0.len()
    ))
}

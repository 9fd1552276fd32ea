//! Tile-based splat rasterization.
//!
//! The forward pass blends depth-sorted splats front to back per pixel. The
//! backward pass replays each pixel back to front from its stored final
//! transmittance, so no per-splat intermediates are kept. Tiles are
//! independent work units; per-splat gradients are reduced in tile order,
//! which makes the result bit-reproducible regardless of thread count.

use rayon::prelude::*;

use crate::geometry::{
    project_splat, project_splat_vjp, sigmoid, Camera, CullReason, Projected, ProjectionGrad, Splat, Vec2, Vec3,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    pub tile_size: u32,
    /// Per-pixel alphas below this are skipped.
    pub alpha_min: f64,
    /// Per-pixel alphas are clamped to this.
    pub alpha_max: f64,
    /// Blending stops before transmittance would fall below this.
    pub transmittance_min: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_min: 1e-4,
        }
    }
}

/// Per-tile lists of splat indices, each sorted front to back.
#[derive(Clone, Debug, PartialEq)]
pub struct TileBins {
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    offsets: Vec<usize>,
    entries: Vec<u32>,
}

impl TileBins {
    pub fn tile_count(&self) -> usize {
        (self.tiles_x * self.tiles_y) as usize
    }

    pub fn tile(&self, index: usize) -> &[u32] {
        &self.entries[self.offsets[index]..self.offsets[index + 1]]
    }

    pub fn tile_at(&self, tx: u32, ty: u32) -> &[u32] {
        self.tile((ty * self.tiles_x + tx) as usize)
    }

    /// Total number of (tile, splat) pairs.
    pub fn pair_count(&self) -> usize {
        self.entries.len()
    }
}

fn disc_overlaps_rect(center: &Vec2, radius: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
    let dx = (x0 - center.x).max(0.0).max(center.x - x1);
    let dy = (y0 - center.y).max(0.0).max(center.y - y1);
    dx * dx + dy * dy <= radius * radius
}

/// Assigns every visible splat to the tiles its radius-disc overlaps and sorts
/// each tile by depth, breaking ties by ascending splat index.
pub fn bin_and_sort(projections: &[Projected], width: u32, height: u32, tile_size: u32) -> TileBins {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let ts = tile_size as f64;
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for (i, proj) in projections.iter().enumerate() {
        let Ok(p) = proj else { continue };
        let r = p.radius;
        let tx0 = ((p.mean2d.x - r) / ts).floor().max(0.0) as i64;
        let ty0 = ((p.mean2d.y - r) / ts).floor().max(0.0) as i64;
        let tx1 = (((p.mean2d.x + r) / ts).floor() as i64).min(tiles_x as i64 - 1);
        let ty1 = (((p.mean2d.y + r) / ts).floor() as i64).min(tiles_y as i64 - 1);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let (x0, y0) = (tx as f64 * ts, ty as f64 * ts);
                if disc_overlaps_rect(&p.mean2d, r, x0, y0, x0 + ts, y0 + ts) {
                    pairs.push(((ty as u32) * tiles_x + tx as u32, i as u32));
                }
            }
        }
    }
    let depth = |i: u32| projections[i as usize].as_ref().map(|p| p.depth).unwrap_or(f64::INFINITY);
    pairs.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| depth(a.1).total_cmp(&depth(b.1)))
            .then_with(|| a.1.cmp(&b.1))
    });
    let tile_count = (tiles_x * tiles_y) as usize;
    let mut offsets = vec![0usize; tile_count + 1];
    for &(t, _) in &pairs {
        offsets[t as usize + 1] += 1;
    }
    for t in 0..tile_count {
        offsets[t + 1] += offsets[t];
    }
    TileBins {
        tile_size,
        tiles_x,
        tiles_y,
        offsets,
        entries: pairs.into_iter().map(|(_, i)| i).collect(),
    }
}

/// Image plus per-pixel coverage.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    /// Row-major interleaved RGB.
    pub image: Vec<f64>,
    /// `1 - final transmittance`.
    pub accum_alpha: Vec<f64>,
    /// Number of splats blended into each pixel.
    pub contrib_count: Vec<u32>,
}

/// Forward state the backward pass replays.
#[derive(Clone, Debug)]
pub struct RasterState {
    pub bins: TileBins,
    pub final_transmittance: Vec<f64>,
    /// One past the last tile-list position that contributed to each pixel.
    pub last_contributor: Vec<u32>,
}

/// Flat per-splat data read in the inner blending loop.
#[derive(Clone, Copy, Debug, Default)]
struct Packed {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

/// Inputs to the blending stage: projections, opacities and colors indexed by splat.
pub struct BlendInputs<'a> {
    pub projections: &'a [Projected],
    pub opacities: &'a [f64],
    pub colors: &'a [Vec3],
}

fn pack(inputs: &BlendInputs) -> Vec<Packed> {
    assert_eq!(inputs.projections.len(), inputs.opacities.len());
    assert_eq!(inputs.projections.len(), inputs.colors.len());
    inputs
        .projections
        .iter()
        .zip(inputs.opacities)
        .zip(inputs.colors)
        .map(|((p, &opacity), c)| match p {
            Ok(p) => Packed {
                mean: [p.mean2d.x, p.mean2d.y],
                conic: p.conic,
                opacity,
                color: [c.x, c.y, c.z],
            },
            Err(_) => Packed::default(),
        })
        .collect()
}

#[inline]
fn gaussian_power(s: &Packed, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let power = 0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy) + s.conic[1] * dx * dy;
    (power, dx, dy)
}

/// Result of blending one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelBlend {
    pub color: [f64; 3],
    pub transmittance: f64,
    pub last_contributor: u32,
    pub contrib_count: u32,
}

fn blend_packed(
    packed: &[Packed],
    list: &[u32],
    px: f64,
    py: f64,
    config: &RasterConfig,
    mut visit: impl FnMut(usize, f64),
) -> PixelBlend {
    let mut t = 1.0;
    let mut color = [0.0; 3];
    let mut last = 0u32;
    let mut count = 0u32;
    for (j, &idx) in list.iter().enumerate() {
        let s = &packed[idx as usize];
        let (power, _, _) = gaussian_power(s, px, py);
        if power < 0.0 {
            continue;
        }
        let alpha = (s.opacity * (-power).exp()).min(config.alpha_max);
        if alpha < config.alpha_min {
            continue;
        }
        let next_t = t * (1.0 - alpha);
        if next_t < config.transmittance_min {
            break;
        }
        let w = alpha * t;
        for (acc, c) in color.iter_mut().zip(&s.color) {
            *acc += c * w;
        }
        visit(idx as usize, w);
        t = next_t;
        last = j as u32 + 1;
        count += 1;
    }
    PixelBlend {
        color,
        transmittance: t,
        last_contributor: last,
        contrib_count: count,
    }
}

/// Blends one pixel center `(px, py)` against a sorted tile list, calling
/// `visit(splat, weight)` for each contributing splat. Colors exclude the background.
pub fn blend_pixel(
    inputs: &BlendInputs,
    list: &[u32],
    px: f64,
    py: f64,
    config: &RasterConfig,
    visit: impl FnMut(usize, f64),
) -> PixelBlend {
    blend_packed(&pack(inputs), list, px, py, config, visit)
}

fn tile_pixels(bins: &TileBins, tile: usize, width: u32, height: u32) -> impl Iterator<Item = (u32, u32)> {
    let tx = tile as u32 % bins.tiles_x;
    let ty = tile as u32 / bins.tiles_x;
    let x0 = tx * bins.tile_size;
    let y0 = ty * bins.tile_size;
    let x1 = (x0 + bins.tile_size).min(width);
    let y1 = (y0 + bins.tile_size).min(height);
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

pub fn rasterize_forward(
    inputs: &BlendInputs,
    width: u32,
    height: u32,
    background: &Vec3,
    config: &RasterConfig,
) -> (RenderOutput, RasterState) {
    let bins = bin_and_sort(inputs.projections, width, height, config.tile_size);
    let packed = pack(inputs);
    let tiles: Vec<Vec<(usize, PixelBlend)>> = (0..bins.tile_count())
        .into_par_iter()
        .map(|tile| {
            let list = bins.tile(tile);
            tile_pixels(&bins, tile, width, height)
                .map(|(x, y)| {
                    let blend = blend_packed(&packed, list, x as f64 + 0.5, y as f64 + 0.5, config, |_, _| {});
                    ((y * width + x) as usize, blend)
                })
                .collect()
        })
        .collect();

    let n = (width * height) as usize;
    let mut out = RenderOutput {
        width,
        height,
        image: vec![0.0; 3 * n],
        accum_alpha: vec![0.0; n],
        contrib_count: vec![0; n],
    };
    let mut final_transmittance = vec![1.0; n];
    let mut last_contributor = vec![0u32; n];
    for (pix, blend) in tiles.into_iter().flatten() {
        for c in 0..3 {
            out.image[3 * pix + c] = blend.color[c] + blend.transmittance * background[c];
        }
        out.accum_alpha[pix] = 1.0 - blend.transmittance;
        out.contrib_count[pix] = blend.contrib_count;
        final_transmittance[pix] = blend.transmittance;
        last_contributor[pix] = blend.last_contributor;
    }
    (
        out,
        RasterState {
            bins,
            final_transmittance,
            last_contributor,
        },
    )
}

/// Gradients with respect to the blending-stage inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendGrads {
    pub projection: Vec<ProjectionGrad>,
    /// Gradient with respect to each splat's opacity (not its logit).
    pub opacity: Vec<f64>,
    pub color: Vec<Vec3>,
}

#[derive(Clone, Copy, Default)]
struct EntryGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

pub fn rasterize_backward(
    inputs: &BlendInputs,
    state: &RasterState,
    grad_image: &[f64],
    width: u32,
    height: u32,
    background: &Vec3,
    config: &RasterConfig,
) -> BlendGrads {
    let n = (width * height) as usize;
    assert_eq!(grad_image.len(), 3 * n, "gradient image shape mismatch");
    assert_eq!(state.final_transmittance.len(), n, "raster state shape mismatch");
    let packed = pack(inputs);
    let bins = &state.bins;

    let per_tile: Vec<Vec<EntryGrad>> = (0..bins.tile_count())
        .into_par_iter()
        .map(|tile| {
            let list = bins.tile(tile);
            let mut grads = vec![EntryGrad::default(); list.len()];
            for (x, y) in tile_pixels(bins, tile, width, height) {
                let pix = (y * width + x) as usize;
                let g = [grad_image[3 * pix], grad_image[3 * pix + 1], grad_image[3 * pix + 2]];
                if g == [0.0; 3] {
                    continue;
                }
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut t = state.final_transmittance[pix];
                let mut behind = [background.x, background.y, background.z];
                for j in (0..state.last_contributor[pix] as usize).rev() {
                    let s = &packed[list[j] as usize];
                    let (power, dx, dy) = gaussian_power(s, px, py);
                    if power < 0.0 {
                        continue;
                    }
                    let falloff = (-power).exp();
                    let raw = s.opacity * falloff;
                    let alpha = raw.min(config.alpha_max);
                    if alpha < config.alpha_min {
                        continue;
                    }
                    let t_before = t / (1.0 - alpha);
                    let e = &mut grads[j];
                    let mut d_alpha = 0.0;
                    for c in 0..3 {
                        e.color[c] += g[c] * alpha * t_before;
                        d_alpha += g[c] * t_before * (s.color[c] - behind[c]);
                        behind[c] = alpha * s.color[c] + (1.0 - alpha) * behind[c];
                    }
                    t = t_before;
                    if raw < config.alpha_max {
                        e.opacity += d_alpha * falloff;
                        let d_power = -d_alpha * raw;
                        e.conic[0] += d_power * 0.5 * dx * dx;
                        e.conic[1] += d_power * dx * dy;
                        e.conic[2] += d_power * 0.5 * dy * dy;
                        e.mean[0] -= d_power * (s.conic[0] * dx + s.conic[1] * dy);
                        e.mean[1] -= d_power * (s.conic[1] * dx + s.conic[2] * dy);
                    }
                }
            }
            grads
        })
        .collect();

    let count = inputs.projections.len();
    let mut out = BlendGrads {
        projection: vec![ProjectionGrad::default(); count],
        opacity: vec![0.0; count],
        color: vec![Vec3::zeros(); count],
    };
    for (tile, grads) in per_tile.iter().enumerate() {
        for (&idx, e) in bins.tile(tile).iter().zip(grads) {
            let i = idx as usize;
            let p = &mut out.projection[i];
            p.mean2d.x += e.mean[0];
            p.mean2d.y += e.mean[1];
            for k in 0..3 {
                p.conic[k] += e.conic[k];
                out.color[i][k] += e.color[k];
            }
            out.opacity[i] += e.opacity;
        }
    }
    out
}

/// Per-splat gradients of a scalar image loss.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGradients {
    pub position: Vec<Vec3>,
    pub log_scale: Vec<Vec3>,
    pub rotation: Vec<[f64; 4]>,
    pub opacity_logit: Vec<f64>,
    pub base_color: Vec<Vec3>,
    /// Gradient with respect to each splat's rendered color.
    pub color: Vec<Vec3>,
    /// Norm of the screen-space mean gradient, in NDC units, for this view.
    pub view_grad_norm: Vec<f64>,
    pub visible: Vec<bool>,
}

impl SplatGradients {
    pub fn zeros(count: usize) -> Self {
        Self {
            position: vec![Vec3::zeros(); count],
            log_scale: vec![Vec3::zeros(); count],
            rotation: vec![[0.0; 4]; count],
            opacity_logit: vec![0.0; count],
            base_color: vec![Vec3::zeros(); count],
            color: vec![Vec3::zeros(); count],
            view_grad_norm: vec![0.0; count],
            visible: vec![false; count],
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// Adds parameter gradients from `other`; screen statistics are left untouched.
    pub fn accumulate(&mut self, other: &SplatGradients) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.position[i] += other.position[i];
            self.log_scale[i] += other.log_scale[i];
            for k in 0..4 {
                self.rotation[i][k] += other.rotation[i][k];
            }
            self.opacity_logit[i] += other.opacity_logit[i];
            self.base_color[i] += other.base_color[i];
            self.color[i] += other.color[i];
        }
    }

    pub fn all_finite(&self) -> bool {
        let v3 = |v: &Vec<Vec3>| v.iter().all(|x| x.iter().all(|c| c.is_finite()));
        v3(&self.position)
            && v3(&self.log_scale)
            && v3(&self.base_color)
            && v3(&self.color)
            && self.rotation.iter().flatten().all(|c| c.is_finite())
            && self.opacity_logit.iter().all(|c| c.is_finite())
    }
}

/// A rendered view together with everything its backward pass needs.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub output: RenderOutput,
    pub state: RasterState,
    pub projections: Vec<Projected>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vec3>,
    pub background: Vec3,
}

impl Rendered {
    pub fn degenerate_count(&self) -> usize {
        self.projections.iter().filter(|p| matches!(p, Err(CullReason::Degenerate))).count()
    }
}

pub fn project_all(splats: &[Splat], camera: &Camera) -> Vec<Projected> {
    splats.par_iter().map(|s| project_splat(s, camera)).collect()
}

/// Projects, bins and blends `splats` with the given per-splat colors.
pub fn render(splats: &[Splat], colors: Vec<Vec3>, camera: &Camera, background: &Vec3, config: &RasterConfig) -> Rendered {
    let projections = project_all(splats, camera);
    render_projected(splats, projections, colors, camera, background, config)
}

pub fn render_projected(
    splats: &[Splat],
    projections: Vec<Projected>,
    colors: Vec<Vec3>,
    camera: &Camera,
    background: &Vec3,
    config: &RasterConfig,
) -> Rendered {
    let opacities: Vec<f64> = splats.iter().map(Splat::opacity).collect();
    let inputs = BlendInputs {
        projections: &projections,
        opacities: &opacities,
        colors: &colors,
    };
    let (output, state) = rasterize_forward(&inputs, camera.width, camera.height, background, config);
    Rendered {
        output,
        state,
        projections,
        opacities,
        colors,
        background: *background,
    }
}

/// Full backward pass from an image gradient to splat parameters.
///
/// `base_color` is left at zero: colors come from outside the rasterizer and
/// their gradient is returned in `color`.
pub fn backward(rendered: &Rendered, splats: &[Splat], camera: &Camera, grad_image: &[f64], config: &RasterConfig) -> SplatGradients {
    let inputs = BlendInputs {
        projections: &rendered.projections,
        opacities: &rendered.opacities,
        colors: &rendered.colors,
    };
    let blend = rasterize_backward(
        &inputs,
        &rendered.state,
        grad_image,
        camera.width,
        camera.height,
        &rendered.background,
        config,
    );
    let half_w = 0.5 * camera.width as f64;
    let half_h = 0.5 * camera.height as f64;
    let per_splat: Vec<_> = (0..splats.len())
        .into_par_iter()
        .map(|i| match &rendered.projections[i] {
            Ok(_) => {
                let g = project_splat_vjp(&splats[i], camera, &blend.projection[i]);
                let a = rendered.opacities[i];
                let ndc = Vec2::new(blend.projection[i].mean2d.x * half_w, blend.projection[i].mean2d.y * half_h);
                (Some(g), blend.opacity[i] * a * (1.0 - a), ndc.norm())
            }
            Err(_) => (None, 0.0, 0.0),
        })
        .collect();

    let mut out = SplatGradients::zeros(splats.len());
    for (i, (g, d_logit, view_norm)) in per_splat.into_iter().enumerate() {
        out.color[i] = blend.color[i];
        if let Some(g) = g {
            out.position[i] = g.position;
            out.log_scale[i] = g.log_scale;
            out.rotation[i] = g.rotation;
            out.opacity_logit[i] = d_logit;
            out.view_grad_norm[i] = view_norm;
            out.visible[i] = true;
        }
    }
    out
}

/// Per-splat colors when no field is attached: the degree-0 base color.
pub fn base_colors(splats: &[Splat]) -> Vec<Vec3> {
    splats.iter().map(|s| s.base_color.map(sigmoid)).collect()
}

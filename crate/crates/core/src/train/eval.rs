use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::loss::{psnr, ssim};
use super::View;
use crate::field::colors::splat_colors;
use crate::field::FieldParams;
use crate::geometry::{Camera, Splat, Vec3};
use crate::io::image::Image;
use crate::raster::{project_all, render_projected, RasterConfig};

/// Renders `splats` at `camera` with colors supplied by `field`.
pub fn render_view(splats: &[Splat], field: &FieldParams, camera: &Camera, background: &Vec3) -> Image {
    let projections = project_all(splats, camera);
    let active: Vec<bool> = projections.iter().map(Result::is_ok).collect();
    let colors = splat_colors(field, splats, camera, Some(&active));
    let r = render_projected(splats, projections, colors, camera, background, &RasterConfig::default());
    Image::from_data(camera.width, camera.height, r.output.image)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn from_views(views: Vec<ViewMetrics>) -> Self {
        assert!(!views.is_empty(), "evaluation needs at least one view");
        let n = views.len() as f64;
        let mean_psnr = views.iter().map(|v| v.psnr).sum::<f64>() / n;
        let mean_ssim = views.iter().map(|v| v.ssim).sum::<f64>() / n;
        Self {
            views,
            mean_psnr,
            mean_ssim,
        }
    }

    /// Whitespace-aligned table, one row per view and a final mean row.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:>8} {:>10} {:>8}\n", "frame", "psnr", "ssim");
        for v in &self.views {
            let _ = writeln!(s, "{:>8} {:>10.4} {:>8.5}", v.index, v.psnr, v.ssim);
        }
        let _ = writeln!(s, "{:>8} {:>10.4} {:>8.5}", "mean", self.mean_psnr, self.mean_ssim);
        s
    }
}

pub fn evaluate(splats: &[Splat], field: &FieldParams, views: &[View], background: &Vec3) -> EvalReport {
    assert!(!views.is_empty(), "evaluation needs at least one view");
    let metrics = views
        .iter()
        .map(|v| {
            let img = render_view(splats, field, &v.camera, background);
            ViewMetrics {
                index: v.index,
                psnr: psnr(&img, &v.image),
                ssim: ssim(&img, &v.image),
            }
        })
        .collect();
    EvalReport::from_views(metrics)
}

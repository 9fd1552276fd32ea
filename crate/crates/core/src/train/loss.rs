//! Image losses and metrics: L1, SSIM (with gradient), PSNR.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5). Near the border the window
//! is truncated and renormalized, so constant images give the closed-form value.

use crate::io::image::Image;

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;
const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable truncated-and-renormalized Gaussian blur of a single channel.
struct Blur {
    w: usize,
    h: usize,
    k: [f64; 2 * RADIUS + 1],
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
}

impl Blur {
    fn new(w: usize, h: usize) -> Self {
        let k = kernel();
        let norms = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    (0..k.len())
                        .filter(|&t| (i + t).checked_sub(RADIUS).is_some_and(|j| j < n))
                        .map(|t| k[t])
                        .sum()
                })
                .collect()
        };
        Self {
            w,
            h,
            k,
            norm_x: norms(w),
            norm_y: norms(h),
        }
    }

    fn pass(&self, src: &[f64], dst: &mut [f64], along_x: bool, transpose: bool) {
        let (n, norm) = if along_x { (self.w, &self.norm_x) } else { (self.h, &self.norm_y) };
        let lines = if along_x { self.h } else { self.w };
        let idx = |line: usize, i: usize| if along_x { line * self.w + i } else { i * self.w + line };
        for line in 0..lines {
            for i in 0..n {
                let mut s = 0.0;
                for (t, kt) in self.k.iter().enumerate() {
                    let Some(j) = (i + t).checked_sub(RADIUS).filter(|&j| j < n) else { continue };
                    // Forward: out_i = sum_j k[j-i+R] x_j / norm_i. Transpose swaps the roles of i and j.
                    s += if transpose {
                        kt * src[idx(line, j)] / norm[j]
                    } else {
                        kt * src[idx(line, j)]
                    };
                }
                dst[idx(line, i)] = if transpose { s } else { s / norm[i] };
            }
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut tmp = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        self.pass(x, &mut tmp, true, false);
        self.pass(&tmp, &mut out, false, false);
        out
    }

    fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut tmp = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        self.pass(x, &mut tmp, false, true);
        self.pass(&tmp, &mut out, true, true);
        out
    }
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM and, when requested, its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    assert!(a.same_shape(b), "ssim: image shapes differ");
    let (w, h) = (a.width as usize, a.height as usize);
    let n = w * h;
    let blur = Blur::new(w, h);
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; 3 * n]);
    let scale = 1.0 / (3 * n) as f64;
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let mu_x = blur.apply(&x);
        let mu_y = blur.apply(&y);
        let xx = blur.apply(&x.iter().map(|v| v * v).collect::<Vec<_>>());
        let yy = blur.apply(&y.iter().map(|v| v * v).collect::<Vec<_>>());
        let xy = blur.apply(&x.iter().zip(&y).map(|(p, q)| p * q).collect::<Vec<_>>());
        let mut d_mu = vec![0.0; n];
        let mut d_xx = vec![0.0; n];
        let mut d_xy = vec![0.0; n];
        for i in 0..n {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = xx[i] - mx * mx;
            let var_y = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * cov + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = var_x + var_y + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let ds_dmx = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
                let ds_dvar = -s / b2;
                let ds_dcov = 2.0 * a1 / (b1 * b2);
                d_mu[i] = scale * (ds_dmx - 2.0 * mx * ds_dvar - my * ds_dcov);
                d_xx[i] = scale * ds_dvar;
                d_xy[i] = scale * ds_dcov;
            }
        }
        if let Some(g) = grad.as_mut() {
            let t_mu = blur.apply_transpose(&d_mu);
            let t_xx = blur.apply_transpose(&d_xx);
            let t_xy = blur.apply_transpose(&d_xy);
            for i in 0..n {
                g[3 * i + c] = t_mu[i] + 2.0 * x[i] * t_xx[i] + y[i] * t_xy[i];
            }
        }
    }
    (total * scale, grad)
}

pub fn ssim(a: &Image, b: &Image) -> f64 {
    ssim_with_grad(a, b, false).0
}

pub fn l1(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b), "l1: image shapes differ");
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len() as f64
}

pub fn mse(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b), "mse: image shapes differ");
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    psnr_from_mse(mse(a, b))
}

/// `(1 - lambda) L1 + lambda (1 - ssim)`.
pub fn gaussian_loss_value(l1: f64, ssim: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * l1 + lambda * (1.0 - ssim)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageLoss {
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    /// Gradient with respect to the rendered image.
    pub grad: Vec<f64>,
}

pub fn gaussian_loss(render: &Image, gt: &Image, lambda: f64) -> ImageLoss {
    assert!(render.same_shape(gt), "loss: image shapes differ");
    let l1v = l1(render, gt);
    let (s, ssim_grad) = if lambda > 0.0 {
        let (s, g) = ssim_with_grad(render, gt, true);
        (s, g)
    } else {
        (ssim(render, gt), None)
    };
    let n = render.data.len() as f64;
    let mut grad: Vec<f64> = render
        .data
        .iter()
        .zip(&gt.data)
        .map(|(r, g)| (1.0 - lambda) * sign(r - g) / n)
        .collect();
    if let Some(sg) = ssim_grad {
        for (g, s) in grad.iter_mut().zip(sg) {
            *g -= lambda * s;
        }
    }
    ImageLoss {
        loss: gaussian_loss_value(l1v, s, lambda),
        l1: l1v,
        ssim: s,
        grad,
    }
}

/// Loss on a masked target: unmasked pixels of the render are replaced by the
/// target, so they contribute nothing; the gradient is zero there.
pub fn masked_gaussian_loss(render: &Image, target: &Image, mask: &[f64], lambda: f64) -> ImageLoss {
    assert_eq!(mask.len(), render.pixel_count(), "mask shape");
    let mut blended = render.clone();
    for (i, &m) in mask.iter().enumerate() {
        for c in 0..3 {
            let k = 3 * i + c;
            blended.data[k] = m * render.data[k] + (1.0 - m) * target.data[k];
        }
    }
    let mut out = gaussian_loss(&blended, target, lambda);
    for (i, &m) in mask.iter().enumerate() {
        for c in 0..3 {
            out.grad[3 * i + c] *= m;
        }
    }
    out
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: u32, h: u32, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, (0..3 * w * h).map(|_| rng.random::<f64>()).collect())
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = random_image(20, 13, 1);
        assert!((ssim(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_constant_images_matches_closed_form() {
        let zeros = Image::new(16, 16);
        let ones = Image::filled(16, 16, &Vec3::repeat(1.0));
        let expect = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&zeros, &ones) - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = random_image(17, 11, 2);
        let b = random_image(17, 11, 3);
        assert_eq!(ssim(&a, &b), ssim(&b, &a));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = random_image(14, 12, 4);
        let b = random_image(14, 12, 5);
        let (_, g) = ssim_with_grad(&a, &b, true);
        let g = g.unwrap();
        let h = 1e-6;
        for k in [0, 7, 100, 250, 3 * 14 * 12 - 1] {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.data[k] += h;
            am.data[k] -= h;
            let fd = (ssim(&ap, &b) - ssim(&am, &b)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7 * fd.abs().max(1.0), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn gaussian_loss_cases() {
        assert!((gaussian_loss_value(1.0, 0.5, 0.2) - 0.9).abs() < 1e-15);
        let a = random_image(12, 12, 6);
        let b = random_image(12, 12, 7);
        assert_eq!(gaussian_loss(&a, &a, 0.2).loss, 0.0);
        assert_eq!(gaussian_loss(&a, &b, 0.0).loss, l1(&a, &b));
        let full = gaussian_loss(&a, &b, 0.3);
        let h = 1e-6;
        for k in [3, 50, 200] {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.data[k] += h;
            am.data[k] -= h;
            let fd = (gaussian_loss(&ap, &b, 0.3).loss - gaussian_loss(&am, &b, 0.3).loss) / (2.0 * h);
            assert!((fd - full.grad[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_mask_gives_zero_loss() {
        let a = random_image(12, 12, 8);
        let b = random_image(12, 12, 9);
        let out = masked_gaussian_loss(&a, &b, &vec![0.0; 144], 0.2);
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn psnr_cases() {
        assert_eq!(psnr_from_mse(0.0), PSNR_CAP);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
    }
}

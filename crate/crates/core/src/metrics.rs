//! Full-reference restoration metrics.

use crate::error::{Error, Result};
use crate::tensor::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio for data range 1.0; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - centre;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Valid-mode separable filtering of a row-major plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * plane[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, data range 1.0, averaged over valid window positions and
/// then over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w, c) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidDimensions(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ch in 0..c {
        let x = a.channel_plane(ch);
        let y = b.channel_plane(ch);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, h, w, &taps);
        let my = filter_valid(&y, h, w, &taps);
        let exx = filter_valid(&xx, h, w, &taps);
        let eyy = filter_valid(&yy, h, w, &taps);
        let exy = filter_valid(&xy, h, w, &taps);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cov = exy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / c as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image metrics plus their dataset means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, pred: &Image, reference: &Image) -> Result<()> {
        self.images.push(ImageMetrics {
            name: name.into(),
            psnr_db: psnr(pred, reference)?,
            ssim: ssim(pred, reference)?,
        });
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        self.images.iter().map(|m| m.psnr_db).sum::<f64>() / self.images.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.images.iter().map(|m| m.ssim).sum::<f64>() / self.images.len() as f64
    }
}

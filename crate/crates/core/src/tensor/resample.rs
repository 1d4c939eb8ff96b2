use super::{Image, ScaleFactor};
use crate::error::{Error, Result};

/// Cubic convolution parameter. `-0.5` is Catmull-Rom, which reproduces
/// linear functions exactly.
pub const BICUBIC_A: f64 = -0.5;

/// The Keys cubic convolution kernel with parameter [`BICUBIC_A`].
#[inline]
pub fn cubic_kernel(x: f64) -> f64 {
    let a = BICUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source coordinate of output sample `dst` under half-pixel-centre alignment.
#[inline]
pub fn source_coordinate(dst: usize, in_len: usize, out_len: usize) -> f64 {
    (dst as f64 + 0.5) * (in_len as f64 / out_len as f64) - 0.5
}

/// Four clamped source indices and their weights for each output position.
fn taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..out_len)
        .map(|dst| {
            let src = source_coordinate(dst, in_len, out_len);
            let base = src.floor();
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let pos = base + k as f64 - 1.0;
                wts[k] = cubic_kernel(src - pos);
                idx[k] = (pos.max(0.0) as usize).min(in_len - 1);
            }
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resampling with edge clamping.
pub fn bicubic_resample(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidDimensions(format!(
            "resample target {out_h}x{out_w}"
        )));
    }
    let (h, w, c) = img.shape();

    // Horizontal pass: h × out_w.
    let col_taps = taps(w, out_w);
    let mut tmp = vec![0.0; h * out_w * c];
    for y in 0..h {
        for (x, (idx, wts)) in col_taps.iter().enumerate() {
            let out = &mut tmp[(y * out_w + x) * c..(y * out_w + x + 1) * c];
            for k in 0..4 {
                let src = img.pixel(y, idx[k]);
                for ch in 0..c {
                    out[ch] += wts[k] * src[ch];
                }
            }
        }
    }

    // Vertical pass.
    let row_taps = taps(h, out_h);
    let mut out = vec![0.0; out_h * out_w * c];
    let row_len = out_w * c;
    for (y, (idx, wts)) in row_taps.iter().enumerate() {
        let dst = &mut out[y * row_len..(y + 1) * row_len];
        for k in 0..4 {
            let src = &tmp[idx[k] * row_len..(idx[k] + 1) * row_len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wts[k] * s;
            }
        }
    }
    Image::new(out_h, out_w, c, out)
}

/// Bicubic degradation by an integer factor; requires dimensions divisible by `r`.
pub fn downscale(img: &Image, r: ScaleFactor) -> Result<Image> {
    let r = r.get();
    if img.height() % r != 0 || img.width() % r != 0 {
        return Err(Error::InvalidDimensions(format!(
            "{}x{} is not divisible by scale {r}",
            img.height(),
            img.width()
        )));
    }
    bicubic_resample(img, img.height() / r, img.width() / r)
}

pub fn upscale(img: &Image, r: ScaleFactor) -> Result<Image> {
    bicubic_resample(img, img.height() * r.get(), img.width() * r.get())
}

/// Aligned LR/HR crops: the LR crop at `(x0, y0)` of side `lr_size` and the
/// HR crop at `(r*x0, r*y0)` of side `r*lr_size`.
pub fn crop_pair(
    hr: &Image,
    lr: &Image,
    x0: usize,
    y0: usize,
    lr_size: usize,
    r: ScaleFactor,
) -> Result<(Image, Image)> {
    let r = r.get();
    if hr.height() < lr.height() * r || hr.width() < lr.width() * r {
        return Err(Error::ShapeMismatch(format!(
            "HR {}x{} is smaller than {r} x LR {}x{}",
            hr.height(),
            hr.width(),
            lr.height(),
            lr.width()
        )));
    }
    let lr_crop = lr.crop(y0, x0, lr_size, lr_size)?;
    let hr_crop = hr.crop(r * y0, r * x0, r * lr_size, r * lr_size)?;
    Ok((lr_crop, hr_crop))
}

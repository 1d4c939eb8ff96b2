use rand::Rng;
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::tensor::{crop_pair, downscale, Image, ScaleFactor};

/// HR images with their bicubic LR counterparts, computed once.
#[derive(Debug, Clone)]
pub struct Dataset {
    scale: ScaleFactor,
    hr: Vec<Image>,
    lr: Vec<Image>,
}

impl Dataset {
    /// HR images whose sides are not multiples of `scale` are cropped to the
    /// largest multiple, anchored at the top-left corner.
    pub fn new(images: Vec<Image>, scale: ScaleFactor) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        let r = scale.get();
        let mut hr = Vec::with_capacity(images.len());
        let mut lr = Vec::with_capacity(images.len());
        for img in images {
            let (h, w) = (img.height() / r * r, img.width() / r * r);
            if h == 0 || w == 0 {
                return Err(Error::InvalidDimensions(format!(
                    "{}x{} image is smaller than the scale factor {r}",
                    img.height(),
                    img.width()
                )));
            }
            let img = if (h, w) == (img.height(), img.width()) {
                img
            } else {
                img.crop(0, 0, h, w)?
            };
            lr.push(downscale(&img, scale)?);
            hr.push(img);
        }
        Ok(Self { scale, hr, lr })
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    pub fn scale(&self) -> ScaleFactor {
        self.scale
    }

    pub fn hr(&self, i: usize) -> &Image {
        &self.hr[i]
    }

    pub fn lr(&self, i: usize) -> &Image {
        &self.lr[i]
    }

    pub fn channels(&self) -> usize {
        self.hr[0].channels()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub lr: Vec<Image>,
    pub hr: Vec<Image>,
}

/// One crop location: dataset index and LR-grid corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSite {
    pub image: usize,
    pub y0: usize,
    pub x0: usize,
}

/// `batch` independent uniform draws of (image, y0, x0).
pub fn sample_sites(
    rng: &mut SplitMix64,
    dataset: &Dataset,
    crop_lr: usize,
    batch: usize,
) -> Result<Vec<CropSite>> {
    for i in 0..dataset.len() {
        let lr = dataset.lr(i);
        if lr.height() < crop_lr || lr.width() < crop_lr {
            return Err(Error::InvalidDimensions(format!(
                "image {i} ({}x{} HR) is smaller than the {}px HR crop",
                dataset.hr(i).height(),
                dataset.hr(i).width(),
                crop_lr * dataset.scale().get()
            )));
        }
    }
    Ok((0..batch)
        .map(|_| {
            let image = rng.gen_range(0..dataset.len());
            let lr = dataset.lr(image);
            let y0 = rng.gen_range(0..=lr.height() - crop_lr);
            let x0 = rng.gen_range(0..=lr.width() - crop_lr);
            CropSite { image, y0, x0 }
        })
        .collect())
}

/// Draws a batch of aligned LR/HR crops.
pub fn sample_batch(
    rng: &mut SplitMix64,
    dataset: &Dataset,
    crop_lr: usize,
    batch: usize,
) -> Result<Batch> {
    let sites = sample_sites(rng, dataset, crop_lr, batch)?;
    let mut out = Batch {
        lr: Vec::with_capacity(batch),
        hr: Vec::with_capacity(batch),
    };
    for s in sites {
        let (lr, hr) = crop_pair(
            dataset.hr(s.image),
            dataset.lr(s.image),
            s.x0,
            s.y0,
            crop_lr,
            dataset.scale(),
        )?;
        out.lr.push(lr);
        out.hr.push(hr);
    }
    Ok(out)
}


/// Deterministic test pattern in `[0, 1]`: a smooth gradient, a few random
/// sinusoids of all frequencies and a hard-edged disc.
pub fn synthetic_image(height: usize, width: usize, channels: usize, seed: u64) -> Image {
    use std::f64::consts::TAU;
    let mut rng = crate::nets::layer_rng(seed, 0x696d_6700);
    let waves: Vec<[f64; 5]> = (0..6)
        .map(|_| {
            [
                rng.gen_range(0.0..0.5),
                rng.gen_range(0.0..0.5),
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.03..0.12),
                rng.gen_range(0.0..1.0),
            ]
        })
        .collect();
    let tint: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.6..1.0)).collect();
    let (cy, cx) = (rng.gen_range(0.3..0.7) * height as f64, rng.gen_range(0.3..0.7) * width as f64);
    let radius = 0.25 * height.min(width) as f64;
    Image::from_fn(height, width, channels, |y, x, c| {
        let (fy, fx) = (y as f64, x as f64);
        let mut v = 0.3 + 0.2 * (fy / height as f64) + 0.1 * (fx / width as f64);
        for (k, w) in waves.iter().enumerate() {
            let phase = w[2] + k as f64 * c as f64 * 0.7 * w[4];
            v += w[3] * (TAU * (w[0] * fy + w[1] * fx) + phase).sin();
        }
        if (fy - cy).hypot(fx - cx) < radius {
            v += 0.15;
        }
        (v * tint[c]).clamp(0.0, 1.0)
    })
}

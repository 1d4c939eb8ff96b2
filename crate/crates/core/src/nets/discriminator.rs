use rayon::prelude::*;

use super::layers::{AvgPool2, Conv3x3, Dense, Layer, LeakyRelu, Module, Param, Sequential};
use crate::error::{Error, Result};
use crate::spectral::{windowed_spectrum, Spectrum};
use crate::tensor::Image;

/// A module mapping each image to one real logit.
pub trait Discriminator: Module {
    fn logits(&mut self, images: &[Image]) -> Result<Vec<f64>> {
        Ok(self.forward(images)?.iter().map(|o| o.data()[0]).collect())
    }

    /// Backpropagates ∂L/∂logit for the batch seen by the last `logits` call.
    fn backward_logits(&mut self, d_logits: &[f64]) -> Result<Vec<Image>> {
        let grads: Vec<Image> = d_logits.iter().map(|&g| Image::vector(vec![g])).collect();
        self.backward(&grads)
    }

    fn logit(&mut self, image: &Image) -> Result<f64> {
        Ok(self.logits(std::slice::from_ref(image))?[0])
    }
}

fn check_input(images: &[Image], shape: (usize, usize, usize), what: &str) -> Result<()> {
    for img in images {
        if img.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "{what} built for {shape:?}, got {:?}",
                img.shape()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialDiscriminatorConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// One conv → avg-pool → leaky ReLU stage per entry.
    pub widths: Vec<usize>,
}

impl SpatialDiscriminatorConfig {
    pub const DEFAULT_WIDTHS: [usize; 4] = [16, 32, 32, 64];

    /// Up to four stages, as many as the crop can be halved.
    pub fn for_crop(channels: usize, height: usize, width: usize) -> Self {
        let mut stages = 0;
        let (mut h, mut w) = (height, width);
        while stages < Self::DEFAULT_WIDTHS.len() && h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0 {
            h /= 2;
            w /= 2;
            stages += 1;
        }
        Self {
            channels,
            height,
            width,
            widths: Self::DEFAULT_WIDTHS[..stages].to_vec(),
        }
    }

    /// Spatial extent after all stages.
    pub fn final_grid(&self) -> Result<(usize, usize)> {
        let (mut h, mut w) = (self.height, self.width);
        for _ in &self.widths {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::Config(format!(
                    "{}x{} cannot be halved {} times",
                    self.height,
                    self.width,
                    self.widths.len()
                )));
            }
            h /= 2;
            w /= 2;
        }
        Ok((h, w))
    }
}

/// Convolutional discriminator: strided stages followed by one dense logit.
#[derive(Debug, Clone)]
pub struct SpatialDiscriminator {
    config: SpatialDiscriminatorConfig,
    net: Sequential,
}

impl SpatialDiscriminator {
    pub fn new(config: SpatialDiscriminatorConfig, seed: u64) -> Result<Self> {
        if config.widths.is_empty() || config.channels == 0 {
            return Err(Error::Config("spatial discriminator needs at least one stage".into()));
        }
        let (gh, gw) = config.final_grid()?;
        let mut layers = Vec::new();
        let mut cin = config.channels;
        for (i, &cout) in config.widths.iter().enumerate() {
            layers.push(Layer::Conv3x3(Conv3x3::new(cin, cout, seed, i as u64)));
            layers.push(Layer::AvgPool2(AvgPool2));
            layers.push(Layer::LeakyRelu(LeakyRelu::default()));
            cin = cout;
        }
        layers.push(Layer::Dense(Dense::new(
            gh * gw * cin,
            1,
            seed,
            config.widths.len() as u64,
        )));
        Ok(Self {
            config,
            net: Sequential::new(layers),
        })
    }

    pub fn config(&self) -> &SpatialDiscriminatorConfig {
        &self.config
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.config.height, self.config.width, self.config.channels)
    }
}

impl Module for SpatialDiscriminator {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>> {
        check_input(inputs, self.input_shape(), "spatial discriminator")?;
        self.net.forward(inputs)
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        self.net.backward(grads)
    }

    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.net.set_trainable(trainable)
    }
}

impl Discriminator for SpatialDiscriminator {}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FourierDiscriminatorConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Number of dense layers, including the final logit layer.
    pub num_layers: usize,
    pub hidden_widths: Vec<usize>,
}

impl FourierDiscriminatorConfig {
    /// Default hidden widths for the 5- and 3-layer variants.
    pub fn new(channels: usize, height: usize, width: usize, num_layers: usize) -> Result<Self> {
        let hidden_widths = match num_layers {
            5 => vec![1024, 512, 256, 128],
            3 => vec![512, 128],
            n => {
                return Err(Error::Config(format!(
                    "Fourier discriminator has 3 or 5 layers, got {n}"
                )))
            }
        };
        Ok(Self {
            channels,
            height,
            width,
            num_layers,
            hidden_widths,
        })
    }

    /// Amplitude and phase of every kept component: `C · (H/2) · W · 2`.
    pub fn input_dim(&self) -> usize {
        self.channels * (self.height / 2) * self.width * 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.height % 2 != 0 || self.width % 2 != 0 || self.height < 2 || self.width < 2 {
            return Err(Error::Config(format!(
                "Fourier discriminator needs even crop dims, got {}x{}",
                self.height, self.width
            )));
        }
        if self.hidden_widths.len() + 1 != self.num_layers {
            return Err(Error::Config(format!(
                "{} hidden widths for {} layers",
                self.hidden_widths.len(),
                self.num_layers
            )));
        }
        Ok(())
    }
}

/// Fully connected discriminator over the windowed half spectrum
/// (amplitudes then phases, channel-planar, row-major).
#[derive(Debug, Clone)]
pub struct FourierDiscriminator {
    config: FourierDiscriminatorConfig,
    mlp: Sequential,
    spectra: Option<Vec<Spectrum>>,
}

impl FourierDiscriminator {
    pub fn new(config: FourierDiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut n_in = config.input_dim();
        for (i, &n_out) in config.hidden_widths.iter().enumerate() {
            layers.push(Layer::Dense(Dense::new(n_in, n_out, seed, i as u64)));
            layers.push(Layer::LeakyRelu(LeakyRelu::default()));
            n_in = n_out;
        }
        layers.push(Layer::Dense(Dense::new(
            n_in,
            1,
            seed,
            config.hidden_widths.len() as u64,
        )));
        Ok(Self {
            config,
            mlp: Sequential::new(layers),
            spectra: None,
        })
    }

    pub fn config(&self) -> &FourierDiscriminatorConfig {
        &self.config
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.config.height, self.config.width, self.config.channels)
    }
}

/// Flattened discriminator input: all amplitudes, then all phases.
pub fn spectrum_features(spec: &Spectrum) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * spec.len());
    v.extend_from_slice(spec.amplitude());
    v.extend_from_slice(spec.phase());
    v
}

impl Module for FourierDiscriminator {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>> {
        check_input(inputs, self.input_shape(), "Fourier discriminator")?;
        let spectra = inputs
            .par_iter()
            .map(windowed_spectrum)
            .collect::<Result<Vec<_>>>()?;
        let features: Vec<Image> = spectra
            .iter()
            .map(|s| Image::vector(spectrum_features(s)))
            .collect();
        let out = self.mlp.forward(&features)?;
        self.spectra = Some(spectra);
        Ok(out)
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        let spectra = self.spectra.take().ok_or_else(|| {
            Error::ShapeMismatch("Fourier discriminator: backward called before forward".into())
        })?;
        let d_features = self.mlp.backward(grads)?;
        spectra
            .par_iter()
            .zip(d_features.par_iter())
            .map(|(s, d)| {
                let (d_amp, d_phase) = d.data().split_at(s.len());
                s.backward(d_amp, d_phase)
            })
            .collect()
    }

    fn params(&self) -> Vec<&Param> {
        self.mlp.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp.params_mut()
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.mlp.set_trainable(trainable)
    }
}

impl Discriminator for FourierDiscriminator {}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::seed_from_u64(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.gen())
    }

    #[test]
    fn fourier_input_dim() {
        let cfg = FourierDiscriminatorConfig::new(3, 64, 64, 5).unwrap();
        assert_eq!(cfg.input_dim(), 12288);
        assert!(FourierDiscriminatorConfig::new(3, 64, 64, 4).is_err());
    }

    #[test]
    fn zero_parameters_give_zero_logit() {
        let mut d = FourierDiscriminator::new(FourierDiscriminatorConfig::new(1, 8, 8, 3).unwrap(), 1)
            .unwrap();
        let mut s = SpatialDiscriminator::new(SpatialDiscriminatorConfig::for_crop(1, 8, 8), 1).unwrap();
        for p in d.params_mut().into_iter().chain(s.params_mut()) {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let img = random_image(8, 8, 1, 0);
        assert_eq!(d.logit(&img).unwrap(), 0.0);
        assert_eq!(s.logit(&img).unwrap(), 0.0);
    }

    #[test]
    fn spatial_grid_arithmetic() {
        let cfg = SpatialDiscriminatorConfig::for_crop(3, 64, 64);
        assert_eq!(cfg.widths.len(), 4);
        assert_eq!(cfg.final_grid().unwrap(), (4, 4));
        let small = SpatialDiscriminatorConfig::for_crop(1, 8, 8);
        assert_eq!(small.widths.len(), 3);
        assert_eq!(small.final_grid().unwrap(), (1, 1));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut d = FourierDiscriminator::new(FourierDiscriminatorConfig::new(3, 8, 8, 3).unwrap(), 1)
            .unwrap();
        assert!(d.logit(&Image::zeros(8, 10, 3)).is_err());
        let mut s = SpatialDiscriminator::new(SpatialDiscriminatorConfig::for_crop(3, 16, 16), 1).unwrap();
        assert!(s.logit(&Image::zeros(8, 8, 3)).is_err());
    }

    #[test]
    fn seeded_construction_is_reproducible() {
        let cfg = FourierDiscriminatorConfig::new(1, 8, 8, 5).unwrap();
        let a = FourierDiscriminator::new(cfg.clone(), 9).unwrap();
        let b = FourierDiscriminator::new(cfg, 9).unwrap();
        let pa: Vec<_> = a.params().iter().map(|p| p.value.clone()).collect();
        let pb: Vec<_> = b.params().iter().map(|p| p.value.clone()).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn batch_logits_match_single_logits() {
        let cfg = FourierDiscriminatorConfig::new(2, 8, 8, 3).unwrap();
        let mut d = FourierDiscriminator::new(cfg, 4).unwrap();
        let imgs: Vec<Image> = (0..3).map(|s| random_image(8, 8, 2, s)).collect();
        let batch = d.logits(&imgs).unwrap();
        for (img, &l) in imgs.iter().zip(&batch) {
            assert!((d.logit(img).unwrap() - l).abs() < 1e-12);
        }
    }
}

use super::layers::{Conv3x3, LeakyRelu, Module, Param, PixelShuffle};
use crate::error::{Error, Result};
use crate::tensor::{Image, ScaleFactor};

/// Shape of the toy super-resolution generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Image channels in and out.
    pub channels: usize,
    pub base_channels: usize,
    pub num_blocks: usize,
    /// Must be a power of two; realized as a chain of ×2 pixel-shuffle stages.
    pub scale: ScaleFactor,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            base_channels: 16,
            num_blocks: 4,
            scale: ScaleFactor::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn upsample_stages(&self) -> Result<usize> {
        let r = self.scale.get();
        if !r.is_power_of_two() {
            return Err(Error::Config(format!(
                "generator scale must be a power of two, got {r}"
            )));
        }
        Ok(r.trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("generator channel counts must be positive".into()));
        }
        self.upsample_stages().map(|_| ())
    }
}

#[derive(Debug, Clone)]
struct ResidualBlock {
    conv1: Conv3x3,
    act: LeakyRelu,
    conv2: Conv3x3,
}

#[derive(Debug, Clone)]
struct UpStage {
    conv: Conv3x3,
    shuffle: PixelShuffle,
    act: LeakyRelu,
}

/// conv head → residual blocks → (conv, ×2 pixel shuffle, leaky ReLU) stages
/// → conv tail. The output is not clamped.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    seed: u64,
    head: Conv3x3,
    blocks: Vec<ResidualBlock>,
    ups: Vec<UpStage>,
    tail: Conv3x3,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let stages = config.upsample_stages()?;
        let (c, f) = (config.channels, config.base_channels);
        let mut idx = 0u64;
        let mut next = || {
            idx += 1;
            idx - 1
        };
        let head = Conv3x3::new(c, f, seed, next());
        let blocks = (0..config.num_blocks)
            .map(|_| ResidualBlock {
                conv1: Conv3x3::new(f, f, seed, next()),
                act: LeakyRelu::default(),
                conv2: Conv3x3::new(f, f, seed, next()),
            })
            .collect();
        let ups = (0..stages)
            .map(|_| UpStage {
                conv: Conv3x3::new(f, 4 * f, seed, next()),
                shuffle: PixelShuffle { r: 2 },
                act: LeakyRelu::default(),
            })
            .collect();
        let tail = Conv3x3::new(f, c, seed, next());
        Ok(Self {
            config,
            seed,
            head,
            blocks,
            ups,
            tail,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Super-resolves one image (unclamped).
    pub fn forward_one(&mut self, lr: &Image) -> Result<Image> {
        Ok(self.forward(std::slice::from_ref(lr))?.remove(0))
    }

    /// Inference: forward pass with the output clamped to `[0, 1]`.
    pub fn upscale(&mut self, lr: &Image) -> Result<Image> {
        Ok(self.forward_one(lr)?.clamped())
    }
}

impl Module for Generator {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>> {
        for x in inputs {
            if x.channels() != self.config.channels {
                return Err(Error::ShapeMismatch(format!(
                    "generator expects {} channels, got {}",
                    self.config.channels,
                    x.channels()
                )));
            }
        }
        let mut x = self.head.forward(inputs)?;
        for block in &mut self.blocks {
            let t = block.conv1.forward(&x)?;
            let t = block.act.forward(&t)?;
            let t = block.conv2.forward(&t)?;
            for (xi, ti) in x.iter_mut().zip(&t) {
                xi.add_scaled(ti, 1.0);
            }
        }
        for stage in &mut self.ups {
            let t = stage.conv.forward(&x)?;
            let t = stage.shuffle.forward(&t)?;
            x = stage.act.forward(&t)?;
        }
        self.tail.forward(&x)
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        let mut g = self.tail.backward(grads)?;
        for stage in self.ups.iter_mut().rev() {
            let t = stage.act.backward(&g)?;
            let t = stage.shuffle.backward(&t)?;
            g = stage.conv.backward(&t)?;
        }
        for block in self.blocks.iter_mut().rev() {
            let t = block.conv2.backward(&g)?;
            let t = block.act.backward(&t)?;
            let t = block.conv1.backward(&t)?;
            for (gi, ti) in g.iter_mut().zip(&t) {
                gi.add_scaled(ti, 1.0);
            }
        }
        self.head.backward(&g)
    }

    fn params(&self) -> Vec<&Param> {
        let mut out = self.head.params();
        for b in &self.blocks {
            out.extend(b.conv1.params());
            out.extend(b.conv2.params());
        }
        for s in &self.ups {
            out.extend(s.conv.params());
        }
        out.extend(self.tail.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.head.params_mut();
        for b in &mut self.blocks {
            out.extend(b.conv1.params_mut());
            out.extend(b.conv2.params_mut());
        }
        for s in &mut self.ups {
            out.extend(s.conv.params_mut());
        }
        out.extend(self.tail.params_mut());
        out
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.head.set_trainable(trainable);
        for b in &mut self.blocks {
            b.conv1.set_trainable(trainable);
            b.conv2.set_trainable(trainable);
        }
        for s in &mut self.ups {
            s.conv.set_trainable(trainable);
        }
        self.tail.set_trainable(trainable);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn input(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::seed_from_u64(seed);
        Image::from_fn(h, w, 3, |_, _, _| rng.gen())
    }

    #[test]
    fn output_is_r_times_input() {
        let mut g = Generator::new(GeneratorConfig::default(), 1).unwrap();
        let y = g.forward_one(&input(16, 16, 0)).unwrap();
        assert_eq!(y.shape(), (64, 64, 3));
        let y = g.forward_one(&input(6, 10, 0)).unwrap();
        assert_eq!(y.shape(), (24, 40, 3));

        let cfg = GeneratorConfig {
            scale: ScaleFactor::new(2).unwrap(),
            ..GeneratorConfig::default()
        };
        let mut g2 = Generator::new(cfg, 1).unwrap();
        assert_eq!(g2.forward_one(&input(5, 7, 0)).unwrap().shape(), (10, 14, 3));
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut g = Generator::new(GeneratorConfig::default(), 3).unwrap();
        for p in g.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let y = g.forward_one(&input(8, 8, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let x = input(8, 8, 2);
        let a = Generator::new(GeneratorConfig::default(), 77)
            .unwrap()
            .forward_one(&x)
            .unwrap();
        let b = Generator::new(GeneratorConfig::default(), 77)
            .unwrap()
            .forward_one(&x)
            .unwrap();
        assert_eq!(a, b);
        let c = Generator::new(GeneratorConfig::default(), 78)
            .unwrap()
            .forward_one(&x)
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_parameter_budget() {
        let g = Generator::new(GeneratorConfig::default(), 0).unwrap();
        assert!(g.num_params() < 100_000, "{}", g.num_params());
    }

    #[test]
    fn rejects_non_power_of_two_scale() {
        let cfg = GeneratorConfig {
            scale: ScaleFactor::new(3).unwrap(),
            ..GeneratorConfig::default()
        };
        assert!(Generator::new(cfg, 0).is_err());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut g = Generator::new(GeneratorConfig::default(), 0).unwrap();
        assert!(g.forward_one(&Image::zeros(4, 4, 1)).is_err());
    }
}

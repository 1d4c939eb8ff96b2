use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::GeneratorConfig;
use crate::tensor::ScaleFactor;

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub enable_l1: bool,
    pub enable_fourier: bool,
    pub enable_gan_spatial: bool,
    pub enable_gan_fourier: bool,
    pub enable_feature: bool,
    /// Weight of the adversarial pair.
    pub alpha: f64,
    /// Weight of the supervision pair (L1, Fourier).
    pub beta: f64,
    /// Weight of the feature loss.
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    /// LR crop side; the HR crop is `scale * crop_lr`.
    pub crop_lr: usize,
    pub scale: ScaleFactor,
    /// Generator warm-up iterations on L1 alone, before `iters`.
    pub pretrain_iters: usize,
    /// 3 or 5.
    pub fourier_disc_layers: usize,
    pub channels: usize,
    pub gen_channels: usize,
    pub gen_blocks: usize,
    pub feature_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            enable_l1: true,
            enable_fourier: false,
            enable_gan_spatial: false,
            enable_gan_fourier: false,
            enable_feature: false,
            alpha: 0.005,
            beta: 0.01,
            gamma: 1.0,
            lr: 1e-4,
            batch: 4,
            iters: 1000,
            seed: 0,
            crop_lr: 16,
            scale: ScaleFactor::default(),
            pretrain_iters: 500,
            fourier_disc_layers: 5,
            channels: 3,
            gen_channels: 16,
            gen_blocks: 4,
            feature_seed: 0,
        }
    }
}

/// Loss selections of the eight ablation configurations, in column order
/// L1, Fourier, spatial GAN, Fourier GAN, feature.
pub const PRESETS: [[bool; 5]; 8] = [
    [true, false, false, false, false],
    [false, true, false, false, false],
    [true, true, false, false, false],
    [true, false, true, false, true],
    [false, true, false, true, true],
    [true, true, true, false, true],
    [true, true, false, true, true],
    [true, true, true, true, true],
];

const KEYS: [&str; 20] = [
    "enable_l1",
    "enable_fourier",
    "enable_gan_spatial",
    "enable_gan_fourier",
    "enable_feature",
    "alpha",
    "beta",
    "gamma",
    "lr",
    "batch",
    "iters",
    "seed",
    "crop_lr",
    "scale",
    "pretrain_iters",
    "fourier_disc_layers",
    "channels",
    "gen_channels",
    "gen_blocks",
    "feature_seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key}={value}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse {key}={value} as a boolean"))),
    }
}

impl TrainConfig {
    /// Defaults with the loss selection of ablation row `n` (1-8).
    pub fn preset(n: usize) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_preset(n)?;
        Ok(cfg)
    }

    /// Overwrites only the loss switches.
    pub fn apply_preset(&mut self, n: usize) -> Result<()> {
        let row = n
            .checked_sub(1)
            .and_then(|i| PRESETS.get(i))
            .ok_or_else(|| Error::Config(format!("preset must be 1-8, got {n}")))?;
        [
            self.enable_l1,
            self.enable_fourier,
            self.enable_gan_spatial,
            self.enable_gan_fourier,
            self.enable_feature,
        ] = *row;
        Ok(())
    }

    pub fn losses(&self) -> [bool; 5] {
        [
            self.enable_l1,
            self.enable_fourier,
            self.enable_gan_spatial,
            self.enable_gan_fourier,
            self.enable_feature,
        ]
    }

    pub fn uses_gan(&self) -> bool {
        self.enable_gan_spatial || self.enable_gan_fourier
    }

    pub fn hr_crop(&self) -> usize {
        self.crop_lr * self.scale.get()
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            channels: self.channels,
            base_channels: self.gen_channels,
            num_blocks: self.gen_blocks,
            scale: self.scale,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "enable_l1" => self.enable_l1 = parse_bool(key, v)?,
            "enable_fourier" => self.enable_fourier = parse_bool(key, v)?,
            "enable_gan_spatial" => self.enable_gan_spatial = parse_bool(key, v)?,
            "enable_gan_fourier" => self.enable_gan_fourier = parse_bool(key, v)?,
            "enable_feature" => self.enable_feature = parse_bool(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "iters" => self.iters = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "crop_lr" => self.crop_lr = parse(key, v)?,
            "scale" => self.scale = ScaleFactor::new(parse(key, v)?)?,
            "pretrain_iters" => self.pretrain_iters = parse(key, v)?,
            "fourier_disc_layers" => self.fourier_disc_layers = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "gen_channels" => self.gen_channels = parse(key, v)?,
            "gen_blocks" => self.gen_blocks = parse(key, v)?,
            "feature_seed" => self.feature_seed = parse(key, v)?,
            "preset" => self.apply_preset(parse(key, v)?)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "enable_l1" => self.enable_l1.to_string(),
            "enable_fourier" => self.enable_fourier.to_string(),
            "enable_gan_spatial" => self.enable_gan_spatial.to_string(),
            "enable_gan_fourier" => self.enable_gan_fourier.to_string(),
            "enable_feature" => self.enable_feature.to_string(),
            "alpha" => format!("{:?}", self.alpha),
            "beta" => format!("{:?}", self.beta),
            "gamma" => format!("{:?}", self.gamma),
            "lr" => format!("{:?}", self.lr),
            "batch" => self.batch.to_string(),
            "iters" => self.iters.to_string(),
            "seed" => self.seed.to_string(),
            "crop_lr" => self.crop_lr.to_string(),
            "scale" => self.scale.get().to_string(),
            "pretrain_iters" => self.pretrain_iters.to_string(),
            "fourier_disc_layers" => self.fourier_disc_layers.to_string(),
            "channels" => self.channels.to_string(),
            "gen_channels" => self.gen_channels.to_string(),
            "gen_blocks" => self.gen_blocks.to_string(),
            "feature_seed" => self.feature_seed.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// The resolved configuration as `key=value` lines; parses back to `self`.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key}={}", self.value_of(key));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !self.losses().iter().any(|&on| on) {
            return Err(Error::Config("at least one loss must be enabled".into()));
        }
        if self.crop_lr == 0 || self.crop_lr % 2 != 0 {
            return Err(Error::Config(format!(
                "crop_lr must be even and positive, got {}",
                self.crop_lr
            )));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.enable_gan_fourier && !matches!(self.fourier_disc_layers, 3 | 5) {
            return Err(Error::Config(format!(
                "fourier_disc_layers must be 3 or 5, got {}",
                self.fourier_disc_layers
            )));
        }
        self.generator_config().validate()
    }
}

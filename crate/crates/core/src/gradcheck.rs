//! Central finite-difference verification of every analytic gradient in
//! the crate: the losses, the GAN objectives, each layer type and the
//! three networks.
//!
//! A component passes when at least [`GradcheckOptions::min_pass_fraction`]
//! of its checked coordinates have relative error below the tolerance.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::Result;
use crate::gan::{gan_loss_discriminator, gan_loss_generator, relativistic_transform};
use crate::losses::{
    amplitude_loss, feature_loss, fourier_loss, l1_loss, phase_loss, ConvFeatureExtractor,
    LossValue,
};
use crate::nets::{
    AvgPool2, Conv3x3, Dense, FourierDiscriminator, FourierDiscriminatorConfig, Generator,
    GeneratorConfig, LeakyRelu, Module, PixelShuffle, SpatialDiscriminator,
    SpatialDiscriminatorConfig,
};
use crate::spectral::windowed_spectrum;
use crate::tensor::{Image, ScaleFactor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Side of the square test images; even and at least 8.
    pub size: usize,
    pub step: f64,
    pub tolerance: f64,
    pub min_pass_fraction: f64,
    /// Denominator floor of the relative error, so coordinates whose true
    /// gradient is zero are judged on absolute error.
    pub floor: f64,
    /// Coordinates sampled per tensor; smaller tensors are checked fully.
    pub max_coords: usize,
    /// Negative control: perturb the analytic gradient of every component
    /// whose name starts with this prefix.
    pub corrupt: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 8,
            step: 1e-5,
            tolerance: 1e-4,
            min_pass_fraction: 0.99,
            floor: 1e-6,
            max_coords: 48,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentReport {
    pub name: String,
    pub checked: usize,
    pub passed: usize,
    pub max_rel_error: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckReport {
    pub components: Vec<ComponentReport>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.components.iter().all(|c| c.ok)
    }

    /// One tab-separated line per component under a header.
    pub fn to_table(&self) -> String {
        let mut out = String::from("component\tchecked\tpassed\tmax_rel_error\tstatus\n");
        for c in &self.components {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.3e}\t{}",
                c.name,
                c.checked,
                c.passed,
                c.max_rel_error,
                if c.ok { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic[i]` with the central difference of `f` along each
/// listed coordinate of `x`. `f` must not keep state between calls.
pub fn check_coordinates(
    name: &str,
    x: &mut [f64],
    analytic: &[f64],
    coords: &[usize],
    opts: &GradcheckOptions,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<ComponentReport> {
    let corrupt = opts
        .corrupt
        .as_deref()
        .is_some_and(|prefix| name.starts_with(prefix));
    let mut passed = 0;
    let mut max_rel_error: f64 = 0.0;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + opts.step;
        let plus = f(x)?;
        x[i] = orig - opts.step;
        let minus = f(x)?;
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let mut a = analytic[i];
        if corrupt {
            a = a * 1.01 + 1e-3;
        }
        let e = relative_error(a, numeric, opts.floor);
        if e < opts.tolerance {
            passed += 1;
        }
        max_rel_error = max_rel_error.max(e);
    }
    let checked = coords.len();
    Ok(ComponentReport {
        name: name.to_string(),
        checked,
        passed,
        max_rel_error,
        ok: checked > 0 && passed as f64 >= opts.min_pass_fraction * checked as f64,
    })
}

fn pick(rng: &mut SplitMix64, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, max).into_vec();
        v.sort_unstable();
        v
    }
}

fn random_image(rng: &mut SplitMix64, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.gen())
}

fn signed_image(rng: &mut SplitMix64, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| rng.gen_range(-1.0..1.0))
}

/// Checks a loss `pred ↦ value` against its returned gradient.
fn check_loss(
    name: &str,
    pred: &Image,
    opts: &GradcheckOptions,
    rng: &mut SplitMix64,
    loss: impl Fn(&Image) -> Result<LossValue>,
) -> Result<ComponentReport> {
    let analytic = loss(pred)?.gradient.expect("loss gradient");
    let coords = pick(rng, pred.len(), opts.max_coords);
    let (h, w, c) = pred.shape();
    let mut x = pred.data().to_vec();
    check_coordinates(name, &mut x, analytic.data(), &coords, opts, |x| {
        Ok(loss(&Image::new(h, w, c, x.to_vec())?)?.value)
    })
}

/// Scalarizes a module as `Σ_b ⟨R_b, module(x)_b⟩` for fixed random `R`
/// and checks the gradient with respect to every input and parameter
/// tensor.
pub fn check_module(
    name: &str,
    module: &mut dyn Module,
    inputs: &[Image],
    opts: &GradcheckOptions,
    rng: &mut SplitMix64,
) -> Result<Vec<ComponentReport>> {
    module.set_trainable(true);
    let outputs = module.forward(inputs)?;
    let proj: Vec<Image> = outputs
        .iter()
        .map(|o| signed_image(rng, o.height(), o.width(), o.channels()))
        .collect();
    module.zero_grad();
    let d_inputs = module.backward(&proj)?;
    let param_grads: Vec<(&'static str, Vec<f64>)> = module
        .params()
        .iter()
        .map(|p| (p.name, p.grad.clone()))
        .collect();

    let objective = |module: &mut dyn Module, xs: &[Image]| -> Result<f64> {
        let outs = module.forward(xs)?;
        Ok(outs
            .iter()
            .zip(&proj)
            .map(|(o, r)| o.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum())
    };

    let mut reports = Vec::new();

    // Inputs, flattened across the batch.
    let shapes: Vec<(usize, usize, usize)> = inputs.iter().map(Image::shape).collect();
    let mut flat: Vec<f64> = inputs.iter().flat_map(|i| i.data().iter().copied()).collect();
    let analytic: Vec<f64> = d_inputs.iter().flat_map(|g| g.data().iter().copied()).collect();
    let coords = pick(rng, flat.len(), opts.max_coords);
    let unflatten = |x: &[f64]| -> Result<Vec<Image>> {
        let mut off = 0;
        shapes
            .iter()
            .map(|&(h, w, c)| {
                let n = h * w * c;
                off += n;
                Image::new(h, w, c, x[off - n..off].to_vec())
            })
            .collect()
    };
    reports.push(check_coordinates(
        &format!("{name}:input"),
        &mut flat,
        &analytic,
        &coords,
        opts,
        |x| objective(module, &unflatten(x)?),
    )?);

    for (t, (pname, grad)) in param_grads.iter().enumerate() {
        let mut values = module.params()[t].value.clone();
        let coords = pick(rng, values.len(), opts.max_coords);
        let tensor_name = format!("{name}:{}#{t}", pname.rsplit('.').next().unwrap_or(pname));
        let report = check_coordinates(&tensor_name, &mut values, grad, &coords, opts, |v| {
            module.params_mut()[t].value.copy_from_slice(v);
            objective(module, inputs)
        })?;
        module.params_mut()[t].value.copy_from_slice(&values);
        reports.push(report);
    }
    Ok(reports)
}

fn gan_reports(opts: &GradcheckOptions, rng: &mut SplitMix64) -> Result<Vec<ComponentReport>> {
    let mut logits: Vec<f64> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let coords: Vec<usize> = (0..8).collect();
    let mut out = Vec::new();
    for (name, generator) in [("gan_generator", true), ("gan_discriminator", false)] {
        let eval = |l: &[f64]| -> Result<_> {
            let s = relativistic_transform(&l[..4], &l[4..])?;
            Ok(if generator {
                gan_loss_generator(&s)
            } else {
                gan_loss_discriminator(&s)
            })
        };
        let g = eval(&logits)?;
        let analytic: Vec<f64> = g.d_real.iter().chain(&g.d_fake).copied().collect();
        out.push(check_coordinates(name, &mut logits, &analytic, &coords, opts, |l| {
            Ok(eval(l)?.value)
        })?);
    }
    Ok(out)
}

/// Runs every check. Deterministic in `opts`.
pub fn run_all(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let n = opts.size;
    if n < 8 || n % 2 != 0 {
        return Err(crate::Error::InvalidDimensions(format!(
            "gradcheck size must be even and at least 8, got {n}"
        )));
    }
    let mut rng = SplitMix64::seed_from_u64(opts.seed);
    let rng = &mut rng;
    let mut components = Vec::new();

    // Losses on an RGB pair.
    let pred = random_image(rng, n, n, 3);
    let target = random_image(rng, n, n, 3);
    let target_spec = windowed_spectrum(&target)?;
    components.push(check_loss("loss_l1", &pred, opts, rng, |p| l1_loss(p, &target))?);
    components.push(check_loss("loss_fourier_amplitude", &pred, opts, rng, |p| {
        amplitude_loss(&windowed_spectrum(p)?, &target_spec)
    })?);
    components.push(check_loss("loss_fourier_phase", &pred, opts, rng, |p| {
        phase_loss(&windowed_spectrum(p)?, &target_spec)
    })?);
    components.push(check_loss("loss_fourier", &pred, opts, rng, |p| fourier_loss(p, &target))?);
    let extractor = ConvFeatureExtractor::new(3, opts.seed);
    components.push(check_loss("loss_feature", &pred, opts, rng, |p| {
        feature_loss(p, &target, &mut extractor.clone())
    })?);
    components.extend(gan_reports(opts, rng)?);

    // Layers on a batch of two.
    let seed = opts.seed;
    let batch = |rng: &mut SplitMix64, h, w, c| vec![signed_image(rng, h, w, c), signed_image(rng, h, w, c)];
    let inputs = batch(rng, 5, 4, 2);
    let mut conv = Conv3x3::new(2, 3, seed, 0);
    conv.bias.value.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    components.extend(check_module("layer_conv3x3", &mut conv, &inputs, opts, rng)?);
    let inputs = batch(rng, 2, 3, 2);
    let mut dense = Dense::new(12, 5, seed, 1);
    dense.bias.value.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    components.extend(check_module("layer_dense", &mut dense, &inputs, opts, rng)?);
    let inputs = batch(rng, 4, 4, 3);
    components.extend(check_module("layer_leaky_relu", &mut LeakyRelu::default(), &inputs, opts, rng)?);
    let inputs = batch(rng, 2, 3, 8);
    components.extend(check_module("layer_pixel_shuffle", &mut PixelShuffle { r: 2 }, &inputs, opts, rng)?);
    let inputs = batch(rng, 4, 6, 2);
    components.extend(check_module("layer_avg_pool2", &mut AvgPool2, &inputs, opts, rng)?);

    // Networks on single-channel images of the requested size.
    let lr = batch(rng, n / 4, n / 4, 1);
    let mut generator = Generator::new(
        GeneratorConfig {
            channels: 1,
            base_channels: 4,
            num_blocks: 1,
            scale: ScaleFactor::new(4)?,
        },
        seed,
    )?;
    components.extend(check_module("net_generator", &mut generator, &lr, opts, rng)?);
    let imgs = vec![random_image(rng, n, n, 1), random_image(rng, n, n, 1)];
    let mut spatial = SpatialDiscriminator::new(SpatialDiscriminatorConfig::for_crop(1, n, n), seed)?;
    components.extend(check_module("net_spatial_discriminator", &mut spatial, &imgs, opts, rng)?);
    for layers in [3, 5] {
        let mut fourier =
            FourierDiscriminator::new(FourierDiscriminatorConfig::new(1, n, n, layers)?, seed)?;
        components.extend(check_module(
            &format!("net_fourier_discriminator_{layers}"),
            &mut fourier,
            &imgs,
            opts,
            rng,
        )?);
    }
    Ok(GradcheckReport { components })
}

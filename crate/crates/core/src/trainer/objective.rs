use rayon::prelude::*;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::gan::{gan_loss_discriminator, gan_loss_generator, relativistic_transform};
use crate::losses::{fourier_loss, l1_loss, FeatureExtractor, LossValue};
use crate::nets::{Discriminator, FourierDiscriminator, SpatialDiscriminator};
use crate::tensor::Image;

/// Per-term values of the generator objective; `None` for disabled terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeneratorTerms {
    pub l1: Option<f64>,
    pub fourier: Option<f64>,
    pub gan_spatial: Option<f64>,
    pub gan_fourier: Option<f64>,
    pub feature: Option<f64>,
}

impl GeneratorTerms {
    /// `(name, value)` for each enabled term, in column order.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        [
            ("l1", self.l1),
            ("fourier", self.fourier),
            ("gan_spatial", self.gan_spatial),
            ("gan_fourier", self.gan_fourier),
            ("feature", self.feature),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect()
    }
}

/// Multipliers applied to each generator term. A pair sharing a weight is
/// averaged only when both members are enabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub l1: f64,
    pub fourier: f64,
    pub gan_spatial: f64,
    pub gan_fourier: f64,
    pub feature: f64,
}

fn pair(weight: f64, a: bool, b: bool) -> (f64, f64) {
    let w = if a && b { weight / 2.0 } else { weight };
    (if a { w } else { 0.0 }, if b { w } else { 0.0 })
}

impl TermWeights {
    pub fn generator(cfg: &TrainConfig) -> Self {
        let (l1, fourier) = pair(cfg.beta, cfg.enable_l1, cfg.enable_fourier);
        let (gan_spatial, gan_fourier) =
            pair(cfg.alpha, cfg.enable_gan_spatial, cfg.enable_gan_fourier);
        Self {
            l1,
            fourier,
            gan_spatial,
            gan_fourier,
            feature: if cfg.enable_feature { cfg.gamma } else { 0.0 },
        }
    }

    /// `(spatial, fourier)` multipliers of the discriminator objective.
    pub fn discriminator(cfg: &TrainConfig) -> (f64, f64) {
        pair(cfg.alpha, cfg.enable_gan_spatial, cfg.enable_gan_fourier)
    }
}

/// Weighted total of the enabled generator terms.
pub fn combine_terms(cfg: &TrainConfig, terms: &GeneratorTerms) -> f64 {
    let w = TermWeights::generator(cfg);
    [
        (w.l1, terms.l1),
        (w.fourier, terms.fourier),
        (w.gan_spatial, terms.gan_spatial),
        (w.gan_fourier, terms.gan_fourier),
        (w.feature, terms.feature),
    ]
    .into_iter()
    .filter_map(|(w, v)| v.map(|v| w * v))
    .sum()
}

/// Batch mean of a per-image loss, with gradients divided by the batch size.
fn batch_mean(
    pred: &[Image],
    target: &[Image],
    loss: impl Fn(&Image, &Image) -> Result<LossValue> + Sync,
) -> Result<(f64, Vec<Image>)> {
    check_batches(pred, target)?;
    let parts: Vec<LossValue> = pred
        .par_iter()
        .zip(target)
        .map(|(p, t)| loss(p, t))
        .collect::<Result<_>>()?;
    let b = pred.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(parts.len());
    for part in parts {
        value += part.value;
        let mut g = part.gradient.expect("supervised losses return gradients");
        g.scale(1.0 / b);
        grads.push(g);
    }
    Ok((value / b, grads))
}

fn check_batches(pred: &[Image], target: &[Image]) -> Result<()> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

pub fn batch_l1(pred: &[Image], target: &[Image]) -> Result<(f64, Vec<Image>)> {
    batch_mean(pred, target, l1_loss)
}

pub fn batch_fourier(pred: &[Image], target: &[Image]) -> Result<(f64, Vec<Image>)> {
    batch_mean(pred, target, fourier_loss)
}

/// Batch mean of the feature-space L1 distance through a frozen extractor.
pub fn batch_feature(
    pred: &[Image],
    target: &[Image],
    extractor: &mut dyn FeatureExtractor,
) -> Result<(f64, Vec<Image>)> {
    check_batches(pred, target)?;
    let target_features = extractor.extract(target)?;
    let pred_features = extractor.extract(pred)?;
    let (value, grads) = batch_mean(&pred_features, &target_features, l1_loss)?;
    Ok((value, extractor.backward(&grads)?))
}

/// Relativistic generator loss through `disc`, returning ∂L/∂pred. The
/// discriminator's parameter gradients are left untouched.
pub fn generator_adversarial(
    disc: &mut dyn Discriminator,
    pred: &[Image],
    target: &[Image],
) -> Result<(f64, Vec<Image>)> {
    check_batches(pred, target)?;
    disc.set_trainable(false);
    let result = (|| {
        let real = disc.logits(target)?;
        let fake = disc.logits(pred)?;
        let loss = gan_loss_generator(&relativistic_transform(&real, &fake)?);
        let grads = disc.backward_logits(&loss.d_fake)?;
        Ok((loss.value, grads))
    })();
    disc.set_trainable(true);
    result
}

/// Relativistic discriminator loss; accumulates `weight · ∂L/∂θ` into the
/// discriminator's gradient buffers and returns the unweighted loss.
pub fn discriminator_adversarial(
    disc: &mut dyn Discriminator,
    real: &[Image],
    fake: &[Image],
    weight: f64,
) -> Result<f64> {
    check_batches(fake, real)?;
    let both: Vec<Image> = real.iter().chain(fake).cloned().collect();
    let logits = disc.logits(&both)?;
    let (s_real, s_fake) = logits.split_at(real.len());
    let loss = gan_loss_discriminator(&relativistic_transform(s_real, s_fake)?);
    let d: Vec<f64> = loss
        .d_real
        .iter()
        .chain(&loss.d_fake)
        .map(|g| weight * g)
        .collect();
    disc.backward_logits(&d)?;
    Ok(loss.value)
}

/// The discriminators a configuration needs.
#[derive(Debug, Clone, Default)]
pub struct Critics {
    pub spatial: Option<SpatialDiscriminator>,
    pub fourier: Option<FourierDiscriminator>,
}

#[derive(Debug, Clone)]
pub struct CompositeLoss {
    pub terms: GeneratorTerms,
    pub total: f64,
    /// ∂total/∂pred for each sample.
    pub gradients: Vec<Image>,
}

fn accumulate(total: &mut [Image], grads: &[Image], weight: f64) {
    for (t, g) in total.iter_mut().zip(grads) {
        t.add_scaled(g, weight);
    }
}

/// The weighted generator objective over a batch and its gradient with
/// respect to every predicted image.
pub fn composite_generator_loss(
    cfg: &TrainConfig,
    pred: &[Image],
    target: &[Image],
    critics: &mut Critics,
    extractor: &mut dyn FeatureExtractor,
) -> Result<CompositeLoss> {
    check_batches(pred, target)?;
    let w = TermWeights::generator(cfg);
    let mut terms = GeneratorTerms::default();
    let mut gradients: Vec<Image> = pred
        .iter()
        .map(|p| Image::zeros(p.height(), p.width(), p.channels()))
        .collect();
    if cfg.enable_l1 {
        let (v, g) = batch_l1(pred, target)?;
        terms.l1 = Some(v);
        accumulate(&mut gradients, &g, w.l1);
    }
    if cfg.enable_fourier {
        let (v, g) = batch_fourier(pred, target)?;
        terms.fourier = Some(v);
        accumulate(&mut gradients, &g, w.fourier);
    }
    if cfg.enable_gan_spatial {
        let d = critics
            .spatial
            .as_mut()
            .ok_or_else(|| Error::Config("spatial GAN enabled without a discriminator".into()))?;
        let (v, g) = generator_adversarial(d, pred, target)?;
        terms.gan_spatial = Some(v);
        accumulate(&mut gradients, &g, w.gan_spatial);
    }
    if cfg.enable_gan_fourier {
        let d = critics
            .fourier
            .as_mut()
            .ok_or_else(|| Error::Config("Fourier GAN enabled without a discriminator".into()))?;
        let (v, g) = generator_adversarial(d, pred, target)?;
        terms.gan_fourier = Some(v);
        accumulate(&mut gradients, &g, w.gan_fourier);
    }
    if cfg.enable_feature {
        let (v, g) = batch_feature(pred, target, extractor)?;
        terms.feature = Some(v);
        accumulate(&mut gradients, &g, w.feature);
    }
    Ok(CompositeLoss {
        total: combine_terms(cfg, &terms),
        terms,
        gradients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::softplus;
    use crate::losses::{feature_loss, ConvFeatureExtractor};
    use crate::nets::{FourierDiscriminatorConfig, Module, SpatialDiscriminatorConfig};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn random_batch(n: usize, size: usize, seed: u64) -> Vec<Image> {
        let mut rng = SplitMix64::seed_from_u64(seed);
        (0..n)
            .map(|_| Image::from_fn(size, size, 3, |_, _, _| rng.gen()))
            .collect()
    }

    fn ones() -> GeneratorTerms {
        GeneratorTerms {
            l1: Some(1.0),
            fourier: Some(1.0),
            gan_spatial: Some(1.0),
            gan_fourier: Some(1.0),
            feature: Some(1.0),
        }
    }

    #[test]
    fn single_supervision_term_is_not_halved() {
        let cfg = TrainConfig::preset(1).unwrap();
        let terms = GeneratorTerms {
            l1: Some(0.3),
            ..Default::default()
        };
        assert_eq!(combine_terms(&cfg, &terms), cfg.beta * 0.3);
    }

    #[test]
    fn equal_unit_terms_sum_to_three() {
        let mut cfg = TrainConfig::preset(8).unwrap();
        cfg.alpha = 1.0;
        cfg.beta = 1.0;
        cfg.gamma = 1.0;
        assert_eq!(combine_terms(&cfg, &ones()), 3.0);
    }

    #[test]
    fn pair_weights_per_preset() {
        for n in 1..=8 {
            let cfg = TrainConfig::preset(n).unwrap();
            let w = TermWeights::generator(&cfg);
            let pairs = [
                (cfg.enable_l1, cfg.enable_fourier, w.l1, w.fourier, cfg.beta),
                (
                    cfg.enable_gan_spatial,
                    cfg.enable_gan_fourier,
                    w.gan_spatial,
                    w.gan_fourier,
                    cfg.alpha,
                ),
            ];
            for (a, b, wa, wb, weight) in pairs {
                let on = a as u8 + b as u8;
                let expected = if on == 2 { weight / 2.0 } else { weight };
                assert_eq!(wa, if a { expected } else { 0.0 }, "preset {n}");
                assert_eq!(wb, if b { expected } else { 0.0 }, "preset {n}");
            }
        }
    }

    #[test]
    fn missing_discriminator_is_an_error() {
        let cfg = TrainConfig::preset(4).unwrap();
        let batch = random_batch(2, 8, 1);
        let mut ex = ConvFeatureExtractor::new(3, 0);
        assert!(matches!(
            composite_generator_loss(&cfg, &batch, &batch, &mut Critics::default(), &mut ex),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn preset8_matches_hand_assembly() {
        let cfg = TrainConfig::preset(8).unwrap();
        let pred = random_batch(3, 16, 2);
        let target = random_batch(3, 16, 3);
        let spatial = SpatialDiscriminator::new(SpatialDiscriminatorConfig::for_crop(3, 16, 16), 4).unwrap();
        let fourier =
            FourierDiscriminator::new(FourierDiscriminatorConfig::new(3, 16, 16, 3).unwrap(), 5).unwrap();
        let mut ex = ConvFeatureExtractor::new(3, 6);

        let mean = |f: &dyn Fn(&Image, &Image) -> f64| {
            pred.iter().zip(&target).map(|(p, t)| f(p, t)).sum::<f64>() / 3.0
        };
        let l1 = mean(&|p, t| l1_loss(p, t).unwrap().value);
        let fl = mean(&|p, t| fourier_loss(p, t).unwrap().value);
        let feat = mean(&|p, t| feature_loss(p, t, &mut ConvFeatureExtractor::new(3, 6)).unwrap().value);
        let rel_g = |d: &mut dyn Discriminator| {
            let r: Vec<f64> = target.iter().map(|t| d.logit(t).unwrap()).collect();
            let f: Vec<f64> = pred.iter().map(|p| d.logit(p).unwrap()).collect();
            let mr = r.iter().sum::<f64>() / 3.0;
            let mf = f.iter().sum::<f64>() / 3.0;
            (0..3)
                .map(|i| softplus(-(f[i] - mr)) + softplus(r[i] - mf))
                .sum::<f64>()
                / 3.0
        };
        let gs = rel_g(&mut spatial.clone());
        let gf = rel_g(&mut fourier.clone());
        let expected = cfg.alpha * (gs + gf) / 2.0 + cfg.beta * (l1 + fl) / 2.0 + cfg.gamma * feat;

        let mut critics = Critics {
            spatial: Some(spatial.clone()),
            fourier: Some(fourier.clone()),
        };
        let got = composite_generator_loss(&cfg, &pred, &target, &mut critics, &mut ex).unwrap();
        assert!((got.total - expected).abs() < 1e-12, "{} vs {expected}", got.total);
        // Discriminator parameters are not touched by the generator objective.
        for d in [&critics.spatial.as_ref().unwrap().params(), &critics.fourier.as_ref().unwrap().params()] {
            assert!(d.iter().all(|p| p.grad.iter().all(|&g| g == 0.0)));
        }
    }

    #[test]
    fn gradient_is_weighted_sum() {
        let mut cfg = TrainConfig::preset(3).unwrap();
        cfg.beta = 0.7;
        let pred = random_batch(2, 8, 7);
        let target = random_batch(2, 8, 8);
        let mut ex = ConvFeatureExtractor::new(3, 0);
        let got = composite_generator_loss(&cfg, &pred, &target, &mut Critics::default(), &mut ex).unwrap();
        let (_, g1) = batch_l1(&pred, &target).unwrap();
        let (_, gf) = batch_fourier(&pred, &target).unwrap();
        for i in 0..2 {
            for k in 0..pred[i].len() {
                let e = 0.35 * g1[i].data()[k] + 0.35 * gf[i].data()[k];
                assert!((got.gradients[i].data()[k] - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn discriminator_step_accumulates_weighted_gradients() {
        let real = random_batch(2, 8, 9);
        let fake = random_batch(2, 8, 10);
        let mut d1 = SpatialDiscriminator::new(SpatialDiscriminatorConfig::for_crop(3, 8, 8), 1).unwrap();
        let mut d2 = d1.clone();
        let v1 = discriminator_adversarial(&mut d1, &real, &fake, 1.0).unwrap();
        let v2 = discriminator_adversarial(&mut d2, &real, &fake, 0.25).unwrap();
        assert_eq!(v1, v2);
        for (a, b) in d1.params().iter().zip(d2.params()) {
            for (x, y) in a.grad.iter().zip(&b.grad) {
                assert!((0.25 * x - y).abs() < 1e-15);
            }
        }
    }
}

use super::{l1_loss, LossValue};
use crate::error::Result;
use crate::nets::{AvgPool2, Conv3x3, Layer, LeakyRelu, Module, Sequential};
use crate::tensor::Image;

/// A fixed (never trained) network used for feature-space supervision.
pub trait FeatureExtractor {
    fn extract(&mut self, batch: &[Image]) -> Result<Vec<Image>>;

    /// ∂L/∂input for the batch passed to the most recent `extract`.
    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>>;
}

/// Features are the input itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn extract(&mut self, batch: &[Image]) -> Result<Vec<Image>> {
        Ok(batch.to_vec())
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        Ok(grads.to_vec())
    }
}

/// Seeded random three-layer conv stack with two stride-2 reductions,
/// standing in for a pretrained perceptual network.
#[derive(Debug, Clone)]
pub struct ConvFeatureExtractor {
    net: Sequential,
}

impl ConvFeatureExtractor {
    pub const WIDTHS: [usize; 3] = [8, 16, 16];

    pub fn new(channels: usize, seed: u64) -> Self {
        let [w1, w2, w3] = Self::WIDTHS;
        let mut net = Sequential::new(vec![
            Layer::Conv3x3(Conv3x3::new(channels, w1, seed, 0)),
            Layer::LeakyRelu(LeakyRelu::default()),
            Layer::AvgPool2(AvgPool2),
            Layer::Conv3x3(Conv3x3::new(w1, w2, seed, 1)),
            Layer::LeakyRelu(LeakyRelu::default()),
            Layer::AvgPool2(AvgPool2),
            Layer::Conv3x3(Conv3x3::new(w2, w3, seed, 2)),
        ]);
        net.set_trainable(false);
        Self { net }
    }

    /// The underlying layers, for inspection.
    pub fn network(&self) -> &Sequential {
        &self.net
    }
}

impl FeatureExtractor for ConvFeatureExtractor {
    fn extract(&mut self, batch: &[Image]) -> Result<Vec<Image>> {
        self.net.forward(batch)
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        self.net.backward(grads)
    }
}

/// Mean absolute difference between extractor features of `pred` and
/// `target`, with the gradient pulled back through the frozen extractor.
pub fn feature_loss(
    pred: &Image,
    target: &Image,
    extractor: &mut dyn FeatureExtractor,
) -> Result<LossValue> {
    pred.ensure_same_shape(target)?;
    let target_features = extractor.extract(std::slice::from_ref(target))?;
    let pred_features = extractor.extract(std::slice::from_ref(pred))?;
    let l1 = l1_loss(&pred_features[0], &target_features[0])?;
    let grad = extractor.backward(std::slice::from_ref(l1.gradient().expect("l1 gradient")))?;
    Ok(LossValue {
        value: l1.value,
        gradient: grad.into_iter().next(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::nets::{leaky_relu, LEAKY_SLOPE};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::seed_from_u64(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.gen())
    }

    /// Independent direct convolution used to recompute the extractor.
    fn direct_conv(x: &Image, weight: &[f64], bias: &[f64]) -> Image {
        let (h, w, cin) = x.shape();
        let cout = bias.len();
        Image::from_fn(h, w, cout, |y, xx, co| {
            let mut acc = bias[co];
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (sy, sx) = (y as i64 + dy, xx as i64 + dx);
                    if sy < 0 || sx < 0 || sy >= h as i64 || sx >= w as i64 {
                        continue;
                    }
                    let tap = ((dy + 1) * 3 + dx + 1) as usize;
                    for ci in 0..cin {
                        acc += x.get(sy as usize, sx as usize, ci) * weight[(tap * cin + ci) * cout + co];
                    }
                }
            }
            acc
        })
    }

    fn direct_pool(x: &Image) -> Image {
        Image::from_fn(x.height() / 2, x.width() / 2, x.channels(), |y, xx, c| {
            (x.get(2 * y, 2 * xx, c)
                + x.get(2 * y + 1, 2 * xx, c)
                + x.get(2 * y, 2 * xx + 1, c)
                + x.get(2 * y + 1, 2 * xx + 1, c))
                / 4.0
        })
    }

    #[test]
    fn identical_images_give_zero() {
        let a = random_image(8, 8, 3, 1);
        let mut ex = ConvFeatureExtractor::new(3, 4);
        assert_eq!(feature_loss(&a, &a, &mut ex).unwrap().value, 0.0);
    }

    #[test]
    fn identity_extractor_reduces_to_l1() {
        let a = random_image(6, 6, 3, 2);
        let b = random_image(6, 6, 3, 3);
        let f = feature_loss(&a, &b, &mut IdentityExtractor).unwrap();
        let l = l1_loss(&a, &b).unwrap();
        assert_eq!(f, l);
    }

    #[test]
    fn matches_direct_convolution_recomputation() {
        let a = random_image(8, 8, 3, 5);
        let b = random_image(8, 8, 3, 6);
        let mut ex = ConvFeatureExtractor::new(3, 21);
        let convs: Vec<(Vec<f64>, Vec<f64>)> = ex
            .network()
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv3x3(c) => Some((c.weight.value.clone(), c.bias.value.clone())),
                _ => None,
            })
            .collect();
        let features = |img: &Image| {
            let act = |x: Image| x.map(|v| leaky_relu(v, LEAKY_SLOPE));
            let x = direct_pool(&act(direct_conv(img, &convs[0].0, &convs[0].1)));
            let x = direct_pool(&act(direct_conv(&x, &convs[1].0, &convs[1].1)));
            direct_conv(&x, &convs[2].0, &convs[2].1)
        };
        let (fa, fb) = (features(&a), features(&b));
        assert_eq!(fa.shape(), (2, 2, 16));
        let expected: f64 = fa
            .data()
            .iter()
            .zip(fb.data())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / fa.len() as f64;
        let got = feature_loss(&a, &b, &mut ex).unwrap().value;
        assert!((got - expected).abs() < 1e-13, "{got} vs {expected}");
    }

    #[test]
    fn extractor_is_frozen() {
        let mut ex = ConvFeatureExtractor::new(3, 1);
        feature_loss(&random_image(8, 8, 3, 1), &random_image(8, 8, 3, 2), &mut ex).unwrap();
        for p in ex.network().params() {
            assert!(p.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut ex = IdentityExtractor;
        assert!(matches!(
            feature_loss(&Image::zeros(4, 4, 3), &Image::zeros(4, 2, 3), &mut ex),
            Err(Error::ShapeMismatch(_))
        ));
    }
}

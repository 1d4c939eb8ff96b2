//! Supervision losses in the spatial and Fourier domains, each with its
//! gradient with respect to the prediction.
//!
//! Every loss is additionally divided by the channel count so grayscale and
//! RGB values are comparable.

mod feature;

use std::f64::consts::PI;

pub use feature::{feature_loss, ConvFeatureExtractor, FeatureExtractor, IdentityExtractor};

use crate::error::Result;
use crate::spectral::{windowed_spectrum, Spectrum, PHASE_EPS};
use crate::tensor::Image;

/// A scalar loss and, optionally, its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Option<Image>,
}

impl LossValue {
    pub fn gradient(&self) -> Option<&Image> {
        self.gradient.as_ref()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.gradient.as_ref().is_none_or(Image::is_finite)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute difference over all `H·W·C` values.
pub fn l1_loss(pred: &Image, target: &Image) -> Result<LossValue> {
    pred.ensure_same_shape(target)?;
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad = pred.clone();
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        value += d.abs();
        *g = sign(d) / n;
    }
    Ok(LossValue {
        value: value / n,
        gradient: Some(grad),
    })
}

/// Wrapped angular distance in `[0, π]`.
#[inline]
pub fn phase_diff(a: f64, b: f64) -> f64 {
    let m = (a - b).abs() % (2.0 * PI);
    m.min(2.0 * PI - m)
}

/// Derivative of [`phase_diff`] with respect to `a` (0 at the kinks).
#[inline]
fn phase_diff_slope(a: f64, b: f64) -> f64 {
    let d = a - b;
    let m = d.abs() % (2.0 * PI);
    if m < PI {
        sign(d)
    } else if m > PI {
        -sign(d)
    } else {
        0.0
    }
}

/// `2/(U·V·C) · Σ | |Ŷ| − |Y| |` over the kept half spectrum.
pub fn amplitude_loss(pred: &Spectrum, target: &Spectrum) -> Result<LossValue> {
    pred.ensure_same_shape(target)?;
    let norm = 2.0 / (pred.full_u() * pred.v_dim() * pred.channels()) as f64;
    let mut value = 0.0;
    let d_amp: Vec<f64> = pred
        .amplitude()
        .iter()
        .zip(target.amplitude())
        .map(|(&a, &b)| {
            value += (a - b).abs();
            norm * sign(a - b)
        })
        .collect();
    let gradient = pred.backward(&d_amp, &vec![0.0; pred.len()])?;
    Ok(LossValue {
        value: norm * value,
        gradient: Some(gradient),
    })
}

/// `2/(U·V·C) · Σ phase_diff(∠Ŷ, ∠Y)` over the kept half spectrum.
///
/// Components where either amplitude is below [`PHASE_EPS`] contribute to
/// the value but not to the gradient.
pub fn phase_loss(pred: &Spectrum, target: &Spectrum) -> Result<LossValue> {
    pred.ensure_same_shape(target)?;
    let norm = 2.0 / (pred.full_u() * pred.v_dim() * pred.channels()) as f64;
    let mut value = 0.0;
    let d_phase: Vec<f64> = (0..pred.len())
        .map(|k| {
            let (a, b) = (pred.phase()[k], target.phase()[k]);
            value += phase_diff(a, b);
            if pred.amplitude()[k] < PHASE_EPS || target.amplitude()[k] < PHASE_EPS {
                0.0
            } else {
                norm * phase_diff_slope(a, b)
            }
        })
        .collect();
    let gradient = pred.backward(&vec![0.0; pred.len()], &d_phase)?;
    Ok(LossValue {
        value: norm * value,
        gradient: Some(gradient),
    })
}

/// Both Fourier components and their equal-weight combination.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierLoss {
    pub amplitude: LossValue,
    pub phase: LossValue,
    pub combined: LossValue,
}

/// Windowed-spectrum loss `½ L_amp + ½ L_phase`, with its components.
pub fn fourier_loss_terms(pred: &Image, target: &Image) -> Result<FourierLoss> {
    pred.ensure_same_shape(target)?;
    let ps = windowed_spectrum(pred)?;
    let ts = windowed_spectrum(target)?;
    let amplitude = amplitude_loss(&ps, &ts)?;
    let phase = phase_loss(&ps, &ts)?;
    let mut grad = amplitude.gradient.clone().expect("amplitude gradient");
    grad.scale(0.5);
    grad.add_scaled(phase.gradient().expect("phase gradient"), 0.5);
    let combined = LossValue {
        value: 0.5 * amplitude.value + 0.5 * phase.value,
        gradient: Some(grad),
    };
    Ok(FourierLoss {
        amplitude,
        phase,
        combined,
    })
}

pub fn fourier_loss(pred: &Image, target: &Image) -> Result<LossValue> {
    Ok(fourier_loss_terms(pred, target)?.combined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = SplitMix64::seed_from_u64(seed);
        Image::from_fn(h, w, c, |_, _, _| rng.gen())
    }

    #[test]
    fn l1_cases() {
        let a = random_image(4, 4, 3, 1);
        assert_eq!(l1_loss(&a, &a).unwrap().value, 0.0);
        assert!(l1_loss(&a, &a)
            .unwrap()
            .gradient()
            .unwrap()
            .data()
            .iter()
            .all(|&g| g == 0.0));
        let b = a.map(|v| v + 0.5);
        assert!((l1_loss(&b, &a).unwrap().value - 0.5).abs() < 1e-15);

        let c = random_image(4, 4, 3, 2);
        let brute: f64 =
            a.data().iter().zip(c.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 48.0;
        assert!((l1_loss(&a, &c).unwrap().value - brute).abs() < 1e-15);
        assert!(matches!(
            l1_loss(&a, &Image::zeros(4, 4, 1)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn phase_diff_cases() {
        assert_eq!(phase_diff(1.3, 1.3), 0.0);
        assert!((phase_diff(PI / 2.0, -PI) - PI / 2.0).abs() < 1e-15);
        assert_eq!(phase_diff(PI, -PI), 0.0);
        assert!((phase_diff(0.1, -0.1) - 0.2).abs() < 1e-15);
        assert!((phase_diff(3.0, -3.0) - (2.0 * PI - 6.0)).abs() < 1e-14);
        for (a, b) in [(0.3, 2.9), (-3.1, 3.1), (1.0, -2.0)] {
            let d = phase_diff(a, b);
            assert!((0.0..=PI).contains(&d));
            assert_eq!(d, phase_diff(b, a));
        }
    }

    #[test]
    fn phase_slope_matches_finite_difference() {
        for (a, b) in [(0.3, 2.9), (-3.1, 3.1), (1.0, -2.0), (2.0, 1.0)] {
            let h = 1e-6;
            let fd = (phase_diff(a + h, b) - phase_diff(a - h, b)) / (2.0 * h);
            assert!((fd - phase_diff_slope(a, b)).abs() < 1e-6);
        }
    }

    #[test]
    fn amplitude_loss_brute_force() {
        let a = windowed_spectrum(&random_image(8, 8, 3, 3)).unwrap();
        let b = windowed_spectrum(&random_image(8, 8, 3, 4)).unwrap();
        let mut sum = 0.0;
        for c in 0..3 {
            for u in 0..4 {
                for v in 0..8 {
                    let k = a.index(u, v, c);
                    sum += (a.amplitude()[k] - b.amplitude()[k]).abs();
                }
            }
        }
        let expected = 2.0 / (8.0 * 8.0 * 3.0) * sum;
        assert!((amplitude_loss(&a, &b).unwrap().value - expected).abs() < 1e-14);
        assert_eq!(amplitude_loss(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn phase_loss_brute_force() {
        let a = windowed_spectrum(&random_image(8, 6, 2, 5)).unwrap();
        let b = windowed_spectrum(&random_image(8, 6, 2, 6)).unwrap();
        let mut sum = 0.0;
        for k in 0..a.len() {
            let mut d = (a.phase()[k] - b.phase()[k]).abs();
            while d > PI {
                d = (d - 2.0 * PI).abs();
            }
            sum += d;
        }
        let expected = 2.0 / (8.0 * 6.0 * 2.0) * sum;
        assert!((phase_loss(&a, &b).unwrap().value - expected).abs() < 1e-13);
        assert_eq!(phase_loss(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn amplitude_uniform_offset_counts_every_kept_component() {
        // Scaling an image scales every amplitude. Pick images whose kept
        // amplitudes differ by a known total and check the normalizer.
        let base = random_image(8, 8, 1, 7);
        let a = windowed_spectrum(&base).unwrap();
        let b = windowed_spectrum(&base.map(|v| 2.0 * v)).unwrap();
        let total: f64 = a.amplitude().iter().sum();
        // |2A| - |A| = |A|, so the loss is 2/(UV) · Σ|A| = mean over U/2·V terms.
        let expected = total / (a.u_dim() * a.v_dim()) as f64;
        assert!((amplitude_loss(&b, &a).unwrap().value - expected).abs() < 1e-13);
    }

    #[test]
    fn negated_image_has_uniform_phase_offset() {
        // Negation shifts every nonzero phase by π.
        let base = random_image(8, 8, 1, 8);
        let a = windowed_spectrum(&base).unwrap();
        let b = windowed_spectrum(&base.map(|v| -v)).unwrap();
        let lp = phase_loss(&b, &a).unwrap().value;
        assert!((lp - PI).abs() < 1e-9, "{lp}");
    }

    #[test]
    fn fourier_is_average_of_components() {
        let a = random_image(8, 8, 3, 9);
        let b = random_image(8, 8, 3, 10);
        let terms = fourier_loss_terms(&a, &b).unwrap();
        let sa = windowed_spectrum(&a).unwrap();
        let sb = windowed_spectrum(&b).unwrap();
        let amp = amplitude_loss(&sa, &sb).unwrap().value;
        let ph = phase_loss(&sa, &sb).unwrap().value;
        assert!((terms.combined.value - 0.5 * (amp + ph)).abs() < 1e-15);
        assert_eq!(fourier_loss(&a, &a).unwrap().value, 0.0);
        assert!(fourier_loss(&random_image(7, 8, 1, 0), &random_image(7, 8, 1, 1)).is_err());
    }

    #[test]
    fn losses_are_symmetric() {
        let a = random_image(8, 8, 3, 11);
        let b = random_image(8, 8, 3, 12);
        assert_eq!(l1_loss(&a, &b).unwrap().value, l1_loss(&b, &a).unwrap().value);
        let (sa, sb) = (windowed_spectrum(&a).unwrap(), windowed_spectrum(&b).unwrap());
        assert!(
            (amplitude_loss(&sa, &sb).unwrap().value - amplitude_loss(&sb, &sa).unwrap().value)
                .abs()
                < 1e-15
        );
        assert!(
            (phase_loss(&sa, &sb).unwrap().value - phase_loss(&sb, &sa).unwrap().value).abs()
                < 1e-15
        );
        assert!(
            (fourier_loss(&a, &b).unwrap().value - fourier_loss(&b, &a).unwrap().value).abs()
                < 1e-15
        );
    }

    #[test]
    fn conjugate_half_gives_identical_values() {
        // Rows U/2+1..U-1 mirror rows 1..U/2-1. Evaluating the amplitude and
        // phase terms on the mirrored (conjugate) components must not change
        // anything.
        let a = random_image(8, 8, 2, 13);
        let b = random_image(8, 8, 2, 14);
        let (sa, sb) = (windowed_spectrum(&a).unwrap(), windowed_spectrum(&b).unwrap());
        let (uu, vv) = (8, 8);
        let (mut amp, mut ph) = (0.0, 0.0);
        for c in 0..2 {
            let (fa, fb) = (sa.full_coefficients(c), sb.full_coefficients(c));
            for u in 0..uu / 2 {
                for v in 0..vv {
                    let mu = (uu - u) % uu;
                    let mv = (vv - v) % vv;
                    let (za, zb) = (fa[mu * vv + mv].conj(), fb[mu * vv + mv].conj());
                    amp += (za.norm() - zb.norm()).abs();
                    ph += phase_diff(
                        crate::spectral::phase_of(za),
                        crate::spectral::phase_of(zb),
                    );
                }
            }
        }
        let norm = 2.0 / (uu * vv * 2) as f64;
        assert!((amplitude_loss(&sa, &sb).unwrap().value - norm * amp).abs() < 1e-12);
        assert!((phase_loss(&sa, &sb).unwrap().value - norm * ph).abs() < 1e-9);
    }
}

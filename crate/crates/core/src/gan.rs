//! Relativistic-average GAN objectives with sigmoid cross-entropy.
//!
//! Real logits `s_ρ` and fake logits `s_φ` are first made relative to the
//! opposite batch mean, `ρ = s_ρ − mean(s_φ)` and `φ = s_φ − mean(s_ρ)`, and
//! then scored:
//!
//! ```text
//! L_G = −mean[log σ(φ) + log(1 − σ(ρ))]
//! L_D = −mean[log σ(ρ) + log(1 − σ(φ))]
//! ```
//!
//! The batch means are differentiated through, not detached.

use crate::error::{Error, Result};

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativisticScores {
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
}

pub fn relativistic_transform(real: &[f64], fake: &[f64]) -> Result<RelativisticScores> {
    if real.is_empty() {
        return Err(Error::InvalidDimensions("empty logit batch".into()));
    }
    if real.len() != fake.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} real logits vs {} fake logits",
            real.len(),
            fake.len()
        )));
    }
    let (mean_real, mean_fake) = (mean(real), mean(fake));
    Ok(RelativisticScores {
        rho: real.iter().map(|s| s - mean_fake).collect(),
        phi: fake.iter().map(|s| s - mean_real).collect(),
    })
}

/// A GAN loss value with gradients with respect to the relativistic scores
/// and with respect to the raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GanLoss {
    pub value: f64,
    pub d_rho: Vec<f64>,
    pub d_phi: Vec<f64>,
    /// ∂L/∂s_ρ, including the path through mean(s_ρ) in φ.
    pub d_real: Vec<f64>,
    /// ∂L/∂s_φ, including the path through mean(s_φ) in ρ.
    pub d_fake: Vec<f64>,
}

fn through_transform(value: f64, d_rho: Vec<f64>, d_phi: Vec<f64>) -> GanLoss {
    let n = d_rho.len() as f64;
    let sum_rho: f64 = d_rho.iter().sum();
    let sum_phi: f64 = d_phi.iter().sum();
    let d_real = d_rho.iter().map(|g| g - sum_phi / n).collect();
    let d_fake = d_phi.iter().map(|g| g - sum_rho / n).collect();
    GanLoss {
        value,
        d_rho,
        d_phi,
        d_real,
        d_fake,
    }
}

/// `L_G = mean[softplus(−φ) + softplus(ρ)]`.
pub fn gan_loss_generator(scores: &RelativisticScores) -> GanLoss {
    let n = scores.rho.len() as f64;
    let value = scores
        .rho
        .iter()
        .zip(&scores.phi)
        .map(|(&r, &p)| softplus(-p) + softplus(r))
        .sum::<f64>()
        / n;
    let d_rho = scores.rho.iter().map(|&r| sigmoid(r) / n).collect();
    let d_phi = scores.phi.iter().map(|&p| -sigmoid(-p) / n).collect();
    through_transform(value, d_rho, d_phi)
}

/// `L_D = mean[softplus(−ρ) + softplus(φ)]`.
pub fn gan_loss_discriminator(scores: &RelativisticScores) -> GanLoss {
    let n = scores.rho.len() as f64;
    let value = scores
        .rho
        .iter()
        .zip(&scores.phi)
        .map(|(&r, &p)| softplus(-r) + softplus(p))
        .sum::<f64>()
        / n;
    let d_rho = scores.rho.iter().map(|&r| -sigmoid(-r) / n).collect();
    let d_phi = scores.phi.iter().map(|&p| sigmoid(p) / n).collect();
    through_transform(value, d_rho, d_phi)
}

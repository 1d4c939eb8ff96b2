//! Windowed 2D DFT, amplitude/phase extraction and the adjoint transform
//! used to push loss gradients back into image space.
//!
//! The transform is unitary: `X[u,v] = 1/sqrt(HW) * sum x[h,w] e^{-2πi(uh/H + vw/W)}`.
//! Losses only look at rows `u in [0, U/2 - 1]`; the remaining rows are
//! redundant for real input by conjugate symmetry, except the Nyquist row
//! `u = U/2`, which [`Spectrum`] keeps separately for reconstruction.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Image;

/// Below this amplitude the phase is treated as undefined and receives no
/// gradient.
pub const PHASE_EPS: f64 = 1e-8;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Symmetric Hann taper `0.5 (1 - cos(2πn / (N - 1)))`.
#[inline]
pub fn hann(n: usize, len: usize) -> f64 {
    debug_assert!(len >= 2);
    0.5 * (1.0 - (2.0 * PI * n as f64 / (len - 1) as f64).cos())
}

/// Separable product of two 1-D Hann windows.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMatrix {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl WindowMatrix {
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn hann_window(h: usize, w: usize) -> Result<WindowMatrix> {
    if h < 2 || w < 2 {
        return Err(Error::InvalidDimensions(format!(
            "Hann window needs at least 2x2, got {h}x{w}"
        )));
    }
    let rows: Vec<f64> = (0..h).map(|i| hann(i, h)).collect();
    let cols: Vec<f64> = (0..w).map(|j| hann(j, w)).collect();
    let values = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| r * c))
        .collect();
    Ok(WindowMatrix {
        height: h,
        width: w,
        values,
    })
}

/// In-place unnormalized 2D FFT of a row-major `h × w` buffer.
fn fft2_in_place(buf: &mut [Complex64], h: usize, w: usize, direction: FftDirection) {
    debug_assert_eq!(buf.len(), h * w);
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(w, direction);
        let col_fft = planner.plan_fft(h, direction);

        let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
        for row in buf.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }

        let mut column = vec![Complex64::default(); h];
        scratch.resize(col_fft.get_inplace_scratch_len(), Complex64::default());
        for x in 0..w {
            for (y, c) in column.iter_mut().enumerate() {
                *c = buf[y * w + x];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for (y, c) in column.iter().enumerate() {
                buf[y * w + x] = *c;
            }
        }
    });
}

fn check_plane(len: usize, h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || len != h * w {
        return Err(Error::ShapeMismatch(format!(
            "plane of {len} values does not match {h}x{w}"
        )));
    }
    Ok(())
}

/// Unitary 2D DFT of a real `h × w` plane. Output is row-major `U × V` with
/// `U = h`, `V = w`.
pub fn dft2(plane: &[f64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    check_plane(plane.len(), h, w)?;
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, h, w, FftDirection::Forward);
    let norm = 1.0 / ((h * w) as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= norm);
    Ok(buf)
}

/// Unitary inverse 2D DFT (the conjugate transpose of [`dft2`]'s matrix).
pub fn idft2(spectrum: &[Complex64], h: usize, w: usize) -> Result<Vec<Complex64>> {
    check_plane(spectrum.len(), h, w)?;
    let mut buf = spectrum.to_vec();
    fft2_in_place(&mut buf, h, w, FftDirection::Inverse);
    let norm = 1.0 / ((h * w) as f64).sqrt();
    buf.iter_mut().for_each(|z| *z *= norm);
    Ok(buf)
}

/// Adjoint of [`dft2`] viewed as a map from real planes to complex spectra
/// under the real inner product `<a, b> = Σ Re(a) Re(b) + Im(a) Im(b)`.
///
/// For a cotangent `g = ∂L/∂Re X + i ∂L/∂Im X`, this returns `∂L/∂x`.
pub fn idft2_adjoint(grad: &[Complex64], h: usize, w: usize) -> Result<Vec<f64>> {
    Ok(idft2(grad, h, w)?.into_iter().map(|z| z.re).collect())
}

/// Phase in `(-π, π]`, with the phase of `0 + 0i` pinned to 0.
#[inline]
pub fn phase_of(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let p = z.im.atan2(z.re);
    if p == -PI {
        PI
    } else {
        p
    }
}

/// Per-channel half spectrum of a Hann-windowed image.
///
/// Arrays are channel-planar: index `(c * half_rows + u) * V + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    full_u: usize,
    v_dim: usize,
    channels: usize,
    coeffs: Vec<Complex64>,
    nyquist: Vec<Complex64>,
    amplitude: Vec<f64>,
    phase: Vec<f64>,
}

impl Spectrum {
    /// Rows kept by the losses, `U / 2`.
    #[inline]
    pub fn u_dim(&self) -> usize {
        self.full_u / 2
    }

    #[inline]
    pub fn full_u(&self) -> usize {
        self.full_u
    }

    #[inline]
    pub fn v_dim(&self) -> usize {
        self.v_dim
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of kept components across all channels.
    #[inline]
    pub fn len(&self) -> usize {
        self.amplitude.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.amplitude.is_empty()
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, c: usize) -> usize {
        (c * self.u_dim() + u) * self.v_dim + v
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    /// Complex values of the kept rows.
    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn same_shape(&self, other: &Spectrum) -> bool {
        (self.full_u, self.v_dim, self.channels) == (other.full_u, other.v_dim, other.channels)
    }

    pub fn ensure_same_shape(&self, other: &Spectrum) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "spectra {}x{}x{} vs {}x{}x{}",
                self.full_u, self.v_dim, self.channels, other.full_u, other.v_dim, other.channels
            )))
        }
    }

    /// Full `U × V` spectrum of channel `c`, rebuilding rows past the
    /// Nyquist row with `X[u,v] = conj(X[-u mod U, -v mod V])`.
    pub fn full_coefficients(&self, c: usize) -> Vec<Complex64> {
        let (uu, vv, half) = (self.full_u, self.v_dim, self.u_dim());
        let mut full = vec![Complex64::default(); uu * vv];
        let kept = &self.coeffs[c * half * vv..(c + 1) * half * vv];
        full[..half * vv].copy_from_slice(kept);
        full[half * vv..(half + 1) * vv].copy_from_slice(&self.nyquist[c * vv..(c + 1) * vv]);
        for u in half + 1..uu {
            for v in 0..vv {
                full[u * vv + v] = full[(uu - u) * vv + (vv - v) % vv].conj();
            }
        }
        full
    }

    /// Pulls gradients on the kept amplitudes and phases back to the
    /// (unwindowed) input image.
    ///
    /// Amplitude gradients vanish where `|X| = 0`; phase gradients vanish
    /// where `|X| < PHASE_EPS`.
    pub fn backward(&self, d_amplitude: &[f64], d_phase: &[f64]) -> Result<Image> {
        if d_amplitude.len() != self.len() || d_phase.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "spectrum gradient lengths {}/{} vs {}",
                d_amplitude.len(),
                d_phase.len(),
                self.len()
            )));
        }
        let (h, w, c) = (self.full_u, self.v_dim, self.channels);
        let half = self.u_dim();
        let window = hann_window(h, w)?;
        let mut out = Image::zeros(h, w, c);
        let mut cot = vec![Complex64::default(); h * w];
        for ch in 0..c {
            cot.iter_mut().for_each(|z| *z = Complex64::default());
            for i in 0..half * w {
                let k = ch * half * w + i;
                let z = self.coeffs[k];
                let amp = self.amplitude[k];
                let mut g = Complex64::default();
                if amp > 0.0 {
                    // ∂|X|/∂(re, im) = (re, im) / |X|
                    g += z * (d_amplitude[k] / amp);
                }
                if amp >= PHASE_EPS {
                    // ∂atan2(im, re)/∂(re, im) = (-im, re) / |X|^2
                    let s = d_phase[k] / (amp * amp);
                    g += Complex64::new(-z.im * s, z.re * s);
                }
                cot[i] = g;
            }
            let grad = idft2_adjoint(&cot, h, w)?;
            for (i, (&gv, &wv)) in grad.iter().zip(window.values()).enumerate() {
                out.data_mut()[i * c + ch] = gv * wv;
            }
        }
        Ok(out)
    }
}

/// Hann window, unitary DFT and polar decomposition of each channel.
pub fn windowed_spectrum(img: &Image) -> Result<Spectrum> {
    let (h, w, c) = img.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidDimensions(format!(
            "windowed spectrum needs even dimensions, got {h}x{w}"
        )));
    }
    let window = hann_window(h, w)?;
    let half = h / 2;
    let mut coeffs = Vec::with_capacity(c * half * w);
    let mut nyquist = Vec::with_capacity(c * w);
    for ch in 0..c {
        let mut plane = img.channel_plane(ch);
        for (p, &wv) in plane.iter_mut().zip(window.values()) {
            *p *= wv;
        }
        let full = dft2(&plane, h, w)?;
        coeffs.extend_from_slice(&full[..half * w]);
        nyquist.extend_from_slice(&full[half * w..(half + 1) * w]);
    }
    let amplitude = coeffs.iter().map(|z| z.norm()).collect();
    let phase = coeffs.iter().map(|&z| phase_of(z)).collect();
    Ok(Spectrum {
        full_u: h,
        v_dim: w,
        channels: c,
        coeffs,
        nyquist,
        amplitude,
        phase,
    })
}

/// Fraction of full-spectrum energy at radius `> min(U, V) / 4`, with
/// frequencies folded to `[-U/2, U/2]`.
pub fn high_frequency_fraction(img: &Image) -> Result<f64> {
    let spec = windowed_spectrum(img)?;
    let (uu, vv) = (spec.full_u(), spec.v_dim());
    let cutoff = uu.min(vv) as f64 / 4.0;
    let (mut high, mut total) = (0.0, 0.0);
    for c in 0..spec.channels() {
        let full = spec.full_coefficients(c);
        for u in 0..uu {
            let fu = u.min(uu - u) as f64;
            for v in 0..vv {
                let fv = v.min(vv - v) as f64;
                let e = full[u * vv + v].norm_sqr();
                total += e;
                if (fu * fu + fv * fv).sqrt() > cutoff {
                    high += e;
                }
            }
        }
    }
    Ok(if total > 0.0 { high / total } else { 0.0 })
}

/// Log-scaled amplitude visualization of the kept half spectrum, one
/// output channel per image channel: `log(1 + |X|) / log(1 + max |X|)`.
pub fn log_amplitude_image(spec: &Spectrum) -> Image {
    let (uh, vv, c) = (spec.u_dim(), spec.v_dim(), spec.channels());
    let max = spec.amplitude().iter().cloned().fold(0.0, f64::max);
    let denom = (1.0 + max).ln();
    Image::from_fn(uh, vv, c, |u, v, ch| {
        if denom > 0.0 {
            (1.0 + spec.amplitude()[spec.index(u, v, ch)]).ln() / denom
        } else {
            0.0
        }
    })
}

//! Layers with explicit forward and backward passes over a batch of
//! `Image`s (HWC feature maps).
//!
//! Per-sample work may run on the rayon pool; every reduction across
//! samples happens in sample order, so results do not depend on the
//! number of threads.

use rayon::prelude::*;

use super::init::{glorot_uniform, layer_rng};
use crate::error::{Error, Result};
use crate::tensor::Image;

pub const LEAKY_SLOPE: f64 = 0.2;

/// A named parameter tensor and its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(name: &'static str, shape: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            name,
            shape,
            value,
            grad,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything with a batched forward/backward pass and trainable tensors.
pub trait Module {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>>;

    /// Returns ∂L/∂input for each sample and accumulates parameter
    /// gradients (unless frozen). Only valid after `forward`.
    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Frozen modules skip parameter-gradient accumulation in `backward`.
    fn set_trainable(&mut self, _trainable: bool) {}

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

fn take_cache(cache: &mut Option<Vec<Image>>, what: &str) -> Result<Vec<Image>> {
    cache
        .take()
        .ok_or_else(|| Error::ShapeMismatch(format!("{what}: backward called before forward")))
}

fn check_batch(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "{what}: batch of {a} gradients for {b} inputs"
        )));
    }
    Ok(())
}

/// Unrolled dot product; four independent accumulators let the compiler
/// vectorize without reassociating.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * k + l] * b[4 * k + l];
        }
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

// ---------------------------------------------------------------------------
// 3x3 convolution

/// `C = alpha·A·B + beta·C` for strided row/column layouts, with `A` of
/// shape `m×k`, `B` of shape `k×n` and `C` of shape `m×n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    alpha: f64,
    (a, rsa, csa): (&[f64], usize, usize),
    (b, rsb, csb): (&[f64], usize, usize),
    beta: f64,
    (c, rsc, csc): (&mut [f64], usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols.max(1) - 1) * cs;
    assert!(k == 0 || (last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len()));
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Zero-padded 3×3 patches, one row of `9·C` values per pixel, ordered
/// `[ky][kx][c]`.
fn im2col(input: &Image) -> Vec<f64> {
    let (h, w, c) = input.shape();
    let k = 9 * c;
    let mut cols = vec![0.0; h * w * k];
    for y in 0..h {
        for x in 0..w {
            let row = &mut cols[(y * w + x) * k..(y * w + x + 1) * k];
            for ky in 0..3 {
                if y + ky < 1 || y + ky > h {
                    continue;
                }
                for kx in 0..3 {
                    if x + kx < 1 || x + kx > w {
                        continue;
                    }
                    let tap = ky * 3 + kx;
                    row[tap * c..(tap + 1) * c].copy_from_slice(input.pixel(y + ky - 1, x + kx - 1));
                }
            }
        }
    }
    cols
}

/// Zero-padded, stride-1 3×3 cross-correlation plus bias.
///
/// `weight` is laid out `[ky][kx][cin][cout]`.
pub fn conv3x3_forward(input: &Image, weight: &[f64], bias: &[f64]) -> Result<Image> {
    let (h, w, cin) = input.shape();
    let cout = bias.len();
    if weight.len() != 9 * cin * cout {
        return Err(Error::ShapeMismatch(format!(
            "conv3x3 weight has {} values, expected 9*{cin}*{cout}",
            weight.len()
        )));
    }
    let k = 9 * cin;
    let cols = im2col(input);
    let mut out: Vec<f64> = bias.iter().copied().cycle().take(h * w * cout).collect();
    gemm(
        (h * w, k, cout),
        1.0,
        (&cols, k, 1),
        (weight, cout, 1),
        1.0,
        (&mut out, cout, 1),
    );
    Image::new(h, w, cout, out)
}

/// Gradient of [`conv3x3_forward`] with respect to its input.
/// When `param_grads` is given, `(∂L/∂weight, ∂L/∂bias)` are added to it.
pub fn conv3x3_backward(
    input: &Image,
    weight: &[f64],
    grad_out: &Image,
    param_grads: Option<(&mut [f64], &mut [f64])>,
) -> Result<Image> {
    let (h, w, cin) = input.shape();
    let cout = grad_out.channels();
    if grad_out.height() != h || grad_out.width() != w || weight.len() != 9 * cin * cout {
        return Err(Error::ShapeMismatch("conv3x3 backward".into()));
    }
    let (n, k) = (h * w, 9 * cin);
    let g = grad_out.data();

    let mut gcols = vec![0.0; n * k];
    gemm((n, cout, k), 1.0, (g, cout, 1), (weight, 1, cout), 0.0, (&mut gcols, k, 1));
    let mut gin = vec![0.0; h * w * cin];
    for y in 0..h {
        for x in 0..w {
            let row = &gcols[(y * w + x) * k..(y * w + x + 1) * k];
            for ky in 0..3 {
                if y + ky < 1 || y + ky > h {
                    continue;
                }
                for kx in 0..3 {
                    if x + kx < 1 || x + kx > w {
                        continue;
                    }
                    let tap = ky * 3 + kx;
                    let base = ((y + ky - 1) * w + x + kx - 1) * cin;
                    axpy(&mut gin[base..base + cin], 1.0, &row[tap * cin..(tap + 1) * cin]);
                }
            }
        }
    }

    if let Some((gw, gb)) = param_grads {
        let cols = im2col(input);
        gemm((k, n, cout), 1.0, (&cols, 1, k), (g, cout, 1), 1.0, (gw, cout, 1));
        for px in g.chunks_exact(cout) {
            axpy(gb, 1.0, px);
        }
    }
    Image::new(h, w, cin, gin)
}

#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub cin: usize,
    pub cout: usize,
    pub weight: Param,
    pub bias: Param,
    trainable: bool,
    cache: Option<Vec<Image>>,
}

impl Conv3x3 {
    pub fn new(cin: usize, cout: usize, seed: u64, layer_index: u64) -> Self {
        let mut rng = layer_rng(seed, layer_index);
        let weight = glorot_uniform(&mut rng, 9 * cin * cout, 9 * cin, 9 * cout);
        Self::from_values(cin, cout, weight, vec![0.0; cout])
    }

    pub fn from_values(cin: usize, cout: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        Self {
            cin,
            cout,
            weight: Param::new("conv3x3.weight", vec![3, 3, cin, cout], weight),
            bias: Param::new("conv3x3.bias", vec![cout], bias),
            trainable: true,
            cache: None,
        }
    }
}

impl Module for Conv3x3 {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>> {
        for x in inputs {
            if x.channels() != self.cin {
                return Err(Error::ShapeMismatch(format!(
                    "conv3x3 expects {} input channels, got {}",
                    self.cin,
                    x.channels()
                )));
            }
        }
        let (w, b) = (&self.weight.value, &self.bias.value);
        let out = inputs
            .par_iter()
            .map(|x| conv3x3_forward(x, w, b))
            .collect::<Result<Vec<_>>>()?;
        self.cache = Some(inputs.to_vec());
        Ok(out)
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        let inputs = take_cache(&mut self.cache, "conv3x3")?;
        check_batch(grads.len(), inputs.len(), "conv3x3")?;
        let trainable = self.trainable;
        let (nw, nb) = (self.weight.len(), self.bias.len());
        let weight = &self.weight.value;
        let per_sample = inputs
            .par_iter()
            .zip(grads.par_iter())
            .map(|(x, g)| {
                if trainable {
                    let (mut gw, mut gb) = (vec![0.0; nw], vec![0.0; nb]);
                    let gi = conv3x3_backward(x, weight, g, Some((&mut gw, &mut gb)))?;
                    Ok((gi, Some((gw, gb))))
                } else {
                    Ok((conv3x3_backward(x, weight, g, None)?, None))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(per_sample.len());
        for (gi, pg) in per_sample {
            if let Some((gw, gb)) = pg {
                axpy(&mut self.weight.grad, 1.0, &gw);
                axpy(&mut self.bias.grad, 1.0, &gb);
            }
            out.push(gi);
        }
        Ok(out)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }
}

// ---------------------------------------------------------------------------
// Fully connected

/// Affine map `y = b + x W` with `W` laid out `[in][out]`.
pub fn dense_forward(input: &[f64], weight: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    if weight.len() != input.len() * bias.len() {
        return Err(Error::ShapeMismatch(format!(
            "dense weight {} vs {}x{}",
            weight.len(),
            input.len(),
            bias.len()
        )));
    }
    let mut out = bias.to_vec();
    let n_out = bias.len();
    for (i, &x) in input.iter().enumerate() {
        axpy(&mut out, x, &weight[i * n_out..(i + 1) * n_out]);
    }
    Ok(out)
}

/// Dense layer. Inputs of any shape are flattened; outputs are `1×1×out`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Param,
    pub bias: Param,
    trainable: bool,
    cache: Option<Vec<Image>>,
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize, seed: u64, layer_index: u64) -> Self {
        let mut rng = layer_rng(seed, layer_index);
        let weight = glorot_uniform(&mut rng, n_in * n_out, n_in, n_out);
        Self::from_values(n_in, n_out, weight, vec![0.0; n_out])
    }

    pub fn from_values(n_in: usize, n_out: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        Self {
            n_in,
            n_out,
            weight: Param::new("dense.weight", vec![n_in, n_out], weight),
            bias: Param::new("dense.bias", vec![n_out], bias),
            trainable: true,
            cache: None,
        }
    }
}

impl Module for Dense {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>> {
        for x in inputs {
            if x.len() != self.n_in {
                return Err(Error::ShapeMismatch(format!(
                    "dense expects {} inputs, got {}",
                    self.n_in,
                    x.len()
                )));
            }
        }
        let n_out = self.n_out;
        let weight = &self.weight.value;
        // One sweep over the weight matrix for the whole batch.
        let mut outs: Vec<Vec<f64>> = inputs.iter().map(|_| self.bias.value.clone()).collect();
        for i in 0..self.n_in {
            let row = &weight[i * n_out..(i + 1) * n_out];
            for (out, x) in outs.iter_mut().zip(inputs) {
                axpy(out, x.data()[i], row);
            }
        }
        self.cache = Some(inputs.to_vec());
        Ok(outs.into_iter().map(Image::vector).collect())
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        let inputs = take_cache(&mut self.cache, "dense")?;
        check_batch(grads.len(), inputs.len(), "dense")?;
        let n_out = self.n_out;
        if grads.iter().any(|g| g.len() != n_out) {
            return Err(Error::ShapeMismatch("dense gradient width".into()));
        }
        let weight = &self.weight.value;

        // ∂L/∂x_b[i] = <W[i], g_b>, independent per input row.
        let gin_rows: Vec<Vec<f64>> = (0..self.n_in)
            .into_par_iter()
            .map(|i| {
                let row = &weight[i * n_out..(i + 1) * n_out];
                grads.iter().map(|g| dot(row, g.data())).collect()
            })
            .collect();
        let out = inputs
            .iter()
            .enumerate()
            .map(|(b, x)| {
                let data = gin_rows.iter().map(|r| r[b]).collect();
                Image::new(x.height(), x.width(), x.channels(), data)
            })
            .collect::<Result<Vec<_>>>()?;

        if self.trainable {
            self.weight
                .grad
                .par_chunks_mut(n_out)
                .enumerate()
                .for_each(|(i, grow)| {
                    for (x, g) in inputs.iter().zip(grads) {
                        axpy(grow, x.data()[i], g.data());
                    }
                });
            for g in grads {
                axpy(&mut self.bias.grad, 1.0, g.data());
            }
        }
        Ok(out)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }
}

// ---------------------------------------------------------------------------
// Parameter-free layers

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f64,
    cache: Option<Vec<Image>>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        Self { slope, cache: None }
    }
}

impl Default for LeakyRelu {
    fn default() -> Self {
        Self::new(LEAKY_SLOPE)
    }
}

impl Module for LeakyRelu {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>> {
        let slope = self.slope;
        let out = inputs.iter().map(|x| x.map(|v| leaky_relu(v, slope))).collect();
        self.cache = Some(inputs.to_vec());
        Ok(out)
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        let inputs = take_cache(&mut self.cache, "leaky_relu")?;
        check_batch(grads.len(), inputs.len(), "leaky_relu")?;
        let slope = self.slope;
        inputs
            .into_iter()
            .zip(grads)
            .map(|(mut x, g)| {
                x.ensure_same_shape(g)?;
                for (xv, &gv) in x.data_mut().iter_mut().zip(g.data()) {
                    *xv = if *xv >= 0.0 { gv } else { slope * gv };
                }
                Ok(x)
            })
            .collect()
    }
}

/// Rearranges `H×W×(C·r²)` into `rH×rW×C`: channel `c·r² + i·r + j` at
/// `(h, w)` lands at `(r·h + i, r·w + j)` in channel `c`.
pub fn pixel_shuffle(input: &Image, r: usize) -> Result<Image> {
    let (h, w, cr) = input.shape();
    if r == 0 || cr % (r * r) != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pixel shuffle: {cr} channels not divisible by {r}^2"
        )));
    }
    let c = cr / (r * r);
    let mut out = Image::zeros(h * r, w * r, c);
    for y in 0..h {
        for x in 0..w {
            let px = input.pixel(y, x);
            for ch in 0..c {
                for i in 0..r {
                    for j in 0..r {
                        out.set(r * y + i, r * x + j, ch, px[ch * r * r + i * r + j]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(input: &Image, r: usize) -> Result<Image> {
    let (rh, rw, c) = input.shape();
    if r == 0 || rh % r != 0 || rw % r != 0 {
        return Err(Error::ShapeMismatch(format!(
            "pixel unshuffle: {rh}x{rw} not divisible by {r}"
        )));
    }
    let (h, w) = (rh / r, rw / r);
    let mut out = Image::zeros(h, w, c * r * r);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                for i in 0..r {
                    for j in 0..r {
                        out.set(y, x, ch * r * r + i * r + j, input.get(r * y + i, r * x + j, ch));
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PixelShuffle {
    pub r: usize,
}

impl Module for PixelShuffle {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>> {
        inputs.iter().map(|x| pixel_shuffle(x, self.r)).collect()
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        // A permutation: the adjoint is the inverse.
        grads.iter().map(|g| pixel_unshuffle(g, self.r)).collect()
    }
}

/// 2×2 average pooling with stride 2; spatial dims must be even.
#[derive(Debug, Clone, Default)]
pub struct AvgPool2;

pub fn avg_pool2(input: &Image) -> Result<Image> {
    let (h, w, c) = input.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "avg pool needs even dims, got {h}x{w}"
        )));
    }
    Ok(Image::from_fn(h / 2, w / 2, c, |y, x, ch| {
        0.25 * (input.get(2 * y, 2 * x, ch)
            + input.get(2 * y, 2 * x + 1, ch)
            + input.get(2 * y + 1, 2 * x, ch)
            + input.get(2 * y + 1, 2 * x + 1, ch))
    }))
}

impl Module for AvgPool2 {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>> {
        inputs.iter().map(avg_pool2).collect()
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        Ok(grads
            .iter()
            .map(|g| {
                let (h, w, c) = g.shape();
                Image::from_fn(2 * h, 2 * w, c, |y, x, ch| 0.25 * g.get(y / 2, x / 2, ch))
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Layer {
    Conv3x3(Conv3x3),
    Dense(Dense),
    LeakyRelu(LeakyRelu),
    PixelShuffle(PixelShuffle),
    AvgPool2(AvgPool2),
}

impl Layer {
    fn inner(&mut self) -> &mut dyn Module {
        match self {
            Layer::Conv3x3(l) => l,
            Layer::Dense(l) => l,
            Layer::LeakyRelu(l) => l,
            Layer::PixelShuffle(l) => l,
            Layer::AvgPool2(l) => l,
        }
    }
}

impl Module for Layer {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>> {
        self.inner().forward(inputs)
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        self.inner().backward(grads)
    }

    fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv3x3(l) => l.params(),
            Layer::Dense(l) => l.params(),
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.inner().params_mut()
    }

    fn set_trainable(&mut self, trainable: bool) {
        self.inner().set_trainable(trainable)
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }
}

impl Module for Sequential {
    fn forward(&mut self, inputs: &[Image]) -> Result<Vec<Image>> {
        let mut x = inputs.to_vec();
        for layer in &mut self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grads: &[Image]) -> Result<Vec<Image>> {
        let mut g = grads.to_vec();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn set_trainable(&mut self, trainable: bool) {
        for l in &mut self.layers {
            l.set_trainable(trainable);
        }
    }
}

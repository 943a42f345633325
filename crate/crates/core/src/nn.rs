//! Small fully-connected networks with hand-written reverse passes, and the
//! prediction heads built from them.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::image::{FeatureMap, Image, PixelCell};
use crate::math;
use crate::sh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Softplus => math::softplus(z),
            Activation::Sigmoid => math::sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => math::sigmoid(z),
            Activation::Sigmoid => {
                let s = math::sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

/// Dense layer, `y = W x + b` with `W` stored `outputs × inputs` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }
}

/// Multi-layer perceptron: ReLU between layers, one activation per output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output_activations: Vec<Activation>,
}

/// Values cached by a batched forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pub batch: usize,
    /// Input of every layer, `batch × inputs`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every layer, `batch × outputs`.
    pre: Vec<Vec<f64>>,
    /// Network output after the output activations, `batch × outputs`.
    pub output: Vec<f64>,
}

impl Tape {
    /// Pre-activations of layer `l`.
    pub fn pre_activations(&self, l: usize) -> &[f64] {
        &self.pre[l]
    }

    pub fn num_layers(&self) -> usize {
        self.pre.len()
    }
}

/// `C = alpha·A·B + beta·C` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the slices cover every strided element addressed by the
    // dimensions above (checked in debug builds); C does not alias A or B.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

impl Mlp {
    /// All-zero network with the given layer widths.
    pub fn zeros(widths: &[usize], output_activations: Vec<Activation>) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        assert_eq!(output_activations.len(), *widths.last().unwrap(), "one activation per output");
        let layers = widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Self { layers, output_activations }
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], output_activations: Vec<Activation>, rng: &mut R) -> Self {
        let mut m = Self::zeros(widths, output_activations);
        for l in &mut m.layers {
            let bound = 1.0 / math::sqrt(l.inputs as f64);
            for w in &mut l.weight {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        m
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Linear::zeros(l.inputs, l.outputs)).collect(),
            output_activations: self.output_activations.clone(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in a fixed order: per layer, weights then biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        self.params_mut().nth(index).expect("MLP parameter index out of range")
    }

    pub fn param(&self, index: usize) -> f64 {
        *self.params().nth(index).expect("MLP parameter index out of range")
    }

    pub fn fill(&mut self, v: f64) {
        for p in self.params_mut() {
            *p = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    /// Forward pass on one input vector.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Tape) {
        let tape = self.forward_batch(x, 1);
        (tape.output.clone(), tape)
    }

    /// Reverse pass for a single-sample tape; returns `(dx, dparams)`.
    pub fn backward(&self, tape: &Tape, dy: &[f64]) -> (Vec<f64>, Mlp) {
        let mut grad = self.zeros_like();
        let dx = self.backward_batch(tape, dy, &mut grad);
        (dx, grad)
    }

    /// Forward pass on `batch` row-major inputs.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Tape {
        assert_eq!(x.len(), batch * self.input_dim(), "MLP input has the wrong size");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; batch * layer.outputs];
            for row in z.chunks_exact_mut(layer.outputs) {
                row.copy_from_slice(&layer.bias);
            }
            // Z = X·Wᵀ + b
            gemm(batch, layer.inputs, layer.outputs, &cur, layer.inputs, 1, &layer.weight, 1, layer.inputs, 1.0, &mut z, layer.outputs);
            let a: Vec<f64> = if li == last {
                z.chunks_exact(layer.outputs)
                    .flat_map(|row| row.iter().zip(&self.output_activations).map(|(&v, act)| act.apply(v)))
                    .collect()
            } else {
                z.iter().map(|&v| v.max(0.0)).collect()
            };
            inputs.push(cur);
            pre.push(z);
            cur = a;
        }
        Tape { batch, inputs, pre, output: cur }
    }

    /// Accumulates parameter gradients into `grad` and returns `dx`
    /// (`batch × inputs`).
    pub fn backward_batch(&self, tape: &Tape, dy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let batch = tape.batch;
        assert_eq!(dy.len(), batch * self.output_dim(), "MLP output gradient has the wrong size");
        let last = self.layers.len() - 1;
        let mut upstream = dy.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let z = &tape.pre[li];
            let mut dz = upstream;
            if li == last {
                for (row_dz, row_z) in dz.chunks_exact_mut(layer.outputs).zip(z.chunks_exact(layer.outputs)) {
                    for ((g, &zv), act) in row_dz.iter_mut().zip(row_z).zip(&self.output_activations) {
                        *g *= act.derivative(zv);
                    }
                }
            } else {
                for (g, &zv) in dz.iter_mut().zip(z) {
                    if zv <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let g = &mut grad.layers[li];
            // dW += dZᵀ·X
            gemm(layer.outputs, batch, layer.inputs, &dz, 1, layer.outputs, &tape.inputs[li], layer.inputs, 1, 1.0, &mut g.weight, layer.inputs);
            for row in dz.chunks_exact(layer.outputs) {
                for (b, &v) in g.bias.iter_mut().zip(row) {
                    *b += v;
                }
            }
            // dX = dZ·W
            let mut dx = vec![0.0; batch * layer.inputs];
            gemm(batch, layer.outputs, layer.inputs, &dz, layer.outputs, 1, &layer.weight, layer.inputs, 1, 0.0, &mut dx, layer.inputs);
            upstream = dx;
        }
        upstream
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Mlp) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += alpha * b;
        }
    }
}

/// Source of the per-view image feature fed to the blend head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFeatureMode {
    /// Bilinear RGB sample, 3 channels.
    Passthrough,
    /// One trainable 3×3 convolution with 8 output channels and ReLU.
    ShallowConv,
}

pub const CONV_CHANNELS: usize = 8;

/// 3×3 convolution, RGB → [`CONV_CHANNELS`], zero padding.
/// Weights are indexed `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output of [`Conv3x3::apply`]: post-ReLU features plus the input image.
#[derive(Debug, Clone)]
pub struct ConvFeatures {
    pub features: FeatureMap,
    pub input: FeatureMap,
}

impl Conv3x3 {
    pub fn zeros() -> Self {
        Self { weight: vec![0.0; CONV_CHANNELS * 27], bias: vec![0.0; CONV_CHANNELS] }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut c = Self::zeros();
        let bound = 1.0 / math::sqrt(27.0);
        for w in &mut c.weight {
            *w = rng.gen_range(-bound..=bound);
        }
        c
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * 3 + i) * 3 + ky) * 3 + kx]
    }

    fn pre_activation(&self, input: &FeatureMap, x: usize, y: usize, o: usize) -> f64 {
        let mut acc = self.bias[o];
        for ky in 0..3 {
            let sy = y as isize + ky as isize - 1;
            if sy < 0 || sy >= input.height as isize {
                continue;
            }
            for kx in 0..3 {
                let sx = x as isize + kx as isize - 1;
                if sx < 0 || sx >= input.width as isize {
                    continue;
                }
                let px = input.pixel(sx as usize, sy as usize);
                for (i, &v) in px.iter().enumerate() {
                    acc += self.w(o, i, ky, kx) * v;
                }
            }
        }
        acc
    }

    pub fn apply(&self, image: &Image) -> ConvFeatures {
        let input = FeatureMap::from_image(image);
        let (w, h) = (image.width, image.height);
        let mut data = vec![0.0; w * h * CONV_CHANNELS];
        for y in 0..h {
            for x in 0..w {
                for o in 0..CONV_CHANNELS {
                    data[(y * w + x) * CONV_CHANNELS + o] = self.pre_activation(&input, x, y, o).max(0.0);
                }
            }
        }
        ConvFeatures { features: FeatureMap { width: w, height: h, channels: CONV_CHANNELS, data }, input }
    }

    /// Backpropagates `g` (gradient of a bilinear feature sample at `cell`)
    /// into the convolution parameters.
    pub fn accumulate_backward(&self, feats: &ConvFeatures, cell: &PixelCell, g: &[f64], grad: &mut Conv3x3) {
        let input = &feats.input;
        for ((x, y), wt) in FeatureMap::corners(cell) {
            if wt == 0.0 {
                continue;
            }
            let out = feats.features.pixel(x, y);
            for o in 0..CONV_CHANNELS {
                // ReLU gate: zero output means zero gradient
                if out[o] <= 0.0 {
                    continue;
                }
                let dz = wt * g[o];
                grad.bias[o] += dz;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= input.height as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= input.width as isize {
                            continue;
                        }
                        let px = input.pixel(sx as usize, sy as usize);
                        for (i, &v) in px.iter().enumerate() {
                            grad.weight[((o * 3 + i) * 3 + ky) * 3 + kx] += dz * v;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImageEncoder {
    Passthrough,
    ShallowConv(Conv3x3),
}

/// Per-view image features, ready for bilinear lookups.
#[derive(Debug, Clone)]
pub enum EncodedImage {
    Passthrough(FeatureMap),
    Conv(ConvFeatures),
}

impl EncodedImage {
    pub fn features(&self) -> &FeatureMap {
        match self {
            EncodedImage::Passthrough(f) => f,
            EncodedImage::Conv(c) => &c.features,
        }
    }

    /// The RGB image the colors are sampled from.
    pub fn rgb(&self) -> &FeatureMap {
        match self {
            EncodedImage::Passthrough(f) => f,
            EncodedImage::Conv(c) => &c.input,
        }
    }
}

impl ImageEncoder {
    pub fn mode(&self) -> ImageFeatureMode {
        match self {
            ImageEncoder::Passthrough => ImageFeatureMode::Passthrough,
            ImageEncoder::ShallowConv(_) => ImageFeatureMode::ShallowConv,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            ImageEncoder::Passthrough => 3,
            ImageEncoder::ShallowConv(_) => CONV_CHANNELS,
        }
    }

    pub fn encode(&self, image: &Image) -> EncodedImage {
        match self {
            ImageEncoder::Passthrough => EncodedImage::Passthrough(FeatureMap::from_image(image)),
            ImageEncoder::ShallowConv(c) => EncodedImage::Conv(c.apply(image)),
        }
    }
}

/// Continuous pixel lookup of an image feature; `None` outside the image.
pub fn image_feature(encoded: &EncodedImage, u: f64, v: f64) -> Option<Vec<f64>> {
    let f = encoded.features();
    let cell = crate::image::locate_pixel(u, v, f.width, f.height)?;
    let mut out = vec![0.0; f.channels];
    f.sample(&cell, &mut out);
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub sh_degree: usize,
    pub image_feature: ImageFeatureMode,
    /// Floor added to the softplus radius, world units.
    pub r_min: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { hidden_width: 64, hidden_layers: 2, sh_degree: 2, image_feature: ImageFeatureMode::Passthrough, r_min: 1e-4 }
    }
}

/// The geometry, SH and blend-weight predictors sharing the point feature.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSet {
    pub geometry: Mlp,
    pub sh: Mlp,
    pub blend: Mlp,
    pub encoder: ImageEncoder,
    pub sh_degree: usize,
    pub r_min: f64,
}

/// `(radius, density)` from raw geometry-head outputs `y` (pre-activation).
#[inline]
pub fn geometry_from_raw(y0_activated: f64, y1_activated: f64, r_min: f64) -> (f64, f64) {
    (y0_activated + r_min, y1_activated.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

impl HeadSet {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, cfg: &HeadConfig, rng: &mut R) -> Self {
        let widths = |input: usize, output: usize| {
            let mut w = vec![input];
            w.extend(core::iter::repeat(cfg.hidden_width).take(cfg.hidden_layers));
            w.push(output);
            w
        };
        let n_sh = sh::num_coeffs(cfg.sh_degree) * 3;
        let encoder = match cfg.image_feature {
            ImageFeatureMode::Passthrough => ImageEncoder::Passthrough,
            ImageFeatureMode::ShallowConv => ImageEncoder::ShallowConv(Conv3x3::random(rng)),
        };
        let geometry = Mlp::random(&widths(feature_dim, 2), vec![Activation::Softplus, Activation::Sigmoid], rng);
        let sh = Mlp::random(&widths(feature_dim, n_sh), vec![Activation::Identity; n_sh], rng);
        let blend = Mlp::random(&widths(feature_dim + encoder.feature_dim(), 1), vec![Activation::Identity], rng);
        Self { geometry, sh, blend, encoder, sh_degree: cfg.sh_degree, r_min: cfg.r_min }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            geometry: self.geometry.zeros_like(),
            sh: self.sh.zeros_like(),
            blend: self.blend.zeros_like(),
            encoder: match &self.encoder {
                ImageEncoder::Passthrough => ImageEncoder::Passthrough,
                ImageEncoder::ShallowConv(_) => ImageEncoder::ShallowConv(Conv3x3::zeros()),
            },
            sh_degree: self.sh_degree,
            r_min: self.r_min,
        }
    }

    pub fn num_sh_outputs(&self) -> usize {
        sh::num_coeffs(self.sh_degree) * 3
    }

    /// Radius (world units) and density in `(0, 1)` for one point feature.
    pub fn geometry_head_eval(&self, f: &[f64]) -> (f64, f64) {
        let (y, _) = self.geometry.forward(f);
        geometry_from_raw(y[0], y[1], self.r_min)
    }

    pub fn sh_head_eval(&self, f: &[f64]) -> sh::ShCoefficients {
        let (y, _) = self.sh.forward(f);
        sh::ShCoefficients { degree: self.sh_degree, coeffs: y }
    }

    /// Unnormalized blend logit for one (point, source view) pair.
    pub fn blend_head_eval(&self, f: &[f64], f_img: &[f64]) -> f64 {
        let mut x = Vec::with_capacity(f.len() + f_img.len());
        x.extend_from_slice(f);
        x.extend_from_slice(f_img);
        self.blend.forward(&x).0[0]
    }

    pub fn is_finite(&self) -> bool {
        let conv_ok = match &self.encoder {
            ImageEncoder::Passthrough => true,
            ImageEncoder::ShallowConv(c) => c.weight.iter().chain(&c.bias).all(|v| v.is_finite()),
        };
        self.geometry.is_finite() && self.sh.is_finite() && self.blend.is_finite() && conv_ok
    }

    /// Conv weights and bias, empty in passthrough mode.
    fn conv_params(&self) -> impl Iterator<Item = &f64> {
        let conv = match &self.encoder {
            ImageEncoder::ShallowConv(c) => Some(c),
            ImageEncoder::Passthrough => None,
        };
        conv.into_iter().flat_map(|c| c.weight.iter().chain(&c.bias))
    }

    /// Every trainable value: geometry, SH and blend heads, then the conv.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.geometry.params().chain(self.sh.params()).chain(self.blend.params()).chain(self.conv_params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        let conv = match &mut self.encoder {
            ImageEncoder::ShallowConv(c) => Some(c),
            ImageEncoder::Passthrough => None,
        };
        self.geometry
            .params_mut()
            .chain(self.sh.params_mut())
            .chain(self.blend.params_mut())
            .chain(conv.into_iter().flat_map(|c| c.weight.iter_mut().chain(c.bias.iter_mut())))
    }

    pub fn num_params(&self) -> usize {
        self.params().count()
    }

    /// Sets the radius bias so untrained points start at `radius` world units.
    pub fn set_initial_radius(&mut self, radius: f64) {
        let last = self.geometry.layers.last_mut().unwrap();
        last.bias[0] = math::softplus_inv((radius - self.r_min).max(1e-9));
    }
}

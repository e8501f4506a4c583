//! Network layers with hand-written forward and backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`;
//! calling `backward` without a preceding `forward` is an error. Parameter
//! gradients accumulate until [`Param::zero_grad`].

use rand::Rng as _;
use rand::SeedableRng;

use super::tensor::{Real, Tensor};
use crate::rng::Rng;
use crate::{Error, Result};

/// Train mode uses batch statistics and active dropout; eval mode uses
/// running statistics and never mutates layer state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

fn uniform<T: Real>(rng: &mut Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
}

fn take_cache<X>(slot: &mut Option<X>, layer: &'static str) -> Result<X> {
    slot.take().ok_or(Error::BackwardBeforeForward(layer))
}

/// 2-D convolution over `(batch, channels, freq, time)` without padding.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    /// Kaiming-uniform (fan-in) weights; bias uniform in `±1/sqrt(fan_in)`.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_ch * kernel.0 * kernel.1;
        let bound = (6.0 / fan_in as f64).sqrt();
        let shape = [out_ch, in_ch, kernel.0, kernel.1];
        let w = uniform(rng, shape.iter().product(), bound);
        let b = uniform(rng, out_ch, 1.0 / (fan_in as f64).sqrt());
        Self {
            weight: Param::new(Tensor::new(shape.to_vec(), w).expect("conv weight shape")),
            bias: Param::new(Tensor::new(vec![out_ch], b).expect("conv bias shape")),
            kernel,
            stride,
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    /// Output `(freq, time)` for an input plane, or a shape error.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        if kh > h || kw > w {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} larger than input plane {h}x{w}"
            )));
        }
        Ok(((h - kh) / self.stride.0 + 1, (w - kw) / self.stride.1 + 1))
    }

    fn dims(&self, x: &Tensor<T>) -> Result<[usize; 6]> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects (batch, {}, freq, time), got {s:?} (kernel {:?})",
                self.in_channels(),
                self.kernel
            )));
        }
        let (ho, wo) = self.output_size(s[2], s[3]).map_err(|_| {
            Error::Shape(format!(
                "kernel {:?} larger than input {s:?}",
                self.kernel
            ))
        })?;
        Ok([s[0], s[2], s[3], ho, wo, self.out_channels()])
    }

    pub fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let [b, h, w, ho, wo, cout] = self.dims(x)?;
        let cin = self.in_channels();
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let wp = w.div_ceil(sw);
        let wt = self.weight.value.data();
        let xd = x.data();
        let mut out = vec![T::zero(); b * cout * ho * wo];
        let mut phases = vec![T::zero(); sw * h * wp];
        for bi in 0..b {
            for co in 0..cout {
                out[(bi * cout + co) * ho * wo..][..ho * wo].fill(self.bias.value.data()[co]);
            }
            for ci in 0..cin {
                split_phases(&xd[(bi * cin + ci) * h * w..][..h * w], w, sw, wp, &mut phases);
                for co in 0..cout {
                    let plane = &mut out[(bi * cout + co) * ho * wo..][..ho * wo];
                    for i in 0..kh {
                        for j in 0..kw {
                            let k = wt[((co * cin + ci) * kh + i) * kw + j];
                            let phase = &phases[(j % sw) * h * wp + j / sw..];
                            for (r, dst) in plane.chunks_exact_mut(wo).enumerate() {
                                let src = &phase[(r * sh + i) * wp..][..wo];
                                for (d, &v) in dst.iter_mut().zip(src) {
                                    *d = *d + k * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.input = Some(x.clone());
        Tensor::new(vec![b, cout, ho, wo], out)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.input, "conv2d")?;
        let [b, h, w, ho, wo, cout] = self.dims(&x)?;
        if g.shape() != [b, cout, ho, wo] {
            return Err(Error::Shape(format!("conv gradient shape {:?}", g.shape())));
        }
        let cin = self.in_channels();
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let wp = w.div_ceil(sw);
        let xd = x.data();
        let gd = g.data();
        let wt = self.weight.value.data();
        let dw = self.weight.grad.data_mut();
        let mut dx = vec![T::zero(); xd.len()];
        let mut phases = vec![T::zero(); sw * h * wp];
        let mut dphases = vec![T::zero(); sw * h * wp];
        for bi in 0..b {
            for co in 0..cout {
                let gp = &gd[(bi * cout + co) * ho * wo..][..ho * wo];
                let db = gp.iter().copied().sum::<T>();
                self.bias.grad.data_mut()[co] = self.bias.grad.data()[co] + db;
            }
            for ci in 0..cin {
                split_phases(&xd[(bi * cin + ci) * h * w..][..h * w], w, sw, wp, &mut phases);
                dphases.fill(T::zero());
                for co in 0..cout {
                    let gp = &gd[(bi * cout + co) * ho * wo..][..ho * wo];
                    for i in 0..kh {
                        for j in 0..kw {
                            let widx = ((co * cin + ci) * kh + i) * kw + j;
                            let k = wt[widx];
                            let base = (j % sw) * h * wp + j / sw;
                            let mut acc = T::zero();
                            for (r, grow) in gp.chunks_exact(wo).enumerate() {
                                let off = base + (r * sh + i) * wp;
                                acc = acc + dot(grow, &phases[off..][..wo]);
                                let dst = &mut dphases[off..][..wo];
                                for (d, &gv) in dst.iter_mut().zip(grow) {
                                    *d = *d + gv * k;
                                }
                            }
                            dw[widx] = dw[widx] + acc;
                        }
                    }
                }
                merge_phases(&dphases, w, sw, wp, &mut dx[(bi * cin + ci) * h * w..][..h * w]);
            }
        }
        Tensor::new(x.shape().to_vec(), dx)
    }
}

/// Rearranges a `h x w` plane so that columns `p, p + stride, ...` become
/// contiguous rows of phase `p`. Strided taps then read contiguous memory.
fn split_phases<T: Real>(plane: &[T], w: usize, stride: usize, wp: usize, out: &mut [T]) {
    let h = plane.len() / w;
    for (r, row) in plane.chunks_exact(w).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[((c % stride) * h + r) * wp + c / stride] = v;
        }
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] = lanes[k] + x[k] * y[k];
        }
    }
    lanes.iter().copied().sum::<T>() + tail
}

/// Inverse of [`split_phases`].
fn merge_phases<T: Real>(phases: &[T], w: usize, stride: usize, wp: usize, plane: &mut [T]) {
    let h = plane.len() / w;
    for (r, row) in plane.chunks_exact_mut(w).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = phases[((c % stride) * h + r) * wp + c / stride];
        }
    }
}

/// Fully connected layer over `(batch, features)`.
#[derive(Debug, Clone)]
pub struct Dense<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    /// Kaiming-uniform (fan-in) weights; bias uniform in `±1/sqrt(fan_in)`.
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let w = uniform(rng, inputs * outputs, bound);
        let b = uniform(rng, outputs, 1.0 / (inputs as f64).sqrt());
        Self {
            weight: Param::new(Tensor::new(vec![outputs, inputs], w).expect("dense shape")),
            bias: Param::new(Tensor::new(vec![outputs], b).expect("dense bias shape")),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        if x.shape().len() != 2 || x.shape()[1] != self.inputs() {
            return Err(Error::Shape(format!(
                "dense expects (batch, {}), got {:?}",
                self.inputs(),
                x.shape()
            )));
        }
        Ok(x.shape()[0])
    }

    pub fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let b = self.check(x)?;
        let (nin, nout) = (self.inputs(), self.outputs());
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        let mut out = Vec::with_capacity(b * nout);
        for row in x.data().chunks(nin) {
            for o in 0..nout {
                let wr = &w[o * nin..(o + 1) * nin];
                out.push(bias[o] + wr.iter().zip(row).map(|(&a, &v)| a * v).sum::<T>());
            }
        }
        self.input = Some(x.clone());
        Tensor::new(vec![b, nout], out)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let x = take_cache(&mut self.input, "dense")?;
        let b = self.check(&x)?;
        let (nin, nout) = (self.inputs(), self.outputs());
        if g.shape() != [b, nout] {
            return Err(Error::Shape(format!("dense gradient shape {:?}", g.shape())));
        }
        let w = self.weight.value.data();
        let dw = self.weight.grad.data_mut();
        let db = self.bias.grad.data_mut();
        let mut dx = vec![T::zero(); b * nin];
        for ((row, grow), dxr) in x.data().chunks(nin).zip(g.data().chunks(nout)).zip(dx.chunks_mut(nin)) {
            for (o, &gv) in grow.iter().enumerate() {
                if gv == T::zero() {
                    continue;
                }
                db[o] = db[o] + gv;
                let dwr = &mut dw[o * nin..(o + 1) * nin];
                let wr = &w[o * nin..(o + 1) * nin];
                for k in 0..nin {
                    dwr[k] = dwr[k] + gv * row[k];
                    dxr[k] = dxr[k] + gv * wr[k];
                }
            }
        }
        Tensor::new(vec![b, nin], dx)
    }
}

/// Rectified linear unit.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
        let out = x
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v } else { T::zero() })
            .collect();
        self.mask = Some(mask);
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward<T: Real>(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = take_cache(&mut self.mask, "relu")?;
        if mask.len() != g.len() {
            return Err(Error::Shape(format!("relu gradient shape {:?}", g.shape())));
        }
        let out = g
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v } else { T::zero() })
            .collect();
        Tensor::new(g.shape().to_vec(), out)
    }
}

/// Batch normalization over axis 1; statistics span the batch and every
/// trailing axis.
#[derive(Debug, Clone)]
pub struct BatchNorm<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    shape: Vec<usize>,
    normalized: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        let mut gamma = Tensor::zeros(&[channels]);
        gamma.fill(T::one());
        let mut running_var = Tensor::zeros(&[channels]);
        running_var.fill(T::one());
        Self {
            gamma: Param::new(gamma),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var,
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    fn layout(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        let c = self.gamma.value.len();
        if shape.len() < 2 || shape[1] != c {
            return Err(Error::Shape(format!("batch norm over {c} channels got {shape:?}")));
        }
        Ok((shape[0], c, shape[2..].iter().product()))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (b, c, s) = self.layout(x.shape())?;
        let xd = x.data();
        let count = (b * s) as f64;
        let mut normalized = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut out = vec![T::zero(); xd.len()];
        for ch in 0..c {
            let values = || (0..b).flat_map(move |bi| (0..s).map(move |k| (bi * c + ch) * s + k));
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = values().map(|i| xd[i].to_f64().unwrap()).sum::<f64>() / count;
                    let var = values()
                        .map(|i| (xd[i].to_f64().unwrap() - mean).powi(2))
                        .sum::<f64>()
                        / count;
                    let m = self.momentum;
                    let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = T::of((1.0 - m) * rm.to_f64().unwrap() + m * mean);
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = T::of((1.0 - m) * rv.to_f64().unwrap() + m * unbiased);
                    (mean, var)
                }
                Mode::Eval => (
                    self.running_mean.data()[ch].to_f64().unwrap(),
                    self.running_var.data()[ch].to_f64().unwrap(),
                ),
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = T::of(is);
            let (g, be) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            let (mean_t, is_t) = (T::of(mean), T::of(is));
            for i in values() {
                let n = (xd[i] - mean_t) * is_t;
                normalized[i] = n;
                out[i] = g * n + be;
            }
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            normalized,
            inv_std,
            train: mode == Mode::Train,
        });
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = take_cache(&mut self.cache, "batch norm")?;
        if g.shape() != cache.shape.as_slice() {
            return Err(Error::Shape(format!("batch norm gradient shape {:?}", g.shape())));
        }
        let (b, c, s) = self.layout(&cache.shape)?;
        let gd = g.data();
        let count = T::of((b * s) as f64);
        let mut dx = vec![T::zero(); gd.len()];
        for ch in 0..c {
            let idx = || (0..b).flat_map(move |bi| (0..s).map(move |k| (bi * c + ch) * s + k));
            let gamma = self.gamma.value.data()[ch];
            let mut sum_g = T::zero();
            let mut sum_gn = T::zero();
            for i in idx() {
                sum_g = sum_g + gd[i];
                sum_gn = sum_gn + gd[i] * cache.normalized[i];
            }
            self.beta.grad.data_mut()[ch] = self.beta.grad.data()[ch] + sum_g;
            self.gamma.grad.data_mut()[ch] = self.gamma.grad.data()[ch] + sum_gn;
            let is = cache.inv_std[ch];
            if cache.train {
                let k = gamma * is / count;
                for i in idx() {
                    dx[i] = k * (count * gd[i] - sum_g - cache.normalized[i] * sum_gn);
                }
            } else {
                for i in idx() {
                    dx[i] = gd[i] * gamma * is;
                }
            }
        }
        Tensor::new(cache.shape, dx)
    }
}

/// Inverted dropout: train mode zeroes each value with probability `rate`
/// and scales survivors by `1 / (1 - rate)`; eval mode is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    rng: Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, rng: Rng) -> Self {
        Self {
            rate,
            rng,
            mask: None,
        }
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = Rng::seed_from_u64(seed);
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mask: Vec<f64> = if mode == Mode::Train && self.rate > 0.0 {
            let keep = 1.0 / (1.0 - self.rate);
            (0..x.len())
                .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { keep })
                .collect()
        } else {
            vec![1.0; x.len()]
        };
        let out = x.data().iter().zip(&mask).map(|(&v, &m)| v * T::of(m)).collect();
        self.mask = Some(mask);
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward<T: Real>(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = take_cache(&mut self.mask, "dropout")?;
        if mask.len() != g.len() {
            return Err(Error::Shape(format!("dropout gradient shape {:?}", g.shape())));
        }
        let out = g.data().iter().zip(&mask).map(|(&v, &m)| v * T::of(m)).collect();
        Tensor::new(g.shape().to_vec(), out)
    }
}

/// Row-wise l2 normalization of `(batch, features)`.
#[derive(Debug, Clone, Default)]
pub struct L2Norm<T: Real> {
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Real> L2Norm<T> {
    pub fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        if x.shape().len() != 2 {
            return Err(Error::Shape(format!("l2 norm expects (batch, features), got {:?}", x.shape())));
        }
        let d = x.shape()[1];
        let mut out = Vec::with_capacity(x.len());
        let mut norms = Vec::with_capacity(x.batch());
        for row in x.data().chunks(d) {
            let norm = row.iter().map(|&v| v.to_f64().unwrap().powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroNorm);
            }
            let n = T::of(norm);
            norms.push(n);
            out.extend(row.iter().map(|&v| v / n));
        }
        let y = Tensor::new(x.shape().to_vec(), out)?;
        self.cache = Some((y.clone(), norms));
        Ok(y)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, norms) = take_cache(&mut self.cache, "l2 norm")?;
        if g.shape() != y.shape() {
            return Err(Error::Shape(format!("l2 norm gradient shape {:?}", g.shape())));
        }
        let d = y.shape()[1];
        let mut dx = Vec::with_capacity(y.len());
        for ((yr, gr), &n) in y.data().chunks(d).zip(g.data().chunks(d)).zip(&norms) {
            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
            dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| (gv - yv * dot) / n));
        }
        Tensor::new(y.shape().to_vec(), dx)
    }
}

/// Collapses every axis after the batch axis.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let b = x.batch();
        self.shape = Some(x.shape().to_vec());
        x.clone().reshape(vec![b, x.len() / b.max(1)])
    }

    pub fn backward<T: Real>(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = take_cache(&mut self.shape, "flatten")?;
        g.clone().reshape(shape)
    }
}

/// Any layer of the networks in this crate.
#[derive(Debug, Clone)]
pub enum Layer<T: Real> {
    Conv2d(Conv2d<T>),
    Dense(Dense<T>),
    Relu(Relu),
    BatchNorm(BatchNorm<T>),
    Dropout(Dropout),
    L2Norm(L2Norm<T>),
    Flatten(Flatten),
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv",
            Layer::Dense(_) => "dense",
            Layer::Relu(_) => "relu",
            Layer::BatchNorm(_) => "bn",
            Layer::Dropout(_) => "dropout",
            Layer::L2Norm(_) => "l2norm",
            Layer::Flatten(_) => "flatten",
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.forward(x, mode),
            Layer::Dense(l) => l.forward(x, mode),
            Layer::Relu(l) => l.forward(x, mode),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Dropout(l) => l.forward(x, mode),
            Layer::L2Norm(l) => l.forward(x, mode),
            Layer::Flatten(l) => l.forward(x, mode),
        }
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.backward(g),
            Layer::Dense(l) => l.backward(g),
            Layer::Relu(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::Dropout(l) => l.backward(g),
            Layer::L2Norm(l) => l.backward(g),
            Layer::Flatten(l) => l.backward(g),
        }
    }

    /// Trainable parameters with their local names.
    pub fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::Dense(l) => vec![("weight", &l.weight), ("bias", &l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::Dense(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
            Layer::BatchNorm(l) => vec![("gamma", &mut l.gamma), ("beta", &mut l.beta)],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state saved in checkpoints.
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", &l.running_mean),
                ("running_var", &l.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            _ => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn rng() -> Rng {
        stream(1, Stream::Init)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = stream(seed, Stream::Noise);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_output_arithmetic() {
        let mut c = Conv2d::<f64>::new(1, 5, (1, 4), (1, 2), &mut rng());
        let y = c.forward(&Tensor::zeros(&[2, 1, 17, 3999]), Mode::Train).unwrap();
        assert_eq!(y.shape(), [2, 5, 17, 1998]);
    }

    #[test]
    fn conv_kernel_larger_than_input_reports_both() {
        let mut c = Conv2d::<f64>::new(1, 1, (2, 4), (1, 1), &mut rng());
        let err = c.forward(&Tensor::zeros(&[1, 1, 1, 10]), Mode::Train).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 4]") || msg.contains("(2, 4)"), "{msg}");
        assert!(msg.contains("[1, 1, 1, 10]"), "{msg}");
    }

    #[test]
    fn conv_constant_input_gives_constant_output() {
        let mut c = Conv2d::<f64>::new(1, 2, (1, 4), (1, 2), &mut rng());
        let mut x = Tensor::zeros(&[1, 1, 3, 20]);
        x.fill(0.7);
        let y = c.forward(&x, Mode::Eval).unwrap();
        for plane in y.data().chunks(3 * 9) {
            assert!(plane.iter().all(|v| (v - plane[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn batch_norm_normalizes_batch_statistics() {
        // Values 1 and 5 per channel: mean 3, variance 4.
        let mut bn = BatchNorm::<f64>::new(2);
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 5.0, 5.0, 1.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for ch in 0..2 {
            let v = [y.data()[ch], y.data()[2 + ch]];
            let mean = (v[0] + v[1]) / 2.0;
            let var = ((v[0] - mean).powi(2) + (v[1] - mean).powi(2)) / 2.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_mode_does_not_touch_running_statistics() {
        let mut bn = BatchNorm::<f64>::new(3);
        bn.forward(&random(&[4, 3, 5], 2), Mode::Train).unwrap();
        let (m, v) = (bn.running_mean.clone(), bn.running_var.clone());
        bn.forward(&random(&[4, 3, 5], 3), Mode::Eval).unwrap();
        assert_eq!(bn.running_mean, m);
        assert_eq!(bn.running_var, v);
    }

    #[test]
    fn relu_negative_input_has_zero_gradient() {
        let mut r = Relu::default();
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.5, -0.1]).unwrap();
        r.forward(&x, Mode::Train).unwrap();
        let g = r.backward(&Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(g.data(), [0.0, 1.0, 0.0]);
    }

    #[test]
    fn dropout_is_inverted_and_identity_in_eval() {
        let mut d = Dropout::new(0.5, rng());
        let mut x = Tensor::<f64>::zeros(&[1, 10000]);
        x.fill(1.0);
        let y = d.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let mean = y.data().iter().sum::<f64>() / 10000.0;
        assert!((mean - 1.0).abs() < 0.05);
        assert_eq!(d.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn l2_norm_rejects_zero_rows() {
        let mut l = L2Norm::<f64>::default();
        assert!(matches!(
            l.forward(&Tensor::zeros(&[1, 4]), Mode::Eval),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn l2_norm_gradient_has_no_radial_part() {
        let mut l = L2Norm::<f64>::default();
        let x = random(&[3, 6], 4);
        let y = l.forward(&x, Mode::Train).unwrap();
        let dx = l.backward(&random(&[3, 6], 5)).unwrap();
        for (yr, dr) in y.data().chunks(6).zip(dx.data().chunks(6)) {
            let radial: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
            assert!(radial.abs() < 1e-12);
        }
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let g = Tensor::<f64>::zeros(&[1, 2]);
        let mut layers: Vec<Layer<f64>> = vec![
            Layer::Dense(Dense::new(2, 2, &mut rng())),
            Layer::Relu(Relu::default()),
            Layer::BatchNorm(BatchNorm::new(2)),
            Layer::Dropout(Dropout::new(0.5, rng())),
            Layer::L2Norm(L2Norm::default()),
            Layer::Flatten(Flatten::default()),
        ];
        for l in &mut layers {
            assert!(matches!(l.backward(&g), Err(Error::BackwardBeforeForward(_))));
        }
    }
}

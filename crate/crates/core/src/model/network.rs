use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv2d, Dense, Dropout, Flatten, L2Norm, Layer, Mode, Param, Relu};
use super::tensor::{Real, Tensor};
use crate::rng::{stream, Rng, Stream};
use crate::signal::{FeatureMatrix, NUM_BINS};
use crate::{Error, Result};

/// A chain of layers with stable parameter names.
#[derive(Debug, Clone)]
pub struct Network<T: Real> {
    layers: Vec<(String, Layer<T>)>,
}

impl<T: Real> Network<T> {
    pub fn new(layers: Vec<(String, Layer<T>)>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Layer<T>)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), l))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = (&str, &mut Layer<T>)> {
        self.layers.iter_mut().map(|(n, l)| (n.as_str(), l))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for (name, layer) in &mut self.layers {
            h = layer.forward(&h, mode)?;
            if !h.all_finite() {
                return Err(Error::NonFinite(format!("output of layer {name}")));
            }
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<(String, &Param<T>)> {
        self.layers
            .iter()
            .flat_map(|(n, l)| l.params().into_iter().map(move |(p, v)| (format!("{n}.{p}"), v)))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        self.layers
            .iter_mut()
            .flat_map(|(n, l)| {
                let n = n.clone();
                l.params_mut().into_iter().map(move |(p, v)| (format!("{n}.{p}"), v))
            })
            .collect()
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .flat_map(|(n, l)| l.buffers().into_iter().map(move |(p, v)| (format!("{n}.{p}"), v)))
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .flat_map(|(n, l)| {
                let n = n.clone();
                l.buffers_mut().into_iter().map(move |(p, v)| (format!("{n}.{p}"), v))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Reseeds every dropout layer; layer `k` gets `seed + k`.
    pub fn reseed_dropout(&mut self, seed: u64) {
        for (k, (_, l)) in self.layers.iter_mut().enumerate() {
            if let Layer::Dropout(d) = l {
                d.reseed(seed.wrapping_add(k as u64));
            }
        }
    }

    pub fn set_dropout_rate(&mut self, rate: f64) {
        for (_, l) in &mut self.layers {
            if let Layer::Dropout(d) = l {
                d.rate = rate;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let cp = |p: &Param<T>| Param::new(p.value.cast());
        let layers = self
            .layers
            .iter()
            .map(|(n, l)| {
                let l2 = match l {
                    Layer::Conv2d(c) => {
                        let mut out = Conv2d::<U>::new(1, 1, c.kernel, c.stride, &mut stream(0, Stream::Init));
                        out.weight = cp(&c.weight);
                        out.bias = cp(&c.bias);
                        Layer::Conv2d(out)
                    }
                    Layer::Dense(d) => {
                        let mut out = Dense::<U>::new(1, 1, &mut stream(0, Stream::Init));
                        out.weight = cp(&d.weight);
                        out.bias = cp(&d.bias);
                        Layer::Dense(out)
                    }
                    Layer::BatchNorm(b) => {
                        let mut out = BatchNorm::<U>::new(b.gamma.value.len());
                        out.gamma = cp(&b.gamma);
                        out.beta = cp(&b.beta);
                        out.running_mean = b.running_mean.cast();
                        out.running_var = b.running_var.cast();
                        out.momentum = b.momentum;
                        out.eps = b.eps;
                        Layer::BatchNorm(out)
                    }
                    Layer::Relu(_) => Layer::Relu(Relu::default()),
                    Layer::Dropout(d) => Layer::Dropout(d.clone()),
                    Layer::L2Norm(_) => Layer::L2Norm(L2Norm::default()),
                    Layer::Flatten(_) => Layer::Flatten(Flatten::default()),
                };
                (n.clone(), l2)
            })
            .collect();
        Network { layers }
    }
}

/// Convolutional encoder hyper-parameters. Kernels and strides are
/// `(freq, time)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kernels: [(usize, usize); 6],
    pub strides: [(usize, usize); 6],
    pub channels: [usize; 6],
    pub embedding_dim: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kernels: [(1, 4), (1, 4), (1, 4), (1, 4), (2, 4), (2, 4)],
            strides: [(1, 2), (1, 2), (1, 2), (1, 2), (1, 2), (2, 2)],
            channels: [5; 6],
            embedding_dim: 64,
            dropout_rate: 0.5,
        }
    }
}

impl EncoderConfig {
    /// Output `(channels, freq, time)` of the convolutional stack.
    pub fn conv_output(&self, bins: usize, frames: usize) -> Result<(usize, usize, usize)> {
        let (mut h, mut w) = (bins, frames);
        for (k, s) in self.kernels.iter().zip(&self.strides) {
            if k.0 > h || k.1 > w {
                return Err(Error::Shape(format!(
                    "kernel {k:?} larger than {h}x{w} plane for input {bins}x{frames}"
                )));
            }
            if s.0 == 0 || s.1 == 0 {
                return Err(Error::Shape("zero stride".into()));
            }
            h = (h - k.0) / s.0 + 1;
            w = (w - k.1) / s.1 + 1;
        }
        Ok((self.channels[5], h, w))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.embedding_dim == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Feature matrices → unit-norm embeddings.
#[derive(Debug, Clone)]
pub struct Encoder<T: Real = f32> {
    pub config: EncoderConfig,
    pub input: (usize, usize),
    pub net: Network<T>,
}

impl<T: Real> Encoder<T> {
    /// Builds an encoder for `bins x frames` inputs; weights come from the
    /// `Init` stream of `seed`, dropout masks from its `Dropout` stream.
    pub fn new(config: EncoderConfig, bins: usize, frames: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let (c, h, w) = config.conv_output(bins, frames)?;
        let mut rng = stream(seed, Stream::Init);
        let mut layers = Vec::new();
        let mut in_ch = 1;
        for i in 0..6 {
            let out_ch = config.channels[i];
            layers.push((
                format!("conv{i}"),
                Layer::Conv2d(Conv2d::new(in_ch, out_ch, config.kernels[i], config.strides[i], &mut rng)),
            ));
            layers.push((format!("relu{i}"), Layer::Relu(Relu::default())));
            layers.push((format!("bn{i}"), Layer::BatchNorm(BatchNorm::new(out_ch))));
            in_ch = out_ch;
        }
        layers.push(("flatten".into(), Layer::Flatten(Flatten::default())));
        layers.push((
            "dropout".into(),
            Layer::Dropout(Dropout::new(config.dropout_rate, stream(seed, Stream::Dropout))),
        ));
        layers.push((
            "embed".into(),
            Layer::Dense(Dense::new(c * h * w, config.embedding_dim, &mut rng)),
        ));
        layers.push(("l2norm".into(), Layer::L2Norm(L2Norm::default())));
        Ok(Self {
            config,
            input: (bins, frames),
            net: Network::new(layers),
        })
    }

    /// Stacks feature matrices into a `(batch, 1, bins, frames)` tensor.
    pub fn batch_input(&self, features: &[&FeatureMatrix]) -> Result<Tensor<T>> {
        let (bins, frames) = self.input;
        let mut data = Vec::with_capacity(features.len() * bins * frames);
        for f in features {
            if (f.rows, f.cols) != (bins, frames) {
                return Err(Error::Shape(format!(
                    "encoder expects {bins}x{frames} features, got {}x{}",
                    f.rows, f.cols
                )));
            }
            data.extend(f.values.iter().map(|&v| T::of(f64::from(v))));
        }
        Tensor::new(vec![features.len(), 1, bins, frames], data)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.net.forward(x, mode)
    }

    pub fn embed(&mut self, features: &[&FeatureMatrix], mode: Mode) -> Result<Tensor<T>> {
        let x = self.batch_input(features)?;
        self.forward(&x, mode)
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.backward(g)
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }
}

/// Frame count of the default 4 s input.
pub const FULL_FRAMES: usize = 3999;

impl Encoder<f32> {
    /// Encoder for full-length 17 x 3999 features.
    pub fn full(config: EncoderConfig, seed: u64) -> Result<Self> {
        Self::new(config, NUM_BINS, FULL_FRAMES, seed)
    }
}

/// Latent dimension of the projection head.
pub const LATENT_DIM: usize = 16;
/// Hidden width of the projection head.
pub const PROJECTION_HIDDEN: usize = 128;
/// Hidden width of the downstream heads.
pub const HEAD_HIDDEN: usize = 256;

/// Embedding → unit-norm latent, used only for the contrastive objective.
pub fn projection<T: Real>(embedding_dim: usize, rng: &mut Rng) -> Network<T> {
    Network::new(vec![
        ("fc0".into(), Layer::Dense(Dense::new(embedding_dim, PROJECTION_HIDDEN, rng))),
        ("relu0".into(), Layer::Relu(Relu::default())),
        ("fc1".into(), Layer::Dense(Dense::new(PROJECTION_HIDDEN, LATENT_DIM, rng))),
        ("l2norm".into(), Layer::L2Norm(L2Norm::default())),
    ])
}

/// Downstream task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rt60,
    C50,
    Volume,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Rt60, Task::C50, Task::Volume];

    /// Width of the head's output layer.
    pub fn outputs(self) -> usize {
        match self {
            Task::Volume => 2,
            _ => 1,
        }
    }

    pub fn is_regression(self) -> bool {
        self != Task::Volume
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Rt60 => "rt60",
            Task::C50 => "c50",
            Task::Volume => "volume",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rt60" => Ok(Task::Rt60),
            "c50" => Ok(Task::C50),
            "volume" => Ok(Task::Volume),
            _ => Err(Error::Config(format!("unknown task {s:?}, expected one of rt60, c50, volume"))),
        }
    }
}

/// Downstream head. The volume head emits two logits; probabilities are
/// obtained with [`crate::objectives::softmax`].
pub fn head<T: Real>(task: Task, embedding_dim: usize, rng: &mut Rng) -> Network<T> {
    let mut layers = vec![
        ("fc0".into(), Layer::Dense(Dense::new(embedding_dim, HEAD_HIDDEN, rng))),
        ("relu0".into(), Layer::Relu(Relu::default())),
        ("fc1".into(), Layer::Dense(Dense::new(HEAD_HIDDEN, HEAD_HIDDEN, rng))),
        ("relu1".into(), Layer::Relu(Relu::default())),
        ("out".into(), Layer::Dense(Dense::new(HEAD_HIDDEN, task.outputs(), rng))),
    ];
    if task == Task::Rt60 {
        layers.push(("relu_out".into(), Layer::Relu(Relu::default())));
    }
    Network::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_input_shape_pipeline() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.conv_output(17, 3999).unwrap(), (5, 8, 60));
        assert_eq!(cfg.conv_output(17, 999).unwrap(), (5, 8, 13));
        assert!(cfg.conv_output(1, 3999).is_err());
    }

    #[test]
    fn parameter_counts() {
        let enc = Encoder::<f32>::full(EncoderConfig::default(), 0).unwrap();
        assert_eq!(enc.param_count(), 154_474);
        let mut rng = stream(0, Stream::Init);
        assert_eq!(projection::<f32>(64, &mut rng).param_count(), 10_384);
        for task in [Task::Rt60, Task::C50] {
            assert_eq!(head::<f32>(task, 64, &mut rng).param_count(), 82_689);
        }
        assert_eq!(head::<f32>(Task::Volume, 64, &mut rng).param_count(), 82_946);
    }

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
        }
        assert!("loudness".parse::<Task>().is_err());
    }
}

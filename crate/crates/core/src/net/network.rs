use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, ConvGeometry};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Leaky,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// Stride-1 convolution with `kernel / 2` zero padding.
    Conv {
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    },
    /// 2x2 max pooling, stride 2.
    MaxPool,
}

impl Layer {
    pub fn conv3(out_channels: usize) -> Self {
        Layer::Conv {
            out_channels,
            kernel: 3,
            activation: Activation::Leaky,
        }
    }

    pub fn head(out_channels: usize) -> Self {
        Layer::Conv {
            out_channels,
            kernel: 1,
            activation: Activation::Linear,
        }
    }
}

/// Ordered layer list describing a fully convolutional network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub in_channels: usize,
    pub layers: Vec<Layer>,
}

impl NetSpec {
    /// Six 3x3 leaky convolutions (16-32-64-64-128-128) with five poolings
    /// between them, then a linear 1x1 head. Output stride 32.
    pub fn miniature(head_channels: usize) -> Self {
        Self::from_widths(&[16, 32, 64, 64, 128, 128], head_channels)
    }

    /// One 3x3 convolution per width, a pool after every width but the last,
    /// and a linear 1x1 head.
    pub fn from_widths(widths: &[usize], head_channels: usize) -> Self {
        let mut layers = Vec::with_capacity(2 * widths.len() + 1);
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Layer::conv3(w));
            if i + 1 < widths.len() {
                layers.push(Layer::MaxPool);
            }
        }
        layers.push(Layer::head(head_channels));
        Self {
            in_channels: 1,
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.layers.is_empty() {
            return Err(Error::Config("empty network spec".into()));
        }
        for layer in &self.layers {
            if let Layer::Conv {
                out_channels,
                kernel,
                ..
            } = layer
            {
                if *out_channels == 0 || kernel % 2 == 0 {
                    return Err(Error::Config(format!("invalid conv layer {layer:?}")));
                }
            }
        }
        Ok(())
    }

    /// Product of the pooling factors.
    pub fn stride(&self) -> usize {
        1 << self.layers.iter().filter(|l| **l == Layer::MaxPool).count()
    }

    pub fn out_channels(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Conv { out_channels, .. } => Some(*out_channels),
                Layer::MaxPool => None,
            })
            .unwrap_or(self.in_channels)
    }

    /// `(out, in, kernel)` for every convolution in order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut channels = self.in_channels;
        let mut shapes = Vec::new();
        for layer in &self.layers {
            if let Layer::Conv {
                out_channels,
                kernel,
                ..
            } = *layer
            {
                shapes.push((out_channels, channels, kernel));
                channels = out_channels;
            }
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_shapes()
            .iter()
            .map(|&(o, i, k)| o * i * k * k + o)
            .sum()
    }
}

/// Weights `(out, in, k, k)` and bias `(out)` of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// All trainable tensors of a network, convolution by convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub convs: Vec<ConvParams<T>>,
}

impl<T: Real> Params<T> {
    pub fn zeros(spec: &NetSpec) -> Self {
        let convs = spec
            .conv_shapes()
            .into_iter()
            .map(|(o, i, k)| ConvParams {
                weight: Tensor::zeros(&[o, i, k, k]),
                bias: Tensor::zeros(&[o]),
            })
            .collect();
        Self { convs }
    }

    /// He-style uniform init, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases.
    pub fn he_uniform(spec: &NetSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(spec);
        for conv in &mut params.convs {
            let s = conv.weight.shape();
            let fan_in = (s[1] * s[2] * s[3]) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for w in conv.weight.data_mut() {
                *w = T::of(rng.random_range(-bound..bound));
            }
        }
        params
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.convs.iter().flat_map(|c| [&c.weight, &c.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.convs
            .iter_mut()
            .flat_map(|c| [&mut c.weight, &mut c.bias])
    }

    pub fn len(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Params<T>) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.tensors_mut().for_each(|t| t.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            convs: self
                .convs
                .iter()
                .map(|c| ConvParams {
                    weight: c.weight.cast(),
                    bias: c.bias.cast(),
                })
                .collect(),
        }
    }

    fn matches(&self, spec: &NetSpec) -> bool {
        let shapes = spec.conv_shapes();
        shapes.len() == self.convs.len()
            && shapes.iter().zip(&self.convs).all(|(&(o, i, k), c)| {
                c.weight.shape() == [o, i, k, k] && c.bias.shape() == [o]
            })
    }
}

/// Parameter gradients share the parameter layout.
pub type Grads<T> = Params<T>;

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Conv {
        geometry: ConvGeometry,
        conv_index: usize,
        activation: Activation,
        cols: Vec<T>,
        output: Vec<T>,
    },
    Pool {
        channels: usize,
        height: usize,
        width: usize,
        argmax: Vec<usize>,
    },
}

/// Activations recorded by [`Network::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    spec: NetSpec,
    input_shape: [usize; 3],
    output_shape: [usize; 3],
    layers: Vec<LayerCache<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output_shape(&self) -> [usize; 3] {
        self.output_shape
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetSpec,
    params: Params<T>,
}

impl<T: Real> Network<T> {
    pub fn new(spec: NetSpec, params: Params<T>) -> Result<Self> {
        spec.validate()?;
        if !params.matches(&spec) {
            return Err(Error::Shape("parameters do not match the network spec".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn with_seed(spec: NetSpec, seed: u64) -> Result<Self> {
        let params = Params::he_uniform(&spec, seed);
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<[usize; 3]> {
        let [c, h, w] = <[usize; 3]>::try_from(shape)
            .map_err(|_| Error::Shape(format!("expected (C, H, W) input, got {shape:?}")))?;
        let stride = self.spec.stride();
        if c != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "input has {c} channels, network expects {}",
                self.spec.in_channels
            )));
        }
        if h == 0 || w == 0 || h % stride != 0 || w % stride != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by the network stride {stride}"
            )));
        }
        Ok([c, h, w])
    }

    /// Output only; skips recording activations.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(input, false).map(|(out, _)| out)
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.run(input, true)
    }

    fn run(&self, input: &Tensor<T>, record: bool) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let input_shape = self.check_input(input.shape())?;
        let [mut c, mut h, mut w] = input_shape;
        let mut current = input.data().to_vec();
        let mut caches = Vec::with_capacity(if record { self.spec.layers.len() } else { 0 });
        let mut conv_index = 0;
        for layer in &self.spec.layers {
            match *layer {
                Layer::Conv {
                    out_channels,
                    kernel,
                    activation,
                } => {
                    let geometry = ConvGeometry {
                        in_channels: c,
                        out_channels,
                        kernel,
                        height: h,
                        width: w,
                    };
                    let params = &self.params.convs[conv_index];
                    let mut cols = Vec::new();
                    layers::im2col(&current, &geometry, &mut cols);
                    let mut out = Vec::new();
                    layers::conv_forward(
                        &geometry,
                        params.weight.data(),
                        params.bias.data(),
                        &cols,
                        &mut out,
                    );
                    if activation == Activation::Leaky {
                        layers::leaky_relu_inplace(&mut out);
                    }
                    if record {
                        caches.push(LayerCache::Conv {
                            geometry,
                            conv_index,
                            activation,
                            cols,
                            output: out.clone(),
                        });
                    }
                    current = out;
                    c = out_channels;
                    conv_index += 1;
                }
                Layer::MaxPool => {
                    let mut out = Vec::new();
                    let mut argmax = Vec::new();
                    layers::maxpool_forward(&current, c, h, w, &mut out, &mut argmax);
                    if record {
                        caches.push(LayerCache::Pool {
                            channels: c,
                            height: h,
                            width: w,
                            argmax,
                        });
                    }
                    current = out;
                    h /= 2;
                    w /= 2;
                }
            }
        }
        let output_shape = [c, h, w];
        let cache = ForwardCache {
            spec: self.spec.clone(),
            input_shape,
            output_shape,
            layers: caches,
        };
        Ok((Tensor::from_vec(&output_shape, current)?, cache))
    }

    /// Exact gradients of `<forward(input), output_gradient>` with respect to
    /// the parameters and the input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        output_gradient: &Tensor<T>,
    ) -> Result<(Grads<T>, Tensor<T>)> {
        if cache.spec != self.spec || cache.layers.len() != self.spec.layers.len() {
            return Err(Error::Usage(
                "forward cache does not belong to this network (or was not recorded)".into(),
            ));
        }
        if output_gradient.shape() != cache.output_shape {
            return Err(Error::Shape(format!(
                "output gradient {:?}, forward produced {:?}",
                output_gradient.shape(),
                cache.output_shape
            )));
        }
        let mut grads = Params::zeros(&self.spec);
        let mut grad = output_gradient.data().to_vec();
        let mut scratch = Vec::new();
        for layer in cache.layers.iter().rev() {
            match layer {
                LayerCache::Conv {
                    geometry,
                    conv_index,
                    activation,
                    cols,
                    output,
                } => {
                    if *activation == Activation::Leaky {
                        layers::leaky_relu_backward_inplace(output, &mut grad);
                    }
                    let params = &self.params.convs[*conv_index];
                    let g = &mut grads.convs[*conv_index];
                    layers::conv_backward(
                        geometry,
                        params.weight.data(),
                        cols,
                        &grad,
                        g.weight.data_mut(),
                        g.bias.data_mut(),
                        &mut scratch,
                    );
                    let mut grad_in = vec![T::zero(); geometry.in_channels * geometry.pixels()];
                    layers::col2im(&scratch, geometry, &mut grad_in);
                    grad = grad_in;
                }
                LayerCache::Pool {
                    channels,
                    height,
                    width,
                    argmax,
                } => {
                    let mut grad_in = vec![T::zero(); channels * height * width];
                    layers::maxpool_backward(&grad, argmax, &mut grad_in);
                    grad = grad_in;
                }
            }
        }
        Ok((grads, Tensor::from_vec(&cache.input_shape, grad)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_family() {
        let spec = NetSpec::miniature(45);
        let convs = spec.conv_shapes();
        assert_eq!(convs.len(), 7);
        assert_eq!(spec.layers.iter().filter(|l| **l == Layer::MaxPool).count(), 5);
        assert_eq!(spec.stride(), 32);
        assert_eq!(spec.out_channels(), 45);
        assert_eq!(convs[6], (45, 128, 1));
        assert_eq!(Params::<f32>::zeros(&spec).len(), spec.parameter_count());
    }

    #[test]
    fn output_is_input_over_stride() {
        let net = Network::<f32>::with_seed(NetSpec::miniature(45), 0).unwrap();
        let (out, cache) = net.forward(&Tensor::zeros(&[1, 128, 256])).unwrap();
        assert_eq!(out.shape(), &[45, 4, 8]);
        assert_eq!(cache.output_shape(), [45, 4, 8]);
    }

    #[test]
    fn indivisible_input_is_a_shape_error() {
        let net = Network::<f32>::with_seed(NetSpec::miniature(45), 0).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(&[1, 127, 256])),
            Err(Error::Shape(_))
        ));
        assert!(net.forward(&Tensor::zeros(&[2, 128, 256])).is_err());
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let spec = NetSpec::miniature(45);
        let net = Network::<f64>::new(spec.clone(), Params::zeros(&spec)).unwrap();
        let input = Tensor::from_vec(&[1, 64, 64], (0..4096).map(|i| i as f64 / 4096.0).collect())
            .unwrap();
        let out = net.predict(&input).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let spec = NetSpec::from_widths(&[4, 4], 3);
        let net = Network::<f64>::with_seed(spec, 3).unwrap();
        let input = Tensor::from_vec(&[1, 4, 4], (0..16).map(|i| i as f64 * 0.1).collect())
            .unwrap();
        let (out, cache) = net.forward(&input).unwrap();
        let (grads, gin) = net.backward(&cache, &Tensor::zeros(out.shape())).unwrap();
        assert!(grads.tensors().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(gin.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn foreign_cache_is_rejected() {
        let a = Network::<f64>::with_seed(NetSpec::from_widths(&[4, 4], 3), 0).unwrap();
        let b = Network::<f64>::with_seed(NetSpec::from_widths(&[4, 8], 3), 0).unwrap();
        let input = Tensor::zeros(&[1, 4, 4]);
        let (out, cache) = a.forward(&input).unwrap();
        assert!(matches!(
            b.backward(&cache, &Tensor::zeros(out.shape())),
            Err(Error::Usage(_))
        ));
        let (_, no_record) = a.run(&input, false).unwrap();
        assert!(a.backward(&no_record, &Tensor::zeros(out.shape())).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::<f32>::with_seed(NetSpec::miniature(45), 11).unwrap();
        let input = Tensor::from_vec(&[1, 32, 64], (0..2048).map(|i| (i % 7) as f32).collect())
            .unwrap();
        assert_eq!(net.predict(&input).unwrap(), net.predict(&input).unwrap());
    }
}

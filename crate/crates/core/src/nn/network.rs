use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{validate_chain, LayerSpec, Shape};
use crate::error::{Error, Result};

/// A feed-forward network whose parameters live in one flat vector.
///
/// Layer `k` owns `params[offsets[k]..offsets[k] + layers[k].param_count()]`.
/// Dense weights are stored row-major as `[outputs x inputs]` followed by the
/// bias; conv weights as `[out_channels x in_channels x kernel x kernel]`
/// followed by the bias.
#[derive(Debug)]
pub struct Network {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    forwards: AtomicU64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            layers: self.layers.clone(),
            offsets: self.offsets.clone(),
            params: self.params.clone(),
            forwards: AtomicU64::new(0),
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params
    }
}

/// Cached layer inputs from a forward pass; the last entry is the output.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.activations.pop().expect("trace holds at least the input")
    }
}

impl Network {
    /// Builds a network with all parameters set to zero.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        validate_chain(&layers)?;
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for layer in &layers {
            offsets.push(total);
            total += layer.param_count();
        }
        Ok(Network {
            layers,
            offsets,
            params: vec![0.0; total],
            forwards: AtomicU64::new(0),
        })
    }

    /// Uniform Glorot initialization for weights, zero biases.
    pub fn init<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut net = Network::zeros(layers)?;
        for (k, layer) in net.layers.iter().enumerate() {
            let (fan_in, fan_out) = layer.fans();
            let weights = layer.param_count().saturating_sub(bias_len(layer));
            if weights == 0 {
                continue;
            }
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let start = net.offsets[k];
            for p in &mut net.params[start..start + weights] {
                *p = rng.gen_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    /// Dense/ReLU stack: `input -> hidden[0] -> ... -> output`, no final activation.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Network::init(mlp_layers(Shape::flat(input), hidden, output), rng)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                context: "set_params",
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input_shape().len()
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].output_shape().len()
    }

    /// Number of forward passes (single or batched) evaluated so far.
    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    /// Overwrites this network's parameters with `src`'s.
    pub fn copy_params_from(&mut self, src: &Network) -> Result<()> {
        if self.layers != src.layers {
            return Err(Error::Config(
                "cannot copy parameters between networks with different layer specs".into(),
            ));
        }
        self.params.copy_from_slice(&src.params);
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over a batch laid out as `[examples x input_len]`.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input)?;
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let mut x = input.to_owned();
        for k in 0..self.layers.len() {
            x = self.layer_forward(k, x.view());
        }
        Ok(x)
    }

    /// [`Network::forward_batch`] that evaluates each distinct input row once
    /// (rows compared bit for bit) and copies results to the duplicates.
    pub fn forward_distinct(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input)?;
        let mut index = HashMap::with_capacity(input.nrows());
        let mut first = Vec::new();
        let slot: Vec<usize> = input
            .outer_iter()
            .enumerate()
            .map(|(r, row)| {
                let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
                *index.entry(key).or_insert_with(|| {
                    first.push(r);
                    first.len() - 1
                })
            })
            .collect();
        if first.len() == input.nrows() {
            return self.forward_batch(input);
        }
        let unique = input.select(Axis(0), &first);
        let out = self.forward_batch(unique.view())?;
        Ok(out.select(Axis(0), &slot))
    }

    /// Forward pass that keeps every intermediate activation for [`Network::backward`].
    pub fn forward_trace(&self, input: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(input)?;
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for k in 0..self.layers.len() {
            let next = self.layer_forward(k, activations[k].view());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Smallest `|x|` over every ReLU input of the batch: how far the pass
    /// sits from a kink.
    pub fn relu_margin(&self, input: ArrayView2<f64>) -> Result<f64> {
        let trace = self.forward_trace(input)?;
        Ok(self
            .layers
            .iter()
            .zip(&trace.activations)
            .filter(|(layer, _)| matches!(layer, LayerSpec::Relu { .. }))
            .flat_map(|(_, x)| x.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min))
    }

    /// Gradient of `sum(upstream * output)` with respect to the parameters,
    /// summed over the batch.
    pub fn backward(&self, trace: &Trace, upstream: ArrayView2<f64>) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(trace, upstream, &mut grad)?;
        Ok(grad)
    }

    /// Like [`Network::backward`] but accumulates into `grad`.
    pub fn backward_into(
        &self,
        trace: &Trace,
        upstream: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::Shape {
                context: "backward gradient buffer",
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::Config("trace was produced by a different network".into()));
        }
        let out = trace.output();
        if upstream.dim() != out.dim() {
            return Err(Error::Shape {
                context: "backward upstream gradient",
                expected: out.len(),
                actual: upstream.len(),
            });
        }
        let mut g = upstream.to_owned();
        for k in (0..self.layers.len()).rev() {
            let need_input_grad = k > 0;
            g = self.layer_backward(k, trace.activations[k].view(), g.view(), grad, need_input_grad);
        }
        Ok(())
    }

    fn check_input(&self, input: ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_len() {
            return Err(Error::Shape {
                context: "network input",
                expected: self.input_len(),
                actual: input.ncols(),
            });
        }
        Ok(())
    }

    fn layer_params(&self, k: usize) -> &[f64] {
        let start = self.offsets[k];
        &self.params[start..start + self.layers[k].param_count()]
    }

    fn layer_forward(&self, k: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let p = self.layer_params(k);
        match self.layers[k] {
            LayerSpec::Dense { input, outputs } => {
                let n_in = input.len();
                let w = ArrayView2::from_shape((outputs, n_in), &p[..outputs * n_in])
                    .expect("dense weight slice");
                let b = ArrayView1::from(&p[outputs * n_in..]);
                let mut y = x.dot(&w.t());
                y += &b;
                y
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                height,
                width,
                kernel,
            } => {
                let geo = ConvGeometry {
                    in_channels,
                    height,
                    width,
                    kernel,
                };
                let rows = in_channels * kernel * kernel;
                let w = ArrayView2::from_shape((out_channels, rows), &p[..out_channels * rows])
                    .expect("conv weight slice");
                let bias = &p[out_channels * rows..];
                let hw = height * width;
                let mut y = Array2::zeros((x.nrows(), out_channels * hw));
                let mut cols = Array2::zeros((rows, hw));
                for (xe, mut ye) in x.outer_iter().zip(y.outer_iter_mut()) {
                    geo.im2col(xe.as_slice().expect("contiguous row"), &mut cols);
                    let mut ye2 = ArrayViewMut2::from_shape(
                        (out_channels, hw),
                        ye.as_slice_mut().expect("contiguous row"),
                    )
                    .expect("conv output slice");
                    for (c, mut plane) in ye2.outer_iter_mut().enumerate() {
                        plane.fill(bias[c]);
                    }
                    general_mat_mul(1.0, &w, &cols, 1.0, &mut ye2);
                }
                y
            }
            LayerSpec::Relu { .. } => x.mapv(|v| if v > 0.0 { v } else { 0.0 }),
        }
    }

    /// Accumulates this layer's parameter gradient and returns the gradient
    /// with respect to its input (empty when `need_input_grad` is false).
    fn layer_backward(
        &self,
        k: usize,
        x: ArrayView2<f64>,
        g: ArrayView2<f64>,
        grad: &mut [f64],
        need_input_grad: bool,
    ) -> Array2<f64> {
        let start = self.offsets[k];
        let p = self.layer_params(k);
        match self.layers[k] {
            LayerSpec::Dense { input, outputs } => {
                let n_in = input.len();
                let gl = &mut grad[start..start + outputs * n_in + outputs];
                let (gw, gb) = gl.split_at_mut(outputs * n_in);
                let mut gw = ArrayViewMut2::from_shape((outputs, n_in), gw).expect("dense grad");
                general_mat_mul(1.0, &g.t(), &x, 1.0, &mut gw);
                for (acc, s) in gb.iter_mut().zip(g.sum_axis(Axis(0)).iter()) {
                    *acc += s;
                }
                if !need_input_grad {
                    return Array2::zeros((0, 0));
                }
                let w = ArrayView2::from_shape((outputs, n_in), &p[..outputs * n_in])
                    .expect("dense weight slice");
                g.dot(&w)
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                height,
                width,
                kernel,
            } => {
                let geo = ConvGeometry {
                    in_channels,
                    height,
                    width,
                    kernel,
                };
                let rows = in_channels * kernel * kernel;
                let hw = height * width;
                let w = ArrayView2::from_shape((out_channels, rows), &p[..out_channels * rows])
                    .expect("conv weight slice");
                let gl = &mut grad[start..start + out_channels * rows + out_channels];
                let (gw, gb) = gl.split_at_mut(out_channels * rows);
                let mut gw = ArrayViewMut2::from_shape((out_channels, rows), gw).expect("conv grad");
                let mut dx = if need_input_grad {
                    Array2::zeros((x.nrows(), in_channels * hw))
                } else {
                    Array2::zeros((0, 0))
                };
                let mut cols = Array2::zeros((rows, hw));
                let mut dcols = Array2::zeros((rows, hw));
                for (e, (xe, ge)) in x.outer_iter().zip(g.outer_iter()).enumerate() {
                    let ge = ge
                        .into_shape_with_order((out_channels, hw))
                        .expect("conv upstream slice");
                    geo.im2col(xe.as_slice().expect("contiguous row"), &mut cols);
                    general_mat_mul(1.0, &ge, &cols.t(), 1.0, &mut gw);
                    for (c, plane) in ge.outer_iter().enumerate() {
                        gb[c] += plane.sum();
                    }
                    if need_input_grad {
                        general_mat_mul(1.0, &w.t(), &ge, 0.0, &mut dcols);
                        let mut row = dx.row_mut(e);
                        geo.col2im(&dcols, row.as_slice_mut().expect("contiguous row"));
                    }
                }
                dx
            }
            LayerSpec::Relu { .. } => {
                if !need_input_grad {
                    return Array2::zeros((0, 0));
                }
                let mut dx = g.to_owned();
                dx.zip_mut_with(&x, |d, &xi| {
                    if xi <= 0.0 {
                        *d = 0.0;
                    }
                });
                dx
            }
        }
    }
}

fn bias_len(layer: &LayerSpec) -> usize {
    match *layer {
        LayerSpec::Dense { outputs, .. } => outputs,
        LayerSpec::Conv2d { out_channels, .. } => out_channels,
        LayerSpec::Relu { .. } => 0,
    }
}

/// Layer list for a dense/ReLU stack starting from an arbitrary input shape.
pub fn mlp_layers(input: Shape, hidden: &[usize], output: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(2 * hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        layers.push(LayerSpec::Dense { input: prev, outputs: h });
        layers.push(LayerSpec::relu(h));
        prev = Shape::flat(h);
    }
    layers.push(LayerSpec::Dense {
        input: prev,
        outputs: output,
    });
    layers
}

struct ConvGeometry {
    in_channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
}

impl ConvGeometry {
    /// `cols[(c, ky, kx), (y, x)] = input[c, y + ky - pad, x + kx - pad]`, zero outside.
    fn im2col(&self, input: &[f64], cols: &mut Array2<f64>) {
        let (h, w, k) = (self.height, self.width, self.kernel);
        let pad = (k / 2) as isize;
        for c in 0..self.in_channels {
            let plane = &input[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let mut row = cols.row_mut((c * k + ky) * k + kx);
                    let row = row.as_slice_mut().expect("contiguous row");
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        for x in 0..w {
                            let sx = x as isize + kx as isize - pad;
                            row[y * w + x] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                plane[sy as usize * w + sx as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvGeometry::im2col`].
    fn col2im(&self, cols: &Array2<f64>, out: &mut [f64]) {
        let (h, w, k) = (self.height, self.width, self.kernel);
        let pad = (k / 2) as isize;
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = cols.row((c * k + ky) * k + kx);
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + kx as isize - pad;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            out[c * h * w + sy as usize * w + sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// Serializable snapshot of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCheckpoint {
    pub version: u32,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

pub const NETWORK_CHECKPOINT_VERSION: u32 = 1;

impl From<&Network> for NetworkCheckpoint {
    fn from(net: &Network) -> Self {
        NetworkCheckpoint {
            version: NETWORK_CHECKPOINT_VERSION,
            layers: net.layers.clone(),
            params: net.params.clone(),
        }
    }
}

impl TryFrom<NetworkCheckpoint> for Network {
    type Error = Error;

    fn try_from(ckpt: NetworkCheckpoint) -> Result<Self> {
        if ckpt.version != NETWORK_CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported network checkpoint version {}",
                ckpt.version
            )));
        }
        let mut net = Network::zeros(ckpt.layers)?;
        net.set_params(&ckpt.params)?;
        Ok(net)
    }
}

impl Serialize for Network {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetworkCheckpoint::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Network {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ckpt = NetworkCheckpoint::deserialize(d)?;
        Network::try_from(ckpt).map_err(serde::de::Error::custom)
    }
}

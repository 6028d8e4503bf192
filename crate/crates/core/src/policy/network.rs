//! Convolutional actor-critic network with hand-written backpropagation.
//!
//! The input is a `height × width × channels` grid (rows are actions, columns
//! are history steps). A stack of 3×3 same-padded convolutions is followed by
//! fully connected layers; every hidden layer uses ReLU. The last layer emits
//! one logit per action plus a scalar state value.
//!
//! Activations are stored channels-last as `[batch·height·width, channels]`
//! matrices so convolutions become an im2col followed by one GEMM.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Output channels of each 3×3 convolution.
    pub conv: Vec<usize>,
    /// Widths of the hidden fully connected layers.
    pub hidden: Vec<usize>,
    pub actions: usize,
}

impl NetworkSpec {
    /// Five convolutions (32/32/64/64/64) and fully connected 256/128/actions+1.
    pub fn standard(height: usize, width: usize, channels: usize, actions: usize) -> Self {
        Self {
            height,
            width,
            channels,
            conv: vec![32, 32, 64, 64, 64],
            hidden: vec![256, 128],
            actions,
        }
    }

    /// Same topology at a fraction of the width, for CPU-budget training.
    pub fn compact(height: usize, width: usize, channels: usize, actions: usize) -> Self {
        Self {
            height,
            width,
            channels,
            conv: vec![8, 8, 16, 16, 16],
            hidden: vec![64, 32],
            actions,
        }
    }

    pub fn input_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn outputs(&self) -> usize {
        self.actions + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 || self.actions == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if self.conv.iter().chain(&self.hidden).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    fn layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut cin = self.channels;
        for &cout in &self.conv {
            let rows = 9 * cin;
            layers.push(Layer {
                kind: Kind::Conv,
                rows,
                cols: cout,
                w: offset,
                b: offset + rows * cout,
                relu: true,
            });
            offset += rows * cout + cout;
            cin = cout;
        }
        let mut inp = self.height * self.width * cin;
        let widths = self.hidden.iter().copied().chain(std::iter::once(self.outputs()));
        let n_dense = self.hidden.len() + 1;
        for (i, out) in widths.enumerate() {
            layers.push(Layer {
                kind: Kind::Dense,
                rows: inp,
                cols: out,
                w: offset,
                b: offset + inp * out,
                relu: i + 1 < n_dense,
            });
            offset += inp * out + out;
            inp = out;
        }
        layers
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.rows * l.cols + l.cols).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Conv,
    Dense,
}

/// Weight matrix `[rows, cols]` at `w`, bias `[cols]` at `b`, in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    kind: Kind,
    rows: usize,
    cols: usize,
    w: usize,
    b: usize,
    relu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    params: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Per layer: im2col matrix (conv) or flattened input (dense).
    inputs: Vec<Array2<f64>>,
    /// Per layer: pre-activation output.
    outputs: Vec<Array2<f64>>,
}

/// Network output for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    /// `[batch, actions]`
    pub logits: Array2<f64>,
    /// `[batch]`
    pub values: Array1<f64>,
}

impl Network {
    /// He-initialized weights, zero biases. The policy logits start near zero
    /// so the initial action distribution is close to uniform.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layers();
        let mut params = vec![0.0; spec.param_count()];
        let last = layers.len() - 1;
        for (li, l) in layers.iter().enumerate() {
            let std = (2.0 / l.rows as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for r in 0..l.rows {
                for c in 0..l.cols {
                    let mut x = normal.sample(rng);
                    if li == last {
                        x *= if c < spec.actions { 0.01 } else { 0.5 };
                    }
                    params[l.w + r * l.cols + c] = x;
                }
            }
        }
        Ok(Self {
            spec,
            layers,
            params,
        })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Dimension {
                what: "network parameters",
                expected: spec.param_count(),
                actual: params.len(),
            });
        }
        let layers = spec.layers();
        Ok(Self {
            spec,
            layers,
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weights(&self, l: &Layer) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.rows, l.cols), &self.params[l.w..l.w + l.rows * l.cols])
            .expect("layer shape")
    }

    fn bias(&self, l: &Layer) -> &[f64] {
        &self.params[l.b..l.b + l.cols]
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Output> {
        self.forward_cached(input, batch).map(|(o, _)| o)
    }

    pub fn forward_cached(&self, input: &[f64], batch: usize) -> Result<(Output, ForwardCache)> {
        let spec = &self.spec;
        if batch == 0 || input.len() != batch * spec.input_len() {
            return Err(Error::Dimension {
                what: "network input",
                expected: batch * spec.input_len(),
                actual: input.len(),
            });
        }
        let (h, w) = (spec.height, spec.width);
        let mut act = Array2::from_shape_vec((batch * h * w, spec.channels), input.to_vec())
            .expect("input shape");
        let mut cache = ForwardCache {
            batch,
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let mut flattened = false;
        for l in &self.layers {
            let x = match l.kind {
                Kind::Conv => im2col(&act, batch, h, w),
                Kind::Dense => {
                    if !flattened {
                        let cols = act.len() / batch;
                        act = act.into_shape_with_order((batch, cols)).expect("flatten");
                        flattened = true;
                    }
                    act
                }
            };
            let mut z = Array2::zeros((x.nrows(), l.cols));
            general_mat_mul(1.0, &x, &self.weights(l), 0.0, &mut z);
            let b = self.bias(l);
            for mut row in z.rows_mut() {
                for (v, bb) in row.iter_mut().zip(b) {
                    *v += bb;
                }
            }
            act = if l.relu { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            cache.inputs.push(x);
            cache.outputs.push(z);
        }
        let logits = act.slice(s![.., ..spec.actions]).to_owned();
        let values = act.column(spec.actions).to_owned();
        Ok((Output { logits, values }, cache))
    }

    /// Gradient of a scalar loss with respect to all parameters, given its
    /// gradient with respect to the raw outputs `[batch, actions + 1]`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(cache, d_out, &mut grad);
        grad
    }

    pub fn backward_into(&self, cache: &ForwardCache, d_out: &Array2<f64>, grad: &mut [f64]) {
        let spec = &self.spec;
        let batch = cache.batch;
        let (h, w) = (spec.height, spec.width);
        let mut g = d_out.clone();
        let n_conv = spec.conv.len();
        for (li, l) in self.layers.iter().enumerate().rev() {
            if l.relu {
                g.zip_mut_with(&cache.outputs[li], |gv, &z| {
                    if z <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            let x = &cache.inputs[li];
            {
                let (wpart, rest) = grad[l.w..].split_at_mut(l.rows * l.cols);
                let mut dw = ArrayViewMut2::from_shape((l.rows, l.cols), wpart).expect("grad shape");
                general_mat_mul(1.0, &x.t(), &g, 1.0, &mut dw);
                let db = g.sum_axis(Axis(0));
                let bpart = &mut rest[..l.cols];
                for (gb, v) in bpart.iter_mut().zip(db.iter()) {
                    *gb += v;
                }
            }
            if li == 0 {
                break;
            }
            let mut dx = Array2::zeros((x.nrows(), l.rows));
            general_mat_mul(1.0, &g, &self.weights(l).t(), 0.0, &mut dx);
            g = match l.kind {
                Kind::Conv => col2im(&dx, batch, h, w),
                Kind::Dense if li == n_conv && n_conv > 0 => {
                    let c = spec.conv[n_conv - 1];
                    dx.into_shape_with_order((batch * h * w, c)).expect("unflatten")
                }
                Kind::Dense => dx,
            };
        }
    }
}

/// `[B·H·W, C]` → `[B·H·W, 9·C]` with zero padding; column block `kh*3 + kw`
/// holds the neighbour at offset `(kh - 1, kw - 1)`.
fn im2col(x: &Array2<f64>, batch: usize, h: usize, w: usize) -> Array2<f64> {
    let c = x.ncols();
    let mut cols = Array2::zeros((batch * h * w, 9 * c));
    let src = x.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("standard layout");
    for b in 0..batch {
        for i in 0..h {
            for j in 0..w {
                let row = (b * h + i) * w + j;
                for kh in 0..3 {
                    let ii = i as isize + kh as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for kw in 0..3 {
                        let jj = j as isize + kw as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let srow = (b * h + ii as usize) * w + jj as usize;
                        let d0 = row * 9 * c + (kh * 3 + kw) * c;
                        dst[d0..d0 + c].copy_from_slice(&src[srow * c..srow * c + c]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &Array2<f64>, batch: usize, h: usize, w: usize) -> Array2<f64> {
    let c = cols.ncols() / 9;
    let mut x = Array2::zeros((batch * h * w, c));
    let src = cols.as_slice().expect("standard layout");
    let dst = x.as_slice_mut().expect("standard layout");
    for b in 0..batch {
        for i in 0..h {
            for j in 0..w {
                let row = (b * h + i) * w + j;
                for kh in 0..3 {
                    let ii = i as isize + kh as isize - 1;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for kw in 0..3 {
                        let jj = j as isize + kw as isize - 1;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let drow = (b * h + ii as usize) * w + jj as usize;
                        let s0 = row * 9 * c + (kh * 3 + kw) * c;
                        for ch in 0..c {
                            dst[drow * c + ch] += src[s0 + ch];
                        }
                    }
                }
            }
        }
    }
    x
}

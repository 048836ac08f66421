//! Fully connected networks with a batched forward pass and exact
//! reverse-mode gradients.
//!
//! Parameters live in one flat vector, layer by layer: the `out × in`
//! row-major weight matrix followed by the `out` biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline(always)]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline(always)]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline(always)]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Layer widths (`layers + 1` entries) and per-layer activations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpShape {
    /// `input → hidden… → output`, ReLU on hidden layers.
    pub fn new(input: usize, hidden: &[usize], output: usize, output_activation: Activation) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut activations = vec![Activation::Relu; hidden.len()];
        activations.push(output_activation);
        MlpShape {
            widths,
            activations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.activations.len() != self.widths.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "mlp shape needs one activation per layer, got widths {:?} and {} activations",
                self.widths,
                self.activations.len()
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument("mlp layer of width 0".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Offset of layer `l`'s weight block in the flat parameter vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.widths[..=l].windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    shape: MlpShape,
    pub params: Vec<f64>,
}

/// Activations retained by a batched forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    rows: usize,
    widths: Vec<usize>,
    /// `acts[0]` is the input, `acts[l + 1]` the activated output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.acts.pop().unwrap()
    }
}

impl MlpParams {
    pub fn zeros(shape: MlpShape) -> Result<Self> {
        shape.validate()?;
        let n = shape.param_count();
        Ok(MlpParams {
            shape,
            params: vec![0.0; n],
        })
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn xavier<R: Rng + ?Sized>(shape: MlpShape, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        for l in 0..p.shape.layers() {
            let (fan_in, fan_out) = (p.shape.widths[l], p.shape.widths[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let off = p.shape.layer_offset(l);
            for w in &mut p.params[off..off + fan_in * fan_out] {
                *w = rng.gen_range(-limit..=limit);
            }
        }
        Ok(p)
    }

    pub fn from_parts(shape: MlpShape, params: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if params.len() != shape.param_count() {
            return Err(Error::dims("mlp parameters", shape.param_count(), params.len()));
        }
        Ok(MlpParams { shape, params })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let off = self.shape.layer_offset(l);
        &self.params[off..off + self.shape.widths[l] * self.shape.widths[l + 1]]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let off = self.shape.layer_offset(l);
        let n = self.shape.widths[l] * self.shape.widths[l + 1];
        &mut self.params[off..off + n]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let off = self.shape.layer_offset(l) + self.shape.widths[l] * self.shape.widths[l + 1];
        &self.params[off..off + self.shape.widths[l + 1]]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let off = self.shape.layer_offset(l) + self.shape.widths[l] * self.shape.widths[l + 1];
        let n = self.shape.widths[l + 1];
        &mut self.params[off..off + n]
    }

    /// Forward pass over `rows` inputs stored row-major.
    pub fn forward_batch(&self, input: Vec<f64>, rows: usize) -> Result<MlpCache> {
        let in_dim = self.shape.input_dim();
        if input.len() != rows * in_dim {
            return Err(Error::dims("mlp input", rows * in_dim, input.len()));
        }
        let mut acts = Vec::with_capacity(self.shape.layers() + 1);
        acts.push(input);
        for l in 0..self.shape.layers() {
            let (i, o) = (self.shape.widths[l], self.shape.widths[l + 1]);
            let mut out = vec![0.0; rows * o];
            let bias = self.bias(l);
            for r in 0..rows {
                out[r * o..(r + 1) * o].copy_from_slice(bias);
            }
            // out (rows × o) += x (rows × i) · Wᵀ (i × o)
            gemm(
                rows,
                i,
                o,
                acts.last().unwrap(),
                (i, 1),
                self.weights(l),
                (1, i),
                1.0,
                &mut out,
                (o, 1),
            );
            let act = self.shape.activations[l];
            if act != Activation::Identity {
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            acts.push(out);
        }
        Ok(MlpCache {
            rows,
            widths: self.shape.widths.clone(),
            acts,
        })
    }

    /// Single-vector forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let cache = self.forward_batch(input.to_vec(), 1)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Backpropagates `upstream` (gradient w.r.t. the cached output),
    /// accumulating parameter gradients into `grads` and returning the
    /// gradient w.r.t. the cached input.
    pub fn backward_into(
        &self,
        cache: &MlpCache,
        upstream: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if cache.widths != self.shape.widths || cache.acts.len() != self.shape.layers() + 1 {
            return Err(Error::StaleCache("mlp cache built for a different network shape"));
        }
        if grads.len() != self.params.len() {
            return Err(Error::dims("mlp gradient buffer", self.params.len(), grads.len()));
        }
        let rows = cache.rows;
        if upstream.len() != rows * self.shape.output_dim() {
            return Err(Error::dims(
                "mlp upstream gradient",
                rows * self.shape.output_dim(),
                upstream.len(),
            ));
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.shape.layers()).rev() {
            let (i, o) = (self.shape.widths[l], self.shape.widths[l + 1]);
            let act = self.shape.activations[l];
            if act != Activation::Identity {
                for (d, &y) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= act.derivative_from_output(y);
                }
            }
            let off = self.shape.layer_offset(l);
            let (gw, rest) = grads[off..].split_at_mut(i * o);
            let gb = &mut rest[..o];
            // dW (o × i) += deltaᵀ (o × rows) · x (rows × i)
            gemm(o, rows, i, &delta, (1, o), &cache.acts[l], (i, 1), 1.0, gw, (i, 1));
            for r in 0..rows {
                for (g, d) in gb.iter_mut().zip(&delta[r * o..(r + 1) * o]) {
                    *g += d;
                }
            }
            // dx (rows × i) = delta (rows × o) · W (o × i)
            let mut dx = vec![0.0; rows * i];
            gemm(rows, o, i, &delta, (o, 1), self.weights(l), (i, 1), 0.0, &mut dx, (i, 1));
            delta = dx;
        }
        Ok(delta)
    }

    /// Returns `(parameter gradients, input gradient)`.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let dx = self.backward_into(cache, upstream, &mut grads)?;
        Ok((grads, dx))
    }
}

/// `c = a · b + beta · c` with explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(c.len() > last(m, n, rsc, csc));
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > last(m, k, rsa, csa));
    assert!(b.len() > last(k, n, rsb, csb));
    // SAFETY: the asserts above bound every strided access inside the slices.
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
            csc as isize,
        );
    }
}

//! Feed-forward networks over flat parameter vectors.
//!
//! A network is described by an [`MlpSpec`] and its weights live in a separate
//! [`ParamVector`], so online and target copies of a critic share one spec.
//!
//! Parameter layout, in order:
//!
//! - optional layer norm: `gain[input_dim]`, then `shift[input_dim]`
//! - for each dense layer `in -> out`: weights `[in][out]` (input-major, so the
//!   forward pass is a sequence of contiguous axpy updates), then `bias[out]`
//!
//! Hidden layers apply the configured activation; the output layer is linear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};

/// Variance floor of the input layer normalization.
pub const LAYER_NORM_VAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    #[inline]
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DenseSlot {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: usize,
}

/// Shape of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    input_dim: usize,
    hidden: Vec<usize>,
    output_dim: usize,
    activation: Activation,
    layer_norm_first: bool,
    layers: Vec<DenseSlot>,
    param_count: usize,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
        activation: Activation,
        layer_norm_first: bool,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidSpec(
                "input and output dimensions must be >= 1".into(),
            ));
        }
        if hidden.is_empty() {
            return Err(Error::InvalidSpec("hidden layer list is empty".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::InvalidSpec("hidden widths must be >= 1".into()));
        }

        let mut offset = if layer_norm_first { 2 * input_dim } else { 0 };
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &fan_out in hidden.iter().chain(std::iter::once(&output_dim)) {
            let w_off = offset;
            let b_off = w_off + fan_in * fan_out;
            offset = b_off + fan_out;
            layers.push(DenseSlot {
                fan_in,
                fan_out,
                w_off,
                b_off,
            });
            fan_in = fan_out;
        }

        Ok(Self {
            input_dim,
            hidden,
            output_dim,
            activation,
            layer_norm_first,
            layers,
            param_count: offset,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layer_norm_first(&self) -> bool {
        self.layer_norm_first
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Stable 64-bit fingerprint of the shape, stored next to serialized parameters.
    pub fn hash(&self) -> u64 {
        let desc = format!(
            "mlp:v1;in={};hidden={:?};out={};act={};ln={}",
            self.input_dim,
            self.hidden,
            self.output_dim,
            self.activation.name(),
            self.layer_norm_first
        );
        let digest = Sha256::digest(desc.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }

    /// Range of the weight matrix of the output layer.
    pub fn output_weight_range(&self) -> std::ops::Range<usize> {
        let last = self.layers[self.layers.len() - 1];
        last.w_off..last.b_off
    }

    /// Range of the bias vector of the output layer.
    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        let last = self.layers[self.layers.len() - 1];
        last.b_off..last.b_off + last.fan_out
    }

    /// Deterministic initialization: weights uniform in `±1/sqrt(fan_in)`,
    /// biases zero, layer-norm gain one and shift zero.
    ///
    /// With zero output biases a `[mean; log_std]` policy head starts with a
    /// log-std centered on zero, i.e. unit standard deviation.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; self.param_count];
        if self.layer_norm_first {
            values[..self.input_dim].fill(1.0);
        }
        for layer in &self.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut values[layer.w_off..layer.b_off] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        ParamVector(values)
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        check_dim("parameter vector", self.param_count, params.len())
    }

    /// Forward pass recording every intermediate needed by [`MlpSpec::backward`].
    pub fn forward_tape<'t>(
        &self,
        params: &[f64],
        x: &[f64],
        tape: &'t mut Tape,
    ) -> Result<&'t [f64]> {
        self.check_params(params)?;
        check_dim("network input", self.input_dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        tape.prepare(self);
        tape.raw_input.copy_from_slice(x);

        if self.layer_norm_first {
            let n = self.input_dim as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            tape.ln_floored = var < LAYER_NORM_VAR_FLOOR;
            let inv_sigma = 1.0 / var.max(LAYER_NORM_VAR_FLOOR).sqrt();
            tape.ln_inv_sigma = inv_sigma;
            let gain = &params[..self.input_dim];
            let shift = &params[self.input_dim..2 * self.input_dim];
            let layer_in = &mut tape.inputs[0];
            for i in 0..self.input_dim {
                let xh = (x[i] - mean) * inv_sigma;
                tape.ln_xhat[i] = xh;
                layer_in[i] = gain[i] * xh + shift[i];
            }
        } else {
            tape.inputs[0].copy_from_slice(x);
        }

        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = tape.inputs.split_at_mut(l + 1);
            let input = &before[l];
            let z = &mut tape.pre[l];
            z.copy_from_slice(&params[layer.b_off..layer.b_off + layer.fan_out]);
            let w = &params[layer.w_off..layer.b_off];
            for (i, &xi) in input.iter().enumerate() {
                let row = &w[i * layer.fan_out..(i + 1) * layer.fan_out];
                for (zj, &wij) in z.iter_mut().zip(row) {
                    *zj += xi * wij;
                }
            }
            if l + 1 < n_layers {
                let h = &mut after[0];
                for (hj, &zj) in h.iter_mut().zip(z.iter()) {
                    *hj = self.activation.apply(zj);
                }
            }
        }
        Ok(&tape.pre[n_layers - 1])
    }

    /// Reverse pass for the tape of the most recent `forward_tape` call.
    ///
    /// Accumulates (adds) `d<upstream, f(x)>/d params` into `grad_params` and
    /// overwrites `grad_input` with `d<upstream, f(x)>/dx`.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &mut Tape,
        upstream: &[f64],
        mut grad_params: Option<&mut [f64]>,
        grad_input: Option<&mut [f64]>,
    ) -> Result<()> {
        self.check_params(params)?;
        check_dim("upstream gradient", self.output_dim, upstream.len())?;
        if let Some(g) = grad_params.as_deref() {
            check_dim("parameter gradient", self.param_count, g.len())?;
        }
        if let Some(g) = grad_input.as_deref() {
            check_dim("input gradient", self.input_dim, g.len())?;
        }
        let need_input = grad_input.is_some();

        let n_layers = self.layers.len();
        tape.delta[n_layers - 1].copy_from_slice(upstream);
        for l in (0..n_layers).rev() {
            let layer = self.layers[l];
            if let Some(g) = grad_params.as_deref_mut() {
                let delta = &tape.delta[l];
                let input = &tape.inputs[l];
                let (gw, gb) = g[layer.w_off..layer.b_off + layer.fan_out]
                    .split_at_mut(layer.b_off - layer.w_off);
                for (i, &xi) in input.iter().enumerate() {
                    let row = &mut gw[i * layer.fan_out..(i + 1) * layer.fan_out];
                    for (gij, &dj) in row.iter_mut().zip(delta) {
                        *gij += xi * dj;
                    }
                }
                for (gbj, &dj) in gb.iter_mut().zip(delta) {
                    *gbj += dj;
                }
            }
            if l == 0 && !need_input && !(self.layer_norm_first && grad_params.is_some()) {
                break;
            }
            // d/d(layer input)
            let w = &params[layer.w_off..layer.b_off];
            let (lower, upper) = tape.delta.split_at_mut(l);
            let delta = &upper[0];
            let back = if l > 0 {
                &mut lower[l - 1]
            } else {
                &mut tape.d_input
            };
            for (i, bi) in back.iter_mut().enumerate() {
                *bi = dot(&w[i * layer.fan_out..(i + 1) * layer.fan_out], delta);
            }
            if l > 0 {
                let z = &tape.pre[l - 1];
                let h = &tape.inputs[l];
                for ((bi, &zi), &hi) in back.iter_mut().zip(z).zip(h) {
                    *bi *= self.activation.derivative(zi, hi);
                }
            }
        }

        if self.layer_norm_first {
            let n = self.input_dim;
            let gain = &params[..n];
            // d_input currently holds dL/d(layer-norm output)
            if let Some(g) = grad_params {
                for i in 0..n {
                    g[i] += tape.d_input[i] * tape.ln_xhat[i];
                    g[n + i] += tape.d_input[i];
                }
            }
            if let Some(out) = grad_input {
                let nf = n as f64;
                let mut mean_dxh = 0.0;
                let mut mean_dxh_xh = 0.0;
                for (d, (g, xh)) in tape.d_input.iter().zip(gain.iter().zip(&tape.ln_xhat)) {
                    let dxh = d * g;
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh;
                }
                mean_dxh /= nf;
                mean_dxh_xh /= nf;
                for i in 0..n {
                    let dxh = tape.d_input[i] * gain[i];
                    let centered = if tape.ln_floored {
                        dxh - mean_dxh
                    } else {
                        dxh - mean_dxh - tape.ln_xhat[i] * mean_dxh_xh
                    };
                    out[i] = tape.ln_inv_sigma * centered;
                }
            }
        } else if let Some(out) = grad_input {
            out.copy_from_slice(&tape.d_input);
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        Ok(self.forward_tape(params.as_slice(), x, &mut tape)?.to_vec())
    }

    pub fn grad_params(
        &self,
        params: &ParamVector,
        x: &[f64],
        upstream: &[f64],
    ) -> Result<ParamVector> {
        let mut tape = Tape::default();
        self.forward_tape(params.as_slice(), x, &mut tape)?;
        let mut grad = vec![0.0; self.param_count];
        self.backward(
            params.as_slice(),
            &mut tape,
            upstream,
            Some(&mut grad),
            None,
        )?;
        Ok(ParamVector(grad))
    }

    pub fn grad_input(
        &self,
        params: &ParamVector,
        x: &[f64],
        upstream: &[f64],
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        self.forward_tape(params.as_slice(), x, &mut tape)?;
        let mut grad = vec![0.0; self.input_dim];
        self.backward(
            params.as_slice(),
            &mut tape,
            upstream,
            None,
            Some(&mut grad),
        )?;
        Ok(grad)
    }
}

/// Four-accumulator dot product; fixed summation order keeps it deterministic.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Scratch storage for one forward/backward pass. Reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    raw_input: Vec<f64>,
    ln_xhat: Vec<f64>,
    ln_inv_sigma: f64,
    ln_floored: bool,
    /// Input to each dense layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each dense layer; the last one is the network output.
    pre: Vec<Vec<f64>>,
    /// dL/d(pre-activation) per layer.
    delta: Vec<Vec<f64>>,
    d_input: Vec<f64>,
}

impl Tape {
    fn prepare(&mut self, spec: &MlpSpec) {
        let n = spec.layers.len();
        if self.inputs.len() == n
            && self.raw_input.len() == spec.input_dim
            && self
                .pre
                .iter()
                .zip(&spec.layers)
                .all(|(p, l)| p.len() == l.fan_out)
        {
            return;
        }
        self.raw_input = vec![0.0; spec.input_dim];
        self.ln_xhat = vec![0.0; spec.input_dim];
        self.d_input = vec![0.0; spec.input_dim];
        self.inputs = spec.layers.iter().map(|l| vec![0.0; l.fan_in]).collect();
        self.pre = spec.layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
        self.delta = self.pre.clone();
    }

    /// Output of the last forward pass.
    pub fn output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Scratch storage for a batched forward/backward pass; rows are samples.
#[derive(Debug, Clone, Default)]
pub struct BatchTape {
    rows: usize,
    ln_xhat: Vec<f64>,
    ln_inv_sigma: Vec<f64>,
    ln_floored: Vec<bool>,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    d_input: Vec<f64>,
}

impl BatchTape {
    fn prepare(&mut self, spec: &MlpSpec, rows: usize) {
        if self.rows == rows
            && self.inputs.len() == spec.layers.len()
            && self.d_input.len() == rows * spec.input_dim
            && self
                .pre
                .iter()
                .zip(&spec.layers)
                .all(|(p, l)| p.len() == rows * l.fan_out)
        {
            return;
        }
        self.rows = rows;
        self.ln_xhat = vec![0.0; rows * spec.input_dim];
        self.ln_inv_sigma = vec![0.0; rows];
        self.ln_floored = vec![false; rows];
        self.d_input = vec![0.0; rows * spec.input_dim];
        self.inputs = spec
            .layers
            .iter()
            .map(|l| vec![0.0; rows * l.fan_in])
            .collect();
        self.pre = spec
            .layers
            .iter()
            .map(|l| vec![0.0; rows * l.fan_out])
            .collect();
        self.delta = self.pre.clone();
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Row-major `rows x output_dim` output of the last batched forward pass.
    pub fn output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// `C = alpha * A B + beta * C` on row-major or strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every element addressed by the given shapes and
    // strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl MlpSpec {
    /// Batched forward pass over `xs`, a row-major `rows x input_dim` matrix.
    /// Returns the row-major `rows x output_dim` outputs.
    pub fn forward_batch<'t>(
        &self,
        params: &[f64],
        xs: &[f64],
        rows: usize,
        tape: &'t mut BatchTape,
    ) -> Result<&'t [f64]> {
        self.check_params(params)?;
        if rows == 0 {
            return Err(Error::EmptyBatch);
        }
        check_dim("batched network input", rows * self.input_dim, xs.len())?;
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        tape.prepare(self, rows);
        let n_in = self.input_dim;

        if self.layer_norm_first {
            let gain = &params[..n_in];
            let shift = &params[n_in..2 * n_in];
            let nf = n_in as f64;
            for r in 0..rows {
                let x = &xs[r * n_in..(r + 1) * n_in];
                let mean = x.iter().sum::<f64>() / nf;
                let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                tape.ln_floored[r] = var < LAYER_NORM_VAR_FLOOR;
                let inv_sigma = 1.0 / var.max(LAYER_NORM_VAR_FLOOR).sqrt();
                tape.ln_inv_sigma[r] = inv_sigma;
                for i in 0..n_in {
                    let xh = (x[i] - mean) * inv_sigma;
                    tape.ln_xhat[r * n_in + i] = xh;
                    tape.inputs[0][r * n_in + i] = gain[i] * xh + shift[i];
                }
            }
        } else {
            tape.inputs[0].copy_from_slice(xs);
        }

        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = tape.inputs.split_at_mut(l + 1);
            let input = &before[l];
            let z = &mut tape.pre[l];
            let bias = &params[layer.b_off..layer.b_off + layer.fan_out];
            for row in z.chunks_exact_mut(layer.fan_out) {
                row.copy_from_slice(bias);
            }
            let w = &params[layer.w_off..layer.b_off];
            gemm(
                rows,
                layer.fan_in,
                layer.fan_out,
                input,
                (layer.fan_in as isize, 1),
                w,
                (layer.fan_out as isize, 1),
                1.0,
                z,
            );
            if l + 1 < n_layers {
                for (hj, &zj) in after[0].iter_mut().zip(z.iter()) {
                    *hj = self.activation.apply(zj);
                }
            }
        }
        Ok(&tape.pre[n_layers - 1])
    }

    /// Reverse pass for the most recent [`MlpSpec::forward_batch`] call.
    ///
    /// `upstream` is `rows x output_dim`. Accumulates the parameter gradient of
    /// `Σ_rows <upstream_row, f(x_row)>` into `grad_params` and overwrites
    /// `grad_input` (`rows x input_dim`) with the per-row input gradients.
    pub fn backward_batch(
        &self,
        params: &[f64],
        tape: &mut BatchTape,
        upstream: &[f64],
        mut grad_params: Option<&mut [f64]>,
        grad_input: Option<&mut [f64]>,
    ) -> Result<()> {
        self.check_params(params)?;
        let rows = tape.rows;
        check_dim(
            "batched upstream gradient",
            rows * self.output_dim,
            upstream.len(),
        )?;
        if let Some(g) = grad_params.as_deref() {
            check_dim("parameter gradient", self.param_count, g.len())?;
        }
        if let Some(g) = grad_input.as_deref() {
            check_dim("batched input gradient", rows * self.input_dim, g.len())?;
        }
        let need_input = grad_input.is_some();
        let n_layers = self.layers.len();
        tape.delta[n_layers - 1].copy_from_slice(upstream);

        for l in (0..n_layers).rev() {
            let layer = self.layers[l];
            if let Some(g) = grad_params.as_deref_mut() {
                let delta = &tape.delta[l];
                let input = &tape.inputs[l];
                let (gw, gb) = g[layer.w_off..layer.b_off + layer.fan_out]
                    .split_at_mut(layer.b_off - layer.w_off);
                // dW += Xᵀ Δ
                gemm(
                    layer.fan_in,
                    rows,
                    layer.fan_out,
                    input,
                    (1, layer.fan_in as isize),
                    delta,
                    (layer.fan_out as isize, 1),
                    1.0,
                    gw,
                );
                for row in delta.chunks_exact(layer.fan_out) {
                    for (gbj, &dj) in gb.iter_mut().zip(row) {
                        *gbj += dj;
                    }
                }
            }
            if l == 0 && !need_input && !(self.layer_norm_first && grad_params.is_some()) {
                break;
            }
            let w = &params[layer.w_off..layer.b_off];
            let (lower, upper) = tape.delta.split_at_mut(l);
            let back = if l > 0 {
                &mut lower[l - 1]
            } else {
                &mut tape.d_input
            };
            // dX = Δ Wᵀ
            gemm(
                rows,
                layer.fan_out,
                layer.fan_in,
                &upper[0],
                (layer.fan_out as isize, 1),
                w,
                (1, layer.fan_out as isize),
                0.0,
                back,
            );
            if l > 0 {
                let z = &tape.pre[l - 1];
                let h = &tape.inputs[l];
                for ((bi, &zi), &hi) in back.iter_mut().zip(z).zip(h) {
                    *bi *= self.activation.derivative(zi, hi);
                }
            }
        }

        let n = self.input_dim;
        if self.layer_norm_first {
            let gain = &params[..n];
            if let Some(g) = grad_params {
                for r in 0..rows {
                    for i in 0..n {
                        let d = tape.d_input[r * n + i];
                        g[i] += d * tape.ln_xhat[r * n + i];
                        g[n + i] += d;
                    }
                }
            }
            if let Some(out) = grad_input {
                let nf = n as f64;
                for r in 0..rows {
                    let d_in = &tape.d_input[r * n..(r + 1) * n];
                    let xhat = &tape.ln_xhat[r * n..(r + 1) * n];
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for i in 0..n {
                        let dxh = d_in[i] * gain[i];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xhat[i];
                    }
                    mean_dxh /= nf;
                    mean_dxh_xh /= nf;
                    for i in 0..n {
                        let dxh = d_in[i] * gain[i];
                        let centered = if tape.ln_floored[r] {
                            dxh - mean_dxh
                        } else {
                            dxh - mean_dxh - xhat[i] * mean_dxh_xh
                        };
                        out[r * n + i] = tape.ln_inv_sigma[r] * centered;
                    }
                }
            }
        } else if let Some(out) = grad_input {
            out.copy_from_slice(&tape.d_input);
        }
        Ok(())
    }
}

/// Flat parameter storage for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    /// Wraps values without the finiteness check of [`ParamVector::from_vec`].
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParamVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `spec hash (u64) | length (u64) | values (f64)`, all little-endian.
    pub fn write_le(&self, spec_hash: u64, out: &mut Vec<u8>) {
        out.extend_from_slice(&spec_hash.to_le_bytes());
        out.extend_from_slice(&(self.0.len() as u64).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Inverse of [`ParamVector::write_le`]; returns the vector and bytes consumed.
    pub fn read_le(bytes: &[u8], expected_hash: u64) -> Result<(Self, usize)> {
        let header = bytes
            .get(..16)
            .ok_or_else(|| Error::Checkpoint("truncated parameter header".into()))?;
        let hash = u64::from_le_bytes(header[..8].try_into().unwrap());
        if hash != expected_hash {
            return Err(Error::Checkpoint(format!(
                "spec hash mismatch: stored {hash:016x}, expected {expected_hash:016x}"
            )));
        }
        let len = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let body = len
            .checked_mul(8)
            .and_then(|n| bytes.get(16..16 + n))
            .ok_or_else(|| Error::Checkpoint("truncated parameter body".into()))?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((ParamVector(values), 16 + 8 * len))
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    spec.init_params(seed)
}

pub fn forward(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    spec.forward(params, x)
}

pub fn grad_params(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &[f64],
    upstream: &[f64],
) -> Result<ParamVector> {
    spec.grad_params(params, x, upstream)
}

pub fn grad_input(
    spec: &MlpSpec,
    params: &ParamVector,
    x: &[f64],
    upstream: &[f64],
) -> Result<Vec<f64>> {
    spec.grad_input(params, x, upstream)
}

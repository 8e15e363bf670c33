//! Dense feed-forward networks with analytic gradients and Adam.
//!
//! A [`DenseNet`] standardises its input, runs a stack of affine layers with a
//! tanh or ReLU non-linearity on every hidden layer, and de-standardises the
//! linear head. All parameters live in one flat vector so optimisers and
//! serialisers can treat them uniformly. Per layer the layout is the weight
//! matrix (row-major, `out x in`) followed by the bias vector.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::shape_err;
use crate::math;
use crate::rng;
use crate::{Error, Result};

/// Smallest standard deviation a [`Normalizer`] will store.
pub const STD_FLOOR: f64 = 1e-8;

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
            Activation::Tanh => math::tanh(z),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Squared,
    Absolute,
}

/// Hidden-layer layout used when building a network for a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            activation: Activation::Tanh,
        }
    }
}

impl Architecture {
    pub fn new(hidden: Vec<usize>, activation: Activation) -> Self {
        Self { hidden, activation }
    }

    pub fn layer_sizes(&self, in_dim: usize, out_dim: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(in_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(out_dim);
        sizes
    }
}

/// Per-dimension affine standardisation `z = (x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(shape_err!(
                "normalizer mean has {} entries, std has {}",
                mean.len(),
                std.len()
            ));
        }
        if !math::all_finite(&mean) || !math::all_finite(&std) {
            return Err(Error::Numeric("normalizer statistics".into()));
        }
        let std = std.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    /// Fits mean and population standard deviation over row-major `rows`.
    pub fn fit(rows: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || rows.len() % dim != 0 {
            return Err(shape_err!("{} values do not form rows of {}", rows.len(), dim));
        }
        let n = rows.len() / dim;
        if n == 0 {
            return Ok(Self::identity(dim));
        }
        let mut mean = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for row in rows.chunks_exact(dim) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = x - m;
                *v += d * d;
            }
        }
        let std = var.into_iter().map(|v| math::sqrt(v / n as f64)).collect();
        Self::new(mean, std)
    }

    /// Like [`Normalizer::fit`] but constant columns get unit std, so that
    /// round-off in a constant input is not blown up by the floor.
    pub fn fit_input(rows: &[f64], dim: usize) -> Result<Self> {
        let mut n = Self::fit(rows, dim)?;
        n.std.iter_mut().filter(|s| **s <= STD_FLOOR).for_each(|s| *s = 1.0);
        Ok(n)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn standardize_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, (o, v)) in out.iter_mut().zip(x).enumerate() {
            *o = (v - self.mean[i]) / self.std[i];
        }
    }

    #[inline]
    pub fn destandardize_into(&self, z: &[f64], out: &mut [f64]) {
        for (i, (o, v)) in out.iter_mut().zip(z).enumerate() {
            *o = self.mean[i] + self.std[i] * v;
        }
    }
}

/// Activations recorded during a forward pass, consumed by [`DenseNet::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    batch: usize,
    /// `acts[0]` is the standardised input, `acts[l]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Multi-layer perceptron with input/output standardisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    input_norm: Normalizer,
    output_norm: Normalizer,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenseNet {
    /// Builds a network with weights drawn uniformly from `±1/sqrt(fan_in)`
    /// and zero biases.
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        let mut rng = rng::seeded(seed);
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / math::sqrt(fan_in as f64);
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng::uniform(&mut rng, -bound, bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn with_architecture(in_dim: usize, out_dim: usize, arch: &Architecture, seed: u64) -> Result<Self> {
        Self::new(&arch.layer_sizes(in_dim, out_dim), arch.activation, seed)
    }

    /// All parameters zero, identity normalisation.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(alloc::format!(
                "layer sizes must have at least two positive entries, got {layer_sizes:?}"
            )));
        }
        let n_layers = layer_sizes.len() - 1;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activations: vec![activation; n_layers - 1],
            params: vec![0.0; param_count(layer_sizes)],
            input_norm: Normalizer::identity(layer_sizes[0]),
            output_norm: Normalizer::identity(layer_sizes[n_layers]),
        })
    }

    pub fn from_parts(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        params: Vec<f64>,
        input_norm: Normalizer,
        output_norm: Normalizer,
    ) -> Result<Self> {
        let net = Self {
            layer_sizes,
            activations,
            params,
            input_norm,
            output_norm,
        };
        net.validate()?;
        Ok(net)
    }

    /// Checks structural invariants; used after deserialisation.
    pub fn validate(&self) -> Result<()> {
        let sizes = &self.layer_sizes;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(shape_err!("bad layer sizes {sizes:?}"));
        }
        if self.activations.len() != sizes.len() - 2 {
            return Err(shape_err!(
                "{} activations for {} hidden layers",
                self.activations.len(),
                sizes.len() - 2
            ));
        }
        if self.params.len() != param_count(sizes) {
            return Err(shape_err!(
                "{} parameters, layer sizes {sizes:?} need {}",
                self.params.len(),
                param_count(sizes)
            ));
        }
        if self.input_norm.dim() != self.in_dim() || self.output_norm.dim() != self.out_dim() {
            return Err(shape_err!("normalizer dimensions do not match layer sizes"));
        }
        if self.input_norm.std.iter().chain(&self.output_norm.std).any(|s| !(*s >= STD_FLOOR)) {
            return Err(Error::Domain("normalizer std below floor".into()));
        }
        if !math::all_finite(&self.params) {
            return Err(Error::Numeric("network parameters".into()));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_norm(&self) -> &Normalizer {
        &self.input_norm
    }

    pub fn output_norm(&self) -> &Normalizer {
        &self.output_norm
    }

    pub fn set_normalization(&mut self, input: Normalizer, output: Normalizer) -> Result<()> {
        if input.dim() != self.in_dim() || output.dim() != self.out_dim() {
            return Err(shape_err!(
                "normalizers ({}, {}) for a {} -> {} network",
                input.dim(),
                output.dim(),
                self.in_dim(),
                self.out_dim()
            ));
        }
        self.input_norm = input;
        self.output_norm = output;
        Ok(())
    }

    /// Weight matrix and bias of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let offset = param_count(&self.layer_sizes[..=l]);
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = &self.params[offset..offset + i * o];
        let b = &self.params[offset + i * o..offset + i * o + o];
        (w, b)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let offset = param_count(&self.layer_sizes[..=l]);
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let (w, rest) = self.params[offset..].split_at_mut(i * o);
        (w, &mut rest[..o])
    }

    /// Evaluates a single input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.forward_batch(input, 1, &mut out)?;
        Ok(out)
    }

    /// Evaluates `batch` row-major inputs into `out` (resized to `batch x out_dim`).
    pub fn forward_batch(&self, inputs: &[f64], batch: usize, out: &mut Vec<f64>) -> Result<()> {
        self.check_input(inputs, batch)?;
        let mut cur = vec![0.0; batch * self.in_dim()];
        for (src, dst) in inputs.chunks_exact(self.in_dim()).zip(cur.chunks_exact_mut(self.in_dim())) {
            self.input_norm.standardize_into(src, dst);
        }
        let mut next = Vec::new();
        let n_layers = self.layer_sizes.len() - 1;
        for l in 0..n_layers {
            self.affine(l, &cur, batch, &mut next);
            if l + 1 < n_layers {
                let act = self.activations[l];
                next.iter_mut().for_each(|z| *z = act.apply(*z));
            }
            core::mem::swap(&mut cur, &mut next);
        }
        out.resize(batch * self.out_dim(), 0.0);
        for (src, dst) in cur.chunks_exact(self.out_dim()).zip(out.chunks_exact_mut(self.out_dim())) {
            self.output_norm.destandardize_into(src, dst);
        }
        Ok(())
    }

    /// Forward pass that records activations for a later [`DenseNet::backward`].
    pub fn forward_taped(&self, inputs: &[f64], batch: usize, tape: &mut Tape, out: &mut Vec<f64>) -> Result<()> {
        self.check_input(inputs, batch)?;
        let n_layers = self.layer_sizes.len() - 1;
        tape.batch = batch;
        tape.acts.resize_with(n_layers + 1, Vec::new);
        let in_dim = self.in_dim();
        tape.acts[0].resize(batch * in_dim, 0.0);
        for (src, dst) in inputs.chunks_exact(in_dim).zip(tape.acts[0].chunks_exact_mut(in_dim)) {
            self.input_norm.standardize_into(src, dst);
        }
        for l in 0..n_layers {
            let (head, tail) = tape.acts.split_at_mut(l + 1);
            let next = &mut tail[0];
            self.affine(l, &head[l], batch, next);
            if l + 1 < n_layers {
                let act = self.activations[l];
                next.iter_mut().for_each(|z| *z = act.apply(*z));
            }
        }
        let od = self.out_dim();
        out.resize(batch * od, 0.0);
        for (src, dst) in tape.acts[n_layers].chunks_exact(od).zip(out.chunks_exact_mut(od)) {
            self.output_norm.destandardize_into(src, dst);
        }
        Ok(())
    }

    /// Back-propagates `grad_out` (gradient w.r.t. the de-standardised outputs
    /// of the taped pass). Parameter gradients are *added* to `grad_params`;
    /// when `grad_input` is given it is overwritten with the gradient w.r.t. the
    /// raw inputs.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) -> Result<()> {
        let batch = tape.batch;
        let n_layers = self.layer_sizes.len() - 1;
        if tape.acts.len() != n_layers + 1 {
            return Err(Error::State("tape was not recorded by this network".into()));
        }
        if grad_out.len() != batch * self.out_dim() {
            return Err(shape_err!("output gradient has {} values, expected {}", grad_out.len(), batch * self.out_dim()));
        }
        if grad_params.len() != self.params.len() {
            return Err(shape_err!("parameter gradient has {} values, expected {}", grad_params.len(), self.params.len()));
        }
        let od = self.out_dim();
        let mut delta: Vec<f64> = grad_out
            .chunks_exact(od)
            .flat_map(|row| row.iter().zip(&self.output_norm.std).map(|(g, s)| g * s))
            .collect();
        let mut prev = Vec::new();
        let want_input = grad_input.is_some();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let offset = param_count(&self.layer_sizes[..=l]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let (gw, gb) = grad_params[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let input = &tape.acts[l];
            for b in 0..batch {
                let x = &input[b * fan_in..(b + 1) * fan_in];
                let d = &delta[b * fan_out..(b + 1) * fan_out];
                for (o, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        math::axpy(dv, x, &mut gw[o * fan_in..(o + 1) * fan_in]);
                        gb[o] += dv;
                    }
                }
            }
            if l == 0 && !want_input {
                break;
            }
            prev.clear();
            prev.resize(batch * fan_in, 0.0);
            for b in 0..batch {
                let d = &delta[b * fan_out..(b + 1) * fan_out];
                let p = &mut prev[b * fan_in..(b + 1) * fan_in];
                for (o, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        math::axpy(dv, &weights[o * fan_in..(o + 1) * fan_in], p);
                    }
                }
            }
            if l > 0 {
                let act = self.activations[l - 1];
                for (p, y) in prev.iter_mut().zip(&tape.acts[l]) {
                    *p *= act.derivative_from_output(*y);
                }
            }
            core::mem::swap(&mut delta, &mut prev);
        }
        if let Some(gi) = grad_input {
            let id = self.in_dim();
            if gi.len() != batch * id {
                return Err(shape_err!("input gradient buffer has {} values, expected {}", gi.len(), batch * id));
            }
            for (row_out, row_in) in gi.chunks_exact_mut(id).zip(delta.chunks_exact(id)) {
                for ((g, d), s) in row_out.iter_mut().zip(row_in).zip(&self.input_norm.std) {
                    *g = d / s;
                }
            }
        }
        Ok(())
    }

    fn check_input(&self, inputs: &[f64], batch: usize) -> Result<()> {
        if inputs.len() != batch * self.in_dim() {
            return Err(shape_err!(
                "input has {} values, expected {} x {}",
                inputs.len(),
                batch,
                self.in_dim()
            ));
        }
        Ok(())
    }

    fn affine(&self, l: usize, input: &[f64], batch: usize, out: &mut Vec<f64>) {
        let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let (w, bias) = self.layer(l);
        out.clear();
        out.resize(batch * fan_out, 0.0);
        for (x, y) in input.chunks_exact(fan_in).zip(out.chunks_exact_mut(fan_out)) {
            for (o, yo) in y.iter_mut().enumerate() {
                *yo = bias[o] + math::dot(&w[o * fan_in..(o + 1) * fan_in], x);
            }
        }
    }
}

/// Mean loss over all output entries of residuals measured in standardised
/// output units, plus its gradient w.r.t. the (de-standardised) outputs.
///
/// The absolute loss uses subgradient 0 at exact zeros.
pub fn loss_and_grad(outputs: &[f64], targets: &[f64], norm: &Normalizer, loss: Loss) -> Result<(f64, Vec<f64>)> {
    if outputs.len() != targets.len() {
        return Err(shape_err!("{} outputs vs {} targets", outputs.len(), targets.len()));
    }
    let dim = norm.dim();
    if outputs.is_empty() || outputs.len() % dim != 0 {
        return Err(shape_err!("{} values do not form a non-empty batch of width {}", outputs.len(), dim));
    }
    let scale = 1.0 / outputs.len() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; outputs.len()];
    for (i, ((y, t), g)) in outputs.iter().zip(targets).zip(grad.iter_mut()).enumerate() {
        let s = norm.std[i % dim];
        let r = (y - t) / s;
        match loss {
            Loss::Squared => {
                total += r * r;
                *g = 2.0 * r * scale / s;
            }
            Loss::Absolute => {
                total += r.abs();
                *g = if r > 0.0 {
                    scale / s
                } else if r < 0.0 {
                    -scale / s
                } else {
                    0.0
                };
            }
        }
    }
    Ok((total * scale, grad))
}

/// Batch loss and its exact gradient w.r.t. every network parameter.
pub fn net_gradients(net: &DenseNet, inputs: &[f64], targets: &[f64], batch: usize, loss: Loss) -> Result<(f64, Vec<f64>)> {
    if batch == 0 {
        return Err(shape_err!("empty batch"));
    }
    if !math::all_finite(inputs) || !math::all_finite(targets) {
        return Err(Error::Numeric("training batch contains NaN or infinity".into()));
    }
    if targets.len() != batch * net.out_dim() {
        return Err(shape_err!("targets have {} values, expected {} x {}", targets.len(), batch, net.out_dim()));
    }
    let mut tape = Tape::new();
    let mut out = Vec::new();
    net.forward_taped(inputs, batch, &mut tape, &mut out)?;
    let (value, grad_out) = loss_and_grad(&out, targets, net.output_norm(), loss)?;
    let mut grads = vec![0.0; net.num_params()];
    net.backward(&tape, &grad_out, &mut grads, None)?;
    Ok((value, grads))
}

/// Adam optimiser state with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err!(
                "adam state for {} parameters got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (math::sqrt(v_hat) + self.epsilon);
        }
        Ok(())
    }
}

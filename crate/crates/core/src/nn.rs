//! A small dense MLP with hand-written forward and backward passes.
//!
//! Each layer computes `act(bn(W x + b))`. Batched buffers are row-major with one sample per
//! row. The forward pass is pure; training code folds batch statistics back into the running
//! estimates with [`MlpParams::absorb_batch_stats`].

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, View};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn identity(width: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn: Option<BatchNorm>,
    pub activation: Activation,
}

impl Layer {
    pub fn linear(weight: Vec<f64>, bias: Vec<f64>, in_dim: usize) -> Self {
        let out_dim = bias.len();
        assert_eq!(weight.len(), in_dim * out_dim);
        Layer {
            in_dim,
            out_dim,
            weight,
            bias,
            bn: None,
            activation: Activation::None,
        }
    }

    fn is_plain_linear(&self) -> bool {
        self.bn.is_none() && self.activation == Activation::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Per-layer gradients, shaped like the owning [`Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub layers: Vec<LayerGrad>,
    /// `n × in_dim` gradient with respect to the batch input, when requested.
    pub input: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros_like(params: &MlpParams) -> Self {
        GradientBuffer {
            layers: params
                .layers
                .iter()
                .map(|l| {
                    let bn = if l.bn.is_some() { l.out_dim } else { 0 };
                    LayerGrad {
                        weight: vec![0.0; l.weight.len()],
                        bias: vec![0.0; l.out_dim],
                        gamma: vec![0.0; bn],
                        beta: vec![0.0; bn],
                    }
                })
                .collect(),
            input: Vec::new(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight
                .iter()
                .chain(&l.bias)
                .chain(&l.gamma)
                .chain(&l.beta)
                .all(|&g| g == 0.0)
        }) && self.input.iter().all(|&g| g == 0.0)
    }

    /// Flat views of every parameter gradient, in [`MlpParams::tensors_mut`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight[..]);
            out.push(&l.bias[..]);
            if !l.gamma.is_empty() {
                out.push(&l.gamma[..]);
                out.push(&l.beta[..]);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// Normalized pre-activation, present when the layer has batch norm.
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Post-activation values before dropout, kept only when dropout was applied.
    pre_dropout: Option<Vec<f64>>,
    dropout_mask: Option<Vec<f64>>,
}

/// Activations recorded by [`MlpParams::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub n: usize,
    pub mode: Mode,
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache holds the input at least")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.acts.pop().expect("cache holds the input at least")
    }
}

/// Gradient arriving at the network output.
pub enum Upstream<'a> {
    /// `n × out_dim`, row-major.
    Dense(&'a [f64]),
    /// `(row, channel, value)` triples; repeated entries accumulate.
    Sparse(&'a [(usize, usize, f64)]),
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.out_dim));
        w
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.bn.is_some())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len() + l.bn.as_ref().map_or(0, |_| 4 * l.out_dim))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("mlp has no layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::invalid(format!("layer {i}: parameter shapes disagree")));
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.layers[i - 1].out_dim,
                    actual: l.in_dim,
                    context: "layer chain",
                });
            }
            if let Some(bn) = &l.bn {
                let w = l.out_dim;
                if bn.gamma.len() != w
                    || bn.beta.len() != w
                    || bn.running_mean.len() != w
                    || bn.running_var.len() != w
                {
                    return Err(Error::MissingRunningStats { layer: i });
                }
                if bn.running_var.iter().any(|&v| v.is_nan() || v < 0.0) {
                    return Err(Error::invalid(format!("layer {i}: negative running variance")));
                }
            }
        }
        Ok(())
    }

    /// Mutable flat views of every trainable tensor (weights, biases, BN affine).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight[..]);
            out.push(&mut l.bias[..]);
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.gamma[..]);
                out.push(&mut bn.beta[..]);
            }
        }
        out
    }

    /// Eval-mode forward of a single input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(x, 1, Mode::Eval, None)?.into_output())
    }

    /// Batched forward. `dropout = Some((p, rng))` drops hidden-layer outputs with
    /// probability `p` (inverted scaling) and only takes effect in train mode.
    pub fn forward_batch(
        &self,
        x: &[f64],
        n: usize,
        mode: Mode,
        mut dropout: Option<(f64, &mut dyn RngCore)>,
    ) -> Result<ForwardCache> {
        let in_dim = self.input_dim();
        if x.len() != n * in_dim {
            return Err(Error::DimensionMismatch {
                expected: n * in_dim,
                actual: x.len(),
                context: "mlp input",
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let mut caches = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let mut y = linear_forward(layer, input, n);
            let mut cache = LayerCache {
                xhat: Vec::new(),
                inv_std: Vec::new(),
                batch_mean: Vec::new(),
                batch_var: Vec::new(),
                pre_dropout: None,
                dropout_mask: None,
            };
            if let Some(bn) = &layer.bn {
                bn_forward(bn, &mut y, n, layer.out_dim, mode, &mut cache);
            }
            if layer.activation == Activation::Relu {
                for v in &mut y {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            if let (Mode::Train, Some((p, rng)), true) = (mode, dropout.as_mut(), li < last) {
                if *p > 0.0 {
                    let keep = 1.0 - *p;
                    let mask: Vec<f64> = (0..y.len())
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    cache.pre_dropout = Some(y.clone());
                    for (v, m) in y.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    cache.dropout_mask = Some(mask);
                }
            }
            caches.push(cache);
            acts.push(y);
        }
        Ok(ForwardCache {
            n,
            mode,
            acts,
            layers: caches,
        })
    }

    /// Blends the batch statistics recorded in a train-mode cache into the running estimates.
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache, momentum: f64) {
        if cache.mode != Mode::Train || cache.n < 2 {
            return;
        }
        let unbias = cache.n as f64 / (cache.n as f64 - 1.0);
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let Some(bn) = &mut layer.bn {
                for c in 0..layer.out_dim {
                    bn.running_mean[c] =
                        (1.0 - momentum) * bn.running_mean[c] + momentum * lc.batch_mean[c];
                    bn.running_var[c] =
                        (1.0 - momentum) * bn.running_var[c] + momentum * lc.batch_var[c] * unbias;
                }
            }
        }
    }

    /// Gradients of a scalar loss given its gradient at the network output.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: Upstream<'_>,
        need_input_grad: bool,
    ) -> Result<GradientBuffer> {
        let n = cache.n;
        if cache.layers.len() != self.layers.len() {
            return Err(Error::MissingCache);
        }
        let mut grads = GradientBuffer::zeros_like(self);
        let last = self.layers.len() - 1;
        let out_dim = self.output_dim();

        // Sparse upstream through a plain linear top layer never densifies that layer.
        let (mut delta, start) = match upstream {
            Upstream::Dense(d) => {
                if d.len() != n * out_dim {
                    return Err(Error::DimensionMismatch {
                        expected: n * out_dim,
                        actual: d.len(),
                        context: "upstream gradient",
                    });
                }
                (d.to_vec(), last as isize)
            }
            Upstream::Sparse(entries) => {
                let top = &self.layers[last];
                if top.is_plain_linear() && cache.layers[last].dropout_mask.is_none() {
                    let input = &cache.acts[last];
                    let g = &mut grads.layers[last];
                    let wants_below = last > 0 || need_input_grad;
                    let mut below = if wants_below {
                        vec![0.0; n * top.in_dim]
                    } else {
                        Vec::new()
                    };
                    for &(row, ch, v) in entries {
                        if row >= n || ch >= out_dim {
                            return Err(Error::invalid("sparse upstream entry out of range"));
                        }
                        if v == 0.0 {
                            continue;
                        }
                        let xin = &input[row * top.in_dim..(row + 1) * top.in_dim];
                        let gw = &mut g.weight[ch * top.in_dim..(ch + 1) * top.in_dim];
                        for (a, b) in gw.iter_mut().zip(xin) {
                            *a += v * b;
                        }
                        g.bias[ch] += v;
                        if wants_below {
                            let w = &top.weight[ch * top.in_dim..(ch + 1) * top.in_dim];
                            let dst = &mut below[row * top.in_dim..(row + 1) * top.in_dim];
                            for (a, b) in dst.iter_mut().zip(w) {
                                *a += v * b;
                            }
                        }
                    }
                    if last == 0 {
                        if need_input_grad {
                            grads.input = below;
                        }
                        return Ok(grads);
                    }
                    (below, last as isize - 1)
                } else {
                    let mut d = vec![0.0; n * out_dim];
                    for &(row, ch, v) in entries {
                        if row >= n || ch >= out_dim {
                            return Err(Error::invalid("sparse upstream entry out of range"));
                        }
                        d[row * out_dim + ch] += v;
                    }
                    (d, last as isize)
                }
            }
        };

        let mut li = start;
        while li >= 0 {
            let l = li as usize;
            let layer = &self.layers[l];
            let lc = &cache.layers[l];
            let width = layer.out_dim;
            if let Some(mask) = &lc.dropout_mask {
                for (d, m) in delta.iter_mut().zip(mask) {
                    *d *= m;
                }
            }
            if layer.activation == Activation::Relu {
                let act = lc.pre_dropout.as_ref().unwrap_or(&cache.acts[l + 1]);
                for (d, a) in delta.iter_mut().zip(act) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            if let Some(bn) = &layer.bn {
                let g = &mut grads.layers[l];
                bn_backward(bn, lc, &mut delta, n, width, cache.mode, g);
            }
            let input = &cache.acts[l];
            let g = &mut grads.layers[l];
            // dW = deltaᵀ · X
            gemm(
                1.0,
                View::row_major(&delta, n, width).t(),
                View::row_major(input, n, layer.in_dim),
                0.0,
                &mut g.weight,
            );
            for row in delta.chunks_exact(width) {
                for (b, d) in g.bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if l > 0 || need_input_grad {
                let mut below = vec![0.0; n * layer.in_dim];
                gemm(
                    1.0,
                    View::row_major(&delta, n, width),
                    View::row_major(&layer.weight, width, layer.in_dim),
                    0.0,
                    &mut below,
                );
                delta = below;
            }
            li -= 1;
        }
        if need_input_grad {
            grads.input = delta;
        }
        Ok(grads)
    }

    /// Vector-Jacobian product of a single eval-mode input: `∂(seedᵀ f(x)) / ∂x`.
    pub fn input_vjp(&self, cache: &ForwardCache, row: usize, seed: &[f64]) -> Vec<f64> {
        let out_dim = self.output_dim();
        let mut delta = seed.to_vec();
        debug_assert_eq!(delta.len(), out_dim);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = &cache.acts[l + 1][row * layer.out_dim..(row + 1) * layer.out_dim];
            if layer.activation == Activation::Relu {
                for (d, a) in delta.iter_mut().zip(act) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            if let Some(bn) = &layer.bn {
                for (c, d) in delta.iter_mut().enumerate() {
                    *d *= bn.gamma[c] / (bn.running_var[c] + BN_EPS).sqrt();
                }
            }
            let mut below = vec![0.0; layer.in_dim];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let w = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (b, wv) in below.iter_mut().zip(w) {
                    *b += d * wv;
                }
            }
            delta = below;
        }
        delta
    }
}

fn linear_forward(layer: &Layer, input: &[f64], n: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(n * layer.out_dim);
    for _ in 0..n {
        y.extend_from_slice(&layer.bias);
    }
    gemm(
        1.0,
        View::row_major(input, n, layer.in_dim),
        View::row_major(&layer.weight, layer.out_dim, layer.in_dim).t(),
        1.0,
        &mut y,
    );
    y
}

fn bn_forward(bn: &BatchNorm, y: &mut [f64], n: usize, width: usize, mode: Mode, cache: &mut LayerCache) {
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; width];
            for row in y.chunks_exact(width) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; width];
            for row in y.chunks_exact(width) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    let d = v - m;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; y.len()];
    for (yr, xr) in y.chunks_exact_mut(width).zip(xhat.chunks_exact_mut(width)) {
        for c in 0..width {
            let h = (yr[c] - mean[c]) * inv_std[c];
            xr[c] = h;
            yr[c] = bn.gamma[c] * h + bn.beta[c];
        }
    }
    cache.xhat = xhat;
    cache.inv_std = inv_std;
    cache.batch_mean = mean;
    cache.batch_var = var;
}

fn bn_backward(
    bn: &BatchNorm,
    lc: &LayerCache,
    delta: &mut [f64],
    n: usize,
    width: usize,
    mode: Mode,
    g: &mut LayerGrad,
) {
    let mut sum_d = vec![0.0; width];
    let mut sum_dx = vec![0.0; width];
    for (dr, xr) in delta.chunks_exact(width).zip(lc.xhat.chunks_exact(width)) {
        for c in 0..width {
            sum_d[c] += dr[c];
            sum_dx[c] += dr[c] * xr[c];
        }
    }
    g.beta.copy_from_slice(&sum_d);
    g.gamma.copy_from_slice(&sum_dx);
    match mode {
        Mode::Eval => {
            for dr in delta.chunks_exact_mut(width) {
                for c in 0..width {
                    dr[c] *= bn.gamma[c] * lc.inv_std[c];
                }
            }
        }
        Mode::Train => {
            let nf = n as f64;
            for (dr, xr) in delta.chunks_exact_mut(width).zip(lc.xhat.chunks_exact(width)) {
                for c in 0..width {
                    let gd = bn.gamma[c];
                    dr[c] = gd * lc.inv_std[c] / nf
                        * (nf * dr[c] - sum_d[c] - xr[c] * sum_dx[c]);
                }
            }
        }
    }
}

/// He-uniform initialization. Hidden layers get ReLU (and batch norm when requested);
/// the final layer is plain linear.
pub fn init_params(widths: &[usize], batch_norm: bool, seed: u64) -> MlpParams {
    assert!(widths.len() >= 2, "need at least input and output widths");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = widths.len() - 1;
    let layers = (0..depth)
        .map(|i| {
            let (fan_in, out) = (widths[i], widths[i + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight = (0..fan_in * out)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                .collect();
            let hidden = i + 1 < depth;
            Layer {
                in_dim: fan_in,
                out_dim: out,
                weight,
                bias: vec![0.0; out],
                bn: (hidden && batch_norm).then(|| BatchNorm::identity(out)),
                activation: if hidden { Activation::Relu } else { Activation::None },
            }
        })
        .collect();
    MlpParams { layers }
}

/// Absorbs eval-mode batch normalization into the preceding linear map.
pub fn fold_batchnorm(params: &MlpParams) -> Result<MlpParams> {
    params.validate()?;
    let mut out = params.clone();
    for layer in &mut out.layers {
        let Some(bn) = layer.bn.take() else { continue };
        for o in 0..layer.out_dim {
            let s = bn.gamma[o] / (bn.running_var[o] + BN_EPS).sqrt();
            for w in &mut layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim] {
                *w *= s;
            }
            layer.bias[o] = (layer.bias[o] - bn.running_mean[o]) * s + bn.beta[o];
        }
    }
    Ok(out)
}

/// Single-input forward in the requested mode. In train mode batch statistics degenerate to
/// the sample itself; use [`MlpParams::forward_batch`] for meaningful batch statistics.
pub fn mlp_forward(params: &MlpParams, p: &[f64], mode: Mode) -> Result<Vec<f64>> {
    Ok(params.forward_batch(p, 1, mode, None)?.into_output())
}

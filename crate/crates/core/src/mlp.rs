//! Feed-forward networks with tanh hidden layers, their input Jacobians, and
//! gradients of both the target-fitting loss `E` and the Jacobian-matching
//! loss `E_grad` with respect to every parameter.
//!
//! # Parameter layout
//!
//! Parameters live in one flat vector. For each layer `l` (mapping `n_l`
//! inputs to `n_{l+1}` outputs) the weight matrix comes first, row-major with
//! shape `(n_{l+1}, n_l)`, followed by the `n_{l+1}` biases. Gradients use the
//! same layout, which keeps updates, copies and serialisation trivial.
//!
//! # Losses
//!
//! * `E      = (1/n) Σ ‖z − ẑ‖²`
//! * `E_grad = (1/n) Σ ‖∂z/∂x − ∂ẑ/∂x‖²_F`
//!
//! `∂E_grad/∂θ` is obtained by reverse-differentiating the reverse sweep that
//! produces the input Jacobian (double backpropagation). That needs the second
//! derivative of every activation, which is why hidden units are tanh only.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, format_hex_f64, parse_hex_f64, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

impl OutputActivation {
    fn name(self) -> &'static str {
        match self {
            OutputActivation::Identity => "identity",
            OutputActivation::Sigmoid => "sigmoid",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::Sigmoid => sigmoid(z),
        }
    }

    /// First derivative expressed through the activation value `y`.
    fn slope(self, y: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::Sigmoid => y * (1.0 - y),
        }
    }

    /// Second derivative expressed through the activation value `y`.
    fn curvature(self, y: f64) -> f64 {
        match self {
            OutputActivation::Identity => 0.0,
            OutputActivation::Sigmoid => y * (1.0 - y) * (1.0 - 2.0 * y),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Training triples `{x, z, ∂z/∂x}`.
///
/// `target_grads` row `i` holds the `d_out × d_in` Jacobian of sample `i`,
/// flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GiBatch {
    inputs: Matrix,
    targets: Matrix,
    target_grads: Matrix,
}

impl GiBatch {
    pub fn new(inputs: Matrix, targets: Matrix, target_grads: Matrix) -> Result<Self> {
        let n = inputs.rows();
        if targets.rows() != n {
            return Err(Error::shape("GiBatch targets rows", n, targets.rows()));
        }
        if target_grads.rows() != n {
            return Err(Error::shape("GiBatch target_grads rows", n, target_grads.rows()));
        }
        let jac = targets.cols() * inputs.cols();
        if target_grads.cols() != jac {
            return Err(Error::shape("GiBatch target_grads cols", jac, target_grads.cols()));
        }
        if !(inputs.all_finite() && targets.all_finite() && target_grads.all_finite()) {
            return Err(Error::NonFinite("GiBatch contents".into()));
        }
        Ok(GiBatch {
            inputs,
            targets,
            target_grads,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix {
        &self.targets
    }

    pub fn target_grads(&self) -> &Matrix {
        &self.target_grads
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn target(&self, i: usize) -> &[f64] {
        self.targets.row(i)
    }

    pub fn target_grad(&self, i: usize) -> &[f64] {
        self.target_grads.row(i)
    }

    /// Rows `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> GiBatch {
        let pick = |m: &Matrix| Matrix::from_fn(indices.len(), m.cols(), |r, c| m[(indices[r], c)]);
        GiBatch {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
            target_grads: pick(&self.target_grads),
        }
    }
}

/// Per-sample forward values kept for the backward passes.
struct Trace {
    /// `acts[0]` is the input, `acts[k]` the tanh output of hidden layer `k`,
    /// and the last entry the network output.
    acts: Vec<Vec<f64>>,
}

/// Forward values plus the intermediate products of the Jacobian reverse
/// sweep, ready for reverse differentiation.
pub struct JacobianTape<'a> {
    net: &'a Mlp,
    trace: Trace,
    /// `p[k]`: `d_out × n_k`; `p[0]` is the input Jacobian.
    p: Vec<Matrix>,
    /// `q[k] = p[k] · diag(1 − h_k²)` for hidden layers `k ≥ 1`.
    q: Vec<Matrix>,
}

impl JacobianTape<'_> {
    pub fn output(&self) -> &[f64] {
        self.trace.acts.last().expect("trace has an output layer")
    }

    pub fn jacobian(&self) -> &Matrix {
        &self.p[0]
    }

    /// Pulls a cotangent on the Jacobian back to the parameters and the input.
    pub fn backprop(&self, jac_grad: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let net = self.net;
        if jac_grad.rows() != self.p[0].rows() || jac_grad.cols() != self.p[0].cols() {
            return Err(Error::shape(
                "JacobianTape::backprop",
                self.p[0].rows() * self.p[0].cols(),
                jac_grad.rows() * jac_grad.cols(),
            ));
        }
        let mut grad = vec![0.0; net.params.len()];
        let input_grad = net.jacobian_vjp(&self.trace, &self.p, &self.q, jac_grad, &mut grad);
        Ok((grad, input_grad))
    }
}

/// Forward values for a single sample; supports ordinary backprop.
pub struct ForwardTape<'a> {
    net: &'a Mlp,
    trace: Trace,
}

impl ForwardTape<'_> {
    pub fn output(&self) -> &[f64] {
        self.trace.acts.last().expect("trace has an output layer")
    }

    /// Pulls an output cotangent back to the parameters and the input.
    pub fn backprop(&self, out_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let net = self.net;
        if out_grad.len() != net.output_dim() {
            return Err(Error::shape("ForwardTape::backprop", net.output_dim(), out_grad.len()));
        }
        let mut grad = vec![0.0; net.params.len()];
        let top = out_grad
            .iter()
            .zip(self.output())
            .map(|(g, &y)| g * net.output.slope(y))
            .collect();
        let input_grad = net.backward_from(&self.trace, top, None, &mut grad);
        Ok((grad, input_grad))
    }

    /// Like `backprop`, but the cotangent is on the output pre-activation.
    /// Cross-entropy on a sigmoid output has the stable cotangent `y − t` here.
    pub fn backprop_preactivation(&self, pre_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let net = self.net;
        if pre_grad.len() != net.output_dim() {
            return Err(Error::shape(
                "ForwardTape::backprop_preactivation",
                net.output_dim(),
                pre_grad.len(),
            ));
        }
        let mut grad = vec![0.0; net.params.len()];
        let input_grad = net.backward_from(&self.trace, pre_grad.to_vec(), None, &mut grad);
        Ok((grad, input_grad))
    }
}

/// Result of one parameter update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateReport {
    /// Mean over parameters of `|α·η·g_E| + |(1−α)·η·g_grad|`: the summed
    /// magnitude of both contributions before they can offset each other.
    pub mean_abs_delta: f64,
    /// Mean over parameters of the realised `|θ⁺ − θ|`.
    pub mean_abs_change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    output: OutputActivation,
    params: Vec<f64>,
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(layer_sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::BadParams(format!(
                "layer sizes must have ≥2 nonzero entries, got {layer_sizes:?}"
            )));
        }
        let count = layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Mlp {
            sizes: layer_sizes.to_vec(),
            output,
            params: vec![0.0; count],
        })
    }

    /// Weights drawn from `normal(0, 1/√fan_in)`, biases zero.
    pub fn init(layer_sizes: &[usize], output: OutputActivation, rng: &mut Rng) -> Result<Self> {
        let mut net = Mlp::zeros(layer_sizes, output)?;
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let sd = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.normal(0.0, sd);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(
        layer_sizes: &[usize],
        output: OutputActivation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Mlp::zeros(layer_sizes, output)?;
        if params.len() != net.params.len() {
            return Err(Error::shape("Mlp::from_params", net.params.len(), params.len()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated in constructor")
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

    /// Same architecture, so parameters can be copied across.
    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.output == other.output
    }

    pub fn copy_params_from(&mut self, other: &Mlp) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape("Mlp::copy_params_from", self.params.len(), other.params.len()));
        }
        self.params.copy_from_slice(&other.params);
        Ok(())
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.sizes[..=l].windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn weight(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l);
        &self.params[off..off + self.sizes[l] * self.sizes[l + 1]]
    }

    fn bias(&self, l: usize) -> &[f64] {
        let off = self.layer_offset(l) + self.sizes[l] * self.sizes[l + 1];
        &self.params[off..off + self.sizes[l + 1]]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("Mlp input", self.input_dim(), x.len()));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let layers = self.num_layers();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = self.weight(l);
            let b = self.bias(l);
            let a = &acts[l];
            let z = (0..n_out).map(|i| b[i] + dot(&w[i * n_in..(i + 1) * n_in], a));
            let next: Vec<f64> = if l + 1 < layers {
                z.map(f64::tanh).collect()
            } else {
                z.map(|v| self.output.apply(v)).collect()
            };
            acts.push(next);
        }
        Trace { acts }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.trace(x).acts.pop().expect("output layer"))
    }

    /// Forward pass over every row of `inputs`.
    pub fn forward_rows(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape("Mlp::forward_rows", self.input_dim(), inputs.cols()));
        }
        let mut out = Matrix::zeros(inputs.rows(), self.output_dim());
        for r in 0..inputs.rows() {
            let y = self.trace(inputs.row(r)).acts.pop().expect("output layer");
            out.row_mut(r).copy_from_slice(&y);
        }
        Ok(out)
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<ForwardTape<'_>> {
        self.check_input(x)?;
        Ok(ForwardTape {
            net: self,
            trace: self.trace(x),
        })
    }

    pub fn jacobian_tape(&self, x: &[f64]) -> Result<JacobianTape<'_>> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let (p, q) = self.jacobian_sweep(&trace);
        Ok(JacobianTape {
            net: self,
            trace,
            p,
            q,
        })
    }

    /// `∂ẑ/∂x` (`d_out × d_in`) by a reverse sweep from the output layer.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Matrix> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let (mut p, _) = self.jacobian_sweep(&trace);
        Ok(p.swap_remove(0))
    }

    fn jacobian_sweep(&self, trace: &Trace) -> (Vec<Matrix>, Vec<Matrix>) {
        let layers = self.num_layers();
        let d_out = self.output_dim();
        let out = &trace.acts[layers];
        let mut p = vec![Matrix::zeros(0, 0); layers];
        let mut q = vec![Matrix::zeros(0, 0); layers];

        let n_top = self.sizes[layers - 1];
        let w_top = self.weight(layers - 1);
        p[layers - 1] = Matrix::from_fn(d_out, n_top, |i, j| {
            self.output.slope(out[i]) * w_top[i * n_top + j]
        });

        for k in (1..layers).rev() {
            let h = &trace.acts[k];
            let n_k = self.sizes[k];
            let n_prev = self.sizes[k - 1];
            let qk = Matrix::from_fn(d_out, n_k, |i, a| p[k][(i, a)] * (1.0 - h[a] * h[a]));
            let w = self.weight(k - 1);
            let mut pk = Matrix::zeros(d_out, n_prev);
            for i in 0..d_out {
                let row = pk.row_mut(i);
                for a in 0..n_k {
                    let s = qk[(i, a)];
                    if s == 0.0 {
                        continue;
                    }
                    for (r, &wv) in row.iter_mut().zip(&w[a * n_prev..(a + 1) * n_prev]) {
                        *r += s * wv;
                    }
                }
            }
            p[k - 1] = pk;
            q[k] = qk;
        }
        (p, q)
    }

    /// Ordinary backward pass. `top` is the cotangent on the output layer's
    /// pre-activation; `extra` optionally adds direct cotangents on hidden
    /// pre-activations (indexed like `trace.acts`). Returns the input cotangent.
    fn backward_from(
        &self,
        trace: &Trace,
        top: Vec<f64>,
        extra: Option<&[Vec<f64>]>,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let layers = self.num_layers();
        let mut delta = top;
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let a = &trace.acts[l];
            for i in 0..n_out {
                let d = delta[i];
                if d == 0.0 {
                    continue;
                }
                for (g, &av) in grad[off + i * n_in..off + (i + 1) * n_in].iter_mut().zip(a) {
                    *g += d * av;
                }
            }
            let bias_off = off + n_in * n_out;
            for (g, d) in grad[bias_off..bias_off + n_out].iter_mut().zip(&delta) {
                *g += d;
            }
            let w = self.weight(l);
            let mut below = vec![0.0; n_in];
            for i in 0..n_out {
                let d = delta[i];
                if d == 0.0 {
                    continue;
                }
                for (b, &wv) in below.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                    *b += d * wv;
                }
            }
            if l == 0 {
                return below;
            }
            for (j, b) in below.iter_mut().enumerate() {
                *b *= 1.0 - a[j] * a[j];
                if let Some(extra) = extra {
                    *b += extra[l][j];
                }
            }
            delta = below;
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse-mode derivative of the Jacobian sweep. Accumulates the parameter
    /// cotangent into `grad` and returns the input cotangent.
    fn jacobian_vjp(
        &self,
        trace: &Trace,
        p: &[Matrix],
        q: &[Matrix],
        jac_grad: &Matrix,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let layers = self.num_layers();
        let d_out = self.output_dim();
        let mut direct: Vec<Vec<f64>> = vec![Vec::new(); layers + 1];
        let mut pbar = jac_grad.clone();

        // p[k-1] = q[k] · W_{k-1}, q[k] = p[k] · diag(1 − h_k²)
        for k in 1..layers {
            let (n_k, n_prev) = (self.sizes[k], self.sizes[k - 1]);
            let off = self.layer_offset(k - 1);
            let w = self.weight(k - 1);
            let qk = &q[k];
            for a in 0..n_k {
                let g_row = &mut grad[off + a * n_prev..off + (a + 1) * n_prev];
                for i in 0..d_out {
                    let s = qk[(i, a)];
                    if s == 0.0 {
                        continue;
                    }
                    for (g, &pb) in g_row.iter_mut().zip(pbar.row(i)) {
                        *g += s * pb;
                    }
                }
            }
            let h = &trace.acts[k];
            let mut next = Matrix::zeros(d_out, n_k);
            let mut sbar = vec![0.0; n_k];
            for i in 0..d_out {
                let pb = pbar.row(i);
                for a in 0..n_k {
                    let qbar = dot(pb, &w[a * n_prev..(a + 1) * n_prev]);
                    let slope = 1.0 - h[a] * h[a];
                    next[(i, a)] = qbar * slope;
                    sbar[a] += qbar * p[k][(i, a)];
                }
            }
            // d(1 − tanh²)/dz = −2·tanh·(1 − tanh²)
            direct[k] = sbar
                .iter()
                .zip(h)
                .map(|(s, &hv)| s * (-2.0 * hv * (1.0 - hv * hv)))
                .collect();
            pbar = next;
        }

        // p[L-1] = diag(o'(z_L)) · W_{L-1}
        let top = layers - 1;
        let n_top = self.sizes[top];
        let off = self.layer_offset(top);
        let w = self.weight(top);
        let out = &trace.acts[layers];
        let mut top_direct = vec![0.0; d_out];
        for i in 0..d_out {
            let slope = self.output.slope(out[i]);
            let pb = pbar.row(i);
            let w_row = &w[i * n_top..(i + 1) * n_top];
            for (g, &v) in grad[off + i * n_top..off + (i + 1) * n_top].iter_mut().zip(pb) {
                *g += slope * v;
            }
            top_direct[i] = dot(pb, w_row) * self.output.curvature(out[i]);
        }

        self.backward_from(trace, top_direct, Some(&direct), grad)
    }

    /// Target loss `E` over a batch.
    pub fn loss_target(&self, batch: &GiBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for i in 0..batch.len() {
            let y = self.trace(batch.input(i)).acts.pop().expect("output layer");
            total += y
                .iter()
                .zip(batch.target(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }

    /// Jacobian-matching loss `E_grad` over a batch.
    pub fn loss_gi(&self, batch: &GiBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let mut total = 0.0;
        for i in 0..batch.len() {
            let j = self.input_jacobian(batch.input(i))?;
            total += j
                .data()
                .iter()
                .zip(batch.target_grad(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }

    fn check_batch(&self, batch: &GiBatch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if batch.input_dim() != self.input_dim() {
            return Err(Error::shape("batch input dim", self.input_dim(), batch.input_dim()));
        }
        if batch.output_dim() != self.output_dim() {
            return Err(Error::shape("batch output dim", self.output_dim(), batch.output_dim()));
        }
        Ok(())
    }

    /// `∂E/∂θ`.
    pub fn param_grad_target(&self, batch: &GiBatch) -> Result<Vec<f64>> {
        Ok(self.param_grads(batch, false)?.0)
    }

    /// `∂E_grad/∂θ` by double backpropagation.
    pub fn param_grad_gi(&self, batch: &GiBatch) -> Result<Vec<f64>> {
        self.check_batch(batch)?;
        let scale = 2.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        for i in 0..batch.len() {
            let trace = self.trace(batch.input(i));
            let (p, q) = self.jacobian_sweep(&trace);
            let jbar = self.jacobian_residual(&p[0], batch.target_grad(i), scale);
            self.jacobian_vjp(&trace, &p, &q, &jbar, &mut grad);
        }
        Ok(grad)
    }

    fn jacobian_residual(&self, jac: &Matrix, target: &[f64], scale: f64) -> Matrix {
        let data = jac
            .data()
            .iter()
            .zip(target)
            .map(|(a, b)| scale * (a - b))
            .collect();
        Matrix::from_vec(jac.rows(), jac.cols(), data).expect("same shape as jacobian")
    }

    /// `∂E/∂θ` and, when `with_gi`, `∂E_grad/∂θ`, sharing one forward pass
    /// per sample.
    pub fn param_grads(&self, batch: &GiBatch, with_gi: bool) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        self.check_batch(batch)?;
        let scale = 2.0 / batch.len() as f64;
        let mut g_target = vec![0.0; self.params.len()];
        let mut g_gi = with_gi.then(|| vec![0.0; self.params.len()]);
        for i in 0..batch.len() {
            let trace = self.trace(batch.input(i));
            let out = &trace.acts[self.num_layers()];
            let top = out
                .iter()
                .zip(batch.target(i))
                .map(|(&y, &z)| scale * (y - z) * self.output.slope(y))
                .collect();
            self.backward_from(&trace, top, None, &mut g_target);
            if let Some(g) = g_gi.as_mut() {
                let (p, q) = self.jacobian_sweep(&trace);
                let jbar = self.jacobian_residual(&p[0], batch.target_grad(i), scale);
                self.jacobian_vjp(&trace, &p, &q, &jbar, g);
            }
        }
        Ok((g_target, g_gi))
    }

    /// `θ⁺ = θ − α·η·g_E − (1−α)·η·g_grad`.
    ///
    /// Terms whose weight is exactly zero are skipped, so `α = 1` reproduces
    /// the plain update `θ − η·g_E` bit for bit.
    pub fn apply_update(
        &mut self,
        g_target: &[f64],
        g_gi: Option<&[f64]>,
        lr: f64,
        alpha: f64,
    ) -> Result<UpdateReport> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::BadAlpha(alpha));
        }
        if g_target.len() != self.params.len() {
            return Err(Error::shape("apply_update g_target", self.params.len(), g_target.len()));
        }
        if let Some(g) = g_gi {
            if g.len() != self.params.len() {
                return Err(Error::shape("apply_update g_gi", self.params.len(), g.len()));
            }
        }
        let w_target = alpha * lr;
        let w_gi = (1.0 - alpha) * lr;
        let mut delta_sum = 0.0;
        let mut change_sum = 0.0;
        for (k, theta) in self.params.iter_mut().enumerate() {
            let before = *theta;
            let mut magnitude = 0.0;
            if w_target != 0.0 {
                let step = w_target * g_target[k];
                *theta -= step;
                magnitude += step.abs();
            }
            if let Some(g) = g_gi {
                if w_gi != 0.0 {
                    let step = w_gi * g[k];
                    *theta -= step;
                    magnitude += step.abs();
                }
            }
            delta_sum += magnitude;
            change_sum += (*theta - before).abs();
        }
        let n = self.params.len() as f64;
        Ok(UpdateReport {
            mean_abs_delta: delta_sum / n,
            mean_abs_change: change_sum / n,
        })
    }

    /// Text form: a `mlp v1` header carrying the layer sizes and output
    /// activation, then one hex-float parameter per line.
    pub fn to_text(&self) -> String {
        let mut s = String::from("mlp v1");
        for n in &self.sizes {
            write!(s, " {n}").expect("writing to String");
        }
        writeln!(s, " {}", self.output.name()).expect("writing to String");
        for p in &self.params {
            s.push_str(&format_hex_f64(*p));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty model file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("mlp") || fields.next() != Some("v1") {
            return Err(Error::Parse(format!("bad model header {header:?}")));
        }
        let rest: Vec<&str> = fields.collect();
        let (act, sizes) = rest
            .split_last()
            .ok_or_else(|| Error::Parse("model header has no layer sizes".into()))?;
        let output = match *act {
            "identity" => OutputActivation::Identity,
            "sigmoid" => OutputActivation::Sigmoid,
            other => return Err(Error::Parse(format!("unknown output activation {other:?}"))),
        };
        let sizes = sizes
            .iter()
            .map(|s| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad layer size {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let params = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| parse_hex_f64(l.trim()))
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_params(&sizes, output, params)
    }
}

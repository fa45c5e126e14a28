//! Small fully connected regressor: sigmoid hidden layers, an affine output
//! layer, squared-error cost, and per-sample SGD with momentum.
//!
//! Inputs are min-max scaled with statistics of the training set; targets
//! stay in their own units. Training stops after `max_epochs` or once the
//! norm of the epoch-averaged gradient drops below `min_gradient`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation value.
    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    pub min_gradient: f64,
    pub seed: u64,
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![256, 128],
            learning_rate: 0.01,
            momentum: 0.9,
            max_epochs: 50,
            min_gradient: 1e-5,
            seed: 0,
            activation: Activation::Sigmoid,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.min_gradient > 0.0) {
            return Err(Error::Config(format!("min_gradient must be > 0, got {}", self.min_gradient)));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out × n_in`.
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
    in_min: Vec<f64>,
    /// `1 / (max - min)`, or 0 for constant features.
    in_scale: Vec<f64>,
    epochs_run: usize,
    final_gradient_norm: f64,
}

/// Summary of a finished training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub epochs_run: usize,
    pub final_gradient_norm: f64,
}

impl Mlp {
    /// A network from explicit `(weights, biases)` per layer, weights
    /// row-major `n_out × n_in`. Inputs are used unscaled.
    pub fn from_layers(layers: Vec<(Vec<f64>, Vec<f64>)>, input_dim: usize, activation: Activation) -> Result<Self> {
        let mut n_in = input_dim;
        let mut out = Vec::with_capacity(layers.len());
        for (w, b) in layers {
            let n_out = b.len();
            if n_out == 0 || w.len() != n_out * n_in {
                return Err(Error::Dimension(format!(
                    "layer expects {n_out}x{n_in} weights, got {}",
                    w.len()
                )));
            }
            if w.iter().chain(&b).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite weight".into()));
            }
            out.push(Layer { n_in, n_out, w, b });
            n_in = n_out;
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        Ok(Self {
            layers: out,
            activation,
            in_min: vec![0.0; input_dim],
            in_scale: vec![1.0; input_dim],
            epochs_run: 0,
            final_gradient_norm: 0.0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").n_out
    }

    pub fn stats(&self) -> TrainStats {
        TrainStats {
            epochs_run: self.epochs_run,
            final_gradient_norm: self.final_gradient_norm,
        }
    }

    /// Parameter `idx` in gradient order (per layer: weights then biases).
    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if idx < layer.w.len() {
                return &mut layer.w[idx];
            }
            idx -= layer.w.len();
            if idx < layer.b.len() {
                return &mut layer.b[idx];
            }
            idx -= layer.b.len();
        }
        panic!("parameter index out of range")
    }

    fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn scale_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (x[i] - self.in_min[i]) * self.in_scale[i];
        }
    }

    /// First output for `input`.
    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        Ok(self.predict_all(input)?[0])
    }

    /// All outputs for `input`.
    pub fn predict_all(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network takes {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut ws = Workspace::new(self);
        self.scale_into(input, &mut ws.acts[0]);
        self.forward(&mut ws);
        Ok(ws.acts.last().expect("output layer").clone())
    }

    fn forward(&self, ws: &mut Workspace) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let x = &before[l];
            let y = &mut after[0];
            for o in 0..layer.n_out {
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                let z = layer.b[o] + dot(row, x);
                y[o] = if l == last { z } else { self.activation.apply(z) };
            }
        }
    }

    /// Fills `ws.deltas` with d(loss)/d(pre-activation) for every layer,
    /// given output errors `2·(h - y)` (zero for masked outputs).
    fn backward(&self, ws: &mut Workspace) {
        for l in (0..self.layers.len() - 1).rev() {
            let next = &self.layers[l + 1];
            let (cur, nxt) = ws.deltas.split_at_mut(l + 1);
            let d = &mut cur[l];
            let dn = &nxt[0];
            d.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..next.n_out {
                let g = dn[o];
                if g != 0.0 {
                    axpy(g, &next.w[o * next.n_in..(o + 1) * next.n_in], d);
                }
            }
            let a = &ws.acts[l + 1];
            for (dv, &av) in d.iter_mut().zip(a) {
                *dv *= self.activation.derivative(av);
            }
        }
    }

    /// Squared error summed over unmasked outputs, for a scaled input.
    fn loss_scaled(&self, ws: &mut Workspace, target: &[f64], mask: Option<&[bool]>) -> f64 {
        self.forward(ws);
        let out = ws.acts.last().expect("output");
        out.iter()
            .zip(target)
            .enumerate()
            .filter(|(o, _)| mask.is_none_or(|m| m[*o]))
            .map(|(_, (h, y))| (h - y) * (h - y))
            .sum()
    }

    /// Analytic gradient of the squared error for a scaled input, in
    /// parameter order (per layer: weights then biases).
    fn gradient_scaled(&self, ws: &mut Workspace, target: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
        self.forward(ws);
        self.output_errors(ws, target, mask);
        self.backward(ws);
        let mut g = Vec::with_capacity(self.n_params());
        for (l, layer) in self.layers.iter().enumerate() {
            let (x, d) = (&ws.acts[l], &ws.deltas[l]);
            for o in 0..layer.n_out {
                g.extend(x.iter().map(|xi| d[o] * xi));
            }
            g.extend_from_slice(d);
        }
        g
    }

    fn output_errors(&self, ws: &mut Workspace, target: &[f64], mask: Option<&[bool]>) {
        let out = ws.acts.last().expect("output");
        let d = ws.deltas.last_mut().expect("output");
        for o in 0..d.len() {
            d[o] = if mask.is_none_or(|m| m[o]) { 2.0 * (out[o] - target[o]) } else { 0.0 };
        }
    }

    /// Worst relative error between backpropagated gradients of the squared
    /// error and central finite differences (step 1e-5) over all parameters.
    ///
    /// The error is `|a - n| / max(|a|, |n|, 1e-6)`: below 1e-6 the roundoff
    /// of the difference quotient (about 1e-11) dominates any relative figure.
    pub fn gradient_check(&self, input: &[f64], target: f64) -> Result<f64> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension("gradient_check input length".into()));
        }
        let t = vec![target; self.output_dim()];
        let mut ws = Workspace::new(self);
        self.scale_into(input, &mut ws.acts[0]);
        let x0 = ws.acts[0].clone();
        let analytic = self.gradient_scaled(&mut ws, &t, None);

        let h = 1e-5;
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for (idx, &a) in analytic.iter().enumerate() {
            let orig = *probe.param_mut(idx);
            let mut eval = |v: f64| {
                *probe.param_mut(idx) = v;
                ws.acts[0].copy_from_slice(&x0);
                probe.loss_scaled(&mut ws, &t, None)
            };
            let numeric = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            *probe.param_mut(idx) = orig;
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
            worst = worst.max(err);
        }
        Ok(worst)
    }
}

const GRADIENT_FLOOR: f64 = 1e-6;

struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(net: &Mlp) -> Self {
        let mut acts = vec![vec![0.0; net.input_dim()]];
        acts.extend(net.layers.iter().map(|l| vec![0.0; l.n_out]));
        let deltas = net.layers.iter().map(|l| vec![0.0; l.n_out]).collect();
        Self { acts, deltas }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable without reassociation
    let mut s = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        s[0] += a[i] * b[i];
        s[1] += a[i + 1] * b[i + 1];
        s[2] += a[i + 2] * b[i + 2];
        s[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Trains a single-output regressor.
pub fn train(config: &MlpConfig, inputs: &[Vec<f64>], targets: &[f64]) -> Result<Mlp> {
    let t: Vec<Vec<f64>> = targets.iter().map(|&y| vec![y]).collect();
    train_inner(config, inputs, &t, None)
}

/// Trains a multi-output regressor where `mask[i][o] == false` removes
/// output `o` of sample `i` from the cost.
pub fn train_masked(config: &MlpConfig, inputs: &[Vec<f64>], targets: &[Vec<f64>], mask: &[Vec<bool>]) -> Result<Mlp> {
    if mask.len() != targets.len() || mask.iter().zip(targets).any(|(m, t)| m.len() != t.len()) {
        return Err(Error::Dimension("mask shape does not match targets".into()));
    }
    train_inner(config, inputs, targets, Some(mask))
}

fn train_inner(config: &MlpConfig, inputs: &[Vec<f64>], targets: &[Vec<f64>], mask: Option<&[Vec<bool>]>) -> Result<Mlp> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let n_in = inputs[0].len();
    let n_out = targets[0].len();
    if n_in == 0 || n_out == 0 {
        return Err(Error::Dimension("empty input or target vectors".into()));
    }
    if inputs.iter().any(|x| x.len() != n_in) || targets.iter().any(|t| t.len() != n_out) {
        return Err(Error::Dimension("ragged training samples".into()));
    }
    if inputs.iter().flatten().chain(targets.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite training value".into()));
    }

    let mut in_min = vec![f64::INFINITY; n_in];
    let mut in_max = vec![f64::NEG_INFINITY; n_in];
    for x in inputs {
        for i in 0..n_in {
            in_min[i] = in_min[i].min(x[i]);
            in_max[i] = in_max[i].max(x[i]);
        }
    }
    let in_scale: Vec<f64> = in_min
        .iter()
        .zip(&in_max)
        .map(|(lo, hi)| if hi > lo { 1.0 / (hi - lo) } else { 0.0 })
        .collect();

    let mut init_rng = crate::seed::rng(crate::seed::mix(config.seed, 0x1417));
    let mut sizes = vec![n_in];
    sizes.extend(&config.hidden_sizes);
    sizes.push(n_out);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let r = 1.0 / (fan_in as f64).sqrt();
            Layer {
                n_in: fan_in,
                n_out: fan_out,
                w: (0..fan_in * fan_out).map(|_| init_rng.gen_range(-r..r)).collect(),
                b: (0..fan_out).map(|_| init_rng.gen_range(-r..r)).collect(),
            }
        })
        .collect();
    let mut net = Mlp {
        layers,
        activation: config.activation,
        in_min,
        in_scale,
        epochs_run: 0,
        final_gradient_norm: f64::NAN,
    };

    let scaled: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| {
            let mut s = vec![0.0; n_in];
            net.scale_into(x, &mut s);
            s
        })
        .collect();

    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> = net
        .layers
        .iter()
        .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
        .collect();
    let mut grad_sum = velocity.clone();
    let mut ws = Workspace::new(&net);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut order_rng = crate::seed::rng(crate::seed::mix(config.seed, 0x0D0E));
    let (lr, mu) = (config.learning_rate, config.momentum);
    let n = inputs.len() as f64;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut order_rng);
        for (gw, gb) in grad_sum.iter_mut() {
            gw.iter_mut().for_each(|v| *v = 0.0);
            gb.iter_mut().for_each(|v| *v = 0.0);
        }
        for &i in &order {
            ws.acts[0].copy_from_slice(&scaled[i]);
            net.forward(&mut ws);
            net.output_errors(&mut ws, &targets[i], mask.map(|m| m[i].as_slice()));
            net.backward(&mut ws);
            for (l, layer) in net.layers.iter_mut().enumerate() {
                let (x, d) = (&ws.acts[l], &ws.deltas[l]);
                let (vw, vb) = &mut velocity[l];
                let (gw, gb) = &mut grad_sum[l];
                for o in 0..layer.n_out {
                    let span = o * layer.n_in..(o + 1) * layer.n_in;
                    sgd_row(&mut layer.w[span.clone()], &mut vw[span.clone()], &mut gw[span], x, d[o], lr, mu);
                    let g = d[o];
                    gb[o] += g;
                    vb[o] = mu * vb[o] - lr * g;
                    layer.b[o] += vb[o];
                }
            }
        }
        let sq: f64 = grad_sum
            .iter()
            .flat_map(|(gw, gb)| gw.iter().chain(gb.iter()))
            .map(|g| (g / n) * (g / n))
            .sum();
        let norm = sq.sqrt();
        net.epochs_run = epoch + 1;
        net.final_gradient_norm = norm;
        if !norm.is_finite() {
            return Err(Error::Degenerate("training diverged".into()));
        }
        if norm < config.min_gradient {
            break;
        }
    }
    if net.layers.iter().any(|l| l.w.iter().chain(&l.b).any(|v| !v.is_finite())) {
        return Err(Error::Degenerate("training diverged".into()));
    }
    Ok(net)
}

/// One weight row of the fused momentum update: gradient `d·x`.
#[inline]
fn sgd_row(w: &mut [f64], v: &mut [f64], gsum: &mut [f64], x: &[f64], d: f64, lr: f64, mu: f64) {
    for i in 0..w.len() {
        let g = d * x[i];
        gsum[i] += g;
        v[i] = mu * v[i] - lr * g;
        w[i] += v[i];
    }
}

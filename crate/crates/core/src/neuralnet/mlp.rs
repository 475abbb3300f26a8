//! Fully connected regression network: relu hidden layers, linear scalar
//! output, one inverted-dropout layer, latitude-weighted MSE with an L2
//! penalty on weights, and exact backpropagation.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Inputs, labels and per-row weights for one cluster, already scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// Row-major `n x n_features`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub n_features: usize,
}

impl TrainingSet {
    pub fn new(x: Vec<f64>, y: Vec<f64>, w: Vec<f64>, n_features: usize) -> Result<Self> {
        if n_features == 0 || x.len() != y.len() * n_features || w.len() != y.len() {
            return Err(Error::arg(format!(
                "training set shapes disagree: x {} values, y {}, w {}, {} features",
                x.len(),
                y.len(),
                w.len(),
                n_features
            )));
        }
        if w.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::arg("training weights must be positive"));
        }
        Ok(TrainingSet { x, y, w, n_features })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn subset(&self, rows: &[usize]) -> TrainingSet {
        let mut x = Vec::with_capacity(rows.len() * self.n_features);
        for &r in rows {
            x.extend_from_slice(self.row(r));
        }
        TrainingSet {
            x,
            y: rows.iter().map(|&r| self.y[r]).collect(),
            w: rows.iter().map(|&r| self.w[r]).collect(),
            n_features: self.n_features,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSlot {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

/// Network parameters in one flat vector; layer `l` stores an `out x in`
/// row-major weight block followed by its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    slots: Vec<LayerSlot>,
    params: Vec<f64>,
    dropout_rate: f64,
    /// Hidden layer (0 = first) whose activations are dropped.
    dropout_layer: usize,
}

fn layout(sizes: &[usize]) -> (Vec<LayerSlot>, usize) {
    let mut slots = Vec::with_capacity(sizes.len() - 1);
    let mut off = 0;
    for pair in sizes.windows(2) {
        let (n_in, n_out) = (pair[0], pair[1]);
        slots.push(LayerSlot { n_in, n_out, w: off, b: off + n_in * n_out });
        off += n_in * n_out + n_out;
    }
    (slots, off)
}

impl Mlp {
    /// All-zero network of the given shape `[inputs, hidden.., 1]`.
    pub fn zeros(sizes: &[usize], dropout_rate: f64, dropout_layer: usize) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(Error::arg(format!("need input, at least one hidden layer and output, got {sizes:?}")));
        }
        if sizes.contains(&0) {
            return Err(Error::arg(format!("layer sizes must be positive, got {sizes:?}")));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(Error::arg("network output must be a single unit"));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::arg(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        if dropout_layer >= sizes.len() - 2 {
            return Err(Error::arg(format!(
                "dropout layer {dropout_layer} but only {} hidden layers",
                sizes.len() - 2
            )));
        }
        let (slots, n) = layout(sizes);
        Ok(Mlp { sizes: sizes.to_vec(), slots, params: vec![0.0; n], dropout_rate, dropout_layer })
    }

    /// He-normal weights (variance `2 / fan_in`), zero biases.
    pub fn new(sizes: &[usize], dropout_rate: f64, dropout_layer: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut m = Mlp::zeros(sizes, dropout_rate, dropout_layer)?;
        for slot in m.slots.clone() {
            let normal = Normal::new(0.0, (2.0 / slot.n_in as f64).sqrt()).expect("positive std");
            for p in &mut m.params[slot.w..slot.b] {
                *p = normal.sample(rng);
            }
        }
        Ok(m)
    }

    /// Rebuilds a network from serialized parts.
    pub fn from_parts(sizes: &[usize], params: Vec<f64>, dropout_rate: f64, dropout_layer: usize) -> Result<Self> {
        let mut m = Mlp::zeros(sizes, dropout_rate, dropout_layer)?;
        if params.len() != m.params.len() {
            return Err(Error::arg(format!(
                "network {sizes:?} has {} parameters, got {}",
                m.params.len(),
                params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn dropout_layer(&self) -> usize {
        self.dropout_layer
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_layers(&self) -> usize {
        self.slots.len()
    }

    /// Weight block of layer `l`, `out x in` row-major.
    pub fn weights(&self, l: usize) -> &[f64] {
        let s = self.slots[l];
        &self.params[s.w..s.b]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.slots[l];
        &mut self.params[s.w..s.b]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let s = self.slots[l];
        &self.params[s.b..s.b + s.n_out]
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [f64] {
        let s = self.slots[l];
        &mut self.params[s.b..s.b + s.n_out]
    }

    /// Whether parameter `i` is a weight (penalized) rather than a bias.
    pub fn is_weight(&self, i: usize) -> bool {
        self.slots.iter().any(|s| (s.w..s.b).contains(&i))
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.slots
            .iter()
            .map(|s| self.params[s.w..s.b].iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::arg(format!("network expects {} inputs, got {}", self.n_inputs(), x.len())));
        }
        Ok(())
    }

    fn forward_inner(&self, x: &[f64], mut rng: Option<&mut dyn rand::RngCore>) -> f64 {
        let mut act = x.to_vec();
        let last = self.slots.len() - 1;
        for (l, s) in self.slots.iter().enumerate() {
            let w = &self.params[s.w..s.b];
            let b = &self.params[s.b..s.b + s.n_out];
            let mut next: Vec<f64> = (0..s.n_out)
                .map(|o| b[o] + w[o * s.n_in..(o + 1) * s.n_in].iter().zip(&act).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if l < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
                if l == self.dropout_layer && self.dropout_rate > 0.0 {
                    if let Some(r) = rng.as_deref_mut() {
                        let keep = 1.0 / (1.0 - self.dropout_rate);
                        for v in next.iter_mut() {
                            *v = if r.random::<f64>() < self.dropout_rate { 0.0 } else { *v * keep };
                        }
                    }
                }
            }
            act = next;
        }
        act[0]
    }

    /// Deterministic inference (dropout off, no rescaling needed).
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_inner(x, None))
    }

    /// One stochastic pass with a fresh dropout mask drawn from `rng`.
    pub fn forward_dropout(&self, x: &[f64], rng: &mut dyn rand::RngCore) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_inner(x, Some(rng)))
    }

    /// Deterministic predictions for every row of a training set.
    pub fn predict_rows(&self, x: &[f64]) -> Result<Vec<f64>> {
        x.chunks(self.n_inputs()).map(|row| self.forward(row)).collect()
    }
}

/// Weighted MSE of predictions on the set (no penalty).
pub fn weighted_mse(m: &Mlp, data: &TrainingSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..data.len() {
        let r = m.forward(data.row(i))? - data.y[i];
        num += data.w[i] * r * r;
        den += data.w[i];
    }
    Ok(num / den)
}

/// `sum w (yhat - y)^2 / sum w + l2 * |W|^2`, deterministic forward.
pub fn loss(m: &Mlp, data: &TrainingSet, l2: f64) -> Result<f64> {
    Ok(weighted_mse(m, data)? + l2 * m.weight_norm_sq())
}

/// Reusable buffers for batched forward/backward passes.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    /// `acts[l]` is the `batch x sizes[l]` input to layer `l`; last entry is the output.
    acts: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers for the dropout layer (empty when off).
    mask: Vec<f64>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

/// Loss and its exact gradient over a batch. With `rng` set, a dropout mask is
/// sampled per row for the designated layer.
pub(crate) fn backprop(
    m: &Mlp,
    data: &TrainingSet,
    l2: f64,
    mut rng: Option<&mut dyn rand::RngCore>,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> f64 {
    let n = data.len();
    let last = m.slots.len() - 1;
    ws.acts.resize_with(m.slots.len() + 1, Vec::new);
    ws.acts[0].clear();
    ws.acts[0].extend_from_slice(&data.x);
    let use_mask = rng.is_some() && m.dropout_rate > 0.0;

    for (l, s) in m.slots.iter().enumerate() {
        let (head, tail) = ws.acts.split_at_mut(l + 1);
        let input = &head[l];
        let out = &mut tail[0];
        out.clear();
        out.resize(n * s.n_out, 0.0);
        let w = &m.params[s.w..s.b];
        let b = &m.params[s.b..s.b + s.n_out];
        for r in 0..n {
            let a = &input[r * s.n_in..(r + 1) * s.n_in];
            let z = &mut out[r * s.n_out..(r + 1) * s.n_out];
            for o in 0..s.n_out {
                let wo = &w[o * s.n_in..(o + 1) * s.n_in];
                z[o] = b[o] + wo.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        if l == m.dropout_layer && use_mask {
            let p = m.dropout_rate;
            let keep = 1.0 / (1.0 - p);
            let r = rng.as_deref_mut().expect("mask requested without rng");
            ws.mask.clear();
            ws.mask.extend((0..n * s.n_out).map(|_| if r.random::<f64>() < p { 0.0 } else { keep }));
            out.iter_mut().zip(&ws.mask).for_each(|(a, k)| *a *= k);
        }
    }

    let w_sum: f64 = data.w.iter().sum();
    let out = &ws.acts[m.slots.len()];
    let mut mse = 0.0;
    ws.delta.clear();
    ws.delta.resize(n, 0.0);
    for r in 0..n {
        let res = out[r] - data.y[r];
        mse += data.w[r] * res * res;
        ws.delta[r] = 2.0 * data.w[r] * res / w_sum;
    }
    let loss = mse / w_sum + l2 * m.weight_norm_sq();

    grad.iter_mut().for_each(|g| *g = 0.0);
    for l in (0..m.slots.len()).rev() {
        let s = m.slots[l];
        let input = &ws.acts[l];
        let (gw, gb) = grad[s.w..s.b + s.n_out].split_at_mut(s.n_in * s.n_out);
        for r in 0..n {
            let d = &ws.delta[r * s.n_out..(r + 1) * s.n_out];
            let a = &input[r * s.n_in..(r + 1) * s.n_in];
            for o in 0..s.n_out {
                let dv = d[o];
                if dv == 0.0 {
                    continue;
                }
                gb[o] += dv;
                for (g, x) in gw[o * s.n_in..(o + 1) * s.n_in].iter_mut().zip(a) {
                    *g += dv * x;
                }
            }
        }
        let w = &m.params[s.w..s.b];
        for (g, wv) in gw.iter_mut().zip(w) {
            *g += 2.0 * l2 * wv;
        }
        if l == 0 {
            break;
        }
        // Propagate to layer l's input, which is hidden layer l-1's activation.
        ws.delta_prev.clear();
        ws.delta_prev.resize(n * s.n_in, 0.0);
        for r in 0..n {
            let d = &ws.delta[r * s.n_out..(r + 1) * s.n_out];
            let dp = &mut ws.delta_prev[r * s.n_in..(r + 1) * s.n_in];
            for o in 0..s.n_out {
                let dv = d[o];
                if dv == 0.0 {
                    continue;
                }
                for (p, wv) in dp.iter_mut().zip(&w[o * s.n_in..(o + 1) * s.n_in]) {
                    *p += dv * wv;
                }
            }
        }
        let hidden = l - 1;
        for (i, (p, a)) in ws.delta_prev.iter_mut().zip(input).enumerate() {
            // a = relu(z) * mask; a > 0 exactly where both relu and mask pass.
            if *a <= 0.0 {
                *p = 0.0;
            } else if hidden == m.dropout_layer && use_mask {
                *p *= ws.mask[i];
            }
        }
        std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
    }
    loss
}

/// Loss and exact gradient (deterministic forward), flat in parameter order.
pub fn gradients(m: &Mlp, data: &TrainingSet, l2: f64) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if data.n_features != m.n_inputs() {
        return Err(Error::arg(format!(
            "network expects {} inputs, data has {}",
            m.n_inputs(),
            data.n_features
        )));
    }
    let mut grad = vec![0.0; m.params.len()];
    let loss = backprop(m, data, l2, None, &mut Workspace::default(), &mut grad);
    Ok((loss, grad))
}

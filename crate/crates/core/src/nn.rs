//! Dense feedforward networks trained by exact backpropagation with plain SGD
//! or Adam.
//!
//! Every network in the crate (Q, target Q, dynamics predictor, policy) is a
//! [`Network`]: an ordered list of affine layers, each followed by an
//! element-wise activation. Weights are stored row-major with shape
//! `(output_dim, input_dim)`.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation `z`, given `a = apply(z)`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    /// `U(-sqrt(6/(in+out)), +sqrt(6/(in+out)))`.
    GlorotUniform,
    Normal { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    pub weight_init: WeightInit,
    pub bias_init: f64,
}

impl LayerSpec {
    /// Glorot-uniform weights and zero biases.
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
            weight_init: WeightInit::GlorotUniform,
            bias_init: 0.0,
        }
    }

    pub fn with_weight_init(mut self, init: WeightInit) -> Self {
        self.weight_init = init;
        self
    }

    pub fn with_bias(mut self, bias: f64) -> Self {
        self.bias_init = bias;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    MeanSquaredError,
    /// Softmax over the outputs, then `-w * ln p[class]` per sample.
    SoftmaxCrossEntropyWeighted,
}

/// Training targets for one batch. The variant selects the loss.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Regression(&'a [Vec<f64>]),
    /// `(class, weight)` per sample.
    WeightedClasses(&'a [(usize, f64)]),
}

impl Targets<'_> {
    pub fn loss_kind(&self) -> LossKind {
        match self {
            Targets::Regression(_) => LossKind::MeanSquaredError,
            Targets::WeightedClasses(_) => LossKind::SoftmaxCrossEntropyWeighted,
        }
    }

    fn len(&self) -> usize {
        match self {
            Targets::Regression(t) => t.len(),
            Targets::WeightedClasses(t) => t.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    input_dim: usize,
    output_dim: usize,
    activation: Activation,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    /// Builds a layer from explicit parameters. `weights` is row-major `out × in`.
    pub fn from_parts(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if weights.len() != input_dim * output_dim || biases.len() != output_dim {
            return Err(Error::Config(format!(
                "layer {input_dim}->{output_dim} needs {} weights and {output_dim} biases, got {} and {}",
                input_dim * output_dim,
                weights.len(),
                biases.len()
            )));
        }
        Ok(Self {
            input_dim,
            output_dim,
            activation,
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.input_dim)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }
}

/// Per-layer parameter gradients, laid out like the layers themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradient {
    /// Weights then biases, layer by layer; matches [`Network::parameters_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Update rule applied by [`Network::train_batch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    /// Bias-corrected Adam with the usual β1 = 0.9, β2 = 0.999, ε = 1e-7 defaults.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::adam()),
            other => Err(Error::Config(format!("unknown optimizer `{other}` (expected sgd or adam)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    steps: u64,
    optimizer: Optimizer,
    /// Adam first and second moments, flattened like the parameters.
    moments: Option<(Vec<f64>, Vec<f64>)>,
}

impl Network {
    /// Samples a network from `specs`; deterministic for a given rng state.
    pub fn init<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        for (i, pair) in specs.windows(2).enumerate() {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim,
                    i + 1,
                    pair[1].input_dim
                )));
            }
        }
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            if spec.input_dim == 0 || spec.output_dim == 0 {
                return Err(Error::Config("layer dimensions must be positive".into()));
            }
            if !spec.bias_init.is_finite() {
                return Err(Error::Config("bias init must be finite".into()));
            }
            let n = spec.input_dim * spec.output_dim;
            let weights: Vec<f64> = match spec.weight_init {
                WeightInit::GlorotUniform => {
                    let limit = (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
                    let dist = Uniform::new_inclusive(-limit, limit)
                        .map_err(|e| Error::Config(e.to_string()))?;
                    (0..n).map(|_| dist.sample(rng)).collect()
                }
                WeightInit::Normal { mean, std } => {
                    let dist = Normal::new(mean, std)
                        .map_err(|e| Error::Config(format!("normal init: {e}")))?;
                    (0..n).map(|_| dist.sample(rng)).collect()
                }
            };
            layers.push(Layer {
                input_dim: spec.input_dim,
                output_dim: spec.output_dim,
                activation: spec.activation,
                weights,
                biases: vec![spec.bias_init; spec.output_dim],
            });
        }
        Ok(Self {
            layers,
            steps: 0,
            optimizer: Optimizer::Sgd,
            moments: None,
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(Error::Config("layer dimension chain is inconsistent".into()));
            }
        }
        Ok(Self {
            layers,
            steps: 0,
            optimizer: Optimizer::Sgd,
            moments: None,
        })
    }

    /// Switches the update rule and clears any optimizer state.
    pub fn with_optimizer(mut self, optimizer: Optimizer) -> Self {
        self.optimizer = optimizer;
        self.moments = None;
        self
    }

    pub fn optimizer(&self) -> Optimizer {
        self.optimizer
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of completed `train_batch` calls.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// `None` for the zero-layer identity network.
    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.input_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.output_dim)
    }

    pub fn same_architecture(&self, other: &Network) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.input_dim == b.input_dim
                    && a.output_dim == b.output_dim
                    && a.activation == b.activation
            })
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        match self.input_dim() {
            Some(d) if d != x.len() => Err(Error::Usage(format!(
                "network expects input of length {d}, got {}",
                x.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.pre_activation(&a);
            z.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            a = z;
        }
        Ok(a)
    }

    /// Forward pass keeping every layer's pre-activation and activation.
    fn forward_cached(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let z = layer.pre_activation(acts.last().expect("nonempty"));
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            zs.push(z);
            acts.push(a);
        }
        (zs, acts)
    }

    /// Mean batch loss and its exact gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vec<f64>],
        targets: Targets<'_>,
    ) -> Result<(f64, Gradient)> {
        if inputs.is_empty() {
            return Err(Error::Usage("training batch is empty".into()));
        }
        if targets.len() != inputs.len() {
            return Err(Error::Usage(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let out_dim = self.output_dim().unwrap_or_else(|| inputs[0].len());
        let n = inputs.len() as f64;
        let mut grad = Gradient {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.output_dim]))
                .collect(),
        };
        let mut total = 0.0;

        for (i, x) in inputs.iter().enumerate() {
            self.check_input(x)?;
            let (zs, acts) = self.forward_cached(x);
            let y = acts.last().expect("nonempty");
            if y.len() != out_dim {
                return Err(Error::Usage("inconsistent input lengths".into()));
            }

            // dL/dy for this sample, already divided by the batch size.
            let dy: Vec<f64> = match targets {
                Targets::Regression(t) => {
                    let t = &t[i];
                    if t.len() != out_dim {
                        return Err(Error::Usage(format!(
                            "target length {} does not match output length {out_dim}",
                            t.len()
                        )));
                    }
                    let m = out_dim as f64;
                    total += y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m;
                    y.iter().zip(t).map(|(a, b)| 2.0 * (a - b) / (m * n)).collect()
                }
                Targets::WeightedClasses(t) => {
                    let (class, weight) = t[i];
                    if class >= out_dim {
                        return Err(Error::Usage(format!(
                            "class {class} out of range for {out_dim} outputs"
                        )));
                    }
                    let logp = log_softmax(y);
                    total += -weight * logp[class];
                    logp.iter()
                        .enumerate()
                        .map(|(k, lp)| {
                            let onehot = if k == class { 1.0 } else { 0.0 };
                            weight * (lp.exp() - onehot) / n
                        })
                        .collect()
                }
            };

            let mut delta = dy;
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                for (d, (z, a)) in delta.iter_mut().zip(zs[l].iter().zip(&acts[l + 1])) {
                    *d *= layer.activation.derivative(*z, *a);
                }
                let input = &acts[l];
                let (gw, gb) = &mut grad.layers[l];
                for (o, d) in delta.iter().enumerate() {
                    gb[o] += d;
                    let row = &mut gw[o * layer.input_dim..(o + 1) * layer.input_dim];
                    for (g, xi) in row.iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
                if l > 0 {
                    let mut prev = vec![0.0; layer.input_dim];
                    for (o, d) in delta.iter().enumerate() {
                        let row = &layer.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += w * d;
                        }
                    }
                    delta = prev;
                }
            }
        }
        Ok((total / n, grad))
    }

    /// Mean batch loss without touching the parameters.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: Targets<'_>) -> Result<f64> {
        self.loss_and_gradient(inputs, targets).map(|(l, _)| l)
    }

    /// One optimizer step on the mean batch loss; returns the pre-update loss.
    ///
    /// On divergence the parameters are left exactly as they were.
    pub fn train_batch(
        &mut self,
        inputs: &[Vec<f64>],
        targets: Targets<'_>,
        lr: f64,
    ) -> Result<f64> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {lr} is invalid")));
        }
        let step = self.steps + 1;
        let (loss, grad) = self.loss_and_gradient(inputs, targets)?;
        let mut pending_moments = None;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss is {loss}"),
            });
        }
        let mut updated = self.layers.clone();
        match self.optimizer {
            Optimizer::Sgd => {
                for (layer, (gw, gb)) in updated.iter_mut().zip(&grad.layers) {
                    for (w, g) in layer.weights.iter_mut().zip(gw) {
                        *w -= lr * g;
                    }
                    for (b, g) in layer.biases.iter_mut().zip(gb) {
                        *b -= lr * g;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let g = grad.flatten();
                let (mut m, mut v) = self
                    .moments
                    .clone()
                    .unwrap_or_else(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
                let t = step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let mut k = 0;
                for layer in updated.iter_mut() {
                    for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        *p -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                        k += 1;
                    }
                }
                pending_moments = Some((m, v));
            }
        }
        let finite = updated
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Diverged {
                step,
                detail: "non-finite parameter after update".into(),
            });
        }
        self.layers = updated;
        self.steps = step;
        if pending_moments.is_some() {
            self.moments = pending_moments;
        }
        Ok(loss)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Weights then biases, layer by layer.
    pub fn parameters_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    pub fn set_parameters_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Usage(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Overwrites this network's parameters with `other`'s (target sync).
    pub fn copy_parameters_from(&mut self, other: &Network) -> Result<()> {
        if !self.same_architecture(other) {
            return Err(Error::Usage("cannot copy parameters across architectures".into()));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.copy_from_slice(&src.weights);
            dst.biases.copy_from_slice(&src.biases);
        }
        Ok(())
    }

    /// Text snapshot: one line per layer,
    /// `layer <idx> <in> <out> <activation> <weights row-major...> <biases...>`,
    /// values with 17 significant digits.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        for (idx, l) in self.layers.iter().enumerate() {
            let _ = write!(
                out,
                "layer {idx} {} {} {}",
                l.input_dim,
                l.output_dim,
                l.activation.name()
            );
            for v in l.weights.iter().chain(&l.biases) {
                let _ = write!(out, " {v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Config(format!("snapshot line {}: {what}", lineno + 1));
            let mut fields = line.split_ascii_whitespace();
            if fields.next() != Some("layer") {
                return Err(bad("expected `layer`"));
            }
            let idx: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad layer index"))?;
            if idx != layers.len() {
                return Err(bad("layer indices out of order"));
            }
            let input_dim: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad input dimension"))?;
            let output_dim: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad output dimension"))?;
            let activation = Activation::parse(fields.next().ok_or_else(|| bad("missing activation"))?)?;
            let values = fields
                .map(|s| s.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<Vec<_>>>()?;
            let nw = input_dim * output_dim;
            if values.len() != nw + output_dim {
                return Err(bad("wrong number of parameter values"));
            }
            let (w, b) = values.split_at(nw);
            layers.push(Layer::from_parts(
                input_dim,
                output_dim,
                activation,
                w.to_vec(),
                b.to_vec(),
            )?);
        }
        Network::from_layers(layers)
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

//! Multilayer perceptron with exact reverse-mode gradients.
//!
//! Networks are dense stacks of affine layers. The same engine backs the
//! discriminator (sigmoid head), the generator and the representation map
//! (identity head). `forward` caches per-layer state; `backward` consumes it
//! to produce parameter gradients and the gradient with respect to the input
//! batch, which is how updates flow through a frozen discriminator into the
//! generator.

// Index loops keep the i/j/k kernel arithmetic aligned across matrices.
#![allow(clippy::needless_range_loop)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

impl HiddenActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            HiddenActivation::Relu => z.max(0.0),
            HiddenActivation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value `a`.
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            HiddenActivation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            HiddenActivation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HiddenActivation::Relu => "relu",
            HiddenActivation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(HiddenActivation::Relu),
            "tanh" => Ok(HiddenActivation::Tanh),
            other => Err(CoreError::config(format!(
                "unknown hidden activation '{other}' (expected relu or tanh)"
            ))),
        }
    }
}

impl OutputActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            OutputActivation::Identity => z,
        }
    }

    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            OutputActivation::Sigmoid => a * (1.0 - a),
            OutputActivation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "identity" => Ok(OutputActivation::Identity),
            other => Err(CoreError::config(format!(
                "unknown output activation '{other}' (expected sigmoid or identity)"
            ))),
        }
    }
}

/// Per-parameter gradients, shape-matched to the owning network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn is_all_zero(&self) -> bool {
        self.weights
            .iter()
            .all(|w| w.data().iter().all(|&v| v == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDirection {
    Ascend,
    Descend,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    input: Matrix,
    /// Post-activation of every layer, `activations[l]` has shape
    /// `(batch, layer_sizes[l + 1])`.
    activations: Vec<Matrix>,
}

/// Dense feed-forward network: weights per layer are `(out, in)` row-major.
#[derive(Debug, Clone)]
pub struct MlpNetwork {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
    cache: Option<ForwardCache>,
}

impl PartialEq for MlpNetwork {
    fn eq(&self, other: &Self) -> bool {
        // Parameter identity; the transient forward cache does not count.
        self.layer_sizes == other.layer_sizes
            && self.weights == other.weights
            && self.biases == other.biases
            && self.hidden_activation == other.hidden_activation
            && self.output_activation == other.output_activation
    }
}

/// Builds a network with uniform init in `[-a, a]`, `a = sqrt(6/(fan_in+fan_out))`,
/// biases zero. Deterministic given the seed.
pub fn mlp_new(
    layer_sizes: &[usize],
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
    seed: u64,
) -> Result<MlpNetwork> {
    if layer_sizes.len() < 2 {
        return Err(CoreError::shape(format!(
            "need at least 2 layer sizes, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(CoreError::shape("layer sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
    for pair in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-a..a))
            .collect();
        weights.push(Matrix::new(fan_out, fan_in, data)?);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpNetwork {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        hidden_activation,
        output_activation,
        cache: None,
    })
}

impl MlpNetwork {
    /// Assembles a network from explicit parameters (used by tests and the
    /// checkpoint loader).
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(CoreError::shape("invalid layer size list"));
        }
        let n_layers = layer_sizes.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(CoreError::shape("wrong number of parameter matrices"));
        }
        for (l, pair) in layer_sizes.windows(2).enumerate() {
            if weights[l].rows() != pair[1] || weights[l].cols() != pair[0] {
                return Err(CoreError::shape(format!(
                    "weight {} has shape {}x{}, expected {}x{}",
                    l,
                    weights[l].rows(),
                    weights[l].cols(),
                    pair[1],
                    pair[0]
                )));
            }
            if biases[l].len() != pair[1] {
                return Err(CoreError::shape(format!(
                    "bias {} has length {}, expected {}",
                    l,
                    biases[l].len(),
                    pair[1]
                )));
            }
            if !weights[l].is_finite() || biases[l].iter().any(|v| !v.is_finite()) {
                return Err(CoreError::config(format!(
                    "layer {l} parameters are not finite"
                )));
            }
        }
        Ok(MlpNetwork {
            layer_sizes,
            weights,
            biases,
            hidden_activation,
            output_activation,
            cache: None,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Mutable parameter access invalidates any cached forward pass.
    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        self.cache = None;
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        self.cache = None;
        &mut self.biases
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Sets every weight and bias to zero. A zeroed sigmoid network outputs
    /// exactly 0.5 everywhere, which pins the game at its equilibrium value.
    pub fn zero_params(&mut self) {
        for w in &mut self.weights {
            w.data_mut().fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
        self.cache = None;
    }

    fn layer_forward(&self, l: usize, input: &Matrix) -> Matrix {
        let w = &self.weights[l];
        let b = &self.biases[l];
        let s = input.rows();
        let out_dim = w.rows();
        let last = l == self.weights.len() - 1;
        let mut out = Matrix::zeros(s, out_dim);
        for i in 0..s {
            let x = input.row(i);
            for j in 0..out_dim {
                let wr = w.row(j);
                let mut z = b[j];
                for k in 0..x.len() {
                    z += wr[k] * x[k];
                }
                let a = if last {
                    self.output_activation.apply(z)
                } else {
                    self.hidden_activation.apply(z)
                };
                out.set(i, j, a);
            }
        }
        out
    }

    /// Forward pass that caches per-layer activations for `backward`.
    pub fn forward(&mut self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(CoreError::shape(format!(
                "batch has {} cols, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.weights.len());
        let mut cur = batch.clone();
        for l in 0..self.weights.len() {
            cur = self.layer_forward(l, &cur);
            activations.push(cur.clone());
        }
        let out = activations.last().unwrap().clone();
        self.cache = Some(ForwardCache {
            input: batch.clone(),
            activations,
        });
        Ok(out)
    }

    /// Smallest `|z|` over all hidden pre-activations for this batch, or
    /// infinity when there are no hidden layers. Finite-difference checks on
    /// relu networks use this to stay away from the kink at zero.
    pub fn hidden_preactivation_margin(&self, batch: &Matrix) -> Result<f64> {
        if batch.cols() != self.input_dim() {
            return Err(CoreError::shape(format!(
                "batch has {} cols, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut margin = f64::INFINITY;
        let mut cur = batch.clone();
        for l in 0..self.weights.len() - 1 {
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut next = Matrix::zeros(cur.rows(), w.rows());
            for i in 0..cur.rows() {
                let x = cur.row(i);
                for j in 0..w.rows() {
                    let wr = w.row(j);
                    let mut z = b[j];
                    for k in 0..x.len() {
                        z += wr[k] * x[k];
                    }
                    margin = margin.min(z.abs());
                    next.set(i, j, self.hidden_activation.apply(z));
                }
            }
            cur = next;
        }
        Ok(margin)
    }

    /// Pure forward pass; does not touch the gradient cache.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.input_dim() {
            return Err(CoreError::shape(format!(
                "batch has {} cols, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let mut cur = batch.clone();
        for l in 0..self.weights.len() {
            cur = self.layer_forward(l, &cur);
        }
        Ok(cur)
    }

    /// Reverse-mode gradients of the scalar objective whose per-output
    /// partials are `upstream`. Returns parameter gradients plus the gradient
    /// with respect to the forwarded input batch.
    pub fn backward(&mut self, upstream: &Matrix) -> Result<(GradientSet, Matrix)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| CoreError::usage("backward called without a cached forward pass"))?;
        let last_act = cache.activations.last().unwrap();
        if upstream.rows() != last_act.rows() || upstream.cols() != last_act.cols() {
            return Err(CoreError::shape(format!(
                "upstream grad is {}x{}, forward output was {}x{}",
                upstream.rows(),
                upstream.cols(),
                last_act.rows(),
                last_act.cols()
            )));
        }

        let n_layers = self.weights.len();
        let s = upstream.rows();
        let mut grad_weights: Vec<Matrix> = Vec::with_capacity(n_layers);
        let mut grad_biases: Vec<Vec<f64>> = Vec::with_capacity(n_layers);

        // delta = dL/dz for the current layer; start from the output layer.
        let mut delta = Matrix::zeros(s, last_act.cols());
        for i in 0..s {
            for j in 0..last_act.cols() {
                let a = last_act.get(i, j);
                delta.set(
                    i,
                    j,
                    upstream.get(i, j) * self.output_activation.grad_from_output(a),
                );
            }
        }

        let mut input_grad = Matrix::zeros(0, 0);
        for l in (0..n_layers).rev() {
            let layer_input = if l == 0 {
                &cache.input
            } else {
                &cache.activations[l - 1]
            };
            let (out_dim, in_dim) = (self.weights[l].rows(), self.weights[l].cols());

            let mut dw = Matrix::zeros(out_dim, in_dim);
            let mut db = vec![0.0; out_dim];
            for i in 0..s {
                let x = layer_input.row(i);
                for j in 0..out_dim {
                    let d = delta.get(i, j);
                    db[j] += d;
                    for k in 0..in_dim {
                        let v = dw.get(j, k) + d * x[k];
                        dw.set(j, k, v);
                    }
                }
            }

            // Propagate to the layer input: (delta . W) (.) act'(a_prev).
            let mut prev = Matrix::zeros(s, in_dim);
            for i in 0..s {
                for j in 0..out_dim {
                    let d = delta.get(i, j);
                    let wr = self.weights[l].row(j);
                    for k in 0..in_dim {
                        let v = prev.get(i, k) + d * wr[k];
                        prev.set(i, k, v);
                    }
                }
            }
            if l == 0 {
                input_grad = prev;
            } else {
                let a_prev = &cache.activations[l - 1];
                for i in 0..s {
                    for k in 0..in_dim {
                        let g = self.hidden_activation.grad_from_output(a_prev.get(i, k));
                        prev.set(i, k, prev.get(i, k) * g);
                    }
                }
                delta = prev;
            }

            grad_weights.push(dw);
            grad_biases.push(db);
        }

        grad_weights.reverse();
        grad_biases.reverse();
        Ok((
            GradientSet {
                weights: grad_weights,
                biases: grad_biases,
            },
            input_grad,
        ))
    }

    /// Serializes to the text block format: a header line
    /// `mlp 3->4->1 relu sigmoid` followed by one line per parameter matrix
    /// (weights then bias, layer by layer), values row-major at 17
    /// significant digits so reloading is bit-exact.
    pub fn to_text_block(&self) -> String {
        let sizes = self
            .layer_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("->");
        let mut out = format!(
            "mlp {} {} {}\n",
            sizes,
            self.hidden_activation.name(),
            self.output_activation.name()
        );
        for l in 0..self.weights.len() {
            out.push_str(&join_values(self.weights[l].data()));
            out.push('\n');
            out.push_str(&join_values(&self.biases[l]));
            out.push('\n');
        }
        out
    }

    /// Parses a text block starting at `lines[0]`. `first_line_no` is the
    /// 1-based position of that line in the enclosing file, used for error
    /// reporting. Returns the network and the number of lines consumed.
    pub fn from_text_lines(lines: &[&str], first_line_no: usize) -> Result<(Self, usize)> {
        let header = lines
            .first()
            .ok_or_else(|| CoreError::parse(first_line_no, "missing network header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "mlp" {
            return Err(CoreError::parse(
                first_line_no,
                format!("bad network header '{header}'"),
            ));
        }
        let layer_sizes: Vec<usize> = fields[1]
            .split("->")
            .map(|p| {
                p.parse::<usize>()
                    .map_err(|_| CoreError::parse(first_line_no, format!("bad layer size '{p}'")))
            })
            .collect::<Result<_>>()?;
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(CoreError::parse(first_line_no, "invalid layer size list"));
        }
        let hidden = HiddenActivation::parse(fields[2])
            .map_err(|e| CoreError::parse(first_line_no, e.to_string()))?;
        let output = OutputActivation::parse(fields[3])
            .map_err(|e| CoreError::parse(first_line_no, e.to_string()))?;

        let n_layers = layer_sizes.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let mut cursor = 1;
        for l in 0..n_layers {
            let (rows, cols) = (layer_sizes[l + 1], layer_sizes[l]);
            let w = parse_values(lines, first_line_no, &mut cursor, rows * cols, "weight")?;
            weights.push(
                Matrix::new(rows, cols, w)
                    .map_err(|e| CoreError::parse(first_line_no + cursor - 1, e.to_string()))?,
            );
            let b = parse_values(lines, first_line_no, &mut cursor, rows, "bias")?;
            biases.push(b);
            let _ = l;
        }
        let net = Self::from_parts(layer_sizes, weights, biases, hidden, output)?;
        Ok((net, cursor))
    }

    /// `params <- params +/- learning_rate * grads`.
    pub fn sgd_step(
        &mut self,
        grads: &GradientSet,
        learning_rate: f64,
        direction: StepDirection,
    ) -> Result<()> {
        if learning_rate <= 0.0 {
            return Err(CoreError::config("learning rate must be positive"));
        }
        if grads.weights.len() != self.weights.len() || grads.biases.len() != self.biases.len() {
            return Err(CoreError::shape("gradient layer count mismatch"));
        }
        let sign = match direction {
            StepDirection::Ascend => 1.0,
            StepDirection::Descend => -1.0,
        };
        for (w, gw) in self.weights.iter_mut().zip(&grads.weights) {
            if w.rows() != gw.rows() || w.cols() != gw.cols() {
                return Err(CoreError::shape("gradient shape mismatch"));
            }
            for (v, g) in w.data_mut().iter_mut().zip(gw.data()) {
                *v += sign * learning_rate * g;
            }
        }
        for (b, gb) in self.biases.iter_mut().zip(&grads.biases) {
            if b.len() != gb.len() {
                return Err(CoreError::shape("bias gradient shape mismatch"));
            }
            for (v, g) in b.iter_mut().zip(gb) {
                *v += sign * learning_rate * g;
            }
        }
        self.cache = None;
        Ok(())
    }
}

fn join_values(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_values(
    lines: &[&str],
    first_line_no: usize,
    cursor: &mut usize,
    expected: usize,
    what: &str,
) -> Result<Vec<f64>> {
    let line_no = first_line_no + *cursor;
    let line = lines
        .get(*cursor)
        .ok_or_else(|| CoreError::parse(line_no, format!("missing {what} line")))?;
    *cursor += 1;
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| CoreError::parse(line_no, format!("bad value '{p}'")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != expected {
        return Err(CoreError::parse(
            line_no,
            format!("{what} line has {} values, expected {expected}", vals.len()),
        ));
    }
    Ok(vals)
}

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::flat::FlatGradient;
use crate::error::{Error, Result};

/// Output head and its loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossHead {
    /// Softmax normalization with categorical cross-entropy.
    SoftmaxCrossEntropy,
    /// Independent sigmoids with binary cross-entropy summed over outputs.
    SigmoidBce,
}

/// Architecture of a dense rectifier network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    pub head: LossHead,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, output_dim: usize, head: LossHead) -> Self {
        Self {
            input_dim,
            hidden_layers,
            output_dim,
            head,
        }
    }

    /// Single hidden layer of 100 units.
    pub fn dnn_100(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, vec![100], output_dim, LossHead::SoftmaxCrossEntropy)
    }

    /// Three hidden layers of 400 units.
    pub fn dnn_400x3(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, vec![400; 3], output_dim, LossHead::SoftmaxCrossEntropy)
    }

    pub fn with_head(mut self, head: LossHead) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        if self.output_dim == 0 {
            return Err(Error::InvalidSpec("output_dim must be positive".into()));
        }
        if let Some(i) = self.hidden_layers.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!("hidden layer {i} has zero width")));
        }
        Ok(())
    }

    /// Widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_layers.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_layers);
        w.push(self.output_dim);
        w
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }
}

/// Location of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSlot {
    fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.fan_out
    }
}

/// Weights and bias of one layer in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Shape `(fan_in, fan_out)`; a layer computes `x · W + b`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter ordering: layer-major, each layer's weights (row-major over
/// `(fan_in, fan_out)`) followed by its bias.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    slots: Vec<LayerSlot>,
    len: usize,
}

impl ParamLayout {
    fn new(spec: &NetworkSpec) -> Self {
        let mut slots = Vec::new();
        let mut offset = 0;
        for pair in spec.widths().windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let slot = LayerSlot {
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            };
            offset = slot.bias_offset + fan_out;
            slots.push(slot);
        }
        Self { slots, len: offset }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    /// Flat index of weight `(row, col)` of `layer`.
    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let s = &self.slots[layer];
        s.weight_offset + row * s.fan_out + col
    }

    pub fn bias_index(&self, layer: usize, unit: usize) -> usize {
        self.slots[layer].bias_offset + unit
    }

    pub fn unflatten(&self, values: &[f64]) -> Result<Vec<LayerParams>> {
        self.check(values.len())?;
        Ok(self
            .slots
            .iter()
            .map(|s| LayerParams {
                weights: Array2::from_shape_vec((s.fan_in, s.fan_out), values[s.weight_range()].to_vec())
                    .expect("slot shape matches slice length"),
                bias: Array1::from_vec(values[s.bias_range()].to_vec()),
            })
            .collect())
    }

    pub fn flatten(&self, layers: &[LayerParams]) -> Result<Vec<f64>> {
        if layers.len() != self.slots.len() {
            return Err(Error::Shape {
                what: "layer count",
                expected: self.slots.len(),
                got: layers.len(),
            });
        }
        let mut out = Vec::with_capacity(self.len);
        for (s, l) in self.slots.iter().zip(layers) {
            if l.weights.dim() != (s.fan_in, s.fan_out) {
                return Err(Error::Shape {
                    what: "layer weights",
                    expected: s.fan_in * s.fan_out,
                    got: l.weights.len(),
                });
            }
            if l.bias.len() != s.fan_out {
                return Err(Error::Shape {
                    what: "layer bias",
                    expected: s.fan_out,
                    got: l.bias.len(),
                });
            }
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        Ok(out)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len {
            return Err(Error::Shape {
                what: "flat parameter vector",
                expected: self.len,
                got: len,
            });
        }
        Ok(())
    }
}

/// Per-sample target rows for distillation with the sigmoid head.
///
/// Outputs flagged in `old_classes` are trained toward `targets`; every other
/// output is trained toward the one-hot encoding of the sample's label.
#[derive(Debug, Clone, Copy)]
pub struct DistillTargets<'a> {
    pub targets: ArrayView2<'a, f64>,
    pub old_classes: &'a [bool],
}

/// A dense rectifier network whose parameters live in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layout: ParamLayout,
    params: Vec<f64>,
    seed: u64,
}

impl Network {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut params = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in layout.slots() {
            let limit = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            for w in &mut params[slot.weight_range()] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(Self {
            spec,
            layout,
            params,
            seed,
        })
    }

    /// A network with every parameter set to zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let params = vec![0.0; layout.len()];
        Ok(Self {
            spec,
            layout,
            params,
            seed: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        self.layout.check(values.len())?;
        self.params.copy_from_slice(values);
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerParams> {
        self.layout.unflatten(&self.params).expect("own layout")
    }

    fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let s = &self.layout.slots[layer];
        ArrayView2::from_shape((s.fan_in, s.fan_out), &self.params[s.weight_range()]).expect("slot shape")
    }

    fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.layout.slots[layer].bias_range()])
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.spec.input_dim {
            return Err(Error::Shape {
                what: "batch feature dimension",
                expected: self.spec.input_dim,
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    fn affine(&self, layer: usize, input: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights(layer));
        z += &self.bias(layer);
        z
    }

    /// Post-activation outputs of every hidden layer followed by the logits.
    fn activations(&self, batch: &ArrayView2<f64>) -> Vec<Array2<f64>> {
        let n_layers = self.layout.slots.len();
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let mut z = match l {
                0 => self.affine(l, batch),
                _ => self.affine(l, &acts[l - 1].view()),
            };
            if l + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Raw output scores, shape `(batch, output_dim)`.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        Ok(self.activations(&batch).pop().expect("at least one layer"))
    }

    /// Rectified outputs of the last hidden layer, shape `(batch, width)`.
    pub fn penultimate_features(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&batch)?;
        if self.spec.hidden_layers.is_empty() {
            return Err(Error::InvalidSpec("network has no hidden layer".into()));
        }
        let mut acts = self.activations(&batch);
        acts.pop();
        Ok(acts.pop().expect("hidden layer present"))
    }

    /// Logits computed from given penultimate features.
    pub fn head_logits(&self, features: ArrayView2<f64>) -> Array2<f64> {
        self.affine(self.layout.slots.len() - 1, &features)
    }

    /// Arg-max of the logits per row, ties to the lowest class.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(self.forward(batch)?.rows().into_iter().map(|r| argmax(r.as_slice().expect("row"))).collect())
    }

    /// Head outputs as probabilities (softmax rows or element-wise sigmoid).
    pub fn probabilities(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut z = self.forward(batch)?;
        match self.spec.head {
            LossHead::SoftmaxCrossEntropy => z.rows_mut().into_iter().for_each(|mut r| softmax_inplace(r.as_slice_mut().expect("row"))),
            LossHead::SigmoidBce => z.mapv_inplace(sigmoid),
        }
        Ok(z)
    }

    /// Mean loss over the batch and its exact gradient.
    pub fn loss_and_gradient(
        &self,
        batch: ArrayView2<f64>,
        labels: &[usize],
        distill: Option<DistillTargets<'_>>,
    ) -> Result<(f64, FlatGradient)> {
        self.check_batch(&batch)?;
        let n = batch.nrows();
        if labels.len() != n {
            return Err(Error::Shape {
                what: "label count",
                expected: n,
                got: labels.len(),
            });
        }
        let classes = self.spec.output_dim;
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label { label, classes });
        }
        if let Some(d) = &distill {
            if self.spec.head != LossHead::SigmoidBce {
                return Err(Error::Precondition("distillation targets require the sigmoid-bce head".into()));
            }
            if d.targets.dim() != (n, classes) {
                return Err(Error::Shape {
                    what: "distillation targets",
                    expected: n * classes,
                    got: d.targets.len(),
                });
            }
            if d.old_classes.len() != classes {
                return Err(Error::Shape {
                    what: "old-class mask",
                    expected: classes,
                    got: d.old_classes.len(),
                });
            }
        }
        if n == 0 {
            return Ok((0.0, FlatGradient::zeros(self.param_count())));
        }

        let acts = self.activations(&batch);
        let logits = acts.last().expect("output layer");
        let inv_n = 1.0 / n as f64;

        // dL/dz of the output layer, already divided by the batch size.
        let mut delta = logits.clone();
        let mut loss = 0.0;
        match self.spec.head {
            LossHead::SoftmaxCrossEntropy => {
                for (i, mut row) in delta.rows_mut().into_iter().enumerate() {
                    let r = row.as_slice_mut().expect("row");
                    let lse = log_sum_exp(r);
                    loss += lse - r[labels[i]];
                    r.iter_mut().for_each(|v| *v = (*v - lse).exp());
                    r[labels[i]] -= 1.0;
                    r.iter_mut().for_each(|v| *v *= inv_n);
                }
            }
            LossHead::SigmoidBce => {
                for (i, mut row) in delta.rows_mut().into_iter().enumerate() {
                    let r = row.as_slice_mut().expect("row");
                    for (c, v) in r.iter_mut().enumerate() {
                        let target = match &distill {
                            Some(d) if d.old_classes[c] => d.targets[[i, c]],
                            _ => f64::from(u8::from(labels[i] == c)),
                        };
                        let z = *v;
                        loss += softplus(z) - target * z;
                        *v = (sigmoid(z) - target) * inv_n;
                    }
                }
            }
        }
        loss *= inv_n;

        let mut grad = vec![0.0; self.param_count()];
        for l in (0..self.layout.slots.len()).rev() {
            let slot = self.layout.slots[l];
            let input = if l == 0 { batch.view() } else { acts[l - 1].view() };
            let gw = input.t().dot(&delta);
            grad[slot.weight_range()].copy_from_slice(gw.as_slice().expect("standard layout"));
            let gb = delta.sum_axis(Axis(0));
            grad[slot.bias_range()].copy_from_slice(gb.as_slice().expect("contiguous"));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights(l).t());
                upstream.zip_mut_with(&acts[l - 1], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = upstream;
            }
        }
        Ok((loss, FlatGradient::new(grad)))
    }

    /// Gradient of each sample's own loss, one per row of `batch`.
    pub fn per_sample_gradients(&self, batch: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<FlatGradient>> {
        (0..batch.nrows())
            .map(|i| {
                self.loss_and_gradient(batch.slice(s![i..i + 1, ..]), &labels[i..i + 1], None)
                    .map(|(_, g)| g)
            })
            .collect()
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_inplace(values: &mut [f64]) {
    let lse = log_sum_exp(values);
    values.iter_mut().for_each(|v| *v = (*v - lse).exp());
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// log(1 + e^z) without overflow
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

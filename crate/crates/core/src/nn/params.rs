use std::ops::Range;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use super::spec::{Head, MlpSpec};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Offsets of one dense layer inside the flat parameter vector.
///
/// Weights are stored row-major as `fan_out x fan_in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
}

impl DenseSlot {
    pub fn weight_range(&self) -> Range<usize> {
        self.weight..self.weight + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> Range<usize> {
        self.bias..self.bias + self.fan_out
    }
}

/// Where each tensor of the actor, the critic and the log-std vector lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub actor: Vec<DenseSlot>,
    pub critic: Vec<DenseSlot>,
    pub log_std: Range<usize>,
    pub len: usize,
}

impl Layout {
    pub fn new(spec: &MlpSpec) -> Self {
        let mut cursor = 0;
        let mut stack = |out_dim: usize| {
            let mut dims = vec![spec.input_dim];
            dims.extend(&spec.hidden_widths);
            dims.push(out_dim);
            dims.windows(2)
                .map(|w| {
                    let slot = DenseSlot {
                        fan_in: w[0],
                        fan_out: w[1],
                        weight: cursor,
                        bias: cursor + w[0] * w[1],
                    };
                    cursor += w[0] * w[1] + w[1];
                    slot
                })
                .collect::<Vec<_>>()
        };
        let actor = stack(spec.head.output_dim());
        let critic = stack(1);
        let log_std_len = match spec.head {
            Head::Categorical { .. } => 0,
            Head::DiagonalGaussian { action_dim } => action_dim,
        };
        let log_std = cursor..cursor + log_std_len;
        Layout {
            actor,
            critic,
            len: log_std.end,
            log_std,
        }
    }
}

/// Actor and critic parameters in one flat vector.
///
/// Gradients use the same type and layout, so the optimizer, the EWMA and the
/// norm computations all work elementwise on `values`.
#[derive(Debug, Clone)]
pub struct ParamTree {
    spec: MlpSpec,
    layout: Layout,
    values: Vec<f64>,
}

pub type GradTree = ParamTree;

impl PartialEq for ParamTree {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ParamTree {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let layout = Layout::new(spec);
        ParamTree {
            spec: spec.clone(),
            values: vec![0.0; layout.len],
            layout,
        }
    }

    pub fn from_values(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        let mut tree = Self::zeros(spec);
        if values.len() != tree.values.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                tree.values.len(),
                values.len()
            )));
        }
        tree.values = values;
        Ok(tree)
    }

    pub fn zeros_like(&self) -> Self {
        ParamTree {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &ParamTree) -> bool {
        self.spec == other.spec
    }

    pub(crate) fn check_shape(&self, other: &ParamTree, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what}: parameter trees differ in shape")))
        }
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance_l2(&self, other: &ParamTree) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &ParamTree) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamTree) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Weight matrix (row-major) and bias of actor layer `i`.
    pub fn actor_layer(&self, i: usize) -> (&[f64], &[f64]) {
        let slot = self.layout.actor[i];
        (&self.values[slot.weight_range()], &self.values[slot.bias_range()])
    }

    pub fn critic_layer(&self, i: usize) -> (&[f64], &[f64]) {
        let slot = self.layout.critic[i];
        (&self.values[slot.weight_range()], &self.values[slot.bias_range()])
    }

    pub fn log_std(&self) -> &[f64] {
        &self.values[self.layout.log_std.clone()]
    }
}

/// Orthogonal matrix of shape `rows x cols` scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign fix so the result is Haar-distributed rather than biased by QR.
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * q[(i, j)]);
        }
    }
    out
}

/// Orthogonal init: gain sqrt(2) on hidden layers, 0.01 on the policy output,
/// 1.0 on the value output. Biases and log-std start at zero.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<ParamTree> {
    spec.validate()?;
    let mut tree = ParamTree::zeros(spec);
    let hidden_gain = std::f64::consts::SQRT_2;
    let layout = tree.layout.clone();
    for (net, slots, out_gain) in [(0u64, &layout.actor, 0.01), (1, &layout.critic, 1.0)] {
        let last = slots.len() - 1;
        for (i, slot) in slots.iter().enumerate() {
            let gain = if i == last { out_gain } else { hidden_gain };
            let mut rng = rng::stream(seed, &[tag::INIT, net, i as u64]);
            let w = orthogonal(slot.fan_out, slot.fan_in, gain, &mut rng);
            tree.values[slot.weight_range()].copy_from_slice(&w);
        }
    }
    Ok(tree)
}

//! Feed-forward binary classifier `P(source = 1 | v)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

const LEAKY_SLOPE: f64 = 0.2;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Leaky-ReLU hidden layers followed by a single sigmoid output unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    layers: Vec<Layer>,
}

/// Per-layer gradients, same shapes as the layers.
#[derive(Clone, Debug)]
pub struct DiscriminatorGrads {
    pub layers: Vec<Layer>,
}

pub(crate) struct ForwardCache {
    input: DMatrix<f64>,
    pre: Vec<DMatrix<f64>>,
    post: Vec<DMatrix<f64>>,
    mask: Option<DMatrix<f64>>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Discriminator {
    /// Layers initialized uniformly in `±1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound)),
                    bias: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Discriminator { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Discriminator { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Returns logits for each row of `inputs` (`batch × d`). `mask`, if
    /// given, is multiplied element-wise into the inputs (dropout).
    pub(crate) fn forward(
        &self,
        inputs: &DMatrix<f64>,
        mask: Option<DMatrix<f64>>,
    ) -> (DVector<f64>, ForwardCache) {
        let input = match &mask {
            Some(m) => inputs.component_mul(m),
            None => inputs.clone(),
        };
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = if i == 0 { &input } else { &post[i - 1] };
            let mut z = prev * layer.weights.transpose();
            for mut row in z.row_iter_mut() {
                row += layer.bias.transpose();
            }
            let a = if i + 1 == self.layers.len() {
                z.clone()
            } else {
                z.map(leaky)
            };
            pre.push(z);
            post.push(a);
        }
        let logits = post.last().expect("at least one layer").column(0).into_owned();
        (
            logits,
            ForwardCache {
                input,
                pre,
                post,
                mask,
            },
        )
    }

    /// `P(source = 1 | v)` for each row, without dropout, clamped to
    /// `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn predict(&self, inputs: &DMatrix<f64>) -> DVector<f64> {
        self.forward(inputs, None).0.map(probability)
    }

    /// Backpropagates `d_logits` (one entry per row). Returns parameter
    /// gradients and the gradient with respect to the (pre-dropout) inputs.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: &DVector<f64>,
    ) -> (DiscriminatorGrads, DMatrix<f64>) {
        let n = self.layers.len();
        let mut grads: Vec<Layer> = Vec::with_capacity(n);
        let mut delta = DMatrix::from_column_slice(d_logits.len(), 1, d_logits.as_slice());
        for i in (0..n).rev() {
            if i + 1 != n {
                delta.component_mul_assign(&cache.pre[i].map(leaky_grad));
            }
            let prev = if i == 0 { &cache.input } else { &cache.post[i - 1] };
            let gw = delta.transpose() * prev;
            let gb = delta.row_sum().transpose();
            let next = &delta * &self.layers[i].weights;
            grads.push(Layer {
                weights: gw,
                bias: gb,
            });
            delta = next;
        }
        grads.reverse();
        if let Some(m) = &cache.mask {
            delta.component_mul_assign(m);
        }
        (DiscriminatorGrads { layers: grads }, delta)
    }
}

/// Clamped probability and its logistic form.
pub(crate) fn probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary cross-entropy of one prediction against a (possibly smoothed)
/// label.
pub fn bce(p: f64, label: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

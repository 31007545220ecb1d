//! Small dense-network toolkit: layers, backprop, Adam, finite-difference checks.
//!
//! Everything runs serially in f64 so that training is bit-reproducible for a
//! fixed seed.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Identity,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer. `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(input: usize, output: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        // Drawn at storage precision so untouched parameters survive a save exactly.
        let weights = Array2::from_shape_fn((output, input), |_| rng.random_range(-limit..=limit) as f32 as f64);
        Self {
            weights,
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn preactivation(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = self.preactivation(x);
        self.activation.apply(&mut z);
        z
    }

    /// Gradient with respect to the pre-activation, given the gradient with
    /// respect to this layer's output. Softmax layers must be paired with a
    /// loss that supplies the pre-activation gradient directly.
    pub fn activation_backward(&self, output: &Array2<f64>, grad_out: Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Identity => grad_out,
            Activation::Sigmoid => grad_out * &output.mapv(|a| a * (1.0 - a)),
            Activation::Softmax => {
                // Full Jacobian-vector product: dz = a * (g - sum(g * a)).
                let mut dz = grad_out;
                for (mut g, a) in dz.rows_mut().into_iter().zip(output.rows()) {
                    let dot: f64 = g.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
                    g.zip_mut_with(&a, |gi, &ai| *gi = ai * (*gi - dot));
                }
                dz
            }
        }
    }

    /// Returns parameter gradients and the gradient with respect to `input`.
    pub fn backward(&self, input: &Array2<f64>, grad_pre: &Array2<f64>) -> (DenseGrad, Array2<f64>) {
        let grad = DenseGrad {
            weights: grad_pre.t().dot(input),
            bias: grad_pre.sum_axis(Axis(0)),
        };
        (grad, grad_pre.dot(&self.weights))
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend(self.weights.iter());
        out.extend(self.bias.iter());
    }

    /// Reads parameters from the front of `src`; returns the number consumed.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let nw = self.weights.len();
        for (w, v) in self.weights.iter_mut().zip(&src[..nw]) {
            *w = *v;
        }
        for (b, v) in self.bias.iter_mut().zip(&src[nw..]) {
            *b = *v;
        }
        self.param_count()
    }

    /// Rounds every parameter to the nearest f32, the precision models are stored at.
    pub fn round_to_f32(&mut self) {
        self.weights.mapv_inplace(|w| w as f32 as f64);
        self.bias.mapv_inplace(|b| b as f32 as f64);
    }
}

impl DenseGrad {
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend(self.weights.iter());
        out.extend(self.bias.iter());
    }
}

/// Forward pass through a chain of layers, keeping every intermediate output.
/// `outputs[0]` is the input itself.
pub fn forward_chain(layers: &[Dense], x: &Array2<f64>) -> Vec<Array2<f64>> {
    let mut outputs = Vec::with_capacity(layers.len() + 1);
    outputs.push(x.clone());
    for layer in layers {
        let next = layer.forward(outputs.last().unwrap());
        outputs.push(next);
    }
    outputs
}

/// Backpropagates `grad_pre` (gradient w.r.t. the last layer's pre-activation)
/// through the chain. Returns per-layer gradients and the input gradient.
pub fn backward_chain(
    layers: &[Dense],
    outputs: &[Array2<f64>],
    grad_pre: Array2<f64>,
) -> (Vec<DenseGrad>, Array2<f64>) {
    let mut grads = Vec::with_capacity(layers.len());
    let mut g_pre = grad_pre;
    let mut g_in = Array2::zeros((0, 0));
    for (i, layer) in layers.iter().enumerate().rev() {
        let (grad, g_x) = layer.backward(&outputs[i], &g_pre);
        grads.push(grad);
        if i > 0 {
            g_pre = layers[i - 1].activation_backward(&outputs[i], g_x);
        } else {
            g_in = g_x;
        }
    }
    grads.reverse();
    (grads, g_in)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer over a list of dense layers.
///
/// A gradient entry that is exactly zero leaves its parameter and moments
/// untouched.
#[derive(Debug, Clone)]
pub struct Adam {
    pub params: AdamParams,
    pub learning_rate: f64,
    step: u64,
    first: Vec<DenseGrad>,
    second: Vec<DenseGrad>,
}

impl Adam {
    pub fn new(layers: &[Dense], learning_rate: f64, params: AdamParams) -> Self {
        let zeros: Vec<DenseGrad> = layers.iter().map(DenseGrad::zeros_like).collect();
        Self {
            params,
            learning_rate,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step(&mut self, layers: &mut [Dense], grads: &[DenseGrad]) {
        self.step += 1;
        let AdamParams { beta1, beta2, epsilon } = self.params;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let lr = self.learning_rate;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            if g == 0.0 {
                return;
            }
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        };
        for (((layer, grad), m), v) in layers
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            ndarray::Zip::from(&mut layer.weights)
                .and(&grad.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&grad.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// Models whose parameters can be read and written as one flat vector.
pub trait Parameterized: Clone {
    fn flat_params(&self) -> Vec<f64>;
    fn set_flat_params(&mut self, params: &[f64]);
}

pub const FD_STEP: f64 = 1e-5;

/// Compares analytic gradients with central finite differences.
///
/// `loss_and_grad` returns the loss and its flat gradient for a model. The
/// result is `max_i |g_a - g_fd| / max(1, |g_a| + |g_fd|)`.
pub fn finite_difference_check<M, F>(model: &M, loss_and_grad: F) -> f64
where
    M: Parameterized,
    F: Fn(&M) -> (f64, Vec<f64>),
{
    let n = model.flat_params().len();
    finite_difference_check_at(model, loss_and_grad, 0..n)
}

/// [`finite_difference_check`] restricted to the given flat parameter indices.
pub fn finite_difference_check_at<M, F, I>(model: &M, loss_and_grad: F, indices: I) -> f64
where
    M: Parameterized,
    F: Fn(&M) -> (f64, Vec<f64>),
    I: IntoIterator<Item = usize>,
{
    let (_, analytic) = loss_and_grad(model);
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut params = base.clone();
    let mut worst: f64 = 0.0;
    for i in indices {
        let g_a = analytic[i];
        params[i] = base[i] + FD_STEP;
        probe.set_flat_params(&params);
        let plus = loss_and_grad(&probe).0;
        params[i] = base[i] - FD_STEP;
        probe.set_flat_params(&params);
        let minus = loss_and_grad(&probe).0;
        params[i] = base[i];
        let g_fd = (plus - minus) / (2.0 * FD_STEP);
        let rel = (g_a - g_fd).abs() / (g_a.abs() + g_fd.abs()).max(1.0);
        worst = worst.max(rel);
    }
    worst
}

pub fn rows_to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j])
}

pub fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut z = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0]).unwrap();
        Activation::Softmax.apply(&mut z);
        for row in z.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn glorot_within_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Dense::glorot(10, 6, Activation::Sigmoid, &mut rng);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(l.weights.iter().all(|w| w.abs() <= limit));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn adam_skips_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layers = vec![Dense::glorot(3, 2, Activation::Identity, &mut rng)];
        let before = layers.clone();
        let mut opt = Adam::new(&layers, 0.1, AdamParams::default());
        let zero = DenseGrad::zeros_like(&layers[0]);
        for _ in 0..5 {
            opt.step(&mut layers, std::slice::from_ref(&zero));
        }
        assert_eq!(layers, before);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut layers = vec![Dense::zeros(1, 1, Activation::Identity)];
        let mut opt = Adam::new(&layers, 0.01, AdamParams::default());
        let mut g = DenseGrad::zeros_like(&layers[0]);
        g.weights[[0, 0]] = 3.0;
        g.bias[0] = -0.5;
        opt.step(&mut layers, &[g]);
        assert!((layers[0].weights[[0, 0]] + 0.01).abs() < 1e-9);
        assert!((layers[0].bias[0] - 0.01).abs() < 1e-9);
    }
}

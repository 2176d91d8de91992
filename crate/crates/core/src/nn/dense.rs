use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{join, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Fully connected layer, `y = act(W x + b)` with `W` stored row-major
/// (`outputs × inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible across runs.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Dense {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    /// Returns the post-activation output.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.inputs {
            return Err(Error::shape(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs,
                input.len()
            )));
        }
        let mut out = Vec::with_capacity(self.outputs);
        for o in 0..self.outputs {
            let z = dot(self.row(o), input) + self.bias[o];
            out.push(match self.activation {
                Activation::Relu => z.max(0.0),
                Activation::None => z,
            });
        }
        Ok(out)
    }

    /// Backpropagates `grad_out` (w.r.t. the post-activation output).
    /// Parameter gradients are accumulated into `grads` when given; the
    /// input gradient is returned.
    pub fn backward(
        &self,
        input: &[f64],
        output: &[f64],
        grad_out: &[f64],
        grads: Option<&mut Dense>,
    ) -> Vec<f64> {
        let delta: Vec<f64> = match self.activation {
            Activation::Relu => grad_out
                .iter()
                .zip(output)
                .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                .collect(),
            Activation::None => grad_out.to_vec(),
        };
        let mut grad_in = vec![0.0; self.inputs];
        for (o, d) in delta.iter().enumerate() {
            if *d != 0.0 {
                axpy(*d, self.row(o), &mut grad_in);
            }
        }
        if let Some(g) = grads {
            for (o, d) in delta.iter().enumerate() {
                if *d != 0.0 {
                    axpy(*d, input, &mut g.weights[o * self.inputs..(o + 1) * self.inputs]);
                    g.bias[o] += d;
                }
            }
        }
        grad_in
    }
}

impl Parameters for Dense {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        f(join(prefix, "w"), &self.weights);
        f(join(prefix, "b"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        f(join(prefix, "w"), &mut self.weights);
        f(join(prefix, "b"), &mut self.bias);
    }
}

/// A stack of dense layers; hidden layers use ReLU, the output layer is
/// linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward`]: `values[0]` is the input and
/// `values[i + 1]` the output of layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache {
    values: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn input(&self) -> &[f64] {
        &self.values[0]
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::None } else { Activation::Relu };
                Dense::new(w[0], w[1], act, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::shape(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let next = layer.forward(values.last().unwrap())?;
            values.push(next);
        }
        let out = values.last().unwrap().clone();
        Ok((out, MlpCache { values }))
    }

    /// Reverse-mode pass over a cache produced by [`Mlp::forward`] on this
    /// network. Returns the gradient w.r.t. the network input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], mut grads: Option<&mut Mlp>) -> Result<Vec<f64>> {
        let stale = cache.values.len() != self.layers.len() + 1
            || cache
                .values
                .iter()
                .zip(self.dims())
                .any(|(v, d)| v.len() != d);
        if stale {
            return Err(Error::Usage("MLP cache does not match this network".into()));
        }
        if grad_out.len() != self.output_dim() {
            return Err(Error::shape(format!(
                "output gradient has {} entries, network emits {}",
                grad_out.len(),
                self.output_dim()
            )));
        }
        let mut g = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let lg = grads.as_deref_mut().map(|m| &mut m.layers[i]);
            g = layer.backward(&cache.values[i], &cache.values[i + 1], &g, lg);
        }
        Ok(g)
    }
}

impl Parameters for Mlp {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a [f64])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, GradCheck};
    use crate::nn::params::zeros_like;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::from_layers(vec![
            Dense::zeros(3, 5, Activation::Relu),
            Dense::zeros(5, 2, Activation::None),
        ])
        .unwrap();
        let (y, _) = mlp.forward(&[1.0, -7.0, 3.5]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let mut l = Dense::zeros(2, 2, Activation::None);
        l.weights = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(l.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn hand_evaluated_two_layer_relu() {
        // h = relu([[1, -1], [2, 0.5]] x + [0, -1]) ; y = [3, -2] h + 0.5
        let mut l1 = Dense::zeros(2, 2, Activation::Relu);
        l1.weights = vec![1.0, -1.0, 2.0, 0.5];
        l1.bias = vec![0.0, -1.0];
        let mut l2 = Dense::zeros(2, 1, Activation::None);
        l2.weights = vec![3.0, -2.0];
        l2.bias = vec![0.5];
        let mlp = Mlp::from_layers(vec![l1, l2]).unwrap();
        // x = (2, 1): h = relu(1, 3.5) = (1, 3.5); y = 3 - 7 + 0.5 = -3.5
        assert_eq!(mlp.forward(&[2.0, 1.0]).unwrap().0, vec![-3.5]);
        // x = (-1, 1): h = relu(-2, -3.5) = (0, 0); y = 0.5
        assert_eq!(mlp.forward(&[-1.0, 1.0]).unwrap().0, vec![0.5]);
    }

    #[test]
    fn input_dimension_mismatch_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&[3, 4, 2], &mut rng);
        assert!(matches!(mlp.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Mlp::new(&[3, 4, 2], &mut rng);
        let b = Mlp::new(&[3, 5, 2], &mut rng);
        let (_, cache) = a.forward(&[0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(b.backward(&cache, &[1.0, 1.0], None), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = Mlp::new(&[3, 6, 5, 2], &mut rng);
        let x = [0.3, -0.8, 1.1];
        let w = [0.7, -1.3];
        let loss = |m: &Mlp| {
            let (y, _) = m.forward(&x).unwrap();
            y[0] * w[0] + y[1] * w[1]
        };
        let mut grads = zeros_like(&mlp);
        let (_, cache) = mlp.forward(&x).unwrap();
        mlp.backward(&cache, &w, Some(&mut grads)).unwrap();
        let report = check_gradients(&mlp, &grads, loss, &GradCheck::exhaustive());
        assert!(report.passed(1e-4), "{report:?}");
    }

    #[test]
    fn zero_and_scaled_output_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&[2, 4, 3], &mut rng);
        let (_, cache) = mlp.forward(&[0.5, -0.25]).unwrap();

        let mut g0 = zeros_like(&mlp);
        let gin0 = mlp.backward(&cache, &[0.0; 3], Some(&mut g0)).unwrap();
        assert!(gin0.iter().all(|v| *v == 0.0));
        assert!(g0.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0)));

        let dy = [0.3, -1.2, 0.8];
        let mut g1 = zeros_like(&mlp);
        let gin1 = mlp.backward(&cache, &dy, Some(&mut g1)).unwrap();
        let mut g2 = zeros_like(&mlp);
        let dy2: Vec<f64> = dy.iter().map(|v| 2.0 * v).collect();
        let gin2 = mlp.backward(&cache, &dy2, Some(&mut g2)).unwrap();
        for (a, b) in gin1.iter().zip(&gin2) {
            assert_eq!(2.0 * a, *b);
        }
        for (ta, tb) in g1.tensors().iter().zip(g2.tensors()) {
            for (a, b) in ta.iter().zip(tb.iter()) {
                assert_eq!(2.0 * a, *b);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mlp = Mlp::new(&[4, 16, 2], &mut rng);
        let x = [1.0, 2.0, -3.0, 0.5];
        assert_eq!(mlp.forward(&x).unwrap().0, mlp.forward(&x).unwrap().0);
    }
}

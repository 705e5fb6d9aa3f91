use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::{Parameters, Tensor};
use crate::error::{check_len, PerpError, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(PerpError::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected layer `activation(W x + b)`, W stored `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

/// Intermediates kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Vec<f64>,
    output: Vec<f64>,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias.
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let values = (0..input * output)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        Self {
            weight: Tensor::new(vec![output, input], values).expect("shape by construction"),
            bias: Tensor::zeros(vec![output]),
            activation,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(PerpError::Config("dense weight must be 2-d".into()));
        }
        check_len("dense bias", weight.shape()[0], bias.len())?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_size(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_size(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Multiplies the weights (and bias) by `factor`; used for small-output heads.
    pub fn scale(&mut self, factor: f64) {
        self.weight.values_mut().iter_mut().for_each(|w| *w *= factor);
        self.bias.values_mut().iter_mut().for_each(|b| *b *= factor);
    }

    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("dense input", self.input_size(), input.len())?;
        let n_in = self.input_size();
        let w = self.weight.values();
        Ok(self
            .bias
            .values()
            .iter()
            .enumerate()
            .map(|(o, &b)| {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = dot(row, input) + b;
                self.activation.apply(z)
            })
            .collect())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        let output = self.infer(input)?;
        let cache = DenseCache {
            input: input.to_vec(),
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Accumulates parameter gradients and returns d(loss)/d(input).
    pub fn backward(&mut self, cache: &DenseCache, grad_output: &[f64]) -> Vec<f64> {
        let n_in = self.input_size();
        let mut grad_input = vec![0.0; n_in];
        let activation = self.activation;
        let (w, gw) = self.weight.values_and_grad_mut();
        let mut dz = Vec::with_capacity(grad_output.len());
        for (o, (&go, &y)) in grad_output.iter().zip(&cache.output).enumerate() {
            let d = go * activation.derivative_from_output(y);
            dz.push(d);
            if d == 0.0 {
                continue;
            }
            let row = o * n_in;
            for i in 0..n_in {
                gw[row + i] += d * cache.input[i];
                grad_input[i] += d * w[row + i];
            }
        }
        let gb = self.bias.grad_mut();
        for (g, d) in gb.iter_mut().zip(dz) {
            *g += d;
        }
        grad_input
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4 * 4;
    for (x, y) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = a[chunks..].iter().zip(&b[chunks..]).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Parameters for DenseLayer {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_error, numeric_grad};
    use crate::rng::rng_from;

    #[test]
    fn identity_layer_passes_input_through() {
        let w = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let layer = DenseLayer::from_parts(w, Tensor::zeros(vec![3]), Activation::Identity).unwrap();
        assert_eq!(layer.infer(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_tanh_layer_outputs_zero() {
        let layer = DenseLayer::from_parts(
            Tensor::zeros(vec![4, 3]),
            Tensor::zeros(vec![4]),
            Activation::Tanh,
        )
        .unwrap();
        assert_eq!(layer.infer(&[5.0, -2.0, 0.3]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let mut rng = rng_from(0, &[]);
        let layer = DenseLayer::new(3, 2, Activation::Relu, &mut rng);
        assert!(matches!(
            layer.infer(&[1.0, 2.0]),
            Err(PerpError::Shape { .. })
        ));
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut rng = rng_from(1, &[]);
        let layer = DenseLayer::new(64, 64, Activation::Tanh, &mut rng);
        let limit = (6.0f64 / 128.0).sqrt();
        assert!(layer.weight.values().iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (seed, act) in [(0, Activation::Tanh), (1, Activation::Identity), (2, Activation::Relu)] {
            let mut rng = rng_from(seed, &[]);
            let mut layer = DenseLayer::new(3, 4, act, &mut rng);
            layer.bias.values_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let upstream: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |l: &DenseLayer, x: &[f64]| -> f64 {
                l.infer(x).unwrap().iter().zip(&upstream).map(|(y, u)| y * u).sum()
            };
            let (_, cache) = layer.forward(&x).unwrap();
            layer.zero_grad();
            let gx = layer.backward(&cache, &upstream);
            let analytic_w = layer.weight.grad().unwrap().to_vec();
            let numeric_w = numeric_grad(layer.weight.values().to_vec(), |w| {
                let mut l = layer.clone();
                l.weight.values_mut().copy_from_slice(w);
                loss(&l, &x)
            });
            let numeric_x = numeric_grad(x.clone(), |xv| loss(&layer, xv));
            assert!(max_rel_error(&analytic_w, &numeric_w) < 1e-4);
            assert!(max_rel_error(&gx, &numeric_x) < 1e-4);
        }
    }
}

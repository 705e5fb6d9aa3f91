use super::dense::{Activation, DenseCache, DenseLayer};
use super::tensor::{prefixed, Parameters, Tensor};
use crate::error::Result;
use crate::rng::Rng;

/// Stack of dense layers with a shared hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

pub struct MlpCache(Vec<DenseCache>);

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_size)
    }

    pub fn last_layer_mut(&mut self) -> &mut DenseLayer {
        self.layers.last_mut().expect("non-empty")
    }

    pub fn infer(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let mut x = input.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, MlpCache(caches)))
    }

    pub fn backward(&mut self, cache: &MlpCache, grad_output: &[f64]) -> Vec<f64> {
        let mut g = grad_output.to_vec();
        for (layer, c) in self.layers.iter_mut().zip(&cache.0).rev() {
            g = layer.backward(c, &g);
        }
        g
    }
}

impl Parameters for Mlp {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&i.to_string(), l.named_params()))
            .collect()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&i.to_string(), l.named_params_mut()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_error, numeric_grad};
    use crate::rng::rng_from;

    #[test]
    fn two_hidden_layer_gradients() {
        let mut rng = rng_from(3, &[]);
        let mut mlp = Mlp::new(&[3, 8, 8, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let x = [0.2, -0.4, 0.9];
        let loss = |m: &Mlp| -> f64 {
            let y = m.infer(&x).unwrap();
            0.5 * y[0] * y[0] - y[1]
        };
        let (y, cache) = mlp.forward(&x).unwrap();
        mlp.backward(&cache, &[y[0], -1.0]);
        for idx in 0..mlp.layers.len() {
            let analytic = mlp.layers[idx].weight.grad().unwrap().to_vec();
            let numeric = numeric_grad(mlp.layers[idx].weight.values().to_vec(), |w| {
                let mut m = mlp.clone();
                m.layers[idx].weight.values_mut().copy_from_slice(w);
                loss(&m)
            });
            assert!(max_rel_error(&analytic, &numeric) < 1e-4, "layer {idx}");
        }
        let names: Vec<String> = mlp.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "0.weight");
        assert_eq!(names[5], "2.bias");
    }
}

use rand::Rng as _;

use super::tensor::{Parameters, Tensor};
use crate::error::{check_len, Result};
use crate::rng::Rng;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Single LSTM cell. Gate blocks are stacked in the order input, forget,
/// cell candidate, output: `w_input` is `[4H × I]`, `w_hidden` is `[4H × H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-nonlinearity gate values `[i | f | g | o]`.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Gradients flowing out of one backward step.
pub struct LstmStepGrad {
    pub input: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
}

impl LstmCell {
    /// Glorot-uniform weights, zero bias except the forget gate at 1.0.
    pub fn new(input_size: usize, hidden_size: usize, rng: &mut Rng) -> Self {
        let rows = 4 * hidden_size;
        let mut init = |cols: usize| {
            let limit = (6.0 / (cols + hidden_size) as f64).sqrt();
            let values = (0..rows * cols)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            Tensor::new(vec![rows, cols], values).expect("shape by construction")
        };
        let w_input = init(input_size);
        let w_hidden = init(hidden_size);
        let mut bias = Tensor::zeros(vec![rows]);
        bias.values_mut()[hidden_size..2 * hidden_size]
            .iter_mut()
            .for_each(|b| *b = 1.0);
        Self {
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn zeroed(input_size: usize, hidden_size: usize) -> Self {
        Self {
            w_input: Tensor::zeros(vec![4 * hidden_size, input_size]),
            w_hidden: Tensor::zeros(vec![4 * hidden_size, hidden_size]),
            bias: Tensor::zeros(vec![4 * hidden_size]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_input.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.shape()[1]
    }

    pub fn step(&self, input: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>, LstmStepCache)> {
        let n_in = self.input_size();
        let hs = self.hidden_size();
        check_len("lstm input", n_in, input.len())?;
        check_len("lstm hidden", hs, h_prev.len())?;
        check_len("lstm cell", hs, c_prev.len())?;

        let wx = self.w_input.values();
        let wh = self.w_hidden.values();
        let mut gates = self.bias.values().to_vec();
        for (r, pre) in gates.iter_mut().enumerate() {
            let rx = &wx[r * n_in..(r + 1) * n_in];
            let rh = &wh[r * hs..(r + 1) * hs];
            *pre += rx.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
                + rh.iter().zip(h_prev).map(|(w, h)| w * h).sum::<f64>();
        }
        for (r, v) in gates.iter_mut().enumerate() {
            *v = if (2 * hs..3 * hs).contains(&r) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        let mut c = vec![0.0; hs];
        let mut h = vec![0.0; hs];
        let mut tanh_c = vec![0.0; hs];
        for j in 0..hs {
            let (i, f, g, o) = (gates[j], gates[hs + j], gates[2 * hs + j], gates[3 * hs + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        let cache = LstmStepCache {
            input: input.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            tanh_c,
        };
        Ok((h, c, cache))
    }

    /// Backward through one step given gradients on its hidden and cell outputs.
    pub fn backward_step(&mut self, cache: &LstmStepCache, grad_h: &[f64], grad_c: &[f64]) -> LstmStepGrad {
        let n_in = self.input_size();
        let hs = self.hidden_size();
        let g = &cache.gates;
        let mut dpre = vec![0.0; 4 * hs];
        let mut dc_prev = vec![0.0; hs];
        for j in 0..hs {
            let (i, f, gg, o) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
            let tc = cache.tanh_c[j];
            let dc = grad_c[j] + grad_h[j] * o * (1.0 - tc * tc);
            let do_ = grad_h[j] * tc;
            let di = dc * gg;
            let dg = dc * i;
            let df = dc * cache.c_prev[j];
            dc_prev[j] = dc * f;
            dpre[j] = di * i * (1.0 - i);
            dpre[hs + j] = df * f * (1.0 - f);
            dpre[2 * hs + j] = dg * (1.0 - gg * gg);
            dpre[3 * hs + j] = do_ * o * (1.0 - o);
        }

        let mut dx = vec![0.0; n_in];
        let mut dh_prev = vec![0.0; hs];
        {
            let (wx, gwx) = self.w_input.values_and_grad_mut();
            for (r, &d) in dpre.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = r * n_in;
                for k in 0..n_in {
                    gwx[row + k] += d * cache.input[k];
                    dx[k] += d * wx[row + k];
                }
            }
        }
        {
            let (wh, gwh) = self.w_hidden.values_and_grad_mut();
            for (r, &d) in dpre.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = r * hs;
                for k in 0..hs {
                    gwh[row + k] += d * cache.h_prev[k];
                    dh_prev[k] += d * wh[row + k];
                }
            }
        }
        for (gb, d) in self.bias.grad_mut().iter_mut().zip(&dpre) {
            *gb += d;
        }
        LstmStepGrad {
            input: dx,
            h_prev: dh_prev,
            c_prev: dc_prev,
        }
    }

    /// Runs the cell over a sequence from a zero state. Returns every hidden
    /// state plus the per-step caches.
    pub fn forward_sequence(&self, inputs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<LstmStepCache>)> {
        let hs = self.hidden_size();
        let mut h = vec![0.0; hs];
        let mut c = vec![0.0; hs];
        let mut hiddens = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (h2, c2, cache) = self.step(x, &h, &c)?;
            h = h2;
            c = c2;
            hiddens.push(h.clone());
            caches.push(cache);
        }
        Ok((hiddens, caches))
    }

    /// Final hidden state of a zero-initialized run, without caches.
    pub fn encode(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let hs = self.hidden_size();
        let mut h = vec![0.0; hs];
        let mut c = vec![0.0; hs];
        for x in inputs {
            let (h2, c2, _) = self.step(x, &h, &c)?;
            h = h2;
            c = c2;
        }
        Ok(h)
    }

    /// Backpropagation through time. `grad_hidden[t]` is the loss gradient on
    /// the hidden state emitted at step `t`. Returns per-step input gradients.
    pub fn backward_sequence(&mut self, caches: &[LstmStepCache], grad_hidden: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let hs = self.hidden_size();
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        let mut dxs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let dh: Vec<f64> = grad_hidden[t]
                .iter()
                .zip(&dh_next)
                .map(|(a, b)| a + b)
                .collect();
            let grads = self.backward_step(&caches[t], &dh, &dc_next);
            dxs[t] = grads.input;
            dh_next = grads.h_prev;
            dc_next = grads.c_prev;
        }
        dxs
    }
}

impl Parameters for LstmCell {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_input".into(), &self.w_input),
            ("w_hidden".into(), &self.w_hidden),
            ("bias".into(), &self.bias),
        ]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w_input".into(), &mut self.w_input),
            ("w_hidden".into(), &mut self.w_hidden),
            ("bias".into(), &mut self.bias),
        ]
    }
}

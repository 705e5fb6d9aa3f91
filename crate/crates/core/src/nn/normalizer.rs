use super::tensor::Tensor;
use crate::error::{check_len, Result};

const CLIP: f64 = 5.0;

/// Running per-feature mean/variance used to standardize policy inputs.
/// Statistics are merged batch-wise (Chan et al.) so updates are order-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, batch: &[Vec<f64>]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let dim = self.dim();
        let mut bmean = vec![0.0; dim];
        for x in batch {
            for (m, v) in bmean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut bvar = vec![0.0; dim];
        for x in batch {
            for ((s, v), m) in bvar.iter_mut().zip(x).zip(&bmean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        if self.count == 0.0 {
            self.mean = bmean;
            self.var = bvar;
            self.count = n;
            return;
        }
        let total = self.count + n;
        for i in 0..dim {
            let delta = bmean[i] - self.mean[i];
            let m2 = self.var[i] * self.count + bvar[i] * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.var[i] = m2 / total;
        }
        self.count = total;
    }

    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("normalizer input", self.dim(), x.len())?;
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((v, m), s)| ((v - m) / (s + 1e-8).sqrt()).clamp(-CLIP, CLIP))
            .collect())
    }

    pub fn to_tensors(&self) -> (Tensor, Tensor, Tensor) {
        let d = self.dim();
        (
            Tensor::new(vec![d], self.mean.clone()).expect("shape"),
            Tensor::new(vec![d], self.var.clone()).expect("shape"),
            Tensor::new(vec![1], vec![self.count]).expect("shape"),
        )
    }

    pub fn from_tensors(mean: &Tensor, var: &Tensor, count: &Tensor) -> Result<Self> {
        check_len("normalizer variance", mean.len(), var.len())?;
        check_len("normalizer count", 1, count.len())?;
        Ok(Self {
            mean: mean.values().to_vec(),
            var: var.values().to_vec(),
            count: count.values()[0],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batched_merge_equals_single_pass() {
        let data: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.3, (i * i) as f64 % 7.0]).collect();
        let mut whole = RunningNorm::new(2);
        whole.update(&data);
        let mut parts = RunningNorm::new(2);
        for chunk in data.chunks(7) {
            parts.update(chunk);
        }
        for i in 0..2 {
            assert!((whole.mean[i] - parts.mean[i]).abs() < 1e-12);
            assert!((whole.var[i] - parts.var[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn fresh_normalizer_is_identity_up_to_clip() {
        let n = RunningNorm::new(3);
        let y = n.normalize(&[0.5, -1.0, 9.0]).unwrap();
        for (a, b) in y.iter().zip([0.5, -1.0, 5.0]) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}

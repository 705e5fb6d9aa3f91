//! Action distributions placed on top of policy networks, with closed-form
//! gradients of log-probability and entropy with respect to their parameters.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{PerpError, Result};
use crate::rng::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(PerpError::Numeric("categorical head over zero actions".into()));
        }
        if let Some(bad) = logits.iter().find(|l| !l.is_finite()) {
            return Err(PerpError::Numeric(format!("non-finite logit {bad}")));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|l| l - log_z).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Ok(Self { probs, log_probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 })
            .sum::<f64>()
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// d log p(action) / d logits = onehot(action) − p.
    pub fn grad_log_prob(&self, action: usize) -> Vec<f64> {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| if i == action { 1.0 - p } else { -p })
            .collect()
    }

    /// d H / d logits_j = −p_j (log p_j + H).
    pub fn grad_entropy(&self) -> Vec<f64> {
        let h = self.entropy();
        self.probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| -p * (lp + h))
            .collect()
    }
}

/// Softmax head: probabilities, one sample, its log-probability, and entropy.
pub fn categorical_head(logits: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, usize, f64, f64)> {
    let dist = Categorical::from_logits(logits)?;
    let a = dist.sample(rng);
    Ok((dist.probs.clone(), a, dist.log_prob(a), dist.entropy()))
}

/// Diagonal Gaussian parameterized by mean and log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(PerpError::Shape {
                context: "gaussian head",
                expected: mean.len(),
                actual: log_std.len(),
            });
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(PerpError::Numeric("non-finite gaussian parameters".into()));
        }
        Ok(Self { mean, log_std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn sample_with_noise(&self, noise: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(noise)
            .map(|((m, s), e)| m + e * s.exp())
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let noise: Vec<f64> = (0..self.mean.len())
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.sample_with_noise(&noise)
    }

    pub fn log_prob(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(x)
            .map(|((m, s), x)| {
                let z = (x - m) / s.exp();
                -0.5 * z * z - s - 0.5 * LN_2PI
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|s| s + 0.5 * (1.0 + LN_2PI)).sum()
    }

    /// Gradients of `log_prob(x)` with respect to (mean, log_std).
    pub fn grad_log_prob(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut dm = Vec::with_capacity(x.len());
        let mut ds = Vec::with_capacity(x.len());
        for ((m, s), x) in self.mean.iter().zip(&self.log_std).zip(x) {
            let var = (2.0 * s).exp();
            let d = x - m;
            dm.push(d / var);
            ds.push(d * d / var - 1.0);
        }
        (dm, ds)
    }
}

/// Gaussian head: one sample, its log-density, and entropy.
pub fn gaussian_head(mean: &[f64], log_std: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, f64, f64)> {
    let dist = DiagGaussian::new(mean.to_vec(), log_std.to_vec())?;
    let x = dist.sample(rng);
    let lp = dist.log_prob(&x);
    Ok((x, lp, dist.entropy()))
}

/// `bound · tanh(u)` and the log-Jacobian correction `Σ log(bound · (1 − tanh²u))`.
pub fn squash(pre: &[f64], bound: f64) -> (Vec<f64>, f64) {
    let mut log_det = 0.0;
    let out = pre
        .iter()
        .map(|u| {
            let t = u.tanh();
            // log(1 - tanh^2 u) computed stably
            log_det += bound.ln() + 2.0 * (std::f64::consts::LN_2 - u.abs() - (-2.0 * u.abs()).exp().ln_1p());
            bound * t
        })
        .collect();
    (out, log_det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_rel_error, numeric_grad};
    use crate::rng::rng_from;

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let d = Categorical::from_logits(&[0.7; 18]).unwrap();
        assert!(d.probs().iter().all(|p| (p - 1.0 / 18.0).abs() < 1e-12));
        assert!((d.entropy() - 18f64.ln()).abs() < 1e-12);
        assert!((d.entropy() - 2.8904).abs() < 1e-4);
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dominant_logit_is_always_sampled() {
        let mut logits = vec![0.0; 18];
        logits[5] = 1e3;
        let d = Categorical::from_logits(&logits).unwrap();
        let mut rng = rng_from(0, &[]);
        assert!((0..1000).all(|_| d.sample(&mut rng) == 5));
        assert_eq!(d.argmax(), 5);
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(matches!(
            Categorical::from_logits(&[0.0, f64::NAN]),
            Err(PerpError::Numeric(_))
        ));
        assert!(DiagGaussian::new(vec![0.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn categorical_gradients() {
        let logits = [0.3, -1.2, 2.0, 0.0, 0.5];
        let d = Categorical::from_logits(&logits).unwrap();
        let num = numeric_grad(logits.to_vec(), |l| Categorical::from_logits(l).unwrap().log_prob(2));
        assert!(max_rel_error(&d.grad_log_prob(2), &num) < 1e-4);
        let num_h = numeric_grad(logits.to_vec(), |l| Categorical::from_logits(l).unwrap().entropy());
        assert!(max_rel_error(&d.grad_entropy(), &num_h) < 1e-4);
    }

    #[test]
    fn zero_noise_returns_mean() {
        let d = DiagGaussian::new(vec![1.5, -2.0], vec![0.3, -0.1]).unwrap();
        assert_eq!(d.sample_with_noise(&[0.0, 0.0]), vec![1.5, -2.0]);
    }

    #[test]
    fn standard_normal_density_at_zero() {
        let d = DiagGaussian::new(vec![0.0], vec![0.0]).unwrap();
        assert!((d.log_prob(&[0.0]) + 0.918_938_533).abs() < 1e-8);
        let d3 = DiagGaussian::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!((d3.log_prob(&[0.0; 3]) - 3.0 * -0.918_938_533).abs() < 1e-8);
    }

    #[test]
    fn gaussian_gradients() {
        let mean = vec![0.4, -1.0];
        let log_std = vec![-0.3, 0.2];
        let x = [1.1, -0.5];
        let d = DiagGaussian::new(mean.clone(), log_std.clone()).unwrap();
        let (dm, ds) = d.grad_log_prob(&x);
        let num_m = numeric_grad(mean.clone(), |m| DiagGaussian::new(m.to_vec(), log_std.clone()).unwrap().log_prob(&x));
        let num_s = numeric_grad(log_std.clone(), |s| DiagGaussian::new(mean.clone(), s.to_vec()).unwrap().log_prob(&x));
        assert!(max_rel_error(&dm, &num_m) < 1e-4);
        assert!(max_rel_error(&ds, &num_s) < 1e-4);
    }

    #[test]
    fn squash_log_det_matches_direct_formula() {
        for u in [-3.0, -0.2, 0.0, 0.7, 2.5] {
            let (y, ld) = squash(&[u], 6.0);
            let direct = (6.0 * (1.0 - u.tanh().powi(2))).ln();
            assert!((ld - direct).abs() < 1e-10);
            assert!(y[0].abs() <= 6.0);
        }
    }
}

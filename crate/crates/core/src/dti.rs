//! Driver-trait inference: an LSTM variational autoencoder over windows of
//! ego observations, the dataset it is trained on, and latent-space scoring.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{Driver, DriverProfile, TraitMean};
use crate::episode::{EmissionsModel, EpisodeRunner, EpisodeSpec};
use crate::error::{check_len, PerpError, Result};
use crate::nn::{
    Activation, AdamConfig, DenseCache, DenseLayer, LstmCell, Mlp, OptimizerState, Parameters,
    PolicyCheckpoint, Tensor,
};
use crate::pcp::{PcpAdvisor, PcpPolicy};
use crate::ppo::ActMode;
use crate::ring::{EgoObservation, IdmParams, RingConfig};
use crate::rng::{derive_seed, rng_from, Rng};

pub const CHECKPOINT_KIND: &str = "dti";
pub const OBS_DIM: usize = 3;

const STREAM_COLLECT_ENV: u64 = 21;
const STREAM_COLLECT_DRIVER: u64 = 22;
const STREAM_INIT: u64 = 23;
const STREAM_SPLIT: u64 = 24;
const STREAM_SHUFFLE: u64 = 25;
const STREAM_EPS: u64 = 26;

pub type Window = Vec<[f64; OBS_DIM]>;

/// One labeled observation window. The label is for evaluation only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitWindow {
    pub trait_mean: f64,
    pub states: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtiModelConfig {
    pub window: usize,
    pub hidden: usize,
    pub latent: usize,
}

impl Default for DtiModelConfig {
    fn default() -> Self {
        Self {
            window: 20,
            hidden: 32,
            latent: 2,
        }
    }
}

/// Encoder LSTM with mean / log-std heads, and a decoder LSTM fed the
/// latent at every step followed by a linear read-out.
#[derive(Debug, Clone, PartialEq)]
pub struct DtiModel {
    pub window: usize,
    pub encoder: LstmCell,
    pub f_mu: DenseLayer,
    pub f_sigma: DenseLayer,
    pub decoder: LstmCell,
    pub f_dec: DenseLayer,
    /// Per-component input standardization; reconstruction is scored in
    /// standardized units.
    pub scaling: InputScaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: [f64; OBS_DIM],
    pub std: [f64; OBS_DIM],
}

impl Default for InputScaling {
    fn default() -> Self {
        Self {
            mean: [0.0; OBS_DIM],
            std: [1.0; OBS_DIM],
        }
    }
}

impl InputScaling {
    /// Moments over every state of the given windows; std floored at 1e-6.
    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a [[f64; OBS_DIM]]>) -> Self {
        let (mut n, mut sum, mut sq) = (0.0, [0.0; OBS_DIM], [0.0; OBS_DIM]);
        for w in windows {
            for s in w {
                n += 1.0;
                for k in 0..OBS_DIM {
                    sum[k] += s[k];
                    sq[k] += s[k] * s[k];
                }
            }
        }
        if n == 0.0 {
            return Self::default();
        }
        let mean = sum.map(|v| v / n);
        let mut std = [1.0; OBS_DIM];
        for k in 0..OBS_DIM {
            std[k] = (sq[k] / n - mean[k] * mean[k]).max(0.0).sqrt().max(1e-6);
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &[[f64; OBS_DIM]]) -> Window {
        x.iter()
            .map(|s| std::array::from_fn(|k| (s[k] - self.mean[k]) / self.std[k]))
            .collect()
    }

    pub fn invert(&self, x: &[[f64; OBS_DIM]]) -> Window {
        x.iter()
            .map(|s| std::array::from_fn(|k| s[k] * self.std[k] + self.mean[k]))
            .collect()
    }
}

/// `z = μ + ε·exp(log σ)`, elementwise.
pub fn reparameterize(z_mu: &[f64], z_logstd: &[f64], eps: &[f64]) -> Vec<f64> {
    z_mu.iter()
        .zip(z_logstd)
        .zip(eps)
        .map(|((m, s), e)| m + e * s.exp())
        .collect()
}

/// `Σ_d 0.5·(μ² + exp(2 log σ) − 1) − log σ`: KL to the standard normal.
pub fn kl_divergence(z_mu: &[f64], z_logstd: &[f64]) -> f64 {
    z_mu.iter()
        .zip(z_logstd)
        .map(|(m, s)| 0.5 * (m * m + (2.0 * s).exp() - 1.0) - s)
        .sum()
}

pub fn mse(x: &[[f64; OBS_DIM]], x_hat: &[[f64; OBS_DIM]]) -> f64 {
    let n = (x.len() * OBS_DIM).max(1) as f64;
    x.iter()
        .zip(x_hat)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)))
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub beta_recon: f64,
    pub beta_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta_recon: 1.0,
            beta_kl: 1e-4,
        }
    }
}

/// `β_recon·MSE(x̂, x) + β_KL·KL(μ, log σ)`.
pub fn dti_loss(x: &[[f64; OBS_DIM]], x_hat: &[[f64; OBS_DIM]], z_mu: &[f64], z_logstd: &[f64], w: &LossWeights) -> f64 {
    w.beta_recon * mse(x, x_hat) + w.beta_kl * kl_divergence(z_mu, z_logstd)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

fn to_inputs(x: &[[f64; OBS_DIM]]) -> Vec<Vec<f64>> {
    x.iter().map(|s| s.to_vec()).collect()
}

impl DtiModel {
    pub fn new(cfg: &DtiModelConfig, rng: &mut Rng) -> Self {
        Self {
            window: cfg.window,
            encoder: LstmCell::new(OBS_DIM, cfg.hidden, rng),
            f_mu: DenseLayer::new(cfg.hidden, cfg.latent, Activation::Identity, rng),
            f_sigma: DenseLayer::new(cfg.hidden, cfg.latent, Activation::Identity, rng),
            decoder: LstmCell::new(cfg.latent, cfg.hidden, rng),
            f_dec: DenseLayer::new(cfg.hidden, OBS_DIM, Activation::Identity, rng),
            scaling: InputScaling::default(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.f_mu.output_size()
    }

    fn check_window(&self, x: &[[f64; OBS_DIM]]) -> Result<()> {
        if x.len() != self.window {
            return Err(PerpError::Input(format!(
                "trait window has {} states, expected {}",
                x.len(),
                self.window
            )));
        }
        Ok(())
    }

    /// `(z_μ, z_logσ)` from the final encoder hidden state.
    pub fn encode(&self, x: &[[f64; OBS_DIM]]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_window(x)?;
        let e = self.encoder.encode(&to_inputs(&self.scaling.apply(x)))?;
        Ok((self.f_mu.infer(&e)?, self.f_sigma.infer(&e)?))
    }

    /// Reconstruction of a full window from a latent vector, in input units.
    pub fn decode(&self, z: &[f64]) -> Result<Window> {
        Ok(self.scaling.invert(&self.decode_scaled(z)?))
    }

    fn decode_scaled(&self, z: &[f64]) -> Result<Window> {
        check_len("decoder latent", self.latent_dim(), z.len())?;
        let inputs = vec![z.to_vec(); self.window];
        let (hs, _) = self.decoder.forward_sequence(&inputs)?;
        hs.iter()
            .map(|h| {
                let y = self.f_dec.infer(h)?;
                Ok([y[0], y[1], y[2]])
            })
            .collect()
    }

    /// Loss of one window for a fixed noise draw; accumulates `scale`·∂loss
    /// into the parameter gradients.
    pub fn forward_backward(&mut self, x: &[[f64; OBS_DIM]], eps: &[f64], w: &LossWeights, scale: f64) -> Result<LossParts> {
        self.check_window(x)?;
        let x = &self.scaling.apply(x)[..];
        let (hs, enc_caches) = self.encoder.forward_sequence(&to_inputs(x))?;
        let e = hs.last().expect("non-empty window");
        let (mu, mu_cache) = self.f_mu.forward(e)?;
        let (ls, ls_cache) = self.f_sigma.forward(e)?;
        let z = reparameterize(&mu, &ls, eps);
        let (dh, dec_caches) = self.decoder.forward_sequence(&vec![z.clone(); self.window])?;
        let mut out_caches: Vec<DenseCache> = Vec::with_capacity(self.window);
        let mut x_hat = Vec::with_capacity(self.window);
        for h in &dh {
            let (y, c) = self.f_dec.forward(h)?;
            out_caches.push(c);
            x_hat.push([y[0], y[1], y[2]]);
        }
        let recon = mse(x, &x_hat);
        let kl = kl_divergence(&mu, &ls);
        let parts = LossParts {
            total: w.beta_recon * recon + w.beta_kl * kl,
            recon,
            kl,
        };

        let n = (self.window * OBS_DIM) as f64;
        let grad_h: Vec<Vec<f64>> = x_hat
            .iter()
            .zip(x)
            .zip(&out_caches)
            .map(|((xh, xt), c)| {
                let g: Vec<f64> = xh
                    .iter()
                    .zip(xt)
                    .map(|(a, b)| scale * w.beta_recon * 2.0 * (a - b) / n)
                    .collect();
                self.f_dec.backward(c, &g)
            })
            .collect();
        let dz_steps = self.decoder.backward_sequence(&dec_caches, &grad_h);
        let mut dz = vec![0.0; z.len()];
        for d in &dz_steps {
            for (acc, v) in dz.iter_mut().zip(d) {
                *acc += v;
            }
        }
        let dmu: Vec<f64> = dz.iter().zip(&mu).map(|(g, m)| g + scale * w.beta_kl * m).collect();
        let dls: Vec<f64> = dz
            .iter()
            .zip(&ls)
            .zip(eps)
            .map(|((g, s), e)| g * e * s.exp() + scale * w.beta_kl * ((2.0 * s).exp() - 1.0))
            .collect();
        let de_mu = self.f_mu.backward(&mu_cache, &dmu);
        let de_ls = self.f_sigma.backward(&ls_cache, &dls);
        let mut grad_enc = vec![vec![0.0; self.encoder.hidden_size()]; self.window];
        for (i, g) in grad_enc[self.window - 1].iter_mut().enumerate() {
            *g = de_mu[i] + de_ls[i];
        }
        self.encoder.backward_sequence(&enc_caches, &grad_enc);
        Ok(parts)
    }

    /// Loss of one window for a fixed noise draw, without gradients.
    pub fn loss(&self, x: &[[f64; OBS_DIM]], eps: &[f64], w: &LossWeights) -> Result<LossParts> {
        let (mu, ls) = self.encode(x)?;
        let x_hat = self.decode_scaled(&reparameterize(&mu, &ls, eps))?;
        let recon = mse(&self.scaling.apply(x), &x_hat);
        let kl = kl_divergence(&mu, &ls);
        Ok(LossParts {
            total: w.beta_recon * recon + w.beta_kl * kl,
            recon,
            kl,
        })
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        let mut ck = PolicyCheckpoint::new(CHECKPOINT_KIND);
        ck.put_lstm("encoder", &self.encoder);
        ck.put_mlp("f_mu", &Mlp { layers: vec![self.f_mu.clone()] });
        ck.put_mlp("f_sigma", &Mlp { layers: vec![self.f_sigma.clone()] });
        ck.put_lstm("decoder", &self.decoder);
        ck.put_mlp("f_dec", &Mlp { layers: vec![self.f_dec.clone()] });
        ck.set_meta("window", self.window);
        let sc: Vec<f64> = self.scaling.mean.iter().chain(&self.scaling.std).copied().collect();
        ck.put_tensor("input_scaling", &Tensor::new(vec![2, OBS_DIM], sc).expect("shape matches"));
        ck
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let single = |name: &str| -> Result<DenseLayer> {
            let mut m = ck.mlp(name)?;
            if m.layers.len() != 1 {
                return Err(PerpError::Config(format!("`{name}` must be a single dense layer")));
            }
            Ok(m.layers.remove(0))
        };
        let model = Self {
            window: ck.meta("window")?,
            encoder: ck.lstm("encoder")?,
            f_mu: single("f_mu")?,
            f_sigma: single("f_sigma")?,
            decoder: ck.lstm("decoder")?,
            f_dec: single("f_dec")?,
            scaling: match ck.tensor("input_scaling") {
                Ok(t) => {
                    check_len("input scaling", 2 * OBS_DIM, t.len())?;
                    let v = t.values();
                    InputScaling {
                        mean: std::array::from_fn(|k| v[k]),
                        std: std::array::from_fn(|k| v[OBS_DIM + k]),
                    }
                }
                Err(_) => InputScaling::default(),
            },
        };
        let h = model.encoder.hidden_size();
        let l = model.f_mu.output_size();
        let consistent = model.encoder.input_size() == OBS_DIM
            && model.f_mu.input_size() == h
            && model.f_sigma.input_size() == h
            && model.f_sigma.output_size() == l
            && model.decoder.input_size() == l
            && model.f_dec.input_size() == model.decoder.hidden_size()
            && model.f_dec.output_size() == OBS_DIM
            && model.window > 0;
        if !consistent {
            return Err(PerpError::Config("trait model checkpoint has inconsistent dimensions".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&PolicyCheckpoint::load(path)?)
    }
}

impl Parameters for DtiModel {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        for (p, part) in [
            ("encoder", self.encoder.named_params()),
            ("f_mu", self.f_mu.named_params()),
            ("f_sigma", self.f_sigma.named_params()),
            ("decoder", self.decoder.named_params()),
            ("f_dec", self.f_dec.named_params()),
        ] {
            v.extend(part.into_iter().map(|(n, t)| (format!("{p}.{n}"), t)));
        }
        v
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v = Vec::new();
        for (p, part) in [
            ("encoder", self.encoder.named_params_mut()),
            ("f_mu", self.f_mu.named_params_mut()),
            ("f_sigma", self.f_sigma.named_params_mut()),
            ("decoder", self.decoder.named_params_mut()),
            ("f_dec", self.f_dec.named_params_mut()),
        ] {
            v.extend(part.into_iter().map(|(n, t)| (format!("{p}.{n}"), t)));
        }
        v
    }
}

/// Latent trait from the most recent `window` observations. Short histories
/// are left-padded with their earliest state; the flag reports padding.
pub fn infer_trait(model: &DtiModel, history: &[EgoObservation]) -> Result<(Vec<f64>, bool)> {
    if history.is_empty() {
        return Err(PerpError::Input("trait inference needs at least one observation".into()));
    }
    let t = model.window;
    let recent = &history[history.len().saturating_sub(t)..];
    let padded = recent.len() < t;
    let mut x: Window = Vec::with_capacity(t);
    x.extend(std::iter::repeat_n(recent[0].to_array(), t - recent.len()));
    x.extend(recent.iter().map(|o| o.to_array()));
    if padded {
        log::debug!("trait window padded from {} to {t} states", recent.len());
    }
    Ok((model.encode(&x)?.0, padded))
}

// ---------------------------------------------------------------- dataset

pub fn write_dataset(path: &Path, data: &[TraitWindow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PerpError::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| PerpError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for row in data {
        let line = serde_json::to_string(row).expect("plain data serializes");
        writeln!(w, "{line}").map_err(|e| PerpError::io(path, e))?;
    }
    w.flush().map_err(|e| PerpError::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<TraitWindow>> {
    let f = std::fs::File::open(path).map_err(|e| PerpError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| PerpError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TraitWindow = serde_json::from_str(&line).map_err(|e| PerpError::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        TraitMean::from_value(row.trait_mean).map_err(|_| PerpError::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: unknown trait mean {}", i + 1, row.trait_mean),
        })?;
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub windows_per_trait: usize,
    pub warmup: usize,
    pub horizon: usize,
    pub delta: usize,
    pub window: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            windows_per_trait: 1000,
            warmup: 600,
            horizon: 1000,
            delta: 20,
            window: 20,
        }
    }
}

/// Disjoint windows from one episode's advisory-phase observations. The
/// window holding a collision step and everything after it are dropped.
pub fn split_windows(observations: &[[f64; OBS_DIM]], collided: bool, window: usize) -> Vec<Window> {
    let usable = if collided {
        observations.len().saturating_sub(1)
    } else {
        observations.len()
    };
    observations[..usable]
        .chunks_exact(window)
        .map(|c| c.to_vec())
        .collect()
}

/// Rolls out the frozen speed policy (greedy) with trait-conditioned drivers
/// and keeps exactly `windows_per_trait` windows per trait.
pub fn collect_dataset(
    pcp: &PcpPolicy,
    ring: &RingConfig,
    idm: &IdmParams,
    cfg: &CollectConfig,
    seed: u64,
) -> Result<Vec<TraitWindow>> {
    let spec = EpisodeSpec {
        warmup: cfg.warmup,
        horizon: cfg.horizon,
        delta: cfg.delta,
    };
    spec.validate()?;
    if cfg.window == 0 || cfg.window > cfg.horizon {
        return Err(PerpError::Config("window must be in 1..=horizon".into()));
    }
    let runner = EpisodeRunner {
        ring,
        idm,
        spec,
        emissions: EmissionsModel::default(),
        record_trace: true,
    };
    let per_episode = cfg.horizon / cfg.window;
    let mut data = Vec::with_capacity(cfg.windows_per_trait * TraitMean::ALL.len());
    for t in TraitMean::ALL {
        let mut got: Vec<Window> = Vec::with_capacity(cfg.windows_per_trait);
        let mut batch_start = 0u64;
        while got.len() < cfg.windows_per_trait {
            let need = cfg.windows_per_trait - got.len();
            let batch = need.div_ceil(per_episode.max(1)).max(1) as u64;
            let episodes = (batch_start..batch_start + batch)
                .into_par_iter()
                .map(|k| {
                    let ids = [t.label() as u64, k];
                    let env_seed = derive_seed(seed, &[STREAM_COLLECT_ENV, ids[0], ids[1]]);
                    let mut driver =
                        Driver::Profile(DriverProfile::new(t, rng_from(seed, &[STREAM_COLLECT_DRIVER, ids[0], ids[1]])));
                    let mut adv = PcpAdvisor::new(pcp, ActMode::Greedy, rng_from(seed, &[ids[0], ids[1]]), false);
                    let out = runner.run(env_seed, &mut driver, Some(&mut adv))?;
                    let trace = out.trace.expect("trace recording enabled");
                    Ok(split_windows(&trace.observations, out.metrics.collided, cfg.window))
                })
                .collect::<Result<Vec<_>>>()?;
            batch_start += batch;
            for w in episodes.into_iter().flatten() {
                if got.len() < cfg.windows_per_trait {
                    got.push(w);
                }
            }
            if batch_start > 1000 + 10 * cfg.windows_per_trait as u64 {
                return Err(PerpError::Numeric(format!(
                    "trait {} keeps colliding; collected only {} windows",
                    t.value(),
                    got.len()
                )));
            }
        }
        data.extend(got.into_iter().map(|states| TraitWindow {
            trait_mean: t.value(),
            states,
        }));
    }
    Ok(data)
}

// ---------------------------------------------------------------- training

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtiTrainConfig {
    pub loss: LossWeights,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub train_fraction: f64,
    /// Fit per-component input standardization on the training split.
    pub standardize_inputs: bool,
    pub model: DtiModelConfig,
}

impl Default for DtiTrainConfig {
    fn default() -> Self {
        Self {
            loss: LossWeights::default(),
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 100,
            train_fraction: 0.8,
            standardize_inputs: true,
            model: DtiModelConfig::default(),
        }
    }
}

impl DtiTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.loss.beta_recon >= 0.0
            && self.loss.beta_kl >= 0.0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && (0.0..=1.0).contains(&self.train_fraction)
            && self.model.window > 0
            && self.model.hidden > 0
            && self.model.latent > 0;
        if ok {
            Ok(())
        } else {
            Err(PerpError::Config(format!("invalid trait-model training settings: {self:?}")))
        }
    }
}

/// Deterministic train / held-out index split.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed, &[STREAM_SPLIT]));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let eval = idx.split_off(n_train.min(n));
    (idx, eval)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtiEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_recon: f64,
}

pub struct DtiTrainResult {
    pub model: DtiModel,
    pub log: Vec<DtiEpochLog>,
    pub train_idx: Vec<usize>,
    pub eval_idx: Vec<usize>,
}

fn mean_loss(model: &DtiModel, data: &[TraitWindow], idx: &[usize], w: &LossWeights) -> Result<LossParts> {
    let mut acc = LossParts::default();
    let zero = vec![0.0; model.latent_dim()];
    for &i in idx {
        let p = model.loss(&data[i].states, &zero, w)?;
        acc.total += p.total;
        acc.recon += p.recon;
        acc.kl += p.kl;
    }
    let n = idx.len().max(1) as f64;
    Ok(LossParts {
        total: acc.total / n,
        recon: acc.recon / n,
        kl: acc.kl / n,
    })
}

/// Minibatch Adam training. Labels are never read.
pub fn train_dti(data: &[TraitWindow], cfg: &DtiTrainConfig, seed: u64) -> Result<DtiTrainResult> {
    cfg.validate()?;
    for (i, row) in data.iter().enumerate() {
        if row.states.len() != cfg.model.window {
            return Err(PerpError::Input(format!(
                "dataset window {i} has {} states, expected {}",
                row.states.len(),
                cfg.model.window
            )));
        }
    }
    let mut model = DtiModel::new(&cfg.model, &mut rng_from(seed, &[STREAM_INIT]));
    let (train_idx, eval_idx) = split_indices(data.len(), cfg.train_fraction, seed);
    if cfg.standardize_inputs {
        model.scaling = InputScaling::fit(train_idx.iter().map(|&i| &data[i].states[..]));
    }
    let mut opt = OptimizerState::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut log = Vec::with_capacity(cfg.epochs);
    let latent = model.latent_dim();
    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_from(seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut eps_rng = rng_from(seed, &[STREAM_EPS, epoch as u64]);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let eps: Vec<f64> = (0..latent).map(|_| StandardNormal.sample(&mut eps_rng)).collect();
                total += model.forward_backward(&data[i].states, &eps, &cfg.loss, scale)?.total;
            }
            let mut params = model.named_params_mut();
            opt.step(&mut params)?;
        }
        let train_loss = total / order.len().max(1) as f64;
        if !train_loss.is_finite() {
            return Err(PerpError::Numeric(format!("trait-model loss diverged at epoch {epoch}")));
        }
        let ev = mean_loss(&model, data, &eval_idx, &cfg.loss)?;
        log::info!("dti epoch {epoch}: train {train_loss:.6}, eval {:.6}", ev.total);
        log.push(DtiEpochLog {
            epoch,
            train_loss,
            eval_loss: ev.total,
            eval_recon: ev.recon,
        });
    }
    Ok(DtiTrainResult {
        model,
        log,
        train_idx,
        eval_idx,
    })
}

// ---------------------------------------------------------------- evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub trait_mean: f64,
    pub count: usize,
    pub centroid: Vec<f64>,
    /// Root-mean-square distance to the centroid.
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub z1: f64,
    pub z2: f64,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtiEvaluation {
    pub clusters: Vec<ClusterStats>,
    /// Nearest-centroid accuracy on the held-out windows, centroids fit on the training windows.
    pub accuracy: f64,
    /// Distance between the −5 and +5 centroids over their mean spread.
    pub extreme_separation: f64,
    pub eval_recon: f64,
    pub points: Vec<LatentPoint>,
}

fn cluster_stats(latents: &[(Vec<f64>, TraitMean)]) -> BTreeMap<TraitMean, ClusterStats> {
    let mut groups: BTreeMap<TraitMean, Vec<&Vec<f64>>> = BTreeMap::new();
    for (z, t) in latents {
        groups.entry(*t).or_default().push(z);
    }
    groups
        .into_iter()
        .map(|(t, zs)| {
            let dim = zs[0].len();
            let n = zs.len() as f64;
            let mut c = vec![0.0; dim];
            for z in &zs {
                for (a, v) in c.iter_mut().zip(z.iter()) {
                    *a += v / n;
                }
            }
            let spread = (zs.iter().map(|z| dist2(z, &c)).sum::<f64>() / n).sqrt();
            (
                t,
                ClusterStats {
                    trait_mean: t.value(),
                    count: zs.len(),
                    centroid: c,
                    spread,
                },
            )
        })
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn latents(model: &DtiModel, data: &[TraitWindow], idx: &[usize]) -> Result<Vec<(Vec<f64>, TraitMean)>> {
    idx.par_iter()
        .map(|&i| Ok((model.encode(&data[i].states)?.0, TraitMean::from_value(data[i].trait_mean)?)))
        .collect()
}

/// Scores the latent space against the ground-truth labels.
pub fn evaluate_dti(model: &DtiModel, data: &[TraitWindow], train_idx: &[usize], eval_idx: &[usize]) -> Result<DtiEvaluation> {
    let train = latents(model, data, train_idx)?;
    let held = latents(model, data, eval_idx)?;
    let fit = cluster_stats(&train);
    let correct = held
        .iter()
        .filter(|(z, t)| {
            fit.iter()
                .min_by(|a, b| dist2(z, &a.1.centroid).total_cmp(&dist2(z, &b.1.centroid)))
                .is_some_and(|(c, _)| c == t)
        })
        .count();
    let accuracy = if held.is_empty() { 0.0 } else { correct as f64 / held.len() as f64 };
    let clusters = cluster_stats(&held);
    let lo = clusters.get(&TraitMean::ALL[0]);
    let hi = clusters.get(&TraitMean::ALL[4]);
    let extreme_separation = match (lo, hi) {
        (Some(a), Some(b)) => dist2(&a.centroid, &b.centroid).sqrt() / (0.5 * (a.spread + b.spread)).max(1e-12),
        _ => 0.0,
    };
    let eval_recon = mean_loss(model, data, eval_idx, &LossWeights::default())?.recon;
    let points = held
        .iter()
        .map(|(z, t)| LatentPoint {
            z1: z[0],
            z2: z.get(1).copied().unwrap_or(0.0),
            label: t.label(),
        })
        .collect();
    Ok(DtiEvaluation {
        clusters: clusters.into_values().collect(),
        accuracy,
        extreme_separation,
        eval_recon,
        points,
    })
}

pub fn write_dti_log(rows: &[DtiEpochLog], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| PerpError::Input(format!("writing trait-model log: {e}")))?;
    }
    w.flush().map_err(|e| PerpError::Input(format!("writing trait-model log: {e}")))?;
    Ok(())
}

pub fn write_latent_csv(points: &[LatentPoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p).map_err(|e| PerpError::Input(format!("writing latent csv: {e}")))?;
    }
    w.flush().map_err(|e| PerpError::Input(format!("writing latent csv: {e}")))?;
    Ok(())
}

//! Clipped-surrogate actor-critic trainer shared by the advisory policies.
//!
//! Rollout workers produce [`Episode`]s of decision steps; [`ActorCritic::update`]
//! runs several epochs of minibatch updates against a frozen copy of the
//! behaviour log-probabilities.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{PerpError, Result};
use crate::nn::{
    clip_grad_norm, Activation, AdamConfig, Categorical, DiagGaussian, Mlp, OptimizerState, Parameters,
    PolicyCheckpoint, RunningNorm, Tensor,
};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Gradient-norm cap, applied to actor and critic separately.
    pub max_grad_norm: f64,
    /// Multiplies rewards before advantage and value-target computation.
    pub reward_scale: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            epochs: 10,
            minibatch_size: 64,
            learning_rate: 1e-4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            reward_scale: 0.01,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.gae_lambda)
            && self.clip_ratio > 0.0
            && self.minibatch_size > 0
            && self.learning_rate > 0.0
            && self.max_grad_norm > 0.0
            && self.reward_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PerpError::Config(format!("invalid policy-gradient settings: {self:?}")))
        }
    }
}

/// Action as stored in the buffer. Continuous actions are kept pre-squash.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct Decision {
    /// Normalized network input.
    pub input: Vec<f64>,
    pub action: Action,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Episode {
    pub decisions: Vec<Decision>,
    /// Raw (unnormalized) inputs, fed to the running normalizer after the update.
    pub raw_inputs: Vec<Vec<f64>>,
    /// Value of the state after the last decision; 0 on termination.
    pub bootstrap: f64,
    pub collided: bool,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.decisions.iter().map(|d| d.reward).sum()
    }
}

/// Generalized advantage estimates and value targets for one episode.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// Plain discounted return `Σ γ^k r_k + γ^n bootstrap`.
pub fn discounted_return(rewards: &[f64], bootstrap: f64, gamma: f64) -> f64 {
    rewards.iter().rev().fold(bootstrap, |acc, r| r + gamma * acc)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Categorical,
    /// Tanh-squashed diagonal Gaussian with a state-independent log-std.
    SquashedGaussian { log_std: Tensor, bound: f64 },
}

#[derive(Debug, Clone)]
pub struct ActOutput {
    pub action: Action,
    /// Environment-facing value: the action index, or the squashed sample.
    pub output: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub input: Vec<f64>,
}

/// Actor and critic MLPs of identical hidden shape, an input normalizer and
/// the distribution head.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
    pub head: Head,
    pub norm: RunningNorm,
}

const HIDDEN: [usize; 2] = [64, 64];

fn sizes(input: usize, output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend(HIDDEN);
    s.push(output);
    s
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

impl ActorCritic {
    pub fn categorical(input: usize, actions: usize, rng: &mut Rng) -> Self {
        let mut actor = Mlp::new(&sizes(input, actions), Activation::Tanh, Activation::Identity, rng);
        actor.last_layer_mut().scale(0.01);
        let critic = Mlp::new(&sizes(input, 1), Activation::Tanh, Activation::Identity, rng);
        Self {
            actor,
            critic,
            head: Head::Categorical,
            norm: RunningNorm::new(input),
        }
    }

    pub fn squashed_gaussian(input: usize, dim: usize, bound: f64, init_log_std: f64, rng: &mut Rng) -> Self {
        let mut actor = Mlp::new(&sizes(input, dim), Activation::Tanh, Activation::Identity, rng);
        actor.last_layer_mut().scale(0.01);
        let critic = Mlp::new(&sizes(input, 1), Activation::Tanh, Activation::Identity, rng);
        Self {
            actor,
            critic,
            head: Head::SquashedGaussian {
                log_std: Tensor::filled(vec![dim], init_log_std),
                bound,
            },
            norm: RunningNorm::new(input),
        }
    }

    pub fn input_size(&self) -> usize {
        self.actor.input_size()
    }

    pub fn value(&self, raw: &[f64]) -> Result<f64> {
        let x = self.norm.normalize(raw)?;
        Ok(self.critic.infer(&x)?[0])
    }

    /// One decision from a raw input. Greedy mode takes the argmax / squashed mean.
    pub fn act(&self, raw: &[f64], mode: ActMode, rng: &mut Rng) -> Result<ActOutput> {
        let input = self.norm.normalize(raw)?;
        let out = self.actor.infer(&input)?;
        let value = self.critic.infer(&input)?[0];
        match &self.head {
            Head::Categorical => {
                let dist = Categorical::from_logits(&out)?;
                let a = match mode {
                    ActMode::Sample => dist.sample(rng),
                    ActMode::Greedy => dist.argmax(),
                };
                Ok(ActOutput {
                    action: Action::Discrete(a),
                    output: vec![a as f64],
                    log_prob: dist.log_prob(a),
                    value,
                    input,
                })
            }
            Head::SquashedGaussian { log_std, bound } => {
                let dist = DiagGaussian::new(out, log_std.values().to_vec())?;
                let u = match mode {
                    ActMode::Sample => dist.sample(rng),
                    ActMode::Greedy => dist.mean().to_vec(),
                };
                let (y, log_det) = crate::nn::squash(&u, *bound);
                Ok(ActOutput {
                    log_prob: dist.log_prob(&u) - log_det,
                    action: Action::Continuous(u),
                    output: y,
                    value,
                    input,
                })
            }
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut p: Vec<(String, &mut Tensor)> = self
            .actor
            .named_params_mut()
            .into_iter()
            .map(|(n, t)| (format!("actor.{n}"), t))
            .collect();
        p.extend(
            self.critic
                .named_params_mut()
                .into_iter()
                .map(|(n, t)| (format!("critic.{n}"), t)),
        );
        if let Head::SquashedGaussian { log_std, .. } = &mut self.head {
            p.push(("log_std".into(), log_std));
        }
        p
    }

    /// Clipped-surrogate update over a batch of episodes, then a normalizer
    /// refresh from the batch's raw inputs.
    pub fn update(
        &mut self,
        episodes: &[Episode],
        cfg: &PpoConfig,
        opt: &mut OptimizerState,
        rng: &mut Rng,
    ) -> Result<UpdateStats> {
        let mut samples: Vec<(&Decision, f64, f64)> = Vec::new();
        for ep in episodes {
            let rewards: Vec<f64> = ep.decisions.iter().map(|d| d.reward * cfg.reward_scale).collect();
            let values: Vec<f64> = ep.decisions.iter().map(|d| d.value).collect();
            let (adv, targets) = gae(&rewards, &values, ep.bootstrap, cfg.gamma, cfg.gae_lambda);
            for ((d, a), r) in ep.decisions.iter().zip(adv).zip(targets) {
                samples.push((d, a, r));
            }
        }
        let mut stats = UpdateStats::default();
        if samples.is_empty() {
            return Ok(stats);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s.1).sum::<f64>() / n;
        let std = (samples.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / n).sqrt();
        for s in &mut samples {
            s.1 = (s.1 - mean) / (std + 1e-8);
        }

        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut batches = 0.0_f64;
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.minibatch_size) {
                let s = self.minibatch_step(&samples, chunk, cfg, opt)?;
                stats.policy_loss += s.policy_loss;
                stats.value_loss += s.value_loss;
                stats.entropy += s.entropy;
                stats.approx_kl += s.approx_kl;
                stats.clip_fraction += s.clip_fraction;
                stats.grad_norm += s.grad_norm;
                batches += 1.0;
            }
        }
        for v in [
            &mut stats.policy_loss,
            &mut stats.value_loss,
            &mut stats.entropy,
            &mut stats.approx_kl,
            &mut stats.clip_fraction,
            &mut stats.grad_norm,
        ] {
            *v /= batches.max(1.0);
        }
        let raw: Vec<Vec<f64>> = episodes.iter().flat_map(|e| e.raw_inputs.iter().cloned()).collect();
        self.norm.update(&raw);
        Ok(stats)
    }

    fn minibatch_step(
        &mut self,
        samples: &[(&Decision, f64, f64)],
        idx: &[usize],
        cfg: &PpoConfig,
        opt: &mut OptimizerState,
    ) -> Result<UpdateStats> {
        Parameters::zero_grad(&mut self.actor);
        Parameters::zero_grad(&mut self.critic);
        let mut log_std_grad = match &mut self.head {
            Head::SquashedGaussian { log_std, .. } => {
                log_std.zero_grad();
                Some(vec![0.0; log_std.len()])
            }
            Head::Categorical => None,
        };
        let m = idx.len() as f64;
        let mut st = UpdateStats::default();
        for &i in idx {
            let (d, adv, target) = samples[i];
            let (out, cache) = self.actor.forward(&d.input)?;
            let (new_lp, dlp_dout, dent_dout, entropy, dent_dlogstd, dlp_dlogstd) = match (&self.head, &d.action) {
                (Head::Categorical, Action::Discrete(a)) => {
                    let dist = Categorical::from_logits(&out)?;
                    (dist.log_prob(*a), dist.grad_log_prob(*a), dist.grad_entropy(), dist.entropy(), None, None)
                }
                (Head::SquashedGaussian { log_std, bound }, Action::Continuous(u)) => {
                    let dist = DiagGaussian::new(out.clone(), log_std.values().to_vec())?;
                    let (_, log_det) = crate::nn::squash(u, *bound);
                    let (dm, ds) = dist.grad_log_prob(u);
                    let k = u.len();
                    (
                        dist.log_prob(u) - log_det,
                        dm,
                        vec![0.0; k],
                        dist.entropy(),
                        Some(vec![1.0; k]),
                        Some(ds),
                    )
                }
                _ => return Err(PerpError::Input("action kind does not match policy head".into())),
            };
            if !new_lp.is_finite() {
                return Err(PerpError::Numeric("non-finite log-probability in policy update".into()));
            }
            let ratio = (new_lp - d.log_prob).exp();
            let clipped = (adv >= 0.0 && ratio > 1.0 + cfg.clip_ratio) || (adv < 0.0 && ratio < 1.0 - cfg.clip_ratio);
            let surrogate = (ratio * adv).min(ratio.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv);
            st.policy_loss -= surrogate / m;
            st.entropy += entropy / m;
            st.approx_kl += (d.log_prob - new_lp) / m;
            if clipped {
                st.clip_fraction += 1.0 / m;
            }
            // d(loss)/d(log_prob); zero on the clipped branch.
            let g_lp = if clipped { 0.0 } else { -ratio * adv / m };
            let g_ent = -cfg.entropy_coef / m;
            let grad_out: Vec<f64> = dlp_dout
                .iter()
                .zip(&dent_dout)
                .map(|(a, b)| g_lp * a + g_ent * b)
                .collect();
            self.actor.backward(&cache, &grad_out);
            if let (Some(acc), Some(ds), Some(de)) = (log_std_grad.as_mut(), dlp_dlogstd, dent_dlogstd) {
                for ((g, a), b) in acc.iter_mut().zip(ds).zip(de) {
                    *g += g_lp * a + g_ent * b;
                }
            }

            let (v, vcache) = self.critic.forward(&d.input)?;
            let err = v[0] - target;
            st.value_loss += 0.5 * err * err / m;
            self.critic.backward(&vcache, &[cfg.value_coef * err / m]);
        }
        if let (Head::SquashedGaussian { log_std, .. }, Some(acc)) = (&mut self.head, log_std_grad) {
            log_std.grad_mut().copy_from_slice(&acc);
        }
        let (mut policy, mut critic): (Vec<_>, Vec<_>) =
            self.params_mut().into_iter().partition(|(n, _)| !n.starts_with("critic."));
        st.grad_norm = clip_grad_norm(&mut policy, cfg.max_grad_norm);
        clip_grad_norm(&mut critic, cfg.max_grad_norm);
        let mut params = policy;
        params.append(&mut critic);
        opt.config = AdamConfig {
            learning_rate: cfg.learning_rate,
            ..opt.config
        };
        opt.step(&mut params)?;
        Ok(st)
    }

    pub fn write_checkpoint(&self, ck: &mut PolicyCheckpoint) {
        ck.put_mlp("actor", &self.actor);
        ck.put_mlp("critic", &self.critic);
        ck.put_normalizer("obs_norm", &self.norm);
        if let Head::SquashedGaussian { log_std, bound } = &self.head {
            ck.put_tensor("log_std", log_std);
            ck.set_meta("bound", bound);
        }
    }

    pub fn read_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        let actor = ck.mlp("actor")?;
        let critic = ck.mlp("critic")?;
        let norm = ck.normalizer("obs_norm")?;
        let head = match ck.tensor("log_std") {
            Ok(log_std) => Head::SquashedGaussian {
                log_std,
                bound: ck.meta("bound")?,
            },
            Err(_) => Head::Categorical,
        };
        Ok(Self {
            actor,
            critic,
            head,
            norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn gae_with_unit_lambda_matches_discounted_return() {
        let r = [1.0, 0.5, -2.0, 3.0, 0.25];
        let v = [0.3, -0.1, 0.7, 0.2, 0.0];
        let (adv, targets) = gae(&r, &v, 1.5, 0.9, 1.0);
        for t in 0..r.len() {
            let brute = discounted_return(&r[t..], 1.5, 0.9);
            assert!((targets[t] - brute).abs() < 1e-12);
            assert!((adv[t] - (brute - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_with_zero_lambda_is_td_error() {
        let r = [1.0, 2.0];
        let v = [0.5, 0.25];
        let (adv, _) = gae(&r, &v, 0.0, 0.5, 0.0);
        assert!((adv[0] - (1.0 + 0.5 * 0.25 - 0.5)).abs() < 1e-12);
        assert!((adv[1] - (2.0 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn discounted_return_brute_force() {
        let r = [2.0, 4.0, 6.0, 8.0, 10.0];
        let g: f64 = 0.99;
        let brute: f64 = r.iter().enumerate().map(|(k, x)| g.powi(k as i32) * x).sum();
        assert!((discounted_return(&r, 0.0, g) - brute).abs() < 1e-12);
    }

    fn bandit_episodes(policy: &ActorCritic, rng: &mut Rng, n: usize) -> Vec<Episode> {
        (0..n)
            .map(|_| {
                let raw = vec![0.5, 0.5];
                let out = policy.act(&raw, ActMode::Sample, rng).unwrap();
                let reward = match &out.action {
                    Action::Discrete(a) => {
                        if *a == 2 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Action::Continuous(_) => -(out.output[0] - 1.5).powi(2),
                };
                Episode {
                    decisions: vec![Decision {
                        input: out.input,
                        action: out.action,
                        log_prob: out.log_prob,
                        value: out.value,
                        reward,
                    }],
                    raw_inputs: vec![raw],
                    bootstrap: 0.0,
                    collided: false,
                }
            })
            .collect()
    }

    #[test]
    fn categorical_bandit_learns_best_arm() {
        let mut rng = rng_from(0, &[]);
        let mut pol = ActorCritic::categorical(2, 4, &mut rng);
        let cfg = PpoConfig {
            learning_rate: 3e-3,
            ..PpoConfig::default()
        };
        let mut opt = OptimizerState::new(AdamConfig::with_lr(cfg.learning_rate));
        for _ in 0..30 {
            let eps = bandit_episodes(&pol, &mut rng, 64);
            pol.update(&eps, &cfg, &mut opt, &mut rng).unwrap();
        }
        let out = pol.act(&[0.5, 0.5], ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(out.action, Action::Discrete(2));
    }

    #[test]
    fn gaussian_bandit_moves_toward_target() {
        let mut rng = rng_from(1, &[]);
        let mut pol = ActorCritic::squashed_gaussian(2, 1, 6.0, -0.5, &mut rng);
        let cfg = PpoConfig {
            learning_rate: 3e-3,
            ..PpoConfig::default()
        };
        let mut opt = OptimizerState::new(AdamConfig::with_lr(cfg.learning_rate));
        for _ in 0..40 {
            let eps = bandit_episodes(&pol, &mut rng, 64);
            pol.update(&eps, &cfg, &mut opt, &mut rng).unwrap();
        }
        let out = pol.act(&[0.5, 0.5], ActMode::Greedy, &mut rng).unwrap();
        assert!((out.output[0] - 1.5).abs() < 0.3, "greedy residual {}", out.output[0]);
    }

    #[test]
    fn checkpoint_round_trip_preserves_actions() {
        let mut rng = rng_from(2, &[]);
        let pol = ActorCritic::squashed_gaussian(6, 1, 6.0, -1.0, &mut rng);
        let mut ck = PolicyCheckpoint::new("test");
        pol.write_checkpoint(&mut ck);
        let back = ActorCritic::read_checkpoint(&PolicyCheckpoint::from_json(&ck.to_json()).unwrap()).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let a = pol.act(&x, ActMode::Greedy, &mut rng).unwrap();
        let b = back.act(&x, ActMode::Greedy, &mut rng).unwrap();
        assert_eq!(a.output, b.output);
        assert_eq!(a.value, b.value);
    }
}

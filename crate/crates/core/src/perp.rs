//! Residual advisory policies on top of a frozen speed policy: a bounded
//! continuous correction conditioned on the observation, the base action
//! and (depending on the variant) the driver's trait.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{sample_trait, Driver, DriverProfile, TraitMean};
use crate::dti::{infer_trait, DtiModel};
use crate::episode::{Advisor, DecisionContext, EmissionsModel, EpisodeRunner, EpisodeSpec, StepInfo};
use crate::error::{PerpError, Result};
use crate::nn::{AdamConfig, OptimizerState, PolicyCheckpoint};
use crate::pcp::{finalize_episode, CollisionReward, PcpPolicy, TrainLogRow, WindowReward};
use crate::ppo::{ActMode, ActorCritic, Decision, Episode, PpoConfig};
use crate::ring::{EgoObservation, IdmParams, RingConfig};
use crate::rng::{derive_seed, rng_from, Rng};

pub const CHECKPOINT_KIND: &str = "perp";

const STREAM_TRAIN_ENV: u64 = 31;
const STREAM_TRAIN_DRIVER: u64 = 32;
const STREAM_TRAIN_ACT: u64 = 33;
const STREAM_UPDATE: u64 = 34;
const STREAM_EVAL_ENV: u64 = 35;
const STREAM_EVAL_DRIVER: u64 = 36;
const STREAM_INIT: u64 = 37;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Constant advised speed; no network.
    Osl,
    /// Residual without trait knowledge.
    Vrp,
    /// Residual given the ground-truth trait as a one-hot vector.
    Tarp,
    /// Residual given the inferred latent trait.
    Perp,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Osl => "osl",
            Variant::Vrp => "vrp",
            Variant::Tarp => "tarp",
            Variant::Perp => "perp",
        }
    }

    /// Network input width; `latent` is the trait-model latent size.
    pub fn input_dim(self, latent: usize) -> usize {
        match self {
            Variant::Osl => 0,
            Variant::Vrp => 4,
            Variant::Tarp => 4 + TraitMean::ALL.len(),
            Variant::Perp => 4 + latent,
        }
    }
}

impl FromStr for Variant {
    type Err = PerpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "osl" => Ok(Variant::Osl),
            "vrp" => Ok(Variant::Vrp),
            "tarp" => Ok(Variant::Tarp),
            "perp" => Ok(Variant::Perp),
            _ => Err(PerpError::Config(format!("unknown policy variant `{s}` (osl, vrp, tarp, perp)"))),
        }
    }
}

/// `clamp(a_pcp + residual, 0, a_max)`.
pub fn compose_advice(a_pcp: f64, residual: f64, a_max: f64) -> f64 {
    (a_pcp + residual).clamp(0.0, a_max)
}

/// `a_driver − |a_driver − a_pcp|`: speed, minus deviation from the base advice.
pub fn reward_perp(a_driver: f64, a_pcp: f64) -> f64 {
    a_driver - (a_driver - a_pcp).abs()
}

/// Residual-policy input for one decision.
pub fn policy_input(obs: &EgoObservation, a_pcp: f64, a_max: f64, conditioning: &[f64]) -> Vec<f64> {
    let mut v = obs.to_array().to_vec();
    v.push(a_pcp / a_max);
    v.extend_from_slice(conditioning);
    v
}

#[derive(Debug, Clone)]
pub struct PerpPolicy {
    pub variant: Variant,
    pub net: ActorCritic,
    pub bound: f64,
}

impl PerpPolicy {
    pub fn new(variant: Variant, latent: usize, bound: f64, init_log_std: f64, rng: &mut Rng) -> Result<Self> {
        if variant == Variant::Osl {
            return Err(PerpError::Config("the constant-speed baseline has no residual network".into()));
        }
        if !(bound > 0.0) {
            return Err(PerpError::Config(format!("residual bound must be positive, got {bound}")));
        }
        Ok(Self {
            variant,
            net: ActorCritic::squashed_gaussian(variant.input_dim(latent), 1, bound, init_log_std, rng),
            bound,
        })
    }

    /// Residual in `[−bound, bound]`: squashed sample, or squashed mean when greedy.
    pub fn act(&self, input: &[f64], mode: ActMode, rng: &mut Rng) -> Result<(f64, crate::ppo::ActOutput)> {
        let out = self.net.act(input, mode, rng)?;
        Ok((out.output[0], out))
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        let mut ck = PolicyCheckpoint::new(CHECKPOINT_KIND);
        self.net.write_checkpoint(&mut ck);
        ck.set_meta("variant", self.variant);
        ck
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let variant: Variant = ck.meta("variant")?;
        let net = ActorCritic::read_checkpoint(ck)?;
        let bound = match &net.head {
            crate::ppo::Head::SquashedGaussian { bound, .. } => *bound,
            crate::ppo::Head::Categorical => {
                return Err(PerpError::Config("residual checkpoint has a categorical head".into()))
            }
        };
        Ok(Self { variant, net, bound })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&PolicyCheckpoint::load(path)?)
    }
}

pub fn perp_act(policy: &PerpPolicy, input: &[f64], mode: ActMode, rng: &mut Rng) -> Result<f64> {
    Ok(policy.act(input, mode, rng)?.0)
}

/// Base speed policy plus residual. Training mode fills a buffer with
/// per-decision rewards `mean(reward_perp)` over each window.
pub struct ResidualAdvisor<'a> {
    pub pcp: &'a PcpPolicy,
    pub dti: Option<&'a DtiModel>,
    pub policy: &'a PerpPolicy,
    pub pcp_mode: ActMode,
    pub mode: ActMode,
    rng: Rng,
    record: bool,
    window: WindowReward,
    a_pcp: f64,
    pub episode: Episode,
    pub padded_windows: usize,
}

impl<'a> ResidualAdvisor<'a> {
    pub fn new(
        pcp: &'a PcpPolicy,
        dti: Option<&'a DtiModel>,
        policy: &'a PerpPolicy,
        pcp_mode: ActMode,
        mode: ActMode,
        rng: Rng,
        record: bool,
    ) -> Result<Self> {
        if policy.variant == Variant::Perp && dti.is_none() {
            return Err(PerpError::Config("the personalized residual needs a trait model".into()));
        }
        Ok(Self {
            pcp,
            dti,
            policy,
            pcp_mode,
            mode,
            rng,
            record,
            window: WindowReward::default(),
            a_pcp: 0.0,
            episode: Episode::default(),
            padded_windows: 0,
        })
    }

    fn conditioning(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>> {
        match self.policy.variant {
            Variant::Vrp | Variant::Osl => Ok(Vec::new()),
            Variant::Tarp => ctx
                .trait_mean
                .map(|t| t.one_hot().to_vec())
                .ok_or_else(|| PerpError::Config("trait-aware residual needs a driver with a trait".into())),
            Variant::Perp => {
                let model = self.dti.expect("checked at construction");
                let (z, padded) = infer_trait(model, ctx.env.history())?;
                self.padded_windows += padded as usize;
                Ok(z)
            }
        }
    }
}

impl Advisor for ResidualAdvisor<'_> {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<f64> {
        let (a_pcp, _) = self.pcp.act(&ctx.observation, self.pcp_mode, &mut self.rng)?;
        let cond = self.conditioning(ctx)?;
        let a_max = self.pcp.space.max;
        let input = policy_input(&ctx.observation, a_pcp, a_max, &cond);
        let (residual, out) = self.policy.act(&input, self.mode, &mut self.rng)?;
        self.a_pcp = a_pcp;
        if self.record {
            self.episode.raw_inputs.push(input);
            self.episode.decisions.push(Decision {
                input: out.input,
                action: out.action,
                log_prob: out.log_prob,
                value: out.value,
                reward: 0.0,
            });
        }
        Ok(compose_advice(a_pcp, residual, a_max))
    }

    fn observe(&mut self, step: &StepInfo) {
        self.window.add(reward_perp(step.executed, self.a_pcp));
    }

    fn close_window(&mut self, _collided: bool) {
        let r = self.window.take();
        if let Some(d) = self.episode.decisions.last_mut() {
            d.reward = r;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerpTrainConfig {
    pub iterations: usize,
    pub warmup: usize,
    pub horizon: usize,
    pub delta: usize,
    pub residual_bound: f64,
    pub init_log_std: f64,
    pub episodes_per_iteration: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Whether the frozen base action is sampled or greedy during training.
    pub sample_base_action: bool,
    pub collision_reward: CollisionReward,
    pub ppo: PpoConfig,
}

impl Default for PerpTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            warmup: 600,
            horizon: 4000,
            delta: 20,
            residual_bound: 6.0,
            init_log_std: -1.0,
            episodes_per_iteration: 16,
            eval_every: 5,
            eval_episodes: 10,
            sample_base_action: true,
            collision_reward: CollisionReward::Terminate,
            ppo: PpoConfig::default(),
        }
    }
}

impl PerpTrainConfig {
    pub fn spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            warmup: self.warmup,
            horizon: self.horizon,
            delta: self.delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().validate()?;
        self.ppo.validate()?;
        if self.episodes_per_iteration == 0 || !(self.residual_bound > 0.0) {
            return Err(PerpError::Config(
                "residual training needs episodes_per_iteration > 0 and a positive residual bound".into(),
            ));
        }
        Ok(())
    }
}

pub struct PerpTrainResult {
    pub policy: PerpPolicy,
    pub log: Vec<TrainLogRow>,
    pub best_iteration: usize,
    pub best_score: Option<f64>,
}

/// Greedy score with uniformly drawn traits: mean post-warm-up average speed,
/// collided episodes counting as 0.
pub fn residual_selection_score(
    pcp: &PcpPolicy,
    dti: Option<&DtiModel>,
    policy: &PerpPolicy,
    runner: &EpisodeRunner<'_>,
    seed: u64,
    episodes: usize,
) -> Result<f64> {
    let scores = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let k = k as u64;
            let mut adv = ResidualAdvisor::new(pcp, dti, policy, ActMode::Greedy, ActMode::Greedy, rng_from(seed, &[k]), false)?;
            let mut drv_rng = rng_from(seed, &[STREAM_EVAL_DRIVER, k]);
            let t = sample_trait(&mut drv_rng);
            let mut driver = Driver::Profile(DriverProfile::new(t, drv_rng));
            let out = runner.run(derive_seed(seed, &[STREAM_EVAL_ENV, k]), &mut driver, Some(&mut adv))?;
            Ok(if out.metrics.collided { 0.0 } else { out.metrics.avg_speed })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / episodes.max(1) as f64)
}

/// Trains a residual variant against trait-conditioned drivers. The base
/// policy and trait model are borrowed immutably and never updated.
pub fn train_perp(
    pcp: &PcpPolicy,
    dti: Option<&DtiModel>,
    variant: Variant,
    ring: &RingConfig,
    idm: &IdmParams,
    cfg: &PerpTrainConfig,
    seed: u64,
) -> Result<PerpTrainResult> {
    ring.validate()?;
    idm.validate()?;
    cfg.validate()?;
    if variant == Variant::Osl {
        return Err(PerpError::Config("the constant-speed baseline requires no training".into()));
    }
    if variant == Variant::Perp && dti.is_none() {
        return Err(PerpError::Config("training the personalized residual needs a trait model".into()));
    }
    let latent = dti.map_or(0, DtiModel::latent_dim);
    let mut policy = PerpPolicy::new(variant, latent, cfg.residual_bound, cfg.init_log_std, &mut rng_from(seed, &[STREAM_INIT]))?;
    let mut opt = OptimizerState::new(AdamConfig::with_lr(cfg.ppo.learning_rate));
    let runner = EpisodeRunner {
        ring,
        idm,
        spec: cfg.spec(),
        emissions: EmissionsModel::default(),
        record_trace: false,
    };
    let base_mode = if cfg.sample_base_action { ActMode::Sample } else { ActMode::Greedy };
    let evaluating = cfg.eval_episodes > 0 && cfg.eval_every > 0;
    let mut best = (policy.clone(), 0usize, None::<f64>);
    if cfg.iterations > 0 && evaluating {
        best.2 = Some(residual_selection_score(pcp, dti, &policy, &runner, seed, cfg.eval_episodes)?);
    }
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut padded = 0usize;
    for iter in 1..=cfg.iterations {
        let results = (0..cfg.episodes_per_iteration)
            .into_par_iter()
            .map(|k| {
                let ids = [iter as u64, k as u64];
                let mut drv_rng = rng_from(seed, &[STREAM_TRAIN_DRIVER, ids[0], ids[1]]);
                let t = sample_trait(&mut drv_rng);
                let mut driver = Driver::Profile(DriverProfile::new(t, drv_rng));
                let act_rng = rng_from(seed, &[STREAM_TRAIN_ACT, ids[0], ids[1]]);
                let mut adv = ResidualAdvisor::new(pcp, dti, &policy, base_mode, ActMode::Sample, act_rng, true)?;
                let env_seed = derive_seed(seed, &[STREAM_TRAIN_ENV, ids[0], ids[1]]);
                let out = runner.run(env_seed, &mut driver, Some(&mut adv))?;
                let mut ep = std::mem::take(&mut adv.episode);
                let bootstrap = match ep.raw_inputs.last() {
                    Some(last) if !out.metrics.collided => {
                        // Reuse the last decision's conditioning with the final observation.
                        let mut x = last.clone();
                        x[..3].copy_from_slice(&out.env.observe_ego().to_array());
                        policy.net.value(&x)?
                    }
                    _ => 0.0,
                };
                finalize_episode(&mut ep, out.metrics.collided, cfg.collision_reward, bootstrap);
                Ok((ep, adv.padded_windows))
            })
            .collect::<Result<Vec<(Episode, usize)>>>()?;
        padded += results.iter().map(|r| r.1).sum::<usize>();
        let episodes: Vec<Episode> = results.into_iter().map(|r| r.0).collect();
        let mean_return = episodes.iter().map(Episode::total_reward).sum::<f64>() / episodes.len() as f64;
        let collisions = episodes.iter().filter(|e| e.collided).count();
        let stats = policy
            .net
            .update(&episodes, &cfg.ppo, &mut opt, &mut rng_from(seed, &[STREAM_UPDATE, iter as u64]))?;
        let mut eval_avg_speed = None;
        if evaluating && (iter % cfg.eval_every == 0 || iter == cfg.iterations) {
            let score = residual_selection_score(pcp, dti, &policy, &runner, seed, cfg.eval_episodes)?;
            eval_avg_speed = Some(score);
            if best.2.is_none_or(|b| score > b) {
                best = (policy.clone(), iter, Some(score));
            }
        }
        log::info!(
            "{} iter {iter}: return {mean_return:.3}, collisions {collisions}, kl {:.4}{}",
            variant.name(),
            stats.approx_kl,
            eval_avg_speed.map(|s| format!(", eval {s:.3}")).unwrap_or_default()
        );
        log.push(TrainLogRow {
            iter,
            mean_return,
            eval_avg_speed,
        });
    }
    if padded > 0 {
        log::warn!("{padded} trait windows were padded (history shorter than the window)");
    }
    if !evaluating && cfg.iterations > 0 {
        best = (policy, cfg.iterations, None);
    }
    Ok(PerpTrainResult {
        policy: best.0,
        log,
        best_iteration: best.1,
        best_score: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcp::SpeedActionSpace;

    #[test]
    fn reward_examples() {
        assert_eq!(reward_perp(10.0, 8.0), 8.0);
        assert_eq!(reward_perp(8.0, 8.0), 8.0);
        assert_eq!(reward_perp(6.0, 8.0), 4.0);
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose_advice(8.235, 0.0, 35.0), 8.235);
        assert_eq!(compose_advice(35.0 / 17.0, -6.0, 35.0), 0.0);
        assert_eq!(compose_advice(35.0, 6.0, 35.0), 35.0);
    }

    #[test]
    fn input_dims() {
        assert_eq!(Variant::Vrp.input_dim(2), 4);
        assert_eq!(Variant::Tarp.input_dim(2), 9);
        assert_eq!(Variant::Perp.input_dim(2), 6);
        assert_eq!("TA-RP".parse::<Variant>().unwrap(), Variant::Tarp);
        assert!("xyz".parse::<Variant>().is_err());
    }

    #[test]
    fn zero_network_greedy_residual_is_zero() {
        let mut p = PerpPolicy::new(Variant::Perp, 2, 6.0, -1.0, &mut rng_from(0, &[])).unwrap();
        for layer in &mut p.net.actor.layers {
            layer.weight.values_mut().fill(0.0);
            layer.bias.values_mut().fill(0.0);
        }
        let r = perp_act(&p, &[0.2, 0.3, 0.1, 0.5, 0.0, 0.0], ActMode::Greedy, &mut rng_from(1, &[])).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn saturated_mean_gives_bound() {
        let mut p = PerpPolicy::new(Variant::Vrp, 0, 6.0, -1.0, &mut rng_from(0, &[])).unwrap();
        let last = p.net.actor.last_layer_mut();
        last.weight.values_mut().fill(0.0);
        last.bias.values_mut().fill(1e3);
        let r = perp_act(&p, &[0.2, 0.3, 0.1, 0.5], ActMode::Greedy, &mut rng_from(1, &[])).unwrap();
        assert!((r - 6.0).abs() < 1e-9);
    }

    #[test]
    fn osl_has_no_network_and_needs_no_training() {
        assert!(PerpPolicy::new(Variant::Osl, 0, 6.0, -1.0, &mut rng_from(0, &[])).is_err());
        let pcp = PcpPolicy::new(SpeedActionSpace::default(), &mut rng_from(0, &[])).unwrap();
        let err = train_perp(
            &pcp,
            None,
            Variant::Osl,
            &RingConfig::default(),
            &IdmParams::default(),
            &PerpTrainConfig::default(),
            0,
        );
        assert!(matches!(err, Err(PerpError::Config(_))));
    }

    #[test]
    fn perfect_driver_reward_equals_speed_reward() {
        // Perfect driver with zero residual: executed == advised == a_pcp.
        for v in [0.0, 2.0588, 8.235, 35.0] {
            let advised = compose_advice(v, 0.0, 35.0);
            let mut d = Driver::Perfect;
            let executed = d.act(advised, 35.0);
            assert_eq!(reward_perp(executed, v), executed);
        }
    }
}

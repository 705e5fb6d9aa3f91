//! Piecewise-constant advisory policy: a categorical MLP over a table of
//! equally spaced speeds, held for δ steps, trained with the clipped-surrogate
//! trainer on the decision-step MDP with a perfect driver.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::Driver;
use crate::episode::{Advisor, DecisionContext, EmissionsModel, EpisodeRunner, EpisodeSpec, StepInfo};
use crate::error::{PerpError, Result};
use crate::nn::{AdamConfig, OptimizerState, PolicyCheckpoint};
use crate::ppo::{ActMode, ActOutput, Action, ActorCritic, Decision, Episode, PpoConfig};
use crate::ring::{EgoObservation, IdmParams, RingConfig};
use crate::rng::{derive_seed, rng_from, Rng};

pub const CHECKPOINT_KIND: &str = "pcp";

const STREAM_TRAIN_ENV: u64 = 11;
const STREAM_TRAIN_ACT: u64 = 12;
const STREAM_UPDATE: u64 = 13;
const STREAM_EVAL_ENV: u64 = 14;
const STREAM_INIT: u64 = 15;

/// `count` equally spaced speeds from 0 to `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedActionSpace {
    pub count: usize,
    pub max: f64,
}

impl Default for SpeedActionSpace {
    fn default() -> Self {
        Self { count: 18, max: 35.0 }
    }
}

impl SpeedActionSpace {
    pub fn validate(&self) -> Result<()> {
        if self.count < 2 || !(self.max > 0.0) {
            return Err(PerpError::Config(format!(
                "action space needs at least 2 speeds and a positive maximum, got {} / {}",
                self.count, self.max
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.max / (self.count - 1) as f64
    }

    pub fn speed(&self, index: usize) -> f64 {
        if index + 1 == self.count {
            self.max
        } else {
            index as f64 * self.spacing()
        }
    }

    pub fn table(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.speed(i)).collect()
    }

    pub fn nearest_index(&self, speed: f64) -> usize {
        ((speed / self.spacing()).round().max(0.0) as usize).min(self.count - 1)
    }
}

/// Keeps one action for exactly δ consecutive steps.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldController {
    delta: usize,
    held: Option<f64>,
    remaining: usize,
}

impl HoldController {
    pub fn new(delta: usize) -> Result<Self> {
        if delta == 0 {
            return Err(PerpError::Config("hold length delta must be positive".into()));
        }
        Ok(Self {
            delta,
            held: None,
            remaining: 0,
        })
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn needs_decision(&self) -> bool {
        self.remaining == 0
    }

    /// Action for the current step; `decide` runs only at window starts.
    pub fn next(&mut self, decide: impl FnOnce() -> f64) -> f64 {
        if self.remaining == 0 {
            self.held = Some(decide());
            self.remaining = self.delta;
        }
        self.remaining -= 1;
        self.held.expect("set above")
    }
}

#[derive(Debug, Clone)]
pub struct PcpPolicy {
    pub net: ActorCritic,
    pub space: SpeedActionSpace,
}

impl PcpPolicy {
    pub fn new(space: SpeedActionSpace, rng: &mut Rng) -> Result<Self> {
        space.validate()?;
        Ok(Self {
            net: ActorCritic::categorical(3, space.count, rng),
            space,
        })
    }

    /// Advised speed and the underlying head output.
    pub fn act(&self, obs: &EgoObservation, mode: ActMode, rng: &mut Rng) -> Result<(f64, ActOutput)> {
        let out = self.net.act(&obs.to_array(), mode, rng)?;
        let Action::Discrete(i) = out.action else {
            return Err(PerpError::Input("speed policy produced a continuous action".into()));
        };
        Ok((self.space.speed(i), out))
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        let mut ck = PolicyCheckpoint::new(CHECKPOINT_KIND);
        self.net.write_checkpoint(&mut ck);
        ck.set_meta("action_count", self.space.count);
        ck.set_meta("action_max", self.space.max);
        ck
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let space = SpeedActionSpace {
            count: ck.meta("action_count")?,
            max: ck.meta("action_max")?,
        };
        let net = ActorCritic::read_checkpoint(ck)?;
        if net.input_size() != 3 || net.actor.output_size() != space.count {
            return Err(PerpError::Config("speed policy checkpoint has inconsistent dimensions".into()));
        }
        Ok(Self { net, space })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&PolicyCheckpoint::load(path)?)
    }
}

/// Speed advised for `obs`: sampled during training, argmax at evaluation.
pub fn pcp_act(policy: &PcpPolicy, obs: &EgoObservation, mode: ActMode, rng: &mut Rng) -> Result<f64> {
    Ok(policy.act(obs, mode, rng)?.0)
}

/// How a collision affects the training return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionReward {
    /// Every reward of the episode is set to 0.
    ZeroEpisode,
    /// The episode terminates; rewards earned before the collision are kept.
    Terminate,
}

/// Accumulates decision-window rewards as the mean of per-step rewards.
#[derive(Debug, Clone, Default)]
pub struct WindowReward {
    sum: f64,
    count: usize,
}

impl WindowReward {
    pub fn add(&mut self, r: f64) {
        self.sum += r;
        self.count += 1;
    }

    pub fn take(&mut self) -> f64 {
        let m = if self.count == 0 { 0.0 } else { self.sum / self.count as f64 };
        *self = Self::default();
        m
    }
}

/// Finishes a rollout buffer: applies the collision rule and the bootstrap value.
pub fn finalize_episode(ep: &mut Episode, collided: bool, rule: CollisionReward, bootstrap: f64) {
    ep.collided = collided;
    if collided {
        ep.bootstrap = 0.0;
        if rule == CollisionReward::ZeroEpisode {
            ep.decisions.iter_mut().for_each(|d| d.reward = 0.0);
        }
    } else {
        ep.bootstrap = bootstrap;
    }
}

/// Drives the ring with a speed policy; in training it also fills a buffer
/// with per-decision rewards `mean(v_ego)` over each window.
pub struct PcpAdvisor<'a> {
    policy: &'a PcpPolicy,
    mode: ActMode,
    rng: Rng,
    record: bool,
    window: WindowReward,
    pub episode: Episode,
    pub last_index: Option<usize>,
}

impl<'a> PcpAdvisor<'a> {
    pub fn new(policy: &'a PcpPolicy, mode: ActMode, rng: Rng, record: bool) -> Self {
        Self {
            policy,
            mode,
            rng,
            record,
            window: WindowReward::default(),
            episode: Episode::default(),
            last_index: None,
        }
    }
}

impl Advisor for PcpAdvisor<'_> {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<f64> {
        let (speed, out) = self.policy.act(&ctx.observation, self.mode, &mut self.rng)?;
        if let Action::Discrete(i) = out.action {
            self.last_index = Some(i);
        }
        if self.record {
            self.episode.raw_inputs.push(ctx.observation.to_array().to_vec());
            self.episode.decisions.push(Decision {
                input: out.input,
                action: out.action,
                log_prob: out.log_prob,
                value: out.value,
                reward: 0.0,
            });
        }
        Ok(speed)
    }

    fn observe(&mut self, step: &StepInfo) {
        self.window.add(step.v_ego);
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
pub struct PcpTrainConfig {
    pub iterations: usize,
    pub warmup: usize,
    pub horizon: usize,
    pub delta: usize,
    pub episodes_per_iteration: usize,
    /// Evaluate (and consider for best checkpoint) every this many iterations.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub collision_reward: CollisionReward,
    pub action_count: usize,
    pub action_max: f64,
    pub ppo: PpoConfig,
}

impl Default for PcpTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            warmup: 1000,
            horizon: 2000,
            delta: 20,
            episodes_per_iteration: 4,
            eval_every: 10,
            eval_episodes: 4,
            collision_reward: CollisionReward::Terminate,
            action_count: 18,
            action_max: 35.0,
            ppo: PpoConfig::default(),
        }
    }
}

impl PcpTrainConfig {
    pub fn spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            warmup: self.warmup,
            horizon: self.horizon,
            delta: self.delta,
        }
    }

    pub fn space(&self) -> SpeedActionSpace {
        SpeedActionSpace {
            count: self.action_count,
            max: self.action_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec().validate()?;
        self.space().validate()?;
        self.ppo.validate()?;
        if self.episodes_per_iteration == 0 {
            return Err(PerpError::Config("episodes_per_iteration must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iter: usize,
    pub mean_return: f64,
    /// Present on evaluation iterations only.
    pub eval_avg_speed: Option<f64>,
}

pub fn write_train_log(rows: &[TrainLogRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| PerpError::Input(format!("writing training log: {e}"));
    w.write_record(["iter", "mean_return", "eval_avg_speed"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            format!("{}", r.mean_return),
            r.eval_avg_speed.map(|v| format!("{v}")).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| PerpError::Input(format!("writing training log: {e}")))?;
    Ok(())
}

pub struct PcpTrainResult {
    pub policy: PcpPolicy,
    pub log: Vec<TrainLogRow>,
    pub best_iteration: usize,
    pub best_score: Option<f64>,
}

/// Greedy perfect-driver score used for checkpoint selection: mean
/// post-warm-up average speed, counting collided episodes as 0.
pub fn selection_score(
    policy: &PcpPolicy,
    ring: &RingConfig,
    idm: &IdmParams,
    spec: EpisodeSpec,
    seed: u64,
    episodes: usize,
) -> Result<f64> {
    let runner = EpisodeRunner {
        ring,
        idm,
        spec,
        emissions: EmissionsModel::default(),
        record_trace: false,
    };
    let scores = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let mut adv = PcpAdvisor::new(policy, ActMode::Greedy, rng_from(seed, &[k as u64]), false);
            let env_seed = derive_seed(seed, &[STREAM_EVAL_ENV, k as u64]);
            let out = runner.run(env_seed, &mut Driver::Perfect, Some(&mut adv))?;
            Ok(if out.metrics.collided { 0.0 } else { out.metrics.avg_speed })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / episodes.max(1) as f64)
}

/// Trains a speed policy and returns the best evaluated checkpoint.
pub fn train_pcp(ring: &RingConfig, idm: &IdmParams, cfg: &PcpTrainConfig, seed: u64) -> Result<PcpTrainResult> {
    ring.validate()?;
    idm.validate()?;
    cfg.validate()?;
    let spec = cfg.spec();
    let mut policy = PcpPolicy::new(cfg.space(), &mut rng_from(seed, &[STREAM_INIT]))?;
    let mut opt = OptimizerState::new(AdamConfig::with_lr(cfg.ppo.learning_rate));
    let runner = EpisodeRunner {
        ring,
        idm,
        spec,
        emissions: EmissionsModel::default(),
        record_trace: false,
    };
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut best = (policy.clone(), 0usize, None::<f64>);
    let evaluating = cfg.eval_episodes > 0 && cfg.eval_every > 0;
    if cfg.iterations > 0 && evaluating {
        best.2 = Some(selection_score(&policy, ring, idm, spec, seed, cfg.eval_episodes)?);
    }

    for iter in 1..=cfg.iterations {
        let episodes = (0..cfg.episodes_per_iteration)
            .into_par_iter()
            .map(|k| {
                let ids = [iter as u64, k as u64];
                let env_seed = derive_seed(seed, &[STREAM_TRAIN_ENV, ids[0], ids[1]]);
                let act_rng = rng_from(seed, &[STREAM_TRAIN_ACT, ids[0], ids[1]]);
                let mut adv = PcpAdvisor::new(&policy, ActMode::Sample, act_rng, true);
                let out = runner.run(env_seed, &mut Driver::Perfect, Some(&mut adv))?;
                let bootstrap = policy.net.value(&out.env.observe_ego().to_array())?;
                let mut ep = adv.episode;
                finalize_episode(&mut ep, out.metrics.collided, cfg.collision_reward, bootstrap);
                Ok(ep)
            })
            .collect::<Result<Vec<Episode>>>()?;
        let mean_return = episodes.iter().map(Episode::total_reward).sum::<f64>() / episodes.len() as f64;
        let collisions = episodes.iter().filter(|e| e.collided).count();
        let stats = policy
            .net
            .update(&episodes, &cfg.ppo, &mut opt, &mut rng_from(seed, &[STREAM_UPDATE, iter as u64]))?;

        let mut eval_avg_speed = None;
        if evaluating && (iter % cfg.eval_every == 0 || iter == cfg.iterations) {
            let score = selection_score(&policy, ring, idm, spec, seed, cfg.eval_episodes)?;
            eval_avg_speed = Some(score);
            if best.2.is_none_or(|b| score > b) {
                best = (policy.clone(), iter, Some(score));
            }
        }
        log::info!(
            "pcp iter {iter}: return {mean_return:.3}, collisions {collisions}, kl {:.4}, entropy {:.3}{}",
            stats.approx_kl,
            stats.entropy,
            eval_avg_speed.map(|s| format!(", eval {s:.3}")).unwrap_or_default()
        );
        log.push(TrainLogRow {
            iter,
            mean_return,
            eval_avg_speed,
        });
    }
    if !evaluating && cfg.iterations > 0 {
        best = (policy, cfg.iterations, None);
    }
    Ok(PcpTrainResult {
        policy: best.0,
        log,
        best_iteration: best.1,
        best_score: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::EpisodeRunner;

    #[test]
    fn table_endpoints_and_spacing() {
        let s = SpeedActionSpace::default();
        assert_eq!(s.speed(0), 0.0);
        assert_eq!(s.speed(17), 35.0);
        assert!((s.speed(1) - 2.0588).abs() < 1e-4);
        for i in 0..s.count {
            assert_eq!(s.nearest_index(s.speed(i)), i);
        }
    }

    #[test]
    fn hold_controller_holds_exactly_delta() {
        let mut h = HoldController::new(3).unwrap();
        let mut calls = 0;
        let seq: Vec<f64> = (0..9)
            .map(|_| {
                h.next(|| {
                    calls += 1;
                    calls as f64
                })
            })
            .collect();
        assert_eq!(seq, [1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0]);
        assert!(HoldController::new(0).is_err());
    }

    #[test]
    fn window_reward_is_the_mean() {
        let mut w = WindowReward::default();
        for r in [2.0, 4.0, 9.0] {
            w.add(r);
        }
        assert_eq!(w.take(), 5.0);
        assert_eq!(w.take(), 0.0);
    }

    #[test]
    fn collision_rules() {
        let d = |r| Decision {
            input: vec![],
            action: Action::Discrete(0),
            log_prob: 0.0,
            value: 0.0,
            reward: r,
        };
        let ep = Episode {
            decisions: vec![d(3.0), d(4.0)],
            ..Episode::default()
        };
        let mut zero = ep.clone();
        finalize_episode(&mut zero, true, CollisionReward::ZeroEpisode, 9.0);
        assert_eq!(zero.total_reward(), 0.0);
        assert_eq!(zero.bootstrap, 0.0);
        let mut term = ep.clone();
        finalize_episode(&mut term, true, CollisionReward::Terminate, 9.0);
        assert_eq!(term.total_reward(), 7.0);
        assert_eq!(term.bootstrap, 0.0);
        let mut ok = ep;
        finalize_episode(&mut ok, false, CollisionReward::ZeroEpisode, 9.0);
        assert_eq!(ok.bootstrap, 9.0);
    }

    #[test]
    fn rollout_has_one_decision_per_window() {
        let ring = RingConfig::default();
        let idm = IdmParams::default();
        let pol = PcpPolicy::new(SpeedActionSpace::default(), &mut rng_from(0, &[])).unwrap();
        let runner = EpisodeRunner {
            ring: &ring,
            idm: &idm,
            spec: EpisodeSpec {
                warmup: 0,
                horizon: 2000,
                delta: 20,
            },
            emissions: EmissionsModel::default(),
            record_trace: true,
        };
        let mut adv = PcpAdvisor::new(&pol, ActMode::Greedy, rng_from(1, &[]), true);
        // The untrained greedy policy advises a fixed low speed on an even ring at rest.
        let env = crate::ring::RingEnv::uniform(&ring, &idm, 0.0, 0).unwrap();
        let out = runner.run_from(env, &mut Driver::Perfect, Some(&mut adv)).unwrap();
        if !out.metrics.collided {
            assert_eq!(adv.episode.decisions.len(), 100);
        }
        let tr = out.trace.unwrap();
        assert_eq!(tr.advised, tr.executed);
    }

    #[test]
    fn zero_iterations_returns_initial_policy() {
        let ring = RingConfig::default();
        let idm = IdmParams::default();
        let cfg = PcpTrainConfig {
            iterations: 0,
            ..PcpTrainConfig::default()
        };
        let res = train_pcp(&ring, &idm, &cfg, 5).unwrap();
        let init = PcpPolicy::new(cfg.space(), &mut rng_from(5, &[STREAM_INIT])).unwrap();
        assert_eq!(res.policy.to_checkpoint().to_json(), init.to_checkpoint().to_json());
        assert!(res.log.is_empty());
    }
}
